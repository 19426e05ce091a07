pub mod canonical;
pub mod cli;
pub mod crypto;
pub mod digest;
pub mod federation;
pub mod identity;
pub mod ledger;
pub mod lineage;
pub mod pid;
pub mod prov;
pub mod scenario;
pub mod time;
