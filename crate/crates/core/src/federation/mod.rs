//! Federation harness: configuration, the node transport, and ways to bring
//! up a set of ledger nodes, an orderer and a PID registry either in-process,
//! on loopback TCP, or from a config file.

mod config;
pub mod net;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;

pub use config::{ConfigError, FederationConfig, OrgConfig};
pub use net::{RemoteOrderer, RemotePeer, RemoteRegistry, Server, Service};

use crate::digest::Digest;
use crate::identity::{Federation, IdentityError, OrgKind, RegistrationService, Role, UserCredentials};
use crate::ledger::{
    BatchConfig, EndorsementPolicy, LedgerClient, LedgerError, NodeStatus, Orderer, OrderingApi, Peer, PeerApi, PEER_USER,
};
use crate::pid::{PidError, PidRegistry, PidService};
use crate::prov::{ContentStore, ProvManager, ProvStore, DATA_SCHEME};
use crate::time::{Clock, ClockConfig, SteppingClock, Timestamp};

#[derive(Debug, thiserror::Error)]
pub enum FederationError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Registry(#[from] PidError),
    #[error("node unreachable: {0}")]
    Unreachable(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
}

/// Everything a client needs to act in a federation, however its nodes run.
#[derive(Clone)]
pub struct FederationHandle {
    pub federation: Arc<Federation>,
    pub policy: EndorsementPolicy,
    pub peers: Vec<Arc<dyn PeerApi>>,
    pub orderer: Arc<dyn OrderingApi>,
    pub registry: Arc<dyn PidService>,
    pub store: Arc<ProvStore>,
    pub data: Arc<ContentStore>,
    pub clock: Arc<dyn Clock>,
}

impl FederationHandle {
    pub fn client(&self, creds: UserCredentials) -> LedgerClient {
        LedgerClient::new(creds, self.federation.clone(), self.policy, self.peers.clone(), self.orderer.clone(), self.clock.clone())
    }

    pub fn manager(&self, creds: UserCredentials) -> ProvManager {
        ProvManager::new(self.client(creds), self.registry.clone(), self.store.clone(), self.data.clone())
    }

    /// Status of every peer, in organization order, then of the orderer.
    pub fn node_statuses(&self) -> Vec<(String, Result<NodeStatus, LedgerError>)> {
        let mut out: Vec<_> = self.peers.iter().map(|p| (p.org().to_string(), p.status())).collect();
        out.push(("orderer".to_string(), self.orderer.status()));
        out
    }

    /// World-state digests of all reachable peers.
    pub fn peer_state_digests(&self) -> Vec<(String, Digest)> {
        self.peers.iter().filter_map(|p| p.status().ok().map(|s| (p.org().to_string(), s.state_digest))).collect()
    }
}

#[derive(Debug, Clone)]
pub struct LocalOptions {
    pub policy: EndorsementPolicy,
    pub batch: BatchConfig,
    pub clock: ClockConfig,
    pub pid_prefix: String,
    /// Keep node ledgers and the registry on disk under the root.
    pub persist: bool,
}

impl Default for LocalOptions {
    fn default() -> Self {
        LocalOptions {
            policy: EndorsementPolicy::default(),
            batch: BatchConfig { max_txs: 10, timeout_ms: 5 },
            clock: ClockConfig::Pinned { at: Timestamp::from_millis(1_735_689_600_000) },
            pid_prefix: "21.T11148".into(),
            persist: false,
        }
    }
}

/// Two producer organizations and the read-only one.
pub const STANDARD_ORGS: [(&str, OrgKind); 3] =
    [("OrgA", OrgKind::Producer), ("OrgB", OrgKind::Producer), ("Readers", OrgKind::ConsumerReadOnly)];

/// Three producer organizations and the read-only one.
pub const FOUR_ORGS: [(&str, OrgKind); 4] = [
    ("OrgA", OrgKind::Producer),
    ("OrgB", OrgKind::Producer),
    ("OrgC", OrgKind::Producer),
    ("Readers", OrgKind::ConsumerReadOnly),
];

struct Nodes {
    registration: RegistrationService,
    federation: Arc<Federation>,
    peers: Vec<Arc<Peer>>,
    registry: Arc<PidRegistry>,
    store: Arc<ProvStore>,
    data: Arc<ContentStore>,
    clock: Arc<dyn Clock>,
}

impl Nodes {
    fn build(orgs: &[(&str, OrgKind)], root: &Path, options: &LocalOptions) -> Result<Nodes, FederationError> {
        let mut registration = RegistrationService::new(orgs)?;
        let federation = Arc::new(registration.federation());
        let mut peers = Vec::new();
        for (org, kind) in orgs {
            let role = if *kind == OrgKind::Producer { Role::Producer } else { Role::Consumer };
            let creds = registration.register_user_with_role(org, PEER_USER, role)?;
            let peer = if options.persist {
                let path = root.join("nodes").join(org).join("ledger.jsonl");
                Peer::open(creds, federation.clone(), options.policy, &path)?
            } else {
                Peer::new(creds, federation.clone(), options.policy)
            };
            peers.push(Arc::new(peer));
        }
        let registry = if options.persist {
            PidRegistry::open(options.pid_prefix.clone(), root.join("registry"), federation.clone())?
        } else {
            PidRegistry::in_memory(options.pid_prefix.clone(), federation.clone())
        };
        Ok(Nodes {
            registration,
            federation,
            peers,
            registry: Arc::new(registry),
            store: Arc::new(ProvStore::new(root.join("prov"))),
            data: Arc::new(ContentStore::new(root.join("data"), DATA_SCHEME)),
            clock: options.clock.build(),
        })
    }

    fn orderer(&self, root: &Path, options: &LocalOptions) -> Result<Orderer, FederationError> {
        Ok(if options.persist {
            let path = root.join("nodes").join("orderer").join("ledger.jsonl");
            Orderer::open(self.federation.clone(), options.policy, options.batch, self.clock.clone(), &path)?
        } else {
            Orderer::new(self.federation.clone(), options.policy, options.batch, self.clock.clone())
        })
    }
}

/// All nodes in this process, called directly.
pub struct LocalFederation {
    registration: Mutex<RegistrationService>,
    peers: Vec<Arc<Peer>>,
    orderer: Arc<Orderer>,
    registry: Arc<PidRegistry>,
    handle: FederationHandle,
}

impl LocalFederation {
    pub fn new(orgs: &[(&str, OrgKind)], root: &Path, options: LocalOptions) -> Result<Self, FederationError> {
        let nodes = Nodes::build(orgs, root, &options)?;
        let orderer = Arc::new(nodes.orderer(root, &options)?);
        for p in &nodes.peers {
            orderer.add_peer(p.clone());
        }
        let handle = FederationHandle {
            federation: nodes.federation.clone(),
            policy: options.policy,
            peers: nodes.peers.iter().map(|p| p.clone() as Arc<dyn PeerApi>).collect(),
            orderer: orderer.clone(),
            registry: nodes.registry.clone(),
            store: nodes.store.clone(),
            data: nodes.data.clone(),
            clock: nodes.clock.clone(),
        };
        Ok(LocalFederation {
            registration: Mutex::new(nodes.registration),
            peers: nodes.peers,
            orderer,
            registry: nodes.registry,
            handle,
        })
    }

    /// OrgA, OrgB and Readers with default options.
    pub fn standard(root: &Path) -> Result<Self, FederationError> {
        Self::new(&STANDARD_ORGS, root, LocalOptions::default())
    }

    pub fn handle(&self) -> &FederationHandle {
        &self.handle
    }

    pub fn federation(&self) -> &Arc<Federation> {
        &self.handle.federation
    }

    pub fn register(&self, org: &str, user: &str) -> Result<UserCredentials, FederationError> {
        Ok(self.registration.lock().register_user(org, user)?)
    }

    pub fn register_with_role(&self, org: &str, user: &str, role: Role) -> Result<UserCredentials, FederationError> {
        Ok(self.registration.lock().register_user_with_role(org, user, role)?)
    }

    pub fn client(&self, creds: UserCredentials) -> LedgerClient {
        self.handle.client(creds)
    }

    pub fn manager(&self, creds: UserCredentials) -> ProvManager {
        self.handle.manager(creds)
    }

    pub fn peers(&self) -> &[Arc<Peer>] {
        &self.peers
    }

    pub fn orderer(&self) -> &Arc<Orderer> {
        &self.orderer
    }

    pub fn registry(&self) -> &Arc<PidRegistry> {
        &self.registry
    }
}

/// The same nodes, each behind its own loopback listener; clients and the
/// orderer reach them only through the wire protocol.
pub struct TcpFederation {
    registration: Mutex<RegistrationService>,
    peers: Vec<Arc<Peer>>,
    peer_servers: Mutex<Vec<Option<Server>>>,
    _orderer_server: Server,
    _registry_server: Server,
    handle: FederationHandle,
}

impl TcpFederation {
    pub fn start(orgs: &[(&str, OrgKind)], root: &Path, options: LocalOptions) -> Result<Self, FederationError> {
        let nodes = Nodes::build(orgs, root, &options)?;
        let bind = |service: Service| {
            Server::bind("127.0.0.1:0", service).map_err(|e| FederationError::Unreachable(format!("bind: {e}")))
        };
        let mut peer_servers = Vec::new();
        let mut remote_peers: Vec<Arc<dyn PeerApi>> = Vec::new();
        for p in &nodes.peers {
            let server = bind(Service::Peer(p.clone()))?;
            remote_peers.push(Arc::new(RemotePeer::new(p.org(), server.local_addr().to_string())));
            peer_servers.push(Some(server));
        }
        let orderer = Arc::new(nodes.orderer(root, &options)?);
        for (p, s) in nodes.peers.iter().zip(&peer_servers) {
            let addr = s.as_ref().expect("just started").local_addr().to_string();
            orderer.add_peer(Arc::new(RemotePeer::new(p.org(), addr)));
        }
        let orderer_server = bind(Service::Orderer(orderer))?;
        let registry_server = bind(Service::Registry(nodes.registry.clone()))?;
        let handle = FederationHandle {
            federation: nodes.federation.clone(),
            policy: options.policy,
            peers: remote_peers,
            orderer: Arc::new(RemoteOrderer::new(orderer_server.local_addr().to_string())),
            registry: Arc::new(RemoteRegistry::new(registry_server.local_addr().to_string())),
            store: nodes.store,
            data: nodes.data,
            clock: nodes.clock,
        };
        Ok(TcpFederation {
            registration: Mutex::new(nodes.registration),
            peers: nodes.peers,
            peer_servers: Mutex::new(peer_servers),
            _orderer_server: orderer_server,
            _registry_server: registry_server,
            handle,
        })
    }

    pub fn handle(&self) -> &FederationHandle {
        &self.handle
    }

    pub fn register(&self, org: &str, user: &str) -> Result<UserCredentials, FederationError> {
        Ok(self.registration.lock().register_user(org, user)?)
    }

    pub fn register_with_role(&self, org: &str, user: &str, role: Role) -> Result<UserCredentials, FederationError> {
        Ok(self.registration.lock().register_user_with_role(org, user, role)?)
    }

    pub fn manager(&self, creds: UserCredentials) -> ProvManager {
        self.handle.manager(creds)
    }

    /// The node objects behind the listeners, for direct inspection.
    pub fn peer_nodes(&self) -> &[Arc<Peer>] {
        &self.peers
    }

    /// Stops the listener of peer `index`.
    pub fn stop_peer(&self, index: usize) {
        if let Some(slot) = self.peer_servers.lock().get_mut(index) {
            slot.take();
        }
    }
}

/// Where `federation init` and the node commands keep per-node state.
pub fn peer_principal(org: &str) -> String {
    crate::identity::principal(PEER_USER, org)
}

/// Generates CAs, node identities and genesis blocks for every node named
/// in `config`, and records the CA public keys in it.
pub fn init_state(config: &mut FederationConfig) -> Result<RegistrationService, FederationError> {
    let orgs: Vec<(&str, OrgKind)> = config.organizations.iter().map(|o| (o.name.as_str(), o.kind)).collect();
    let mut registration = RegistrationService::new(&orgs)?;
    let federation = Arc::new(registration.federation());
    for org in federation.organizations() {
        let role = if org.kind == OrgKind::Producer { Role::Producer } else { Role::Consumer };
        let creds = registration.register_user_with_role(&org.name, PEER_USER, role)?;
        creds.save(&config.identity_dir(&peer_principal(&org.name)))?;
    }
    for o in &mut config.organizations {
        o.ca_public_key = federation.org(&o.name).map(|org| org.ca_public_key);
    }
    registration.save(&config.state_dir().join("pki"))?;
    let nodes = config.org_names().into_iter().map(str::to_string).chain(["orderer".to_string()]);
    for node in nodes {
        crate::ledger::Replica::open(federation.clone(), config.endorsement_policy, &config.node_ledger_path(&node))?;
    }
    PidRegistry::open(config.pid_prefix.clone(), config.registry_dir(), federation)?;
    std::fs::create_dir_all(&config.prov_store_root).map_err(LedgerError::storage)?;
    std::fs::create_dir_all(config.data_store_root()).map_err(LedgerError::storage)?;
    Ok(registration)
}

pub fn load_registration(config: &FederationConfig) -> Result<RegistrationService, FederationError> {
    Ok(RegistrationService::load(&config.state_dir().join("pki"), &config.org_names())?)
}

/// The clock a client should use: pinned clocks resume after the newest
/// ledger timestamp so that successive invocations keep moving forward.
fn client_clock(config: &FederationConfig, peers: &[Arc<dyn PeerApi>]) -> Arc<dyn Clock> {
    match config.clock {
        ClockConfig::System => config.clock.build(),
        ClockConfig::Pinned { at } => {
            let newest = peers
                .iter()
                .find_map(|p| p.world_state().ok())
                .and_then(|s| s.iter().map(|(_, v)| v.timestamp).max());
            let start = match newest {
                Some(t) if t >= at => t.plus_millis(1),
                _ => at,
            };
            Arc::new(SteppingClock::new(start, 1))
        }
    }
}

fn stores(config: &FederationConfig) -> (Arc<ProvStore>, Arc<ContentStore>) {
    (Arc::new(ProvStore::new(config.prov_store_root.clone())), Arc::new(ContentStore::new(config.data_store_root(), DATA_SCHEME)))
}

/// Connects to the nodes listed in `config` over TCP.
pub fn connect(config: &FederationConfig) -> Result<FederationHandle, FederationError> {
    let federation = Arc::new(config.federation()?);
    let peers: Vec<Arc<dyn PeerApi>> = config
        .organizations
        .iter()
        .map(|o| Arc::new(RemotePeer::new(o.name.clone(), o.listen_address.clone())) as Arc<dyn PeerApi>)
        .collect();
    let clock = client_clock(config, &peers);
    let (store, data) = stores(config);
    Ok(FederationHandle {
        federation,
        policy: config.endorsement_policy,
        peers,
        orderer: Arc::new(RemoteOrderer::new(config.orderer_address.clone())),
        registry: Arc::new(RemoteRegistry::new(config.registry_address.clone())),
        store,
        data,
        clock,
    })
}

fn open_peer(config: &FederationConfig, federation: &Arc<Federation>, org: &str) -> Result<Peer, FederationError> {
    let creds = UserCredentials::load(&config.identity_dir(&peer_principal(org)))?;
    Ok(Peer::open(creds, federation.clone(), config.endorsement_policy, &config.node_ledger_path(org))?)
}

/// Opens every node's files in this process instead of connecting to
/// running nodes. Only one process may do this at a time.
pub fn open_embedded(config: &FederationConfig) -> Result<FederationHandle, FederationError> {
    let federation = Arc::new(config.federation()?);
    let mut peers: Vec<Arc<dyn PeerApi>> = Vec::new();
    for o in &config.organizations {
        peers.push(Arc::new(open_peer(config, &federation, &o.name)?));
    }
    let clock = client_clock(config, &peers);
    // A single in-process submitter never fills a batch, so waiting buys nothing.
    let batch = crate::ledger::BatchConfig { timeout_ms: 0, ..config.batch };
    let orderer = Orderer::open(
        federation.clone(),
        config.endorsement_policy,
        batch,
        clock.clone(),
        &config.node_ledger_path("orderer"),
    )?;
    for p in &peers {
        orderer.add_peer(p.clone());
    }
    let registry = PidRegistry::open(config.pid_prefix.clone(), config.registry_dir(), federation.clone())?;
    let (store, data) = stores(config);
    Ok(FederationHandle {
        federation,
        policy: config.endorsement_policy,
        peers,
        orderer: Arc::new(orderer),
        registry: Arc::new(registry),
        store,
        data,
        clock,
    })
}

/// Starts node `node` (an organization name, `orderer` or `registry`) and
/// returns its listener.
pub fn start_node(config: &FederationConfig, node: &str) -> Result<Server, FederationError> {
    let federation = Arc::new(config.federation()?);
    let bind = |addr: &str, service: Service| {
        Server::bind(addr, service).map_err(|e| FederationError::Unreachable(format!("cannot listen on {addr}: {e}")))
    };
    match node {
        "orderer" => {
            let orderer = Orderer::open(
                federation,
                config.endorsement_policy,
                config.batch,
                config.clock.build(),
                &config.node_ledger_path("orderer"),
            )?;
            // Peers that are down now are brought up to date on their next delivery.
            for o in &config.organizations {
                orderer.add_peer(Arc::new(RemotePeer::new(o.name.clone(), o.listen_address.clone())));
            }
            bind(&config.orderer_address, Service::Orderer(Arc::new(orderer)))
        }
        "registry" => {
            let registry = PidRegistry::open(config.pid_prefix.clone(), config.registry_dir(), federation)?;
            bind(&config.registry_address, Service::Registry(Arc::new(registry)))
        }
        org => {
            let oc = config.organizations.iter().find(|o| o.name == org).ok_or_else(|| FederationError::UnknownNode(org.into()))?;
            let peer = open_peer(config, &federation, org)?;
            if let Err(e) = peer.catch_up(&RemoteOrderer::new(config.orderer_address.clone())) {
                log::info!("{org}: could not catch up from the orderer: {e}");
            }
            bind(&oc.listen_address, Service::Peer(Arc::new(peer)))
        }
    }
}

pub fn default_config_path() -> PathBuf {
    std::env::var_os("FEDPROV_CONFIG").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("federation.json"))
}
