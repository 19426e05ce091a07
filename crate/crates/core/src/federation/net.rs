//! Length-prefixed JSON over TCP: a 4-byte big-endian length followed by a
//! UTF-8 JSON body. One request, one response, many per connection.

use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::identity::Identity;
use crate::ledger::{
    Block, LedgerError, OrderingApi, PeerApi, ProposalResponse, Query, QueryResponse, Receipt, SignedProposal, Transaction,
};
use crate::pid::{LinkRequest, ObjectKind, Pid, PidError, PidRecord, PidService};

pub const MAX_FRAME: u32 = 64 * 1024 * 1024;
const CONNECT_TIMEOUT: Duration = Duration::from_secs(2);
const READ_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Request {
    Propose { proposal: SignedProposal },
    Order { transactions: Vec<Transaction> },
    Commit { block: Block },
    Query { query: Query },
    Mint { object_kind: ObjectKind, target_uri: String, checksum: Option<Digest>, owner: String },
    Resolve { pid: Pid },
    Link { request: LinkRequest },
    History { pid: Pid },
    Unlink { request: LinkRequest },
    Discard { pid: Pid, caller: Identity },
    Fill { pid: Pid, uri: String, checksum: Digest, caller: Identity },
    Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Response {
    Endorse { response: ProposalResponse },
    Receipts { receipts: Vec<Receipt> },
    Answer { answer: QueryResponse },
    Record { record: PidRecord },
    Records { records: Vec<PidRecord> },
    Digest { digest: Digest },
    Done,
    LedgerError { error: LedgerError },
    PidError { error: PidError },
    Error { detail: String },
}

pub fn write_frame<T: Serialize>(stream: &mut impl Write, value: &T) -> io::Result<()> {
    let body = serde_json::to_vec(value).map_err(io::Error::other)?;
    let len = u32::try_from(body.len()).ok().filter(|l| *l <= MAX_FRAME).ok_or_else(|| io::Error::other("frame too large"))?;
    let mut buf = Vec::with_capacity(body.len() + 4);
    buf.extend_from_slice(&len.to_be_bytes());
    buf.extend_from_slice(&body);
    stream.write_all(&buf)?;
    stream.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame<T: DeserializeOwned>(stream: &mut impl Read) -> io::Result<Option<T>> {
    let mut len = [0u8; 4];
    match stream.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes exceeds limit")));
    }
    let mut body = vec![0u8; len as usize];
    stream.read_exact(&mut body)?;
    serde_json::from_slice(&body).map(Some).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// What a node process serves.
#[derive(Clone)]
pub enum Service {
    Peer(Arc<dyn PeerApi>),
    Orderer(Arc<dyn OrderingApi>),
    Registry(Arc<dyn PidService>),
}

impl Service {
    pub fn handle(&self, request: Request) -> Response {
        let ledger = |r: Result<Response, LedgerError>| r.unwrap_or_else(|error| Response::LedgerError { error });
        let pid = |r: Result<Response, PidError>| r.unwrap_or_else(|error| Response::PidError { error });
        match (self, request) {
            (Service::Peer(p), Request::Propose { proposal }) => ledger(p.endorse(&proposal).map(|response| Response::Endorse { response })),
            (Service::Peer(p), Request::Commit { block }) => ledger(p.deliver(&block).map(|()| Response::Done)),
            (Service::Peer(p), Request::Query { query }) => ledger(p.query(&query).map(|answer| Response::Answer { answer })),
            (Service::Orderer(o), Request::Order { transactions }) => {
                ledger(o.broadcast(transactions).map(|receipts| Response::Receipts { receipts }))
            }
            (Service::Orderer(o), Request::Query { query }) => ledger(o.query(&query).map(|answer| Response::Answer { answer })),
            (Service::Registry(r), req) => match req {
                Request::Mint { object_kind, target_uri, checksum, owner } => {
                    pid(r.mint(object_kind, &target_uri, checksum, &owner).map(|record| Response::Record { record }))
                }
                Request::Resolve { pid: p } => pid(r.resolve(&p).map(|record| Response::Record { record })),
                Request::Link { request } => pid(r.link_new_version(&request).map(|()| Response::Done)),
                Request::History { pid: p } => pid(r.version_history(&p).map(|records| Response::Records { records })),
                Request::Unlink { request } => pid(r.revert_link(&request).map(|()| Response::Done)),
                Request::Discard { pid: p, caller } => pid(r.discard(&p, &caller).map(|()| Response::Done)),
                Request::Fill { pid: p, uri, checksum, caller } => {
                    pid(r.fill_target(&p, &uri, checksum, &caller).map(|record| Response::Record { record }))
                }
                Request::Digest => pid(r.state_digest().map(|digest| Response::Digest { digest })),
                other => Response::Error { detail: format!("registry does not serve {}", kind_name(&other)) },
            },
            (_, other) => Response::Error { detail: format!("this node does not serve {}", kind_name(&other)) },
        }
    }
}

fn kind_name(r: &Request) -> String {
    serde_json::to_value(r).ok().and_then(|v| v["kind"].as_str().map(str::to_string)).unwrap_or_default()
}

/// A running listener. Dropping it stops accepting connections.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, service: Service) -> io::Result<Server> {
        let listener = TcpListener::bind(addr)?;
        Ok(Self::start(listener, service))
    }

    pub fn start(listener: TcpListener, service: Service) -> Server {
        let addr = listener.local_addr().expect("bound listener has an address");
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let accept = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let service = service.clone();
                let flag = flag.clone();
                std::thread::spawn(move || serve_connection(stream, service, flag));
            }
        });
        Server { addr, stop, accept: Some(accept) }
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect_timeout(&self.addr, CONNECT_TIMEOUT);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve_connection(mut stream: TcpStream, service: Service, stop: Arc<AtomicBool>) {
    let _ = stream.set_nodelay(true);
    loop {
        let request: Request = match read_frame(&mut stream) {
            Ok(Some(r)) => r,
            Ok(None) => return,
            Err(e) => {
                let _ = write_frame(&mut stream, &Response::Error { detail: format!("bad frame: {e}") });
                return;
            }
        };
        if stop.load(Ordering::SeqCst) {
            let _ = stream.shutdown(Shutdown::Both);
            return;
        }
        let response = service.handle(request);
        if write_frame(&mut stream, &response).is_err() {
            return;
        }
    }
}

/// A reusable client connection that reconnects after a failure.
pub struct Connection {
    addr: String,
    stream: Mutex<Option<TcpStream>>,
}

impl Connection {
    pub fn new(addr: impl Into<String>) -> Self {
        Connection { addr: addr.into(), stream: Mutex::new(None) }
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn connect(&self) -> io::Result<TcpStream> {
        let mut last = io::Error::new(io::ErrorKind::NotFound, format!("{} does not resolve", self.addr));
        for a in self.addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&a, CONNECT_TIMEOUT) {
                Ok(s) => {
                    s.set_nodelay(true)?;
                    s.set_read_timeout(Some(READ_TIMEOUT))?;
                    return Ok(s);
                }
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    fn exchange(&self, request: &Request) -> io::Result<Response> {
        let mut guard = self.stream.lock();
        if guard.is_none() {
            *guard = Some(self.connect()?);
        }
        let stream = guard.as_mut().expect("connected above");
        let result = write_frame(stream, request).and_then(|()| {
            read_frame::<Response>(stream)?.ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed"))
        });
        if result.is_err() {
            *guard = None;
        }
        result
    }

    /// Sends `request`, retrying once on a fresh connection if an idle one
    /// turned out to be dead.
    pub fn call(&self, request: &Request) -> Result<Response, String> {
        let had_stream = self.stream.lock().is_some();
        match self.exchange(request) {
            Ok(r) => Ok(r),
            Err(_) if had_stream => self.exchange(request).map_err(|e| format!("{}: {e}", self.addr)),
            Err(e) => Err(format!("{}: {e}", self.addr)),
        }
    }
}

fn ledger_call(conn: &Connection, request: &Request) -> Result<Response, LedgerError> {
    match conn.call(request) {
        Ok(Response::LedgerError { error }) => Err(error),
        Ok(Response::Error { detail }) => Err(LedgerError::Protocol { detail }),
        Ok(r) => Ok(r),
        Err(detail) => Err(LedgerError::Unreachable { detail }),
    }
}

fn unexpected_ledger(r: Response) -> LedgerError {
    LedgerError::Protocol { detail: format!("unexpected response {r:?}") }
}

/// An organization's ledger node reached over TCP.
pub struct RemotePeer {
    org: String,
    conn: Connection,
}

impl RemotePeer {
    pub fn new(org: impl Into<String>, addr: impl Into<String>) -> Self {
        RemotePeer { org: org.into(), conn: Connection::new(addr) }
    }
}

impl PeerApi for RemotePeer {
    fn org(&self) -> &str {
        &self.org
    }

    fn endorse(&self, proposal: &SignedProposal) -> Result<ProposalResponse, LedgerError> {
        match ledger_call(&self.conn, &Request::Propose { proposal: proposal.clone() })? {
            Response::Endorse { response } => Ok(response),
            r => Err(unexpected_ledger(r)),
        }
    }

    fn deliver(&self, block: &Block) -> Result<(), LedgerError> {
        match ledger_call(&self.conn, &Request::Commit { block: block.clone() })? {
            Response::Done => Ok(()),
            r => Err(unexpected_ledger(r)),
        }
    }

    fn query(&self, query: &Query) -> Result<QueryResponse, LedgerError> {
        match ledger_call(&self.conn, &Request::Query { query: query.clone() })? {
            Response::Answer { answer } => Ok(answer),
            r => Err(unexpected_ledger(r)),
        }
    }
}

pub struct RemoteOrderer {
    conn: Connection,
}

impl RemoteOrderer {
    pub fn new(addr: impl Into<String>) -> Self {
        RemoteOrderer { conn: Connection::new(addr) }
    }
}

impl OrderingApi for RemoteOrderer {
    fn broadcast(&self, txs: Vec<Transaction>) -> Result<Vec<Receipt>, LedgerError> {
        match ledger_call(&self.conn, &Request::Order { transactions: txs })? {
            Response::Receipts { receipts } => Ok(receipts),
            r => Err(unexpected_ledger(r)),
        }
    }

    fn query(&self, query: &Query) -> Result<QueryResponse, LedgerError> {
        match ledger_call(&self.conn, &Request::Query { query: query.clone() })? {
            Response::Answer { answer } => Ok(answer),
            r => Err(unexpected_ledger(r)),
        }
    }
}

pub struct RemoteRegistry {
    conn: Connection,
}

impl RemoteRegistry {
    pub fn new(addr: impl Into<String>) -> Self {
        RemoteRegistry { conn: Connection::new(addr) }
    }

    fn call(&self, request: Request) -> Result<Response, PidError> {
        match self.conn.call(&request) {
            Ok(Response::PidError { error }) => Err(error),
            Ok(Response::Error { detail }) => Err(PidError::RegistryUnavailable(detail)),
            Ok(r) => Ok(r),
            Err(detail) => Err(PidError::RegistryUnavailable(detail)),
        }
    }
}

fn unexpected_pid(r: Response) -> PidError {
    PidError::RegistryUnavailable(format!("unexpected response {r:?}"))
}

impl PidService for RemoteRegistry {
    fn mint(&self, kind: ObjectKind, target_uri: &str, checksum: Option<Digest>, owner: &str) -> Result<PidRecord, PidError> {
        let req = Request::Mint { object_kind: kind, target_uri: target_uri.into(), checksum, owner: owner.into() };
        match self.call(req)? {
            Response::Record { record } => Ok(record),
            r => Err(unexpected_pid(r)),
        }
    }

    fn resolve(&self, pid: &Pid) -> Result<PidRecord, PidError> {
        match self.call(Request::Resolve { pid: pid.clone() })? {
            Response::Record { record } => Ok(record),
            r => Err(unexpected_pid(r)),
        }
    }

    fn link_new_version(&self, request: &LinkRequest) -> Result<(), PidError> {
        match self.call(Request::Link { request: request.clone() })? {
            Response::Done => Ok(()),
            r => Err(unexpected_pid(r)),
        }
    }

    fn version_history(&self, pid: &Pid) -> Result<Vec<PidRecord>, PidError> {
        match self.call(Request::History { pid: pid.clone() })? {
            Response::Records { records } => Ok(records),
            r => Err(unexpected_pid(r)),
        }
    }

    fn revert_link(&self, request: &LinkRequest) -> Result<(), PidError> {
        match self.call(Request::Unlink { request: request.clone() })? {
            Response::Done => Ok(()),
            r => Err(unexpected_pid(r)),
        }
    }

    fn discard(&self, pid: &Pid, caller: &Identity) -> Result<(), PidError> {
        match self.call(Request::Discard { pid: pid.clone(), caller: caller.clone() })? {
            Response::Done => Ok(()),
            r => Err(unexpected_pid(r)),
        }
    }

    fn fill_target(&self, pid: &Pid, uri: &str, checksum: Digest, caller: &Identity) -> Result<PidRecord, PidError> {
        let req = Request::Fill { pid: pid.clone(), uri: uri.into(), checksum, caller: caller.clone() };
        match self.call(req)? {
            Response::Record { record } => Ok(record),
            r => Err(unexpected_pid(r)),
        }
    }

    fn state_digest(&self) -> Result<Digest, PidError> {
        match self.call(Request::Digest)? {
            Response::Digest { digest } => Ok(digest),
            r => Err(unexpected_pid(r)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_is_length_prefixed_json() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &Request::Digest).unwrap();
        assert_eq!(&buf[..4], &(buf.len() as u32 - 4).to_be_bytes());
        assert_eq!(&buf[4..], br#"{"kind":"DIGEST"}"#);
        let back: Request = read_frame(&mut buf.as_slice()).unwrap().unwrap();
        assert_eq!(back, Request::Digest);
        assert!(read_frame::<Request>(&mut [].as_slice()).unwrap().is_none());
    }

    #[test]
    fn oversized_frame_rejected() {
        let mut buf = (MAX_FRAME + 1).to_be_bytes().to_vec();
        buf.extend_from_slice(b"{}");
        assert!(read_frame::<Request>(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn unreachable_node_reports_unreachable() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        drop(listener);
        let peer = RemotePeer::new("OrgA", addr);
        assert!(matches!(peer.query(&Query::Status), Err(LedgerError::Unreachable { .. })));
    }
}
