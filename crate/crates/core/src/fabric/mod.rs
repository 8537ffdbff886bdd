// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Ranked communicators over pluggable transports.
//!
//! A world of `size` ranks is created with [`create_world`]. Each rank gets a
//! [`Communicator`] handle; handles can be [split](Communicator::split) into
//! child communicators over a subset of ranks. Messages are matched on
//! `(comm_id, src_rank, tag)` and delivered in FIFO order per key, so child
//! traffic never mixes with parent traffic even when tags collide.
//!
//! Collectives (see `collectives.rs`) are built on point-to-point messages
//! with fixed schedules, which makes their results independent of the
//! transport and of message timing.

mod collectives;
mod mailbox;
pub mod tcp;

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::collectives::ReduceOp;
use self::mailbox::Mailbox;
use self::tcp::FrameHeader;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Tags at or above this value are reserved for collectives and split.
pub const RESERVED_TAG_BASE: u64 = 0xFFFF_0000_0000_0000;
const SPLIT_TAG: u64 = RESERVED_TAG_BASE + 0x10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FabricError {
    #[error("communicator size must be at least 1, got {0}")]
    InvalidSize(usize),
    #[error("rank {rank} out of range for size {size}")]
    InvalidRank { rank: usize, size: usize },
    #[error("invalid subset: {0}")]
    InvalidSubset(String),
    #[error("timed out waiting on peer {peer:?} (tag {tag:#x})")]
    Timeout { peer: Option<usize>, tag: u64 },
    #[error("peer rank {0} disconnected")]
    PeerDisconnected(usize),
    #[error("endpoint closed")]
    Closed,
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T, E = FabricError> = std::result::Result<T, E>;

/// Transport behind a communicator. Only `InProcess` and `Tcp` are
/// implemented; the remaining slots name the backends they stand in for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[serde(rename = "inproc")]
    InProcess,
    Tcp,
    Mpi,
    Gloo,
    Nccl,
    Ucx,
}

impl Backend {
    pub fn is_implemented(self) -> bool {
        matches!(self, Backend::InProcess | Backend::Tcp)
    }
}

/// Wire `msg_type`: coordination traffic vs bulk payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Plane {
    Data = 0,
    Control = 1,
}

/// Wall time spent constructing one communicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommBuildTiming {
    pub comm_id: u64,
    pub size: usize,
    pub wall_time: f64,
}

/// Build timings recorded by every communicator derived from one world.
#[derive(Debug, Default)]
pub struct TimingLog(Mutex<Vec<CommBuildTiming>>);

impl TimingLog {
    fn record(&self, t: CommBuildTiming) {
        self.0.lock().unwrap().push(t);
    }

    pub fn snapshot(&self) -> Vec<CommBuildTiming> {
        self.0.lock().unwrap().clone()
    }
}

enum Transport {
    InProcess {
        mailboxes: Arc<Vec<Arc<Mailbox>>>,
    },
    Tcp {
        links: Vec<Option<Mutex<TcpStream>>>,
    },
}

/// One rank's attachment to a world: its mailbox plus outgoing links.
struct Endpoint {
    world_rank: usize,
    mailbox: Arc<Mailbox>,
    transport: Transport,
}

impl Endpoint {
    fn deliver(&self, dst_world: usize, h: FrameHeader, payload: Vec<u8>) -> Result<()> {
        let key = (h.comm_id, h.src, h.tag);
        if dst_world == self.world_rank {
            return self.mailbox.push(key, payload);
        }
        match &self.transport {
            Transport::InProcess { mailboxes } => mailboxes[dst_world]
                .push(key, payload)
                .map_err(|_| FabricError::PeerDisconnected(dst_world)),
            Transport::Tcp { links } => {
                let link = links[dst_world]
                    .as_ref()
                    .ok_or(FabricError::PeerDisconnected(dst_world))?;
                let mut stream = link.lock().unwrap();
                tcp::write_frame(&mut stream, &h, &payload)
                    .map_err(|e| FabricError::Io(format!("send to world rank {dst_world}: {e}")))
            }
        }
    }
}

impl Drop for Endpoint {
    fn drop(&mut self) {
        self.mailbox.close();
        match &self.transport {
            Transport::InProcess { mailboxes } => {
                for (i, mb) in mailboxes.iter().enumerate() {
                    if i != self.world_rank {
                        mb.mark_disconnected(self.world_rank);
                    }
                }
            }
            Transport::Tcp { links } => {
                for s in links.iter().flatten() {
                    let _ = s.lock().unwrap().shutdown(std::net::Shutdown::Both);
                }
            }
        }
    }
}

/// A rank's handle on a communicator.
///
/// A handle is meant to be driven by one thread at a time; collectives on the
/// same handle must not be issued concurrently. Distinct handles are
/// independent.
pub struct Communicator {
    comm_id: u64,
    rank: usize,
    size: usize,
    /// Communicator rank -> world rank.
    peers: Arc<[usize]>,
    endpoint: Arc<Endpoint>,
    backend: Backend,
    timeout: Duration,
    child_counter: AtomicU64,
    timings: Arc<TimingLog>,
}

impl std::fmt::Debug for Communicator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Communicator")
            .field("comm_id", &format_args!("{:#x}", self.comm_id))
            .field("rank", &self.rank)
            .field("size", &self.size)
            .field("backend", &self.backend)
            .finish()
    }
}

/// Result of [`Communicator::split`] on one rank.
#[derive(Debug)]
pub enum SplitOutcome {
    Member(Communicator, CommBuildTiming),
    NotMember,
}

impl SplitOutcome {
    pub fn into_member(self) -> Option<(Communicator, CommBuildTiming)> {
        match self {
            SplitOutcome::Member(c, t) => Some((c, t)),
            SplitOutcome::NotMember => None,
        }
    }
}

/// All handles of a freshly created world, in rank order.
#[derive(Debug)]
pub struct World {
    pub comms: Vec<Communicator>,
    pub timing: CommBuildTiming,
}

/// FNV-1a over a sequence of byte slices.
fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn fresh_world_id() -> u64 {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0);
    fnv1a(&[
        &std::process::id().to_le_bytes(),
        &nanos.to_le_bytes(),
        &n.to_le_bytes(),
    ])
}

pub fn create_world(backend: Backend, size: usize) -> Result<World> {
    create_world_with_timeout(backend, size, DEFAULT_TIMEOUT)
}

/// Creates `size` fully connected handles. For `Tcp`, every rank binds a
/// loopback listener and the links are established concurrently.
pub fn create_world_with_timeout(backend: Backend, size: usize, timeout: Duration) -> Result<World> {
    if size < 1 {
        return Err(FabricError::InvalidSize(size));
    }
    let start = Instant::now();
    let world_id = fresh_world_id();
    let timings = Arc::new(TimingLog::default());
    let peers: Arc<[usize]> = (0..size).collect::<Vec<_>>().into();
    let mailboxes: Vec<Arc<Mailbox>> = (0..size).map(|_| Arc::new(Mailbox::default())).collect();

    let endpoints: Vec<Endpoint> = match backend {
        Backend::InProcess => {
            let shared = Arc::new(mailboxes);
            (0..size)
                .map(|r| Endpoint {
                    world_rank: r,
                    mailbox: shared[r].clone(),
                    transport: Transport::InProcess {
                        mailboxes: shared.clone(),
                    },
                })
                .collect()
        }
        Backend::Tcp => {
            let listeners: Vec<TcpListener> = (0..size)
                .map(|_| TcpListener::bind("127.0.0.1:0"))
                .collect::<std::io::Result<_>>()
                .map_err(|e| FabricError::Io(format!("bind: {e}")))?;
            let addrs: Vec<SocketAddr> = listeners
                .iter()
                .map(|l| l.local_addr())
                .collect::<std::io::Result<_>>()
                .map_err(|e| FabricError::Io(e.to_string()))?;
            let handles: Vec<_> = listeners
                .into_iter()
                .enumerate()
                .map(|(r, l)| {
                    let addrs = addrs.clone();
                    thread::spawn(move || tcp::establish_links(r, &l, &addrs, world_id, timeout))
                })
                .collect();
            let mut endpoints = Vec::with_capacity(size);
            for (r, (h, mailbox)) in handles.into_iter().zip(mailboxes).enumerate() {
                let links = h
                    .join()
                    .map_err(|_| FabricError::Protocol("link setup panicked".into()))??;
                endpoints.push(tcp_endpoint(r, links, mailbox)?);
            }
            endpoints
        }
        other => {
            return Err(FabricError::Protocol(format!("backend {other:?} is not available")));
        }
    };

    let comms = endpoints
        .into_iter()
        .enumerate()
        .map(|(r, ep)| Communicator {
            comm_id: world_id,
            rank: r,
            size,
            peers: peers.clone(),
            endpoint: Arc::new(ep),
            backend,
            timeout,
            child_counter: AtomicU64::new(0),
            timings: timings.clone(),
        })
        .collect();
    let timing = CommBuildTiming {
        comm_id: world_id,
        size,
        wall_time: start.elapsed().as_secs_f64(),
    };
    timings.record(timing);
    Ok(World { comms, timing })
}

fn tcp_endpoint(rank: usize, links: Vec<Option<TcpStream>>, mailbox: Arc<Mailbox>) -> Result<Endpoint> {
    let mut out = Vec::with_capacity(links.len());
    for (peer, link) in links.into_iter().enumerate() {
        match link {
            Some(stream) => {
                let rx = stream
                    .try_clone()
                    .map_err(|e| FabricError::Io(e.to_string()))?;
                tcp::spawn_reader(rx, peer, mailbox.clone())
                    .map_err(|e| FabricError::Io(e.to_string()))?;
                out.push(Some(Mutex::new(stream)));
            }
            None => out.push(None),
        }
    }
    Ok(Endpoint {
        world_rank: rank,
        mailbox,
        transport: Transport::Tcp { links: out },
    })
}

/// Joins a TCP world from a separate process. Every rank must call this
/// with the same `addrs` (rank order) and `world_id`; `listener` must be
/// bound to `addrs[rank]`.
pub fn join_tcp_world(
    rank: usize,
    listener: TcpListener,
    addrs: &[SocketAddr],
    world_id: u64,
    timeout: Duration,
) -> Result<Communicator> {
    let size = addrs.len();
    if size < 1 {
        return Err(FabricError::InvalidSize(size));
    }
    if rank >= size {
        return Err(FabricError::InvalidRank { rank, size });
    }
    let start = Instant::now();
    let links = tcp::establish_links(rank, &listener, addrs, world_id, timeout)?;
    let endpoint = tcp_endpoint(rank, links, Arc::new(Mailbox::default()))?;
    let timings = Arc::new(TimingLog::default());
    if rank == 0 {
        timings.record(CommBuildTiming {
            comm_id: world_id,
            size,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    Ok(Communicator {
        comm_id: world_id,
        rank,
        size,
        peers: (0..size).collect::<Vec<_>>().into(),
        endpoint: Arc::new(endpoint),
        backend: Backend::Tcp,
        timeout,
        child_counter: AtomicU64::new(0),
        timings,
    })
}

impl Communicator {
    pub fn comm_id(&self) -> u64 {
        self.comm_id
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    /// World rank of every member, indexed by communicator rank.
    pub fn peer_table(&self) -> &[usize] {
        &self.peers
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    /// Build timings of every communicator derived from this handle's world
    /// that this process has observed.
    pub fn build_timings(&self) -> Vec<CommBuildTiming> {
        self.timings.snapshot()
    }

    fn check_rank(&self, rank: usize) -> Result<()> {
        if rank >= self.size {
            return Err(FabricError::InvalidRank {
                rank,
                size: self.size,
            });
        }
        Ok(())
    }

    pub fn send(&self, dst: usize, tag: u64, payload: Vec<u8>) -> Result<()> {
        self.send_on(Plane::Data, dst, tag, payload)
    }

    pub fn send_on(&self, plane: Plane, dst: usize, tag: u64, payload: Vec<u8>) -> Result<()> {
        self.check_rank(dst)?;
        let h = FrameHeader {
            plane,
            comm_id: self.comm_id,
            src: self.rank as u32,
            dst: dst as u32,
            tag,
        };
        self.endpoint.deliver(self.peers[dst], h, payload)
    }

    pub fn recv(&self, src: usize, tag: u64) -> Result<Vec<u8>> {
        self.recv_timeout(src, tag, self.timeout)
    }

    pub fn recv_timeout(&self, src: usize, tag: u64, timeout: Duration) -> Result<Vec<u8>> {
        self.check_rank(src)?;
        let deadline = Instant::now() + timeout;
        self.endpoint
            .mailbox
            .recv((self.comm_id, src as u32, tag), self.peers[src], deadline)
    }

    /// Receives the next message on `tag` from any source.
    pub fn recv_any_timeout(&self, tag: u64, timeout: Duration) -> Result<(usize, Vec<u8>)> {
        let deadline = Instant::now() + timeout;
        let (src, m) = self.endpoint.mailbox.recv_any(self.comm_id, tag, deadline)?;
        Ok((src as usize, m))
    }

    /// Builds a child communicator over `member_ranks` (strictly increasing
    /// parent ranks). Members take their position in the list as new rank;
    /// non-members get [`SplitOutcome::NotMember`] without blocking.
    ///
    /// The first member allocates the child id from its own counter and sends
    /// it to the other members, so only members need to take part.
    pub fn split(&self, member_ranks: &[usize]) -> Result<SplitOutcome> {
        let Some(new_rank) = self.check_members(member_ranks)? else {
            return Ok(SplitOutcome::NotMember);
        };
        let start = Instant::now();
        let leader = member_ranks[0];
        let members_bytes: Vec<u8> = member_ranks
            .iter()
            .flat_map(|&r| (r as u32).to_le_bytes())
            .collect();

        let child_id = if self.rank == leader {
            let n = self.child_counter.fetch_add(1, Ordering::Relaxed) + 1;
            let id = fnv1a(&[
                &self.comm_id.to_le_bytes(),
                &(leader as u32).to_le_bytes(),
                &n.to_le_bytes(),
            ]);
            let mut msg = id.to_le_bytes().to_vec();
            msg.extend_from_slice(&members_bytes);
            for &m in &member_ranks[1..] {
                self.send_on(Plane::Control, m, SPLIT_TAG, msg.clone())?;
            }
            id
        } else {
            let msg = self.recv(leader, SPLIT_TAG)?;
            if msg.len() < 8 || msg[8..] != members_bytes[..] {
                return Err(FabricError::Protocol(
                    "split called with different member lists".into(),
                ));
            }
            u64::from_le_bytes(msg[..8].try_into().unwrap())
        };
        Ok(self.build_child(member_ranks, new_rank, child_id, start))
    }

    /// Like [`split`](Self::split), but with a child id agreed out of band
    /// (for instance assigned by a coordinator). No messages are exchanged;
    /// the caller guarantees the id is unique within the world and identical
    /// on all members.
    pub fn split_with_id(&self, member_ranks: &[usize], child_id: u64) -> Result<SplitOutcome> {
        let Some(new_rank) = self.check_members(member_ranks)? else {
            return Ok(SplitOutcome::NotMember);
        };
        let start = Instant::now();
        Ok(self.build_child(member_ranks, new_rank, child_id, start))
    }

    /// Validates a member list and returns this rank's position in it.
    fn check_members(&self, member_ranks: &[usize]) -> Result<Option<usize>> {
        if member_ranks.is_empty() {
            return Err(FabricError::InvalidSubset("empty member list".into()));
        }
        if member_ranks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FabricError::InvalidSubset(format!(
                "{member_ranks:?} is not strictly increasing"
            )));
        }
        if let Some(&r) = member_ranks.iter().find(|&&r| r >= self.size) {
            return Err(FabricError::InvalidSubset(format!(
                "rank {r} out of range for size {}",
                self.size
            )));
        }
        Ok(member_ranks.iter().position(|&r| r == self.rank))
    }

    fn build_child(&self, member_ranks: &[usize], new_rank: usize, child_id: u64, start: Instant) -> SplitOutcome {
        let peers: Arc<[usize]> = member_ranks.iter().map(|&r| self.peers[r]).collect::<Vec<_>>().into();
        let child = Communicator {
            comm_id: child_id,
            rank: new_rank,
            size: member_ranks.len(),
            peers,
            endpoint: self.endpoint.clone(),
            backend: self.backend,
            timeout: self.timeout,
            child_counter: AtomicU64::new(0),
            timings: self.timings.clone(),
        };
        let timing = CommBuildTiming {
            comm_id: child_id,
            size: member_ranks.len(),
            wall_time: start.elapsed().as_secs_f64(),
        };
        if new_rank == 0 {
            self.timings.record(timing);
        }
        SplitOutcome::Member(child, timing)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_ranks<T: Send + 'static>(
        comms: Vec<Communicator>,
        f: impl Fn(Communicator) -> T + Send + Sync + 'static,
    ) -> Vec<T> {
        let f = Arc::new(f);
        let handles: Vec<_> = comms
            .into_iter()
            .map(|c| {
                let f = f.clone();
                thread::spawn(move || f(c))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    }

    #[test]
    fn size_zero_rejected() {
        assert_eq!(create_world(Backend::InProcess, 0).unwrap_err(), FabricError::InvalidSize(0));
        assert!(create_world(Backend::Nccl, 2).is_err());
    }

    #[test]
    fn send_recv_and_fifo() {
        let w = create_world(Backend::InProcess, 2).unwrap();
        let [a, b]: [Communicator; 2] = w.comms.try_into().unwrap();
        a.send(1, 7, b"x".to_vec()).unwrap();
        a.send(1, 7, b"y".to_vec()).unwrap();
        assert_eq!(b.recv(0, 7).unwrap(), b"x");
        assert_eq!(b.recv(0, 7).unwrap(), b"y");
        a.send(1, 9, Vec::new()).unwrap();
        assert_eq!(b.recv(0, 9).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn recv_times_out() {
        let w = create_world(Backend::InProcess, 2).unwrap();
        let start = Instant::now();
        let err = w.comms[1]
            .recv_timeout(0, 1, Duration::from_millis(100))
            .unwrap_err();
        assert!(matches!(err, FabricError::Timeout { peer: Some(0), .. }));
        assert!(start.elapsed() >= Duration::from_millis(100));
    }

    #[test]
    fn dropped_peer_is_reported() {
        let w = create_world(Backend::InProcess, 2).unwrap();
        let mut comms = w.comms;
        let b = comms.pop().unwrap();
        drop(comms);
        assert_eq!(b.recv(0, 1).unwrap_err(), FabricError::PeerDisconnected(0));
        assert!(b.send(0, 1, vec![1]).is_err());
    }

    #[test]
    fn tcp_dropped_peer_is_reported() {
        let w = create_world(Backend::Tcp, 2).unwrap();
        let mut comms = w.comms;
        let b = comms.pop().unwrap();
        drop(comms);
        assert_eq!(b.recv(0, 1).unwrap_err(), FabricError::PeerDisconnected(0));
    }

    #[test]
    fn split_maps_ranks_in_order() {
        let w = create_world(Backend::InProcess, 8).unwrap();
        let parent_id = w.comms[0].comm_id();
        let out = run_ranks(w.comms, |c| {
            c.split(&[2, 5, 7]).unwrap().into_member().map(|(child, _)| {
                (c.rank(), child.rank(), child.size(), child.comm_id(), child.peer_table().to_vec())
            })
        });
        let members: Vec<_> = out.into_iter().flatten().collect();
        assert_eq!(members.len(), 3);
        let by_old: Vec<(usize, usize)> = members.iter().map(|m| (m.0, m.1)).collect();
        assert_eq!(by_old, vec![(2, 0), (5, 1), (7, 2)]);
        assert!(members.iter().all(|m| m.2 == 3 && m.3 == members[0].3 && m.3 != parent_id));
        assert_eq!(members[0].4, vec![2, 5, 7]);
    }

    #[test]
    fn split_full_membership_gets_new_id() {
        let w = create_world(Backend::InProcess, 3).unwrap();
        let parent = w.comms[0].comm_id();
        let out = run_ranks(w.comms, |c| {
            let (child, _) = c.split(&[0, 1, 2]).unwrap().into_member().unwrap();
            (c.rank(), child.rank(), child.comm_id())
        });
        for (old, new, id) in out {
            assert_eq!(old, new);
            assert_ne!(id, parent);
        }
    }

    #[test]
    fn split_with_assigned_id() {
        let w = create_world(Backend::Tcp, 3).unwrap();
        let out = run_ranks(w.comms, |c| {
            let Some((child, _)) = c.split_with_id(&[0, 2], 0xabc).unwrap().into_member() else {
                return None;
            };
            let sum = child.allreduce_f64(&[c.rank() as f64], ReduceOp::Sum).unwrap();
            Some((child.comm_id(), child.rank(), sum[0]))
        });
        assert_eq!(out, vec![Some((0xabc, 0, 2.0)), None, Some((0xabc, 1, 2.0))]);
    }

    #[test]
    fn split_rejects_bad_subsets() {
        let w = create_world(Backend::InProcess, 4).unwrap();
        let c = &w.comms[0];
        assert!(matches!(c.split(&[]), Err(FabricError::InvalidSubset(_))));
        assert!(matches!(c.split(&[2, 1]), Err(FabricError::InvalidSubset(_))));
        assert!(matches!(c.split(&[1, 1]), Err(FabricError::InvalidSubset(_))));
        assert!(matches!(c.split(&[0, 4]), Err(FabricError::InvalidSubset(_))));
        assert!(matches!(c.split(&[1, 2]), Ok(SplitOutcome::NotMember)));
    }

    #[test]
    fn split_mismatch_times_out() {
        let mut w = create_world(Backend::InProcess, 2).unwrap();
        for c in &mut w.comms {
            c.set_timeout(Duration::from_millis(50));
        }
        // rank 1 believes it is in a split led by rank 0, rank 0 never calls
        let err = w.comms[1].split(&[0, 1]).unwrap_err();
        assert!(matches!(err, FabricError::Timeout { .. }));
    }

    #[test]
    fn child_traffic_is_isolated_from_parent() {
        let w = create_world(Backend::InProcess, 2).unwrap();
        let out = run_ranks(w.comms, |c| {
            let (child, _) = c.split(&[0, 1]).unwrap().into_member().unwrap();
            if c.rank() == 0 {
                c.send(1, 42, b"parent".to_vec()).unwrap();
                child.send(1, 42, b"child".to_vec()).unwrap();
                None
            } else {
                // receive child first even though the parent message was sent first
                let from_child = child.recv(0, 42).unwrap();
                let from_parent = c.recv(0, 42).unwrap();
                Some((from_child, from_parent))
            }
        });
        assert_eq!(out[1], Some((b"child".to_vec(), b"parent".to_vec())));
    }

    #[test]
    fn one_timing_per_communicator() {
        let w = create_world(Backend::InProcess, 4).unwrap();
        assert_eq!(w.comms[0].build_timings().len(), 1);
        assert_eq!(w.timing.size, 4);
        assert!(w.timing.wall_time >= 0.0);
        let log = w.comms[0].timings.clone();
        run_ranks(w.comms, |c| {
            c.split(&[0, 1]).unwrap();
            c.split(&[1, 2, 3]).unwrap();
        });
        let timings = log.snapshot();
        assert_eq!(timings.len(), 3);
        assert_eq!(timings.iter().map(|t| t.size).sum::<usize>(), 4 + 2 + 3);
    }

    #[test]
    fn tcp_world_roundtrips_one_mib() {
        let w = create_world(Backend::Tcp, 4).unwrap();
        let payload: Vec<u8> = (0..1 << 20).map(|i: u32| (i.wrapping_mul(2654435761) >> 13) as u8).collect();
        let expected = payload.clone();
        let out = run_ranks(w.comms, move |c| {
            let next = (c.rank() + 1) % c.size();
            let prev = (c.rank() + c.size() - 1) % c.size();
            c.send(next, 5, payload.clone()).unwrap();
            c.recv(prev, 5).unwrap()
        });
        assert!(out.iter().all(|p| *p == expected));
    }

    #[test]
    fn join_tcp_world_across_threads() {
        let listeners: Vec<TcpListener> =
            (0..3).map(|_| TcpListener::bind("127.0.0.1:0").unwrap()).collect();
        let addrs: Vec<SocketAddr> = listeners.iter().map(|l| l.local_addr().unwrap()).collect();
        let handles: Vec<_> = listeners
            .into_iter()
            .enumerate()
            .map(|(r, l)| {
                let addrs = addrs.clone();
                thread::spawn(move || {
                    let c = join_tcp_world(r, l, &addrs, 99, Duration::from_secs(5)).unwrap();
                    let v = c.allreduce_f64(&[r as f64], ReduceOp::Sum).unwrap();
                    (c.comm_id(), v)
                })
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), (99, vec![3.0]));
        }
    }
}
