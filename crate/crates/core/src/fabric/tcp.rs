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

//! TCP transport: one persistent connection per rank pair, opened by the
//! lower rank, carrying length-prefixed frames:
//!
//! ```text
//! u32 frame_len | u8 msg_type | u64 comm_id | u32 src_rank | u32 dst_rank | u64 tag | payload
//! ```
//!
//! `frame_len` counts everything after itself. All integers little-endian.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::mailbox::Mailbox;
use super::{FabricError, Plane};

pub const FRAME_HEADER_LEN: usize = 1 + 8 + 4 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub plane: Plane,
    pub comm_id: u64,
    pub src: u32,
    pub dst: u32,
    pub tag: u64,
}

/// Encodes the length prefix plus header; the payload follows on the wire.
pub fn encode_frame_header(h: &FrameHeader, payload_len: usize) -> [u8; 4 + FRAME_HEADER_LEN] {
    let mut out = [0u8; 4 + FRAME_HEADER_LEN];
    let frame_len = (FRAME_HEADER_LEN + payload_len) as u32;
    out[0..4].copy_from_slice(&frame_len.to_le_bytes());
    out[4] = h.plane as u8;
    out[5..13].copy_from_slice(&h.comm_id.to_le_bytes());
    out[13..17].copy_from_slice(&h.src.to_le_bytes());
    out[17..21].copy_from_slice(&h.dst.to_le_bytes());
    out[21..29].copy_from_slice(&h.tag.to_le_bytes());
    out
}

/// Decodes the part of a frame after the length prefix.
pub fn decode_frame(body: &[u8]) -> Result<(FrameHeader, &[u8]), FabricError> {
    if body.len() < FRAME_HEADER_LEN {
        return Err(FabricError::Protocol(format!("short frame of {} bytes", body.len())));
    }
    let plane = match body[0] {
        0 => Plane::Data,
        1 => Plane::Control,
        t => return Err(FabricError::Protocol(format!("unknown msg_type {t}"))),
    };
    let u64_at = |i: usize| u64::from_le_bytes(body[i..i + 8].try_into().unwrap());
    let u32_at = |i: usize| u32::from_le_bytes(body[i..i + 4].try_into().unwrap());
    let header = FrameHeader {
        plane,
        comm_id: u64_at(1),
        src: u32_at(9),
        dst: u32_at(13),
        tag: u64_at(17),
    };
    Ok((header, &body[FRAME_HEADER_LEN..]))
}

pub(crate) fn write_frame(
    stream: &mut TcpStream,
    h: &FrameHeader,
    payload: &[u8],
) -> io::Result<()> {
    let header = encode_frame_header(h, payload.len());
    stream.write_all(&header)?;
    stream.write_all(payload)
}

fn read_frame(stream: &mut TcpStream) -> Result<Vec<u8>, FabricError> {
    let mut len = [0u8; 4];
    stream.read_exact(&mut len).map_err(io_err)?;
    let len = u32::from_le_bytes(len) as usize;
    let mut body = vec![0u8; len];
    stream.read_exact(&mut body).map_err(io_err)?;
    Ok(body)
}

fn io_err(e: io::Error) -> FabricError {
    FabricError::Io(e.to_string())
}

/// Reads frames from one peer connection into the local mailbox until the
/// connection closes, then marks the peer disconnected.
pub(crate) fn spawn_reader(
    mut stream: TcpStream,
    peer_world: usize,
    mailbox: Arc<Mailbox>,
) -> io::Result<thread::JoinHandle<()>> {
    thread::Builder::new()
        .name(format!("drc-tcp-rx-{peer_world}"))
        .spawn(move || {
            loop {
                let body = match read_frame(&mut stream) {
                    Ok(b) => b,
                    Err(_) => break,
                };
                match decode_frame(&body) {
                    Ok((h, payload)) => {
                        let key = (h.comm_id, h.src, h.tag);
                        if mailbox.push(key, payload.to_vec()).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        log::warn!("dropping connection to rank {peer_world}: {e}");
                        break;
                    }
                }
            }
            mailbox.mark_disconnected(peer_world);
        })
}

const HANDSHAKE_LEN: usize = 12;

fn handshake(world_id: u64, rank: usize) -> [u8; HANDSHAKE_LEN] {
    let mut b = [0u8; HANDSHAKE_LEN];
    b[..8].copy_from_slice(&world_id.to_le_bytes());
    b[8..].copy_from_slice(&(rank as u32).to_le_bytes());
    b
}

/// Establishes this rank's links to every other rank. Connects to each
/// higher rank, accepts from each lower rank. Returns `links[peer]`.
pub(crate) fn establish_links(
    rank: usize,
    listener: &TcpListener,
    addrs: &[SocketAddr],
    world_id: u64,
    timeout: Duration,
) -> Result<Vec<Option<TcpStream>>, FabricError> {
    let size = addrs.len();
    let deadline = Instant::now() + timeout;
    let mut links: Vec<Option<TcpStream>> = (0..size).map(|_| None).collect();

    for (peer, addr) in addrs.iter().enumerate().skip(rank + 1) {
        let mut stream = loop {
            match TcpStream::connect_timeout(addr, Duration::from_millis(200)) {
                Ok(s) => break s,
                Err(e) if Instant::now() < deadline => {
                    log::debug!("rank {rank}: connect to {addr} failed ({e}), retrying");
                    thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(FabricError::Io(format!("connect to rank {peer}: {e}"))),
            }
        };
        stream.set_nodelay(true).map_err(io_err)?;
        stream.write_all(&handshake(world_id, rank)).map_err(io_err)?;
        links[peer] = Some(stream);
    }

    listener.set_nonblocking(true).map_err(io_err)?;
    let mut pending = rank;
    while pending > 0 {
        match listener.accept() {
            Ok((mut stream, _)) => {
                stream.set_nonblocking(false).map_err(io_err)?;
                stream
                    .set_read_timeout(Some(deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(1))))
                    .map_err(io_err)?;
                let mut hs = [0u8; HANDSHAKE_LEN];
                stream.read_exact(&mut hs).map_err(io_err)?;
                stream.set_read_timeout(None).map_err(io_err)?;
                let their_world = u64::from_le_bytes(hs[..8].try_into().unwrap());
                let peer = u32::from_le_bytes(hs[8..].try_into().unwrap()) as usize;
                if their_world != world_id || peer >= rank || links[peer].is_some() {
                    return Err(FabricError::Protocol(format!(
                        "rank {rank}: unexpected handshake from rank {peer} (world {their_world:#x})"
                    )));
                }
                stream.set_nodelay(true).map_err(io_err)?;
                links[peer] = Some(stream);
                pending -= 1;
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(FabricError::Timeout { peer: None, tag: 0 });
                }
                thread::sleep(Duration::from_millis(1));
            }
            Err(e) => return Err(io_err(e)),
        }
    }
    Ok(links)
}
