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


//! Executor daemon and the control messages exchanged with the master.
//!
//! ```text
//! DISPATCH  u8 1 | u16 uid | u8 kind | u64 comm_id | u32 n | n x u32 slot
//!           | u64 len | payload
//! SHUTDOWN  u8 2
//! RESULT    u16 uid | u32 task_rank | u8 ok | u64 len | reason
//!           | 4 x f64 timings | u64 len | output
//! ```

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::thread;
use std::time::{Duration, Instant};

use super::tasks::{decode_input, run_body};
use super::wire::{Reader, Writer};
use super::{OverheadBreakdown, TaskKind, TAG_DISPATCH, TAG_READY, TAG_RESULT};
use crate::fabric::{Communicator, FabricError, Plane, ReduceOp, SplitOutcome};

const MSG_DISPATCH: u8 = 1;
const MSG_SHUTDOWN: u8 = 2;

pub(crate) struct Dispatch {
    pub uid: String,
    pub kind: TaskKind,
    /// Id of the task communicator, assigned by the master.
    pub comm_id: u64,
    pub members: Vec<usize>,
    pub payload: Vec<u8>,
}

pub(crate) enum Control {
    Dispatch(Dispatch),
    Shutdown,
}

pub(crate) fn encode_dispatch(uid: &str, kind: TaskKind, comm_id: u64, members: &[usize], payload: &[u8]) -> Vec<u8> {
    let mut w = Writer::default();
    w.u8(MSG_DISPATCH).short_str(uid).u8(kind.tag()).u64(comm_id).u32(members.len() as u32);
    for &m in members {
        w.u32(m as u32);
    }
    w.bytes(payload);
    w.buf
}

pub(crate) fn encode_shutdown() -> Vec<u8> {
    vec![MSG_SHUTDOWN]
}

pub(crate) fn decode_control(buf: &[u8]) -> Result<Control, String> {
    let mut r = Reader::new(buf);
    match r.u8()? {
        MSG_SHUTDOWN => {
            r.finish()?;
            Ok(Control::Shutdown)
        }
        MSG_DISPATCH => {
            let uid = r.short_str()?;
            let tag = r.u8()?;
            let kind = TaskKind::from_tag(tag).ok_or_else(|| format!("unknown task kind {tag}"))?;
            let comm_id = r.u64()?;
            let n = r.u32()?;
            let members = (0..n).map(|_| r.u32().map(|m| m as usize)).collect::<Result<Vec<_>, _>>()?;
            let payload = r.bytes()?.to_vec();
            r.finish()?;
            Ok(Control::Dispatch(Dispatch {
                uid,
                kind,
                comm_id,
                members,
                payload,
            }))
        }
        t => Err(format!("unknown control message type {t}")),
    }
}

/// One member's report on a task.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct MemberReport {
    pub uid: String,
    pub task_rank: usize,
    pub outcome: Result<Vec<u8>, String>,
    pub timings: OverheadBreakdown,
}

impl MemberReport {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.short_str(&self.uid).u32(self.task_rank as u32);
        match &self.outcome {
            Ok(_) => w.u8(1).bytes(b""),
            Err(reason) => w.u8(0).bytes(reason.as_bytes()),
        };
        let t = &self.timings;
        w.f64(t.t_deserialize).f64(t.t_comm_build).f64(t.t_deliver).f64(t.t_execute);
        w.bytes(self.outcome.as_deref().unwrap_or_default());
        w.buf
    }

    pub fn decode(buf: &[u8]) -> Result<Self, String> {
        let mut r = Reader::new(buf);
        let uid = r.short_str()?;
        let task_rank = r.u32()? as usize;
        let ok = r.u8()? == 1;
        let reason = String::from_utf8_lossy(r.bytes()?).into_owned();
        let timings = OverheadBreakdown {
            t_deserialize: r.f64()?,
            t_comm_build: r.f64()?,
            t_deliver: r.f64()?,
            t_execute: r.f64()?,
        };
        let output = r.bytes()?.to_vec();
        r.finish()?;
        Ok(Self {
            uid,
            task_rank,
            outcome: if ok { Ok(output) } else { Err(reason) },
            timings,
        })
    }
}

const IDLE_POLL: Duration = Duration::from_secs(3600);

/// Executor daemon loop on world rank `comm.rank()`; `master` is the
/// master's world rank.
pub(crate) fn executor_loop(comm: Communicator, master: usize) {
    loop {
        let msg = match comm.recv_timeout(master, TAG_DISPATCH, IDLE_POLL) {
            Ok(m) => m,
            Err(FabricError::Timeout { .. }) => continue,
            Err(e) => {
                log::debug!("executor {} stopping: {e}", comm.rank());
                return;
            }
        };
        let received = Instant::now();
        match decode_control(&msg) {
            Ok(Control::Shutdown) => return,
            Ok(Control::Dispatch(d)) => {
                let report = execute(&comm, d, received);
                let failed = report.outcome.is_err();
                if let Err(e) = comm.send_on(Plane::Control, master, TAG_RESULT, report.encode()) {
                    log::warn!("executor {} cannot report to master: {e}", comm.rank());
                    return;
                }
                if failed {
                    log::debug!("executor {} reported failure of `{}`", comm.rank(), report.uid);
                }
            }
            Err(e) => log::warn!("executor {} dropped a control message: {e}", comm.rank()),
        }
    }
}

fn execute(world: &Communicator, d: Dispatch, received: Instant) -> MemberReport {
    let mut timings = OverheadBreakdown::default();
    let task_rank = d.members.iter().position(|&m| m == world.rank()).unwrap_or(usize::MAX);
    let fail = |timings: OverheadBreakdown, reason: String| MemberReport {
        uid: d.uid.clone(),
        task_rank,
        outcome: Err(reason),
        timings,
    };
    if task_rank == usize::MAX {
        return fail(timings, "comm_build: executor is not in the allocation".into());
    }

    let input = decode_input(d.kind, &d.payload, task_rank, d.members.len()).map_err(|e| format!("decode: {e}"));
    timings.t_deserialize = received.elapsed().as_secs_f64();

    let t = Instant::now();
    let split = world.split_with_id(&d.members, d.comm_id);
    timings.t_comm_build = t.elapsed().as_secs_f64();
    let comm = match split {
        Ok(SplitOutcome::Member(c, _)) => c,
        Ok(SplitOutcome::NotMember) => return fail(timings, "comm_build: not a member".into()),
        Err(e) => return fail(timings, format!("comm_build: {e}")),
    };

    // Delivery: members agree that everyone decoded its share, then the body
    // starts on its own thread.
    let t = Instant::now();
    let flag = if input.is_ok() { 0.0 } else { 1.0 };
    let agreed = comm.allreduce_f64_with_tag(TAG_READY, &[flag], ReduceOp::Max);
    let input = match (agreed, input) {
        (Err(e), _) => {
            timings.t_deliver = t.elapsed().as_secs_f64();
            return fail(timings, format!("deliver: {e}"));
        }
        (Ok(_), Err(reason)) => {
            timings.t_deliver = t.elapsed().as_secs_f64();
            return fail(timings, reason);
        }
        (Ok(v), Ok(_)) if v[0] != 0.0 => {
            timings.t_deliver = t.elapsed().as_secs_f64();
            return fail(timings, "decode: failed on another member".into());
        }
        (Ok(_), Ok(input)) => input,
    };
    let body = thread::Builder::new()
        .name(format!("task-{}-r{task_rank}", d.uid))
        .spawn(move || {
            let started = Instant::now();
            let out = catch_unwind(AssertUnwindSafe(|| run_body(&comm, input)))
                .unwrap_or_else(|_| Err("task body panicked".into()));
            (started, started.elapsed(), out)
        });
    let (started, exec, out) = match body.map(|h| h.join()) {
        Ok(Ok(r)) => r,
        Ok(Err(_)) => return fail(timings, "task thread panicked".into()),
        Err(e) => return fail(timings, format!("deliver: cannot spawn task thread: {e}")),
    };
    timings.t_deliver = started.duration_since(t).as_secs_f64();
    timings.t_execute = exec.as_secs_f64();
    match out {
        Ok(output) => MemberReport {
            uid: d.uid.clone(),
            task_rank,
            outcome: Ok(output),
            timings,
        },
        Err(reason) => fail(timings, reason),
    }
}
