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


use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::executor::{encode_dispatch, encode_shutdown, executor_loop, MemberReport};
use super::scheduler::AgentState;
use super::{
    OverheadBreakdown, PilotMode, Result, RuntimeError, TaskDescription, TaskResult, TaskStatus, TAG_DISPATCH,
    TAG_RESULT,
};
use crate::dist::fnv1a_64;
use crate::fabric::{create_world, Backend, Communicator, FabricError, Plane};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PilotState {
    Pending,
    Active,
    Done,
}

type Slot = (Mutex<Option<TaskResult>>, Condvar);

/// Pending result of a submitted task. Clones share the same slot.
#[derive(Debug, Clone)]
pub struct ResultHandle {
    uid: String,
    slot: Arc<Slot>,
}

impl ResultHandle {
    fn new(uid: &str) -> Self {
        Self {
            uid: uid.to_string(),
            slot: Arc::new((Mutex::new(None), Condvar::new())),
        }
    }

    pub fn uid(&self) -> &str {
        &self.uid
    }

    fn resolve(&self, r: TaskResult) {
        *self.slot.0.lock().unwrap() = Some(r);
        self.slot.1.notify_all();
    }

    pub fn try_result(&self) -> Option<TaskResult> {
        self.slot.0.lock().unwrap().clone()
    }

    pub fn wait(&self) -> TaskResult {
        let mut g = self.slot.0.lock().unwrap();
        loop {
            if let Some(r) = g.as_ref() {
                return r.clone();
            }
            g = self.slot.1.wait(g).unwrap();
        }
    }

    pub fn wait_timeout(&self, timeout: Duration) -> Option<TaskResult> {
        let g = self.slot.0.lock().unwrap();
        let (g, _) = self.slot.1.wait_timeout_while(g, timeout, |r| r.is_none()).unwrap();
        g.clone()
    }
}

enum Event {
    Submit(Vec<(TaskDescription, ResultHandle)>),
    Report(Vec<u8>),
    Drain,
}

/// A slot pool with its master and executor daemons.
pub struct Pilot {
    pilot_id: String,
    total_slots: usize,
    backend: Backend,
    mode: PilotMode,
    state: Mutex<PilotState>,
    epoch: Instant,
    uids: Mutex<HashSet<String>>,
    events: Mutex<Sender<Event>>,
    master: Option<JoinHandle<()>>,
    relay: Option<JoinHandle<()>>,
    executors: Vec<JoinHandle<()>>,
    probe_counter: AtomicU64,
}

impl std::fmt::Debug for Pilot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pilot")
            .field("pilot_id", &self.pilot_id)
            .field("total_slots", &self.total_slots)
            .field("backend", &self.backend)
            .field("mode", &self.mode)
            .field("state", &self.state())
            .finish()
    }
}

/// Starts a pilot of `slots` executors plus a master.
pub fn submit_pilot(slots: usize, backend: Backend, mode: PilotMode) -> Result<Pilot> {
    Pilot::start(slots, backend, mode)
}

impl Pilot {
    pub fn start(slots: usize, backend: Backend, mode: PilotMode) -> Result<Self> {
        if slots == 0 {
            return Err(RuntimeError::NoSlots);
        }
        static PILOTS: AtomicU64 = AtomicU64::new(0);
        let pilot_id = format!("pilot.{:04}", PILOTS.fetch_add(1, Ordering::Relaxed));
        let world = create_world(backend, slots + 1).map_err(|e| RuntimeError::Startup(e.to_string()))?;
        let mut comms = world.comms;
        let master_comm = Arc::new(comms.pop().expect("master rank"));
        let mut executors = Vec::with_capacity(slots);
        for comm in comms {
            let name = format!("{pilot_id}-exec{}", comm.rank());
            let h = thread::Builder::new()
                .name(name)
                .spawn(move || executor_loop(comm, slots))
                .map_err(|e| RuntimeError::Startup(e.to_string()))?;
            executors.push(h);
        }
        let epoch = Instant::now();
        let (tx, rx) = mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));
        let relay = {
            let comm = master_comm.clone();
            let tx = tx.clone();
            let stop = stop.clone();
            thread::Builder::new()
                .name(format!("{pilot_id}-relay"))
                .spawn(move || relay_loop(&comm, &tx, &stop))
                .map_err(|e| RuntimeError::Startup(e.to_string()))?
        };
        let master = {
            let master = Master {
                comm: master_comm,
                state: AgentState::new(slots, mode),
                epoch,
                handles: HashMap::new(),
                running: HashMap::new(),
                dispatched: 0,
                stop,
            };
            thread::Builder::new()
                .name(format!("{pilot_id}-master"))
                .spawn(move || master.run(rx))
                .map_err(|e| RuntimeError::Startup(e.to_string()))?
        };
        log::info!("{pilot_id}: {slots} slots, {backend:?} backend, {mode:?} mode");
        Ok(Self {
            pilot_id,
            total_slots: slots,
            backend,
            mode,
            state: Mutex::new(PilotState::Active),
            epoch,
            uids: Mutex::new(HashSet::new()),
            events: Mutex::new(tx),
            master: Some(master),
            relay: Some(relay),
            executors,
            probe_counter: AtomicU64::new(0),
        })
    }

    pub fn pilot_id(&self) -> &str {
        &self.pilot_id
    }

    pub fn total_slots(&self) -> usize {
        self.total_slots
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn mode(&self) -> PilotMode {
        self.mode
    }

    pub fn state(&self) -> PilotState {
        *self.state.lock().unwrap()
    }

    /// Seconds since the pilot started, the time base of all result stamps.
    pub fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    /// Enqueues `tasks` in order. Uids must be unique within the session and
    /// the whole call is rejected otherwise. Tasks needing more ranks than
    /// the pilot has resolve immediately as failed.
    pub fn submit_tasks(&self, tasks: Vec<TaskDescription>) -> Result<Vec<ResultHandle>> {
        if self.state() != PilotState::Active {
            return Err(RuntimeError::NotActive);
        }
        let mut uids = self.uids.lock().unwrap();
        let mut fresh = HashSet::new();
        for t in &tasks {
            if t.ranks_required == 0 {
                return Err(RuntimeError::ZeroRanks(t.uid.clone()));
            }
            if uids.contains(&t.uid) || !fresh.insert(t.uid.clone()) {
                return Err(RuntimeError::DuplicateUid(t.uid.clone()));
            }
        }
        uids.extend(fresh);
        drop(uids);

        let now = self.now();
        let mut handles = Vec::with_capacity(tasks.len());
        let mut queued = Vec::new();
        for mut t in tasks {
            t.submitted_at = now;
            let h = ResultHandle::new(&t.uid);
            if t.ranks_required > self.total_slots {
                h.resolve(TaskResult {
                    uid: t.uid.clone(),
                    kind: t.kind,
                    ranks: t.ranks_required,
                    status: TaskStatus::Failed("insufficient slots".into()),
                    output: Vec::new(),
                    timings: OverheadBreakdown::default(),
                    started_at: now,
                    finished_at: now,
                    slots: Vec::new(),
                });
            } else {
                queued.push((t, h.clone()));
            }
            handles.push(h);
        }
        if !queued.is_empty() {
            self.events
                .lock()
                .unwrap()
                .send(Event::Submit(queued))
                .map_err(|_| RuntimeError::NotActive)?;
        }
        Ok(handles)
    }

    /// Runs an empty task across every slot; succeeds when all executors
    /// took part in the task communicator.
    pub fn probe(&self) -> Result<TaskResult> {
        let n = self.probe_counter.fetch_add(1, Ordering::Relaxed);
        let payload = super::TaskPayload::new(serde_json::json!({"duration_ms": 0})).encode();
        let task = TaskDescription::new(format!("{}.probe.{n}", self.pilot_id), super::TaskKind::Sleep, self.total_slots, payload);
        let h = self.submit_tasks(vec![task])?.remove(0);
        Ok(h.wait())
    }

    /// Waits for queued and running tasks, then stops all daemons.
    pub fn shutdown(&mut self) {
        {
            let mut st = self.state.lock().unwrap();
            if *st == PilotState::Done {
                return;
            }
            *st = PilotState::Done;
        }
        let _ = self.events.lock().unwrap().send(Event::Drain);
        for h in [self.master.take(), self.relay.take()].into_iter().flatten() {
            let _ = h.join();
        }
        for h in self.executors.drain(..) {
            let _ = h.join();
        }
        log::info!("{}: shut down", self.pilot_id);
    }
}

impl Drop for Pilot {
    fn drop(&mut self) {
        self.shutdown();
    }
}

const RELAY_POLL: Duration = Duration::from_millis(50);

/// Moves member reports from the fabric into the master's event queue.
fn relay_loop(comm: &Communicator, tx: &Sender<Event>, stop: &AtomicBool) {
    while !stop.load(Ordering::Acquire) {
        match comm.recv_any_timeout(TAG_RESULT, RELAY_POLL) {
            Ok((src, _)) if src == comm.rank() => return,
            Ok((_, m)) => {
                if tx.send(Event::Report(m)).is_err() {
                    return;
                }
            }
            Err(FabricError::Timeout { .. }) => {}
            Err(e) => {
                log::warn!("result relay stopping: {e}");
                return;
            }
        }
    }
}

struct Running {
    task: TaskDescription,
    slots: Vec<usize>,
    started_at: f64,
    reports: Vec<Option<MemberReport>>,
}

struct Master {
    comm: Arc<Communicator>,
    state: AgentState,
    epoch: Instant,
    handles: HashMap<String, ResultHandle>,
    running: HashMap<String, Running>,
    dispatched: u64,
    stop: Arc<AtomicBool>,
}

impl Master {
    fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    fn run(mut self, rx: Receiver<Event>) {
        let mut draining = false;
        while !(draining && self.state.is_idle()) {
            let Ok(ev) = rx.recv() else { break };
            match ev {
                Event::Submit(list) => {
                    for (task, handle) in list {
                        self.handles.insert(task.uid.clone(), handle);
                        self.state.enqueue(task);
                    }
                }
                Event::Report(bytes) => self.on_report(&bytes),
                Event::Drain => draining = true,
            }
            for (task, slots) in self.state.schedule_step() {
                self.dispatch(task, slots);
            }
            debug_assert!(self.state.slots_partition_pool());
        }
        for s in 0..self.state.total_slots() {
            let _ = self.comm.send_on(Plane::Control, s, TAG_DISPATCH, encode_shutdown());
        }
        self.stop.store(true, Ordering::Release);
        let me = self.comm.rank();
        let _ = self.comm.send_on(Plane::Control, me, TAG_RESULT, Vec::new());
    }

    fn dispatch(&mut self, task: TaskDescription, slots: Vec<usize>) {
        let started_at = self.now();
        log::debug!("dispatch `{}` ({}) on slots {slots:?}", task.uid, task.kind);
        self.dispatched += 1;
        let comm_id = fnv1a_64(&[self.comm.comm_id().to_le_bytes(), self.dispatched.to_le_bytes()].concat());
        let msg = encode_dispatch(&task.uid, task.kind, comm_id, &slots, &task.payload);
        let mut reports = vec![None; slots.len()];
        for (r, &s) in slots.iter().enumerate() {
            if let Err(e) = self.comm.send_on(Plane::Control, s, TAG_DISPATCH, msg.clone()) {
                reports[r] = Some(MemberReport {
                    uid: task.uid.clone(),
                    task_rank: r,
                    outcome: Err(format!("dispatch: {e}")),
                    timings: OverheadBreakdown::default(),
                });
            }
        }
        let uid = task.uid.clone();
        self.running.insert(
            uid.clone(),
            Running {
                task,
                slots,
                started_at,
                reports,
            },
        );
        self.maybe_finish(&uid);
    }

    fn on_report(&mut self, bytes: &[u8]) {
        let report = match MemberReport::decode(bytes) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("master dropped a malformed report: {e}");
                return;
            }
        };
        let uid = report.uid.clone();
        let Some(run) = self.running.get_mut(&uid) else {
            log::warn!("report for unknown task `{uid}`");
            return;
        };
        if let Some(slot) = run.reports.get_mut(report.task_rank) {
            *slot = Some(report);
        }
        self.maybe_finish(&uid);
    }

    /// Resolves a task once every member has reported.
    fn maybe_finish(&mut self, uid: &str) {
        let done = self.running.get(uid).is_some_and(|r| r.reports.iter().all(Option::is_some));
        if !done {
            return;
        }
        let run = self.running.remove(uid).expect("running task");
        self.state.complete(uid);
        let reports: Vec<MemberReport> = run.reports.into_iter().map(|r| r.expect("all reported")).collect();
        let failure = reports.iter().find_map(|r| r.outcome.as_ref().err().cloned());
        let leader = &reports[0];
        let result = TaskResult {
            uid: uid.to_string(),
            kind: run.task.kind,
            ranks: run.task.ranks_required,
            status: match failure {
                None => TaskStatus::Done,
                Some(reason) => TaskStatus::Failed(reason),
            },
            output: leader.outcome.clone().unwrap_or_default(),
            timings: leader.timings,
            started_at: run.started_at,
            finished_at: self.now(),
            slots: run.slots,
        };
        match &result.status {
            TaskStatus::Done => log::debug!("task `{uid}` done"),
            TaskStatus::Failed(reason) => log::warn!("task `{uid}` failed: {reason}"),
        }
        if let Some(h) = self.handles.remove(uid) {
            h.resolve(result);
        }
    }
}
