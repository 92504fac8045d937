//! Deterministic discrete-event simulation of asynchronous fragment training.
//!
//! Clients are dispatched fragments by the scheduler, train for exactly
//! their cost in ticks, and have their results merged into the global model
//! on completion. Events are processed in `(time, seq)` order, so a run is a
//! pure function of its configuration and seed.

mod log;
mod workload;

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::model::{merge_fragment, Fragment, FragmentSpec, ParamVector};
use crate::scheduler::{cost, validate_bound, ClientProfile, CostModel, Policy, SchedulerState};

pub use log::{fmt_g9, CheckpointRecord, LogRow, RunLog, TaskRecord, CSV_HEADER};
pub use workload::{evaluate_checkpoint, task_rng, LearningWorkload, NullWorkload, Workload};

/// How a merge's mixing weight decays with staleness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StalenessMode {
    Constant,
    /// `s(d) = (1 + d)^-a`.
    Polynomial { a: f64 },
}

impl Default for StalenessMode {
    fn default() -> Self {
        StalenessMode::Polynomial { a: 0.5 }
    }
}

pub fn staleness_weight(mode: StalenessMode, staleness: u64) -> Result<f64> {
    match mode {
        StalenessMode::Constant => Ok(1.0),
        StalenessMode::Polynomial { a } => {
            if !(a >= 0.0) || !a.is_finite() {
                return Err(FedError::Config(format!(
                    "staleness exponent must be nonnegative, got {a}"
                )));
            }
            Ok((1.0 + staleness as f64).powf(-a))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Async,
    /// Rounds with a barrier; all results merge together, in client order.
    Sync,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub global: ParamVector,
    /// `update_count` of each entry is `q(j)`.
    pub fragments: Vec<FragmentSpec>,
    /// Merges applied so far, `t`.
    pub epoch: u64,
    pub alpha: f64,
    pub staleness: StalenessMode,
}

impl ServerState {
    pub fn new(global: ParamVector, fragments: Vec<FragmentSpec>, alpha: f64, staleness: StalenessMode) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(FedError::Config(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        staleness_weight(staleness, 0)?;
        if fragments.is_empty() {
            return Err(FedError::Config("at least one fragment is required".into()));
        }
        let epoch = fragments.iter().map(|f| f.update_count).sum();
        Ok(ServerState {
            global,
            fragments,
            epoch,
            alpha,
            staleness,
        })
    }

    /// A parameterless server for scheduling-only runs: fragment `j` has
    /// share `shares[j]` and owns nothing.
    pub fn placeholder(shares: &[f64], alpha: f64, staleness: StalenessMode) -> Result<Self> {
        let fragments = shares
            .iter()
            .enumerate()
            .map(|(index, &unit_share)| FragmentSpec {
                index,
                param_indices: Vec::new(),
                unit_range: 0..0,
                owns_output_bias: false,
                unit_share,
                update_count: 0,
            })
            .collect();
        ServerState::new(ParamVector::zeros(0), fragments, alpha, staleness)
    }

    pub fn q(&self) -> Vec<u64> {
        self.fragments.iter().map(|f| f.update_count).collect()
    }
}

fn merge_with_staleness(server: &mut ServerState, task: &mut TaskRecord, trained: &Fragment, staleness: u64) -> Result<()> {
    let j = task.fragment;
    if j >= server.fragments.len() {
        return Err(FedError::Contract(format!("task targets unknown fragment {j}")));
    }
    let alpha_t = (server.alpha * staleness_weight(server.staleness, staleness)?).clamp(f64::MIN_POSITIVE, 1.0);
    merge_fragment(&mut server.global, &mut server.fragments[j], trained, alpha_t)?;
    task.applied_epoch = server.epoch;
    task.staleness = staleness;
    task.alpha_t = alpha_t;
    server.epoch += 1;
    Ok(())
}

/// Merges a completed task with `alpha_t = alpha * s(t - tau)`.
pub fn apply_update(server: &mut ServerState, task: &mut TaskRecord, trained: &Fragment) -> Result<()> {
    let staleness = server.epoch.checked_sub(task.dispatch_epoch).ok_or_else(|| {
        FedError::Contract(format!(
            "task dispatched at epoch {} but server is at {}",
            task.dispatch_epoch, server.epoch
        ))
    })?;
    merge_with_staleness(server, task, trained, staleness)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Client `n` must have id `n`.
    pub clients: Vec<ClientProfile>,
    pub policy: Policy,
    pub aggregation: Aggregation,
    pub cost_model: CostModel,
    /// Delay bound in ticks.
    pub k: f64,
    /// Stop once this many merges have been applied.
    pub t_target: u64,
    /// Stop before processing any event later than this.
    pub tick_budget: f64,
    pub checkpoint_interval: Option<f64>,
    /// Also checkpoint after every this many merges.
    pub checkpoint_every_merges: Option<u64>,
    /// Ticks between a completion and the client's next dispatch.
    pub idle_delay: f64,
    /// Log-normal duration jitter; 0 disables it.
    pub jitter_sigma: f64,
    pub seed: u64,
}

impl SimConfig {
    /// Defaults for everything but the clients and the bound.
    pub fn new(clients: Vec<ClientProfile>, k: f64, t_target: u64) -> Self {
        SimConfig {
            clients,
            policy: Policy::GreRaa,
            aggregation: Aggregation::Async,
            cost_model: CostModel::SizeOverCapability,
            k,
            t_target,
            tick_budget: f64::INFINITY,
            checkpoint_interval: None,
            checkpoint_every_merges: None,
            idle_delay: 0.0,
            jitter_sigma: 0.0,
            seed: 0,
        }
    }

    fn validate(&self, sizes: &[f64]) -> Result<()> {
        if self.clients.is_empty() {
            return Err(FedError::Config("at least one client is required".into()));
        }
        if let Some((n, p)) = self.clients.iter().enumerate().find(|(n, p)| p.id != *n) {
            return Err(FedError::Config(format!("client at position {n} has id {}", p.id)));
        }
        if self.t_target == 0 {
            return Err(FedError::Config("merge target must be positive".into()));
        }
        if !(self.tick_budget > 0.0) {
            return Err(FedError::Config(format!("tick budget must be positive, got {}", self.tick_budget)));
        }
        if let Some(iv) = self.checkpoint_interval {
            if !(iv > 0.0 && iv.is_finite()) {
                return Err(FedError::Config(format!("checkpoint interval must be positive, got {iv}")));
            }
        }
        if self.checkpoint_every_merges == Some(0) {
            return Err(FedError::Config("checkpoint merge spacing must be positive".into()));
        }
        if !(self.idle_delay >= 0.0 && self.idle_delay.is_finite()) {
            return Err(FedError::Config(format!("idle delay must be nonnegative, got {}", self.idle_delay)));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(FedError::Config(format!("jitter must be nonnegative, got {}", self.jitter_sigma)));
        }
        if let Some(j) = sizes.iter().position(|&s| !(s > 0.0)) {
            return Err(FedError::Config(format!(
                "fragment {j} has no size under the {:?} cost model",
                self.cost_model
            )));
        }
        if self.policy.respects_bound() {
            validate_bound(&self.clients, sizes, self.k, self.cost_model)?;
        }
        Ok(())
    }

    fn mode_label(&self) -> String {
        let p = match self.policy {
            Policy::GreRaa => "gre_raa",
            Policy::Random => "random",
            Policy::MinPriority => "mp",
        };
        let a = match self.aggregation {
            Aggregation::Async => "async",
            Aggregation::Sync => "sync",
        };
        format!("{p}/{a}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    ClientIdle(usize),
    TaskComplete(u64),
    Checkpoint,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

/// Runs the configured aggregation mode.
pub fn run<W: Workload>(cfg: &SimConfig, server: ServerState, workload: &mut W) -> Result<(RunLog, ServerState)> {
    Engine::new(cfg, server, workload)?.run()
}

pub fn run_async<W: Workload>(cfg: &SimConfig, server: ServerState, workload: &mut W) -> Result<(RunLog, ServerState)> {
    let cfg = SimConfig {
        aggregation: Aggregation::Async,
        ..cfg.clone()
    };
    run(&cfg, server, workload)
}

pub fn run_sync<W: Workload>(cfg: &SimConfig, server: ServerState, workload: &mut W) -> Result<(RunLog, ServerState)> {
    let cfg = SimConfig {
        aggregation: Aggregation::Sync,
        ..cfg.clone()
    };
    run(&cfg, server, workload)
}

/// Scheduling-only run over fragments with the given shares.
pub fn simulate_schedule(cfg: &SimConfig, shares: &[f64]) -> Result<RunLog> {
    let server = ServerState::placeholder(shares, 0.5, StalenessMode::default())?;
    run(cfg, server, &mut NullWorkload).map(|(log, _)| log)
}

struct Engine<'a, W> {
    cfg: &'a SimConfig,
    server: ServerState,
    workload: &'a mut W,
    sched: SchedulerState,
    sizes: Vec<f64>,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    next_task: u64,
    active: BTreeMap<u64, TaskRecord>,
    /// Completed tasks waiting for the barrier (sync mode).
    round: Vec<u64>,
    jitter: ChaCha8Rng,
    now: f64,
    log: RunLog,
}

impl<'a, W: Workload> Engine<'a, W> {
    fn new(cfg: &'a SimConfig, server: ServerState, workload: &'a mut W) -> Result<Self> {
        let sizes: Vec<f64> = server.fragments.iter().map(|f| cfg.cost_model.fragment_size(f)).collect();
        cfg.validate(&sizes)?;
        let sched = SchedulerState::new(cfg.policy, cfg.k, cfg.cost_model, cfg.seed)?;
        let mut jitter = ChaCha8Rng::seed_from_u64(cfg.seed);
        jitter.set_stream(u64::MAX);
        let log = RunLog {
            mode: cfg.mode_label(),
            seed: cfg.seed,
            local_iterations: workload.local_iterations(),
            ..RunLog::default()
        };
        Ok(Engine {
            cfg,
            server,
            workload,
            sched,
            sizes,
            queue: BinaryHeap::new(),
            seq: 0,
            next_task: 0,
            active: BTreeMap::new(),
            round: Vec::new(),
            jitter,
            now: 0.0,
            log,
        })
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        self.queue.push(Reverse(Event { time, seq: self.seq, kind }));
        self.seq += 1;
    }

    fn run(mut self) -> Result<(RunLog, ServerState)> {
        self.checkpoint()?;
        if let Some(iv) = self.cfg.checkpoint_interval {
            self.push(iv, EventKind::Checkpoint);
        }
        for n in 0..self.cfg.clients.len() {
            self.push(0.0, EventKind::ClientIdle(n));
        }
        while let Some(Reverse(ev)) = self.queue.pop() {
            if ev.time > self.cfg.tick_budget {
                break;
            }
            self.now = ev.time;
            let done = match ev.kind {
                EventKind::ClientIdle(n) => {
                    self.dispatch(n)?;
                    false
                }
                EventKind::Checkpoint => {
                    self.checkpoint()?;
                    if let Some(iv) = self.cfg.checkpoint_interval {
                        self.push(ev.time + iv, EventKind::Checkpoint);
                    }
                    false
                }
                EventKind::TaskComplete(id) => match self.cfg.aggregation {
                    Aggregation::Async => self.complete_async(id)?,
                    Aggregation::Sync => self.complete_sync(id)?,
                },
            };
            let total: u64 = self.server.fragments.iter().map(|f| f.update_count).sum();
            assert_eq!(self.server.epoch, total, "epoch counter out of step with merge counts");
            if done {
                self.log.target_tick = Some(self.now);
                break;
            }
        }
        self.checkpoint()?;
        self.log.epochs = self.server.epoch;
        self.log.final_q = self.server.q();
        self.log.final_tick = self.now;
        Ok((self.log, self.server))
    }

    fn dispatch(&mut self, n: usize) -> Result<()> {
        let profile = &self.cfg.clients[n];
        let q = self.server.q();
        let j = self.sched.assign(profile, &self.sizes, &q)?;
        let mut duration = cost(profile, self.sizes[j], self.cfg.cost_model);
        if self.cfg.jitter_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut self.jitter);
            duration *= (self.cfg.jitter_sigma * z).exp();
        }
        let task = TaskRecord {
            id: self.next_task,
            client: n,
            fragment: j,
            dispatch_epoch: self.server.epoch,
            dispatch_tick: self.now,
            duration,
            completion_tick: self.now + duration,
            applied_epoch: 0,
            staleness: 0,
            alpha_t: 0.0,
        };
        self.next_task += 1;
        self.workload.begin_task(&task, &self.server).map_err(|e| task_error(&task, e))?;
        self.push(task.completion_tick, EventKind::TaskComplete(task.id));
        self.active.insert(task.id, task);
        Ok(())
    }

    /// Trains and merges one task; true once the merge target is reached.
    fn merge(&mut self, id: u64, forced_staleness: Option<u64>) -> Result<bool> {
        let mut task = self.active.remove(&id).expect("completion for an unknown task");
        let trained = self
            .workload
            .finish_task(&task, &self.server)
            .map_err(|e| task_error(&task, e))?;
        match forced_staleness {
            Some(s) => merge_with_staleness(&mut self.server, &mut task, &trained, s),
            None => apply_update(&mut self.server, &mut task, &trained),
        }
        .map_err(|e| task_error(&task, e))?;
        self.log.rows.push(LogRow::Merge {
            tick: self.now,
            epoch: self.server.epoch,
            client: task.client,
            fragment: task.fragment,
            q_j: self.server.fragments[task.fragment].update_count,
            staleness: task.staleness,
            alpha_t: task.alpha_t,
        });
        self.log.tasks.push(task);
        if let Some(every) = self.cfg.checkpoint_every_merges {
            if self.server.epoch.is_multiple_of(every) {
                self.checkpoint()?;
            }
        }
        Ok(self.server.epoch >= self.cfg.t_target)
    }

    fn redispatch(&mut self, n: usize) -> Result<()> {
        if self.cfg.idle_delay == 0.0 {
            self.dispatch(n)
        } else {
            self.push(self.now + self.cfg.idle_delay, EventKind::ClientIdle(n));
            Ok(())
        }
    }

    fn complete_async(&mut self, id: u64) -> Result<bool> {
        let client = self.active[&id].client;
        let done = self.merge(id, None)?;
        self.sched.release(client);
        if !done {
            self.redispatch(client)?;
        }
        Ok(done)
    }

    fn complete_sync(&mut self, id: u64) -> Result<bool> {
        self.round.push(id);
        if self.round.len() < self.sched.in_flight().len() {
            return Ok(false);
        }
        let mut round = std::mem::take(&mut self.round);
        round.sort_by_key(|id| self.active[id].client);
        for id in round {
            if self.merge(id, Some(0))? {
                return Ok(true);
            }
        }
        let clients: Vec<usize> = self.sched.in_flight().keys().copied().collect();
        for &n in &clients {
            self.sched.release(n);
        }
        for n in clients {
            self.redispatch(n)?;
        }
        Ok(false)
    }

    /// Evaluates the global model unless this (tick, epoch) was already logged.
    fn checkpoint(&mut self) -> Result<()> {
        if let Some(c) = self.log.checkpoints.last() {
            if c.tick == self.now && c.epoch == self.server.epoch {
                return Ok(());
            }
        }
        if let Some((loss, accuracy)) = self.workload.evaluate(&self.server)? {
            self.log.rows.push(LogRow::Checkpoint {
                tick: self.now,
                epoch: self.server.epoch,
                loss,
                accuracy,
            });
            self.log.checkpoints.push(CheckpointRecord {
                tick: self.now,
                epoch: self.server.epoch,
                loss,
                accuracy,
                q: self.server.q(),
            });
        }
        Ok(())
    }
}

fn task_error(task: &TaskRecord, e: FedError) -> FedError {
    FedError::Task {
        task: task.id,
        client: task.client,
        fragment: task.fragment,
        source: Box::new(e),
    }
}
