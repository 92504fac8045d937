use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ServerState, TaskRecord};
use crate::error::{FedError, Result};
use crate::exec::Execution;
use crate::model::{extract_fragment, local_train, Fragment, LocalTrainParams, ModelSpec, ParamVector, Sample};

/// What happens to the model when the engine dispatches and completes tasks.
pub trait Workload {
    /// Called at dispatch, while the server still holds the dispatch-time model.
    fn begin_task(&mut self, task: &TaskRecord, server: &ServerState) -> Result<()>;

    /// Produces the trained fragment for a task that just completed.
    fn finish_task(&mut self, task: &TaskRecord, server: &ServerState) -> Result<Fragment>;

    /// Mean training loss and test accuracy of the current global model, if
    /// this workload trains anything.
    fn evaluate(&mut self, server: &ServerState) -> Result<Option<(f64, f64)>>;

    fn local_iterations(&self) -> Option<(usize, usize)> {
        None
    }
}

/// Timing only: fragments come back empty and nothing is evaluated.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullWorkload;

impl Workload for NullWorkload {
    fn begin_task(&mut self, _: &TaskRecord, _: &ServerState) -> Result<()> {
        Ok(())
    }

    fn finish_task(&mut self, task: &TaskRecord, _: &ServerState) -> Result<Fragment> {
        Ok(Fragment {
            spec_index: task.fragment,
            version: task.dispatch_epoch,
            values: Vec::new(),
        })
    }

    fn evaluate(&mut self, _: &ServerState) -> Result<Option<(f64, f64)>> {
        Ok(None)
    }
}

struct Pending {
    id: u64,
    client: usize,
    fragment: Fragment,
    snapshot: Arc<ParamVector>,
}

/// Trains fragments with proximal SGD on each client's shard.
///
/// A task's inputs are fixed at dispatch, so training is deferred: the first
/// completion that finds its result missing trains every pending task in one
/// data-parallel batch. Each task draws from its own RNG stream, which keeps
/// results independent of batching and execution strategy.
pub struct LearningWorkload {
    model: ModelSpec,
    shards: Vec<Vec<Sample>>,
    train: Vec<Sample>,
    test: Vec<Sample>,
    local: Vec<LocalTrainParams>,
    exec: Execution,
    seed: u64,
    snapshot: Option<(u64, Arc<ParamVector>)>,
    pending: Vec<Pending>,
    done: BTreeMap<u64, Result<Fragment>>,
}

impl LearningWorkload {
    /// `local[n]` holds client `n`'s training parameters. Loss is reported on
    /// the union of the shards and accuracy on `test`.
    pub fn new(
        model: ModelSpec,
        shards: Vec<Vec<Sample>>,
        test: Vec<Sample>,
        local: Vec<LocalTrainParams>,
        exec: Execution,
        seed: u64,
    ) -> Result<Self> {
        if test.is_empty() {
            return Err(FedError::Config("test set is empty".into()));
        }
        if local.len() != shards.len() {
            return Err(FedError::Config(format!(
                "{} shards but {} local training settings",
                shards.len(),
                local.len()
            )));
        }
        if let Some(n) = shards.iter().position(|s| s.is_empty()) {
            return Err(FedError::Config(format!("client {n} has an empty shard")));
        }
        let train = shards.iter().flatten().cloned().collect();
        Ok(LearningWorkload {
            model,
            shards,
            train,
            test,
            local,
            exec,
            seed,
            snapshot: None,
            pending: Vec::new(),
            done: BTreeMap::new(),
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    fn train_pending(&mut self, server: &ServerState) {
        let batch = std::mem::take(&mut self.pending);
        let (model, shards, local, seed) = (&self.model, &self.shards, &self.local, self.seed);
        let results = self.exec.map_owned(batch, |p| {
            let mut rng = task_rng(seed, p.id);
            let spec = &server.fragments[p.fragment.spec_index];
            let out = local_train(&p.fragment, spec, &p.snapshot, model, &shards[p.client], &local[p.client], &mut rng);
            (p.id, out)
        });
        self.done.extend(results);
    }
}

/// RNG for local training of task `id`.
pub fn task_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id.wrapping_add(1));
    rng
}

impl Workload for LearningWorkload {
    fn begin_task(&mut self, task: &TaskRecord, server: &ServerState) -> Result<()> {
        let snap = match &self.snapshot {
            Some((epoch, s)) if *epoch == server.epoch => Arc::clone(s),
            _ => {
                let s = Arc::new(server.global.clone());
                self.snapshot = Some((server.epoch, Arc::clone(&s)));
                s
            }
        };
        self.pending.push(Pending {
            id: task.id,
            client: task.client,
            fragment: extract_fragment(&server.global, &server.fragments[task.fragment]),
            snapshot: snap,
        });
        Ok(())
    }

    fn finish_task(&mut self, task: &TaskRecord, server: &ServerState) -> Result<Fragment> {
        if !self.done.contains_key(&task.id) {
            self.train_pending(server);
        }
        self.done
            .remove(&task.id)
            .unwrap_or_else(|| Err(FedError::Contract(format!("task {} was never dispatched", task.id))))
    }

    fn evaluate(&mut self, server: &ServerState) -> Result<Option<(f64, f64)>> {
        evaluate_checkpoint(server, &self.model, &self.train, &self.test, self.exec).map(Some)
    }

    fn local_iterations(&self) -> Option<(usize, usize)> {
        let it = self.local.iter().map(|p| p.iterations);
        Some((it.clone().min()?, it.max()?))
    }
}

/// Mean loss over `train` and accuracy over `test` for the current global model.
pub fn evaluate_checkpoint(
    server: &ServerState,
    model: &ModelSpec,
    train: &[Sample],
    test: &[Sample],
    exec: Execution,
) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(FedError::Config("test set is empty".into()));
    }
    let loss = if train.is_empty() {
        f64::NAN
    } else {
        crate::model::evaluate(&server.global, model, train, exec)?.0
    };
    let (_, acc) = crate::model::evaluate(&server.global, model, test, exec)?;
    Ok((loss, acc))
}
