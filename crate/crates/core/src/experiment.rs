//! Runs, sweeps, ablations and the offline-bound check, plus their output files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{DatasetKind, ExperimentConfig, SchedulerMode};
use crate::data::{gen_synthetic, read_idx, shard_fingerprint, shard_iid, Dataset};
use crate::error::{FedError, Result};
use crate::exec::Execution;
use crate::model::{partition_model, FragmentSpec, LocalTrainParams, ModelSpec, Sample};
use crate::scheduler::{
    brute_force_offline_k, cost, offline_sorted_assignment, ClientProfile, CostModel,
};
use crate::sim::{fmt_g9, run, simulate_schedule, LearningWorkload, RunLog, ServerState, SimConfig};

/// Loads the training and test sets named by `cfg`.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match cfg.dataset {
        DatasetKind::Synthetic => {
            let seed = cfg.data_seed();
            let train = gen_synthetic(cfg.classes, cfg.dim, cfg.per_class, cfg.separation, seed)?;
            let test = gen_synthetic(cfg.classes, cfg.dim, cfg.test_per_class, cfg.separation, !seed)?;
            Ok((train, test))
        }
        DatasetKind::Idx => {
            let need = |p: &Option<PathBuf>, key: &str| {
                p.clone().ok_or_else(|| FedError::Config(format!("{key}: required when dataset is \"idx\"")))
            };
            let train = read_idx(
                &need(&cfg.train_images, "train_images")?,
                &need(&cfg.train_labels, "train_labels")?,
                cfg.train_limit.unwrap_or(usize::MAX),
            )?;
            let test = read_idx(
                &need(&cfg.test_images, "test_images")?,
                &need(&cfg.test_labels, "test_labels")?,
                cfg.test_limit.unwrap_or(usize::MAX),
            )?;
            if train.meta.input_dim != test.meta.input_dim {
                return Err(FedError::Config(format!(
                    "train and test inputs differ in size ({} vs {})",
                    train.meta.input_dim, test.meta.input_dim
                )));
            }
            Ok((train, test))
        }
    }
}

/// Everything a run needs, built once from a config.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Fully resolved, including `K`.
    pub config: ExperimentConfig,
    pub model: ModelSpec,
    pub fragments: Vec<FragmentSpec>,
    pub shards: Vec<Vec<Sample>>,
    pub test: Vec<Sample>,
    pub profiles: Vec<ClientProfile>,
    pub local: Vec<LocalTrainParams>,
    pub shard_hash: String,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let mut config = cfg.clone();
    config.resolve();

    let (train, test) = load_data(&config)?;
    let classes = train.meta.class_count.max(test.meta.class_count);
    let mut model = if config.hidden_dim == 0 {
        ModelSpec::logistic(train.meta.input_dim, classes)?
    } else {
        ModelSpec::new(train.meta.input_dim, config.hidden_dim, classes)?
    };
    model.activation = config.activation;
    let fragments = partition_model(&model, config.m, &config.ratios())?;

    let shards = shard_iid(&train, config.n, config.data_seed())?;
    let profiles = config
        .capabilities()
        .iter()
        .zip(&shards)
        .enumerate()
        .map(|(i, (&c, s))| ClientProfile::new(i, c, config.com_up, config.com_down, s.len()))
        .collect::<Result<Vec<_>>>()?;
    let local = shards
        .iter()
        .map(|s| LocalTrainParams {
            iterations: config
                .local_iterations
                .unwrap_or(config.local_epochs * s.len().div_ceil(config.batch_size)),
            gamma: config.gamma,
            rho: config.rho,
            batch_size: config.batch_size,
        })
        .collect();

    if config.k.is_none() {
        let sizes: Vec<f64> = fragments.iter().map(|f| config.cost_model.fragment_size(f)).collect();
        config.k = Some(offline_sorted_assignment(&profiles, &sizes, config.cost_model)?.k);
    }
    let shard_hash = shard_fingerprint(&shards);
    Ok(Prepared {
        config,
        model,
        fragments,
        shards,
        test: test.samples,
        profiles,
        local,
        shard_hash,
    })
}

impl Prepared {
    pub fn sim_config(&self) -> SimConfig {
        let c = &self.config;
        SimConfig {
            clients: self.profiles.clone(),
            policy: c.scheduler.policy(),
            aggregation: c.scheduler.aggregation(),
            cost_model: c.cost_model,
            k: c.k.expect("resolved"),
            t_target: c.t_target(),
            tick_budget: c.tick_budget,
            checkpoint_interval: c.checkpoint_interval,
            checkpoint_every_merges: c.checkpoint_every_merges,
            idle_delay: c.idle_delay,
            jitter_sigma: c.jitter_sigma,
            seed: c.seed,
        }
    }

    pub fn run(&self) -> Result<RunLog> {
        let c = &self.config;
        let server = ServerState::new(
            self.model.init_params(c.seed),
            self.fragments.clone(),
            c.alpha,
            c.staleness_mode(),
        )?;
        let mut workload = LearningWorkload::new(
            self.model.clone(),
            self.shards.clone(),
            self.test.clone(),
            self.local.clone(),
            c.execution,
            c.seed,
        )?;
        let (mut log, _) = run(&self.sim_config(), server, &mut workload)?;
        log.config_echo = Some(c.to_json());
        Ok(log)
    }
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub label: String,
    pub mode: String,
    pub seed: u64,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub target_accuracy: Option<f64>,
    /// First checkpoint tick reaching `target_accuracy`.
    pub ticks_to_target: Option<f64>,
    pub merges: u64,
    /// Tick at which the merge target was reached.
    pub ticks_to_t_target: Option<f64>,
    pub final_tick: f64,
    pub k: f64,
    pub max_duration: f64,
    pub max_staleness: u64,
    pub q: Vec<u64>,
    pub shard_hash: String,
}

pub const SUMMARY_HEADER: [&str; 16] = [
    "label",
    "mode",
    "seed",
    "initial_loss",
    "final_loss",
    "final_accuracy",
    "target_accuracy",
    "ticks_to_target",
    "merges",
    "ticks_to_T_target",
    "final_tick",
    "K",
    "max_duration",
    "max_staleness",
    "q",
    "shard_hash",
];

impl Summary {
    pub fn from_log(label: &str, log: &RunLog, prep: &Prepared) -> Self {
        let target = prep.config.target_accuracy;
        Summary {
            label: label.to_string(),
            mode: prep.config.scheduler.name().to_string(),
            seed: log.seed,
            initial_loss: log.checkpoints.first().map(|c| c.loss),
            final_loss: log.last_checkpoint().map(|c| c.loss),
            final_accuracy: log.last_checkpoint().map(|c| c.accuracy),
            target_accuracy: target,
            ticks_to_target: target.and_then(|t| log.ticks_to_accuracy(t)),
            merges: log.epochs,
            ticks_to_t_target: log.target_tick,
            final_tick: log.final_tick,
            k: prep.config.k.unwrap_or(f64::NAN),
            max_duration: log.max_duration(),
            max_staleness: log.max_staleness(),
            q: log.final_q.clone(),
            shard_hash: prep.shard_hash.clone(),
        }
    }

    fn record(&self) -> [String; 16] {
        let opt = |v: Option<f64>| v.map(fmt_g9).unwrap_or_default();
        [
            self.label.clone(),
            self.mode.clone(),
            self.seed.to_string(),
            opt(self.initial_loss),
            opt(self.final_loss),
            opt(self.final_accuracy),
            opt(self.target_accuracy),
            opt(self.ticks_to_target),
            self.merges.to_string(),
            opt(self.ticks_to_t_target),
            fmt_g9(self.final_tick),
            fmt_g9(self.k),
            fmt_g9(self.max_duration),
            self.max_staleness.to_string(),
            self.q.iter().map(u64::to_string).collect::<Vec<_>>().join(";"),
            self.shard_hash.clone(),
        ]
    }
}

pub fn summary_csv(rows: &[Summary]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.into_inner().map_err(|e| FedError::Csv(e.into_error().into()))
}

/// Whitespace table of checkpoints: tick, epoch, loss, accuracy.
pub fn curves_dat(log: &RunLog) -> String {
    let mut s = String::from("# tick epoch loss accuracy\n");
    for c in &log.checkpoints {
        let _ = writeln!(s, "{} {} {} {}", fmt_g9(c.tick), c.epoch, fmt_g9(c.loss), fmt_g9(c.accuracy));
    }
    s
}

/// Writes through a temporary sibling and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| FedError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| FedError::io(path, e))
}

/// Writes `runlog.csv`, `summary.csv`, `curves.dat` and `config.json` into `out`.
pub fn write_run(out: &Path, log: &RunLog, summary: &Summary) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| FedError::io(out, e))?;
    let mut runlog = Vec::new();
    log.write_csv(&mut runlog)?;
    write_atomic(&out.join("runlog.csv"), &runlog)?;
    write_atomic(&out.join("summary.csv"), &summary_csv(std::slice::from_ref(summary))?)?;
    write_atomic(&out.join("curves.dat"), curves_dat(log).as_bytes())?;
    if let Some(echo) = &log.config_echo {
        write_atomic(&out.join("config.json"), echo.as_bytes())?;
    }
    Ok(())
}

fn run_cell(cfg: &ExperimentConfig, label: &str, out: Option<&Path>) -> Result<(RunLog, Summary)> {
    let prep = prepare(cfg)?;
    let log = prep.run()?;
    let summary = Summary::from_log(label, &log, &prep);
    if let Some(dir) = out {
        write_run(dir, &log, &summary)?;
    }
    Ok((log, summary))
}

/// Single run; writes outputs when `out` is given.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<(RunLog, Summary)> {
    run_cell(cfg, "run", out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKey {
    Beta,
    M,
    N,
    Alpha,
}

impl GridKey {
    fn name(self) -> &'static str {
        match self {
            GridKey::Beta => "beta",
            GridKey::M => "M",
            GridKey::N => "N",
            GridKey::Alpha => "alpha",
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig, v: f64) -> Result<()> {
        let count = || {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(FedError::Config(format!("{}: grid value {v} is not a positive integer", self.name())))
            }
        };
        match self {
            GridKey::Beta => cfg.beta = Some(v),
            GridKey::Alpha => cfg.alpha = v,
            GridKey::M => {
                cfg.m = count()?;
                cfg.ratios = None;
            }
            GridKey::N => {
                cfg.n = count()?;
                cfg.capabilities = None;
            }
        }
        cfg.k = None;
        Ok(())
    }
}

/// Parses `key=start:stop:step` into the key and its values, stop inclusive.
pub fn parse_grid(spec: &str) -> Result<(GridKey, Vec<f64>)> {
    let err = |m: &str| FedError::Config(format!("grid {spec:?}: {m}"));
    let (key, range) = spec.split_once('=').ok_or_else(|| err("expected key=start:stop:step"))?;
    let key = match key.trim() {
        "beta" => GridKey::Beta,
        "M" | "m" => GridKey::M,
        "N" | "n" => GridKey::N,
        "alpha" => GridKey::Alpha,
        other => return Err(err(&format!("unknown key {other:?} (beta, M, N, alpha)"))),
    };
    let parts: Vec<f64> = range
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| err(&format!("{p:?} is not a number"))))
        .collect::<Result<_>>()?;
    let [start, stop, step] = parts[..] else {
        return Err(err("expected start:stop:step"));
    };
    if !(step > 0.0) || stop < start {
        return Err(err("need step > 0 and stop >= start"));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    // Rounding keeps labels like 0.7 instead of 0.7000000000000001.
    let values = (0..count)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect();
    Ok((key, values))
}

/// One cell per grid value, run in parallel; returns rows in grid order.
pub fn run_sweep(cfg: &ExperimentConfig, grid: &str, out: Option<&Path>) -> Result<Vec<Summary>> {
    let (key, values) = parse_grid(grid)?;
    let cells = values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            key.apply(&mut c, v)?;
            Ok((format!("{}={}", key.name(), fmt_g9(v)), c))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = cfg.execution.map(&cells, |(label, c)| {
        let dir = out.map(|o| o.join(label.replace('=', "_")));
        run_cell(c, label, dir.as_deref()).map(|(_, s)| s)
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    if let Some(o) = out {
        fs::create_dir_all(o).map_err(|e| FedError::io(o, e))?;
        write_atomic(&o.join("summary.csv"), &summary_csv(&rows)?)?;
    }
    Ok(rows)
}

/// Runs Gre-RAA, Random, MP and Sync on the same data and seed.
pub fn run_ablation(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<Summary>> {
    let rows = cfg.execution.map(&SchedulerMode::ALL, |&mode| {
        let mut c = cfg.clone();
        c.scheduler = mode;
        let dir = out.map(|o| o.join(mode.name()));
        run_cell(&c, mode.name(), dir.as_deref()).map(|(_, s)| s)
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    if let Some(h) = rows.first().map(|r| &r.shard_hash) {
        if rows.iter().any(|r| &r.shard_hash != h) {
            return Err(FedError::Contract("ablation modes saw different shards".into()));
        }
    }
    if let Some(o) = out {
        fs::create_dir_all(o).map_err(|e| FedError::io(o, e))?;
        write_atomic(&o.join("ablation.csv"), &summary_csv(&rows)?)?;
    }
    Ok(rows)
}

/// Plain-text table of the ablation rows.
pub fn ablation_table(rows: &[Summary]) -> String {
    let mut s = format!(
        "{:<8} {:>10} {:>12} {:>12} {:>8}\n",
        "mode", "accuracy", "ticks_to_acc", "ticks_to_T", "merges"
    );
    let opt = |v: Option<f64>| v.map(fmt_g9).unwrap_or_else(|| "-".into());
    for r in rows {
        let _ = writeln!(
            s,
            "{:<8} {:>10} {:>12} {:>12} {:>8}",
            r.mode,
            opt(r.final_accuracy),
            opt(r.ticks_to_target),
            opt(r.ticks_to_t_target),
            r.merges
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineBoundTrial {
    pub capabilities: Vec<f64>,
    pub sizes: Vec<f64>,
    pub k_sorted: f64,
    pub k_opt: f64,
    pub greedy_max: f64,
}

impl OfflineBoundTrial {
    /// Sorted bound is optimal (checked when blocks are exact) and the
    /// greedy run hits exactly that bound.
    pub fn passes(&self) -> bool {
        let exact = self.capabilities.len().is_multiple_of(self.sizes.len());
        let sorted_ok = if exact {
            self.k_sorted == self.k_opt
        } else {
            self.k_opt <= self.k_sorted
        };
        sorted_ok && self.greedy_max <= self.k_sorted && (!exact || self.greedy_max == self.k_opt)
    }
}

/// Random instance: capabilities in `[0.5, 4)`, fragment shares normalized
/// from `[0.1, 1)` draws.
pub fn random_instance(n: usize, m: usize, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let caps = (0..n).map(|_| rng.random_range(0.5..4.0)).collect();
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    (caps, raw.iter().map(|r| r / total).collect())
}

/// Compares the sorted offline bound with the exhaustive optimum and with
/// the largest duration Gre-RAA produces when run under that bound.
pub fn check_instance(caps: &[f64], sizes: &[f64], merges: u64, seed: u64) -> Result<OfflineBoundTrial> {
    let model = CostModel::SizeOverCapability;
    let profiles = caps
        .iter()
        .enumerate()
        .map(|(i, &c)| ClientProfile::compute_only(i, c))
        .collect::<Result<Vec<_>>>()?;
    let k_sorted = offline_sorted_assignment(&profiles, sizes, model)?.k;
    let k_opt = brute_force_offline_k(&profiles, sizes, model)?;
    let mut cfg = SimConfig::new(profiles.clone(), k_sorted, merges);
    cfg.seed = seed;
    let log = simulate_schedule(&cfg, sizes)?;
    let greedy_max = log
        .tasks
        .iter()
        .map(|t| cost(&profiles[t.client], sizes[t.fragment], model))
        .fold(0.0, f64::max);
    Ok(OfflineBoundTrial {
        capabilities: caps.to_vec(),
        sizes: sizes.to_vec(),
        k_sorted,
        k_opt,
        greedy_max,
    })
}

pub fn verify_offline_bound(n: usize, m: usize, trials: usize, seed: u64, exec: Execution) -> Result<Vec<OfflineBoundTrial>> {
    if m < 1 || n < m {
        return Err(FedError::Config(format!("need N >= M >= 1, got N = {n}, M = {m}")));
    }
    let ids: Vec<u64> = (0..trials as u64).collect();
    exec.map(&ids, |&t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t);
        let (caps, sizes) = random_instance(n, m, &mut rng);
        check_instance(&caps, &sizes, 200 * (n * m) as u64, seed.wrapping_add(t))
    })
    .into_iter()
    .collect()
}
