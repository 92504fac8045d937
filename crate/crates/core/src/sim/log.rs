use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const CSV_HEADER: [&str; 10] = [
    "tick",
    "epoch",
    "event",
    "client",
    "fragment",
    "q_j",
    "staleness",
    "alpha_t",
    "loss",
    "accuracy",
];

/// One dispatched-and-merged training task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: u64,
    pub client: usize,
    pub fragment: usize,
    /// Global epoch when the task was dispatched (`tau`).
    pub dispatch_epoch: u64,
    pub dispatch_tick: f64,
    pub duration: f64,
    pub completion_tick: f64,
    /// Global epoch at which the result was merged (`t`, before the merge).
    pub applied_epoch: u64,
    /// `t - tau`.
    pub staleness: u64,
    pub alpha_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub tick: f64,
    pub epoch: u64,
    pub loss: f64,
    pub accuracy: f64,
    pub q: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LogRow {
    Merge {
        tick: f64,
        /// Epoch after the merge.
        epoch: u64,
        client: usize,
        fragment: usize,
        q_j: u64,
        staleness: u64,
        alpha_t: f64,
    },
    Checkpoint {
        tick: f64,
        epoch: u64,
        loss: f64,
        accuracy: f64,
    },
}

/// Append-only record of a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub mode: String,
    pub seed: u64,
    /// JSON of the resolved experiment configuration, when known.
    pub config_echo: Option<String>,
    pub tasks: Vec<TaskRecord>,
    pub rows: Vec<LogRow>,
    pub checkpoints: Vec<CheckpointRecord>,
    pub epochs: u64,
    pub final_q: Vec<u64>,
    pub final_tick: f64,
    /// Tick at which the merge target was reached.
    pub target_tick: Option<f64>,
    /// Smallest and largest local iteration counts across clients.
    pub local_iterations: Option<(usize, usize)>,
}

impl RunLog {
    pub fn last_checkpoint(&self) -> Option<&CheckpointRecord> {
        self.checkpoints.last()
    }

    pub fn max_duration(&self) -> f64 {
        self.tasks.iter().map(|t| t.duration).fold(0.0, f64::max)
    }

    pub fn max_staleness(&self) -> u64 {
        self.tasks.iter().map(|t| t.staleness).max().unwrap_or(0)
    }

    /// First checkpoint tick with accuracy at or above `target`.
    pub fn ticks_to_accuracy(&self, target: f64) -> Option<f64> {
        self.checkpoints.iter().find(|c| c.accuracy >= target).map(|c| c.tick)
    }

    /// Per-fragment merge counts after each merge row, in order.
    pub fn q_trajectory(&self) -> Vec<Vec<u64>> {
        let mut q = vec![0; self.final_q.len()];
        let mut out = Vec::new();
        for row in &self.rows {
            if let LogRow::Merge { fragment, q_j, .. } = row {
                q[*fragment] = *q_j;
                out.push(q.clone());
            }
        }
        out
    }

    /// Writes the run as CSV: header, then one row per merge and checkpoint.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(CSV_HEADER)?;
        for row in &self.rows {
            let rec: [String; 10] = match row {
                LogRow::Merge {
                    tick,
                    epoch,
                    client,
                    fragment,
                    q_j,
                    staleness,
                    alpha_t,
                } => [
                    fmt_g9(*tick),
                    epoch.to_string(),
                    "merge".into(),
                    client.to_string(),
                    fragment.to_string(),
                    q_j.to_string(),
                    staleness.to_string(),
                    fmt_g9(*alpha_t),
                    String::new(),
                    String::new(),
                ],
                LogRow::Checkpoint {
                    tick,
                    epoch,
                    loss,
                    accuracy,
                } => [
                    fmt_g9(*tick),
                    epoch.to_string(),
                    "checkpoint".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    fmt_g9(*loss),
                    fmt_g9(*accuracy),
                ],
            };
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| crate::error::FedError::Csv(e.into()))?;
        Ok(())
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is ASCII"))
    }
}

/// Formats like C's `%.9g`: nine significant digits, trailing zeros dropped,
/// exponent form outside `[1e-4, 1e9)`.
pub fn fmt_g9(v: f64) -> String {
    const P: i32 = 9;
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..P).contains(&exp) {
        let fixed = format!("{:.*}", (P - 1 - exp) as usize, v);
        trim_zeros(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_zeros(mantissa), sign, exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
