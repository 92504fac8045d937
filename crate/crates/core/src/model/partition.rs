use super::{FragmentSpec, ModelSpec};
use crate::error::{FedError, Result};

/// Partition ratios used when none are configured, by fragment count.
/// Fragments are ordered smallest first.
pub fn default_ratios(m: usize) -> Vec<f64> {
    match m {
        2 => vec![0.40, 0.60],
        3 => vec![0.20, 0.30, 0.50],
        4 => vec![0.10, 0.20, 0.30, 0.40],
        5 => vec![0.05, 0.10, 0.20, 0.30, 0.35],
        _ => vec![1.0 / m as f64; m],
    }
}

/// Largest-remainder apportionment of `units` by `ratios`; remainder ties go
/// to the lower index.
fn apportion(units: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * units as f64).collect();
    // The epsilon keeps 0.3 * 10 from flooring to 2.
    let mut counts: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &j in order.iter().take(units.saturating_sub(assigned)) {
        counts[j] += 1;
    }
    counts
}

/// Splits the model into `m` fragments by contiguous unit blocks.
///
/// Fragment `j` owns its hidden units' input-weight rows, biases and
/// output-weight columns. The output biases go to the last fragment. For
/// logistic regression the units are input features, i.e. output-weight
/// columns.
pub fn partition_model(spec: &ModelSpec, m: usize, ratios: &[f64]) -> Result<Vec<FragmentSpec>> {
    spec.validate()?;
    if m == 0 {
        return Err(FedError::Config("M must be at least 1".into()));
    }
    if ratios.len() != m {
        return Err(FedError::Config(format!(
            "ratios has {} entries, expected M = {m}",
            ratios.len()
        )));
    }
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(FedError::Config(format!("ratios must be positive: {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(FedError::Config(format!("ratios sum to {total}, expected 1")));
    }

    let units = spec.unit_count();
    let counts = apportion(units, ratios);
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(FedError::InfeasiblePartition {
            fragment: j,
            units,
            ratios: ratios.to_vec(),
        });
    }

    let l = spec.layout();
    let (i_dim, h_dim, o_dim) = (spec.input_dim, spec.hidden_dim, spec.output_dim);
    let mut start = 0;
    let mut out = Vec::with_capacity(m);
    for (j, &count) in counts.iter().enumerate() {
        let range = start..start + count;
        start += count;
        let last = j + 1 == m;
        let mut idx = Vec::new();
        if h_dim == 0 {
            for o in 0..o_dim {
                idx.extend(range.clone().map(|f| l.w2 + o * i_dim + f));
            }
        } else {
            for h in range.clone() {
                idx.extend(l.w1 + h * i_dim..l.w1 + (h + 1) * i_dim);
                idx.push(l.b1 + h);
            }
            for o in 0..o_dim {
                idx.extend(range.clone().map(|h| l.w2 + o * h_dim + h));
            }
        }
        if last {
            idx.extend(l.b2..l.b2 + o_dim);
        }
        idx.sort_unstable();
        out.push(FragmentSpec {
            index: j,
            param_indices: idx,
            unit_share: count as f64 / units as f64,
            unit_range: range,
            owns_output_bias: last,
            update_count: 0,
        });
    }
    debug_assert!(is_exact_cover(&out, l.len));
    Ok(out)
}

/// True when the fragments' indices are pairwise disjoint and cover `0..len`.
pub(crate) fn is_exact_cover(fragments: &[FragmentSpec], len: usize) -> bool {
    let mut seen = vec![false; len];
    for f in fragments {
        for &k in &f.param_indices {
            if k >= len || seen[k] {
                return false;
            }
            seen[k] = true;
        }
    }
    seen.into_iter().all(|s| s)
}
