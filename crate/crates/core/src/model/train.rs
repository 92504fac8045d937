use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Fragment, FragmentSpec, Objective, ParamVector, Sample};
use crate::error::{FedError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTrainParams {
    /// SGD steps per task.
    pub iterations: usize,
    pub gamma: f64,
    /// Weight of the proximal term.
    pub rho: f64,
    pub batch_size: usize,
}

/// Writes `grad f(params) + rho (params - anchor)` into `grad`, restricted to
/// `scope` when one is given. Returns the loss part `f(params)`.
fn grad_g_into<O: Objective + ?Sized>(
    obj: &O,
    params: &[f64],
    anchor: &[f64],
    batch: &[&Sample],
    rho: f64,
    scope: Option<&FragmentSpec>,
    grad: &mut [f64],
) -> Result<f64> {
    let loss = obj.loss_grad(params, batch, scope, grad)?;
    if rho != 0.0 {
        match scope {
            Some(s) => {
                for &k in &s.param_indices {
                    grad[k] += rho * (params[k] - anchor[k]);
                }
            }
            None => {
                for ((g, p), a) in grad.iter_mut().zip(params).zip(anchor) {
                    *g += rho * (p - a);
                }
            }
        }
    }
    Ok(loss)
}

/// Gradient of the proximal objective
/// `g(params) = f(params; batch) + rho/2 * |params - anchor|^2`.
///
/// With a `scope`, every entry outside the fragment is zero.
pub fn grad_g<O: Objective + ?Sized>(
    obj: &O,
    params: &[f64],
    anchor: &[f64],
    batch: &[&Sample],
    rho: f64,
    scope: Option<&FragmentSpec>,
) -> Result<ParamVector> {
    if rho < 0.0 {
        return Err(FedError::Contract(format!("rho must be nonnegative, got {rho}")));
    }
    if params.len() != anchor.len() || params.len() != obj.param_count() {
        return Err(FedError::Contract(format!(
            "params ({}), anchor ({}) and model ({}) lengths differ",
            params.len(),
            anchor.len(),
            obj.param_count()
        )));
    }
    let mut grad = ParamVector::zeros(params.len());
    grad_g_into(obj, params, anchor, batch, rho, scope, &mut grad)?;
    if let Some(k) = grad.first_non_finite() {
        return Err(FedError::Numeric(format!("gradient entry {k} is {}", grad[k])));
    }
    Ok(grad)
}

/// Runs proximal SGD on one fragment starting from the dispatched snapshot.
///
/// The working copy is `snapshot` with the fragment's values written in;
/// parameters outside the fragment stay frozen. Batches are drawn from a
/// shuffled pass over `shard`; when `batch_size` covers the shard the whole
/// shard is used in its stored order.
pub fn local_train<O, R>(
    fragment: &Fragment,
    spec: &FragmentSpec,
    snapshot: &ParamVector,
    model: &O,
    shard: &[Sample],
    params: &LocalTrainParams,
    rng: &mut R,
) -> Result<Fragment>
where
    O: Objective + ?Sized,
    R: Rng + ?Sized,
{
    if params.iterations == 0 {
        return Err(FedError::Contract("local training needs at least one iteration".into()));
    }
    if !(params.gamma >= 0.0) || !(params.rho >= 0.0) {
        return Err(FedError::Contract(format!(
            "gamma ({}) and rho ({}) must be nonnegative",
            params.gamma, params.rho
        )));
    }
    if shard.is_empty() {
        return Err(FedError::Contract("local training on an empty shard".into()));
    }
    if params.batch_size == 0 {
        return Err(FedError::Contract("batch size must be positive".into()));
    }
    if fragment.spec_index != spec.index || fragment.values.len() != spec.param_indices.len() {
        return Err(FedError::Contract(format!(
            "fragment {} does not match spec {}",
            fragment.spec_index, spec.index
        )));
    }

    let mut theta = snapshot.clone();
    for (&k, &v) in spec.param_indices.iter().zip(&fragment.values) {
        theta[k] = v;
    }
    let anchor = theta.clone();
    let mut grad = vec![0.0; theta.len()];

    let full_batch = params.batch_size >= shard.len();
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut cursor = shard.len();
    let mut batch: Vec<&Sample> = Vec::with_capacity(params.batch_size.min(shard.len()));

    for step in 1..=params.iterations {
        batch.clear();
        if full_batch {
            batch.extend(shard.iter());
        } else {
            if cursor >= order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            let end = (cursor + params.batch_size).min(order.len());
            batch.extend(order[cursor..end].iter().map(|&i| &shard[i]));
            cursor = end;
        }
        grad_g_into(model, &theta, &anchor, &batch, params.rho, Some(spec), &mut grad)
            .map_err(|e| FedError::Numeric(format!("local step {step}: {e}")))?;
        for &k in &spec.param_indices {
            theta[k] -= params.gamma * grad[k];
            if !theta[k].is_finite() {
                return Err(FedError::Numeric(format!(
                    "parameter {k} became {} after local step {step}",
                    theta[k]
                )));
            }
        }
    }

    Ok(Fragment {
        spec_index: spec.index,
        version: fragment.version,
        values: spec.param_indices.iter().map(|&k| theta[k]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{extract_fragment, partition_model, ModelSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// f(theta) = |theta|^2 / 2, so grad f = theta. Ignores the batch.
    struct HalfSquare(usize);

    impl Objective for HalfSquare {
        fn param_count(&self) -> usize {
            self.0
        }
        fn loss(&self, p: &[f64], _: &[&Sample]) -> Result<f64> {
            Ok(p.iter().map(|v| v * v).sum::<f64>() / 2.0)
        }
        fn loss_grad(
            &self,
            p: &[f64],
            b: &[&Sample],
            scope: Option<&FragmentSpec>,
            g: &mut [f64],
        ) -> Result<f64> {
            g.fill(0.0);
            match scope {
                Some(s) => s.param_indices.iter().for_each(|&k| g[k] = p[k]),
                None => g.copy_from_slice(p),
            }
            self.loss(p, b)
        }
    }

    fn blobs(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let c = if label == 0 { -1.5 } else { 1.5 };
                Sample {
                    features: vec![c + rng.random_range(-1.0..1.0), c + rng.random_range(-1.0..1.0)],
                    label,
                }
            })
            .collect()
    }

    #[test]
    fn quadratic_prox_gradient() {
        let obj = HalfSquare(1);
        let g = grad_g(&obj, &[2.0], &[0.0], &[], 1.0, None).unwrap();
        assert_eq!(g[0], 4.0);
        let plain = grad_g(&obj, &[2.0], &[0.0], &[], 0.0, None).unwrap();
        assert_eq!(plain[0], 2.0);
    }

    #[test]
    fn rejects_negative_rho_and_length_mismatch() {
        let obj = HalfSquare(2);
        assert!(grad_g(&obj, &[1.0, 1.0], &[0.0, 0.0], &[], -0.1, None).is_err());
        assert!(grad_g(&obj, &[1.0, 1.0], &[0.0], &[], 0.1, None).is_err());
    }

    #[test]
    fn one_full_batch_step_is_vanilla_sgd() {
        let spec = ModelSpec::new(2, 4, 2).unwrap();
        let frags = partition_model(&spec, 2, &[0.5, 0.5]).unwrap();
        let global = spec.init_params(3);
        let shard = blobs(20, 1);
        let p = LocalTrainParams { iterations: 1, gamma: 0.1, rho: 0.7, batch_size: 64 };
        let frag = extract_fragment(&global, &frags[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = local_train(&frag, &frags[1], &global, &spec, &shard, &p, &mut rng).unwrap();

        let refs: Vec<&Sample> = shard.iter().collect();
        let mut g = vec![0.0; spec.param_count()];
        spec.loss_grad(&global, &refs, None, &mut g).unwrap();
        let expected: Vec<f64> = frags[1].param_indices.iter().map(|&k| global[k] - 0.1 * g[k]).collect();
        for (a, b) in out.values.iter().zip(&expected) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn zero_gamma_is_a_no_op() {
        let spec = ModelSpec::new(2, 4, 2).unwrap();
        let frags = partition_model(&spec, 2, &[0.5, 0.5]).unwrap();
        let global = spec.init_params(3);
        let frag = extract_fragment(&global, &frags[0]);
        let p = LocalTrainParams { iterations: 7, gamma: 0.0, rho: 0.1, batch_size: 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = local_train(&frag, &frags[0], &global, &spec, &blobs(30, 2), &p, &mut rng).unwrap();
        assert_eq!(out, frag);
    }

    #[test]
    fn small_steps_decrease_the_proximal_objective() {
        let spec = ModelSpec::new(2, 6, 2).unwrap();
        let frags = partition_model(&spec, 2, &[0.4, 0.6]).unwrap();
        let global = spec.init_params(7);
        let shard = blobs(64, 4);
        let refs: Vec<&Sample> = shard.iter().collect();
        for f in &frags {
            let frag = extract_fragment(&global, f);
            let p = LocalTrainParams { iterations: 5, gamma: 0.01, rho: 0.1, batch_size: 64 };
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let out = local_train(&frag, f, &global, &spec, &shard, &p, &mut rng).unwrap();
            let mut theta = global.clone();
            for (&k, &v) in f.param_indices.iter().zip(&out.values) {
                theta[k] = v;
            }
            let prox: f64 = f.param_indices.iter().map(|&k| (theta[k] - global[k]).powi(2)).sum();
            let g_end = spec.loss(&theta, &refs).unwrap() + 0.05 * prox;
            let g_start = spec.loss(&global, &refs).unwrap();
            assert!(g_end <= g_start, "{g_end} > {g_start}");
        }
    }

    #[test]
    fn same_seed_same_result() {
        let spec = ModelSpec::new(2, 4, 2).unwrap();
        let frags = partition_model(&spec, 2, &[0.5, 0.5]).unwrap();
        let global = spec.init_params(1);
        let shard = blobs(50, 3);
        let frag = extract_fragment(&global, &frags[0]);
        let p = LocalTrainParams { iterations: 12, gamma: 0.05, rho: 0.1, batch_size: 8 };
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            local_train(&frag, &frags[0], &global, &spec, &shard, &p, &mut rng).unwrap()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    #[test]
    fn divergence_names_the_step() {
        let spec = ModelSpec::logistic(1, 2).unwrap();
        let frags = partition_model(&spec, 1, &[1.0]).unwrap();
        let global = ParamVector::from_vec(vec![0.0; 4]);
        let shard = vec![Sample { features: vec![1e300], label: 0 }];
        let frag = extract_fragment(&global, &frags[0]);
        let p = LocalTrainParams { iterations: 3, gamma: 1e10, rho: 0.0, batch_size: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = local_train(&frag, &frags[0], &global, &spec, &shard, &p, &mut rng).unwrap_err();
        assert!(matches!(err, FedError::Numeric(ref m) if m.contains("step")), "{err}");
    }
}
