use super::{Activation, FragmentSpec, Layout, ModelSpec, Sample};
use crate::error::{FedError, Result};
use crate::exec::Execution;

/// A differentiable empirical loss over flat parameters.
pub trait Objective: Sync {
    fn param_count(&self) -> usize;

    /// Mean loss over `batch`.
    fn loss(&self, params: &[f64], batch: &[&Sample]) -> Result<f64>;

    /// Mean loss over `batch`; overwrites `grad` with its gradient. With a
    /// `scope`, entries outside `scope.param_indices` are left at zero.
    fn loss_grad(
        &self,
        params: &[f64],
        batch: &[&Sample],
        scope: Option<&FragmentSpec>,
        grad: &mut [f64],
    ) -> Result<f64>;
}

struct Scratch {
    pre: Vec<f64>,
    act: Vec<f64>,
    logits: Vec<f64>,
}

impl Scratch {
    fn new(spec: &ModelSpec) -> Self {
        Scratch {
            pre: vec![0.0; spec.hidden_dim],
            act: vec![0.0; spec.hidden_dim],
            logits: vec![0.0; spec.output_dim],
        }
    }
}

impl ModelSpec {
    fn check_sample(&self, s: &Sample) -> Result<()> {
        if s.features.len() != self.input_dim {
            return Err(FedError::Contract(format!(
                "sample has {} features, model expects {}",
                s.features.len(),
                self.input_dim
            )));
        }
        if s.label >= self.output_dim {
            return Err(FedError::Contract(format!(
                "label {} out of range for {} classes",
                s.label, self.output_dim
            )));
        }
        Ok(())
    }

    /// Fills `sc.logits` (and the hidden buffers) for one input.
    fn forward_into(&self, l: &Layout, p: &[f64], x: &[f64], sc: &mut Scratch) {
        let (i_dim, h_dim) = (self.input_dim, self.hidden_dim);
        if h_dim == 0 {
            for (o, z) in sc.logits.iter_mut().enumerate() {
                let row = &p[l.w2 + o * i_dim..l.w2 + (o + 1) * i_dim];
                *z = p[l.b2 + o] + dot(row, x);
            }
            return;
        }
        for h in 0..h_dim {
            let row = &p[l.w1 + h * i_dim..l.w1 + (h + 1) * i_dim];
            let z = p[l.b1 + h] + dot(row, x);
            sc.pre[h] = z;
            sc.act[h] = match self.activation {
                Activation::Relu => z.max(0.0),
                Activation::Identity => z,
            };
        }
        for (o, z) in sc.logits.iter_mut().enumerate() {
            let row = &p[l.w2 + o * h_dim..l.w2 + (o + 1) * h_dim];
            *z = p[l.b2 + o] + dot(row, &sc.act);
        }
    }

    fn softmax_in_place(logits: &mut [f64]) {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for z in logits.iter_mut() {
            *z = (*z - max).exp();
            total += *z;
        }
        for z in logits.iter_mut() {
            *z /= total;
        }
    }

    fn predict_with(&self, l: &Layout, p: &[f64], x: &[f64], sc: &mut Scratch) -> usize {
        self.forward_into(l, p, x, sc);
        argmax(&sc.logits)
    }

    /// Sum of per-sample losses and count of correct top-1 predictions.
    fn eval_chunk(&self, p: &[f64], samples: &[Sample]) -> Result<(f64, usize)> {
        let l = self.layout();
        let mut sc = Scratch::new(self);
        let mut loss = 0.0;
        let mut correct = 0;
        for s in samples {
            self.check_sample(s)?;
            if self.predict_with(&l, p, &s.features, &mut sc) == s.label {
                correct += 1;
            }
            loss += xent_stable(&sc.logits, s.label);
        }
        Ok((loss, correct))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// `logsumexp(z) - z[label]`.
fn xent_stable(logits: &[f64], label: usize) -> f64 {
    let top = argmax(logits);
    let max = logits[top];
    // ln(1 + rest) keeps tiny losses of confident predictions representable.
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != top)
        .map(|(_, z)| (z - max).exp())
        .sum();
    (max - logits[label]) + rest.ln_1p()
}

fn non_finite(what: &str, value: f64) -> FedError {
    FedError::Numeric(format!("{what} evaluated to {value}"))
}

impl Objective for ModelSpec {
    fn param_count(&self) -> usize {
        ModelSpec::param_count(self)
    }

    fn loss(&self, params: &[f64], batch: &[&Sample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(FedError::Contract("loss over an empty batch".into()));
        }
        let l = self.layout();
        let mut sc = Scratch::new(self);
        let mut total = 0.0;
        for s in batch {
            self.check_sample(s)?;
            self.forward_into(&l, params, &s.features, &mut sc);
            total += xent_stable(&sc.logits, s.label);
        }
        let loss = total / batch.len() as f64;
        if !loss.is_finite() {
            return Err(non_finite("loss", loss));
        }
        Ok(loss)
    }

    fn loss_grad(
        &self,
        params: &[f64],
        batch: &[&Sample],
        scope: Option<&FragmentSpec>,
        grad: &mut [f64],
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(FedError::Contract("gradient over an empty batch".into()));
        }
        let l = self.layout();
        let (i_dim, h_dim, o_dim) = (self.input_dim, self.hidden_dim, self.output_dim);
        let units = scope.map_or(0..self.unit_count(), |s| s.unit_range.clone());
        let output_bias = scope.is_none_or(|s| s.owns_output_bias);
        let inv_b = 1.0 / batch.len() as f64;

        grad.fill(0.0);
        let mut sc = Scratch::new(self);
        let mut dh = vec![0.0; h_dim];
        let mut total = 0.0;
        for s in batch {
            self.check_sample(s)?;
            let x = &s.features;
            self.forward_into(&l, params, x, &mut sc);
            total += xent_stable(&sc.logits, s.label);
            Self::softmax_in_place(&mut sc.logits);
            // dL/dlogits for the batch mean
            let dl = &mut sc.logits;
            dl[s.label] -= 1.0;
            for d in dl.iter_mut() {
                *d *= inv_b;
            }

            if output_bias {
                for o in 0..o_dim {
                    grad[l.b2 + o] += dl[o];
                }
            }
            if h_dim == 0 {
                for (o, &d) in dl.iter().enumerate() {
                    let base = l.w2 + o * i_dim;
                    for f in units.clone() {
                        grad[base + f] += d * x[f];
                    }
                }
                continue;
            }
            for h in units.clone() {
                let mut acc = 0.0;
                for o in 0..o_dim {
                    grad[l.w2 + o * h_dim + h] += dl[o] * sc.act[h];
                    acc += params[l.w2 + o * h_dim + h] * dl[o];
                }
                dh[h] = match self.activation {
                    Activation::Relu if sc.pre[h] <= 0.0 => 0.0,
                    _ => acc,
                };
            }
            for h in units.clone() {
                let d = dh[h];
                if d == 0.0 {
                    continue;
                }
                grad[l.b1 + h] += d;
                let row = &mut grad[l.w1 + h * i_dim..l.w1 + (h + 1) * i_dim];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
        }
        let loss = total * inv_b;
        if !loss.is_finite() {
            return Err(non_finite("loss", loss));
        }
        Ok(loss)
    }
}

/// Mean softmax cross-entropy of `params` over `batch`.
pub fn forward_loss(params: &[f64], spec: &ModelSpec, batch: &[Sample]) -> Result<f64> {
    let refs: Vec<&Sample> = batch.iter().collect();
    spec.loss(params, &refs)
}

/// Mean loss and top-1 accuracy over `samples`, reduced in fixed chunks.
pub(crate) fn evaluate(
    params: &[f64],
    spec: &ModelSpec,
    samples: &[Sample],
    exec: Execution,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(FedError::Contract("evaluation over an empty set".into()));
    }
    let chunks: Vec<&[Sample]> = samples.chunks(crate::exec::REDUCE_CHUNK).collect();
    let parts = exec.map(&chunks, |c| spec.eval_chunk(params, c));
    let mut loss = 0.0;
    let mut correct = 0;
    for part in parts {
        let (l, c) = part?;
        loss += l;
        correct += c;
    }
    let n = samples.len() as f64;
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(non_finite("evaluation loss", loss));
    }
    Ok((loss, correct as f64 / n))
}

/// Top-1 accuracy of `params` on `samples`.
pub fn accuracy(params: &[f64], spec: &ModelSpec, samples: &[Sample]) -> Result<f64> {
    evaluate(params, spec, samples, Execution::Sequential).map(|(_, a)| a)
}
