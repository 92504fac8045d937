//! Global model parameters, fragment bookkeeping and the local solver.
//!
//! The model is a one-hidden-layer perceptron stored as one flat
//! [`ParamVector`]. Setting `hidden_dim = 0` degenerates it to multinomial
//! logistic regression. A fragment owns a contiguous block of hidden units
//! together with every weight incident to them; see [`partition_model`].

mod mlp;
mod partition;
mod train;

use std::ops::{Deref, DerefMut, Range};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};

pub use mlp::{accuracy, forward_loss, Objective};
pub(crate) use mlp::evaluate;
pub use partition::{default_ratios, partition_model};
pub use train::{grad_g, local_train, LocalTrainParams};

/// Flat parameter store. Length is fixed at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.0.iter().position(|v| !v.is_finite())
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Zero selects logistic regression.
    pub hidden_dim: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

/// Offsets of each parameter block inside the flat vector.
///
/// With hidden units: `w1` is `hidden x input` row-major, then `b1`, then
/// `w2` as `output x hidden` row-major, then `b2`. Without: `w2` is
/// `output x input` and `w1`/`b1` are empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layout {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub len: usize,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Result<Self> {
        let spec = ModelSpec {
            input_dim,
            hidden_dim,
            output_dim,
            activation: Activation::Relu,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn logistic(input_dim: usize, output_dim: usize) -> Result<Self> {
        Self::new(input_dim, 0, output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(FedError::Config("input_dim must be at least 1".into()));
        }
        if self.output_dim == 0 {
            return Err(FedError::Config("output_dim must be at least 1".into()));
        }
        Ok(())
    }

    pub(crate) fn layout(&self) -> Layout {
        let (i, h, o) = (self.input_dim, self.hidden_dim, self.output_dim);
        if h == 0 {
            Layout {
                w1: 0,
                b1: 0,
                w2: 0,
                b2: o * i,
                len: o * i + o,
            }
        } else {
            let b1 = h * i;
            let w2 = b1 + h;
            let b2 = w2 + o * h;
            Layout {
                w1: 0,
                b1,
                w2,
                b2,
                len: b2 + o,
            }
        }
    }

    /// Total parameter count `d`.
    pub fn param_count(&self) -> usize {
        self.layout().len
    }

    /// Number of partitionable units: hidden units, or input features for
    /// logistic regression.
    pub fn unit_count(&self) -> usize {
        if self.hidden_dim == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }

    /// Seeded uniform(-s, s) initialisation with `s = 1/sqrt(fan_in)` for
    /// every weight and bias of a layer.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = self.layout();
        let mut p = ParamVector::zeros(l.len);
        let mut fill = |range: Range<usize>, fan_in: usize, rng: &mut ChaCha8Rng| {
            let s = 1.0 / (fan_in as f64).sqrt();
            for v in &mut p[range] {
                *v = rng.random_range(-s..s);
            }
        };
        if self.hidden_dim == 0 {
            fill(0..l.len, self.input_dim, &mut rng);
        } else {
            fill(l.w1..l.w2, self.input_dim, &mut rng);
            fill(l.w2..l.len, self.hidden_dim, &mut rng);
        }
        p
    }
}

/// Which parameters belong to fragment `index`, and how often it was merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentSpec {
    pub index: usize,
    /// Sorted, strictly increasing.
    pub param_indices: Vec<usize>,
    /// Hidden units (input features for logistic regression) owned.
    pub unit_range: Range<usize>,
    pub owns_output_bias: bool,
    /// Share of all units owned, in `(0, 1]`.
    pub unit_share: f64,
    /// Number of merges applied so far, `q(j)`.
    pub update_count: u64,
}

impl FragmentSpec {
    pub fn param_count(&self) -> usize {
        self.param_indices.len()
    }
}

/// Values of one fragment, gathered in `param_indices` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub spec_index: usize,
    /// `update_count` of the fragment when it was extracted.
    pub version: u64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

pub fn extract_fragment(global: &ParamVector, spec: &FragmentSpec) -> Fragment {
    Fragment {
        spec_index: spec.index,
        version: spec.update_count,
        values: spec.param_indices.iter().map(|&k| global[k]).collect(),
    }
}

/// Mixes `new` into the owned slice of `global` with weight `alpha` and
/// bumps the fragment's update count.
pub fn merge_fragment(
    global: &mut ParamVector,
    spec: &mut FragmentSpec,
    new: &Fragment,
    alpha: f64,
) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(FedError::Contract(format!(
            "mixing weight must lie in (0, 1], got {alpha}"
        )));
    }
    if new.spec_index != spec.index {
        return Err(FedError::Contract(format!(
            "fragment {} merged into spec {}",
            new.spec_index, spec.index
        )));
    }
    if new.values.len() != spec.param_indices.len() {
        return Err(FedError::Contract(format!(
            "fragment {} carries {} values, spec owns {}",
            spec.index,
            new.values.len(),
            spec.param_indices.len()
        )));
    }
    for (&k, &v) in spec.param_indices.iter().zip(&new.values) {
        global[k] = (1.0 - alpha) * global[k] + alpha * v;
    }
    if let Some(pos) = spec.param_indices.iter().position(|&k| !global[k].is_finite()) {
        return Err(FedError::Numeric(format!(
            "merge of fragment {} produced a non-finite value at parameter {}",
            spec.index, spec.param_indices[pos]
        )));
    }
    spec.update_count += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec_over(indices: Vec<usize>) -> FragmentSpec {
        FragmentSpec {
            index: 0,
            param_indices: indices,
            unit_range: 0..1,
            owns_output_bias: true,
            unit_share: 1.0,
            update_count: 3,
        }
    }

    #[test]
    fn extract_gathers_in_index_order() {
        let g = ParamVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let f = extract_fragment(&g, &spec_over(vec![1, 3]));
        assert_eq!(f.values, vec![2.0, 4.0]);
        assert_eq!(f.version, 3);

        let all = extract_fragment(&g, &spec_over(vec![0, 1, 2, 3]));
        assert_eq!(all.values, g.to_vec());
    }

    #[test]
    fn merge_quarter_weight() {
        let mut g = ParamVector::from_vec(vec![1.0, 1.0]);
        let mut s = spec_over(vec![0, 1]);
        let new = Fragment {
            spec_index: 0,
            version: 3,
            values: vec![5.0, 9.0],
        };
        merge_fragment(&mut g, &mut s, &new, 0.25).unwrap();
        assert_eq!(g.to_vec(), vec![2.0, 3.0]);
        assert_eq!(s.update_count, 4);
    }

    #[test]
    fn merge_alpha_one_overwrites() {
        let src = ParamVector::from_vec(vec![0.3, -1.7, 2.5]);
        let mut g = ParamVector::from_vec(vec![9.0, 9.0, 9.0]);
        let mut s = spec_over(vec![0, 2]);
        let f = extract_fragment(&src, &s);
        merge_fragment(&mut g, &mut s, &f, 1.0).unwrap();
        assert_eq!(g.to_vec(), vec![0.3, 9.0, 2.5]);
    }

    #[test]
    fn merge_rejects_bad_input() {
        let mut g = ParamVector::zeros(2);
        let mut s = spec_over(vec![0, 1]);
        let short = Fragment {
            spec_index: 0,
            version: 0,
            values: vec![1.0],
        };
        assert!(matches!(
            merge_fragment(&mut g, &mut s, &short, 0.5),
            Err(FedError::Contract(_))
        ));
        let ok = Fragment {
            spec_index: 0,
            version: 0,
            values: vec![1.0, 1.0],
        };
        assert!(merge_fragment(&mut g, &mut s, &ok, 0.0).is_err());
        assert!(merge_fragment(&mut g, &mut s, &ok, 1.5).is_err());
        assert_eq!(s.update_count, 3);
    }

    #[test]
    fn layout_counts() {
        let m = ModelSpec::new(4, 3, 2).unwrap();
        assert_eq!(m.param_count(), 3 * 4 + 3 + 2 * 3 + 2);
        let l = ModelSpec::logistic(5, 3).unwrap();
        assert_eq!(l.param_count(), 18);
        assert!(ModelSpec::new(0, 3, 2).is_err());
        assert!(ModelSpec::new(3, 3, 0).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let m = ModelSpec::new(16, 8, 3).unwrap();
        let a = m.init_params(7);
        assert_eq!(a, m.init_params(7));
        assert_ne!(a, m.init_params(8));
        let l = m.layout();
        assert!(a[l.w1..l.w2].iter().all(|v| v.abs() < 0.25));
        assert!(a[l.w2..].iter().all(|v| v.abs() < 1.0 / 8f64.sqrt()));
    }

    proptest! {
        #[test]
        fn merge_fixed_point(x in -1e6f64..1e6, alpha in 0.001f64..=1.0) {
            let mut g = ParamVector::from_vec(vec![x]);
            let mut s = spec_over(vec![0]);
            let f = Fragment { spec_index: 0, version: 0, values: vec![x] };
            merge_fragment(&mut g, &mut s, &f, alpha).unwrap();
            prop_assert!((g[0] - x).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }
}
