//! Symmetric InfoNCE and the two training objectives built on it: masked clip
//! modeling over predicted clip tokens and the set-summary loss over the CLS
//! outputs of two views.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::model::{Bound, Head, ModelError};
use crate::numerics::{ops, Graph, NumericsError, Precision, Real, Tensor, Var};
use crate::sampler::PackedBatch;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("at least one of the two loss terms must be enabled")]
    NothingEnabled,
    #[error("masked clip modeling needs at least one masked position")]
    NoMasked,
    #[error("row {row} of side {side} has norm {norm}, expected unit vectors")]
    NotUnit { side: char, row: usize, norm: f64 },
    #[error("contrastive sides: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// How per-position MCM losses are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Reduction {
    /// Average over all masked positions of the batch.
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub mcm: bool,
    pub set: bool,
    pub mcm_reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mcm: true,
            set: true,
            mcm_reduction: Reduction::Mean,
        }
    }
}

/// Two paired lists of `N` unit vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch<T> {
    side_a: Tensor<T>,
    side_b: Tensor<T>,
    temperature: T,
}

fn unit_tolerance<T: Real>() -> f64 {
    match T::PRECISION {
        Precision::Double => 1e-6,
        Precision::Single => 1e-4,
    }
}

impl<T: Real> ContrastiveBatch<T> {
    pub fn new(side_a: Tensor<T>, side_b: Tensor<T>, temperature: T) -> Result<Self, LossError> {
        if side_a.shape() != side_b.shape() || side_a.shape().len() != 2 {
            return Err(LossError::Shape(format!(
                "{:?} vs {:?}",
                side_a.shape(),
                side_b.shape()
            )));
        }
        if temperature.is_nan() || temperature <= T::zero() {
            return Err(NumericsError::Temperature(temperature.as_f64()).into());
        }
        for (side, t) in [('A', &side_a), ('B', &side_b)] {
            for row in 0..t.rows() {
                let norm = ops::norm(t.row(row)).as_f64();
                if norm.is_nan() || (norm - 1.0).abs() > unit_tolerance::<T>() {
                    return Err(LossError::NotUnit { side, row, norm });
                }
            }
        }
        Ok(Self {
            side_a,
            side_b,
            temperature,
        })
    }

    pub fn len(&self) -> usize {
        self.side_a.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn swapped(&self) -> Self {
        Self {
            side_a: self.side_b.clone(),
            side_b: self.side_a.clone(),
            temperature: self.temperature,
        }
    }
}

fn one_direction<T: Real>(a: &Tensor<T>, b: &Tensor<T>, i: usize, tau: T) -> T {
    let logits: Vec<T> = (0..b.rows()).map(|j| ops::dot(a.row(i), b.row(j)) / tau).collect();
    ops::log_sum_exp(&logits) - logits[i]
}

/// `-log(exp(a_i.b_i/tau) / sum_j exp(a_i.b_j/tau))`.
pub fn per_element_loss<T: Real>(batch: &ContrastiveBatch<T>, i: usize) -> T {
    one_direction(&batch.side_a, &batch.side_b, i, batch.temperature)
}

/// `per_element_loss(A, B) + per_element_loss(B, A)` at index `i`.
pub fn symmetric_element_loss<T: Real>(batch: &ContrastiveBatch<T>, i: usize) -> T {
    one_direction(&batch.side_a, &batch.side_b, i, batch.temperature)
        + one_direction(&batch.side_b, &batch.side_a, i, batch.temperature)
}

/// Mean of the symmetric element losses.
pub fn contrastive_mean<T: Real>(batch: &ContrastiveBatch<T>) -> T {
    let n = batch.len();
    let total: T = (0..n).map(|i| symmetric_element_loss(batch, i)).sum();
    total / T::lit(n as f64)
}

/// Sum over anchor rows of the one-directional InfoNCE loss against all
/// candidate rows; `positives[r]` is the candidate paired with anchor `r`.
pub fn info_nce_sum<T: Real>(g: &mut Graph<T>, anchors: Var, candidates: Var, positives: &[usize], tau: T) -> Var {
    let sim = g.matmul_nt(anchors, candidates);
    let logits = g.scale(sim, T::one() / tau);
    g.cross_entropy(logits, positives)
}

/// Symmetric InfoNCE averaged over `N` aligned rows of `a` and `b`.
pub fn contrastive_loss<T: Real>(g: &mut Graph<T>, a: Var, b: Var, tau: T) -> Var {
    let n = g.value(a).rows();
    let ids: Vec<usize> = (0..n).collect();
    let fwd = info_nce_sum(g, a, b, &ids, tau);
    let rev = info_nce_sum(g, b, a, &ids, tau);
    let both = g.add(fwd, rev);
    g.scale(both, T::one() / T::lit(n as f64))
}

/// Masked clip modeling loss. `predictions` holds the projected predicted
/// tokens at the `M` masked positions, `targets` the projected targets of every
/// clip in the batch, and `positives[m]` the target row of prediction `m`.
/// Predictions are scored against all targets and each positive target against
/// all predictions.
pub fn mcm_loss<T: Real>(
    g: &mut Graph<T>,
    predictions: Var,
    targets: Var,
    positives: &[usize],
    tau: T,
    reduction: Reduction,
) -> Result<Var, LossError> {
    let m = positives.len();
    if m == 0 {
        return Err(LossError::NoMasked);
    }
    let fwd = info_nce_sum(g, predictions, targets, positives, tau);
    let pos = g.gather(targets, positives);
    let ids: Vec<usize> = (0..m).collect();
    let rev = info_nce_sum(g, pos, predictions, &ids, tau);
    let both = g.add(fwd, rev);
    Ok(match reduction {
        Reduction::Mean => g.scale(both, T::one() / T::lit(m as f64)),
        Reduction::Sum => both,
    })
}

/// Symmetric InfoNCE between the projected CLS outputs of the two views.
pub fn set_loss<T: Real>(g: &mut Graph<T>, first: Var, second: Var, tau: T) -> Var {
    contrastive_loss(g, first, second, tau)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport<T> {
    pub mcm: T,
    pub set: T,
    pub total: T,
    pub masked_count: usize,
}

/// Graph nodes of the training objective.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub total: Var,
    pub mcm: Option<Var>,
    pub set: Option<Var>,
    pub masked_count: usize,
}

impl Objective {
    pub fn report<T: Real>(&self, g: &Graph<T>) -> LossReport<T> {
        LossReport {
            mcm: self.mcm.map_or(T::zero(), |v| g.scalar(v)),
            set: self.set.map_or(T::zero(), |v| g.scalar(v)),
            total: g.scalar(self.total),
            masked_count: self.masked_count,
        }
    }
}

/// Builds `mcm + set` (either term optional) for a packed batch.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    model: &Bound<'_>,
    batch: &PackedBatch<T>,
    config: &LossConfig,
    tau: T,
) -> Result<Objective, LossError> {
    if !config.mcm && !config.set {
        return Err(LossError::NothingEnabled);
    }
    let enc = model.encode_sets(g, &batch.input)?;
    let masked = batch.masked_rows();
    let mcm = if config.mcm {
        if masked.is_empty() {
            return Err(LossError::NoMasked);
        }
        let pred = g.gather(enc.clips, &masked);
        let pred = model.project(g, Head::McmPrediction, pred)?;
        let targets = model.project(g, Head::McmTarget, enc.features)?;
        Some(mcm_loss(g, pred, targets, &masked, tau, config.mcm_reduction)?)
    } else {
        None
    };
    let set = if config.set {
        let b = batch.batch_size;
        let first: Vec<usize> = (0..b).collect();
        let second: Vec<usize> = (b..2 * b).collect();
        let c1 = g.gather(enc.summary, &first);
        let c2 = g.gather(enc.summary, &second);
        let a = model.project(g, Head::SetFirst, c1)?;
        let b = model.project(g, Head::SetSecond, c2)?;
        Some(set_loss(g, a, b, tau))
    } else {
        None
    };
    let total = match (mcm, set) {
        (Some(m), Some(s)) => g.add(m, s),
        (Some(m), None) => m,
        (None, Some(s)) => s,
        (None, None) => unreachable!("checked above"),
    };
    Ok(Objective {
        total,
        mcm,
        set,
        masked_count: masked.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    fn batch(a: &[&[f64]], b: &[&[f64]], tau: f64) -> ContrastiveBatch<f64> {
        ContrastiveBatch::new(t(a), t(b), tau).unwrap()
    }

    const E1: &[f64] = &[1.0, 0.0];
    const E2: &[f64] = &[0.0, 1.0];

    #[test]
    fn single_pair_is_zero() {
        let b = batch(&[E1], &[&[0.6, 0.8]], 0.1);
        assert_eq!(per_element_loss(&b, 0), 0.0);
        assert_eq!(symmetric_element_loss(&b, 0), 0.0);
        assert_eq!(contrastive_mean(&b), 0.0);
    }

    #[test]
    fn orthonormal_aligned_pairs() {
        let b = batch(&[E1, E2], &[E1, E2], 1.0);
        let expect = (1.0 + (-1.0f64).exp()).ln();
        assert!((per_element_loss(&b, 0) - expect).abs() < 1e-15);
        assert!((per_element_loss(&b, 0) - 0.31326).abs() < 1e-5);
        assert!((symmetric_element_loss(&b, 0) - 0.62652).abs() < 1e-5);
        assert!((contrastive_mean(&b) - 2.0 * expect).abs() < 1e-15);
    }

    #[test]
    fn identical_vectors_give_two_log_two() {
        let b = batch(&[E1, E1], &[E1, E1], 1.0);
        assert!((per_element_loss(&b, 1) - 2f64.ln()).abs() < 1e-15);
        assert!((contrastive_mean(&b) - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn dominant_positive_is_below_log_n() {
        let s = 0.5f64.sqrt();
        let b = batch(&[E1, E2, &[s, s]], &[E1, E2, &[s, -s]], 0.5);
        assert!(per_element_loss(&b, 0) < 3f64.ln());
        let sw = b.swapped();
        for i in 0..3 {
            assert_eq!(symmetric_element_loss(&b, i), symmetric_element_loss(&sw, i));
        }
    }

    #[test]
    fn batch_validation() {
        assert!(matches!(
            ContrastiveBatch::new(t(&[&[1.0, 1.0]]), t(&[E1]), 1.0),
            Err(LossError::NotUnit { side: 'A', row: 0, .. })
        ));
        assert!(ContrastiveBatch::new(t(&[E1]), t(&[E1, E2]), 1.0).is_err());
        assert!(ContrastiveBatch::new(t(&[E1]), t(&[E1]), 0.0).is_err());
    }

    #[test]
    fn graph_loss_matches_value_loss() {
        let s = 0.5f64.sqrt();
        let a = t(&[E1, E2, &[s, s]]);
        let b = t(&[&[s, -s], E2, E1]);
        let mut g = Graph::new();
        let va = g.constant(a.clone());
        let vb = g.constant(b.clone());
        let l = contrastive_loss(&mut g, va, vb, 0.3);
        let expect = contrastive_mean(&ContrastiveBatch::new(a, b, 0.3).unwrap());
        assert!((g.scalar(l) - expect).abs() < 1e-12);
    }

    #[test]
    fn duplicate_video_raises_set_loss() {
        let s = 0.5f64.sqrt();
        let base = contrastive_mean(&batch(&[E1, E2], &[&[s, s], &[-s, s]], 0.1));
        let dup = contrastive_mean(&batch(&[E1, E2, E1], &[&[s, s], &[-s, s], &[s, s]], 0.1));
        assert!(dup > base);
    }

    #[test]
    fn mcm_collapses_with_one_candidate() {
        let mut g = Graph::new();
        let p = g.constant(t(&[E1]));
        let q = g.constant(t(&[E2]));
        let l = mcm_loss(&mut g, p, q, &[0], 0.1, Reduction::Mean).unwrap();
        assert_eq!(g.scalar(l), 0.0);
        assert_eq!(
            mcm_loss(&mut g, p, q, &[], 0.1, Reduction::Mean),
            Err(LossError::NoMasked)
        );
    }

    #[test]
    fn unmasked_targets_are_negatives() {
        let s = 0.5f64.sqrt();
        let value = |other: &[f64]| {
            let mut g = Graph::new();
            let p = g.constant(t(&[&[s, s]]));
            let q = g.constant(t(&[E1, other]));
            let l = mcm_loss(&mut g, p, q, &[0], 0.2, Reduction::Mean).unwrap();
            g.scalar(l)
        };
        assert_ne!(value(E2), value(&[s, s]));
    }

    #[test]
    fn sum_reduction_scales_mean() {
        let mut g = Graph::new();
        let p = g.constant(t(&[E1, E2]));
        let q = g.constant(t(&[E2, E1, E1]));
        let mean = mcm_loss(&mut g, p, q, &[1, 0], 0.5, Reduction::Mean).unwrap();
        let sum = mcm_loss(&mut g, p, q, &[1, 0], 0.5, Reduction::Sum).unwrap();
        assert!((g.scalar(sum) - 2.0 * g.scalar(mean)).abs() < 1e-12);
    }
}
