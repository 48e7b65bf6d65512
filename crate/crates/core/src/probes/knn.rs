use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::{argmax, ProbeConfig, ProbeError, ProbeReport, ProbeRow, ReprSet, Selector};
use crate::numerics::ops;

fn video_vector(r: &super::VideoRepr, selector: Selector) -> Result<Vec<f64>, ProbeError> {
    let mean_rows = |t: &crate::numerics::Tensor<f32>| {
        let mut acc = vec![0.0f64; t.cols()];
        for i in 0..t.rows() {
            for (a, &x) in acc.iter_mut().zip(t.row(i)) {
                *a += x as f64;
            }
        }
        acc.iter_mut().for_each(|a| *a /= t.rows() as f64);
        acc
    };
    Ok(match selector {
        Selector::Cls => r
            .cls
            .as_ref()
            .ok_or(ProbeError::MissingModelOutputs("summary tokens"))?
            .iter()
            .map(|&x| x as f64)
            .collect(),
        Selector::MeanRaw => mean_rows(&r.raw),
        Selector::MeanRefined => mean_rows(
            r.refined
                .as_ref()
                .ok_or(ProbeError::MissingModelOutputs("refined clip tokens"))?,
        ),
    })
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = ops::norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vote {
    pub k: usize,
    pub temperature: f64,
    pub majority: bool,
}

/// Cosine-similarity k-NN. Each query votes over its `k` most similar
/// reference vectors whose id differs from the query's; neighbors with equal
/// similarity are taken in reference order and vote ties go to the smaller
/// class. Weights are `exp(sim / temperature)`, or 1 with `majority`.
pub fn knn_classify(
    reference: &[Vec<f64>],
    labels: &[u32],
    reference_ids: &[String],
    queries: &[Vec<f64>],
    query_ids: &[String],
    vote: Vote,
) -> Vec<u32> {
    let Vote {
        k,
        temperature,
        majority,
    } = vote;
    let classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let reference: Vec<Vec<f64>> = reference.iter().map(|v| unit(v.clone())).collect();
    queries
        .iter()
        .zip(query_ids)
        .map(|(q, qid)| {
            let q = unit(q.clone());
            let mut sims: Vec<(f64, usize)> = reference
                .iter()
                .enumerate()
                .filter(|(j, _)| reference_ids[*j] != *qid)
                .map(|(j, r)| (ops::dot(&q, r), j))
                .collect();
            sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut votes = vec![0.0f64; classes];
            for &(s, j) in sims.iter().take(k) {
                votes[labels[j] as usize] += if majority { 1.0 } else { Float::exp(s / temperature) };
            }
            argmax(&votes) as u32
        })
        .collect()
}

fn accuracy(pred: &[u32], truth: &[u32]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

/// k-NN accuracy of the selected per-video vector. The train accuracy is
/// leave-one-out over the train set.
pub fn knn_probe(train: &ReprSet, eval: &ReprSet, cfg: &ProbeConfig) -> Result<ProbeReport, ProbeError> {
    cfg.validate()?;
    let train_labels = train.labels()?;
    let eval_labels = eval.labels()?;
    if train.is_empty() || eval.is_empty() {
        return Err(ProbeError::Empty);
    }
    let vectors = |set: &ReprSet| -> Result<Vec<Vec<f64>>, ProbeError> {
        set.videos.iter().map(|v| video_vector(v, cfg.selector)).collect()
    };
    let ids = |set: &ReprSet| -> Vec<String> { set.videos.iter().map(|v| v.id.clone()).collect() };
    let (tv, ti) = (vectors(train)?, ids(train));
    let (ev, ei) = (vectors(eval)?, ids(eval));
    let classify = |q: &[Vec<f64>], qi: &[String]| {
        knn_classify(
            &tv,
            &train_labels,
            &ti,
            q,
            qi,
            Vote {
                k: cfg.k,
                temperature: cfg.knn_temperature,
                majority: cfg.knn_majority,
            },
        )
    };
    let row = ProbeRow {
        point: None,
        train_accuracy: accuracy(&classify(&tv, &ti), &train_labels),
        eval_accuracy: accuracy(&classify(&ev, &ei), &eval_labels),
    };
    Ok(ProbeReport::from_rows("knn", cfg.selector.name(), vec![row]))
}
