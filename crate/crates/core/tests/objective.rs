use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scale_core::losses::{contrastive_mean, total_loss, ContrastiveBatch, LossConfig, LossError, Reduction};
use scale_core::model::{Head, ModelConfig, ModelParams};
use scale_core::numerics::{grad_check, Graph, Tensor};
use scale_core::sampler::{assemble_batch, BatchSpec, PackedBatch};
use scale_core::store::{generate_synthetic, FeatureStore, SyntheticSpec};

fn store(d: usize) -> FeatureStore {
    let spec = SyntheticSpec {
        num_classes: 3,
        train_videos_per_class: 2,
        eval_videos_per_class: 1,
        feature_dim: d,
        clips_per_train_video: 6,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec).unwrap().0
}

fn config(d: usize, k: usize) -> ModelConfig {
    ModelConfig {
        hidden_dim: 4,
        layers: 1,
        heads: 2,
        proj_dim: 3,
        clips_per_view: k,
        mask_ratio: 0.4,
        temperature: 0.5,
        ..ModelConfig::new(d)
    }
}

fn batch(s: &FeatureStore, b: usize, k: usize, ratio: f64, seed: u64) -> PackedBatch<f64> {
    let spec = BatchSpec {
        batch_size: b.max(2),
        clips_per_view: k,
        mask_ratio: ratio,
    };
    let idx: Vec<usize> = (0..b).collect();
    assemble_batch(s, &idx, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// `-ln(exp(s_pos) / sum exp(s_j))`, written out term by term.
fn nce(anchor: &[f64], pos: &[f64], pool: &[Vec<f64>], tau: f64) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let num = (dot(anchor, pos) / tau).exp();
    let den: f64 = pool.iter().map(|c| (dot(anchor, c) / tau).exp()).sum();
    -(num / den).ln()
}

fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Recomputes both terms by enumerating every masked position of every view
/// of every video.
fn brute_force(m: &ModelParams<f64>, b: &PackedBatch<f64>) -> (f64, f64) {
    let tau = m.config.temperature;
    let k = b.input.set_len;
    let bs = b.batch_size;
    let (clips, summary) = m.encode(&b.input).unwrap();
    let targets = rows(&m.project(Head::McmTarget, &b.input.features).unwrap());
    let preds = rows(&m.project(Head::McmPrediction, &clips).unwrap());

    let mut masked = Vec::new();
    for view in 0..2 {
        for v in 0..bs {
            let mask = if view == 0 {
                &b.masks[v].first
            } else {
                &b.masks[v].second
            };
            for &i in mask {
                masked.push((view * bs + v) * k + i);
            }
        }
    }
    masked.sort_unstable();
    let masked_preds: Vec<Vec<f64>> = masked.iter().map(|&r| preds[r].clone()).collect();
    let mut mcm = 0.0;
    for &r in &masked {
        mcm += nce(&preds[r], &targets[r], &targets, tau);
        mcm += nce(&targets[r], &preds[r], &masked_preds, tau);
    }
    mcm /= masked.len() as f64;

    let first: Vec<usize> = (0..bs).collect();
    let second: Vec<usize> = (bs..2 * bs).collect();
    let pick =
        |idx: &[usize]| Tensor::from_rows(&idx.iter().map(|&i| summary.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let a = rows(&m.project(Head::SetFirst, &pick(&first)).unwrap());
    let c = rows(&m.project(Head::SetSecond, &pick(&second)).unwrap());
    let mut set = 0.0;
    for i in 0..bs {
        set += nce(&a[i], &c[i], &c, tau) + nce(&c[i], &a[i], &a, tau);
    }
    (mcm, set / bs as f64)
}

#[test]
fn objective_matches_exhaustive_oracle() {
    let s = store(5);
    for bsz in 2..=3 {
        for k in 1..=3 {
            for seed in 0..3 {
                let m = ModelParams::<f64>::init(&config(5, k), seed).unwrap();
                let b = batch(&s, bsz, k, 0.4, seed + 10);
                let mut g = Graph::new();
                let bound = m.bind_frozen(&mut g);
                let obj = total_loss(&mut g, &bound, &b, &LossConfig::default(), 0.5).unwrap();
                let r = obj.report(&g);
                let (mcm, set) = brute_force(&m, &b);
                assert!((r.mcm - mcm).abs() <= 1e-10, "mcm {} vs {mcm}", r.mcm);
                assert!((r.set - set).abs() <= 1e-10, "set {} vs {set}", r.set);
                assert_eq!(r.total, r.mcm + r.set);
                assert!(r.mcm >= 0.0 && r.set >= 0.0);
            }
        }
    }
}

#[test]
fn loss_toggles() {
    let s = store(5);
    let m = ModelParams::<f64>::init(&config(5, 2), 1).unwrap();
    let b = batch(&s, 3, 2, 0.4, 4);
    let run = |cfg: LossConfig| {
        let mut g = Graph::new();
        let bound = m.bind_frozen(&mut g);
        total_loss(&mut g, &bound, &b, &cfg, 0.5).map(|o| o.report(&g))
    };
    let both = run(LossConfig::default()).unwrap();
    let mcm_only = run(LossConfig {
        set: false,
        ..LossConfig::default()
    })
    .unwrap();
    let set_only = run(LossConfig {
        mcm: false,
        ..LossConfig::default()
    })
    .unwrap();
    assert_eq!(mcm_only.total, both.mcm);
    assert_eq!(set_only.total, both.set);
    assert_eq!(both.total, both.mcm + both.set);
    assert_eq!(
        run(LossConfig {
            mcm: false,
            set: false,
            mcm_reduction: Reduction::Mean
        }),
        Err(LossError::NothingEnabled)
    );
}

#[test]
fn total_loss_gradient_passes_check() {
    let s = store(3);
    let cfg = ModelConfig {
        hidden_dim: 8,
        ..config(3, 2)
    };
    for seed in 0..10 {
        let m = ModelParams::<f64>::init(&cfg, seed).unwrap();
        let b = batch(&s, 2, 2, 0.4, seed + 100);
        let point: Vec<Tensor<f64>> = m.params.iter().map(|p| p.value.clone()).collect();
        let worst = grad_check(
            |g: &mut Graph<f64>, vars| {
                let bound = m.bind_vars(vars.to_vec());
                total_loss(g, &bound, &b, &LossConfig::default(), 0.5).map(|o| o.total)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(worst <= 1e-4, "seed {seed}: worst relative error {worst}");
    }
}

fn unit_rows(raw: &[f64], n: usize, d: usize) -> Tensor<f64> {
    let rows: Vec<Vec<f64>> = raw
        .chunks(d)
        .take(n)
        .map(|r| {
            let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            r.iter().map(|x| x / norm).collect()
        })
        .collect();
    Tensor::from_rows(&rows).unwrap()
}

proptest! {
    #[test]
    fn contrastive_loss_is_nonnegative_and_rotation_invariant(
        raw in proptest::collection::vec(0.1f64..1.0, 24),
        signs in proptest::collection::vec(proptest::bool::ANY, 24),
        angle in 0.0f64..6.3,
        tau in 0.05f64..2.0,
    ) {
        let raw: Vec<f64> = raw.iter().zip(&signs).map(|(x, &s)| if s { *x } else { -*x }).collect();
        let (n, d) = (4, 3);
        let a = unit_rows(&raw[..12], n, d);
        let b = unit_rows(&raw[12..], n, d);
        let l = contrastive_mean(&ContrastiveBatch::new(a.clone(), b.clone(), tau).unwrap());
        prop_assert!(l >= 0.0);
        let (c, s) = (angle.cos(), angle.sin());
        let rot = Tensor::from_rows(&[[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let ra = a.matmul(&rot).unwrap();
        let rb = b.matmul(&rot).unwrap();
        let lr = contrastive_mean(&ContrastiveBatch::new(ra, rb, tau).unwrap());
        prop_assert!((l - lr).abs() <= 1e-9 * l.max(1.0));
    }
}
