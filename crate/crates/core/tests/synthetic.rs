use scale_core::store::{generate_synthetic, FeatureStore, SyntheticSpec, VideoRecord, VIDEO_FRAMES};

fn spec() -> SyntheticSpec {
    SyntheticSpec {
        seed: 11,
        train_videos_per_class: 30,
        eval_videos_per_class: 20,
        ..SyntheticSpec::default()
    }
}

/// Least-squares slope of each feature dimension against the clip's temporal
/// midpoint, with the midpoint normalized to [0, 1].
fn drift_slope(v: &VideoRecord) -> Vec<f64> {
    let m: Vec<f64> = v
        .clips
        .iter()
        .map(|c| (c.coords.q as f64 + c.coords.t as f64 / 2.0) / VIDEO_FRAMES as f64)
        .collect();
    let mean_m = m.iter().sum::<f64>() / m.len() as f64;
    let sxx: f64 = m.iter().map(|x| (x - mean_m).powi(2)).sum();
    let d = v.clips[0].feature.len();
    (0..d)
        .map(|j| {
            let mean_f = v.clips.iter().map(|c| c.feature[j] as f64).sum::<f64>() / m.len() as f64;
            v.clips
                .iter()
                .zip(&m)
                .map(|(c, x)| (x - mean_m) * (c.feature[j] as f64 - mean_f))
                .sum::<f64>()
                / sxx
        })
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn centroids(store: &FeatureStore, feature: impl Fn(&VideoRecord) -> Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let classes = store.num_classes();
    let d = store.feature_dim;
    let mut sums = vec![vec![0.0; d]; classes];
    for v in &store.videos {
        for f in feature(v) {
            let c = v.label.unwrap() as usize;
            for (s, x) in sums[c].iter_mut().zip(&f) {
                *s += x;
            }
        }
    }
    sums
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> u32 {
    (0..centroids.len())
        .max_by(|&a, &b| cosine(&centroids[a], x).total_cmp(&cosine(&centroids[b], x)))
        .unwrap() as u32
}

#[test]
fn drift_regression_recovers_class_direction() {
    let (train, eval) = generate_synthetic(&spec()).unwrap();
    let slopes = centroids(&train, |v| vec![drift_slope(v)]);
    let correct = eval
        .videos
        .iter()
        .filter(|v| nearest(&slopes, &drift_slope(v)) == v.label.unwrap())
        .count();
    let acc = correct as f64 / eval.len() as f64;
    assert!(acc >= 0.95, "slope oracle accuracy {acc}");

    // The recovered direction has the generator's drift length.
    for c in &slopes {
        let n = train.videos.len() as f64 / train.num_classes() as f64;
        let norm = c.iter().map(|x| (x / n).powi(2)).sum::<f64>().sqrt();
        assert!((norm - spec().drift_scale).abs() < 0.1, "mean slope norm {norm}");
    }
}

#[test]
fn single_clips_carry_little_class_signal() {
    let (train, eval) = generate_synthetic(&spec()).unwrap();
    let clip_rows = |v: &VideoRecord| {
        v.clips
            .iter()
            .map(|c| c.feature.iter().map(|&x| x as f64).collect())
            .collect()
    };
    let means = centroids(&train, clip_rows);
    let (mut correct, mut total) = (0, 0);
    for v in &eval.videos {
        for c in &v.clips {
            let f: Vec<f64> = c.feature.iter().map(|&x| x as f64).collect();
            correct += usize::from(nearest(&means, &f) == v.label.unwrap());
            total += 1;
        }
    }
    let acc = correct as f64 / total as f64;
    let chance = 1.0 / train.num_classes() as f64;
    assert!((acc - chance).abs() <= 0.05, "clip centroid accuracy {acc}");
}
