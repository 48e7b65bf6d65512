use alloc::collections::BTreeMap;

use super::FeatureStore;

#[derive(Clone, Debug, PartialEq)]
pub struct StoreStats {
    pub videos: usize,
    pub clips: usize,
    pub feature_dim: usize,
    /// Videos per label; `None` when no video carries a label.
    pub label_histogram: Option<BTreeMap<u32, usize>>,
    pub unlabeled: usize,
    /// Min and max of x, y, q, h, w, t over all clips; `None` for an empty store.
    pub coord_ranges: Option<[(f32, f32); 6]>,
}

pub fn store_stats(store: &FeatureStore) -> StoreStats {
    let mut hist = BTreeMap::new();
    let mut unlabeled = 0;
    let mut ranges: Option<[(f32, f32); 6]> = None;
    for v in &store.videos {
        match v.label {
            Some(l) => *hist.entry(l).or_insert(0) += 1,
            None => unlabeled += 1,
        }
        for c in &v.clips {
            let a = c.coords.as_array();
            let r = ranges.get_or_insert_with(|| a.map(|x| (x, x)));
            for (slot, x) in r.iter_mut().zip(a) {
                slot.0 = slot.0.min(x);
                slot.1 = slot.1.max(x);
            }
        }
    }
    StoreStats {
        videos: store.len(),
        clips: store.clip_count(),
        feature_dim: store.feature_dim,
        label_histogram: (!hist.is_empty()).then_some(hist),
        unlabeled,
        coord_ranges: ranges,
    }
}
