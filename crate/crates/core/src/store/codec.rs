//! SCFS byte layout (little-endian):
//!
//! ```text
//! magic "SCFS" | version u32 | feature_dim u32 | video_count u64
//! per video: id_len u32 | id bytes | label i32 | H u32 | W u32 | T u32 | clip_count u32
//! per clip:  x y q h w t (f32 each) | feature_dim x f32
//! ```

use alloc::string::String;
use alloc::vec::Vec;

use crate::wire::{Put, Reader, Short};

use super::{ClipRecord, CropBox, FeatureStore, StoreError, VideoDims, VideoRecord};

pub const STORE_MAGIC: [u8; 4] = *b"SCFS";
pub const STORE_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

impl From<Short> for StoreError {
    fn from(s: Short) -> Self {
        StoreError::Truncated {
            expected: s.expected,
            actual: s.actual,
        }
    }
}

/// Serializes a validated store.
pub fn encode_store(store: &FeatureStore) -> Result<Vec<u8>, StoreError> {
    store.validate()?;
    let d = store.feature_dim;
    let dim32 = u32::try_from(d).map_err(|_| StoreError::Spec("feature dimension exceeds u32"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + store.clip_count() * (6 + d) * 4);
    out.put(&STORE_MAGIC);
    out.put_u32(STORE_VERSION);
    out.put_u32(dim32);
    out.put_u64(store.videos.len() as u64);
    for v in &store.videos {
        out.put_u32(v.id.len() as u32);
        out.put(v.id.as_bytes());
        out.put_i32(v.label.map_or(-1, |l| l as i32));
        out.put_u32(v.dims.height);
        out.put_u32(v.dims.width);
        out.put_u32(v.dims.frames);
        out.put_u32(v.clips.len() as u32);
        for c in &v.clips {
            for x in c.coords.as_array() {
                out.put_f32(x);
            }
            for &x in &c.feature {
                out.put_f32(x);
            }
        }
    }
    Ok(out)
}

/// Parses SCFS bytes; the exact inverse of [`encode_store`].
pub fn decode_store(bytes: &[u8]) -> Result<FeatureStore, StoreError> {
    let mut r = Reader::new(bytes);
    let magic: [u8; 4] = r.array()?;
    if magic != STORE_MAGIC {
        return Err(StoreError::BadMagic { found: magic });
    }
    let version = r.u32()?;
    if version != STORE_VERSION {
        return Err(StoreError::BadVersion { found: version });
    }
    let d = r.u32()? as usize;
    let count = r.u64()?;
    let mut videos = Vec::new();
    for index in 0..count {
        let id_len = r.u32()? as usize;
        let id =
            String::from_utf8(r.take(id_len)?.to_vec()).map_err(|_| StoreError::InvalidId { index: index as usize })?;
        let label = match r.i32()? {
            -1 => None,
            l if l >= 0 => Some(l as u32),
            l => return Err(StoreError::BadLabel { id, label: l as i64 }),
        };
        let dims = VideoDims {
            height: r.u32()?,
            width: r.u32()?,
            frames: r.u32()?,
        };
        let clip_count = r.u32()? as usize;
        // Reject impossible counts before allocating for them.
        r.require(clip_count.saturating_mul((6 + d) * 4))?;
        let mut clips = Vec::with_capacity(clip_count);
        for _ in 0..clip_count {
            let mut c = [0f32; 6];
            for v in &mut c {
                *v = r.f32()?;
            }
            let mut feature = Vec::with_capacity(d);
            for _ in 0..d {
                feature.push(r.f32()?);
            }
            clips.push(ClipRecord {
                coords: CropBox::from_array(c),
                feature,
            });
        }
        videos.push(VideoRecord { id, label, dims, clips });
    }
    if r.remaining() != 0 {
        return Err(StoreError::TrailingBytes { extra: r.remaining() });
    }
    FeatureStore::new(d, videos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    fn video(id: &str, label: Option<u32>, clips: usize, d: usize, seed: f32) -> VideoRecord {
        VideoRecord {
            id: id.into(),
            label,
            dims: VideoDims {
                height: 224,
                width: 224,
                frames: 160,
            },
            clips: (0..clips)
                .map(|i| ClipRecord {
                    coords: CropBox {
                        x: i as f32,
                        y: 2.0,
                        q: 8.0 * i as f32,
                        h: 100.0,
                        w: 120.5,
                        t: 16.0,
                    },
                    feature: (0..d).map(|k| seed * (k as f32 + 0.25) - 1.0 / 3.0).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn empty_store_is_header_only() {
        let bytes = encode_store(&FeatureStore::new(4, vec![]).unwrap()).unwrap();
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], b"SCFS");
        assert_eq!(decode_store(&bytes).unwrap().feature_dim, 4);
    }

    #[test]
    fn byte_layout_is_exact() {
        let s = FeatureStore::new(1, vec![video("ab", Some(3), 1, 1, 1.0)]).unwrap();
        let b = encode_store(&s).unwrap();
        assert_eq!(b.len(), 20 + 4 + 2 + 4 + 12 + 4 + 7 * 4);
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..20], &1u64.to_le_bytes());
        assert_eq!(&b[20..24], &2u32.to_le_bytes());
        assert_eq!(&b[24..26], b"ab");
        assert_eq!(&b[26..30], &3i32.to_le_bytes());
        assert_eq!(&b[30..34], &224u32.to_le_bytes());
        assert_eq!(&b[38..42], &160u32.to_le_bytes());
        assert_eq!(&b[42..46], &1u32.to_le_bytes());
        assert_eq!(&b[50..54], &2.0f32.to_le_bytes());
    }

    #[test]
    fn unlabeled_is_minus_one() {
        let s = FeatureStore::new(1, vec![video("a", None, 1, 1, 1.0)]).unwrap();
        let b = encode_store(&s).unwrap();
        assert_eq!(&b[25..29], &(-1i32).to_le_bytes());
        assert_eq!(decode_store(&b).unwrap().videos[0].label, None);
    }

    #[test]
    fn error_kinds_are_distinct() {
        let s = FeatureStore::new(2, vec![video("a", Some(0), 2, 2, 0.5)]).unwrap();
        let good = encode_store(&s).unwrap();
        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert_eq!(decode_store(&bad), Err(StoreError::BadMagic { found: *b"XXXX" }));
        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(decode_store(&bad), Err(StoreError::BadVersion { found: 2 }));
        let cut = &good[..good.len() - 3];
        assert_eq!(
            decode_store(cut),
            Err(StoreError::Truncated {
                expected: good.len(),
                actual: good.len() - 3
            })
        );
        let mut long = good.clone();
        long.push(0);
        assert_eq!(decode_store(&long), Err(StoreError::TrailingBytes { extra: 1 }));
    }

    #[test]
    fn duplicate_ids_rejected_on_write() {
        let s = FeatureStore {
            feature_dim: 1,
            videos: vec![video("a", None, 1, 1, 1.0), video("a", None, 1, 1, 2.0)],
        };
        assert_eq!(encode_store(&s), Err(StoreError::DuplicateId("a".into())));
    }

    proptest! {
        #[test]
        fn reencoding_is_byte_identical(
            n in 0usize..100,
            d in 1usize..6,
            clips in 1usize..4,
            seed in -1e3f32..1e3,
        ) {
            let videos = (0..n)
                .map(|i| video(&format!("v{i}"), (i % 3 != 0).then_some(i as u32 % 7), clips, d, seed + i as f32))
                .collect();
            let s = FeatureStore::new(d, videos).unwrap();
            let b = encode_store(&s).unwrap();
            let back = decode_store(&b).unwrap();
            prop_assert_eq!(&back, &s);
            prop_assert_eq!(encode_store(&back).unwrap(), b);
        }
    }
}
