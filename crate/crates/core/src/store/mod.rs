//! Precomputed clip features: records, the SCFS binary layout, delimited text
//! ingestion and the seeded synthetic generator.

mod codec;
mod delimited;
mod stats;
mod synthetic;

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

pub use codec::{decode_store, encode_store, HEADER_LEN, STORE_MAGIC, STORE_VERSION};
pub use delimited::parse_delimited;
pub use stats::{store_stats, StoreStats};
pub use synthetic::{generate_synthetic, SyntheticSpec, CLIP_FRAMES, VIDEO_FRAMES, VIDEO_HEIGHT, VIDEO_WIDTH};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StoreError {
    #[error("bad magic {found:?}, expected \"SCFS\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported store version {found}, expected {STORE_VERSION}")]
    BadVersion { found: u32 },
    #[error("truncated store: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{extra} trailing bytes after the last video")]
    TrailingBytes { extra: usize },
    #[error("video id is not valid UTF-8 (video #{index})")]
    InvalidId { index: usize },
    #[error("video {id:?} has {found} feature values per clip, store dimension is {expected}")]
    FeatureDim { id: String, expected: usize, found: usize },
    #[error("duplicate video id {0:?}")]
    DuplicateId(String),
    #[error("video {0:?} has no clips")]
    NoClips(String),
    #[error("video {id:?} clip {clip}: {reason}")]
    BadClip {
        id: String,
        clip: usize,
        reason: &'static str,
    },
    #[error("video {id:?} has invalid label {label}")]
    BadLabel { id: String, label: i64 },
    #[error("video {id:?} has zero-sized dimensions")]
    BadDims { id: String },
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("video {id:?}: label {second} on line {second_line} conflicts with label {first} on line {first_line}")]
    LabelConflict {
        id: String,
        first: i64,
        first_line: usize,
        second: i64,
        second_line: usize,
    },
    #[error("invalid synthetic spec: {0}")]
    Spec(&'static str),
}

/// Space-time crop of a clip inside its video, in pixels and frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropBox {
    pub x: f32,
    pub y: f32,
    pub q: f32,
    pub h: f32,
    pub w: f32,
    pub t: f32,
}

impl CropBox {
    pub fn as_array(&self) -> [f32; 6] {
        [self.x, self.y, self.q, self.h, self.w, self.t]
    }

    pub fn from_array(v: [f32; 6]) -> Self {
        Self {
            x: v[0],
            y: v[1],
            q: v[2],
            h: v[3],
            w: v[4],
            t: v[5],
        }
    }

    fn check(&self, dims: VideoDims) -> Result<(), &'static str> {
        let v = self.as_array();
        if v.iter().any(|c| !c.is_finite()) {
            return Err("non-finite crop coordinate");
        }
        if self.x < 0.0 || self.y < 0.0 || self.q < 0.0 {
            return Err("negative crop origin");
        }
        if self.h <= 0.0 || self.w <= 0.0 || self.t <= 0.0 {
            return Err("crop extent must be positive");
        }
        if self.x + self.h > dims.height as f32
            || self.y + self.w > dims.width as f32
            || self.q + self.t > dims.frames as f32
        {
            return Err("crop exceeds video dimensions");
        }
        Ok(())
    }

    /// `[x/H, y/W, q/T, (x+h)/H, (y+w)/W, (q+t)/T]`.
    pub fn normalized(&self, dims: VideoDims) -> [f64; 6] {
        let (hh, ww, tt) = (dims.height as f64, dims.width as f64, dims.frames as f64);
        let (x, y, q) = (self.x as f64, self.y as f64, self.q as f64);
        [
            x / hh,
            y / ww,
            q / tt,
            (x + self.h as f64) / hh,
            (y + self.w as f64) / ww,
            (q + self.t as f64) / tt,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VideoDims {
    pub height: u32,
    pub width: u32,
    pub frames: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    pub coords: CropBox,
    pub feature: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub label: Option<u32>,
    pub dims: VideoDims,
    pub clips: Vec<ClipRecord>,
}

impl VideoRecord {
    fn check(&self, feature_dim: usize) -> Result<(), StoreError> {
        if self.dims.height == 0 || self.dims.width == 0 || self.dims.frames == 0 {
            return Err(StoreError::BadDims { id: self.id.clone() });
        }
        if let Some(l) = self.label {
            if l > i32::MAX as u32 {
                return Err(StoreError::BadLabel {
                    id: self.id.clone(),
                    label: l as i64,
                });
            }
        }
        if self.clips.is_empty() {
            return Err(StoreError::NoClips(self.id.clone()));
        }
        for (i, clip) in self.clips.iter().enumerate() {
            if clip.feature.len() != feature_dim {
                return Err(StoreError::FeatureDim {
                    id: self.id.clone(),
                    expected: feature_dim,
                    found: clip.feature.len(),
                });
            }
            if clip.feature.iter().any(|v| !v.is_finite()) {
                return Err(StoreError::BadClip {
                    id: self.id.clone(),
                    clip: i,
                    reason: "non-finite feature value",
                });
            }
            clip.coords.check(self.dims).map_err(|reason| StoreError::BadClip {
                id: self.id.clone(),
                clip: i,
                reason,
            })?;
        }
        Ok(())
    }
}

/// An in-memory feature store: videos sharing one feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    pub feature_dim: usize,
    pub videos: Vec<VideoRecord>,
}

impl FeatureStore {
    /// Builds a store after checking every record invariant.
    pub fn new(feature_dim: usize, videos: Vec<VideoRecord>) -> Result<Self, StoreError> {
        let store = Self { feature_dim, videos };
        store.validate()?;
        Ok(store)
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        let mut seen = BTreeSet::new();
        for v in &self.videos {
            v.check(self.feature_dim)?;
            if !seen.insert(v.id.as_str()) {
                return Err(StoreError::DuplicateId(v.id.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn clip_count(&self) -> usize {
        self.videos.iter().map(|v| v.clips.len()).sum()
    }

    /// Clip count shared by every video, if uniform.
    pub fn uniform_clip_count(&self) -> Option<usize> {
        let first = self.videos.first()?.clips.len();
        self.videos.iter().all(|v| v.clips.len() == first).then_some(first)
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.videos.iter().all(|v| v.label.is_some())
    }

    /// Number of classes implied by the largest label.
    pub fn num_classes(&self) -> usize {
        self.videos
            .iter()
            .filter_map(|v| v.label)
            .max()
            .map_or(0, |m| m as usize + 1)
    }
}
