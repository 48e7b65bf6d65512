//! Comma-separated clip features, one clip per line:
//! `video_id,label,x,y,q,h,w,t,f_1,...,f_D`. A label of `-1` means unlabeled.
//! Blank lines and lines starting with `#` are skipped.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{ClipRecord, CropBox, StoreError, VideoDims, VideoRecord};

fn line_err(line: usize, reason: impl Into<String>) -> StoreError {
    StoreError::Line {
        line,
        reason: reason.into(),
    }
}

/// Groups lines by video id in order of first appearance.
pub fn parse_delimited(text: &str, dims: VideoDims, feature_dim: usize) -> Result<Vec<VideoRecord>, StoreError> {
    let mut videos: Vec<VideoRecord> = Vec::new();
    // id -> (index into videos, raw label, first line)
    let mut index: BTreeMap<String, (usize, i64, usize)> = BTreeMap::new();
    let expected = 8 + feature_dim;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != expected {
            return Err(line_err(
                line,
                format!("expected {expected} fields, found {}", fields.len()),
            ));
        }
        let id = fields[0];
        if id.is_empty() {
            return Err(line_err(line, "empty video id"));
        }
        let label: i64 = fields[1]
            .parse()
            .map_err(|_| line_err(line, format!("unparsable label {:?}", fields[1])))?;
        if label < -1 || label > i32::MAX as i64 {
            return Err(line_err(line, format!("label {label} out of range")));
        }
        let mut nums = [0f32; 6];
        for (k, slot) in nums.iter_mut().enumerate() {
            *slot = parse_f32(fields[2 + k], line)?;
        }
        let feature = fields[8..]
            .iter()
            .map(|f| parse_f32(f, line))
            .collect::<Result<Vec<f32>, _>>()?;
        let coords = CropBox::from_array(nums);
        coords
            .check(dims)
            .map_err(|reason| line_err(line, reason.to_string()))?;
        let clip = ClipRecord { coords, feature };
        match index.get(id) {
            Some(&(slot, first_label, first_line)) => {
                if first_label != label {
                    return Err(StoreError::LabelConflict {
                        id: id.into(),
                        first: first_label,
                        first_line,
                        second: label,
                        second_line: line,
                    });
                }
                videos[slot].clips.push(clip);
            }
            None => {
                index.insert(id.into(), (videos.len(), label, line));
                videos.push(VideoRecord {
                    id: id.into(),
                    label: (label >= 0).then_some(label as u32),
                    dims,
                    clips: alloc::vec![clip],
                });
            }
        }
    }
    Ok(videos)
}

fn parse_f32(s: &str, line: usize) -> Result<f32, StoreError> {
    let v: f32 = s
        .parse()
        .map_err(|_| line_err(line, format!("unparsable number {s:?}")))?;
    if !v.is_finite() {
        return Err(line_err(line, format!("non-finite number {s:?}")));
    }
    Ok(v)
}
