//! Reading and writing stores and checkpoints. Every write goes to a
//! temporary file in the target directory and is renamed into place, so a
//! failed write never leaves a partial file behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use scale_core::store::{decode_store, encode_store, parse_delimited, FeatureStore, StoreError, VideoDims};
use scale_core::trainer::{decode_checkpoint, encode_checkpoint, Checkpoint, CheckpointError};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Store {
        path: PathBuf,
        #[source]
        source: StoreError,
    },
    #[error("{path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to `path` through a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

/// Returns the number of bytes written.
pub fn write_store(path: &Path, store: &FeatureStore) -> Result<u64, IoError> {
    let bytes = encode_store(store).map_err(|source| IoError::Store {
        path: path.to_path_buf(),
        source,
    })?;
    write_atomic(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn read_store(path: &Path) -> Result<FeatureStore, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_store(&bytes).map_err(|source| IoError::Store {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), IoError> {
    write_atomic(path, &encode_checkpoint(ckpt))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_checkpoint(&bytes).map_err(|source| IoError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads comma-separated clip rows and validates the resulting store.
pub fn import_delimited(path: &Path, dims: VideoDims, feature_dim: usize) -> Result<FeatureStore, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let store_err = |source| IoError::Store {
        path: path.to_path_buf(),
        source,
    };
    let videos = parse_delimited(&text, dims, feature_dim).map_err(store_err)?;
    FeatureStore::new(feature_dim, videos).map_err(store_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use scale_core::store::{generate_synthetic, SyntheticSpec};

    #[test]
    fn store_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.scfs");
        let (train, _) = generate_synthetic(&SyntheticSpec {
            num_classes: 2,
            train_videos_per_class: 3,
            eval_videos_per_class: 1,
            feature_dim: 5,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let n = write_store(&path, &train).unwrap();
        assert_eq!(n, fs::metadata(&path).unwrap().len());
        assert_eq!(read_store(&path).unwrap(), train);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn empty_store_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.scfs");
        let n = write_store(&path, &FeatureStore::new(4, vec![]).unwrap()).unwrap();
        assert_eq!(n, 20);
    }

    #[test]
    fn errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.scfs");
        fs::write(&path, b"XXXXjunk").unwrap();
        let err = read_store(&path).unwrap_err();
        assert!(err.to_string().contains("bad.scfs"), "{err}");
        assert!(matches!(
            err,
            IoError::Store {
                source: StoreError::BadMagic { .. },
                ..
            }
        ));
        assert!(matches!(
            read_store(&dir.path().join("missing")),
            Err(IoError::Io { .. })
        ));
    }

    #[test]
    fn failed_write_leaves_target_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.scfs");
        fs::write(&path, b"previous").unwrap();
        let bad = FeatureStore {
            feature_dim: 3,
            videos: generate_synthetic(&SyntheticSpec {
                num_classes: 1,
                train_videos_per_class: 1,
                eval_videos_per_class: 1,
                feature_dim: 4,
                ..SyntheticSpec::default()
            })
            .unwrap()
            .0
            .videos,
        };
        assert!(write_store(&path, &bad).is_err());
        assert_eq!(fs::read(&path).unwrap(), b"previous");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
