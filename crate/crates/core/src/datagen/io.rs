use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::generate::{Dataset, LabeledSample, Provenance, XorCase};
use super::grid::{ImageGrid, Mask};
use super::pattern::RigidTransform;
use super::scenario::{ScenarioSpec, StaticLayout};
use crate::error::{Error, Result};
use crate::io_util::{read_json, sha256_hex, write_atomic, write_json};

pub const DATASET_FORMAT_VERSION: u32 = 1;
const NO_XOR_CASE: u8 = u8::MAX;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub name: String,
    pub spec: ScenarioSpec,
    pub layout: Option<StaticLayout>,
    pub provenance: Provenance,
    pub side: usize,
    /// Samples per split.
    pub counts: BTreeMap<String, usize>,
    /// SHA-256 of every array file, keyed by file name.
    pub checksums: BTreeMap<String, String>,
}

fn split_files(split: &str) -> [String; 5] {
    [
        format!("x_{split}.f32"),
        format!("y_{split}.u8"),
        format!("mask_{split}.u8"),
        format!("transform_{split}.u16"),
        format!("xor_{split}.u8"),
    ]
}

/// Writes `dir/manifest.json` plus one raw little-endian array per field and
/// split. Images are stored as f32, labels and masks as bytes; the rigid
/// transform of each sample is three u16 values (quarter turns, row, col).
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut counts = BTreeMap::new();
    let mut checksums = BTreeMap::new();
    for (split, samples) in dataset.splits() {
        let [xf, yf, mf, tf, cf] = split_files(split);
        let mut x = Vec::with_capacity(samples.len() * dataset.side().pow(2) * 4);
        let mut y = Vec::with_capacity(samples.len());
        let mut m = Vec::new();
        let mut t = Vec::new();
        let mut c = Vec::new();
        for s in samples {
            for v in s.image.data() {
                x.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            y.push(s.label);
            m.extend(s.mask.data().iter().map(|&b| b as u8));
            for v in [s.transform.quarter_turns as usize, s.transform.row, s.transform.col] {
                let v = u16::try_from(v)
                    .map_err(|_| Error::InvalidArgument(format!("transform value {v} exceeds u16")))?;
                t.extend_from_slice(&v.to_le_bytes());
            }
            c.push(s.xor_case.map_or(NO_XOR_CASE, XorCase::code));
        }
        for (name, bytes) in [(xf, x), (yf, y), (mf, m), (tf, t), (cf, c)] {
            checksums.insert(name.clone(), sha256_hex(&bytes));
            write_atomic(&dir.join(&name), &bytes)?;
        }
        counts.insert(split.to_string(), samples.len());
    }
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        name: dataset.name(),
        spec: dataset.spec.clone(),
        layout: dataset.layout,
        provenance: dataset.provenance.clone(),
        side: dataset.side(),
        counts,
        checksums,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let manifest: DatasetManifest = read_json(&path)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Version {
            path,
            expected: DATASET_FORMAT_VERSION,
            found: manifest.format_version,
        });
    }
    Ok(manifest)
}

fn read_checked(dir: &Path, name: &str, expected_len: usize, manifest: &DatasetManifest) -> Result<Vec<u8>> {
    let path: PathBuf = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != expected_len {
        return Err(Error::Length {
            path,
            expected: expected_len,
            found: bytes.len(),
        });
    }
    let expected = manifest
        .checksums
        .get(name)
        .ok_or_else(|| Error::Config(format!("manifest in {} lists no checksum for {name}", dir.display())))?;
    let found = sha256_hex(&bytes);
    if &found != expected {
        return Err(Error::Checksum {
            path,
            expected: expected.clone(),
            found,
        });
    }
    Ok(bytes)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = load_manifest(dir)?;
    let side = manifest.side;
    let d = side * side;
    let mut splits = Vec::new();
    for split in ["train", "val", "test"] {
        let n = *manifest
            .counts
            .get(split)
            .ok_or_else(|| Error::Config(format!("manifest in {} has no {split} count", dir.display())))?;
        let [xf, yf, mf, tf, cf] = split_files(split);
        let x = read_checked(dir, &xf, n * d * 4, &manifest)?;
        let y = read_checked(dir, &yf, n, &manifest)?;
        let m = read_checked(dir, &mf, n * d, &manifest)?;
        let t = read_checked(dir, &tf, n * 6, &manifest)?;
        let c = read_checked(dir, &cf, n, &manifest)?;
        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            let pixels = x[i * d * 4..(i + 1) * d * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            let mask = m[i * d..(i + 1) * d].iter().map(|&b| b != 0).collect();
            let u = |k: usize| u16::from_le_bytes([t[i * 6 + 2 * k], t[i * 6 + 2 * k + 1]]) as usize;
            samples.push(LabeledSample {
                image: ImageGrid::new(side, pixels)?,
                label: y[i],
                mask: Mask::new(side, mask)?,
                transform: RigidTransform {
                    quarter_turns: u(0) as u8,
                    row: u(1),
                    col: u(2),
                },
                xor_case: XorCase::from_code(c[i]),
            });
        }
        splits.push(samples);
    }
    let test = splits.pop().unwrap_or_default();
    let val = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    Ok(Dataset {
        spec: manifest.spec,
        layout: manifest.layout,
        train,
        val,
        test,
        provenance: manifest.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate::build_dataset;
    use crate::datagen::scenario::{BackgroundKind, ScenarioKind};

    fn dataset(scenario: ScenarioKind) -> Dataset {
        let mut spec = ScenarioSpec::small(scenario, BackgroundKind::Corr, 0.3, 1);
        spec.n_samples = 300;
        build_dataset(&spec).unwrap()
    }

    #[test]
    fn round_trip_is_lossless() {
        for scenario in ScenarioKind::ALL {
            let d = dataset(scenario);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join(d.name());
            save_dataset(&d, &path).unwrap();
            assert_eq!(load_dataset(&path).unwrap(), d);
        }
    }

    #[test]
    fn truncated_array_rejected() {
        let d = dataset(ScenarioKind::Lin);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path()).unwrap();
        let x = dir.path().join("x_val.f32");
        let bytes = fs::read(&x).unwrap();
        fs::write(&x, &bytes[..bytes.len() - 4]).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Length { path, .. }) => assert_eq!(path, x),
            other => panic!("expected a length error, got {other:?}"),
        }
    }

    #[test]
    fn corruption_and_version_detected() {
        let d = dataset(ScenarioKind::Xor);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path()).unwrap();
        let y = dir.path().join("y_test.u8");
        let mut bytes = fs::read(&y).unwrap();
        bytes[0] ^= 1;
        fs::write(&y, &bytes).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Checksum { .. })));

        save_dataset(&d, dir.path()).unwrap();
        let manifest_path = dir.path().join("manifest.json");
        let text = fs::read_to_string(&manifest_path).unwrap();
        fs::write(&manifest_path, text.replace("\"format_version\": 1", "\"format_version\": 99")).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::Version { found: 99, .. })
        ));
    }

    #[test]
    fn missing_file_names_path() {
        let d = dataset(ScenarioKind::Lin);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path()).unwrap();
        fs::remove_file(dir.path().join("mask_train.u8")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("mask_train.u8"));
    }
}
