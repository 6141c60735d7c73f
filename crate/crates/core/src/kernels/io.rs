//! On-disk kernel banks.
//!
//! A bank directory holds `meta.json` plus one file per kernel: `k<idx>.f64`
//! with `n * n` little-endian f64 values in row-major order. Test-side cross
//! blocks, when present, are stored the same way as `x<idx>.f64` (`m * n`).
//! Text mode writes `.tsv` files instead.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{CenterStats, CrossGram, DroppedKernel, GramMatrix, GramState, KernelBank, KernelSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub zscore: bool,
    pub centered: bool,
}

/// Labels and ids of the rows in the cross blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestBlock {
    pub m: usize,
    pub instance_ids: Vec<String>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankFileMeta {
    pub specs: Vec<KernelSpec>,
    pub n: usize,
    pub instance_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub preprocessing: Preprocessing,
    pub dataset_hash: String,
    pub state: GramState,
    pub center_stats: Vec<Option<CenterStats>>,
    #[serde(default)]
    pub dropped: Vec<DroppedKernel>,
    pub text: bool,
    #[serde(default)]
    pub test: Option<TestBlock>,
}

/// A bank plus the label and cross-block context needed by the CLI stages.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredBank {
    pub meta: BankFileMeta,
    pub grams: Vec<GramMatrix>,
    pub cross: Option<Vec<CrossGram>>,
}

impl StoredBank {
    pub fn from_bank(
        bank: &KernelBank,
        instance_ids: Vec<String>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        cross: Option<(Vec<CrossGram>, TestBlock)>,
    ) -> Self {
        let (cross, test) = match cross {
            Some((c, t)) => (Some(c), Some(t)),
            None => (None, None),
        };
        StoredBank {
            meta: BankFileMeta {
                specs: bank.specs.clone(),
                n: bank.n(),
                instance_ids,
                labels,
                class_names,
                preprocessing: Preprocessing {
                    zscore: bank.meta.zscore,
                    centered: bank.meta.centered,
                },
                dataset_hash: bank.meta.dataset_hash.clone(),
                state: bank.train_grams[0].state,
                center_stats: bank
                    .train_grams
                    .iter()
                    .map(|g| g.center_stats.clone())
                    .collect(),
                dropped: bank.meta.dropped.clone(),
                text: false,
                test,
            },
            grams: bank.train_grams.clone(),
            cross,
        }
    }
}

fn write_matrix(path: &Path, m: &Array2<f64>, text: bool) -> Result<()> {
    let bytes = if text {
        let mut s = String::new();
        for row in m.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&cells.join("\t"));
            s.push('\n');
        }
        s.into_bytes()
    } else {
        let mut b = Vec::with_capacity(m.len() * 8);
        for v in m.iter() {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_matrix(path: &Path, rows: usize, cols: usize, text: bool) -> Result<Array2<f64>> {
    let values: Vec<f64> = if text {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut v = Vec::with_capacity(rows * cols);
        for (lineno, line) in s.lines().enumerate() {
            for tok in line.split('\t') {
                v.push(tok.parse().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    msg: format!("{}: bad value `{tok}`", path.display()),
                })?);
            }
        }
        v
    } else {
        let b = fs::read(path).map_err(|e| Error::io(path, e))?;
        if b.len() % 8 != 0 {
            return Err(Error::Parse {
                line: 0,
                msg: format!(
                    "{}: length {} is not a multiple of 8",
                    path.display(),
                    b.len()
                ),
            });
        }
        b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect()
    };
    if values.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            expected: rows * cols,
            got: values.len(),
        });
    }
    Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked"))
}

fn file_name(prefix: char, idx: usize, text: bool) -> String {
    format!("{prefix}{idx}.{}", if text { "tsv" } else { "f64" })
}

pub fn save_bank(dir: impl AsRef<Path>, bank: &StoredBank, text: bool) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut meta = bank.meta.clone();
    meta.text = text;
    let meta_path = dir.join("meta.json");
    fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?)
        .map_err(|e| Error::io(&meta_path, e))?;
    for (idx, g) in bank.grams.iter().enumerate() {
        write_matrix(&dir.join(file_name('k', idx, text)), &g.values, text)?;
    }
    if let Some(cross) = &bank.cross {
        for (idx, c) in cross.iter().enumerate() {
            write_matrix(&dir.join(file_name('x', idx, text)), &c.values, text)?;
        }
    }
    Ok(())
}

pub fn load_bank(dir: impl AsRef<Path>) -> Result<StoredBank> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let raw = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: BankFileMeta = serde_json::from_slice(&raw)?;
    let p = meta.specs.len();
    if meta.center_stats.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: meta.center_stats.len(),
        });
    }
    let grams = (0..p)
        .map(|idx| {
            Ok(GramMatrix {
                values: read_matrix(
                    &dir.join(file_name('k', idx, meta.text)),
                    meta.n,
                    meta.n,
                    meta.text,
                )?,
                state: meta.state,
                center_stats: meta.center_stats[idx].clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cross = match &meta.test {
        Some(t) => Some(
            (0..p)
                .map(|idx| {
                    Ok(CrossGram {
                        values: read_matrix(
                            &dir.join(file_name('x', idx, meta.text)),
                            t.m,
                            meta.n,
                            meta.text,
                        )?,
                        state: meta.state,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    Ok(StoredBank { meta, grams, cross })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{build_kernel_bank, BankRecipe};
    use ndarray::array;

    fn small_bank() -> StoredBank {
        let x = array![[0.0, 1.0], [1.0, -1.0], [2.0, 0.5]];
        let bank = build_kernel_bank(&x, BankRecipe::UciFull).unwrap();
        let cross = bank.cross_grams(&array![[0.5, 0.5]], &x).unwrap();
        StoredBank::from_bank(
            &bank,
            vec!["a".into(), "b".into(), "c".into()],
            vec![0, 1, 0],
            vec!["x".into(), "y".into()],
            Some((
                cross,
                TestBlock {
                    m: 1,
                    instance_ids: vec!["t".into()],
                    labels: vec![1],
                },
            )),
        )
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let bank = small_bank();
        save_bank(dir.path(), &bank, false).unwrap();
        let k0 = fs::read(dir.path().join("k0.f64")).unwrap();
        assert_eq!(k0.len(), 9 * 8);
        assert_eq!(
            f64::from_le_bytes(k0[8..16].try_into().unwrap()),
            bank.grams[0].values[[0, 1]]
        );
        let loaded = load_bank(dir.path()).unwrap();
        assert_eq!(loaded.grams, bank.grams);
        assert_eq!(loaded.cross, bank.cross);
    }

    #[test]
    fn text_mode_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let bank = small_bank();
        save_bank(dir.path(), &bank, true).unwrap();
        assert!(dir.path().join("k12.tsv").exists());
        let loaded = load_bank(dir.path()).unwrap();
        for (a, b) in loaded.grams.iter().zip(&bank.grams) {
            for (x, y) in a.values.iter().zip(b.values.iter()) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_bank(dir.path(), &small_bank(), false).unwrap();
        fs::write(dir.path().join("k3.f64"), [0u8; 64]).unwrap();
        assert!(matches!(
            load_bank(dir.path()),
            Err(Error::DimensionMismatch {
                expected: 9,
                got: 8
            })
        ));
    }
}
