//! Pairwise K-space examples.
//!
//! A pair of training instances `(i, j)` with `i <= j` becomes the vector
//! `z_ij = (K_1[i][j], ..., K_p[i][j])` with label `+1` when both instances
//! share a class and `-1` otherwise. By default vectors are read out of the
//! Grams when a batch is drawn; [`KExampleSet::materialize`] copies them into
//! one dense row-major block when memory allows, which is much faster for
//! large `p`.

use std::fmt::Write as _;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::GramMatrix;

#[derive(Debug, Clone)]
enum Source<'a> {
    Grams(&'a [GramMatrix]),
    /// Explicit K-space points; example `k` is row `rows[k]`.
    Points(Arc<Array2<f64>>),
}

/// Labeled K-space examples backed by a kernel bank.
#[derive(Debug, Clone)]
pub struct KExampleSet<'a> {
    source: Source<'a>,
    pairs: Vec<(usize, usize)>,
    /// Row of each example in a `Points` source; empty for `Grams`.
    rows: Vec<usize>,
    labels: Vec<i8>,
    n_pos: usize,
    n_neg: usize,
}

/// A gathered batch: one row of kernel values per sampled pair.
#[derive(Debug, Clone, PartialEq)]
pub struct KBatch {
    pub z: Array2<f64>,
    pub t: Vec<f64>,
}

impl<'a> KExampleSet<'a> {
    fn from_parts(
        source: Source<'a>,
        pairs: Vec<(usize, usize)>,
        rows: Vec<usize>,
        labels: Vec<i8>,
    ) -> Self {
        let n_pos = labels.iter().filter(|&&t| t > 0).count();
        let n_neg = labels.len() - n_pos;
        KExampleSet {
            source,
            pairs,
            rows,
            labels,
            n_pos,
            n_neg,
        }
    }

    /// A set over explicit K-space points (rows of `z`) with labels `t` in {+1, -1}.
    pub fn from_points(z: Array2<f64>, t: &[i8]) -> Result<KExampleSet<'static>> {
        if z.nrows() != t.len() {
            return Err(Error::DimensionMismatch {
                expected: z.nrows(),
                got: t.len(),
            });
        }
        if let Some(bad) = t.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::InvalidArgument(format!(
                "K-label {bad} is not +1/-1"
            )));
        }
        let pairs = (0..z.nrows()).map(|r| (r, r)).collect();
        let rows = (0..z.nrows()).collect();
        Ok(KExampleSet::from_parts(
            Source::Points(Arc::new(z)),
            pairs,
            rows,
            t.to_vec(),
        ))
    }

    /// Copies every example vector into one dense `len x p` block. Pairs,
    /// labels and order are kept, so results computed on the copy are
    /// bitwise identical to the original.
    pub fn materialize(&self) -> KExampleSet<'static> {
        let mut z = Array2::zeros((self.len(), self.p()));
        for (k, mut row) in z.rows_mut().into_iter().enumerate() {
            self.z_into(k, row.as_slice_mut().expect("standard layout"));
        }
        KExampleSet::from_parts(
            Source::Points(Arc::new(z)),
            self.pairs.clone(),
            (0..self.len()).collect(),
            self.labels.clone(),
        )
    }

    /// Bytes needed by [`KExampleSet::materialize`].
    pub fn dense_bytes(&self) -> usize {
        self.len() * self.p() * std::mem::size_of::<f64>()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of base kernels.
    pub fn p(&self) -> usize {
        match &self.source {
            Source::Grams(g) => g.len(),
            Source::Points(z) => z.ncols(),
        }
    }

    pub fn n_pos(&self) -> usize {
        self.n_pos
    }

    pub fn n_neg(&self) -> usize {
        self.n_neg
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn label(&self, k: usize) -> f64 {
        f64::from(self.labels[k])
    }

    /// Writes `z` for example `k` into `out` (length `p`).
    pub fn z_into(&self, k: usize, out: &mut [f64]) {
        let (i, j) = self.pairs[k];
        match &self.source {
            Source::Grams(grams) => {
                for (o, g) in out.iter_mut().zip(grams.iter()) {
                    *o = g.values[[i, j]];
                }
            }
            Source::Points(z) => {
                for (o, v) in out.iter_mut().zip(z.row(self.rows[k])) {
                    *o = *v;
                }
            }
        }
    }

    pub fn z(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.p()];
        self.z_into(k, &mut out);
        out
    }

    /// `mu . z_k` without gathering the vector.
    pub fn dot(&self, mu: &[f64], k: usize) -> f64 {
        let (i, j) = self.pairs[k];
        match &self.source {
            Source::Grams(grams) => mu
                .iter()
                .zip(grams.iter())
                .filter(|(m, _)| **m != 0.0)
                .map(|(m, g)| m * g.values[[i, j]])
                .sum(),
            Source::Points(z) => mu.iter().zip(z.row(self.rows[k])).map(|(m, v)| m * v).sum(),
        }
    }

    /// The examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> KExampleSet<'a> {
        let rows = if self.rows.is_empty() {
            Vec::new()
        } else {
            indices.iter().map(|&k| self.rows[k]).collect()
        };
        KExampleSet::from_parts(
            self.source.clone(),
            indices.iter().map(|&k| self.pairs[k]).collect(),
            rows,
            indices.iter().map(|&k| self.labels[k]).collect(),
        )
    }

    /// A seeded random split into (`1 - val_fraction`, `val_fraction`) parts.
    pub fn split(
        &self,
        val_fraction: f64,
        seed: u64,
    ) -> Result<(KExampleSet<'a>, KExampleSet<'a>)> {
        let n = self.len();
        let n_val = (val_fraction * n as f64).round() as usize;
        if n_val == 0 || n_val >= n {
            return Err(Error::InvalidSplit(format!(
                "validation fraction {val_fraction} of {n} K-examples leaves an empty side"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut val: Vec<usize> = index::sample(&mut rng, n, n_val).into_vec();
        val.sort_unstable();
        let mut is_val = vec![false; n];
        for &k in &val {
            is_val[k] = true;
        }
        let train: Vec<usize> = (0..n).filter(|&k| !is_val[k]).collect();
        Ok((self.subset(&train), self.subset(&val)))
    }

    /// TSV dump of `i, j, t` rows for debugging.
    pub fn dump_tsv(&self) -> String {
        let mut s = String::from("i\tj\tt\n");
        for (&(i, j), &t) in self.pairs.iter().zip(&self.labels) {
            let _ = writeln!(s, "{i}\t{j}\t{t}");
        }
        s
    }
}

/// All pairs `i <= j` over the training instances with their K-labels.
pub fn make_kexamples<'a>(
    train_labels: &[usize],
    grams: &'a [GramMatrix],
) -> Result<KExampleSet<'a>> {
    let n = train_labels.len();
    if grams.is_empty() {
        return Err(Error::InvalidArgument(
            "K-space needs at least one kernel".into(),
        ));
    }
    if let Some(g) = grams.iter().find(|g| g.n() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: g.n(),
        });
    }
    let mut pairs = Vec::with_capacity(n * (n + 1) / 2);
    let mut labels = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            pairs.push((i, j));
            labels.push(if train_labels[i] == train_labels[j] {
                1
            } else {
                -1
            });
        }
    }
    Ok(KExampleSet::from_parts(
        Source::Grams(grams),
        pairs,
        Vec::new(),
        labels,
    ))
}

/// Subsamples the majority K-class without replacement down to the minority count.
pub fn balance<'a>(set: &KExampleSet<'a>, seed: u64) -> Result<KExampleSet<'a>> {
    let (n_pos, n_neg) = (set.n_pos(), set.n_neg());
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::MissingKClass { n_pos, n_neg });
    }
    if n_pos == n_neg {
        return Ok(set.clone());
    }
    let majority: i8 = if n_pos > n_neg { 1 } else { -1 };
    let minority_count = n_pos.min(n_neg);
    let majority_idx: Vec<usize> = (0..set.len())
        .filter(|&k| set.labels[k] == majority)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; set.len()];
    for pick in index::sample(&mut rng, majority_idx.len(), minority_count) {
        keep[majority_idx[pick]] = true;
    }
    let kept: Vec<usize> = (0..set.len())
        .filter(|&k| set.labels[k] != majority || keep[k])
        .collect();
    Ok(set.subset(&kept))
}

/// Draws `batch_size` examples uniformly with replacement.
pub fn sample_batch<R: Rng + ?Sized>(
    set: &KExampleSet<'_>,
    batch_size: usize,
    rng: &mut R,
) -> KBatch {
    let p = set.p();
    let mut z = Array2::zeros((batch_size, p));
    let mut t = Vec::with_capacity(batch_size);
    for mut row in z.rows_mut() {
        let k = rng.gen_range(0..set.len());
        set.z_into(k, row.as_slice_mut().expect("standard layout"));
        t.push(set.label(k));
    }
    KBatch { z, t }
}
