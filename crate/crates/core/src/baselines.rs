//! Comparison weightings: target alignment, uniform average and best single kernel.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SplitPlan;
use crate::error::{Error, Result};
use crate::kernels::GramMatrix;
use crate::svm::{select_c, SmoOptions};

pub const ALIGN_RESTARTS: usize = 10;
pub const ALIGN_STEPS: usize = 500;

/// Frobenius inner products of the base Grams and their alignment with the target.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentProblem {
    /// `m[k][l] = <K_k, K_l>`
    pub m: Array2<f64>,
    /// `a[l] = <K_l, K_t>`
    pub a: Vec<f64>,
}

impl AlignmentProblem {
    /// Target entries are `+1` for same-class pairs and `-1` otherwise, which is
    /// `y_i y_j` for two classes.
    pub fn from_grams(grams: &[GramMatrix], labels: &[usize]) -> Result<Self> {
        let p = grams.len();
        if p == 0 {
            return Err(Error::InvalidArgument(
                "alignment needs at least one kernel".into(),
            ));
        }
        let n = labels.len();
        if let Some(g) = grams.iter().find(|g| g.n() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: g.n(),
            });
        }
        let first = labels.first().copied();
        if labels.iter().all(|&l| Some(l) == first) {
            return Err(Error::SingleClass);
        }
        let a: Vec<f64> = grams
            .par_iter()
            .map(|g| {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let t = if labels[i] == labels[j] { 1.0 } else { -1.0 };
                        s += g.values[[i, j]] * t;
                    }
                }
                s
            })
            .collect();
        let rows: Vec<Vec<f64>> = (0..p)
            .into_par_iter()
            .map(|k| {
                (0..p)
                    .map(|l| {
                        if l < k {
                            return f64::NAN; // filled from the upper triangle below
                        }
                        grams[k]
                            .values
                            .iter()
                            .zip(grams[l].values.iter())
                            .map(|(x, y)| x * y)
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let mut m = Array2::zeros((p, p));
        for k in 0..p {
            for l in k..p {
                m[[k, l]] = rows[k][l];
                m[[l, k]] = rows[k][l];
            }
        }
        Ok(AlignmentProblem { m, a })
    }

    pub fn p(&self) -> usize {
        self.a.len()
    }

    /// `mu'a / sqrt(mu'M mu)`; `-inf` when the denominator vanishes.
    pub fn objective(&self, mu: &[f64]) -> f64 {
        let num: f64 = mu.iter().zip(&self.a).map(|(m, a)| m * a).sum();
        let den = self.quad(mu);
        if den <= 0.0 {
            f64::NEG_INFINITY
        } else {
            num / den.sqrt()
        }
    }

    fn m_times(&self, mu: &[f64]) -> Vec<f64> {
        self.m
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(mu).map(|(x, y)| x * y).sum())
            .collect()
    }

    fn quad(&self, mu: &[f64]) -> f64 {
        self.m_times(mu).iter().zip(mu).map(|(x, y)| x * y).sum()
    }

    fn gradient(&self, mu: &[f64]) -> Vec<f64> {
        let mm = self.m_times(mu);
        let q: f64 = mm.iter().zip(mu).map(|(x, y)| x * y).sum();
        let s = q.sqrt();
        let num: f64 = mu.iter().zip(&self.a).map(|(m, a)| m * a).sum();
        self.a
            .iter()
            .zip(&mm)
            .map(|(a, mmu)| a / s - num * mmu / (s * s * s))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub mu: Vec<f64>,
    pub objective: f64,
    /// No restart found a positively aligned direction; `mu` is uniform.
    pub fell_back: bool,
}

fn project_unit(v: &mut [f64]) -> bool {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

/// Projected gradient ascent on the alignment over the non-negative unit sphere,
/// restarted from random non-negative points; the best restart wins.
pub fn solve_alignment(
    problem: &AlignmentProblem,
    seed: u64,
    restarts: usize,
    steps: usize,
) -> AlignmentResult {
    let p = problem.p();
    if p == 1 {
        return AlignmentResult {
            mu: vec![1.0],
            objective: problem.objective(&[1.0]),
            fell_back: false,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let mut mu: Vec<f64> = (0..p).map(|_| rng.gen::<f64>() + 1e-3).collect();
        project_unit(&mut mu);
        let mut f = problem.objective(&mu);
        let mut step = 0.1;
        for _ in 0..steps {
            let g = problem.gradient(&mu);
            let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(gnorm > 0.0) || !gnorm.is_finite() {
                break;
            }
            let mut improved = false;
            for _ in 0..40 {
                let mut cand: Vec<f64> = mu
                    .iter()
                    .zip(&g)
                    .map(|(m, d)| m + step * d / gnorm)
                    .collect();
                if project_unit(&mut cand) {
                    let fc = problem.objective(&cand);
                    if fc > f {
                        mu = cand;
                        f = fc;
                        improved = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
            step = (step * 2.0).min(1.0);
        }
        if best.as_ref().is_none_or(|(_, bf)| f > *bf) {
            best = Some((mu, f));
        }
    }
    let (mu, objective) = best.expect("at least one restart");
    if !(objective > 0.0) {
        log::warn!("target alignment found no positively aligned direction; using uniform weights");
        let mut uniform = vec![1.0; p];
        project_unit(&mut uniform);
        return AlignmentResult {
            objective: problem.objective(&uniform),
            mu: uniform,
            fell_back: true,
        };
    }
    AlignmentResult {
        mu,
        objective,
        fell_back: false,
    }
}

pub fn target_align(grams: &[GramMatrix], labels: &[usize], seed: u64) -> Result<AlignmentResult> {
    let problem = AlignmentProblem::from_grams(grams, labels)?;
    Ok(solve_alignment(&problem, seed, ALIGN_RESTARTS, ALIGN_STEPS))
}

pub fn uniform_weights(p: usize) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(Error::InvalidArgument("uniform weights need p >= 1".into()));
    }
    Ok(vec![1.0 / p as f64; p])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestKernel {
    pub index: usize,
    pub mu: Vec<f64>,
    pub cv_accuracy: Vec<Option<f64>>,
}

/// The base kernel with the highest cross-validated SVM accuracy (ties to the lower index).
pub fn best_kernel(
    grams: &[GramMatrix],
    labels: &[usize],
    num_classes: usize,
    folds: &[SplitPlan],
    c_grid: &[f64],
    opts: &SmoOptions,
) -> Result<BestKernel> {
    if grams.is_empty() {
        return Err(Error::InvalidArgument("best kernel needs p >= 1".into()));
    }
    let cv_accuracy: Vec<Option<f64>> = grams
        .par_iter()
        .enumerate()
        .map(
            |(l, g)| match select_c(g, labels, num_classes, folds, c_grid, opts) {
                Ok(sel) => Some(sel.cv_accuracy),
                Err(e) => {
                    log::warn!("best kernel: kernel {l} skipped: {e}");
                    None
                }
            },
        )
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (l, acc) in cv_accuracy.iter().enumerate() {
        if let Some(acc) = *acc {
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((l, acc));
            }
        }
    }
    let (index, _) = best
        .ok_or_else(|| Error::AllCandidatesFailed("no kernel could be cross-validated".into()))?;
    let mut mu = vec![0.0; grams.len()];
    mu[index] = 1.0;
    Ok(BestKernel {
        index,
        mu,
        cv_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn problem(m: Array2<f64>, a: Vec<f64>) -> AlignmentProblem {
        AlignmentProblem { m, a }
    }

    #[test]
    fn single_kernel_weight_is_one() {
        let p = problem(array![[2.0]], vec![1.0]);
        assert_eq!(solve_alignment(&p, 0, 10, 500).mu, vec![1.0]);
    }

    #[test]
    fn interior_optimum() {
        let p = problem(Array2::eye(2), vec![3.0, 1.0]);
        let r = solve_alignment(&p, 0, 10, 500);
        assert!((r.mu[0] - 3.0 / 10f64.sqrt()).abs() < 1e-4);
        assert!((r.mu[1] - 1.0 / 10f64.sqrt()).abs() < 1e-4);
        assert!((r.objective - 10f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn boundary_optimum() {
        let p = problem(Array2::eye(2), vec![3.0, -1.0]);
        let r = solve_alignment(&p, 0, 10, 500);
        assert_eq!(r.mu, vec![1.0, 0.0]);
        assert!((r.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn no_aligned_direction_falls_back() {
        let p = problem(Array2::eye(3), vec![-1.0, -2.0, -0.5]);
        let r = solve_alignment(&p, 0, 3, 50);
        assert!(r.fell_back);
        assert!(r.mu.iter().all(|&m| (m - 1.0 / 3f64.sqrt()).abs() < 1e-12));
    }

    #[test]
    fn uniform() {
        assert_eq!(uniform_weights(4).unwrap(), vec![0.25; 4]);
        assert_eq!(uniform_weights(1).unwrap(), vec![1.0]);
        assert!(uniform_weights(0).is_err());
        let g = GramMatrix::raw(array![[1.0, 0.3], [0.3, 2.0]]);
        let grams = vec![g.clone(), g.clone(), g.clone(), g.clone()];
        let mu = uniform_weights(4).unwrap();
        assert_eq!(
            crate::kernels::combine(&grams, &mu).unwrap().values,
            g.values
        );
    }

    #[test]
    fn from_grams_matches_definition() {
        let k1 = GramMatrix::raw(array![[1.0, 0.5], [0.5, 1.0]]);
        let k2 = GramMatrix::raw(array![[2.0, -1.0], [-1.0, 2.0]]);
        let pr = AlignmentProblem::from_grams(&[k1, k2], &[0, 1]).unwrap();
        // target = [[1,-1],[-1,1]]
        assert_eq!(pr.a, vec![1.0, 6.0]);
        assert_eq!(pr.m, array![[2.5, 3.0], [3.0, 10.0]]);
    }

    fn separable_and_noise() -> (Vec<GramMatrix>, Vec<usize>) {
        let labels: Vec<usize> = (0..16).map(|i| usize::from(i >= 8)).collect();
        let good: Vec<f64> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| l as f64 * 4.0 + (i % 3) as f64 * 0.1)
            .collect();
        let noise: Vec<f64> = (0..16).map(|i| ((i * 7919) % 13) as f64 / 13.0).collect();
        let rbf = |x: &[f64]| {
            GramMatrix::raw(Array2::from_shape_fn((16, 16), |(i, j)| {
                (-(x[i] - x[j]).powi(2)).exp()
            }))
        };
        (vec![rbf(&noise), rbf(&good), rbf(&noise)], labels)
    }

    #[test]
    fn best_kernel_picks_the_separating_kernel() {
        let (grams, labels) = separable_and_noise();
        let folds = crate::data::kfold_plan(16, 4, 2).unwrap();
        let r = best_kernel(
            &grams,
            &labels,
            2,
            &folds,
            &[1.0, 10.0],
            &SmoOptions::default(),
        )
        .unwrap();
        assert_eq!(r.index, 1);
        assert_eq!(r.mu, vec![0.0, 1.0, 0.0]);
        let one = best_kernel(
            &grams[..1],
            &labels,
            2,
            &folds,
            &[1.0],
            &SmoOptions::default(),
        )
        .unwrap();
        assert_eq!(one.index, 0);
    }
}
