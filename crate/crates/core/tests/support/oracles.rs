//! Brute-force reference solvers, independent of the library's solvers.
//!
//! Shared by the core integration tests and the acceptance suite.
#![allow(dead_code)]

use ndarray::Array2;

/// `lambda/2 |mu|^2 + mean_k [1 - t_k mu.z_k]_+` evaluated directly.
pub fn kspace_objective(mu: &[f64], z: &Array2<f64>, t: &[f64], lambda: f64) -> f64 {
    let reg = 0.5 * lambda * mu.iter().map(|m| m * m).sum::<f64>();
    let hinge: f64 = z
        .rows()
        .into_iter()
        .zip(t)
        .map(|(row, &tk)| {
            let s: f64 = row.iter().zip(mu).map(|(a, b)| a * b).sum();
            (1.0 - tk * s).max(0.0)
        })
        .sum::<f64>()
        / t.len() as f64;
    reg + hinge
}

fn grid_points(lo: &[f64], hi: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let p = lo.len();
    let mut out = Vec::new();
    let total = per_axis.pow(p as u32);
    for code in 0..total {
        let mut c = code;
        let mut point = Vec::with_capacity(p);
        for d in 0..p {
            let k = c % per_axis;
            c /= per_axis;
            point.push(lo[d] + (hi[d] - lo[d]) * k as f64 / (per_axis - 1) as f64);
        }
        out.push(point);
    }
    out
}

/// Minimizes the K-space objective over `mu >= 0` by grid search and
/// `passes` refinements around the incumbent. The initial box is
/// `[0, sqrt(2/lambda)]^p`, which contains the optimum since
/// `lambda/2 |mu*|^2 <= F(0) = 1`.
pub fn kspace_qp_bruteforce(
    z: &Array2<f64>,
    t: &[f64],
    lambda: f64,
    passes: usize,
) -> (Vec<f64>, f64) {
    let p = z.ncols();
    let per_axis = match p {
        1 => 2001,
        2 => 201,
        _ => 41,
    };
    let radius = (2.0 / lambda).sqrt();
    let mut lo = vec![0.0; p];
    let mut hi = vec![radius; p];
    let mut best = (vec![0.0; p], kspace_objective(&vec![0.0; p], z, t, lambda));
    for _ in 0..=passes {
        for point in grid_points(&lo, &hi, per_axis) {
            let f = kspace_objective(&point, z, t, lambda);
            if f < best.1 {
                best = (point, f);
            }
        }
        for d in 0..p {
            let h = (hi[d] - lo[d]) / (per_axis - 1) as f64;
            lo[d] = (best.0[d] - 2.0 * h).max(0.0);
            hi[d] = best.0[d] + 2.0 * h;
        }
    }
    best
}

/// `mu'a / sqrt(mu'M mu)` evaluated directly.
pub fn alignment_objective(mu: &[f64], m: &Array2<f64>, a: &[f64]) -> f64 {
    let p = mu.len();
    let num: f64 = mu.iter().zip(a).map(|(x, y)| x * y).sum();
    let mut q = 0.0;
    for k in 0..p {
        for l in 0..p {
            q += mu[k] * m[[k, l]] * mu[l];
        }
    }
    if q <= 0.0 {
        f64::NEG_INFINITY
    } else {
        num / q.sqrt()
    }
}

/// Dense grid over the non-negative unit sphere (`per_axis` angles per
/// spherical coordinate) for `p <= 3`.
pub fn alignment_grid_max(m: &Array2<f64>, a: &[f64], per_axis: usize) -> (Vec<f64>, f64) {
    let p = a.len();
    let half_pi = std::f64::consts::FRAC_PI_2;
    let angle = |k: usize| half_pi * k as f64 / (per_axis - 1) as f64;
    let mut best = (vec![], f64::NEG_INFINITY);
    let mut consider = |mu: Vec<f64>| {
        let f = alignment_objective(&mu, m, a);
        if f > best.1 {
            best = (mu, f);
        }
    };
    match p {
        1 => consider(vec![1.0]),
        2 => (0..per_axis).for_each(|k| consider(vec![angle(k).cos(), angle(k).sin()])),
        3 => {
            for k in 0..per_axis {
                for l in 0..per_axis {
                    let (th, ph) = (angle(k), angle(l));
                    consider(vec![th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]);
                }
            }
        }
        _ => panic!("grid oracle supports p <= 3"),
    }
    best
}

/// Projects `v` onto `{0 <= a <= c, y'a = 0}` by bisection on the multiplier.
fn project_dual(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let residual = |nu: f64| -> f64 {
        v.iter()
            .zip(y)
            .map(|(vi, yi)| yi * (vi - nu * yi).clamp(0.0, c))
            .sum()
    };
    let bound = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let nu = 0.5 * (lo + hi);
    v.iter()
        .zip(y)
        .map(|(vi, yi)| (vi - nu * yi).clamp(0.0, c))
        .collect()
}

/// SVM dual by long-run projected gradient ascent. Returns (alpha, bias).
pub fn svm_dual_bruteforce(k: &Array2<f64>, y: &[f64], c: f64, steps: usize) -> (Vec<f64>, f64) {
    let n = y.len();
    let q = Array2::from_shape_fn((n, n), |(i, j)| y[i] * y[j] * k[[i, j]]);
    // largest eigenvalue of Q by power iteration
    let mut v = vec![1.0; n];
    let mut lmax = 1.0;
    for _ in 0..500 {
        let w: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| q[[i, j]] * v[j]).sum())
            .collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lmax = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / norm).collect();
    }
    let eta = 1.0 / lmax.max(1e-12);
    let mut alpha = vec![0.0; n];
    let mut qa = vec![0.0; n];
    for _ in 0..steps {
        let cand: Vec<f64> = (0..n).map(|i| alpha[i] + eta * (1.0 - qa[i])).collect();
        alpha = project_dual(&cand, y, c);
        for i in 0..n {
            qa[i] = (0..n).map(|j| q[[i, j]] * alpha[j]).sum();
        }
    }
    // bias from KKT: free vectors satisfy y_i f(x_i) = 1
    let f_no_bias: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| alpha[j] * y[j] * k[[i, j]]).sum())
        .collect();
    let eps = 1e-7 * c.max(1.0);
    let free: Vec<usize> = (0..n)
        .filter(|&i| alpha[i] > eps && alpha[i] < c - eps)
        .collect();
    let bias = if !free.is_empty() {
        free.iter().map(|&i| y[i] - f_no_bias[i]).sum::<f64>() / free.len() as f64
    } else {
        // feasible interval for b from the bound constraints
        let mut lb = f64::NEG_INFINITY;
        let mut ub = f64::INFINITY;
        for i in 0..n {
            let r = y[i] - f_no_bias[i];
            let at_zero = alpha[i] <= eps;
            // alpha = 0 needs y f >= 1; alpha = C needs y f <= 1
            if (at_zero && y[i] > 0.0) || (!at_zero && y[i] < 0.0) {
                lb = lb.max(r);
            } else {
                ub = ub.min(r);
            }
        }
        0.5 * (lb + ub)
    };
    (alpha, bias)
}

pub fn dual_value(alpha: &[f64], k: &Array2<f64>, y: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k[[i, j]];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}
