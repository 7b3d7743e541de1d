#![allow(dead_code, clippy::needless_range_loop)]

use feqr::simulation::rng::{Component, Stream};
use feqr::{PanelData, QuantileLevel};
use nalgebra::{DMatrix, DVector};

/// Panel with continuous random entries (ties have probability zero).
pub fn random_panel(seed: u64, n: usize, t: usize, p: usize) -> PanelData {
    let mut s = Stream::new(seed, 0, Component::Epsilon);
    let mut x = Vec::with_capacity(n * t * p);
    let mut y = Vec::with_capacity(n * t);
    for i in 0..n {
        for _ in 0..t {
            let xs: Vec<f64> = (0..p).map(|_| 2.0 * s.normal() + 0.5 * i as f64).collect();
            let signal: f64 = xs.iter().enumerate().map(|(k, v)| (k as f64 + 1.0) * 0.5 * v).sum();
            y.push(i as f64 + signal + (1.0 + 0.1 * xs[0].abs()) * s.normal());
            x.extend(xs);
        }
    }
    PanelData::with_default_ids(n, t, p, y, x).unwrap()
}

pub fn uniform_draws(seed: u64, k: usize) -> Vec<f64> {
    let mut s = Stream::new(seed, 1, Component::Alpha);
    (0..k).map(|_| s.uniform()).collect()
}

fn rho(u: f64, tau: f64) -> f64 {
    u * (tau - if u < 0.0 { 1.0 } else { 0.0 })
}

/// Objective at (alpha, beta), evaluated with a plain double loop.
pub fn naive_objective(panel: &PanelData, alpha: &[f64], beta: &[f64], tau: f64) -> f64 {
    let (n, t, p) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
    let mut total = 0.0;
    for i in 0..n {
        for s in 0..t {
            let x = panel.x_at(i, s);
            let fitted = alpha[i] + (0..p).map(|k| x[k] * beta[k]).sum::<f64>();
            total += rho(panel.y_at(i, s) - fitted, tau);
        }
    }
    total / (n * t) as f64
}

/// Minimum of the objective over every basic solution: each choice of N + p
/// observations whose interpolation system is nonsingular.
pub fn enumeration_oracle(panel: &PanelData, tau: QuantileLevel) -> f64 {
    let (n, t, p) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
    let k = n + p;
    let nt = n * t;
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let mut a = DMatrix::zeros(k, k);
        let mut b = DVector::zeros(k);
        for (row, &h) in idx.iter().enumerate() {
            let (i, s) = (h / t, h % t);
            a[(row, i)] = 1.0;
            for q in 0..p {
                a[(row, n + q)] = panel.x_at(i, s)[q];
            }
            b[row] = panel.y_at(i, s);
        }
        let lu = a.clone().lu();
        if lu.determinant().abs() > 1e-10 {
            if let Some(sol) = lu.solve(&b) {
                let alpha: Vec<f64> = sol.iter().take(n).copied().collect();
                let beta: Vec<f64> = sol.iter().skip(n).copied().collect();
                best = best.min(naive_objective(panel, &alpha, &beta, tau.value()));
            }
        }
        // next k-combination of 0..nt
        let mut j = k;
        while j > 0 && idx[j - 1] == nt - k + j - 1 {
            j -= 1;
        }
        if j == 0 {
            return best;
        }
        idx[j - 1] += 1;
        for m in j..k {
            idx[m] = idx[m - 1] + 1;
        }
    }
}

/// Gaussian kernel written out independently of the library.
pub fn gauss_kernel(u: f64, h: f64) -> f64 {
    (-0.5 * (u / h).powi(2)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt())
}

/// Jacobian estimate computed term by term from its definition.
pub fn gamma_termwise(panel: &PanelData, resid: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let (n, t, p) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
    let mut out = DMatrix::zeros(p, p);
    for i in 0..n {
        let mut f = 0.0;
        let mut g = vec![0.0; p];
        for s in 0..t {
            let w = gauss_kernel(resid[(i, s)], h);
            f += w;
            for k in 0..p {
                g[k] += w * panel.x_at(i, s)[k];
            }
        }
        for gk in g.iter_mut() {
            *gk /= f;
        }
        for s in 0..t {
            let w = gauss_kernel(resid[(i, s)], h);
            let x = panel.x_at(i, s);
            for a in 0..p {
                for b in 0..p {
                    out[(a, b)] += w * x[a] * (x[b] - g[b]);
                }
            }
        }
    }
    out / (n * t) as f64
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn is_symmetric(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|a| (0..m.ncols()).all(|b| m[(a, b)] == m[(b, a)]))
}

/// Symmetric positive semidefinite up to rounding relative to the trace.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    let scale = m.trace().abs().max(f64::MIN_POSITIVE);
    min_eigenvalue(m) >= -1e-12 * scale
}

/// Kolmogorov-Smirnov distance between `sample` and the CDF `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}
