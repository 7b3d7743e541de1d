//! Primal-dual (Frisch-Newton) interior point method for the fixed-effects
//! quantile regression LP.
//!
//! The LP solved is the bounded dual of the check-loss problem
//!
//! ```text
//!   min  -Y'a   s.t.  Z'a = (1 - tau) Z'1,   0 <= a <= 1,
//! ```
//!
//! where `Z = [unit dummies | X]` is the NT x (N + p) design. The multipliers
//! of the equality constraints are `-(alpha, beta)`. Newton steps need
//! `Z' Theta Z` with `Theta` diagonal; its unit-dummy block is diagonal, so the
//! system is reduced to a dense p x p Schur complement and each iteration
//! costs O(NTp + Np^2).

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::panel::PanelData;
use crate::qrcore::{ParameterPoint, QuantileLevel};

const STEP_FRACTION: f64 = 0.99995;

pub(crate) struct IpmOutcome {
    pub theta: ParameterPoint,
    pub iterations: usize,
    pub converged: bool,
}

/// Factored normal equations `Z' Theta Z`.
struct BlockNormal {
    diag: Vec<f64>,
    // N x p, row-major
    cross: Vec<f64>,
    schur: Cholesky<f64, nalgebra::Dyn>,
}

impl BlockNormal {
    fn build(panel: &PanelData, weights: &[f64]) -> Option<Self> {
        let (n, t, p) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
        let xs = panel.x();
        let mut diag = vec![0.0; n];
        let mut cross = vec![0.0; n * p];
        let mut outer = DMatrix::<f64>::zeros(p, p);
        for i in 0..n {
            let mut d = 0.0;
            let c = &mut cross[i * p..(i + 1) * p];
            for s in 0..t {
                let h = i * t + s;
                let w = weights[h];
                let xh = &xs[h * p..(h + 1) * p];
                d += w;
                for k in 0..p {
                    c[k] += w * xh[k];
                }
                for a in 0..p {
                    let wa = w * xh[a];
                    for b in 0..=a {
                        outer[(a, b)] += wa * xh[b];
                    }
                }
            }
            diag[i] = d;
        }
        for i in 0..n {
            let c = &cross[i * p..(i + 1) * p];
            let inv = 1.0 / diag[i];
            for a in 0..p {
                for b in 0..=a {
                    outer[(a, b)] -= c[a] * c[b] * inv;
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                outer[(b, a)] = outer[(a, b)];
            }
        }
        let schur = Cholesky::new(outer)?;
        Some(Self { diag, cross, schur })
    }

    /// Solves `[D C; C' E] [u; v] = [f; g]` in place (`f` becomes `u`).
    fn solve(&self, f: &mut [f64], g: &[f64]) -> Vec<f64> {
        let p = g.len();
        let mut rhs = DVector::from_column_slice(g);
        for (i, fi) in f.iter().enumerate() {
            let c = &self.cross[i * p..(i + 1) * p];
            let scale = fi / self.diag[i];
            for k in 0..p {
                rhs[k] -= c[k] * scale;
            }
        }
        let v = self.schur.solve(&rhs);
        for (i, fi) in f.iter_mut().enumerate() {
            let c = &self.cross[i * p..(i + 1) * p];
            let cv: f64 = (0..p).map(|k| c[k] * v[k]).sum();
            *fi = (*fi - cv) / self.diag[i];
        }
        v.iter().copied().collect()
    }
}

struct Direction {
    dx: Vec<f64>,
    dz: Vec<f64>,
    dw: Vec<f64>,
    dy_alpha: Vec<f64>,
    dy_beta: Vec<f64>,
}

impl Direction {
    fn new(nobs: usize, n: usize, p: usize) -> Self {
        Self {
            dx: vec![0.0; nobs],
            dz: vec![0.0; nobs],
            dw: vec![0.0; nobs],
            dy_alpha: vec![0.0; n],
            dy_beta: vec![0.0; p],
        }
    }
}

struct State<'a> {
    panel: &'a PanelData,
    // primal
    x: Vec<f64>,
    s: Vec<f64>,
    // dual: y = -(alpha, beta), slacks z (lower bound) and w (upper bound)
    y_alpha: Vec<f64>,
    y_beta: Vec<f64>,
    z: Vec<f64>,
    w: Vec<f64>,
    b_alpha: Vec<f64>,
    b_beta: Vec<f64>,
}

impl State<'_> {
    fn zy(&self, h: usize, t: usize, p: usize, ya: &[f64], yb: &[f64]) -> f64 {
        let xh = &self.panel.x()[h * p..(h + 1) * p];
        ya[h / t] + (0..p).map(|k| xh[k] * yb[k]).sum::<f64>()
    }

    /// Primal residual `b - Z'x`.
    fn primal_residual(&self) -> (Vec<f64>, Vec<f64>) {
        let (n, t, p) = (self.panel.n_units(), self.panel.n_periods(), self.panel.n_regressors());
        let xs = self.panel.x();
        let mut ra = self.b_alpha.clone();
        let mut rb = self.b_beta.clone();
        for i in 0..n {
            for s in 0..t {
                let h = i * t + s;
                ra[i] -= self.x[h];
                for k in 0..p {
                    rb[k] -= self.x[h] * xs[h * p + k];
                }
            }
        }
        (ra, rb)
    }

    fn gap(&self) -> f64 {
        self.x
            .iter()
            .zip(&self.z)
            .zip(self.s.iter().zip(&self.w))
            .map(|((x, z), (s, w))| x * z + s * w)
            .sum()
    }
}

/// Largest step in [0, 1] keeping `v + step * dv` positive (scaled back).
fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut step = f64::INFINITY;
    for (a, d) in v.iter().zip(dv) {
        if *d < 0.0 {
            step = step.min(-a / d);
        }
    }
    step
}

pub(crate) fn solve(
    panel: &PanelData,
    tau: QuantileLevel,
    start: &ParameterPoint,
    max_iterations: usize,
    gap_tol: f64,
) -> IpmOutcome {
    let (n, t, p) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
    let nobs = n * t;
    let tv = tau.value();
    let ys = panel.y();
    let xs = panel.x();

    // b = (1 - tau) Z'1, and x = 1 - tau is primal feasible.
    let b_alpha = vec![(1.0 - tv) * t as f64; n];
    let mut b_beta = vec![0.0; p];
    for h in 0..nobs {
        for k in 0..p {
            b_beta[k] += (1.0 - tv) * xs[h * p + k];
        }
    }

    let y_alpha: Vec<f64> = start.alpha.iter().map(|a| -a).collect();
    let y_beta: Vec<f64> = start.beta.iter().map(|b| -b).collect();
    let resid: Vec<f64> = (0..nobs)
        .map(|h| {
            let xh = &xs[h * p..(h + 1) * p];
            ys[h] - start.alpha[h / t] - (0..p).map(|k| xh[k] * start.beta[k]).sum::<f64>()
        })
        .collect();
    let mean_abs = resid.iter().map(|r| r.abs()).sum::<f64>() / nobs as f64;
    let scale = ys.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    let shift = (0.5 * mean_abs).max(1e-6 * scale);
    // dual feasibility: z - w = -r
    let z: Vec<f64> = resid.iter().map(|r| (-r).max(0.0) + shift).collect();
    let w: Vec<f64> = resid.iter().map(|r| r.max(0.0) + shift).collect();

    let mut st = State {
        panel,
        x: vec![1.0 - tv; nobs],
        s: vec![tv; nobs],
        y_alpha,
        y_beta,
        z,
        w,
        b_alpha,
        b_beta,
    };

    let mut weights = vec![0.0; nobs];
    let mut rd = vec![0.0; nobs];
    let mut rtilde = vec![0.0; nobs];
    let mut r_xz = vec![0.0; nobs];
    let mut r_sw = vec![0.0; nobs];
    let mut aff = Direction::new(nobs, n, p);
    let mut cor = Direction::new(nobs, n, p);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iterations {
        let gap = st.gap();
        if gap / nobs as f64 <= gap_tol {
            converged = true;
            break;
        }
        iterations += 1;

        for h in 0..nobs {
            weights[h] = 1.0 / (st.z[h] / st.x[h] + st.w[h] / st.s[h]);
            // rd = c - Zy - z + w with c = -Y
            rd[h] = -ys[h] - st.zy(h, t, p, &st.y_alpha, &st.y_beta) - st.z[h] + st.w[h];
        }
        let Some(normal) = BlockNormal::build(panel, &weights) else {
            log::debug!("normal equations lost definiteness at iteration {iterations}");
            break;
        };
        let (rp_alpha, rp_beta) = st.primal_residual();

        // predictor
        for h in 0..nobs {
            r_xz[h] = -st.x[h] * st.z[h];
            r_sw[h] = -st.s[h] * st.w[h];
        }
        newton_direction(&st, &normal, &weights, &rd, &r_xz, &r_sw, &rp_alpha, &rp_beta, &mut rtilde, &mut aff);
        let ds_aff: Vec<f64> = aff.dx.iter().map(|d| -d).collect();
        let ap = (STEP_FRACTION * max_step(&st.x, &aff.dx).min(max_step(&st.s, &ds_aff))).min(1.0);
        let ad = (STEP_FRACTION * max_step(&st.z, &aff.dz).min(max_step(&st.w, &aff.dw))).min(1.0);
        let mut mu_aff = 0.0;
        for h in 0..nobs {
            mu_aff += (st.x[h] + ap * aff.dx[h]) * (st.z[h] + ad * aff.dz[h])
                + (st.s[h] + ap * ds_aff[h]) * (st.w[h] + ad * aff.dw[h]);
        }
        let sigma = (mu_aff / gap).powi(3);
        let mu_target = sigma * gap / (2 * nobs) as f64;

        // corrector
        for h in 0..nobs {
            r_xz[h] = mu_target - st.x[h] * st.z[h] - aff.dx[h] * aff.dz[h];
            r_sw[h] = mu_target - st.s[h] * st.w[h] - ds_aff[h] * aff.dw[h];
        }
        newton_direction(&st, &normal, &weights, &rd, &r_xz, &r_sw, &rp_alpha, &rp_beta, &mut rtilde, &mut cor);
        let ds: Vec<f64> = cor.dx.iter().map(|d| -d).collect();
        let ap = (STEP_FRACTION * max_step(&st.x, &cor.dx).min(max_step(&st.s, &ds))).min(1.0);
        let ad = (STEP_FRACTION * max_step(&st.z, &cor.dz).min(max_step(&st.w, &cor.dw))).min(1.0);

        for h in 0..nobs {
            st.x[h] += ap * cor.dx[h];
            st.s[h] += ap * ds[h];
            st.z[h] += ad * cor.dz[h];
            st.w[h] += ad * cor.dw[h];
        }
        for (y, d) in st.y_alpha.iter_mut().zip(&cor.dy_alpha) {
            *y += ad * d;
        }
        for (y, d) in st.y_beta.iter_mut().zip(&cor.dy_beta) {
            *y += ad * d;
        }
        if ap == 0.0 && ad == 0.0 {
            break;
        }
    }
    if !converged && st.gap() / nobs as f64 <= gap_tol {
        converged = true;
    }

    IpmOutcome {
        theta: ParameterPoint::new(
            st.y_alpha.iter().map(|v| -v).collect(),
            st.y_beta.iter().map(|v| -v).collect(),
        ),
        iterations,
        converged,
    }
}

#[allow(clippy::too_many_arguments)]
fn newton_direction(
    st: &State<'_>,
    normal: &BlockNormal,
    weights: &[f64],
    rd: &[f64],
    r_xz: &[f64],
    r_sw: &[f64],
    rp_alpha: &[f64],
    rp_beta: &[f64],
    rtilde: &mut [f64],
    out: &mut Direction,
) {
    let panel = st.panel;
    let (n, t, p) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
    let xs = panel.x();
    let mut f = rp_alpha.to_vec();
    let mut g = rp_beta.to_vec();
    for i in 0..n {
        for s in 0..t {
            let h = i * t + s;
            let rt = rd[h] - r_xz[h] / st.x[h] + r_sw[h] / st.s[h];
            rtilde[h] = rt;
            let wr = weights[h] * rt;
            f[i] += wr;
            for k in 0..p {
                g[k] += wr * xs[h * p + k];
            }
        }
    }
    let v = normal.solve(&mut f, &g);
    for h in 0..n * t {
        let zdy = st.zy(h, t, p, &f, &v);
        let dx = weights[h] * (zdy - rtilde[h]);
        out.dx[h] = dx;
        out.dz[h] = (r_xz[h] - st.z[h] * dx) / st.x[h];
        out.dw[h] = (r_sw[h] + st.w[h] * dx) / st.s[h];
    }
    out.dy_alpha.copy_from_slice(&f);
    out.dy_beta.copy_from_slice(&v);
}
