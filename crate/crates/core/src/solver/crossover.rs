//! Crossover from an approximate optimum to an exact basic solution.
//!
//! A basic solution interpolates N + p observations: at least one per unit
//! (the unit's *anchor*, which pins `alpha_i`) plus p *extra* observations
//! whose differences from their anchors pin `beta`. Every linear solve against
//! such a basis reduces to a p x p system.
//!
//! Starting from the observations with the smallest residuals at the
//! approximate optimum, primal simplex pivots are taken until the basis is
//! dual feasible, i.e. the multipliers of the interpolated observations all
//! lie in `[tau - 1, tau]`.

use nalgebra::{DMatrix, DVector};

use crate::panel::PanelData;
use crate::qrcore::{ParameterPoint, QuantileLevel};

const DUAL_TOL: f64 = 1e-9;
const INDEPENDENCE_TOL: f64 = 1e-9;

pub(crate) struct Vertex {
    pub theta: ParameterPoint,
    pub pivots: usize,
    pub optimal: bool,
}

/// Interpolated observations, grouped by unit; `rows[i][0]` is the anchor.
#[derive(Debug, Clone)]
struct Basis {
    rows: Vec<Vec<usize>>,
}

impl Basis {
    fn extras(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .iter()
            .flat_map(|r| r[1..].iter().map(move |&e| (r[0], e)))
    }

    fn contains(&self, h: usize, t: usize) -> bool {
        self.rows[h / t].contains(&h)
    }

    /// Difference matrix with rows `x_e - x_anchor(e)`.
    fn difference_matrix(&self, panel: &PanelData) -> DMatrix<f64> {
        let p = panel.n_regressors();
        let mut d = DMatrix::zeros(p, p);
        for (row, (a, e)) in self.extras().enumerate() {
            let (xa, xe) = (panel.x_obs(a), panel.x_obs(e));
            for k in 0..p {
                d[(row, k)] = xe[k] - xa[k];
            }
        }
        d
    }

    /// Solves `z_h' theta = rhs(h)` for every basic `h`.
    fn solve<F: Fn(usize) -> f64>(&self, panel: &PanelData, rhs: F) -> Option<ParameterPoint> {
        let p = panel.n_regressors();
        let d = self.difference_matrix(panel);
        let b = DVector::from_iterator(p, self.extras().map(|(a, e)| rhs(e) - rhs(a)));
        let beta = d.lu().solve(&b)?;
        if beta.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let alpha = self
            .rows
            .iter()
            .map(|r| {
                let xa = panel.x_obs(r[0]);
                rhs(r[0]) - (0..p).map(|k| xa[k] * beta[k]).sum::<f64>()
            })
            .collect();
        Some(ParameterPoint::new(alpha, beta.iter().copied().collect()))
    }

    fn swap(&mut self, leaving: usize, entering: usize, t: usize) {
        let unit = &mut self.rows[leaving / t];
        let pos = unit.iter().position(|&h| h == leaving).expect("leaving row is basic");
        unit.remove(pos);
        self.rows[entering / t].push(entering);
        debug_assert!(self.rows.iter().all(|r| !r.is_empty()));
    }
}

fn residuals(panel: &PanelData, theta: &ParameterPoint) -> Vec<f64> {
    crate::qrcore::residual_vec(panel, theta)
}

/// Greedy initial basis from the smallest absolute residuals.
fn initial_basis(panel: &PanelData, resid: &[f64]) -> Option<Basis> {
    let (n, t, p) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
    let mut rows: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let best = (0..t)
                .min_by(|&a, &b| resid[i * t + a].abs().total_cmp(&resid[i * t + b].abs()))
                .expect("T >= 1");
            vec![i * t + best]
        })
        .collect();

    let mut candidates: Vec<usize> = (0..n * t).filter(|&h| rows[h / t][0] != h).collect();
    let by_abs = |a: &usize, b: &usize| resid[*a].abs().total_cmp(&resid[*b].abs());
    let quick = (8 * p + 32).min(candidates.len());
    let mut accepted: Vec<DVector<f64>> = Vec::with_capacity(p);
    let try_candidates = |list: &[usize], rows: &mut Vec<Vec<usize>>, accepted: &mut Vec<DVector<f64>>| {
        for &h in list {
            if accepted.len() == p {
                break;
            }
            let anchor = rows[h / t][0];
            let diff = DVector::from_iterator(
                p,
                (0..p).map(|k| panel.x_obs(h)[k] - panel.x_obs(anchor)[k]),
            );
            let norm = diff.norm();
            if norm == 0.0 {
                continue;
            }
            let mut v = diff.clone();
            for q in accepted.iter() {
                v -= q * q.dot(&v);
            }
            if v.norm() > INDEPENDENCE_TOL * norm {
                accepted.push(v.normalize());
                rows[h / t].push(h);
            }
        }
    };
    if quick > 0 && quick < candidates.len() {
        candidates.select_nth_unstable_by(quick - 1, by_abs);
        let mut head: Vec<usize> = candidates[..quick].to_vec();
        head.sort_by(by_abs);
        try_candidates(&head, &mut rows, &mut accepted);
    }
    if accepted.len() < p {
        candidates.sort_by(by_abs);
        let remaining: Vec<usize> = candidates
            .into_iter()
            .filter(|&h| !rows[h / t].contains(&h))
            .collect();
        try_candidates(&remaining, &mut rows, &mut accepted);
    }
    (accepted.len() == p).then_some(Basis { rows })
}

/// Multipliers of the basic observations (keyed like `basis.rows`).
fn basic_multipliers(
    panel: &PanelData,
    basis: &Basis,
    resid: &[f64],
    tau: f64,
) -> Option<Vec<Vec<f64>>> {
    let (n, t, p) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
    let sign = |r: f64| if r < 0.0 { tau - 1.0 } else { tau };
    let mut unit_sum = vec![0.0; n];
    let mut g = vec![0.0; p];
    for i in 0..n {
        for s in 0..t {
            let h = i * t + s;
            if basis.rows[i].contains(&h) {
                continue;
            }
            let v = sign(resid[h]);
            unit_sum[i] += v;
            let xh = panel.x_obs(h);
            for k in 0..p {
                g[k] += v * xh[k];
            }
        }
    }
    // D' d_extra = -G + sum_i c_i x_anchor(i)
    let mut rhs = DVector::from_iterator(p, g.iter().map(|v| -v));
    for i in 0..n {
        let xa = panel.x_obs(basis.rows[i][0]);
        for k in 0..p {
            rhs[k] += unit_sum[i] * xa[k];
        }
    }
    let d = basis.difference_matrix(panel);
    let extra = d.transpose().lu().solve(&rhs)?;
    let mut next = 0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut m = vec![0.0; basis.rows[i].len()];
        let mut acc = 0.0;
        for slot in m.iter_mut().skip(1) {
            *slot = extra[next];
            acc += extra[next];
            next += 1;
        }
        m[0] = -unit_sum[i] - acc;
        out.push(m);
    }
    Some(out)
}

/// Runs the crossover from `start`. Returns `None` when no nonsingular basis
/// can be formed.
pub(crate) fn refine(
    panel: &PanelData,
    tau: QuantileLevel,
    start: &ParameterPoint,
    max_pivots: usize,
) -> Option<Vertex> {
    let t = panel.n_periods();
    let p = panel.n_regressors();
    let tv = tau.value();
    let mut basis = initial_basis(panel, &residuals(panel, start))?;
    let mut pivots = 0;
    loop {
        let theta = basis.solve(panel, |h| panel.y()[h])?;
        let resid = residuals(panel, &theta);
        let mult = basic_multipliers(panel, &basis, &resid, tv)?;

        // most violated multiplier
        let mut worst: Option<(usize, f64, f64)> = None;
        for (i, row) in basis.rows.iter().enumerate() {
            for (slot, &d) in row.iter().zip(&mult[i]) {
                let violation = (tv - 1.0 - d).max(d - tv);
                if violation > DUAL_TOL && worst.is_none_or(|(_, v, _)| violation > v) {
                    worst = Some((*slot, violation, d));
                }
            }
        }
        let Some((leaving, _, d_leaving)) = worst else {
            return Some(Vertex {
                theta,
                pivots,
                optimal: true,
            });
        };
        if pivots >= max_pivots {
            return Some(Vertex {
                theta,
                pivots,
                optimal: false,
            });
        }

        // Move the leaving residual off zero in the descent direction.
        let sigma = if d_leaving < tv - 1.0 { 1.0 } else { -1.0 };
        let slope0 = sigma * d_leaving + if sigma > 0.0 { 1.0 - tv } else { tv };
        let delta = basis.solve(panel, |h| if h == leaving { sigma } else { 0.0 })?;
        let moves_beta = delta.beta.iter().any(|&v| v != 0.0);
        let units: Vec<usize> = if moves_beta {
            (0..panel.n_units()).collect()
        } else {
            (0..panel.n_units()).filter(|&i| delta.alpha[i] != 0.0).collect()
        };

        let mut breaks: Vec<(f64, f64, usize)> = Vec::new();
        for &i in &units {
            for s in 0..t {
                let h = i * t + s;
                if basis.contains(h, t) {
                    continue;
                }
                let xh = panel.x_obs(h);
                let a = delta.alpha[i] + (0..p).map(|k| xh[k] * delta.beta[k]).sum::<f64>();
                if a == 0.0 {
                    continue;
                }
                let step = resid[h] / a;
                if step > 0.0 || (resid[h] == 0.0 && a > 0.0) {
                    breaks.push((step.max(0.0), a.abs(), h));
                }
            }
        }
        breaks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        let mut slope = slope0;
        let mut entering = None;
        for &(_, jump, h) in &breaks {
            slope += jump;
            if slope >= 0.0 {
                entering = Some(h);
                break;
            }
        }
        let entering = entering?;
        basis.swap(leaving, entering, t);
        pivots += 1;
    }
}
