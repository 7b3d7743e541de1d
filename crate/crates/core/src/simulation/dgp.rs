//! Location-scale panel design with an optional common shock:
//!
//! ```text
//!   Y_it = a_i + beta X_it + (1 + gamma X_it) U_it
//!   X_it = chi2_it(3) + 0.3 a_i,   a_i ~ U(0, 1)
//!   U_it = (e_it + eta_t) / sqrt(2)     (or e_it without the shock)
//! ```

use std::f64::consts::FRAC_1_SQRT_2;

use super::rng::{Component, Stream};
use super::SimulationError;
use crate::inference::normal_quantile;
use crate::panel::PanelData;
use crate::qrcore::QuantileLevel;

#[derive(Debug, Clone, PartialEq)]
pub struct DgpConfig {
    pub beta: f64,
    pub gamma_scale: f64,
    pub n_units: usize,
    pub n_periods: usize,
    pub taus: Vec<QuantileLevel>,
    pub common_shock: bool,
    pub base_seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            gamma_scale: 0.2,
            n_units: 250,
            n_periods: 25,
            taus: [0.25, 0.5, 0.75]
                .iter()
                .map(|&t| QuantileLevel::new(t).expect("valid default"))
                .collect(),
            common_shock: true,
            base_seed: 20_240_601,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |msg: String| Err(SimulationError::InvalidConfig(msg));
        if self.n_units < 2 {
            return bad(format!("n_units must be at least 2, got {}", self.n_units));
        }
        if self.n_periods < 3 {
            return bad(format!("n_periods must be at least 3, got {}", self.n_periods));
        }
        if self.taus.is_empty() {
            return bad("taus must not be empty".into());
        }
        if let Some(t) = self.taus.iter().find(|t| !(t.value() > 0.0 && t.value() < 1.0)) {
            return bad(format!("tau must lie in (0, 1), got {}", t.value()));
        }
        if !self.beta.is_finite() || !self.gamma_scale.is_finite() {
            return bad("beta and gamma_scale must be finite".into());
        }
        Ok(())
    }
}

/// `beta + gamma * q_tau` with `q_tau` the standard normal quantile.
pub fn true_slope(tau: QuantileLevel, beta: f64, gamma_scale: f64) -> f64 {
    beta + gamma_scale * normal_quantile(tau.value()).expect("QuantileLevel lies in (0, 1)")
}

/// Draws replication `replication_index` of the design.
pub fn generate_panel(dgp: &DgpConfig, replication_index: u64) -> Result<PanelData, SimulationError> {
    dgp.validate()?;
    let (n, t) = (dgp.n_units, dgp.n_periods);
    let stream = |c| Stream::new(dgp.base_seed, replication_index, c);

    let mut s_alpha = stream(Component::Alpha);
    let alpha: Vec<f64> = (0..n).map(|_| s_alpha.uniform()).collect();

    let mut s_chi = stream(Component::ChiSquare);
    let mut x = Vec::with_capacity(n * t);
    for &a in &alpha {
        for _ in 0..t {
            let chi2: f64 = (0..3).map(|_| s_chi.normal().powi(2)).sum();
            x.push(chi2 + 0.3 * a);
        }
    }

    let mut s_eps = stream(Component::Epsilon);
    let eps: Vec<f64> = (0..n * t).map(|_| s_eps.normal()).collect();
    let eta: Vec<f64> = if dgp.common_shock {
        let mut s_eta = stream(Component::Eta);
        (0..t).map(|_| s_eta.normal()).collect()
    } else {
        Vec::new()
    };

    let mut y = Vec::with_capacity(n * t);
    for i in 0..n {
        for s in 0..t {
            let h = i * t + s;
            let u = if dgp.common_shock {
                (eps[h] + eta[s]) * FRAC_1_SQRT_2
            } else {
                eps[h]
            };
            y.push(alpha[i] + dgp.beta * x[h] + (1.0 + dgp.gamma_scale * x[h]) * u);
        }
    }
    Ok(PanelData::with_default_ids(n, t, 1, y, x)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn true_slope_examples() {
        let q = |t| QuantileLevel::new(t).unwrap();
        assert_eq!(true_slope(q(0.5), 1.0, 0.2), 1.0);
        assert!((true_slope(q(0.75), 1.0, 0.2) - 1.134_897_950_039_216).abs() < 1e-12);
        assert_eq!(true_slope(q(0.25), 1.0, 0.0), 1.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let dgp = DgpConfig {
            n_units: 5,
            n_periods: 4,
            ..DgpConfig::default()
        };
        let a = generate_panel(&dgp, 3).unwrap();
        let b = generate_panel(&dgp, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_panel(&dgp, 4).unwrap());
    }

    #[test]
    fn invalid_configs() {
        let base = DgpConfig::default();
        for dgp in [
            DgpConfig { n_units: 1, ..base.clone() },
            DgpConfig { n_periods: 2, ..base.clone() },
            DgpConfig { taus: vec![], ..base.clone() },
        ] {
            assert!(dgp.validate().is_err());
        }
    }
}
