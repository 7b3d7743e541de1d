//! Flat `key = value` study configuration files.
//!
//! Keys are the field names of [`DgpConfig`] and [`StudyConfig`]. `n_units`,
//! `n_periods` and `taus` take comma-separated lists; listing several sizes
//! expands into one study per (N, T) pair, N varying slowest. `#` starts a
//! comment.

use std::collections::BTreeMap;
use std::path::Path;

use super::dgp::DgpConfig;
use super::study::StudyConfig;
use super::SimulationError;
use crate::covariance::BandwidthRule;
use crate::qrcore::QuantileLevel;

const KEYS: [&str; 11] = [
    "beta",
    "gamma_scale",
    "n_units",
    "n_periods",
    "taus",
    "common_shock",
    "base_seed",
    "replications",
    "level",
    "bandwidth_rule",
    "workers",
];

fn bad(line: usize, msg: impl std::fmt::Display) -> SimulationError {
    SimulationError::InvalidConfig(format!("line {line}: {msg}"))
}

fn parse_one<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, SimulationError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| bad(line, format!("{key}: cannot parse {v:?}: {e}")))
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>, SimulationError>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_one(line, key, s))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(bad(line, format!("{key}: empty list")));
    }
    Ok(items)
}

/// Parses a configuration into one study per (N, T) pair.
pub fn parse_config(text: &str) -> Result<Vec<StudyConfig>, SimulationError> {
    let mut seen: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| bad(line, format!("expected `key = value`, got {content:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let Some(&known) = KEYS.iter().find(|&&k| k == key) else {
            return Err(bad(line, format!("unknown key {key:?}")));
        };
        if let Some((first, _)) = seen.insert(known, (line, value)) {
            return Err(bad(line, format!("{key} already set on line {first}")));
        }
    }

    let mut base = StudyConfig::default();
    let mut sizes_n = vec![base.dgp.n_units];
    let mut sizes_t = vec![base.dgp.n_periods];
    for (&key, &(line, v)) in &seen {
        match key {
            "beta" => base.dgp.beta = parse_one(line, key, v)?,
            "gamma_scale" => base.dgp.gamma_scale = parse_one(line, key, v)?,
            "n_units" => sizes_n = parse_list(line, key, v)?,
            "n_periods" => sizes_t = parse_list(line, key, v)?,
            "taus" => {
                base.dgp.taus = parse_list::<f64>(line, key, v)?
                    .into_iter()
                    .map(|t| QuantileLevel::new(t).map_err(|e| bad(line, e)))
                    .collect::<Result<_, _>>()?
            }
            "common_shock" => base.dgp.common_shock = parse_one(line, key, v)?,
            "base_seed" => base.dgp.base_seed = parse_one(line, key, v)?,
            "replications" => base.replications = parse_one(line, key, v)?,
            "level" => base.level = parse_one(line, key, v)?,
            "bandwidth_rule" => {
                base.bandwidth_rule = match v {
                    "SilvermanN" => BandwidthRule::SilvermanN,
                    "SilvermanNT" => BandwidthRule::SilvermanNT,
                    other => return Err(bad(line, format!("bandwidth_rule must be SilvermanN or SilvermanNT, got {other:?}"))),
                }
            }
            "workers" => base.workers = parse_one(line, key, v)?,
            _ => unreachable!("key list is exhaustive"),
        }
    }

    let mut studies = Vec::with_capacity(sizes_n.len() * sizes_t.len());
    for &n in &sizes_n {
        for &t in &sizes_t {
            let study = StudyConfig {
                dgp: DgpConfig {
                    n_units: n,
                    n_periods: t,
                    ..base.dgp.clone()
                },
                ..base.clone()
            };
            study.validate()?;
            studies.push(study);
        }
    }
    Ok(studies)
}

pub fn load_config(path: &Path) -> Result<Vec<StudyConfig>, SimulationError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SimulationError::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}
