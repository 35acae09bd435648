//! Constraint tightening from error scenarios.
//!
//! For each half-space `h` the tightening `c` is the largest projection
//! `h^T xi` left after discarding the `N_d` largest ones, where
//!
//! ```text
//!   N_d = max(0, floor((1-p) N_s - sqrt(2 (1-p) N_s ln(1/beta))))
//! ```
//!
//! With confidence `1 - beta`, `Pr(h^T xi <= c) >= p`. For Gaussian linear
//! errors the quantile shortcut `Phi^{-1}(p) sqrt(h^T Sigma h)` is also provided.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::error_sim::{ErrorBank, ErrorMoments};
use crate::network::{ConstraintKind, ConstraintSet, HalfSpace};

#[derive(Debug, Error)]
pub enum TighteningError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("all {n_samples} samples would be discarded (N_d = {n_discard})")]
    AllDiscarded { n_samples: usize, n_discard: usize },
    #[error("no samples for subsystem {owner} at t = {t}")]
    MissingSamples { owner: usize, t: usize },
    #[error("covariance is not positive semidefinite")]
    NotPsd,
    #[error("no tightening entry {kind} i={owner} j={index} t={t}")]
    MissingEntry {
        kind: &'static str,
        owner: usize,
        index: usize,
        t: usize,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed tightening file {path}: {reason}")]
    Format { path: String, reason: String },
}

/// Number of scenarios that may be discarded.
pub fn discard_count(n_samples: usize, probability: f64, beta: f64) -> Result<usize, TighteningError> {
    if n_samples < 1 {
        return Err(TighteningError::InvalidParameter("N_s must be at least 1".into()));
    }
    if !(probability > 0.0 && probability <= 1.0) {
        return Err(TighteningError::InvalidParameter(format!("p = {probability} outside (0,1]")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(TighteningError::InvalidParameter(format!("beta = {beta} outside (0,1)")));
    }
    let ns = n_samples as f64;
    let q = 1.0 - probability;
    let raw = q * ns - (2.0 * q * ns * (1.0 / beta).ln()).sqrt();
    Ok(if raw > 0.0 { raw.floor() as usize } else { 0 })
}

/// `c` from precomputed projections `h^T xi^(l)` and a discard count.
///
/// Sorting descending (stable, so ties keep the lowest sample index first)
/// and skipping `N_d` entries matches the greedy argmax-discard loop.
pub fn tighten_projections(projections: &[f64], n_discard: usize) -> Result<f64, TighteningError> {
    if n_discard >= projections.len() {
        return Err(TighteningError::AllDiscarded {
            n_samples: projections.len(),
            n_discard,
        });
    }
    if projections.iter().any(|v| !v.is_finite()) {
        return Err(TighteningError::InvalidParameter("non-finite sample projection".into()));
    }
    if n_discard == 0 {
        return Ok(projections.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    let mut sorted = projections.to_vec();
    // partial selection is enough: the (N_d)-th largest value
    let (_, nth, _) = sorted.select_nth_unstable_by(n_discard, |a, b| b.total_cmp(a));
    Ok(*nth)
}

/// Single half-space tightening over vector samples.
pub fn tighten_halfspace(
    direction: &DVector<f64>,
    samples: &[&[f64]],
    probability: f64,
    beta: f64,
) -> Result<f64, TighteningError> {
    if samples.is_empty() {
        return Err(TighteningError::InvalidParameter("no samples".into()));
    }
    let n_discard = discard_count(samples.len(), probability, beta)?;
    let proj: Vec<f64> = samples
        .iter()
        .map(|s| direction.iter().zip(s.iter()).map(|(a, b)| a * b).sum())
        .collect();
    tighten_projections(&proj, n_discard)
}

/// Tightening values of one half-space over `t = 0..=N̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct TighteningSeries {
    pub kind: ConstraintKind,
    pub owner: usize,
    pub index: usize,
    pub probability: f64,
    pub beta: f64,
    pub n_samples: usize,
    pub n_discard: usize,
    pub values: Vec<f64>,
}

/// `c^x_{i,j,t}` and `c^u_{i,j,t}` for every constrained half-space.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TighteningTable {
    entries: BTreeMap<(ConstraintKind, usize, usize), TighteningSeries>,
}

impl TighteningTable {
    pub fn insert(&mut self, series: TighteningSeries) {
        self.entries
            .insert((series.kind, series.owner, series.index), series);
    }

    pub fn series(&self) -> impl Iterator<Item = &TighteningSeries> {
        self.entries.values()
    }

    pub fn get_series(&self, kind: ConstraintKind, owner: usize, index: usize) -> Option<&TighteningSeries> {
        self.entries.get(&(kind, owner, index))
    }

    pub fn get(&self, kind: ConstraintKind, owner: usize, index: usize, t: usize) -> Result<f64, TighteningError> {
        self.entries
            .get(&(kind, owner, index))
            .and_then(|s| s.values.get(t).copied())
            .ok_or(TighteningError::MissingEntry {
                kind: kind.as_str(),
                owner,
                index,
                t,
            })
    }

    /// Last time index covered by every series.
    pub fn horizon(&self) -> Option<usize> {
        self.entries
            .values()
            .map(|s| s.values.len())
            .min()
            .and_then(|n| n.checked_sub(1))
    }

    /// A table of zeros for every constraint over `t = 0..=horizon`.
    pub fn zeros(constraints: &ConstraintSet, horizon: usize) -> Self {
        let mut table = Self::default();
        for (owner, kind, index, c) in constraints.indexed() {
            table.insert(TighteningSeries {
                kind,
                owner,
                index,
                probability: c.probability,
                beta: f64::NAN,
                n_samples: 0,
                n_discard: 0,
                values: vec![0.0; horizon + 1],
            });
        }
        table
    }

    /// CSV with columns `kind,i,j,t,c,N_s,N_d,p,beta`.
    pub fn save(&self, path: &Path) -> Result<(), TighteningError> {
        let io = |source| TighteningError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(w, "kind,i,j,t,c,N_s,N_d,p,beta").map_err(io)?;
        for s in self.entries.values() {
            for (t, c) in s.values.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{:?},{},{},{:?},{:?}",
                    s.kind.as_str(),
                    s.owner,
                    s.index,
                    t,
                    c,
                    s.n_samples,
                    s.n_discard,
                    s.probability,
                    s.beta
                )
                .map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, TighteningError> {
        let file = std::fs::File::open(path).map_err(|source| TighteningError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let bad = |line: usize, reason: &str| TighteningError::Format {
            path: path.display().to_string(),
            reason: format!("line {line}: {reason}"),
        };
        let mut table = Self::default();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| TighteningError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if n == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 9 {
                return Err(bad(n + 1, "expected 9 columns"));
            }
            let kind = match f[0] {
                "state" => ConstraintKind::State,
                "input" => ConstraintKind::Input,
                _ => return Err(bad(n + 1, "kind must be state or input")),
            };
            let us = |s: &str| s.parse::<usize>().map_err(|_| bad(n + 1, "bad integer"));
            let fl = |s: &str| s.parse::<f64>().map_err(|_| bad(n + 1, "bad number"));
            let (owner, index, t) = (us(f[1])?, us(f[2])?, us(f[3])?);
            let entry = table
                .entries
                .entry((kind, owner, index))
                .or_insert(TighteningSeries {
                    kind,
                    owner,
                    index,
                    probability: fl(f[7])?,
                    beta: fl(f[8])?,
                    n_samples: us(f[5])?,
                    n_discard: us(f[6])?,
                    values: Vec::new(),
                });
            if entry.values.len() != t {
                return Err(bad(n + 1, "time steps out of order"));
            }
            entry.values.push(fl(f[4])?);
        }
        Ok(table)
    }
}

/// Tightens every half-space of `constraints` at every `t = 0..=N̄` of the bank.
/// State entries use `e_i^(l)(t)`, input entries `pi_i^(l)(t)`.
pub fn tighten_all(
    constraints: &ConstraintSet,
    errors: &ErrorBank,
    beta: f64,
) -> Result<TighteningTable, TighteningError> {
    let horizon = errors.task_horizon();
    let indexed = constraints.indexed();
    for (owner, _, _, _) in &indexed {
        if *owner >= errors.subsystems() {
            return Err(TighteningError::MissingSamples { owner: *owner, t: 0 });
        }
    }
    if errors.is_empty() {
        return Err(TighteningError::MissingSamples { owner: 0, t: 0 });
    }
    let series: Result<Vec<TighteningSeries>, TighteningError> = indexed
        .par_iter()
        .map(|&(owner, kind, index, c)| {
            let n_discard = discard_count(errors.len(), c.probability, beta)?;
            let values: Result<Vec<f64>, TighteningError> = (0..=horizon)
                .map(|t| {
                    let proj: Vec<f64> = (0..errors.len())
                        .map(|l| {
                            let xi = match kind {
                                ConstraintKind::State => errors.error(l, t, owner),
                                ConstraintKind::Input => errors.feedback(l, t, owner),
                            };
                            c.value(xi)
                        })
                        .collect();
                    tighten_projections(&proj, n_discard)
                })
                .collect();
            Ok(TighteningSeries {
                kind,
                owner,
                index,
                probability: c.probability,
                beta,
                n_samples: errors.len(),
                n_discard,
                values: values?,
            })
        })
        .collect();
    let mut table = TighteningTable::default();
    for s in series? {
        table.insert(s);
    }
    Ok(table)
}

/// `Phi^{-1}(p) sqrt(h^T Sigma h)`.
pub fn analytic_tightening(direction: &DVector<f64>, covariance: &DMatrix<f64>, probability: f64) -> Result<f64, TighteningError> {
    if !(probability > 0.0 && probability < 1.0) {
        return Err(TighteningError::InvalidParameter(format!("p = {probability} outside (0,1)")));
    }
    if covariance.shape() != (direction.len(), direction.len()) {
        return Err(TighteningError::InvalidParameter("covariance shape".into()));
    }
    crate::disturbance::psd_factor(covariance).map_err(|_| TighteningError::NotPsd)?;
    let var = (direction.transpose() * covariance * direction)[(0, 0)].max(0.0);
    let q = Normal::standard().inverse_cdf(probability);
    Ok(q * var.sqrt())
}

/// Analytic table including the error mean: `h^T mean + Phi^{-1}(p) sqrt(h^T Sigma h)`.
/// Input rows use `K_i Sigma^e_{N_i} K_i^T` and mean `K_i mean_{N_i}`.
pub fn analytic_table(
    constraints: &ConstraintSet,
    moments: &ErrorMoments,
    gains: &[DMatrix<f64>],
) -> Result<TighteningTable, TighteningError> {
    let horizon = moments.covariances.len() - 1;
    let mut table = TighteningTable::default();
    for (owner, kind, index, c) in constraints.indexed() {
        let values: Result<Vec<f64>, TighteningError> = (0..=horizon)
            .map(|t| {
                let (mean, cov) = input_or_state(moments, gains, c, t);
                Ok(c.direction.dot(&mean) + analytic_tightening(&c.direction, &cov, c.probability)?)
            })
            .collect();
        table.insert(TighteningSeries {
            kind,
            owner,
            index,
            probability: c.probability,
            beta: f64::NAN,
            n_samples: 0,
            n_discard: 0,
            values: values?,
        });
    }
    Ok(table)
}

fn input_or_state(moments: &ErrorMoments, gains: &[DMatrix<f64>], c: &HalfSpace, t: usize) -> (DVector<f64>, DMatrix<f64>) {
    match c.kind {
        ConstraintKind::State => (moments.marginal_mean(c.owner, t), moments.marginal(c.owner, t)),
        ConstraintKind::Input => {
            let k = &gains[c.owner];
            (
                k * moments.neighborhood_mean(c.owner, t),
                k * moments.neighborhood_marginal(c.owner, t) * k.transpose(),
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The literal loop: repeatedly drop the first argmax, then take the max.
    fn greedy(projections: &[f64], n_discard: usize) -> f64 {
        let mut keep: Vec<(usize, f64)> = projections.iter().copied().enumerate().collect();
        while keep.len() > projections.len() - n_discard {
            let mut best = 0;
            for k in 1..keep.len() {
                if keep[k].1 > keep[best].1 {
                    best = k;
                }
            }
            keep.remove(best);
        }
        keep.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn discard_count_examples() {
        assert_eq!(discard_count(100, 0.9, 0.01).unwrap(), 0);
        assert_eq!(discard_count(1000, 0.9, 1e-6).unwrap(), 47);
        assert_eq!(discard_count(500, 1.0, 0.3).unwrap(), 0);
        assert!(discard_count(0, 0.9, 0.1).is_err());
        assert!(discard_count(10, 0.0, 0.1).is_err());
        assert!(discard_count(10, 0.9, 1.0).is_err());
    }

    #[test]
    fn halfspace_examples() {
        let h = DVector::from_element(1, 1.0);
        let zeros = [[0.0], [0.0], [0.0]];
        let refs: Vec<&[f64]> = zeros.iter().map(|s| &s[..]).collect();
        assert_eq!(tighten_halfspace(&h, &refs, 0.9, 0.5).unwrap(), 0.0);
        let vals: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(tighten_projections(&vals, 0).unwrap(), 10.0);
        assert_eq!(tighten_projections(&vals, 2).unwrap(), 8.0);
        assert_eq!(greedy(&vals, 2), 8.0);
        assert!(matches!(
            tighten_projections(&vals, 10),
            Err(TighteningError::AllDiscarded { .. })
        ));
    }

    #[test]
    fn sort_and_drop_matches_greedy_with_ties() {
        let vals = [3.0, 5.0, 5.0, 1.0, 5.0, 2.0, 4.0, 4.0];
        for nd in 0..vals.len() {
            assert_eq!(tighten_projections(&vals, nd).unwrap(), greedy(&vals, nd), "nd={nd}");
        }
    }

    #[test]
    fn analytic_examples() {
        let h = DVector::from_element(1, 1.0);
        assert_eq!(analytic_tightening(&h, &DMatrix::zeros(1, 1), 0.9).unwrap(), 0.0);
        let c = analytic_tightening(&h, &DMatrix::identity(1, 1), 0.9).unwrap();
        assert!((c - 1.2815515655446004).abs() < 1e-9, "{c}");
        let c = analytic_tightening(&DVector::from_vec(vec![1.0, -2.0]), &(DMatrix::identity(2, 2) * 3.0), 0.5).unwrap();
        assert!(c.abs() < 1e-12);
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            analytic_tightening(&DVector::from_vec(vec![1.0, 0.0]), &indefinite, 0.9),
            Err(TighteningError::NotPsd)
        ));
    }

    proptest::proptest! {
        #[test]
        fn sort_matches_greedy(vals in proptest::collection::vec(-5i32..5, 1..40), nd_frac in 0.0f64..1.0) {
            let vals: Vec<f64> = vals.into_iter().map(f64::from).collect();
            let nd = ((vals.len() - 1) as f64 * nd_frac) as usize;
            proptest::prop_assert_eq!(tighten_projections(&vals, nd).unwrap(), greedy(&vals, nd));
        }

        #[test]
        fn nonincreasing_in_discards(vals in proptest::collection::vec(-100.0f64..100.0, 2..60)) {
            let mut prev = f64::INFINITY;
            for nd in 0..vals.len() {
                let c = tighten_projections(&vals, nd).unwrap();
                proptest::prop_assert!(c <= prev);
                prev = c;
            }
        }

        #[test]
        fn nondecreasing_in_probability(n in 10usize..3000, beta in 1e-6f64..0.5) {
            let mut prev = usize::MAX;
            for k in 1..=99 {
                let nd = discard_count(n, k as f64 / 100.0, beta).unwrap();
                proptest::prop_assert!(nd <= prev);
                prev = nd;
            }
        }
    }
}
