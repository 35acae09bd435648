//! Server-farm cooling benchmark.
//!
//! Scalar temperature deviations `x_i` with self-coupling 1.01 and thermal
//! coupling `0.01 / (1 + r_ij)` to every server within distance `r_max`.
//! Servers are placed uniformly in a square whose side is calibrated so the
//! expected number of neighbors hits a target mean degree.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::disturbance::{CovarianceSpec, DisturbanceSpec};
use crate::error_sim::{ErrorSimError, TubeController};
use crate::mpc::{AgentCost, CostSpec};
use crate::network::{
    gersgorin_violations, ConstraintKind, ConstraintSet, HalfSpace, NetworkError, NetworkModel, SubsystemModel,
};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("invalid benchmark spec: {0}")]
    InvalidSpec(String),
    #[error("closed-loop error map fails the Geršgorin row test on rows {rows:?}")]
    Gersgorin { rows: Vec<usize> },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    ErrorSim(#[from] ErrorSimError),
}

/// Disturbance parameters of the benchmark: a daily sinusoidal load mean
/// with AR(1) deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadProfile {
    pub offset: f64,
    pub amplitude: f64,
    /// Period in steps (48 steps of half an hour is one day).
    pub period: f64,
    pub phase: f64,
    pub rho: f64,
    pub innovation_std: f64,
}

impl Default for LoadProfile {
    fn default() -> Self {
        Self {
            offset: 0.0,
            amplitude: 0.3,
            period: 48.0,
            phase: 0.0,
            rho: 0.7,
            innovation_std: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSpec {
    pub servers: usize,
    pub r_max: f64,
    pub target_degree: f64,
    pub placement_seed: u64,
    /// Sampling period in hours; informational.
    pub sampling_hours: f64,
    pub horizon: usize,
    /// Closed-loop steps `N̄ - N`.
    pub steps: usize,
    pub state_bound: f64,
    pub input_bound: f64,
    pub probability: f64,
    pub tube_gain: f64,
    pub state_weight: f64,
    pub input_weight: f64,
    pub tightening_samples: usize,
    pub mpc_samples: usize,
    pub load: LoadProfile,
    /// Initial temperature deviations are drawn uniformly from this range.
    pub initial_state: (f64, f64),
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            servers: 100,
            r_max: 2.0,
            target_degree: 22.4,
            placement_seed: 0,
            sampling_hours: 0.5,
            horizon: 24,
            steps: 96,
            state_bound: 5.0,
            input_bound: 1.0,
            probability: 0.9,
            tube_gain: -0.5,
            state_weight: 1.0,
            input_weight: 1000.0,
            tightening_samples: 100,
            mpc_samples: 10,
            load: LoadProfile::default(),
            initial_state: (0.0, 2.0),
        }
    }
}

impl BenchmarkSpec {
    /// `N̄ = N + steps`.
    pub fn task_horizon(&self) -> usize {
        self.horizon + self.steps
    }

    pub fn validate(&self) -> Result<(), BenchmarkError> {
        let bad = |s: &str| Err(BenchmarkError::InvalidSpec(s.into()));
        if self.servers == 0 {
            return bad("need at least one server");
        }
        if !(self.r_max >= 0.0 && self.r_max.is_finite()) {
            return bad("r_max must be finite and nonnegative");
        }
        if self.servers > 1 && !(self.target_degree > 0.0 && self.target_degree < 0.8 * (self.servers - 1) as f64) {
            return bad("target degree must lie in (0, 0.8 (M - 1))");
        }
        if self.horizon == 0 || self.steps == 0 {
            return bad("horizon and steps must be positive");
        }
        if !(self.state_bound > 0.0 && self.input_bound > 0.0) {
            return bad("bounds must be positive");
        }
        if !(self.probability > 0.0 && self.probability < 1.0) {
            return bad("probability must lie in (0,1)");
        }
        if !(self.input_weight > 0.0 && self.state_weight >= 0.0) {
            return bad("input weight must be positive and state weight nonnegative");
        }
        if !(self.load.rho >= 0.0 && self.load.rho < 1.0 && self.load.period > 0.0 && self.load.innovation_std >= 0.0)
        {
            return bad("load needs rho in [0,1), positive period and nonnegative std");
        }
        if self.initial_state.0 > self.initial_state.1 {
            return bad("initial state range is empty");
        }
        Ok(())
    }

    pub fn disturbance(&self) -> DisturbanceSpec {
        DisturbanceSpec::PeriodicMeanAr1 {
            rho: self.load.rho,
            offset: self.load.offset,
            amplitude: self.load.amplitude,
            period: self.load.period,
            phase: self.load.phase,
            covariance: CovarianceSpec::Isotropic {
                std: self.load.innovation_std,
            },
        }
    }
}

/// `Pr(|P - Q| <= r)` for independent uniform points in the unit square,
/// valid for `0 <= r <= 1`.
pub fn unit_square_distance_cdf(r: f64) -> f64 {
    let r = r.clamp(0.0, 1.0);
    std::f64::consts::PI * r * r - 8.0 / 3.0 * r.powi(3) + 0.5 * r.powi(4)
}

/// Side length `L >= r_max` with `(M - 1) Pr(dist <= r_max) = target`,
/// found by bisection on the expected degree.
pub fn calibrate_side_length(servers: usize, r_max: f64, target_degree: f64) -> f64 {
    if servers < 2 || r_max == 0.0 {
        return 1.0;
    }
    let degree = |side: f64| (servers - 1) as f64 * unit_square_distance_cdf(r_max / side);
    // degree decreases in the side length; at side = r_max it is maximal
    let mut lo = r_max;
    let mut hi = r_max;
    while degree(hi) > target_degree {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if degree(mid) > target_degree {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub spec: BenchmarkSpec,
    pub side_length: f64,
    pub positions: Vec<(f64, f64)>,
    pub model: NetworkModel,
    pub constraints: ConstraintSet,
    pub cost: CostSpec,
    pub disturbance: DisturbanceSpec,
    pub tube: TubeController,
    pub x0: DVector<f64>,
}

impl Benchmark {
    pub fn mean_degree(&self) -> f64 {
        let m = self.model.len();
        (0..m).map(|i| self.model.strict_neighbors(i).len()).sum::<usize>() as f64 / m as f64
    }
}

/// Half-spaces `+-x_i <= x_max` and `+-u_i <= u_max` of a scalar agent, in
/// the order state upper, state lower, input upper, input lower.
pub fn box_halfspaces(owner: usize, state_bound: f64, input_bound: f64, probability: f64) -> Vec<HalfSpace> {
    vec![
        HalfSpace::with_bound(owner, ConstraintKind::State, vec![1.0], state_bound, probability),
        HalfSpace::with_bound(owner, ConstraintKind::State, vec![-1.0], state_bound, probability),
        HalfSpace::with_bound(owner, ConstraintKind::Input, vec![1.0], input_bound, probability),
        HalfSpace::with_bound(owner, ConstraintKind::Input, vec![-1.0], input_bound, probability),
    ]
}

pub fn build_datacenter_benchmark(spec: &BenchmarkSpec) -> Result<Benchmark, BenchmarkError> {
    spec.validate()?;
    let m = spec.servers;
    let side = calibrate_side_length(m, spec.r_max, spec.target_degree);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.placement_seed);
    let positions: Vec<(f64, f64)> = (0..m)
        .map(|_| (rng.random::<f64>() * side, rng.random::<f64>() * side))
        .collect();
    let (lo, hi) = spec.initial_state;
    let x0 = DVector::from_iterator(m, (0..m).map(|_| lo + (hi - lo) * rng.random::<f64>()));

    let subsystems = (0..m)
        .map(|i| {
            let mut sub = SubsystemModel::scalar(1.0, 1.0).with_coupling(i, DMatrix::from_element(1, 1, 1.01));
            for j in (0..m).filter(|&j| j != i) {
                let r = ((positions[i].0 - positions[j].0).powi(2) + (positions[i].1 - positions[j].1).powi(2)).sqrt();
                if r <= spec.r_max {
                    sub = sub.with_coupling(j, DMatrix::from_element(1, 1, 0.01 / (1.0 + r)));
                }
            }
            sub
        })
        .collect();
    let model = NetworkModel::new(subsystems)?;
    let tube = TubeController::diagonal(&model, spec.tube_gain)?;
    let (a, b, _) = model.dense_dynamics();
    let a_cl = &a + &b * tube.dense_gain(&model);
    let rows = gersgorin_violations(&a_cl)?;
    if !rows.is_empty() {
        return Err(BenchmarkError::Gersgorin { rows });
    }
    let constraints = ConstraintSet::new(
        &model,
        (0..m)
            .flat_map(|i| box_halfspaces(i, spec.state_bound, spec.input_bound, spec.probability))
            .collect(),
    )?;
    let mut agent = AgentCost::scalar(spec.state_weight, spec.input_weight);
    agent.p = agent.q.clone();
    let cost = CostSpec::uniform(&model, agent, spec.mpc_samples);
    Ok(Benchmark {
        spec: spec.clone(),
        side_length: side,
        positions,
        model,
        constraints,
        cost,
        disturbance: spec.disturbance(),
        tube,
        x0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_cdf_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        for r in [0.1, 0.3, 0.7] {
            let hits = (0..n)
                .filter(|_| {
                    let (a, b, c, d): (f64, f64, f64, f64) = (rng.random(), rng.random(), rng.random(), rng.random());
                    ((a - c).powi(2) + (b - d).powi(2)).sqrt() <= r
                })
                .count();
            let mc = hits as f64 / n as f64;
            assert!((mc - unit_square_distance_cdf(r)).abs() < 4e-3, "r={r}: {mc}");
        }
        assert!((unit_square_distance_cdf(1.0) - (std::f64::consts::PI - 8.0 / 3.0 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn calibration_hits_target() {
        let side = calibrate_side_length(100, 2.0, 22.4);
        assert!((99.0 * unit_square_distance_cdf(2.0 / side) - 22.4).abs() < 1e-9);
    }

    #[test]
    fn single_server() {
        let spec = BenchmarkSpec {
            servers: 1,
            ..BenchmarkSpec::default()
        };
        let b = build_datacenter_benchmark(&spec).unwrap();
        let (a, bm, _) = b.model.dense_dynamics();
        assert_eq!(a[(0, 0)], 1.01);
        let a_cl = &a + &bm * b.tube.dense_gain(&b.model);
        assert!((a_cl[(0, 0)] - 0.51).abs() < 1e-15);
    }

    #[test]
    fn default_geometry_and_rows() {
        let b = build_datacenter_benchmark(&BenchmarkSpec::default()).unwrap();
        let d = b.mean_degree();
        assert!((20.0..=25.0).contains(&d), "mean degree {d}");
        for i in 0..b.model.len() {
            let sum: f64 = b
                .model
                .strict_neighbors(i)
                .iter()
                .map(|&j| b.model.subsystem(i).coupling[&j][(0, 0)])
                .sum();
            assert!(0.51 + sum < 1.0);
        }
        assert_eq!(b.constraints.all().len(), 400);
    }
}
