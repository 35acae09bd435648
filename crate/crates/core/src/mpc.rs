//! Receding-horizon controller with indirect feedback.
//!
//! The QP plans a nominal trajectory `z` from the carried value `z(0|t)`, not
//! from the measured state. The measurement only shapes the cost through the
//! predicted errors `e(k|t)` started at `e(0|t) = x(t) - z(0|t)`. Tightened
//! rows `h^T z <= 1 - c` account for the error tube.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::disturbance::{DisturbanceError, DisturbanceModel};
use crate::error_sim::{ErrorSimError, TubeController};
use crate::network::{ConstraintKind, ConstraintSet, NetworkError, NetworkModel};
use crate::solver::{
    partition_problem, solve_admm, solve_centralized, AdmmParams, AgentAnnotation, CentralSettings, QpProblem,
    RowTag, SolveError, SolveReport,
};
use crate::tightening::{TighteningError, TighteningTable};

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("invalid cost: {0}")]
    InvalidCost(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("step {t}: prediction window ends at {end}, tightening covers up to {covered}")]
    BeyondTaskHorizon { t: usize, end: usize, covered: usize },
    #[error("step {t}: QP infeasible: {source}")]
    Infeasible { t: usize, source: SolveError },
    #[error("step {t}: distributed solver stopped after {iterations} rounds without converging")]
    NotConverged { t: usize, iterations: usize },
    #[error("step {t}: {source}")]
    Solver { t: usize, source: SolveError },
    #[error(transparent)]
    Tightening(#[from] TighteningError),
    #[error(transparent)]
    Disturbance(#[from] DisturbanceError),
    #[error(transparent)]
    ErrorSim(#[from] ErrorSimError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

impl MpcError {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, MpcError::Infeasible { .. })
    }
}

/// Stage weights `Q_i`, `R_i` and terminal weight `P_i` of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

impl AgentCost {
    pub fn scalar(q: f64, r: f64) -> Self {
        Self {
            q: DMatrix::from_element(1, 1, q),
            r: DMatrix::from_element(1, 1, r),
            p: DMatrix::zeros(1, 1),
        }
    }
}

fn default_mpc_samples() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub agents: Vec<AgentCost>,
    /// Optional per-time multiplier on the stage cost, indexed by absolute
    /// time `t + k`; missing entries count as one.
    #[serde(default)]
    pub time_weights: Option<Vec<f64>>,
    /// Number of sampled error trajectories for the expected cost.
    #[serde(default = "default_mpc_samples")]
    pub mpc_samples: usize,
}

impl CostSpec {
    pub fn uniform(model: &NetworkModel, cost: AgentCost, mpc_samples: usize) -> Self {
        Self {
            agents: vec![cost; model.len()],
            time_weights: None,
            mpc_samples,
        }
    }

    pub fn validate(&self, model: &NetworkModel) -> Result<(), MpcError> {
        if self.agents.len() != model.len() {
            return Err(MpcError::InvalidCost(format!(
                "{} agent costs for {} subsystems",
                self.agents.len(),
                model.len()
            )));
        }
        for (i, c) in self.agents.iter().enumerate() {
            let sub = model.subsystem(i);
            let shape_ok = c.q.shape() == (sub.state_dim, sub.state_dim)
                && c.p.shape() == (sub.state_dim, sub.state_dim)
                && c.r.shape() == (sub.input_dim, sub.input_dim);
            if !shape_ok {
                return Err(MpcError::InvalidCost(format!("agent {i}: weight shapes do not match")));
            }
            for (name, m, strict) in [("Q", &c.q, false), ("P", &c.p, false), ("R", &c.r, true)] {
                if (m - m.transpose()).abs().max() > 1e-12 * (1.0 + m.abs().max()) {
                    return Err(MpcError::InvalidCost(format!("agent {i}: {name} not symmetric")));
                }
                let min_eig = if m.nrows() == 0 {
                    1.0
                } else {
                    m.clone().symmetric_eigenvalues().min()
                };
                let floor = -1e-12 * (1.0 + m.abs().max());
                if min_eig < floor || (strict && min_eig <= 0.0) {
                    let what = if strict { "positive definite" } else { "positive semidefinite" };
                    return Err(MpcError::InvalidCost(format!("agent {i}: {name} not {what}")));
                }
            }
        }
        if let Some(w) = &self.time_weights {
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(MpcError::InvalidCost("time weights must be finite and nonnegative".into()));
            }
        }
        Ok(())
    }

    fn weight(&self, t: usize) -> f64 {
        self.time_weights
            .as_ref()
            .and_then(|w| w.get(t).copied())
            .unwrap_or(1.0)
    }
}

/// One predicted error trajectory: network-stacked `e(0..=N)` and `pi(0..N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorPrediction {
    pub errors: Vec<DVector<f64>>,
    pub feedbacks: Vec<DVector<f64>>,
}

/// Forward-simulates the error system from `e0` under each disturbance sample.
pub fn predict_errors(
    model: &NetworkModel,
    controller: &TubeController,
    e0: &DVector<f64>,
    samples: &[Vec<DVector<f64>>],
) -> Result<Vec<ErrorPrediction>, MpcError> {
    samples
        .iter()
        .map(|w| {
            let mut errors = Vec::with_capacity(w.len() + 1);
            let mut feedbacks = Vec::with_capacity(w.len());
            let mut e = e0.clone();
            for wk in w {
                let pi = controller.network_feedback(model, e.as_slice())?;
                let next = model.step(e.as_slice(), pi.as_slice(), wk.as_slice())?;
                errors.push(e);
                feedbacks.push(pi);
                e = next;
            }
            errors.push(e);
            Ok(ErrorPrediction { errors, feedbacks })
        })
        .collect()
}

/// Expected cost of one agent as a quadratic in its `(z, v)`:
/// `sum_k 1/2 z_k' Hz_k z_k + fz_k' z_k + 1/2 v_k' Hv_k v_k + fv_k' v_k + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTerms {
    pub z_quad: Vec<DMatrix<f64>>,
    pub z_lin: Vec<DVector<f64>>,
    pub v_quad: Vec<DMatrix<f64>>,
    pub v_lin: Vec<DVector<f64>>,
    pub constant: f64,
}

/// Sample average of `l(z + e, v + pi)` for agent `i`, expanded in `(z, v)`.
///
/// `predictions` must be non-empty; each holds `N + 1` errors and `N`
/// feedbacks. The terminal weight acts on `z(N) + e(N)`.
pub fn expected_cost_terms(
    model: &NetworkModel,
    cost: &CostSpec,
    i: usize,
    t: usize,
    predictions: &[ErrorPrediction],
) -> Result<CostTerms, MpcError> {
    if predictions.is_empty() {
        return Err(MpcError::InvalidArgument("no error predictions".into()));
    }
    let horizon = predictions[0].feedbacks.len();
    let xs = model.state_range(i);
    let us = model.input_range(i);
    let c = &cost.agents[i];
    let n = predictions.len() as f64;
    let mut terms = CostTerms {
        z_quad: Vec::with_capacity(horizon + 1),
        z_lin: Vec::with_capacity(horizon + 1),
        v_quad: Vec::with_capacity(horizon),
        v_lin: Vec::with_capacity(horizon),
        constant: 0.0,
    };
    for k in 0..=horizon {
        let (weight, q) = if k < horizon {
            (cost.weight(t + k), &c.q)
        } else {
            (1.0, &c.p)
        };
        let qw = q * weight;
        let mut mean = DVector::zeros(xs.len());
        let mut second = 0.0;
        for p in predictions {
            let e = p.errors[k].rows(xs.start, xs.len());
            mean += e;
            second += (e.transpose() * &qw * e)[(0, 0)];
        }
        mean /= n;
        terms.z_lin.push(&qw * &mean * 2.0);
        terms.z_quad.push(&qw * 2.0);
        terms.constant += second / n;
    }
    for k in 0..horizon {
        let rw = &c.r * cost.weight(t + k);
        let mut mean = DVector::zeros(us.len());
        let mut second = 0.0;
        for p in predictions {
            let pi = p.feedbacks[k].rows(us.start, us.len());
            mean += pi;
            second += (pi.transpose() * &rw * pi)[(0, 0)];
        }
        mean /= n;
        terms.v_lin.push(&rw * &mean * 2.0);
        terms.v_quad.push(&rw * 2.0);
        terms.constant += second / n;
    }
    Ok(terms)
}

/// Variable layout of the assembled QP: per agent, `v_i(0..N)` then
/// `z_i(0..=N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpLayout {
    pub horizon: usize,
    v_start: Vec<usize>,
    z_start: Vec<usize>,
    input_dims: Vec<usize>,
    state_dims: Vec<usize>,
    pub num_vars: usize,
}

impl QpLayout {
    pub fn new(model: &NetworkModel, horizon: usize) -> Self {
        let mut v_start = Vec::new();
        let mut z_start = Vec::new();
        let mut offset = 0;
        for sub in model.subsystems() {
            v_start.push(offset);
            offset += horizon * sub.input_dim;
            z_start.push(offset);
            offset += (horizon + 1) * sub.state_dim;
        }
        Self {
            horizon,
            v_start,
            z_start,
            input_dims: model.subsystems().iter().map(|s| s.input_dim).collect(),
            state_dims: model.subsystems().iter().map(|s| s.state_dim).collect(),
            num_vars: offset,
        }
    }

    /// Index of `v_i(k)[d]`.
    pub fn v(&self, i: usize, k: usize, d: usize) -> usize {
        self.v_start[i] + k * self.input_dims[i] + d
    }

    /// Index of `z_i(k)[d]`.
    pub fn z(&self, i: usize, k: usize, d: usize) -> usize {
        self.z_start[i] + k * self.state_dims[i] + d
    }

    /// Network-stacked `v(k)` from a solution vector.
    pub fn input_at(&self, x: &[f64], k: usize) -> DVector<f64> {
        let mut out = Vec::new();
        for i in 0..self.v_start.len() {
            for d in 0..self.input_dims[i] {
                out.push(x[self.v(i, k, d)]);
            }
        }
        DVector::from_vec(out)
    }

    pub fn state_at(&self, x: &[f64], k: usize) -> DVector<f64> {
        let mut out = Vec::new();
        for i in 0..self.z_start.len() {
            for d in 0..self.state_dims[i] {
                out.push(x[self.z(i, k, d)]);
            }
        }
        DVector::from_vec(out)
    }
}

/// Everything fixed across the closed loop.
#[derive(Debug, Clone, Copy)]
pub struct MpcProblem<'a> {
    pub model: &'a NetworkModel,
    pub constraints: &'a ConstraintSet,
    pub tightening: &'a TighteningTable,
    pub cost: &'a CostSpec,
    pub tube: &'a TubeController,
    pub disturbance: &'a DisturbanceModel,
    pub horizon: usize,
}

/// Indirect-feedback controller state.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub t: usize,
    /// Carried nominal state `z(0|t)`.
    pub z: DVector<f64>,
    /// Previous solution shifted by one step with zero appended.
    pub warm_start: Option<Vec<f64>>,
}

impl ControllerState {
    /// `z(0) = x(0)`.
    pub fn initial(x0: &DVector<f64>) -> Self {
        Self {
            t: 0,
            z: x0.clone(),
            warm_start: None,
        }
    }
}

/// Builds the QP at time `t`. `x_measured` only enters through
/// `predictions`, whose first error must equal `x_measured - z(0|t)`.
pub fn assemble_qp(
    problem: &MpcProblem<'_>,
    state: &ControllerState,
    x_measured: &DVector<f64>,
    predictions: &[ErrorPrediction],
) -> Result<(QpProblem, QpLayout), MpcError> {
    let model = problem.model;
    let horizon = problem.horizon;
    let t = state.t;
    if horizon == 0 {
        return Err(MpcError::InvalidArgument("horizon must be at least 1".into()));
    }
    let covered = problem.tightening.horizon().unwrap_or(0);
    if problem.tightening.series().next().is_some() && t + horizon > covered + 1 {
        return Err(MpcError::BeyondTaskHorizon {
            t,
            end: t + horizon,
            covered,
        });
    }
    if state.z.len() != model.state_dim() || x_measured.len() != model.state_dim() {
        return Err(MpcError::InvalidArgument("state vector length does not match network".into()));
    }
    let e0 = x_measured - &state.z;
    for p in predictions {
        if p.feedbacks.len() != horizon || p.errors.len() != horizon + 1 {
            return Err(MpcError::InvalidArgument("prediction length does not match horizon".into()));
        }
        if (&p.errors[0] - &e0).amax() > 1e-12 * (1.0 + e0.amax()) {
            return Err(MpcError::InvalidArgument(
                "predictions do not start at the measured error".into(),
            ));
        }
    }
    let layout = QpLayout::new(model, horizon);
    let mut qp = QpProblem::new(layout.num_vars);
    let m = model.len();
    let mut var_owner = vec![0; layout.num_vars];
    let mut eq_owner = Vec::new();
    let mut ineq_owner = Vec::new();
    let mut shared = vec![Vec::new(); m];

    for i in 0..m {
        let sub = model.subsystem(i);
        let (n_i, m_i) = (sub.state_dim, sub.input_dim);
        for k in 0..horizon {
            for d in 0..m_i {
                var_owner[layout.v(i, k, d)] = i;
            }
        }
        for k in 0..=horizon {
            for d in 0..n_i {
                var_owner[layout.z(i, k, d)] = i;
                shared[i].push(layout.z(i, k, d));
            }
        }

        // cost
        let terms = expected_cost_terms(model, problem.cost, i, t, predictions)?;
        qp.constant += terms.constant;
        for k in 0..=horizon {
            for r in 0..n_i {
                qp.linear[layout.z(i, k, r)] += terms.z_lin[k][r];
                for c in r..n_i {
                    qp.add_quadratic(layout.z(i, k, r), layout.z(i, k, c), terms.z_quad[k][(r, c)]);
                }
            }
        }
        for k in 0..horizon {
            for r in 0..m_i {
                qp.linear[layout.v(i, k, r)] += terms.v_lin[k][r];
                for c in r..m_i {
                    qp.add_quadratic(layout.v(i, k, r), layout.v(i, k, c), terms.v_quad[k][(r, c)]);
                }
            }
        }

        // z_i(0|t) = carried value
        let zs = model.state_range(i);
        for d in 0..n_i {
            qp.add_eq([(layout.z(i, 0, d), 1.0)], state.z[zs.start + d], RowTag::Initial { agent: i });
            eq_owner.push(i);
        }
        // z_i(k+1) = sum_j A_ij z_j(k) + B_i v_i(k)
        for k in 0..horizon {
            for d in 0..n_i {
                let mut row = vec![(layout.z(i, k + 1, d), 1.0)];
                for (&j, a) in &sub.coupling {
                    for c in 0..a.ncols() {
                        row.push((layout.z(j, k, c), -a[(d, c)]));
                    }
                }
                for c in 0..m_i {
                    row.push((layout.v(i, k, c), -sub.input_matrix[(d, c)]));
                }
                qp.add_eq(row, 0.0, RowTag::Dynamics { agent: i, k });
                eq_owner.push(i);
            }
        }
        // z_i(N|t) = 0
        for d in 0..n_i {
            qp.add_eq([(layout.z(i, horizon, d), 1.0)], 0.0, RowTag::Terminal { agent: i });
            eq_owner.push(i);
        }
        // tightened half-spaces
        for kind in [ConstraintKind::State, ConstraintKind::Input] {
            for (j, h) in problem.constraints.of(i, kind).into_iter().enumerate() {
                for k in 0..horizon {
                    let c = problem.tightening.get(kind, i, j, t + k)?;
                    let (row, tag): (Vec<(usize, f64)>, RowTag) = match kind {
                        ConstraintKind::State => (
                            h.direction.iter().enumerate().map(|(d, &v)| (layout.z(i, k, d), v)).collect(),
                            RowTag::State { agent: i, j, k },
                        ),
                        ConstraintKind::Input => (
                            h.direction.iter().enumerate().map(|(d, &v)| (layout.v(i, k, d), v)).collect(),
                            RowTag::Input { agent: i, j, k },
                        ),
                    };
                    qp.add_ineq(row, 1.0 - c, tag);
                    ineq_owner.push(i);
                }
            }
        }
    }
    qp.annotation = Some(AgentAnnotation {
        agents: m,
        var_owner,
        eq_owner,
        ineq_owner,
        shared,
    });
    Ok((qp, layout))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SolverChoice {
    Central(CentralSettings),
    Admm(AdmmParams),
}

impl Default for SolverChoice {
    fn default() -> Self {
        SolverChoice::Central(CentralSettings::default())
    }
}

/// How the cost samples are seeded at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    /// A fresh seed derived from `(seed, t)` every step.
    Fresh,
    /// The same seed every step (common random numbers).
    Frozen,
}

/// Seed for the cost samples drawn at step `t`.
pub fn step_seed(seed: u64, t: usize, mode: SampleMode) -> u64 {
    match mode {
        SampleMode::Frozen => seed,
        SampleMode::Fresh => {
            // splitmix64 finalizer
            let mut z = seed ^ (t as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        }
    }
}

/// Result of one controller step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// `v*(0|t)`, network-stacked.
    pub v: DVector<f64>,
    /// Planned inputs `v*(0..N|t)`.
    pub planned_inputs: Vec<DVector<f64>>,
    /// `z(0..=N|t)` by forward simulation of the planned inputs.
    pub planned_states: Vec<DVector<f64>>,
    pub report: SolveReport,
    pub qp_objective: f64,
    pub next: ControllerState,
}

/// Draws the cost samples for step `t` and predicts the errors from
/// `e(t) = x_measured - z(0|t)`.
pub fn cost_predictions(
    problem: &MpcProblem<'_>,
    state: &ControllerState,
    x_measured: &DVector<f64>,
    w_history: &[DVector<f64>],
    seed: u64,
) -> Result<Vec<ErrorPrediction>, MpcError> {
    let e0 = x_measured - &state.z;
    let count = problem.cost.mpc_samples;
    let samples = if count == 0 {
        // mean shortcut, exact for the minimizer when disturbances are iid
        // and the tube is linear
        if !(problem.disturbance.is_iid() && problem.tube.is_linear()) {
            return Err(MpcError::InvalidArgument(
                "zero cost samples needs an iid Gaussian disturbance and a linear tube".into(),
            ));
        }
        let traj = (state.t..state.t + problem.horizon)
            .map(|k| problem.disturbance.mean_at(k).expect("gaussian law"))
            .collect();
        vec![traj]
    } else {
        problem
            .disturbance
            .conditional_network_samples(w_history, state.t, problem.horizon, count, seed)?
    };
    predict_errors(problem.model, problem.tube, &e0, &samples)
}

/// Solves the QP at `state.t` and advances the carried nominal state.
pub fn mpc_step(
    problem: &MpcProblem<'_>,
    state: &ControllerState,
    x_measured: &DVector<f64>,
    predictions: &[ErrorPrediction],
    solver: &SolverChoice,
) -> Result<StepOutcome, MpcError> {
    let t = state.t;
    let (qp, layout) = assemble_qp(problem, state, x_measured, predictions)?;
    let report = match solver {
        SolverChoice::Central(settings) => solve_centralized(&qp, settings),
        SolverChoice::Admm(params) => {
            partition_problem(&qp, problem.model).and_then(|p| solve_admm(&p, params))
        }
    }
    .map_err(|e| match e {
        SolveError::Infeasible { .. } => MpcError::Infeasible { t, source: e },
        other => MpcError::Solver { t, source: other },
    })?;
    if !report.converged {
        return Err(MpcError::NotConverged {
            t,
            iterations: report.iterations,
        });
    }
    let horizon = problem.horizon;
    let planned_inputs: Vec<DVector<f64>> = (0..horizon).map(|k| layout.input_at(&report.x, k)).collect();
    let zero_w = vec![0.0; problem.model.disturbance_dim()];
    let mut planned_states = Vec::with_capacity(horizon + 1);
    planned_states.push(state.z.clone());
    for v in &planned_inputs {
        let last = planned_states.last().expect("nonempty");
        planned_states.push(problem.model.step(last.as_slice(), v.as_slice(), &zero_w)?);
    }
    let mut shifted = vec![0.0; layout.num_vars];
    for i in 0..problem.model.len() {
        let sub = problem.model.subsystem(i);
        for k in 0..horizon {
            for d in 0..sub.input_dim {
                if k + 1 < horizon {
                    shifted[layout.v(i, k, d)] = report.x[layout.v(i, k + 1, d)];
                }
            }
        }
        for k in 0..horizon {
            for d in 0..sub.state_dim {
                shifted[layout.z(i, k, d)] = report.x[layout.z(i, k + 1, d)];
            }
        }
    }
    let next = ControllerState {
        t: t + 1,
        z: planned_states[1].clone(),
        warm_start: Some(shifted),
    };
    Ok(StepOutcome {
        v: planned_inputs[0].clone(),
        qp_objective: report.objective,
        planned_inputs,
        planned_states,
        report,
        next,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disturbance::{CovarianceSpec, DisturbanceSpec, MeanProfile};
    use crate::network::{HalfSpace, SubsystemModel};

    fn chain() -> NetworkModel {
        NetworkModel::new(vec![
            SubsystemModel::scalar(1.0, 1.0)
                .with_coupling(0, DMatrix::from_element(1, 1, 1.01))
                .with_coupling(1, DMatrix::from_element(1, 1, 0.01)),
            SubsystemModel::scalar(1.0, 1.0)
                .with_coupling(0, DMatrix::from_element(1, 1, 0.01))
                .with_coupling(1, DMatrix::from_element(1, 1, 1.01)),
        ])
        .unwrap()
    }

    fn box_constraints(model: &NetworkModel, xb: f64, ub: f64) -> ConstraintSet {
        let mut cs = Vec::new();
        for i in 0..model.len() {
            for s in [1.0, -1.0] {
                cs.push(HalfSpace::with_bound(i, ConstraintKind::State, vec![s], xb, 0.9));
                cs.push(HalfSpace::with_bound(i, ConstraintKind::Input, vec![s], ub, 0.9));
            }
        }
        ConstraintSet::new(model, cs).unwrap()
    }

    fn iid(std: f64) -> DisturbanceSpec {
        DisturbanceSpec::IidGaussian {
            mean: MeanProfile::Zero,
            covariance: CovarianceSpec::Isotropic { std },
        }
    }

    fn pred(errors: Vec<f64>, feedbacks: Vec<f64>) -> ErrorPrediction {
        ErrorPrediction {
            errors: errors.into_iter().map(|v| DVector::from_element(1, v)).collect(),
            feedbacks: feedbacks.into_iter().map(|v| DVector::from_element(1, v)).collect(),
        }
    }

    #[test]
    fn two_symmetric_samples_cancel_linear_term() {
        let model = NetworkModel::new(vec![
            SubsystemModel::scalar(1.0, 1.0).with_coupling(0, DMatrix::from_element(1, 1, 0.5))
        ])
        .unwrap();
        let mut cost = CostSpec::uniform(&model, AgentCost::scalar(1.0, 0.0), 2);
        cost.agents[0].r = DMatrix::from_element(1, 1, 1.0);
        // one stage, e in {-1, +1}, pi = 0, no terminal weight
        let preds = vec![pred(vec![-1.0, 0.0], vec![0.0]), pred(vec![1.0, 0.0], vec![0.0])];
        let terms = expected_cost_terms(&model, &cost, 0, 0, &preds).unwrap();
        assert_eq!(terms.z_lin[0][0], 0.0);
        assert_eq!(terms.constant, 1.0);
        assert_eq!(terms.z_quad[0][(0, 0)], 2.0);
    }

    #[test]
    fn zero_samples_reduce_to_nominal_cost() {
        let model = chain();
        let cost = CostSpec::uniform(&model, AgentCost::scalar(2.0, 3.0), 1);
        let zero = ErrorPrediction {
            errors: vec![DVector::zeros(2); 4],
            feedbacks: vec![DVector::zeros(2); 3],
        };
        let terms = expected_cost_terms(&model, &cost, 1, 0, &[zero]).unwrap();
        assert_eq!(terms.constant, 0.0);
        assert!(terms.z_lin.iter().chain(&terms.v_lin).all(|v| v[0] == 0.0));
        assert_eq!(terms.v_quad[0][(0, 0)], 6.0);
    }

    #[test]
    fn saa_minimizer_matches_mean_shortcut() {
        // for quadratic cost only the sample mean of e and pi moves the minimizer
        let model = chain();
        let cs = box_constraints(&model, 5.0, 1.0);
        let table = TighteningTable::zeros(&cs, 10);
        let cost = CostSpec::uniform(&model, AgentCost::scalar(1.0, 2.0), 4);
        let tube = TubeController::diagonal(&model, -0.5).unwrap();
        let dist = DisturbanceModel::new(iid(0.3), &model).unwrap();
        let problem = MpcProblem {
            model: &model,
            constraints: &cs,
            tightening: &table,
            cost: &cost,
            tube: &tube,
            disturbance: &dist,
            horizon: 4,
        };
        let state = ControllerState::initial(&DVector::from_vec(vec![1.0, -0.5]));
        let x = DVector::from_vec(vec![1.3, -0.2]);
        let preds = cost_predictions(&problem, &state, &x, &[], 7).unwrap();
        let mean = ErrorPrediction {
            errors: (0..=4)
                .map(|k| preds.iter().map(|p| &p.errors[k]).sum::<DVector<f64>>() / preds.len() as f64)
                .collect(),
            feedbacks: (0..4)
                .map(|k| preds.iter().map(|p| &p.feedbacks[k]).sum::<DVector<f64>>() / preds.len() as f64)
                .collect(),
        };
        let s = SolverChoice::default();
        let a = mpc_step(&problem, &state, &x, &preds, &s).unwrap();
        let b = mpc_step(&problem, &state, &x, &[mean], &s).unwrap();
        for (p, q) in a.report.x.iter().zip(&b.report.x) {
            assert!((p - q).abs() < 1e-6, "{p} vs {q}");
        }
    }

    #[test]
    fn origin_is_optimal_at_rest() {
        let model = chain();
        let cs = box_constraints(&model, 5.0, 1.0);
        let table = TighteningTable::zeros(&cs, 10);
        let cost = CostSpec::uniform(&model, AgentCost::scalar(1.0, 1.0), 0);
        let tube = TubeController::diagonal(&model, -0.5).unwrap();
        let dist = DisturbanceModel::new(iid(0.3), &model).unwrap();
        let problem = MpcProblem {
            model: &model,
            constraints: &cs,
            tightening: &table,
            cost: &cost,
            tube: &tube,
            disturbance: &dist,
            horizon: 5,
        };
        let x = DVector::zeros(2);
        let state = ControllerState::initial(&x);
        let preds = cost_predictions(&problem, &state, &x, &[], 0).unwrap();
        let out = mpc_step(&problem, &state, &x, &preds, &SolverChoice::default()).unwrap();
        assert!(out.report.x.iter().all(|v| v.abs() < 1e-7));
    }

    #[test]
    fn row_count_matches_structure() {
        let model = chain();
        let cs = box_constraints(&model, 5.0, 1.0);
        let table = TighteningTable::zeros(&cs, 10);
        let cost = CostSpec::uniform(&model, AgentCost::scalar(1.0, 1.0), 0);
        let tube = TubeController::diagonal(&model, -0.5).unwrap();
        let dist = DisturbanceModel::new(iid(0.3), &model).unwrap();
        let horizon = 6;
        let problem = MpcProblem {
            model: &model,
            constraints: &cs,
            tightening: &table,
            cost: &cost,
            tube: &tube,
            disturbance: &dist,
            horizon,
        };
        let x = DVector::from_vec(vec![0.5, 0.1]);
        let state = ControllerState::initial(&x);
        let preds = cost_predictions(&problem, &state, &x, &[], 0).unwrap();
        let (qp, _) = assemble_qp(&problem, &state, &x, &preds).unwrap();
        // inequality rows: N (n^x + n^u) per agent; terminal rows: n_i per agent
        assert_eq!(qp.ineq.nrows, 2 * horizon * (2 + 2));
        let terminal = qp.eq_tags.iter().filter(|t| matches!(t, RowTag::Terminal { .. })).count();
        assert_eq!(terminal, 2);
    }

    #[test]
    fn measurement_moves_only_the_linear_cost() {
        let model = chain();
        let cs = box_constraints(&model, 5.0, 1.0);
        let table = TighteningTable::zeros(&cs, 10);
        let cost = CostSpec::uniform(&model, AgentCost::scalar(1.0, 1.0), 3);
        let tube = TubeController::diagonal(&model, -0.5).unwrap();
        let dist = DisturbanceModel::new(iid(0.3), &model).unwrap();
        let problem = MpcProblem {
            model: &model,
            constraints: &cs,
            tightening: &table,
            cost: &cost,
            tube: &tube,
            disturbance: &dist,
            horizon: 4,
        };
        let state = ControllerState::initial(&DVector::from_vec(vec![0.5, 0.1]));
        let build = |x: DVector<f64>| {
            let preds = cost_predictions(&problem, &state, &x, &[], 3).unwrap();
            assemble_qp(&problem, &state, &x, &preds).unwrap().0
        };
        let a = build(DVector::from_vec(vec![0.5, 0.1]));
        let b = build(DVector::from_vec(vec![2.0, -1.0]));
        assert_eq!(a.eq, b.eq);
        assert_eq!(a.eq_rhs, b.eq_rhs);
        assert_eq!(a.ineq, b.ineq);
        assert_eq!(a.ineq_rhs, b.ineq_rhs);
        assert_eq!(a.hessian, b.hessian);
        assert_ne!(a.linear, b.linear);
    }

    #[test]
    fn beyond_task_horizon_is_rejected() {
        let model = chain();
        let cs = box_constraints(&model, 5.0, 1.0);
        let table = TighteningTable::zeros(&cs, 5);
        let cost = CostSpec::uniform(&model, AgentCost::scalar(1.0, 1.0), 0);
        let tube = TubeController::diagonal(&model, -0.5).unwrap();
        let dist = DisturbanceModel::new(iid(0.3), &model).unwrap();
        let problem = MpcProblem {
            model: &model,
            constraints: &cs,
            tightening: &table,
            cost: &cost,
            tube: &tube,
            disturbance: &dist,
            horizon: 4,
        };
        let x = DVector::zeros(2);
        let mut state = ControllerState::initial(&x);
        state.t = 3;
        let preds = cost_predictions(&problem, &state, &x, &[], 0).unwrap();
        assert!(matches!(
            assemble_qp(&problem, &state, &x, &preds),
            Err(MpcError::BeyondTaskHorizon { .. })
        ));
    }

    #[test]
    fn zero_samples_need_iid() {
        let model = chain();
        let cs = box_constraints(&model, 5.0, 1.0);
        let table = TighteningTable::zeros(&cs, 10);
        let cost = CostSpec::uniform(&model, AgentCost::scalar(1.0, 1.0), 0);
        let tube = TubeController::diagonal(&model, -0.5).unwrap();
        let spec = DisturbanceSpec::Ar1Gaussian {
            rho: 0.5,
            mean: MeanProfile::Zero,
            covariance: CovarianceSpec::Isotropic { std: 0.1 },
        };
        let dist = DisturbanceModel::new(spec, &model).unwrap();
        let problem = MpcProblem {
            model: &model,
            constraints: &cs,
            tightening: &table,
            cost: &cost,
            tube: &tube,
            disturbance: &dist,
            horizon: 4,
        };
        let x = DVector::zeros(2);
        let state = ControllerState::initial(&x);
        assert!(cost_predictions(&problem, &state, &x, &[], 0).is_err());
    }

    #[test]
    fn fresh_seeds_differ_frozen_do_not() {
        assert_ne!(step_seed(5, 0, SampleMode::Fresh), step_seed(5, 1, SampleMode::Fresh));
        assert_eq!(step_seed(5, 0, SampleMode::Frozen), step_seed(5, 9, SampleMode::Frozen));
    }
}
