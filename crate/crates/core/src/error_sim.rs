//! Tube feedback and the autonomous error system.
//!
//! Under indirect feedback the error `e = x - z` evolves as
//!
//! ```text
//!   e_i(t+1) = A_{N_i} e_{N_i}(t) + B_i pi_i(e_{N_i}(t)) + G_i w_i(t),   e_i(0) = 0
//! ```
//!
//! independently of the MPC, so it can be simulated offline over a scenario bank.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::disturbance::{DisturbanceModel, ScenarioBank};
use crate::network::{gemv_add, NetworkError, NetworkModel};

#[derive(Debug, Error)]
pub enum ErrorSimError {
    #[error("subsystem {subsystem}: {reason}")]
    Controller { subsystem: usize, reason: String },
    #[error("bank does not match the network: {0}")]
    BankMismatch(String),
    #[error("analytic propagation needs a linear (unsaturated) tube controller")]
    Saturated,
    #[error("analytic propagation needs a Gaussian disturbance law")]
    NotGaussian,
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Per-subsystem gains `K_i` on the neighborhood error, with optional
/// elementwise saturation applied after the linear map.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeController {
    gains: Vec<DMatrix<f64>>,
    saturation: Vec<Option<Vec<(f64, f64)>>>,
}

impl TubeController {
    pub fn new(
        model: &NetworkModel,
        gains: Vec<DMatrix<f64>>,
        saturation: Vec<Option<Vec<(f64, f64)>>>,
    ) -> Result<Self, ErrorSimError> {
        if gains.len() != model.len() || saturation.len() != model.len() {
            return Err(ErrorSimError::Controller {
                subsystem: gains.len().min(saturation.len()),
                reason: format!("expected {} gains and saturation entries", model.len()),
            });
        }
        for (i, k) in gains.iter().enumerate() {
            let expected = (model.subsystem(i).input_dim, model.neighborhood_dim(i));
            if k.shape() != expected {
                return Err(ErrorSimError::Controller {
                    subsystem: i,
                    reason: format!(
                        "gain is {}x{}, expected {}x{}",
                        k.nrows(),
                        k.ncols(),
                        expected.0,
                        expected.1
                    ),
                });
            }
            if let Some(bounds) = &saturation[i] {
                if bounds.len() != expected.0 {
                    return Err(ErrorSimError::Controller {
                        subsystem: i,
                        reason: format!("{} saturation bounds for {} inputs", bounds.len(), expected.0),
                    });
                }
                if bounds.iter().any(|(lo, hi)| lo.is_nan() || hi.is_nan() || lo > hi) {
                    return Err(ErrorSimError::Controller {
                        subsystem: i,
                        reason: "saturation needs lo <= hi".into(),
                    });
                }
            }
        }
        Ok(Self { gains, saturation })
    }

    pub fn linear(model: &NetworkModel, gains: Vec<DMatrix<f64>>) -> Result<Self, ErrorSimError> {
        let n = gains.len();
        Self::new(model, gains, vec![None; n])
    }

    /// `pi_i(e) = k * e_i`: scalar gain on the subsystem's own error only.
    /// Needs `m_i = n_i` and `i` in its own neighborhood.
    pub fn diagonal(model: &NetworkModel, k: f64) -> Result<Self, ErrorSimError> {
        let mut gains = Vec::with_capacity(model.len());
        for i in 0..model.len() {
            let sub = model.subsystem(i);
            if sub.input_dim != sub.state_dim || !sub.coupling.contains_key(&i) {
                return Err(ErrorSimError::Controller {
                    subsystem: i,
                    reason: "diagonal gain needs m_i = n_i and a self-coupling block".into(),
                });
            }
            let mut g = DMatrix::zeros(sub.input_dim, model.neighborhood_dim(i));
            let mut col = 0;
            for &j in sub.coupling.keys() {
                if j == i {
                    for d in 0..sub.state_dim {
                        g[(d, col + d)] = k;
                    }
                }
                col += model.subsystem(j).state_dim;
            }
            gains.push(g);
        }
        Self::linear(model, gains)
    }

    pub fn with_saturation(mut self, subsystem: usize, bounds: Vec<(f64, f64)>) -> Self {
        self.saturation[subsystem] = Some(bounds);
        self
    }

    pub fn gain(&self, i: usize) -> &DMatrix<f64> {
        &self.gains[i]
    }

    pub fn saturation(&self, i: usize) -> Option<&[(f64, f64)]> {
        self.saturation[i].as_deref()
    }

    pub fn is_linear(&self) -> bool {
        self.saturation.iter().all(Option::is_none)
    }

    /// `pi_i(e_{N_i})`.
    pub fn feedback(&self, i: usize, e_neighborhood: &DVector<f64>) -> Result<DVector<f64>, ErrorSimError> {
        let k = &self.gains[i];
        if e_neighborhood.len() != k.ncols() {
            return Err(ErrorSimError::Controller {
                subsystem: i,
                reason: format!(
                    "neighborhood error has length {}, expected {}",
                    e_neighborhood.len(),
                    k.ncols()
                ),
            });
        }
        let mut u = k * e_neighborhood;
        if let Some(bounds) = &self.saturation[i] {
            for (v, (lo, hi)) in u.iter_mut().zip(bounds) {
                *v = v.clamp(*lo, *hi);
            }
        }
        Ok(u)
    }

    /// Gain count and shapes agree with `model`.
    pub fn check_against(&self, model: &NetworkModel) -> Result<(), ErrorSimError> {
        if self.gains.len() != model.len() {
            return Err(ErrorSimError::Controller {
                subsystem: self.gains.len().min(model.len()),
                reason: format!("{} gains for {} subsystems", self.gains.len(), model.len()),
            });
        }
        for (i, k) in self.gains.iter().enumerate() {
            let shape = (model.subsystem(i).input_dim, model.neighborhood_dim(i));
            if k.shape() != shape {
                return Err(ErrorSimError::Controller {
                    subsystem: i,
                    reason: format!("gain is {:?}, expected {:?}", k.shape(), shape),
                });
            }
        }
        Ok(())
    }

    /// Stacked `pi(e)` for the whole network.
    pub fn network_feedback(&self, model: &NetworkModel, e: &[f64]) -> Result<DVector<f64>, ErrorSimError> {
        if e.len() != model.state_dim() {
            return Err(ErrorSimError::BankMismatch(format!(
                "error has length {}, network state dimension {}",
                e.len(),
                model.state_dim()
            )));
        }
        self.check_against(model)?;
        let mut out = DVector::zeros(model.input_dim());
        self.network_feedback_into(model, e, out.as_mut_slice());
        Ok(out)
    }

    /// Allocation-free [`network_feedback`](Self::network_feedback); `e` must
    /// have the network state dimension. Overwrites `out`.
    pub fn network_feedback_into(&self, model: &NetworkModel, e: &[f64], out: &mut [f64]) {
        for i in 0..model.len() {
            let dst = &mut out[model.input_range(i)];
            dst.fill(0.0);
            let k = &self.gains[i];
            let mut col = 0;
            for &j in model.subsystem(i).coupling.keys() {
                let nj = model.subsystem(j).state_dim;
                gemv_add(k.columns(col, nj), &e[model.state_range(j)], dst);
                col += nj;
            }
            if let Some(bounds) = &self.saturation[i] {
                for (v, (lo, hi)) in dst.iter_mut().zip(bounds) {
                    *v = v.clamp(*lo, *hi);
                }
            }
        }
    }

    /// Network-assembled `K` with `pi(e) = K e` (ignores saturation).
    pub fn dense_gain(&self, model: &NetworkModel) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(model.input_dim(), model.state_dim());
        for i in 0..model.len() {
            let r = model.input_range(i).start;
            let mut col = 0;
            for &j in model.subsystem(i).coupling.keys() {
                let nj = model.subsystem(j).state_dim;
                k.view_mut((r, model.state_range(j).start), (self.gains[i].nrows(), nj))
                    .copy_from(&self.gains[i].columns(col, nj));
                col += nj;
            }
        }
        k
    }
}

/// Free-function form of [`TubeController::feedback`].
pub fn tube_feedback(
    controller: &TubeController,
    i: usize,
    e_neighborhood: &DVector<f64>,
) -> Result<DVector<f64>, ErrorSimError> {
    controller.feedback(i, e_neighborhood)
}

/// One error step `A e + B pi(e) + G w`; returns `(e(t+1), pi(t))`.
pub fn error_step(
    model: &NetworkModel,
    controller: &TubeController,
    e: &[f64],
    w: &[f64],
) -> Result<(DVector<f64>, DVector<f64>), ErrorSimError> {
    let pi = controller.network_feedback(model, e)?;
    let next = model.step(e, pi.as_slice(), w)?;
    Ok((next, pi))
}

/// Simulated errors `e^(l)(t)` and feedbacks `pi^(l)(t)` for `t = 0..=N̄`.
///
/// Layout is time-major per sample with subsystems contiguous, so the
/// per-`(i, t)` slices used by tightening are cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBank {
    task_horizon: usize,
    state_width: usize,
    input_width: usize,
    state_offsets: Vec<usize>,
    input_offsets: Vec<usize>,
    errors: Vec<Vec<f64>>,
    feedbacks: Vec<Vec<f64>>,
}

impl ErrorBank {
    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn task_horizon(&self) -> usize {
        self.task_horizon
    }

    pub fn subsystems(&self) -> usize {
        self.state_offsets.len() - 1
    }

    /// Stacked `e^(l)(t)`.
    pub fn errors_at(&self, l: usize, t: usize) -> &[f64] {
        &self.errors[l][t * self.state_width..(t + 1) * self.state_width]
    }

    /// Stacked `pi^(l)(t)`.
    pub fn feedbacks_at(&self, l: usize, t: usize) -> &[f64] {
        &self.feedbacks[l][t * self.input_width..(t + 1) * self.input_width]
    }

    pub fn error(&self, l: usize, t: usize, i: usize) -> &[f64] {
        let base = t * self.state_width;
        &self.errors[l][base + self.state_offsets[i]..base + self.state_offsets[i + 1]]
    }

    pub fn feedback(&self, l: usize, t: usize, i: usize) -> &[f64] {
        let base = t * self.input_width;
        &self.feedbacks[l][base + self.input_offsets[i]..base + self.input_offsets[i + 1]]
    }

    /// Writes `sample,t,e0,...,pi0,...` rows to `path`.
    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(w, "sample,t")?;
        for c in 0..self.state_width {
            write!(w, ",e{c}")?;
        }
        for c in 0..self.input_width {
            write!(w, ",pi{c}")?;
        }
        writeln!(w)?;
        for l in 0..self.len() {
            for t in 0..=self.task_horizon {
                write!(w, "{l},{t}")?;
                for v in self.errors_at(l, t).iter().chain(self.feedbacks_at(l, t)) {
                    write!(w, ",{v:?}")?;
                }
                writeln!(w)?;
            }
        }
        w.flush()
    }
}

/// Runs the error system for every bank sample with `e(0) = 0`.
pub fn simulate_error_bank(
    model: &NetworkModel,
    controller: &TubeController,
    bank: &ScenarioBank,
) -> Result<ErrorBank, ErrorSimError> {
    let dims: Vec<usize> = model.subsystems().iter().map(|s| s.disturbance_dim).collect();
    if bank.header.dims != dims {
        return Err(ErrorSimError::BankMismatch(format!(
            "bank dims {:?}, network dims {:?}",
            bank.header.dims, dims
        )));
    }
    let horizon = bank.task_horizon();
    let n = model.state_dim();
    let m = model.input_dim();
    controller.check_against(model)?;
    let results: Vec<(Vec<f64>, Vec<f64>)> = (0..bank.len())
        .into_par_iter()
        .map(|l| {
            let mut errs = Vec::with_capacity((horizon + 1) * n);
            let mut pis = Vec::with_capacity((horizon + 1) * m);
            let mut e = vec![0.0; n];
            let mut next = vec![0.0; n];
            let mut pi = vec![0.0; m];
            for t in 0..=horizon {
                controller.network_feedback_into(model, &e, &mut pi);
                model.step_into(&e, &pi, bank.at(l, t), &mut next);
                errs.extend_from_slice(&e);
                pis.extend_from_slice(&pi);
                std::mem::swap(&mut e, &mut next);
            }
            (errs, pis)
        })
        .collect();
    let (errors, feedbacks) = results.into_iter().unzip();
    let state_offsets = (0..=model.len())
        .map(|i| if i == model.len() { n } else { model.state_range(i).start })
        .collect();
    let input_offsets = (0..=model.len())
        .map(|i| if i == model.len() { m } else { model.input_range(i).start })
        .collect();
    Ok(ErrorBank {
        task_horizon: horizon,
        state_width: n,
        input_width: m,
        state_offsets,
        input_offsets,
        errors,
        feedbacks,
    })
}

/// Exact first and second moments of the linear error system.
#[derive(Debug, Clone)]
pub struct ErrorMoments {
    pub means: Vec<DVector<f64>>,
    /// Full network covariance of `e(t)`.
    pub covariances: Vec<DMatrix<f64>>,
    state_ranges: Vec<std::ops::Range<usize>>,
    neighborhoods: Vec<Vec<usize>>,
}

impl ErrorMoments {
    /// `Sigma^e_i(t)`.
    pub fn marginal(&self, i: usize, t: usize) -> DMatrix<f64> {
        let r = &self.state_ranges[i];
        self.covariances[t]
            .view((r.start, r.start), (r.len(), r.len()))
            .into_owned()
    }

    pub fn marginal_mean(&self, i: usize, t: usize) -> DVector<f64> {
        let r = &self.state_ranges[i];
        self.means[t].rows(r.start, r.len()).into_owned()
    }

    /// `Sigma^e_{N_i}(t)` in canonical neighborhood order.
    pub fn neighborhood_marginal(&self, i: usize, t: usize) -> DMatrix<f64> {
        let idx: Vec<usize> = self.neighborhoods[i]
            .iter()
            .flat_map(|&j| self.state_ranges[j].clone())
            .collect();
        DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.covariances[t][(idx[r], idx[c])])
    }

    pub fn neighborhood_mean(&self, i: usize, t: usize) -> DVector<f64> {
        let idx: Vec<usize> = self.neighborhoods[i]
            .iter()
            .flat_map(|&j| self.state_ranges[j].clone())
            .collect();
        DVector::from_iterator(idx.len(), idx.iter().map(|&k| self.means[t][k]))
    }
}

/// Propagates mean and covariance of `e(t)` for `t = 0..=N̄` under a linear
/// tube controller and Gaussian AR(1) disturbances.
///
/// With deviation `d(t) = w(t) - mu(t)`, the pair `(e, d)` evolves as
/// `[e; d]' = [[A_cl, G], [0, rho I]] [e; d] + [G mu(t); eps]`, started at
/// `e(0) = 0` and stationary `d(0)`.
pub fn propagate_error_covariance(
    model: &NetworkModel,
    controller: &TubeController,
    disturbance: &DisturbanceModel,
    task_horizon: usize,
) -> Result<ErrorMoments, ErrorSimError> {
    if !controller.is_linear() {
        return Err(ErrorSimError::Saturated);
    }
    let law = disturbance.gaussian().ok_or(ErrorSimError::NotGaussian)?;
    let (a, b, g) = model.dense_dynamics();
    let a_cl = &a + &b * controller.dense_gain(model);
    let n = model.state_dim();
    let p = model.disturbance_dim();
    if law.dim() != p {
        return Err(ErrorSimError::BankMismatch(format!(
            "disturbance dimension {} vs network {p}",
            law.dim()
        )));
    }
    let mut f = DMatrix::zeros(n + p, n + p);
    f.view_mut((0, 0), (n, n)).copy_from(&a_cl);
    f.view_mut((0, n), (n, p)).copy_from(&g);
    for k in 0..p {
        f[(n + k, n + k)] = law.rho;
    }
    let mut q = DMatrix::zeros(n + p, n + p);
    q.view_mut((n, n), (p, p)).copy_from(&law.innovation);
    let mut joint = DMatrix::zeros(n + p, n + p);
    joint
        .view_mut((n, n), (p, p))
        .copy_from(&law.stationary_covariance());

    let mut mean = DVector::zeros(n);
    let mut means = Vec::with_capacity(task_horizon + 1);
    let mut covariances = Vec::with_capacity(task_horizon + 1);
    for t in 0..=task_horizon {
        means.push(mean.clone());
        covariances.push(joint.view((0, 0), (n, n)).into_owned());
        let mu = DVector::from_element(p, law.mean.at(t));
        mean = &a_cl * &mean + &g * mu;
        joint = &f * &joint * f.transpose() + &q;
        // keep exact symmetry against round-off
        joint = (&joint + joint.transpose()) * 0.5;
    }
    Ok(ErrorMoments {
        means,
        covariances,
        state_ranges: (0..model.len()).map(|i| model.state_range(i)).collect(),
        neighborhoods: (0..model.len()).map(|i| model.neighbors(i)).collect(),
    })
}
