//! Closed-loop simulation: measure, solve, apply `u = v + pi(e)`, step the
//! true network.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disturbance::ScenarioBank;
use crate::mpc::{cost_predictions, mpc_step, step_seed, ControllerState, MpcError, MpcProblem, SampleMode, SolverChoice};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub steps: usize,
    pub solver: SolverChoice,
    pub sample_mode: SampleMode,
    /// Base seed for the MPC cost samples.
    pub cost_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            steps: 96,
            solver: SolverChoice::default(),
            sample_mode: SampleMode::Fresh,
            cost_seed: 0,
        }
    }
}

/// Everything recorded at one closed-loop step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub e: Vec<f64>,
    pub v: Vec<f64>,
    pub pi: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    /// `z(1|t)`, which becomes the carried `z(0|t+1)`.
    pub z_planned_next: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt: f64,
    pub primal_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetadata {
    pub cost_seed: u64,
    pub realization_seed: Option<u64>,
    pub realization_index: Option<usize>,
    pub config_hash: Option<String>,
    pub solver: String,
    #[serde(default)]
    pub state_dims: Vec<usize>,
    #[serde(default)]
    pub input_dims: Vec<usize>,
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub steps: Vec<StepRecord>,
    /// `x` and `z` after the last step.
    pub final_x: Vec<f64>,
    pub final_z: Vec<f64>,
    pub metadata: RunMetadata,
}

impl TrajectoryLog {
    /// Long-format CSV `t,quantity,i,value` (scalar entries indexed by their
    /// stacked position) plus a `<path>.json` metadata sidecar.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "t,quantity,i,value")?;
        for r in &self.steps {
            let series: [(&str, &Vec<f64>); 7] = [
                ("x", &r.x),
                ("z", &r.z),
                ("e", &r.e),
                ("v", &r.v),
                ("pi", &r.pi),
                ("u", &r.u),
                ("w", &r.w),
            ];
            for (name, vals) in series {
                for (i, v) in vals.iter().enumerate() {
                    writeln!(w, "{},{name},{i},{v:?}", r.t)?;
                }
            }
            writeln!(w, "{},objective,0,{:?}", r.t, r.objective)?;
        }
        let t = self.steps.len();
        for (i, v) in self.final_x.iter().enumerate() {
            writeln!(w, "{t},x,{i},{v:?}")?;
        }
        for (i, v) in self.final_z.iter().enumerate() {
            writeln!(w, "{t},z,{i},{v:?}")?;
        }
        w.flush()?;
        let sidecar = serde_json::json!({
            "metadata": self.metadata,
            "steps": self.steps.len(),
            "solve_stats": self.steps.iter().map(|r| serde_json::json!({
                "t": r.t, "iterations": r.iterations, "kkt": r.kkt, "primal_residual": r.primal_residual
            })).collect::<Vec<_>>(),
        });
        std::fs::write(
            sidecar_path(path),
            serde_json::to_string_pretty(&sidecar).expect("json"),
        )
    }

    /// Full log as JSON (lossless round trip).
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    /// `x(t)` for `t = 0..=steps`.
    pub fn states(&self) -> Vec<&[f64]> {
        self.steps
            .iter()
            .map(|r| r.x.as_slice())
            .chain(std::iter::once(self.final_x.as_slice()))
            .collect()
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// A failed run: the error and the steps completed before it.
#[derive(Debug)]
pub struct RunFailure {
    pub error: MpcError,
    pub partial: TrajectoryLog,
}

/// Runs `config.steps` closed-loop steps from `x0` under the disturbance
/// realization `w(0..steps)`.
pub fn closed_loop_run(
    problem: &MpcProblem<'_>,
    x0: &DVector<f64>,
    realization: &[DVector<f64>],
    config: &RunConfig,
) -> Result<TrajectoryLog, Box<RunFailure>> {
    let model = problem.model;
    let mut log = TrajectoryLog {
        steps: Vec::with_capacity(config.steps),
        final_x: x0.as_slice().to_vec(),
        final_z: x0.as_slice().to_vec(),
        metadata: RunMetadata {
            cost_seed: config.cost_seed,
            solver: match config.solver {
                SolverChoice::Central(_) => "central".into(),
                SolverChoice::Admm(_) => "admm".into(),
            },
            state_dims: model.subsystems().iter().map(|s| s.state_dim).collect(),
            input_dims: model.subsystems().iter().map(|s| s.input_dim).collect(),
            ..RunMetadata::default()
        },
    };
    if realization.len() < config.steps {
        return Err(Box::new(RunFailure {
            error: MpcError::InvalidArgument(format!(
                "realization has {} steps, run needs {}",
                realization.len(),
                config.steps
            )),
            partial: log,
        }));
    }
    let mut x = x0.clone();
    let mut state = ControllerState::initial(x0);
    for t in 0..config.steps {
        let result = (|| -> Result<(StepRecord, DVector<f64>, ControllerState), MpcError> {
            let seed = step_seed(config.cost_seed, t, config.sample_mode);
            let preds = cost_predictions(problem, &state, &x, &realization[..t], seed)?;
            let out = mpc_step(problem, &state, &x, &preds, &config.solver)?;
            let e = &x - &state.z;
            let pi = problem.tube.network_feedback(model, e.as_slice())?;
            let u = &out.v + &pi;
            let w = &realization[t];
            let x_next = model.step(x.as_slice(), u.as_slice(), w.as_slice())?;
            let record = StepRecord {
                t,
                x: x.as_slice().to_vec(),
                z: state.z.as_slice().to_vec(),
                e: e.as_slice().to_vec(),
                v: out.v.as_slice().to_vec(),
                pi: pi.as_slice().to_vec(),
                u: u.as_slice().to_vec(),
                w: w.as_slice().to_vec(),
                z_planned_next: out.planned_states[1].as_slice().to_vec(),
                objective: out.qp_objective,
                iterations: out.report.iterations,
                kkt: out.report.kkt.max(),
                primal_residual: out.report.primal_residuals.last().copied().unwrap_or(0.0),
            };
            Ok((record, x_next, out.next))
        })();
        match result {
            Ok((record, x_next, next)) => {
                log.steps.push(record);
                x = x_next;
                state = next;
            }
            Err(error) => {
                log.final_x = x.as_slice().to_vec();
                log.final_z = state.z.as_slice().to_vec();
                return Err(Box::new(RunFailure { error, partial: log }));
            }
        }
    }
    log.final_x = x.as_slice().to_vec();
    log.final_z = state.z.as_slice().to_vec();
    Ok(log)
}

/// Independent closed-loop runs, one per realization in `bank`, in parallel.
/// Run `l` uses cost seed `cost_seed + l`.
pub fn monte_carlo(
    problem: &MpcProblem<'_>,
    x0: &DVector<f64>,
    bank: &ScenarioBank,
    config: &RunConfig,
) -> Vec<Result<TrajectoryLog, Box<RunFailure>>> {
    (0..bank.len())
        .into_par_iter()
        .map(|l| {
            let realization = bank.trajectory(l);
            let cfg = RunConfig {
                cost_seed: config.cost_seed.wrapping_add(l as u64),
                ..*config
            };
            closed_loop_run(problem, x0, &realization, &cfg).map(|mut log| {
                log.metadata.realization_seed = Some(bank.header.seed);
                log.metadata.realization_index = Some(l);
                log
            })
        })
        .collect()
}
