//! Structured QP solvers: a centralized interior-point oracle and consensus
//! ADMM over the neighbor graph.

pub mod admm;
pub mod bus;
pub mod central;
pub mod qp;

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use admm::{partition_problem, solve_admm, AdmmParams, AgentSubproblem, Partition};
pub use bus::{MessageBus, Phase, TrafficRecord};
pub use central::{kkt_residual, solve_centralized, CentralSettings, KktResidual};
pub use qp::{AgentAnnotation, QpProblem, RowTag, Triplets};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    Equality,
    Inequality,
}

/// A constraint row of the original problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowRef {
    pub kind: RowKind,
    pub index: usize,
    pub tag: RowTag,
}

impl fmt::Display for RowRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            RowKind::Equality => "eq",
            RowKind::Inequality => "ineq",
        };
        write!(f, "{k}[{}] {}", self.index, self.tag)
    }
}

fn fmt_rows(rows: &[RowRef]) -> String {
    let mut s: Vec<String> = rows.iter().take(8).map(|r| r.to_string()).collect();
    if rows.len() > 8 {
        s.push(format!("... ({} rows)", rows.len()));
    }
    s.join(", ")
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("problem is infeasible ({detail}): {}", fmt_rows(.rows))]
    Infeasible { rows: Vec<RowRef>, detail: String },
    #[error("problem is unbounded below")]
    Unbounded,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("problem carries no agent annotation")]
    MissingAnnotation,
    #[error("agent {agent}: {reason}")]
    Partition { agent: usize, reason: String },
    #[error("message from {from} to {to} is not along a graph edge")]
    Locality { from: usize, to: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Per round for ADMM; a single entry for the centralized solver.
    pub primal_residuals: Vec<f64>,
    pub dual_residuals: Vec<f64>,
    /// ADMM penalty used in each round.
    pub penalties: Vec<f64>,
    pub converged: bool,
    pub kkt: KktResidual,
    pub eq_multipliers: Vec<f64>,
    pub ineq_multipliers: Vec<f64>,
    pub traffic: Vec<TrafficRecord>,
}

impl SolveReport {
    /// `(round, messages, values)` per round.
    pub fn round_traffic(&self) -> Vec<(usize, usize, usize)> {
        let mut out: Vec<(usize, usize, usize)> = Vec::new();
        for rec in &self.traffic {
            match out.last_mut() {
                Some(last) if last.0 == rec.round => {
                    last.1 += 1;
                    last.2 += rec.values;
                }
                _ => out.push((rec.round, 1, rec.values)),
            }
        }
        out
    }

    pub fn write_residuals_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "round,primal,dual,rho")?;
        for (k, (p, d)) in self.primal_residuals.iter().zip(&self.dual_residuals).enumerate() {
            let rho = self.penalties.get(k).copied().unwrap_or(f64::NAN);
            writeln!(w, "{k},{p:?},{d:?},{rho:?}")?;
        }
        Ok(())
    }

    pub fn write_traffic_csv<W: Write>(&self, w: W) -> io::Result<()> {
        bus::write_traffic_csv(&self.traffic, w)
    }
}
