//! Empirical chance-constraint statistics over closed-loop logs.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::closed_loop::TrajectoryLog;
use crate::network::{ConstraintKind, ConstraintSet};
use crate::tightening::TighteningTable;

/// Wilson score interval for `k` successes out of `n` at normal quantile `z`.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationEntry {
    pub owner: usize,
    pub kind: ConstraintKind,
    pub index: usize,
    pub t: usize,
    pub violations: usize,
    pub runs: usize,
    pub frequency: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSummary {
    pub owner: usize,
    pub kind: ConstraintKind,
    pub index: usize,
    /// Violations over all runs and steps.
    pub violations: usize,
    pub checks: usize,
    pub max_frequency: f64,
    /// Time step of the largest per-step frequency.
    pub worst_t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub runs: usize,
    pub confidence_z: f64,
    pub entries: Vec<ViolationEntry>,
    pub summary: Vec<ConstraintSummary>,
}

impl ViolationReport {
    pub fn max_frequency(&self, kind: ConstraintKind) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| e.frequency)
            .fold(0.0, f64::max)
    }

    pub fn total_violations(&self, kind: ConstraintKind) -> usize {
        self.summary.iter().filter(|s| s.kind == kind).map(|s| s.violations).sum()
    }

    /// Subsystems with at least one violation of the given kind.
    pub fn violating_subsystems(&self, kind: ConstraintKind) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .summary
            .iter()
            .filter(|s| s.kind == kind && s.violations > 0)
            .map(|s| s.owner)
            .collect();
        v.dedup();
        v
    }

    /// Long-format CSV `kind,i,j,t,violations,runs,frequency,ci_low,ci_high`.
    pub fn save_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "kind,i,j,t,violations,runs,frequency,ci_low,ci_high")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{},{},{},{},{:?},{:?},{:?}",
                e.kind.as_str(),
                e.owner,
                e.index,
                e.t,
                e.violations,
                e.runs,
                e.frequency,
                e.ci_low,
                e.ci_high
            )?;
        }
        w.flush()
    }
}

/// Per-`(i, j, t)` fraction of runs with `h^T x_i(t) > 1` (state) or
/// `h^T u_i(t) > 1` (input). State checks cover `t = 0..=steps`, input checks
/// `t = 0..steps`. Runs shorter than others only count where they have data.
pub fn violation_report(logs: &[TrajectoryLog], constraints: &ConstraintSet, confidence_z: f64) -> ViolationReport {
    let horizon = logs.iter().map(|l| l.steps.len()).max().unwrap_or(0);
    let mut entries = Vec::new();
    let mut summary = Vec::new();
    for (owner, kind, index, h) in constraints.indexed() {
        let mut agg = ConstraintSummary {
            owner,
            kind,
            index,
            violations: 0,
            checks: 0,
            max_frequency: 0.0,
            worst_t: 0,
        };
        let last = match kind {
            ConstraintKind::State => horizon + 1,
            ConstraintKind::Input => horizon,
        };
        for t in 0..last {
            let mut violations = 0;
            let mut runs = 0;
            for log in logs {
                let values: Option<&[f64]> = match kind {
                    ConstraintKind::State => log.states().get(t).copied(),
                    ConstraintKind::Input => log.steps.get(t).map(|r| r.u.as_slice()),
                };
                let Some(vals) = values else { continue };
                let slice = owner_slice(log, kind, owner, vals);
                runs += 1;
                if h.value(slice) > 1.0 {
                    violations += 1;
                }
            }
            if runs == 0 {
                continue;
            }
            let frequency = violations as f64 / runs as f64;
            let (ci_low, ci_high) = wilson_interval(violations, runs, confidence_z);
            agg.violations += violations;
            agg.checks += runs;
            if frequency > agg.max_frequency {
                agg.max_frequency = frequency;
                agg.worst_t = t;
            }
            entries.push(ViolationEntry {
                owner,
                kind,
                index,
                t,
                violations,
                runs,
                frequency,
                ci_low,
                ci_high,
            });
        }
        summary.push(agg);
    }
    ViolationReport {
        runs: logs.len(),
        confidence_z,
        entries,
        summary,
    }
}

// Logs store stacked vectors; scalar layouts are the common case but block
// layouts are recovered from the per-step dimensions.
fn owner_slice<'a>(log: &TrajectoryLog, kind: ConstraintKind, owner: usize, vals: &'a [f64]) -> &'a [f64] {
    let dims = match kind {
        ConstraintKind::State => &log.metadata.state_dims,
        ConstraintKind::Input => &log.metadata.input_dims,
    };
    if dims.is_empty() {
        return &vals[owner..owner + 1];
    }
    let start: usize = dims[..owner].iter().sum();
    &vals[start..start + dims[owner]]
}

/// A nominal input that exceeds its tightened bound `h^T v > 1 - c^u + tol`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalInputViolation {
    pub run: usize,
    pub owner: usize,
    pub index: usize,
    pub t: usize,
    pub excess: f64,
}

/// Checks every logged nominal input against the tightened input rows.
pub fn nominal_input_violations(
    logs: &[TrajectoryLog],
    constraints: &ConstraintSet,
    table: &TighteningTable,
    tol: f64,
) -> Vec<NominalInputViolation> {
    let mut out = Vec::new();
    for (run, log) in logs.iter().enumerate() {
        for rec in &log.steps {
            for (owner, kind, index, h) in constraints.indexed() {
                if kind != ConstraintKind::Input {
                    continue;
                }
                let c = table.get(kind, owner, index, rec.t).unwrap_or(0.0);
                let v = owner_slice(log, kind, owner, &rec.v);
                let excess = h.value(v) - (1.0 - c);
                if excess > tol {
                    out.push(NominalInputViolation {
                        run,
                        owner,
                        index,
                        t: rec.t,
                        excess,
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::closed_loop::{RunMetadata, StepRecord};
    use crate::network::{HalfSpace, NetworkModel, SubsystemModel};
    use nalgebra::DMatrix;

    fn log_with(xs: &[f64]) -> TrajectoryLog {
        TrajectoryLog {
            steps: xs[..xs.len() - 1]
                .iter()
                .enumerate()
                .map(|(t, &x)| StepRecord {
                    t,
                    x: vec![x],
                    z: vec![0.0],
                    e: vec![x],
                    v: vec![0.0],
                    pi: vec![0.0],
                    u: vec![0.0],
                    w: vec![0.0],
                    z_planned_next: vec![0.0],
                    objective: 0.0,
                    iterations: 0,
                    kkt: 0.0,
                    primal_residual: 0.0,
                })
                .collect(),
            final_x: vec![*xs.last().unwrap()],
            final_z: vec![0.0],
            metadata: RunMetadata::default(),
        }
    }

    fn scalar_constraints() -> ConstraintSet {
        let model = NetworkModel::new(vec![
            SubsystemModel::scalar(1.0, 1.0).with_coupling(0, DMatrix::from_element(1, 1, 0.5))
        ])
        .unwrap();
        ConstraintSet::new(
            &model,
            vec![HalfSpace::with_bound(0, ConstraintKind::State, vec![1.0], 5.0, 0.9)],
        )
        .unwrap()
    }

    #[test]
    fn counts_violations_per_step() {
        let cs = scalar_constraints();
        let mut logs: Vec<TrajectoryLog> = (0..7).map(|_| log_with(&[0.0; 8])).collect();
        for _ in 0..3 {
            let mut xs = vec![0.0; 8];
            xs[5] = 6.0;
            logs.push(log_with(&xs));
        }
        let rep = violation_report(&logs, &cs, 1.96);
        let e = rep.entries.iter().find(|e| e.t == 5).unwrap();
        assert_eq!(e.frequency, 0.3);
        assert!(rep.entries.iter().filter(|e| e.t != 5).all(|e| e.frequency == 0.0));
        assert_eq!(rep.violating_subsystems(ConstraintKind::State), vec![0]);
    }

    #[test]
    fn clean_logs_have_zero_frequency() {
        let cs = scalar_constraints();
        let logs = vec![log_with(&[0.0, 1.0, 2.0])];
        let rep = violation_report(&logs, &cs, 1.96);
        assert_eq!(rep.max_frequency(ConstraintKind::State), 0.0);
    }

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson_interval(3, 10, 1.96);
        assert!(lo < 0.3 && 0.3 < hi);
        assert_eq!(wilson_interval(0, 10, 1.96).0, 0.0);
    }
}
