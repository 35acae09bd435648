//! Centralized QP solve.
//!
//! Variables pinned by singleton equality rows are substituted out first, so
//! rows acting only on fixed data (for example a tightened state bound on the
//! carried initial nominal state) become plain feasibility checks. The rest
//! goes to the Clarabel interior-point solver. KKT residuals are recomputed on
//! the original problem.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use serde::{Deserialize, Serialize};

use super::qp::{QpProblem, Triplets};
use super::{RowKind, RowRef, SolveError, SolveReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CentralSettings {
    /// Interior-point feasibility and gap tolerance.
    pub tol: f64,
    pub max_iter: u32,
    /// Allowed violation of rows that only involve fixed variables.
    pub constant_row_slack: f64,
}

impl Default for CentralSettings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
            constant_row_slack: 1e-6,
        }
    }
}

fn csc(nrows: usize, ncols: usize, entries: &[(usize, usize, f64)]) -> CscMatrix<f64> {
    // entries are column-major sorted and merged
    let mut colptr = vec![0usize; ncols + 1];
    for &(_, c, _) in entries {
        colptr[c + 1] += 1;
    }
    for c in 0..ncols {
        colptr[c + 1] += colptr[c];
    }
    let rowval = entries.iter().map(|e| e.0).collect();
    let nzval = entries.iter().map(|e| e.2).collect();
    CscMatrix::new(nrows, ncols, colptr, rowval, nzval)
}

struct Presolved {
    /// `Some(value)` for fixed variables.
    fixed: Vec<Option<f64>>,
    /// Original index of each reduced variable.
    free: Vec<usize>,
    /// Singleton equality rows used to fix a variable: `(row, var, coeff)`.
    fixing_rows: Vec<(usize, usize, f64)>,
    /// Remaining equality rows on the reduced variables.
    eq_rows: Vec<ReducedRow>,
    ineq_rows: Vec<ReducedRow>,
}

/// `(original row, coefficients on reduced variables, rhs)`.
type ReducedRow = (usize, Vec<(usize, f64)>, f64);

fn presolve(qp: &QpProblem, settings: &CentralSettings) -> Result<Presolved, SolveError> {
    let n = qp.num_vars;
    let eq_rows = qp.eq.rows();
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    let mut fixing_rows = Vec::new();
    let mut consumed = vec![false; eq_rows.len()];
    for (r, row) in eq_rows.iter().enumerate() {
        if let [(c, a)] = row[..] {
            let value = qp.eq_rhs[r] / a;
            // a second singleton on the same variable is kept as a check row
            if fixed[c].is_none() {
                fixed[c] = Some(value);
                fixing_rows.push((r, c, a));
                consumed[r] = true;
            }
        }
    }
    let mut map = vec![usize::MAX; n];
    let mut free = Vec::new();
    for v in 0..n {
        if fixed[v].is_none() {
            map[v] = free.len();
            free.push(v);
        }
    }
    let reduce = |row: &[(usize, f64)], rhs: f64| -> (Vec<(usize, f64)>, f64) {
        let mut out = Vec::with_capacity(row.len());
        let mut b = rhs;
        for &(c, a) in row {
            match fixed[c] {
                Some(v) => b -= a * v,
                None => out.push((map[c], a)),
            }
        }
        (out, b)
    };
    let mut eq_out = Vec::new();
    for (r, row) in eq_rows.iter().enumerate() {
        if consumed[r] {
            continue;
        }
        let (coeffs, b) = reduce(row, qp.eq_rhs[r]);
        if coeffs.is_empty() {
            if b.abs() > settings.constant_row_slack {
                return Err(SolveError::Infeasible {
                    rows: vec![RowRef {
                        kind: RowKind::Equality,
                        index: r,
                        tag: qp.eq_tags[r],
                    }],
                    detail: format!("fixed-data equality row violated by {b:e}"),
                });
            }
            continue;
        }
        eq_out.push((r, coeffs, b));
    }
    let mut ineq_out = Vec::new();
    for (r, row) in qp.ineq.rows().iter().enumerate() {
        let (coeffs, b) = reduce(row, qp.ineq_rhs[r]);
        if coeffs.is_empty() {
            if b < -settings.constant_row_slack {
                return Err(SolveError::Infeasible {
                    rows: vec![RowRef {
                        kind: RowKind::Inequality,
                        index: r,
                        tag: qp.ineq_tags[r],
                    }],
                    detail: format!("fixed-data inequality row violated by {:e}", -b),
                });
            }
            continue;
        }
        ineq_out.push((r, coeffs, b));
    }
    Ok(Presolved {
        fixed,
        free,
        fixing_rows,
        eq_rows: eq_out,
        ineq_rows: ineq_out,
    })
}

/// Solves a convex QP to tolerance and reports KKT residuals.
pub fn solve_centralized(qp: &QpProblem, settings: &CentralSettings) -> Result<SolveReport, SolveError> {
    qp.validate()?;
    let pre = presolve(qp, settings)?;
    let n = qp.num_vars;
    let nf = pre.free.len();
    let mut x: Vec<f64> = pre.fixed.iter().map(|v| v.unwrap_or(0.0)).collect();
    let mut eq_mult = vec![0.0; qp.eq.nrows];
    let mut ineq_mult = vec![0.0; qp.ineq.nrows];
    let mut iterations = 0;

    if nf > 0 {
        // reduced objective: H_ff, f_f + H_f,fixed x_fixed
        let mut map = vec![usize::MAX; n];
        for (k, &v) in pre.free.iter().enumerate() {
            map[v] = k;
        }
        let mut q: Vec<f64> = pre.free.iter().map(|&v| qp.linear[v]).collect();
        let mut p_entries = Vec::new();
        for (r, c, v) in qp.hessian.compressed() {
            match (map[r], pre.fixed[c]) {
                (fr, None) if fr != usize::MAX => {
                    let fc = map[c];
                    if fr <= fc {
                        p_entries.push((fr, fc, v));
                    }
                }
                (fr, Some(val)) if fr != usize::MAX => q[fr] += v * val,
                _ => {}
            }
        }
        p_entries.sort_by_key(|e| (e.1, e.0));
        let p = csc(nf, nf, &p_entries);

        let m_eq = pre.eq_rows.len();
        let m_in = pre.ineq_rows.len();
        let mut a_entries = Vec::new();
        let mut b = Vec::with_capacity(m_eq + m_in);
        for (k, (_, coeffs, rhs)) in pre.eq_rows.iter().chain(&pre.ineq_rows).enumerate() {
            for &(c, v) in coeffs {
                a_entries.push((k, c, v));
            }
            b.push(*rhs);
        }
        let a_trip = Triplets {
            nrows: m_eq + m_in,
            ncols: nf,
            entries: a_entries,
        };
        let a = csc(m_eq + m_in, nf, &a_trip.compressed());
        let mut cones = Vec::new();
        if m_eq > 0 {
            cones.push(SupportedConeT::ZeroConeT(m_eq));
        }
        if m_in > 0 {
            cones.push(SupportedConeT::NonnegativeConeT(m_in));
        }
        let cl_settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(settings.max_iter)
            .tol_feas(settings.tol)
            .tol_gap_abs(settings.tol)
            .tol_gap_rel(settings.tol)
            .presolve_enable(false)
            .build()
            .map_err(|e| SolveError::Numerical(format!("{e:?}")))?;
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, cl_settings)
            .map_err(|e| SolveError::Numerical(format!("{e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        iterations = sol.iterations as usize;
        match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {}
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                let zmax = sol.z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let rows = sol
                    .z
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| v.abs() > 1e-6 * zmax)
                    .map(|(k, _)| {
                        if k < m_eq {
                            let r = pre.eq_rows[k].0;
                            RowRef {
                                kind: RowKind::Equality,
                                index: r,
                                tag: qp.eq_tags[r],
                            }
                        } else {
                            let r = pre.ineq_rows[k - m_eq].0;
                            RowRef {
                                kind: RowKind::Inequality,
                                index: r,
                                tag: qp.ineq_tags[r],
                            }
                        }
                    })
                    .collect();
                return Err(SolveError::Infeasible {
                    rows,
                    detail: "interior-point infeasibility certificate".into(),
                });
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                return Err(SolveError::Unbounded);
            }
            other => return Err(SolveError::Numerical(format!("solver stopped with {other:?}"))),
        }
        for (k, &v) in pre.free.iter().enumerate() {
            x[v] = sol.x[k];
        }
        for (k, (r, _, _)) in pre.eq_rows.iter().enumerate() {
            eq_mult[*r] = sol.z[k];
        }
        for (k, (r, _, _)) in pre.ineq_rows.iter().enumerate() {
            ineq_mult[*r] = sol.z[m_eq + k].max(0.0);
        }
    }

    // multipliers of fixing rows from stationarity on the fixed columns
    let mut grad = qp.linear.clone();
    qp.hessian.mul_add(&x, &mut grad);
    qp.eq.tr_mul_add(&eq_mult, &mut grad);
    qp.ineq.tr_mul_add(&ineq_mult, &mut grad);
    for &(r, c, a) in &pre.fixing_rows {
        eq_mult[r] = -grad[c] / a;
        grad[c] = 0.0;
    }
    let kkt = kkt_residual(qp, &x, &eq_mult, &ineq_mult);
    Ok(SolveReport {
        objective: qp.objective(&x),
        x,
        iterations,
        primal_residuals: vec![kkt.primal],
        dual_residuals: vec![kkt.stationarity],
        converged: true,
        kkt,
        eq_multipliers: eq_mult,
        ineq_multipliers: ineq_mult,
        traffic: Vec::new(),
        penalties: Vec::new(),
    })
}

/// First-order optimality residuals.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResidual {
    /// `max |H x + f + A_eq^T y + A_in^T lambda|`.
    pub stationarity: f64,
    /// Largest equality or inequality violation.
    pub primal: f64,
    /// `max |lambda_i (b_i - a_i^T x)|`.
    pub complementarity: f64,
    /// `max (-lambda_i)_+`.
    pub dual_infeasibility: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.complementarity)
            .max(self.dual_infeasibility)
    }
}

pub fn kkt_residual(qp: &QpProblem, x: &[f64], eq_mult: &[f64], ineq_mult: &[f64]) -> KktResidual {
    let mut grad = qp.linear.clone();
    qp.hessian.mul_add(x, &mut grad);
    qp.eq.tr_mul_add(eq_mult, &mut grad);
    qp.ineq.tr_mul_add(ineq_mult, &mut grad);
    let stationarity = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (eq, ineq) = qp.constraint_violation(x);
    let mut ax = vec![0.0; qp.ineq.nrows];
    qp.ineq.mul_add(x, &mut ax);
    let complementarity = ax
        .iter()
        .zip(&qp.ineq_rhs)
        .zip(ineq_mult)
        .map(|((a, b), l)| (l * (b - a)).abs())
        .fold(0.0, f64::max);
    let dual_infeasibility = ineq_mult.iter().map(|l| (-l).max(0.0)).fold(0.0, f64::max);
    KktResidual {
        stationarity,
        primal: eq.max(ineq),
        complementarity,
        dual_infeasibility,
    }
}
