//! Consensus ADMM over the neighbor graph.
//!
//! Each agent keeps its own variables plus local copies of the shared
//! variables of its strict neighbors. Every shared variable has a consensus
//! value held by its owner. One round is: local penalized solves (in
//! parallel), a gather phase in which copy holders send `x + u` to owners, an
//! owner-side average, and a scatter phase returning the consensus values.
//! Duals are kept in scaled form.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bus::{Message, MessageBus, Phase};
use super::central::{kkt_residual, solve_centralized, CentralSettings};
use super::qp::QpProblem;
use super::{RowKind, RowRef, SolveError, SolveReport};
use crate::network::NetworkModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmParams {
    pub rho: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iters: usize,
    /// Residual balancing: rescale rho by `adapt_factor` when one residual
    /// exceeds the other by `adapt_threshold`.
    pub adaptive: bool,
    pub adapt_factor: f64,
    pub adapt_threshold: f64,
    /// Tolerance of the local interior-point solves.
    pub local_tol: f64,
}

impl Default for AdmmParams {
    fn default() -> Self {
        Self {
            rho: 1.0,
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iters: 5000,
            adaptive: true,
            adapt_factor: 2.0,
            adapt_threshold: 10.0,
            local_tol: 1e-10,
        }
    }
}

/// One consensus component: a local slot that must agree with a global
/// variable owned by `owner`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pairing {
    pub local: usize,
    pub global: usize,
    pub owner: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSubproblem {
    pub agent: usize,
    /// Global index of each local variable; own variables come first.
    pub vars: Vec<usize>,
    pub n_own: usize,
    /// Consensus components, own shared variables included.
    pub pairings: Vec<Pairing>,
    /// Local cost and constraint blocks over `vars`, without penalty terms.
    pub qp: QpProblem,
    /// Global index of each local equality / inequality row.
    pub eq_rows: Vec<usize>,
    pub ineq_rows: Vec<usize>,
}

impl AgentSubproblem {
    /// Pairings on variables owned by other agents.
    pub fn copies(&self) -> impl Iterator<Item = &Pairing> {
        self.pairings.iter().filter(move |p| p.owner != self.agent)
    }

    pub fn copy_count(&self) -> usize {
        self.copies().count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub subproblems: Vec<AgentSubproblem>,
    /// Kept for objective and KKT reporting; agents never read it.
    pub full: QpProblem,
}

impl Partition {
    pub fn copy_count(&self) -> usize {
        self.subproblems.iter().map(|s| s.copy_count()).sum()
    }

    /// Directed edges used by the gather (copier to owner) and scatter
    /// (owner to copier) phases.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e = std::collections::BTreeSet::new();
        for s in &self.subproblems {
            for p in s.copies() {
                e.insert((s.agent, p.owner));
                e.insert((p.owner, s.agent));
            }
        }
        e.into_iter().collect()
    }
}

/// Splits an annotated QP into per-agent subproblems.
pub fn partition_problem(qp: &QpProblem, model: &NetworkModel) -> Result<Partition, SolveError> {
    qp.validate()?;
    let ann = qp.annotation.as_ref().ok_or(SolveError::MissingAnnotation)?;
    let m = ann.agents;
    if m != model.len() {
        return Err(SolveError::InvalidProblem(format!(
            "annotation has {m} agents, network has {}",
            model.len()
        )));
    }
    let owner = &ann.var_owner;
    let mut shared_flag = vec![false; qp.num_vars];
    for (j, vars) in ann.shared.iter().enumerate() {
        for &g in vars {
            if owner[g] != j {
                return Err(SolveError::Partition {
                    agent: j,
                    reason: format!("shares variable {g} owned by agent {}", owner[g]),
                });
            }
            shared_flag[g] = true;
        }
    }
    for &(r, c, _) in &qp.hessian.entries {
        if owner[r] != owner[c] {
            return Err(SolveError::Partition {
                agent: owner[r],
                reason: format!("objective couples variables {r} and {c} of different agents"),
            });
        }
    }
    let eq_rows = qp.eq.rows();
    let ineq_rows = qp.ineq.rows();
    let mut eq_of = vec![Vec::new(); m];
    let mut ineq_of = vec![Vec::new(); m];
    for (r, &a) in ann.eq_owner.iter().enumerate() {
        eq_of[a].push(r);
    }
    for (r, &a) in ann.ineq_owner.iter().enumerate() {
        ineq_of[a].push(r);
    }

    // shared variables of j are copied by every i with j in N_i \ {i}; only
    // those take part in consensus
    let mut copied = vec![false; m];
    for i in 0..m {
        for j in model.strict_neighbors(i) {
            copied[j] = true;
        }
    }

    let mut subproblems = Vec::with_capacity(m);
    for i in 0..m {
        let neighbors = model.neighbors(i);
        let own: Vec<usize> = (0..qp.num_vars).filter(|&g| owner[g] == i).collect();
        // every variable referenced by i's rows must be its own or a copied
        // shared variable of a neighbor
        for row in eq_of[i].iter().map(|&r| &eq_rows[r]).chain(ineq_of[i].iter().map(|&r| &ineq_rows[r])) {
            for &(g, _) in row {
                let j = owner[g];
                if j == i {
                    continue;
                }
                if !neighbors.contains(&j) {
                    return Err(SolveError::Partition {
                        agent: i,
                        reason: format!("row references variable {g} of non-neighbor {j}"),
                    });
                }
                if !shared_flag[g] {
                    return Err(SolveError::Partition {
                        agent: i,
                        reason: format!("row references private variable {g} of agent {j}"),
                    });
                }
            }
        }
        let mut vars = own.clone();
        let mut pairings = Vec::new();
        for (k, &g) in own.iter().enumerate() {
            if shared_flag[g] && copied[i] {
                pairings.push(Pairing {
                    local: k,
                    global: g,
                    owner: i,
                });
            }
        }
        for j in model.strict_neighbors(i) {
            for &g in &ann.shared[j] {
                pairings.push(Pairing {
                    local: vars.len(),
                    global: g,
                    owner: j,
                });
                vars.push(g);
            }
        }
        let local_of: BTreeMap<usize, usize> = vars.iter().enumerate().map(|(k, &g)| (g, k)).collect();
        let mut local = QpProblem::new(vars.len());
        for &(r, c, v) in &qp.hessian.entries {
            if owner[r] == i {
                local.hessian.push(local_of[&r], local_of[&c], v);
            }
        }
        for (k, &g) in own.iter().enumerate() {
            local.linear[k] = qp.linear[g];
        }
        for &r in &eq_of[i] {
            local.add_eq(
                eq_rows[r].iter().map(|&(g, v)| (local_of[&g], v)),
                qp.eq_rhs[r],
                qp.eq_tags[r],
            );
        }
        for &r in &ineq_of[i] {
            local.add_ineq(
                ineq_rows[r].iter().map(|&(g, v)| (local_of[&g], v)),
                qp.ineq_rhs[r],
                qp.ineq_tags[r],
            );
        }
        subproblems.push(AgentSubproblem {
            agent: i,
            n_own: own.len(),
            vars,
            pairings,
            qp: local,
            eq_rows: eq_of[i].clone(),
            ineq_rows: ineq_of[i].clone(),
        });
    }
    Ok(Partition {
        subproblems,
        full: qp.clone(),
    })
}

/// `(x, equality multipliers, inequality multipliers)` of one local solve.
type LocalSolution = (Vec<f64>, Vec<f64>, Vec<f64>);

fn local_solve(
    sub: &AgentSubproblem,
    rho: f64,
    target: &[f64],
    settings: &CentralSettings,
) -> Result<LocalSolution, SolveError> {
    let mut qp = sub.qp.clone();
    for (p, &t) in sub.pairings.iter().zip(target) {
        qp.hessian.push(p.local, p.local, rho);
        qp.linear[p.local] -= rho * t;
    }
    match solve_centralized(&qp, settings) {
        Ok(r) => Ok((r.x, r.eq_multipliers, r.ineq_multipliers)),
        Err(SolveError::Infeasible { rows, detail }) => Err(SolveError::Infeasible {
            rows: rows
                .into_iter()
                .map(|row| RowRef {
                    index: match row.kind {
                        RowKind::Equality => sub.eq_rows[row.index],
                        RowKind::Inequality => sub.ineq_rows[row.index],
                    },
                    ..row
                })
                .collect(),
            detail: format!("agent {}: {detail}", sub.agent),
        }),
        Err(e) => Err(e),
    }
}

/// Runs bulk-synchronous consensus ADMM. Returns a report flagged
/// `converged = false` when `max_iters` is reached.
pub fn solve_admm(partition: &Partition, params: &AdmmParams) -> Result<SolveReport, SolveError> {
    let subs = &partition.subproblems;
    let full = &partition.full;
    let n_agents = subs.len();
    let settings = CentralSettings {
        tol: params.local_tol,
        ..CentralSettings::default()
    };
    let mut bus = MessageBus::new(n_agents, partition.edges());
    let total_pairings: usize = subs.iter().map(|s| s.pairings.len()).sum();
    let sqrt_p = (total_pairings as f64).sqrt();

    // consensus values, indexed by global variable; written only by owners
    let mut consensus = vec![0.0; full.num_vars];
    let mut duals: Vec<Vec<f64>> = subs.iter().map(|s| vec![0.0; s.pairings.len()]).collect();
    let mut rho = params.rho;
    let mut primal_hist = Vec::new();
    let mut dual_hist = Vec::new();
    let mut rho_hist = Vec::new();
    let mut locals: Vec<LocalSolution> = Vec::new();
    let mut converged = false;

    for round in 0..params.max_iters.max(1) {
        // each agent's view of the consensus values it pairs with
        let targets: Vec<Vec<f64>> = subs
            .iter()
            .zip(&duals)
            .map(|(s, u)| s.pairings.iter().zip(u).map(|(p, u)| consensus[p.global] - u).collect())
            .collect();
        locals = subs
            .par_iter()
            .zip(targets.par_iter())
            .map(|(s, t)| local_solve(s, rho, t, &settings))
            .collect::<Result<_, _>>()?;

        // gather: copy holders send x + u to owners
        bus.begin(round, Phase::Gather);
        for (a, s) in subs.iter().enumerate() {
            let mut by_owner: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
            for (k, p) in s.pairings.iter().enumerate() {
                if p.owner != s.agent {
                    by_owner
                        .entry(p.owner)
                        .or_default()
                        .push((p.global, locals[a].0[p.local] + duals[a][k]));
                }
            }
            for (owner, payload) in by_owner {
                bus.send(Message {
                    from: s.agent,
                    to: owner,
                    payload,
                })?;
            }
        }
        bus.close()?;

        // owners average their own value with all received copies
        let previous = consensus.clone();
        let mut copy_holders: Vec<BTreeMap<usize, Vec<usize>>> = vec![BTreeMap::new(); n_agents];
        for (a, s) in subs.iter().enumerate() {
            let mut sum: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
            for (k, p) in s.pairings.iter().enumerate() {
                if p.owner == s.agent {
                    sum.insert(p.global, (locals[a].0[p.local] + duals[a][k], 1));
                }
            }
            for msg in bus.inbox(s.agent) {
                for &(g, v) in &msg.payload {
                    let e = sum.get_mut(&g).ok_or_else(|| {
                        SolveError::Numerical(format!("agent {} received unknown variable {g}", s.agent))
                    })?;
                    e.0 += v;
                    e.1 += 1;
                    copy_holders[s.agent].entry(msg.from).or_default().push(g);
                }
            }
            for (g, (total, count)) in sum {
                consensus[g] = total / count as f64;
            }
        }

        // scatter: owners return consensus values to copy holders
        bus.begin(round, Phase::Scatter);
        for (owner, holders) in copy_holders.iter().enumerate() {
            for (&to, vars) in holders {
                bus.send(Message {
                    from: owner,
                    to,
                    payload: vars.iter().map(|&g| (g, consensus[g])).collect(),
                })?;
            }
        }
        bus.close()?;

        let mut r2 = 0.0;
        let mut s2 = 0.0;
        let mut x_sq = 0.0;
        let mut z_sq = 0.0;
        let mut u_sq = 0.0;
        for (a, s) in subs.iter().enumerate() {
            let received: BTreeMap<usize, f64> = bus
                .inbox(s.agent)
                .iter()
                .flat_map(|m| m.payload.iter().copied())
                .collect();
            for (k, p) in s.pairings.iter().enumerate() {
                let zg = if p.owner == s.agent {
                    consensus[p.global]
                } else {
                    received[&p.global]
                };
                let x = locals[a].0[p.local];
                duals[a][k] += x - zg;
                r2 += (x - zg) * (x - zg);
                let dz = zg - previous[p.global];
                s2 += dz * dz;
                x_sq += x * x;
                z_sq += zg * zg;
                u_sq += duals[a][k] * duals[a][k];
            }
        }
        let r = r2.sqrt();
        let s = rho * s2.sqrt();
        primal_hist.push(r);
        dual_hist.push(s);
        rho_hist.push(rho);
        let eps_pri = sqrt_p * params.eps_abs + params.eps_rel * x_sq.sqrt().max(z_sq.sqrt());
        let eps_dual = sqrt_p * params.eps_abs + params.eps_rel * rho * u_sq.sqrt();
        if r <= eps_pri && s <= eps_dual {
            converged = true;
            break;
        }
        if params.adaptive {
            let scale = if r > params.adapt_threshold * s {
                params.adapt_factor
            } else if s > params.adapt_threshold * r {
                1.0 / params.adapt_factor
            } else {
                1.0
            };
            if scale != 1.0 {
                rho *= scale;
                for u in duals.iter_mut().flatten() {
                    *u /= scale;
                }
            }
        }
    }

    // owners report their own variables; row multipliers come from the
    // owning agent's local solve
    let mut x = vec![0.0; full.num_vars];
    let mut eq_mult = vec![0.0; full.eq.nrows];
    let mut ineq_mult = vec![0.0; full.ineq.nrows];
    for (s, (xl, yl, ll)) in subs.iter().zip(&locals) {
        for k in 0..s.n_own {
            x[s.vars[k]] = xl[k];
        }
        for (k, &r) in s.eq_rows.iter().enumerate() {
            eq_mult[r] = yl[k];
        }
        for (k, &r) in s.ineq_rows.iter().enumerate() {
            ineq_mult[r] = ll[k];
        }
    }
    let kkt = kkt_residual(full, &x, &eq_mult, &ineq_mult);
    Ok(SolveReport {
        objective: full.objective(&x),
        iterations: primal_hist.len(),
        x,
        primal_residuals: primal_hist,
        dual_residuals: dual_hist,
        penalties: rho_hist,
        converged,
        kkt,
        eq_multipliers: eq_mult,
        ineq_multipliers: ineq_mult,
        traffic: bus.into_log(),
    })
}
