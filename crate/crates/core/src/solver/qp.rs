//! Convex QP in triplet form:
//!
//! ```text
//!   minimize    1/2 x^T H x + f^T x + c
//!   subject to  A_eq x  = b_eq
//!               A_in x <= b_in
//! ```

use std::fmt;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use super::SolveError;

/// Coordinate-format sparse matrix; duplicate entries are summed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.nrows && c < self.ncols);
        if v != 0.0 {
            self.entries.push((r, c, v));
        }
    }

    /// Appends a row and returns its index.
    pub fn push_row(&mut self, coeffs: impl IntoIterator<Item = (usize, f64)>) -> usize {
        let r = self.nrows;
        self.nrows += 1;
        for (c, v) in coeffs {
            self.push(r, c, v);
        }
        r
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    /// Entries merged and sorted column-major.
    pub fn compressed(&self) -> Vec<(usize, usize, f64)> {
        let mut e = self.entries.clone();
        e.sort_by_key(|t| (t.1, t.0));
        let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(e.len());
        for (r, c, v) in e {
            match out.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => out.push((r, c, v)),
            }
        }
        out.retain(|e| e.2 != 0.0);
        out
    }

    /// `y += M x`.
    pub fn mul_add(&self, x: &[f64], y: &mut [f64]) {
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
    }

    /// `y += M^T x`.
    pub fn tr_mul_add(&self, x: &[f64], y: &mut [f64]) {
        for &(r, c, v) in &self.entries {
            y[c] += v * x[r];
        }
    }

    /// Row-wise view: `rows[r]` lists `(col, value)` after merging.
    pub fn rows(&self) -> Vec<Vec<(usize, f64)>> {
        let mut rows = vec![Vec::new(); self.nrows];
        for (r, c, v) in self.compressed() {
            rows[r].push((c, v));
        }
        rows
    }
}

/// What a constraint row encodes, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowTag {
    Generic,
    /// `z_i(0|t)` fixed to the carried nominal state.
    Initial { agent: usize },
    /// Nominal dynamics from step `k` to `k+1`.
    Dynamics { agent: usize, k: usize },
    /// `z_i(N|t) = 0`.
    Terminal { agent: usize },
    /// Tightened state half-space `j` at prediction step `k`.
    State { agent: usize, j: usize, k: usize },
    /// Tightened input half-space `j` at prediction step `k`.
    Input { agent: usize, j: usize, k: usize },
}

impl RowTag {
    pub fn agent(&self) -> Option<usize> {
        match *self {
            RowTag::Generic => None,
            RowTag::Initial { agent }
            | RowTag::Dynamics { agent, .. }
            | RowTag::Terminal { agent }
            | RowTag::State { agent, .. }
            | RowTag::Input { agent, .. } => Some(agent),
        }
    }
}

impl fmt::Display for RowTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowTag::Generic => write!(f, "row"),
            RowTag::Initial { agent } => write!(f, "initial(i={agent})"),
            RowTag::Dynamics { agent, k } => write!(f, "dynamics(i={agent},k={k})"),
            RowTag::Terminal { agent } => write!(f, "terminal(i={agent})"),
            RowTag::State { agent, j, k } => write!(f, "state(i={agent},j={j},k={k})"),
            RowTag::Input { agent, j, k } => write!(f, "input(i={agent},j={j},k={k})"),
        }
    }
}

/// Agent ownership of variables and rows, used to split the QP across agents.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentAnnotation {
    pub agents: usize,
    pub var_owner: Vec<usize>,
    pub eq_owner: Vec<usize>,
    pub ineq_owner: Vec<usize>,
    /// Variables of each agent that neighbors hold copies of.
    pub shared: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub num_vars: usize,
    /// Symmetric; both triangles stored.
    pub hessian: Triplets,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub eq: Triplets,
    pub eq_rhs: Vec<f64>,
    pub eq_tags: Vec<RowTag>,
    pub ineq: Triplets,
    pub ineq_rhs: Vec<f64>,
    pub ineq_tags: Vec<RowTag>,
    pub annotation: Option<AgentAnnotation>,
}

impl QpProblem {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            hessian: Triplets::new(num_vars, num_vars),
            linear: vec![0.0; num_vars],
            constant: 0.0,
            eq: Triplets::new(0, num_vars),
            eq_rhs: Vec::new(),
            eq_tags: Vec::new(),
            ineq: Triplets::new(0, num_vars),
            ineq_rhs: Vec::new(),
            ineq_tags: Vec::new(),
            annotation: None,
        }
    }

    /// Dense convenience constructor (`H` symmetric).
    pub fn from_dense(
        h: &DMatrix<f64>,
        f: &[f64],
        a_eq: &DMatrix<f64>,
        b_eq: &[f64],
        a_in: &DMatrix<f64>,
        b_in: &[f64],
    ) -> Self {
        let n = f.len();
        let mut qp = Self::new(n);
        for r in 0..n {
            for c in 0..n {
                qp.hessian.push(r, c, h[(r, c)]);
            }
        }
        qp.linear = f.to_vec();
        for (r, &b) in b_eq.iter().enumerate() {
            qp.add_eq((0..n).map(|c| (c, a_eq[(r, c)])), b, RowTag::Generic);
        }
        for (r, &b) in b_in.iter().enumerate() {
            qp.add_ineq((0..n).map(|c| (c, a_in[(r, c)])), b, RowTag::Generic);
        }
        qp
    }

    pub fn add_eq(&mut self, coeffs: impl IntoIterator<Item = (usize, f64)>, rhs: f64, tag: RowTag) -> usize {
        let r = self.eq.push_row(coeffs);
        self.eq_rhs.push(rhs);
        self.eq_tags.push(tag);
        r
    }

    pub fn add_ineq(&mut self, coeffs: impl IntoIterator<Item = (usize, f64)>, rhs: f64, tag: RowTag) -> usize {
        let r = self.ineq.push_row(coeffs);
        self.ineq_rhs.push(rhs);
        self.ineq_tags.push(tag);
        r
    }

    /// Adds `1/2 * weight * x_a x_b` symmetric contributions.
    pub fn add_quadratic(&mut self, a: usize, b: usize, v: f64) {
        self.hessian.push(a, b, v);
        if a != b {
            self.hessian.push(b, a, v);
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut hx = vec![0.0; self.num_vars];
        self.hessian.mul_add(x, &mut hx);
        let quad: f64 = x.iter().zip(&hx).map(|(a, b)| a * b).sum();
        let lin: f64 = x.iter().zip(&self.linear).map(|(a, b)| a * b).sum();
        0.5 * quad + lin + self.constant
    }

    /// `max |A_eq x - b_eq|` and `max (A_in x - b_in)_+`.
    pub fn constraint_violation(&self, x: &[f64]) -> (f64, f64) {
        let mut ax = vec![0.0; self.eq.nrows];
        self.eq.mul_add(x, &mut ax);
        let eq = ax
            .iter()
            .zip(&self.eq_rhs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let mut ax = vec![0.0; self.ineq.nrows];
        self.ineq.mul_add(x, &mut ax);
        let ineq = ax
            .iter()
            .zip(&self.ineq_rhs)
            .map(|(a, b)| (a - b).max(0.0))
            .fold(0.0, f64::max);
        (eq, ineq)
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let n = self.num_vars;
        let bad = |s: String| Err(SolveError::InvalidProblem(s));
        if self.linear.len() != n || self.hessian.nrows != n || self.hessian.ncols != n {
            return bad("objective dimensions".into());
        }
        if self.eq.ncols != n || self.ineq.ncols != n {
            return bad("constraint column count".into());
        }
        if self.eq_rhs.len() != self.eq.nrows || self.ineq_rhs.len() != self.ineq.nrows {
            return bad("constraint right-hand sides".into());
        }
        if self.eq_tags.len() != self.eq.nrows || self.ineq_tags.len() != self.ineq.nrows {
            return bad("row tags".into());
        }
        let finite = |v: &f64| v.is_finite();
        if !self.linear.iter().all(finite)
            || !self.eq_rhs.iter().all(finite)
            || !self.ineq_rhs.iter().all(finite)
            || !self.hessian.entries.iter().all(|e| e.2.is_finite())
            || !self.eq.entries.iter().all(|e| e.2.is_finite())
            || !self.ineq.entries.iter().all(|e| e.2.is_finite())
        {
            return bad("non-finite data".into());
        }
        let h = self.hessian.compressed();
        let mut sym = std::collections::HashMap::with_capacity(h.len());
        for &(r, c, v) in &h {
            sym.insert((r, c), v);
        }
        for &(r, c, v) in &h {
            let other = sym.get(&(c, r)).copied().unwrap_or(0.0);
            if (v - other).abs() > 1e-12 * v.abs().max(1.0) {
                return bad(format!("hessian not symmetric at ({r},{c})"));
            }
        }
        if let Some(a) = &self.annotation {
            if a.var_owner.len() != n || a.eq_owner.len() != self.eq.nrows || a.ineq_owner.len() != self.ineq.nrows {
                return bad("annotation dimensions".into());
            }
        }
        Ok(())
    }

    /// Text export: one `section row col value` line per entry.
    ///
    /// ```text
    /// # dsmpc-qp 1
    /// dims <n> <m_eq> <m_in>
    /// const <c>
    /// H <r> <c> <v>      (both triangles)
    /// f <i> <v>
    /// Aeq <r> <c> <v>
    /// beq <r> <v>
    /// Ain <r> <c> <v>
    /// bin <r> <v>
    /// ```
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# dsmpc-qp 1")?;
        writeln!(w, "dims {} {} {}", self.num_vars, self.eq.nrows, self.ineq.nrows)?;
        writeln!(w, "const {:?}", self.constant)?;
        for (r, c, v) in self.hessian.compressed() {
            writeln!(w, "H {r} {c} {v:?}")?;
        }
        for (i, v) in self.linear.iter().enumerate() {
            if *v != 0.0 {
                writeln!(w, "f {i} {v:?}")?;
            }
        }
        for (r, c, v) in self.eq.compressed() {
            writeln!(w, "Aeq {r} {c} {v:?}")?;
        }
        for (r, v) in self.eq_rhs.iter().enumerate() {
            writeln!(w, "beq {r} {v:?}")?;
        }
        for (r, c, v) in self.ineq.compressed() {
            writeln!(w, "Ain {r} {c} {v:?}")?;
        }
        for (r, v) in self.ineq_rhs.iter().enumerate() {
            writeln!(w, "bin {r} {v:?}")?;
        }
        Ok(())
    }

    /// Reads the format of [`QpProblem::write_triplets`]. Row tags and
    /// annotations are not part of the format.
    pub fn read_triplets<R: BufRead>(r: R) -> Result<Self, SolveError> {
        let bad = |n: usize, s: &str| SolveError::InvalidProblem(format!("line {}: {s}", n + 1));
        let mut qp: Option<QpProblem> = None;
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| SolveError::InvalidProblem(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let us = |s: &str| s.parse::<usize>().map_err(|_| bad(n, "bad index"));
            let fl = |s: &str| s.parse::<f64>().map_err(|_| bad(n, "bad value"));
            if f[0] == "dims" {
                if f.len() != 4 {
                    return Err(bad(n, "dims needs 3 fields"));
                }
                let mut p = QpProblem::new(us(f[1])?);
                let (meq, min) = (us(f[2])?, us(f[3])?);
                p.eq.nrows = meq;
                p.eq_rhs = vec![0.0; meq];
                p.eq_tags = vec![RowTag::Generic; meq];
                p.ineq.nrows = min;
                p.ineq_rhs = vec![0.0; min];
                p.ineq_tags = vec![RowTag::Generic; min];
                qp = Some(p);
                continue;
            }
            let p = qp.as_mut().ok_or_else(|| bad(n, "dims must come first"))?;
            let check = |r: usize, bound: usize| if r < bound { Ok(r) } else { Err(bad(n, "index out of range")) };
            match (f[0], f.len()) {
                ("const", 2) => p.constant = fl(f[1])?,
                ("H", 4) => {
                    let (r, c) = (check(us(f[1])?, p.num_vars)?, check(us(f[2])?, p.num_vars)?);
                    p.hessian.push(r, c, fl(f[3])?);
                }
                ("f", 3) => {
                    let i = check(us(f[1])?, p.num_vars)?;
                    p.linear[i] = fl(f[2])?;
                }
                ("Aeq", 4) => {
                    let (r, c) = (check(us(f[1])?, p.eq.nrows)?, check(us(f[2])?, p.num_vars)?);
                    p.eq.push(r, c, fl(f[3])?);
                }
                ("beq", 3) => {
                    let r = check(us(f[1])?, p.eq.nrows)?;
                    p.eq_rhs[r] = fl(f[2])?;
                }
                ("Ain", 4) => {
                    let (r, c) = (check(us(f[1])?, p.ineq.nrows)?, check(us(f[2])?, p.num_vars)?);
                    p.ineq.push(r, c, fl(f[3])?);
                }
                ("bin", 3) => {
                    let r = check(us(f[1])?, p.ineq.nrows)?;
                    p.ineq_rhs[r] = fl(f[2])?;
                }
                _ => return Err(bad(n, "unknown record")),
            }
        }
        qp.ok_or_else(|| SolveError::InvalidProblem("missing dims record".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplet_text_round_trip() {
        let mut qp = QpProblem::new(3);
        qp.add_quadratic(0, 0, 2.0);
        qp.add_quadratic(0, 2, 0.5);
        qp.add_quadratic(1, 1, 1.0 / 3.0);
        qp.linear = vec![1.0, -0.1, 0.0];
        qp.constant = 7.25;
        qp.add_eq([(0, 1.0), (1, -1.0)], 0.3, RowTag::Generic);
        qp.add_ineq([(2, 1.0)], 1.0, RowTag::Generic);
        qp.add_ineq([(0, -1.0), (2, 2.0)], 0.0, RowTag::Generic);
        let mut buf = Vec::new();
        qp.write_triplets(&mut buf).unwrap();
        let back = QpProblem::read_triplets(&buf[..]).unwrap();
        assert_eq!(back.hessian.to_dense(), qp.hessian.to_dense());
        assert_eq!(back.eq.to_dense(), qp.eq.to_dense());
        assert_eq!(back.ineq.to_dense(), qp.ineq.to_dense());
        assert_eq!(back.linear, qp.linear);
        assert_eq!(back.eq_rhs, qp.eq_rhs);
        assert_eq!(back.ineq_rhs, qp.ineq_rhs);
        assert_eq!(back.constant, qp.constant);
        let x = [0.3, -1.0, 2.0];
        assert_eq!(back.objective(&x), qp.objective(&x));
    }

    #[test]
    fn asymmetric_hessian_rejected() {
        let mut qp = QpProblem::new(2);
        qp.hessian.push(0, 1, 1.0);
        assert!(qp.validate().is_err());
    }
}
