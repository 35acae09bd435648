//! Coupled linear time-invariant networks.
//!
//! Each subsystem `i` evolves as
//!
//! ```text
//!   x_i(t+1) = sum_{j in N_i} A_ij x_j(t) + B_i u_i(t) + G_i w_i(t)
//! ```
//!
//! where the neighbor set `N_i` holds every `j` whose coupling block is
//! nonzero. Blocks are stored sparsely by neighbor; [`NetworkModel::dense_dynamics`]
//! assembles the full matrices for oracles and covariance propagation.
//!
//! Stacked vectors (`x`, `u`, `w`, and neighborhood vectors `x_{N_i}`) always
//! use ascending subsystem order.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("subsystem {subsystem}: {what} has length {found}, expected {expected}")]
    DimensionMismatch {
        subsystem: usize,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("stacked {what} vector has length {found}, expected {expected}")]
    StackedLength {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("matrix is {rows}x{cols}, expected a square matrix")]
    NotSquare { rows: usize, cols: usize },
    #[error("invalid network: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("invalid constraint #{index}: {reason}")]
    InvalidConstraint { index: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed network file: {0}")]
    Parse(#[from] serde_json::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// One entry of a [`validate_network`] report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// A coupling block references a subsystem index `>= M`.
    UnknownNeighbor { subsystem: usize, neighbor: usize },
    /// A block's shape disagrees with the declared dimensions.
    BlockShape {
        subsystem: usize,
        block: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    /// A stored coupling block is identically zero.
    SpuriousNeighbor { subsystem: usize, neighbor: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownNeighbor {
                subsystem,
                neighbor,
            } => write!(f, "subsystem {subsystem} couples to unknown subsystem {neighbor}"),
            Violation::BlockShape {
                subsystem,
                block,
                expected,
                found,
            } => write!(
                f,
                "subsystem {subsystem}: block {block} is {}x{}, expected {}x{}",
                found.0, found.1, expected.0, expected.1
            ),
            Violation::SpuriousNeighbor {
                subsystem,
                neighbor,
            } => write!(
                f,
                "subsystem {subsystem}: stored coupling to {neighbor} is all zero (spurious neighbor)"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemModel {
    pub state_dim: usize,
    pub input_dim: usize,
    pub disturbance_dim: usize,
    /// `A_ij` keyed by `j`; iteration order is the canonical neighborhood order.
    pub coupling: BTreeMap<usize, DMatrix<f64>>,
    pub input_matrix: DMatrix<f64>,
    pub disturbance_matrix: DMatrix<f64>,
}

impl SubsystemModel {
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        disturbance_dim: usize,
        input_matrix: DMatrix<f64>,
        disturbance_matrix: DMatrix<f64>,
    ) -> Self {
        Self {
            state_dim,
            input_dim,
            disturbance_dim,
            coupling: BTreeMap::new(),
            input_matrix,
            disturbance_matrix,
        }
    }

    /// Scalar subsystem `x' = sum a_ij x_j + b u + g w`.
    pub fn scalar(b: f64, g: f64) -> Self {
        Self::new(
            1,
            1,
            1,
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, g),
        )
    }

    pub fn with_coupling(mut self, neighbor: usize, block: DMatrix<f64>) -> Self {
        self.coupling.insert(neighbor, block);
        self
    }
}

/// Block-structured coupled LTI network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    subsystems: Vec<SubsystemModel>,
    state_offsets: Vec<usize>,
    input_offsets: Vec<usize>,
    disturbance_offsets: Vec<usize>,
}

fn offsets(dims: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut out = vec![0];
    for d in dims {
        let last = *out.last().unwrap();
        out.push(last + d);
    }
    out
}

impl NetworkModel {
    /// Builds and validates a network.
    pub fn new(subsystems: Vec<SubsystemModel>) -> Result<Self, NetworkError> {
        let model = Self::new_unchecked(subsystems);
        let report = validate_network(&model);
        if report.is_empty() {
            Ok(model)
        } else {
            Err(NetworkError::Invalid(report))
        }
    }

    /// Builds a network without validation; pair with [`validate_network`].
    pub fn new_unchecked(subsystems: Vec<SubsystemModel>) -> Self {
        let state_offsets = offsets(subsystems.iter().map(|s| s.state_dim));
        let input_offsets = offsets(subsystems.iter().map(|s| s.input_dim));
        let disturbance_offsets = offsets(subsystems.iter().map(|s| s.disturbance_dim));
        Self {
            subsystems,
            state_offsets,
            input_offsets,
            disturbance_offsets,
        }
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn subsystem(&self, i: usize) -> &SubsystemModel {
        &self.subsystems[i]
    }

    pub fn subsystems(&self) -> &[SubsystemModel] {
        &self.subsystems
    }

    pub fn state_dim(&self) -> usize {
        *self.state_offsets.last().unwrap()
    }

    pub fn input_dim(&self) -> usize {
        *self.input_offsets.last().unwrap()
    }

    pub fn disturbance_dim(&self) -> usize {
        *self.disturbance_offsets.last().unwrap()
    }

    pub fn state_range(&self, i: usize) -> std::ops::Range<usize> {
        self.state_offsets[i]..self.state_offsets[i + 1]
    }

    pub fn input_range(&self, i: usize) -> std::ops::Range<usize> {
        self.input_offsets[i]..self.input_offsets[i + 1]
    }

    pub fn disturbance_range(&self, i: usize) -> std::ops::Range<usize> {
        self.disturbance_offsets[i]..self.disturbance_offsets[i + 1]
    }

    /// `N_i`, ascending. Contains `i` itself when `A_ii` is stored.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.subsystems[i].coupling.keys().copied().collect()
    }

    /// `N_i \ {i}`.
    pub fn strict_neighbors(&self, i: usize) -> Vec<usize> {
        self.subsystems[i]
            .coupling
            .keys()
            .copied()
            .filter(|&j| j != i)
            .collect()
    }

    /// `n_{N_i}`, the length of the neighborhood state vector.
    pub fn neighborhood_dim(&self, i: usize) -> usize {
        self.subsystems[i]
            .coupling
            .keys()
            .map(|&j| self.subsystems[j].state_dim)
            .sum()
    }

    /// Gathers `x_{N_i}` from a stacked network vector.
    pub fn neighborhood_vector(&self, i: usize, stacked: &[f64]) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.neighborhood_dim(i));
        for &j in self.subsystems[i].coupling.keys() {
            out.extend_from_slice(&stacked[self.state_range(j)]);
        }
        DVector::from_vec(out)
    }

    /// `A_{N_i}` as one `n_i x n_{N_i}` matrix.
    pub fn neighborhood_matrix(&self, i: usize) -> DMatrix<f64> {
        let sub = &self.subsystems[i];
        let mut out = DMatrix::zeros(sub.state_dim, self.neighborhood_dim(i));
        let mut col = 0;
        for block in sub.coupling.values() {
            out.view_mut((0, col), (block.nrows(), block.ncols()))
                .copy_from(block);
            col += block.ncols();
        }
        out
    }

    /// Dense `(A, B, G)` with block-diagonal `B` and `G`.
    pub fn dense_dynamics(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = self.state_dim();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, self.input_dim());
        let mut g = DMatrix::zeros(n, self.disturbance_dim());
        for (i, sub) in self.subsystems.iter().enumerate() {
            let r = self.state_offsets[i];
            for (&j, block) in &sub.coupling {
                a.view_mut((r, self.state_offsets[j]), block.shape())
                    .copy_from(block);
            }
            b.view_mut((r, self.input_offsets[i]), sub.input_matrix.shape())
                .copy_from(&sub.input_matrix);
            g.view_mut(
                (r, self.disturbance_offsets[i]),
                sub.disturbance_matrix.shape(),
            )
            .copy_from(&sub.disturbance_matrix);
        }
        (a, b, g)
    }

    fn check_stacked(&self, what: &'static str, v: &[f64], expected: usize) -> Result<(), NetworkError> {
        if v.len() == expected {
            return Ok(());
        }
        let offs = match what {
            "state" => &self.state_offsets,
            "input" => &self.input_offsets,
            _ => &self.disturbance_offsets,
        };
        // first subsystem whose slice is cut short or that has leftover entries
        let subsystem = offs
            .windows(2)
            .position(|w| w[1] > v.len())
            .unwrap_or(self.len().saturating_sub(1));
        Err(NetworkError::DimensionMismatch {
            subsystem,
            what,
            expected,
            found: v.len(),
        })
    }

    /// Local update `A_{N_i} x_{N_i} + B_i u_i + G_i w_i` for one subsystem.
    pub fn step_subsystem(
        &self,
        i: usize,
        x_neighborhood: &DVector<f64>,
        u_i: &[f64],
        w_i: &[f64],
    ) -> Result<DVector<f64>, NetworkError> {
        let sub = &self.subsystems[i];
        let nn = self.neighborhood_dim(i);
        if x_neighborhood.len() != nn {
            return Err(NetworkError::DimensionMismatch {
                subsystem: i,
                what: "neighborhood state",
                expected: nn,
                found: x_neighborhood.len(),
            });
        }
        if u_i.len() != sub.input_dim {
            return Err(NetworkError::DimensionMismatch {
                subsystem: i,
                what: "input",
                expected: sub.input_dim,
                found: u_i.len(),
            });
        }
        if w_i.len() != sub.disturbance_dim {
            return Err(NetworkError::DimensionMismatch {
                subsystem: i,
                what: "disturbance",
                expected: sub.disturbance_dim,
                found: w_i.len(),
            });
        }
        let mut next = DVector::zeros(sub.state_dim);
        let mut col = 0;
        for block in sub.coupling.values() {
            let seg = x_neighborhood.rows(col, block.ncols());
            next.gemv(1.0, block, &seg, 1.0);
            col += block.ncols();
        }
        next.gemv(1.0, &sub.input_matrix, &DVector::from_column_slice(u_i), 1.0);
        next.gemv(
            1.0,
            &sub.disturbance_matrix,
            &DVector::from_column_slice(w_i),
            1.0,
        );
        Ok(next)
    }

    /// One step of the full network in neighborhood form.
    pub fn step(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<DVector<f64>, NetworkError> {
        self.check_stacked("state", x, self.state_dim())?;
        self.check_stacked("input", u, self.input_dim())?;
        self.check_stacked("disturbance", w, self.disturbance_dim())?;
        let mut out = DVector::zeros(self.state_dim());
        self.step_into(x, u, w, out.as_mut_slice());
        Ok(out)
    }

    /// Allocation-free [`step`](Self::step) for stacked vectors of the right
    /// lengths; overwrites `out`.
    pub fn step_into(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]) {
        for (i, sub) in self.subsystems.iter().enumerate() {
            let dst = &mut out[self.state_offsets[i]..self.state_offsets[i + 1]];
            dst.fill(0.0);
            for (&j, block) in &sub.coupling {
                gemv_add(block.as_view(), &x[self.state_range(j)], dst);
            }
            gemv_add(sub.input_matrix.as_view(), &u[self.input_range(i)], dst);
            gemv_add(sub.disturbance_matrix.as_view(), &w[self.disturbance_range(i)], dst);
        }
    }
}

/// `y += A x`, column by column.
pub(crate) fn gemv_add(a: nalgebra::DMatrixView<'_, f64>, x: &[f64], y: &mut [f64]) {
    for (c, xc) in x.iter().enumerate() {
        for (r, yr) in y.iter_mut().enumerate() {
            *yr += a[(r, c)] * xc;
        }
    }
}

/// Free-function form of [`NetworkModel::step`].
pub fn step_dynamics(
    model: &NetworkModel,
    x: &[f64],
    u: &[f64],
    w: &[f64],
) -> Result<DVector<f64>, NetworkError> {
    model.step(x, u, w)
}

/// Lists every dimension or index inconsistency; empty means valid.
pub fn validate_network(model: &NetworkModel) -> Vec<Violation> {
    let m = model.len();
    let mut out = Vec::new();
    for (i, sub) in model.subsystems.iter().enumerate() {
        for (&j, block) in &sub.coupling {
            if j >= m {
                out.push(Violation::UnknownNeighbor {
                    subsystem: i,
                    neighbor: j,
                });
                continue;
            }
            let expected = (sub.state_dim, model.subsystems[j].state_dim);
            if block.shape() != expected {
                out.push(Violation::BlockShape {
                    subsystem: i,
                    block: format!("A_{i}{j}"),
                    expected,
                    found: block.shape(),
                });
            } else if block.iter().all(|&v| v == 0.0) {
                out.push(Violation::SpuriousNeighbor {
                    subsystem: i,
                    neighbor: j,
                });
            }
        }
        let b_expected = (sub.state_dim, sub.input_dim);
        if sub.input_matrix.shape() != b_expected {
            out.push(Violation::BlockShape {
                subsystem: i,
                block: format!("B_{i}"),
                expected: b_expected,
                found: sub.input_matrix.shape(),
            });
        }
        let g_expected = (sub.state_dim, sub.disturbance_dim);
        if sub.disturbance_matrix.shape() != g_expected {
            out.push(Violation::BlockShape {
                subsystem: i,
                block: format!("G_{i}"),
                expected: g_expected,
                found: sub.disturbance_matrix.shape(),
            });
        }
    }
    out
}

/// Strict row-wise Geršgorin test: every row has `|a_ii| + sum_{j != i} |a_ij| < 1`.
pub fn gersgorin_stable(a: &DMatrix<f64>) -> Result<bool, NetworkError> {
    Ok(gersgorin_violations(a)?.is_empty())
}

/// Rows failing the strict Geršgorin row-sum condition.
pub fn gersgorin_violations(a: &DMatrix<f64>) -> Result<Vec<usize>, NetworkError> {
    if a.nrows() != a.ncols() {
        return Err(NetworkError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok((0..a.nrows())
        .filter(|&r| a.row(r).iter().map(|v| v.abs()).sum::<f64>() >= 1.0)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    State,
    Input,
}

impl ConstraintKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintKind::State => "state",
            ConstraintKind::Input => "input",
        }
    }
}

/// `Pr(h^T x_i <= 1) >= p` (or the same on `u_i`).
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub owner: usize,
    pub kind: ConstraintKind,
    pub direction: DVector<f64>,
    pub probability: f64,
}

impl HalfSpace {
    pub fn new(owner: usize, kind: ConstraintKind, direction: Vec<f64>, probability: f64) -> Self {
        Self {
            owner,
            kind,
            direction: DVector::from_vec(direction),
            probability,
        }
    }

    /// `h^T x <= bound`, normalized to level one. Requires `bound > 0`.
    pub fn with_bound(
        owner: usize,
        kind: ConstraintKind,
        direction: Vec<f64>,
        bound: f64,
        probability: f64,
    ) -> Self {
        let h = DVector::from_vec(direction) / bound;
        Self {
            owner,
            kind,
            direction: h,
            probability,
        }
    }

    pub fn value(&self, v: &[f64]) -> f64 {
        self.direction.iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

/// Ordered chance-constraint list. The index `j` of a half-space is its
/// position among the constraints of the same owner and kind.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    constraints: Vec<HalfSpace>,
}

impl ConstraintSet {
    pub fn new(model: &NetworkModel, constraints: Vec<HalfSpace>) -> Result<Self, NetworkError> {
        for (index, c) in constraints.iter().enumerate() {
            let bad = |reason: String| NetworkError::InvalidConstraint { index, reason };
            if c.owner >= model.len() {
                return Err(bad(format!("owner {} out of range", c.owner)));
            }
            let sub = model.subsystem(c.owner);
            let dim = match c.kind {
                ConstraintKind::State => sub.state_dim,
                ConstraintKind::Input => sub.input_dim,
            };
            if c.direction.len() != dim {
                return Err(bad(format!(
                    "direction has length {}, expected {dim}",
                    c.direction.len()
                )));
            }
            if c.direction.iter().all(|&v| v == 0.0) || c.direction.iter().any(|v| !v.is_finite()) {
                return Err(bad("direction must be finite and nonzero".into()));
            }
            if !(c.probability > 0.0 && c.probability < 1.0) {
                return Err(bad(format!("probability {} outside (0,1)", c.probability)));
            }
        }
        Ok(Self { constraints })
    }

    pub fn all(&self) -> &[HalfSpace] {
        &self.constraints
    }

    pub fn of(&self, owner: usize, kind: ConstraintKind) -> Vec<&HalfSpace> {
        self.constraints
            .iter()
            .filter(|c| c.owner == owner && c.kind == kind)
            .collect()
    }

    pub fn count(&self, owner: usize, kind: ConstraintKind) -> usize {
        self.constraints
            .iter()
            .filter(|c| c.owner == owner && c.kind == kind)
            .count()
    }

    /// `(owner, kind, j, constraint)` for every entry.
    pub fn indexed(&self) -> Vec<(usize, ConstraintKind, usize, &HalfSpace)> {
        let mut counters: BTreeMap<(usize, ConstraintKind), usize> = BTreeMap::new();
        self.constraints
            .iter()
            .map(|c| {
                let j = counters.entry((c.owner, c.kind)).or_insert(0);
                let out = (c.owner, c.kind, *j, c);
                *j += 1;
                out
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// JSON network description

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingEntry {
    pub neighbor: usize,
    /// Row-major `n_i x n_neighbor`.
    pub matrix: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsystemEntry {
    pub state_dim: usize,
    pub input_dim: usize,
    pub disturbance_dim: usize,
    pub coupling: Vec<CouplingEntry>,
    /// Row-major `n_i x m_i`.
    pub input_matrix: Vec<f64>,
    /// Row-major `n_i x p_i`.
    pub disturbance_matrix: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintEntry {
    pub owner: usize,
    pub kind: ConstraintKind,
    pub direction: Vec<f64>,
    /// Right-hand side; the constraint is rescaled to level one. Must be positive.
    #[serde(default = "one")]
    pub bound: f64,
    pub probability: f64,
}

fn one() -> f64 {
    1.0
}

/// On-disk network description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    pub subsystems: Vec<SubsystemEntry>,
    #[serde(default)]
    pub constraints: Vec<ConstraintEntry>,
}

fn row_major(rows: usize, cols: usize, data: &[f64], subsystem: usize, what: &'static str) -> Result<DMatrix<f64>, NetworkError> {
    if data.len() != rows * cols {
        return Err(NetworkError::DimensionMismatch {
            subsystem,
            what,
            expected: rows * cols,
            found: data.len(),
        });
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl NetworkFile {
    pub fn from_model(model: &NetworkModel, constraints: &ConstraintSet) -> Self {
        let subsystems = model
            .subsystems()
            .iter()
            .map(|s| SubsystemEntry {
                state_dim: s.state_dim,
                input_dim: s.input_dim,
                disturbance_dim: s.disturbance_dim,
                coupling: s
                    .coupling
                    .iter()
                    .map(|(&j, a)| CouplingEntry {
                        neighbor: j,
                        matrix: to_row_major(a),
                    })
                    .collect(),
                input_matrix: to_row_major(&s.input_matrix),
                disturbance_matrix: to_row_major(&s.disturbance_matrix),
            })
            .collect();
        let constraints = constraints
            .all()
            .iter()
            .map(|c| ConstraintEntry {
                owner: c.owner,
                kind: c.kind,
                direction: c.direction.iter().copied().collect(),
                bound: 1.0,
                probability: c.probability,
            })
            .collect();
        Self {
            subsystems,
            constraints,
        }
    }

    pub fn build(&self) -> Result<(NetworkModel, ConstraintSet), NetworkError> {
        let mut subs = Vec::with_capacity(self.subsystems.len());
        for (i, e) in self.subsystems.iter().enumerate() {
            let mut s = SubsystemModel::new(
                e.state_dim,
                e.input_dim,
                e.disturbance_dim,
                row_major(e.state_dim, e.input_dim, &e.input_matrix, i, "input matrix")?,
                row_major(
                    e.state_dim,
                    e.disturbance_dim,
                    &e.disturbance_matrix,
                    i,
                    "disturbance matrix",
                )?,
            );
            for c in &e.coupling {
                let cols = self
                    .subsystems
                    .get(c.neighbor)
                    .map(|n| n.state_dim)
                    .unwrap_or(0);
                // shape errors surface through validation; unknown neighbors keep the raw length
                let cols = if cols == 0 && e.state_dim > 0 {
                    c.matrix.len() / e.state_dim
                } else {
                    cols
                };
                s.coupling.insert(
                    c.neighbor,
                    row_major(e.state_dim, cols, &c.matrix, i, "coupling block")?,
                );
            }
            subs.push(s);
        }
        let model = NetworkModel::new(subs)?;
        let mut hs = Vec::with_capacity(self.constraints.len());
        for (index, c) in self.constraints.iter().enumerate() {
            if c.bound.is_nan() || c.bound <= 0.0 {
                return Err(NetworkError::InvalidConstraint {
                    index,
                    reason: format!(
                        "bound {} must be positive (half-spaces through the origin are unsupported)",
                        c.bound
                    ),
                });
            }
            hs.push(HalfSpace::with_bound(
                c.owner,
                c.kind,
                c.direction.clone(),
                c.bound,
                c.probability,
            ));
        }
        let constraints = ConstraintSet::new(&model, hs)?;
        Ok((model, constraints))
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        let text = std::fs::read_to_string(path).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), NetworkError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}
