//! Disturbance scenarios over the task horizon.
//!
//! Gaussian generators follow the AR(1) recursion
//!
//! ```text
//!   w(t+1) = mu(t+1) + rho (w(t) - mu(t)) + eps(t),   eps ~ N(0, Sigma)
//! ```
//!
//! started from the stationary law `w(0) - mu(0) ~ N(0, Sigma / (1 - rho^2))`.
//! The i.i.d. kind is the special case `rho = 0`. Sample `l` of a bank always
//! draws from the ChaCha8 stream `l` of the bank seed, so banks are
//! reproducible and samples can be generated in parallel.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::NetworkModel;

#[derive(Debug, Error)]
pub enum DisturbanceError {
    #[error("invalid disturbance spec: {0}")]
    InvalidSpec(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("conditional sampling at t = {t} needs {t} history entries, got {got}")]
    MissingHistory { t: usize, got: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed bank file {path}: {reason}")]
    Format { path: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DisturbanceError + '_ {
    move |source| DisturbanceError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Innovation covariance over the stacked disturbance vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum CovarianceSpec {
    /// `std^2 I`.
    Isotropic { std: f64 },
    /// `diag(std)^2`, one entry per stacked disturbance component.
    Diagonal { std: Vec<f64> },
    /// Full symmetric PSD matrix, row-major nested.
    Full { matrix: Vec<Vec<f64>> },
}

impl CovarianceSpec {
    pub fn to_matrix(&self, dim: usize) -> Result<DMatrix<f64>, DisturbanceError> {
        let bad = |s: String| DisturbanceError::InvalidSpec(s);
        let m = match self {
            CovarianceSpec::Isotropic { std } => {
                if !(std.is_finite() && *std >= 0.0) {
                    return Err(bad(format!("std {std} must be finite and nonnegative")));
                }
                DMatrix::identity(dim, dim) * (std * std)
            }
            CovarianceSpec::Diagonal { std } => {
                if std.len() != dim {
                    return Err(bad(format!("{} std entries for dimension {dim}", std.len())));
                }
                if std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                    return Err(bad("std entries must be finite and nonnegative".into()));
                }
                DMatrix::from_diagonal(&DVector::from_iterator(dim, std.iter().map(|s| s * s)))
            }
            CovarianceSpec::Full { matrix } => {
                if matrix.len() != dim || matrix.iter().any(|r| r.len() != dim) {
                    return Err(bad(format!("covariance must be {dim}x{dim}")));
                }
                DMatrix::from_fn(dim, dim, |r, c| matrix[r][c])
            }
        };
        Ok(m)
    }
}

/// Deterministic mean profile `mu(t)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum MeanProfile {
    #[default]
    Zero,
    /// Same value on every stacked component.
    Constant { value: f64 },
    /// `offset + amplitude * sin(2 pi (t + phase) / period)` on every component.
    Sinusoid {
        offset: f64,
        amplitude: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl MeanProfile {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            MeanProfile::Zero => 0.0,
            MeanProfile::Constant { value } => value,
            MeanProfile::Sinusoid {
                offset,
                amplitude,
                period,
                phase,
            } => offset + amplitude * (2.0 * std::f64::consts::PI * (t as f64 + phase) / period).sin(),
        }
    }
}

fn default_neighbors() -> usize {
    10
}

fn default_window() -> usize {
    4
}

/// Disturbance generator description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DisturbanceSpec {
    IidGaussian {
        #[serde(default)]
        mean: MeanProfile,
        covariance: CovarianceSpec,
    },
    Ar1Gaussian {
        rho: f64,
        #[serde(default)]
        mean: MeanProfile,
        covariance: CovarianceSpec,
    },
    /// AR(1) deviations around a sinusoidal (daily) mean.
    PeriodicMeanAr1 {
        rho: f64,
        offset: f64,
        amplitude: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
        covariance: CovarianceSpec,
    },
    /// Scenarios loaded from a bank file; conditional sampling uses k-nearest
    /// history matching.
    EmpiricalFile {
        path: PathBuf,
        #[serde(default = "default_neighbors")]
        neighbors: usize,
        #[serde(default = "default_window")]
        history_window: usize,
    },
}

/// Validated Gaussian AR(1) law with a Cholesky-like factor of the innovation covariance.
#[derive(Debug, Clone)]
pub struct GaussianAr1 {
    pub rho: f64,
    pub mean: MeanProfile,
    pub innovation: DMatrix<f64>,
    innovation_factor: DMatrix<f64>,
    stationary_factor: DMatrix<f64>,
}

/// PSD square root `L` with `L L^T = S`; rejects non-symmetric or indefinite input.
pub fn psd_factor(s: &DMatrix<f64>) -> Result<DMatrix<f64>, DisturbanceError> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(DisturbanceError::InvalidSpec("covariance is not square".into()));
    }
    let scale = s.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    for r in 0..n {
        for c in 0..r {
            if (s[(r, c)] - s[(c, r)]).abs() > 1e-12 * scale {
                return Err(DisturbanceError::InvalidSpec("covariance is not symmetric".into()));
            }
        }
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(DisturbanceError::InvalidSpec("covariance has non-finite entries".into()));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(s.clone());
    let min = eig.eigenvalues.min();
    if min < -1e-10 * scale {
        return Err(DisturbanceError::InvalidSpec(format!(
            "covariance is not positive semidefinite (eigenvalue {min:e})"
        )));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

impl GaussianAr1 {
    pub fn new(rho: f64, mean: MeanProfile, innovation: DMatrix<f64>) -> Result<Self, DisturbanceError> {
        if !(rho.is_finite() && rho.abs() < 1.0) {
            return Err(DisturbanceError::InvalidSpec(format!("|rho| = {} must be < 1", rho.abs())));
        }
        if let MeanProfile::Sinusoid { period, .. } = mean {
            if period.is_nan() || period <= 0.0 {
                return Err(DisturbanceError::InvalidSpec("sinusoid period must be positive".into()));
            }
        }
        let innovation_factor = psd_factor(&innovation)?;
        let stationary_factor = &innovation_factor / (1.0 - rho * rho).sqrt();
        Ok(Self {
            rho,
            mean,
            innovation,
            innovation_factor,
            stationary_factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.innovation.nrows()
    }

    /// Covariance of `w(0) - mu(0)`.
    pub fn stationary_covariance(&self) -> DMatrix<f64> {
        &self.innovation / (1.0 - self.rho * self.rho)
    }

    fn gaussian(factor: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let n = factor.ncols();
        let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        factor * z
    }

    /// Continues the recursion from deviation `dev` at time `t0 - 1` and
    /// writes `w(t0), ..., w(t0 + len - 1)`. With `dev = None` starts stationary at `t0`.
    fn extend(&self, dev: Option<DVector<f64>>, t0: usize, len: usize, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
        let mut d = match dev {
            Some(prev) => self.rho * prev + Self::gaussian(&self.innovation_factor, rng),
            None => Self::gaussian(&self.stationary_factor, rng),
        };
        for k in 0..len {
            if k > 0 {
                d = self.rho * d + Self::gaussian(&self.innovation_factor, rng);
            }
            let mu = self.mean.at(t0 + k);
            out.extend(d.iter().map(|v| v + mu));
        }
    }
}

/// `N_s` disturbance trajectories `w(0..=N̄)` over the whole network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankHeader {
    pub task_horizon: usize,
    pub count: usize,
    /// Per-subsystem disturbance dimension `p_i`.
    pub dims: Vec<usize>,
    pub seed: u64,
    /// Generator description for provenance.
    pub generator: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBank {
    pub header: BankHeader,
    width: usize,
    /// `samples[l]` is time-major: `[w(0); w(1); ...; w(N̄)]`, each stacked.
    samples: Vec<Vec<f64>>,
}

impl ScenarioBank {
    pub fn from_samples(header: BankHeader, samples: Vec<Vec<f64>>) -> Result<Self, DisturbanceError> {
        let width: usize = header.dims.iter().sum();
        let len = (header.task_horizon + 1) * width;
        if samples.len() != header.count {
            return Err(DisturbanceError::InvalidArgument(format!(
                "header declares {} samples, got {}",
                header.count,
                samples.len()
            )));
        }
        if let Some(l) = samples.iter().position(|s| s.len() != len) {
            return Err(DisturbanceError::InvalidArgument(format!(
                "sample {l} has length {}, expected {len}",
                samples[l].len()
            )));
        }
        Ok(Self {
            header,
            width,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn task_horizon(&self) -> usize {
        self.header.task_horizon
    }

    /// Stacked disturbance dimension.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn sample(&self, l: usize) -> &[f64] {
        &self.samples[l]
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    /// Stacked `w^(l)(t)`.
    pub fn at(&self, l: usize, t: usize) -> &[f64] {
        &self.samples[l][t * self.width..(t + 1) * self.width]
    }

    /// One sample as a list of stacked vectors.
    pub fn trajectory(&self, l: usize) -> Vec<DVector<f64>> {
        (0..=self.header.task_horizon)
            .map(|t| DVector::from_column_slice(self.at(l, t)))
            .collect()
    }

    /// Writes `<path>` as CSV (`sample,t,w0,w1,...`) and `<path>.json` as header.
    pub fn save(&self, path: &Path) -> Result<(), DisturbanceError> {
        let header_path = sidecar(path);
        let header = serde_json::to_string_pretty(&self.header).expect("header serializes");
        std::fs::write(&header_path, header).map_err(io_err(&header_path))?;
        let file = std::fs::File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        write!(w, "sample,t").map_err(io_err(path))?;
        for c in 0..self.width {
            write!(w, ",w{c}").map_err(io_err(path))?;
        }
        writeln!(w).map_err(io_err(path))?;
        for l in 0..self.len() {
            for t in 0..=self.header.task_horizon {
                write!(w, "{l},{t}").map_err(io_err(path))?;
                for v in self.at(l, t) {
                    // `{:?}` prints the shortest representation that round-trips exactly
                    write!(w, ",{v:?}").map_err(io_err(path))?;
                }
                writeln!(w).map_err(io_err(path))?;
            }
        }
        w.flush().map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, DisturbanceError> {
        let header_path = sidecar(path);
        let text = std::fs::read_to_string(&header_path).map_err(io_err(&header_path))?;
        let header: BankHeader = serde_json::from_str(&text).map_err(|e| DisturbanceError::Format {
            path: header_path.display().to_string(),
            reason: e.to_string(),
        })?;
        let width: usize = header.dims.iter().sum();
        let fmt_err = |reason: String| DisturbanceError::Format {
            path: path.display().to_string(),
            reason,
        };
        let file = std::fs::File::open(path).map_err(io_err(path))?;
        let mut samples = vec![Vec::with_capacity((header.task_horizon + 1) * width); header.count];
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            if n == 0 || line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let mut next_usize = |what: &str| -> Result<usize, DisturbanceError> {
                fields
                    .next()
                    .and_then(|f| f.trim().parse().ok())
                    .ok_or_else(|| fmt_err(format!("line {}: bad {what}", n + 1)))
            };
            let l = next_usize("sample")?;
            let t = next_usize("t")?;
            if l >= header.count || t > header.task_horizon {
                return Err(fmt_err(format!("line {}: index ({l},{t}) out of range", n + 1)));
            }
            if samples[l].len() != t * width {
                return Err(fmt_err(format!("line {}: rows out of order", n + 1)));
            }
            let values: Result<Vec<f64>, _> = fields.map(|f| f.trim().parse::<f64>()).collect();
            let values = values.map_err(|e| fmt_err(format!("line {}: {e}", n + 1)))?;
            if values.len() != width {
                return Err(fmt_err(format!("line {}: {} values, expected {width}", n + 1, values.len())));
            }
            samples[l].extend(values);
        }
        ScenarioBank::from_samples(header, samples)
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Clone)]
enum Law {
    Gaussian(GaussianAr1),
    Empirical {
        bank: ScenarioBank,
        neighbors: usize,
        window: usize,
    },
}

/// A validated disturbance spec bound to a network's disturbance dimensions.
#[derive(Debug, Clone)]
pub struct DisturbanceModel {
    spec: DisturbanceSpec,
    dims: Vec<usize>,
    law: Law,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl DisturbanceModel {
    pub fn new(spec: DisturbanceSpec, model: &NetworkModel) -> Result<Self, DisturbanceError> {
        let dims: Vec<usize> = model.subsystems().iter().map(|s| s.disturbance_dim).collect();
        Self::with_dims(spec, dims)
    }

    pub fn with_dims(spec: DisturbanceSpec, dims: Vec<usize>) -> Result<Self, DisturbanceError> {
        let width: usize = dims.iter().sum();
        let law = match &spec {
            DisturbanceSpec::IidGaussian { mean, covariance } => {
                Law::Gaussian(GaussianAr1::new(0.0, mean.clone(), covariance.to_matrix(width)?)?)
            }
            DisturbanceSpec::Ar1Gaussian { rho, mean, covariance } => {
                Law::Gaussian(GaussianAr1::new(*rho, mean.clone(), covariance.to_matrix(width)?)?)
            }
            DisturbanceSpec::PeriodicMeanAr1 {
                rho,
                offset,
                amplitude,
                period,
                phase,
                covariance,
            } => Law::Gaussian(GaussianAr1::new(
                *rho,
                MeanProfile::Sinusoid {
                    offset: *offset,
                    amplitude: *amplitude,
                    period: *period,
                    phase: *phase,
                },
                covariance.to_matrix(width)?,
            )?),
            DisturbanceSpec::EmpiricalFile {
                path,
                neighbors,
                history_window,
            } => {
                let bank = ScenarioBank::load(path)?;
                if bank.header.dims != dims {
                    return Err(DisturbanceError::InvalidSpec(format!(
                        "bank dims {:?} do not match network {:?}",
                        bank.header.dims, dims
                    )));
                }
                if bank.is_empty() || *neighbors == 0 {
                    return Err(DisturbanceError::InvalidSpec(
                        "empirical bank needs samples and neighbors >= 1".into(),
                    ));
                }
                Law::Empirical {
                    bank,
                    neighbors: *neighbors,
                    window: (*history_window).max(1),
                }
            }
        };
        Ok(Self { spec, dims, law })
    }

    pub fn spec(&self) -> &DisturbanceSpec {
        &self.spec
    }

    pub fn width(&self) -> usize {
        self.dims.iter().sum()
    }

    /// The Gaussian law, if this is not an empirical model.
    pub fn gaussian(&self) -> Option<&GaussianAr1> {
        match &self.law {
            Law::Gaussian(g) => Some(g),
            Law::Empirical { .. } => None,
        }
    }

    pub fn is_iid(&self) -> bool {
        matches!(&self.law, Law::Gaussian(g) if g.rho == 0.0)
    }

    /// Known mean `mu(t)` (stacked); `None` for empirical data.
    pub fn mean_at(&self, t: usize) -> Option<DVector<f64>> {
        self.gaussian()
            .map(|g| DVector::from_element(self.width(), g.mean.at(t)))
    }

    /// Draws `count` trajectories `w(0..=task_horizon)`.
    pub fn generate_bank(&self, task_horizon: usize, count: usize, seed: u64) -> Result<ScenarioBank, DisturbanceError> {
        if task_horizon < 1 || count < 1 {
            return Err(DisturbanceError::InvalidArgument(
                "task horizon and sample count must be at least 1".into(),
            ));
        }
        let width = self.width();
        let len = task_horizon + 1;
        let samples: Vec<Vec<f64>> = match &self.law {
            Law::Gaussian(g) => (0..count)
                .into_par_iter()
                .map(|l| {
                    let mut rng = stream_rng(seed, l as u64);
                    let mut out = Vec::with_capacity(len * width);
                    g.extend(None, 0, len, &mut rng, &mut out);
                    out
                })
                .collect(),
            Law::Empirical { bank, .. } => {
                if bank.task_horizon() < task_horizon {
                    return Err(DisturbanceError::InvalidArgument(format!(
                        "empirical bank covers {} steps, {task_horizon} requested",
                        bank.task_horizon()
                    )));
                }
                (0..count)
                    .map(|l| {
                        let mut rng = stream_rng(seed, l as u64);
                        let src = rng.random_range(0..bank.len());
                        bank.sample(src)[..len * width].to_vec()
                    })
                    .collect()
            }
        };
        ScenarioBank::from_samples(
            BankHeader {
                task_horizon,
                count,
                dims: self.dims.clone(),
                seed,
                generator: serde_json::to_string(&self.spec).expect("spec serializes"),
            },
            samples,
        )
    }

    /// Whole-network samples of `w(t), ..., w(t + horizon - 1)` conditioned on
    /// the realized history `w(0..t)`. Sample `s` uses stream `s` of `seed`.
    pub fn conditional_network_samples(
        &self,
        history: &[DVector<f64>],
        t: usize,
        horizon: usize,
        count: usize,
        seed: u64,
    ) -> Result<Vec<Vec<DVector<f64>>>, DisturbanceError> {
        if horizon < 1 {
            return Err(DisturbanceError::InvalidArgument("horizon must be at least 1".into()));
        }
        let width = self.width();
        match &self.law {
            Law::Gaussian(g) => {
                let prev_dev = if g.rho == 0.0 || t == 0 {
                    None
                } else {
                    if history.len() < t {
                        return Err(DisturbanceError::MissingHistory { t, got: history.len() });
                    }
                    let last = &history[t - 1];
                    if last.len() != width {
                        return Err(DisturbanceError::InvalidArgument(format!(
                            "history entry has length {}, expected {width}",
                            last.len()
                        )));
                    }
                    let mu = g.mean.at(t - 1);
                    Some(last.map(|v| v - mu))
                };
                Ok((0..count)
                    .map(|s| {
                        let mut rng = stream_rng(seed, s as u64);
                        let mut flat = Vec::with_capacity(horizon * width);
                        g.extend(prev_dev.clone(), t, horizon, &mut rng, &mut flat);
                        flat.chunks(width).map(DVector::from_column_slice).collect()
                    })
                    .collect())
            }
            Law::Empirical { bank, neighbors, window } => {
                if history.len() < t {
                    return Err(DisturbanceError::MissingHistory { t, got: history.len() });
                }
                if t + horizon > bank.task_horizon() + 1 {
                    return Err(DisturbanceError::InvalidArgument(format!(
                        "empirical bank ends at {}, requested up to {}",
                        bank.task_horizon(),
                        t + horizon - 1
                    )));
                }
                let components: Vec<usize> = (0..width).collect();
                let nearest = nearest_scenarios(bank, history, t, *window, *neighbors, &components);
                Ok((0..count)
                    .map(|s| {
                        let mut rng = stream_rng(seed, s as u64);
                        let l = nearest[rng.random_range(0..nearest.len())];
                        (t..t + horizon)
                            .map(|k| DVector::from_column_slice(bank.at(l, k)))
                            .collect()
                    })
                    .collect())
            }
        }
    }

    /// Prediction samples `W_i(t)` for subsystem `i` only.
    ///
    /// Gaussian laws project whole-network conditional trajectories onto `i`.
    /// Empirical laws match history on the neighborhood components `neighborhood`
    /// (subsystem indices) before projecting.
    #[allow(clippy::too_many_arguments)]
    pub fn conditional_samples(
        &self,
        history: &[DVector<f64>],
        t: usize,
        horizon: usize,
        count: usize,
        seed: u64,
        subsystem: usize,
        neighborhood: &[usize],
    ) -> Result<Vec<Vec<DVector<f64>>>, DisturbanceError> {
        let offsets: Vec<usize> = std::iter::once(0)
            .chain(self.dims.iter().scan(0, |acc, d| {
                *acc += d;
                Some(*acc)
            }))
            .collect();
        let range = offsets[subsystem]..offsets[subsystem + 1];
        let network = match &self.law {
            Law::Gaussian(_) => self.conditional_network_samples(history, t, horizon, count, seed)?,
            Law::Empirical { bank, neighbors, window } => {
                if history.len() < t {
                    return Err(DisturbanceError::MissingHistory { t, got: history.len() });
                }
                let comps: Vec<usize> = neighborhood
                    .iter()
                    .flat_map(|&j| offsets[j]..offsets[j + 1])
                    .collect();
                let nearest = nearest_scenarios(bank, history, t, *window, *neighbors, &comps);
                (0..count)
                    .map(|s| {
                        let mut rng = stream_rng(seed, s as u64);
                        let l = nearest[rng.random_range(0..nearest.len())];
                        (t..t + horizon)
                            .map(|k| DVector::from_column_slice(bank.at(l, k)))
                            .collect()
                    })
                    .collect()
            }
        };
        Ok(network
            .into_iter()
            .map(|traj| {
                traj.into_iter()
                    .map(|w| DVector::from_column_slice(&w.as_slice()[range.clone()]))
                    .collect()
            })
            .collect())
    }
}

/// Indices of the `k` bank scenarios whose last `window` history entries
/// (restricted to `components`) are closest in Euclidean norm; ties by index.
fn nearest_scenarios(
    bank: &ScenarioBank,
    history: &[DVector<f64>],
    t: usize,
    window: usize,
    k: usize,
    components: &[usize],
) -> Vec<usize> {
    let start = t.saturating_sub(window);
    let mut dist: Vec<(f64, usize)> = (0..bank.len())
        .map(|l| {
            let d: f64 = (start..t)
                .map(|s| {
                    let w = bank.at(l, s);
                    components
                        .iter()
                        .map(|&c| (w[c] - history[s][c]).powi(2))
                        .sum::<f64>()
                })
                .sum();
            (d, l)
        })
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    dist.into_iter().take(k.min(bank.len())).map(|(_, l)| l).collect()
}

/// Free-function form of [`DisturbanceModel::generate_bank`].
pub fn generate_bank(
    spec: &DisturbanceSpec,
    model: &NetworkModel,
    task_horizon: usize,
    count: usize,
    seed: u64,
) -> Result<ScenarioBank, DisturbanceError> {
    DisturbanceModel::new(spec.clone(), model)?.generate_bank(task_horizon, count, seed)
}
