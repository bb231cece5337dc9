//! Threat-field synthesis: a radial-basis spatial expansion whose
//! coefficients follow noisy stable linear dynamics, observed on a fixed
//! spatial grid.
//!
//! The field over the unit-square workspace is `c(r, t) = 1 + Phi(r) . Theta(t)`
//! with `Theta' = A Theta + noise` and `A` Hurwitz, so every noiseless
//! trajectory decays toward the constant field 1. Datasets produced here are
//! the training pool, its subsampled "real" subset, and the noiseless
//! support set generated from the known dynamics.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::linalg::spectral_abscissa;
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("dynamics matrix is not Hurwitz: spectral abscissa {abscissa}")]
    NotHurwitz { abscissa: f64 },
    #[error("dynamics matrix must be square, got shape {shape:?}")]
    NotSquare { shape: Vec<usize> },
    #[error("integration step must be positive, got {dt}")]
    NonPositiveDt { dt: f64 },
    #[error("dt {dt} must evenly divide the unit observation interval")]
    DtNotDividingInterval { dt: f64 },
    #[error("noise std must be non-negative, got {value}")]
    NegativeNoise { value: f64 },
    #[error("point ({x}, {y}) lies outside the workspace [0,1]^2")]
    OutsideWorkspace { x: f64, y: f64 },
    #[error("coefficient vector has length {got}, basis expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("requested {requested} data from a pool of {available}")]
    SubsampleTooLarge { requested: usize, available: usize },
    #[error("dataset must contain at least one datum")]
    EmptyDataset,
    #[error("dataset geometry is inhomogeneous: expected {expected:?}, datum {index} has {got:?}")]
    Inhomogeneous {
        expected: Vec<usize>,
        got: Vec<usize>,
        index: usize,
    },
    #[error("grid side and observation length disagree: side {side}, n_g {n_g}")]
    GridMismatch { side: usize, n_g: usize },
    #[error("count must be at least 1")]
    ZeroCount,
    #[error("metadata key {key:?} is missing")]
    MetadataMissing { key: String },
    #[error("metadata key {key:?} holds unparsable value {value:?}")]
    MetadataParse { key: String, value: String },
}

/// Metadata keys shared by dataset producers and consumers.
pub mod meta {
    pub const KIND: &str = "kind";
    pub const SEED: &str = "seed";
    pub const COUNT: &str = "count";
    pub const GRID_SIDE: &str = "grid_side";
    pub const HORIZON: &str = "horizon";
    pub const N_P: &str = "n_p";
    pub const SIGMA1: &str = "sigma1";
    pub const SIGMA2: &str = "sigma2";
    pub const DT: &str = "dt";
    pub const A_MATRIX: &str = "a_matrix";
    pub const SUBSAMPLE_SEED: &str = "subsample.seed";
    pub const SUBSAMPLE_INDICES: &str = "subsample.indices";
    pub const MODEL: &str = "model";

    pub fn datum_widths(i: usize) -> String {
        format!("datum.{i}.widths")
    }
    pub fn datum_centers(i: usize) -> String {
        format!("datum.{i}.centers")
    }
    pub fn datum_theta0(i: usize) -> String {
        format!("datum.{i}.theta0")
    }
}

/// Gaussian radial basis: `phi_i(r) = exp(-|r - b_i|^2 / (2 a_i))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialBasis {
    widths: Vec<f64>,
    centers: Vec<(f64, f64)>,
}

impl SpatialBasis {
    pub fn new(widths: Vec<f64>, centers: Vec<(f64, f64)>) -> Result<Self, FieldError> {
        if widths.len() != centers.len() {
            return Err(FieldError::DimensionMismatch {
                expected: widths.len(),
                got: centers.len(),
            });
        }
        for &w in &widths {
            if w <= 0.0 {
                return Err(FieldError::NegativeNoise { value: w });
            }
        }
        for &(x, y) in &centers {
            if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                return Err(FieldError::OutsideWorkspace { x, y });
            }
        }
        Ok(Self { widths, centers })
    }

    /// Random basis: centers uniform over the workspace, widths uniform in
    /// `[0.02, 0.2]`.
    pub fn random(n_p: usize, rng: &mut RngStream) -> Self {
        let widths = (0..n_p).map(|_| rng.uniform_in(0.02, 0.2)).collect();
        let centers = (0..n_p)
            .map(|_| (rng.uniform(), rng.uniform()))
            .collect();
        Self { widths, centers }
    }

    pub fn count(&self) -> usize {
        self.widths.len()
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn centers(&self) -> &[(f64, f64)] {
        &self.centers
    }

    /// All basis functions at a workspace point.
    pub fn eval(&self, r: (f64, f64)) -> Result<Vec<f64>, FieldError> {
        if !(0.0..=1.0).contains(&r.0) || !(0.0..=1.0).contains(&r.1) {
            return Err(FieldError::OutsideWorkspace { x: r.0, y: r.1 });
        }
        Ok(self
            .widths
            .iter()
            .zip(&self.centers)
            .map(|(&a, &(bx, by))| {
                let dx = r.0 - bx;
                let dy = r.1 - by;
                (-(dx * dx + dy * dy) / (2.0 * a)).exp()
            })
            .collect())
    }
}

/// Field value `c(r, t) = 1 + Phi(r) . theta`.
pub fn threat_eval(basis: &SpatialBasis, theta: &[f64], r: (f64, f64)) -> Result<f64, FieldError> {
    if theta.len() != basis.count() {
        return Err(FieldError::DimensionMismatch {
            expected: basis.count(),
            got: theta.len(),
        });
    }
    let phi = basis.eval(r)?;
    Ok(1.0 + phi.iter().zip(theta).map(|(p, t)| p * t).sum::<f64>())
}

/// Random Hurwitz matrix: eigenvalue real parts are sampled uniformly in
/// `[-1.0, -0.1]` (complex pairs allowed), assembled block-diagonally, and
/// conjugated by a random orthogonal matrix, so the property holds by
/// construction rather than by rejection.
pub fn random_hurwitz(n: usize, rng: &mut RngStream) -> Tensor {
    let mut d = vec![0.0; n * n];
    let mut i = 0;
    while i < n {
        let re = rng.uniform_in(-1.0, -0.1);
        if i + 1 < n && rng.uniform() < 0.5 {
            let im = rng.uniform_in(0.1, 1.0);
            d[i * n + i] = re;
            d[i * n + i + 1] = im;
            d[(i + 1) * n + i] = -im;
            d[(i + 1) * n + i + 1] = re;
            i += 2;
        } else {
            d[i * n + i] = re;
            i += 1;
        }
    }
    let q = random_orthogonal(n, rng);
    // A = Q D Q^T.
    let mut qd = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += q[r * n + k] * d[k * n + c];
            }
            qd[r * n + c] = acc;
        }
    }
    let mut a = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += qd[r * n + k] * q[c * n + k];
            }
            a[r * n + c] = acc;
        }
    }
    Tensor::new(vec![n, n], a).expect("square by construction")
}

/// Random orthogonal matrix via modified Gram-Schmidt on a Gaussian matrix.
fn random_orthogonal(n: usize, rng: &mut RngStream) -> Vec<f64> {
    let mut m: Vec<f64> = rng.normal_vec(n * n, 0.0, 1.0);
    for col in 0..n {
        for prev in 0..col {
            let mut dot = 0.0;
            for r in 0..n {
                dot += m[r * n + col] * m[r * n + prev];
            }
            for r in 0..n {
                m[r * n + col] -= dot * m[r * n + prev];
            }
        }
        let mut norm = 0.0;
        for r in 0..n {
            norm += m[r * n + col] * m[r * n + col];
        }
        let norm = norm.sqrt();
        for r in 0..n {
            m[r * n + col] /= norm;
        }
    }
    m
}

/// Known linear dynamics `Theta' = A Theta + eta_1` plus the observation
/// noise level, integration step, and substeps per unit-time observation.
#[derive(Debug, Clone)]
pub struct ThreatDynamics {
    a: Tensor,
    process_noise_std: f64,
    measurement_noise_std: f64,
    dt: f64,
    steps_per_observation: usize,
}

impl ThreatDynamics {
    /// Validates that `a` is square and Hurwitz; observations are spaced one
    /// time unit apart, so `dt` must divide 1.
    pub fn new(
        a: Tensor,
        process_noise_std: f64,
        measurement_noise_std: f64,
        dt: f64,
    ) -> Result<Self, FieldError> {
        let shape = a.shape().to_vec();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(FieldError::NotSquare { shape });
        }
        if dt <= 0.0 {
            return Err(FieldError::NonPositiveDt { dt });
        }
        let steps = (1.0 / dt).round();
        if ((steps * dt) - 1.0).abs() > 1e-9 || steps < 1.0 {
            return Err(FieldError::DtNotDividingInterval { dt });
        }
        if process_noise_std < 0.0 {
            return Err(FieldError::NegativeNoise {
                value: process_noise_std,
            });
        }
        if measurement_noise_std < 0.0 {
            return Err(FieldError::NegativeNoise {
                value: measurement_noise_std,
            });
        }
        let abscissa = spectral_abscissa(a.data(), shape[0]);
        if abscissa >= 0.0 {
            return Err(FieldError::NotHurwitz { abscissa });
        }
        Ok(Self {
            a,
            process_noise_std,
            measurement_noise_std,
            dt,
            steps_per_observation: steps as usize,
        })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.a
    }

    pub fn dim(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn process_noise_std(&self) -> f64 {
        self.process_noise_std
    }

    pub fn measurement_noise_std(&self) -> f64 {
        self.measurement_noise_std
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps_per_observation(&self) -> usize {
        self.steps_per_observation
    }

    fn drift(&self, theta: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let a = self.a.data();
        for i in 0..n {
            let row = &a[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (aij, t) in row.iter().zip(theta) {
                acc += aij * t;
            }
            out[i] = acc;
        }
    }
}

/// Advance the coefficient vector to observation times `1..=horizon`.
///
/// The drift is integrated with classical RK4 at step `dt`; process noise is
/// injected after each substep as `sigma1 * sqrt(dt) * xi` (Euler-Maruyama
/// additive term), so `sigma1 = 0` reduces to plain RK4.
pub fn integrate_dynamics(
    dynamics: &ThreatDynamics,
    theta0: &[f64],
    horizon: usize,
    rng: &mut RngStream,
) -> Result<Vec<Vec<f64>>, FieldError> {
    let n = dynamics.dim();
    if theta0.len() != n {
        return Err(FieldError::DimensionMismatch {
            expected: n,
            got: theta0.len(),
        });
    }
    let dt = dynamics.dt;
    let sigma = dynamics.process_noise_std;
    let noise_scale = sigma * dt.sqrt();
    let mut theta = theta0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut states = Vec::with_capacity(horizon);
    for _obs in 0..horizon {
        for _step in 0..dynamics.steps_per_observation {
            dynamics.drift(&theta, &mut k1);
            for i in 0..n {
                scratch[i] = theta[i] + 0.5 * dt * k1[i];
            }
            dynamics.drift(&scratch, &mut k2);
            for i in 0..n {
                scratch[i] = theta[i] + 0.5 * dt * k2[i];
            }
            dynamics.drift(&scratch, &mut k3);
            for i in 0..n {
                scratch[i] = theta[i] + dt * k3[i];
            }
            dynamics.drift(&scratch, &mut k4);
            for i in 0..n {
                theta[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if sigma > 0.0 {
                for t in theta.iter_mut() {
                    *t += noise_scale * rng.normal(0.0, 1.0);
                }
            }
        }
        states.push(theta.clone());
    }
    Ok(states)
}

/// Uniform observation lattice strictly inside the workspace; point
/// `row * side + col` sits at `((col + 0.5)/side, (row + 0.5)/side)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationGrid {
    side: usize,
    points: Vec<(f64, f64)>,
}

impl ObservationGrid {
    pub fn new(side: usize) -> Self {
        let step = 1.0 / side as f64;
        let mut points = Vec::with_capacity(side * side);
        for row in 0..side {
            for col in 0..side {
                points.push(((col as f64 + 0.5) * step, (row as f64 + 0.5) * step));
            }
        }
        Self { side, points }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
}

/// One grid observation: field values plus optional measurement noise.
pub fn observe(
    basis: &SpatialBasis,
    theta: &[f64],
    grid: &ObservationGrid,
    measurement_noise_std: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>, FieldError> {
    let mut out = Vec::with_capacity(grid.len());
    for &r in grid.points() {
        out.push(threat_eval(basis, theta, r)?);
    }
    if measurement_noise_std > 0.0 {
        for v in out.iter_mut() {
            *v += rng.normal(0.0, measurement_noise_std);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Real,
    Support,
    Generated,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::Support => "support",
            Provenance::Generated => "generated",
        }
    }
}

/// One time-series of grid observations, shape `[T, N_G]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Datum {
    observations: Tensor,
    provenance: Provenance,
}

impl Datum {
    pub fn new(observations: Tensor, provenance: Provenance) -> Self {
        debug_assert_eq!(observations.rank(), 2);
        debug_assert!(observations.shape()[0] >= 1);
        debug_assert!(observations.all_finite());
        Self {
            observations,
            provenance,
        }
    }

    pub fn observations(&self) -> &Tensor {
        &self.observations
    }

    pub fn horizon(&self) -> usize {
        self.observations.shape()[0]
    }

    pub fn n_g(&self) -> usize {
        self.observations.shape()[1]
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Observation row at time index `t` (0-based).
    pub fn at(&self, t: usize) -> &[f64] {
        let n = self.n_g();
        &self.observations.data()[t * n..(t + 1) * n]
    }

    /// Flattened copy, time-major.
    pub fn flat(&self) -> &[f64] {
        self.observations.data()
    }
}

/// A collection of data sharing one grid and horizon, plus the generation
/// metadata needed to reproduce or audit it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    data: Vec<Datum>,
    grid_side: usize,
    metadata: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(
        data: Vec<Datum>,
        grid_side: usize,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self, FieldError> {
        if let Some(first) = data.first() {
            let expected = first.observations.shape().to_vec();
            for (index, d) in data.iter().enumerate() {
                if d.observations.shape() != expected.as_slice() {
                    return Err(FieldError::Inhomogeneous {
                        expected,
                        got: d.observations.shape().to_vec(),
                        index,
                    });
                }
            }
            if first.n_g() != grid_side * grid_side {
                return Err(FieldError::GridMismatch {
                    side: grid_side,
                    n_g: first.n_g(),
                });
            }
        }
        Ok(Self {
            data,
            grid_side,
            metadata,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Datum] {
        &self.data
    }

    pub fn grid_side(&self) -> usize {
        self.grid_side
    }

    pub fn horizon(&self) -> usize {
        self.data.first().map_or(0, Datum::horizon)
    }

    pub fn n_g(&self) -> usize {
        self.grid_side * self.grid_side
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.metadata
    }

    fn meta_value(&self, key: &str) -> Result<&str, FieldError> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| FieldError::MetadataMissing {
                key: key.to_string(),
            })
    }

    pub fn meta_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T, FieldError> {
        let raw = self.meta_value(key)?;
        raw.parse().map_err(|_| FieldError::MetadataParse {
            key: key.to_string(),
            value: raw.to_string(),
        })
    }

    /// Dynamics matrix recovered from metadata.
    pub fn dynamics_matrix(&self) -> Result<Tensor, FieldError> {
        let raw = self.meta_value(meta::A_MATRIX)?;
        let rows: Vec<Vec<f64>> = raw
            .split(';')
            .map(|row| parse_f64_list(row, meta::A_MATRIX))
            .collect::<Result<_, _>>()?;
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in &rows {
            if row.len() != n {
                return Err(FieldError::MetadataParse {
                    key: meta::A_MATRIX.to_string(),
                    value: raw.to_string(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Tensor::new(vec![n, n], data).expect("square by parse"))
    }

    /// Per-datum basis and initial condition recovered from metadata.
    pub fn datum_params(&self, i: usize) -> Result<(SpatialBasis, Vec<f64>), FieldError> {
        let widths = parse_f64_list(self.meta_value(&meta::datum_widths(i))?, &meta::datum_widths(i))?;
        let flat = parse_f64_list(self.meta_value(&meta::datum_centers(i))?, &meta::datum_centers(i))?;
        let centers: Vec<(f64, f64)> = flat.chunks(2).map(|c| (c[0], c[1])).collect();
        let theta0 = parse_f64_list(self.meta_value(&meta::datum_theta0(i))?, &meta::datum_theta0(i))?;
        Ok((SpatialBasis::new(widths, centers)?, theta0))
    }
}

fn parse_f64_list(raw: &str, key: &str) -> Result<Vec<f64>, FieldError> {
    raw.split(',')
        .map(|tok| {
            tok.trim().parse().map_err(|_| FieldError::MetadataParse {
                key: key.to_string(),
                value: raw.to_string(),
            })
        })
        .collect()
}

fn join_f64(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn matrix_to_meta(a: &Tensor) -> String {
    let n = a.shape()[0];
    (0..n)
        .map(|r| join_f64(a.data()[r * n..(r + 1) * n].iter().copied()))
        .collect::<Vec<_>>()
        .join(";")
}

/// Configuration for pool and support generation.
#[derive(Debug, Clone)]
pub struct PoolConfig {
    pub count: usize,
    pub grid_side: usize,
    pub horizon: usize,
    pub n_p: usize,
    pub sigma1: f64,
    pub sigma2: f64,
    pub dt: f64,
    pub seed: u64,
}

/// Initial-coefficient range; the paper leaves the distribution open.
const THETA0_RANGE: (f64, f64) = (-5.0, 5.0);

/// Stream ids: 0 drives the shared dynamics matrix, `1 + i` drives datum `i`,
/// so parallel and serial generation agree bitwise.
const DYNAMICS_STREAM: u64 = 0;
const DATUM_STREAM_BASE: u64 = 1;

fn synthesize_datum(
    dynamics: &ThreatDynamics,
    grid: &ObservationGrid,
    cfg: &PoolConfig,
    provenance: Provenance,
    index: usize,
) -> Result<(Datum, Vec<(String, String)>), FieldError> {
    let mut rng = RngStream::substream(cfg.seed, DATUM_STREAM_BASE + index as u64);
    let basis = SpatialBasis::random(cfg.n_p, &mut rng);
    let theta0: Vec<f64> = (0..cfg.n_p)
        .map(|_| rng.uniform_in(THETA0_RANGE.0, THETA0_RANGE.1))
        .collect();
    let states = integrate_dynamics(dynamics, &theta0, cfg.horizon, &mut rng)?;
    let n_g = grid.len();
    let mut rows = Vec::with_capacity(cfg.horizon * n_g);
    for state in &states {
        rows.extend(observe(&basis, state, grid, cfg.sigma2, &mut rng)?);
    }
    let observations = Tensor::new(vec![cfg.horizon, n_g], rows).expect("counted");
    let mut entries = Vec::with_capacity(3);
    entries.push((meta::datum_widths(index), join_f64(basis.widths().iter().copied())));
    entries.push((
        meta::datum_centers(index),
        join_f64(basis.centers().iter().flat_map(|&(x, y)| [x, y])),
    ));
    entries.push((meta::datum_theta0(index), join_f64(theta0.iter().copied())));
    Ok((Datum::new(observations, provenance), entries))
}

fn synthesize_dataset(
    cfg: &PoolConfig,
    dynamics: &ThreatDynamics,
    provenance: Provenance,
    kind: &str,
) -> Result<Dataset, FieldError> {
    if cfg.count == 0 {
        return Err(FieldError::ZeroCount);
    }
    let grid = ObservationGrid::new(cfg.grid_side);

    let jobs: Result<Vec<_>, FieldError> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..cfg.count)
                .into_par_iter()
                .map(|i| synthesize_datum(dynamics, &grid, cfg, provenance, i))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..cfg.count)
                .map(|i| synthesize_datum(dynamics, &grid, cfg, provenance, i))
                .collect()
        }
    };
    let mut data = Vec::with_capacity(cfg.count);
    let mut metadata = BTreeMap::new();
    for (datum, entries) in jobs? {
        data.push(datum);
        metadata.extend(entries);
    }
    metadata.insert(meta::KIND.into(), kind.to_string());
    metadata.insert(meta::SEED.into(), cfg.seed.to_string());
    metadata.insert(meta::COUNT.into(), cfg.count.to_string());
    metadata.insert(meta::GRID_SIDE.into(), cfg.grid_side.to_string());
    metadata.insert(meta::HORIZON.into(), cfg.horizon.to_string());
    metadata.insert(meta::N_P.into(), cfg.n_p.to_string());
    metadata.insert(meta::SIGMA1.into(), format!("{}", cfg.sigma1));
    metadata.insert(meta::SIGMA2.into(), format!("{}", cfg.sigma2));
    metadata.insert(meta::DT.into(), format!("{}", cfg.dt));
    metadata.insert(meta::A_MATRIX.into(), matrix_to_meta(dynamics.matrix()));
    Dataset::new(data, cfg.grid_side, metadata)
}

/// Training pool: one shared Hurwitz dynamics matrix, fresh basis and
/// initial condition per datum, noisy integration and observation.
pub fn generate_pool(cfg: &PoolConfig) -> Result<Dataset, FieldError> {
    let mut dyn_rng = RngStream::substream(cfg.seed, DYNAMICS_STREAM);
    let a = random_hurwitz(cfg.n_p, &mut dyn_rng);
    let dynamics = ThreatDynamics::new(a, cfg.sigma1, cfg.sigma2, cfg.dt)?;
    synthesize_dataset(cfg, &dynamics, Provenance::Real, "pool")
}

/// Support dataset: identical pipeline with both noise sources forced to
/// zero, driven by the pool's known dynamics matrix.
pub fn generate_support(
    a: Tensor,
    count: usize,
    grid_side: usize,
    horizon: usize,
    dt: f64,
    seed: u64,
) -> Result<Dataset, FieldError> {
    let n_p = a.shape()[0];
    let dynamics = ThreatDynamics::new(a, 0.0, 0.0, dt)?;
    let cfg = PoolConfig {
        count,
        grid_side,
        horizon,
        n_p,
        sigma1: 0.0,
        sigma2: 0.0,
        dt,
        seed,
    };
    synthesize_dataset(&cfg, &dynamics, Provenance::Support, "support")
}

/// Uniform subsample without replacement; chosen pool indices are recorded
/// in the metadata and per-datum generation parameters are carried along.
pub fn subsample(pool: &Dataset, n_d: usize, seed: u64) -> Result<Dataset, FieldError> {
    if n_d > pool.len() {
        return Err(FieldError::SubsampleTooLarge {
            requested: n_d,
            available: pool.len(),
        });
    }
    let mut rng = RngStream::new(seed);
    let indices = rng.sample_indices(pool.len(), n_d);
    let data: Vec<Datum> = indices.iter().map(|&i| pool.data[i].clone()).collect();
    let mut metadata: BTreeMap<String, String> = pool
        .metadata
        .iter()
        .filter(|(k, _)| !k.starts_with("datum."))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    for (new_i, &old_i) in indices.iter().enumerate() {
        for (old_key, new_key) in [
            (meta::datum_widths(old_i), meta::datum_widths(new_i)),
            (meta::datum_centers(old_i), meta::datum_centers(new_i)),
            (meta::datum_theta0(old_i), meta::datum_theta0(new_i)),
        ] {
            if let Some(v) = pool.metadata.get(&old_key) {
                metadata.insert(new_key, v.clone());
            }
        }
    }
    metadata.insert(meta::KIND.into(), "subsample".into());
    metadata.insert(meta::COUNT.into(), n_d.to_string());
    metadata.insert(meta::SUBSAMPLE_SEED.into(), seed.to_string());
    metadata.insert(
        meta::SUBSAMPLE_INDICES.into(),
        indices
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(","),
    );
    Dataset::new(data, pool.grid_side, metadata)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rbf_peak_and_analytic_point() {
        let basis =
            SpatialBasis::new(vec![0.1, 0.05], vec![(0.25, 0.25), (0.75, 0.75)]).unwrap();
        // At its own center a basis function equals 1.
        let phi = basis.eval((0.25, 0.25)).unwrap();
        assert_eq!(phi[0], 1.0);
        // At squared distance 2a the value is e^{-1}.
        let d = (2.0_f64 * 0.1).sqrt();
        let phi = basis.eval((0.25 + d, 0.25)).unwrap();
        assert!((phi[0] - (-1.0_f64).exp()).abs() < 1e-12);
        assert!((phi[0] - 0.367_879_441_171_442_3).abs() < 1e-12);
    }

    #[test]
    fn rbf_matches_scalar_recomputation() {
        let mut rng = RngStream::new(77);
        let basis = SpatialBasis::random(4, &mut rng);
        let r = (0.5, 0.5);
        let phi = basis.eval(r).unwrap();
        for i in 0..4 {
            let (bx, by) = basis.centers()[i];
            let d2 = (r.0 - bx).powi(2) + (r.1 - by).powi(2);
            let want = (-d2 / (2.0 * basis.widths()[i])).exp();
            assert!((phi[i] - want).abs() <= 1e-14);
            assert!(phi[i] > 0.0 && phi[i] <= 1.0);
        }
    }

    #[test]
    fn rbf_rejects_point_outside_workspace() {
        let basis = SpatialBasis::new(vec![0.1], vec![(0.5, 0.5)]).unwrap();
        assert!(matches!(
            basis.eval((1.5, 0.5)),
            Err(FieldError::OutsideWorkspace { .. })
        ));
    }

    #[test]
    fn threat_eval_offset_and_unit_vector() {
        let basis = SpatialBasis::new(vec![0.1, 0.1], vec![(0.2, 0.2), (0.8, 0.8)]).unwrap();
        // Theta = 0 gives the constant field 1.
        assert_eq!(threat_eval(&basis, &[0.0, 0.0], (0.4, 0.9)).unwrap(), 1.0);
        // Theta = e_1 at the first center gives 1 + phi_1(b_1) = 2.
        assert_eq!(threat_eval(&basis, &[1.0, 0.0], (0.2, 0.2)).unwrap(), 2.0);
        // Dimension mismatch is rejected.
        assert!(matches!(
            threat_eval(&basis, &[1.0], (0.2, 0.2)),
            Err(FieldError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn threat_field_bound_holds() {
        let mut rng = RngStream::new(3);
        for _ in 0..20 {
            let basis = SpatialBasis::random(4, &mut rng);
            let theta: Vec<f64> = (0..4).map(|_| rng.uniform_in(-5.0, 5.0)).collect();
            let r = (rng.uniform(), rng.uniform());
            let c = threat_eval(&basis, &theta, r).unwrap();
            let l1: f64 = theta.iter().map(|t| t.abs()).sum();
            assert!((c - 1.0).abs() <= l1 + 1e-12);
        }
    }

    #[test]
    fn hurwitz_scalar_case_is_negative() {
        let mut rng = RngStream::new(1);
        let a = random_hurwitz(1, &mut rng);
        assert!(a.data()[0] < 0.0);
    }

    #[test]
    fn hurwitz_same_seed_same_matrix() {
        let a = random_hurwitz(4, &mut RngStream::new(123));
        let b = random_hurwitz(4, &mut RngStream::new(123));
        assert_eq!(a, b);
    }

    #[test]
    fn hurwitz_abscissa_in_sampled_range() {
        for seed in 0..10 {
            let a = random_hurwitz(4, &mut RngStream::new(seed));
            let abs = spectral_abscissa(a.data(), 4);
            assert!(abs < -0.099, "abscissa {abs} for seed {seed}");
            assert!(abs > -1.001);
        }
    }

    #[test]
    fn dynamics_rejects_non_hurwitz() {
        let a = Tensor::identity(2);
        assert!(matches!(
            ThreatDynamics::new(a, 0.0, 0.0, 0.01),
            Err(FieldError::NotHurwitz { .. })
        ));
    }

    #[test]
    fn integrate_diagonal_decay_matches_exponential() {
        // A = -I decouples into scalar exponentials.
        let a = Tensor::identity(3).scale(-1.0);
        let dynamics = ThreatDynamics::new(a, 0.0, 0.0, 0.01).unwrap();
        let theta0 = [2.0, -1.0, 0.5];
        let mut rng = RngStream::new(0);
        let states = integrate_dynamics(&dynamics, &theta0, 1, &mut rng).unwrap();
        for (got, want) in states[0].iter().zip(theta0.iter().map(|t| t * (-1.0_f64).exp())) {
            assert!((got - want).abs() <= 1e-8 * want.abs());
        }
    }

    #[test]
    fn integrate_hurwitz_decay_bound() {
        let mut rng = RngStream::new(9);
        let a = random_hurwitz(4, &mut rng);
        let abscissa = spectral_abscissa(a.data(), 4);
        let dynamics = ThreatDynamics::new(a, 0.0, 0.0, 0.01).unwrap();
        let t_star = (10.0 / abscissa.abs()).ceil() as usize;
        let theta0 = [3.0, -2.0, 1.0, 4.0];
        let states = integrate_dynamics(&dynamics, &theta0, t_star, &mut rng).unwrap();
        let norm0: f64 = theta0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm_end: f64 = states[t_star - 1].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm_end <= 1e-2 * norm0, "{norm_end} vs {norm0}");
    }

    #[test]
    fn observe_constant_field_and_noise_mean() {
        let basis = SpatialBasis::new(vec![0.1], vec![(0.5, 0.5)]).unwrap();
        let grid = ObservationGrid::new(4);
        let mut rng = RngStream::new(5);
        let x = observe(&basis, &[0.0], &grid, 0.0, &mut rng).unwrap();
        assert_eq!(x, vec![1.0; 16]);

        // Noisy observations average back to the noiseless value.
        let clean = threat_eval(&basis, &[2.0], grid.points()[5]).unwrap();
        let reps = 10_000;
        let mut acc = 0.0;
        for _ in 0..reps {
            let x = observe(&basis, &[2.0], &grid, 0.1, &mut rng).unwrap();
            acc += x[5];
        }
        let mean = acc / reps as f64;
        assert!((mean - clean).abs() <= 3.0 * 0.1 / 100.0);
    }

    #[test]
    fn pool_shapes_and_determinism() {
        let cfg = PoolConfig {
            count: 6,
            grid_side: 8,
            horizon: 4,
            n_p: 4,
            sigma1: 0.25,
            sigma2: 0.0,
            dt: 0.01,
            seed: 42,
        };
        let a = generate_pool(&cfg).unwrap();
        let b = generate_pool(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert_eq!(a.horizon(), 4);
        assert_eq!(a.n_g(), 64);
        assert_eq!(a.data()[0].provenance(), Provenance::Real);
        // Stored parameters round-trip.
        let (basis, theta0) = a.datum_params(3).unwrap();
        assert_eq!(basis.count(), 4);
        assert_eq!(theta0.len(), 4);
        let am = a.dynamics_matrix().unwrap();
        assert_eq!(am.shape(), &[4, 4]);
    }

    #[test]
    fn support_zero_theta0_gives_constant_ones() {
        // sigma = 0 and Theta(0) = 0 keeps Theta(t) = 0, so x = 1 everywhere.
        let basis = SpatialBasis::new(vec![0.1], vec![(0.3, 0.3)]).unwrap();
        let a = Tensor::new(vec![1, 1], vec![-0.5]).unwrap();
        let dynamics = ThreatDynamics::new(a, 0.0, 0.0, 0.01).unwrap();
        let mut rng = RngStream::new(0);
        let states = integrate_dynamics(&dynamics, &[0.0], 4, &mut rng).unwrap();
        let grid = ObservationGrid::new(3);
        for state in &states {
            let x = observe(&basis, state, &grid, 0.0, &mut rng).unwrap();
            assert_eq!(x, vec![1.0; 9]);
        }
    }

    #[test]
    fn support_dataset_is_flagged_and_noiseless_keys_are_zero() {
        let mut rng = RngStream::new(2);
        let a = random_hurwitz(4, &mut rng);
        let ds = generate_support(a, 5, 6, 4, 0.01, 11).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.data()[0].provenance(), Provenance::Support);
        assert_eq!(ds.metadata().get(meta::SIGMA1).unwrap(), "0");
        assert_eq!(ds.metadata().get(meta::SIGMA2).unwrap(), "0");
    }

    #[test]
    fn subsample_contracts() {
        let cfg = PoolConfig {
            count: 10,
            grid_side: 4,
            horizon: 2,
            n_p: 2,
            sigma1: 0.1,
            sigma2: 0.0,
            dt: 0.01,
            seed: 1,
        };
        let pool = generate_pool(&cfg).unwrap();

        // n_d == pool size is a permutation of the pool.
        let all = subsample(&pool, 10, 99).unwrap();
        let mut seen: Vec<usize> = all
            .metadata()
            .get(meta::SUBSAMPLE_INDICES)
            .unwrap()
            .split(',')
            .map(|s| s.parse().unwrap())
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());

        // Same seed, same choice; distinct indices.
        let a = subsample(&pool, 4, 7).unwrap();
        let b = subsample(&pool, 4, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);

        assert!(matches!(
            subsample(&pool, 11, 0),
            Err(FieldError::SubsampleTooLarge { .. })
        ));

        // Carried per-datum parameters reproduce the chosen pool entries.
        let indices: Vec<usize> = a
            .metadata()
            .get(meta::SUBSAMPLE_INDICES)
            .unwrap()
            .split(',')
            .map(|s| s.parse().unwrap())
            .collect();
        let (b0, t0) = a.datum_params(0).unwrap();
        let (pb, pt) = pool.datum_params(indices[0]).unwrap();
        assert_eq!(b0, pb);
        assert_eq!(t0, pt);
    }

    #[test]
    fn dataset_rejects_inhomogeneous_data() {
        let d1 = Datum::new(Tensor::zeros(&[2, 4]), Provenance::Real);
        let d2 = Datum::new(Tensor::zeros(&[3, 4]), Provenance::Real);
        assert!(matches!(
            Dataset::new(vec![d1, d2], 2, BTreeMap::new()),
            Err(FieldError::Inhomogeneous { index: 1, .. })
        ));
    }
}
