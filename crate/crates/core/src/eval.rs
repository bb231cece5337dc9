//! Statistical-similarity evaluation: PCA over flattened data, projection
//! to the leading principal components, and first-four-moment reports.
//!
//! With few samples in a very high-dimensional space, the covariance
//! eigenproblem is solved in its dual form: eigenvectors of the N x N Gram
//! matrix of centered data are mapped back to feature space, which is exact
//! for the top N-1 components at a fraction of the cost.

use thiserror::Error;

use crate::field::Dataset;
use crate::linalg::symmetric_eigen;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {need} samples, got {have}")]
    TooFewSamples { have: usize, need: usize },
    #[error("dataset feature length {got} does not match basis {expected}")]
    GeometryMismatch { expected: usize, got: usize },
    #[error("zero variance: skewness and kurtosis are undefined (mean {mean})")]
    ZeroVariance { mean: f64 },
}

/// Mean vector and top-k orthonormal principal directions of a dataset,
/// eigenvalues sorted descending (population normalization, 1/N).
#[derive(Debug, Clone)]
pub struct PcaBasis {
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
}

impl PcaBasis {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
}

fn flatten(data: &Dataset) -> (usize, usize, Vec<f64>) {
    let n = data.len();
    let d = data.horizon() * data.n_g();
    let mut flat = Vec::with_capacity(n * d);
    for datum in data.data() {
        flat.extend_from_slice(datum.flat());
    }
    (n, d, flat)
}

/// Fit the top-`k` principal components via the Gram (dual) eigenproblem.
pub fn fit_pca(data: &Dataset, k: usize) -> Result<PcaBasis, EvalError> {
    let (n, d, mut flat) = flatten(data);
    if n < k + 1 {
        return Err(EvalError::TooFewSamples { have: n, need: k + 1 });
    }
    if k > d {
        return Err(EvalError::GeometryMismatch { expected: d, got: k });
    }
    let mut mean = vec![0.0; d];
    for row in flat.chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let inv_n = 1.0 / n as f64;
    for m in &mut mean {
        *m *= inv_n;
    }
    for row in flat.chunks_mut(d) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }

    // Gram matrix of centered rows.
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        let ri = &flat[i * d..(i + 1) * d];
        for j in 0..=i {
            let rj = &flat[j * d..(j + 1) * d];
            let dot: f64 = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
            gram[i * n + j] = dot;
            gram[j * n + i] = dot;
        }
    }
    let (nu, u) = symmetric_eigen(&gram, n);

    // Map dual eigenvectors back to feature space and re-orthonormalize;
    // null directions (zero eigenvalue) get a deterministic completion so
    // the basis is always orthonormal.
    let scale = nu.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    for i in 0..k {
        eigenvalues.push((nu[i] / n as f64).max(0.0));
        let mut w = vec![0.0; d];
        if nu[i] > 1e-12 * scale {
            for (j, row) in flat.chunks(d).enumerate() {
                let uij = u[i * n + j];
                if uij == 0.0 {
                    continue;
                }
                for (wv, rv) in w.iter_mut().zip(row) {
                    *wv += uij * rv;
                }
            }
        }
        let mut accepted = false;
        for fallback in 0..=d {
            if fallback > 0 {
                w = vec![0.0; d];
                w[fallback - 1] = 1.0;
            }
            for prev in &components {
                let dot: f64 = w.iter().zip(prev).map(|(a, b)| a * b).sum();
                for (wv, pv) in w.iter_mut().zip(prev) {
                    *wv -= dot * pv;
                }
            }
            let norm: f64 = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for wv in &mut w {
                    *wv /= norm;
                }
                accepted = true;
                break;
            }
        }
        debug_assert!(accepted, "orthonormal completion always exists for k <= d");
        components.push(w);
    }

    Ok(PcaBasis {
        mean,
        components,
        eigenvalues,
    })
}

/// Project every datum onto the basis: `coords = (x - mean) . components`.
pub fn project(basis: &PcaBasis, data: &Dataset) -> Result<Vec<Vec<f64>>, EvalError> {
    let d = data.horizon() * data.n_g();
    if d != basis.dim() {
        return Err(EvalError::GeometryMismatch {
            expected: basis.dim(),
            got: d,
        });
    }
    let mut coords = Vec::with_capacity(data.len());
    for datum in data.data() {
        let row = datum.flat();
        let mut c = Vec::with_capacity(basis.k());
        for comp in &basis.components {
            let mut acc = 0.0;
            for ((&x, &m), &w) in row.iter().zip(&basis.mean).zip(comp) {
                acc += (x - m) * w;
            }
            c.push(acc);
        }
        coords.push(c);
    }
    Ok(coords)
}

/// First four statistical moments with population (1/n) normalization and
/// non-excess kurtosis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

pub fn moments(samples: &[f64]) -> Result<Moments, EvalError> {
    if samples.len() < 2 {
        return Err(EvalError::TooFewSamples {
            have: samples.len(),
            need: 2,
        });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for &x in samples {
        let c = x - mean;
        let c2 = c * c;
        m2 += c2;
        m3 += c2 * c;
        m4 += c2 * c2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 == 0.0 {
        return Err(EvalError::ZeroVariance { mean });
    }
    Ok(Moments {
        mean,
        variance: m2,
        skewness: m3 / m2.powf(1.5),
        kurtosis: m4 / (m2 * m2),
    })
}

/// Moments of one dataset along each principal axis.
#[derive(Debug, Clone)]
pub struct MomentRow {
    pub label: String,
    pub axes: Vec<Moments>,
}

/// Normalized L1 distance over all moment cells between a dataset row and
/// the pool row: `sum |m - m_pool| / (|m_pool| + 1)`.
pub fn moment_distance(pool: &MomentRow, other: &MomentRow) -> f64 {
    pool.axes
        .iter()
        .zip(&other.axes)
        .map(|(p, o)| {
            [
                (p.mean, o.mean),
                (p.variance, o.variance),
                (p.skewness, o.skewness),
                (p.kurtosis, o.kurtosis),
            ]
            .into_iter()
            .map(|(pm, om)| (om - pm).abs() / (pm.abs() + 1.0))
            .sum::<f64>()
        })
        .sum()
}

/// A full comparison report: per-dataset moment rows along the pool's top
/// principal axes, plus one scalar distance per generated dataset.
#[derive(Debug, Clone)]
pub struct SimilarityReport {
    pub eigenvalues: Vec<f64>,
    pub rows: Vec<MomentRow>,
    /// `(label, distance-to-pool)` for every non-pool row.
    pub distances: Vec<(String, f64)>,
}

fn moment_row(
    basis: &PcaBasis,
    label: &str,
    data: &Dataset,
) -> Result<MomentRow, EvalError> {
    let coords = project(basis, data)?;
    let mut axes = Vec::with_capacity(basis.k());
    for axis in 0..basis.k() {
        let samples: Vec<f64> = coords.iter().map(|c| c[axis]).collect();
        axes.push(moments(&samples)?);
    }
    Ok(MomentRow {
        label: label.to_string(),
        axes,
    })
}

/// Fit PCA on the pool, then report moments for the pool, the training
/// subset (when given), and each labeled generated dataset, with distances
/// measured against the pool row.
pub fn similarity_report(
    pool: &Dataset,
    x_train: Option<&Dataset>,
    generated: &[(String, &Dataset)],
    k: usize,
) -> Result<SimilarityReport, EvalError> {
    let basis = fit_pca(pool, k)?;
    similarity_report_on(&basis, pool, x_train, generated)
}

/// As [`similarity_report`], but on an already-fitted basis so callers can
/// reuse the same axes for coordinate exports.
pub fn similarity_report_on(
    basis: &PcaBasis,
    pool: &Dataset,
    x_train: Option<&Dataset>,
    generated: &[(String, &Dataset)],
) -> Result<SimilarityReport, EvalError> {
    let pool_row = moment_row(basis, "Training data pool", pool)?;
    let mut rows = vec![pool_row];
    let mut distances = Vec::new();
    if let Some(x) = x_train {
        let row = moment_row(basis, "Training data X", x)?;
        distances.push((row.label.clone(), moment_distance(&rows[0], &row)));
        rows.push(row);
    }
    for (label, data) in generated {
        let row = moment_row(basis, label, data)?;
        distances.push((row.label.clone(), moment_distance(&rows[0], &row)));
        rows.push(row);
    }
    Ok(SimilarityReport {
        eigenvalues: basis.eigenvalues.clone(),
        rows,
        distances,
    })
}

fn sig4(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let formatted = format!("{v:.3e}");
    // Keep plain decimal for moderate magnitudes, matching how the moment
    // tables are usually read.
    if v.abs() >= 0.01 && v.abs() < 10000.0 {
        let digits = 3_i32 - v.abs().log10().floor() as i32;
        format!("{v:.*}", digits.max(0) as usize)
    } else {
        formatted
    }
}

impl SimilarityReport {
    /// Aligned-text rendering in the style of a moment table: one row per
    /// dataset, four moment blocks of k axes each.
    pub fn render_text(&self) -> String {
        let k = self.eigenvalues.len();
        let mut header = vec!["dataset".to_string()];
        for (sym, _) in [("mu", 0), ("var", 1), ("skew", 2), ("kurt", 3)] {
            for axis in 1..=k {
                header.push(format!("{sym}_S{axis}"));
            }
        }
        let mut table: Vec<Vec<String>> = vec![header];
        for row in &self.rows {
            let mut cells = vec![row.label.clone()];
            for accessor in [
                |m: &Moments| m.mean,
                |m: &Moments| m.variance,
                |m: &Moments| m.skewness,
                |m: &Moments| m.kurtosis,
            ] {
                for m in &row.axes {
                    cells.push(sig4(accessor(m)));
                }
            }
            table.push(cells);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &table {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, cell)| format!("{cell:>width$}", width = widths[c]))
                .collect();
            out.push_str(&line.join("  "));
            out.push('\n');
        }
        out.push('\n');
        for (label, d) in &self.distances {
            out.push_str(&format!("distance to pool [{label}]: {d:.6}\n"));
        }
        out
    }

    /// CSV rendering: `dataset,axis,mean,variance,skewness,kurtosis`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,axis,mean,variance,skewness,kurtosis\n");
        for row in &self.rows {
            for (axis, m) in row.axes.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    row.label,
                    axis + 1,
                    m.mean,
                    m.variance,
                    m.skewness,
                    m.kurtosis
                ));
            }
        }
        out
    }

    /// CSV rendering of the per-model distances.
    pub fn distances_csv(&self) -> String {
        let mut out = String::from("dataset,distance\n");
        for (label, d) in &self.distances {
            out.push_str(&format!("{label},{d}\n"));
        }
        out
    }
}
