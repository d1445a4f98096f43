//! Difference-coarray feature extraction.
//!
//! The sample covariance of the physical array is vectorized, entries that
//! share a sensor-position difference (lag) are averaged, and the resulting
//! virtual uniform-array observation is beamformed onto an angle grid to
//! form a real pseudo-spectrum.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array_model::{CoprimeGeometry, SnapshotMatrix, SourceScenario, WAVELENGTH};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceSource {
    Sample,
    Analytic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    data: DMatrix<Complex64>,
    source: CovarianceSource,
}

impl CovarianceMatrix {
    /// Wraps a square matrix; Hermitian symmetry is enforced by averaging
    /// with the conjugate transpose.
    pub fn from_matrix(data: DMatrix<Complex64>, source: CovarianceSource) -> Result<Self> {
        if !data.is_square() {
            return Err(Error::ShapeMismatch(format!(
                "covariance must be square, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        let data = (&data + data.adjoint()).scale(0.5);
        Ok(Self { data, source })
    }

    pub fn data(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn source(&self) -> CovarianceSource {
        self.source
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.data.diagonal().iter().map(|z| z.re).sum()
    }
}

/// `R̂ = (1/Q) Σ x(t_q) x(t_q)^H`.
pub fn sample_covariance(x: &SnapshotMatrix) -> Result<CovarianceMatrix> {
    let q = x.num_snapshots();
    if q == 0 {
        return Err(Error::EmptySnapshots);
    }
    let data = x.data();
    let r = (data * data.adjoint()).unscale(q as f64);
    CovarianceMatrix::from_matrix(r, CovarianceSource::Sample)
}

/// `R = Σ_k σ_k² a(θ_k) a(θ_k)^H + σ_n² I`.
pub fn analytic_covariance(geometry: &CoprimeGeometry, scenario: &SourceScenario) -> Result<CovarianceMatrix> {
    let l = geometry.num_sensors();
    let mut r = DMatrix::<Complex64>::identity(l, l).scale(scenario.noise_power());
    for (&theta, &power) in scenario.doas_deg().iter().zip(scenario.source_powers()) {
        let a = geometry.steering_vector(theta, WAVELENGTH)?;
        r += (&a * a.adjoint()).scale(power);
    }
    CovarianceMatrix::from_matrix(r, CovarianceSource::Analytic)
}

/// Column-major stacking, `y[i + j·L] = R[i, j]`.
pub fn vectorize_covariance(r: &CovarianceMatrix) -> DVector<Complex64> {
    // nalgebra storage is column-major already.
    DVector::from_column_slice(r.data().as_slice())
}

/// Lag-indexed virtual-array observation, lags `-MN..=MN` ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarrayVector {
    lags: Vec<i64>,
    values: Vec<Complex64>,
}

impl CoarrayVector {
    pub fn lags(&self) -> &[i64] {
        &self.lags
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at `lag`, if it lies in the retained range.
    pub fn value(&self, lag: i64) -> Option<Complex64> {
        let offset = self.lags.first()?;
        let idx = usize::try_from(lag - offset).ok()?;
        self.values.get(idx).copied()
    }
}

/// Averages every entry of `y = vec(R)` whose sensor-pair difference equals
/// each lag in `[-MN, MN]`; lags beyond that range are dropped.
pub fn select_coarray(y: &DVector<Complex64>, geometry: &CoprimeGeometry) -> Result<CoarrayVector> {
    let positions = geometry.positions();
    let l = positions.len();
    if y.len() != l * l {
        return Err(Error::LengthMismatch {
            expected: l * l,
            actual: y.len(),
        });
    }
    let max_lag = geometry.max_lag();
    let width = (2 * max_lag + 1) as usize;
    let mut sums = vec![Complex64::new(0.0, 0.0); width];
    let mut counts = vec![0usize; width];
    for j in 0..l {
        for i in 0..l {
            let lag = positions[i] as i64 - positions[j] as i64;
            if lag.abs() <= max_lag {
                let slot = (lag + max_lag) as usize;
                sums[slot] += y[i + j * l];
                counts[slot] += 1;
            }
        }
    }
    let mut values = Vec::with_capacity(width);
    for (slot, (sum, count)) in sums.into_iter().zip(counts).enumerate() {
        if count == 0 {
            return Err(Error::MissingLag(slot as i64 - max_lag));
        }
        values.push(sum / count as f64);
    }
    Ok(CoarrayVector {
        lags: (-max_lag..=max_lag).collect(),
        values,
    })
}

/// Uniform angle grid `min, min+step, …` with `W = floor((max-min)/step) + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridBounds", into = "GridBounds")]
pub struct AngleGrid {
    min_deg: f64,
    max_deg: f64,
    step_deg: f64,
    angles: Vec<f64>,
}

// Slack for floor() on ratios like 30/1 that land a hair under an integer.
const GRID_SLACK: f64 = 1e-9;

impl AngleGrid {
    pub fn new(min_deg: f64, max_deg: f64, step_deg: f64) -> Result<Self> {
        if !(step_deg > 0.0 && step_deg.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "grid step must be positive, got {step_deg}"
            )));
        }
        if !(min_deg.is_finite() && max_deg.is_finite() && min_deg <= max_deg) {
            return Err(Error::InvalidArgument(format!(
                "grid bounds must satisfy min <= max, got [{min_deg}, {max_deg}]"
            )));
        }
        if min_deg < -90.0 || max_deg > 90.0 {
            return Err(Error::OutOfRangeAngle(if min_deg < -90.0 { min_deg } else { max_deg }));
        }
        let w = ((max_deg - min_deg) / step_deg + GRID_SLACK).floor() as usize + 1;
        let angles = (0..w).map(|i| min_deg + i as f64 * step_deg).collect();
        Ok(Self {
            min_deg,
            max_deg,
            step_deg,
            angles,
        })
    }

    pub fn min_deg(&self) -> f64 {
        self.min_deg
    }

    pub fn max_deg(&self) -> f64 {
        self.max_deg
    }

    pub fn step_deg(&self) -> f64 {
        self.step_deg
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// Nearest grid index; exact midpoints go to the lower index.
    pub fn nearest_index(&self, theta_deg: f64) -> Result<usize> {
        let last = *self.angles.last().expect("grid is never empty");
        if !(theta_deg >= self.min_deg - GRID_SLACK && theta_deg <= last + GRID_SLACK) {
            return Err(Error::OffGridOutOfRange {
                doa: theta_deg,
                min: self.min_deg,
                max: last,
            });
        }
        let x = (theta_deg - self.min_deg) / self.step_deg;
        let idx = (x - 0.5 - GRID_SLACK).ceil().max(0.0) as usize;
        Ok(idx.min(self.len() - 1))
    }

    /// True when `span_deg` is an integer number of grid steps.
    pub fn is_multiple_of_step(&self, span_deg: f64) -> bool {
        let r = span_deg / self.step_deg;
        (r - r.round()).abs() < 1e-9
    }
}

#[derive(Serialize, Deserialize)]
struct GridBounds {
    min_deg: f64,
    max_deg: f64,
    step_deg: f64,
}

impl TryFrom<GridBounds> for AngleGrid {
    type Error = Error;

    fn try_from(b: GridBounds) -> Result<Self> {
        AngleGrid::new(b.min_deg, b.max_deg, b.step_deg)
    }
}

impl From<AngleGrid> for GridBounds {
    fn from(g: AngleGrid) -> Self {
        GridBounds {
            min_deg: g.min_deg,
            max_deg: g.max_deg,
            step_deg: g.step_deg,
        }
    }
}

/// Virtual uniform-array manifold, `(2MN+1) × W`, row `ℓ` column `θ_w`
/// holding `exp(-j2π ℓ d sin θ_w / λ)`.
pub fn virtual_manifold(geometry: &CoprimeGeometry, grid: &AngleGrid) -> DMatrix<Complex64> {
    let max_lag = geometry.max_lag();
    let rows = (2 * max_lag + 1) as usize;
    let k = -2.0 * PI * geometry.unit_spacing() / WAVELENGTH;
    DMatrix::from_fn(rows, grid.len(), |r, c| {
        let lag = r as i64 - max_lag;
        Complex64::from_polar(1.0, k * lag as f64 * grid.angles()[c].to_radians().sin())
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSpectrum {
    values: Vec<f64>,
    grid: AngleGrid,
    imag_residual: f64,
}

impl PseudoSpectrum {
    pub fn new(values: Vec<f64>, grid: AngleGrid) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("spectrum has non-finite values".into()));
        }
        Ok(Self {
            values,
            grid,
            imag_residual: 0.0,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> &AngleGrid {
        &self.grid
    }

    /// `max|Im(B^H ỹ)| / max|B^H ỹ|` discarded when taking the real part.
    pub fn imag_residual(&self) -> f64 {
        self.imag_residual
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Writes `angle_deg,value` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "angle_deg,value")?;
        for (a, v) in self.grid.angles().iter().zip(&self.values) {
            writeln!(out, "{a},{v}")?;
        }
        Ok(())
    }
}

/// `μ̃ = Re(B^H ỹ)`.
pub fn pseudo_spectrum(b: &DMatrix<Complex64>, y_tilde: &CoarrayVector, grid: &AngleGrid) -> Result<PseudoSpectrum> {
    if b.nrows() != y_tilde.len() || b.ncols() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "manifold is {}x{}, coarray has {} lags and grid {} points",
            b.nrows(),
            b.ncols(),
            y_tilde.len(),
            grid.len()
        )));
    }
    let y = DVector::from_column_slice(y_tilde.values());
    let mu = b.ad_mul(&y);
    let scale = mu.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let imag = mu.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let mut spectrum = PseudoSpectrum::new(mu.iter().map(|z| z.re).collect(), grid.clone())?;
    spectrum.imag_residual = if scale > 0.0 { imag / scale } else { 0.0 };
    Ok(spectrum)
}

/// Min–max rescaling onto `[0, 1]`.
pub fn normalize_spectrum(mu: &PseudoSpectrum) -> Result<PseudoSpectrum> {
    let lo = mu.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mu.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Err(Error::DegenerateConstant);
    }
    let span = hi - lo;
    Ok(PseudoSpectrum {
        values: mu.values.iter().map(|v| (v - lo) / span).collect(),
        grid: mu.grid.clone(),
        imag_residual: mu.imag_residual,
    })
}

/// The full preprocessing chain for one geometry and grid, with the
/// virtual manifold computed once.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    geometry: CoprimeGeometry,
    grid: AngleGrid,
    manifold: DMatrix<Complex64>,
}

impl FeatureExtractor {
    pub fn new(geometry: CoprimeGeometry, grid: AngleGrid) -> Self {
        let manifold = virtual_manifold(&geometry, &grid);
        Self {
            geometry,
            grid,
            manifold,
        }
    }

    pub fn geometry(&self) -> &CoprimeGeometry {
        &self.geometry
    }

    pub fn grid(&self) -> &AngleGrid {
        &self.grid
    }

    pub fn manifold(&self) -> &DMatrix<Complex64> {
        &self.manifold
    }

    /// Raw (unnormalized) pseudo-spectrum of a covariance matrix.
    pub fn spectrum_of(&self, r: &CovarianceMatrix) -> Result<PseudoSpectrum> {
        let y = vectorize_covariance(r);
        let y_tilde = select_coarray(&y, &self.geometry)?;
        pseudo_spectrum(&self.manifold, &y_tilde, &self.grid)
    }

    /// Normalized pseudo-spectrum of simulated snapshots.
    pub fn features(&self, x: &SnapshotMatrix) -> Result<PseudoSpectrum> {
        normalize_spectrum(&self.spectrum_of(&sample_covariance(x)?)?)
    }

    /// Raw pseudo-spectrum of the noiseless-estimation (analytic) covariance.
    pub fn analytic_spectrum(&self, scenario: &SourceScenario) -> Result<PseudoSpectrum> {
        self.spectrum_of(&analytic_covariance(&self.geometry, scenario)?)
    }
}
