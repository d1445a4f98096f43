//! Co-prime array geometry, steering vectors and snapshot simulation.
//!
//! A co-prime array with co-prime integers `M < N` is the union of an
//! `N`-element sub-array with spacing `M·d` and a `2M`-element sub-array
//! with spacing `N·d`, sharing the sensor at the origin. Positions are kept
//! as integers in units of `d`; the physical spacing `d` is expressed in
//! wavelengths.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Half-wavelength spacing, the usual alias-free choice.
pub const DEFAULT_UNIT_SPACING: f64 = 0.5;

/// Wavelength used throughout the pipeline; spacings are in wavelengths.
pub const WAVELENGTH: f64 = 1.0;

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoprimeGeometry {
    m: usize,
    n: usize,
    unit_spacing: f64,
    positions: Vec<usize>,
}

impl CoprimeGeometry {
    /// Builds the sensor layout for the co-prime pair `(m, n)`.
    pub fn new(m: usize, n: usize, unit_spacing: f64) -> Result<Self> {
        if m == 0 || m >= n {
            return Err(Error::BadOrder { m, n });
        }
        if gcd(m, n) != 1 {
            return Err(Error::NonCoprime { m, n });
        }
        if !(unit_spacing > 0.0 && unit_spacing.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "unit spacing must be positive, got {unit_spacing}"
            )));
        }
        let mut positions: Vec<usize> = (0..n).map(|i| m * i).chain((0..2 * m).map(|i| n * i)).collect();
        positions.sort_unstable();
        positions.dedup();
        debug_assert_eq!(positions.len(), n + 2 * m - 1);
        Ok(Self {
            m,
            n,
            unit_spacing,
            positions,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn unit_spacing(&self) -> f64 {
        self.unit_spacing
    }

    /// Sensor positions in units of the fundamental spacing, ascending.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn num_sensors(&self) -> usize {
        self.positions.len()
    }

    /// Largest lag of the contiguous coarray segment, `M·N`.
    pub fn max_lag(&self) -> i64 {
        (self.m * self.n) as i64
    }

    /// Steering vector for a plane wave from `theta_deg` (measured from broadside).
    pub fn steering_vector(&self, theta_deg: f64, wavelength: f64) -> Result<DVector<Complex64>> {
        check_visible(theta_deg)?;
        let k = -2.0 * PI * self.unit_spacing / wavelength * theta_deg.to_radians().sin();
        Ok(DVector::from_iterator(
            self.positions.len(),
            self.positions.iter().map(|&p| Complex64::from_polar(1.0, k * p as f64)),
        ))
    }

    /// Array manifold `A = [a(θ_1) … a(θ_K)]`.
    pub fn manifold(&self, doas_deg: &[f64]) -> Result<DMatrix<Complex64>> {
        let mut a = DMatrix::zeros(self.num_sensors(), doas_deg.len());
        for (k, &theta) in doas_deg.iter().enumerate() {
            a.set_column(k, &self.steering_vector(theta, WAVELENGTH)?);
        }
        Ok(a)
    }
}

/// Steering vectors accept the closed interval [-90°, 90°] so that endfire
/// grid points can be evaluated.
fn check_visible(theta_deg: f64) -> Result<()> {
    if theta_deg.is_finite() && (-90.0..=90.0).contains(&theta_deg) {
        Ok(())
    } else {
        Err(Error::OutOfRangeAngle(theta_deg))
    }
}

/// Far-field narrow-band sources with their powers and the sensor noise power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceScenario {
    doas_deg: Vec<f64>,
    source_powers: Vec<f64>,
    noise_power: f64,
}

impl SourceScenario {
    pub fn new(doas_deg: Vec<f64>, source_powers: Vec<f64>, noise_power: f64) -> Result<Self> {
        if doas_deg.len() != source_powers.len() {
            return Err(Error::LengthMismatch {
                expected: doas_deg.len(),
                actual: source_powers.len(),
            });
        }
        for &theta in &doas_deg {
            if !(theta.is_finite() && theta > -90.0 && theta < 90.0) {
                return Err(Error::OutOfRangeAngle(theta));
            }
        }
        if source_powers.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::InvalidArgument("source powers must be positive".into()));
        }
        // Zero noise is allowed for noiseless analytic checks.
        if !(noise_power >= 0.0 && noise_power.is_finite()) {
            return Err(Error::InvalidArgument("noise power must be non-negative".into()));
        }
        for (i, a) in doas_deg.iter().enumerate() {
            if doas_deg[i + 1..].contains(a) {
                return Err(Error::InvalidArgument(format!("duplicate DOA {a}")));
            }
        }
        Ok(Self {
            doas_deg,
            source_powers,
            noise_power,
        })
    }

    /// Equal-power sources at `snr_db` relative to unit noise power.
    pub fn from_snr_db(doas_deg: Vec<f64>, snr_db: f64) -> Result<Self> {
        let power = 10f64.powf(snr_db / 10.0);
        let powers = vec![power; doas_deg.len()];
        Self::new(doas_deg, powers, 1.0)
    }

    /// Per-source SNRs in dB against unit noise power.
    pub fn from_snrs_db(doas_deg: Vec<f64>, snrs_db: &[f64]) -> Result<Self> {
        let powers = snrs_db.iter().map(|s| 10f64.powf(s / 10.0)).collect();
        Self::new(doas_deg, powers, 1.0)
    }

    pub fn doas_deg(&self) -> &[f64] {
        &self.doas_deg
    }

    pub fn source_powers(&self) -> &[f64] {
        &self.source_powers
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_power
    }

    pub fn num_sources(&self) -> usize {
        self.doas_deg.len()
    }

    pub fn with_noise_power(&self, noise_power: f64) -> Result<Self> {
        Self::new(self.doas_deg.clone(), self.source_powers.clone(), noise_power)
    }
}

/// Array outputs, one column per snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    data: DMatrix<Complex64>,
}

impl SnapshotMatrix {
    pub fn from_matrix(data: DMatrix<Complex64>) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::EmptySnapshots);
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn num_snapshots(&self) -> usize {
        self.data.ncols()
    }

    pub fn num_sensors(&self) -> usize {
        self.data.nrows()
    }
}

/// Draws a circular complex Gaussian with the given total variance.
fn complex_normal<R: rand::Rng>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Simulates `q` snapshots of `x(t) = A s(t) + n(t)`.
///
/// Sources and noise are independent circular complex Gaussians. Within a
/// snapshot the source draws come first (in source order), then the noise
/// draws (in sensor order); the result is a pure function of `seed`.
pub fn simulate_snapshots(
    geometry: &CoprimeGeometry,
    scenario: &SourceScenario,
    q: usize,
    seed: u64,
) -> Result<SnapshotMatrix> {
    if q == 0 {
        return Err(Error::EmptySnapshots);
    }
    let a = geometry.manifold(scenario.doas_deg())?;
    let l = geometry.num_sensors();
    let k = scenario.num_sources();
    let mut rng = rng_from_seed(seed);
    let mut s = DMatrix::<Complex64>::zeros(k, q);
    let mut noise = DMatrix::<Complex64>::zeros(l, q);
    for t in 0..q {
        for (i, &power) in scenario.source_powers().iter().enumerate() {
            s[(i, t)] = complex_normal(&mut rng, power);
        }
        for r in 0..l {
            noise[(r, t)] = complex_normal(&mut rng, scenario.noise_power());
        }
    }
    SnapshotMatrix::from_matrix(&a * s + noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn geometry_m3_n5() {
        let g = CoprimeGeometry::new(3, 5, 0.5).unwrap();
        assert_eq!(g.positions(), &[0, 3, 5, 6, 9, 10, 12, 15, 20, 25]);
        assert_eq!(g.num_sensors(), 10);
    }

    #[test]
    fn geometry_m1_n2() {
        let g = CoprimeGeometry::new(1, 2, 0.5).unwrap();
        assert_eq!(g.positions(), &[0, 1, 2]);
    }

    #[test]
    fn geometry_errors() {
        assert!(matches!(CoprimeGeometry::new(2, 4, 0.5), Err(Error::NonCoprime { .. })));
        assert!(matches!(CoprimeGeometry::new(5, 3, 0.5), Err(Error::BadOrder { .. })));
        assert!(matches!(CoprimeGeometry::new(0, 3, 0.5), Err(Error::BadOrder { .. })));
        assert!(CoprimeGeometry::new(3, 5, 0.0).is_err());
    }

    #[test]
    fn geometry_extremes() {
        for (m, n) in [(1, 2), (2, 3), (3, 5), (2, 5), (3, 7), (4, 9)] {
            let g = CoprimeGeometry::new(m, n, 0.5).unwrap();
            assert_eq!(g.positions()[0], 0);
            assert_eq!(*g.positions().last().unwrap(), n * (2 * m - 1));
            assert_eq!(g.num_sensors(), n + 2 * m - 1);
        }
    }

    #[test]
    fn steering_broadside_is_ones() {
        let g = CoprimeGeometry::new(3, 5, 0.5).unwrap();
        let a = g.steering_vector(0.0, 1.0).unwrap();
        for z in a.iter() {
            assert_eq!(*z, Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn steering_conjugate_symmetry_and_modulus() {
        let g = CoprimeGeometry::new(3, 5, 0.5).unwrap();
        for theta in [-71.5, -20.0, 3.0, 44.4, 89.0] {
            let a = g.steering_vector(theta, 1.0).unwrap();
            let b = g.steering_vector(-theta, 1.0).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                assert_abs_diff_eq!(x.conj().re, y.re, epsilon = 1e-12);
                assert_abs_diff_eq!(x.conj().im, y.im, epsilon = 1e-12);
                assert_abs_diff_eq!(x.norm(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn steering_endfire_position_three() {
        let g = CoprimeGeometry::new(3, 5, 0.5).unwrap();
        let a = g.steering_vector(90.0, 1.0).unwrap();
        let idx = g.positions().iter().position(|&p| p == 3).unwrap();
        assert_abs_diff_eq!(a[idx].re, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[idx].im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn steering_rejects_invisible_angles() {
        let g = CoprimeGeometry::new(3, 5, 0.5).unwrap();
        assert!(matches!(g.steering_vector(90.5, 1.0), Err(Error::OutOfRangeAngle(_))));
        assert!(matches!(
            g.steering_vector(f64::NAN, 1.0),
            Err(Error::OutOfRangeAngle(_))
        ));
    }

    #[test]
    fn scenario_validation() {
        assert!(SourceScenario::new(vec![1.0, 1.0], vec![1.0, 1.0], 1.0).is_err());
        assert!(SourceScenario::new(vec![90.0], vec![1.0], 1.0).is_err());
        assert!(SourceScenario::new(vec![1.0], vec![0.0], 1.0).is_err());
        assert!(SourceScenario::new(vec![], vec![], 1.0).is_ok());
        let s = SourceScenario::from_snr_db(vec![-3.0, 4.0], 10.0).unwrap();
        assert_abs_diff_eq!(s.source_powers()[0], 10.0, epsilon = 1e-12);
    }

    #[test]
    fn simulation_is_deterministic() {
        let g = CoprimeGeometry::new(3, 5, 0.5).unwrap();
        let s = SourceScenario::from_snr_db(vec![-4.0, 3.0], 0.0).unwrap();
        let x1 = simulate_snapshots(&g, &s, 64, 11).unwrap();
        let x2 = simulate_snapshots(&g, &s, 64, 11).unwrap();
        let x3 = simulate_snapshots(&g, &s, 64, 12).unwrap();
        assert_eq!(x1, x2);
        assert_ne!(x1, x3);
        assert_eq!(x1.num_sensors(), 10);
        assert_eq!(x1.num_snapshots(), 64);
        assert!(simulate_snapshots(&g, &s, 0, 1).is_err());
    }
}
