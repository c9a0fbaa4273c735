//! Reproducible generation of the elementary random quantities: circularly
//! symmetric complex Gaussians (optionally correlated), Von Mises phase
//! errors, and the seeded stream plumbing that makes Monte Carlo batches
//! deterministic under parallel execution.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// SplitMix64 step, used to derive well-separated substream identifiers.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Identity of one deterministic random stream.
///
/// Identical `(seed, stream_id)` pairs yield bit-identical sample sequences;
/// distinct stream ids select statistically independent ChaCha streams, so
/// Monte Carlo batches can be split across workers without coordination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Derive an independent child stream. Children of one parent never
    /// collide with each other (the index map is a bijection on u64).
    pub fn child(&self, index: u64) -> Self {
        Self {
            seed: self.seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(index)),
        }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Real symmetric spatial correlation matrix together with a lazily computed
/// factor `S` such that `S Sᵀ` reproduces the matrix.
///
/// The factor comes from a symmetric eigendecomposition with negative
/// eigenvalues clamped to zero. Sinc-kernel matrices at sub-half-wavelength
/// spacing are numerically rank deficient, so a Cholesky factorization would
/// fail where the clamped eigenfactor does not.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    entries: DMatrix<f64>,
    factor: OnceLock<std::result::Result<DMatrix<f64>, String>>,
}

impl CorrelationMatrix {
    /// Validates symmetry, a unit diagonal, and entries in [-1, 1].
    pub fn from_entries(entries: DMatrix<f64>) -> Result<Self> {
        let n = entries.nrows();
        if n == 0 || entries.ncols() != n {
            return Err(Error::Domain(format!(
                "correlation matrix must be square and non-empty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        for a in 0..n {
            if (entries[(a, a)] - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!(
                    "correlation matrix diagonal entry ({a},{a}) = {} is not 1",
                    entries[(a, a)]
                )));
            }
            for b in 0..n {
                let r = entries[(a, b)];
                if !r.is_finite() || r.abs() > 1.0 + 1e-12 {
                    return Err(Error::Domain(format!(
                        "correlation entry ({a},{b}) = {r} outside [-1, 1]"
                    )));
                }
                if (r - entries[(b, a)]).abs() > 1e-12 {
                    return Err(Error::Domain(format!(
                        "correlation matrix not symmetric at ({a},{b})"
                    )));
                }
            }
        }
        Ok(Self {
            entries,
            factor: OnceLock::new(),
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
            factor: OnceLock::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// The factor `S = U diag(max(λ, 0))^(1/2)` from the symmetric
    /// eigendecomposition `U diag(λ) Uᵀ` of the matrix.
    pub fn factor(&self) -> Result<&DMatrix<f64>> {
        let computed = self.factor.get_or_init(|| {
            let n = self.entries.nrows();
            let eigen = self
                .entries
                .clone()
                .try_symmetric_eigen(1e-13, 100 * n.max(10))
                .ok_or_else(|| "symmetric eigendecomposition did not converge".to_string())?;
            let mut factor = eigen.eigenvectors;
            for (j, lambda) in eigen.eigenvalues.iter().enumerate() {
                let scale = lambda.max(0.0).sqrt();
                factor.column_mut(j).scale_mut(scale);
            }
            Ok(factor)
        });
        computed.as_ref().map_err(|msg| Error::Eigen(msg.clone()))
    }
}

/// Draw `n` independent CN(0, 1) entries: real and imaginary parts are each
/// zero-mean Gaussian with variance 1/2 (unit power per complex entry).
pub fn sample_standard_complex_gaussian(stream: &RngStream, n: usize) -> Vec<Complex64> {
    standard_complex_gaussian_with(&mut stream.rng(), n)
}

pub(crate) fn standard_complex_gaussian_with<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
) -> Vec<Complex64> {
    (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
        })
        .collect()
}

/// Draw a zero-mean complex Gaussian vector `x` with `E[x xᴴ] = scale · R`,
/// generated as `sqrt(scale) · S · z` with `z` standard complex Gaussian.
pub fn sample_correlated_complex_gaussian(
    stream: &RngStream,
    correlation: &CorrelationMatrix,
    scale: f64,
) -> Result<Vec<Complex64>> {
    correlated_complex_gaussian_with(&mut stream.rng(), correlation, scale)
}

pub(crate) fn correlated_complex_gaussian_with<R: Rng + ?Sized>(
    rng: &mut R,
    correlation: &CorrelationMatrix,
    scale: f64,
) -> Result<Vec<Complex64>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Domain(format!(
            "correlated Gaussian scale must be positive and finite, got {scale}"
        )));
    }
    let factor = correlation.factor()?;
    let n = correlation.n();
    let z = standard_complex_gaussian_with(rng, n);
    let z_re = DVector::from_iterator(n, z.iter().map(|c| c.re));
    let z_im = DVector::from_iterator(n, z.iter().map(|c| c.im));
    let x_re = factor * z_re;
    let x_im = factor * z_im;
    let amplitude = scale.sqrt();
    Ok((0..n)
        .map(|i| Complex64::new(amplitude * x_re[i], amplitude * x_im[i]))
        .collect())
}

/// Draw `n` angles in (-π, π] from the zero-mean Von Mises density
/// proportional to `exp(κ cos θ)`. `κ = 0` is the uniform circle.
///
/// Uses the Best–Fisher (1979) rejection method, which is exact for any
/// concentration.
pub fn sample_von_mises(stream: &RngStream, kappa: f64, n: usize) -> Result<Vec<f64>> {
    let mut rng = stream.rng();
    (0..n).map(|_| von_mises_with(&mut rng, kappa)).collect()
}

pub(crate) fn von_mises_with<R: Rng + ?Sized>(rng: &mut R, kappa: f64) -> Result<f64> {
    if kappa < 0.0 || !kappa.is_finite() {
        return Err(Error::Domain(format!(
            "Von Mises concentration must be nonnegative and finite, got {kappa}"
        )));
    }
    if kappa == 0.0 {
        // x in (-π, π]
        return Ok(PI - TAU * rng.gen::<f64>());
    }
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let z = (PI * rng.gen::<f64>()).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        let u: f64 = rng.gen();
        if c * (2.0 - c) - u > 0.0 || (c / u).ln() + 1.0 - c >= 0.0 {
            let magnitude = f.clamp(-1.0, 1.0).acos();
            let theta = if rng.gen::<bool>() {
                magnitude
            } else {
                -magnitude
            };
            // acos lands in [0, π]; fold the single excluded endpoint.
            return Ok(if theta <= -PI { PI } else { theta });
        }
    }
}
