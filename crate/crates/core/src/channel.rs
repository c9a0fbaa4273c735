//! Scenario configuration and simulation of the RIS-assisted end-to-end
//! channel.
//!
//! A scenario draws the source-to-RIS matrix `G`, the RIS-to-destination
//! vector `h2`, and (optionally) the direct vector `h_sd`, applies the RIS
//! phase design with Von Mises residual errors, and records the equivalent
//! magnitude channel
//!
//! ```text
//!   h = ‖ vᵀ diag(h2) G + h_sdᵀ ‖
//! ```
//!
//! where `v` carries the designed per-element phases. Under maximum ratio
//! transmission the inner product with the optimal beamformer equals the
//! Euclidean norm of the composite row vector, which is what is stored.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sampling::{
    standard_complex_gaussian_with, von_mises_with, CorrelationMatrix, RngStream,
};

/// Rectangular RIS layout: `n_h` elements per row, `n_v` per column, with
/// per-element width `d_h`, height `d_v`, and the carrier wavelength, all in
/// meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RisGeometry {
    pub n_h: usize,
    pub n_v: usize,
    pub d_h: f64,
    pub d_v: f64,
    pub wavelength: f64,
}

impl RisGeometry {
    /// Square layout with equal element width and height.
    pub fn square(side: usize, spacing: f64, wavelength: f64) -> Self {
        Self {
            n_h: side,
            n_v: side,
            d_h: spacing,
            d_v: spacing,
            wavelength,
        }
    }

    /// Total element count `N = n_h · n_v`.
    pub fn n(&self) -> usize {
        self.n_h * self.n_v
    }

    /// Element area `A = d_h · d_v`.
    pub fn element_area(&self) -> f64 {
        self.d_h * self.d_v
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_h < 1 || self.n_v < 1 {
            return Err(Error::Config(
                "RIS geometry needs at least one element per row and column".into(),
            ));
        }
        for (name, v) in [
            ("d_h", self.d_h),
            ("d_v", self.d_v),
            ("wavelength", self.wavelength),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "RIS geometry field {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Position of element `i` (0-based) on the vertical plane:
    /// `[0, (i mod n_h)·d_h, ⌊i / n_h⌋·d_v]`.
    fn position(&self, i: usize) -> (f64, f64) {
        (
            (i % self.n_h) as f64 * self.d_h,
            (i / self.n_h) as f64 * self.d_v,
        )
    }
}

/// Average path-loss attenuations in dB and whether the direct
/// source-destination path exists at all. When `direct_link` is false the
/// direct channel contributes exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkBudget {
    pub beta1_db: f64,
    pub beta2_db: f64,
    pub beta_sd_db: f64,
    pub direct_link: bool,
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta1_db", self.beta1_db),
            ("beta2_db", self.beta2_db),
            ("beta_sd_db", self.beta_sd_db),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!(
                    "link budget field {name} must be finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Power-domain dB to linear conversion; amplitudes take the square root.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Multi-wave fading description for one link: `num_waves` specular
/// components of constant amplitude plus a diffuse complex Gaussian term of
/// power `omega0`. The first specular amplitude is `v1`; later ones are
/// `alpha · v1`. `num_waves` of 0, 1, 2 reduce to Rayleigh, Rician, and TWDP
/// fading respectively.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecularSpec {
    pub num_waves: usize,
    pub v1: f64,
    pub alpha: f64,
    pub omega0: f64,
}

impl SpecularSpec {
    /// Pure diffuse (Rayleigh) link of power `omega0`.
    pub fn rayleigh(omega0: f64) -> Self {
        Self {
            num_waves: 0,
            v1: 0.0,
            alpha: 0.5,
            omega0,
        }
    }

    /// Single specular wave sized so that the specular-to-diffuse power
    /// ratio equals `k_db`.
    pub fn rician_from_k_db(k_db: f64, omega0: f64) -> Self {
        Self {
            num_waves: 1,
            v1: (db_to_linear(k_db) * omega0).sqrt(),
            alpha: 0.5,
            omega0,
        }
    }

    /// Total specular power `Ω_L = v1²·(1 + (L−1)α²)` for `L ≥ 1`, else 0.
    pub fn specular_power(&self) -> f64 {
        if self.num_waves == 0 {
            0.0
        } else {
            self.v1 * self.v1 * (1.0 + (self.num_waves - 1) as f64 * self.alpha * self.alpha)
        }
    }

    /// Specular-to-diffuse power ratio `K_L = Ω_L / Ω₀` (derived, never
    /// stored).
    pub fn power_ratio(&self) -> f64 {
        self.specular_power() / self.omega0
    }

    /// Mean coefficient power `Ω₀ + Ω_L`.
    pub fn total_power(&self) -> f64 {
        self.omega0 + self.specular_power()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.omega0.is_finite() || self.omega0 < 0.0 {
            return Err(Error::Config(format!(
                "diffuse power omega0 must be nonnegative, got {}",
                self.omega0
            )));
        }
        if self.num_waves >= 1 && (!self.v1.is_finite() || self.v1 <= 0.0) {
            return Err(Error::Config(format!(
                "specular amplitude v1 must be positive with {} waves, got {}",
                self.num_waves, self.v1
            )));
        }
        if self.num_waves >= 2
            && (!self.alpha.is_finite() || self.alpha <= 0.0 || self.alpha >= 1.0)
        {
            return Err(Error::Config(format!(
                "amplitude ratio alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.total_power() <= 0.0 {
            return Err(Error::Config(
                "fading spec has zero total power (omega0 = 0 and no specular waves)".into(),
            ));
        }
        Ok(())
    }
}

/// Fading model for the scenario.
///
/// `CorrelatedRayleigh` applies the same sinc-kernel spatial correlation
/// matrix to `h2` and every column of `G`; with `iid_reference` the matrix is
/// replaced by the identity, the reference case plotted alongside correlated
/// curves. `GeneralizedIid` draws every coefficient independently from a
/// multi-wave spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FadingVariant {
    CorrelatedRayleigh {
        #[serde(default)]
        iid_reference: bool,
    },
    GeneralizedIid {
        spec_ris_in: SpecularSpec,
        spec_ris_out: SpecularSpec,
        spec_direct: SpecularSpec,
    },
}

/// A complete simulation scenario: geometry, link budget, antenna count `M`,
/// phase-error concentration `κ`, fading variant, SNR budget
/// `ρ = P_T/σ²` in dB, and the number of channel realizations to draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub geometry: RisGeometry,
    pub budget: LinkBudget,
    pub m_antennas: usize,
    pub kappa: f64,
    pub variant: FadingVariant,
    pub snr_budget_db: f64,
    pub sample_count: usize,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.budget.validate()?;
        if self.m_antennas < 1 {
            return Err(Error::Config(
                "at least one transmit antenna required".into(),
            ));
        }
        if !self.kappa.is_finite() || self.kappa < 0.0 {
            return Err(Error::Config(format!(
                "phase-error concentration kappa must be nonnegative, got {}",
                self.kappa
            )));
        }
        if !self.snr_budget_db.is_finite() {
            return Err(Error::Config("snr_budget_db must be finite".into()));
        }
        if self.sample_count < 1 {
            return Err(Error::Config("sample_count must be at least 1".into()));
        }
        if let FadingVariant::GeneralizedIid {
            spec_ris_in,
            spec_ris_out,
            spec_direct,
        } = &self.variant
        {
            spec_ris_in.validate()?;
            spec_ris_out.validate()?;
            spec_direct.validate()?;
        }
        Ok(())
    }

    /// Per-coefficient power gain of the source-to-RIS link. The element
    /// area multiplies the path loss in both fading variants.
    pub fn ris_in_gain(&self) -> f64 {
        self.geometry.element_area() * db_to_linear(self.budget.beta1_db)
    }

    /// Per-coefficient power gain of the RIS-to-destination link. The
    /// element area enters only under correlated Rayleigh fading.
    pub fn ris_out_gain(&self) -> f64 {
        match self.variant {
            FadingVariant::CorrelatedRayleigh { .. } => {
                self.geometry.element_area() * db_to_linear(self.budget.beta2_db)
            }
            FadingVariant::GeneralizedIid { .. } => db_to_linear(self.budget.beta2_db),
        }
    }

    /// Per-antenna power gain of the direct link.
    pub fn direct_gain(&self) -> f64 {
        db_to_linear(self.budget.beta_sd_db)
    }

    /// Stable hexadecimal digest of the full configuration.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("scenario serializes");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `t` realizations of the equivalent magnitude channel, with the stream
/// that produced them and a digest of the generating configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSampleSet {
    pub samples: Vec<f64>,
    pub config_digest: String,
    pub seed: RngStream,
}

/// Normalized sinc, `sin(πw)/(πw)` with `sinc(0) = 1`.
///
/// The argument is reduced against its nearest integer before the sine so
/// that exactly integral inputs produce exactly zero.
pub fn sinc(w: f64) -> f64 {
    if w == 0.0 {
        return 1.0;
    }
    let nearest = w.round();
    let frac = w - nearest;
    if frac == 0.0 {
        return 0.0;
    }
    let sign = if (nearest as i64) % 2 == 0 { 1.0 } else { -1.0 };
    sign * (PI * frac).sin() / (PI * w)
}

/// Spatial correlation matrix of the RIS under isotropic scattering: entry
/// `(a, b)` is `sinc(2‖u_a − u_b‖/λ)` for element positions `u`.
pub fn build_correlation_matrix(geometry: &RisGeometry) -> Result<CorrelationMatrix> {
    geometry.validate()?;
    let n = geometry.n();
    let mut entries = DMatrix::zeros(n, n);
    for a in 0..n {
        entries[(a, a)] = 1.0;
        let (ya, za) = geometry.position(a);
        for b in (a + 1)..n {
            let (yb, zb) = geometry.position(b);
            let dist = (ya - yb).hypot(za - zb);
            let r = sinc(2.0 * dist / geometry.wavelength);
            entries[(a, b)] = r;
            entries[(b, a)] = r;
        }
    }
    CorrelationMatrix::from_entries(entries)
}

/// Correlation matrix the scenario actually uses: the sinc kernel, or the
/// identity for the i.i.d. reference variant.
pub fn correlation_matrix_for(config: &ScenarioConfig) -> Result<CorrelationMatrix> {
    match config.variant {
        FadingVariant::CorrelatedRayleigh {
            iid_reference: true,
        } => Ok(CorrelationMatrix::identity(config.geometry.n())),
        _ => build_correlation_matrix(&config.geometry),
    }
}

/// One full set of link draws: `G` is `N×M` with column `q` the channel from
/// antenna `q` to the RIS, `h2` the RIS-to-destination vector, `hsd` the
/// direct vector (all zeros when the direct path is blocked).
type LinkDraw = (DMatrix<Complex64>, DVector<Complex64>, DVector<Complex64>);

fn scaled_gaussian_vector<R: Rng + ?Sized>(rng: &mut R, n: usize, gain: f64) -> Vec<Complex64> {
    let amplitude = gain.sqrt();
    standard_complex_gaussian_with(rng, n)
        .into_iter()
        .map(|c| c * amplitude)
        .collect()
}

fn draw_correlated_with(
    rng: &mut ChaCha8Rng,
    config: &ScenarioConfig,
    correlation: &CorrelationMatrix,
) -> Result<LinkDraw> {
    let n = config.geometry.n();
    let m = config.m_antennas;
    let factor = correlation.factor()?;

    let correlated = |rng: &mut ChaCha8Rng, gain: f64| -> DVector<Complex64> {
        let z = standard_complex_gaussian_with(rng, n);
        let z_re = DVector::from_iterator(n, z.iter().map(|c| c.re));
        let z_im = DVector::from_iterator(n, z.iter().map(|c| c.im));
        let x_re = factor * z_re;
        let x_im = factor * z_im;
        let amplitude = gain.sqrt();
        DVector::from_iterator(
            n,
            (0..n).map(|i| Complex64::new(amplitude * x_re[i], amplitude * x_im[i])),
        )
    };

    let h2 = correlated(rng, config.ris_out_gain());
    let mut g = DMatrix::zeros(n, m);
    for q in 0..m {
        g.set_column(q, &correlated(rng, config.ris_in_gain()));
    }
    let hsd = if config.budget.direct_link {
        DVector::from_vec(scaled_gaussian_vector(rng, m, config.direct_gain()))
    } else {
        DVector::zeros(m)
    };
    Ok((g, h2, hsd))
}

/// One multi-wave coefficient: `√gain · (Σ_l V_l e^{jθ_l} + Z)` with the
/// specular phases uniform on [0, 2π) and `Z` complex Gaussian of power
/// `omega0`.
fn generalized_coefficient<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &SpecularSpec,
    gain: f64,
) -> Complex64 {
    let mut sum = Complex64::new(0.0, 0.0);
    for l in 0..spec.num_waves {
        let amplitude = if l == 0 {
            spec.v1
        } else {
            spec.alpha * spec.v1
        };
        let theta = TAU * rng.gen::<f64>();
        sum += Complex64::from_polar(amplitude, theta);
    }
    let diffuse = standard_complex_gaussian_with(rng, 1)[0] * spec.omega0.sqrt();
    (sum + diffuse) * gain.sqrt()
}

fn draw_generalized_with(rng: &mut ChaCha8Rng, config: &ScenarioConfig) -> Result<LinkDraw> {
    let (spec_in, spec_out, spec_direct) = match &config.variant {
        FadingVariant::GeneralizedIid {
            spec_ris_in,
            spec_ris_out,
            spec_direct,
        } => (spec_ris_in, spec_ris_out, spec_direct),
        _ => {
            return Err(Error::Config(
                "draw_generalized_links requires the generalized-iid variant".into(),
            ))
        }
    };
    let n = config.geometry.n();
    let m = config.m_antennas;
    let out_gain = config.ris_out_gain();
    let in_gain = config.ris_in_gain();

    let h2 = DVector::from_iterator(
        n,
        (0..n).map(|_| generalized_coefficient(rng, spec_out, out_gain)),
    );
    let mut g = DMatrix::zeros(n, m);
    for q in 0..m {
        for i in 0..n {
            g[(i, q)] = generalized_coefficient(rng, spec_in, in_gain);
        }
    }
    let hsd = if config.budget.direct_link {
        let gain = config.direct_gain();
        DVector::from_iterator(
            m,
            (0..m).map(|_| generalized_coefficient(rng, spec_direct, gain)),
        )
    } else {
        DVector::zeros(m)
    };
    Ok((g, h2, hsd))
}

/// Draw one realization of all links under correlated Rayleigh fading.
pub fn draw_correlated_rayleigh_links(
    stream: &RngStream,
    config: &ScenarioConfig,
) -> Result<LinkDraw> {
    config.validate()?;
    if !matches!(config.variant, FadingVariant::CorrelatedRayleigh { .. }) {
        return Err(Error::Config(
            "draw_correlated_rayleigh_links requires the correlated-rayleigh variant".into(),
        ));
    }
    let correlation = correlation_matrix_for(config)?;
    draw_correlated_with(&mut stream.rng(), config, &correlation)
}

/// Draw one realization of all links under generalized i.i.d. fading.
pub fn draw_generalized_links(stream: &RngStream, config: &ScenarioConfig) -> Result<LinkDraw> {
    config.validate()?;
    draw_generalized_with(&mut stream.rng(), config)
}

fn phase_design_with(
    rng: &mut ChaCha8Rng,
    g: &DMatrix<Complex64>,
    h2: &DVector<Complex64>,
    hsd: &DVector<Complex64>,
    kappa: f64,
    reference_antenna: usize,
) -> Result<Vec<f64>> {
    let n = h2.len();
    // Cophasing target is 0 when the direct path is absent.
    let direct = hsd[reference_antenna];
    let direct_phase = if direct.norm_sqr() == 0.0 {
        0.0
    } else {
        direct.arg()
    };
    let mut phases = Vec::with_capacity(n);
    for i in 0..n {
        let residual = von_mises_with(rng, kappa)?;
        phases.push(direct_phase - g[(i, reference_antenna)].arg() - h2[i].arg() + residual);
    }
    Ok(phases)
}

/// RIS phase design against the reference antenna, with fresh Von Mises
/// residual errors: `φ_n = ∠h_sd^{q*} − ∠g_{q*n} − ∠h_{2n} + Θ_n`.
pub fn apply_phase_design(
    stream: &RngStream,
    g: &DMatrix<Complex64>,
    h2: &DVector<Complex64>,
    hsd: &DVector<Complex64>,
    kappa: f64,
    reference_antenna: usize,
) -> Result<Vec<f64>> {
    if reference_antenna >= g.ncols() || hsd.len() != g.ncols() || h2.len() != g.nrows() {
        return Err(Error::Domain(format!(
            "inconsistent phase-design dimensions: G is {}x{}, h2 {}, hsd {}, reference {}",
            g.nrows(),
            g.ncols(),
            h2.len(),
            hsd.len(),
            reference_antenna
        )));
    }
    phase_design_with(&mut stream.rng(), g, h2, hsd, kappa, reference_antenna)
}

/// Composite row vector `c = vᵀ diag(h2) G + h_sdᵀ` and its Euclidean norm.
fn composite_magnitude(
    g: &DMatrix<Complex64>,
    h2: &DVector<Complex64>,
    hsd: &DVector<Complex64>,
    phases: &[f64],
) -> f64 {
    let m = g.ncols();
    let n = g.nrows();
    let mut norm_sqr = 0.0;
    for q in 0..m {
        let mut c = hsd[q];
        let col = g.column(q);
        for i in 0..n {
            c += Complex64::from_polar(1.0, phases[i]) * h2[i] * col[i];
        }
        norm_sqr += c.norm_sqr();
    }
    norm_sqr.sqrt()
}

/// Fixed reference antenna for the phase design when `M > 1`; keeps runs
/// reproducible.
pub const REFERENCE_ANTENNA: usize = 0;

fn one_realization(
    stream: RngStream,
    config: &ScenarioConfig,
    correlation: Option<&CorrelationMatrix>,
) -> Result<f64> {
    let mut rng = stream.rng();
    let (g, h2, hsd) = match &config.variant {
        FadingVariant::CorrelatedRayleigh { .. } => draw_correlated_with(
            &mut rng,
            config,
            correlation.expect("correlation precomputed"),
        )?,
        FadingVariant::GeneralizedIid { .. } => draw_generalized_with(&mut rng, config)?,
    };
    let phases = phase_design_with(&mut rng, &g, &h2, &hsd, config.kappa, REFERENCE_ANTENNA)?;
    Ok(composite_magnitude(&g, &h2, &hsd, &phases))
}

/// Draw `sample_count` realizations of the equivalent magnitude channel.
///
/// Realization `i` owns the child stream `stream.child(i)`, so results are
/// bit-identical for any worker count and stored by realization index.
pub fn simulate_equivalent_channel(
    stream: &RngStream,
    config: &ScenarioConfig,
) -> Result<ChannelSampleSet> {
    config.validate()?;
    let correlation = match config.variant {
        FadingVariant::CorrelatedRayleigh { .. } => {
            let c = correlation_matrix_for(config)?;
            c.factor()?; // surface factorization failure before spawning work
            Some(c)
        }
        FadingVariant::GeneralizedIid { .. } => None,
    };
    let samples: Vec<f64> = (0..config.sample_count)
        .into_par_iter()
        .map(|i| one_realization(stream.child(i as u64), config, correlation.as_ref()))
        .collect::<Result<_>>()?;
    if let Some(bad) = samples.iter().find(|h| !h.is_finite() || **h < 0.0) {
        return Err(Error::Domain(format!(
            "simulation produced an invalid magnitude {bad}"
        )));
    }
    Ok(ChannelSampleSet {
        samples,
        config_digest: config.digest(),
        seed: *stream,
    })
}

/// Instantaneous SNR `γ = ρ h²` with `ρ` given in dB.
pub fn snr_from_magnitude(h: f64, rho_db: f64) -> f64 {
    db_to_linear(rho_db) * h * h
}
