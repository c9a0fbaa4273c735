//! Outage probability evaluation and goodness-of-fit metrics.
//!
//! Outage at a target rate `R_th` is the probability that
//! `log2(1 + ρ h²) < R_th`. The fitted-mixture expression, the Monte Carlo
//! estimate with Wilson confidence intervals, and a moment-matched Gamma
//! baseline all evaluate over a shared rate grid.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::channel::db_to_linear;
use crate::error::{Error, Result};
use crate::mixture::NakagamiMixture;

/// Evaluation route that produced a curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveMethod {
    MixtureAnalytic,
    MonteCarlo,
    GammaMom,
}

impl CurveMethod {
    pub fn label(&self) -> &'static str {
        match self {
            CurveMethod::MixtureAnalytic => "mixture-analytic",
            CurveMethod::MonteCarlo => "monte-carlo",
            CurveMethod::GammaMom => "gamma-mom",
        }
    }
}

/// Ordered `(R_th, OP)` pairs for one evaluation method. Confidence
/// half-widths are zero for analytic curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageCurve {
    pub method: CurveMethod,
    pub rate_grid: Vec<f64>,
    pub op_values: Vec<f64>,
    pub ci_halfwidths: Vec<f64>,
}

/// Domain in which NMSE compares outage curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NmseDomain {
    #[default]
    Linear,
    Log10,
}

/// Outage probability of the fitted mixture at rate threshold `r_th`:
/// the mixture CDF evaluated at `sqrt((2^{R_th} − 1)/ρ)`.
pub fn outage_analytic(mixture: &NakagamiMixture, rho_db: f64, r_th: f64) -> f64 {
    let rho = db_to_linear(rho_db);
    let mut op = 0.0;
    for c in mixture.components() {
        if c.weight > 0.0 {
            let arg = c.shape * ((2f64.powf(r_th) - 1.0) / rho) / c.spread;
            op += c.weight * gamma_lr(c.shape, arg);
        }
    }
    op
}

/// Analytic outage curve over a rate grid.
pub fn analytic_curve(mixture: &NakagamiMixture, rho_db: f64, rate_grid: &[f64]) -> OutageCurve {
    let op_values = rate_grid
        .iter()
        .map(|&r| outage_analytic(mixture, rho_db, r))
        .collect();
    OutageCurve {
        method: CurveMethod::MixtureAnalytic,
        rate_grid: rate_grid.to_vec(),
        op_values,
        ci_halfwidths: vec![0.0; rate_grid.len()],
    }
}

/// Two-sided 95% z value.
const Z_95: f64 = 1.959963984540054;
/// One-sided 95% z value, used for the zero-count bound.
const Z_95_ONE_SIDED: f64 = 1.6448536269514722;

/// Wilson score half-width for `successes` out of `n`. With zero successes
/// the one-sided upper bound is reported so log-scale plots stay meaningful.
fn wilson_halfwidth(successes: usize, n: usize) -> f64 {
    let nf = n as f64;
    if successes == 0 {
        let z2 = Z_95_ONE_SIDED * Z_95_ONE_SIDED;
        return z2 / (nf + z2);
    }
    let p = successes as f64 / nf;
    let z2 = Z_95 * Z_95;
    Z_95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / (1.0 + z2 / nf)
}

/// Empirical outage: the fraction of magnitudes whose instantaneous rate
/// falls below `r_th`, with a Wilson 95% half-width.
pub fn outage_empirical(samples: &[f64], rho_db: f64, r_th: f64) -> (f64, f64) {
    let rho = db_to_linear(rho_db);
    let n = samples.len();
    let below = samples
        .iter()
        .filter(|&&h| (1.0 + rho * h * h).log2() < r_th)
        .count();
    (below as f64 / n as f64, wilson_halfwidth(below, n))
}

/// Monte Carlo outage curve over an ascending rate grid.
pub fn empirical_curve(samples: &[f64], rho_db: f64, rate_grid: &[f64]) -> OutageCurve {
    debug_assert!(rate_grid.windows(2).all(|w| w[0] < w[1]));
    let rho = db_to_linear(rho_db);
    let n = samples.len();
    // One pass over the samples: rates are monotone in h, so count via the
    // per-sample rate against the sorted grid.
    let mut counts = vec![0usize; rate_grid.len()];
    for &h in samples {
        let rate = (1.0 + rho * h * h).log2();
        // First grid index whose threshold exceeds this rate.
        let idx = rate_grid.partition_point(|&r| r <= rate);
        if idx < rate_grid.len() {
            counts[idx] += 1;
        }
    }
    let mut cumulative = 0usize;
    let mut op_values = Vec::with_capacity(rate_grid.len());
    let mut ci = Vec::with_capacity(rate_grid.len());
    for &c in &counts {
        cumulative += c;
        op_values.push(cumulative as f64 / n as f64);
        ci.push(wilson_halfwidth(cumulative, n));
    }
    OutageCurve {
        method: CurveMethod::MonteCarlo,
        rate_grid: rate_grid.to_vec(),
        op_values,
        ci_halfwidths: ci,
    }
}

/// Normalized mean square error between two curves on a shared grid:
/// `1 − Σ(ref − cand)² / Σ(ref − mean(ref))²`. Ranges from −∞ (bad fit)
/// to 1 (perfect fit).
///
/// In the log10 domain, grid points where either curve is nonpositive are
/// dropped before comparison (an empirical zero carries no tail
/// information).
pub fn nmse(reference: &OutageCurve, candidate: &OutageCurve, domain: NmseDomain) -> Result<f64> {
    if reference.rate_grid != candidate.rate_grid {
        return Err(Error::Domain("NMSE requires identical rate grids".into()));
    }
    let pairs: Vec<(f64, f64)> = match domain {
        NmseDomain::Linear => reference
            .op_values
            .iter()
            .zip(&candidate.op_values)
            .map(|(&a, &b)| (a, b))
            .collect(),
        NmseDomain::Log10 => reference
            .op_values
            .iter()
            .zip(&candidate.op_values)
            .filter(|(&a, &b)| a > 0.0 && b > 0.0)
            .map(|(&a, &b)| (a.log10(), b.log10()))
            .collect(),
    };
    if pairs.len() < 2 {
        return Err(Error::Degenerate(
            "fewer than two comparable grid points for NMSE".into(),
        ));
    }
    let mean_ref: f64 = pairs.iter().map(|(a, _)| a).sum::<f64>() / pairs.len() as f64;
    let denom: f64 = pairs.iter().map(|(a, _)| (a - mean_ref).powi(2)).sum();
    if denom == 0.0 {
        return Err(Error::Degenerate(
            "constant reference curve: NMSE denominator is zero".into(),
        ));
    }
    let num: f64 = pairs.iter().map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - num / denom)
}

/// Moment-matched Gamma fit to the channel power `h²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaMomFit {
    pub shape: f64,
    pub scale: f64,
}

impl GammaMomFit {
    /// Outage from the Gamma power model: the regularized lower incomplete
    /// gamma at `(2^{R_th} − 1)/(ρ θ)`.
    pub fn outage(&self, rho_db: f64, r_th: f64) -> f64 {
        let rho = db_to_linear(rho_db);
        gamma_lr(self.shape, (2f64.powf(r_th) - 1.0) / (rho * self.scale))
    }
}

/// Match the first two moments of `h²`: shape `k = μ²/σ²`, scale `θ = σ²/μ`.
pub fn gamma_mom_fit(samples: &[f64]) -> Result<GammaMomFit> {
    if samples.len() < 2 {
        return Err(Error::Degenerate(
            "moment matching needs at least two samples".into(),
        ));
    }
    let n = samples.len() as f64;
    let mean: f64 = samples.iter().map(|h| h * h).sum::<f64>() / n;
    let var: f64 = samples
        .iter()
        .map(|h| {
            let d = h * h - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    if var <= 0.0 || mean <= 0.0 {
        return Err(Error::Degenerate(format!(
            "channel power has degenerate moments (mean {mean}, variance {var})"
        )));
    }
    Ok(GammaMomFit {
        shape: mean * mean / var,
        scale: var / mean,
    })
}

/// Gamma-baseline outage curve over a rate grid.
pub fn gamma_mom_curve(fit: &GammaMomFit, rho_db: f64, rate_grid: &[f64]) -> OutageCurve {
    let op_values = rate_grid.iter().map(|&r| fit.outage(rho_db, r)).collect();
    OutageCurve {
        method: CurveMethod::GammaMom,
        rate_grid: rate_grid.to_vec(),
        op_values,
        ci_halfwidths: vec![0.0; rate_grid.len()],
    }
}
