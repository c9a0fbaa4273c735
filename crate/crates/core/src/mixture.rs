//! Two-component Nakagami-m mixture fitting by expectation-maximization.
//!
//! The mixture density over magnitudes r > 0 is
//!
//! ```text
//!   f(r) = Σ_i ω_i · 2 m_i^{m_i} r^{2m_i−1} exp(−m_i r²/Ω_i) / (Γ(m_i) Ω_i^{m_i})
//! ```
//!
//! The E-step computes responsibilities in the log domain with log-sum-exp;
//! the M-step updates the spreads as responsibility-weighted second moments
//! and the shapes through the closed-form estimator
//! `m = (1 + sqrt(1 + 4Δ/3)) / (4Δ)` driven by the weighted log gap
//! `Δ = log Ω − mean(log r²)`. Initialization is the single-population MLE
//! with the spread perturbed ±10% to break symmetry.

use rand::Rng;
use rayon::prelude::*;
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::sampling::RngStream;

/// Nakagami validity floor for the shape parameter.
pub const SHAPE_MIN: f64 = 0.5;
/// Upper clamp preventing runaway concentration on near-constant clusters.
pub const SHAPE_MAX: f64 = 200.0;
/// Relative-tolerance stop threshold used by the experiment pipeline.
pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_MAX_ITER: usize = 500;

/// A component with responsibility mass below this fraction of the sample
/// count has collapsed.
const COLLAPSE_FRACTION: f64 = 1e-6;
/// Fixed reduction chunk so parallel sums are identical for any worker count.
const REDUCTION_CHUNK: usize = 8192;

const LN_2: f64 = std::f64::consts::LN_2;

/// One weighted Nakagami component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NakagamiComponent {
    pub weight: f64,
    pub shape: f64,
    pub spread: f64,
}

/// Exactly two Nakagami components with weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct NakagamiMixture {
    components: [NakagamiComponent; 2],
}

impl NakagamiMixture {
    pub fn new(first: NakagamiComponent, second: NakagamiComponent) -> Result<Self> {
        for (i, c) in [first, second].iter().enumerate() {
            if !c.weight.is_finite() || !(-1e-12..=1.0 + 1e-12).contains(&c.weight) {
                return Err(Error::Domain(format!(
                    "component {i} weight {} outside [0, 1]",
                    c.weight
                )));
            }
            if !c.shape.is_finite() || c.shape < SHAPE_MIN {
                return Err(Error::Domain(format!(
                    "component {i} shape {} below the Nakagami floor {SHAPE_MIN}",
                    c.shape
                )));
            }
            if !c.spread.is_finite() || c.spread <= 0.0 {
                return Err(Error::Domain(format!(
                    "component {i} spread {} must be positive",
                    c.spread
                )));
            }
        }
        if ((first.weight + second.weight) - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "mixture weights {} + {} do not sum to 1",
                first.weight, second.weight
            )));
        }
        Ok(Self {
            components: [first, second],
        })
    }

    pub fn components(&self) -> &[NakagamiComponent; 2] {
        &self.components
    }

    /// Canonical label order: ascending spread.
    pub fn sorted_by_spread(mut self) -> Self {
        if self.components[0].spread > self.components[1].spread {
            self.components.swap(0, 1);
        }
        self
    }

    /// Mixture density at `r` (zero for r ≤ 0 outside the m = 1/2 edge at 0).
    pub fn pdf(&self, r: f64) -> f64 {
        self.components
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| c.weight * log_component_pdf(r, c.shape, c.spread).exp())
            .sum()
    }

    /// Log of the mixture density, via log-sum-exp.
    pub fn log_pdf(&self, r: f64) -> f64 {
        let l0 = self.components[0].weight.ln()
            + log_component_pdf(r, self.components[0].shape, self.components[0].spread);
        let l1 = self.components[1].weight.ln()
            + log_component_pdf(r, self.components[1].shape, self.components[1].spread);
        log_sum_exp(l0, l1)
    }

    /// Mixture CDF through the regularized lower incomplete gamma function:
    /// `Σ_i ω_i P(m_i, m_i r²/Ω_i)`.
    pub fn cdf(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        self.components
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| c.weight * gamma_lr(c.shape, c.shape * r * r / c.spread))
            .sum()
    }
}

/// EM run summary: iteration count, the last relative parameter changes,
/// the per-iteration log-likelihood, and how many samples had zero density
/// under both components.
#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace {
    pub iterations: usize,
    pub spread_rel_change: [f64; 2],
    pub shape_rel_change: [f64; 2],
    pub log_likelihood_history: Vec<f64>,
    pub converged: bool,
    pub underflow_samples: usize,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let lo = a.min(b);
    hi + (lo - hi).exp().ln_1p()
}

/// Log of the Nakagami component density, finite-argument safe for large
/// shapes. Valid arguments assumed (m ≥ 1/2, Ω > 0, r ≥ 0).
fn log_component_pdf(r: f64, m: f64, omega: f64) -> f64 {
    if r < 0.0 {
        return f64::NEG_INFINITY;
    }
    let power_coef = 2.0 * m - 1.0;
    let radial = if power_coef == 0.0 {
        0.0
    } else if r == 0.0 {
        return f64::NEG_INFINITY;
    } else {
        power_coef * r.ln()
    };
    LN_2 + m * m.ln() - ln_gamma(m) - m * omega.ln() + radial - m * r * r / omega
}

/// Nakagami component density `2 m^m r^{2m−1} e^{−m r²/Ω} / (Γ(m) Ω^m)`,
/// evaluated in the log domain internally.
pub fn nakagami_component_pdf(r: f64, m: f64, omega: f64) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!(
            "magnitude must be positive, got {r}"
        )));
    }
    if !(m >= SHAPE_MIN) || !m.is_finite() {
        return Err(Error::Domain(format!(
            "shape must be at least 0.5, got {m}"
        )));
    }
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::Domain(format!(
            "spread must be positive, got {omega}"
        )));
    }
    Ok(log_component_pdf(r, m, omega).exp())
}

/// Closed-form shape update from the weighted log gap
/// `Δ = log Ω − mean(log r²)`, clamped to `[0.5, 200]`. Non-positive gaps
/// (numerically degenerate, nearly constant data) saturate at the upper
/// clamp.
pub fn shape_update(delta: f64) -> f64 {
    if !(delta > 0.0) {
        return SHAPE_MAX;
    }
    let raw = (1.0 + (1.0 + 4.0 * delta / 3.0).sqrt()) / (4.0 * delta);
    raw.clamp(SHAPE_MIN, SHAPE_MAX)
}

/// Weighted second-moment and log-moment accumulator shared by the MLE
/// initializer and the M-step, so unit responsibilities reproduce the MLE
/// bit for bit. Zero samples are excluded from the log average.
#[derive(Debug, Clone, Copy, Default)]
struct WeightedMoments {
    mass: f64,
    sum_sq: f64,
    log_mass: f64,
    sum_log_sq: f64,
}

impl WeightedMoments {
    fn push(&mut self, r: f64, weight: f64) {
        self.mass += weight;
        self.sum_sq += weight * r * r;
        if r > 0.0 {
            self.log_mass += weight;
            self.sum_log_sq += weight * (r * r).ln();
        }
    }

    fn merge(&mut self, other: &WeightedMoments) {
        self.mass += other.mass;
        self.sum_sq += other.sum_sq;
        self.log_mass += other.log_mass;
        self.sum_log_sq += other.sum_log_sq;
    }

    /// Spread, log gap, and shape from the accumulated sums.
    fn estimate(&self) -> Result<(f64, f64, f64)> {
        if self.log_mass <= 0.0 {
            return Err(Error::Degenerate(
                "no positive samples carry responsibility mass".into(),
            ));
        }
        let spread = self.sum_sq / self.mass;
        let delta = spread.ln() - self.sum_log_sq / self.log_mass;
        Ok((spread, delta, shape_update(delta)))
    }
}

fn validate_samples(samples: &[f64]) -> Result<()> {
    for &r in samples {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::Domain(format!(
                "samples must be finite and nonnegative, got {r}"
            )));
        }
    }
    Ok(())
}

/// Single-population Nakagami maximum-likelihood fit: spread is the sample
/// second moment, shape comes from the closed-form log-gap estimator.
pub fn mle_single(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 10 {
        return Err(Error::Degenerate(format!(
            "at least 10 samples required, got {}",
            samples.len()
        )));
    }
    validate_samples(samples)?;
    let (min, max) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
            (lo.min(r), hi.max(r))
        });
    if min == max {
        return Err(Error::Degenerate(
            "all samples equal: the shape estimator log gap is singular".into(),
        ));
    }
    let mut moments = WeightedMoments::default();
    for &r in samples {
        moments.push(r, 1.0);
    }
    let (spread, _, shape) = moments.estimate()?;
    Ok((shape, spread))
}

/// Starting mixture for EM: both components at the single-population MLE
/// with the spread split ±10% (identical components are a fixed point of
/// EM), and weights `(u, 1−u)` with `u` uniform on [0.2, 0.8].
pub fn mle_initialize(samples: &[f64], stream: &RngStream) -> Result<NakagamiMixture> {
    let (shape, spread) = mle_single(samples)?;
    let u = 0.2 + 0.6 * stream.rng().gen::<f64>();
    NakagamiMixture::new(
        NakagamiComponent {
            weight: u,
            shape,
            spread: 0.9 * spread,
        },
        NakagamiComponent {
            weight: 1.0 - u,
            shape,
            spread: 1.1 * spread,
        },
    )
}

/// Responsibilities `τ_ij = ω_i φ_i(r_j) / Σ_l ω_l φ_l(r_j)`, one `[τ_1j,
/// τ_2j]` row per sample, with the count of samples whose density underflowed
/// under both components (those get an uninformative 1/2, 1/2 split).
pub fn e_step(samples: &[f64], mixture: &NakagamiMixture) -> Result<(Vec<[f64; 2]>, usize)> {
    if samples.is_empty() {
        return Err(Error::Domain("e_step needs at least one sample".into()));
    }
    validate_samples(samples)?;
    let [c0, c1] = mixture.components();
    let mut underflow = 0usize;
    let tau = samples
        .iter()
        .map(|&r| {
            let l0 = c0.weight.ln() + log_component_pdf(r, c0.shape, c0.spread);
            let l1 = c1.weight.ln() + log_component_pdf(r, c1.shape, c1.spread);
            if l0 == f64::NEG_INFINITY && l1 == f64::NEG_INFINITY {
                underflow += 1;
                return [0.5, 0.5];
            }
            let lse = log_sum_exp(l0, l1);
            [(l0 - lse).exp(), (l1 - lse).exp()]
        })
        .collect();
    Ok((tau, underflow))
}

/// One maximization step from explicit responsibilities.
pub fn m_step(samples: &[f64], responsibilities: &[[f64; 2]]) -> Result<NakagamiMixture> {
    let t = samples.len();
    if responsibilities.len() != t || t == 0 {
        return Err(Error::Domain(format!(
            "{} responsibility rows for {} samples",
            responsibilities.len(),
            t
        )));
    }
    validate_samples(samples)?;
    let mut moments = [WeightedMoments::default(), WeightedMoments::default()];
    for (j, &r) in samples.iter().enumerate() {
        let [t0, t1] = responsibilities[j];
        if t0 < 0.0 || t1 < 0.0 || ((t0 + t1) - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "responsibility column {j} = ({t0}, {t1}) does not sum to 1"
            )));
        }
        moments[0].push(r, t0);
        moments[1].push(r, t1);
    }
    finish_m_step(t, &moments, None)
}

fn finish_m_step(
    t: usize,
    moments: &[WeightedMoments; 2],
    trace: Option<&EmTrace>,
) -> Result<NakagamiMixture> {
    let floor = COLLAPSE_FRACTION * t as f64;
    for (i, m) in moments.iter().enumerate() {
        if m.mass < floor {
            return Err(Error::ComponentCollapse {
                component: i,
                trace: trace.map(|tr| Box::new(tr.clone())),
            });
        }
    }
    let (spread0, _, shape0) = moments[0].estimate()?;
    let (spread1, _, shape1) = moments[1].estimate()?;
    NakagamiMixture::new(
        NakagamiComponent {
            weight: moments[0].mass / t as f64,
            shape: shape0,
            spread: spread0,
        },
        NakagamiComponent {
            weight: moments[1].mass / t as f64,
            shape: shape1,
            spread: spread1,
        },
    )
}

/// Sum of log mixture densities; −∞ if any sample has zero density under
/// both components.
pub fn log_likelihood(mixture: &NakagamiMixture, samples: &[f64]) -> f64 {
    samples.iter().map(|&r| mixture.log_pdf(r)).sum()
}

/// Per-chunk reduction state of the fused E-step.
#[derive(Debug, Clone, Copy, Default)]
struct EStepSums {
    log_likelihood: f64,
    underflow: usize,
    moments: [WeightedMoments; 2],
}

struct Prepared {
    sq: Vec<f64>,
    log_sq: Vec<f64>,
}

/// Fused E-step over precomputed powers: accumulates the responsibilities
/// directly into weighted moments. Chunked so parallel execution reproduces
/// the sequential result exactly.
fn e_step_reduce(prepared: &Prepared, mixture: &NakagamiMixture) -> EStepSums {
    let [c0, c1] = *mixture.components();
    // l_i = base_i + (m_i − 1/2)·log r² − (m_i/Ω_i)·r²
    let base = |c: &NakagamiComponent| {
        c.weight.ln() + LN_2 + c.shape * c.shape.ln() - ln_gamma(c.shape) - c.shape * c.spread.ln()
    };
    let (b0, b1) = (base(&c0), base(&c1));
    let (p0, p1) = (c0.shape - 0.5, c1.shape - 0.5);
    let (q0, q1) = (c0.shape / c0.spread, c1.shape / c1.spread);

    let log_density = |b: f64, p: f64, q: f64, sq: f64, log_sq: f64| -> f64 {
        let radial = if p == 0.0 {
            0.0
        } else if log_sq == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        } else {
            p * log_sq
        };
        b + radial - q * sq
    };

    let partials: Vec<EStepSums> = prepared
        .sq
        .par_chunks(REDUCTION_CHUNK)
        .zip(prepared.log_sq.par_chunks(REDUCTION_CHUNK))
        .map(|(sq_chunk, log_chunk)| {
            let mut sums = EStepSums::default();
            for (&sq, &log_sq) in sq_chunk.iter().zip(log_chunk) {
                let l0 = log_density(b0, p0, q0, sq, log_sq);
                let l1 = log_density(b1, p1, q1, sq, log_sq);
                let (t0, t1) = if l0 == f64::NEG_INFINITY && l1 == f64::NEG_INFINITY {
                    sums.underflow += 1;
                    sums.log_likelihood = f64::NEG_INFINITY;
                    (0.5, 0.5)
                } else {
                    let lse = log_sum_exp(l0, l1);
                    sums.log_likelihood += lse;
                    ((l0 - lse).exp(), (l1 - lse).exp())
                };
                let r = sq.sqrt();
                sums.moments[0].push(r, t0);
                sums.moments[1].push(r, t1);
            }
            sums
        })
        .collect();

    partials
        .into_iter()
        .fold(EStepSums::default(), |mut acc, s| {
            acc.log_likelihood += s.log_likelihood;
            acc.underflow += s.underflow;
            acc.moments[0].merge(&s.moments[0]);
            acc.moments[1].merge(&s.moments[1]);
            acc
        })
}

/// Fit the two-component mixture by EM.
///
/// Alternates E- and M-steps from the MLE initialization until the relative
/// changes of both spreads and both shapes all drop below `epsilon`. If
/// `max_iter` is reached first, the iterate with the highest log-likelihood
/// is returned flagged `converged = false` (the closed-form shape update is
/// approximate, so late iterates are not always the best ones). Samples are
/// sorted internally, which makes the result exactly invariant to input
/// permutation and to the worker count. Components of the returned mixture
/// are ordered by ascending spread.
pub fn fit(
    samples: &[f64],
    stream: &RngStream,
    epsilon: f64,
    max_iter: usize,
) -> Result<(NakagamiMixture, EmTrace)> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Domain(format!(
            "stop tolerance must be positive, got {epsilon}"
        )));
    }
    validate_samples(samples)?;
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);

    let init = mle_initialize(&sorted, stream)?;
    let prepared = Prepared {
        sq: sorted.iter().map(|r| r * r).collect(),
        log_sq: sorted
            .iter()
            .map(|&r| {
                if r > 0.0 {
                    (r * r).ln()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect(),
    };

    let t = sorted.len();
    let mut mixture = init;
    let mut trace = EmTrace {
        iterations: 0,
        spread_rel_change: [f64::INFINITY; 2],
        shape_rel_change: [f64::INFINITY; 2],
        log_likelihood_history: Vec::new(),
        converged: false,
        underflow_samples: 0,
    };
    let mut best: Option<(f64, NakagamiMixture)> = None;

    for _ in 0..max_iter {
        let sums = e_step_reduce(&prepared, &mixture);
        trace.log_likelihood_history.push(sums.log_likelihood);
        trace.underflow_samples = sums.underflow;
        if best
            .as_ref()
            .is_none_or(|(ll, _)| sums.log_likelihood > *ll)
        {
            best = Some((sums.log_likelihood, mixture.clone()));
        }

        let updated = finish_m_step(t, &sums.moments, Some(&trace))?;
        for i in 0..2 {
            let old = mixture.components()[i];
            let new = updated.components()[i];
            trace.spread_rel_change[i] = ((new.spread - old.spread) / old.spread).abs();
            trace.shape_rel_change[i] = ((new.shape - old.shape) / old.shape).abs();
        }
        mixture = updated;
        trace.iterations += 1;

        let settled = trace
            .spread_rel_change
            .iter()
            .chain(trace.shape_rel_change.iter())
            .all(|chg| *chg < epsilon);
        if settled {
            trace.converged = true;
            break;
        }
    }

    if !trace.converged {
        let final_ll = e_step_reduce(&prepared, &mixture).log_likelihood;
        if let Some((best_ll, best_mixture)) = best {
            if best_ll > final_ll {
                mixture = best_mixture;
            }
        }
    }

    // Canonical component order; keep the trace columns aligned.
    if mixture.components()[0].spread > mixture.components()[1].spread {
        trace.spread_rel_change.swap(0, 1);
        trace.shape_rel_change.swap(0, 1);
    }
    Ok((mixture.sorted_by_spread(), trace))
}

/// Mixture CDF at magnitude `r` (free-function form of [`NakagamiMixture::cdf`]).
pub fn mixture_cdf(mixture: &NakagamiMixture, r: f64) -> f64 {
    mixture.cdf(r)
}
