//! Experiment front-end: named presets, the simulate→fit→evaluate pipeline,
//! and report serialization (JSON report plus one CSV per curve).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    analytic_curve, empirical_curve, gamma_mom_curve, gamma_mom_fit, nmse, NmseDomain, OutageCurve,
};
use crate::channel::{
    simulate_equivalent_channel, FadingVariant, LinkBudget, RisGeometry, ScenarioConfig,
    SpecularSpec,
};
use crate::error::{Error, Result};
use crate::mixture::{fit, EmTrace, NakagamiMixture, DEFAULT_EPSILON, DEFAULT_MAX_ITER};
use crate::sampling::RngStream;

/// Carrier wavelength shared by every preset (3 GHz carrier), meters.
const PRESET_WAVELENGTH: f64 = 0.1;
/// SNR budget shared by every preset, dB.
const PRESET_SNR_DB: f64 = 124.0;
/// Training-set size shared by every preset.
const PRESET_SAMPLES: usize = 100_000;

/// Environment variable capping the worker count (0 = automatic).
pub const THREADS_ENV: &str = "RIS_EM_THREADS";

/// Optional reference curves beside the Monte Carlo and mixture ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    GammaMom,
}

/// A fully resolved experiment: scenario, evaluation grid, seed, optional
/// preset pedigree, requested baselines, and the NMSE comparison domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: ScenarioConfig,
    pub rate_grid: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub preset_name: Option<String>,
    #[serde(default)]
    pub baselines: Vec<Baseline>,
    #[serde(default)]
    pub nmse_domain: NmseDomain,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.rate_grid.is_empty() {
            return Err(Error::Config("rate_grid must not be empty".into()));
        }
        let mut previous = 0.0;
        for &r in &self.rate_grid {
            if !r.is_finite() || r <= previous {
                return Err(Error::Config(format!(
                    "rate_grid must be strictly increasing and positive (offending value {r})"
                )));
            }
            previous = r;
        }
        if let Some(name) = &self.preset_name {
            let base = preset(name)?;
            let mut expected = base.scenario;
            // Execution-scale knob, always free.
            expected.sample_count = self.scenario.sample_count;
            // The antenna count is the one permitted physical override, and
            // only where the source figure varies it.
            if name.starts_with("fig1a") {
                expected.m_antennas = self.scenario.m_antennas;
            }
            if expected != self.scenario {
                return Err(Error::Config(format!(
                    "scenario deviates from preset '{name}'; presets fix all scenario \
                     parameters (only sample count{} may be overridden)",
                    if name.starts_with("fig1a") {
                        " and the fig1a antenna count"
                    } else {
                        ""
                    }
                )));
            }
        }
        Ok(())
    }
}

/// Default evaluation grid: 50 geometrically spaced thresholds covering
/// 0.05 to 10 b/s/Hz, which spans the plotted outage range.
pub fn default_rate_grid() -> Vec<f64> {
    let (lo, hi, count) = (0.05f64, 10.0f64, 50);
    let ratio = (hi / lo).powf(1.0 / (count - 1) as f64);
    let mut grid: Vec<f64> = (0..count).map(|k| lo * ratio.powi(k as i32)).collect();
    grid[count - 1] = hi;
    grid
}

fn square_geometry(side: usize, spacing: f64) -> RisGeometry {
    RisGeometry::square(side, spacing, PRESET_WAVELENGTH)
}

/// Budget whose effective per-element product `A·β` equals `effective_db`
/// for both RIS links.
fn budget_from_effective(
    geometry: &RisGeometry,
    effective_db: f64,
    beta_sd_db: f64,
    direct: bool,
) -> LinkBudget {
    let area_db = 10.0 * geometry.element_area().log10();
    LinkBudget {
        beta1_db: effective_db - area_db,
        beta2_db: effective_db - area_db,
        beta_sd_db,
        direct_link: direct,
    }
}

fn correlated_scenario(
    side: usize,
    spacing: f64,
    kappa: f64,
    beta_sd_db: f64,
    direct: bool,
    iid_reference: bool,
) -> ScenarioConfig {
    let geometry = square_geometry(side, spacing);
    ScenarioConfig {
        budget: budget_from_effective(&geometry, -75.0, beta_sd_db, direct),
        geometry,
        m_antennas: 1,
        kappa,
        variant: FadingVariant::CorrelatedRayleigh { iid_reference },
        snr_budget_db: PRESET_SNR_DB,
        sample_count: PRESET_SAMPLES,
    }
}

fn two_wave_spec() -> SpecularSpec {
    SpecularSpec {
        num_waves: 2,
        v1: 1.0,
        alpha: 0.5,
        omega0: 1.0,
    }
}

fn generalized_scenario(side: usize, direct: bool) -> ScenarioConfig {
    ScenarioConfig {
        geometry: square_geometry(side, PRESET_WAVELENGTH / 2.0),
        budget: LinkBudget {
            beta1_db: -55.0,
            beta2_db: -55.0,
            beta_sd_db: -135.0,
            direct_link: direct,
        },
        m_antennas: 1,
        kappa: 1.0,
        variant: FadingVariant::GeneralizedIid {
            spec_ris_in: two_wave_spec(),
            spec_ris_out: two_wave_spec(),
            spec_direct: if direct {
                SpecularSpec::rician_from_k_db(5.0, 1.0)
            } else {
                SpecularSpec::rayleigh(1.0)
            },
        },
        snr_budget_db: PRESET_SNR_DB,
        sample_count: PRESET_SAMPLES,
    }
}

const PRESET_NAMES: &[&str] = &[
    "fig1a-N36",
    "fig1a-N144",
    "fig1b-N36",
    "fig1b-N100",
    "fig1b-N256",
    "fig1b-N36-iid",
    "fig1b-N100-iid",
    "fig1b-N256-iid",
    "fig1c-lambda4",
    "fig1c-lambda8",
    "fig1c-lambda12",
    "fig1c-iid",
    "fig2a-N49",
    "fig2a-N100",
    "fig2a-N196",
    "fig2b-N49",
    "fig2b-N100",
    "fig2b-N196",
];

/// Names of all available presets.
pub fn list_presets() -> Vec<&'static str> {
    PRESET_NAMES.to_vec()
}

/// Resolve a named preset into a full experiment spec (seed 0).
///
/// Correlated-Rayleigh presets pin the effective per-element product
/// `A·β₁ = A·β₂` to −75 dB at eighth-wavelength spacing (quarter and twelfth
/// variants keep the product fixed while the correlation changes).
/// Generalized presets use two-wave fading with a unit diffuse floor at
/// half-wavelength spacing and raw path losses of −55 dB.
pub fn preset(name: &str) -> Result<ExperimentSpec> {
    let eighth = PRESET_WAVELENGTH / 8.0;
    let scenario = match name {
        "fig1a-N36" => correlated_scenario(6, eighth, 1.0, -130.0, false, false),
        "fig1a-N144" => correlated_scenario(12, eighth, 1.0, -130.0, false, false),
        "fig1b-N36" => correlated_scenario(6, eighth, 1.0, -130.0, false, false),
        "fig1b-N100" => correlated_scenario(10, eighth, 1.0, -130.0, false, false),
        "fig1b-N256" => correlated_scenario(16, eighth, 1.0, -130.0, false, false),
        "fig1b-N36-iid" => correlated_scenario(6, eighth, 1.0, -130.0, false, true),
        "fig1b-N100-iid" => correlated_scenario(10, eighth, 1.0, -130.0, false, true),
        "fig1b-N256-iid" => correlated_scenario(16, eighth, 1.0, -130.0, false, true),
        "fig1c-lambda4" => {
            correlated_scenario(10, PRESET_WAVELENGTH / 4.0, 3.0, -130.0, true, false)
        }
        "fig1c-lambda8" => correlated_scenario(10, eighth, 3.0, -130.0, true, false),
        "fig1c-lambda12" => {
            correlated_scenario(10, PRESET_WAVELENGTH / 12.0, 3.0, -130.0, true, false)
        }
        "fig1c-iid" => correlated_scenario(10, eighth, 3.0, -130.0, true, true),
        "fig2a-N49" => generalized_scenario(7, false),
        "fig2a-N100" => generalized_scenario(10, false),
        "fig2a-N196" => generalized_scenario(14, false),
        "fig2b-N49" => generalized_scenario(7, true),
        "fig2b-N100" => generalized_scenario(10, true),
        "fig2b-N196" => generalized_scenario(14, true),
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}'; see list-presets"
            )))
        }
    };
    Ok(ExperimentSpec {
        scenario,
        rate_grid: default_rate_grid(),
        seed: 0,
        preset_name: Some(name.to_string()),
        baselines: vec![Baseline::GammaMom],
        nmse_domain: NmseDomain::Linear,
    })
}

/// Flat serialized form of a fitted mixture plus run flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedRecord {
    pub omega1: f64,
    pub m1: f64,
    #[serde(rename = "Omega1")]
    pub spread1: f64,
    pub omega2: f64,
    pub m2: f64,
    #[serde(rename = "Omega2")]
    pub spread2: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FittedRecord {
    pub fn from_fit(mixture: &NakagamiMixture, trace: &EmTrace) -> Self {
        let [c1, c2] = *mixture.components();
        Self {
            omega1: c1.weight,
            m1: c1.shape,
            spread1: c1.spread,
            omega2: c2.weight,
            m2: c2.shape,
            spread2: c2.spread,
            iterations: trace.iterations,
            converged: trace.converged,
        }
    }

    /// Rebuild the mixture from the flat record.
    pub fn mixture(&self) -> Result<NakagamiMixture> {
        NakagamiMixture::new(
            crate::mixture::NakagamiComponent {
                weight: self.omega1,
                shape: self.m1,
                spread: self.spread1,
            },
            crate::mixture::NakagamiComponent {
                weight: self.omega2,
                shape: self.m2,
                spread: self.spread2,
            },
        )
    }
}

/// Wall-clock cost per pipeline stage. Not serialized: reports must be
/// byte-identical across repeated runs of the same spec and seed.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTiming {
    pub simulate: Duration,
    pub fit: Duration,
    pub evaluate: Duration,
}

impl StageTiming {
    pub fn total(&self) -> Duration {
        self.simulate + self.fit + self.evaluate
    }
}

/// Full result of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub preset_name: Option<String>,
    pub fitted: FittedRecord,
    pub curves: Vec<OutageCurve>,
    pub nmse_table: BTreeMap<String, f64>,
    #[serde(skip)]
    pub timing: StageTiming,
    pub config_echo: ExperimentSpec,
}

impl ExperimentReport {
    pub fn curve(&self, method: crate::analysis::CurveMethod) -> Option<&OutageCurve> {
        self.curves.iter().find(|c| c.method == method)
    }
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let requested = match std::env::var(THREADS_ENV) {
        Ok(value) => value.parse::<usize>().map_err(|_| {
            Error::Config(format!(
                "{THREADS_ENV} must be a nonnegative integer, got '{value}'"
            ))
        })?,
        Err(_) => 0,
    };
    let threads = if requested == 0 {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    } else {
        requested
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Run the simulate → fit → evaluate pipeline. Deterministic given the
/// spec and its seed, for any worker count.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let pool = worker_pool()?;
    pool.install(|| run_pipeline(spec))
}

fn run_pipeline(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let mut timing = StageTiming::default();

    let start = Instant::now();
    let sample_set = simulate_equivalent_channel(&RngStream::new(spec.seed, 0), &spec.scenario)?;
    timing.simulate = start.elapsed();

    let start = Instant::now();
    let (mixture, trace) = fit(
        &sample_set.samples,
        &RngStream::new(spec.seed, 1),
        DEFAULT_EPSILON,
        DEFAULT_MAX_ITER,
    )?;
    timing.fit = start.elapsed();

    let start = Instant::now();
    let rho_db = spec.scenario.snr_budget_db;
    let reference = empirical_curve(&sample_set.samples, rho_db, &spec.rate_grid);
    let mut curves = vec![
        reference.clone(),
        analytic_curve(&mixture, rho_db, &spec.rate_grid),
    ];
    for baseline in &spec.baselines {
        match baseline {
            Baseline::GammaMom => {
                let gamma = gamma_mom_fit(&sample_set.samples)?;
                curves.push(gamma_mom_curve(&gamma, rho_db, &spec.rate_grid));
            }
        }
    }
    let mut nmse_table = BTreeMap::new();
    for curve in curves.iter().skip(1) {
        nmse_table.insert(
            curve.method.label().to_string(),
            nmse(&reference, curve, spec.nmse_domain)?,
        );
    }
    timing.evaluate = start.elapsed();

    Ok(ExperimentReport {
        preset_name: spec.preset_name.clone(),
        fitted: FittedRecord::from_fit(&mixture, &trace),
        curves,
        nmse_table,
        timing,
        config_echo: spec.clone(),
    })
}

/// Write `report.json` plus one `curve-<method>.csv` per curve into `dir`.
/// Returns the paths written.
pub fn write_report(dir: &Path, report: &ExperimentReport) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let report_path = dir.join("report.json");
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    std::fs::write(&report_path, json)?;
    written.push(report_path);

    for curve in &report.curves {
        let path = dir.join(format!("curve-{}.csv", curve.method.label()));
        let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(file, "r_th,op,ci_halfwidth,method")?;
        for k in 0..curve.rate_grid.len() {
            writeln!(
                file,
                "{},{},{},{}",
                curve.rate_grid[k],
                curve.op_values[k],
                curve.ci_halfwidths[k],
                curve.method.label()
            )?;
        }
        file.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// Parse an experiment spec from a JSON config file; unknown keys are
/// rejected.
pub fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path)?;
    let spec: ExperimentSpec = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(spec)
}
