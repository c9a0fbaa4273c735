//! Acceptance suite: every release criterion runs at its stated tolerance
//! and prints one PASS/FAIL line (run with `--nocapture` to see them all).

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use risfit::analysis::{
    analytic_curve, empirical_curve, gamma_mom_curve, gamma_mom_fit, nmse, outage_analytic,
    NmseDomain, OutageCurve,
};
use risfit::channel::{build_correlation_matrix, simulate_equivalent_channel, RisGeometry};
use risfit::experiments::preset;
use risfit::mixture::{
    e_step, fit, shape_update, EmTrace, NakagamiComponent, NakagamiMixture, DEFAULT_EPSILON,
    DEFAULT_MAX_ITER,
};
use risfit::sampling::{sample_von_mises, RngStream};

// ---------------------------------------------------------------------------
// Shared preset pipeline cache
// ---------------------------------------------------------------------------

struct PresetRun {
    samples: Vec<f64>,
    mixture: NakagamiMixture,
    trace: EmTrace,
    monte_carlo: OutageCurve,
    analytic: OutageCurve,
    gamma: OutageCurve,
    nmse_mixture: f64,
    nmse_gamma: f64,
    rho_db: f64,
    runtime_seconds: f64,
}

fn preset_run(key: &str) -> Arc<PresetRun> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<PresetRun>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    if let Some(run) = guard.get(key) {
        return Arc::clone(run);
    }

    let (name, antennas) = match key.split_once('+') {
        Some((name, m)) => (name, m.trim_start_matches('M').parse::<usize>().unwrap()),
        None => (key, 0),
    };
    let mut spec = preset(name).expect("preset exists");
    if antennas > 0 {
        spec.scenario.m_antennas = antennas;
    }
    spec.validate().expect("preset spec valid");

    let start = Instant::now();
    let sim = simulate_equivalent_channel(&RngStream::new(spec.seed, 0), &spec.scenario)
        .expect("simulation");
    let (mixture, trace) = fit(
        &sim.samples,
        &RngStream::new(spec.seed, 1),
        DEFAULT_EPSILON,
        DEFAULT_MAX_ITER,
    )
    .expect("fit");
    let rho_db = spec.scenario.snr_budget_db;
    let monte_carlo = empirical_curve(&sim.samples, rho_db, &spec.rate_grid);
    let analytic = analytic_curve(&mixture, rho_db, &spec.rate_grid);
    let gamma = gamma_mom_curve(
        &gamma_mom_fit(&sim.samples).expect("gamma fit"),
        rho_db,
        &spec.rate_grid,
    );
    let nmse_mixture = nmse(&monte_carlo, &analytic, NmseDomain::Linear).expect("nmse");
    let nmse_gamma = nmse(&monte_carlo, &gamma, NmseDomain::Linear).expect("nmse");
    let runtime_seconds = start.elapsed().as_secs_f64();

    let run = Arc::new(PresetRun {
        samples: sim.samples,
        mixture,
        trace,
        monte_carlo,
        analytic,
        gamma,
        nmse_mixture,
        nmse_gamma,
        rho_db,
        runtime_seconds,
    });
    guard.insert(key.to_string(), Arc::clone(&run));
    run
}

fn verdict(number: usize, label: &str, pass: bool, detail: &str) {
    println!(
        "criterion {number} ({label}): {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

// ---------------------------------------------------------------------------
// Test-local oracles
// ---------------------------------------------------------------------------

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, fa, m, fm, flm, left, tol / 2.0, depth - 1)
                + recurse(f, m, fm, b, fb, frm, right, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    recurse(f, a, fa, b, fb, fm, simpson(a, fa, b, fb, fm), tol, depth)
}

/// Panel-composed adaptive quadrature: concentrated mixture components are
/// far narrower than the integration interval, so pre-subdivide before the
/// adaptive refinement gets to decide anything.
fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let panels = 128;
    let width = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let lo = a + k as f64 * width;
            adaptive_simpson(f, lo, lo + width, tol / panels as f64, 24)
        })
        .sum()
}

/// I1(κ)/I0(κ) by power series.
fn bessel_ratio(kappa: f64) -> f64 {
    let q = kappa * kappa / 4.0;
    let mut i0 = 1.0;
    let mut i1 = 0.5 * kappa;
    let mut t0 = 1.0;
    let mut t1 = 0.5 * kappa;
    for k in 1..300 {
        let kf = k as f64;
        t0 *= q / (kf * kf);
        t1 *= q / (kf * (kf + 1.0));
        i0 += t0;
        i1 += t1;
        if t0 < 1e-18 * i0 {
            break;
        }
    }
    i1 / i0
}

/// Weighted Nakagami log-likelihood in the shape parameter with the spread
/// at its conditional maximizer.
struct WeightedShapeObjective {
    weights: Vec<f64>,
    log_r: Vec<f64>,
    sq_over_spread: Vec<f64>,
    spread: f64,
}

impl WeightedShapeObjective {
    fn new(radii: &[f64], weights: &[f64]) -> Self {
        let mass: f64 = weights.iter().sum();
        let spread = radii
            .iter()
            .zip(weights)
            .map(|(r, w)| w * r * r)
            .sum::<f64>()
            / mass;
        Self {
            weights: weights.to_vec(),
            log_r: radii.iter().map(|r| r.ln()).collect(),
            sq_over_spread: radii.iter().map(|r| r * r / spread).collect(),
            spread,
        }
    }

    fn log_gap(&self) -> f64 {
        let mass: f64 = self.weights.iter().sum();
        let mean_log_sq = self
            .weights
            .iter()
            .zip(&self.log_r)
            .map(|(w, lr)| w * 2.0 * lr)
            .sum::<f64>()
            / mass;
        self.spread.ln() - mean_log_sq
    }

    fn eval(&self, m: f64) -> f64 {
        use statrs::function::gamma::ln_gamma;
        let base = std::f64::consts::LN_2 + m * m.ln() - ln_gamma(m) - m * self.spread.ln();
        self.weights
            .iter()
            .zip(&self.log_r)
            .zip(&self.sq_over_spread)
            .map(|((w, lr), q)| w * (base + (2.0 * m - 1.0) * lr - m * q))
            .sum()
    }

    /// Golden-section maximization over the Nakagami-valid shape range,
    /// searched in log-space.
    fn golden_section_argmax(&self) -> f64 {
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (0.5f64.ln(), 200f64.ln());
        let mut x1 = hi - phi * (hi - lo);
        let mut x2 = lo + phi * (hi - lo);
        let mut f1 = self.eval(x1.exp());
        let mut f2 = self.eval(x2.exp());
        for _ in 0..200 {
            if f1 < f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + phi * (hi - lo);
                f2 = self.eval(x2.exp());
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - phi * (hi - lo);
                f1 = self.eval(x1.exp());
            }
        }
        (0.5 * (lo + hi)).exp()
    }
}

/// Fixed synthetic radii/weights whose weighted log gap hits `target` by
/// bisection over a lognormal width.
fn dataset_with_log_gap(target: f64) -> (Vec<f64>, Vec<f64>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4242);
    let normals: Vec<f64> = (0..400)
        .map(|_| {
            let u1: f64 = rng.gen::<f64>().max(1e-12);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect();
    let weights: Vec<f64> = (0..400).map(|_| 0.5 + rng.gen::<f64>()).collect();
    let gap_at = |sigma: f64| -> f64 {
        let radii: Vec<f64> = normals.iter().map(|z| (sigma * z).exp()).collect();
        WeightedShapeObjective::new(&radii, &weights).log_gap()
    };
    let (mut lo, mut hi) = (1e-6, 6.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sigma = 0.5 * (lo + hi);
    (normals.iter().map(|z| (sigma * z).exp()).collect(), weights)
}

fn comparable_points(a: &OutageCurve, b: &OutageCurve, floor: f64, ceiling: f64) -> Vec<usize> {
    (0..a.rate_grid.len())
        .filter(|&k| {
            let (x, y) = (a.op_values[k], b.op_values[k]);
            x >= floor && y >= floor && x <= ceiling && y <= ceiling
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

const TABLE_ONE_PRESETS: [&str; 6] = [
    "fig1b-N36",
    "fig1b-N100",
    "fig1b-N256",
    "fig2a-N49",
    "fig2a-N100",
    "fig2a-N196",
];

#[test]
fn criterion_1_table_one_reproduction() {
    let mut failures = Vec::new();
    let mut details = Vec::new();
    for name in TABLE_ONE_PRESETS {
        let run = preset_run(name);
        details.push(format!(
            "{name}: nmse {:.4} in {:.1}s",
            run.nmse_mixture, run.runtime_seconds
        ));
        if run.nmse_mixture < 0.98 {
            failures.push(format!("{name} nmse {:.4} < 0.98", run.nmse_mixture));
        }
        if run.runtime_seconds > 60.0 {
            failures.push(format!("{name} runtime {:.1}s > 60s", run.runtime_seconds));
        }
    }
    verdict(
        1,
        "Table-1 NMSE >= 0.98 within 60s per preset",
        failures.is_empty(),
        &details.join("; "),
    );
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn criterion_2_baseline_ordering() {
    let run = preset_run("fig1b-N256");
    let pass = run.nmse_gamma < run.nmse_mixture;
    verdict(
        2,
        "moment-matched Gamma NMSE below mixture NMSE at N=256",
        pass,
        &format!(
            "gamma {:.6} vs mixture {:.6} (margin {:.2e})",
            run.nmse_gamma,
            run.nmse_mixture,
            run.nmse_mixture - run.nmse_gamma
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_figure_two_point_check() {
    let without_direct = preset_run("fig2a-N196");
    let with_direct = preset_run("fig2b-N196");
    let op_without = outage_analytic(&without_direct.mixture, without_direct.rho_db, 0.4);
    let op_with = outage_analytic(&with_direct.mixture, with_direct.rho_db, 0.4);

    // Qualitative direction: adding the direct path cannot worsen outage.
    let direction_ok = op_with <= op_without;

    // Quoted values, matched as an unordered pair within a factor of 3.
    let targets = [1.3e-4, 3.9e-5];
    let within = |value: f64, target: f64| value >= target / 3.0 && value <= target * 3.0;
    let pair_ok = (within(op_without, targets[0]) && within(op_with, targets[1]))
        || (within(op_without, targets[1]) && within(op_with, targets[0]));

    verdict(
        3,
        "outage pair at R_th = 0.4 matches {1.3e-4, 3.9e-5} within x3",
        pair_ok && direction_ok,
        &format!(
            "without direct {op_without:.3e}, with direct {op_with:.3e}, direction ok: {direction_ok}"
        ),
    );
    assert!(
        pair_ok && direction_ok,
        "without {op_without:.3e} / with {op_with:.3e} vs pair {{1.3e-4, 3.9e-5}}"
    );
}

#[test]
fn criterion_4_em_correctness() {
    let mut worst_dip = 0.0f64;
    let mut worst_colsum = 0.0f64;
    let mut worst_weight = 0.0f64;
    for name in TABLE_ONE_PRESETS {
        let run = preset_run(name);
        for pair in run.trace.log_likelihood_history.windows(2) {
            let dip = (pair[0] - pair[1]) / pair[0].abs().max(1.0);
            worst_dip = worst_dip.max(dip);
        }
        let (tau, _) = e_step(&run.samples, &run.mixture).expect("responsibilities");
        for row in tau {
            worst_colsum = worst_colsum.max((row[0] + row[1] - 1.0).abs());
        }
        let wsum: f64 = run.mixture.components().iter().map(|c| c.weight).sum();
        worst_weight = worst_weight.max((wsum - 1.0).abs());
    }
    let pass = worst_dip <= 1e-9 && worst_colsum <= 1e-12 && worst_weight <= 1e-12;
    verdict(
        4,
        "EM log-likelihood monotone, responsibilities and weights normalized",
        pass,
        &format!(
            "worst relative dip {worst_dip:.2e}, worst column-sum error {worst_colsum:.2e}, \
             worst weight-sum error {worst_weight:.2e}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_shape_update_oracle() {
    let count = 25i32;
    let ratio = (3.0f64 / 0.01).powf(1.0 / (count - 1) as f64);
    let mut failures = Vec::new();
    let mut worst = (0.0f64, 0.0f64);
    for k in 0..count {
        let target = 0.01 * ratio.powi(k);
        let (radii, weights) = dataset_with_log_gap(target);
        let objective = WeightedShapeObjective::new(&radii, &weights);
        let gap = objective.log_gap();
        assert!(
            (gap - target).abs() < 1e-9,
            "dataset construction missed the gap target"
        );
        let oracle = objective.golden_section_argmax();
        let closed_form = shape_update(gap);
        let rel_err = ((closed_form - oracle) / oracle).abs();
        if rel_err > worst.1 {
            worst = (gap, rel_err);
        }
        if rel_err > 0.01 {
            failures.push(format!(
                "gap {gap:.4}: closed form {closed_form:.5} vs oracle {oracle:.5} ({:.2}%)",
                100.0 * rel_err
            ));
        }
    }
    let pass = failures.is_empty();
    verdict(
        5,
        "closed-form shape update within 1% of golden-section oracle",
        pass,
        &format!(
            "worst relative error {:.2}% at log gap {:.3} ({} of {count} points over 1%)",
            100.0 * worst.1,
            worst.0,
            failures.len()
        ),
    );
    assert!(pass, "{failures:?}");
}

#[test]
fn criterion_6_distributional_oracles() {
    use rand::{Rng, SeedableRng};
    let fitted = preset_run("fig1b-N100").mixture.clone();
    let synthetic = NakagamiMixture::new(
        NakagamiComponent {
            weight: 0.35,
            shape: 0.8,
            spread: 0.6,
        },
        NakagamiComponent {
            weight: 0.65,
            shape: 7.5,
            spread: 2.4,
        },
    )
    .unwrap();
    let mut failures = Vec::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(606);

    for (label, mixture) in [("synthetic", &synthetic), ("fitted", &fitted)] {
        let spread_max = mixture
            .components()
            .iter()
            .map(|c| c.spread)
            .fold(0.0f64, f64::max);
        let upper = 12.0 * spread_max.sqrt();

        let f = |r: f64| mixture.pdf(r);
        let integral = integrate(&f, 0.0, upper, 1e-10);
        if (integral - 1.0).abs() > 1e-6 {
            failures.push(format!("{label}: pdf integral {integral}"));
        }

        for _ in 0..20 {
            let r = upper * rng.gen::<f64>();
            let quadrature = integrate(&f, 0.0, r, 1e-11);
            let cdf = mixture.cdf(r);
            if (cdf - quadrature).abs() > 1e-8 {
                failures.push(format!(
                    "{label}: cdf {cdf} vs quadrature {quadrature} at r {r}"
                ));
            }
        }

        for _ in 0..50 {
            let r_th = 0.05 + 9.95 * rng.gen::<f64>();
            let rho_db = 120.0 * rng.gen::<f64>() - 10.0;
            let rho = 10f64.powf(rho_db / 10.0);
            let direct = outage_analytic(mixture, rho_db, r_th);
            let via_cdf = mixture.cdf(((2f64.powf(r_th) - 1.0) / rho).sqrt());
            if (direct - via_cdf).abs() > 1e-12 {
                failures.push(format!(
                    "{label}: outage {direct} vs cdf route {via_cdf} at r_th {r_th}"
                ));
            }
        }
    }
    verdict(
        6,
        "pdf normalizes, cdf matches quadrature, outage matches cdf route",
        failures.is_empty(),
        &format!("{} violations", failures.len()),
    );
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn criterion_7_channel_model_sanity() {
    let mut failures = Vec::new();

    // Correlation matrix structure, with exact zeros at half-wavelength
    // multiples (axis-aligned separations, integral sinc argument).
    let geometry = RisGeometry::square(4, 0.5, 1.0);
    let r = build_correlation_matrix(&geometry).unwrap();
    let e = r.entries();
    for a in 0..16 {
        if e[(a, a)] != 1.0 {
            failures.push(format!("diagonal ({a},{a}) = {}", e[(a, a)]));
        }
        for b in 0..16 {
            if e[(a, b)] != e[(b, a)] {
                failures.push(format!("asymmetry at ({a},{b})"));
            }
        }
    }
    for k in 1..4 {
        if e[(0, k)] != 0.0 || e[(0, 4 * k)] != 0.0 {
            failures.push(format!("row/column separation {k} not exactly zero"));
        }
    }

    // Von Mises resultant length against the Bessel-ratio series.
    for kappa in [1.0, 3.0] {
        let draws = sample_von_mises(&RngStream::new(700, 0), kappa, 1_000_000).unwrap();
        let resultant: f64 = draws.iter().map(|t| t.cos()).sum::<f64>() / draws.len() as f64;
        let expected = bessel_ratio(kappa);
        if (resultant - expected).abs() > 0.005 {
            failures.push(format!(
                "kappa {kappa}: resultant {resultant:.4} vs {expected:.4}"
            ));
        }
    }

    // Outage monotone in the rate threshold on every cached curve.
    for name in TABLE_ONE_PRESETS {
        let run = preset_run(name);
        for curve in [&run.monte_carlo, &run.analytic, &run.gamma] {
            if !curve.op_values.windows(2).all(|w| w[1] >= w[0]) {
                failures.push(format!("{name}: non-monotone outage curve"));
            }
        }
    }

    // Outage decreasing in the element count. The full N sweep spans more
    // SNR than one Monte Carlo-resolvable transition, so compare adjacent
    // pairs where both curves are resolvable.
    let n36 = preset_run("fig1b-N36");
    let n100 = preset_run("fig1b-N100");
    let n256 = preset_run("fig1b-N256");
    let floor = 10.0 / n36.samples.len() as f64;
    for (label, small, large) in [("36/100", &n36, &n100), ("100/256", &n100, &n256)] {
        let mut compared = 0;
        for k in 0..small.monte_carlo.rate_grid.len() {
            let few = small.monte_carlo.op_values[k];
            let many = large.monte_carlo.op_values[k];
            if many >= floor && few <= 0.99 {
                compared += 1;
                if many >= few {
                    failures.push(format!(
                        "outage not decreasing in N ({label}) at grid {k}: {few:.3e} vs {many:.3e}"
                    ));
                }
            }
        }
        if compared < 3 {
            failures.push(format!("too few comparable grid points for N pair {label}"));
        }
    }

    // Correlated outage sits above the i.i.d. reference at N = 100.
    // Correlation widens the composite-gain distribution, so the ordering
    // holds below the distribution median and reverses as OP approaches 1;
    // compare in the operational region.
    let correlated = preset_run("fig1b-N100");
    let iid = preset_run("fig1b-N100-iid");
    let points = comparable_points(&correlated.monte_carlo, &iid.monte_carlo, floor, 0.5);
    if points.len() < 3 {
        failures.push("too few comparable correlated/iid points".into());
    }
    let mut separated = false;
    for &k in &points {
        let (corr, ci_corr) = (
            correlated.monte_carlo.op_values[k],
            correlated.monte_carlo.ci_halfwidths[k],
        );
        let (ind, ci_ind) = (
            iid.monte_carlo.op_values[k],
            iid.monte_carlo.ci_halfwidths[k],
        );
        if corr + ci_corr + ci_ind < ind {
            failures.push(format!(
                "correlated outage significantly below iid at grid {k}: {corr:.3e} vs {ind:.3e}"
            ));
        }
        if corr - ci_corr > ind + ci_ind {
            separated = true;
        }
    }
    if !separated {
        failures.push("no grid point shows a significant correlated/iid gap".into());
    }

    verdict(
        7,
        "correlation structure, Von Mises moments, and outage directions",
        failures.is_empty(),
        &format!("{} violations", failures.len()),
    );
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn criterion_8_qualitative_figure_directions() {
    let mut failures = Vec::new();

    // Shrinking the element spacing strengthens correlation and degrades
    // outage below the distribution median (the widened gain distribution
    // makes the ordering reverse as OP approaches 1).
    let quarter = preset_run("fig1c-lambda4");
    let eighth = preset_run("fig1c-lambda8");
    let twelfth = preset_run("fig1c-lambda12");
    let floor = 10.0 / quarter.samples.len() as f64;
    let mut compared = 0;
    for k in 0..quarter.monte_carlo.rate_grid.len() {
        let (a, b, c) = (
            quarter.monte_carlo.op_values[k],
            eighth.monte_carlo.op_values[k],
            twelfth.monte_carlo.op_values[k],
        );
        if a >= floor && c <= 0.5 {
            compared += 1;
            if !(a < b && b < c) {
                failures.push(format!(
                    "outage not degrading with spacing at grid {k}: {a:.3e}, {b:.3e}, {c:.3e}"
                ));
            }
        }
    }
    if compared < 3 {
        failures.push("too few comparable spacing points".into());
    }

    // More transmit antennas improve outage.
    let single = preset_run("fig1a-N36");
    let dual = preset_run("fig1a-N36+M2");
    let points = comparable_points(&single.monte_carlo, &dual.monte_carlo, floor, 0.5);
    let mut compared = 0;
    for &k in &points {
        compared += 1;
        let one = single.monte_carlo.op_values[k];
        let two = dual.monte_carlo.op_values[k];
        if two >= one {
            failures.push(format!(
                "outage not improved by second antenna at grid {k}: {one:.3e} vs {two:.3e}"
            ));
        }
    }
    if compared < 3 {
        failures.push("too few comparable antenna points".into());
    }

    verdict(
        8,
        "spacing degrades and antennas improve outage",
        failures.is_empty(),
        &format!("{} violations", failures.len()),
    );
    assert!(failures.is_empty(), "{failures:?}");
}
