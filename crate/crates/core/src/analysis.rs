//! Diagnostics for finite-sample behaviour: magnitude decay and phase drift
//! when fitting pure noise, the approach-then-rebound error curve and its
//! crossover time, and the sample-to-population deviation rate.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::estimators::{CorrelationPath, EmEngine, EstimatorKind, RunConfig};
use crate::fit::{loglog_fit, mean_stderr, LineFit};
use crate::model::{sample, ObservationSet};
use crate::par;
use crate::population::PopulationModel;
use crate::signal::{wrap_phase, FourierPlan, Geometry, Signal};

/// Mixes a base seed with stream coordinates (splitmix64 finaliser per word).
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    coords.iter().fold(mix(base), |h, &c| mix(h ^ mix(c)))
}

/// Predicted `|X^(T)[k]| / |X^(0)[k]|` under pure noise: `1 / sqrt(1 + 2 T |X^(0)[k]|^2)`.
pub fn efn_magnitude_law(mag0_sq: f64, iters: usize) -> f64 {
    1.0 / (1.0 + 2.0 * iters as f64 * mag0_sq).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TeqPrediction {
    pub t_eq: f64,
    /// `(1 - kappa) e0 / eps_m`, which selects the regime.
    pub ratio: f64,
    /// Small-ratio form `e0 / eps_m`.
    pub small_ratio_form: f64,
    /// Large-ratio form `log(ratio) / (1 - kappa)`.
    pub large_ratio_form: f64,
}

/// Iteration at which contraction toward the truth is overtaken by the
/// sample-to-population deviation: `log(1 + (1-kappa) e0 / eps_m) / (-log kappa)`.
pub fn crossover_teq(kappa: f64, e0: f64, eps_m: f64) -> Result<TeqPrediction> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return invalid(format!("kappa must lie in (0, 1), got {kappa}"));
    }
    if !(e0 > 0.0) || !(eps_m > 0.0) {
        return invalid("e0 and eps_m must be positive");
    }
    let ratio = (1.0 - kappa) * e0 / eps_m;
    Ok(TeqPrediction {
        t_eq: ratio.ln_1p() / -kappa.ln(),
        ratio,
        small_ratio_form: e0 / eps_m,
        large_ratio_form: ratio.ln() / (1.0 - kappa),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GhostReport {
    pub mse_curve: Vec<f64>,
    pub t_min: usize,
    pub rebound: bool,
    pub margin: f64,
    pub predicted_teq: Option<TeqPrediction>,
}

/// `t_min` is the first minimiser; a rebound is a later value above `(1 + margin) mse(t_min)`.
pub fn detect_ghost(curve: &[f64], margin: f64) -> Result<GhostReport> {
    if curve.len() < 3 {
        return invalid("ghost detection needs at least 3 points");
    }
    if curve.iter().any(|v| v.is_nan()) {
        return invalid("MSE curve contains NaN");
    }
    let mut t_min = 0;
    for (t, &v) in curve.iter().enumerate() {
        if v < curve[t_min] {
            t_min = t;
        }
    }
    let thresh = (1.0 + margin) * curve[t_min];
    let rebound = curve[t_min + 1..].iter().any(|&v| v > thresh);
    Ok(GhostReport { mse_curve: curve.to_vec(), t_min, rebound, margin, predicted_teq: None })
}

/// Monte-Carlo mean orbit-MSE curve of an estimator started from `init` on
/// `trials` independent datasets of size `n` drawn from `truth`.
#[allow(clippy::too_many_arguments)]
pub fn mean_mse_curve(
    kind: EstimatorKind,
    truth: &Signal,
    init: &Signal,
    n: usize,
    sigma: f64,
    iters: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let cfg = RunConfig { record_loglik: false, iterate_budget: 0, ..RunConfig::default() };
    let curves = (0..trials)
        .map(|tr| {
            let data = sample(truth, n, sigma, derive_seed(seed, &[n as u64, tr as u64]))?;
            let tj = crate::estimators::run(kind, init, &data, iters, &cfg)?;
            Ok(tj.mse_curve())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..=iters).map(|t| curves.iter().map(|c| c[t]).sum::<f64>() / trials as f64).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DeviationRow {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviationTable {
    pub rows: Vec<DeviationRow>,
    /// Log-log fit of the mean deviation against `n`.
    pub fit: LineFit,
}

impl DeviationTable {
    /// Deviation predicted by the fit at sample size `n`.
    pub fn predict(&self, n: usize) -> f64 {
        (self.fit.intercept + self.fit.slope * (n as f64).ln()).exp()
    }
}

/// Monte-Carlo estimate of `max_x ||M_n(x) - M(x)||` over the probe points.
pub fn deviation_estimate(
    probes: &[Signal],
    model: &PopulationModel<'_>,
    n_values: &[usize],
    trials: usize,
    seed: u64,
) -> Result<DeviationTable> {
    if probes.is_empty() || n_values.is_empty() || trials == 0 {
        return invalid("deviation estimate needs probes, sample sizes and trials");
    }
    let pop: Vec<Signal> = probes.iter().map(|x| model.em(x)).collect::<Result<_>>()?;
    let sigma = model.sigma();
    let mut rows = Vec::new();
    for &n in n_values {
        let devs = par::map_indexed(trials, |tr| -> Result<f64> {
            let data = sample(model.x_star(), n, sigma, derive_seed(seed, &[n as u64, tr as u64]))?;
            let eng = EmEngine::new(&data, CorrelationPath::Auto);
            let mut worst: f64 = 0.0;
            for (x, m) in probes.iter().zip(&pop) {
                let mn = eng.soft_average(x, sigma, None)?;
                worst = worst.max(mn.sub(m)?.norm());
            }
            Ok(worst)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let (mean, stderr) = mean_stderr(&devs);
        rows.push(DeviationRow { n, mean, stderr, trials });
    }
    let fit = if rows.len() >= 2 {
        let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
        let ms: Vec<f64> = rows.iter().map(|r| r.mean).collect();
        loglog_fit(&ns, &ms)?
    } else {
        LineFit { slope: f64::NAN, intercept: f64::NAN, rss: f64::NAN, rms: f64::NAN, points: rows.len() }
    };
    Ok(DeviationTable { rows, fit })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DriftEntry {
    pub k: usize,
    pub n: usize,
    pub t: usize,
    /// Mean over trials of the squared wrapped phase change since initialization.
    pub phase_mse: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrequencyFit {
    pub k: usize,
    /// Only set for fits against `t`.
    pub n: Option<usize>,
    pub fit: LineFit,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftReport {
    pub freqs: Vec<usize>,
    pub n_values: Vec<usize>,
    pub iters: usize,
    pub trials: usize,
    pub entries: Vec<DriftEntry>,
    /// Last iteration inside the transient window `t <= 0.1 / ||x^(0)||^2`.
    pub window: usize,
    /// One-step phase MSE against `n`, per frequency.
    pub slope_vs_n: Vec<FrequencyFit>,
    /// Same, for the phase MSE averaged over the tracked frequencies.
    pub mean_slope_vs_n: LineFit,
    /// Accumulated phase MSE against `t` inside the window, per frequency and `n`.
    pub slope_vs_t: Vec<FrequencyFit>,
    /// Same, for the frequency-averaged MSE, one fit per `n`.
    pub mean_slope_vs_t: Vec<FrequencyFit>,
    /// Per `n`: fraction of trials whose one-step phase error at the
    /// largest-magnitude tracked frequency is below that at the smallest.
    pub dominant_wins: Vec<(usize, f64)>,
}

impl DriftReport {
    pub fn entry(&self, k: usize, n: usize, t: usize) -> Option<&DriftEntry> {
        self.entries.iter().find(|e| e.k == k && e.n == n && e.t == t)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,n,t,phase_mse,stderr\n");
        for e in &self.entries {
            s.push_str(&format!("{},{},{},{:?},{:?}\n", e.k, e.n, e.t, e.phase_mse, e.stderr));
        }
        s
    }
}

/// Restarts EM from the fixed `init` on `trials` pure-noise datasets per
/// sample size and records the squared phase change of each tracked
/// frequency after every iteration.
pub fn phase_drift_scan(
    init: &Signal,
    sigma: f64,
    n_values: &[usize],
    iters: usize,
    trials: usize,
    seed: u64,
    freqs: &[usize],
) -> Result<DriftReport> {
    if iters == 0 || trials == 0 || n_values.is_empty() || freqs.is_empty() {
        return invalid("phase drift scan needs iterations, trials, sample sizes and frequencies");
    }
    let d = init.len();
    let plan = FourierPlan::new(init.geometry());
    let spec0 = plan.dft(init);
    for &k in freqs {
        if k >= d {
            return invalid(format!("frequency {k} out of range"));
        }
        if spec0.coeffs()[k].norm() == 0.0 {
            return Err(crate::error::MraError::UndefinedPhase(k));
        }
    }
    let phi0: Vec<f64> = freqs.iter().map(|&k| spec0.phase(k)).collect();
    let zero = Signal::zeros(init.geometry());
    let nf = freqs.len();
    let window = ((0.1 / init.norm_sq()).floor() as usize).clamp(1, iters);

    let (dom, weak) = {
        let mags: Vec<f64> = freqs.iter().map(|&k| spec0.magnitude(k)).collect();
        let mut dom = 0;
        let mut weak = 0;
        for i in 0..nf {
            if mags[i] > mags[dom] {
                dom = i;
            }
            if mags[i] < mags[weak] {
                weak = i;
            }
        }
        (dom, weak)
    };

    let mut entries = Vec::new();
    let mut dominant_wins = Vec::new();
    // per n: mse[t][f]
    let mut tables: Vec<Vec<Vec<f64>>> = Vec::new();
    for &n in n_values {
        // sq[trial][t-1][f]
        let sq = par::map_indexed(trials, |tr| -> Result<Vec<Vec<f64>>> {
            let data = sample(&zero, n, sigma, derive_seed(seed, &[n as u64, tr as u64]))?;
            let eng = EmEngine::new(&data, CorrelationPath::Auto);
            let mut x = init.clone();
            let mut out = Vec::with_capacity(iters);
            for _ in 0..iters {
                x = eng.soft_average(&x, sigma, None)?;
                let sp = plan.dft(&x);
                out.push(
                    freqs
                        .iter()
                        .zip(&phi0)
                        .map(|(&k, &p0)| {
                            let c: Complex64 = sp.coeffs()[k];
                            let dp = wrap_phase(c.arg() - p0);
                            dp * dp
                        })
                        .collect(),
                );
            }
            Ok(out)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let wins = sq.iter().filter(|s| s[0][dom] < s[0][weak]).count();
        dominant_wins.push((n, wins as f64 / trials as f64));
        let mut table = vec![vec![0.0; nf]; iters];
        for t in 0..iters {
            for f in 0..nf {
                let vals: Vec<f64> = sq.iter().map(|s| s[t][f]).collect();
                let (m, se) = mean_stderr(&vals);
                table[t][f] = m;
                entries.push(DriftEntry { k: freqs[f], n, t: t + 1, phase_mse: m, stderr: se });
            }
        }
        tables.push(table);
    }

    let ns: Vec<f64> = n_values.iter().map(|&n| n as f64).collect();
    let fit_or_nan = |x: &[f64], y: &[f64]| {
        loglog_fit(x, y).unwrap_or(LineFit { slope: f64::NAN, intercept: f64::NAN, rss: f64::NAN, rms: f64::NAN, points: x.len() })
    };
    let mut slope_vs_n = Vec::new();
    for (f, &k) in freqs.iter().enumerate() {
        let ys: Vec<f64> = tables.iter().map(|tb| tb[0][f]).collect();
        slope_vs_n.push(FrequencyFit { k, n: None, fit: fit_or_nan(&ns, &ys) });
    }
    let mean_one: Vec<f64> = tables.iter().map(|tb| tb[0].iter().sum::<f64>() / nf as f64).collect();
    let mean_slope_vs_n = fit_or_nan(&ns, &mean_one);

    let ts: Vec<f64> = (1..=window).map(|t| t as f64).collect();
    let mut slope_vs_t = Vec::new();
    let mut mean_slope_vs_t = Vec::new();
    for (ni, &n) in n_values.iter().enumerate() {
        for (f, &k) in freqs.iter().enumerate() {
            let ys: Vec<f64> = (0..window).map(|t| tables[ni][t][f]).collect();
            slope_vs_t.push(FrequencyFit { k, n: Some(n), fit: fit_or_nan(&ts, &ys) });
        }
        let ys: Vec<f64> = (0..window).map(|t| tables[ni][t].iter().sum::<f64>() / nf as f64).collect();
        mean_slope_vs_t.push(FrequencyFit { k: usize::MAX, n: Some(n), fit: fit_or_nan(&ts, &ys) });
    }

    Ok(DriftReport {
        freqs: freqs.to_vec(),
        n_values: n_values.to_vec(),
        iters,
        trials,
        entries,
        window,
        slope_vs_n,
        mean_slope_vs_n,
        slope_vs_t,
        mean_slope_vs_t,
        dominant_wins,
    })
}

/// Cyclic Gaussian bump of width `width` samples scaled to Euclidean norm `tau`.
pub fn fixed_energy_bump(d: usize, width: f64, tau: f64) -> Signal {
    let vals: Vec<f64> = (0..d)
        .map(|j| {
            let t = j as f64;
            let dist = t.min(d as f64 - t);
            (-(dist * dist) / (2.0 * width * width)).exp()
        })
        .collect();
    let x = Signal::from_raw(Geometry::Line { d }, vals);
    let n = x.norm();
    x.scaled(tau / n)
}

/// `max_{L <= l <= d-L} |<x, T_l x>| / ||x||^2`.
pub fn max_far_autocorrelation(x: &Signal, lag_floor: usize) -> f64 {
    let d = x.len();
    let n2 = x.norm_sq();
    if n2 == 0.0 || lag_floor > d.saturating_sub(lag_floor) {
        return 0.0;
    }
    (lag_floor..=d - lag_floor).map(|l| (x.dot(&x.shifted(l)) / n2).abs()).fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StagnationRow {
    pub d: usize,
    pub mean: f64,
    pub stderr: f64,
    /// Decorrelation diagnostic of the initialization at lags `d/4 ..= 3d/4`.
    pub max_far_autocorr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StagnationTable {
    pub tau: f64,
    pub n: usize,
    pub trials: usize,
    pub rows: Vec<StagnationRow>,
    pub strictly_decreasing: bool,
}

/// One EM step on pure noise from a fixed-energy bump, `||x^(1) - x^(0)||` per dimension.
pub fn highdim_stagnation_scan(
    tau: f64,
    d_values: &[usize],
    n: usize,
    trials: usize,
    sigma: f64,
    seed: u64,
) -> Result<StagnationTable> {
    if d_values.is_empty() || trials == 0 || n == 0 {
        return invalid("stagnation scan needs dimensions, trials and samples");
    }
    let mut rows = Vec::new();
    for &d in d_values {
        let init = if tau == 0.0 { Signal::zeros(Geometry::Line { d }) } else { fixed_energy_bump(d, 2.0, tau) };
        let zero = Signal::zeros(init.geometry());
        let disp = par::map_indexed(trials, |tr| -> Result<f64> {
            let data: ObservationSet = sample(&zero, n, sigma, derive_seed(seed, &[d as u64, tr as u64]))?;
            let x1 = EmEngine::new(&data, CorrelationPath::Auto).soft_average(&init, sigma, None)?;
            Ok(x1.sub(&init)?.norm())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let (mean, stderr) = mean_stderr(&disp);
        rows.push(StagnationRow { d, mean, stderr, max_far_autocorr: max_far_autocorrelation(&init, d / 4) });
    }
    let strictly_decreasing = rows.windows(2).all(|w| w[1].mean < w[0].mean);
    Ok(StagnationTable { tau, n, trials, rows, strictly_decreasing })
}
