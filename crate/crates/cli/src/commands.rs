//! Subcommand bodies. Each reads typed values from the resolved settings,
//! records defaults it falls back on, and writes its outputs.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use mra_core::analysis::{
    crossover_teq, deviation_estimate, detect_ghost, efn_magnitude_law, highdim_stagnation_scan, phase_drift_scan,
};
use mra_core::estimators::{
    self, AdaptiveMoments, CorrelationPath, EstimatorKind, RunConfig, SgdConfig, StepSchedule, UncorrectedMoments,
};
use mra_core::io::{load_signal, save_pgm, save_signal_csv, PgmScaling};
use mra_core::model::{self, ModelConfig, TruthSource};
use mra_core::population::{
    fourier_blocks, make_grid, population_trajectory, spectral_radius, two_phase_fit, LatentAverage, PopulationModel,
};
use mra_core::signal::{dft, normalized_mse, orbit_distance, Geometry, Signal};
use mra_core::synth;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::settings::Settings;
use crate::{CliError, Ctx, R};

fn usage<T>(msg: impl Into<String>) -> R<T> {
    Err(CliError::Usage(msg.into()))
}

fn write_text(path: &Path, text: &str) -> R<()> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn with_path(path: &Path, e: mra_core::MraError) -> CliError {
    match e {
        mra_core::MraError::Io(io) => CliError::Runtime(format!("cannot read {}: {io}", path.display())),
        other => CliError::from(other),
    }
}

fn read_signal(path: impl AsRef<Path>) -> R<Signal> {
    load_signal(path.as_ref()).map_err(|e| with_path(path.as_ref(), e))
}

fn read_data(path: impl AsRef<Path>) -> R<model::ObservationSet> {
    model::load(path.as_ref()).map_err(|e| with_path(path.as_ref(), e))
}

/// Fourier magnitudes below this (in units of sigma) have no meaningful phase.
const PHASE_FLOOR: f64 = 1e-12;

fn write_json<T: Serialize>(path: &Path, value: &T) -> R<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn save_signal(x: &Signal, path: &Path) -> R<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => save_pgm(x, path, PgmScaling::MinMax)?,
        _ => save_signal_csv(x, path)?,
    }
    Ok(())
}

fn parse_grid(spec: &str) -> R<Geometry> {
    let (h, w) = spec
        .split_once(['x', 'X'])
        .ok_or_else(|| CliError::Usage(format!("--grid expects HxW, got '{spec}'")))?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| CliError::Usage(format!("bad grid size '{spec}'")));
    Ok(Geometry::Grid { h: parse(h)?, w: parse(w)? })
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:?}")
    }
}

pub fn gen(s: &mut Settings, ctx: &mut Ctx) -> R<()> {
    let seed = ctx.seed("gen")?;
    let n: usize = s.req("n")?;
    let file: Option<String> = s.get("truth")?;
    let geometry = match (s.get::<usize>("d")?, s.raw("grid")) {
        (Some(_), Some(_)) => return usage("give either --d or --grid, not both"),
        (Some(d), None) => Some(Geometry::Line { d }),
        (None, Some(g)) => Some(parse_grid(g)?),
        (None, None) => None,
    };
    let truth = match &file {
        Some(p) => TruthSource::File(p.into()),
        None => TruthSource::Named(s.or("waveform", "bump".to_string())?),
    };
    let geometry = match (geometry, &file) {
        (Some(g), _) => g,
        (None, Some(p)) => read_signal(p)?.geometry(),
        (None, None) => return usage("gen needs --d, --grid or --truth"),
    };
    let mut cfg = ModelConfig { geometry, n, sigma: 1.0, seed, truth, truth_norm: s.get("truth-norm")? };
    let snr: Option<f64> = s.get("snr")?;
    match (s.get::<f64>("sigma")?, snr) {
        (Some(sigma), Some(snr)) => {
            cfg.sigma = sigma;
            cfg.truth_norm = Some((snr * geometry.len() as f64).sqrt() * sigma);
        }
        (Some(sigma), None) => cfg.sigma = sigma,
        (None, Some(snr)) => {
            let norm = cfg.resolve_truth()?.norm();
            if !(snr > 0.0) || norm == 0.0 {
                return usage("--snr without --sigma needs snr > 0 and a nonzero truth");
            }
            // Derived, not recorded: a replay must take this same branch.
            cfg.sigma = norm / (snr * geometry.len() as f64).sqrt();
        }
        (None, None) => return usage("gen needs --sigma or --snr"),
    }
    let data = model::generate(&cfg)?;
    let out = ctx.output(&s.or("out", "data.mra".to_string())?)?;
    model::save(&data, &out)?;
    let snr_txt = if cfg.sigma > 0.0 { fmt(model::snr(data.ground_truth(), cfg.sigma)?) } else { "inf".into() };
    println!("wrote {} observations (d={}, sigma={}, snr={snr_txt}) to {}", n, geometry.len(), cfg.sigma, out.display());
    Ok(())
}

fn sgd_config(s: &mut Settings) -> R<SgdConfig> {
    let alpha0 = s.or("alpha0", 0.95)?;
    let gamma = s.or("gamma", 0.99)?;
    let schedule = match s.or("schedule", "geometric".to_string())?.as_str() {
        "geometric" => StepSchedule::Geometric { alpha0, gamma },
        "exponential" => StepSchedule::Exponential { alpha0, gamma },
        "constant" => StepSchedule::Constant(alpha0),
        other => return usage(format!("unknown schedule '{other}' (geometric|exponential|constant)")),
    };
    let rule: Arc<dyn estimators::MomentRule> = match s.or("moments", "corrected".to_string())?.as_str() {
        "corrected" => Arc::new(AdaptiveMoments),
        "uncorrected" => Arc::new(UncorrectedMoments),
        other => return usage(format!("unknown moment rule '{other}' (corrected|uncorrected)")),
    };
    Ok(SgdConfig {
        batch_size: s.or("batch", 256usize)?,
        schedule,
        beta1: s.or("beta1", 0.9)?,
        beta2: s.or("beta2", 0.999)?,
        eps: s.or("eps", 1e-8)?,
        rule,
    })
}

fn parse_path(s: &mut Settings) -> R<CorrelationPath> {
    match s.or("path", "auto".to_string())?.as_str() {
        "auto" => Ok(CorrelationPath::Auto),
        "fft" => Ok(CorrelationPath::Fft),
        "direct" => Ok(CorrelationPath::Direct),
        other => usage(format!("unknown correlation path '{other}' (auto|fft|direct)")),
    }
}

pub fn run(s: &mut Settings, ctx: &mut Ctx) -> R<()> {
    let kind: EstimatorKind = s.or("algo", "em".to_string())?.parse()?;
    let data = read_data(&s.req::<String>("data")?)?;
    let init = match s.or("init", "first".to_string())?.as_str() {
        "first" => data.observation_signal(0),
        "mean" => data.sample_mean(),
        "zeros" => Signal::zeros(data.geometry()),
        path => read_signal(path)?,
    };
    let iters: usize = s.or("iters", 100)?;
    let mut cfg = RunConfig {
        sigma: s.get("sigma")?,
        freqs: s.list("freqs")?.unwrap_or_default(),
        record_loglik: s.or("loglik", true)?,
        path: parse_path(s)?,
        ..RunConfig::default()
    };
    if kind == EstimatorKind::Sgd {
        cfg.seed = ctx.seed("run --algo sgd")?;
        cfg.sgd = sgd_config(s)?;
    }
    let tj = estimators::run(kind, &init, &data, iters, &cfg)?;
    let out = ctx.output(&s.or("out", "traj.csv".to_string())?)?;
    write_text(&out, &tj.to_csv())?;
    if let Some(f) = s.get::<String>("final")? {
        let path = ctx.output(&f)?;
        save_signal(&tj.last, &path)?;
    }
    if let Some(last) = tj.rows.last() {
        println!("{kind:?}: {} iterations, final mse_orbit {}", iters, last.mse_orbit.map(fmt).unwrap_or("n/a".into()));
    }
    Ok(())
}

/// Truth, noise level, grid size and latent mode of a population experiment.
struct PopSetup {
    truth: Signal,
    sigma: f64,
    nodes: usize,
    latent: LatentAverage,
}

fn pop_setup(s: &mut Settings) -> R<PopSetup> {
    let d: usize = s.or("d", 5)?;
    let sigma: f64 = s.or("sigma", 1.0)?;
    let nodes: usize = s.or("nodes", 11)?;
    let latent = match s.or("latent", "exact".to_string())?.as_str() {
        "exact" => LatentAverage::Exact,
        "reduced" => LatentAverage::Reduced,
        other => return usage(format!("unknown latent mode '{other}' (exact|reduced)")),
    };
    let base = match s.get::<String>("truth")? {
        Some(p) => read_signal(p)?,
        None => synth::named(&s.or("waveform", "bump".to_string())?, Geometry::Line { d })?,
    };
    if base.geometry() != (Geometry::Line { d }) {
        return usage(format!("truth has geometry {:?}, expected a line of length {d}", base.geometry()));
    }
    let truth = match s.get::<f64>("beta")? {
        Some(b) if b == 0.0 => Signal::zeros(base.geometry()),
        Some(b) => synth::unit(&base)?.scaled(b),
        None => base,
    };
    Ok(PopSetup { truth, sigma, nodes, latent })
}

fn load_init(s: &Settings, geometry: Geometry) -> R<Signal> {
    match s.get::<String>("init")? {
        Some(p) => {
            let x = read_signal(p)?;
            if x.geometry() != geometry {
                return usage(format!("init has geometry {:?}, expected {geometry:?}", x.geometry()));
            }
            Ok(x)
        }
        None => Ok(Signal::zeros(geometry)),
    }
}

pub fn pop(s: &mut Settings, ctx: &mut Ctx) -> R<()> {
    let p = pop_setup(s)?;
    let init = load_init(s, p.truth.geometry())?;
    let iters: usize = s.or("iters", 100)?;
    let grid = make_grid(p.truth.len(), p.nodes, p.sigma)?;
    let model = PopulationModel::new(&p.truth, &grid)?.with_latent(p.latent);
    let traj = population_trajectory(&model, &init, iters)?;
    let d = p.truth.len();
    let mut csv = String::from("t,orbit_dist,mse_orbit");
    for k in 1..d {
        let _ = write!(csv, ",mag_k{k}");
    }
    for k in 1..d {
        let _ = write!(csv, ",phase_k{k}");
    }
    csv.push('\n');
    for (t, x) in traj.iter().enumerate() {
        let dist = orbit_distance(x, &p.truth)?;
        let mse = if p.truth.norm_sq() > 0.0 { normalized_mse(x, &p.truth)? } else { f64::NAN };
        let spec = dft(x);
        let _ = write!(csv, "{t},{},{}", fmt(dist), fmt(mse));
        for k in 1..d {
            let _ = write!(csv, ",{}", fmt(spec.magnitude(k)));
        }
        for k in 1..d {
            let ph = if spec.magnitude(k) > PHASE_FLOOR * p.sigma { spec.phase(k) } else { f64::NAN };
            let _ = write!(csv, ",{}", fmt(ph));
        }
        csv.push('\n');
    }
    let out = ctx.output(&s.or("out", "pop_traj.csv".to_string())?)?;
    write_text(&out, &csv)?;
    println!("population EM: {iters} iterations on {} nodes, written to {}", grid.len(), out.display());
    Ok(())
}

pub fn jacobian(s: &mut Settings, ctx: &mut Ctx) -> R<()> {
    let p = pop_setup(s)?;
    let at = match s.or("at", "truth".to_string())?.as_str() {
        "truth" => p.truth.clone(),
        path => read_signal(path)?,
    };
    let grid = make_grid(p.truth.len(), p.nodes, p.sigma)?;
    let jac = PopulationModel::new(&p.truth, &grid)?.with_latent(p.latent).jacobian(&at)?;
    let report = fourier_blocks(&jac)?;
    let out = ctx.output(&s.or("out", "spectral.json".to_string())?)?;
    write_json(&out, &report)?;
    println!("spectral radius {} over {} blocks, written to {}", fmt(report.rho), report.blocks.len(), out.display());
    Ok(())
}

/// Non-mean frequencies with one representative per conjugate pair and a defined phase.
fn half_spectrum(x: &Signal) -> Vec<usize> {
    let spec = dft(x);
    let scale = (0..x.len()).map(|k| spec.magnitude(k)).fold(0.0, f64::max);
    (1..x.len())
        .filter(|&k| k < spec.conjugate_index(k) && spec.magnitude(k) > 1e-12 * scale)
        .collect()
}

pub fn efn(s: &mut Settings, ctx: &mut Ctx) -> R<()> {
    let seed = ctx.seed("efn")?;
    let mut init = match s.get::<String>("init")? {
        Some(p) => read_signal(p)?,
        None => {
            let d: usize = s.or("d", 16)?;
            let name: String = s.or("waveform", "bump".to_string())?;
            s.or("init-norm", 0.1)?;
            synth::named(&name, Geometry::Line { d })?
        }
    };
    if let Some(norm) = s.get::<f64>("init-norm")? {
        init = synth::unit(&init)?.scaled(norm);
    }
    let sigma: f64 = s.or("sigma", 1.0)?;
    let ns: Vec<usize> = s.list("n")?.ok_or_else(|| CliError::Usage("missing required setting '--n'".into()))?;
    let iters: usize = s.or("iters", 100)?;
    let trials: usize = s.or("trials", 64)?;
    let freqs = match s.list::<usize>("freqs")? {
        Some(f) => f,
        None => {
            let f = half_spectrum(&init);
            s.set("freqs", f.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","));
            f
        }
    };
    let rep = phase_drift_scan(&init, sigma, &ns, iters, trials, seed, &freqs)?;
    let out = ctx.output(&s.or("out", "drift.csv".to_string())?)?;
    write_text(&out, &rep.to_csv())?;
    if let Some(r) = s.get::<String>("report")? {
        let path = ctx.output(&r)?;
        write_json(&path, &rep)?;
    }
    println!(
        "one-step phase MSE slope vs n: {}; window t <= {}; written to {}",
        fmt(rep.mean_slope_vs_n.slope),
        rep.window,
        out.display()
    );
    for f in &rep.mean_slope_vs_t {
        println!("  n={}: accumulated slope vs t {}", f.n.unwrap_or(0), fmt(f.fit.slope));
    }
    Ok(())
}

pub fn efn_law(s: &mut Settings, ctx: &mut Ctx) -> R<()> {
    let iters: usize = s.or("iters", 100)?;
    let mags: Vec<(usize, f64)> = match (s.get::<String>("init")?, s.list::<f64>("mag0-sq")?) {
        (Some(_), Some(_)) => return usage("give either --init or --mag0-sq"),
        (Some(p), None) => {
            let x = read_signal(p)?;
            let spec = dft(&x);
            (1..x.len()).map(|k| (k, spec.magnitude(k).powi(2))).collect()
        }
        (None, Some(v)) => v.into_iter().enumerate().collect(),
        (None, None) => return usage("efn-law needs --init or --mag0-sq"),
    };
    if mags.iter().any(|(_, m)| *m < 0.0) {
        return usage("squared magnitudes must be non-negative");
    }
    let mut csv = String::from("t,k,mag0_sq,ratio\n");
    for t in 0..=iters {
        for &(k, m) in &mags {
            let _ = writeln!(csv, "{t},{k},{},{}", fmt(m), fmt(efn_magnitude_law(m, t)));
        }
    }
    let out = ctx.output(&s.or("out", "efn_law.csv".to_string())?)?;
    write_text(&out, &csv)?;
    println!("predicted ratios for {} frequencies written to {}", mags.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct GhostOutput {
    e0: f64,
    kappa: Option<f64>,
    eps_m: Option<f64>,
    em: mra_core::analysis::GhostReport,
    hard: mra_core::analysis::GhostReport,
}

pub fn ghost(s: &mut Settings, ctx: &mut Ctx) -> R<()> {
    let data = read_data(&s.req::<String>("data")?)?;
    let init = read_signal(&s.req::<String>("init")?)?;
    let iters: usize = s.or("iters", 200)?;
    let margin: f64 = s.or("margin", 0.25)?;
    let truth = data.ground_truth().clone();
    if truth.norm_sq() == 0.0 {
        return usage("ghost needs a dataset with a nonzero ground truth");
    }
    let cfg = RunConfig { sigma: s.get("sigma")?, record_loglik: false, iterate_budget: 0, ..RunConfig::default() };
    let em_curve = estimators::run(EstimatorKind::Em, &init, &data, iters, &cfg)?.mse_curve();
    let hard_curve = estimators::run(EstimatorKind::Hard, &init, &data, iters, &cfg)?.mse_curve();
    let mut em = detect_ghost(&em_curve, margin)?;
    let hard = detect_ghost(&hard_curve, margin)?;
    let e0 = orbit_distance(&init, &truth)?;
    let sigma = cfg.sigma.unwrap_or(data.sigma());
    let small_line = matches!(data.geometry(), Geometry::Line { d } if d <= 6);

    let kappa = match s.get::<f64>("kappa")? {
        Some(k) => Some(k),
        None if small_line => {
            let nodes = s.or("nodes", 11usize)?;
            let grid = make_grid(truth.len(), nodes, sigma)?;
            let jac = PopulationModel::new(&truth, &grid)?.jacobian(&truth)?;
            let k = spectral_radius(&jac);
            s.set("kappa", fmt(k));
            Some(k)
        }
        None => None,
    };
    let eps_m = match s.get::<f64>("eps-m")? {
        Some(e) => Some(e),
        None if small_line => {
            let seed = ctx.seed("estimating --eps-m")?;
            let trials = s.or("trials", 8usize)?;
            let nodes = s.or("nodes", 11usize)?;
            let grid = make_grid(truth.len(), nodes, sigma)?;
            let model = PopulationModel::new(&truth, &grid)?;
            let table = deviation_estimate(&[truth.clone(), init.clone()], &model, &[data.n()], trials, seed)?;
            let e = table.rows[0].mean;
            s.set("eps-m", fmt(e));
            Some(e)
        }
        None => None,
    };
    if let (Some(k), Some(e)) = (kappa, eps_m) {
        em.predicted_teq = Some(crossover_teq(k, e0, e)?);
    }
    let out = ctx.output(&s.or("out", "ghost.json".to_string())?)?;
    write_json(&out, &GhostOutput { e0, kappa, eps_m, em: em.clone(), hard: hard.clone() })?;
    println!(
        "EM: t_min {} rebound {}; hard: t_min {} rebound {}; written to {}",
        em.t_min,
        em.rebound,
        hard.t_min,
        hard.rebound,
        out.display()
    );
    if em.predicted_teq.is_none() {
        println!("no crossover prediction: pass --kappa and --eps-m for signals beyond d=6");
    }
    Ok(())
}

pub fn scan(s: &mut Settings, ctx: &mut Ctx) -> R<()> {
    match s.req::<String>("kind")?.as_str() {
        "deviation" => scan_deviation(s, ctx),
        "highdim" => scan_highdim(s, ctx),
        "two-phase" => scan_two_phase(s, ctx),
        other => usage(format!("unknown scan kind '{other}' (deviation|highdim|two-phase)")),
    }
}

fn scan_deviation(s: &mut Settings, ctx: &mut Ctx) -> R<()> {
    let seed = ctx.seed("scan --kind deviation")?;
    let p = pop_setup(s)?;
    let ns: Vec<usize> = s.list_or("n", "500,2000,8000,32000")?;
    let trials: usize = s.or("trials", 16)?;
    let extra: usize = s.or("probes", 3)?;
    let grid = make_grid(p.truth.len(), p.nodes, p.sigma)?;
    let model = PopulationModel::new(&p.truth, &grid)?.with_latent(p.latent);
    let scale = if p.truth.norm() > 0.0 { p.truth.norm() } else { 1.0 };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - 1);
    let mut probes = vec![p.truth.clone(), Signal::zeros(p.truth.geometry())];
    for _ in 0..extra {
        let v: Vec<f64> = (0..p.truth.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        probes.push(synth::unit(&Signal::new(p.truth.geometry(), v)?)?.scaled(scale));
    }
    let table = deviation_estimate(&probes, &model, &ns, trials, seed)?;
    let mut csv = String::from("n,mean,stderr,trials\n");
    for r in &table.rows {
        let _ = writeln!(csv, "{},{},{},{}", r.n, fmt(r.mean), fmt(r.stderr), r.trials);
    }
    let out = ctx.output(&s.or("out", "scan.csv".to_string())?)?;
    write_text(&out, &csv)?;
    println!("deviation slope vs n {} (rms {}), written to {}", fmt(table.fit.slope), fmt(table.fit.rms), out.display());
    Ok(())
}

fn scan_highdim(s: &mut Settings, ctx: &mut Ctx) -> R<()> {
    let seed = ctx.seed("scan --kind highdim")?;
    let tau: f64 = s.or("tau", 1.0)?;
    let dims: Vec<usize> = s.list_or("dims", "16,32,64")?;
    let n: usize = s.or("n", 100_000)?;
    let trials: usize = s.or("trials", 8)?;
    let sigma: f64 = s.or("sigma", 1.0)?;
    let table = highdim_stagnation_scan(tau, &dims, n, trials, sigma, seed)?;
    let mut csv = String::from("d,mean,stderr,max_far_autocorr\n");
    for r in &table.rows {
        let _ = writeln!(csv, "{},{},{},{}", r.d, fmt(r.mean), fmt(r.stderr), fmt(r.max_far_autocorr));
    }
    let out = ctx.output(&s.or("out", "scan.csv".to_string())?)?;
    write_text(&out, &csv)?;
    println!("displacement strictly decreasing in d: {}; written to {}", table.strictly_decreasing, out.display());
    Ok(())
}

#[derive(Serialize)]
struct TwoPhaseOutput {
    fit: mra_core::population::TwoPhaseFit,
    errors: Vec<f64>,
}

fn scan_two_phase(s: &mut Settings, ctx: &mut Ctx) -> R<()> {
    let p = pop_setup(s)?;
    if s.raw("init").is_none() {
        return usage("two-phase scan needs --init");
    }
    let init = load_init(s, p.truth.geometry())?;
    let iters: usize = s.or("iters", 500)?;
    let grid = make_grid(p.truth.len(), p.nodes, p.sigma)?;
    let model = PopulationModel::new(&p.truth, &grid)?.with_latent(p.latent);
    let traj = population_trajectory(&model, &init, iters)?;
    let errors = traj.iter().map(|x| orbit_distance(x, &p.truth)).collect::<mra_core::Result<Vec<_>>>()?;
    let fit = two_phase_fit(&errors)?;
    let out = ctx.output(&s.or("out", "scan.json".to_string())?)?;
    write_json(&out, &TwoPhaseOutput { fit, errors })?;
    println!(
        "early rate {}, late rate {}, split at t={}; written to {}",
        fmt(fit.rate_early),
        fmt(fit.rate_late),
        fit.t_split,
        out.display()
    );
    Ok(())
}
