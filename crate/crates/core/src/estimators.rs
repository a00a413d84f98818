//! Finite-sample estimators: soft-assignment EM, hard assignment, momentum
//! mini-batch SGD, the log-likelihood, and trajectory recording.

use std::fmt::Debug;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{invalid, MraError, Result};
use crate::model::ObservationSet;
use crate::par;
use crate::signal::{check_same, normalized_mse, wrap_phase, FourierPlan, Geometry, Signal};

/// Observations per reduction chunk. Fixed so that sums do not depend on the
/// number of worker threads.
const OBS_CHUNK: usize = 32;

/// Above this dimension `Auto` correlates through the FFT.
const DIRECT_MAX_DIM: usize = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CorrelationPath {
    #[default]
    Auto,
    Fft,
    Direct,
}

/// Posterior weights over the group for one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities(Vec<f64>);

impl Responsibilities {
    pub fn weights(&self) -> &[f64] {
        &self.0
    }
}

/// Softmax with max-subtraction, in place.
pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for a in v.iter_mut() {
        *a = (*a - m).exp();
        s += *a;
    }
    for a in v.iter_mut() {
        *a /= s;
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

/// `<y, T_g x>` for every group element by direct inner products.
pub fn correlations_direct(x: &Signal, y: &Signal) -> Result<Vec<f64>> {
    check_same(x, y)?;
    let g = x.geometry();
    let d = x.len();
    Ok((0..d)
        .map(|s| (0..d).map(|j| y.values()[j] * x.values()[g.source(j, s)]).sum())
        .collect())
}

/// `<y, T_g x>` for every group element through the FFT.
pub fn correlations_fft(x: &Signal, y: &Signal) -> Result<Vec<f64>> {
    check_same(x, y)?;
    let plan = FourierPlan::new(x.geometry());
    Ok(crate::signal::shift_correlations(&plan, y, x))
}

pub fn responsibilities(x: &Signal, y: &Signal, sigma: f64) -> Result<Responsibilities> {
    if !(sigma > 0.0) {
        return invalid(format!("responsibilities need sigma > 0, got {sigma}"));
    }
    let mut c = if x.len() > DIRECT_MAX_DIM { correlations_fft(x, y)? } else { correlations_direct(x, y)? };
    let s2 = sigma * sigma;
    c.iter_mut().for_each(|v| *v /= s2);
    softmax_in_place(&mut c);
    Ok(Responsibilities(c))
}

/// Per-iteration view of the current estimate.
enum Template {
    /// Row `g` holds `T_g x`.
    Shifted(Vec<f64>),
    /// Unnormalized spectrum of `x`.
    Spectrum(Vec<Complex64>),
}

/// Observations prepared for repeated E-steps. With the FFT path each
/// observation's spectrum is computed once and reused across iterations.
pub struct EmEngine<'a> {
    data: &'a ObservationSet,
    geometry: Geometry,
    plan: Option<FourierPlan>,
    spectra: Vec<Complex64>,
    norms_sq: Vec<f64>,
    /// `unshift[g * d + j]` is the index of `[T_g^{-1} y]_j` in `y`.
    unshift: Vec<usize>,
    source: Vec<usize>,
}

impl<'a> EmEngine<'a> {
    pub fn new(data: &'a ObservationSet, path: CorrelationPath) -> Self {
        let geometry = data.geometry();
        let d = geometry.len();
        let use_fft = match path {
            CorrelationPath::Fft => true,
            CorrelationPath::Direct => false,
            CorrelationPath::Auto => d > DIRECT_MAX_DIM,
        };
        let mut unshift = Vec::with_capacity(d * d);
        for g in 0..d {
            let gi = geometry.inverse(g);
            for j in 0..d {
                unshift.push(geometry.source(j, gi));
            }
        }
        let norms_sq = (0..data.n()).map(|i| data.observation(i).iter().map(|v| v * v).sum()).collect();
        let (plan, spectra, source) = if use_fft {
            let plan = FourierPlan::new(geometry);
            let rows = par::map_indexed(data.n(), |i| {
                let mut b: Vec<Complex64> = data.observation(i).iter().map(|&v| Complex64::new(v, 0.0)).collect();
                plan.forward(&mut b, &mut Vec::new());
                b
            });
            (Some(plan), rows.concat(), Vec::new())
        } else {
            (None, Vec::new(), geometry.source_table())
        };
        EmEngine { data, geometry, plan, spectra, norms_sq, unshift, source }
    }

    pub fn data(&self) -> &ObservationSet {
        self.data
    }

    pub fn uses_fft(&self) -> bool {
        self.plan.is_some()
    }

    fn template(&self, x: &Signal) -> Template {
        let xv = x.values();
        match &self.plan {
            Some(plan) => {
                let mut b: Vec<Complex64> = xv.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                plan.forward(&mut b, &mut Vec::new());
                Template::Spectrum(b)
            }
            None => Template::Shifted(self.source.iter().map(|&s| xv[s]).collect()),
        }
    }

    /// Writes `<y_i, T_g x>` into `out`.
    fn correlations(&self, tpl: &Template, i: usize, out: &mut [f64], buf: &mut Vec<Complex64>, scratch: &mut Vec<Complex64>) {
        let d = self.geometry.len();
        match tpl {
            Template::Shifted(xs) => {
                let y = self.data.observation(i);
                for (g, o) in out.iter_mut().enumerate() {
                    let row = &xs[g * d..(g + 1) * d];
                    *o = y.iter().zip(row).map(|(a, b)| a * b).sum();
                }
            }
            Template::Spectrum(xh) => {
                let plan = self.plan.as_ref().unwrap();
                let yh = &self.spectra[i * d..(i + 1) * d];
                buf.clear();
                buf.extend(yh.iter().zip(xh).map(|(a, b)| a.conj() * b));
                plan.forward(buf, scratch);
                let inv = 1.0 / d as f64;
                for (o, c) in out.iter_mut().zip(buf.iter()) {
                    *o = c.re * inv;
                }
            }
        }
    }

    fn index_list(&self, subset: Option<&[usize]>) -> Result<Vec<usize>> {
        match subset {
            Some(s) => {
                if s.is_empty() {
                    return invalid("empty batch");
                }
                if let Some(&i) = s.iter().find(|&&i| i >= self.data.n()) {
                    return invalid(format!("observation index {i} out of range"));
                }
                Ok(s.to_vec())
            }
            None => Ok((0..self.data.n()).collect()),
        }
    }

    fn check_template(&self, x: &Signal) -> Result<()> {
        if x.geometry() != self.geometry {
            return Err(MraError::GeometryMismatch(format!(
                "estimate {:?} vs data {:?}",
                x.geometry(),
                self.geometry
            )));
        }
        Ok(())
    }

    /// `(1/|B|) sum_{i in B} sum_g gamma_g(x; y_i) T_g^{-1} y_i`; `None` means all observations.
    pub fn soft_average(&self, x: &Signal, sigma: f64, subset: Option<&[usize]>) -> Result<Signal> {
        if !(sigma > 0.0) {
            return invalid(format!("soft assignment needs sigma > 0, got {sigma}"));
        }
        self.check_template(x)?;
        let idx = self.index_list(subset)?;
        let d = self.geometry.len();
        let tpl = self.template(x);
        let inv_s2 = 1.0 / (sigma * sigma);
        let fft = self.plan.as_ref();
        let width = if fft.is_some() { 2 * d } else { d };
        let acc = par::chunked_vec_sum(idx.len(), OBS_CHUNK, width, |acc, range| {
            let mut c = vec![0.0; d];
            let mut buf = Vec::with_capacity(d);
            let mut scratch = Vec::new();
            for &i in &idx[range] {
                self.correlations(&tpl, i, &mut c, &mut buf, &mut scratch);
                c.iter_mut().for_each(|v| *v *= inv_s2);
                softmax_in_place(&mut c);
                match fft {
                    Some(plan) => {
                        buf.clear();
                        buf.extend(c.iter().map(|&v| Complex64::new(v, 0.0)));
                        plan.forward(&mut buf, &mut scratch);
                        let yh = &self.spectra[i * d..(i + 1) * d];
                        for k in 0..d {
                            let p = buf[k].conj() * yh[k];
                            acc[2 * k] += p.re;
                            acc[2 * k + 1] += p.im;
                        }
                    }
                    None => {
                        let y = self.data.observation(i);
                        for (g, &w) in c.iter().enumerate() {
                            let map = &self.unshift[g * d..(g + 1) * d];
                            for (a, &s) in acc.iter_mut().zip(map) {
                                *a += w * y[s];
                            }
                        }
                    }
                }
            }
        });
        let n = idx.len() as f64;
        let out = match fft {
            Some(plan) => {
                let mut b: Vec<Complex64> = acc.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
                plan.inverse(&mut b, &mut Vec::new());
                b.iter().map(|c| c.re / (d as f64 * n)).collect()
            }
            None => acc.into_iter().map(|v| v / n).collect(),
        };
        Ok(Signal::from_raw(self.geometry, out))
    }

    /// Best shift per observation; near-ties resolve to the smallest flat index.
    fn best_shift(c: &[f64], tol: f64) -> usize {
        let cmax = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        c.iter().position(|&v| v >= cmax - tol).unwrap_or(0)
    }

    pub fn hard_shifts(&self, x: &Signal) -> Result<Vec<usize>> {
        self.check_template(x)?;
        let d = self.geometry.len();
        let tpl = self.template(x);
        let xn = x.norm();
        Ok(par::map_indexed(self.data.n(), |i| {
            let mut c = vec![0.0; d];
            self.correlations(&tpl, i, &mut c, &mut Vec::new(), &mut Vec::new());
            Self::best_shift(&c, 1e-12 * xn * self.norms_sq[i].sqrt())
        }))
    }

    pub fn hard_average(&self, x: &Signal, subset: Option<&[usize]>) -> Result<Signal> {
        self.check_template(x)?;
        let idx = self.index_list(subset)?;
        let d = self.geometry.len();
        let tpl = self.template(x);
        let xn = x.norm();
        let acc = par::chunked_vec_sum(idx.len(), OBS_CHUNK, d, |acc, range| {
            let mut c = vec![0.0; d];
            let mut buf = Vec::with_capacity(d);
            let mut scratch = Vec::new();
            for &i in &idx[range] {
                self.correlations(&tpl, i, &mut c, &mut buf, &mut scratch);
                let g = Self::best_shift(&c, 1e-12 * xn * self.norms_sq[i].sqrt());
                let y = self.data.observation(i);
                let map = &self.unshift[g * d..(g + 1) * d];
                for (a, &s) in acc.iter_mut().zip(map) {
                    *a += y[s];
                }
            }
        });
        let n = idx.len() as f64;
        Ok(Signal::from_raw(self.geometry, acc.into_iter().map(|v| v / n).collect()))
    }

    pub fn log_likelihood(&self, x: &Signal, sigma: f64) -> Result<f64> {
        if !(sigma > 0.0) {
            return invalid(format!("log-likelihood needs sigma > 0, got {sigma}"));
        }
        self.check_template(x)?;
        let d = self.geometry.len();
        let n = self.data.n();
        let tpl = self.template(x);
        let s2 = sigma * sigma;
        let xn2 = x.norm_sq();
        let ln_d = (d as f64).ln();
        let total = par::chunked_fold(
            n,
            OBS_CHUNK,
            || 0.0,
            |acc: &mut f64, range| {
                let mut c = vec![0.0; d];
                let mut buf = Vec::with_capacity(d);
                let mut scratch = Vec::new();
                for i in range {
                    self.correlations(&tpl, i, &mut c, &mut buf, &mut scratch);
                    c.iter_mut().for_each(|v| *v /= s2);
                    *acc += log_sum_exp(&c) - ln_d - (self.norms_sq[i] + xn2) / (2.0 * s2);
                }
            },
            |a, b| *a += b,
        );
        Ok(total - 0.5 * (d * n) as f64 * (2.0 * std::f64::consts::PI * s2).ln())
    }
}

/// One EM iteration with the observation set's own noise level.
pub fn em_step(x: &Signal, data: &ObservationSet) -> Result<Signal> {
    em_step_with_sigma(x, data, data.sigma())
}

pub fn em_step_with_sigma(x: &Signal, data: &ObservationSet, sigma: f64) -> Result<Signal> {
    EmEngine::new(data, CorrelationPath::Auto).soft_average(x, sigma, None)
}

pub fn hard_step(x: &Signal, data: &ObservationSet) -> Result<Signal> {
    EmEngine::new(data, CorrelationPath::Auto).hard_average(x, None)
}

pub fn log_likelihood(x: &Signal, data: &ObservationSet) -> Result<f64> {
    EmEngine::new(data, CorrelationPath::Auto).log_likelihood(x, data.sigma())
}

/// Rule turning a gradient into the first/second moment estimates used by a step.
pub trait MomentRule: Debug + Send + Sync {
    /// Updates the running moments in place for step `t` (1-based) and returns
    /// the estimates that enter the update.
    fn update(&self, m: &mut [f64], v: &mut [f64], g: &[f64], beta1: f64, beta2: f64, t: u64) -> (Vec<f64>, Vec<f64>);
}

/// Exponential moving averages with bias correction.
#[derive(Clone, Copy, Debug, Default)]
pub struct AdaptiveMoments;

impl MomentRule for AdaptiveMoments {
    fn update(&self, m: &mut [f64], v: &mut [f64], g: &[f64], beta1: f64, beta2: f64, t: u64) -> (Vec<f64>, Vec<f64>) {
        for ((mi, vi), gi) in m.iter_mut().zip(v.iter_mut()).zip(g) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
        }
        let c1 = 1.0 - beta1.powi(t as i32);
        let c2 = 1.0 - beta2.powi(t as i32);
        (m.iter().map(|a| a / c1).collect(), v.iter().map(|a| a / c2).collect())
    }
}

/// Exponential moving averages without bias correction.
#[derive(Clone, Copy, Debug, Default)]
pub struct UncorrectedMoments;

impl MomentRule for UncorrectedMoments {
    fn update(&self, m: &mut [f64], v: &mut [f64], g: &[f64], beta1: f64, beta2: f64, _t: u64) -> (Vec<f64>, Vec<f64>) {
        for ((mi, vi), gi) in m.iter_mut().zip(v.iter_mut()).zip(g) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
        }
        (m.to_vec(), v.to_vec())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSchedule {
    /// `alpha0 * gamma^t`.
    Geometric { alpha0: f64, gamma: f64 },
    /// `alpha0 * exp(-gamma * t)`.
    Exponential { alpha0: f64, gamma: f64 },
    Constant(f64),
}

impl StepSchedule {
    pub fn rate(&self, t: u64) -> f64 {
        match *self {
            StepSchedule::Geometric { alpha0, gamma } => alpha0 * gamma.powf(t as f64),
            StepSchedule::Exponential { alpha0, gamma } => alpha0 * (-gamma * t as f64).exp(),
            StepSchedule::Constant(a) => a,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SgdConfig {
    pub batch_size: usize,
    pub schedule: StepSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub rule: Arc<dyn MomentRule>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            batch_size: 256,
            schedule: StepSchedule::Geometric { alpha0: 0.95, gamma: 0.99 },
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            rule: Arc::new(AdaptiveMoments),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SgdState {
    pub estimate: Signal,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of completed steps.
    pub t: u64,
    pub config: SgdConfig,
}

impl SgdState {
    pub fn new(init: Signal, config: SgdConfig) -> Self {
        let d = init.len();
        SgdState { estimate: init, m: vec![0.0; d], v: vec![0.0; d], t: 0, config }
    }
}

/// Stochastic gradient `x - batch soft-aligned average`.
pub fn sgd_gradient(x: &Signal, engine: &EmEngine<'_>, batch: &[usize], sigma: f64) -> Result<Vec<f64>> {
    let avg = engine.soft_average(x, sigma, Some(batch))?;
    Ok(x.values().iter().zip(avg.values()).map(|(a, b)| a - b).collect())
}

pub fn sgd_step(state: &SgdState, engine: &EmEngine<'_>, batch: &[usize], sigma: f64) -> Result<SgdState> {
    let g = sgd_gradient(&state.estimate, engine, batch, sigma)?;
    let mut next = state.clone();
    let cfg = &state.config;
    let (mh, vh) = cfg.rule.update(&mut next.m, &mut next.v, &g, cfg.beta1, cfg.beta2, state.t + 1);
    let alpha = cfg.schedule.rate(state.t);
    let vals = state
        .estimate
        .values()
        .iter()
        .zip(mh.iter().zip(&vh))
        .map(|(x, (m, v))| x - alpha * m / (v.sqrt() + cfg.eps))
        .collect();
    next.estimate = Signal::from_raw(state.estimate.geometry(), vals);
    next.t += 1;
    Ok(next)
}

/// Batches drawn without replacement within an epoch; each epoch is a fresh
/// permutation from the run seed.
pub struct BatchSchedule {
    n: usize,
    batch: usize,
    rng: ChaCha20Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSchedule {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        BatchSchedule { n, batch: batch.clamp(1, n.max(1)), rng, order: Vec::new(), pos: n }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.n {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        b
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorKind {
    Em,
    Hard,
    Sgd,
}

impl std::str::FromStr for EstimatorKind {
    type Err = MraError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "em" => Ok(EstimatorKind::Em),
            "hard" => Ok(EstimatorKind::Hard),
            "sgd" => Ok(EstimatorKind::Sgd),
            _ => invalid(format!("unknown algorithm '{s}' (em|hard|sgd)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    /// Noise level used by the estimator; defaults to the dataset's.
    pub sigma: Option<f64>,
    /// Frequencies (flat indices) whose phase and magnitude are recorded.
    pub freqs: Vec<usize>,
    /// Iterates are kept only while `d * (T + 1)` stays within this many values.
    pub iterate_budget: usize,
    pub record_loglik: bool,
    pub sgd: SgdConfig,
    pub seed: u64,
    pub path: CorrelationPath,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sigma: None,
            freqs: Vec::new(),
            iterate_budget: 1 << 22,
            record_loglik: true,
            sgd: SgdConfig::default(),
            seed: 0,
            path: CorrelationPath::Auto,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub t: usize,
    /// `None` when the dataset carries a zero ground truth.
    pub mse_orbit: Option<f64>,
    /// `None` when the likelihood is undefined (zero noise) or not requested.
    pub loglik: Option<f64>,
    pub walltime_s: f64,
    /// Wrapped phase difference to the initialization, per requested frequency.
    pub phase: Vec<f64>,
    pub magnitude: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub freqs: Vec<usize>,
    pub rows: Vec<TrajectoryRow>,
    /// All iterates `x^(0..T)` when they fit the budget.
    pub iterates: Option<Vec<Signal>>,
    pub last: Signal,
}

impl Trajectory {
    pub fn mse_curve(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mse_orbit.unwrap_or(f64::NAN)).collect()
    }

    pub fn loglik_curve(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loglik.unwrap_or(f64::NAN)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,mse_orbit,loglik,walltime_s");
        for k in &self.freqs {
            s.push_str(&format!(",phase_k{k}"));
        }
        for k in &self.freqs {
            s.push_str(&format!(",mag_k{k}"));
        }
        s.push('\n');
        let f = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:?}"));
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{:?}", r.t, f(r.mse_orbit), f(r.loglik), r.walltime_s));
            for p in &r.phase {
                s.push_str(&format!(",{p:?}"));
            }
            for m in &r.magnitude {
                s.push_str(&format!(",{m:?}"));
            }
            s.push('\n');
        }
        s
    }
}

struct Recorder<'e, 'a> {
    engine: &'e EmEngine<'a>,
    plan: FourierPlan,
    freqs: Vec<usize>,
    init_phase: Vec<f64>,
    sigma: f64,
    record_loglik: bool,
}

impl Recorder<'_, '_> {
    fn row(&self, t: usize, x: &Signal, wall: f64) -> Result<TrajectoryRow> {
        let truth = self.engine.data().ground_truth();
        let mse_orbit = if truth.norm_sq() > 0.0 { Some(normalized_mse(x, truth)?) } else { None };
        let loglik = if self.record_loglik && self.sigma > 0.0 {
            Some(self.engine.log_likelihood(x, self.sigma)?)
        } else {
            None
        };
        let spec = self.plan.dft(x);
        let phase = self
            .freqs
            .iter()
            .zip(&self.init_phase)
            .map(|(&k, &p0)| {
                let c = spec.coeffs()[k];
                if c.norm() == 0.0 || p0.is_nan() {
                    f64::NAN
                } else {
                    wrap_phase(c.arg() - p0)
                }
            })
            .collect();
        let magnitude = self.freqs.iter().map(|&k| spec.magnitude(k)).collect();
        Ok(TrajectoryRow { t, mse_orbit, loglik, walltime_s: wall, phase, magnitude })
    }
}

/// Runs `iters` iterations of the chosen estimator from `init`.
pub fn run(kind: EstimatorKind, init: &Signal, data: &ObservationSet, iters: usize, cfg: &RunConfig) -> Result<Trajectory> {
    if init.geometry() != data.geometry() {
        return Err(MraError::GeometryMismatch(format!("init {:?} vs data {:?}", init.geometry(), data.geometry())));
    }
    let d = init.len();
    if let Some(&k) = cfg.freqs.iter().find(|&&k| k >= d) {
        return invalid(format!("frequency {k} out of range for d={d}"));
    }
    let sigma = cfg.sigma.unwrap_or(data.sigma());
    if kind != EstimatorKind::Hard && !(sigma > 0.0) {
        return invalid("soft-assignment estimators need sigma > 0; pass an explicit sigma for noiseless data");
    }
    let engine = EmEngine::new(data, cfg.path);
    let plan = FourierPlan::new(init.geometry());
    let spec0 = plan.dft(init);
    let init_phase = cfg
        .freqs
        .iter()
        .map(|&k| if spec0.coeffs()[k].norm() == 0.0 { f64::NAN } else { spec0.phase(k) })
        .collect();
    let rec = Recorder { engine: &engine, plan, freqs: cfg.freqs.clone(), init_phase, sigma, record_loglik: cfg.record_loglik };

    let keep = d.saturating_mul(iters + 1) <= cfg.iterate_budget;
    let mut iterates = if keep { Some(vec![init.clone()]) } else { None };
    let mut rows = vec![rec.row(0, init, 0.0)?];
    let mut x = init.clone();
    let mut sgd = SgdState::new(init.clone(), cfg.sgd.clone());
    let mut batches = BatchSchedule::new(data.n(), cfg.sgd.batch_size, cfg.seed);
    for t in 1..=iters {
        let start = Instant::now();
        x = match kind {
            EstimatorKind::Em => engine.soft_average(&x, sigma, None)?,
            EstimatorKind::Hard => engine.hard_average(&x, None)?,
            EstimatorKind::Sgd => {
                let b = batches.next_batch();
                sgd = sgd_step(&sgd, &engine, &b, sigma)?;
                sgd.estimate.clone()
            }
        };
        let wall = start.elapsed().as_secs_f64();
        rows.push(rec.row(t, &x, wall)?);
        if let Some(v) = iterates.as_mut() {
            v.push(x.clone());
        }
    }
    Ok(Trajectory { freqs: cfg.freqs.clone(), rows, iterates, last: x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample;

    #[test]
    fn two_point_softmax() {
        let x = Signal::line(vec![1.0, 0.0]).unwrap();
        let r = responsibilities(&x, &x, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((r.weights()[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((r.weights()[0] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn zero_template_is_uniform() {
        let y = Signal::line(vec![0.3, -1.0, 2.0, 0.1, 0.0]).unwrap();
        let r = responsibilities(&Signal::zeros(y.geometry()), &y, 0.5).unwrap();
        for w in r.weights() {
            assert!((w - 0.2).abs() < 1e-15);
        }
        assert!(responsibilities(&y, &y, 0.0).is_err());
    }

    #[test]
    fn zero_template_gives_grand_mean() {
        let truth = Signal::line(vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let data = sample(&truth, 9, 0.8, 5).unwrap();
        let out = em_step(&Signal::zeros(truth.geometry()), &data).unwrap();
        let grand = data.raw().iter().sum::<f64>() / data.raw().len() as f64;
        for v in out.values() {
            assert!((v - grand).abs() < 1e-13);
        }
    }

    #[test]
    fn single_observation_hard_step() {
        let x = Signal::line(vec![3.0, 1.0, 0.0, -1.0, 0.5]).unwrap();
        let data = ObservationSet::from_observations(x.geometry(), x.values().to_vec(), 1.0).unwrap();
        assert_eq!(hard_step(&x, &data).unwrap(), x);
        let data2 = ObservationSet::from_observations(x.geometry(), x.shifted(2).into_values(), 1.0).unwrap();
        assert_eq!(hard_step(&x, &data2).unwrap(), x);
    }

    #[test]
    fn hard_ties_pick_smallest_index() {
        let x = Signal::line(vec![1.0, 1.0, 1.0]).unwrap();
        let data = ObservationSet::from_observations(x.geometry(), vec![1.0, 2.0, 3.0], 1.0).unwrap();
        let e = EmEngine::new(&data, CorrelationPath::Direct);
        assert_eq!(e.hard_shifts(&x).unwrap(), vec![0]);
    }

    #[test]
    fn single_shift_group_likelihood() {
        let x = Signal::line(vec![0.4]).unwrap();
        let data = ObservationSet::from_observations(x.geometry(), vec![1.5], 0.7).unwrap();
        let s2: f64 = 0.49;
        let expect = -(1.1f64 * 1.1) / (2.0 * s2) - 0.5 * (2.0 * std::f64::consts::PI * s2).ln();
        assert!((log_likelihood(&x, &data).unwrap() - expect).abs() < 1e-13);
    }

    #[test]
    fn schedules() {
        let g = StepSchedule::Geometric { alpha0: 0.95, gamma: 0.99 };
        assert!((g.rate(2) - 0.95 * 0.9801).abs() < 1e-15);
        let e = StepSchedule::Exponential { alpha0: 0.95, gamma: 0.99 };
        assert!((e.rate(1) - 0.95 * (-0.99f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn batches_cover_each_epoch_once() {
        let mut s = BatchSchedule::new(10, 5, 1);
        let mut seen: Vec<usize> = s.next_batch();
        seen.extend(s.next_batch());
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn zero_iterations_keep_only_init() {
        let truth = Signal::line(vec![1.0, 2.0, -1.0]).unwrap();
        let data = sample(&truth, 5, 1.0, 2).unwrap();
        let tr = run(EstimatorKind::Em, &truth, &data, 0, &RunConfig::default()).unwrap();
        assert_eq!(tr.rows.len(), 1);
        assert_eq!(tr.iterates.unwrap().len(), 1);
    }
}
