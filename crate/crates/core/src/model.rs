//! Synthetic data from the shift model `y_i = T_{l_i} x* + xi_i`.
//!
//! Randomness: observation `i` draws from its own ChaCha20 stream, selected by
//! `set_stream(i)` on a generator seeded from the run seed. The shift is drawn
//! first (uniform over the group), then `d` standard normals via the ziggurat
//! sampler of `rand_distr::StandardNormal`. Observations can therefore be
//! generated in any order or in parallel with identical results.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, MraError, Result};
use crate::io::load_signal;
use crate::par;
use crate::signal::{Geometry, ShiftIndex, Signal};
use crate::synth;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MRA-OBS\n";

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    geometry: Geometry,
    /// Row-major `n x d`.
    observations: Vec<f64>,
    sigma: f64,
    true_shifts: Vec<usize>,
    ground_truth: Signal,
    seed: u64,
}

impl ObservationSet {
    /// Assembles a set from explicit parts; `true_shifts` are flat group indices.
    pub fn from_parts(
        ground_truth: Signal,
        observations: Vec<f64>,
        sigma: f64,
        true_shifts: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        let geometry = ground_truth.geometry();
        let d = geometry.len();
        if observations.is_empty() || observations.len() % d != 0 {
            return invalid(format!("{} values do not form whole observations of length {d}", observations.len()));
        }
        let n = observations.len() / d;
        if true_shifts.len() != n {
            return invalid(format!("{} shifts for {n} observations", true_shifts.len()));
        }
        if let Some(&g) = true_shifts.iter().find(|&&g| g >= d) {
            return invalid(format!("shift {g} outside the group of order {d}"));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return invalid(format!("sigma must be finite and non-negative, got {sigma}"));
        }
        if observations.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite observation value");
        }
        Ok(ObservationSet { geometry, observations, sigma, true_shifts, ground_truth, seed })
    }

    /// Wraps observations with no known truth (zero truth, zero shifts recorded).
    pub fn from_observations(geometry: Geometry, observations: Vec<f64>, sigma: f64) -> Result<Self> {
        let n = observations.len() / geometry.len().max(1);
        Self::from_parts(Signal::zeros(geometry), observations, sigma, vec![0; n], 0)
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn d(&self) -> usize {
        self.geometry.len()
    }

    pub fn n(&self) -> usize {
        self.true_shifts.len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn ground_truth(&self) -> &Signal {
        &self.ground_truth
    }

    pub fn true_shifts(&self) -> &[usize] {
        &self.true_shifts
    }

    pub fn true_shift(&self, i: usize) -> ShiftIndex {
        self.geometry.shift_index(self.true_shifts[i])
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.observations[i * d..(i + 1) * d]
    }

    pub fn observation_signal(&self, i: usize) -> Signal {
        Signal::from_raw(self.geometry, self.observation(i).to_vec())
    }

    pub fn raw(&self) -> &[f64] {
        &self.observations
    }

    /// Keeps the observations listed in `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<ObservationSet> {
        let mut obs = Vec::with_capacity(idx.len() * self.d());
        for &i in idx {
            if i >= self.n() {
                return invalid(format!("observation index {i} out of range"));
            }
            obs.extend_from_slice(self.observation(i));
        }
        let shifts = idx.iter().map(|&i| self.true_shifts[i]).collect();
        Self::from_parts(self.ground_truth.clone(), obs, self.sigma, shifts, self.seed)
    }

    /// Entrywise average of the observations.
    pub fn sample_mean(&self) -> Signal {
        let d = self.d();
        let mut m = vec![0.0; d];
        for i in 0..self.n() {
            for (a, b) in m.iter_mut().zip(self.observation(i)) {
                *a += b;
            }
        }
        let n = self.n() as f64;
        Signal::from_raw(self.geometry, m.into_iter().map(|v| v / n).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TruthSource {
    File(PathBuf),
    Named(String),
    Values(Signal),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub geometry: Geometry,
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
    pub truth: TruthSource,
    /// When set, the truth is rescaled to this Euclidean norm.
    pub truth_norm: Option<f64>,
}

impl ModelConfig {
    pub fn resolve_truth(&self) -> Result<Signal> {
        let x = match &self.truth {
            TruthSource::File(p) => load_signal(p)?,
            TruthSource::Named(name) => synth::named(name, self.geometry)?,
            TruthSource::Values(s) => s.clone(),
        };
        if x.geometry() != self.geometry {
            return Err(MraError::GeometryMismatch(format!(
                "truth has geometry {:?}, config asks for {:?}",
                x.geometry(),
                self.geometry
            )));
        }
        match self.truth_norm {
            Some(t) if t == 0.0 => Ok(Signal::zeros(self.geometry)),
            Some(t) => Ok(synth::unit(&x)?.scaled(t)),
            None => Ok(x),
        }
    }
}

/// Per-observation generator: substream `i` of the run seed.
pub fn substream(seed: u64, i: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(i);
    rng
}

/// Draws `n` observations of `truth` at noise level `sigma`.
pub fn sample(truth: &Signal, n: usize, sigma: f64, seed: u64) -> Result<ObservationSet> {
    if n == 0 {
        return invalid("n must be at least 1");
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return invalid(format!("sigma must be finite and non-negative, got {sigma}"));
    }
    let geometry = truth.geometry();
    let d = geometry.len();
    let rows = par::map_indexed(n, |i| {
        let mut rng = substream(seed, i as u64);
        let g = rng.random_range(0..d);
        let mut y = truth.shifted(g).into_values();
        if sigma > 0.0 {
            for v in y.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += sigma * z;
            }
        }
        (g, y)
    });
    let mut obs = Vec::with_capacity(n * d);
    let mut shifts = Vec::with_capacity(n);
    for (g, y) in rows {
        shifts.push(g);
        obs.extend(y);
    }
    ObservationSet::from_parts(truth.clone(), obs, sigma, shifts, seed)
}

pub fn generate(cfg: &ModelConfig) -> Result<ObservationSet> {
    if cfg.geometry.is_empty() {
        return invalid("dimensions must be positive");
    }
    let truth = cfg.resolve_truth()?;
    sample(&truth, cfg.n, cfg.sigma, cfg.seed)
}

pub fn snr(x_star: &Signal, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return invalid(format!("snr needs sigma > 0, got {sigma}"));
    }
    Ok(x_star.norm_sq() / (x_star.len() as f64 * sigma * sigma))
}

#[derive(Serialize, Deserialize)]
struct PayloadLayout {
    ground_truth: usize,
    observations: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    geometry: Geometry,
    n: usize,
    sigma: f64,
    seed: u64,
    true_shifts: Vec<usize>,
    payload: PayloadLayout,
}

pub fn to_bytes(set: &ObservationSet) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        geometry: set.geometry,
        n: set.n(),
        sigma: set.sigma,
        seed: set.seed,
        true_shifts: set.true_shifts.clone(),
        payload: PayloadLayout { ground_truth: set.d(), observations: set.observations.len() },
    };
    let json = serde_json::to_vec(&header).map_err(|e| MraError::Parse(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + json.len() + 8 * (set.d() + set.observations.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in set.ground_truth.values().iter().chain(&set.observations) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ObservationSet> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(MraError::Corrupt("missing dataset magic".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| MraError::Corrupt("header truncated".into()))?;
    let raw: serde_json::Value =
        serde_json::from_slice(body).map_err(|e| MraError::Corrupt(format!("header is not JSON: {e}")))?;
    let version = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| MraError::Corrupt("header lacks format_version".into()))?;
    if version != FORMAT_VERSION as u64 {
        return Err(MraError::Version { found: version as u32, expected: FORMAT_VERSION });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| MraError::Corrupt(format!("bad header: {e}")))?;
    let d = header.geometry.len();
    if header.payload.ground_truth != d || header.payload.observations != header.n * d {
        return Err(MraError::Corrupt("payload layout disagrees with geometry".into()));
    }
    let payload = &bytes[12 + hlen..];
    let count = d + header.n * d;
    if payload.len() != 8 * count {
        return Err(MraError::Corrupt(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            8 * count
        )));
    }
    let vals: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let truth = Signal::new(header.geometry, vals[..d].to_vec())
        .map_err(|e| MraError::Corrupt(format!("ground truth: {e}")))?;
    ObservationSet::from_parts(truth, vals[d..].to_vec(), header.sigma, header.true_shifts, header.seed)
        .map_err(|e| MraError::Corrupt(e.to_string()))
}

pub fn save(set: &ObservationSet, path: &Path) -> Result<()> {
    let bytes = to_bytes(set)?;
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ObservationSet> {
    from_bytes(&fs::read(path)?)
}
