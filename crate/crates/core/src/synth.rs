//! Named synthetic ground-truth signals.

use std::f64::consts::PI;

use crate::error::{MraError, Result};
use crate::signal::{Geometry, Signal};

pub const NAMES: &[&str] = &["bump", "steps", "sine", "pair-a", "pair-b"];

fn gaussian(dx: f64, width: f64) -> f64 {
    (-(dx * dx) / (2.0 * width * width)).exp()
}

/// Cyclic distance between positions on a ring of size n.
fn ring_dist(a: f64, b: f64, n: f64) -> f64 {
    let t = (a - b).rem_euclid(n);
    t.min(n - t)
}

fn blobs(h: usize, w: usize, spec: &[(f64, f64, f64, f64)]) -> Vec<f64> {
    let mut v = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let (y, x) = (r as f64 / h as f64, c as f64 / w as f64);
            v[r * w + c] = spec
                .iter()
                .map(|&(cy, cx, s, amp)| {
                    let dy = ring_dist(y, cy, 1.0);
                    let dx = ring_dist(x, cx, 1.0);
                    amp * (-(dy * dy + dx * dx) / (2.0 * s * s)).exp()
                })
                .sum();
        }
    }
    v
}

/// Builds a named waveform for the requested geometry.
///
/// `pair-a` and `pair-b` are two unrelated blob images intended as the
/// truth/template pair of the noise-fitting experiments.
pub fn named(name: &str, geometry: Geometry) -> Result<Signal> {
    let d = geometry.len();
    let (h, w) = geometry.dims();
    let vals: Vec<f64> = match name {
        "bump" => {
            let n = d as f64;
            (0..d).map(|j| gaussian(ring_dist(j as f64, n / 3.0, n), (n / 8.0).max(0.6))).collect()
        }
        "steps" => (0..d)
            .map(|j| match (4 * j) / d {
                0 => 1.0,
                1 => -0.5,
                2 => 0.25,
                _ => 0.0,
            })
            .collect(),
        "sine" => (0..d)
            .map(|j| (2.0 * PI * j as f64 / d as f64).sin() + 0.5 * (4.0 * PI * j as f64 / d as f64).cos())
            .collect(),
        "pair-a" => blobs(
            h,
            w,
            &[(0.3, 0.35, 0.12, 1.0), (0.65, 0.55, 0.08, 0.7), (0.4, 0.75, 0.05, 0.5)],
        ),
        "pair-b" => blobs(
            h,
            w,
            &[(0.55, 0.3, 0.06, 0.9), (0.25, 0.6, 0.15, 0.6), (0.8, 0.8, 0.07, 0.8)],
        ),
        _ => return Err(MraError::InvalidArgument(format!("unknown waveform '{name}' (known: {NAMES:?})"))),
    };
    Signal::new(geometry, vals)
}

/// Scales `x` to unit Euclidean norm.
pub fn unit(x: &Signal) -> Result<Signal> {
    let n = x.norm();
    if n == 0.0 {
        return Err(MraError::InvalidArgument("cannot normalise a zero signal".into()));
    }
    Ok(x.scaled(1.0 / n))
}
