//! Signals on the cyclic group, the unitary DFT, and group-invariant metrics.
//!
//! A [`Signal`] is a real vector indexed by either `Z_d` (a line) or
//! `Z_H x Z_W` (an image stored row-major). Group elements are addressed by a
//! flat index `g`; for grids `g = row * W + col`. The shift action is
//! `[T_g z]_j = z_{j - g}` with the subtraction taken per axis.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, MraError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Geometry {
    Line { d: usize },
    Grid { h: usize, w: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShiftIndex {
    Line(usize),
    Grid(usize, usize),
}

impl Geometry {
    pub fn len(&self) -> usize {
        match *self {
            Geometry::Line { d } => d,
            Geometry::Grid { h, w } => h * w,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of group elements; equal to the signal length for both geometries.
    pub fn group_order(&self) -> usize {
        self.len()
    }

    /// (rows, cols); a line is a single row.
    pub fn dims(&self) -> (usize, usize) {
        match *self {
            Geometry::Line { d } => (1, d),
            Geometry::Grid { h, w } => (h, w),
        }
    }

    pub fn flat(&self, s: ShiftIndex) -> Result<usize> {
        match (*self, s) {
            (Geometry::Line { d }, ShiftIndex::Line(l)) if l < d => Ok(l),
            (Geometry::Grid { h, w }, ShiftIndex::Grid(r, c)) if r < h && c < w => Ok(r * w + c),
            _ => Err(MraError::GeometryMismatch(format!("shift {s:?} is not an element of {self:?}"))),
        }
    }

    pub fn shift_index(&self, g: usize) -> ShiftIndex {
        match *self {
            Geometry::Line { .. } => ShiftIndex::Line(g),
            Geometry::Grid { w, .. } => ShiftIndex::Grid(g / w, g % w),
        }
    }

    pub fn compose(&self, a: usize, b: usize) -> usize {
        let (h, w) = self.dims();
        let r = (a / w + b / w) % h;
        let c = (a % w + b % w) % w;
        r * w + c
    }

    pub fn inverse(&self, g: usize) -> usize {
        let (h, w) = self.dims();
        let r = (h - g / w) % h;
        let c = (w - g % w) % w;
        r * w + c
    }

    /// Index `i` such that `[T_g z]_j = z_i`.
    #[inline]
    pub fn source(&self, j: usize, g: usize) -> usize {
        let (h, w) = self.dims();
        let r = (j / w + h - g / w) % h;
        let c = (j % w + w - g % w) % w;
        r * w + c
    }

    /// Table `t[g * d + j] = source(j, g)`, used by inner loops.
    pub fn source_table(&self) -> Vec<usize> {
        let d = self.len();
        let mut t = Vec::with_capacity(d * d);
        for g in 0..d {
            for j in 0..d {
                t.push(self.source(j, g));
            }
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    values: Vec<f64>,
    geometry: Geometry,
}

impl Signal {
    pub fn new(geometry: Geometry, values: Vec<f64>) -> Result<Self> {
        if geometry.is_empty() {
            return invalid("signal dimension must be positive");
        }
        if values.len() != geometry.len() {
            return Err(MraError::GeometryMismatch(format!(
                "{} values for geometry {geometry:?}",
                values.len()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite entry at index {j}"));
        }
        Ok(Signal { values, geometry })
    }

    pub fn line(values: Vec<f64>) -> Result<Self> {
        Signal::new(Geometry::Line { d: values.len() }, values)
    }

    pub fn grid(h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        Signal::new(Geometry::Grid { h, w }, values)
    }

    pub fn zeros(geometry: Geometry) -> Self {
        Signal { values: vec![0.0; geometry.len()], geometry }
    }

    /// Builds a signal without the finiteness check; used by estimators whose
    /// arithmetic cannot introduce non-finite values from finite inputs.
    pub(crate) fn from_raw(geometry: Geometry, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), geometry.len());
        Signal { values, geometry }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &Signal) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, a: f64) -> Signal {
        Signal::from_raw(self.geometry, self.values.iter().map(|v| a * v).collect())
    }

    pub fn add(&self, other: &Signal) -> Result<Signal> {
        check_same(self, other)?;
        Ok(Signal::from_raw(
            self.geometry,
            self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, other: &Signal) -> Result<Signal> {
        check_same(self, other)?;
        Ok(Signal::from_raw(
            self.geometry,
            self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        ))
    }

    /// `T_g self` for a flat group index.
    pub fn shifted(&self, g: usize) -> Signal {
        let d = self.len();
        let g = g % d;
        let vals = (0..d).map(|j| self.values[self.geometry.source(j, g)]).collect();
        Signal::from_raw(self.geometry, vals)
    }

    /// `T_g^{-1} self`.
    pub fn unshifted(&self, g: usize) -> Signal {
        self.shifted(self.geometry.inverse(g % self.len()))
    }
}

pub(crate) fn check_same(a: &Signal, b: &Signal) -> Result<()> {
    if a.geometry != b.geometry {
        return Err(MraError::GeometryMismatch(format!("{:?} vs {:?}", a.geometry, b.geometry)));
    }
    Ok(())
}

pub fn cyclic_shift(x: &Signal, shift: ShiftIndex) -> Result<Signal> {
    let g = x.geometry.flat(shift)?;
    Ok(x.shifted(g))
}

pub fn mean_project(x: &Signal) -> Signal {
    let m = x.values.iter().sum::<f64>() / x.len() as f64;
    Signal::from_raw(x.geometry, vec![m; x.len()])
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    coeffs: Vec<Complex64>,
    geometry: Geometry,
}

impl Spectrum {
    pub fn new(geometry: Geometry, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != geometry.len() {
            return Err(MraError::GeometryMismatch(format!(
                "{} coefficients for geometry {geometry:?}",
                coeffs.len()
            )));
        }
        Ok(Spectrum { coeffs, geometry })
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn magnitude(&self, k: usize) -> f64 {
        self.coeffs[k].norm()
    }

    pub fn phase(&self, k: usize) -> f64 {
        self.coeffs[k].arg()
    }

    /// Index of the frequency `-k`.
    pub fn conjugate_index(&self, k: usize) -> usize {
        self.geometry.inverse(k)
    }
}

/// Cached forward/inverse plans for one geometry. Plans are immutable once
/// built, so one plan can be shared across threads.
#[derive(Clone)]
pub struct FourierPlan {
    geometry: Geometry,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FourierPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FourierPlan").field("geometry", &self.geometry).finish()
    }
}

impl FourierPlan {
    pub fn new(geometry: Geometry) -> Self {
        let (h, w) = geometry.dims();
        let mut planner = FftPlanner::new();
        FourierPlan {
            geometry,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    /// Unnormalized forward transform, `sum_j z_j e^{-2 pi i k j / d}` per axis.
    pub fn forward(&self, buf: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        self.apply(buf, scratch, &self.row_fwd, &self.col_fwd);
    }

    /// Unnormalized inverse transform (no 1/d factor).
    pub fn inverse(&self, buf: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        self.apply(buf, scratch, &self.row_inv, &self.col_inv);
    }

    fn apply(
        &self,
        buf: &mut [Complex64],
        scratch: &mut Vec<Complex64>,
        row: &Arc<dyn Fft<f64>>,
        col: &Arc<dyn Fft<f64>>,
    ) {
        let (h, w) = self.geometry.dims();
        debug_assert_eq!(buf.len(), h * w);
        if w > 1 {
            row.process(buf);
        }
        if h > 1 {
            scratch.resize(h * w, Complex64::new(0.0, 0.0));
            for r in 0..h {
                for c in 0..w {
                    scratch[c * h + r] = buf[r * w + c];
                }
            }
            col.process(scratch);
            for r in 0..h {
                for c in 0..w {
                    buf[r * w + c] = scratch[c * h + r];
                }
            }
        }
    }

    pub fn dft(&self, x: &Signal) -> Spectrum {
        let mut buf: Vec<Complex64> = x.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut scratch = Vec::new();
        self.forward(&mut buf, &mut scratch);
        let s = 1.0 / (x.len() as f64).sqrt();
        buf.iter_mut().for_each(|c| *c *= s);
        Spectrum { coeffs: buf, geometry: x.geometry }
    }

    /// Inverse unitary DFT; the imaginary residue of a non-conjugate-symmetric
    /// spectrum is discarded.
    pub fn idft(&self, spec: &Spectrum) -> Signal {
        let mut buf = spec.coeffs.clone();
        let mut scratch = Vec::new();
        self.inverse(&mut buf, &mut scratch);
        let s = 1.0 / (spec.len() as f64).sqrt();
        Signal::from_raw(spec.geometry, buf.iter().map(|c| c.re * s).collect())
    }
}

pub fn dft(x: &Signal) -> Spectrum {
    FourierPlan::new(x.geometry).dft(x)
}

pub fn idft(spec: &Spectrum) -> Signal {
    FourierPlan::new(spec.geometry).idft(spec)
}

/// `e^{-2 pi i m / n}` with the exponent reduced mod n before the trig call.
#[inline]
pub(crate) fn twiddle(m: usize, n: usize) -> Complex64 {
    let a = -2.0 * PI * ((m % n) as f64) / n as f64;
    Complex64::new(a.cos(), a.sin())
}

/// Unitary DFT by direct summation. Quadratic cost; kept as the reference for
/// the FFT path.
pub fn dft_direct(x: &Signal) -> Spectrum {
    let (h, w) = x.geometry.dims();
    let d = h * w;
    let s = 1.0 / (d as f64).sqrt();
    let mut coeffs = vec![Complex64::new(0.0, 0.0); d];
    for k1 in 0..h {
        for k2 in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for j1 in 0..h {
                for j2 in 0..w {
                    let t = twiddle(k1 * j1, h) * twiddle(k2 * j2, w);
                    acc += t * x.values[j1 * w + j2];
                }
            }
            coeffs[k1 * w + k2] = acc * s;
        }
    }
    Spectrum { coeffs, geometry: x.geometry }
}

/// Orbit distance by enumerating every group element.
pub fn orbit_distance_brute(u: &Signal, v: &Signal) -> Result<f64> {
    check_same(u, v)?;
    let mut best = f64::INFINITY;
    for g in 0..u.len() {
        let vs = v.shifted(g);
        let dist: f64 = u.values.iter().zip(&vs.values).map(|(a, b)| (a - b) * (a - b)).sum();
        best = best.min(dist);
    }
    Ok(best.sqrt())
}

/// All correlations `<u, T_g v>` via the FFT.
pub fn shift_correlations(plan: &FourierPlan, u: &Signal, v: &Signal) -> Vec<f64> {
    let d = u.len();
    let mut uh: Vec<Complex64> = u.values.iter().map(|&a| Complex64::new(a, 0.0)).collect();
    let mut vh: Vec<Complex64> = v.values.iter().map(|&a| Complex64::new(a, 0.0)).collect();
    let mut scratch = Vec::new();
    plan.forward(&mut uh, &mut scratch);
    plan.forward(&mut vh, &mut scratch);
    let mut p: Vec<Complex64> = uh.iter().zip(&vh).map(|(a, b)| a.conj() * b).collect();
    plan.forward(&mut p, &mut scratch);
    p.iter().map(|c| c.re / d as f64).collect()
}

/// Orbit distance through FFT cross-correlation. Candidate shifts whose
/// correlation is within rounding of the maximum are re-evaluated directly,
/// so an exact orbit match returns exactly zero.
pub fn orbit_distance(u: &Signal, v: &Signal) -> Result<f64> {
    check_same(u, v)?;
    let plan = FourierPlan::new(u.geometry);
    let corr = shift_correlations(&plan, u, v);
    let cmax = corr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 * (u.norm() * v.norm()).max(f64::MIN_POSITIVE);
    let mut best = f64::INFINITY;
    for (g, &c) in corr.iter().enumerate() {
        if c >= cmax - tol {
            let vs = v.shifted(g);
            let dist: f64 = u.values.iter().zip(&vs.values).map(|(a, b)| (a - b) * (a - b)).sum();
            best = best.min(dist);
        }
    }
    Ok(best.sqrt())
}

/// Single-realization normalized error `d_orb(est, reference)^2 / ||reference||^2`.
pub fn normalized_mse(estimate: &Signal, reference: &Signal) -> Result<f64> {
    let n2 = reference.norm_sq();
    if n2 == 0.0 {
        return invalid("normalized_mse: reference has zero norm");
    }
    let d = orbit_distance(estimate, reference)?;
    Ok(d * d / n2)
}

/// Wraps an angle to the principal interval (-pi, pi].
pub fn wrap_phase(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

pub fn phase_difference_sq(a: &Spectrum, b: &Spectrum, k: usize) -> Result<f64> {
    if a.geometry != b.geometry {
        return Err(MraError::GeometryMismatch(format!("{:?} vs {:?}", a.geometry, b.geometry)));
    }
    if k >= a.len() {
        return invalid(format!("frequency {k} out of range"));
    }
    if a.coeffs[k].norm() == 0.0 || b.coeffs[k].norm() == 0.0 {
        return Err(MraError::UndefinedPhase(k));
    }
    let dphi = wrap_phase(a.phase(k) - b.phase(k));
    Ok(dphi * dphi)
}

pub fn pearson_cc(u: &Signal, v: &Signal) -> Result<f64> {
    check_same(u, v)?;
    let n = u.len() as f64;
    let mu = u.values.iter().sum::<f64>() / n;
    let mv = v.values.iter().sum::<f64>() / n;
    let (mut suv, mut suu, mut svv) = (0.0, 0.0, 0.0);
    for (a, b) in u.values.iter().zip(&v.values) {
        let (da, db) = (a - mu, b - mv);
        suv += da * db;
        suu += da * da;
        svv += db * db;
    }
    if suu == 0.0 || svv == 0.0 {
        return invalid("pearson_cc: constant input");
    }
    Ok((suv / (suu * svv).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_examples() {
        let x = Signal::line(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(cyclic_shift(&x, ShiftIndex::Line(0)).unwrap().values(), &[1.0, 2.0, 3.0]);
        assert_eq!(cyclic_shift(&x, ShiftIndex::Line(1)).unwrap().values(), &[3.0, 1.0, 2.0]);
        let g = Signal::grid(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(cyclic_shift(&g, ShiftIndex::Grid(1, 0)).unwrap().values(), &[3.0, 4.0, 1.0, 2.0]);
        assert!(cyclic_shift(&x, ShiftIndex::Grid(0, 0)).is_err());
        assert!(cyclic_shift(&x, ShiftIndex::Line(3)).is_err());
    }

    #[test]
    fn ones_spectrum() {
        let x = Signal::line(vec![1.0; 4]).unwrap();
        let s = dft(&x);
        assert!((s.coeffs()[0] - Complex64::new(2.0, 0.0)).norm() < 1e-14);
        for k in 1..4 {
            assert!(s.coeffs()[k].norm() < 1e-14);
        }
    }

    #[test]
    fn wrapping_convention() {
        let a = Spectrum::new(Geometry::Line { d: 1 }, vec![Complex64::from_polar(1.0, PI - 0.1)]).unwrap();
        let b = Spectrum::new(Geometry::Line { d: 1 }, vec![Complex64::from_polar(1.0, -PI + 0.1)]).unwrap();
        let v = phase_difference_sq(&a, &b, 0).unwrap();
        assert!((v - 0.04).abs() < 1e-12);
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
    }

    #[test]
    fn zero_coefficient_phase_is_an_error() {
        let a = Spectrum::new(Geometry::Line { d: 1 }, vec![Complex64::new(0.0, 0.0)]).unwrap();
        assert!(matches!(phase_difference_sq(&a, &a, 0), Err(MraError::UndefinedPhase(0))));
    }

    #[test]
    fn mean_projection_example() {
        let x = Signal::line(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(mean_project(&x).values(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn nmse_examples() {
        let x = Signal::line(vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(normalized_mse(&x, &x).unwrap(), 0.0);
        assert_eq!(normalized_mse(&x.shifted(3), &x).unwrap(), 0.0);
        let z = Signal::zeros(x.geometry());
        assert!((normalized_mse(&z, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!(normalized_mse(&x, &z).is_err());
    }

    #[test]
    fn pearson_examples() {
        let x = Signal::line(vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        assert!((pearson_cc(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson_cc(&x, &x.scaled(-1.0)).unwrap() + 1.0).abs() < 1e-15);
        let c = Signal::line(vec![2.0; 4]).unwrap();
        assert!(pearson_cc(&x, &c).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Signal::line(vec![1.0, f64::NAN]).is_err());
        assert!(Signal::grid(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn group_inverse_and_compose() {
        let g = Geometry::Grid { h: 3, w: 4 };
        for a in 0..12 {
            assert_eq!(g.compose(a, g.inverse(a)), 0);
            for b in 0..12 {
                assert_eq!(g.compose(a, b), g.compose(b, a));
            }
        }
    }
}
