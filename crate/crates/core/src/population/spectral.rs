//! Fourier-basis view of the Jacobian: `J^ = F* J F` for odd `d`, its
//! `{k, -k}` blocks, closed-form block eigenpairs, and the second-order model.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use super::operator::JacobianMatrix;
use crate::error::{invalid, MraError, Result};
use crate::signal::{dft, twiddle, Geometry, Signal};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn odd_line(x: &Signal) -> Result<usize> {
    match x.geometry() {
        Geometry::Line { d } if d % 2 == 1 => Ok(d),
        g => Err(MraError::UnsupportedGeometry(format!("block spectra need an odd-length line, got {g:?}"))),
    }
}

/// `J^[k, l] = f_k^* J f_l` with `[f_k]_a = e^{2 pi i k a / d} / sqrt(d)`; row-major.
pub fn to_fourier_basis(j: &DMatrix<f64>) -> Vec<Complex64> {
    let d = j.nrows();
    // tmp[a, l] = sum_b J[a, b] e^{+2 pi i l b / d}
    let mut tmp = vec![c(0.0, 0.0); d * d];
    for a in 0..d {
        for l in 0..d {
            let mut s = c(0.0, 0.0);
            for b in 0..d {
                s += twiddle(l * b, d).conj() * j[(a, b)];
            }
            tmp[a * d + l] = s;
        }
    }
    let mut out = vec![c(0.0, 0.0); d * d];
    for k in 0..d {
        for l in 0..d {
            let mut s = c(0.0, 0.0);
            for a in 0..d {
                s += twiddle(k * a, d) * tmp[a * d + l];
            }
            out[k * d + l] = s / d as f64;
        }
    }
    out
}

/// Inverse of [`to_fourier_basis`] for a conjugate-symmetric operator; returns the real part.
pub fn from_fourier_basis(jh: &[Complex64], d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |a, b| {
        let mut s = c(0.0, 0.0);
        for k in 0..d {
            for l in 0..d {
                s += twiddle(k * a, d).conj() * jh[k * d + l] * twiddle(l * b, d);
            }
        }
        s.re / d as f64
    })
}

/// Second-order model of `J^` at `x* = beta v`, `||v|| = 1`: zero mean block,
/// diagonal `1 - (beta/sigma)^2 |V_k|^2`, coupling `-(beta/sigma)^2 V_k^2` at `[k, -k]`.
pub fn second_order_matrix(v: &Signal, beta: f64, sigma: f64) -> Result<Vec<Complex64>> {
    let d = odd_line(v)?;
    let vh = dft(v);
    let r = (beta / sigma).powi(2);
    let mut m = vec![c(0.0, 0.0); d * d];
    for k in 1..d {
        let vk = vh.coeffs()[k];
        m[k * d + k] = c(1.0 - r * vk.norm_sqr(), 0.0);
        m[k * d + (d - k)] = -(vk * vk) * r;
    }
    Ok(m)
}

/// Eigenpairs of the Hermitian matrix `[[p, b], [conj b, q]]`, smaller eigenvalue first.
/// Eigenvectors are unit length and phased so that their two entries are
/// complex conjugates whenever their moduli agree.
pub fn hermitian2_eigen(p: f64, q: f64, b: Complex64) -> [(f64, [Complex64; 2]); 2] {
    let mean = 0.5 * (p + q);
    let half = 0.5 * (p - q);
    let r = half.hypot(b.norm());
    let mut out = [(0.0, [c(0.0, 0.0); 2]); 2];
    for (slot, lam) in [mean - r, mean + r].into_iter().enumerate() {
        let v1 = [b, c(lam - p, 0.0)];
        let v2 = [c(lam - q, 0.0), b.conj()];
        let n1 = (v1[0].norm_sqr() + v1[1].norm_sqr()).sqrt();
        let n2 = (v2[0].norm_sqr() + v2[1].norm_sqr()).sqrt();
        let mut v = if n1 == 0.0 && n2 == 0.0 {
            // Scalar block: any orthonormal pair works.
            if slot == 0 { [c(1.0, 0.0), c(0.0, 0.0)] } else { [c(0.0, 0.0), c(1.0, 0.0)] }
        } else if n1 >= n2 {
            [v1[0] / n1, v1[1] / n1]
        } else {
            [v2[0] / n2, v2[1] / n2]
        };
        if v[0].norm() > 0.0 && v[1].norm() > 0.0 {
            let theta = -0.5 * (v[0].arg() + v[1].arg());
            let ph = Complex64::from_polar(1.0, theta);
            v = [v[0] * ph, v[1] * ph];
        }
        out[slot] = (lam, v);
    }
    out
}

/// Contracting direction `(e^{i phi}, e^{-i phi}) / sqrt 2`.
pub fn contracting_vector(phi: f64) -> [Complex64; 2] {
    let s = 0.5f64.sqrt();
    [Complex64::from_polar(s, phi), Complex64::from_polar(s, -phi)]
}

/// Flat direction `(e^{i phi}, -e^{-i phi}) / (i sqrt 2)`.
pub fn flat_vector(phi: f64) -> [Complex64; 2] {
    let s = 0.5f64.sqrt();
    let i = c(0.0, 1.0);
    [Complex64::from_polar(s, phi) / i, -Complex64::from_polar(s, -phi) / i]
}

/// `u^H B w` for the 2x2 block `[[p, b], [conj b, q]]`.
pub fn block_coupling(p: f64, q: f64, b: Complex64, u: &[Complex64; 2], w: &[Complex64; 2]) -> Complex64 {
    let bw0 = w[0] * p + b * w[1];
    let bw1 = b.conj() * w[0] + w[1] * q;
    u[0].conj() * bw0 + u[1].conj() * bw1
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ComplexValue {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for ComplexValue {
    fn from(z: Complex64) -> Self {
        ComplexValue { re: z.re, im: z.im }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralBlock {
    pub k: usize,
    /// `J^[k, k]`.
    pub a_k: f64,
    /// `J^[-k, -k]`; equals `a_k` for a real symmetric Jacobian.
    pub a_minus_k: f64,
    /// `J^[k, -k]`.
    #[serde(serialize_with = "ser_complex")]
    pub b_k: Complex64,
    pub lambda_u: f64,
    pub lambda_w: f64,
    #[serde(serialize_with = "ser_pair")]
    pub u_k: [Complex64; 2],
    #[serde(serialize_with = "ser_pair")]
    pub w_k: [Complex64; 2],
    /// Phase of the evaluation point's coefficient `X[k]`.
    pub phi_k: f64,
}

fn ser_complex<S: serde::Serializer>(z: &Complex64, s: S) -> std::result::Result<S::Ok, S::Error> {
    ComplexValue::from(*z).serialize(s)
}

fn ser_pair<S: serde::Serializer>(z: &[Complex64; 2], s: S) -> std::result::Result<S::Ok, S::Error> {
    [ComplexValue::from(z[0]), ComplexValue::from(z[1])].serialize(s)
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralReport {
    pub d: usize,
    pub blocks: Vec<SpectralBlock>,
    pub mean_eigenvalue: f64,
    /// Largest eigenvalue modulus over the non-mean blocks.
    pub rho: f64,
    /// Frobenius norm of everything outside the mean and `{k, -k}` blocks.
    pub off_block_norm: f64,
    /// Max imaginary part found on the diagonal of `J^` (zero for symmetric `J`).
    pub diag_imag_max: f64,
}

pub fn fourier_blocks(jac: &JacobianMatrix) -> Result<SpectralReport> {
    let d = odd_line(&jac.x)?;
    if jac.matrix.nrows() != d || jac.matrix.ncols() != d {
        return invalid("Jacobian size disagrees with its evaluation point");
    }
    let jh = to_fourier_basis(&jac.matrix);
    let xh = dft(&jac.x);
    let mut blocks = Vec::with_capacity((d - 1) / 2);
    let mut off = 0.0;
    let mut diag_imag_max: f64 = 0.0;
    for k in 0..d {
        diag_imag_max = diag_imag_max.max(jh[k * d + k].im.abs());
        for l in 0..d {
            let in_block = k == l || (k != 0 && l == d - k);
            if !in_block {
                off += jh[k * d + l].norm_sqr();
            }
        }
    }
    let mut rho: f64 = 0.0;
    for k in 1..=(d - 1) / 2 {
        let p = jh[k * d + k].re;
        let q = jh[(d - k) * d + (d - k)].re;
        let b = jh[k * d + (d - k)];
        let [(lu, u), (lw, w)] = hermitian2_eigen(p, q, b);
        rho = rho.max(lu.abs()).max(lw.abs());
        let phi = if xh.coeffs()[k].norm() > 0.0 { xh.phase(k) } else { f64::NAN };
        blocks.push(SpectralBlock { k, a_k: p, a_minus_k: q, b_k: b, lambda_u: lu, lambda_w: lw, u_k: u, w_k: w, phi_k: phi });
    }
    Ok(SpectralReport { d, blocks, mean_eigenvalue: jh[0].re, rho, off_block_norm: off.sqrt(), diag_imag_max })
}

/// Operator (spectral) norm of a real matrix.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Largest eigenvalue modulus of a Jacobian of any length.
pub fn spectral_radius(jac: &JacobianMatrix) -> f64 {
    jac.matrix.clone().symmetric_eigen().eigenvalues.iter().fold(0.0, |a: f64, v| a.max(v.abs()))
}

/// `||J^ - J^_2||_op` for a Jacobian at `x* = beta v`.
pub fn second_order_gap(jac: &JacobianMatrix, v: &Signal, beta: f64) -> Result<f64> {
    let d = odd_line(v)?;
    let j2 = from_fourier_basis(&second_order_matrix(v, beta, jac.sigma)?, d);
    Ok(operator_norm(&(&jac.matrix - j2)))
}
