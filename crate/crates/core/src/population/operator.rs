//! Population EM operator, its Jacobian, and the pure-noise contraction factors.
//!
//! Expectations over the noise use a [`QuadratureGrid`]; the latent shift of
//! the truth is averaged as a finite sum over the group.

use nalgebra::DMatrix;

use super::quadrature::QuadratureGrid;
use crate::error::{invalid, MraError, Result};
use crate::estimators::softmax_in_place;
use crate::par;
use crate::signal::{dft, Geometry, Signal};

const NODE_CHUNK: usize = 2048;

/// How the latent shift of the truth is averaged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LatentAverage {
    /// `(1/d) sum_S` over every shift.
    #[default]
    Exact,
    /// Only `S = 0`. The tensor grid is invariant under cyclic permutation of
    /// coordinates, so each term of the exact sum is a relabelling of this
    /// one; the two agree up to rounding at `1/d` of the cost.
    Reduced,
}

#[derive(Clone, Debug)]
pub struct PopulationModel<'g> {
    x_star: Signal,
    grid: &'g QuadratureGrid,
    latent: LatentAverage,
    /// `unshift[l * d + j]`: index of `[T_l^{-1} y]_j`.
    unshift: Vec<usize>,
    /// Row `S` is `T_S x*`.
    star_shifts: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct JacobianMatrix {
    pub matrix: DMatrix<f64>,
    pub x: Signal,
    pub x_star: Signal,
    pub sigma: f64,
}

impl<'g> PopulationModel<'g> {
    pub fn new(x_star: &Signal, grid: &'g QuadratureGrid) -> Result<Self> {
        let d = x_star.len();
        if !matches!(x_star.geometry(), Geometry::Line { .. }) {
            return Err(MraError::UnsupportedGeometry("population operator needs a line signal".into()));
        }
        if grid.d() != d {
            return Err(MraError::GeometryMismatch(format!("grid has d={}, truth has d={d}", grid.d())));
        }
        let geo = x_star.geometry();
        let mut unshift = Vec::with_capacity(d * d);
        for l in 0..d {
            let li = geo.inverse(l);
            for j in 0..d {
                unshift.push(geo.source(j, li));
            }
        }
        let star_shifts = (0..d).flat_map(|s| x_star.shifted(s).into_values()).collect();
        Ok(PopulationModel { x_star: x_star.clone(), grid, latent: LatentAverage::Exact, unshift, star_shifts })
    }

    pub fn with_latent(mut self, latent: LatentAverage) -> Self {
        self.latent = latent;
        self
    }

    pub fn x_star(&self) -> &Signal {
        &self.x_star
    }

    pub fn sigma(&self) -> f64 {
        self.grid.sigma()
    }

    pub fn grid(&self) -> &QuadratureGrid {
        self.grid
    }

    fn check(&self, x: &Signal) -> Result<()> {
        if x.geometry() != self.x_star.geometry() {
            return Err(MraError::GeometryMismatch(format!(
                "{:?} vs {:?}",
                x.geometry(),
                self.x_star.geometry()
            )));
        }
        Ok(())
    }

    /// Visits every (node, latent shift) sample `y` with its weight and the
    /// responsibilities of `x`, accumulating into a vector of length `width`.
    fn integrate<F>(&self, x: &Signal, width: usize, visit: F) -> Vec<f64>
    where
        F: Fn(&mut [f64], &[f64], &[f64], f64, &mut [f64]) + Sync + Send,
    {
        let d = x.len();
        let xs: Vec<f64> = (0..d).flat_map(|l| x.shifted(l).into_values()).collect();
        let inv_s2 = 1.0 / (self.sigma() * self.sigma());
        // With a zero truth every latent shift yields the same sample.
        let shifts = if self.latent == LatentAverage::Reduced || self.x_star.norm_sq() == 0.0 { 1 } else { d };
        let scale = 1.0 / shifts as f64;
        par::chunked_vec_sum(self.grid.len(), NODE_CHUNK, width, |acc, range| {
            let mut y = vec![0.0; d];
            let mut gamma = vec![0.0; d];
            let mut scratch = vec![0.0; d];
            for i in range {
                let xi = self.grid.node(i);
                let w = self.grid.weight(i) * scale;
                for s in 0..shifts {
                    let star = &self.star_shifts[s * d..(s + 1) * d];
                    for j in 0..d {
                        y[j] = star[j] + xi[j];
                    }
                    for (l, g) in gamma.iter_mut().enumerate() {
                        let row = &xs[l * d..(l + 1) * d];
                        let mut c = 0.0;
                        for j in 0..d {
                            c += y[j] * row[j];
                        }
                        *g = c * inv_s2;
                    }
                    softmax_in_place(&mut gamma);
                    visit(acc, &y, &gamma, w, &mut scratch);
                }
            }
        })
    }

    /// `M(x)`.
    pub fn em(&self, x: &Signal) -> Result<Signal> {
        self.check(x)?;
        let d = x.len();
        let out = self.integrate(x, d, |acc, y, gamma, w, _| {
            for (l, &g) in gamma.iter().enumerate() {
                let wg = w * g;
                let map = &self.unshift[l * d..(l + 1) * d];
                for (a, &s) in acc.iter_mut().zip(map) {
                    *a += wg * y[s];
                }
            }
        });
        Ok(Signal::from_raw(x.geometry(), out))
    }

    /// Jacobian of `M` in covariance form:
    /// `(1/sigma^2) E[sum_l gamma_l (z_l - zbar)(z_l - zbar)^T]`, `z_l = T_l^{-1} y`.
    pub fn jacobian(&self, x: &Signal) -> Result<JacobianMatrix> {
        self.check(x)?;
        let d = x.len();
        let upper = self.integrate(x, d * d, |acc, y, gamma, w, zbar| {
            zbar.iter_mut().for_each(|z| *z = 0.0);
            for (l, &g) in gamma.iter().enumerate() {
                let map = &self.unshift[l * d..(l + 1) * d];
                for (z, &s) in zbar.iter_mut().zip(map) {
                    *z += g * y[s];
                }
            }
            for (l, &g) in gamma.iter().enumerate() {
                let map = &self.unshift[l * d..(l + 1) * d];
                let wg = w * g;
                for a in 0..d {
                    let ea = y[map[a]] - zbar[a];
                    let f = wg * ea;
                    for b in a..d {
                        acc[a * d + b] += f * (y[map[b]] - zbar[b]);
                    }
                }
            }
        });
        let inv_s2 = 1.0 / (self.sigma() * self.sigma());
        let matrix = DMatrix::from_fn(d, d, |a, b| {
            let (i, j) = if a <= b { (a, b) } else { (b, a) };
            upper[i * d + j] * inv_s2
        });
        Ok(JacobianMatrix { matrix, x: x.clone(), x_star: self.x_star.clone(), sigma: self.sigma() })
    }

    /// Central-difference Jacobian of `M` with step `h = 1e-5 (1 + ||x||)`.
    pub fn jacobian_fd(&self, x: &Signal) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let d = x.len();
        let h = 1e-5 * (1.0 + x.norm());
        let mut j = DMatrix::zeros(d, d);
        for c in 0..d {
            let mut plus = x.values().to_vec();
            let mut minus = x.values().to_vec();
            plus[c] += h;
            minus[c] -= h;
            let mp = self.em(&Signal::from_raw(x.geometry(), plus))?;
            let mm = self.em(&Signal::from_raw(x.geometry(), minus))?;
            for r in 0..d {
                j[(r, c)] = (mp.values()[r] - mm.values()[r]) / (2.0 * h);
            }
        }
        Ok(j)
    }
}

pub fn population_em(x: &Signal, x_star: &Signal, sigma: f64, grid: &QuadratureGrid) -> Result<Signal> {
    check_sigma(sigma, grid)?;
    PopulationModel::new(x_star, grid)?.em(x)
}

pub fn population_jacobian(x: &Signal, x_star: &Signal, sigma: f64, grid: &QuadratureGrid) -> Result<JacobianMatrix> {
    check_sigma(sigma, grid)?;
    PopulationModel::new(x_star, grid)?.jacobian(x)
}

fn check_sigma(sigma: f64, grid: &QuadratureGrid) -> Result<()> {
    if sigma != grid.sigma() {
        return invalid(format!("grid built for sigma={}, asked for sigma={sigma}", grid.sigma()));
    }
    Ok(())
}

/// Pure-noise contraction factors `alpha_k = 1 - d sum_l cos(2 pi k l / d) E[gamma_0 gamma_l]`
/// for `k = 1..d-1`, with the expectation over `y = xi` at the grid's noise level.
pub fn alpha_factors(x: &Signal, grid: &QuadratureGrid) -> Result<Vec<f64>> {
    let d = x.len();
    let spec = dft(x);
    let floor = 1e-12 * x.norm();
    if let Some(k) = (1..d).find(|&k| spec.magnitude(k) <= floor) {
        return invalid(format!("alpha factors need X[{k}] != 0"));
    }
    let zero = Signal::zeros(x.geometry());
    let model = PopulationModel::new(&zero, grid)?;
    model.check(x)?;
    let pair = model.integrate(x, d, |acc, _y, gamma, w, _| {
        let wg0 = w * gamma[0];
        for (a, &g) in acc.iter_mut().zip(gamma) {
            *a += wg0 * g;
        }
    });
    Ok((1..d)
        .map(|k| {
            let s: f64 = (0..d)
                .map(|l| (2.0 * std::f64::consts::PI * ((k * l) % d) as f64 / d as f64).cos() * pair[l])
                .sum();
            1.0 - d as f64 * s
        })
        .collect())
}
