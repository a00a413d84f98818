//! Tensor-product Gauss-Hermite rules for expectations under `N(0, sigma^2 I_d)`.

use std::f64::consts::PI;

use crate::error::{invalid, MraError, Result};

/// Largest tensor grid `make_grid` will allocate.
pub const MAX_NODES: usize = 2_000_000;

/// Gauss-Hermite nodes and weights for the weight function `exp(-x^2)`,
/// sorted ascending. Newton iteration on the orthonormal Hermite recurrence.
pub fn gauss_hermite(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    let pim4 = PI.powf(-0.25);
    let mf = m as f64;
    let mut z = 0.0f64;
    for i in 0..m.div_ceil(2) {
        z = match i {
            0 => (2.0 * mf + 1.0).sqrt() - 1.85575 * (2.0 * mf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * mf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (pim4, 0.0);
            for j in 0..m {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * mf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        if 2 * i + 1 == m {
            z = 0.0;
        }
        x[i] = z;
        x[m - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[m - 1 - i] = w[i];
    }
    x.reverse();
    w.reverse();
    (x, w)
}

/// Product rule over `d` axes with `m` nodes each. Node `i` has coordinates
/// given by the base-`m` digits of `i`, first axis most significant.
#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    d: usize,
    m: usize,
    sigma: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.m
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.d..(i + 1) * self.d]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `sum_i w_i f(node_i)`, summed in node order.
    pub fn expect<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        (0..self.len()).map(|i| self.weights[i] * f(self.node(i))).sum()
    }
}

pub fn make_grid(d: usize, m: usize, sigma: f64) -> Result<QuadratureGrid> {
    if d == 0 || m == 0 {
        return invalid("grid needs d >= 1 and m >= 1");
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return invalid(format!("grid needs sigma > 0, got {sigma}"));
    }
    let total = (m as u128).checked_pow(d as u32).filter(|&t| t <= MAX_NODES as u128).ok_or_else(|| {
        MraError::Resource(format!("{m}^{d} quadrature nodes exceed the cap of {MAX_NODES}"))
    })? as usize;
    let (gx, gw) = gauss_hermite(m);
    let scale = sigma * 2f64.sqrt();
    let ax: Vec<f64> = gx.iter().map(|v| v * scale).collect();
    let aw: Vec<f64> = gw.iter().map(|v| v / PI.sqrt()).collect();
    let mut nodes = Vec::with_capacity(total * d);
    let mut weights = Vec::with_capacity(total);
    let mut digits = vec![0usize; d];
    for _ in 0..total {
        let mut w = 1.0;
        for &k in &digits {
            nodes.push(ax[k]);
            w *= aw[k];
        }
        weights.push(w);
        for a in (0..d).rev() {
            digits[a] += 1;
            if digits[a] < m {
                break;
            }
            digits[a] = 0;
        }
    }
    Ok(QuadratureGrid { d, m, sigma, nodes, weights })
}
