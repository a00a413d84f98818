//! Population-limit EM: quadrature, the operator and its Jacobian, Fourier
//! block spectra, pure-noise contraction factors, the low-SNR analytic step,
//! and the two-phase rate fit.

pub mod lowsnr;
pub mod operator;
pub mod quadrature;
pub mod spectral;
pub mod twophase;

pub use lowsnr::lowsnr_approx_step;
pub use operator::{alpha_factors, population_em, population_jacobian, JacobianMatrix, LatentAverage, PopulationModel};
pub use quadrature::{gauss_hermite, make_grid, QuadratureGrid};
pub use spectral::{fourier_blocks, second_order_gap, second_order_matrix, spectral_radius, SpectralBlock, SpectralReport};
pub use twophase::{two_phase_fit, TwoPhaseFit};

use crate::error::Result;
use crate::signal::Signal;

/// Iterates the population operator, returning `x^(0..=iters)`.
pub fn population_trajectory(model: &PopulationModel<'_>, init: &Signal, iters: usize) -> Result<Vec<Signal>> {
    let mut out = Vec::with_capacity(iters + 1);
    out.push(init.clone());
    let mut x = init.clone();
    for _ in 0..iters {
        x = model.em(&x)?;
        out.push(x.clone());
    }
    Ok(out)
}
