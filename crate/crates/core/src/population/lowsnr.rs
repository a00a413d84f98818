//! Second-order analytic approximation of one population EM step at low SNR.

use crate::error::Result;
use crate::estimators::softmax_in_place;
use crate::signal::{check_same, Signal};

/// Approximate `M(x)` for truth `x_star` at noise level `sigma`.
///
/// The expansion is derived at unit noise; other noise levels are handled by
/// scaling `x` and `x_star` by `1/sigma` and the result by `sigma`.
pub fn lowsnr_approx_step(x: &Signal, x_star: &Signal, sigma: f64) -> Result<Signal> {
    check_same(x, x_star)?;
    if !(sigma > 0.0) {
        return crate::error::invalid(format!("sigma must be positive, got {sigma}"));
    }
    let d = x.len();
    let xu = x.scaled(1.0 / sigma);
    let su = x_star.scaled(1.0 / sigma);
    let geo = x.geometry();
    // xs[l] = T_l x, star_back[l] = T_l^{-1} x*
    let xs: Vec<Signal> = (0..d).map(|l| xu.shifted(l)).collect();
    let star_back: Vec<Signal> = (0..d).map(|l| su.unshifted(l)).collect();
    let mut w: Vec<f64> = xs.iter().map(|xl| su.dot(xl)).collect();
    softmax_in_place(&mut w);
    let mut gram = vec![0.0; d * d];
    for l in 0..d {
        for r in 0..d {
            gram[l * d + r] = xs[l].dot(&xs[r]).exp();
        }
    }
    let mut pair_mean = 0.0;
    for a in 0..d {
        for b in 0..d {
            pair_mean += w[a] * w[b] * gram[a * d + b];
        }
    }
    let mut out = xu.values().to_vec();
    for l in 0..d {
        let row: f64 = (0..d).map(|r| w[r] * gram[l * d + r]).sum();
        let h1 = pair_mean - row;
        let coef = w[l] * (1.0 + h1);
        for (o, s) in out.iter_mut().zip(star_back[l].values()) {
            *o += coef * s;
        }
    }
    // h2 = sum_{l,r} w_l w_r T_l^{-1} T_r x exp(<T_l x, T_r x>)
    for l in 0..d {
        let li = geo.inverse(l);
        for r in 0..d {
            let coef = w[l] * w[r] * gram[l * d + r];
            let v = xs[r].shifted(li);
            for (o, s) in out.iter_mut().zip(v.values()) {
                *o -= coef * s;
            }
        }
    }
    Ok(Signal::from_raw(geo, out.into_iter().map(|v| v * sigma).collect()))
}
