//! Piecewise log-linear fit separating a fast early decay from a slow tail.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::fit::linear_fit;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TwoPhaseFit {
    /// Negated slope of `log e(t)` before the split.
    pub rate_early: f64,
    /// Negated slope of `log e(t)` from the split on.
    pub rate_late: f64,
    /// First index of the late segment.
    pub t_split: usize,
    pub rss: f64,
}

/// Chooses `t_split` in `[5, T - 5]` (where `T = len - 1`) minimising the total
/// squared residual of two least-squares lines on `log e`: one on `0..=t_split`
/// and one on `t_split..=T`. Ties keep the earliest split.
pub fn two_phase_fit(errors: &[f64]) -> Result<TwoPhaseFit> {
    if errors.len() < 20 {
        return invalid(format!("two-phase fit needs at least 20 points, got {}", errors.len()));
    }
    if errors.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return invalid("two-phase fit needs strictly positive finite errors");
    }
    let t: Vec<f64> = (0..errors.len()).map(|i| i as f64).collect();
    let le: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let last = errors.len() - 1;
    let mut best: Option<TwoPhaseFit> = None;
    for s in 5..=last - 5 {
        let early = linear_fit(&t[..=s], &le[..=s])?;
        let late = linear_fit(&t[s..], &le[s..])?;
        let rss = early.rss + late.rss;
        if best.is_none_or(|b| rss < b.rss) {
            best = Some(TwoPhaseFit { rate_early: -early.slope, rate_late: -late.slope, t_split: s, rss });
        }
    }
    Ok(best.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_phase() {
        let e: Vec<f64> = (0..60).map(|t| (-0.1 * t as f64).exp()).collect();
        let f = two_phase_fit(&e).unwrap();
        assert!((f.rate_early - 0.1).abs() < 1e-10 && (f.rate_late - 0.1).abs() < 1e-10);
    }

    #[test]
    fn kink() {
        let e: Vec<f64> = (0..200)
            .map(|t| {
                let t = t as f64;
                (-0.2 * t.min(50.0)).exp() * (-0.01 * (t - 50.0).max(0.0)).exp()
            })
            .collect();
        let f = two_phase_fit(&e).unwrap();
        assert!((f.rate_early - 0.2).abs() < 1e-10);
        assert!((f.rate_late - 0.01).abs() < 1e-10);
        assert_eq!(f.t_split, 50);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(two_phase_fit(&[1.0; 10]).is_err());
        let mut e = vec![1.0; 30];
        e[3] = 0.0;
        assert!(two_phase_fit(&e).is_err());
    }
}
