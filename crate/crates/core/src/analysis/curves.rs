//! The loop trade-off curve `L * MMSE(snr(floor(t / L)))`.

use super::mmse::{effective_snr, mmse_gaussian};
use crate::diffusion::Schedule;
use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub loops: usize,
    /// `floor(effective_t / L)`.
    pub t_over_l: usize,
    /// `L * floor(effective_t / L)`, the total time actually diffused.
    pub effective_t: usize,
    pub value: f64,
}

pub fn loop_bound_curve(schedule: &Schedule, effective_t: usize, loops: &[usize]) -> Result<Vec<CurvePoint>> {
    loops
        .iter()
        .map(|&l| {
            ensure!(l >= 1, InvalidArgument, "L must be >= 1");
            let step = effective_t / l;
            ensure!(step >= 1, InvalidArgument, "t / L = {effective_t} / {l} rounds to zero");
            let value = l as f64 * mmse_gaussian(effective_snr(schedule, step)?)?;
            Ok(CurvePoint {
                loops: l,
                t_over_l: step,
                effective_t: l * step,
                value,
            })
        })
        .collect()
}

/// First index where `values` fails to decrease strictly.
pub fn first_non_decrease(values: &[f64]) -> Option<usize> {
    values.windows(2).position(|w| w[1] >= w[0]).map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_loop_is_plain_mmse() {
        let s = Schedule::default();
        let c = loop_bound_curve(&s, 600, &[1]).unwrap();
        assert_eq!(c[0].value, 1.0 - s.alpha_bar(600));
        assert!((c[0].value - mmse_gaussian(s.snr(600)).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn degenerate_ratio_rejected() {
        assert!(loop_bound_curve(&Schedule::default(), 5, &[6]).is_err());
        assert!(loop_bound_curve(&Schedule::default(), 5, &[0]).is_err());
    }

    #[test]
    fn strict_decrease_helper() {
        assert_eq!(first_non_decrease(&[3.0, 2.0, 1.0]), None);
        assert_eq!(first_non_decrease(&[3.0, 3.0, 1.0]), Some(1));
    }

    #[test]
    fn matches_direct_evaluation() {
        // Values computed from the cumulative product of 1 - linspace(1e-4, 0.02, 1000).
        let s = Schedule::default();
        let loops: Vec<usize> = (1..=10).collect();
        let c400 = loop_bound_curve(&s, 400, &loops).unwrap();
        assert!((c400[0].value - 0.8049).abs() < 1e-4);
        assert!((c400[9].value - 0.1935).abs() < 1e-4);
        let c600 = loop_bound_curve(&s, 600, &loops).unwrap();
        assert!((c600[1].value - 1.2072).abs() < 1e-4);
    }

    #[test]
    fn short_horizons_decrease_long_ones_rise_first() {
        let s = Schedule::default();
        let loops: Vec<usize> = (1..=10).collect();
        for t in [200, 400] {
            let v: Vec<f64> = loop_bound_curve(&s, t, &loops).unwrap().iter().map(|p| p.value).collect();
            assert_eq!(first_non_decrease(&v), None, "t = {t}");
        }
        for t in [600, 900] {
            let v: Vec<f64> = loop_bound_curve(&s, t, &loops).unwrap().iter().map(|p| p.value).collect();
            assert_eq!(first_non_decrease(&v), Some(1), "t = {t}");
            assert!(v[9] < v[0]);
        }
    }

    #[test]
    fn larger_horizon_lies_above() {
        let s = Schedule::default();
        let loops: Vec<usize> = (1..=10).collect();
        let lo = loop_bound_curve(&s, 300, &loops).unwrap();
        let hi = loop_bound_curve(&s, 900, &loops).unwrap();
        assert!(lo.iter().zip(&hi).all(|(a, b)| a.value < b.value));
    }
}
