//! Hard and soft switching between the interactive and non-interactive
//! policies, driven by the quantified interaction intensity.

use alloc::vec::Vec;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchMode {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchConfig {
    /// Intensity threshold, same units as the chosen metric.
    pub i0: f64,
    /// Sigmoid scale for soft switching.
    pub beta: f64,
    pub mode: SwitchMode,
}

impl SwitchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(CoreError::Argument("switch beta must be > 0".into()));
        }
        if self.i0 < 0.0 {
            return Err(CoreError::Argument("switch threshold I0 must be >= 0".into()));
        }
        Ok(())
    }

    pub fn weight(&self, intensity: f64) -> PolicyBlend {
        match self.mode {
            SwitchMode::Hard => hard_switch(intensity, self.i0),
            SwitchMode::Soft => soft_switch(intensity, self.i0, self.beta),
        }
    }
}

/// Mixing weight on the interactive policy; the rest goes to the
/// non-interactive one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyBlend {
    pub w_int: f64,
}

impl PolicyBlend {
    pub fn w_non(&self) -> f64 {
        1.0 - self.w_int
    }
}

/// Step selection: the interactive policy strictly above I0, otherwise the
/// non-interactive one (the boundary I = I0 selects non-interactive).
pub fn hard_switch(intensity: f64, i0: f64) -> PolicyBlend {
    PolicyBlend {
        w_int: if intensity > i0 { 1.0 } else { 0.0 },
    }
}

/// Sigmoid blending: w_int = sigma((I - I0) / beta).
pub fn soft_switch(intensity: f64, i0: f64, beta: f64) -> PolicyBlend {
    let z = (intensity - i0) / beta;
    PolicyBlend {
        w_int: 1.0 / (1.0 + libm::exp(-z)),
    }
}

/// Blend the two policies' acceleration commands.
pub fn blended_accel(blend: PolicyBlend, a_int: f64, a_non: f64) -> f64 {
    blend.w_int * a_int + blend.w_non() * a_non
}

/// Threshold from corpus intensities: nearest-rank empirical q-quantile
/// (the ceil(qN)-th smallest value).
pub fn calibrate_threshold(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(CoreError::Argument(
            "cannot calibrate threshold on empty intensity set".into(),
        ));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(CoreError::Argument("quantile must lie in (0, 1)".into()));
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite intensity"));
    let rank = libm::ceil(q * sorted.len() as f64) as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;

    #[test]
    fn hard_boundary_selects_non_interactive() {
        assert_eq!(hard_switch(0.5, 0.5).w_int, 0.0);
        assert_eq!(hard_switch(0.5 + 1e-12, 0.5).w_int, 1.0);
        assert_eq!(hard_switch(0.0, 0.0).w_int, 0.0);
    }

    #[test]
    fn soft_at_threshold_is_half() {
        assert_relative_eq!(soft_switch(0.3, 0.3, 0.05).w_int, 0.5);
    }

    #[test]
    fn soft_saturates() {
        let beta = 0.02;
        let w = soft_switch(0.3 + 10.0 * beta, 0.3, beta).w_int;
        assert!(w > 0.9999);
    }

    #[test]
    fn soft_approaches_hard_as_beta_shrinks() {
        for &intensity in &[0.1, 0.49, 0.51, 0.9] {
            let hard = hard_switch(intensity, 0.5).w_int;
            let mut prev_dev = f64::INFINITY;
            for &beta in &[1e-1, 1e-2, 1e-3] {
                let dev = (soft_switch(intensity, 0.5, beta).w_int - hard).abs();
                assert!(dev <= prev_dev);
                prev_dev = dev;
            }
            assert!(prev_dev < 1e-3);
        }
    }

    #[test]
    fn weights_monotone_in_intensity() {
        for mode in [SwitchMode::Hard, SwitchMode::Soft] {
            let cfg = SwitchConfig {
                i0: 0.4,
                beta: 0.07,
                mode,
            };
            let mut prev = -1.0;
            for i in 0..200 {
                let w = cfg.weight(i as f64 * 0.005).w_int;
                assert!(w >= prev);
                assert!((0.0..=1.0).contains(&w));
                prev = w;
            }
        }
    }

    #[test]
    fn sigmoid_lipschitz_bound() {
        let beta = 0.05;
        let delta = 1e-3;
        for i in 0..500 {
            let x = i as f64 * 0.002;
            let step = (soft_switch(x + delta, 0.4, beta).w_int
                - soft_switch(x, 0.4, beta).w_int)
                .abs();
            assert!(step <= delta / (4.0 * beta) + 1e-12);
        }
    }

    #[test]
    fn blended_accel_cases() {
        assert_eq!(blended_accel(PolicyBlend { w_int: 1.0 }, -2.0, 1.0), -2.0);
        assert_eq!(blended_accel(PolicyBlend { w_int: 0.0 }, -2.0, 1.0), 1.0);
        assert_relative_eq!(blended_accel(PolicyBlend { w_int: 0.5 }, -2.0, 1.0), -0.5);
    }

    #[test]
    fn blend_bounded_by_inputs() {
        for i in 0..=10 {
            let w = i as f64 / 10.0;
            let a = blended_accel(PolicyBlend { w_int: w }, -2.0, 1.0);
            assert!((-2.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn nearest_rank_quantile() {
        let values: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        assert_eq!(calibrate_threshold(&values, 0.85).unwrap(), 9.0);
        assert_eq!(calibrate_threshold(&values, 0.999).unwrap(), 10.0);
        assert_eq!(calibrate_threshold(&vec![2.5; 7], 0.85).unwrap(), 2.5);
    }
}
