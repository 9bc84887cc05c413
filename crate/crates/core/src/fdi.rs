//! Stateless and stateful residual tests with probabilistic thresholds.
//!
//! Stateless: alarm when `r ≥ mΦ`, where `κ = erf(m/√2)` is the probability
//! mass inside the threshold for a Gaussian residual of scale `Φ`.
//!
//! Stateful: `ψ = Σ r²/Φ` over a sliding window of `T` steps is compared with
//! the chi-square quantile `2 P⁻¹(1 − ϰ, T/2)`. The weighted form
//! `ψ̄ = Σ λ^{k−m} r_m²/Φ` (newest weight 1) is treated as chi-square with
//! `(1 − λ^T)/(1 − λ)` degrees of freedom.
//!
//! Each measurement channel has its own detector; a CAV alarms when any of
//! its channels does.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matstat::special::reg_upper_gamma;
use crate::matstat::{erf, inv_erf, inv_reg_lower_gamma};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    H0,
    H1,
}

impl Hypothesis {
    pub fn is_alarm(self) -> bool {
        self == Hypothesis::H1
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hypothesis::H0 => "H0",
            Hypothesis::H1 => "H1",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorMode {
    Stateless,
    Stateful,
    StatefulWeighted,
}

impl fmt::Display for DetectorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorMode::Stateless => "stateless",
            DetectorMode::Stateful => "stateful",
            DetectorMode::StatefulWeighted => "stateful_weighted",
        })
    }
}

/// Probability mass within `m` standard deviations.
pub fn kappa(m: f64) -> f64 {
    erf(m / std::f64::consts::SQRT_2)
}

/// Detection level `m` whose two-sided Gaussian tail mass is `far`.
pub fn detection_level_for_far(far: f64) -> Result<f64> {
    check_far(far)?;
    Ok(std::f64::consts::SQRT_2 * inv_erf(1.0 - far)?)
}

fn check_far(far: f64) -> Result<()> {
    if far > 0.0 && far < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("false-alarm rate must lie in (0, 1), got {far}")))
    }
}

/// `θ_κ = mΦ`.
pub fn stateless_threshold(m: f64, phi: f64) -> Result<f64> {
    if !(m > 0.0) || !(phi >= 0.0) {
        return Err(Error::Domain(format!("need m > 0 and Phi >= 0, got m={m}, Phi={phi}")));
    }
    Ok(m * phi)
}

/// `H1` iff `r ≥ θ`.
pub fn stateless_detect(r: f64, threshold: f64) -> Hypothesis {
    if r >= threshold {
        Hypothesis::H1
    } else {
        Hypothesis::H0
    }
}

/// Two-sided Gaussian tail mass beyond `r` at scale `Φ`.
pub fn stateless_far(r: f64, phi: f64) -> f64 {
    if phi <= 0.0 {
        return if r > 0.0 { 0.0 } else { 1.0 };
    }
    1.0 - kappa(r / phi)
}

fn check_window(window: &[f64], phi: f64) -> Result<()> {
    if window.is_empty() {
        return Err(Error::Domain("empty residual window".into()));
    }
    if !(phi > 0.0) {
        return Err(Error::Domain(format!("Phi must be positive, got {phi}")));
    }
    Ok(())
}

/// `ψ = Σ r²/Φ`.
pub fn distance_measure(window: &[f64], phi: f64) -> Result<f64> {
    check_window(window, phi)?;
    Ok(window.iter().map(|r| r * r).sum::<f64>() / phi)
}

/// `ψ̄ = Σ λ^{k−m} r_m²/Φ`; `window` runs oldest to newest, so the last
/// entry gets weight 1.
pub fn weighted_distance_measure(window: &[f64], lambda: f64, phi: f64) -> Result<f64> {
    check_window(window, phi)?;
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Domain(format!("lambda must lie in (0, 1], got {lambda}")));
    }
    let mut w = 1.0;
    let mut acc = 0.0;
    for r in window.iter().rev() {
        acc += w * r * r;
        w *= lambda;
    }
    Ok(acc / phi)
}

/// Gamma shape of the weighted statistic, `(1 − λ^T)/(2 − 2λ)`; `T/2` at
/// `λ = 1`.
pub fn effective_shape(t: usize, lambda: f64) -> f64 {
    if lambda == 1.0 {
        t as f64 / 2.0
    } else {
        (1.0 - lambda.powi(t as i32)) / (2.0 - 2.0 * lambda)
    }
}

/// `θ = 2 P⁻¹(1 − ϰ, T/2)`.
pub fn stateful_threshold(far: f64, t: usize) -> Result<f64> {
    check_far(far)?;
    if t == 0 {
        return Err(Error::Domain("window length must be >= 1".into()));
    }
    Ok(2.0 * inv_reg_lower_gamma(1.0 - far, t as f64 / 2.0)?)
}

/// `θ = 2 P⁻¹(1 − ϰ, (1 − λ^T)/(2 − 2λ))`, for `λ ∈ (0, 1)`.
pub fn weighted_stateful_threshold(far: f64, t: usize, lambda: f64) -> Result<f64> {
    check_far(far)?;
    if t == 0 {
        return Err(Error::Domain("window length must be >= 1".into()));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Domain(format!(
            "weighted threshold needs lambda in (0, 1), got {lambda}; use the unweighted form at 1"
        )));
    }
    Ok(2.0 * inv_reg_lower_gamma(1.0 - far, effective_shape(t, lambda))?)
}

/// Implied false-alarm rate `1 − P(shape, ψ/2)` of an observed statistic.
pub fn far_of_statistic(psi: f64, t: usize, lambda: Option<f64>) -> Result<f64> {
    if !(psi >= 0.0) {
        return Err(Error::Domain(format!("statistic must be >= 0, got {psi}")));
    }
    let shape = effective_shape(t, lambda.unwrap_or(1.0));
    reg_upper_gamma(shape, psi / 2.0)
}

/// `H1` iff `ψ ≥ θ`.
pub fn stateful_detect(statistic: f64, threshold: f64) -> Hypothesis {
    stateless_detect(statistic, threshold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DetectorSpec {
    Stateless { detection_level: f64 },
    Stateful { window: usize, far: f64 },
    StatefulWeighted { window: usize, lambda: f64, far: f64 },
}

impl DetectorSpec {
    pub fn mode(&self) -> DetectorMode {
        match self {
            DetectorSpec::Stateless { .. } => DetectorMode::Stateless,
            DetectorSpec::Stateful { .. } => DetectorMode::Stateful,
            DetectorSpec::StatefulWeighted { .. } => DetectorMode::StatefulWeighted,
        }
    }

    /// Short column-safe name, e.g. `stateful_T15_far0.003`.
    pub fn label(&self) -> String {
        match self {
            DetectorSpec::Stateless { detection_level } => format!("stateless_m{detection_level}"),
            DetectorSpec::Stateful { window, far } => format!("stateful_T{window}_far{far}"),
            DetectorSpec::StatefulWeighted { window, lambda, far } => {
                format!("weighted_T{window}_l{lambda}_far{far}")
            }
        }
    }

    pub fn window(&self) -> usize {
        match self {
            DetectorSpec::Stateless { .. } => 1,
            DetectorSpec::Stateful { window, .. } | DetectorSpec::StatefulWeighted { window, .. } => {
                *window
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.threshold(1.0).map(|_| ())
    }

    pub fn threshold(&self, phi: f64) -> Result<f64> {
        match *self {
            DetectorSpec::Stateless { detection_level } => stateless_threshold(detection_level, phi),
            DetectorSpec::Stateful { window, far } => stateful_threshold(far, window),
            DetectorSpec::StatefulWeighted { window, lambda, far } => {
                weighted_stateful_threshold(far, window, lambda)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub statistic: f64,
    pub threshold: f64,
    pub implied_far: f64,
    pub hypothesis: Hypothesis,
}

/// Sliding-window detector for one measurement channel.
#[derive(Clone, Debug)]
pub struct ChannelDetector {
    pub spec: DetectorSpec,
    pub phi: f64,
    pub threshold: f64,
    buf: VecDeque<f64>,
}

impl ChannelDetector {
    pub fn new(spec: DetectorSpec, phi: f64) -> Result<Self> {
        let threshold = spec.threshold(phi)?;
        if spec.mode() != DetectorMode::Stateless && !(phi > 0.0) {
            return Err(Error::Domain(format!("stateful detection needs Phi > 0, got {phi}")));
        }
        Ok(Self {
            buf: VecDeque::with_capacity(spec.window()),
            spec,
            phi,
            threshold,
        })
    }

    /// Push a residual; returns an evaluation once the window is full.
    pub fn update(&mut self, r: f64) -> Result<Option<Evaluation>> {
        let t = self.spec.window();
        if self.buf.len() == t {
            self.buf.pop_front();
        }
        self.buf.push_back(r);
        if self.buf.len() < t {
            return Ok(None);
        }
        let window = self.buf.make_contiguous();
        let (statistic, implied_far) = match self.spec {
            DetectorSpec::Stateless { .. } => (r, stateless_far(r, self.phi)),
            DetectorSpec::Stateful { window: t, .. } => {
                let s = distance_measure(window, self.phi)?;
                (s, far_of_statistic(s, t, None)?)
            }
            DetectorSpec::StatefulWeighted { window: t, lambda, .. } => {
                let s = weighted_distance_measure(window, lambda, self.phi)?;
                (s, far_of_statistic(s, t, Some(lambda))?)
            }
        };
        Ok(Some(Evaluation {
            statistic,
            threshold: self.threshold,
            implied_far,
            hypothesis: stateful_detect(statistic, self.threshold),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_levels() {
        assert!((kappa(1.0) - 0.6827).abs() < 1e-4);
        assert!((kappa(2.0) - 0.9545).abs() < 1e-4);
        assert!((kappa(3.0) - 0.9973).abs() < 1e-4);
        assert!((detection_level_for_far(1.0 - kappa(2.0)).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn stateless_examples() {
        assert_eq!(stateless_threshold(2.0, 0.0).unwrap(), 0.0);
        assert_eq!(stateless_detect(0.0, 0.5), Hypothesis::H0);
        assert_eq!(stateless_detect(0.5, 0.5), Hypothesis::H1);
        assert!(stateless_threshold(0.0, 1.0).is_err());
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance_measure(&[0.0; 15], 0.4).unwrap(), 0.0);
        let phi: f64 = 0.37;
        let w = vec![phi.sqrt(); 15];
        assert!((distance_measure(&w, phi).unwrap() - 15.0).abs() < 1e-12);
        let u = weighted_distance_measure(&w, 1.0, phi).unwrap();
        assert!((u - 15.0).abs() < 1e-12);
        let g = weighted_distance_measure(&w, 0.7, phi).unwrap();
        assert!((g - (1.0 - 0.7f64.powi(15)) / 0.3).abs() < 1e-12);
        assert!((g - 3.3175).abs() < 1e-4);
        assert!(distance_measure(&w, 0.0).is_err());
        assert!(weighted_distance_measure(&w, 1.2, phi).is_err());
    }

    #[test]
    fn newest_weight_is_one() {
        let mut w = vec![0.0; 10];
        w[9] = 2.0;
        assert_eq!(weighted_distance_measure(&w, 0.5, 1.0).unwrap(), 4.0);
        w[9] = 0.0;
        w[8] = 2.0;
        assert_eq!(weighted_distance_measure(&w, 0.5, 1.0).unwrap(), 2.0);
    }

    #[test]
    fn stateful_closed_form() {
        assert!((stateful_threshold(0.05, 2).unwrap() - 2.0 * 20f64.ln()).abs() < 1e-10);
        assert!(stateful_threshold(0.999_999, 15).unwrap() < 1.3);
        assert!(weighted_stateful_threshold(0.05, 15, 1.0).is_err());
    }

    #[test]
    fn threshold_round_trips() {
        for far in [0.003, 0.05, 0.32] {
            for t in [2, 15, 20, 30] {
                let th = stateful_threshold(far, t).unwrap();
                assert!((far_of_statistic(th, t, None).unwrap() - far).abs() < 1e-8);
            }
            let th = weighted_stateful_threshold(far, 15, 0.7).unwrap();
            assert!((far_of_statistic(th, 15, Some(0.7)).unwrap() - far).abs() < 1e-8);
        }
        assert_eq!(far_of_statistic(0.0, 15, None).unwrap(), 1.0);
    }

    #[test]
    fn weighted_threshold_ordering() {
        let a = weighted_stateful_threshold(0.05, 30, 0.8).unwrap();
        let b = weighted_stateful_threshold(0.003, 30, 0.8).unwrap();
        assert!(b > a);
        // shape tends to T/2 as lambda approaches 1
        assert!((effective_shape(15, 1.0 - 1e-9) - 7.5).abs() < 1e-6);
    }

    #[test]
    fn detector_window_fills_before_evaluating() {
        let spec = DetectorSpec::Stateful { window: 3, far: 0.05 };
        let mut d = ChannelDetector::new(spec, 1.0).unwrap();
        assert!(d.update(1.0).unwrap().is_none());
        assert!(d.update(1.0).unwrap().is_none());
        let e = d.update(1.0).unwrap().unwrap();
        assert_eq!(e.statistic, 3.0);
        let e = d.update(0.0).unwrap().unwrap();
        assert_eq!(e.statistic, 2.0);
    }

    #[test]
    fn labels() {
        assert_eq!(DetectorSpec::Stateless { detection_level: 2.0 }.label(), "stateless_m2");
        assert_eq!(
            DetectorSpec::StatefulWeighted { window: 15, lambda: 0.7, far: 0.05 }.label(),
            "weighted_T15_l0.7_far0.05"
        );
    }
}
