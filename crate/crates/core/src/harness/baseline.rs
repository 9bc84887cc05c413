//! Comparison against the inner-consensus-loop estimator.
//!
//! Both observers consume the same measurement realization. The baseline's
//! own-measurement gain `h` is chosen per `L` to minimize the spectral radius
//! of its closed loop. After `L` sweeps the correction is spread over roughly
//! `n` CAVs, so `h` is searched on `(0, n·g_max]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matstat::spectral_radius;
use crate::observer::{baseline_blocks, BaselineBank, ObserverBank};

use super::run::{prepare, realize, Setup};
use super::scenario::Scenario;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObserverCurve {
    pub name: String,
    /// Inner sweeps per step; 1 for the single time-scale observer.
    pub sweeps: usize,
    pub gain: f64,
    pub rho: f64,
    /// CAV-averaged `‖x̂ᵢ − x‖²/(Nm)` for `k = 0..=K`.
    pub mse: Vec<f64>,
    pub steady_mse: f64,
    pub estimate_msgs: u64,
    pub msgs_per_step: f64,
    /// Baseline estimate messages over the proposed observer's.
    pub message_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub scenario: String,
    pub seed: u64,
    pub dt: f64,
    pub links: usize,
    pub proposed: ObserverCurve,
    pub baselines: Vec<ObserverCurve>,
}

fn baseline_rho(setup: &Setup, sweeps: usize, h: f64) -> f64 {
    baseline_blocks(
        &setup.network.w,
        &setup.model.block,
        &setup.shared.selectors,
        setup.model.n_hdv,
        sweeps,
        h,
    )
    .iter()
    .map(|b| spectral_radius(b).unwrap_or(f64::INFINITY))
    .fold(0.0, f64::max)
}

/// Grid plus golden-section search for the `h` minimizing the baseline's
/// spectral radius.
pub fn select_baseline_gain(setup: &Setup, sweeps: usize, h_max: f64, points: usize, refine: usize) -> (f64, f64) {
    let points = points.max(2);
    let step = h_max / points as f64;
    let mut best = (f64::INFINITY, step, 1usize);
    for t in 1..=points {
        let h = step * t as f64;
        let r = baseline_rho(setup, sweeps, h);
        if r < best.0 {
            best = (r, h, t);
        }
    }
    let (mut a, mut b) = (step * (best.2 - 1) as f64, (step * (best.2 + 1) as f64).min(h_max));
    a = a.max(step * 1e-3);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = baseline_rho(setup, sweeps, x1);
    let mut f2 = baseline_rho(setup, sweeps, x2);
    for _ in 0..refine {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = baseline_rho(setup, sweeps, x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = baseline_rho(setup, sweeps, x2);
        }
    }
    let (fr, xr) = if f1 <= f2 { (f1, x1) } else { (f2, x2) };
    if fr < best.0 {
        (xr, fr)
    } else {
        (best.1, best.0)
    }
}

fn mse_step(est: &[crate::matstat::Vector], x: &crate::matstat::Vector) -> f64 {
    let nm = x.len() as f64;
    est.iter().map(|e| (e - x).norm_squared() / nm).sum::<f64>() / est.len() as f64
}

fn steady(mse: &[f64], from: usize) -> f64 {
    let w = &mse[from..];
    w.iter().sum::<f64>() / w.len() as f64
}

pub fn compare_baseline(s: &Scenario, l_values: &[usize]) -> Result<BaselineComparison> {
    if l_values.is_empty() || l_values.contains(&0) {
        return Err(Error::Domain("L values must be positive".into()));
    }
    let setup = prepare(s)?;
    let real = realize(s, s.seed)?;
    let n = setup.network.n;
    let nm = setup.model.dim();
    let from = s.steady_start();
    let ys: Vec<Vec<Vec<f64>>> = real
        .measurements
        .iter()
        .map(|ms| ms.iter().map(|m| m.y.clone()).collect())
        .collect();

    let mut bank = ObserverBank::new(n, nm);
    let mut mse = vec![mse_step(&bank.estimates, &real.truth[0])];
    for (k, y) in ys.iter().enumerate() {
        bank.step(&setup.network, &setup.model, &setup.shared, &setup.design.k_diag, y)?;
        mse.push(mse_step(&bank.estimates, &real.truth[k + 1]));
    }
    let proposed_msgs = bank.messages.estimate_msgs;
    let proposed = ObserverCurve {
        name: "single_time_scale".into(),
        sweeps: 1,
        gain: setup.design.params[0],
        rho: setup.design.rho,
        steady_mse: steady(&mse, from),
        mse,
        estimate_msgs: proposed_msgs,
        msgs_per_step: bank.messages.estimate_msgs_per_step(),
        message_ratio: 1.0,
    };

    let h_max = n as f64 * s.gain.grid.g_max;
    let mut baselines = Vec::with_capacity(l_values.len());
    for &l in l_values {
        let (h, rho) = select_baseline_gain(&setup, l, h_max, 4 * s.gain.grid.points, s.gain.grid.refine_iters);
        let mut bb = BaselineBank::new(n, nm, l, h)?;
        let mut mse = vec![mse_step(&bb.estimates, &real.truth[0])];
        for (k, y) in ys.iter().enumerate() {
            bb.step(&setup.network, &setup.model, &setup.shared, y)?;
            mse.push(mse_step(&bb.estimates, &real.truth[k + 1]));
        }
        baselines.push(ObserverCurve {
            name: format!("inner_loop_L{l}"),
            sweeps: l,
            gain: h,
            rho,
            steady_mse: steady(&mse, from),
            mse,
            estimate_msgs: bb.messages.estimate_msgs,
            msgs_per_step: bb.messages.estimate_msgs_per_step(),
            message_ratio: bb.messages.estimate_msgs as f64 / proposed_msgs as f64,
        });
    }
    Ok(BaselineComparison {
        scenario: s.name.clone(),
        seed: s.seed,
        dt: s.dt,
        links: setup.network.edge_count(),
        proposed,
        baselines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::presets::preset;
    use crate::harness::scenario::validate_scenario;

    #[test]
    fn ratio_is_l_on_the_ring() {
        let mut s = validate_scenario(&preset("fig1_4x4").unwrap()).unwrap();
        s.horizon = 200;
        let c = compare_baseline(&s, &[1, 3]).unwrap();
        assert_eq!(c.links, 8);
        assert_eq!(c.baselines[0].message_ratio, 1.0);
        assert_eq!(c.baselines[1].message_ratio, 3.0);
        assert_eq!(c.proposed.mse.len(), 201);
        assert!(c.baselines.iter().all(|b| b.rho < 1.0));
    }

    #[test]
    fn zero_sweeps_rejected() {
        let s = validate_scenario(&preset("fig1_4x4").unwrap()).unwrap();
        assert!(compare_baseline(&s, &[0]).is_err());
    }
}
