//! Single time-scale distributed observer, residuals, the error-dynamics
//! identity check, and the inner-consensus-loop baseline.
//!
//! One step is a synchronous round: every CAV predicts from its neighbors'
//! previous estimates, then corrects with the raw measurements its neighbors
//! share. Each directed link carries one estimate and one measurement per
//! step.

use serde::{Deserialize, Serialize};

use crate::dynamics::AssumedModel;
use crate::error::{Error, Result};
use crate::matstat::{Matrix, Vector};
use crate::topology::{CavNetwork, SharedObservation};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageCounter {
    pub steps: u64,
    /// Estimate vectors sent over links.
    pub estimate_msgs: u64,
    /// Raw measurement vectors sent over links.
    pub measurement_msgs: u64,
}

impl MessageCounter {
    pub fn estimate_msgs_per_step(&self) -> f64 {
        self.estimate_msgs as f64 / self.steps.max(1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct ObserverBank {
    pub estimates: Vec<Vector>,
    pub messages: MessageCounter,
}

/// `x̂⁻_i = Σ_{j∈N(i)} W_ij A x̂_j`.
pub fn predict(estimates: &[Vector], network: &CavNetwork, model: &AssumedModel) -> Result<Vec<Vector>> {
    if estimates.len() != network.n {
        return Err(Error::Dimension(format!(
            "{} estimates for {} CAVs",
            estimates.len(),
            network.n
        )));
    }
    let propagated: Vec<Vector> = estimates.iter().map(|x| model.apply(x)).collect();
    Ok((0..network.n)
        .map(|i| {
            let mut acc = Vector::zeros(model.dim());
            for &j in &network.neighborhoods[i] {
                acc.axpy(network.w[(i, j)], &propagated[j], 1.0);
            }
            acc
        })
        .collect())
}

/// `x̂_i = x̂⁻_i + K_i Σ_{j∈N(i)} C_jᵀ (y_j − C_j x̂⁻_i)` for diagonal `K_i`.
pub fn innovate(
    priors: &[Vector],
    measurements: &[Vec<f64>],
    shared: &SharedObservation,
    k_diag: &[Vec<f64>],
) -> Result<Vec<Vector>> {
    let n = shared.n();
    if measurements.len() != n {
        return Err(Error::Missing(format!("{} measurement sets for {n} CAVs", measurements.len())));
    }
    for (j, (y, sel)) in measurements.iter().zip(&shared.selectors).enumerate() {
        if y.len() != sel.len() {
            return Err(Error::Missing(format!(
                "cav {j} shared {} of {} channels",
                y.len(),
                sel.len()
            )));
        }
    }
    Ok((0..n)
        .map(|i| {
            let prior = &priors[i];
            let mut innov = Vector::zeros(shared.nm);
            for &j in &shared.neighborhoods[i] {
                for (r, &c) in shared.selectors[j].iter().enumerate() {
                    innov[c] += measurements[j][r] - prior[c];
                }
            }
            let mut post = prior.clone();
            for c in 0..shared.nm {
                post[c] += k_diag[i][c] * innov[c];
            }
            post
        })
        .collect())
}

/// `|y_i − C_i x̂_i|` per channel.
pub fn residual(estimate: &Vector, y: &[f64], selector: &[usize]) -> Vec<f64> {
    y.iter()
        .zip(selector)
        .map(|(yv, &c)| (yv - estimate[c]).abs())
        .collect()
}

impl ObserverBank {
    /// All estimates start at zero.
    pub fn new(n: usize, nm: usize) -> Self {
        Self {
            estimates: vec![Vector::zeros(nm); n],
            messages: MessageCounter::default(),
        }
    }

    pub fn step(
        &mut self,
        network: &CavNetwork,
        model: &AssumedModel,
        shared: &SharedObservation,
        k_diag: &[Vec<f64>],
        measurements: &[Vec<f64>],
    ) -> Result<()> {
        let priors = predict(&self.estimates, network, model)?;
        self.estimates = innovate(&priors, measurements, shared, k_diag)?;
        let links = network.edge_count() as u64;
        self.messages.steps += 1;
        self.messages.estimate_msgs += links;
        self.messages.measurement_msgs += links;
        Ok(())
    }

    pub fn residuals(&self, measurements: &[Vec<f64>], shared: &SharedObservation) -> Vec<Vec<f64>> {
        self.estimates
            .iter()
            .zip(measurements)
            .zip(&shared.selectors)
            .map(|((x, y), sel)| residual(x, y, sel))
            .collect()
    }
}

/// `Â e` without forming `Â`: block `i` is `(I − K_i D_i) Σ_j W_ij A e_j`.
pub fn apply_closed_loop(
    e: &[Vector],
    network: &CavNetwork,
    model: &AssumedModel,
    shared: &SharedObservation,
    k_diag: &[Vec<f64>],
) -> Result<Vec<Vector>> {
    let mut out = predict(e, network, model)?;
    for (i, v) in out.iter_mut().enumerate() {
        for c in 0..shared.nm {
            v[c] *= 1.0 - k_diag[i][c] * shared.counts[i][c];
        }
    }
    Ok(out)
}

/// `η = (I − K D_C)(1 ⊗ ν) − K D̄_C μ`, with measurement faults folded into
/// `μ`.
pub fn eta(
    nu: &Vector,
    mu: &[Vec<f64>],
    shared: &SharedObservation,
    k_diag: &[Vec<f64>],
) -> Vec<Vector> {
    let dmu = shared.apply_dbar(mu);
    (0..shared.n())
        .map(|i| {
            Vector::from_fn(shared.nm, |c, _| {
                let k = k_diag[i][c];
                (1.0 - k * shared.counts[i][c]) * nu[c] - k * dmu[i][c]
            })
        })
        .collect()
}

/// Recorded quantities for the identity `e_k = Â e_{k−1} + η_k`.
#[derive(Clone, Debug, Default)]
pub struct ErrorRecord {
    /// `e_k = x_k − x̂_k` per CAV for `k = 0..=K`.
    pub errors: Vec<Vec<Vector>>,
    /// `ν_{k−1} = x_k − A x_{k−1}` at index `k` (index 0 unused).
    pub nu: Vec<Vector>,
    /// Noise plus fault per CAV channel at step `k` (index 0 unused).
    pub mu: Vec<Vec<Vec<f64>>>,
}

/// `max_k ‖e_k − Â e_{k−1} − η_k‖∞`.
pub fn error_dynamics_check(
    record: &ErrorRecord,
    network: &CavNetwork,
    model: &AssumedModel,
    shared: &SharedObservation,
    k_diag: &[Vec<f64>],
) -> Result<f64> {
    let steps = record.errors.len();
    if record.nu.len() != steps || record.mu.len() != steps {
        return Err(Error::Missing("noise realizations were not recorded for every step".into()));
    }
    let mut worst: f64 = 0.0;
    for k in 1..steps {
        let pred = apply_closed_loop(&record.errors[k - 1], network, model, shared, k_diag)?;
        let et = eta(&record.nu[k], &record.mu[k], shared, k_diag);
        for i in 0..network.n {
            let d = &record.errors[k][i] - &pred[i] - &et[i];
            worst = worst.max(d.amax());
        }
    }
    Ok(worst)
}

/// Dense `η` operator pieces, used to cross-check [`eta`]:
/// returns `(I − K D_C, −K D̄_C)`.
pub fn eta_operators(k: &Matrix, d_c: &Matrix, dbar: &Matrix) -> (Matrix, Matrix) {
    let n = k.nrows();
    (Matrix::identity(n, n) - k * d_c, -(k * dbar))
}

/// Inner-loop baseline: each CAV predicts with its own estimate, corrects with
/// its own measurement using gain `h`, then runs `L` consensus sweeps over
/// `W`. Every sweep sends one estimate per link.
#[derive(Clone, Debug)]
pub struct BaselineBank {
    pub estimates: Vec<Vector>,
    pub sweeps: usize,
    pub h: f64,
    pub messages: MessageCounter,
}

impl BaselineBank {
    pub fn new(n: usize, nm: usize, sweeps: usize, h: f64) -> Result<Self> {
        if sweeps == 0 {
            return Err(Error::Domain("baseline needs at least one consensus sweep".into()));
        }
        Ok(Self {
            estimates: vec![Vector::zeros(nm); n],
            sweeps,
            h,
            messages: MessageCounter::default(),
        })
    }

    pub fn step(
        &mut self,
        network: &CavNetwork,
        model: &AssumedModel,
        shared: &SharedObservation,
        measurements: &[Vec<f64>],
    ) -> Result<()> {
        let mut x: Vec<Vector> = self
            .estimates
            .iter()
            .zip(measurements)
            .zip(&shared.selectors)
            .map(|((xi, y), sel)| {
                let mut p = model.apply(xi);
                let prior = p.clone();
                for (r, &c) in sel.iter().enumerate() {
                    p[c] += self.h * (y[r] - prior[c]);
                }
                p
            })
            .collect();
        for _ in 0..self.sweeps {
            x = (0..network.n)
                .map(|i| {
                    let mut acc = Vector::zeros(shared.nm);
                    for &j in &network.neighborhoods[i] {
                        acc.axpy(network.w[(i, j)], &x[j], 1.0);
                    }
                    acc
                })
                .collect();
        }
        self.estimates = x;
        self.messages.steps += 1;
        self.messages.estimate_msgs += (self.sweeps * network.edge_count()) as u64;
        Ok(())
    }
}

/// Per-HDV closed loop of the baseline: `(W^L ⊗ I)(I − h·diag own)(I ⊗ Ã)`.
pub fn baseline_blocks(
    w: &Matrix,
    block: &Matrix,
    selectors: &[Vec<usize>],
    n_hdv: usize,
    sweeps: usize,
    h: f64,
) -> Vec<Matrix> {
    let n = w.nrows();
    let m = block.nrows();
    let mut wl = Matrix::identity(n, n);
    for _ in 0..sweeps {
        wl = &wl * w;
    }
    let mix = crate::matstat::kronecker(&wl, &Matrix::identity(m, m));
    let prop = crate::matstat::kronecker(&Matrix::identity(n, n), block);
    (0..n_hdv)
        .map(|hdv| {
            let mut corr = Matrix::identity(n * m, n * m);
            for (i, sel) in selectors.iter().enumerate() {
                for &c in sel {
                    if c / m == hdv {
                        let r = i * m + c % m;
                        corr[(r, r)] -= h;
                    }
                }
            }
            &mix * corr * &prop
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ModelKind;
    use crate::topology::{build_shared_observation, ConsensusRule};

    fn ring4() -> CavNetwork {
        let mut adj = vec![vec![false; 4]; 4];
        for i in 0..4 {
            adj[i][(i + 1) % 4] = true;
            adj[i][(i + 3) % 4] = true;
        }
        CavNetwork::from_adjacency(&adj, &ConsensusRule::Uniform).unwrap()
    }

    #[test]
    fn predict_consensus_fixed_point() {
        let net = ring4();
        let model = AssumedModel::new(ModelKind::Ncv, 0.05, 4, 0.0).unwrap();
        let x = Vector::from_fn(8, |i, _| i as f64 + 1.0);
        let pri = predict(&vec![x.clone(); 4], &net, &model).unwrap();
        for p in pri {
            assert!((p - model.apply(&x)).amax() < 1e-12);
        }
    }

    #[test]
    fn predict_ring_by_hand() {
        let net = ring4();
        let model = AssumedModel::new(ModelKind::Ncv, 0.05, 4, 0.0).unwrap();
        let est: Vec<Vector> = (0..4).map(|i| Vector::from_element(8, i as f64)).collect();
        let pri = predict(&est, &net, &model).unwrap();
        // CAV 0 averages CAVs 3, 0, 1
        let expect = model.apply(&(&est[3] + &est[0] + &est[1])) / 3.0;
        assert!((&pri[0] - expect).amax() < 1e-12);
    }

    #[test]
    fn innovate_zero_innovation_and_zero_gain() {
        let net = ring4();
        let sel: Vec<Vec<usize>> = (0..4).map(|i| vec![2 * i, 2 * i + 1]).collect();
        let shared = build_shared_observation(&sel, &net.neighborhoods, 8).unwrap();
        let x = Vector::from_fn(8, |i, _| 3.0 * i as f64 - 1.0);
        let y: Vec<Vec<f64>> = sel.iter().map(|s| s.iter().map(|&c| x[c]).collect()).collect();
        let k = vec![vec![0.4; 8]; 4];
        let post = innovate(&vec![x.clone(); 4], &y, &shared, &k).unwrap();
        assert!(post.iter().all(|p| p == &x));
        let other = vec![Vector::zeros(8); 4];
        let post = innovate(&other, &y, &shared, &vec![vec![0.0; 8]; 4]).unwrap();
        assert!(post.iter().all(|p| p.amax() == 0.0));
        let short = vec![vec![1.0]; 4];
        assert!(matches!(innovate(&other, &short, &shared, &k), Err(Error::Missing(_))));
    }

    #[test]
    fn residual_with_frozen_estimate() {
        let x = Vector::from_vec(vec![1.0, 2.0]);
        assert_eq!(residual(&x, &[1.0, 2.0], &[0, 1]), vec![0.0, 0.0]);
        let r = residual(&x, &[1.0, 2.0 - 0.7], &[0, 1]);
        assert_eq!(r[0], 0.0);
        assert!((r[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn baseline_message_count_is_l_times() {
        let net = ring4();
        let model = AssumedModel::new(ModelKind::Ncv, 0.05, 4, 0.0).unwrap();
        let sel: Vec<Vec<usize>> = (0..4).map(|i| vec![2 * i, 2 * i + 1]).collect();
        let shared = build_shared_observation(&sel, &net.neighborhoods, 8).unwrap();
        let y = vec![vec![0.0, 0.0]; 4];
        let mut base = BaselineBank::new(4, 8, 7, 0.5).unwrap();
        let mut prop = ObserverBank::new(4, 8);
        for _ in 0..3 {
            base.step(&net, &model, &shared, &y).unwrap();
            prop.step(&net, &model, &shared, &vec![vec![0.1; 8]; 4], &y).unwrap();
        }
        assert_eq!(prop.messages.estimate_msgs, 3 * 8);
        assert_eq!(base.messages.estimate_msgs, 7 * prop.messages.estimate_msgs);
    }
}
