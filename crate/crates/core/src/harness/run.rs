//! End-to-end runs: setup, truth and measurement realization, the observer
//! loop, detection, and metrics computed from the stored traces alone.

use serde::{Deserialize, Serialize};

use crate::dynamics::{measure, AssumedModel, Channel, Measurement, Platoon};
use crate::error::{Error, Result};
use crate::fdi::{ChannelDetector, DetectorMode, DetectorSpec, Evaluation, Hypothesis};
use crate::gain::{
    bound_chain, empirical_error_cov, empirical_network_cov, synthesize_gain, BoundChain, GainDesign, NoiseLevels,
    DENSE_OBSERVABILITY_LIMIT,
};
use crate::matstat::rng::{stream, RngStream};
use crate::matstat::Vector;
use crate::observer::{error_dynamics_check, ErrorRecord, MessageCounter, ObserverBank};
use crate::topology::{
    build_shared_observation, check_network_observability, erdos_renyi, CavNetwork,
    ObservabilityReport, SharedObservation,
};

use super::scenario::{NetworkSpec, Scenario};

/// Everything fixed before the first step.
#[derive(Clone, Debug)]
pub struct Setup {
    pub network: CavNetwork,
    pub model: AssumedModel,
    pub shared: SharedObservation,
    pub observability: ObservabilityReport,
    pub design: GainDesign,
    /// `None` when `‖Â‖₂ ≥ 1`; only allowed for scenarios without detectors.
    pub bounds: Option<BoundChain>,
}

/// The ER draw uses the network's own seed when given, else the scenario
/// seed, on the graph sub-stream.
pub fn build_network(s: &Scenario) -> Result<CavNetwork> {
    match &s.network {
        NetworkSpec::OutNeighbors(out) => CavNetwork::from_out_neighbors(out, &s.rule),
        NetworkSpec::ErdosRenyi {
            p,
            seed,
            require_strong,
        } => {
            let mut rng = RngStream::with_stream(seed.unwrap_or(s.seed), stream::GRAPH);
            erdos_renyi(s.n_cav(), *p, &mut rng, *require_strong, &s.rule)
        }
    }
}

pub fn noise_levels(s: &Scenario) -> NoiseLevels {
    NoiseLevels {
        g_norm: s.process_cov_scale,
        r: s.sensors.iter().map(|x| x.noise_var).collect(),
        c: s.measurement_gain,
    }
}

/// Network, observation structure and observability report, without gain
/// synthesis.
pub fn prepare_structure(s: &Scenario) -> Result<(CavNetwork, AssumedModel, SharedObservation, ObservabilityReport)> {
    let network = build_network(s)?;
    let model = AssumedModel::new(s.model_kind, s.dt, s.n_hdv(), s.process_cov_scale)?;
    let m = model.m();
    let selectors: Vec<Vec<usize>> = s.sensors.iter().map(|x| x.selector(m)).collect();
    let shared = build_shared_observation(&selectors, &network.neighborhoods, model.dim())?;
    let obs = check_network_observability(&network, &model.block, &shared, DENSE_OBSERVABILITY_LIMIT)?;
    Ok((network, model, shared, obs))
}

/// Observability is a hard precondition. Detectors need `Φ`, so a scenario
/// with detectors also needs a bounded covariance chain.
pub fn prepare(s: &Scenario) -> Result<Setup> {
    let (network, model, shared, observability) = prepare_structure(s)?;
    if !observability.observable {
        return Err(Error::NotObservable {
            rank: observability.rank,
            dim: observability.dim,
        });
    }
    let noise = noise_levels(s);
    let design = synthesize_gain(
        &network,
        &model.block,
        &shared,
        s.gain.epsilon,
        s.gain.family,
        s.gain.objective,
        &s.gain.grid,
        &noise,
    )?;
    let bounds = match bound_chain(&design, &noise, &shared) {
        Ok(b) => Some(b),
        Err(Error::Unbounded { .. }) if s.detectors.is_empty() => None,
        Err(e) => return Err(e),
    };
    Ok(Setup {
        network,
        model,
        shared,
        observability,
        design,
        bounds,
    })
}

/// Truth states for `k = 0..=K` and measurements for `k = 1..=K`
/// (`measurements[k - 1]`).
#[derive(Clone, Debug)]
pub struct Realization {
    pub truth: Vec<Vector>,
    pub measurements: Vec<Vec<Measurement>>,
}

pub fn realize(s: &Scenario, seed: u64) -> Result<Realization> {
    let behaviors = s.hdvs.iter().map(|h| h.behavior.clone()).collect();
    let initial: Vec<(f64, f64)> = s
        .hdvs
        .iter()
        .map(|h| (h.initial_position, h.initial_velocity))
        .collect();
    let mut platoon = Platoon::new(behaviors, &initial, s.params.clone(), s.dt)?;
    let mut truth_rng = RngStream::with_stream(seed, stream::TRUTH);
    let mut sensor_rng = RngStream::with_stream(seed, stream::SENSORS);
    let mut fault_rng = RngStream::with_stream(seed, stream::FAULTS);
    let m = s.model_kind.dim();
    let mut truth = Vec::with_capacity(s.horizon + 1);
    truth.push(platoon.global_state(0, s.model_kind)?);
    let mut measurements = Vec::with_capacity(s.horizon);
    for k in 1..=s.horizon {
        platoon.advance(&mut truth_rng)?;
        let x = platoon.global_state(k as i64, s.model_kind)?;
        let ys = s
            .sensors
            .iter()
            .map(|spec| measure(spec, &x, m, k, &mut sensor_rng, &mut fault_rng))
            .collect::<Result<Vec<_>>>()?;
        truth.push(x);
        measurements.push(ys);
    }
    Ok(Realization { truth, measurements })
}

/// Static description of a trace: enough to parse it back and recompute
/// every metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceLayout {
    pub scenario: String,
    pub seed: u64,
    pub n_cav: usize,
    pub n_hdv: usize,
    pub m: usize,
    pub dt: f64,
    pub horizon: usize,
    pub channels: Vec<Vec<Channel>>,
    pub detectors: Vec<DetectorSpec>,
    pub steady_start: usize,
    pub warmup: usize,
    /// Earliest active fault onset.
    pub onset: Option<usize>,
    pub faulty: Vec<usize>,
}

impl TraceLayout {
    pub fn from_scenario(s: &Scenario, seed: u64) -> Self {
        let faults = s.active_faults();
        Self {
            scenario: s.name.clone(),
            seed,
            n_cav: s.n_cav(),
            n_hdv: s.n_hdv(),
            m: s.model_kind.dim(),
            dt: s.dt,
            horizon: s.horizon,
            channels: s.sensors.iter().map(|x| x.channels.clone()).collect(),
            detectors: s.detectors.clone(),
            steady_start: s.steady_start(),
            warmup: s.metrics.warmup_steps,
            onset: faults.iter().map(|&(_, k)| k).min(),
            faulty: faults.iter().map(|&(i, _)| i).collect(),
        }
    }

    pub fn nm(&self) -> usize {
        self.n_hdv * self.m
    }

    pub fn labels(&self) -> Vec<String> {
        self.detectors.iter().map(|d| d.label()).collect()
    }
}

/// Everything a run records, indexed by step `k = 0..=K`. Step 0 holds the
/// initial state and estimates and has no measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceData {
    pub truth: Vec<Vector>,
    /// `estimates[k][i]`.
    pub estimates: Vec<Vec<Vector>>,
    /// `measurements[k][i][channel]`.
    pub measurements: Vec<Vec<Vec<f64>>>,
    pub residuals: Vec<Vec<Vec<f64>>>,
    /// `hypotheses[d][k][i][channel]`, `None` until the window fills.
    pub hypotheses: Vec<Vec<Vec<Vec<Option<Hypothesis>>>>>,
}

impl TraceData {
    pub fn horizon(&self) -> usize {
        self.truth.len() - 1
    }

    /// CAV-level decision: `H1` if any channel alarms, `None` if no channel
    /// was evaluated.
    pub fn cav_alarm(&self, d: usize, k: usize, i: usize) -> Option<bool> {
        let hs = &self.hypotheses[d][k][i];
        if hs.iter().all(Option::is_none) {
            return None;
        }
        Some(hs.contains(&Some(Hypothesis::H1)))
    }

    /// `x̂ᵢ − x` per CAV at step `k`.
    pub fn errors(&self, k: usize) -> Vec<Vector> {
        self.estimates[k].iter().map(|x| x - &self.truth[k]).collect()
    }
}

/// Alarm count over a set of evaluated steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub alarms: u64,
    pub total: u64,
}

impl Rate {
    pub fn value(&self) -> Option<f64> {
        (self.total > 0).then(|| self.alarms as f64 / self.total as f64)
    }

    pub fn add(&mut self, alarm: bool) {
        self.total += 1;
        self.alarms += alarm as u64;
    }

    pub fn merge(&mut self, other: &Rate) {
        self.alarms += other.alarms;
        self.total += other.total;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorMetrics {
    pub label: String,
    pub mode: DetectorMode,
    pub window: usize,
    /// Steps in `[warmup, onset)`.
    pub pre_onset: Vec<Rate>,
    /// Steps whose window lies entirely at or after the onset.
    pub post_onset: Vec<Rate>,
    pub steady: Vec<Rate>,
    /// Non-overlapping windows (ending at multiples of `T`) inside
    /// `[warmup, onset)`.
    pub disjoint_windows: Vec<Rate>,
    /// First alarm at or after the onset minus the onset, per CAV.
    pub detection_delay: Vec<Option<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub steady_start: usize,
    pub horizon: usize,
    /// `mean_k ‖x̂ᵢ − x‖² / (Nm)` over the steady window.
    pub mse_per_cav: Vec<f64>,
    pub mse_mean: f64,
    /// 2-norm of the steady-window error covariance per CAV.
    pub error_variance: Option<Vec<f64>>,
    /// `‖P̂‖₂ / n` of the stacked network error over the steady window.
    pub network_error_variance: Option<f64>,
    /// Largest pairwise RMS estimate gap `sqrt(mean_k ‖x̂ᵢ − x̂ⱼ‖² / (Nm))`.
    pub disagreement_rms: f64,
    pub detectors: Vec<DetectorMetrics>,
}

/// Per-step MSE averaged over CAVs, `k = 0..=K`.
pub fn mse_trace(trace: &TraceData) -> Vec<f64> {
    let nm = trace.truth[0].len() as f64;
    (0..trace.truth.len())
        .map(|k| {
            let es = trace.errors(k);
            es.iter().map(|e| e.norm_squared() / nm).sum::<f64>() / es.len() as f64
        })
        .collect()
}

/// `(1/|window|) Σ ‖x̂ᵢ − x‖² / (Nm)` per CAV over `k ∈ [from, to]`.
pub fn mse_metrics(trace: &TraceData, from: usize, to: usize) -> Result<Vec<f64>> {
    if from > to || to > trace.horizon() {
        return Err(Error::Domain(format!("empty or out-of-range window [{from}, {to}]")));
    }
    let n = trace.estimates[0].len();
    let nm = trace.truth[0].len() as f64;
    let mut acc = vec![0.0; n];
    for k in from..=to {
        for (i, e) in trace.errors(k).iter().enumerate() {
            acc[i] += e.norm_squared() / nm;
        }
    }
    let len = (to - from + 1) as f64;
    Ok(acc.into_iter().map(|a| a / len).collect())
}

fn detector_metrics(trace: &TraceData, layout: &TraceLayout, d: usize) -> DetectorMetrics {
    let spec = &layout.detectors[d];
    let t = spec.window();
    let k_end = layout.horizon;
    let n = layout.n_cav;
    let onset = layout.onset;
    let pre_end = onset.unwrap_or(k_end + 1);
    let mut out = DetectorMetrics {
        label: spec.label(),
        mode: spec.mode(),
        window: t,
        pre_onset: vec![Rate::default(); n],
        post_onset: vec![Rate::default(); n],
        steady: vec![Rate::default(); n],
        disjoint_windows: vec![Rate::default(); n],
        detection_delay: vec![None; n],
    };
    for k in 1..=k_end {
        for i in 0..n {
            let Some(alarm) = trace.cav_alarm(d, k, i) else {
                continue;
            };
            if k >= layout.warmup && k < pre_end {
                out.pre_onset[i].add(alarm);
                if k % t == 0 && k + 1 >= layout.warmup + t {
                    out.disjoint_windows[i].add(alarm);
                }
            }
            if let Some(on) = onset {
                if k + 1 >= on + t {
                    out.post_onset[i].add(alarm);
                }
                if k >= on && alarm && out.detection_delay[i].is_none() {
                    out.detection_delay[i] = Some(k - on);
                }
            }
            if k >= layout.steady_start {
                out.steady[i].add(alarm);
            }
        }
    }
    out
}

/// All metrics, from the trace and its layout only.
pub fn compute_metrics(trace: &TraceData, layout: &TraceLayout) -> Result<RunMetrics> {
    let from = layout.steady_start;
    let to = layout.horizon;
    let mse = mse_metrics(trace, from, to)?;
    let mse_mean = mse.iter().sum::<f64>() / mse.len() as f64;
    let window: Vec<Vec<Vector>> = (from..=to).map(|k| trace.errors(k)).collect();
    let error_variance = empirical_error_cov(&window).ok();
    let network_error_variance = empirical_network_cov(&window).ok();
    let n = layout.n_cav;
    let nm = layout.nm() as f64;
    let mut disagreement: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = (from..=to)
                .map(|k| (&trace.estimates[k][i] - &trace.estimates[k][j]).norm_squared() / nm)
                .sum();
            disagreement = disagreement.max((s / (to - from + 1) as f64).sqrt());
        }
    }
    let detectors = (0..layout.detectors.len())
        .map(|d| detector_metrics(trace, layout, d))
        .collect();
    Ok(RunMetrics {
        steady_start: from,
        horizon: to,
        mse_per_cav: mse,
        mse_mean,
        error_variance,
        network_error_variance,
        disagreement_rms: disagreement,
        detectors,
    })
}

/// Identity defect `max_k ‖e_k − Â e_{k−1} − η_k‖∞` rebuilt from the trace:
/// `ν` from consecutive truth states, `μ` as measurement minus truth.
pub fn trace_defect(trace: &TraceData, setup: &Setup) -> Result<f64> {
    let k_end = trace.horizon();
    let sel = &setup.shared.selectors;
    let mut record = ErrorRecord {
        errors: Vec::with_capacity(k_end + 1),
        nu: Vec::with_capacity(k_end + 1),
        mu: Vec::with_capacity(k_end + 1),
    };
    for k in 0..=k_end {
        record.errors.push(trace.errors(k).into_iter().map(|e| -e).collect());
        if k == 0 {
            record.nu.push(Vector::zeros(setup.model.dim()));
            record.mu.push(vec![Vec::new(); sel.len()]);
            continue;
        }
        record.nu.push(&trace.truth[k] - setup.model.apply(&trace.truth[k - 1]));
        record.mu.push(
            trace.measurements[k]
                .iter()
                .zip(sel)
                .map(|(y, s)| y.iter().zip(s).map(|(v, &c)| v - trace.truth[k][c]).collect())
                .collect(),
        );
    }
    error_dynamics_check(&record, &setup.network, &setup.model, &setup.shared, &setup.design.k_diag)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    pub observability: ObservabilityReport,
    pub gain: GainDesign,
    pub bounds: Option<BoundChain>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub layout: TraceLayout,
    pub trace: TraceData,
    /// `evaluations[d][k][i][channel]`.
    pub evaluations: Vec<Vec<Vec<Vec<Option<Evaluation>>>>>,
    pub certificates: Certificates,
    pub metrics: RunMetrics,
    pub messages: MessageCounter,
    pub defect: f64,
}

/// Run the observer and detectors over a given realization.
pub fn run_with(s: &Scenario, setup: &Setup, real: &Realization, seed: u64) -> Result<RunResult> {
    let layout = TraceLayout::from_scenario(s, seed);
    let n = layout.n_cav;
    let k_end = s.horizon;
    let nm = setup.model.dim();
    let mut bank = ObserverBank::new(n, nm);
    let phi = |i: usize| setup.bounds.as_ref().map(|b| b.phi[i]).ok_or(Error::Unbounded { beta: setup.design.beta });
    let mut detectors: Vec<Vec<Vec<ChannelDetector>>> = s
        .detectors
        .iter()
        .map(|spec| {
            (0..n)
                .map(|i| {
                    (0..layout.channels[i].len())
                        .map(|_| ChannelDetector::new(spec.clone(), phi(i)?))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let empty: Vec<Vec<f64>> = layout.channels.iter().map(|_| Vec::new()).collect();
    let mut trace = TraceData {
        truth: real.truth.clone(),
        estimates: vec![bank.estimates.clone()],
        measurements: vec![empty.clone()],
        residuals: vec![empty],
        hypotheses: vec![vec![vec![Vec::new(); n]]; s.detectors.len()],
    };
    let mut evaluations: Vec<Vec<Vec<Vec<Option<Evaluation>>>>> = vec![vec![vec![Vec::new(); n]]; s.detectors.len()];
    for d in 0..s.detectors.len() {
        for i in 0..n {
            trace.hypotheses[d][0][i] = vec![None; layout.channels[i].len()];
            evaluations[d][0][i] = vec![None; layout.channels[i].len()];
        }
    }
    for k in 1..=k_end {
        let ys: Vec<Vec<f64>> = real.measurements[k - 1].iter().map(|m| m.y.clone()).collect();
        bank.step(&setup.network, &setup.model, &setup.shared, &setup.design.k_diag, &ys)?;
        let res = bank.residuals(&ys, &setup.shared);
        for (d, per_cav) in detectors.iter_mut().enumerate() {
            let mut ev_k = Vec::with_capacity(n);
            for (i, chans) in per_cav.iter_mut().enumerate() {
                let ev = chans
                    .iter_mut()
                    .zip(&res[i])
                    .map(|(det, &r)| det.update(r))
                    .collect::<Result<Vec<_>>>()?;
                ev_k.push(ev);
            }
            trace.hypotheses[d].push(
                ev_k.iter()
                    .map(|chs| chs.iter().map(|e| e.map(|e| e.hypothesis)).collect())
                    .collect(),
            );
            evaluations[d].push(ev_k);
        }
        trace.estimates.push(bank.estimates.clone());
        trace.measurements.push(ys);
        trace.residuals.push(res);
    }
    let metrics = compute_metrics(&trace, &layout)?;
    let defect = trace_defect(&trace, setup)?;
    Ok(RunResult {
        layout,
        trace,
        evaluations,
        certificates: Certificates {
            observability: setup.observability,
            gain: setup.design.clone(),
            bounds: setup.bounds.clone(),
        },
        metrics,
        messages: bank.messages,
        defect,
    })
}

/// Full run with the scenario's own seed.
pub fn run_scenario(s: &Scenario) -> Result<RunResult> {
    run_seeded(s, s.seed)
}

pub fn run_seeded(s: &Scenario, seed: u64) -> Result<RunResult> {
    let setup = prepare(s)?;
    let real = realize(s, seed)?;
    run_with(s, &setup, &real, seed)
}
