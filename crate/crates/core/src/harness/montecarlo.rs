//! Monte Carlo campaigns over seeds.
//!
//! Trial 0 reuses the scenario seed, so a one-trial campaign reproduces
//! `run_scenario`. Later trials derive their seeds with SplitMix64. Trials run
//! on a rayon pool whose size honors `FLEET_OBSERVER_THREADS`; results are
//! collected in trial order, so aggregates do not depend on scheduling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matstat::rng::mix_seed;

use super::run::{prepare, realize, run_with, Rate, RunMetrics};
use super::scenario::Scenario;

pub const THREADS_ENV: &str = "FLEET_OBSERVER_THREADS";

pub fn trial_seed(base: u64, trial: usize) -> u64 {
    if trial == 0 {
        base
    } else {
        mix_seed(base, trial as u64)
    }
}

/// Mean and 95% normal-approximation half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: f64,
    pub ci95: f64,
}

impl Aggregate {
    pub fn of(xs: &[f64]) -> Option<Self> {
        let n = xs.len();
        if n == 0 {
            return None;
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let ci95 = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * (var / n as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { n, mean, ci95 })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub seed: u64,
    pub metrics: RunMetrics,
    pub defect: f64,
    pub theta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorAggregate {
    pub label: String,
    /// Per-trial pre-onset alarm rate at fault-free CAVs.
    pub false_alarm_rate: Option<Aggregate>,
    /// Pooled counts behind [`Self::false_alarm_rate`].
    pub false_alarms: Rate,
    /// Pooled non-overlapping fault-free windows.
    pub disjoint_windows: Rate,
    /// Per-trial post-onset alarm rate at faulty CAVs.
    pub detection_rate: Option<Aggregate>,
    /// Per-trial post-onset alarm rate at fault-free CAVs.
    pub post_onset_clean_rate: Option<Aggregate>,
    pub detection_delay: Option<Aggregate>,
    /// Trials in which the faulty CAV never alarmed after the onset.
    pub missed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub scenario: String,
    pub base_seed: u64,
    pub trials: Vec<Trial>,
    pub mse: Aggregate,
    pub detectors: Vec<DetectorAggregate>,
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let from_env = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0);
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads.or(from_env) {
        b = b.num_threads(t);
    }
    b.build().map_err(|e| Error::Io(format!("thread pool: {e}")))
}

/// Run `trials` seeded realizations. `threads` overrides the environment.
pub fn monte_carlo(s: &Scenario, trials: usize, threads: Option<usize>) -> Result<MonteCarloReport> {
    if trials == 0 {
        return Err(Error::Domain("at least one trial is required".into()));
    }
    let setup = prepare(s)?;
    let pool = pool(threads)?;
    let results: Vec<Result<Trial>> = pool.install(|| {
        use rayon::prelude::*;
        (0..trials)
            .into_par_iter()
            .map(|t| {
                let seed = trial_seed(s.seed, t);
                let real = realize(s, seed)?;
                let r = run_with(s, &setup, &real, seed)?;
                Ok(Trial {
                    index: t,
                    seed,
                    metrics: r.metrics,
                    defect: r.defect,
                    theta: r.certificates.bounds.as_ref().map(|b| b.theta),
                })
            })
            .collect()
    });
    let trials = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(aggregate(s, trials))
}

pub fn aggregate(s: &Scenario, trials: Vec<Trial>) -> MonteCarloReport {
    let faulty: Vec<usize> = s.active_faults().iter().map(|&(i, _)| i).collect();
    let clean: Vec<usize> = (0..s.n_cav()).filter(|i| !faulty.contains(i)).collect();
    let mse: Vec<f64> = trials.iter().map(|t| t.metrics.mse_mean).collect();
    let detectors = s
        .detectors
        .iter()
        .enumerate()
        .map(|(d, spec)| {
            let mut far = Vec::new();
            let mut post_clean = Vec::new();
            let mut det = Vec::new();
            let mut delay = Vec::new();
            let mut missed = 0;
            let mut false_alarms = Rate::default();
            let mut disjoint = Rate::default();
            for t in &trials {
                let m = &t.metrics.detectors[d];
                let mut pre = Rate::default();
                let mut post = Rate::default();
                for &i in &clean {
                    pre.merge(&m.pre_onset[i]);
                    post.merge(&m.post_onset[i]);
                    disjoint.merge(&m.disjoint_windows[i]);
                }
                false_alarms.merge(&pre);
                far.extend(pre.value());
                post_clean.extend(post.value());
                let mut hit = Rate::default();
                for &i in &faulty {
                    hit.merge(&m.post_onset[i]);
                    match m.detection_delay[i] {
                        Some(dl) => delay.push(dl as f64),
                        None => missed += 1,
                    }
                }
                det.extend(hit.value());
            }
            DetectorAggregate {
                label: spec.label(),
                false_alarm_rate: Aggregate::of(&far),
                false_alarms,
                disjoint_windows: disjoint,
                detection_rate: Aggregate::of(&det),
                post_onset_clean_rate: Aggregate::of(&post_clean),
                detection_delay: Aggregate::of(&delay),
                missed,
            }
        })
        .collect();
    MonteCarloReport {
        scenario: s.name.clone(),
        base_seed: s.seed,
        mse: Aggregate::of(&mse).expect("at least one trial"),
        trials,
        detectors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::presets::preset;
    use crate::harness::run::run_scenario;
    use crate::harness::scenario::validate_scenario;

    #[test]
    fn aggregate_of_constant() {
        let a = Aggregate::of(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((a.n, a.mean, a.ci95), (3, 2.0, 0.0));
        assert!(Aggregate::of(&[]).is_none());
        let b = Aggregate::of(&[1.0, 3.0]).unwrap();
        assert!((b.ci95 - 1.96 * (2.0f64 / 2.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn one_trial_equals_single_run() {
        let mut s = validate_scenario(&preset("fault_cav2").unwrap()).unwrap();
        s.horizon = 400;
        let single = run_scenario(&s).unwrap();
        let mc = monte_carlo(&s, 1, Some(1)).unwrap();
        assert_eq!(mc.trials[0].metrics, single.metrics);
        assert_eq!(mc.trials[0].seed, s.seed);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut s = validate_scenario(&preset("fig1_4x4").unwrap()).unwrap();
        s.horizon = 300;
        let a = monte_carlo(&s, 4, Some(1)).unwrap();
        let b = monte_carlo(&s, 4, Some(3)).unwrap();
        assert_eq!(a, b);
        let seeds: Vec<u64> = a.trials.iter().map(|t| t.seed).collect();
        let mut dedup = seeds.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), seeds.len());
    }
}
