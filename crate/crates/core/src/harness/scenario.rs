//! Scenario documents: JSON parsing, validation with JSON-path error
//! reporting, and the typed form the simulator consumes.

use serde_json::{Map, Value};

use crate::dynamics::{
    Channel, FaultProfile, HdvBehavior, HdvModelParams, ModelKind, SensorSpec, SpeedProfile,
};
use crate::error::{Error, Result};
use crate::fdi::{detection_level_for_far, DetectorSpec};
use crate::gain::{GainFamily, Objective, SearchGrid};
use crate::topology::ConsensusRule;

#[derive(Clone, Debug, PartialEq)]
pub struct HdvSpec {
    pub behavior: HdvBehavior,
    pub initial_position: f64,
    pub initial_velocity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum NetworkSpec {
    OutNeighbors(Vec<Vec<usize>>),
    ErdosRenyi {
        p: f64,
        seed: Option<u64>,
        require_strong: bool,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GainConfig {
    pub epsilon: f64,
    pub family: GainFamily,
    pub objective: Objective,
    pub grid: SearchGrid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsConfig {
    /// Trailing fraction of the horizon treated as steady state.
    pub steady_fraction: f64,
    /// Steps skipped before pre-onset alarm rates are counted.
    pub warmup_steps: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            steady_fraction: 0.4,
            warmup_steps: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub horizon: usize,
    pub dt: f64,
    pub model_kind: ModelKind,
    pub params: HdvModelParams,
    pub hdvs: Vec<HdvSpec>,
    /// One sensor per CAV, with any fault profile attached.
    pub sensors: Vec<SensorSpec>,
    pub network: NetworkSpec,
    pub rule: ConsensusRule,
    pub gain: GainConfig,
    pub process_cov_scale: f64,
    pub measurement_gain: f64,
    pub detectors: Vec<DetectorSpec>,
    pub metrics: MetricsConfig,
}

impl Scenario {
    pub fn n_cav(&self) -> usize {
        self.sensors.len()
    }

    pub fn n_hdv(&self) -> usize {
        self.hdvs.len()
    }

    /// `(cav, onset)` of every active fault.
    pub fn active_faults(&self) -> Vec<(usize, usize)> {
        self.sensors
            .iter()
            .filter_map(|s| match &s.fault {
                Some(f) if f.active => Some((s.cav, f.onset_step)),
                _ => None,
            })
            .collect()
    }

    /// First step of the steady-state window.
    pub fn steady_start(&self) -> usize {
        let len = (self.horizon as f64 * self.metrics.steady_fraction).round() as usize;
        self.horizon + 1 - len.clamp(1, self.horizon)
    }
}

pub fn component_name(c: usize) -> &'static str {
    match c {
        0 => "position",
        1 => "velocity",
        2 => "acceleration",
        _ => "unknown",
    }
}

fn component_index(name: &str) -> Option<usize> {
    match name {
        "position" => Some(0),
        "velocity" => Some(1),
        "acceleration" => Some(2),
        _ => None,
    }
}

/// Collects validation errors with their JSON paths.
struct Checker {
    errors: Vec<String>,
}

impl Checker {
    fn err(&mut self, path: &str, msg: impl AsRef<str>) {
        self.errors.push(format!("{path}: {}", msg.as_ref()));
    }

    fn get<'a>(&mut self, obj: &'a Map<String, Value>, path: &str, key: &str, required: bool) -> Option<&'a Value> {
        match obj.get(key) {
            Some(Value::Null) | None => {
                if required {
                    self.err(&format!("{path}.{key}"), "missing required field");
                }
                None
            }
            Some(v) => Some(v),
        }
    }

    fn num(&mut self, obj: &Map<String, Value>, path: &str, key: &str, required: bool) -> Option<f64> {
        let v = self.get(obj, path, key, required)?;
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.err(&format!("{path}.{key}"), format!("expected a finite number, got {v}"));
                None
            }
        }
    }

    fn uint(&mut self, obj: &Map<String, Value>, path: &str, key: &str, required: bool) -> Option<u64> {
        let v = self.get(obj, path, key, required)?;
        match v.as_u64() {
            Some(x) => Some(x),
            None => {
                self.err(&format!("{path}.{key}"), format!("expected a non-negative integer, got {v}"));
                None
            }
        }
    }

    fn boolean(&mut self, obj: &Map<String, Value>, path: &str, key: &str) -> Option<bool> {
        let v = self.get(obj, path, key, false)?;
        match v.as_bool() {
            Some(b) => Some(b),
            None => {
                self.err(&format!("{path}.{key}"), format!("expected a boolean, got {v}"));
                None
            }
        }
    }

    fn string<'a>(&mut self, obj: &'a Map<String, Value>, path: &str, key: &str, required: bool) -> Option<&'a str> {
        let v = self.get(obj, path, key, required)?;
        match v.as_str() {
            Some(s) => Some(s),
            None => {
                self.err(&format!("{path}.{key}"), format!("expected a string, got {v}"));
                None
            }
        }
    }

    fn object<'a>(&mut self, obj: &'a Map<String, Value>, path: &str, key: &str, required: bool) -> Option<&'a Map<String, Value>> {
        let v = self.get(obj, path, key, required)?;
        match v.as_object() {
            Some(o) => Some(o),
            None => {
                self.err(&format!("{path}.{key}"), "expected an object");
                None
            }
        }
    }

    fn array<'a>(&mut self, obj: &'a Map<String, Value>, path: &str, key: &str, required: bool) -> Option<&'a Vec<Value>> {
        let v = self.get(obj, path, key, required)?;
        match v.as_array() {
            Some(a) => Some(a),
            None => {
                self.err(&format!("{path}.{key}"), "expected an array");
                None
            }
        }
    }

    fn nonneg(&mut self, path: &str, x: Option<f64>) -> Option<f64> {
        match x {
            Some(v) if v < 0.0 => {
                self.err(path, format!("must be >= 0, got {v}"));
                None
            }
            other => other,
        }
    }
}

fn as_object<'a>(c: &mut Checker, v: &'a Value, path: &str) -> Option<&'a Map<String, Value>> {
    let o = v.as_object();
    if o.is_none() {
        c.err(path, "expected an object");
    }
    o
}

fn parse_params(c: &mut Checker, root: &Map<String, Value>) -> Option<HdvModelParams> {
    let path = "$.hdv_params";
    let o = c.object(root, "$", "hdv_params", true)?;
    let rho = c.num(o, path, "rho", true);
    let tau = c.uint(o, path, "tau_steps", true);
    let a1 = c.num(o, path, "a1", true);
    let a2 = c.num(o, path, "a2", true);
    let b1 = c.num(o, path, "b1_m", true);
    let b1 = c.nonneg(&format!("{path}.b1_m"), b1);
    let b2 = c.num(o, path, "b2_s", true);
    let b2 = c.nonneg(&format!("{path}.b2_s"), b2);
    let var = c.num(o, path, "velocity_noise_var", true);
    let var = c.nonneg(&format!("{path}.velocity_noise_var"), var);
    let scale = c.boolean(o, path, "scale_by_dt").unwrap_or(true);
    Some(HdvModelParams {
        rho: rho?,
        tau: tau? as usize,
        a1: a1?,
        a2: a2?,
        b1: b1?,
        b2: b2?,
        process_noise_var: var?,
        scale_by_dt: scale,
    })
}

fn parse_profile(c: &mut Checker, o: &Map<String, Value>, path: &str) -> Option<SpeedProfile> {
    if let Some(v) = c.num(o, path, "desired_speed_mps", false) {
        return Some(SpeedProfile::constant(v));
    }
    let arr = c.array(o, path, "desired_speed_profile", true)?;
    let ppath = format!("{path}.desired_speed_profile");
    let mut segments = Vec::new();
    for (s, seg) in arr.iter().enumerate() {
        let spath = format!("{ppath}[{s}]");
        let so = as_object(c, seg, &spath)?;
        let from = c.uint(so, &spath, "from_step", true);
        let speed = c.num(so, &spath, "speed_mps", true);
        segments.push((from? as usize, speed?));
    }
    let profile = SpeedProfile { segments };
    if let Err(e) = profile.validate() {
        c.err(&ppath, e.to_string());
        return None;
    }
    Some(profile)
}

fn parse_hdvs(c: &mut Checker, root: &Map<String, Value>) -> Option<Vec<HdvSpec>> {
    let arr = c.array(root, "$", "hdvs", true)?;
    if arr.is_empty() {
        c.err("$.hdvs", "at least one HDV is required");
        return None;
    }
    let n = arr.len();
    let mut out = Vec::new();
    let mut ok = true;
    for (h, v) in arr.iter().enumerate() {
        let path = format!("$.hdvs[{h}]");
        let Some(o) = as_object(c, v, &path) else {
            ok = false;
            continue;
        };
        let behavior = match c.string(o, &path, "kind", true) {
            Some("free_flow") => parse_profile(c, o, &path).map(|p| HdvBehavior::FreeFlow { desired_speed: p }),
            Some("car_following") => match c.uint(o, &path, "leader", true) {
                Some(l) if l as usize >= n || l as usize == h => {
                    c.err(&format!("{path}.leader"), format!("leader {l} must be another HDV id in 0..{n}"));
                    None
                }
                Some(l) => Some(HdvBehavior::CarFollowing { leader: l as usize }),
                None => None,
            },
            Some(other) => {
                c.err(&format!("{path}.kind"), format!("unknown kind {other:?} (free_flow | car_following)"));
                None
            }
            None => None,
        };
        let p0 = c.num(o, &path, "initial_position_m", true);
        let v0 = c.num(o, &path, "initial_velocity_mps", true);
        match (behavior, p0, v0) {
            (Some(behavior), Some(p), Some(v)) => out.push(HdvSpec {
                behavior,
                initial_position: p,
                initial_velocity: v,
            }),
            _ => ok = false,
        }
    }
    ok.then_some(out)
}

fn parse_cavs(c: &mut Checker, root: &Map<String, Value>, n_hdv: Option<usize>, m: usize) -> Option<Vec<SensorSpec>> {
    let arr = c.array(root, "$", "cavs", true)?;
    if arr.is_empty() {
        c.err("$.cavs", "at least one CAV is required");
        return None;
    }
    let mut out = Vec::new();
    let mut ok = true;
    for (i, v) in arr.iter().enumerate() {
        let path = format!("$.cavs[{i}]");
        let Some(o) = as_object(c, v, &path) else {
            ok = false;
            continue;
        };
        let noise = c.num(o, &path, "noise_var", true);
        let noise = c.nonneg(&format!("{path}.noise_var"), noise);
        let mut channels = Vec::new();
        match c.array(o, &path, "measures", true) {
            Some(ms) if ms.is_empty() => {
                c.err(&format!("{path}.measures"), "a CAV must measure at least one channel");
                ok = false;
            }
            Some(ms) => {
                for (r, mv) in ms.iter().enumerate() {
                    let mpath = format!("{path}.measures[{r}]");
                    let Some(mo) = as_object(c, mv, &mpath) else {
                        ok = false;
                        continue;
                    };
                    let hdv = c.uint(mo, &mpath, "hdv", true);
                    let comp = c.string(mo, &mpath, "component", true);
                    let comp = match comp.map(|s| (s, component_index(s))) {
                        Some((_, Some(ci))) if ci < m => Some(ci),
                        Some((s, _)) => {
                            c.err(&format!("{mpath}.component"), format!("{s:?} is not a state component of the assumed model"));
                            None
                        }
                        None => None,
                    };
                    match (hdv, comp, n_hdv) {
                        (Some(h), _, Some(n)) if h as usize >= n => {
                            c.err(&format!("{mpath}.hdv"), format!("unknown HDV {h}"));
                            ok = false;
                        }
                        (Some(h), Some(ci), _) => {
                            let ch = Channel {
                                hdv: h as usize,
                                component: ci,
                            };
                            if channels.contains(&ch) {
                                c.err(&mpath, "duplicate channel");
                                ok = false;
                            } else {
                                channels.push(ch);
                            }
                        }
                        _ => ok = false,
                    }
                }
            }
            None => ok = false,
        }
        if let Some(noise) = noise {
            out.push(SensorSpec {
                cav: i,
                channels,
                noise_var: noise,
                fault: None,
            });
        } else {
            ok = false;
        }
    }
    ok.then_some(out)
}

fn parse_network(c: &mut Checker, root: &Map<String, Value>, n_cav: Option<usize>) -> Option<NetworkSpec> {
    let o = c.object(root, "$", "network", true)?;
    let path = "$.network";
    match (o.get("out_neighbors"), o.get("erdos_renyi")) {
        (Some(_), Some(_)) => {
            c.err(path, "give either out_neighbors or erdos_renyi, not both");
            None
        }
        (Some(lists), None) => {
            let Some(lists) = lists.as_array() else {
                c.err(&format!("{path}.out_neighbors"), "expected an array of arrays");
                return None;
            };
            if let Some(n) = n_cav {
                if lists.len() != n {
                    c.err(&format!("{path}.out_neighbors"), format!("{} lists for {n} CAVs", lists.len()));
                    return None;
                }
            }
            let n = lists.len();
            let mut out = Vec::new();
            for (j, l) in lists.iter().enumerate() {
                let lpath = format!("{path}.out_neighbors[{j}]");
                let ids: Option<Vec<usize>> = l.as_array().and_then(|a| a.iter().map(|x| x.as_u64().map(|v| v as usize)).collect());
                match ids {
                    Some(ids) if ids.iter().all(|&i| i < n) => out.push(ids),
                    _ => {
                        c.err(&lpath, format!("expected CAV ids in 0..{n}"));
                        return None;
                    }
                }
            }
            Some(NetworkSpec::OutNeighbors(out))
        }
        (None, Some(er)) => {
            let epath = format!("{path}.erdos_renyi");
            let eo = as_object(c, er, &epath)?;
            let p = c.num(eo, &epath, "p", true);
            if let Some(p) = p {
                if !(0.0..=1.0).contains(&p) {
                    c.err(&format!("{epath}.p"), format!("probability {p} outside [0, 1]"));
                    return None;
                }
            }
            let seed = c.uint(eo, &epath, "seed", false);
            let strong = c.boolean(eo, &epath, "require_strong").unwrap_or(true);
            Some(NetworkSpec::ErdosRenyi {
                p: p?,
                seed,
                require_strong: strong,
            })
        }
        (None, None) => {
            c.err(path, "missing out_neighbors or erdos_renyi");
            None
        }
    }
}

fn parse_rule(c: &mut Checker, root: &Map<String, Value>) -> Option<ConsensusRule> {
    match root.get("consensus_rule") {
        None | Some(Value::Null) => Some(ConsensusRule::Uniform),
        Some(v) => match serde_json::from_value(v.clone()) {
            Ok(r) => Some(r),
            Err(e) => {
                c.err("$.consensus_rule", format!("uniform | metropolis_hastings | {{\"given\": [[...]]}} ({e})"));
                None
            }
        },
    }
}

fn parse_gain(c: &mut Checker, root: &Map<String, Value>) -> Option<GainConfig> {
    let path = "$.gain";
    let empty = Map::new();
    let o = c.object(root, "$", "gain", false).unwrap_or(&empty);
    let eps = c.num(o, path, "epsilon", false).unwrap_or(0.5);
    let mut ok = true;
    if !(eps > 0.0 && eps < 1.0) {
        c.err(&format!("{path}.epsilon"), format!("must lie in (0, 1), got {eps}"));
        ok = false;
    }
    let mut enum_field = |key: &str, default: &str| -> Option<Value> {
        let s = c.string(o, path, key, false).unwrap_or(default);
        Some(Value::String(s.to_string()))
    };
    let family: Option<GainFamily> = enum_field("family", "shared").and_then(|v| serde_json::from_value(v).ok());
    let objective: Option<Objective> = enum_field("objective", "variance_bound").and_then(|v| serde_json::from_value(v).ok());
    if family.is_none() {
        c.err(&format!("{path}.family"), "shared | per_component");
    }
    if objective.is_none() {
        c.err(&format!("{path}.objective"), "spectral_radius | variance_bound");
    }
    let mut grid = SearchGrid::default();
    if let Some(g) = c.object(o, path, "grid", false) {
        let gpath = format!("{path}.grid");
        if let Some(v) = c.num(g, &gpath, "g_min", false) {
            grid.g_min = v;
        }
        if let Some(v) = c.num(g, &gpath, "g_max", false) {
            grid.g_max = v;
        }
        if let Some(v) = c.uint(g, &gpath, "points", false) {
            grid.points = v as usize;
        }
        if let Some(v) = c.uint(g, &gpath, "refine_iters", false) {
            grid.refine_iters = v as usize;
        }
        if let Some(v) = c.uint(g, &gpath, "sweeps", false) {
            grid.sweeps = v as usize;
        }
        if !(grid.g_min > 0.0 && grid.g_max >= grid.g_min) || grid.points < 2 {
            c.err(&gpath, "need 0 < g_min <= g_max and points >= 2");
            ok = false;
        }
    }
    if !ok {
        return None;
    }
    Some(GainConfig {
        epsilon: eps,
        family: family?,
        objective: objective?,
        grid,
    })
}

fn parse_detectors(c: &mut Checker, root: &Map<String, Value>) -> (f64, Option<Vec<DetectorSpec>>) {
    let path = "$.fdi";
    let empty = Map::new();
    let o = c.object(root, "$", "fdi", false).unwrap_or(&empty);
    let gain = c.num(o, path, "measurement_gain", false).unwrap_or(1.0);
    let Some(arr) = c.array(o, path, "detectors", false) else {
        return (gain, Some(Vec::new()));
    };
    let mut out = Vec::new();
    let mut ok = true;
    for (d, v) in arr.iter().enumerate() {
        let dpath = format!("{path}.detectors[{d}]");
        let Some(dobj) = as_object(c, v, &dpath) else {
            ok = false;
            continue;
        };
        let spec = match c.string(dobj, &dpath, "mode", true) {
            Some("stateless") => {
                let level = match (c.num(dobj, &dpath, "detection_level", false), c.num(dobj, &dpath, "far", false)) {
                    (Some(m), None) => Some(m),
                    (None, Some(far)) => detection_level_for_far(far).ok(),
                    _ => {
                        c.err(&dpath, "stateless detector needs exactly one of detection_level or far");
                        None
                    }
                };
                level.map(|m| DetectorSpec::Stateless { detection_level: m })
            }
            Some("stateful") => {
                let t = c.uint(dobj, &dpath, "window", true);
                let far = c.num(dobj, &dpath, "far", true);
                t.zip(far).map(|(t, far)| DetectorSpec::Stateful { window: t as usize, far })
            }
            Some("stateful_weighted") => {
                let t = c.uint(dobj, &dpath, "window", true);
                let lambda = c.num(dobj, &dpath, "lambda", true);
                let far = c.num(dobj, &dpath, "far", true);
                match (t, lambda, far) {
                    (Some(t), Some(lambda), Some(far)) => Some(DetectorSpec::StatefulWeighted {
                        window: t as usize,
                        lambda,
                        far,
                    }),
                    _ => None,
                }
            }
            Some(other) => {
                c.err(&format!("{dpath}.mode"), format!("unknown mode {other:?}"));
                None
            }
            None => None,
        };
        match spec {
            Some(s) => match s.validate() {
                Ok(()) => out.push(s),
                Err(e) => {
                    c.err(&dpath, e.to_string());
                    ok = false;
                }
            },
            None => ok = false,
        }
    }
    (gain, ok.then_some(out))
}

fn parse_faults(c: &mut Checker, root: &Map<String, Value>, sensors: &mut [SensorSpec], horizon: Option<usize>) {
    let Some(arr) = c.array(root, "$", "faults", false) else {
        return;
    };
    for (f, v) in arr.iter().enumerate() {
        let path = format!("$.faults[{f}]");
        let Some(o) = as_object(c, v, &path) else {
            continue;
        };
        let cav = c.uint(o, &path, "cav", true).map(|x| x as usize);
        let onset = c.uint(o, &path, "onset_step", true).map(|x| x as usize);
        let mean = c.num(o, &path, "bias_mean", true);
        let var = c.num(o, &path, "bias_var", true);
        let var = c.nonneg(&format!("{path}.bias_var"), var);
        let active = c.boolean(o, &path, "active").unwrap_or(true);
        let channels = match o.get("channels") {
            None | Some(Value::Null) => Some(None),
            Some(v) => match v.as_array().and_then(|a| a.iter().map(|x| x.as_u64().map(|u| u as usize)).collect::<Option<Vec<_>>>()) {
                Some(ch) => Some(Some(ch)),
                None => {
                    c.err(&format!("{path}.channels"), "expected an array of channel indices");
                    None
                }
            },
        };
        if let (Some(onset), Some(h)) = (onset, horizon) {
            if onset > h {
                c.err(&format!("{path}.onset_step"), format!("onset {onset} beyond horizon {h}"));
            }
        }
        let (Some(cav), Some(onset), Some(mean), Some(var), Some(channels)) = (cav, onset, mean, var, channels) else {
            continue;
        };
        let Some(sensor) = sensors.get_mut(cav) else {
            c.err(&format!("{path}.cav"), format!("unknown CAV {cav}"));
            continue;
        };
        if let Some(ch) = &channels {
            if let Some(bad) = ch.iter().find(|&&x| x >= sensor.channels.len()) {
                c.err(&format!("{path}.channels"), format!("CAV {cav} has no channel {bad}"));
                continue;
            }
        }
        if sensor.fault.is_some() {
            c.err(&format!("{path}.cav"), format!("CAV {cav} already has a fault profile"));
            continue;
        }
        sensor.fault = Some(FaultProfile {
            onset_step: onset,
            bias_mean: mean,
            bias_var: var,
            active,
            channels,
        });
    }
}

fn parse_metrics(c: &mut Checker, root: &Map<String, Value>) -> MetricsConfig {
    let mut m = MetricsConfig::default();
    if let Some(o) = c.object(root, "$", "metrics", false) {
        if let Some(f) = c.num(o, "$.metrics", "steady_fraction", false) {
            if f > 0.0 && f <= 1.0 {
                m.steady_fraction = f;
            } else {
                c.err("$.metrics.steady_fraction", format!("must lie in (0, 1], got {f}"));
            }
        }
        if let Some(w) = c.uint(o, "$.metrics", "warmup_steps", false) {
            m.warmup_steps = w as usize;
        }
    }
    m
}

/// Validate a raw JSON document. All problems are reported together, each
/// prefixed by its JSON path.
pub fn validate_scenario(raw: &Value) -> Result<Scenario> {
    let mut c = Checker { errors: Vec::new() };
    let Some(root) = raw.as_object() else {
        return Err(Error::Validation(vec!["$: scenario must be a JSON object".into()]));
    };
    let name = c.string(root, "$", "name", false).unwrap_or("unnamed").to_string();
    let seed = c.uint(root, "$", "seed", true);
    let horizon = c.uint(root, "$", "horizon_steps", true).map(|h| h as usize);
    if horizon == Some(0) {
        c.err("$.horizon_steps", "must be >= 1");
    }
    let dt = c.num(root, "$", "sampling_dt_s", true);
    if let Some(d) = dt {
        if !(d > 0.0) {
            c.err("$.sampling_dt_s", format!("must be positive, got {d}"));
        }
    }
    let model_kind = match c.string(root, "$", "model_kind", false).unwrap_or("ncv") {
        "ncv" => Some(ModelKind::Ncv),
        "nca" => Some(ModelKind::Nca),
        other => {
            c.err("$.model_kind", format!("unknown model {other:?} (ncv | nca)"));
            None
        }
    };
    let m = model_kind.map_or(2, |k| k.dim());
    let params = parse_params(&mut c, root);
    let hdvs = parse_hdvs(&mut c, root);
    let n_hdv = hdvs.as_ref().map(|h| h.len());
    let mut sensors = parse_cavs(&mut c, root, n_hdv, m);
    let n_cav = sensors.as_ref().map(|s| s.len());
    if let (Some(s), Some(n)) = (&sensors, n_hdv) {
        for h in 0..n {
            if !s.iter().any(|sp| sp.channels.iter().any(|ch| ch.hdv == h)) {
                c.err(
                    "$.cavs",
                    format!("HDV {h} is measured by no CAV; every HDV must be measured by at least one CAV or the observability condition is violated"),
                );
            }
        }
    }
    let network = parse_network(&mut c, root, n_cav);
    let rule = parse_rule(&mut c, root);
    let gain = parse_gain(&mut c, root);
    let process = match c.object(root, "$", "noise", true) {
        Some(o) => {
            let v = c.num(o, "$.noise", "process_cov_scale", true);
            c.nonneg("$.noise.process_cov_scale", v)
        }
        None => None,
    };
    let (measurement_gain, detectors) = parse_detectors(&mut c, root);
    if let (Some(h), Some(ds)) = (horizon, &detectors) {
        for (d, spec) in ds.iter().enumerate() {
            if spec.window() >= h {
                c.err(&format!("$.fdi.detectors[{d}].window"), format!("window {} must be shorter than the horizon {h}", spec.window()));
            }
        }
    }
    if let Some(s) = sensors.as_mut() {
        parse_faults(&mut c, root, s, horizon);
    }
    let metrics = parse_metrics(&mut c, root);
    if let Some(h) = horizon {
        if metrics.warmup_steps >= h {
            c.err("$.metrics.warmup_steps", "warmup must end before the horizon");
        }
    }
    if !c.errors.is_empty() {
        return Err(Error::Validation(c.errors));
    }
    let missing = || Error::Validation(vec!["$: incomplete scenario".into()]);
    Ok(Scenario {
        name,
        seed: seed.ok_or_else(missing)?,
        horizon: horizon.ok_or_else(missing)?,
        dt: dt.ok_or_else(missing)?,
        model_kind: model_kind.ok_or_else(missing)?,
        params: params.ok_or_else(missing)?,
        hdvs: hdvs.ok_or_else(missing)?,
        sensors: sensors.ok_or_else(missing)?,
        network: network.ok_or_else(missing)?,
        rule: rule.ok_or_else(missing)?,
        gain: gain.ok_or_else(missing)?,
        process_cov_scale: process.ok_or_else(missing)?,
        measurement_gain,
        detectors: detectors.ok_or_else(missing)?,
        metrics,
    })
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let raw: Value = serde_json::from_str(text).map_err(|e| Error::Validation(vec![format!("$: invalid JSON: {e}")]))?;
    validate_scenario(&raw)
}
