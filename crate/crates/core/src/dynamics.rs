//! HDV truth simulation, the kinematic models the CAVs assume, and sensor
//! measurement generation.
//!
//! Velocity recursions are the free-flow relaxation toward a desired speed
//! and Helly's car-following law, both with a reaction delay of `tau` steps.
//! By default the deterministic increments are multiplied by the sampling
//! interval so that the rate constants are per second; with `tau = 10` and
//! `rho = 0.2` the unscaled per-step recursion is oscillatory-unstable
//! (dominant root modulus about 1.02). Set `scale_by_dt = false` for the raw
//! per-step form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matstat::linalg::block_diag;
use crate::matstat::{Matrix, RngStream, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ncv,
    Nca,
}

impl ModelKind {
    /// State components per HDV.
    pub fn dim(self) -> usize {
        match self {
            ModelKind::Ncv => 2,
            ModelKind::Nca => 3,
        }
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("sampling interval must be positive, got {dt}")))
    }
}

/// Nearly-constant-velocity block `[[1, dt], [0, 1]]`.
pub fn ncv_block(dt: f64) -> Result<Matrix> {
    check_dt(dt)?;
    Ok(Matrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]))
}

/// Nearly-constant-acceleration block.
pub fn nca_block(dt: f64) -> Result<Matrix> {
    check_dt(dt)?;
    Ok(Matrix::from_row_slice(
        3,
        3,
        &[1.0, dt, 0.5 * dt * dt, 0.0, 1.0, dt, 0.0, 0.0, 1.0],
    ))
}

pub fn model_block(kind: ModelKind, dt: f64) -> Result<Matrix> {
    match kind {
        ModelKind::Ncv => ncv_block(dt),
        ModelKind::Nca => nca_block(dt),
    }
}

/// Global model assumed by every CAV: `x_{k+1} = A x_k + ν_k`, `ν ~ N(0, G)`.
#[derive(Clone, Debug)]
pub struct AssumedModel {
    pub kind: ModelKind,
    pub dt: f64,
    pub n_hdv: usize,
    /// Per-HDV block, identical for every HDV.
    pub block: Matrix,
    pub g: Matrix,
}

impl AssumedModel {
    pub fn new(kind: ModelKind, dt: f64, n_hdv: usize, process_cov_scale: f64) -> Result<Self> {
        if n_hdv == 0 {
            return Err(Error::Dimension("at least one HDV is required".into()));
        }
        if !(process_cov_scale >= 0.0) {
            return Err(Error::Domain("process covariance scale must be >= 0".into()));
        }
        let block = model_block(kind, dt)?;
        let nm = n_hdv * kind.dim();
        Ok(Self {
            kind,
            dt,
            n_hdv,
            block,
            g: Matrix::identity(nm, nm) * process_cov_scale,
        })
    }

    pub fn m(&self) -> usize {
        self.kind.dim()
    }

    /// Global state dimension `N·m`.
    pub fn dim(&self) -> usize {
        self.n_hdv * self.m()
    }

    pub fn a(&self) -> Matrix {
        block_diag(&vec![self.block.clone(); self.n_hdv])
    }

    /// `A x` without forming `A`.
    pub fn apply(&self, x: &Vector) -> Vector {
        let m = self.m();
        let mut out = Vector::zeros(x.len());
        for h in 0..self.n_hdv {
            let seg = self.block.clone() * x.rows(h * m, m);
            out.rows_mut(h * m, m).copy_from(&seg);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HdvModelParams {
    pub rho: f64,
    pub tau: usize,
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub process_noise_var: f64,
    #[serde(default = "default_true")]
    pub scale_by_dt: bool,
}

fn default_true() -> bool {
    true
}

impl Default for HdvModelParams {
    fn default() -> Self {
        Self {
            rho: 0.2,
            tau: 10,
            a1: 0.4,
            a2: 0.1,
            b1: 10.0,
            b2: 0.5,
            process_noise_var: 0.1,
            scale_by_dt: true,
        }
    }
}

/// Piecewise-constant desired speed: each `(step, speed)` holds from `step`
/// until the next segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    pub segments: Vec<(usize, f64)>,
}

impl SpeedProfile {
    pub fn constant(v: f64) -> Self {
        Self { segments: vec![(0, v)] }
    }

    pub fn validate(&self) -> Result<()> {
        match self.segments.first() {
            Some((0, _)) => {}
            _ => return Err(Error::Domain("speed profile must start at step 0".into())),
        }
        if self.segments.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Domain("speed profile steps must increase".into()));
        }
        Ok(())
    }

    pub fn at(&self, k: usize) -> f64 {
        self.segments
            .iter()
            .take_while(|(s, _)| *s <= k)
            .last()
            .map_or(self.segments[0].1, |(_, v)| *v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HdvBehavior {
    FreeFlow { desired_speed: SpeedProfile },
    CarFollowing { leader: usize },
}

/// Position and velocity history of one HDV, starting at step `-tau` so
/// delayed terms are always available.
#[derive(Clone, Debug)]
pub struct TruthState {
    start: i64,
    pos: Vec<f64>,
    vel: Vec<f64>,
}

impl TruthState {
    /// History for steps `-tau..=0` holds the initial state constant.
    pub fn new(p0: f64, v0: f64, tau: usize) -> Self {
        Self {
            start: -(tau as i64),
            pos: vec![p0; tau + 1],
            vel: vec![v0; tau + 1],
        }
    }

    pub fn first_step(&self) -> i64 {
        self.start
    }

    pub fn last_step(&self) -> i64 {
        self.start + self.pos.len() as i64 - 1
    }

    fn idx(&self, k: i64) -> Result<usize> {
        if k < self.start || k > self.last_step() {
            return Err(Error::History {
                needed: k,
                available: self.start,
            });
        }
        Ok((k - self.start) as usize)
    }

    pub fn pos(&self, k: i64) -> Result<f64> {
        Ok(self.pos[self.idx(k)?])
    }

    pub fn vel(&self, k: i64) -> Result<f64> {
        Ok(self.vel[self.idx(k)?])
    }

    pub fn push(&mut self, p: f64, v: f64) {
        self.pos.push(p);
        self.vel.push(v);
    }
}

fn scale(params: &HdvModelParams, dt: f64) -> f64 {
    if params.scale_by_dt {
        dt
    } else {
        1.0
    }
}

/// `v(k+1) = v(k) + s·ϱ(v_d(k) − v(k−τ)) + σ(k)`, `s = dt` or 1.
pub fn step_free_flow(
    state: &TruthState,
    params: &HdvModelParams,
    desired: f64,
    dt: f64,
    k: i64,
    rng: &mut RngStream,
) -> Result<f64> {
    let v = state.vel(k)?;
    let delayed = state.vel(k - params.tau as i64)?;
    let noise = rng.gaussian(0.0, params.process_noise_var)?;
    Ok(v + scale(params, dt) * params.rho * (desired - delayed) + noise)
}

/// Helly's law: `v(k+1) = v(k) + s·(a1·δv(k−τ) + a2·(δx(k−τ) − D))` with
/// `D = b1 + b2·v(k−τ)`.
pub fn step_car_following(
    state: &TruthState,
    front: &TruthState,
    params: &HdvModelParams,
    dt: f64,
    k: i64,
) -> Result<f64> {
    let kd = k - params.tau as i64;
    let v = state.vel(k)?;
    let own_v = state.vel(kd)?;
    let dv = front.vel(kd)? - own_v;
    let dx = front.pos(kd)? - state.pos(kd)?;
    let gap = params.b1 + params.b2 * own_v;
    Ok(v + scale(params, dt) * (params.a1 * dv + params.a2 * (dx - gap)))
}

/// Explicit Euler position update.
pub fn step_position(state: &TruthState, dt: f64, k: i64) -> Result<f64> {
    Ok(state.pos(k)? + dt * state.vel(k)?)
}

/// Truth simulator for a set of HDVs.
#[derive(Clone, Debug)]
pub struct Platoon {
    pub behaviors: Vec<HdvBehavior>,
    pub params: HdvModelParams,
    pub dt: f64,
    pub states: Vec<TruthState>,
    k: i64,
}

impl Platoon {
    pub fn new(
        behaviors: Vec<HdvBehavior>,
        initial: &[(f64, f64)],
        params: HdvModelParams,
        dt: f64,
    ) -> Result<Self> {
        check_dt(dt)?;
        if behaviors.len() != initial.len() {
            return Err(Error::Dimension(format!(
                "{} behaviors for {} initial states",
                behaviors.len(),
                initial.len()
            )));
        }
        for (h, b) in behaviors.iter().enumerate() {
            match b {
                HdvBehavior::FreeFlow { desired_speed } => desired_speed.validate()?,
                HdvBehavior::CarFollowing { leader } => {
                    if *leader >= behaviors.len() || *leader == h {
                        return Err(Error::Domain(format!("hdv {h} has invalid leader {leader}")));
                    }
                }
            }
        }
        let states = initial
            .iter()
            .map(|&(p, v)| TruthState::new(p, v, params.tau))
            .collect();
        Ok(Self {
            behaviors,
            params,
            dt,
            states,
            k: 0,
        })
    }

    pub fn step_index(&self) -> i64 {
        self.k
    }

    /// Advance every HDV from `k` to `k + 1`. Process noise is drawn in HDV
    /// order for free-flow vehicles only.
    pub fn advance(&mut self, rng: &mut RngStream) -> Result<()> {
        let k = self.k;
        let mut next = Vec::with_capacity(self.states.len());
        for (h, b) in self.behaviors.iter().enumerate() {
            let s = &self.states[h];
            let v = match b {
                HdvBehavior::FreeFlow { desired_speed } => {
                    let vd = desired_speed.at(k as usize);
                    step_free_flow(s, &self.params, vd, self.dt, k, rng)?
                }
                HdvBehavior::CarFollowing { leader } => {
                    step_car_following(s, &self.states[*leader], &self.params, self.dt, k)?
                }
            };
            next.push((step_position(s, self.dt, k)?, v));
        }
        for (s, (p, v)) in self.states.iter_mut().zip(next) {
            s.push(p, v);
        }
        self.k += 1;
        Ok(())
    }

    /// Global state at step `k` in the layout of `kind`. Acceleration for the
    /// NCA layout is the backward difference of velocity.
    pub fn global_state(&self, k: i64, kind: ModelKind) -> Result<Vector> {
        let m = kind.dim();
        let mut x = Vector::zeros(self.states.len() * m);
        for (h, s) in self.states.iter().enumerate() {
            x[h * m] = s.pos(k)?;
            x[h * m + 1] = s.vel(k)?;
            if m == 3 {
                x[h * m + 2] = (s.vel(k)? - s.vel(k - 1)?) / self.dt;
            }
        }
        Ok(x)
    }
}

/// One measured state coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub hdv: usize,
    pub component: usize,
}

impl Channel {
    pub fn coordinate(&self, m: usize) -> usize {
        self.hdv * m + self.component
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultProfile {
    pub onset_step: usize,
    pub bias_mean: f64,
    pub bias_var: f64,
    pub active: bool,
    /// Faulted channel indices of the sensor; `None` means all channels.
    #[serde(default)]
    pub channels: Option<Vec<usize>>,
}

impl FaultProfile {
    pub fn affects(&self, channel: usize, k: usize) -> bool {
        self.active
            && k >= self.onset_step
            && self.channels.as_ref().is_none_or(|c| c.contains(&channel))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorSpec {
    pub cav: usize,
    pub channels: Vec<Channel>,
    pub noise_var: f64,
    pub fault: Option<FaultProfile>,
}

impl SensorSpec {
    /// State coordinates selected by each row of `C_i`.
    pub fn selector(&self, m: usize) -> Vec<usize> {
        self.channels.iter().map(|c| c.coordinate(m)).collect()
    }

    pub fn c_matrix(&self, m: usize, nm: usize) -> Matrix {
        let mut c = Matrix::zeros(self.channels.len(), nm);
        for (r, col) in self.selector(m).into_iter().enumerate() {
            c[(r, col)] = 1.0;
        }
        c
    }
}

/// A measurement split into its parts: `y = C x + noise + fault`.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub y: Vec<f64>,
    pub noise: Vec<f64>,
    pub fault: Vec<f64>,
}

/// Noise is drawn from `noise_rng` for every channel; fault biases come from
/// `fault_rng` only while the fault is active, so an inactive fault leaves all
/// streams untouched.
pub fn measure(
    spec: &SensorSpec,
    x: &Vector,
    m: usize,
    k: usize,
    noise_rng: &mut RngStream,
    fault_rng: &mut RngStream,
) -> Result<Measurement> {
    let sel = spec.selector(m);
    if let Some(&bad) = sel.iter().find(|&&c| c >= x.len()) {
        return Err(Error::Dimension(format!(
            "cav {} selects coordinate {bad} of a {}-dimensional state",
            spec.cav,
            x.len()
        )));
    }
    let mut out = Measurement {
        y: Vec::with_capacity(sel.len()),
        noise: Vec::with_capacity(sel.len()),
        fault: Vec::with_capacity(sel.len()),
    };
    for (ch, &coord) in sel.iter().enumerate() {
        let noise = noise_rng.gaussian(0.0, spec.noise_var)?;
        let fault = match &spec.fault {
            Some(f) if f.affects(ch, k) => fault_rng.gaussian(f.bias_mean, f.bias_var)?,
            _ => 0.0,
        };
        out.y.push(x[coord] + noise + fault);
        out.noise.push(noise);
        out.fault.push(fault);
    }
    Ok(out)
}
