//! Ground-truth second-order plant `ṗ = q`, `q̇ = A₁p + A₂q + Bu`, its
//! reference-tracking controller and the position sensor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{self, symmetric_eigen, vectorize, Mat};

/// Condition number of `B` above which its pseudoinverse is refused.
pub const MAX_INPUT_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    pub a1: Mat,
    pub a2: Mat,
    pub b: Mat,
}

impl PlantParams {
    pub fn new(a1: Mat, a2: Mat, b: Mat) -> Result<Self> {
        let params = PlantParams { a1, a2, b };
        params.validate()?;
        Ok(params)
    }

    /// The two-degree-of-freedom plant used in the reference simulations.
    pub fn reference() -> Self {
        PlantParams {
            a1: Mat::from_rows(&[[2.0, 3.0], [1.0, 2.0]]).unwrap(),
            a2: Mat::from_rows(&[[1.0, 5.0], [1.0, 8.0]]).unwrap(),
            b: Mat::from_rows(&[[1.0, 3.0], [0.0, 1.0]]).unwrap(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a1.rows();
        if n == 0 {
            return Err(Error::Config("plant state dimension must be positive".into()));
        }
        if self.a1.shape() != (n, n) {
            return Err(Error::dim("PlantParams.a1", format!("{n}x{n}"), format!("{:?}", self.a1.shape())));
        }
        if self.a2.shape() != (n, n) {
            return Err(Error::dim("PlantParams.a2", format!("{n}x{n}"), format!("{:?}", self.a2.shape())));
        }
        if self.b.rows() != n || self.b.cols() == 0 {
            return Err(Error::dim("PlantParams.b", format!("{n}xm"), format!("{:?}", self.b.shape())));
        }
        if !(self.a1.is_finite() && self.a2.is_finite() && self.b.is_finite()) {
            return Err(Error::NonFinite("plant matrices"));
        }
        Ok(())
    }

    /// Half state dimension `n`.
    pub fn n(&self) -> usize {
        self.a1.rows()
    }

    /// Input dimension `m`.
    pub fn m(&self) -> usize {
        self.b.cols()
    }

    /// Number of unknown parameters, `2n² + mn`.
    pub fn theta_len(&self) -> usize {
        theta_len(self.n(), self.m())
    }

    /// `A₁p + A₂q + Bu`
    pub fn acceleration(&self, p: &[f64], q: &[f64], u: &[f64]) -> Vec<f64> {
        let mut acc = self.a1.mul_vec(p);
        matrix::axpy(&mut acc, 1.0, &self.a2.mul_vec(q));
        matrix::axpy(&mut acc, 1.0, &self.b.mul_vec(u));
        acc
    }
}

pub fn theta_len(n: usize, m: usize) -> usize {
    2 * n * n + m * n
}

/// `θ = [vec(A₁); vec(A₂); vec(B)]`
pub fn true_theta(params: &PlantParams) -> Vec<f64> {
    let mut theta = vectorize(&params.a1);
    theta.extend(vectorize(&params.a2));
    theta.extend(vectorize(&params.b));
    theta
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantState {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub t: f64,
}

impl PlantState {
    pub fn new(p: Vec<f64>, q: Vec<f64>, t: f64) -> Self {
        PlantState { p, q, t }
    }

    pub fn at_rest(n: usize) -> Self {
        PlantState::new(vec![0.0; n], vec![0.0; n], 0.0)
    }

    pub fn is_finite(&self) -> bool {
        matrix::all_finite(&self.p) && matrix::all_finite(&self.q) && self.t.is_finite()
    }

    /// `‖[p; q]‖`
    pub fn norm(&self) -> f64 {
        (matrix::dot(&self.p, &self.p) + matrix::dot(&self.q, &self.q)).sqrt()
    }
}

fn check_state(state: &PlantState, params: &PlantParams) -> Result<()> {
    let n = params.n();
    if state.p.len() != n || state.q.len() != n {
        return Err(Error::dim(
            "plant state",
            n,
            format!("p:{} q:{}", state.p.len(), state.q.len()),
        ));
    }
    Ok(())
}

fn check_step(ts: f64) -> Result<()> {
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(Error::Config(format!("sample time must be positive, got {ts}")));
    }
    Ok(())
}

/// One forward-Euler step with the input held over the step.
pub fn euler_step(state: &PlantState, u: &[f64], ts: f64, params: &PlantParams) -> Result<PlantState> {
    check_step(ts)?;
    check_state(state, params)?;
    if u.len() != params.m() {
        return Err(Error::dim("plant input", params.m(), u.len()));
    }
    let acc = params.acceleration(&state.p, &state.q, u);
    let mut p = state.p.clone();
    matrix::axpy(&mut p, ts, &state.q);
    let mut q = state.q.clone();
    matrix::axpy(&mut q, ts, &acc);
    Ok(PlantState::new(p, q, state.t + ts))
}

/// One classical Runge-Kutta step of the closed loop, re-evaluating the
/// feedback `law(p, q, t)` at every stage.
pub fn rk4_step(
    state: &PlantState,
    ts: f64,
    params: &PlantParams,
    mut law: impl FnMut(&[f64], &[f64], f64) -> Vec<f64>,
) -> Result<PlantState> {
    check_step(ts)?;
    check_state(state, params)?;
    let m = params.m();
    let mut deriv = |p: &[f64], q: &[f64], t: f64| -> Result<(Vec<f64>, Vec<f64>)> {
        let u = law(p, q, t);
        if u.len() != m {
            return Err(Error::dim("plant input", m, u.len()));
        }
        Ok((q.to_vec(), params.acceleration(p, q, &u)))
    };
    let offset = |x: &[f64], h: f64, d: &[f64]| -> Vec<f64> {
        let mut out = x.to_vec();
        matrix::axpy(&mut out, h, d);
        out
    };
    let (p0, q0, t0) = (&state.p, &state.q, state.t);
    let half = 0.5 * ts;
    let k1 = deriv(p0, q0, t0)?;
    let k2 = deriv(&offset(p0, half, &k1.0), &offset(q0, half, &k1.1), t0 + half)?;
    let k3 = deriv(&offset(p0, half, &k2.0), &offset(q0, half, &k2.1), t0 + half)?;
    let k4 = deriv(&offset(p0, ts, &k3.0), &offset(q0, ts, &k3.1), t0 + ts)?;
    let combine = |x: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
        (0..x.len())
            .map(|i| x[i] + ts / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]))
            .collect()
    };
    Ok(PlantState::new(
        combine(p0, &k1.0, &k2.0, &k3.0, &k4.0),
        combine(q0, &k1.1, &k2.1, &k3.1, &k4.1),
        t0 + ts,
    ))
}

/// How the truth plant is advanced between samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    /// Forward Euler with the sampled input held over the step.
    Euler,
    /// Classical RK4 with the feedback law evaluated continuously.
    #[default]
    Rk4,
}

/// Desired position and its first two derivatives, identical in every channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub pd: Vec<f64>,
    pub qd: Vec<f64>,
    pub qdd: Vec<f64>,
}

const REFERENCE_FREQUENCIES: [f64; 4] = [1.0, 2.0, 3.0, 5.0];

/// `sin t + sin 2t + sin 3t + sin 5t` in each of the `n` channels.
pub fn desired_trajectory(t: f64, n: usize) -> Reference {
    let (mut pd, mut qd, mut qdd) = (0.0, 0.0, 0.0);
    for w in REFERENCE_FREQUENCIES {
        let (s, c) = (w * t).sin_cos();
        pd += s;
        qd += w * c;
        qdd -= w * w * s;
    }
    Reference {
        pd: vec![pd; n],
        qd: vec![qd; n],
        qdd: vec![qdd; n],
    }
}

/// Moore-Penrose pseudoinverse of a full-rank matrix, computed from the
/// symmetric eigen-decomposition of its smaller Gram matrix.
pub fn pseudo_inverse(b: &Mat) -> Result<Mat> {
    let tall = b.rows() >= b.cols();
    let gram = if tall { b.gram() } else { b.transpose().gram() };
    let eig = symmetric_eigen(&gram)?;
    let lo = eig.values[0];
    let hi = *eig.values.last().unwrap();
    if lo <= 0.0 || hi <= 0.0 {
        return Err(Error::IllConditioned(f64::INFINITY));
    }
    let cond = (hi / lo).sqrt();
    if cond > MAX_INPUT_CONDITION {
        return Err(Error::IllConditioned(cond));
    }
    let inv = eig.reconstruct_with(|l| 1.0 / l);
    Ok(if tall {
        inv.matmul(&b.transpose())
    } else {
        b.transpose().matmul(&inv)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingGains {
    pub kp: f64,
    pub kd: f64,
}

impl Default for TrackingGains {
    fn default() -> Self {
        TrackingGains { kp: 10.0, kd: 10.0 }
    }
}

/// Model-based PD tracking law
/// `u = B⁺(q̈_d − A₁p − A₂q − k_d(q − q_d) − k_p(p − p_d))`.
///
/// It uses the true plant matrices; only the estimator is kept blind to them.
#[derive(Clone, Debug)]
pub struct TrackingController {
    gains: TrackingGains,
    b_pinv: Mat,
}

impl TrackingController {
    pub fn new(params: &PlantParams, gains: TrackingGains) -> Result<Self> {
        params.validate()?;
        Ok(TrackingController {
            gains,
            b_pinv: pseudo_inverse(&params.b)?,
        })
    }

    pub fn b_pinv(&self) -> &Mat {
        &self.b_pinv
    }

    /// Commanded acceleration before mapping through `B⁺`.
    fn acceleration_command(&self, params: &PlantParams, p: &[f64], q: &[f64], t: f64) -> Vec<f64> {
        let reference = desired_trajectory(t, params.n());
        let a1p = params.a1.mul_vec(p);
        let a2q = params.a2.mul_vec(q);
        let TrackingGains { kp, kd } = self.gains;
        (0..params.n())
            .map(|i| {
                reference.qdd[i] - a1p[i] - a2q[i] - kd * (q[i] - reference.qd[i]) - kp * (p[i] - reference.pd[i])
            })
            .collect()
    }

    pub fn control(&self, params: &PlantParams, p: &[f64], q: &[f64], t: f64) -> Vec<f64> {
        self.b_pinv.mul_vec(&self.acceleration_command(params, p, q, t))
    }
}

pub fn tracking_control(state: &PlantState, t: f64, params: &PlantParams, gains: TrackingGains) -> Result<Vec<f64>> {
    check_state(state, params)?;
    Ok(TrackingController::new(params, gains)?.control(params, &state.p, &state.q, t))
}

/// Finite-duration sinusoidal probing acceleration, one frequency per
/// channel, added to the tracking command through `B⁺`.
///
/// Every channel of the reference is the same signal, so without a probe the
/// closed loop obeys a fixed linear relation between `p`, `q` and `u` and the
/// regressor can never reach full rank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbingSignal {
    pub amplitude: f64,
    /// Angular frequency (rad/s) per channel.
    pub frequencies: Vec<f64>,
    /// The probe is switched off for `t >= duration`.
    pub duration: f64,
    /// Length of the raised-cosine fade ending at `duration` (s). A hard
    /// switch-off would put a jump into the input and spoil the second-order
    /// accuracy of the plant integration and of the window integrals.
    #[serde(default)]
    pub fade: f64,
}

impl ProbingSignal {
    /// Envelope in `[0, 1]`: one before the fade, zero from `duration` on.
    pub fn envelope(&self, t: f64) -> f64 {
        if t >= self.duration {
            0.0
        } else if self.fade <= 0.0 || t <= self.duration - self.fade {
            1.0
        } else {
            let phase = (t - (self.duration - self.fade)) / self.fade;
            0.5 * (1.0 + (std::f64::consts::PI * phase).cos())
        }
    }

    pub fn value(&self, t: f64) -> Option<Vec<f64>> {
        let gain = self.amplitude * self.envelope(t);
        if gain == 0.0 {
            return None;
        }
        Some(self.frequencies.iter().map(|w| gain * (w * t).sin()).collect())
    }
}

/// Tracking controller plus optional probe: the full input law of a run.
#[derive(Clone, Debug)]
pub struct InputLaw {
    controller: TrackingController,
    probe: Option<ProbingSignal>,
}

impl InputLaw {
    pub fn new(params: &PlantParams, gains: TrackingGains, probe: Option<ProbingSignal>) -> Result<Self> {
        if let Some(probe) = &probe {
            if probe.frequencies.len() != params.n() {
                return Err(Error::dim("probing frequencies", params.n(), probe.frequencies.len()));
            }
        }
        Ok(InputLaw {
            controller: TrackingController::new(params, gains)?,
            probe,
        })
    }

    pub fn input(&self, params: &PlantParams, p: &[f64], q: &[f64], t: f64) -> Vec<f64> {
        let mut cmd = self.controller.acceleration_command(params, p, q, t);
        if let Some(extra) = self.probe.as_ref().and_then(|probe| probe.value(t)) {
            matrix::axpy(&mut cmd, 1.0, &extra);
        }
        self.controller.b_pinv.mul_vec(&cmd)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub variance: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel { variance: 0.0, seed: 0 }
    }
}

/// Position sensor `y = p + w`, `w ~ N(0, σ² I)`, drawing from a seeded stream.
#[derive(Clone, Debug)]
pub struct Sensor {
    noise: NoiseModel,
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
}

impl Sensor {
    pub fn new(noise: NoiseModel) -> Result<Self> {
        if !(noise.variance >= 0.0 && noise.variance.is_finite()) {
            return Err(Error::Config(format!(
                "noise variance must be finite and non-negative, got {}",
                noise.variance
            )));
        }
        let normal = if noise.variance > 0.0 {
            Some(Normal::new(0.0, noise.variance.sqrt()).map_err(|e| Error::Config(e.to_string()))?)
        } else {
            None
        };
        Ok(Sensor {
            noise,
            rng: ChaCha8Rng::seed_from_u64(noise.seed),
            normal,
        })
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn measure(&mut self, state: &PlantState) -> Vec<f64> {
        match &self.normal {
            None => state.p.clone(),
            Some(normal) => state.p.iter().map(|p| p + normal.sample(&mut self.rng)).collect(),
        }
    }
}
