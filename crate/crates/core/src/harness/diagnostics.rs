//! Truth-side diagnostics: error signals, Lyapunov traces, gain conditions
//! and a differential-form reference observer. Nothing here feeds back into
//! the estimator or the observer.

use std::fmt;

use serde::Serialize;

use crate::estimator::EstimatorState;
use crate::matrix::{dot, norm, solve_spd, sub, Mat};
use crate::observer::{nu, ObserverConfig, ObserverState, ThetaLayout};
use crate::plant::PlantState;

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorSignals {
    pub p_tilde: Vec<f64>,
    pub q_tilde: Vec<f64>,
    pub eta: Vec<f64>,
    /// `r = q̃ + αp̃ + η`
    pub r: Vec<f64>,
    pub theta_tilde: Vec<f64>,
}

impl ErrorSignals {
    pub fn new(
        truth: &PlantState,
        obs: &ObserverState,
        est: &EstimatorState,
        theta_true: &[f64],
        alpha: f64,
    ) -> Self {
        let p_tilde = sub(&truth.p, &obs.p_hat);
        let q_tilde = sub(&truth.q, &obs.q_hat);
        let r = (0..p_tilde.len())
            .map(|i| q_tilde[i] + alpha * p_tilde[i] + obs.eta[i])
            .collect();
        ErrorSignals {
            theta_tilde: sub(theta_true, &est.theta_hat),
            eta: obs.eta.clone(),
            p_tilde,
            q_tilde,
            r,
        }
    }

    /// `½(p̃ᵀp̃ + ηᵀη + rᵀr)`
    pub fn v_r(&self) -> f64 {
        0.5 * (dot(&self.p_tilde, &self.p_tilde) + dot(&self.eta, &self.eta) + dot(&self.r, &self.r))
    }

    /// `½θ̃ᵀΓ⁻¹θ̃`
    pub fn v_theta(&self, gamma: &Mat) -> f64 {
        v_theta(&self.theta_tilde, gamma)
    }
}

pub fn v_theta(theta_tilde: &[f64], gamma: &Mat) -> f64 {
    match solve_spd(gamma, theta_tilde) {
        Some(w) => 0.5 * dot(theta_tilde, &w),
        None => f64::INFINITY,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LyapunovPoint {
    pub t: f64,
    pub v_r: f64,
    pub v_theta: f64,
    pub v: f64,
}

/// `V = V_r + V_θ` along aligned truth, observer and estimator streams.
pub fn lyapunov_trace(
    truth: &[PlantState],
    obs: &[ObserverState],
    est: &[EstimatorState],
    theta_true: &[f64],
    alpha: f64,
) -> Vec<LyapunovPoint> {
    truth
        .iter()
        .zip(obs)
        .zip(est)
        .map(|((x, o), e)| {
            let err = ErrorSignals::new(x, o, e, theta_true, alpha);
            let v_r = err.v_r();
            let v_theta = err.v_theta(&e.gamma);
            LyapunovPoint {
                t: x.t,
                v_r,
                v_theta,
                v: v_r + v_theta,
            }
        })
        .collect()
}

/// Least-squares slope of `ln y` against `t` over samples with `y > 0`.
pub fn log_slope(samples: impl IntoIterator<Item = (f64, f64)>) -> Option<f64> {
    let pts: Vec<(f64, f64)> = samples
        .into_iter()
        .filter(|(_, y)| *y > 0.0 && y.is_finite())
        .map(|(t, y)| (t, y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let len = pts.len() as f64;
    let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / len;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / len;
    let sxy: f64 = pts.iter().map(|(t, y)| (t - mean_t) * (y - mean_y)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - mean_t).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Stability conditions on the gains, evaluated with measured signal bounds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GainConditionReport {
    pub beta: f64,
    pub beta_threshold: f64,
    pub beta_condition: bool,
    pub k: f64,
    pub k_theta: f64,
    /// Lower bound on `λ_min` of the stacked Gram matrix used in the check.
    pub c_lower: f64,
    /// Largest `‖Y(x, u)‖₂ = ‖[p; q; u]‖` seen along the run.
    pub y_bar: f64,
    pub learning_condition: bool,
}

impl GainConditionReport {
    pub fn new(obs: &ObserverConfig, k_theta: f64, c_lower: f64, y_bar: f64) -> Self {
        let beta_threshold = obs.beta_threshold();
        GainConditionReport {
            beta: obs.beta,
            beta_threshold,
            beta_condition: obs.beta > beta_threshold,
            k: obs.k,
            k_theta,
            c_lower,
            y_bar,
            learning_condition: obs.k * k_theta * c_lower > y_bar * y_bar / 4.0,
        }
    }
}

impl fmt::Display for GainConditionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = |ok: bool| if ok { "satisfied" } else { "VIOLATED" };
        write!(
            f,
            "beta = {} vs (1+alpha^2)^2/(4 alpha) = {}: {}; k*k_theta*c = {:.6e} vs Ybar^2/4 = {:.6e} (Ybar = {:.6e}): {}",
            self.beta,
            self.beta_threshold,
            verdict(self.beta_condition),
            self.k * self.k_theta * self.c_lower,
            self.y_bar * self.y_bar / 4.0,
            self.y_bar,
            verdict(self.learning_condition),
        )
    }
}

/// `‖Y(x, u)‖₂` for `Y = [(p⊗I)ᵀ (q⊗I)ᵀ (u⊗I)ᵀ]`, which equals `‖[p; q; u]‖`.
pub fn regressor_norm(p: &[f64], q: &[f64], u: &[f64]) -> f64 {
    (dot(p, p) + dot(q, q) + dot(u, u)).sqrt()
}

/// Observer integrated in differential form with the true velocity inside
/// the regressor. Used to cross-check the velocity-free implementation.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferentialObserver {
    pub p_hat: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub eta: Vec<f64>,
    layout: ThetaLayout,
}

impl DifferentialObserver {
    pub fn new(y0: &[f64], layout: ThetaLayout) -> Self {
        let n = y0.len();
        DifferentialObserver {
            p_hat: y0.to_vec(),
            q_hat: vec![0.0; n],
            eta: vec![0.0; n],
            layout,
        }
    }

    /// Forward-Euler step of `ṗ̂ = q̂`, `q̂̇ = Y(p, q, u)θ̂ + ν`,
    /// `η̇ = −(β+k)η − kαp̃ − (k+α)q̃`, with `p̃ = y − p̂`, `q̃ = q − q̂`.
    pub fn step(&mut self, y: &[f64], q_true: &[f64], u: &[f64], theta_hat: &[f64], cfg: &ObserverConfig, ts: f64) {
        let (a1, a2, b) = self.layout.split(theta_hat).expect("parameter vector matches layout");
        let p_tilde = sub(y, &self.p_hat);
        let q_tilde = sub(q_true, &self.q_hat);
        let feedback = nu(&p_tilde, &self.eta, cfg);
        let a1y = a1.mul_vec(y);
        let a2q = a2.mul_vec(q_true);
        let bu = b.mul_vec(u);
        let n = self.p_hat.len();
        let mut eta = self.eta.clone();
        for i in 0..n {
            eta[i] += ts
                * (-(cfg.beta + cfg.k) * self.eta[i] - cfg.k * cfg.alpha * p_tilde[i] - (cfg.k + cfg.alpha) * q_tilde[i]);
        }
        for i in 0..n {
            self.p_hat[i] += ts * self.q_hat[i];
            self.q_hat[i] += ts * (a1y[i] + a2q[i] + bu[i] + feedback[i]);
        }
        self.eta = eta;
    }
}

/// Running maximum of `‖a − b‖` and of `‖b‖`, for a peak-relative comparison.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PeakRelativeGap {
    pub max_gap: f64,
    pub max_reference: f64,
}

impl PeakRelativeGap {
    pub fn update(&mut self, value: &[f64], reference: &[f64]) {
        self.max_gap = self.max_gap.max(norm(&sub(value, reference)));
        self.max_reference = self.max_reference.max(norm(reference));
    }

    pub fn relative(&self) -> f64 {
        if self.max_reference > 0.0 {
            self.max_gap / self.max_reference
        } else {
            self.max_gap
        }
    }
}
