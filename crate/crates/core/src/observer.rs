//! Output-feedback observer for position and velocity, driven only by the
//! measured position, the applied input and the current parameter estimate.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{all_finite, unvectorize, Mat};
use crate::plant::theta_len;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObserverConfig {
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        ObserverConfig {
            alpha: 2.0,
            beta: 2.0,
            k: 10.0,
        }
    }
}

impl ObserverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha > 0.0 && self.beta > 0.0 && self.k > 0.0 {
            Ok(())
        } else {
            Err(Error::Config("observer gains alpha, beta, k must be positive".into()))
        }
    }

    /// Lower bound on `β` in the sufficient stability condition, `(1+α²)²/(4α)`.
    pub fn beta_threshold(&self) -> f64 {
        (1.0 + self.alpha * self.alpha).powi(2) / (4.0 * self.alpha)
    }

    pub fn beta_condition_holds(&self) -> bool {
        self.beta > self.beta_threshold()
    }
}

/// Block layout of the parameter vector `[vec(A₁); vec(A₂); vec(B)]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ThetaLayout {
    pub n: usize,
    pub m: usize,
}

impl ThetaLayout {
    pub fn new(n: usize, m: usize) -> Self {
        ThetaLayout { n, m }
    }

    pub fn len(&self) -> usize {
        theta_len(self.n, self.m)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn a1(&self) -> Range<usize> {
        0..self.n * self.n
    }

    pub fn a2(&self) -> Range<usize> {
        self.n * self.n..2 * self.n * self.n
    }

    pub fn b(&self) -> Range<usize> {
        2 * self.n * self.n..self.len()
    }

    /// `(Â₁, Â₂, B̂)` unpacked from a parameter vector.
    pub fn split(&self, theta: &[f64]) -> Result<(Mat, Mat, Mat)> {
        if theta.len() != self.len() {
            return Err(Error::dim("parameter vector", self.len(), theta.len()));
        }
        Ok((
            unvectorize(&theta[self.a1()], self.n, self.n)?,
            unvectorize(&theta[self.a2()], self.n, self.n)?,
            unvectorize(&theta[self.b()], self.n, self.m)?,
        ))
    }
}

/// Feedback term `ν = p̃ − (k+α+β)η`.
pub fn nu(p_tilde: &[f64], eta: &[f64], cfg: &ObserverConfig) -> Vec<f64> {
    let gain = cfg.k + cfg.alpha + cfg.beta;
    p_tilde.iter().zip(eta).map(|(p, e)| p - gain * e).collect()
}

/// Signals available to the observer over one tick `[t_k, t_{k+1}]`.
#[derive(Clone, Copy, Debug)]
pub struct ObserverInput<'a> {
    pub y: &'a [f64],
    pub y_next: &'a [f64],
    pub u: &'a [f64],
    pub theta_hat: &'a [f64],
    pub theta_hat_next: &'a [f64],
    pub theta_hat_dot: &'a [f64],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObserverState {
    pub p_hat: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub eta: Vec<f64>,
    /// Running value of the two integrals in the `η` expression.
    pub eta_integral_acc: Vec<f64>,
    /// Running value of the integrals in the `q̂` expression.
    pub q_integral_acc: Vec<f64>,
    /// `Â₂(t₀) y(t₀)`
    pub p0_term: Vec<f64>,
    #[serde(skip)]
    layout: ThetaLayout,
}

impl ObserverState {
    /// Starts at `p̂ = y(t₀)`, `q̂ = 0`, `η = 0`.
    pub fn new(y0: &[f64], theta_hat0: &[f64], layout: ThetaLayout) -> Result<Self> {
        if y0.len() != layout.n {
            return Err(Error::dim("initial measurement", layout.n, y0.len()));
        }
        let (_, a2, _) = layout.split(theta_hat0)?;
        let zero = vec![0.0; layout.n];
        Ok(ObserverState {
            p_hat: y0.to_vec(),
            q_hat: zero.clone(),
            eta: zero.clone(),
            eta_integral_acc: zero.clone(),
            q_integral_acc: zero,
            p0_term: a2.mul_vec(y0),
            layout,
        })
    }

    pub fn layout(&self) -> ThetaLayout {
        self.layout
    }

    /// `p̃ = y − p̂`
    pub fn p_tilde(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.p_hat).map(|(y, p)| y - p).collect()
    }

    /// `p̂⁺ = p̂ + Ts q̂`
    pub fn p_hat_step(&mut self, ts: f64) {
        for (p, q) in self.p_hat.iter_mut().zip(&self.q_hat) {
            *p += ts * q;
        }
    }

    /// Accumulates `−Ts((β+k)η + kα p̃)` and sets `η⁺ = acc − (k+α) p̃⁺`.
    pub fn eta_step(&mut self, p_tilde: &[f64], p_tilde_next: &[f64], cfg: &ObserverConfig, ts: f64) {
        let decay = cfg.beta + cfg.k;
        let drive = cfg.k * cfg.alpha;
        for ((acc, e), p) in self.eta_integral_acc.iter_mut().zip(&self.eta).zip(p_tilde) {
            *acc -= ts * (decay * e + drive * p);
        }
        let out = cfg.k + cfg.alpha;
        for ((e, acc), p) in self.eta.iter_mut().zip(&self.eta_integral_acc).zip(p_tilde_next) {
            *e = acc - out * p;
        }
    }

    /// Accumulates `Ts(B̂u + ν + Â₁y − Â̇₂y⁺)` and sets
    /// `q̂⁺ = acc + Â₂⁺y⁺ − Â₂(t₀)y(t₀)`.
    ///
    /// The `Â̇₂` term is sampled at the end of the tick so that the discrete
    /// sum telescopes exactly against `Â₂⁺y⁺ − Â₂y`.
    pub fn q_hat_step(&mut self, input: &ObserverInput<'_>, nu: &[f64], ts: f64) -> Result<()> {
        let (a1, _, b) = self.layout.split(input.theta_hat)?;
        let a2_dot = unvectorize(&input.theta_hat_dot[self.layout.a2()], self.layout.n, self.layout.n)?;
        let (_, a2_next, _) = self.layout.split(input.theta_hat_next)?;

        let bu = b.mul_vec(input.u);
        let a1y = a1.mul_vec(input.y);
        let a2dy = a2_dot.mul_vec(input.y_next);
        for i in 0..self.layout.n {
            self.q_integral_acc[i] += ts * (bu[i] + nu[i] + a1y[i] - a2dy[i]);
        }
        let a2y = a2_next.mul_vec(input.y_next);
        for i in 0..self.layout.n {
            self.q_hat[i] = self.q_integral_acc[i] + a2y[i] - self.p0_term[i];
        }
        Ok(())
    }

    /// Advances all observer signals from `t_k` to `t_{k+1}`.
    pub fn advance(&mut self, input: &ObserverInput<'_>, cfg: &ObserverConfig, ts: f64) -> Result<()> {
        let n = self.layout.n;
        let len = self.layout.len();
        if input.y.len() != n || input.y_next.len() != n {
            return Err(Error::dim("observer measurement", n, input.y.len().max(input.y_next.len())));
        }
        if input.u.len() != self.layout.m {
            return Err(Error::dim("observer input", self.layout.m, input.u.len()));
        }
        for v in [input.theta_hat, input.theta_hat_next, input.theta_hat_dot] {
            if v.len() != len {
                return Err(Error::dim("observer parameter vector", len, v.len()));
            }
        }

        let p_tilde = self.p_tilde(input.y);
        let feedback = nu(&p_tilde, &self.eta, cfg);
        self.p_hat_step(ts);
        let p_tilde_next = self.p_tilde(input.y_next);
        self.eta_step(&p_tilde, &p_tilde_next, cfg, ts);
        self.q_hat_step(input, &feedback, ts)?;

        if !(all_finite(&self.p_hat) && all_finite(&self.q_hat) && all_finite(&self.eta)) {
            return Err(Error::NonFinite("observer state"));
        }
        Ok(())
    }
}
