//! Sliding sample buffer and the derivative-free regressor.
//!
//! Integrating `q̇ = A₁p + A₂q + Bu` over `[σ−T₁, σ]` and again over
//! `σ ∈ [t−T₂, t]` removes every velocity and acceleration term:
//!
//! ```text
//! p(t) − p(t−T₂) − p(t−T₁) + p(t−T₁−T₂) = A₁F(t) + A₂G(t) + BU(t)
//! F(t) = ∫∫ p,   G(t) = ∫ (p(σ) − p(σ−T₁)) dσ,   U(t) = ∫∫ u
//! ```
//!
//! All integrals are composite trapezoids on the sample grid. `T₁` and `T₂`
//! are whole multiples of `Ts`, so every window endpoint is a stored sample.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{kron_row_blocks, Mat};
use crate::plant::theta_len;

/// Relative slack when checking that a window length is a multiple of `Ts`.
const GRID_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Inner integration interval (s).
    pub t1: f64,
    /// Outer integration interval (s).
    pub t2: f64,
    /// Sample time (s).
    pub ts: f64,
}

fn grid_steps(len: f64, ts: f64, name: &str) -> Result<usize> {
    if !(len > 0.0 && len.is_finite()) {
        return Err(Error::Config(format!("{name} must be positive, got {len}")));
    }
    let steps = (len / ts).round();
    if steps < 1.0 || (steps * ts - len).abs() > GRID_TOLERANCE * len.max(ts) {
        return Err(Error::Config(format!(
            "{name}={len} is not a whole multiple of the sample time {ts}"
        )));
    }
    Ok(steps as usize)
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::Config(format!("sample time must be positive, got {}", self.ts)));
        }
        grid_steps(self.t1, self.ts, "T1")?;
        grid_steps(self.t2, self.ts, "T2")?;
        Ok(())
    }

    /// `T₁ / Ts`
    pub fn inner_steps(&self) -> usize {
        (self.t1 / self.ts).round() as usize
    }

    /// `T₂ / Ts`
    pub fn outer_steps(&self) -> usize {
        (self.t2 / self.ts).round() as usize
    }

    /// Samples spanning `[t − T₁ − T₂, t]`, both ends included.
    pub fn capacity(&self) -> usize {
        self.inner_steps() + self.outer_steps() + 1
    }

    pub fn span(&self) -> f64 {
        self.t1 + self.t2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub p: Vec<f64>,
    pub u: Vec<f64>,
}

/// Which buffered signal to integrate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Signal {
    Position,
    Input,
}

/// Fixed-capacity, uniformly spaced history of measured positions and inputs.
#[derive(Clone, Debug)]
pub struct SampleBuffer {
    cfg: WindowConfig,
    n: usize,
    m: usize,
    samples: VecDeque<Sample>,
}

impl SampleBuffer {
    pub fn new(cfg: WindowConfig, n: usize, m: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(SampleBuffer {
            cfg,
            n,
            m,
            samples: VecDeque::with_capacity(cfg.capacity()),
        })
    }

    pub fn config(&self) -> &WindowConfig {
        &self.cfg
    }

    pub fn capacity(&self) -> usize {
        self.cfg.capacity()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter()
    }

    pub fn newest(&self) -> Option<&Sample> {
        self.samples.back()
    }

    /// Appends a sample exactly one `Ts` after the newest one, evicting the
    /// oldest sample when full.
    pub fn push(&mut self, t: f64, p: &[f64], u: &[f64]) -> Result<()> {
        if p.len() != self.n {
            return Err(Error::dim("buffered position", self.n, p.len()));
        }
        if u.len() != self.m {
            return Err(Error::dim("buffered input", self.m, u.len()));
        }
        if let Some(newest) = self.samples.back() {
            let gap = t - newest.t;
            if (gap - self.cfg.ts).abs() > 1e-12_f64.max(1e-9 * self.cfg.ts) {
                return Err(Error::NonMonotonic { newest: newest.t, got: t });
            }
        }
        if self.samples.len() == self.capacity() {
            self.samples.pop_front();
        }
        self.samples.push_back(Sample {
            t,
            p: p.to_vec(),
            u: u.to_vec(),
        });
        Ok(())
    }

    /// Index of the sample taken at `t`, if it is buffered.
    fn index_of(&self, t: f64) -> Option<usize> {
        let first = self.samples.front()?.t;
        let k = ((t - first) / self.cfg.ts).round();
        if k < 0.0 || (first + k * self.cfg.ts - t).abs() > 1e-6 * self.cfg.ts {
            return None;
        }
        let k = k as usize;
        (k < self.samples.len()).then_some(k)
    }

    /// Buffer indices `[start, end]` of the window `[t − T₁ − T₂, t]`.
    fn window(&self, t: f64) -> Result<(usize, usize)> {
        let end = self.index_of(t).ok_or(Error::WindowNotFull(t))?;
        let span = self.cfg.inner_steps() + self.cfg.outer_steps();
        let start = end.checked_sub(span).ok_or(Error::WindowNotFull(t))?;
        Ok((start, end))
    }

    fn channel(&self, idx: usize, signal: Signal) -> &[f64] {
        match signal {
            Signal::Position => &self.samples[idx].p,
            Signal::Input => &self.samples[idx].u,
        }
    }

    fn dim_of(&self, signal: Signal) -> usize {
        match signal {
            Signal::Position => self.n,
            Signal::Input => self.m,
        }
    }

    /// Measured position at `t`.
    pub fn position_at(&self, t: f64) -> Option<&[f64]> {
        self.index_of(t).map(|k| self.samples[k].p.as_slice())
    }
}

/// Trapezoid weights for `len` uniformly spaced points.
fn trapezoid(values: impl Iterator<Item = f64>, len: usize, ts: f64) -> f64 {
    values
        .enumerate()
        .map(|(k, v)| if k == 0 || k + 1 == len { 0.5 * v } else { v })
        .sum::<f64>()
        * ts
}

/// `∫_{t−T₂}^{t} ∫_{σ−T₁}^{σ} s(τ) dτ dσ` by composite trapezoid on both levels.
pub fn double_integral(buf: &SampleBuffer, signal: Signal, t: f64) -> Result<Vec<f64>> {
    let (start, end) = buf.window(t)?;
    let ts = buf.cfg.ts;
    let inner = buf.cfg.inner_steps();
    let len = end - start + 1;
    let dim = buf.dim_of(signal);
    // Running trapezoid prefix: prefix[k] = ∫ from window start to sample k.
    let mut prefix = vec![vec![0.0; dim]; len];
    for k in 1..len {
        let (a, b) = (buf.channel(start + k - 1, signal), buf.channel(start + k, signal));
        for c in 0..dim {
            prefix[k][c] = prefix[k - 1][c] + 0.5 * ts * (a[c] + b[c]);
        }
    }
    let outer_len = len - inner;
    Ok((0..dim)
        .map(|c| {
            let inner_integrals = (inner..len).map(|k| prefix[k][c] - prefix[k - inner][c]);
            trapezoid(inner_integrals, outer_len, ts)
        })
        .collect())
}

/// `∫_{t−T₂}^{t} (p(σ) − p(σ−T₁)) dσ` by composite trapezoid.
pub fn g_difference_integral(buf: &SampleBuffer, t: f64) -> Result<Vec<f64>> {
    let (start, end) = buf.window(t)?;
    let ts = buf.cfg.ts;
    let inner = buf.cfg.inner_steps();
    let len = end - start + 1;
    let outer_len = len - inner;
    Ok((0..buf.n)
        .map(|c| {
            let diffs = (start + inner..=end).map(|k| buf.samples[k].p[c] - buf.samples[k - inner].p[c]);
            trapezoid(diffs, outer_len, ts)
        })
        .collect())
}

/// One instance `ℱ = 𝒢θ` of the linear error system.
#[derive(Clone, Debug, PartialEq)]
pub struct Regressor {
    pub f_cal: Vec<f64>,
    /// `[(F⊗Iₙ)ᵀ (G⊗Iₙ)ᵀ (U⊗Iₙ)ᵀ]`, `n x (2n²+mn)`.
    pub g_cal: Mat,
    pub t: f64,
}

impl Regressor {
    pub fn zero(n: usize, m: usize, t: f64) -> Self {
        Regressor {
            f_cal: vec![0.0; n],
            g_cal: Mat::zeros(n, theta_len(n, m)),
            t,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.f_cal.iter().all(|x| *x == 0.0) && self.g_cal.max_abs() == 0.0
    }

    /// `ℱ − 𝒢θ`
    pub fn residual(&self, theta: &[f64]) -> Vec<f64> {
        let g_theta = self.g_cal.mul_vec(theta);
        self.f_cal.iter().zip(&g_theta).map(|(f, g)| f - g).collect()
    }
}

/// Builds `(ℱ(t), 𝒢(t))` from the buffer; both are zero while
/// `t < t₀ + T₁ + T₂`.
pub fn build_regressor(buf: &SampleBuffer, t: f64, t0: f64) -> Result<Regressor> {
    let cfg = buf.cfg;
    if t < t0 + cfg.span() - 1e-6 * cfg.ts {
        return Ok(Regressor::zero(buf.n, buf.m, t));
    }
    let (start, end) = buf.window(t)?;
    let inner = cfg.inner_steps();
    let outer = cfg.outer_steps();
    let p = |k: usize| buf.samples[k].p.as_slice();
    // p(t−T₂−T₁) − p(t−T₁) + p(t) − p(t−T₂)
    let f_cal: Vec<f64> = (0..buf.n)
        .map(|c| p(start)[c] - p(end - inner)[c] + p(end)[c] - p(end - outer)[c])
        .collect();
    let f = double_integral(buf, Signal::Position, t)?;
    let g = g_difference_integral(buf, t)?;
    let u = double_integral(buf, Signal::Input, t)?;
    Ok(Regressor {
        f_cal,
        g_cal: kron_row_blocks(&[&f, &g, &u], buf.n),
        t,
    })
}
