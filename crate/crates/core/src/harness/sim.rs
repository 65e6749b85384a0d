use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::diagnostics::{log_slope, regressor_norm, ErrorSignals, GainConditionReport};
use super::output;
use crate::error::{Error, Result};
use crate::estimator::EstimatorState;
use crate::history::HistoryStack;
use crate::matrix::{min_eigenvalue_symmetric, norm, norm_inf};
use crate::observer::{ObserverInput, ObserverState, ThetaLayout};
use crate::plant::{euler_step, rk4_step, true_theta, InputLaw, Integrator, PlantState, Sensor};
use crate::window::{build_regressor, Regressor, SampleBuffer};

/// Window over which the steady-state RMS of `‖θ̃‖` is taken (s).
pub const STEADY_WINDOW: f64 = 10.0;

/// What happened during one tick `[t_k, t_{k+1}]`.
#[derive(Clone, Debug)]
pub struct TickRecord {
    /// Input applied at `t_k`.
    pub u: Vec<f64>,
    /// Estimate at `t_k`, before this tick's update.
    pub theta_hat_prev: Vec<f64>,
    /// `‖Y(x_k, u_k)‖` from the true state.
    pub regressor_norm: f64,
    /// Regressor offered to the history stack on recording ticks.
    pub regressor: Option<Regressor>,
}

/// One row of the trajectory file.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub t: f64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub y: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub theta_err: f64,
    pub p_err: f64,
    pub q_err: f64,
    pub lambda_min: f64,
    pub v_r: f64,
    pub v_theta: f64,
    pub v: f64,
}

/// Largest norm reached by each signal over a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SignalPeaks {
    pub p_hat: f64,
    pub q_hat: f64,
    pub eta: f64,
    pub theta_hat: f64,
    pub p_err: f64,
    pub q_err: f64,
    pub theta_err: f64,
}

impl SignalPeaks {
    fn update(&mut self, obs: &ObserverState, est: &EstimatorState, err: &ErrorSignals) {
        let up = |slot: &mut f64, v: f64| *slot = slot.max(v);
        up(&mut self.p_hat, norm(&obs.p_hat));
        up(&mut self.q_hat, norm(&obs.q_hat));
        up(&mut self.eta, norm(&obs.eta));
        up(&mut self.theta_hat, norm(&est.theta_hat));
        up(&mut self.p_err, norm(&err.p_tilde));
        up(&mut self.q_err, norm(&err.q_tilde));
        up(&mut self.theta_err, norm(&err.theta_tilde));
    }

    pub fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("p_hat", self.p_hat),
            ("q_hat", self.q_hat),
            ("eta", self.eta),
            ("theta_hat", self.theta_hat),
            ("p_err", self.p_err),
            ("q_err", self.q_err),
            ("theta_err", self.theta_err),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, v)| v.is_finite())
    }
}

/// Full-rate checks accumulated while the run progresses.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RunChecks {
    /// Largest `‖ℱ − 𝒢θ‖∞` over all nonzero regressors, against the true `θ`.
    pub regressor_residual_max: f64,
    /// Cached `λ_min` after each recording attempt.
    pub lambda_trace: Vec<f64>,
    /// Largest gap between the cached `λ_min` and one recomputed from the
    /// stored pairs.
    pub lambda_cache_gap: f64,
    /// Largest one-tick ratio `V(t+Ts)/V(t)` after the rank time.
    pub lyapunov_worst_growth: f64,
    pub theta_err_initial: f64,
    pub theta_err_max: f64,
    pub peaks: SignalPeaks,
    /// `max ‖Y(x, u)‖`
    pub y_bar: f64,
    pub theta_rms_steady: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub noise_variance: f64,
    pub duration: f64,
    pub rank_time: Option<f64>,
    pub final_theta_error: f64,
    pub final_theta_error_relative: f64,
    pub final_p_error: f64,
    pub final_q_error: f64,
    /// Slope of `ln‖θ̃‖` fitted from one second after the rank time onwards.
    pub theta_decay_slope: Option<f64>,
    pub lambda_min_final: f64,
    pub theta_rms_steady: f64,
    pub records_accepted: usize,
    pub gain_conditions: GainConditionReport,
    pub gain_condition_report: String,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub config: RunConfig,
    pub summary: RunSummary,
    pub rows: Vec<Row>,
    pub checks: RunChecks,
    pub stack: HistoryStack,
}

/// A run that can be advanced one tick at a time.
pub struct Simulation {
    cfg: RunConfig,
    law: InputLaw,
    sensor: Sensor,
    buffer: SampleBuffer,
    stack: HistoryStack,
    est: EstimatorState,
    obs: ObserverState,
    truth: PlantState,
    y: Vec<f64>,
    tick: usize,
    theta_true: Vec<f64>,
    records_accepted: usize,
}

impl Simulation {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let params = &cfg.plant;
        let (n, m) = (params.n(), params.m());
        let law = InputLaw::new(params, cfg.gains, cfg.probe.clone())?;
        let mut sensor = Sensor::new(cfg.noise)?;
        let buffer = SampleBuffer::new(cfg.window, n, m)?;
        let stack = HistoryStack::new(cfg.stack_size, n, params.theta_len())?.with_rank_threshold(cfg.rank_threshold);
        let est = EstimatorState::new(&cfg.estimator);
        let truth = match &cfg.initial_state {
            Some(init) => PlantState::new(init.p.clone(), init.q.clone(), 0.0),
            None => PlantState::at_rest(n),
        };
        let y = sensor.measure(&truth);
        let obs = ObserverState::new(&y, &est.theta_hat, ThetaLayout::new(n, m))?;
        Ok(Simulation {
            theta_true: true_theta(params),
            cfg,
            law,
            sensor,
            buffer,
            stack,
            est,
            obs,
            truth,
            y,
            tick: 0,
            records_accepted: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.cfg.ts()
    }

    pub fn truth(&self) -> &PlantState {
        &self.truth
    }

    pub fn measurement(&self) -> &[f64] {
        &self.y
    }

    pub fn estimator(&self) -> &EstimatorState {
        &self.est
    }

    pub fn observer(&self) -> &ObserverState {
        &self.obs
    }

    pub fn stack(&self) -> &HistoryStack {
        &self.stack
    }

    pub fn buffer(&self) -> &SampleBuffer {
        &self.buffer
    }

    pub fn theta_true(&self) -> &[f64] {
        &self.theta_true
    }

    pub fn records_accepted(&self) -> usize {
        self.records_accepted
    }

    pub fn errors(&self) -> ErrorSignals {
        ErrorSignals::new(&self.truth, &self.obs, &self.est, &self.theta_true, self.cfg.observer.alpha)
    }

    /// Advances from `t_k` to `t_{k+1}`: input, plant, measurement, buffer,
    /// recording (every `record_decimation` ticks), estimator, observer.
    pub fn step(&mut self) -> Result<TickRecord> {
        let ts = self.cfg.ts();
        let t = self.time();
        let params = &self.cfg.plant;

        let u = self.law.input(params, &self.truth.p, &self.truth.q, t);
        let mut next = match self.cfg.integrator {
            Integrator::Euler => euler_step(&self.truth, &u, ts, params)?,
            Integrator::Rk4 => {
                let law = &self.law;
                rk4_step(&self.truth, ts, params, |p, q, s| law.input(params, p, q, s))?
            }
        };
        next.t = (self.tick + 1) as f64 * ts;
        let y_next = self.sensor.measure(&next);

        self.buffer.push(t, &self.y, &u)?;
        let mut regressor = None;
        if self.tick % self.cfg.record_decimation == 0 {
            let reg = build_regressor(&self.buffer, t, 0.0)?;
            if self.stack.try_record(&reg)? {
                self.records_accepted += 1;
            }
            regressor = Some(reg);
        }

        let theta_hat_prev = self.est.theta_hat.clone();
        self.est
            .step(&self.stack, &self.cfg.estimator, ts)
            .map_err(|e| self.blow_up(t, e))?;
        let input = ObserverInput {
            y: &self.y,
            y_next: &y_next,
            u: &u,
            theta_hat: &theta_hat_prev,
            theta_hat_next: &self.est.theta_hat,
            theta_hat_dot: &self.est.theta_hat_dot,
        };
        self.obs
            .advance(&input, &self.cfg.observer, ts)
            .map_err(|e| self.blow_up(t, e))?;

        if !next.is_finite() {
            return Err(self.blow_up(t, Error::NonFinite("plant state")));
        }
        let y_norm = regressor_norm(&self.truth.p, &self.truth.q, &u);
        self.truth = next;
        self.y = y_next;
        self.tick += 1;
        Ok(TickRecord {
            u,
            theta_hat_prev,
            regressor_norm: y_norm,
            regressor,
        })
    }

    fn blow_up(&self, t: f64, cause: Error) -> Error {
        Error::Numerical {
            t,
            detail: format!(
                "{cause}; last good state: p={:?} q={:?} y={:?} p_hat={:?} q_hat={:?} eta={:?} theta_hat={:?}",
                self.truth.p, self.truth.q, self.y, self.obs.p_hat, self.obs.q_hat, self.obs.eta, self.est.theta_hat
            ),
        }
    }

    fn row(&self, err: &ErrorSignals) -> Row {
        let v_r = err.v_r();
        let v_theta = err.v_theta(&self.est.gamma);
        Row {
            t: self.time(),
            p: self.truth.p.clone(),
            q: self.truth.q.clone(),
            y: self.y.clone(),
            p_hat: self.obs.p_hat.clone(),
            q_hat: self.obs.q_hat.clone(),
            theta_hat: self.est.theta_hat.clone(),
            theta_err: norm(&err.theta_tilde),
            p_err: norm(&err.p_tilde),
            q_err: norm(&err.q_tilde),
            lambda_min: self.stack.lambda_min(),
            v_r,
            v_theta,
            v: v_r + v_theta,
        }
    }
}

/// Runs a configuration to completion without touching the filesystem.
pub fn simulate(cfg: &RunConfig) -> Result<RunOutput> {
    let mut sim = Simulation::new(cfg.clone())?;
    let steps = cfg.steps();
    let stride = cfg.output_stride();
    let steady_from = steps.saturating_sub((STEADY_WINDOW / cfg.ts()).round() as usize);

    let mut checks = RunChecks::default();
    let mut rows = Vec::with_capacity(steps / stride + 1);
    let err = sim.errors();
    checks.theta_err_initial = norm(&err.theta_tilde);
    checks.theta_err_max = checks.theta_err_initial;
    checks.peaks.update(&sim.obs, &sim.est, &err);
    rows.push(sim.row(&err));
    let mut v_prev = rows[0].v;
    let mut steady_sq = 0.0;
    let mut steady_count = 0usize;

    while sim.tick() < steps {
        let record = sim.step()?;
        checks.y_bar = checks.y_bar.max(record.regressor_norm);
        if let Some(reg) = &record.regressor {
            track_stack(&sim, reg, &mut checks)?;
        }

        let err = sim.errors();
        let theta_err = norm(&err.theta_tilde);
        checks.theta_err_max = checks.theta_err_max.max(theta_err);
        checks.peaks.update(&sim.obs, &sim.est, &err);
        let v = err.v_r() + err.v_theta(&sim.est.gamma);
        if sim.stack.rank_time().is_some() && v_prev > 0.0 {
            checks.lyapunov_worst_growth = checks.lyapunov_worst_growth.max(v / v_prev);
        }
        v_prev = v;
        if sim.tick() > steady_from {
            steady_sq += theta_err * theta_err;
            steady_count += 1;
        }
        if sim.tick() % stride == 0 {
            rows.push(sim.row(&err));
        }
    }
    checks.theta_rms_steady = if steady_count > 0 {
        (steady_sq / steady_count as f64).sqrt()
    } else {
        checks.theta_err_initial
    };

    let summary = summarize(&sim, &rows, &checks);
    Ok(RunOutput {
        config: cfg.clone(),
        summary,
        rows,
        checks,
        stack: sim.stack.clone(),
    })
}

/// Records the cached `λ_min`, its gap to a fresh eigen-solve and the
/// regressor residual against the true parameters.
pub fn track_stack(sim: &Simulation, reg: &Regressor, checks: &mut RunChecks) -> Result<()> {
    let stack = &sim.stack;
    checks.lambda_trace.push(stack.lambda_min());
    let (gram, _) = stack.recompute();
    let fresh = min_eigenvalue_symmetric(&gram)?;
    checks.lambda_cache_gap = checks.lambda_cache_gap.max((fresh - stack.lambda_min()).abs());
    if !reg.is_zero() {
        let residual = norm_inf(&reg.residual(sim.theta_true()));
        checks.regressor_residual_max = checks.regressor_residual_max.max(residual);
    }
    Ok(())
}

fn summarize(sim: &Simulation, rows: &[Row], checks: &RunChecks) -> RunSummary {
    let cfg = &sim.cfg;
    let err = sim.errors();
    let final_theta_error = norm(&err.theta_tilde);
    let rank_time = sim.stack.rank_time();
    let theta_decay_slope = rank_time.and_then(|tr| {
        log_slope(rows.iter().filter(|r| r.t >= tr + 1.0).map(|r| (r.t, r.theta_err)))
    });
    let lambda_min_final = sim.stack.lambda_min();
    let gain_conditions = GainConditionReport::new(&cfg.observer, cfg.estimator.k_theta, lambda_min_final, checks.y_bar);
    RunSummary {
        seed: cfg.noise.seed,
        noise_variance: cfg.noise.variance,
        duration: cfg.duration,
        rank_time,
        final_theta_error,
        final_theta_error_relative: final_theta_error / norm(&sim.theta_true),
        final_p_error: norm(&err.p_tilde),
        final_q_error: norm(&err.q_tilde),
        theta_decay_slope,
        lambda_min_final,
        theta_rms_steady: checks.theta_rms_steady,
        records_accepted: sim.records_accepted,
        gain_condition_report: gain_conditions.to_string(),
        gain_conditions,
    }
}

/// Simulates and writes `trajectory.csv`, `summary.json`,
/// `history_stack.bin` and `config.json` into the configured output directory.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let out = simulate(cfg)?;
    write_run(&out, &cfg.output_dir)?;
    Ok(out)
}

pub fn write_run(out: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let plant = &out.config.plant;
    output::write_trajectory(&out.rows, plant.n(), plant.m(), &dir.join("trajectory.csv"))?;
    output::write_json(&out.summary, &dir.join("summary.json"))?;
    output::write_json(&out.config, &dir.join("config.json"))?;
    out.stack.save(&dir.join("history_stack.bin"))
}

/// Independent runs of one configuration over several seeds, in parallel.
pub fn sweep(cfg: &RunConfig, seeds: &[u64]) -> Vec<Result<RunOutput>> {
    seeds
        .par_iter()
        .map(|&seed| simulate(&cfg.clone().with_seed(seed)))
        .collect()
}
