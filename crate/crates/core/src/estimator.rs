//! Concurrent-learning parameter update with a least-squares gain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::HistoryStack;
use crate::matrix::{all_finite, symmetric_eigen, Mat};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub k_theta: f64,
    /// Forgetting rate of the gain dynamics.
    pub beta1: f64,
    pub gamma0: Mat,
    pub gamma_cap: f64,
    pub gamma_floor: f64,
}

impl EstimatorConfig {
    /// Gains normalized by the stack size: `k_θ = 0.5 / M`, `β₁ = 0.5`, `Γ(t₀) = I`.
    pub fn for_stack(stack_size: usize, theta_len: usize) -> Self {
        EstimatorConfig {
            k_theta: 0.5 / stack_size as f64,
            beta1: 0.5,
            gamma0: Mat::identity(theta_len),
            gamma_cap: 1e3,
            gamma_floor: 1e-6,
        }
    }

    pub fn validate(&self, theta_len: usize) -> Result<()> {
        if !(self.k_theta > 0.0 && self.beta1 > 0.0) {
            return Err(Error::Config("k_theta and beta1 must be positive".into()));
        }
        if !(self.gamma_floor > 0.0 && self.gamma_cap > self.gamma_floor && self.gamma_cap.is_finite()) {
            return Err(Error::Config("need 0 < gamma_floor < gamma_cap < inf".into()));
        }
        if self.gamma0.shape() != (theta_len, theta_len) {
            return Err(Error::dim(
                "initial gain",
                format!("{theta_len}x{theta_len}"),
                format!("{:?}", self.gamma0.shape()),
            ));
        }
        let asym = self.gamma0.max_abs_diff(&self.gamma0.transpose());
        if asym > 1e-12 * self.gamma0.max_abs().max(1.0) {
            return Err(Error::Config("initial gain must be symmetric".into()));
        }
        let eig = symmetric_eigen(&self.gamma0)?;
        if eig.values[0] <= 0.0 {
            return Err(Error::Config("initial gain must be positive definite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatorState {
    pub theta_hat: Vec<f64>,
    pub gamma: Mat,
    /// Rate applied in the most recent step, shared with the observer.
    pub theta_hat_dot: Vec<f64>,
}

impl EstimatorState {
    /// Zero initial estimate with the configured initial gain.
    pub fn new(cfg: &EstimatorConfig) -> Self {
        let len = cfg.gamma0.rows();
        EstimatorState {
            theta_hat: vec![0.0; len],
            gamma: cfg.gamma0.clone(),
            theta_hat_dot: vec![0.0; len],
        }
    }

    /// `k_θ Γ (Σ𝒢ᵢᵀℱᵢ − Σ𝒢ᵢᵀ𝒢ᵢ θ̂)`
    pub fn theta_update_rate(&self, stack: &HistoryStack, cfg: &EstimatorConfig) -> Vec<f64> {
        let (gram, cross) = stack.gram_and_cross();
        theta_rate(&self.theta_hat, &self.gamma, gram, cross, cfg.k_theta)
    }

    /// `β₁Γ − k_θ Γ (Σ𝒢ᵢᵀ𝒢ᵢ) Γ`
    pub fn gamma_update_rate(&self, stack: &HistoryStack, cfg: &EstimatorConfig) -> Mat {
        gamma_rate(&self.gamma, stack.gram(), cfg.beta1, cfg.k_theta)
    }

    /// One forward-Euler step of both update laws. `Γ` is then symmetrized
    /// and its eigenvalues clamped to `[Γ_floor, Γ_cap]`.
    pub fn step(&mut self, stack: &HistoryStack, cfg: &EstimatorConfig, ts: f64) -> Result<()> {
        let theta_dot = self.theta_update_rate(stack, cfg);
        let gamma_dot = self.gamma_update_rate(stack, cfg);

        let mut theta_hat = self.theta_hat.clone();
        crate::matrix::axpy(&mut theta_hat, ts, &theta_dot);
        let mut gamma = self.gamma.clone();
        gamma.add_scaled(ts, &gamma_dot);
        gamma.symmetrize();

        if !all_finite(&theta_hat) || !gamma.is_finite() {
            return Err(Error::Numerical {
                t: f64::NAN,
                detail: format!(
                    "estimator step produced non-finite values; theta_hat={:?} theta_dot={:?}",
                    self.theta_hat, theta_dot
                ),
            });
        }
        project_gain(&mut gamma, cfg.gamma_floor, cfg.gamma_cap)?;

        self.theta_hat = theta_hat;
        self.gamma = gamma;
        self.theta_hat_dot = theta_dot;
        Ok(())
    }
}

pub fn theta_rate(theta_hat: &[f64], gamma: &Mat, gram: &Mat, cross: &[f64], k_theta: f64) -> Vec<f64> {
    let g_theta = gram.mul_vec(theta_hat);
    let residual: Vec<f64> = cross.iter().zip(&g_theta).map(|(c, g)| c - g).collect();
    let mut rate = gamma.mul_vec(&residual);
    rate.iter_mut().for_each(|x| *x *= k_theta);
    rate
}

pub fn gamma_rate(gamma: &Mat, gram: &Mat, beta1: f64, k_theta: f64) -> Mat {
    let mut rate = gamma.scale(beta1);
    let sandwich = gamma.matmul(&gram.matmul(gamma));
    rate.add_scaled(-k_theta, &sandwich);
    rate
}

/// Clamps the spectrum of a symmetric matrix into `[floor, cap]`.
/// Returns whether the matrix was modified.
pub fn project_gain(gamma: &mut Mat, floor: f64, cap: f64) -> Result<bool> {
    if gershgorin_within(gamma, floor, cap) {
        return Ok(false);
    }
    let eig = symmetric_eigen(gamma)?;
    let lo = eig.values[0];
    let hi = eig.values[eig.values.len() - 1];
    if lo >= floor && hi <= cap {
        return Ok(false);
    }
    *gamma = eig.reconstruct_with(|v| v.clamp(floor, cap));
    gamma.symmetrize();
    Ok(true)
}

fn gershgorin_within(m: &Mat, floor: f64, cap: f64) -> bool {
    (0..m.rows()).all(|i| {
        let radius: f64 = (0..m.cols()).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
        m[(i, i)] - radius >= floor && m[(i, i)] + radius <= cap
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{kron_row_blocks, solve_spd, symmetric_eigenvalues};
    use crate::window::Regressor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_cfg(k_theta: f64, beta1: f64) -> EstimatorConfig {
        EstimatorConfig {
            k_theta,
            beta1,
            gamma0: Mat::identity(1),
            gamma_cap: 1e3,
            gamma_floor: 1e-6,
        }
    }

    fn scalar_stack(g: f64, f: f64) -> HistoryStack {
        let mut stack = HistoryStack::new(1, 1, 1).unwrap();
        let r = Regressor {
            f_cal: vec![f],
            g_cal: Mat::from_rows(&[[g]]).unwrap(),
            t: 0.0,
        };
        stack.try_record(&r).unwrap();
        stack
    }

    /// Stack of random pairs that are exactly consistent with `theta`.
    fn consistent_stack(rng: &mut impl Rng, theta: &[f64], pairs: usize) -> HistoryStack {
        let mut stack = HistoryStack::new(pairs, 2, 12).unwrap();
        for k in 0..pairs {
            let mut part = || (0..2).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
            let (p, g, u) = (part(), part(), part());
            let g_cal = kron_row_blocks(&[&p, &g, &u], 2);
            let f_cal = g_cal.mul_vec(theta);
            stack.try_record(&Regressor { f_cal, g_cal, t: k as f64 }).unwrap();
        }
        stack
    }

    #[test]
    fn scalar_rates_by_hand() {
        let cfg = scalar_cfg(1.0, 0.5);
        let stack = scalar_stack(1.0, 2.0);
        let st = EstimatorState::new(&cfg);
        assert_eq!(st.theta_update_rate(&stack, &cfg), vec![2.0]);

        // gram = 2 from 𝒢 = √2.
        let stack = scalar_stack(2f64.sqrt(), 0.0);
        let rate = st.gamma_update_rate(&stack, &cfg);
        assert!((rate[(0, 0)] + 1.5).abs() < 1e-14);
    }

    #[test]
    fn empty_stack_rates() {
        let cfg = EstimatorConfig::for_stack(50, 12);
        let stack = HistoryStack::new(50, 2, 12).unwrap();
        let mut st = EstimatorState::new(&cfg);
        st.theta_hat = (0..12).map(|i| i as f64).collect();
        assert!(st.theta_update_rate(&stack, &cfg).iter().all(|x| *x == 0.0));
        let rate = st.gamma_update_rate(&stack, &cfg);
        assert!(rate.max_abs_diff(&st.gamma.scale(0.5)) < 1e-15);
    }

    #[test]
    fn empty_stack_keeps_estimate_and_caps_gain() {
        let cfg = EstimatorConfig::for_stack(50, 12);
        let stack = HistoryStack::new(50, 2, 12).unwrap();
        let mut st = EstimatorState::new(&cfg);
        for _ in 0..40_000 {
            st.step(&stack, &cfg, 5e-4).unwrap();
        }
        assert!(st.theta_hat.iter().all(|x| *x == 0.0));
        let eig = symmetric_eigenvalues(&st.gamma).unwrap();
        assert!(eig[11] <= 1e3 * (1.0 + 1e-12));
        // e^{0.5·20} exceeds the cap, so the clamp must be active.
        assert!(eig[0] > 999.0);
    }

    #[test]
    fn consistent_stack_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta: Vec<f64> = (0..12).map(|_| rng.random_range(-5.0..5.0)).collect();
        let stack = consistent_stack(&mut rng, &theta, 20);
        let cfg = EstimatorConfig::for_stack(20, 12);
        let mut st = EstimatorState::new(&cfg);
        st.theta_hat = theta.clone();
        let rate = st.theta_update_rate(&stack, &cfg);
        assert!(rate.iter().all(|x| x.abs() < 1e-12));
        st.step(&stack, &cfg, 5e-4).unwrap();
        assert!(st.theta_hat.iter().zip(&theta).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn gain_equilibrium_has_zero_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let theta = vec![0.0; 12];
        let stack = consistent_stack(&mut rng, &theta, 30);
        let cfg = EstimatorConfig::for_stack(30, 12);
        // Γ = (β₁/k_θ)·gram⁻¹, built column by column through an SPD solve.
        let mut inv = Mat::zeros(12, 12);
        for j in 0..12 {
            let mut e = vec![0.0; 12];
            e[j] = 1.0;
            let col = solve_spd(stack.gram(), &e).unwrap();
            for i in 0..12 {
                inv[(i, j)] = col[i] * cfg.beta1 / cfg.k_theta;
            }
        }
        let rate = gamma_rate(&inv, stack.gram(), cfg.beta1, cfg.k_theta);
        assert!(rate.max_abs() < 1e-8 * inv.max_abs());
    }

    #[test]
    fn projection_clamps_spectrum() {
        let mut m = Mat::from_diag(&[1e-9, 0.5, 5e3]);
        assert!(project_gain(&mut m, 1e-6, 1e3).unwrap());
        let eig = symmetric_eigenvalues(&m).unwrap();
        assert!((eig[0] - 1e-6).abs() < 1e-15);
        assert!((eig[1] - 0.5).abs() < 1e-12);
        assert!((eig[2] - 1e3).abs() < 1e-9);

        let mut inside = Mat::identity(4);
        assert!(!project_gain(&mut inside, 1e-6, 1e3).unwrap());
        assert_eq!(inside, Mat::identity(4));
    }

    #[test]
    fn lyapunov_decreases_with_frozen_rich_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let theta: Vec<f64> = (0..12).map(|_| rng.random_range(-5.0..5.0)).collect();
        let stack = consistent_stack(&mut rng, &theta, 40);
        let cfg = EstimatorConfig::for_stack(40, 12);
        let mut st = EstimatorState::new(&cfg);
        let ts = 5e-4;
        let v = |st: &EstimatorState| {
            let err: Vec<f64> = theta.iter().zip(&st.theta_hat).map(|(a, b)| a - b).collect();
            let w = solve_spd(&st.gamma, &err).unwrap();
            0.5 * crate::matrix::dot(&err, &w)
        };
        let mut prev = v(&st);
        for _ in 0..20_000 {
            st.step(&stack, &cfg, ts).unwrap();
            let now = v(&st);
            assert!(now <= prev * (1.0 + 10.0 * ts));
            prev = now;
        }
        assert!(prev < v(&EstimatorState::new(&cfg)));
    }

    #[test]
    fn config_validation() {
        assert!(EstimatorConfig::for_stack(50, 12).validate(12).is_ok());
        assert!(EstimatorConfig::for_stack(50, 12).validate(6).is_err());
        let mut bad = EstimatorConfig::for_stack(50, 12);
        bad.gamma0[(0, 0)] = -1.0;
        assert!(bad.validate(12).is_err());
        let mut bad = EstimatorConfig::for_stack(50, 12);
        bad.gamma0[(0, 1)] = 0.3;
        assert!(bad.validate(12).is_err());
        let mut bad = EstimatorConfig::for_stack(50, 12);
        bad.k_theta = 0.0;
        assert!(bad.validate(12).is_err());
    }
}
