use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::observer::ObserverConfig;
use crate::plant::{Integrator, NoiseModel, PlantParams, ProbingSignal, TrackingGains};
use crate::window::WindowConfig;

pub const PRESETS: [&str; 3] = ["noise-free", "noise-1e-3", "noise-1e-2"];

pub const SAMPLE_TIME: f64 = 5e-4;

/// Threshold on `λ_min` of the stacked Gram matrix used to report the
/// rank-acquisition time. About 1% of the steady value on the noise-free run.
pub const DEFAULT_RANK_THRESHOLD: f64 = 3.5e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub plant: PlantParams,
    pub window: WindowConfig,
    pub estimator: EstimatorConfig,
    pub observer: ObserverConfig,
    pub stack_size: usize,
    pub noise: NoiseModel,
    /// Simulated time (s).
    pub duration: f64,
    /// Ticks between recording attempts.
    pub record_decimation: usize,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub gains: TrackingGains,
    /// Extra excitation added to the commanded acceleration.
    #[serde(default)]
    pub probe: Option<ProbingSignal>,
    #[serde(default)]
    pub integrator: Integrator,
    /// Spacing of trajectory rows (s).
    #[serde(default = "default_output_decimation")]
    pub output_decimation: f64,
    /// Plant state at `t = 0`; at rest when absent.
    #[serde(default)]
    pub initial_state: Option<InitialState>,
    #[serde(default = "default_rank_threshold")]
    pub rank_threshold: f64,
}

fn default_output_decimation() -> f64 {
    0.01
}

fn default_rank_threshold() -> f64 {
    DEFAULT_RANK_THRESHOLD
}

pub fn default_probe(n: usize) -> ProbingSignal {
    let frequencies = [1.5, 4.0].into_iter().cycle().take(n).collect();
    ProbingSignal {
        amplitude: 20.0,
        frequencies,
        duration: 10.0,
        fade: 2.0,
    }
}

/// Named parameter sets, differing in window lengths, stack size and noise.
pub fn preset(name: &str) -> Result<RunConfig> {
    let (t1, t2, stack_size, variance) = match name {
        "noise-free" => (0.5, 0.3, 50, 0.0),
        "noise-1e-3" => (0.9, 0.5, 50, 1e-3),
        "noise-1e-2" => (1.0, 0.4, 150, 1e-2),
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    let plant = PlantParams::reference();
    let theta_len = plant.theta_len();
    let n = plant.n();
    Ok(RunConfig {
        window: WindowConfig {
            t1,
            t2,
            ts: SAMPLE_TIME,
        },
        estimator: EstimatorConfig::for_stack(stack_size, theta_len),
        observer: ObserverConfig::default(),
        stack_size,
        noise: NoiseModel { variance, seed: 0 },
        duration: 60.0,
        record_decimation: 100,
        output_dir: PathBuf::from("out").join(name),
        gains: TrackingGains::default(),
        probe: Some(default_probe(n)),
        integrator: Integrator::default(),
        output_decimation: default_output_decimation(),
        initial_state: None,
        rank_threshold: DEFAULT_RANK_THRESHOLD,
        plant,
    })
}

impl RunConfig {
    pub fn ts(&self) -> f64 {
        self.window.ts
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.noise.seed = seed;
        self
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.ts()).round() as usize
    }

    /// Ticks between trajectory rows.
    pub fn output_stride(&self) -> usize {
        ((self.output_decimation / self.ts()).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.window.validate()?;
        self.estimator.validate(self.plant.theta_len())?;
        self.observer.validate()?;
        if self.stack_size == 0 {
            return Err(Error::Config("stack_size must be positive".into()));
        }
        if self.record_decimation == 0 {
            return Err(Error::Config("record_decimation must be positive".into()));
        }
        if !(self.duration.is_finite() && self.duration >= self.window.span()) {
            return Err(Error::Config(format!(
                "duration {} must be at least T1 + T2 = {}",
                self.duration,
                self.window.span()
            )));
        }
        if !(self.output_decimation > 0.0) {
            return Err(Error::Config("output_decimation must be positive".into()));
        }
        let stride = self.output_decimation / self.ts();
        if (stride - stride.round()).abs() > 1e-9 * stride {
            return Err(Error::Config(
                "output_decimation must be a whole multiple of the sample time".into(),
            ));
        }
        if !(self.gains.kp > 0.0 && self.gains.kd > 0.0) {
            return Err(Error::Config("tracking gains must be positive".into()));
        }
        if !(self.rank_threshold > 0.0) {
            return Err(Error::Config("rank_threshold must be positive".into()));
        }
        if let Some(init) = &self.initial_state {
            let n = self.plant.n();
            if init.p.len() != n || init.q.len() != n {
                return Err(Error::dim("initial state", n, init.p.len().max(init.q.len())));
            }
        }
        if let Some(probe) = &self.probe {
            if probe.frequencies.len() != self.plant.n() {
                return Err(Error::dim("probing frequencies", self.plant.n(), probe.frequencies.len()));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_examples() {
        let c = preset("noise-free").unwrap();
        assert_eq!((c.window.t1, c.window.t2, c.stack_size), (0.5, 0.3, 50));
        assert!((c.estimator.k_theta - 0.01).abs() < 1e-15);
        assert_eq!(c.noise.variance, 0.0);

        let c = preset("noise-1e-2").unwrap();
        assert_eq!((c.window.t1, c.window.t2, c.stack_size), (1.0, 0.4, 150));
        assert!((c.estimator.k_theta - 0.5 / 150.0).abs() < 1e-15);

        let c = preset("noise-1e-3").unwrap();
        assert_eq!((c.window.t1, c.window.t2, c.stack_size), (0.9, 0.5, 50));
        assert_eq!(c.noise.variance, 1e-3);

        for name in PRESETS {
            let c = preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(c.estimator.beta1, 0.5);
            assert_eq!(c.estimator.gamma0, crate::matrix::Mat::identity(12));
            assert_eq!(c.observer, ObserverConfig { alpha: 2.0, beta: 2.0, k: 10.0 });
            assert_eq!(c.window.ts, 5e-4);
        }
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(preset("noisy"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn json_round_trip() {
        let c = preset("noise-1e-3").unwrap().with_seed(17);
        let back = RunConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn optional_fields_default() {
        let mut v: serde_json::Value = serde_json::from_str(&preset("noise-free").unwrap().to_json().unwrap()).unwrap();
        let obj = v.as_object_mut().unwrap();
        for key in ["gains", "probe", "integrator", "output_decimation", "initial_state", "rank_threshold"] {
            obj.remove(key);
        }
        let c = RunConfig::from_json(&v.to_string()).unwrap();
        assert_eq!(c.probe, None);
        assert_eq!(c.integrator, Integrator::Rk4);
        assert_eq!(c.output_decimation, 0.01);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = preset("noise-free").unwrap();
        c.duration = 0.5;
        assert!(c.validate().is_err());
        let mut c = preset("noise-free").unwrap();
        c.window.t1 = 0.50025;
        assert!(c.validate().is_err());
        let mut c = preset("noise-free").unwrap();
        c.observer.k = -1.0;
        assert!(c.validate().is_err());
        let mut c = preset("noise-free").unwrap();
        c.stack_size = 0;
        assert!(c.validate().is_err());
        assert!(RunConfig::from_json("{\"plant\": 3}").is_err());
    }
}
