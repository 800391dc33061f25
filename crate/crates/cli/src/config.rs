//! JSON scenario configuration.
//!
//! A config is parsed strictly (unknown keys are rejected), then resolved
//! into an *effective* config: derived seeds, the initial state and the
//! controller name are filled in so that the dumped document reproduces the
//! run exactly when read back.

use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use safedpc::barrier::{
    estimate_constants, BarrierConstants, BarrierFunction, ClassK, CorridorBarrier, GridSpec,
};
use safedpc::dpc::{DpcProblem, LossWeights, PenaltyKind, ReferenceMode, TrainingConfig};
use safedpc::filter::FilterConfig;
use safedpc::model::{
    discretize, BoxSet, DisturbanceKind, DisturbanceSpec, InputSet, ReferenceTrajectory,
    SystemDynamics,
};
use safedpc::sim::{ControllerMode, SimConfig};
use safedpc::Mat;

use crate::error::CliError;

/// The default scenario, shipped inside the binary.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.json");

const TRAINING_STREAM: u64 = 1;
const DISTURBANCE_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub n_x: usize,
    /// Drift matrix, row-major. The input enters through the identity.
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub input_bounds: Bounds,
    pub state_bounds: Bounds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierSection {
    pub epsilon: f64,
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    pub amplitude: f64,
    pub frequency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DisturbanceSection {
    Zero,
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    PiecewiseRandom {
        amplitude: f64,
        hold: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSection {
    pub dt: f64,
    pub substeps: usize,
    pub t_end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    pub q_track: f64,
    pub q_u: f64,
    pub q_state_pen: f64,
    pub q_input_pen: f64,
    pub q_barrier_pen: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyName {
    Relu,
    ReluSquared,
    Log10,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceName {
    True,
    Zero,
}

impl ReferenceName {
    pub fn mode(self) -> ReferenceMode {
        match self {
            ReferenceName::True => ReferenceMode::True,
            ReferenceName::Zero => ReferenceMode::Zero,
        }
    }

    pub fn as_str(self) -> &'static str {
        self.mode().as_str()
    }
}

fn default_batch() -> usize {
    100
}

fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}

fn default_validation() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub m: usize,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    pub weights: WeightsSection,
    pub d: f64,
    pub penalty_kind: PenaltyName,
    pub reference_mode: ReferenceName,
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Controller name, see `ControllerMode`.
    pub mode: String,
    pub output_dir: PathBuf,
    /// Master seed for every random stream.
    pub seed: u64,
    /// Defaults to the reference at `t = 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub rate_penalty: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub points_per_axis: usize,
    pub time_samples: usize,
    pub safety_factor: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            points_per_axis: 201,
            time_samples: 401,
            safety_factor: 1.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub system: SystemSection,
    pub barrier: BarrierSection,
    pub reference: ReferenceSection,
    pub disturbance: DisturbanceSection,
    pub timing: TimingSection,
    pub training: TrainingSection,
    pub run: RunSection,
    #[serde(default)]
    pub grid: GridSection,
}

/// Derives an independent sub-seed from the master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn core(e: safedpc::Error) -> CliError {
    CliError::Config(e.to_string())
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn default_scenario() -> Self {
        Self::from_json(DEFAULT_CONFIG).expect("embedded config parses")
    }

    /// Reads `path`, or the embedded default when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default_scenario()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| invalid(format!("{}: {e}", p.display())))?;
                Self::from_json(&text)
            }
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Applies the seed override, fills in every derived value and checks
    /// the result. Sub-seeds already present in the config are kept.
    pub fn effective(mut self, seed: Option<u64>) -> Result<Self, CliError> {
        if let Some(s) = seed {
            self.run.seed = s;
        }
        let master = self.run.seed;
        self.training
            .seed
            .get_or_insert(derive_seed(master, TRAINING_STREAM));
        if let DisturbanceSection::PiecewiseRandom { seed, .. } = &mut self.disturbance {
            seed.get_or_insert(derive_seed(master, DISTURBANCE_STREAM));
        }
        let mode = self.controller()?;
        self.run.mode = mode.as_str().to_string();
        if self.run.x0.is_none() {
            self.run.x0 = Some(self.reference_trajectory().value(0.0));
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let n = self.system.n_x;
        if n == 0 {
            return Err(invalid("system.n_x must be >= 1"));
        }
        if self.system.a.len() != n || self.system.a.iter().any(|r| r.len() != n) {
            return Err(invalid(format!("system.A must be {n}x{n}")));
        }
        for (name, b) in [
            ("input_bounds", &self.system.input_bounds),
            ("state_bounds", &self.system.state_bounds),
        ] {
            if b.lower.len() != n || b.upper.len() != n {
                return Err(invalid(format!(
                    "system.{name} must have {n} entries per side"
                )));
            }
        }
        let positive = [
            ("barrier.epsilon", self.barrier.epsilon),
            ("barrier.alpha", self.barrier.alpha),
            ("barrier.a", self.barrier.a),
            ("barrier.b", self.barrier.b),
            ("timing.dt", self.timing.dt),
            ("timing.t_end", self.timing.t_end),
            ("training.lr", self.training.lr),
            ("training.d", self.training.d),
            ("grid.safety_factor", self.grid.safety_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.timing.substeps == 0 {
            return Err(invalid("timing.substeps must be >= 1"));
        }
        if self.training.horizon == 0 || self.training.m == 0 || self.training.batch_size == 0 {
            return Err(invalid(
                "training.N, training.m and training.batch_size must be >= 1",
            ));
        }
        if self.grid.points_per_axis < 2 || self.grid.time_samples == 0 {
            return Err(invalid(
                "grid needs at least 2 points per axis and 1 time sample",
            ));
        }
        if self.run.rate_penalty.is_nan() || self.run.rate_penalty < 0.0 {
            return Err(invalid("run.rate_penalty must be >= 0"));
        }
        if let Some(x0) = &self.run.x0 {
            if x0.len() != n {
                return Err(invalid(format!("run.x0 must have {n} entries")));
            }
        }
        self.controller()?;
        self.disturbance_spec()?;
        self.barrier_function()?;
        self.input_set()?;
        self.state_box()?;
        self.loss_weights().validate().map_err(core)?;
        Ok(())
    }

    pub fn controller(&self) -> Result<ControllerMode, CliError> {
        ControllerMode::parse(&self.run.mode)
            .ok_or_else(|| invalid(format!("unknown run.mode `{}`", self.run.mode)))
    }

    pub fn system(&self) -> Result<SystemDynamics<f64>, CliError> {
        let n = self.system.n_x;
        let rows: Vec<f64> = self.system.a.iter().flatten().copied().collect();
        let sys = SystemDynamics::linear(Mat::from_row_slice(n, n, &rows), Mat::identity(n))
            .map_err(core)?;
        sys.with_domain(self.state_box()?).map_err(core)
    }

    pub fn input_set(&self) -> Result<InputSet<f64>, CliError> {
        let b = &self.system.input_bounds;
        InputSet::new(b.lower.clone(), b.upper.clone()).map_err(core)
    }

    pub fn state_box(&self) -> Result<BoxSet<f64>, CliError> {
        let b = &self.system.state_bounds;
        BoxSet::new(b.lower.clone(), b.upper.clone()).map_err(core)
    }

    pub fn reference_trajectory(&self) -> ReferenceTrajectory<f64> {
        ReferenceTrajectory::sinusoid(
            self.system.n_x,
            self.reference.amplitude,
            self.reference.frequency,
        )
    }

    pub fn barrier_function(&self) -> Result<BarrierFunction<f64>, CliError> {
        let b = &self.barrier;
        let corridor =
            CorridorBarrier::new(b.epsilon, self.reference_trajectory()).map_err(core)?;
        BarrierFunction::corridor(corridor, ClassK::Linear(b.alpha), b.a, b.b).map_err(core)
    }

    pub fn disturbance_spec(&self) -> Result<DisturbanceSpec<f64>, CliError> {
        let kind = match self.disturbance {
            DisturbanceSection::Zero => DisturbanceKind::Zero,
            DisturbanceSection::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => DisturbanceKind::Sinusoid {
                amplitude,
                frequency,
                phase,
            },
            DisturbanceSection::PiecewiseRandom {
                amplitude,
                hold,
                seed,
            } => DisturbanceKind::PiecewiseRandom {
                amplitude,
                hold,
                seed: seed.unwrap_or_else(|| derive_seed(self.run.seed, DISTURBANCE_STREAM)),
            },
        };
        DisturbanceSpec::new(kind, self.system.n_x).map_err(core)
    }

    pub fn grid_spec(&self) -> GridSpec<f64> {
        GridSpec {
            points_per_axis: self.grid.points_per_axis,
            time_samples: self.grid.time_samples,
            safety_factor: self.grid.safety_factor,
            ..GridSpec::default()
        }
    }

    pub fn w_bar(&self) -> Result<f64, CliError> {
        Ok(self.disturbance_spec()?.w_bar())
    }

    pub fn constants(&self) -> Result<BarrierConstants<f64>, CliError> {
        estimate_constants(
            &self.barrier_function()?,
            &self.system()?,
            &self.input_set()?,
            self.w_bar()?,
            self.timing.dt,
            &self.grid_spec(),
        )
        .map_err(core)
    }

    pub fn filter_config(&self) -> Result<FilterConfig<f64>, CliError> {
        Ok(FilterConfig::new(
            self.barrier_function()?,
            self.system()?,
            self.constants()?,
            self.input_set()?,
        )
        .with_rate_penalty(self.run.rate_penalty))
    }

    pub fn problem(&self) -> Result<DpcProblem<f64>, CliError> {
        let input = self.input_set()?;
        Ok(DpcProblem {
            model: discretize(&self.system()?, self.timing.dt).map_err(core)?,
            state_box: self.state_box()?,
            input_box: input.bounds().clone(),
            epsilon: self.barrier.epsilon,
            alpha: self.barrier.alpha,
            horizon: self.training.horizon,
        })
    }

    pub fn loss_weights(&self) -> LossWeights<f64> {
        let w = &self.training.weights;
        LossWeights {
            q_track: w.q_track,
            q_u: w.q_u,
            q_state_pen: w.q_state_pen,
            q_input_pen: w.q_input_pen,
            q_barrier_pen: w.q_barrier_pen,
            d: self.training.d,
            penalty_kind: match self.training.penalty_kind {
                PenaltyName::Relu => PenaltyKind::Relu,
                PenaltyName::ReluSquared => PenaltyKind::ReluSquared,
                PenaltyName::Log10 => PenaltyKind::Log10,
            },
        }
    }

    pub fn training_config(
        &self,
        reference: ReferenceName,
    ) -> Result<TrainingConfig<f64>, CliError> {
        let t = &self.training;
        let seed = t
            .seed
            .unwrap_or_else(|| derive_seed(self.run.seed, TRAINING_STREAM));
        let mut cfg = TrainingConfig::new(self.state_box()?, seed);
        cfg.m = t.m;
        cfg.epochs = t.epochs;
        cfg.batch_size = t.batch_size;
        cfg.learning_rate = t.lr;
        cfg.hidden = t.hidden.clone();
        cfg.reference_mode = reference.mode();
        cfg.validation_fraction = t.validation_fraction;
        cfg.validate().map_err(core)?;
        Ok(cfg)
    }

    pub fn sim_config(&self, controller: ControllerMode) -> Result<SimConfig<f64>, CliError> {
        let reference = self.reference_trajectory();
        let x0 = self.run.x0.clone().unwrap_or_else(|| reference.value(0.0));
        Ok(SimConfig {
            sys: self.system()?,
            disturbance: self.disturbance_spec()?,
            reference,
            controller,
            dt: self.timing.dt,
            substeps: self.timing.substeps,
            t_end: self.timing.t_end,
            x0,
        })
    }
}
