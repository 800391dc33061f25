use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde_json::{Map, Value};

use safedpc::barrier::{
    certify_sdzcbf1, certify_sdzcbf2, compute_min_annulus_width, CertReport, Def1Report,
};
use safedpc::dpc::{train, weights, PolicyNetwork, TrainingOutcome};
use safedpc::filter::BackupLaw;
use safedpc::sim::{run_closed_loop, ControllerMode, Metrics, TrajectoryLog};

use crate::config::{ReferenceName, ScenarioConfig};
use crate::error::CliError;

pub const EFFECTIVE_CONFIG_FILE: &str = "effective-config.json";
pub const CERTIFICATE_FILE: &str = "certificate.txt";
pub const CERTIFY_SUMMARY_FILE: &str = "certify-summary.json";
pub const FIG2_SUMMARY_FILE: &str = "fig2-summary.csv";

pub fn weights_file(reference: ReferenceName) -> String {
    format!("policy-{}.weights", reference.as_str())
}

pub fn curve_file(reference: ReferenceName) -> String {
    format!("training-{}.csv", reference.as_str())
}

pub fn trajectory_file(mode: ControllerMode) -> String {
    format!("trajectory-{}.csv", mode.as_str())
}

pub fn metrics_file(mode: ControllerMode) -> String {
    format!("metrics-{}.txt", mode.as_str())
}

/// Output directory handle; every write reports the failing path.
#[derive(Clone, Debug)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, CliError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|source| CliError::Write {
            path: root.clone(),
            source,
        })?;
        Ok(Self { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}

pub struct CertifyOutcome {
    pub annulus: CertReport<f64>,
    pub whole_set: Def1Report<f64>,
}

/// Annulus certification plus the whole-safe-set comparison, written as one
/// text report and a JSON summary.
pub fn certify(cfg: &ScenarioConfig, out: &OutputDir) -> Result<CertifyOutcome, CliError> {
    let start = Instant::now();
    let bf = cfg.barrier_function()?;
    let sys = cfg.system()?;
    let input = cfg.input_set()?;
    let spec = cfg.grid_spec();
    let consts = cfg.constants()?;
    info!("h_bar_reach = {:.6}", compute_min_annulus_width(&consts));

    let backup = BackupLaw {
        barrier: &bf,
        sys: &sys,
        constants: &consts,
    };
    let annulus = certify_sdzcbf2(&bf, &sys, &input, &consts, &backup, &spec)
        .map_err(CliError::stage("certify"))?;
    let whole_set = certify_sdzcbf1(&bf, &sys, &input, cfg.w_bar()?, cfg.timing.dt, &spec)
        .map_err(CliError::stage("certify (whole safe set)"))?;

    let mut text = String::from("[annulus condition]\n");
    text.push_str(&annulus.to_text());
    text.push_str("\n[whole safe set condition]\n");
    text.push_str(&whole_set.to_text());
    out.write(CERTIFICATE_FILE, &text)?;

    let section = |fields: Vec<(String, String)>| {
        Value::Object(
            fields
                .into_iter()
                .map(|(k, v)| (k, Value::String(v)))
                .collect(),
        )
    };
    let mut summary = Map::new();
    summary.insert("annulus".into(), section(annulus.summary_fields()));
    summary.insert("whole_safe_set".into(), section(whole_set.summary_fields()));
    let json = serde_json::to_string_pretty(&Value::Object(summary)).expect("summary serializes");
    out.write(CERTIFY_SUMMARY_FILE, &(json + "\n"))?;

    info!("certification finished in {:.2?}", start.elapsed());
    Ok(CertifyOutcome { annulus, whole_set })
}

pub struct TrainArtifacts {
    pub outcome: TrainingOutcome<f64>,
    pub weights: PathBuf,
    pub curve: PathBuf,
}

pub fn train_policy(
    cfg: &ScenarioConfig,
    reference: ReferenceName,
    out: &OutputDir,
) -> Result<TrainArtifacts, CliError> {
    let stage = format!("train[{}]", reference.as_str());
    let start = Instant::now();
    let tcfg = cfg.training_config(reference)?;
    let problem = cfg.problem()?;
    let outcome = train(
        &tcfg,
        &problem,
        &cfg.reference_trajectory(),
        &cfg.loss_weights(),
    )
    .map_err(CliError::stage(stage.clone()))?;
    let weights_path = out.path(&weights_file(reference));
    weights::save(&outcome.policy, &weights_path).map_err(|e| match e {
        safedpc::Error::Io(source) => CliError::Write {
            path: weights_path.clone(),
            source,
        },
        other => CliError::Stage {
            stage: stage.clone(),
            source: other,
        },
    })?;
    let curve = out.write(&curve_file(reference), &outcome.curve.to_csv())?;
    info!(
        "{stage} finished in {:.2?}, best epoch {}",
        start.elapsed(),
        outcome.best_epoch
    );
    Ok(TrainArtifacts {
        outcome,
        weights: weights_path,
        curve,
    })
}

pub fn load_policy(path: &Path) -> Result<PolicyNetwork<f64>, CliError> {
    weights::load(path).map_err(|e| CliError::Stage {
        stage: format!("load {}", path.display()),
        source: e,
    })
}

pub fn simulate(
    cfg: &ScenarioConfig,
    controller: ControllerMode,
    policy: Option<&PolicyNetwork<f64>>,
) -> Result<TrajectoryLog<f64>, CliError> {
    let sim = cfg.sim_config(controller)?;
    let filter = cfg.filter_config()?;
    run_closed_loop(&sim, policy, &filter).map_err(CliError::stage(format!(
        "simulate[{}]",
        controller.as_str()
    )))
}

pub fn write_trajectory(log: &TrajectoryLog<f64>, out: &OutputDir) -> Result<(), CliError> {
    out.write(&trajectory_file(log.mode), &log.to_csv())?;
    out.write(&metrics_file(log.mode), &log.metrics.to_key_values())?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fig2Run {
    Blue,
    Gold,
    Green,
    Purple,
}

impl Fig2Run {
    pub const ALL: [Fig2Run; 4] = [
        Fig2Run::Blue,
        Fig2Run::Gold,
        Fig2Run::Green,
        Fig2Run::Purple,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Fig2Run::Blue => "blue",
            Fig2Run::Gold => "gold",
            Fig2Run::Green => "green",
            Fig2Run::Purple => "purple",
        }
    }

    pub fn controller(self) -> ControllerMode {
        match self {
            Fig2Run::Blue => ControllerMode::BackupOnlyFilter,
            Fig2Run::Gold | Fig2Run::Purple => ControllerMode::PolicyFilter,
            Fig2Run::Green => ControllerMode::PolicyOnly,
        }
    }

    pub fn policy(self) -> Option<ReferenceName> {
        match self {
            Fig2Run::Blue => None,
            Fig2Run::Gold => Some(ReferenceName::True),
            Fig2Run::Green | Fig2Run::Purple => Some(ReferenceName::Zero),
        }
    }

    pub fn file(self) -> String {
        format!("fig2-{}.csv", self.label())
    }
}

#[derive(Clone, Debug)]
pub struct Fig2Row {
    pub run: Fig2Run,
    pub metrics: Metrics<f64>,
}

#[derive(Clone, Debug)]
pub struct Fig2Summary {
    pub rows: Vec<Fig2Row>,
}

impl Fig2Summary {
    pub const HEADER: &'static str =
        "run,controller,policy,min_h,violation_count,trigger_fraction,rms_tracking_error,max_input_norm";

    pub fn get(&self, run: Fig2Run) -> &Metrics<f64> {
        &self
            .rows
            .iter()
            .find(|r| r.run == run)
            .expect("all runs present")
            .metrics
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.run.label(),
                r.run.controller().as_str(),
                r.run.policy().map_or("none", ReferenceName::as_str),
                m.min_h,
                m.violation_count,
                m.trigger_fraction,
                m.rms_tracking_error,
                m.max_input_norm
            );
        }
        s
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<7} {:<20} {:<6} {:>11} {:>8} {:>9} {:>8}\n",
            "run", "controller", "policy", "min_h", "trigger", "rms_err", "max_u"
        );
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                s,
                "{:<7} {:<20} {:<6} {:>11.6} {:>8.4} {:>9.5} {:>8.4}",
                r.run.label(),
                r.run.controller().as_str(),
                r.run.policy().map_or("none", ReferenceName::as_str),
                m.min_h,
                m.trigger_fraction,
                m.rms_tracking_error,
                m.max_input_norm
            );
        }
        s
    }

    /// Safe, safe, unsafe, safe for blue, gold, green, purple.
    pub fn pattern_holds(&self) -> bool {
        Fig2Run::ALL.iter().all(|&run| {
            let safe = self.get(run).min_h >= 0.0;
            safe == (run != Fig2Run::Green)
        })
    }
}

/// Trains both policies, runs the four controllers on the same disturbance
/// and writes one CSV per run plus the summary table.
pub fn scenario_fig2(cfg: &ScenarioConfig, out: &OutputDir) -> Result<Fig2Summary, CliError> {
    let (proper, improper) = rayon::join(
        || train_policy(cfg, ReferenceName::True, out),
        || train_policy(cfg, ReferenceName::Zero, out),
    );
    let (proper, improper) = (proper?.outcome.policy, improper?.outcome.policy);

    let rows = Fig2Run::ALL
        .par_iter()
        .map(|&run| {
            let policy = run.policy().map(|r| match r {
                ReferenceName::True => &proper,
                ReferenceName::Zero => &improper,
            });
            let log = simulate(cfg, run.controller(), policy).map_err(|e| match e {
                CliError::Stage { source, .. } => CliError::Stage {
                    stage: format!("fig2/{}", run.label()),
                    source,
                },
                other => other,
            })?;
            out.write(&run.file(), &log.to_csv())?;
            Ok(Fig2Row {
                run,
                metrics: log.metrics,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let summary = Fig2Summary { rows };
    out.write(FIG2_SUMMARY_FILE, &summary.to_csv())?;
    if summary.get(Fig2Run::Green).min_h >= 0.0 {
        warn!("the improperly trained policy stayed inside the corridor without the filter");
    }
    Ok(summary)
}
