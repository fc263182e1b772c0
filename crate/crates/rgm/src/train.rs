//! SGD training loop over synthetic registration pairs, plus the batch
//! evaluation driver that runs the full solver on a dataset.
//!
//! One optimizer step per sample: forward pass, focal loss against the
//! ground-truth correspondence, backward pass, momentum-SGD update. The loop
//! is strictly sequential so a fixed seed reproduces the loss curve and the
//! final weights bit for bit.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricAggregate, MetricReport, MetricSettings};
use crate::net::{focal_loss, rgm_forward, NetConfig, NetVars, RgmWeights};
use crate::scalar::{cast, Real};
use crate::solve::{register, SolverSettings};
use crate::synth::{read_dataset, RegistrationSample};

/// `alpha` of the scene-style focal preset.
pub const FOCAL_SCENE_ALPHA: f64 = 0.25;
/// `gamma` of the scene-style focal preset.
pub const FOCAL_SCENE_GAMMA: f64 = 2.0;

/// Optimizer and loss hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Focal-loss class weight in `[0, 1]`.
    pub alpha: f64,
    /// Focal-loss modulation exponent, `>= 0`.
    pub gamma: f64,
    /// Save weights every this many epochs; 0 disables checkpoints.
    pub checkpoint_interval: usize,
    /// Seeds the weight initialization.
    pub seed: u64,
    /// Adds per-epoch wall time to the log. Off by default so the log file
    /// is a pure function of (config, dataset, seed).
    pub log_timing: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 20,
            learning_rate: 1e-3,
            momentum: 0.9,
            alpha: 0.5,
            gamma: 0.0,
            checkpoint_interval: 0,
            seed: 0,
            log_timing: false,
        }
    }
}

impl TrainSettings {
    /// Switches the loss to the scene-style focal preset.
    pub fn with_focal_scene(mut self) -> Self {
        self.alpha = FOCAL_SCENE_ALPHA;
        self.gamma = FOCAL_SCENE_GAMMA;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Parameter(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !self.momentum.is_finite() || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Parameter(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::Parameter(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Seconds spent in the epoch; present only with `log_timing`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

/// Serializes the log as JSON lines, one record per epoch.
pub fn log_to_jsonl(log: &[EpochRecord]) -> String {
    let mut out = String::new();
    for record in log {
        out.push_str(&serde_json::to_string(record).expect("epoch record serializes"));
        out.push('\n');
    }
    out
}

/// Trains fresh weights on in-memory samples.
///
/// Checkpoints land in `checkpoint_dir` as `checkpoint_NNNN.rgmw` when an
/// interval is configured. Returns the final weights and the per-epoch log.
pub fn train_samples<T: Real>(
    samples: &[RegistrationSample<T>],
    net: &NetConfig,
    settings: &TrainSettings,
    checkpoint_dir: Option<&Path>,
) -> Result<(RgmWeights<T>, Vec<EpochRecord>)> {
    settings.validate()?;
    if samples.is_empty() {
        return Err(Error::Parameter("cannot train on an empty dataset".into()));
    }
    if let Some(dir) = checkpoint_dir {
        if settings.checkpoint_interval > 0 {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }

    let mut weights = RgmWeights::init(net, settings.seed)?;
    let lr = cast::<T>(settings.learning_rate);
    let momentum = cast::<T>(settings.momentum);
    let mut log = Vec::with_capacity(settings.epochs);

    for epoch in 1..=settings.epochs {
        let started = Instant::now();
        let mut total = 0.0f64;
        for (index, sample) in samples.iter().enumerate() {
            let loss = training_step(&mut weights, sample, settings, lr, momentum)
                .map_err(|e| match e {
                    Error::Numeric(msg) => Error::Numeric(format!(
                        "epoch {epoch}, sample {index} (seed {}): {msg}",
                        sample.seed
                    )),
                    other => other,
                })?;
            total += loss;
        }
        let mean_loss = total / samples.len() as f64;
        log.push(EpochRecord {
            epoch,
            mean_loss,
            wall_time: settings
                .log_timing
                .then(|| started.elapsed().as_secs_f64()),
        });
        if let Some(dir) = checkpoint_dir {
            if settings.checkpoint_interval > 0 && epoch % settings.checkpoint_interval == 0 {
                weights.save(&dir.join(format!("checkpoint_{epoch:04}.rgmw")))?;
            }
        }
    }
    Ok((weights, log))
}

/// Trains on a dataset directory written by the synthesis pipeline.
pub fn train<T: Real>(
    dataset_dir: &Path,
    net: &NetConfig,
    settings: &TrainSettings,
    checkpoint_dir: Option<&Path>,
) -> Result<(RgmWeights<T>, Vec<EpochRecord>)> {
    let samples = read_dataset::<T>(dataset_dir)?;
    train_samples(&samples, net, settings, checkpoint_dir)
}

fn training_step<T: Real>(
    weights: &mut RgmWeights<T>,
    sample: &RegistrationSample<T>,
    settings: &TrainSettings,
    lr: T,
    momentum: T,
) -> Result<f64> {
    let (n, m) = (sample.source.len(), sample.target.len());
    let corr = &sample.gt_correspondence;
    if corr.n() != n || corr.m() != m {
        return Err(Error::Parameter(format!(
            "ground-truth correspondence is {}x{} but clouds are {n} and {m} points",
            corr.n(),
            corr.m()
        )));
    }

    let config = weights.config.clone();
    let mut tape = Tape::new();
    let binding = weights.params.bind(&mut tape);
    let vars = NetVars::new(&weights.params, &binding);
    let out = rgm_forward(&mut tape, &vars, &sample.source, &sample.target, &config)?;
    let gt = tape.leaf(Tensor::new(n, m, corr.dense::<T>())?);
    let loss = focal_loss(&mut tape, out.corr, gt, settings.alpha, settings.gamma)?;

    let loss_value = tape.value(loss).get(0, 0).to_f64().unwrap_or(f64::NAN);
    if !loss_value.is_finite() {
        return Err(Error::Numeric(format!("loss is non-finite ({loss_value})")));
    }

    tape.backward(loss)?;
    weights.params.absorb_grads(&tape, &binding);
    weights.params.sgd_step(lr, momentum);
    weights.params.zero_grads();
    Ok(loss_value)
}

/// Everything `evaluate` produces: per-sample reports, their aggregate, and
/// the samples that errored instead of producing a report.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub reports: Vec<MetricReport>,
    pub aggregate: MetricAggregate,
    /// `(sample index, error message)` for samples the solver or the metric
    /// stack rejected.
    pub failures: Vec<(usize, String)>,
}

/// Runs the registration solver on every sample and aggregates the metrics.
///
/// With `oracle` set the solver is bypassed and the ground-truth transform
/// and pairs are scored directly, which pins recall at 100% and all
/// transform errors at zero; weights may then be omitted. Per-sample errors
/// are collected, not fatal.
pub fn evaluate<T: Real>(
    samples: &[RegistrationSample<T>],
    weights: Option<&RgmWeights<T>>,
    solver: &SolverSettings,
    metric_settings: &MetricSettings,
    oracle: bool,
) -> Result<EvalOutcome> {
    if weights.is_none() && !oracle {
        return Err(Error::Parameter(
            "weights are required unless oracle mode is set".into(),
        ));
    }
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (index, sample) in samples.iter().enumerate() {
        let gt_pairs = sample.gt_correspondence.pairs();
        let (pre, pred_pairs) = if oracle {
            (sample.gt_transform.clone(), gt_pairs.to_vec())
        } else {
            let w = weights.expect("checked above");
            match register(&sample.source, &sample.target, w, solver) {
                Ok(result) => (result.transform, result.correspondences.pairs().to_vec()),
                Err(e) => {
                    failures.push((index, e.to_string()));
                    continue;
                }
            }
        };
        match metrics::evaluate_sample(
            &sample.source,
            &sample.target,
            &pre,
            &sample.gt_transform,
            gt_pairs,
            &pred_pairs,
            metric_settings,
        ) {
            Ok(report) => reports.push(report),
            Err(e) => failures.push((index, e.to_string())),
        }
    }
    if reports.is_empty() {
        let detail = failures
            .first()
            .map(|(i, msg)| format!("; first failure (sample {i}): {msg}"))
            .unwrap_or_default();
        return Err(Error::Parameter(format!(
            "no sample produced a metric report{detail}"
        )));
    }
    let aggregate = metrics::aggregate(&reports)?;
    Ok(EvalOutcome {
        reports,
        aggregate,
        failures,
    })
}
