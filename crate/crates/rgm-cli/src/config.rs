//! TOML experiment configuration: one file covering generation, the network,
//! training, the solver, and the metric thresholds. Missing keys fall back to
//! defaults, so an empty file is a complete configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use rgm::metrics::MetricSettings;
use rgm::net::NetConfig;
use rgm::solve::SolverSettings;
use rgm::synth::ProtocolSettings;
use rgm::train::{TrainSettings, FOCAL_SCENE_ALPHA, FOCAL_SCENE_GAMMA};
use rgm::{Error, Result};

/// Everything a run can configure, grouped by pipeline stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    /// Named loss preset overriding `train.alpha`/`train.gamma`:
    /// `object` (0.5, 0) or `focal-scene` (0.25, 2).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_preset: Option<String>,
    pub net: NetConfig,
    pub synth: ProtocolSettings,
    pub train: TrainSettings,
    pub solver: SolverSettings,
    pub metrics: MetricSettings,
}

/// Parses a config file, or returns defaults when no path is given.
pub fn load_config(path: Option<&Path>) -> Result<AppConfig> {
    match path {
        None => Ok(AppConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text)
                .map_err(|e| Error::Config(vec![format!("{}: {e}", p.display())]))
        }
    }
}

/// Applies the loss preset and checks every range, collecting one message
/// per offending key. Returns the normalized config.
pub fn finalize(mut cfg: AppConfig) -> Result<AppConfig> {
    let mut problems = Vec::new();
    match cfg.loss_preset.as_deref() {
        None => {}
        Some("object") => {
            cfg.train.alpha = 0.5;
            cfg.train.gamma = 0.0;
        }
        Some("focal-scene") => {
            cfg.train.alpha = FOCAL_SCENE_ALPHA;
            cfg.train.gamma = FOCAL_SCENE_GAMMA;
        }
        Some(other) => problems.push(format!(
            "loss_preset: unknown preset {other:?}, accepted values are \"object\" and \"focal-scene\""
        )),
    }
    problems.extend(violations(&cfg));
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(problems))
    }
}

/// The effective configuration as TOML, for echoing to the log.
pub fn effective_toml(cfg: &AppConfig) -> String {
    toml::to_string_pretty(cfg).expect("config serializes")
}

fn violations(cfg: &AppConfig) -> Vec<String> {
    let mut out = Vec::new();
    let mut check = |ok: bool, msg: String| {
        if !ok {
            out.push(msg);
        }
    };

    let net = &cfg.net;
    check(net.k >= 1, format!("net.k: {} is outside [1, inf)", net.k));
    check(
        net.v_dim >= 1,
        format!("net.v_dim: {} is outside [1, inf)", net.v_dim),
    );
    check(
        net.l_blocks >= 1,
        format!("net.l_blocks: {} is outside [1, inf)", net.l_blocks),
    );
    check(
        net.heads >= 1 && net.v_dim % net.heads.max(1) == 0,
        format!(
            "net.heads: {} must be >= 1 and divide net.v_dim = {}",
            net.heads, net.v_dim
        ),
    );
    check(
        net.transformer_depth >= 1,
        format!(
            "net.transformer_depth: {} is outside [1, inf)",
            net.transformer_depth
        ),
    );
    check(
        !net.mlp_widths.is_empty() && net.mlp_widths.iter().all(|&w| w >= 1),
        format!(
            "net.mlp_widths: {:?} must be non-empty with entries >= 1",
            net.mlp_widths
        ),
    );
    check(
        net.sinkhorn_iters >= 1,
        format!(
            "net.sinkhorn_iters: {} is outside [1, inf)",
            net.sinkhorn_iters
        ),
    );
    check(
        net.edge_radius > 0.0,
        format!("net.edge_radius: {} is outside (0, inf)", net.edge_radius),
    );

    let synth = &cfg.synth;
    check(
        synth.n_points >= 8,
        format!("synth.n_points: {} is outside [8, inf)", synth.n_points),
    );
    check(
        (0.0..=180.0).contains(&synth.rot_range_deg),
        format!(
            "synth.rot_range_deg: {} is outside [0, 180]",
            synth.rot_range_deg
        ),
    );
    check(
        synth.trans_range >= 0.0,
        format!("synth.trans_range: {} is outside [0, inf)", synth.trans_range),
    );
    check(
        synth.keep_fraction > 0.0 && synth.keep_fraction <= 1.0,
        format!(
            "synth.keep_fraction: {} is outside (0, 1]",
            synth.keep_fraction
        ),
    );
    check(
        synth.noise_sigma >= 0.0,
        format!("synth.noise_sigma: {} is outside [0, inf)", synth.noise_sigma),
    );
    check(
        synth.noise_clip >= 0.0,
        format!("synth.noise_clip: {} is outside [0, inf)", synth.noise_clip),
    );
    check(
        synth.max_corr_dist > 0.0,
        format!(
            "synth.max_corr_dist: {} is outside (0, inf)",
            synth.max_corr_dist
        ),
    );

    let train = &cfg.train;
    check(
        train.epochs >= 1,
        format!("train.epochs: {} is outside [1, inf)", train.epochs),
    );
    check(
        train.learning_rate.is_finite() && train.learning_rate >= 0.0,
        format!(
            "train.learning_rate: {} is outside [0, inf)",
            train.learning_rate
        ),
    );
    check(
        train.momentum.is_finite() && (0.0..1.0).contains(&train.momentum),
        format!("train.momentum: {} is outside [0, 1)", train.momentum),
    );
    check(
        (0.0..=1.0).contains(&train.alpha),
        format!("train.alpha: {} is outside [0, 1]", train.alpha),
    );
    check(
        train.gamma.is_finite() && train.gamma >= 0.0,
        format!("train.gamma: {} is outside [0, inf)", train.gamma),
    );

    let solver = &cfg.solver;
    check(
        (0.0..=1.0).contains(&solver.tau),
        format!("solver.tau: {} is outside [0, 1]", solver.tau),
    );
    check(
        solver.iterations >= 1,
        format!("solver.iterations: {} is outside [1, inf)", solver.iterations),
    );
    check(
        solver.ransac_iters >= 1,
        format!(
            "solver.ransac_iters: {} is outside [1, inf)",
            solver.ransac_iters
        ),
    );
    check(
        solver.ransac_thresh > 0.0,
        format!(
            "solver.ransac_thresh: {} is outside (0, inf)",
            solver.ransac_thresh
        ),
    );

    let metrics = &cfg.metrics;
    check(
        metrics.ccd_clip > 0.0,
        format!("metrics.ccd_clip: {} is outside (0, inf)", metrics.ccd_clip),
    );
    check(
        metrics.tau1 > 0.0,
        format!("metrics.tau1: {} is outside (0, inf)", metrics.tau1),
    );
    check(
        metrics.tau2 > 0.0,
        format!("metrics.tau2: {} is outside (0, inf)", metrics.tau2),
    );
    check(
        (0.0..=1.0).contains(&metrics.fmr_thresh),
        format!(
            "metrics.fmr_thresh: {} is outside [0, 1]",
            metrics.fmr_thresh
        ),
    );

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_yields_defaults() {
        let cfg: AppConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, AppConfig::default());
        assert!(finalize(cfg).is_ok());
    }

    #[test]
    fn partial_sections_fill_in() {
        let cfg: AppConfig = toml::from_str("[solver]\ntau = 0.25\n").unwrap();
        assert_eq!(cfg.solver.tau, 0.25);
        assert_eq!(cfg.solver.iterations, SolverSettings::default().iterations);
        assert_eq!(cfg.net, NetConfig::default());
    }

    #[test]
    fn out_of_range_tau_names_the_key_and_range() {
        let cfg: AppConfig = toml::from_str("[solver]\ntau = 1.5\n").unwrap();
        let err = finalize(cfg).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("solver.tau"), "{text}");
        assert!(text.contains("[0, 1]"), "{text}");
    }

    #[test]
    fn all_violations_collected() {
        let cfg: AppConfig =
            toml::from_str("[solver]\ntau = 1.5\n\n[train]\nmomentum = 2.0\n").unwrap();
        match finalize(cfg) {
            Err(Error::Config(problems)) => {
                assert_eq!(problems.len(), 2, "{problems:?}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn focal_scene_preset_applies() {
        let cfg: AppConfig = toml::from_str("loss_preset = \"focal-scene\"\n").unwrap();
        let cfg = finalize(cfg).unwrap();
        assert_eq!(cfg.train.alpha, 0.25);
        assert_eq!(cfg.train.gamma, 2.0);
    }

    #[test]
    fn unknown_preset_rejected() {
        let cfg: AppConfig = toml::from_str("loss_preset = \"banana\"\n").unwrap();
        assert!(finalize(cfg).is_err());
    }

    #[test]
    fn effective_toml_roundtrips() {
        let cfg = AppConfig::default();
        let text = effective_toml(&cfg);
        let back: AppConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
