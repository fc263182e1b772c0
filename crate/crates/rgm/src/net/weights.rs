//! Parameter inventory, initialization and weight-file round trips.

use super::NetConfig;
use crate::diff::{Params, Tensor};
use crate::scalar::{cast, Real};
use crate::synth::gaussian;
use crate::{Error, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

enum Init {
    /// Uniform in `[-sqrt(6/fan_in), sqrt(6/fan_in)]`, fan-in = rows.
    Kaiming,
    Zeros,
    Ones,
    /// Identity plus Gaussian noise (sigma 0.01); square shapes only.
    IdentityNoise,
}

/// Full network parameter set together with the architecture it fits.
pub struct RgmWeights<T> {
    pub config: NetConfig,
    pub params: Params<T>,
}

/// Every parameter name, shape and initializer implied by a config, in
/// the canonical (on-disk) order.
fn inventory(cfg: &NetConfig) -> Vec<(String, usize, usize, Init)> {
    let mut inv: Vec<(String, usize, usize, Init)> = Vec::new();
    let linear = |inv: &mut Vec<(String, usize, usize, Init)>,
                      prefix: &str,
                      fan_in: usize,
                      fan_out: usize| {
        inv.push((format!("{prefix}/w"), fan_in, fan_out, Init::Kaiming));
        inv.push((format!("{prefix}/b"), 1, fan_out, Init::Zeros));
    };

    let mut fan_in = 6;
    for (i, &w) in cfg.mlp_widths.iter().enumerate() {
        linear(&mut inv, &format!("f_theta/mlp{i}"), fan_in, w);
        fan_in = w;
    }
    let stages: usize = cfg.mlp_widths.iter().sum();
    let last = *cfg.mlp_widths.last().expect("validated non-empty");
    linear(&mut inv, "f_theta/proj", stages + last, cfg.v_dim);

    let (v, dh, q) = (cfg.v_dim, cfg.head_dim(), cfg.q());
    for l in 0..cfg.l_blocks {
        for d in 0..cfg.transformer_depth {
            for side in ["enc", "dec"] {
                let at = format!("block{l}/xfmr{d}/{side}");
                for h in 0..cfg.heads {
                    for proj in ["wq", "wk", "wv"] {
                        inv.push((format!("{at}/h{h}/{proj}"), v, dh, Init::Kaiming));
                    }
                }
                inv.push((format!("{at}/wo"), v, v, Init::Kaiming));
                linear(&mut inv, &format!("{at}/ffn1"), v, cfg.ffn());
                linear(&mut inv, &format!("{at}/ffn2"), cfg.ffn(), v);
            }
        }
        linear(&mut inv, &format!("block{l}/intra/adj"), v, q);
        linear(&mut inv, &format!("block{l}/intra/self"), v, q);
        inv.push((format!("block{l}/affinity/w"), q, q, Init::IdentityNoise));
        inv.push((format!("block{l}/inorm/scale"), 1, 1, Init::Ones));
        inv.push((format!("block{l}/inorm/shift"), 1, 1, Init::Zeros));
        linear(&mut inv, &format!("block{l}/cross"), 2 * q, v);
    }
    inv
}

impl<T: Real> RgmWeights<T> {
    /// Fresh weights for `config`, deterministic in `seed`.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        for (name, rows, cols, init) in inventory(config) {
            let tensor = match init {
                Init::Kaiming => {
                    let bound = (6.0 / rows as f64).sqrt();
                    Tensor::random_uniform(rows, cols, -bound, bound, &mut rng)
                }
                Init::Zeros => Tensor::zeros(rows, cols),
                Init::Ones => Tensor::ones(rows, cols),
                Init::IdentityNoise => {
                    let mut t = Tensor::zeros(rows, cols);
                    for i in 0..rows {
                        for j in 0..cols {
                            let base = if i == j { 1.0 } else { 0.0 };
                            t.set(i, j, cast(base + 0.01 * gaussian(&mut rng)));
                        }
                    }
                    t
                }
            };
            params.insert(&name, tensor)?;
        }
        Ok(RgmWeights {
            config: config.clone(),
            params,
        })
    }

    /// Writes the weights container plus a `<path>.config.toml` sidecar so
    /// a weights file is self-describing.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)?;
        let cfg_path = config_path(path);
        let text = toml::to_string_pretty(&self.config)
            .map_err(|e| Error::Format(format!("config serialization: {e}")))?;
        std::fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))
    }

    /// Loads weights and their config sidecar, verifying that every
    /// parameter the architecture requires is present with the right shape.
    pub fn load(path: &Path) -> Result<Self> {
        let cfg_path = config_path(path);
        let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let config: NetConfig = toml::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", cfg_path.display())))?;
        config.validate()?;
        let params: Params<T> = Params::load(path)?;

        let expected = inventory(&config);
        if params.len() != expected.len() {
            return Err(Error::Format(format!(
                "{}: expected {} parameters for this config, found {}",
                path.display(),
                expected.len(),
                params.len()
            )));
        }
        for (name, rows, cols, _) in &expected {
            let tensor = params.get(name).map_err(|_| {
                Error::Format(format!("{}: missing parameter `{name}`", path.display()))
            })?;
            if tensor.shape() != (*rows, *cols) {
                return Err(Error::Format(format!(
                    "{}: parameter `{name}` has shape {}x{}, expected {rows}x{cols}",
                    path.display(),
                    tensor.rows(),
                    tensor.cols()
                )));
            }
        }
        Ok(RgmWeights { config, params })
    }
}

/// Path of the config sidecar accompanying a weights file.
pub fn config_path(weights: &Path) -> PathBuf {
    let mut os = weights.as_os_str().to_os_string();
    os.push(".config.toml");
    os.into()
}
