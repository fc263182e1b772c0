use rgm::metrics::MetricSettings;
use rgm::net::{NetConfig, RgmWeights};
use rgm::solve::SolverSettings;
use rgm::synth::{generate_dataset, Mode, ProtocolSettings};
use rgm::train::evaluate;

fn main() {
    let cfg = NetConfig {
        k: 10,
        v_dim: 256,
        l_blocks: 2,
        mlp_widths: vec![32, 64, 128],
        ffn_dim: 128,
        ..NetConfig::default()
    };
    let eval_proto = ProtocolSettings {
        n_points: 128,
        rot_range_deg: 45.0,
        mode: Mode::Clean,
        seed: 900_000,
        ..ProtocolSettings::default()
    };
    let eval_set = generate_dataset(20, None, &eval_proto).unwrap();
    let metrics = MetricSettings::default();
    for (k, seed, tau) in [(10usize, 0u64, 0.5f64), (20, 0, 0.5), (10, 1, 0.5), (10, 0, 0.2)] {
        {
            {
                let cfg_k = NetConfig { k, ..cfg.clone() };
                let weights = RgmWeights::<f64>::init(&cfg_k, seed).unwrap();
                let solver = SolverSettings { iterations: 8, tau, ..SolverSettings::default() };
                let outcome = evaluate(&eval_set, Some(&weights), &solver, &metrics, false).unwrap();
                let a = &outcome.aggregate;
                println!(
                    "k {k: >2} seed {seed} tau {tau}: recall {:.2}  mae_r {:6.3}  mie_r {:6.3}  ({} fails)",
                    a.recall, a.mean_mae_r, a.mean_mie_r, outcome.failures.len()
                );
            }
        }
    }
}
