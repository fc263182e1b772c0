use rgm::diff::{Tape, Tensor};
use rgm::net::{focal_loss, rgm_forward, NetConfig, NetVars, RgmWeights};
use rgm::synth::{generate_dataset, Mode, ProtocolSettings, RegistrationSample};

fn loss_of(weights: &RgmWeights<f64>, s: &RegistrationSample<f64>) -> f64 {
    let mut tape = Tape::new();
    let binding = weights.params.bind(&mut tape);
    let vars = NetVars::new(&weights.params, &binding);
    let out = rgm_forward(&mut tape, &vars, &s.source, &s.target, &weights.config).unwrap();
    let gt = tape.leaf(
        Tensor::new(s.source.len(), s.target.len(), s.gt_correspondence.dense::<f64>()).unwrap(),
    );
    let loss = focal_loss(&mut tape, out.corr, gt, 0.5, 0.0).unwrap();
    tape.value(loss).get(0, 0)
}

fn main() {
    let cfg = NetConfig {
        k: 10,
        v_dim: 256,
        l_blocks: 2,
        mlp_widths: vec![32, 64, 128],
        ffn_dim: 128,
        ..NetConfig::default()
    };
    let proto = ProtocolSettings {
        n_points: 128,
        rot_range_deg: 45.0,
        mode: Mode::Clean,
        seed: 1000,
        ..ProtocolSettings::default()
    };
    let samples = generate_dataset(1, None, &proto).unwrap();
    let s = &samples[0];
    let mut weights = RgmWeights::<f64>::init(&cfg, 1).unwrap();

    let mut tape = Tape::new();
    let binding = weights.params.bind(&mut tape);
    let net_cfg = weights.config.clone();
    let vars = NetVars::new(&weights.params, &binding);
    let out = rgm_forward(&mut tape, &vars, &s.source, &s.target, &net_cfg).unwrap();
    let gt = tape.leaf(
        Tensor::new(s.source.len(), s.target.len(), s.gt_correspondence.dense::<f64>()).unwrap(),
    );
    let loss = focal_loss(&mut tape, out.corr, gt, 0.5, 0.0).unwrap();
    let f0 = tape.value(loss).get(0, 0);
    tape.backward(loss).unwrap();
    weights.params.absorb_grads(&tape, &binding);
    drop(tape);

    let mut g_sq = 0.0;
    let names: Vec<String> = weights.params.names().map(|n| n.to_string()).collect();
    for n in &names {
        g_sq += weights.params.grad(n).unwrap().data().iter().map(|v| v * v).sum::<f64>();
    }
    println!("f(0) = {f0:.6}, |g|^2 = {g_sq:.4e} (predicted slope)");

    let masks = [
        ("all", ""),
        ("no f_theta", "f_theta"),
        ("no ffn", "ffn"),
        ("no attention", "/h"),
        ("no wo", "/wo"),
        ("no intra", "intra"),
        ("no inorm+affinity", "norm"),
        ("only f_theta", "!f_theta"),
    ];
    for (label, pat) in masks {
        print!("{label: <18}");
        for t in [1e-9, 1e-8, 1e-7, 1e-6, 1e-5] {
            let mut w2 = RgmWeights::<f64>::init(&cfg, 1).unwrap();
            for n in &names {
                let keep = if pat.is_empty() {
                    true
                } else if let Some(want) = pat.strip_prefix('!') {
                    n.contains(want)
                } else {
                    !n.contains(pat) && !(pat == "norm" && n.contains("affinity"))
                };
                if keep {
                    let g = weights.params.grad(n).unwrap().clone();
                    w2.params.accumulate_grad(n, &g).unwrap();
                }
            }
            w2.params.sgd_step(t, 0.0);
            print!("  {:+10.4}", loss_of(&w2, s) - f0);
        }
        println!();
    }
}
