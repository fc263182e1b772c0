use rgm::diff::{Tape, Tensor};
use rgm::metrics::MetricSettings;
use rgm::net::{focal_loss, rgm_forward, NetConfig, NetVars, RgmWeights};
use rgm::solve::SolverSettings;
use rgm::synth::{generate_dataset, Mode, ProtocolSettings};
use rgm::train::evaluate;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3);
    let n_train: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(100);

    let cfg = NetConfig {
        k: 10,
        v_dim: 256,
        l_blocks: 2,
        mlp_widths: vec![32, 64, 128],
        ffn_dim: 128,
        ..NetConfig::default()
    };
    let train_proto = ProtocolSettings {
        n_points: 128,
        rot_range_deg: 45.0,
        mode: Mode::Clean,
        seed: 1000,
        ..ProtocolSettings::default()
    };
    let eval_proto = ProtocolSettings { seed: 900_000, ..train_proto.clone() };
    let train_set = generate_dataset(n_train, None, &train_proto).unwrap();
    let eval_set = generate_dataset(20, None, &eval_proto).unwrap();
    let wseed: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1);
    let solver = SolverSettings { iterations: 8, ..SolverSettings::default() };
    let metrics = MetricSettings::default();

    let mut weights = RgmWeights::<f64>::init(&cfg, wseed).unwrap();
    println!("lr={lr} epochs={epochs} train={n_train} wseed={wseed}");
    let outcome = evaluate(&eval_set, Some(&weights), &solver, &metrics, false).unwrap();
    let a = &outcome.aggregate;
    println!("epoch 0: recall {:.2}  mae_r {:.3} deg  mae_t {:.4}", a.recall, a.mean_mae_r, a.mean_mae_t);
    for epoch in 1..=epochs {
        let t0 = Instant::now();
        let mut total = 0.0;
        let mut recent = Vec::new();
        for s in &train_set {
            let mut tape = Tape::new();
            let binding = weights.params.bind(&mut tape);
            let net_cfg = weights.config.clone();
            let vars = NetVars::new(&weights.params, &binding);
            let out = rgm_forward(&mut tape, &vars, &s.source, &s.target, &net_cfg).unwrap();
            let gt = tape.leaf(
                Tensor::new(s.source.len(), s.target.len(), s.gt_correspondence.dense::<f64>())
                    .unwrap(),
            );
            let loss = focal_loss(&mut tape, out.corr, gt, 0.5, 0.0).unwrap();
            let lval = tape.value(loss).get(0, 0);
            total += lval;
            recent.push(lval);
            tape.backward(loss).unwrap();
            weights.params.absorb_grads(&tape, &binding);
            weights.params.sgd_step(lr, 0.9);
            weights.params.zero_grads();
        }
        let train_mins = t0.elapsed().as_secs_f64() / 60.0;
        let te = Instant::now();
        let outcome = evaluate(&eval_set, Some(&weights), &solver, &metrics, false).unwrap();
        let a = &outcome.aggregate;
        println!(
            "epoch {epoch}: loss {:.4} (tail {:.4})  recall {:.2}  mae_r {:.3} deg  mae_t {:.4}  ({:.1} min train, {:.1} s eval, {} fails)",
            total / train_set.len() as f64,
            recent.iter().rev().take(10).sum::<f64>() / recent.len().min(10) as f64,
            a.recall,
            a.mean_mae_r,
            a.mean_mae_t,
            train_mins,
            te.elapsed().as_secs_f64(),
            outcome.failures.len()
        );
    }
}
