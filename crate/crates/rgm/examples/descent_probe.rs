use rgm::diff::{Tape, Tensor};
use rgm::net::{focal_loss, rgm_forward, EdgeMode, NetConfig, NetVars, RgmWeights};
use rgm::synth::{generate_dataset, Mode, ProtocolSettings};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1e-7);
    let steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(12);
    let momentum: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.0);

    let cfg = NetConfig {
        k: 10,
        v_dim: 256,
        l_blocks: 2,
        mlp_widths: vec![32, 64, 128],
        ffn_dim: 128,
        edge_mode: std::env::args().nth(4).map(|m| match m.as_str() {
            "full" => EdgeMode::Full,
            "radius" => EdgeMode::Radius,
            _ => EdgeMode::Learned,
        }).unwrap_or(EdgeMode::Learned),
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

    for step in 0..steps {
        let mut tape = Tape::new();
        let binding = weights.params.bind(&mut tape);
        let net_cfg = weights.config.clone();
        let vars = NetVars::new(&weights.params, &binding);
        let out = rgm_forward(&mut tape, &vars, &s.source, &s.target, &net_cfg).unwrap();
        let gt = tape.leaf(
            Tensor::new(s.source.len(), s.target.len(), s.gt_correspondence.dense::<f64>()).unwrap(),
        );
        let loss = focal_loss(&mut tape, out.corr, gt, 0.5, 0.0).unwrap();
        println!("step {step: >2}: loss {:.6}", tape.value(loss).get(0, 0));
        tape.backward(loss).unwrap();
        weights.params.absorb_grads(&tape, &binding);
        weights.params.sgd_step(lr, momentum);
        weights.params.zero_grads();
    }
}
