use rgm::diff::{Tape, Tensor};
use rgm::net::{rgm_forward, NetConfig, NetVars, RgmWeights};
use rgm::synth::{generate_dataset, Mode, ProtocolSettings};

fn main() {
    let scale_arg: Option<f64> = std::env::args().nth(1).and_then(|s| s.parse().ok());
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
    let weights = RgmWeights::<f64>::init(&cfg, 1).unwrap();

    let mut tape = Tape::new();
    let binding = weights.params.bind(&mut tape);
    let vars = NetVars::new(&weights.params, &binding);
    let out = rgm_forward(&mut tape, &vars, &s.source, &s.target, &cfg).unwrap();
    let c = tape.value(out.corr);
    let gt = s.gt_correspondence.dense::<f64>();
    let (n, m) = (s.source.len(), s.target.len());
    let mut pos: Vec<f64> = Vec::new();
    let mut neg_max: f64 = 0.0;
    let mut all_min: f64 = 1.0;
    for i in 0..n {
        for j in 0..m {
            let p = c.get(i, j);
            all_min = all_min.min(p);
            if gt[i * m + j] > 0.5 {
                pos.push(p);
            } else {
                neg_max = neg_max.max(p);
            }
        }
    }
    pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("scale_arg {scale_arg:?}");
    println!("positives: min {:.3e}  p5 {:.3e}  median {:.3e}  max {:.3e}", pos[0], pos[pos.len() / 20], pos[pos.len() / 2], pos[pos.len() - 1]);
    println!("neg max {neg_max:.3e}  global min {all_min:.3e}  sum pos grad bound {:.3e}", pos.iter().map(|p| 0.5 / p).sum::<f64>());
}
