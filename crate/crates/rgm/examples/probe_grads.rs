use rgm::diff::{Tape, Tensor};
use rgm::net::{focal_loss, rgm_forward, NetConfig, NetVars, RgmWeights};
use rgm::synth::{generate_dataset, Mode, ProtocolSettings};
use std::collections::BTreeMap;

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
    let samples = generate_dataset(4, None, &proto).unwrap();
    let mut weights = RgmWeights::<f64>::init(&cfg, 0).unwrap();

    for s in &samples {
        let mut tape = Tape::new();
        let binding = weights.params.bind(&mut tape);
        let net_cfg = weights.config.clone();
        let vars = NetVars::new(&weights.params, &binding);
        let out = rgm_forward(&mut tape, &vars, &s.source, &s.target, &net_cfg).unwrap();
        let gt = tape.leaf(
            Tensor::new(s.source.len(), s.target.len(), s.gt_correspondence.dense::<f64>()).unwrap(),
        );
        let loss = focal_loss(&mut tape, out.corr, gt, 0.5, 0.0).unwrap();
        tape.backward(loss).unwrap();
        weights.params.absorb_grads(&tape, &binding);

        let mut groups: BTreeMap<String, (f64, usize, f64)> = BTreeMap::new();
        for name in weights.params.names() {
            let slash = name.find('/').map(|i| {
                let second = name[i + 1..].find('/').map(|j| i + 1 + j).unwrap_or(name.len());
                second
            }).unwrap_or(name.len());
            let key = name[..slash].to_string();
            let g = weights.params.grad(&name).unwrap();
            let w = weights.params.get(&name).unwrap();
            let e = groups.entry(key).or_insert((0.0, 0, 0.0));
            e.0 += g.data().iter().map(|x| x * x).sum::<f64>();
            e.1 += g.data().len();
            e.2 += w.data().iter().map(|x| x * x).sum::<f64>();
        }
        println!("loss {:.2}", tape.value(loss).get(0, 0));
        for (k, (g2, n, w2)) in &groups {
            println!("  {k: <20} grad_rms {:10.3e}   weight_rms {:10.3e}", (g2 / *n as f64).sqrt(), (w2 / *n as f64).sqrt());
        }
        let mut top: Vec<(f64, String, usize)> = Vec::new();
        for name in weights.params.names() {
            let g = weights.params.grad(name).unwrap();
            for (i, &v) in g.data().iter().enumerate() {
                top.push((v.abs(), name.to_string(), i));
            }
        }
        top.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        println!("top coordinates by |grad|:");
        for (v, name, i) in top.iter().take(12) {
            println!("  {name}[{i}]  |g| = {v:.4e}");
        }
        weights.params.zero_grads();
        break;
    }
}
