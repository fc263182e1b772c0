use rgm::diff::{Tape, Tensor};
use rgm::net::{focal_loss, rgm_forward, NetConfig, NetVars, RgmWeights};
use rgm::synth::{generate_dataset, Mode, ProtocolSettings, RegistrationSample};

fn loss_with_override(
    weights: &RgmWeights<f64>,
    s: &RegistrationSample<f64>,
    name: &str,
    replacement: &Tensor<f64>,
) -> f64 {
    let mut tape = Tape::new();
    let binding = weights.params.bind(&mut tape);
    let wv = tape.leaf(replacement.clone());
    let vars = NetVars::with_override(&weights.params, &binding, name, wv);
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
    println!("loss {:.6}", tape.value(loss).get(0, 0));
    tape.backward(loss).unwrap();
    weights.params.absorb_grads(&tape, &binding);
    drop(tape);

    let mut top: Vec<(f64, String, usize)> = Vec::new();
    for name in weights.params.names() {
        let g = weights.params.grad(name).unwrap();
        for (i, &v) in g.data().iter().enumerate() {
            top.push((v.abs(), name.to_string(), i));
        }
    }
    top.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let picks: Vec<(String, usize)> = top.iter().take(6).map(|(_, n, i)| (n.clone(), *i)).collect();

    let eps = 1e-6;
    for (name, idx) in picks.iter().map(|(n, i)| (n.as_str(), *i)) {
        let analytic = weights.params.grad(name).unwrap().data()[idx];
        let base = weights.params.get(name).unwrap().clone();
        let mut up_t = base.clone();
        up_t.data_mut()[idx] += eps;
        let mut down_t = base.clone();
        down_t.data_mut()[idx] -= eps;
        let up = loss_with_override(&weights, s, name, &up_t);
        let down = loss_with_override(&weights, s, name, &down_t);
        let numeric = (up - down) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5);
        println!("{name: <24}[{idx: >3}]  analytic {analytic: >14.6}  numeric {numeric: >14.6}  rel {rel:.2e}");
    }
    weights.params.zero_grads();
}
