use rgm::diff::{Tape, Tensor};
use rgm::net::{
    affinity, col_normalize, cross_graph_conv, f_theta, focal_loss, instance_norm,
    intra_graph_conv, local_descriptor, sinkhorn, soft_edges, transformer_embed, NetConfig,
    NetVars, RgmWeights,
};
use rgm::synth::{generate_dataset, Mode, ProtocolSettings};
use std::time::Instant;

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
        seed: 9,
        ..ProtocolSettings::default()
    };
    let samples = generate_dataset(1, None, &proto).unwrap();
    let s = &samples[0];
    let weights = RgmWeights::<f64>::init(&cfg, 1).unwrap();

    let mut t = Instant::now();
    let mut lap = |label: &str| {
        println!("{label: <18} {:7.1} ms", t.elapsed().as_secs_f64() * 1e3);
        t = Instant::now();
    };

    let mut tape = Tape::new();
    let binding = weights.params.bind(&mut tape);
    let vars = NetVars::new(&weights.params, &binding);
    lap("bind");

    let dx = tape.leaf(local_descriptor(&s.source, cfg.k).unwrap());
    let dy = tape.leaf(local_descriptor(&s.target, cfg.k).unwrap());
    lap("descriptors");
    let mut fx = f_theta(&mut tape, &vars, dx, s.source.len(), &cfg).unwrap();
    let mut fy = f_theta(&mut tape, &vars, dy, s.target.len(), &cfg).unwrap();
    lap("f_theta x2");

    let mut corr = None;
    let mut marks: Vec<(String, rgm::diff::Var)> = Vec::new();
    marks.push(("fx (f_theta)".into(), fx));
    for l in 0..cfg.l_blocks {
        let (tx, ty) = transformer_embed(&mut tape, &vars, fx, fy, l, &cfg).unwrap();
        marks.push((format!("b{l} tx"), tx));
        lap("  transformer");
        let ex = soft_edges(&mut tape, tx, &s.source, cfg.edge_mode, cfg.edge_radius).unwrap();
        let ey = soft_edges(&mut tape, ty, &s.target, cfg.edge_mode, cfg.edge_radius).unwrap();
        lap("  soft_edges x2");
        let bx = col_normalize(&mut tape, ex).unwrap();
        let by = col_normalize(&mut tape, ey).unwrap();
        marks.push((format!("b{l} ex"), ex));
        marks.push((format!("b{l} bx"), bx));
        let fxc = intra_graph_conv(&mut tape, &vars, l, fx, bx).unwrap();
        let fyc = intra_graph_conv(&mut tape, &vars, l, fy, by).unwrap();
        marks.push((format!("b{l} fxc"), fxc));
        lap("  intra x2");
        let w = vars.var(&format!("block{l}/affinity/w")).unwrap();
        let a_raw = affinity(&mut tape, fxc, fyc, w).unwrap();
        let a = instance_norm(&mut tape, &vars, l, a_raw).unwrap();
        marks.push((format!("b{l} a_raw"), a_raw));
        marks.push((format!("b{l} a_norm"), a));
        lap("  affinity+inorm");
        let c = sinkhorn(&mut tape, a, cfg.sinkhorn_iters, true).unwrap();
        marks.push((format!("b{l} corr"), c));
        lap("  sinkhorn");
        corr = Some(c);
        let (nx, ny) = cross_graph_conv(&mut tape, &vars, l, fxc, fyc, c).unwrap();
        fx = nx;
        fy = ny;
        lap("  cross");
    }
    let gt = tape
        .leaf(Tensor::new(s.source.len(), s.target.len(), s.gt_correspondence.dense::<f64>()).unwrap());
    let loss = focal_loss(&mut tape, corr.unwrap(), gt, 0.5, 0.0).unwrap();
    lap("loss");
    tape.backward(loss).unwrap();
    lap("backward");
    println!("intermediate value/grad rms:");
    for (label, v) in &marks {
        let val = tape.value(*v);
        let vrms = (val.data().iter().map(|x| x * x).sum::<f64>() / val.len() as f64).sqrt();
        let (grms, gmax) = match tape.grad(*v) {
            Some(g) => (
                (g.data().iter().map(|x| x * x).sum::<f64>() / g.len() as f64).sqrt(),
                g.data().iter().fold(0.0f64, |m, x| m.max(x.abs())),
            ),
            None => (0.0, 0.0),
        };
        println!("  {label: <14} value_rms {vrms:10.3e}   grad_rms {grms:10.3e}   grad_max {gmax:10.3e}");
    }
}
