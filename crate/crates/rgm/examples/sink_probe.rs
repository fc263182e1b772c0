use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgm::diff::{Tape, Tensor};
use rgm::net::sinkhorn;

fn worst_dev(t: &Tensor<f64>, iters: usize) -> f64 {
    let (n, m) = t.shape();
    let mut tape = Tape::<f64>::new();
    let v = tape.leaf(t.clone());
    let out = sinkhorn(&mut tape, v, iters, true).unwrap();
    let val = tape.value(out);
    let mut worst = 0.0f64;
    for i in 0..n {
        let s: f64 = val.row(i).iter().sum();
        worst = worst.max((s - 1.0).abs());
    }
    for j in 0..m {
        let s: f64 = (0..n + 1).map(|i| val.get(i, j)).sum();
        worst = worst.max((s - 1.0).abs());
    }
    worst
}

fn main() {
    for (lo, hi) in [(0.5f64, 2.0f64), (0.25, 4.0), (0.1, 10.0), (1.0, 2.0)] {
        for iters in [20usize, 40, 100, 200] {
            let mut worst = 0.0f64;
            for seed in 0..200u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = rng.gen_range(1..=64);
                let m = rng.gen_range(1..=64);
                let p: Vec<f64> = (0..n * m)
                    .map(|_| rng.gen_range(lo..hi).ln())
                    .collect();
                let t = Tensor::new(n, m, p).unwrap();
                worst = worst.max(worst_dev(&t, iters));
            }
            println!("range ({lo}, {hi}) iters {iters:3}: worst {worst:.3e}");
        }
    }
}
