use rgm::diff::Tensor;
use std::time::Instant;

fn main() {
    let a = Tensor::<f64>::new(128, 256, (0..128 * 256).map(|i| (i % 17) as f64 * 0.1).collect()).unwrap();
    let b = Tensor::<f64>::new(256, 256, (0..256 * 256).map(|i| (i % 13) as f64 * 0.1).collect()).unwrap();
    let flop = 2.0 * 128.0 * 256.0 * 256.0;
    for _ in 0..3 {
        let t = Instant::now();
        let mut acc = 0.0;
        for _ in 0..100 {
            let c = a.matmul(&b).unwrap();
            acc += c.data()[0];
        }
        let dt = t.elapsed().as_secs_f64() / 100.0;
        println!("matmul 128x256.256x256: {:.3} ms  {:.2} GFlop/s  (sink {acc:.1})", dt * 1e3, flop / dt / 1e9);
    }
    let t = Instant::now();
    let mut acc = 0.0;
    for _ in 0..100 {
        let c = a.matmul_tn(&a).unwrap();
        acc += c.data()[0];
    }
    let dt = t.elapsed().as_secs_f64() / 100.0;
    println!("matmul_tn 256x128.128x256: {:.3} ms  {:.2} GFlop/s  (sink {acc:.1})", dt * 1e3, 2.0 * 256.0 * 128.0 * 256.0 / dt / 1e9);
    let t = Instant::now();
    let mut acc = 0.0;
    for _ in 0..100 {
        let c = b.matmul_nt(&b).unwrap();
        acc += c.data()[0];
    }
    let dt = t.elapsed().as_secs_f64() / 100.0;
    println!("matmul_nt 256x256.256x256: {:.3} ms  {:.2} GFlop/s  (sink {acc:.1})", dt * 1e3, 2.0 * 256.0f64.powi(3) / dt / 1e9);
}
