use ndarray::Array2;
use std::time::Instant;

fn bench(m: usize, k: usize, n: usize, reps: usize) {
    let a = Array2::<f64>::from_shape_fn((m, k), |(i, j)| ((i * 31 + j * 7) % 13) as f64 * 0.1);
    let b = Array2::<f64>::from_shape_fn((k, n), |(i, j)| ((i * 17 + j * 3) % 11) as f64 * 0.1);
    let mut acc = 0.0;
    let t0 = Instant::now();
    for _ in 0..reps {
        let c = a.dot(&b);
        acc += c[[0, 0]];
    }
    let dt = t0.elapsed().as_secs_f64();
    let flops = 2.0 * (m * k * n * reps) as f64;
    println!(
        "{}x{}x{} x{}: {:.3}s  {:.2} GFLOP/s (acc {acc:.1})",
        m, k, n, reps, dt, flops / dt / 1e9
    );
}

fn main() {
    bench(256, 256, 256, 200);
    bench(256, 256, 256, 200);
    bench(128, 128, 128, 800);
    bench(256, 4, 256, 2000);
    bench(128, 256, 256, 400);
    // transposed operand, as in backward passes
    let a = Array2::<f64>::from_shape_fn((256, 256), |(i, j)| ((i + j) % 7) as f64);
    let g = Array2::<f64>::from_shape_fn((256, 256), |(i, j)| ((i * j) % 5) as f64);
    let t0 = Instant::now();
    let mut acc = 0.0;
    for _ in 0..200 {
        let dw = a.t().dot(&g);
        acc += dw[[0, 0]];
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "a.t().dot(g) 256: {:.3}s  {:.2} GFLOP/s (acc {acc:.1})",
        dt,
        2.0 * (256f64.powi(3) * 200.0) / dt / 1e9
    );
}
