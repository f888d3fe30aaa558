//! Throughput check for the GEMM kernels at surrogate-typical shapes.

use std::time::Instant;

use gwnet_core::nn::linalg::{matmul_abt, matmul_acc, matmul_atb};

fn bench(name: &str, m: usize, k: usize, n: usize, f: impl Fn(&[f32], &[f32], &mut [f32])) {
    let a = vec![1.0f32; m * k];
    let b = vec![1.0f32; k * n];
    let mut c = vec![0.0f32; m * n];
    // warmup
    f(&a, &b, &mut c);
    let reps = (2_000_000_000 / (2 * m * k * n)).max(3);
    let t0 = Instant::now();
    for _ in 0..reps {
        f(&a, &b, &mut c);
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    let gflops = (2.0 * m as f64 * k as f64 * n as f64) / dt / 1e9;
    println!("{name:34} m={m:5} k={k:5} n={n:5}  {:8.3} ms  {gflops:7.2} GFLOP/s", dt * 1e3);
}

fn main() {
    // Encoder conv shapes at 64x64 (per-item): Cout x (Cin*k*k) x (oh*ow)
    bench("acc conv1 64x48x1024", 64, 48, 1024, |a, b, c| matmul_acc(64, 48, 1024, a, b, c));
    bench("acc conv2 128x1024x256", 128, 1024, 256, |a, b, c| matmul_acc(128, 1024, 256, a, b, c));
    bench("acc conv3 256x2048x64", 256, 2048, 64, |a, b, c| matmul_acc(256, 2048, 64, a, b, c));
    bench("acc conv4 512x4096x16", 512, 4096, 16, |a, b, c| matmul_acc(512, 4096, 16, a, b, c));
    // Fused decoder phase shapes: Cout x (Cin*4) x (h*w)
    bench("acc up1 256x2048x16", 256, 2048, 16, |a, b, c| matmul_acc(256, 2048, 16, a, b, c));
    bench("acc up2 128x2048x64", 128, 2048, 64, |a, b, c| matmul_acc(128, 2048, 64, a, b, c));
    bench("acc up3 64x1024x256", 64, 1024, 256, |a, b, c| matmul_acc(64, 1024, 256, a, b, c));
    bench("acc head-ish 1x2048x1024", 8, 2048, 1024, |a, b, c| matmul_acc(8, 2048, 1024, a, b, c));
    // Backward kernels at a mid shape
    bench("atb 1024x128x256", 1024, 128, 256, |a, b, c| matmul_atb(1024, 128, 256, a, b, c));
    bench("abt 128x256x1024", 128, 256, 1024, |a, b, c| matmul_abt(128, 256, 1024, a, b, c));
}
