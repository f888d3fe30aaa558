use gwnet_core::fdsolver::*;
use gwnet_core::grf::*;
use gwnet_core::grid::*;
use std::time::Instant;

fn main() {
    let grid = GridSpec::default();
    let sampler = GrfSampler::new(grid, 8.0).unwrap();
    let mut total = std::time::Duration::ZERO;
    let n = 20;
    for seed in 0..n {
        let k = quantize_field(grid, &sampler.sample(seed), &default_class_values()).unwrap();
        let scenario = ScenarioSpec::new(grid, 1.0, vec![
            Well { row: 20, col: 30, head: 0.6 },
            Well { row: 40, col: 10, head: 0.8 },
        ]).unwrap();
        let t = Instant::now();
        let _h = solve_steady_state(&k, &scenario, DEFAULT_TOL).unwrap();
        total += t.elapsed();
    }
    println!("mean 64x64 solve: {:?}", total / n as u32);
    let t = Instant::now();
    let _f = sampler.sample(999);
    println!("one 64x64 grf sample: {:?}", t.elapsed());
}
