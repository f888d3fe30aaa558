//! Steady-state groundwater flow on a regular grid.
//!
//! Discretizes ∇·(K∇h) + q = 0 (q = 0, unit cells) with the 5-point stencil
//! and harmonic-mean face transmissivities. Cells carrying an imposed head
//! (the boundary ring and wells) are eliminated from the unknown set, leaving
//! a symmetric positive-definite system over the free cells that is solved by
//! Jacobi-preconditioned conjugate gradients. A banded Cholesky factorization
//! over the same assembly serves as an independent reference for tests.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::grid::{CellMask, ConductivityField, GridSpec, HeadField, ScenarioSpec};

/// Default relative-residual tolerance for the iterative solve.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Largest grid (in cells) the dense reference factorization accepts.
pub const DENSE_CELL_CAP: usize = 4096;

/// Harmonic-mean face transmissivity between two cells of conductivity
/// `k_i`, `k_j` (unit cell dimensions): `2·k_i·k_j / (k_i + k_j)`.
pub fn transmissivity(k_i: f64, k_j: f64) -> Result<f64> {
    if !(k_i > 0.0 && k_j > 0.0) {
        return Err(Error::invalid(
            "transmissivity",
            format!("conductivities must be positive, got ({k_i}, {k_j})"),
        ));
    }
    Ok(2.0 * k_i * k_j / (k_i + k_j))
}

/// The eliminated-Dirichlet system over free cells, in compressed sparse
/// rows. Row `i` holds the diagonal Σ_j T_ij and `−T_ij` for free neighbors;
/// couplings to fixed neighbors are folded into `rhs`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub n_free: usize,
    /// Cell index → unknown index; `None` for fixed cells.
    pub free_index: Vec<Option<usize>>,
    /// Unknown index → cell index.
    pub free_cells: Vec<usize>,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl LinearSystem {
    /// y = A·x.
    pub fn spmv(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_free);
        debug_assert_eq!(y.len(), self.n_free);
        for i in 0..self.n_free {
            let mut acc = 0.0;
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[idx] * x[self.col_idx[idx]];
            }
            y[i] = acc;
        }
    }

    /// Diagonal of A, used by the Jacobi preconditioner.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut diag = vec![0.0; self.n_free];
        for i in 0..self.n_free {
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[idx] == i {
                    diag[i] = self.values[idx];
                }
            }
        }
        diag
    }

    /// Entry A[i, j], zero when absent from the stencil.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
            if self.col_idx[idx] == j {
                return self.values[idx];
            }
        }
        0.0
    }
}

fn neighbors(grid: GridSpec, cell: usize) -> impl Iterator<Item = usize> {
    let (r, c) = grid.coords(cell);
    let (h, w) = (grid.height, grid.width);
    [
        (r > 0).then(|| cell - w),
        (r + 1 < h).then(|| cell + w),
        (c > 0).then(|| cell - 1),
        (c + 1 < w).then(|| cell + 1),
    ]
    .into_iter()
    .flatten()
}

/// Assemble the free-cell system for conductivity `k`, fixed-cell mask
/// `mask`, and per-cell imposed heads `fixed_heads` (read only at fixed
/// cells).
pub fn assemble_system(
    k: &ConductivityField,
    mask: &CellMask,
    fixed_heads: &[f64],
) -> Result<LinearSystem> {
    let grid = k.grid;
    if mask.grid != grid {
        return Err(Error::shape(
            "assemble_system",
            format!("{}x{} mask", grid.height, grid.width),
            format!("{}x{} mask", mask.grid.height, mask.grid.width),
        ));
    }
    if fixed_heads.len() != grid.n_cells() {
        return Err(Error::shape(
            "assemble_system",
            format!("{} fixed heads", grid.n_cells()),
            format!("{}", fixed_heads.len()),
        ));
    }
    for (cell, &fixed) in mask.flags.iter().enumerate() {
        if fixed && !fixed_heads[cell].is_finite() {
            return Err(Error::invalid(
                "assemble_system",
                format!("fixed cell {cell} has non-finite head {}", fixed_heads[cell]),
            ));
        }
    }

    let mut free_index = vec![None; grid.n_cells()];
    let mut free_cells = Vec::new();
    for cell in 0..grid.n_cells() {
        if !mask.flags[cell] {
            free_index[cell] = Some(free_cells.len());
            free_cells.push(cell);
        }
    }
    let n_free = free_cells.len();
    if n_free == 0 {
        return Err(Error::DegenerateSystem(
            "every cell is fixed; nothing to solve".into(),
        ));
    }

    let mut row_ptr = Vec::with_capacity(n_free + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    let mut rhs = vec![0.0; n_free];
    row_ptr.push(0);
    for (i, &cell) in free_cells.iter().enumerate() {
        let mut diag = 0.0;
        // Off-diagonals first, then the diagonal; entries are sorted by
        // column afterwards for predictable layout.
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(5);
        for nb in neighbors(grid, cell) {
            let t = transmissivity(k.values[cell], k.values[nb])?;
            diag += t;
            match free_index[nb] {
                Some(j) => row.push((j, -t)),
                None => rhs[i] += t * fixed_heads[nb],
            }
        }
        row.push((i, diag));
        row.sort_unstable_by_key(|&(j, _)| j);
        for (j, v) in row {
            col_idx.push(j);
            values.push(v);
        }
        row_ptr.push(col_idx.len());
    }

    Ok(LinearSystem {
        n_free,
        free_index,
        free_cells,
        row_ptr,
        col_idx,
        values,
        rhs,
    })
}

/// Jacobi-preconditioned conjugate gradients; returns the solution over free
/// cells or a convergence error carrying the final residual.
fn solve_cg(sys: &LinearSystem, tol: f64) -> Result<Vec<f64>> {
    let n = sys.n_free;
    let rhs_norm = sys.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if rhs_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let inv_diag: Vec<f64> = sys.diagonal().iter().map(|d| 1.0 / d).collect();

    let mut x = vec![0.0; n];
    let mut r = sys.rhs.clone();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();

    let max_iter = 10 * n;
    let mut true_r_norm = rhs_norm;
    for _ in 0..max_iter {
        sys.spmv(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r_norm <= tol * rhs_norm {
            // The recursively updated residual drifts below the true residual
            // once roundoff dominates; accept only on agreement of the true
            // residual b − A·x, restarting from it otherwise.
            sys.spmv(&x, &mut ap);
            true_r_norm = 0.0;
            for i in 0..n {
                r[i] = sys.rhs[i] - ap[i];
                true_r_norm += r[i] * r[i];
            }
            true_r_norm = true_r_norm.sqrt();
            if true_r_norm <= tol * rhs_norm {
                return Ok(x);
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            rz = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            p.copy_from_slice(&z);
            continue;
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    Err(Error::Convergence {
        iterations: max_iter,
        residual: true_r_norm / rhs_norm,
        tolerance: tol,
    })
}

fn scatter_solution(
    grid: GridSpec,
    mask: &CellMask,
    fixed_heads: &[f64],
    free: &[f64],
    sys: &LinearSystem,
) -> HeadField {
    let mut values = vec![0.0; grid.n_cells()];
    for cell in 0..grid.n_cells() {
        values[cell] = match sys.free_index[cell] {
            Some(i) => free[i],
            None => fixed_heads[cell],
        };
    }
    debug_assert_eq!(mask.flags.len(), values.len());
    HeadField { grid, values }
}

/// Solve with an explicit mask and per-cell imposed heads. This is the
/// general entry point; [`solve_steady_state`] wraps it for scenarios.
pub fn solve_with_fixed_heads(
    k: &ConductivityField,
    mask: &CellMask,
    fixed_heads: &[f64],
    tol: f64,
) -> Result<HeadField> {
    let sys = assemble_system(k, mask, fixed_heads)?;
    let free = solve_cg(&sys, tol)?;
    Ok(scatter_solution(k.grid, mask, fixed_heads, &free, &sys))
}

/// Solve a scenario's Dirichlet problem to relative residual `tol`.
pub fn solve_steady_state(
    k: &ConductivityField,
    scenario: &ScenarioSpec,
    tol: f64,
) -> Result<HeadField> {
    let mask = crate::grid::build_fixed_mask(scenario)?;
    let fixed_heads = scenario.fixed_heads();
    solve_with_fixed_heads(k, &mask, &fixed_heads, tol)
}

/// [`solve_steady_state`] plus the wall-clock time of the solve, for the
/// benchmark harness.
pub fn timed_solve(
    k: &ConductivityField,
    scenario: &ScenarioSpec,
    tol: f64,
) -> Result<(HeadField, Duration)> {
    let start = Instant::now();
    let head = solve_steady_state(k, scenario, tol)?;
    Ok((head, start.elapsed()))
}

/// Solve by banded Cholesky factorization of the same assembly. Exact up to
/// roundoff; restricted to small grids and used as a test oracle.
pub fn dense_reference_solve(k: &ConductivityField, scenario: &ScenarioSpec) -> Result<HeadField> {
    let grid = k.grid;
    if grid.n_cells() > DENSE_CELL_CAP {
        return Err(Error::invalid(
            "dense_reference_solve",
            format!(
                "grid {}x{} exceeds the {DENSE_CELL_CAP}-cell cap",
                grid.height, grid.width
            ),
        ));
    }
    let mask = crate::grid::build_fixed_mask(scenario)?;
    let fixed_heads = scenario.fixed_heads();
    let sys = assemble_system(k, &mask, &fixed_heads)?;
    let n = sys.n_free;

    let bw = (0..n)
        .map(|i| i - sys.col_idx[sys.row_ptr[i]])
        .max()
        .unwrap_or(0);

    // Lower-band storage: band[i][bw + j - i] = L[i][j] for j in [i-bw, i].
    let stride = bw + 1;
    let mut band = vec![0.0f64; n * stride];
    for i in 0..n {
        let lo = i.saturating_sub(bw);
        for j in lo..=i {
            let mut s = sys.entry(i, j);
            let k0 = lo.max(j.saturating_sub(bw));
            for kk in k0..j {
                s -= band[i * stride + bw + kk - i] * band[j * stride + bw + kk - j];
            }
            if j < i {
                band[i * stride + bw + j - i] = s / band[j * stride + bw];
            } else {
                if s <= 0.0 {
                    return Err(Error::DegenerateSystem(format!(
                        "Cholesky pivot {s} at row {i}: system not positive definite"
                    )));
                }
                band[i * stride + bw] = s.sqrt();
            }
        }
    }

    // L y = rhs, then Lᵀ x = y.
    let mut y = sys.rhs.clone();
    for i in 0..n {
        let lo = i.saturating_sub(bw);
        let mut s = y[i];
        for j in lo..i {
            s -= band[i * stride + bw + j - i] * y[j];
        }
        y[i] = s / band[i * stride + bw];
    }
    let mut x = y;
    for i in (0..n).rev() {
        let hi = (i + bw).min(n - 1);
        let mut s = x[i];
        for j in i + 1..=hi {
            s -= band[j * stride + bw + i - j] * x[j];
        }
        x[i] = s / band[i * stride + bw];
    }

    Ok(scatter_solution(grid, &mask, &fixed_heads, &x, &sys))
}

/// Largest violation of the discrete maximum principle: how far any head
/// falls outside `[min fixed head, max fixed head]`. Zero when the principle
/// holds exactly.
pub fn max_principle_violation(head: &HeadField, mask: &CellMask, fixed_heads: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (cell, &fixed) in mask.flags.iter().enumerate() {
        if fixed {
            lo = lo.min(fixed_heads[cell]);
            hi = hi.max(fixed_heads[cell]);
        }
    }
    head.values
        .iter()
        .map(|&h| (lo - h).max(h - hi).max(0.0))
        .fold(0.0, f64::max)
}

/// Per-free-cell net flux Σ_j T_ij (h_j − h_i); ≈ 0 at a converged solution.
pub fn flux_imbalance(k: &ConductivityField, mask: &CellMask, head: &HeadField) -> Vec<f64> {
    let grid = k.grid;
    let mut flux = Vec::new();
    for cell in 0..grid.n_cells() {
        if mask.flags[cell] {
            continue;
        }
        let mut acc = 0.0;
        for nb in neighbors(grid, cell) {
            let t = 2.0 * k.values[cell] * k.values[nb] / (k.values[cell] + k.values[nb]);
            acc += t * (head.values[nb] - head.values[cell]);
        }
        flux.push(acc);
    }
    flux
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grf::{default_class_values, quantize_field, GrfSampler};
    use crate::grid::{build_fixed_mask, Well};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Deterministic random scenario + quantized conductivity for oracle tests.
    fn random_instance(side: usize, seed: u64) -> (ConductivityField, ScenarioSpec) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = GridSpec::square(side).unwrap();
        let sampler = GrfSampler::new(grid, 3.0).unwrap();
        let k = quantize_field(grid, &sampler.sample(seed), &default_class_values()).unwrap();
        let n_wells = rng.random_range(1..=3usize);
        let mut wells: Vec<Well> = Vec::new();
        while wells.len() < n_wells {
            let row = rng.random_range(1..side - 1);
            let col = rng.random_range(1..side - 1);
            if wells.iter().any(|w| w.row == row && w.col == col) {
                continue;
            }
            wells.push(Well {
                row,
                col,
                head: rng.random_range(0.5..1.0),
            });
        }
        let scenario = ScenarioSpec::new(grid, 1.0, wells).unwrap();
        (k, scenario)
    }

    #[test]
    fn transmissivity_values() {
        assert_eq!(transmissivity(1.0, 1.0).unwrap(), 1.0);
        let t = transmissivity(0.1, 1.0).unwrap();
        assert!((t - 2.0 * 0.1 / 1.1).abs() < 1e-15);
        assert!(transmissivity(0.0, 1.0).is_err());
        assert!(transmissivity(1.0, -0.5).is_err());
    }

    #[test]
    fn transmissivity_inequalities() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a: f64 = rng.random_range(0.01..10.0);
            let b: f64 = rng.random_range(0.01..10.0);
            let t = transmissivity(a, b).unwrap();
            assert!(t <= 2.0 * a.min(b) + 1e-15);
            assert!(t <= (a + b) / 2.0 + 1e-15);
            assert!((t - transmissivity(b, a).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn assemble_3x3_single_unknown() {
        let grid = GridSpec::new(4, 4).unwrap();
        // Use 3x3 via explicit mask on a 4x4? No: 3x3 grids are legal for
        // assembly-level tests even though ScenarioSpec wants >= 4; build the
        // mask by hand.
        let grid3 = GridSpec { height: 3, width: 3 };
        let k = ConductivityField::uniform(grid3, 0.7).unwrap();
        let mut flags = vec![true; 9];
        flags[4] = false;
        let mask = CellMask { grid: grid3, flags };
        let fixed = vec![1.0; 9];
        let sys = assemble_system(&k, &mask, &fixed).unwrap();
        assert_eq!(sys.n_free, 1);
        // Diagonal is the sum of the four face transmissivities (all 0.7).
        assert!((sys.entry(0, 0) - 4.0 * 0.7).abs() < 1e-15);
        assert!((sys.rhs[0] - 4.0 * 0.7).abs() < 1e-15);
        let _ = grid; // silence: kept for symmetry with other tests
    }

    #[test]
    fn assemble_uniform_4x4_is_laplacian() {
        let grid = GridSpec::new(4, 4).unwrap();
        let k = ConductivityField::uniform(grid, 1.0).unwrap();
        let scenario = ScenarioSpec::new(grid, 1.0, vec![]).unwrap();
        let mask = build_fixed_mask(&scenario).unwrap();
        let sys = assemble_system(&k, &mask, &scenario.fixed_heads()).unwrap();
        assert_eq!(sys.n_free, 4);
        for i in 0..4 {
            assert_eq!(sys.entry(i, i), 4.0);
            let off: f64 = (0..4).filter(|&j| j != i).map(|j| sys.entry(i, j)).sum();
            assert_eq!(off, -2.0); // two free neighbors, each -1
            assert_eq!(sys.rhs[i], 2.0); // two fixed neighbors at head 1
        }
    }

    #[test]
    fn assembled_matrix_is_symmetric() {
        for seed in 0..8u64 {
            let (k, scenario) = random_instance(8, seed);
            let mask = build_fixed_mask(&scenario).unwrap();
            let sys = assemble_system(&k, &mask, &scenario.fixed_heads()).unwrap();
            for i in 0..sys.n_free {
                for idx in sys.row_ptr[i]..sys.row_ptr[i + 1] {
                    let j = sys.col_idx[idx];
                    assert!(
                        (sys.values[idx] - sys.entry(j, i)).abs() < 1e-15,
                        "asymmetry at ({i}, {j}) seed {seed}"
                    );
                }
            }
        }
    }

    #[test]
    fn no_free_cells_is_degenerate() {
        let grid = GridSpec { height: 3, width: 3 };
        let k = ConductivityField::uniform(grid, 1.0).unwrap();
        let mask = CellMask {
            grid,
            flags: vec![true; 9],
        };
        let err = assemble_system(&k, &mask, &vec![1.0; 9]).unwrap_err();
        assert!(matches!(err, Error::DegenerateSystem(_)));
    }

    #[test]
    fn uniform_boundary_gives_constant_head() {
        let grid = GridSpec::default();
        let k = ConductivityField::uniform(grid, 0.55).unwrap();
        let scenario = ScenarioSpec::new(grid, 1.0, vec![]).unwrap();
        let head = solve_steady_state(&k, &scenario, DEFAULT_TOL).unwrap();
        for &h in &head.values {
            assert!((h - 1.0).abs() < 1e-9, "head {h}");
        }
    }

    #[test]
    fn single_unknown_is_neighbor_average() {
        // 3x3, uniform K: center head is the plain average of the four
        // face-adjacent fixed neighbors (N=S=1, E=W=0.5 -> 0.75).
        let grid = GridSpec { height: 3, width: 3 };
        let k = ConductivityField::uniform(grid, 1.0).unwrap();
        let mut flags = vec![true; 9];
        flags[4] = false;
        let mask = CellMask { grid, flags };
        let mut fixed = vec![0.0; 9];
        fixed[grid.index(0, 1)] = 1.0;
        fixed[grid.index(2, 1)] = 1.0;
        fixed[grid.index(1, 0)] = 0.5;
        fixed[grid.index(1, 2)] = 0.5;
        let head = solve_with_fixed_heads(&k, &mask, &fixed, DEFAULT_TOL).unwrap();
        assert!((head.at(1, 1) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn single_unknown_transmissivity_weighted() {
        // Center and N/S neighbors at K = 1 (face T = 1); E/W at K = 1/3
        // (face T = 2·1·(1/3)/(4/3) = 1/2). N,S fixed at 1; E,W at 0:
        // h = (1·1 + 1·1 + 0.5·0 + 0.5·0) / (1 + 1 + 0.5 + 0.5) = 2/3.
        let grid = GridSpec { height: 3, width: 3 };
        let mut kv = vec![1.0; 9];
        kv[grid.index(1, 0)] = 1.0 / 3.0;
        kv[grid.index(1, 2)] = 1.0 / 3.0;
        let k = ConductivityField::new(grid, kv).unwrap();
        let mut flags = vec![true; 9];
        flags[4] = false;
        let mask = CellMask { grid, flags };
        let mut fixed = vec![0.0; 9];
        fixed[grid.index(0, 1)] = 1.0;
        fixed[grid.index(2, 1)] = 1.0;
        let head = solve_with_fixed_heads(&k, &mask, &fixed, DEFAULT_TOL).unwrap();
        assert!((head.at(1, 1) - 2.0 / 3.0).abs() < 1e-12, "{}", head.at(1, 1));
    }

    #[test]
    fn iterative_matches_dense_reference() {
        for (side, seeds) in [(8usize, 0..10u64), (16, 0..5u64)] {
            for seed in seeds {
                let (k, scenario) = random_instance(side, seed);
                let fast = solve_steady_state(&k, &scenario, DEFAULT_TOL).unwrap();
                let exact = dense_reference_solve(&k, &scenario).unwrap();
                let max_abs = fast
                    .values
                    .iter()
                    .zip(&exact.values)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                assert!(max_abs < 1e-8, "side {side} seed {seed}: diff {max_abs:e}");
            }
        }
    }

    #[test]
    fn dense_reference_respects_size_cap() {
        let grid = GridSpec::new(65, 64).unwrap();
        let k = ConductivityField::uniform(grid, 1.0).unwrap();
        let scenario = ScenarioSpec::new(grid, 1.0, vec![]).unwrap();
        assert!(dense_reference_solve(&k, &scenario).is_err());
    }

    #[test]
    fn maximum_principle_and_flux_balance() {
        for seed in 0..10u64 {
            let (k, scenario) = random_instance(16, seed);
            let mask = build_fixed_mask(&scenario).unwrap();
            let fixed = scenario.fixed_heads();
            let head = solve_with_fixed_heads(&k, &mask, &fixed, DEFAULT_TOL).unwrap();
            assert!(max_principle_violation(&head, &mask, &fixed) <= 1e-9);
            for f in flux_imbalance(&k, &mask, &head) {
                assert!(f.abs() < 1e-8, "flux imbalance {f:e} at seed {seed}");
            }
        }
    }

    #[test]
    fn raising_a_well_head_never_lowers_heads() {
        for seed in 0..5u64 {
            let (k, scenario) = random_instance(12, seed);
            let mut raised = scenario.clone();
            raised.wells[0].head = (raised.wells[0].head + 0.1).min(0.999);
            let base = solve_steady_state(&k, &scenario, DEFAULT_TOL).unwrap();
            let bumped = solve_steady_state(&k, &raised, DEFAULT_TOL).unwrap();
            for (a, b) in base.values.iter().zip(&bumped.values) {
                assert!(b - a >= -1e-12, "head dropped: {a} -> {b} (seed {seed})");
            }
        }
    }

    #[test]
    fn convergence_error_carries_residual() {
        // An absurdly tight tolerance cannot be met in the iteration budget
        // on a larger heterogeneous instance.
        let (k, scenario) = random_instance(16, 3);
        match solve_steady_state(&k, &scenario, 1e-30) {
            Err(Error::Convergence {
                iterations,
                residual,
                tolerance,
            }) => {
                assert!(iterations > 0);
                assert!(residual > tolerance);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }
}
