//! Grid-indexed field types shared by the solver, the data generator and the
//! network: scenario descriptions, fixed-cell masks, conductivity and head
//! fields, and the 3-channel sample encoding.
//!
//! Indexing is row-major `(row, col)` with the origin at the top-left cell,
//! matching the image layout used by the dataset format.

use crate::error::{Error, Result};

/// Default number of rows/columns of the square test domain.
pub const DEFAULT_GRID: usize = 64;
/// Imposed well heads lie in `[WELL_HEAD_MIN, WELL_HEAD_MAX)`.
pub const WELL_HEAD_MIN: f64 = 0.5;
pub const WELL_HEAD_MAX: f64 = 1.0;
/// Default upper bound on the number of wells per scenario.
pub const DEFAULT_WELL_MAX: usize = 3;

/// Rectangular cell grid, `height` rows by `width` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            height: DEFAULT_GRID,
            width: DEFAULT_GRID,
        }
    }
}

impl GridSpec {
    /// A grid must admit a boundary ring plus at least one interior free cell,
    /// hence the minimum of 4 cells per side.
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height < 4 || width < 4 {
            return Err(Error::invalid(
                "grid",
                format!("{height}x{width}: each side must be at least 4 cells"),
            ));
        }
        Ok(GridSpec { height, width })
    }

    pub fn square(side: usize) -> Result<Self> {
        Self::new(side, side)
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.width, index % self.width)
    }

    /// True for cells on the outer ring, which always carries a Dirichlet head.
    #[inline]
    pub fn on_ring(&self, row: usize, col: usize) -> bool {
        row == 0 || col == 0 || row == self.height - 1 || col == self.width - 1
    }

    /// Number of cells on the outer ring: `2H + 2W - 4`.
    pub fn ring_cells(&self) -> usize {
        2 * self.height + 2 * self.width - 4
    }

    /// Iterator over interior (non-ring) cell coordinates.
    pub fn interior(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..self.height - 1).flat_map(move |r| (1..self.width - 1).map(move |c| (r, c)))
    }
}

/// One well: an interior cell with an imposed head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Well {
    pub row: usize,
    pub col: usize,
    pub head: f64,
}

/// A Dirichlet problem: boundary head on the outer ring plus up to a few
/// fixed-head wells strictly inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub grid: GridSpec,
    pub boundary_head: f64,
    pub wells: Vec<Well>,
}

impl ScenarioSpec {
    pub fn new(grid: GridSpec, boundary_head: f64, wells: Vec<Well>) -> Result<Self> {
        let scenario = ScenarioSpec {
            grid,
            boundary_head,
            wells,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.boundary_head > 0.0 && self.boundary_head <= 1.0) {
            return Err(Error::invalid(
                "scenario",
                format!("boundary head {} outside (0, 1]", self.boundary_head),
            ));
        }
        for (i, w) in self.wells.iter().enumerate() {
            if w.row >= self.grid.height || w.col >= self.grid.width {
                return Err(Error::invalid(
                    "scenario",
                    format!("well {} at ({}, {}) outside the grid", i, w.row, w.col),
                ));
            }
            if self.grid.on_ring(w.row, w.col) {
                return Err(Error::invalid(
                    "scenario",
                    format!("well on boundary: well {} at ({}, {})", i, w.row, w.col),
                ));
            }
            if !(w.head >= WELL_HEAD_MIN && w.head < WELL_HEAD_MAX) {
                return Err(Error::invalid(
                    "scenario",
                    format!(
                        "well {} head {} outside [{}, {})",
                        i, w.head, WELL_HEAD_MIN, WELL_HEAD_MAX
                    ),
                ));
            }
            for q in &self.wells[..i] {
                if q.row == w.row && q.col == w.col {
                    return Err(Error::invalid(
                        "scenario",
                        format!("duplicate well at ({}, {})", w.row, w.col),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Per-cell imposed heads: boundary head on the ring, well heads at wells,
    /// 0 at free cells (free cells carry no value; the mask disambiguates).
    pub fn fixed_heads(&self) -> Vec<f64> {
        let g = self.grid;
        let mut heads = vec![0.0; g.n_cells()];
        for r in 0..g.height {
            for c in 0..g.width {
                if g.on_ring(r, c) {
                    heads[g.index(r, c)] = self.boundary_head;
                }
            }
        }
        for w in &self.wells {
            heads[g.index(w.row, w.col)] = w.head;
        }
        heads
    }
}

/// Per-cell boolean mask; `true` marks a fixed (Dirichlet) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMask {
    pub grid: GridSpec,
    pub flags: Vec<bool>,
}

impl CellMask {
    #[inline]
    pub fn is_fixed(&self, row: usize, col: usize) -> bool {
        self.flags[self.grid.index(row, col)]
    }

    pub fn n_fixed(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// Ring cells plus well cells are fixed; everything else is free.
pub fn build_fixed_mask(scenario: &ScenarioSpec) -> Result<CellMask> {
    scenario.validate()?;
    let g = scenario.grid;
    let mut flags = vec![false; g.n_cells()];
    for r in 0..g.height {
        for c in 0..g.width {
            if g.on_ring(r, c) {
                flags[g.index(r, c)] = true;
            }
        }
    }
    for w in &scenario.wells {
        flags[g.index(w.row, w.col)] = true;
    }
    Ok(CellMask { grid: g, flags })
}

/// Per-cell hydraulic conductivity, strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ConductivityField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::shape(
                "conductivity field",
                format!("{} cells", grid.n_cells()),
                format!("{} values", values.len()),
            ));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::invalid(
                "conductivity field",
                format!("non-positive conductivity {v}"),
            ));
        }
        Ok(ConductivityField { grid, values })
    }

    pub fn uniform(grid: GridSpec, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.n_cells()])
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[self.grid.index(row, col)]
    }
}

/// Per-cell hydraulic head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl HeadField {
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[self.grid.index(row, col)]
    }
}

/// Index of the fixed-head channel in a sample's input image.
pub const CH_HEAD: usize = 0;
/// Index of the fixed-cell mask channel.
pub const CH_MASK: usize = 1;
/// Index of the conductivity channel.
pub const CH_CONDUCTIVITY: usize = 2;
/// Input channels per sample.
pub const IN_CHANNELS: usize = 3;
/// Output channels per sample.
pub const OUT_CHANNELS: usize = 1;

/// One training pair: a 3-channel input image (fixed heads, fixed-cell mask,
/// conductivity) and the solved head field as the 1-channel target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub grid: GridSpec,
    /// Channel-major, row-major within channel; length `3 * H * W`.
    pub input: Vec<f32>,
    /// Length `H * W`.
    pub target: Vec<f32>,
}

impl Sample {
    pub fn channel(&self, ch: usize) -> &[f32] {
        let n = self.grid.n_cells();
        &self.input[ch * n..(ch + 1) * n]
    }
}

/// A violated [`Sample`] invariant. Violations are data, not faults: a
/// malformed sample reports every problem instead of failing on the first.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleViolation {
    /// Lengths disagree with the grid.
    BadShape { expected: usize, actual: usize },
    /// Mask channel holds a value other than 0 or 1.
    MaskNotBinary { index: usize, value: f32 },
    /// Head channel is nonzero at a cell the mask marks free.
    HeadOutsideMask { index: usize, value: f32 },
    /// Conductivity is not strictly positive.
    NonPositiveConductivity { index: usize, value: f32 },
    /// Target head outside [0, 1].
    TargetOutOfRange { index: usize, value: f32 },
}

impl std::fmt::Display for SampleViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SampleViolation::BadShape { expected, actual } => {
                write!(f, "bad shape: expected {expected} values, got {actual}")
            }
            SampleViolation::MaskNotBinary { index, value } => {
                write!(f, "mask not binary at cell {index}: {value}")
            }
            SampleViolation::HeadOutsideMask { index, value } => {
                write!(f, "head outside mask at cell {index}: {value}")
            }
            SampleViolation::NonPositiveConductivity { index, value } => {
                write!(f, "non-positive conductivity at cell {index}: {value}")
            }
            SampleViolation::TargetOutOfRange { index, value } => {
                write!(f, "target out of [0,1] at cell {index}: {value}")
            }
        }
    }
}

/// Checks every [`Sample`] invariant and returns the full violation list,
/// empty when the sample is well formed.
pub fn validate_sample(sample: &Sample) -> Vec<SampleViolation> {
    let n = sample.grid.n_cells();
    let mut violations = Vec::new();
    if sample.input.len() != IN_CHANNELS * n || sample.target.len() != n {
        violations.push(SampleViolation::BadShape {
            expected: IN_CHANNELS * n + n,
            actual: sample.input.len() + sample.target.len(),
        });
        return violations;
    }
    let heads = sample.channel(CH_HEAD);
    let mask = sample.channel(CH_MASK);
    let cond = sample.channel(CH_CONDUCTIVITY);
    for i in 0..n {
        if mask[i] != 0.0 && mask[i] != 1.0 {
            violations.push(SampleViolation::MaskNotBinary {
                index: i,
                value: mask[i],
            });
        }
        if mask[i] == 0.0 && heads[i] != 0.0 {
            violations.push(SampleViolation::HeadOutsideMask {
                index: i,
                value: heads[i],
            });
        }
        if !(cond[i] > 0.0) {
            violations.push(SampleViolation::NonPositiveConductivity {
                index: i,
                value: cond[i],
            });
        }
        if !(0.0..=1.0).contains(&sample.target[i]) {
            violations.push(SampleViolation::TargetOutOfRange {
                index: i,
                value: sample.target[i],
            });
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario_64_with_wells() -> ScenarioSpec {
        ScenarioSpec::new(
            GridSpec::default(),
            1.0,
            vec![
                Well {
                    row: 10,
                    col: 20,
                    head: 0.6,
                },
                Well {
                    row: 30,
                    col: 40,
                    head: 0.9,
                },
                Well {
                    row: 50,
                    col: 5,
                    head: 0.75,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn ring_mask_4x4_no_wells() {
        let s = ScenarioSpec::new(GridSpec::square(4).unwrap(), 1.0, vec![]).unwrap();
        let mask = build_fixed_mask(&s).unwrap();
        assert_eq!(mask.n_fixed(), 12);
        assert_eq!(mask.flags.iter().filter(|&&f| !f).count(), 4);
    }

    #[test]
    fn ring_mask_64x64_three_wells() {
        let mask = build_fixed_mask(&scenario_64_with_wells()).unwrap();
        assert_eq!(mask.n_fixed(), 252 + 3);
    }

    #[test]
    fn well_on_boundary_rejected() {
        let err = ScenarioSpec::new(
            GridSpec::default(),
            1.0,
            vec![Well {
                row: 0,
                col: 5,
                head: 0.7,
            }],
        )
        .unwrap_err();
        assert!(err.to_string().contains("well on boundary"), "{err}");
    }

    #[test]
    fn duplicate_well_rejected() {
        let w = Well {
            row: 3,
            col: 3,
            head: 0.8,
        };
        let err = ScenarioSpec::new(GridSpec::default(), 1.0, vec![w, w]).unwrap_err();
        assert!(err.to_string().contains("duplicate well"), "{err}");
    }

    #[test]
    fn tiny_grid_rejected() {
        assert!(GridSpec::new(3, 64).is_err());
        assert!(GridSpec::new(64, 3).is_err());
        assert!(GridSpec::new(4, 4).is_ok());
    }

    #[test]
    fn fixed_heads_layout() {
        let s = scenario_64_with_wells();
        let heads = s.fixed_heads();
        let g = s.grid;
        assert_eq!(heads[g.index(0, 0)], 1.0);
        assert_eq!(heads[g.index(10, 20)], 0.6);
        assert_eq!(heads[g.index(10, 21)], 0.0);
    }

    fn valid_sample() -> Sample {
        let s = ScenarioSpec::new(
            GridSpec::square(4).unwrap(),
            1.0,
            vec![Well {
                row: 1,
                col: 2,
                head: 0.5,
            }],
        )
        .unwrap();
        let mask = build_fixed_mask(&s).unwrap();
        let heads = s.fixed_heads();
        let n = s.grid.n_cells();
        let mut input = vec![0.0f32; 3 * n];
        for i in 0..n {
            input[CH_HEAD * n + i] = heads[i] as f32;
            input[CH_MASK * n + i] = if mask.flags[i] { 1.0 } else { 0.0 };
            input[CH_CONDUCTIVITY * n + i] = 0.55;
        }
        Sample {
            grid: s.grid,
            input,
            target: vec![1.0; n],
        }
    }

    #[test]
    fn well_formed_sample_validates() {
        assert!(validate_sample(&valid_sample()).is_empty());
    }

    #[test]
    fn head_at_free_cell_reported() {
        let mut s = valid_sample();
        let n = s.grid.n_cells();
        // (2, 2) is free in the 4x4 scenario above
        let free = s.grid.index(2, 2);
        assert_eq!(s.input[CH_MASK * n + free], 0.0);
        s.input[CH_HEAD * n + free] = 0.7;
        let violations = validate_sample(&s);
        assert!(violations
            .iter()
            .any(|v| matches!(v, SampleViolation::HeadOutsideMask { index, .. } if *index == free)));
    }

    #[test]
    fn target_out_of_range_reported() {
        let mut s = valid_sample();
        s.target[5] = 1.2;
        let violations = validate_sample(&s);
        assert!(violations
            .iter()
            .any(|v| matches!(v, SampleViolation::TargetOutOfRange { index: 5, .. })));
    }

    #[test]
    fn mask_cardinality_formula() {
        // |fixed| = 2H + 2W - 4 + |wells| across a few grid sizes and well counts
        for (h, w, wells) in [(4usize, 4usize, 0usize), (8, 12, 2), (16, 16, 3), (5, 9, 1)] {
            let grid = GridSpec::new(h, w).unwrap();
            let wells: Vec<Well> = (0..wells)
                .map(|i| Well {
                    row: 1 + i,
                    col: 1 + i,
                    head: 0.5,
                })
                .collect();
            let n_wells = wells.len();
            let s = ScenarioSpec::new(grid, 1.0, wells).unwrap();
            let mask = build_fixed_mask(&s).unwrap();
            assert_eq!(mask.n_fixed(), 2 * h + 2 * w - 4 + n_wells);
        }
    }
}
