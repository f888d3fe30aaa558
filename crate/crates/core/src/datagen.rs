//! Dataset generation and persistence.
//!
//! A dataset is a pure function of its [`DatasetConfig`]: every sample `i`
//! derives its own RNG seed from the dataset seed via a splitmix64 mix, so
//! generation order and worker count cannot affect the result. Samples are
//! persisted in a little-endian binary format (magic `GWDS`) with a sidecar
//! `key = value` manifest describing the full generating configuration.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fdsolver::{self, DEFAULT_TOL};
use crate::grf::{default_class_values, quantize_field, GrfSampler, DEFAULT_CORRELATION_LENGTH};
use crate::grid::{
    build_fixed_mask, validate_sample, ConductivityField, GridSpec, HeadField, Sample,
    ScenarioSpec, Well, CH_CONDUCTIVITY, CH_HEAD, CH_MASK, IN_CHANNELS, OUT_CHANNELS,
    WELL_HEAD_MAX, WELL_HEAD_MIN,
};

pub const FORMAT_MAGIC: &[u8; 4] = b"GWDS";
pub const FORMAT_VERSION: u32 = 1;
pub const GENERATOR_VERSION: u32 = 1;

/// Everything needed to regenerate a dataset bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub grid: GridSpec,
    pub n_samples: usize,
    pub seed: u64,
    /// Inclusive range of wells per scenario.
    pub well_count_range: (usize, usize),
    /// Half-open range `[lo, hi)` of imposed well heads.
    pub well_head_range: (f64, f64),
    pub boundary_head: f64,
    pub correlation_length: f64,
    pub class_values: Vec<f64>,
    pub solver_tol: f64,
}

impl DatasetConfig {
    pub fn new(grid: GridSpec, n_samples: usize, seed: u64) -> Self {
        DatasetConfig {
            grid,
            n_samples,
            seed,
            well_count_range: (1, 3),
            well_head_range: (WELL_HEAD_MIN, WELL_HEAD_MAX),
            boundary_head: 1.0,
            correlation_length: DEFAULT_CORRELATION_LENGTH,
            class_values: default_class_values(),
            solver_tol: DEFAULT_TOL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("dataset config", "n_samples must be > 0"));
        }
        let (lo, hi) = self.well_count_range;
        if lo > hi {
            return Err(Error::invalid(
                "dataset config",
                format!("empty well count range {lo}..{hi}"),
            ));
        }
        let interior = (self.grid.height - 2) * (self.grid.width - 2);
        if hi > interior {
            return Err(Error::invalid(
                "dataset config",
                format!("{hi} wells cannot fit {interior} interior cells"),
            ));
        }
        let (h_lo, h_hi) = self.well_head_range;
        if !(h_lo < h_hi && h_lo > 0.0 && h_hi <= self.boundary_head) {
            return Err(Error::invalid(
                "dataset config",
                format!(
                    "well head range [{h_lo}, {h_hi}) must be non-empty and within (0, boundary {}]",
                    self.boundary_head
                ),
            ));
        }
        if !(self.boundary_head > 0.0 && self.boundary_head <= 1.0) {
            return Err(Error::invalid(
                "dataset config",
                format!("boundary head {} outside (0, 1]", self.boundary_head),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub samples: Vec<Sample>,
}

/// splitmix64 of `seed ⊕ φ·index`: a cheap, well-mixed per-sample seed
/// derivation making generation order-independent.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draw one scenario: well count uniform over the configured range, locations
/// uniform without replacement over interior cells, heads uniform over
/// `[lo, hi)`.
pub fn sample_scenario(config: &DatasetConfig, rng: &mut ChaCha8Rng) -> ScenarioSpec {
    let grid = config.grid;
    let (lo, hi) = config.well_count_range;
    let n_wells = if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    };
    let mut wells: Vec<Well> = Vec::with_capacity(n_wells);
    while wells.len() < n_wells {
        let row = rng.random_range(1..grid.height - 1);
        let col = rng.random_range(1..grid.width - 1);
        if wells.iter().any(|w| w.row == row && w.col == col) {
            continue;
        }
        let head = rng.random_range(config.well_head_range.0..config.well_head_range.1);
        wells.push(Well { row, col, head });
    }
    ScenarioSpec {
        grid,
        boundary_head: config.boundary_head,
        wells,
    }
}

/// Pack a solved scenario into the 3-channel input / 1-channel target layout.
/// Heads already live in `[0, boundary]`; solver roundoff up to 1e-9 outside
/// the fixed-head envelope is clamped, anything worse is an error.
pub fn encode_sample(
    scenario: &ScenarioSpec,
    k: &ConductivityField,
    head: &HeadField,
) -> Result<Sample> {
    let grid = scenario.grid;
    let mask = build_fixed_mask(scenario)?;
    let fixed_heads = scenario.fixed_heads();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (cell, &fixed) in mask.flags.iter().enumerate() {
        if fixed {
            lo = lo.min(fixed_heads[cell]);
            hi = hi.max(fixed_heads[cell]);
        }
    }
    let n = grid.n_cells();
    let mut input = vec![0.0f32; IN_CHANNELS * n];
    let mut target = vec![0.0f32; OUT_CHANNELS * n];
    for cell in 0..n {
        if mask.flags[cell] {
            input[CH_HEAD * n + cell] = fixed_heads[cell] as f32;
            input[CH_MASK * n + cell] = 1.0;
        }
        input[CH_CONDUCTIVITY * n + cell] = k.values[cell] as f32;
        let h = head.values[cell];
        if h < lo - 1e-9 || h > hi + 1e-9 || !(0.0..=1.0 + 1e-9).contains(&h) {
            return Err(Error::invalid(
                "encode_sample",
                format!("head {h} at cell {cell} outside [{lo}, {hi}]"),
            ));
        }
        target[cell] = h.clamp(lo, hi) as f32;
    }
    Ok(Sample {
        grid,
        input,
        target,
    })
}

/// Generate sample `index` of the dataset: scenario and conductivity drawn
/// from the derived seed, solved, and encoded. Pure in `(config, index)`.
pub fn generate_sample(
    config: &DatasetConfig,
    sampler: &GrfSampler,
    index: usize,
) -> Result<Sample> {
    let wrap = |source: Error| Error::Generation {
        index,
        source: Box::new(source),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, index as u64));
    let scenario = sample_scenario(config, &mut rng);
    let grf_seed: u64 = rng.random();
    let field = sampler.sample(grf_seed);
    let k = quantize_field(config.grid, &field, &config.class_values).map_err(wrap)?;
    let head = fdsolver::solve_steady_state(&k, &scenario, config.solver_tol).map_err(wrap)?;
    encode_sample(&scenario, &k, &head).map_err(wrap)
}

/// Rebuild the solver-side problem (conductivity field and scenario) of
/// sample `index` without solving it — the same draws `generate_sample`
/// makes, exposed for benchmarking the solver against the surrogate on
/// identical inputs.
pub fn regenerate_problem(
    config: &DatasetConfig,
    index: usize,
) -> Result<(ConductivityField, ScenarioSpec)> {
    let sampler = GrfSampler::new(config.grid, config.correlation_length)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, index as u64));
    let scenario = sample_scenario(config, &mut rng);
    let grf_seed: u64 = rng.random();
    let field = sampler.sample(grf_seed);
    let k = quantize_field(config.grid, &field, &config.class_values)?;
    Ok((k, scenario))
}

/// Generate the full dataset. Samples are independent, so generation runs in
/// parallel; per-index seeds and index-ordered collection keep the output
/// identical for any worker count.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let sampler = GrfSampler::new(config.grid, config.correlation_length)?;
    let samples: Vec<Sample> = (0..config.n_samples)
        .into_par_iter()
        .map(|i| generate_sample(config, &sampler, i))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        config: config.clone(),
        samples,
    })
}

fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest")
}

fn format_f64(v: f64) -> String {
    // `{}` prints the shortest string that parses back to the same f64.
    format!("{v}")
}

/// Render the sidecar manifest text.
pub fn manifest_string(config: &DatasetConfig) -> String {
    let classes: Vec<String> = config.class_values.iter().map(|v| format_f64(*v)).collect();
    format!(
        "generator_version = {}\n\
         seed = {}\n\
         grid = {}x{}\n\
         n_samples = {}\n\
         well_count_range = {}..{}\n\
         well_head_range = {}..{}\n\
         boundary_head = {}\n\
         grf.correlation_length = {}\n\
         grf.class_values = {}\n\
         solver_tol = {}\n",
        GENERATOR_VERSION,
        config.seed,
        config.grid.height,
        config.grid.width,
        config.n_samples,
        config.well_count_range.0,
        config.well_count_range.1,
        format_f64(config.well_head_range.0),
        format_f64(config.well_head_range.1),
        format_f64(config.boundary_head),
        format_f64(config.correlation_length),
        classes.join(", "),
        format_f64(config.solver_tol),
    )
}

/// Parse a manifest back into a config.
pub fn parse_manifest(text: &str) -> Result<DatasetConfig> {
    let bad = |key: &str, detail: String| {
        Error::invalid("manifest", format!("key `{key}`: {detail}"))
    };
    let mut pairs = std::collections::HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid("manifest", format!("missing `=` in line `{line}`")))?;
        pairs.insert(key.trim().to_string(), value.trim().to_string());
    }
    let get = |key: &str| {
        pairs
            .get(key)
            .ok_or_else(|| Error::invalid("manifest", format!("missing key `{key}`")))
    };
    let parse_u64 = |key: &str| -> Result<u64> {
        get(key)?
            .parse()
            .map_err(|e| bad(key, format!("{e}")))
    };
    let parse_f64 = |key: &str| -> Result<f64> {
        get(key)?
            .parse()
            .map_err(|e| bad(key, format!("{e}")))
    };

    let version = parse_u64("generator_version")?;
    if version != GENERATOR_VERSION as u64 {
        return Err(Error::invalid(
            "manifest",
            format!("generator_version {version} unsupported (expected {GENERATOR_VERSION})"),
        ));
    }
    let grid_text = get("grid")?;
    let (h, w) = grid_text
        .split_once('x')
        .ok_or_else(|| bad("grid", format!("expected HxW, got `{grid_text}`")))?;
    let grid = GridSpec::new(
        h.trim().parse().map_err(|e| bad("grid", format!("{e}")))?,
        w.trim().parse().map_err(|e| bad("grid", format!("{e}")))?,
    )?;
    let parse_range_u = |key: &str| -> Result<(usize, usize)> {
        let text = get(key)?;
        let (a, b) = text
            .split_once("..")
            .ok_or_else(|| bad(key, format!("expected lo..hi, got `{text}`")))?;
        Ok((
            a.trim().parse().map_err(|e| bad(key, format!("{e}")))?,
            b.trim().parse().map_err(|e| bad(key, format!("{e}")))?,
        ))
    };
    let parse_range_f = |key: &str| -> Result<(f64, f64)> {
        let text = get(key)?;
        let (a, b) = text
            .split_once("..")
            .ok_or_else(|| bad(key, format!("expected lo..hi, got `{text}`")))?;
        Ok((
            a.trim().parse().map_err(|e| bad(key, format!("{e}")))?,
            b.trim().parse().map_err(|e| bad(key, format!("{e}")))?,
        ))
    };
    let class_values: Vec<f64> = get("grf.class_values")?
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|e| bad("grf.class_values", format!("{e}")))
        })
        .collect::<Result<_>>()?;

    Ok(DatasetConfig {
        grid,
        n_samples: parse_u64("n_samples")? as usize,
        seed: parse_u64("seed")?,
        well_count_range: parse_range_u("well_count_range")?,
        well_head_range: parse_range_f("well_head_range")?,
        boundary_head: parse_f64("boundary_head")?,
        correlation_length: parse_f64("grf.correlation_length")?,
        class_values,
        solver_tol: parse_f64("solver_tol")?,
    })
}

/// Write the binary data file and its sidecar manifest.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let grid = dataset.config.grid;
    let n = grid.n_cells();
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    out.write_all(FORMAT_MAGIC)?;
    for v in [
        FORMAT_VERSION,
        grid.height as u32,
        grid.width as u32,
        dataset.samples.len() as u32,
        IN_CHANNELS as u32,
        OUT_CHANNELS as u32,
    ] {
        out.write_all(&v.to_le_bytes())?;
    }
    for sample in &dataset.samples {
        debug_assert_eq!(sample.input.len(), IN_CHANNELS * n);
        debug_assert_eq!(sample.target.len(), n);
        for v in sample.input.iter().chain(sample.target.iter()) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    fs::write(manifest_path(path), manifest_string(&dataset.config))?;
    Ok(())
}

const HEADER_LEN: u64 = 4 + 6 * 4;

/// Read a dataset and its manifest back; inverse of [`write_dataset`].
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let fail = |offset: u64, reason: String| Error::Format {
        path: path.display().to_string(),
        offset,
        reason,
    };
    let mut file = fs::File::open(path)?;
    let mut header = [0u8; HEADER_LEN as usize];
    file.read_exact(&mut header)
        .map_err(|_| fail(0, "file shorter than header".into()))?;
    if &header[0..4] != FORMAT_MAGIC {
        return Err(fail(0, format!("bad magic {:?}", &header[0..4])));
    }
    let word = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != FORMAT_VERSION {
        return Err(fail(
            4,
            format!("unsupported version {version} (expected {FORMAT_VERSION})"),
        ));
    }
    let (height, width) = (word(1) as usize, word(2) as usize);
    let n_samples = word(3) as usize;
    if word(4) as usize != IN_CHANNELS {
        return Err(fail(20, format!("expected {IN_CHANNELS} input channels, got {}", word(4))));
    }
    if word(5) as usize != OUT_CHANNELS {
        return Err(fail(24, format!("expected {OUT_CHANNELS} output channel, got {}", word(5))));
    }
    let grid = GridSpec::new(height, width)?;
    let n = grid.n_cells();
    let sample_len = (IN_CHANNELS + OUT_CHANNELS) * n;
    let mut payload = vec![0u8; 4 * sample_len];
    let mut samples = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        file.read_exact(&mut payload).map_err(|_| {
            fail(
                HEADER_LEN + (i as u64) * 4 * sample_len as u64,
                format!("truncated at sample {i} of {n_samples}"),
            )
        })?;
        let floats: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let sample = Sample {
            grid,
            input: floats[..IN_CHANNELS * n].to_vec(),
            target: floats[IN_CHANNELS * n..].to_vec(),
        };
        let violations = validate_sample(&sample);
        if !violations.is_empty() {
            return Err(fail(
                HEADER_LEN + (i as u64) * 4 * sample_len as u64,
                format!("sample {i} invalid: {}", violations[0]),
            ));
        }
        samples.push(sample);
    }

    let manifest = fs::read_to_string(manifest_path(path)).map_err(|e| {
        Error::invalid(
            "read_dataset",
            format!("missing manifest {}: {e}", manifest_path(path).display()),
        )
    })?;
    let config = parse_manifest(&manifest)?;
    Ok(Dataset { config, samples })
}
