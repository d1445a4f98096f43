//! Labelled pseudo-spectrum datasets.
//!
//! Each record is generated from its own seed, `mix_seed(base_seed, index)`,
//! so records can be produced in any order or in parallel.
//!
//! Dataset files are JSON Lines, one record per line:
//!
//! ```json
//! {"index":0,"doas_deg":[-4.0,3.0],"snr_db":[7.0,7.0],"seed":123,"features":[...],"label":[0,1,...]}
//! ```
//!
//! `features` holds `W` floats (normalized pseudo-spectrum, shortest
//! round-trip decimal form) and `label` holds `W` integers in `{0, 1}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_model::{simulate_snapshots, CoprimeGeometry, SourceScenario, DEFAULT_UNIT_SPACING};
use crate::coarray::{AngleGrid, FeatureExtractor};
use crate::error::{Error, Result};
use crate::rng::{mix_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub m: usize,
    pub n: usize,
    pub unit_spacing: f64,
    pub grid_min_deg: f64,
    pub grid_max_deg: f64,
    pub grid_step_deg: f64,
    pub num_sources: usize,
    pub snapshots: usize,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub snr_step_db: f64,
    pub count: usize,
    pub base_seed: u64,
    pub min_separation_deg: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            m: 3,
            n: 5,
            unit_spacing: DEFAULT_UNIT_SPACING,
            grid_min_deg: -15.0,
            grid_max_deg: 15.0,
            grid_step_deg: 1.0,
            num_sources: 2,
            snapshots: 256,
            snr_min_db: -10.0,
            snr_max_db: 10.0,
            snr_step_db: 1.0,
            count: 500,
            base_seed: 0,
            min_separation_deg: 2.0,
        }
    }
}

impl DatasetConfig {
    pub fn geometry(&self) -> Result<CoprimeGeometry> {
        CoprimeGeometry::new(self.m, self.n, self.unit_spacing)
    }

    pub fn grid(&self) -> Result<AngleGrid> {
        AngleGrid::new(self.grid_min_deg, self.grid_max_deg, self.grid_step_deg)
    }

    /// Selectable SNR values in dB.
    pub fn snr_levels(&self) -> Vec<f64> {
        let steps = ((self.snr_max_db - self.snr_min_db) / self.snr_step_db + 1e-9).floor() as usize;
        (0..=steps)
            .map(|i| self.snr_min_db + i as f64 * self.snr_step_db)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.num_sources == 0 {
            return bad("num_sources must be at least 1");
        }
        if self.count == 0 {
            return bad("count must be at least 1");
        }
        if self.snapshots == 0 {
            return bad("snapshots must be at least 1");
        }
        if !(self.snr_step_db > 0.0) || self.snr_max_db < self.snr_min_db {
            return bad("SNR range must satisfy min <= max with a positive step");
        }
        let grid = self.grid()?;
        if self.min_separation_deg < grid.step_deg() - 1e-9 {
            return bad("min_separation_deg must be at least one grid step");
        }
        if self.num_sources > grid.len() {
            return bad("more sources than grid bins");
        }
        self.geometry()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub index: usize,
    pub doas_deg: Vec<f64>,
    pub snr_db: Vec<f64>,
    pub seed: u64,
    pub features: Vec<f64>,
    pub label: Vec<u8>,
}

impl Record {
    pub fn label_f64(&self) -> Vec<f64> {
        self.label.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Multi-hot vector with a one at the nearest grid bin of every DOA.
pub fn label_from_doas(doas_deg: &[f64], grid: &AngleGrid) -> Result<Vec<u8>> {
    let mut label = vec![0u8; grid.len()];
    let mut owner: Vec<Option<f64>> = vec![None; grid.len()];
    for &doa in doas_deg {
        let idx = grid.nearest_index(doa)?;
        if let Some(prev) = owner[idx] {
            return Err(Error::DuplicateBin(prev, doa));
        }
        owner[idx] = Some(doa);
        label[idx] = 1;
    }
    Ok(label)
}

/// Reusable generator holding the precomputed feature extractor.
#[derive(Debug, Clone)]
pub struct DatasetGenerator {
    config: DatasetConfig,
    extractor: FeatureExtractor,
    snr_levels: Vec<f64>,
}

const MAX_DRAW_ATTEMPTS: usize = 10_000;

impl DatasetGenerator {
    pub fn new(config: DatasetConfig) -> Result<Self> {
        config.validate()?;
        let extractor = FeatureExtractor::new(config.geometry()?, config.grid()?);
        let snr_levels = config.snr_levels();
        Ok(Self {
            config,
            extractor,
            snr_levels,
        })
    }

    pub fn config(&self) -> &DatasetConfig {
        &self.config
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn generate(&self, index: usize) -> Result<Record> {
        let seed = mix_seed(self.config.base_seed, index as u64);
        let mut rng = rng_from_seed(seed);
        let grid = self.extractor.grid();
        let k = self.config.num_sources;
        let min_sep = self.config.min_separation_deg - 1e-9;

        let mut bins: Vec<usize> = Vec::with_capacity(k);
        let mut attempts = 0;
        while bins.len() < k {
            attempts += 1;
            if attempts > MAX_DRAW_ATTEMPTS {
                return Err(Error::InvalidArgument(format!(
                    "cannot place {k} sources {} deg apart on the grid",
                    self.config.min_separation_deg
                )));
            }
            let candidate = rng.random_range(0..grid.len());
            let ok = bins
                .iter()
                .all(|&b| (grid.angles()[b] - grid.angles()[candidate]).abs() >= min_sep);
            if ok {
                bins.push(candidate);
            } else {
                bins.clear();
            }
        }
        bins.sort_unstable();
        let doas: Vec<f64> = bins.iter().map(|&b| grid.angles()[b]).collect();
        let snr = self.snr_levels[rng.random_range(0..self.snr_levels.len())];
        let snr_db = vec![snr; k];

        let scenario = SourceScenario::from_snrs_db(doas.clone(), &snr_db)?;
        let snapshots = simulate_snapshots(
            self.extractor.geometry(),
            &scenario,
            self.config.snapshots,
            mix_seed(seed, 1),
        )?;
        let features = self.extractor.features(&snapshots)?.into_values();
        let label = label_from_doas(&doas, grid)?;
        Ok(Record {
            index,
            doas_deg: doas,
            snr_db,
            seed,
            features,
            label,
        })
    }

    /// Records `0..count`, generated in parallel, returned in index order.
    pub fn generate_all(&self) -> Result<Vec<Record>> {
        (0..self.config.count)
            .into_par_iter()
            .map(|i| self.generate(i))
            .collect()
    }
}

pub fn generate_record(config: &DatasetConfig, index: usize) -> Result<Record> {
    DatasetGenerator::new(config.clone())?.generate(index)
}

pub fn generate_dataset(config: &DatasetConfig) -> Result<Vec<Record>> {
    DatasetGenerator::new(config.clone())?.generate_all()
}

pub fn write_records<W: Write>(records: &[Record], out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    out.flush().map_err(|e| Error::io("<writer>", e))
}

pub fn write_dataset(records: &[Record], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(records, file).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses JSON Lines records, checking that every record has the same
/// feature width, a matching label, and values in range.
pub fn read_records<R: BufRead>(input: R) -> Result<Vec<Record>> {
    let mut records: Vec<Record> = Vec::new();
    let mut width = None;
    for (pos, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let violation = |message: String| Error::SchemaViolation { index: pos, message };
        let record: Record = serde_json::from_str(&line).map_err(|e| violation(e.to_string()))?;
        let w = *width.get_or_insert(record.features.len());
        if record.features.len() != w {
            return Err(violation(format!(
                "feature length {} differs from {w}",
                record.features.len()
            )));
        }
        if record.label.len() != w {
            return Err(violation(format!(
                "label length {} differs from {w}",
                record.label.len()
            )));
        }
        if record.label.iter().any(|&v| v > 1) {
            return Err(violation("label entries must be 0 or 1".into()));
        }
        if record.features.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(violation("features must lie in [0, 1]".into()));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Record>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(BufReader::new(file))
}
