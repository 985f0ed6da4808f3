//! Sampling estimators of the failure probability and failure samples.

mod mc;
mod resample;
mod subset;

pub use mc::{crude_mc, McResult, BATCH_SIZE};
pub use resample::resample_weighted;
pub use subset::{subset_simulation, SubsetLevel, SubsetOptions, SubsetResult};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::table::Table;

/// Generator for substream `stream` of `seed`. Streams never overlap, so
/// work split across threads draws the same numbers as a sequential run.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Row-major matrix of samples, one row per point.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SampleMatrix {
    ncols: usize,
    data: Vec<f64>,
}

impl SampleMatrix {
    pub fn new(ncols: usize) -> Self {
        SampleMatrix { ncols, data: Vec::new() }
    }

    pub fn from_rows(ncols: usize, data: Vec<f64>) -> Self {
        assert!(ncols > 0 && data.len() % ncols == 0, "data length must be a multiple of ncols");
        SampleMatrix { ncols, data }
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.ncols);
        self.data.extend_from_slice(row);
    }

    pub fn nrows(&self) -> usize {
        if self.ncols == 0 {
            0
        } else {
            self.data.len() / self.ncols
        }
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.ncols..(k + 1) * self.ncols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.ncols.max(1))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// CSV with `names` as header.
    pub fn to_table(&self, names: &[String]) -> Table {
        let mut t = Table::new(names.iter().cloned());
        for r in self.rows() {
            t.push(r.iter().map(|&v| v.into()).collect());
        }
        t
    }
}
