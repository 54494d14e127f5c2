use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::channel_markov::{ChannelState, TraceDataset};
use crate::error::{Error, Result};

/// Categories of every column, in one-hot order.
pub const CATEGORIES: [ChannelState; 2] = [ChannelState::Los, ChannelState::Nlos];

/// One-hot encoding of link-state tables: each column becomes a block of
/// two indicators `[LOS, NLOS]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEncoding {
    pub angles: Vec<u32>,
}

impl TableEncoding {
    pub const GROUP: usize = CATEGORIES.len();

    pub fn new(angles: Vec<u32>) -> Self {
        TableEncoding { angles }
    }

    pub fn n_columns(&self) -> usize {
        self.angles.len()
    }

    pub fn width(&self) -> usize {
        Self::GROUP * self.angles.len()
    }

    fn check(&self, data: &TraceDataset) -> Result<()> {
        if data.angles() != self.angles.as_slice() {
            return Err(Error::ColumnMismatch {
                real: format!("{:?}", self.angles),
                synthetic: format!("{:?}", data.angles()),
            });
        }
        Ok(())
    }

    /// One-hot rows for the given row indices.
    pub fn encode_rows(&self, data: &TraceDataset, rows: &[usize]) -> Result<Array2<f64>> {
        self.check(data)?;
        let mut out = Array2::zeros((rows.len(), self.width()));
        for (i, &r) in rows.iter().enumerate() {
            for c in 0..self.n_columns() {
                out[[i, Self::GROUP * c + data.cell(r, c).category()]] = 1.0;
            }
        }
        Ok(out)
    }

    pub fn encode(&self, data: &TraceDataset) -> Result<Array2<f64>> {
        let rows: Vec<usize> = (0..data.rows()).collect();
        self.encode_rows(data, &rows)
    }

    /// Pick the largest entry of every group, row by row.
    pub fn decode(&self, scores: &Array2<f64>) -> Result<TraceDataset> {
        if scores.ncols() != self.width() {
            return Err(Error::ShapeMismatch {
                context: "TableEncoding::decode",
                expected: format!("{} columns", self.width()),
                actual: format!("{} columns", scores.ncols()),
            });
        }
        let mut columns = vec![Vec::with_capacity(scores.nrows()); self.n_columns()];
        for row in scores.rows() {
            for (c, col) in columns.iter_mut().enumerate() {
                let start = Self::GROUP * c;
                let mut best = 0;
                for k in 1..Self::GROUP {
                    if row[start + k] > row[start + best] {
                        best = k;
                    }
                }
                col.push(CATEGORIES[best]);
            }
        }
        TraceDataset::new(self.angles.clone(), columns, scores.nrows())
    }

    /// Per-column category counts `[LOS, NLOS]`.
    pub fn category_counts(&self, data: &TraceDataset) -> Result<Vec<[u64; 2]>> {
        self.check(data)?;
        Ok(data
            .columns()
            .iter()
            .map(|col| {
                let mut counts = [0u64; 2];
                for s in col {
                    counts[s.category()] += 1;
                }
                counts
            })
            .collect())
    }
}
