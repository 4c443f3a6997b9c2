use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One LSMC draw: initial forwards, payoff realisation and pathwise gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub x: Vec<f64>,
    pub y: f64,
    pub dydx: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset is empty")]
    Empty,
    #[error("row {row}: expected {expected} inputs and gradients, got {x} and {dydx}")]
    Ragged {
        row: usize,
        expected: usize,
        x: usize,
        dydx: usize,
    },
    #[error("row {row}: non-finite value")]
    NonFinite { row: usize },
    #[error("bad header: {0}")]
    Header(String),
    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rectangular collection of samples sharing one input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    samples: Vec<TrainingSample>,
}

impl Dataset {
    pub fn new(samples: Vec<TrainingSample>) -> Result<Self, DatasetError> {
        let dim = samples.first().ok_or(DatasetError::Empty)?.x.len();
        for (row, s) in samples.iter().enumerate() {
            if s.x.len() != dim || s.dydx.len() != dim {
                return Err(DatasetError::Ragged {
                    row,
                    expected: dim,
                    x: s.x.len(),
                    dydx: s.dydx.len(),
                });
            }
            let finite = s.y.is_finite() && s.x.iter().chain(&s.dydx).all(|v| v.is_finite());
            if !finite {
                return Err(DatasetError::NonFinite { row });
            }
        }
        Ok(Dataset { dim, samples })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[TrainingSample] {
        &self.samples
    }

    pub fn xs(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.x.clone()).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub fn header(dim: usize) -> Vec<String> {
        let mut h: Vec<String> = (0..dim).map(|i| format!("x_{i}")).collect();
        h.push("y".into());
        h.extend((0..dim).map(|i| format!("dydx_{i}")));
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::header(self.dim))?;
        let mut row = Vec::with_capacity(2 * self.dim + 1);
        for s in &self.samples {
            row.clear();
            row.extend(s.x.iter().map(fmt));
            row.push(fmt(&s.y));
            row.extend(s.dydx.iter().map(fmt));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, DatasetError> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header.len() % 2 == 0 {
            return Err(DatasetError::Header(format!("{} columns", header.len())));
        }
        let dim = header.len() / 2;
        if header != Self::header(dim) {
            return Err(DatasetError::Header(header.join(",")));
        }
        let mut samples = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| DatasetError::Parse {
                    row,
                    msg: e.to_string(),
                })?;
            samples.push(TrainingSample {
                x: vals[..dim].to_vec(),
                y: vals[dim],
                dydx: vals[dim + 1..].to_vec(),
            });
        }
        Self::new(samples)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

// 17 significant digits: enough to round-trip any f64.
fn fmt(v: &f64) -> String {
    format!("{v:.16e}")
}
