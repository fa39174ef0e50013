//! Experimental designs on the unit hypercube and the transform chain
//! independent uniform -> correlated uniform -> physical.

use std::fmt::Write as _;
use std::path::Path;

use rand::distr::Open01;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::uncertainty::{Marginal, UncertaintyError, VineSpec};

/// Stream used for the emulator training design.
pub const STREAM_TRAINING: u64 = 1;
/// Stream used for the Monte Carlo evaluation sample.
pub const STREAM_EVALUATION: u64 = 2;

/// ChaCha8 seeded from `seed`, positioned on `stream`. Each pipeline stage
/// draws from its own stream so designs never overlap.
pub fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    UniformIid,
    UniformCorrelated,
    Physical,
}

#[derive(Debug, thiserror::Error)]
pub enum SamplingError {
    #[error("expected a design in stage {expected:?}, found {found:?}")]
    Stage { expected: &'static str, found: Stage },
    #[error("design has {design} columns but {given} were supplied")]
    ColumnCount { design: usize, given: usize },
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// An n x p design stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    values: Vec<f64>,
    n: usize,
    p: usize,
    pub stage: Stage,
    pub seed: u64,
    pub column_labels: Vec<String>,
}

impl DesignMatrix {
    pub fn from_rows(rows: &[Vec<f64>], stage: Stage, seed: u64, column_labels: Vec<String>) -> Self {
        let p = column_labels.len();
        assert!(rows.iter().all(|r| r.len() == p), "row length must match label count");
        DesignMatrix { values: rows.concat(), n: rows.len(), p, stage, seed, column_labels }
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and p = 0 designs carry no data anyway
        self.values.chunks_exact(self.p.max(1)).take(self.n)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.values[i * self.p + j]).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.p + j]
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        assert_eq!(labels.len(), self.p);
        self.column_labels = labels;
        self
    }

    /// SHA-256 over the little-endian bytes of the values, row-major.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.column_labels.join(",");
        s.push('\n');
        for row in self.rows() {
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    s.push(',');
                }
                write!(s, "{v:.16e}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Sidecar metadata: stage, seed, shape, labels and a digest of the
    /// marginals used (if any).
    pub fn metadata(&self, marginals: Option<&[Marginal]>) -> DesignMetadata {
        DesignMetadata {
            stage: self.stage,
            seed: self.seed,
            n_rows: self.n,
            n_cols: self.p,
            column_labels: self.column_labels.clone(),
            values_sha256: self.digest(),
            marginals_sha256: marginals.map(|m| {
                let text = serde_json::to_string(m).expect("marginals serialize");
                hex::encode(Sha256::digest(text.as_bytes()))
            }),
        }
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str, marginals: Option<&[Marginal]>) -> Result<(), SamplingError> {
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        let meta = serde_json::to_string_pretty(&self.metadata(marginals)).expect("metadata serializes");
        std::fs::write(dir.join(format!("{stem}.json")), meta)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMetadata {
    pub stage: Stage,
    pub seed: u64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub column_labels: Vec<String>,
    pub values_sha256: String,
    pub marginals_sha256: Option<String>,
}

fn default_labels(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

/// Latin hypercube design drawn from `rng`: each column holds exactly one
/// point in every stratum [k/n, (k+1)/n), jittered uniformly inside it.
pub fn lhs_with_rng(n: usize, p: usize, seed: u64, rng: &mut impl Rng) -> DesignMatrix {
    let mut values = vec![0.0; n * p];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..p {
        perm.shuffle(rng);
        for (i, &k) in perm.iter().enumerate() {
            let jitter: f64 = rng.sample(Open01);
            values[i * p + j] = (k as f64 + jitter) / n as f64;
        }
    }
    DesignMatrix { values, n, p, stage: Stage::UniformIid, seed, column_labels: default_labels(p) }
}

/// Latin hypercube design on the training stream of `seed`.
pub fn lhs(n: usize, p: usize, seed: u64) -> DesignMatrix {
    lhs_with_rng(n, p, seed, &mut stage_rng(seed, STREAM_TRAINING))
}

/// Independent uniforms on the open unit hypercube.
pub fn mc_uniform_with_rng(n: usize, p: usize, seed: u64, rng: &mut impl Rng) -> DesignMatrix {
    let values = (0..n * p).map(|_| rng.sample(Open01)).collect();
    DesignMatrix { values, n, p, stage: Stage::UniformIid, seed, column_labels: default_labels(p) }
}

/// Independent uniforms on the evaluation stream of `seed`.
pub fn mc_uniform(n: usize, p: usize, seed: u64) -> DesignMatrix {
    mc_uniform_with_rng(n, p, seed, &mut stage_rng(seed, STREAM_EVALUATION))
}

/// Pushes every row through the vine's inverse Rosenblatt transform.
pub fn correlate(d: &DesignMatrix, vine: &VineSpec) -> Result<DesignMatrix, SamplingError> {
    if d.stage != Stage::UniformIid {
        return Err(SamplingError::Stage { expected: "uniform_iid", found: d.stage });
    }
    if d.p != vine.dim() {
        return Err(SamplingError::ColumnCount { design: d.p, given: vine.dim() });
    }
    let rows: Vec<Vec<f64>> = d
        .values
        .par_chunks_exact(d.p.max(1))
        .map(|w| vine.sample_inverse(w))
        .collect::<Result<_, _>>()?;
    Ok(DesignMatrix { values: rows.concat(), stage: Stage::UniformCorrelated, ..d.clone() })
}

/// Column-wise inverse-cdf transform into physical units.
pub fn to_physical(d: &DesignMatrix, marginals: &[Marginal]) -> Result<DesignMatrix, SamplingError> {
    if d.stage == Stage::Physical {
        return Err(SamplingError::Stage { expected: "uniform_iid or uniform_correlated", found: d.stage });
    }
    if marginals.len() != d.p {
        return Err(SamplingError::ColumnCount { design: d.p, given: marginals.len() });
    }
    for m in marginals {
        m.validate()?;
    }
    let mut values = Vec::with_capacity(d.values.len());
    for row in d.rows() {
        for (u, m) in row.iter().zip(marginals) {
            values.push(m.inv_cdf(*u)?);
        }
    }
    Ok(DesignMatrix { values, stage: Stage::Physical, ..d.clone() })
}
