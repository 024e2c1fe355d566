//! Cluster-distance quantile detector.
//!
//! Train features are clustered; every cluster keeps the sorted distances of
//! its members to the center. A test embedding gets the fraction of its
//! cluster's train distances that lie strictly below its own distance, and is
//! flagged unknown when that fraction exceeds `alpha`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Cursor;
use crate::numerics::{kmeans_assign, kmeans_fit_restarts, KMeansModel, Matrix, RngState, DEFAULT_MAX_ITER};

pub const DEFAULT_TAIL_MASS: f64 = 0.05;
pub const DETECTOR_RESTARTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDetector {
    pub kmeans: KMeansModel,
    /// Ascending train distances per cluster.
    pub tables: Vec<Vec<f64>>,
    /// Flag threshold on the score.
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub score: f64,
    pub cluster: usize,
    /// 1 for unknown.
    pub label: u8,
}

pub fn fit_detector(train: &Matrix, c: usize, rng: &mut RngState) -> Result<ClusterDetector> {
    let kmeans = kmeans_fit_restarts(train, c, DETECTOR_RESTARTS, rng, DEFAULT_MAX_ITER)?;
    ClusterDetector::from_kmeans(kmeans, train)
}

impl ClusterDetector {
    pub fn from_kmeans(kmeans: KMeansModel, train: &Matrix) -> Result<Self> {
        let mut tables = vec![Vec::new(); kmeans.n_clusters()];
        for row in train.iter_rows() {
            let (c, d) = kmeans_assign(&kmeans, row)?;
            tables[c].push(d);
        }
        for t in &mut tables {
            t.sort_by(f64::total_cmp);
        }
        Ok(ClusterDetector {
            kmeans,
            tables,
            alpha: 1.0 - DEFAULT_TAIL_MASS,
        })
    }

    /// Flags the right `tail` fraction of the train distribution.
    pub fn with_tail_mass(mut self, tail: f64) -> Result<Self> {
        if !(tail > 0.0 && tail < 1.0) {
            return Err(Error::validation(format!("tail mass {tail} outside (0, 1)")));
        }
        self.alpha = 1.0 - tail;
        Ok(self)
    }

    pub fn score_sample(&self, h: &[f64]) -> Result<Decision> {
        let (cluster, d) = kmeans_assign(&self.kmeans, h)?;
        let table = &self.tables[cluster];
        if table.is_empty() {
            return Err(Error::EmptyCluster { cluster });
        }
        let below = table.partition_point(|&t| t < d);
        let score = below as f64 / table.len() as f64;
        Ok(Decision {
            score,
            cluster,
            label: u8::from(score > self.alpha),
        })
    }

    pub fn classify_batch(&self, features: &Matrix) -> Result<(Vec<Decision>, Vec<f64>)> {
        let decisions = features
            .iter_rows()
            .take(features.rows())
            .map(|h| self.score_sample(h))
            .collect::<Result<Vec<_>>>()?;
        let scores = decisions.iter().map(|d| d.score).collect();
        Ok((decisions, scores))
    }
}

const MAGIC: &[u8; 4] = b"UEDD";
const VERSION: u16 = 1;

/// `"UEDD" | u16 version | u32 length | JSON body`.
pub fn encode_detector(det: &ClusterDetector) -> Result<Vec<u8>> {
    let body = serde_json::to_vec(det)?;
    let mut out = Vec::with_capacity(10 + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn decode_detector(bytes: &[u8]) -> Result<ClusterDetector> {
    let mut c = Cursor::new(bytes);
    c.magic(MAGIC)?;
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported detector version {version}")));
    }
    let n = c.u32("body length")? as usize;
    let start = c.pos;
    let body = c.take(n, "body")?;
    c.finish()?;
    serde_json::from_slice(body).map_err(|e| Error::format(start as u64, format!("detector body: {e}")))
}

pub fn save_detector(path: &Path, det: &ClusterDetector) -> Result<()> {
    std::fs::File::create(path)?.write_all(&encode_detector(det)?)?;
    Ok(())
}

pub fn load_detector(path: &Path) -> Result<ClusterDetector> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_detector(&bytes)
}
