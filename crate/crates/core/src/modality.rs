//! Input modalities: per-trace I/Q scaling and the constellation histogram.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TRACE_LEN: usize = 256;
pub const DEFAULT_GRID: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IQTrace {
    pub i: Vec<f64>,
    pub q: Vec<f64>,
    pub emitter_id: i32,
    pub day: u16,
}

impl IQTrace {
    pub fn new(i: Vec<f64>, q: Vec<f64>, emitter_id: i32, day: u16) -> Result<Self> {
        if i.len() != q.len() {
            return Err(Error::validation(format!(
                "I has {} samples, Q has {}",
                i.len(),
                q.len()
            )));
        }
        if i.is_empty() {
            return Err(Error::validation("trace must have at least one sample"));
        }
        if i.iter().chain(&q).any(|v| !v.is_finite()) {
            return Err(Error::validation("trace contains non-finite samples"));
        }
        Ok(IQTrace { i, q, emitter_id, day })
    }

    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.i.iter().chain(&self.q).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Channel-major `[I..., Q...]`, the `2 x N` raw input tensor.
    pub fn channels(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.len());
        v.extend_from_slice(&self.i);
        v.extend_from_slice(&self.q);
        v
    }

    /// Applies a time permutation: sample `k` of the result is sample `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> IQTrace {
        IQTrace {
            i: perm.iter().map(|&k| self.i[k]).collect(),
            q: perm.iter().map(|&k| self.q[k]).collect(),
            ..self.clone()
        }
    }
}

/// Divides both channels by the largest absolute sample of the trace.
pub fn normalize_iq(x: &IQTrace) -> Result<IQTrace> {
    let m = x.max_abs();
    if m == 0.0 {
        return Err(Error::Degenerate("all-zero trace cannot be normalized".into()));
    }
    if !m.is_finite() {
        return Err(Error::validation("trace contains non-finite samples"));
    }
    Ok(IQTrace {
        i: x.i.iter().map(|v| v / m).collect(),
        q: x.q.iter().map(|v| v / m).collect(),
        ..x.clone()
    })
}

/// `K x K` occupancy grid; `cells[i * K + j]` counts points whose I value
/// falls in column band `i` and Q value in band `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstellationGrid {
    pub k: usize,
    pub cells: Vec<f64>,
}

impl ConstellationGrid {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cells[i * self.k + j]
    }

    pub fn mass(&self) -> f64 {
        self.cells.iter().sum()
    }

    /// Cell values mapped by `2 K^2 v - 1` and clamped to [-1, 1], so that a
    /// cell holding the mass of a uniform spread maps to about 1 and an empty
    /// cell to -1.
    pub fn kan_scaled(&self) -> Vec<f64> {
        let s = 2.0 * (self.k * self.k) as f64;
        self.cells.iter().map(|v| (s * v - 1.0).clamp(-1.0, 1.0)).collect()
    }
}

/// Band index of a normalized value: half-open cells of width `1/K` on the
/// unit interval, with the top edge folded into the last cell.
#[inline]
pub fn cell_index(v: f64, k: usize) -> usize {
    let u = (v + 1.0) / 2.0;
    ((u * k as f64).floor() as usize).min(k - 1)
}

pub fn constellation_transform(x: &IQTrace, k: usize) -> Result<ConstellationGrid> {
    if k == 0 {
        return Err(Error::validation("grid size must be at least 1"));
    }
    if x.is_empty() {
        return Err(Error::validation("empty trace"));
    }
    if let Some(v) = x.i.iter().chain(&x.q).find(|v| !(v.abs() <= 1.0)) {
        return Err(Error::validation(format!(
            "trace is not normalized: sample {v} outside [-1, 1]"
        )));
    }
    let n = x.len();
    let mut counts = vec![0u32; k * k];
    for (a, b) in x.i.iter().zip(&x.q) {
        counts[cell_index(*a, k) * k + cell_index(*b, k)] += 1;
    }
    // dividing integer counts keeps the result independent of sample order
    let cells = counts.iter().map(|&c| c as f64 / n as f64).collect();
    Ok(ConstellationGrid { k, cells })
}

/// How a trace becomes an extractor input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    /// `[2, N]` normalized I/Q channels.
    IqChannels,
    /// The same values flattened to `2N`.
    IqFlat,
    /// `[1, K, K]` constellation grid.
    Grid,
    /// `K^2` grid cells rescaled to [-1, 1] (see [`ConstellationGrid::kan_scaled`]).
    GridScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputPipeline {
    pub format: InputFormat,
    pub trace_len: usize,
    pub grid: usize,
}

impl InputPipeline {
    pub fn new(format: InputFormat, trace_len: usize, grid: usize) -> Self {
        InputPipeline {
            format,
            trace_len,
            grid,
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self.format {
            InputFormat::IqChannels => vec![2, self.trace_len],
            InputFormat::IqFlat => vec![2 * self.trace_len],
            InputFormat::Grid => vec![1, self.grid, self.grid],
            InputFormat::GridScaled => vec![self.grid * self.grid],
        }
    }

    pub fn is_constellation(&self) -> bool {
        matches!(self.format, InputFormat::Grid | InputFormat::GridScaled)
    }

    /// Normalizes a raw trace and converts it to the input layout.
    pub fn prepare(&self, trace: &IQTrace) -> Result<Vec<f64>> {
        if trace.len() != self.trace_len {
            return Err(Error::validation(format!(
                "trace has {} samples, pipeline expects {}",
                trace.len(),
                self.trace_len
            )));
        }
        let n = normalize_iq(trace)?;
        Ok(match self.format {
            InputFormat::IqChannels | InputFormat::IqFlat => n.channels(),
            InputFormat::Grid => constellation_transform(&n, self.grid)?.cells,
            InputFormat::GridScaled => constellation_transform(&n, self.grid)?.kan_scaled(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(i: Vec<f64>, q: Vec<f64>) -> IQTrace {
        IQTrace::new(i, q, 0, 0).unwrap()
    }

    #[test]
    fn normalize_example() {
        let n = normalize_iq(&trace(vec![2.0, -4.0], vec![1.0, 0.0])).unwrap();
        assert_eq!(n.i, vec![0.5, -1.0]);
        assert_eq!(n.q, vec![0.25, 0.0]);
        assert_eq!(normalize_iq(&n).unwrap(), n);
    }

    #[test]
    fn zero_trace_is_degenerate() {
        let err = normalize_iq(&trace(vec![0.0; 3], vec![0.0; 3])).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn upper_boundary_clamps() {
        let g = constellation_transform(&trace(vec![1.0], vec![0.0]), 2).unwrap();
        assert_eq!(g.get(1, 1), 1.0);
        assert_eq!(g.mass(), 1.0);
    }

    #[test]
    fn identical_points_share_a_cell() {
        let g = constellation_transform(&trace(vec![0.3; 4], vec![-0.2; 4]), 10).unwrap();
        assert_eq!(g.cells.iter().filter(|&&c| c > 0.0).count(), 1);
        assert_eq!(g.cells.iter().cloned().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn unnormalized_input_rejected() {
        assert!(constellation_transform(&trace(vec![1.5], vec![0.0]), 4).is_err());
    }

    #[test]
    fn kan_scaling_range() {
        let g = constellation_transform(&trace(vec![0.0; 2], vec![0.0, 0.9]), 4).unwrap();
        let s = g.kan_scaled();
        assert!(s.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(s.iter().filter(|&&v| v == -1.0).count(), 14);
    }
}
