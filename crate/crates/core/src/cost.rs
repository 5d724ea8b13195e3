//! I/O cost model for simulated MapReduce jobs.
//!
//! A job's cost is a startup overhead plus per-input map costs plus a reduce
//! cost. The per-input variant charges each input's sort/merge work against
//! that input's own map-output volume; the pooled variant (the older model
//! this one refines) lumps all inputs together first, which mis-attributes
//! merge work when inputs have very different map output ratios. All sizes
//! are in MB; costs are dimensionless cost units.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MB: f64 = 1024.0 * 1024.0;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("invalid cost constant {name}: {reason}")]
    InvalidConstant { name: &'static str, reason: String },
}

/// Cost-model constants. Per-MB rates for local/distributed reads and writes
/// and transfer, the job startup overhead, the external-sort merge factor and
/// buffer limits, plus the sizing rules for mapper and reducer counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostConstants {
    /// Local disk read cost per MB.
    pub l_r: f64,
    /// Local disk write cost per MB.
    pub l_w: f64,
    /// Distributed-filesystem read cost per MB.
    pub h_r: f64,
    /// Distributed-filesystem write cost per MB.
    pub h_w: f64,
    /// Transfer cost per MB.
    pub t: f64,
    /// Job startup overhead.
    pub cost_h: f64,
    /// External sort merge factor.
    pub merge_factor: f64,
    /// Map task sort buffer (MB).
    pub buf_map: f64,
    /// Reduce task sort buffer (MB).
    pub buf_red: f64,
    /// Input split size (MB); determines mapper counts.
    pub split_size: f64,
    /// Map output volume allocated per reducer (MB).
    pub reducer_chunk: f64,
    /// Map-output metadata bytes per record.
    pub meta_bytes_per_record: f64,
}

impl Default for CostConstants {
    fn default() -> Self {
        CostConstants {
            l_r: 0.03,
            l_w: 0.085,
            h_r: 0.15,
            h_w: 0.25,
            t: 0.017,
            cost_h: 5.0,
            merge_factor: 10.0,
            buf_map: 409.0,
            buf_red: 512.0,
            split_size: 128.0,
            reducer_chunk: 256.0,
            meta_bytes_per_record: 16.0,
        }
    }
}

impl CostConstants {
    /// All rates zero except the distributed read cost, which is 1. Under
    /// these constants any job's cost equals its total input MB.
    pub fn read_only_unit() -> Self {
        CostConstants {
            l_r: 0.0,
            l_w: 0.0,
            h_r: 1.0,
            h_w: 0.0,
            t: 0.0,
            cost_h: 0.0,
            ..CostConstants::default()
        }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let nonneg: [(&'static str, f64); 6] = [
            ("l_r", self.l_r),
            ("l_w", self.l_w),
            ("h_r", self.h_r),
            ("h_w", self.h_w),
            ("t", self.t),
            ("cost_h", self.cost_h),
        ];
        for (name, v) in nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err(CostError::InvalidConstant {
                    name,
                    reason: format!("must be >= 0, got {v}"),
                });
            }
        }
        if !self.merge_factor.is_finite() || self.merge_factor < 2.0 {
            return Err(CostError::InvalidConstant {
                name: "merge_factor",
                reason: format!("must be >= 2, got {}", self.merge_factor),
            });
        }
        let positive: [(&'static str, f64); 4] = [
            ("buf_map", self.buf_map),
            ("buf_red", self.buf_red),
            ("split_size", self.split_size),
            ("reducer_chunk", self.reducer_chunk),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(CostError::InvalidConstant {
                    name,
                    reason: format!("must be > 0, got {v}"),
                });
            }
        }
        Ok(())
    }

    /// Number of mappers for an input of `n_mb` MB.
    pub fn mappers_for(&self, n_mb: f64) -> u64 {
        ((n_mb / self.split_size).ceil() as u64).max(1)
    }

    /// Number of reducers for `m_mb` MB of total map output.
    pub fn reducers_for(&self, m_mb: f64) -> u64 {
        ((m_mb / self.reducer_chunk).ceil() as u64).max(1)
    }

    /// Metadata volume in MB for a map-output record count.
    pub fn meta_mb(&self, records: u64) -> f64 {
        self.meta_bytes_per_record * records as f64 / MB
    }
}

/// One uniform slice of a job's input: its size, the map output it generates
/// and the mapper count processing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputCostPart {
    /// Input size in MB.
    pub n_mb: f64,
    /// Map output generated from this input, MB.
    pub m_mb: f64,
    /// Map output metadata, MB.
    pub meta_mb: f64,
    /// Mapper count for this input.
    pub mappers: u64,
    /// Map output records from this input.
    pub records: u64,
}

impl InputCostPart {
    pub fn new(n_mb: f64, m_mb: f64, records: u64, c: &CostConstants) -> InputCostPart {
        InputCostPart {
            n_mb,
            m_mb,
            meta_mb: c.meta_mb(records),
            mappers: c.mappers_for(n_mb),
            records,
        }
    }
}

fn log_merge_passes(spill_mb: f64, buf: f64, merge_factor: f64) -> f64 {
    let ceiling = (spill_mb / buf).ceil();
    if ceiling <= 1.0 {
        0.0
    } else {
        ceiling.ln() / merge_factor.ln()
    }
}

/// Sort/merge cost in the map stage for one input part. Zero whenever the
/// per-mapper spill fits the sort buffer.
pub fn map_merge_cost(p: &InputCostPart, c: &CostConstants) -> f64 {
    if p.m_mb <= 0.0 {
        return 0.0;
    }
    let per_mapper = (p.m_mb + p.meta_mb) / p.mappers as f64;
    (c.l_r + c.l_w) * p.m_mb * log_merge_passes(per_mapper, c.buf_map, c.merge_factor)
}

/// Map-phase cost for one input part: read the input, sort/merge the map
/// output, write it to local disk.
pub fn map_cost(p: &InputCostPart, c: &CostConstants) -> f64 {
    c.h_r * p.n_mb + map_merge_cost(p, c) + c.l_w * p.m_mb
}

/// Reduce-phase cost: transfer the intermediate data, merge it per reducer,
/// write `k_mb` of output.
pub fn reduce_cost(m_mb: f64, k_mb: f64, reducers: u64, c: &CostConstants) -> f64 {
    let merge = if m_mb <= 0.0 {
        0.0
    } else {
        (c.l_r + c.l_w)
            * m_mb
            * log_merge_passes(m_mb / reducers as f64, c.buf_red, c.merge_factor)
    };
    c.t * m_mb + merge + c.h_w * k_mb
}

/// Fully evaluated job cost with its subtotals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobCostEstimate {
    pub map_parts: Vec<f64>,
    pub map_total: f64,
    pub reduce: f64,
    pub overhead: f64,
    pub total: f64,
    pub m_mb: f64,
    pub k_mb: f64,
    pub reducers: u64,
}

/// Per-input job cost: every input part is charged its own merge work.
pub fn job_cost_per_input(
    parts: &[InputCostPart],
    k_mb: f64,
    reducers: u64,
    c: &CostConstants,
) -> JobCostEstimate {
    let map_parts: Vec<f64> = parts.iter().map(|p| map_cost(p, c)).collect();
    let map_total: f64 = map_parts.iter().sum();
    let m_mb: f64 = parts.iter().map(|p| p.m_mb).sum();
    let reduce = reduce_cost(m_mb, k_mb, reducers, c);
    JobCostEstimate {
        map_parts,
        map_total,
        reduce,
        overhead: c.cost_h,
        total: c.cost_h + map_total + reduce,
        m_mb,
        k_mb,
        reducers,
    }
}

/// Pooled job cost: the baseline model that sums all inputs into one part
/// before computing the map cost.
pub fn job_cost_pooled(
    parts: &[InputCostPart],
    k_mb: f64,
    reducers: u64,
    c: &CostConstants,
) -> JobCostEstimate {
    let pooled = InputCostPart {
        n_mb: parts.iter().map(|p| p.n_mb).sum(),
        m_mb: parts.iter().map(|p| p.m_mb).sum(),
        meta_mb: parts.iter().map(|p| p.meta_mb).sum(),
        mappers: parts.iter().map(|p| p.mappers).sum::<u64>().max(1),
        records: parts.iter().map(|p| p.records).sum(),
    };
    let map_total = map_cost(&pooled, c);
    let reduce = reduce_cost(pooled.m_mb, k_mb, reducers, c);
    JobCostEstimate {
        map_parts: vec![map_total],
        map_total,
        reduce,
        overhead: c.cost_h,
        total: c.cost_h + map_total + reduce,
        m_mb: pooled.m_mb,
        k_mb,
        reducers,
    }
}
