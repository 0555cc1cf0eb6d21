//! Server-side aggregation: saliency-map damping and a FedAvg baseline.
//!
//! Per tensor, the deviation `|W_LM - W_GM|` maps through `S = 1 / (1 + dW)`
//! to a trust weight in (0, 1]; adjusted updates `S * W_LM` average across
//! clients and combine with the GM. The default `normalized` combine
//! `(W_GM + mean_adj) / 2` keeps "all LMs equal the GM" a fixed point; the
//! `paper_literal` combine adds the mean adjusted update to the GM verbatim.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fl::ClientUpdate;
use crate::fused::{FusedParams, NamedTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Saliency,
    Fedavg,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Saliency => "saliency",
            Aggregation::Fedavg => "fedavg",
        }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "saliency" => Ok(Aggregation::Saliency),
            "fedavg" => Ok(Aggregation::Fedavg),
            other => Err(Error::Config(format!("unknown aggregation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    Normalized,
    PaperLiteral,
}

impl AggregationMode {
    pub fn name(self) -> &'static str {
        match self {
            AggregationMode::Normalized => "normalized",
            AggregationMode::PaperLiteral => "paper_literal",
        }
    }
}

impl std::str::FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(AggregationMode::Normalized),
            "paper_literal" | "paper-literal" => Ok(AggregationMode::PaperLiteral),
            other => Err(Error::Config(format!("unknown aggregation mode '{other}'"))),
        }
    }
}

/// Per-tensor saliency values, same shapes as the weight tensors.
#[derive(Debug, Clone)]
pub struct SaliencyMaps {
    pub tensors: Vec<NamedTensor>,
}

fn check_tensor_pair(lm: &NamedTensor, gm: &NamedTensor) -> Result<()> {
    if lm.name != gm.name || lm.rows != gm.rows || lm.cols != gm.cols {
        return Err(Error::Protocol(format!(
            "tensor mismatch: LM {} [{}x{}] vs GM {} [{}x{}]",
            lm.name, lm.rows, lm.cols, gm.name, gm.rows, gm.cols
        )));
    }
    Ok(())
}

/// Elementwise `|W_LM - W_GM|` per named tensor (weights and biases alike).
pub fn deviation_matrix(lm: &ClientUpdate, gm: &FusedParams) -> Result<Vec<NamedTensor>> {
    let gm_tensors = gm.to_named_tensors();
    if lm.tensors.len() != gm_tensors.len() {
        return Err(Error::Protocol(format!(
            "expected {} tensors, got {}",
            gm_tensors.len(),
            lm.tensors.len()
        )));
    }
    let mut out = Vec::with_capacity(gm_tensors.len());
    for (lt, gt) in lm.tensors.iter().zip(&gm_tensors) {
        check_tensor_pair(lt, gt)?;
        let data = lt
            .data
            .iter()
            .zip(&gt.data)
            .map(|(&a, &b)| (a - b).abs())
            .collect();
        out.push(NamedTensor { data, ..lt.clone() });
    }
    Ok(out)
}

/// Elementwise `S = 1 / (1 + dW)`; entries lie in (0, 1] with `S = 1` exactly
/// where the deviation is zero.
pub fn saliency_map(delta: &[NamedTensor]) -> Result<SaliencyMaps> {
    let mut tensors = Vec::with_capacity(delta.len());
    for t in delta {
        if t.data.iter().any(|&v| v < 0.0) {
            return Err(Error::Protocol(format!(
                "negative deviation in tensor {}",
                t.name
            )));
        }
        let data = t.data.iter().map(|&d| 1.0 / (1.0 + d)).collect();
        tensors.push(NamedTensor { data, ..t.clone() });
    }
    Ok(SaliencyMaps { tensors })
}

/// Elementwise `W_adj = S * W_LM`.
pub fn adjust_update(lm: &ClientUpdate, s: &SaliencyMaps) -> Result<Vec<NamedTensor>> {
    if lm.tensors.len() != s.tensors.len() {
        return Err(Error::Protocol(
            "saliency/update tensor count mismatch".into(),
        ));
    }
    let mut out = Vec::with_capacity(lm.tensors.len());
    for (lt, st) in lm.tensors.iter().zip(&s.tensors) {
        check_tensor_pair(lt, st)?;
        let data = lt.data.iter().zip(&st.data).map(|(&w, &s)| s * w).collect();
        out.push(NamedTensor { data, ..lt.clone() });
    }
    Ok(out)
}

fn sorted_by_client_id(updates: &[ClientUpdate]) -> Vec<&ClientUpdate> {
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    sorted
}

fn rebuild_gm(gm: &FusedParams, tensors: Vec<NamedTensor>) -> Result<FusedParams> {
    FusedParams::from_named_tensors(gm.input_dim(), gm.num_rps(), gm.hidden(), &tensors)
}

/// Saliency-damped aggregation. The per-client adjusted updates average in a
/// canonical client-id order (f64 accumulation), then combine with the GM per
/// the chosen mode.
pub fn aggregate_saliency(
    gm: &FusedParams,
    updates: &[ClientUpdate],
    mode: AggregationMode,
) -> Result<FusedParams> {
    if updates.is_empty() {
        return Err(Error::Config("no client updates to aggregate".into()));
    }
    let gm_tensors = gm.to_named_tensors();
    let mut mean_adj: Vec<Vec<f64>> = gm_tensors
        .iter()
        .map(|t| vec![0.0f64; t.data.len()])
        .collect();
    let sorted = sorted_by_client_id(updates);
    let n = sorted.len() as f64;
    for update in &sorted {
        let delta = deviation_matrix(update, gm)?;
        let s = saliency_map(&delta)?;
        let adjusted = adjust_update(update, &s)?;
        for (acc, t) in mean_adj.iter_mut().zip(&adjusted) {
            for (a, &v) in acc.iter_mut().zip(&t.data) {
                *a += f64::from(v);
            }
        }
    }
    let mut tensors = gm_tensors;
    for (t, acc) in tensors.iter_mut().zip(&mean_adj) {
        for (v, &sum) in t.data.iter_mut().zip(acc) {
            let mean = sum / n;
            *v = match mode {
                AggregationMode::PaperLiteral => (f64::from(*v) + mean) as f32,
                AggregationMode::Normalized => ((f64::from(*v) + mean) / 2.0) as f32,
            };
        }
    }
    rebuild_gm(gm, tensors)
}

/// Sample-count-weighted mean of the updates; the GM is replaced, not summed.
pub fn aggregate_fedavg(gm: &FusedParams, updates: &[ClientUpdate]) -> Result<FusedParams> {
    if updates.is_empty() {
        return Err(Error::Config("no client updates to aggregate".into()));
    }
    let gm_tensors = gm.to_named_tensors();
    let mut acc: Vec<Vec<f64>> = gm_tensors
        .iter()
        .map(|t| vec![0.0f64; t.data.len()])
        .collect();
    let sorted = sorted_by_client_id(updates);
    let total: f64 = sorted.iter().map(|u| u.sample_count as f64).sum();
    if total <= 0.0 {
        return Err(Error::Config("total sample count must be positive".into()));
    }
    for update in &sorted {
        if update.tensors.len() != gm_tensors.len() {
            return Err(Error::Protocol("tensor count mismatch".into()));
        }
        let weight = update.sample_count as f64;
        for ((a, t), gt) in acc.iter_mut().zip(&update.tensors).zip(&gm_tensors) {
            check_tensor_pair(t, gt)?;
            for (slot, &v) in a.iter_mut().zip(&t.data) {
                *slot += weight * f64::from(v);
            }
        }
    }
    let mut tensors = gm_tensors;
    for (t, a) in tensors.iter_mut().zip(&acc) {
        for (v, &sum) in t.data.iter_mut().zip(a) {
            *v = (sum / total) as f32;
        }
    }
    rebuild_gm(gm, tensors)
}
