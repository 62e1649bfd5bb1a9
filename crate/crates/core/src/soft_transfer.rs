//! Soft Transfer: the least reliable internal transfers keep part of their
//! mass on the source predicate.
//!
//! Reliability of a decision is the biased model's target probability minus
//! its source probability. Decisions are ranked ascending; the bottom `k_s`%
//! are min-max scaled (over that selected prefix) and mapped through `Q` to a
//! two-class label `{target: 1/(1+Q), source: Q/(1+Q)}`. Everything else is a
//! full transfer.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ietrans::TransferDecision;
use crate::ingest::{Dataset, PredictionDump};
use crate::types::{percent_count, SoftLabel};

/// Mapping from scaled reliability to the source weight `Q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QMode {
    /// `Q = 1 - Q'`: the least reliable selected transfer is softened most.
    #[default]
    OneMinusMinmax,
    /// `Q = Q'`.
    Minmax,
    /// Every decision gets `{source: 0.5, target: 0.5}`, no ranking.
    Naive,
}

impl FromStr for QMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-minus-minmax" => Ok(QMode::OneMinusMinmax),
            "minmax" => Ok(QMode::Minmax),
            "naive" => Ok(QMode::Naive),
            other => Err(Error::invalid(
                "soft_transfer",
                format!("unknown q-mode {other:?} (one-minus-minmax|minmax|naive)"),
            )),
        }
    }
}

impl fmt::Display for QMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QMode::OneMinusMinmax => "one-minus-minmax",
            QMode::Minmax => "minmax",
            QMode::Naive => "naive",
        })
    }
}

/// Target minus source probability for one decision.
pub fn reliability_score(dump: &PredictionDump, d: &TransferDecision) -> Result<f64> {
    let v = dump.triplet(d.triplet_id).ok_or_else(|| {
        Error::invalid(
            "soft_transfer",
            format!("no prediction vector for triplet {}", d.triplet_id),
        )
    })?;
    Ok(v[d.target as usize] - v[d.source as usize])
}

/// Linear min-max scaling to [0, 1]. A constant list maps to all zeros.
pub fn minmax_scale(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::invalid("soft_transfer", "cannot scale an empty score list"));
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Ok(vec![0.0; scores.len()]);
    }
    Ok(scores
        .iter()
        .map(|&r| ((r - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect())
}

/// Two-class label for a mapped reliability `q`.
pub fn soft_label(q: f64, source: u32, target: u32) -> Result<SoftLabel> {
    SoftLabel::transfer(target, source, q)
}

/// Decisions ranked by ascending reliability with the selected prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityRanking {
    /// `(triplet_id, r_int)` ascending by score, ties by triplet id.
    pub entries: Vec<(u64, f64)>,
    pub k_s: f64,
    pub selected: usize,
}

impl ReliabilityRanking {
    pub fn build(dump: &PredictionDump, decisions: &[TransferDecision], k_s: f64) -> Result<Self> {
        if !(0.0..=100.0).contains(&k_s) {
            return Err(Error::invalid(
                "soft_transfer",
                format!("k_s = {k_s} outside [0, 100]"),
            ));
        }
        let mut entries = decisions
            .iter()
            .map(|d| Ok((d.triplet_id, reliability_score(dump, d)?)))
            .collect::<Result<Vec<_>>>()?;
        entries.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let selected = percent_count(k_s, entries.len());
        Ok(ReliabilityRanking {
            entries,
            k_s,
            selected,
        })
    }

    pub fn selected(&self) -> &[(u64, f64)] {
        &self.entries[..self.selected]
    }
}

/// New label for each decision's triplet under `mode`.
pub fn transfer_labels(
    dump: &PredictionDump,
    decisions: &[TransferDecision],
    k_s: f64,
    mode: QMode,
) -> Result<BTreeMap<u64, SoftLabel>> {
    let mut labels = BTreeMap::new();
    if mode == QMode::Naive {
        for d in decisions {
            labels.insert(d.triplet_id, SoftLabel::transfer(d.target, d.source, 1.0)?);
        }
        return Ok(labels);
    }
    let ranking = ReliabilityRanking::build(dump, decisions, k_s)?;
    let by_id: BTreeMap<u64, &TransferDecision> =
        decisions.iter().map(|d| (d.triplet_id, d)).collect();
    if by_id.len() != decisions.len() {
        return Err(Error::invalid(
            "soft_transfer",
            "more than one decision for the same triplet",
        ));
    }
    let selected = ranking.selected();
    if !selected.is_empty() {
        let scores: Vec<f64> = selected.iter().map(|e| e.1).collect();
        let scaled = minmax_scale(&scores)?;
        for (&(id, _), q_prime) in selected.iter().zip(scaled) {
            let d = by_id[&id];
            let q = match mode {
                QMode::OneMinusMinmax => 1.0 - q_prime,
                _ => q_prime,
            };
            labels.insert(id, soft_label(q, d.source, d.target)?);
        }
    }
    for &(id, _) in &ranking.entries[ranking.selected..] {
        labels.insert(id, SoftLabel::one_hot(by_id[&id].target));
    }
    Ok(labels)
}

/// Applies the decisions to `dataset`: softened labels for the selected
/// prefix, one-hot targets for the rest. `k_s = 0` is plain internal transfer.
pub fn apply_soft_transfer(
    dataset: &Dataset,
    dump: &PredictionDump,
    decisions: &[TransferDecision],
    k_s: f64,
    mode: QMode,
) -> Result<Dataset> {
    let labels = transfer_labels(dump, decisions, k_s, mode)?;
    let known = dataset.triplet_index();
    if let Some(id) = labels.keys().find(|id| !known.contains_key(id)) {
        return Err(Error::invalid(
            "soft_transfer",
            format!("decision for unknown triplet {id}"),
        ));
    }
    let (ls, mut images) = dataset.clone().into_parts();
    for image in images.values_mut() {
        for t in &mut image.triplets {
            if let Some(l) = labels.get(&t.triplet_id) {
                t.label = l.clone();
            }
        }
    }
    Dataset::new(ls, images)?.refresh_valid_triples()
}
