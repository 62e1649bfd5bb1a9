//! Baseline label transfer driven by biased-model predictions.
//!
//! Internal transfer moves instances of a general predicate onto a rarer,
//! more informative one. External transfer labels unannotated object pairs.
//! Both are deterministic: rankings break ties by ascending id.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, PredictionDump};
use crate::types::{percent_count, SoftLabel, TripletRecord, BACKGROUND};

/// Default affinity threshold for linking a general predicate to an
/// informative one.
pub const DEFAULT_AFFINITY_THRESHOLD: f64 = 0.1;
pub const DEFAULT_KI: f64 = 70.0;
pub const DEFAULT_KE: f64 = 100.0;

/// Reassignment of one triplet from `source` to `target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferDecision {
    pub triplet_id: u64,
    pub source: u32,
    pub target: u32,
    /// Biased-model probability of `target` on this triplet.
    pub score: f64,
}

/// General predicate → informative predicates it may transfer to.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParentChildMap {
    links: BTreeMap<u32, BTreeSet<u32>>,
    affinity: BTreeMap<(u32, u32), f64>,
}

impl ParentChildMap {
    /// Builds a map from explicit `(parent, child, affinity)` links.
    pub fn from_links<I>(links: I, counts: &BTreeMap<u32, u64>) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u32, f64)>,
    {
        let mut map = ParentChildMap::default();
        for (p, q, a) in links {
            let cp = counts.get(&p).copied().unwrap_or(0);
            let cq = counts.get(&q).copied().unwrap_or(0);
            if p == q || p == BACKGROUND || q == BACKGROUND || cq >= cp {
                return Err(Error::invalid(
                    "ietrans",
                    format!("invalid link {p} -> {q} (counts {cp} / {cq})"),
                ));
            }
            map.links.entry(p).or_default().insert(q);
            map.affinity.insert((p, q), a);
        }
        Ok(map)
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn links(&self) -> &BTreeMap<u32, BTreeSet<u32>> {
        &self.links
    }

    /// All `(parent, child)` pairs in ascending order.
    pub fn pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.links
            .iter()
            .flat_map(|(&p, qs)| qs.iter().map(move |&q| (p, q)))
    }

    pub fn affinity(&self, parent: u32, child: u32) -> Option<f64> {
        self.affinity.get(&(parent, child)).copied()
    }

    pub fn contains(&self, parent: u32, child: u32) -> bool {
        self.links.get(&parent).is_some_and(|s| s.contains(&child))
    }
}

/// Mean biased prediction over all instances labeled with each predicate,
/// computed from the per-combination aggregates.
pub fn predicate_mean_vectors(dump: &PredictionDump) -> BTreeMap<u32, Vec<f64>> {
    let n = dump.num_predicates();
    let mut sums: BTreeMap<u32, (Vec<f64>, usize)> = BTreeMap::new();
    for (combo, stat) in dump.per_combo() {
        let e = sums
            .entry(combo.predicate)
            .or_insert_with(|| (vec![0.0; n], 0));
        for (a, m) in e.0.iter_mut().zip(&stat.mean) {
            *a += m * stat.support as f64;
        }
        e.1 += stat.support;
    }
    sums.into_iter()
        .map(|(p, (mut s, c))| {
            s.iter_mut().for_each(|x| *x /= c as f64);
            (p, s)
        })
        .collect()
}

/// Links each informative predicate `q` to the more frequent predicate `p`
/// whose instances put the most mean mass on `q`. The link is kept when that
/// affinity exceeds `threshold`.
pub fn build_parent_child(
    dump: &PredictionDump,
    counts: &BTreeMap<u32, u64>,
    threshold: f64,
) -> ParentChildMap {
    let means = predicate_mean_vectors(dump);
    let mut map = ParentChildMap::default();
    for q in 1..dump.num_predicates() as u32 {
        let cq = counts.get(&q).copied().unwrap_or(0);
        let mut best: Option<(u32, f64)> = None;
        for (&p, mean) in &means {
            if p == q || p == BACKGROUND || counts.get(&p).copied().unwrap_or(0) <= cq {
                continue;
            }
            let a = mean[q as usize];
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((p, a));
            }
        }
        if let Some((p, a)) = best {
            if a > threshold {
                map.links.entry(p).or_default().insert(q);
                map.affinity.insert((p, q), a);
            }
        }
    }
    map
}

fn check_percent(module: &'static str, name: &str, v: f64) -> Result<()> {
    if !(0.0..=100.0).contains(&v) {
        return Err(Error::invalid(module, format!("{name} = {v} outside [0, 100]")));
    }
    Ok(())
}

/// Per `(source, target)` pair, the top `k_i`% of source-labeled instances by
/// predicted target probability, before the one-decision-per-triplet merge.
pub fn internal_candidates(
    dataset: &Dataset,
    dump: &PredictionDump,
    map: &ParentChildMap,
    k_i: f64,
) -> Result<BTreeMap<(u32, u32), Vec<TransferDecision>>> {
    check_percent("ietrans", "k_i", k_i)?;
    let mut by_label: BTreeMap<u32, Vec<(u64, &[f64])>> = BTreeMap::new();
    for t in dataset.triplets() {
        if let Some(v) = dump.triplet(t.triplet_id) {
            by_label.entry(t.predicate()).or_default().push((t.triplet_id, v));
        }
    }
    let mut out = BTreeMap::new();
    for (p, q) in map.pairs() {
        let mut pool: Vec<TransferDecision> = by_label
            .get(&p)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
            .iter()
            .map(|&(id, v)| TransferDecision {
                triplet_id: id,
                source: p,
                target: q,
                score: v[q as usize],
            })
            .collect();
        pool.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.triplet_id.cmp(&b.triplet_id)));
        pool.truncate(percent_count(k_i, pool.len()));
        out.insert((p, q), pool);
    }
    Ok(out)
}

/// Internal transfer: at most one decision per triplet (highest target
/// probability wins, ties to the lower target class), sorted by triplet id.
pub fn internal_transfer(
    dataset: &Dataset,
    dump: &PredictionDump,
    map: &ParentChildMap,
    k_i: f64,
) -> Result<Vec<TransferDecision>> {
    let mut best: BTreeMap<u64, TransferDecision> = BTreeMap::new();
    for d in internal_candidates(dataset, dump, map, k_i)?.into_values().flatten() {
        match best.get(&d.triplet_id) {
            Some(cur) if cur.score > d.score || (cur.score == d.score && cur.target < d.target) => {}
            _ => {
                best.insert(d.triplet_id, d);
            }
        }
    }
    Ok(best.into_values().collect())
}

/// Most probable non-background class and its probability; ties go to the
/// lower index.
fn best_foreground(v: &[f64]) -> Option<(u32, f64)> {
    let mut best: Option<(u32, f64)> = None;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((i as u32, x));
        }
    }
    best
}

/// External transfer: ranks no-relation pairs whose overall argmax is a real
/// predicate by that predicate's probability and labels the top `k_e`%.
/// New triplet ids start above the dataset's current maximum and follow
/// ascending negative id.
pub fn external_transfer(
    dataset: &Dataset,
    dump: &PredictionDump,
    k_e: f64,
) -> Result<Vec<TripletRecord>> {
    check_percent("ietrans", "k_e", k_e)?;
    let mut pool = Vec::new();
    for n in dataset.negatives() {
        let Some(v) = dump.per_negative().get(&n.id) else {
            continue;
        };
        let Some((cls, score)) = best_foreground(v) else {
            continue;
        };
        if v[BACKGROUND as usize] >= score {
            continue;
        }
        pool.push((n, cls, score));
    }
    pool.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.id.cmp(&b.0.id)));
    pool.truncate(percent_count(k_e, pool.len()));
    pool.sort_by_key(|e| e.0.id);
    let mut next = dataset.max_triplet_id().map_or(0, |m| m + 1);
    Ok(pool
        .into_iter()
        .map(|(n, cls, _)| {
            let id = next;
            next += 1;
            TripletRecord {
                triplet_id: id,
                image_id: n.image_id,
                subject: n.subject,
                object: n.object,
                label: SoftLabel::one_hot(cls),
            }
        })
        .collect())
}

/// Adds externally transferred triplets to their images and drops the
/// negative pairs they came from.
pub fn merge_external(dataset: &Dataset, extra: &[TripletRecord]) -> Result<Dataset> {
    let (ls, mut images) = dataset.clone().into_parts();
    for t in extra {
        let image = images.get_mut(&t.image_id).ok_or_else(|| {
            Error::invalid("ietrans", format!("external triplet for unknown image {}", t.image_id))
        })?;
        image
            .negatives
            .retain(|n| !(n.subject == t.subject && n.object == t.object));
        image.triplets.push(t.clone());
    }
    Dataset::new(ls, images)?.refresh_valid_triples()
}
