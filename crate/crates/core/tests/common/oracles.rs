//! Brute-force reference implementations. Each one ranks by counting how
//! many items beat a given item instead of sorting, so the library's sort
//! orders and tie-breaks are checked independently.

use std::collections::{BTreeMap, BTreeSet};

use tripaug::fsta::{ArtificialTriplet, Candidate, Foreign, FstaConfig, ImageProposals};
use tripaug::ietrans::{ParentChildMap, TransferDecision};
use tripaug::ingest::{Dataset, PredictionDump};
use tripaug::metrics::{PredictedRelation, MATCH_IOU};
use tripaug::soft_transfer::QMode;
use tripaug::types::{iou, percent_count, ClassTriple, Group, LabelSpace, SoftLabel, TripletRecord};

/// For each informative `q`, the mean mass on `q` over the instances of
/// every more frequent predicate.
pub fn affinities(dataset: &Dataset, dump: &PredictionDump) -> BTreeMap<u32, Vec<(u32, f64)>> {
    let counts = dataset.predicate_counts();
    let n = dump.num_predicates() as u32;
    let index = dataset.triplet_index();
    let mass = |p: u32, q: u32| -> Option<f64> {
        let vals: Vec<f64> = dump
            .per_triplet()
            .iter()
            .filter(|(id, _)| index[id].predicate() == p)
            .map(|(_, v)| v[q as usize])
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    (1..n)
        .map(|q| {
            let cq = counts.get(&q).copied().unwrap_or(0);
            let options = (1..n)
                .filter(|&p| p != q && counts.get(&p).copied().unwrap_or(0) > cq)
                .filter_map(|p| mass(p, q).map(|m| (p, m)))
                .collect();
            (q, options)
        })
        .collect()
}

/// Per triplet: every pair it is selected for (its rank among the source's
/// instances falls inside the floor), then the best-scoring one.
pub fn internal(
    dataset: &Dataset,
    dump: &PredictionDump,
    map: &ParentChildMap,
    k_i: f64,
) -> Vec<TransferDecision> {
    let labeled: Vec<(u64, u32)> = dataset
        .triplets()
        .filter(|t| dump.triplet(t.triplet_id).is_some())
        .map(|t| (t.triplet_id, t.predicate()))
        .collect();
    let score = |id: u64, q: u32| dump.triplet(id).unwrap()[q as usize];
    let mut out = Vec::new();
    for &(id, p) in &labeled {
        let mut chosen: Option<TransferDecision> = None;
        for (pp, q) in map.pairs() {
            if pp != p {
                continue;
            }
            let pool: Vec<u64> = labeled.iter().filter(|e| e.1 == p).map(|e| e.0).collect();
            let s = score(id, q);
            let rank = pool
                .iter()
                .filter(|&&o| score(o, q) > s || (score(o, q) == s && o < id))
                .count();
            if rank >= percent_count(k_i, pool.len()) {
                continue;
            }
            let better = match chosen {
                None => true,
                Some(c) => s > c.score || (s == c.score && q < c.target),
            };
            if better {
                chosen = Some(TransferDecision { triplet_id: id, source: p, target: q, score: s });
            }
        }
        out.extend(chosen);
    }
    out.sort_by_key(|d| d.triplet_id);
    out
}

/// Selected negatives as `(negative id, new triplet id, class)`.
pub fn external(dataset: &Dataset, dump: &PredictionDump, k_e: f64) -> Vec<(u64, u64, u32)> {
    let mut pool: Vec<(u64, u32, f64)> = Vec::new();
    for n in dataset.negatives() {
        let Some(v) = dump.per_negative().get(&n.id) else {
            continue;
        };
        let top = v[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if top <= v[0] {
            continue;
        }
        let cls = (1..v.len()).find(|&i| v[i] == top).unwrap() as u32;
        pool.push((n.id, cls, top));
    }
    let keep = percent_count(k_e, pool.len());
    let chosen: Vec<(u64, u32)> = pool
        .iter()
        .filter(|&&(id, _, s)| {
            pool.iter().filter(|&&(o, _, t)| t > s || (t == s && o < id)).count() < keep
        })
        .map(|&(id, c, _)| (id, c))
        .collect();
    let base = dataset.triplets().map(|t| t.triplet_id + 1).max().unwrap_or(0);
    chosen
        .iter()
        .map(|&(id, c)| {
            let offset = chosen.iter().filter(|&&(o, _)| o < id).count() as u64;
            (id, base + offset, c)
        })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Ids of the least reliable `k_s`% decisions.
pub fn soft_prefix(scores: &[(u64, f64)], k_s: f64) -> BTreeSet<u64> {
    let keep = percent_count(k_s, scores.len());
    scores
        .iter()
        .filter(|&&(id, r)| {
            scores.iter().filter(|&&(o, s)| s < r || (s == r && o < id)).count() < keep
        })
        .map(|e| e.0)
        .collect()
}

/// Expected labels for a set of decisions with reliability `scores`.
pub fn soft_labels(
    decisions: &[TransferDecision],
    scores: &[(u64, f64)],
    k_s: f64,
    mode: QMode,
) -> BTreeMap<u64, SoftLabel> {
    let selected = soft_prefix(scores, k_s);
    let sel: Vec<f64> = scores.iter().filter(|e| selected.contains(&e.0)).map(|e| e.1).collect();
    let lo = sel.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = BTreeMap::new();
    for d in decisions {
        let r = scores.iter().find(|e| e.0 == d.triplet_id).unwrap().1;
        let label = if mode == QMode::Naive {
            SoftLabel::from_entries([(d.source, 0.5), (d.target, 0.5)]).unwrap()
        } else if selected.contains(&d.triplet_id) {
            let scaled = if hi > lo { (r - lo) / (hi - lo) } else { 0.0 };
            let q = if mode == QMode::Minmax { scaled } else { 1.0 - scaled };
            let src = q / (1.0 + q);
            if src > 0.0 {
                SoftLabel::from_entries([(d.source, src), (d.target, 1.0 - src)]).unwrap()
            } else {
                SoftLabel::one_hot(d.target)
            }
        } else {
            SoftLabel::one_hot(d.target)
        };
        out.insert(d.triplet_id, label);
    }
    out
}

/// Every ordered proposal pair with its best-overlapping triplet.
pub fn candidate_pool(image: &ImageProposals, s_iou: f64) -> Vec<Candidate> {
    let mut out = Vec::new();
    for (i, s) in image.proposals.iter().enumerate() {
        for (j, o) in image.proposals.iter().enumerate() {
            if i == j {
                continue;
            }
            let scored: Vec<(f64, &TripletRecord)> = image
                .ground_truth
                .iter()
                .map(|g| (iou(&s.bbox, &g.subject.bbox).min(iou(&o.bbox, &g.object.bbox)), g))
                .filter(|e| e.0 > s_iou)
                .collect();
            let best = scored.iter().find(|&&(m, g)| {
                scored
                    .iter()
                    .all(|&(m2, g2)| m > m2 || (m == m2 && g.triplet_id <= g2.triplet_id))
            });
            if let Some(&(m, g)) = best {
                out.push(Candidate {
                    image_id: image.image_id,
                    triplet_id: g.triplet_id,
                    subject: *s,
                    object: *o,
                    predicate: g.predicate(),
                    overlap: m,
                });
            }
        }
    }
    out
}

/// All `(base, donor)` subject swaps yielding a valid triple.
pub fn s_prime_po(
    candidates: &[Candidate],
    label_space: &LabelSpace,
    cfg: &FstaConfig,
) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for b in 0..candidates.len() {
        for d in 0..candidates.len() {
            let base = &candidates[b];
            let t = ClassTriple::new(candidates[d].subject.class, base.predicate, base.object.class);
            let tail_ok = !cfg.tail_only_s_po || label_space.group_of(base.predicate) == Some(Group::Tail);
            if b != d && tail_ok && label_space.valid_triples().contains(&t) {
                out.insert((b, d));
            }
        }
    }
    out
}

pub fn swaps_of(triplets: &[ArtificialTriplet]) -> BTreeSet<(usize, usize)> {
    triplets
        .iter()
        .filter_map(|t| match t.foreign {
            Foreign::SPrimePo { donor, .. } => Some((t.base, donor)),
            _ => None,
        })
        .collect()
}

fn hits_for(p: &PredictedRelation, g: &TripletRecord) -> bool {
    p.predicate == g.predicate()
        && p.subject.class == g.subject.class
        && p.object.class == g.object.class
        && iou(&p.subject.bbox, &g.subject.bbox) >= MATCH_IOU
        && iou(&p.object.bbox, &g.object.bbox) >= MATCH_IOU
}

/// Largest number of ground-truth triplets from `gt[from..]` that can be
/// matched one-to-one to unused predictions.
fn best_matching(gt: &[&TripletRecord], preds: &[PredictedRelation], used: &mut Vec<bool>, from: usize) -> usize {
    if from == gt.len() {
        return 0;
    }
    let mut best = best_matching(gt, preds, used, from + 1);
    for i in 0..preds.len() {
        if !used[i] && hits_for(&preds[i], gt[from]) {
            used[i] = true;
            best = best.max(1 + best_matching(gt, preds, used, from + 1));
            used[i] = false;
        }
    }
    best
}

/// Per-predicate recalled counts by exhaustive search. Predictions only
/// match ground truth of the same predicate, so each predicate is solved
/// on its own.
pub fn image_hits(preds: &[PredictedRelation], gt: &[TripletRecord]) -> BTreeMap<u32, usize> {
    let predicates: BTreeSet<u32> = gt.iter().map(|g| g.predicate()).collect();
    let mut out = BTreeMap::new();
    for p in predicates {
        let g: Vec<&TripletRecord> = gt.iter().filter(|g| g.predicate() == p).collect();
        let mine: Vec<PredictedRelation> = preds.iter().copied().filter(|r| r.predicate == p).collect();
        let n = best_matching(&g, &mine, &mut vec![false; mine.len()], 0);
        if n > 0 {
            out.insert(p, n);
        }
    }
    out
}
