//! Recall@K under the graph constraint, mean Recall@K with group breakdown,
//! and the two overall scores (harmonic and arithmetic means).

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::types::{iou, BBox, Group, LabelSpace, ObjectRef, TripletRecord};

/// Minimum box overlap for a predicted object to match a ground-truth one.
pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedRelation {
    pub subject: ObjectRef,
    pub object: ObjectRef,
    pub predicate: u32,
    pub score: f64,
}

pub fn f1(r: f64, mr: f64) -> f64 {
    if r + mr == 0.0 {
        0.0
    } else {
        2.0 * r * mr / (r + mr)
    }
}

pub fn avg(r: f64, mr: f64) -> f64 {
    (r + mr) / 2.0
}

fn pair_key(r: &PredictedRelation) -> (u32, [u64; 4], u32, [u64; 4]) {
    let bits = |b: &BBox| [b.x1.to_bits(), b.y1.to_bits(), b.x2.to_bits(), b.y2.to_bits()];
    (r.subject.class, bits(&r.subject.bbox), r.object.class, bits(&r.object.bbox))
}

/// Keeps the best-scoring predicate of every ordered subject–object pair
/// (ties to the lower predicate), then the `k` highest scores overall
/// (ties in input order).
pub fn top_k(relations: &[PredictedRelation], k: usize) -> Vec<PredictedRelation> {
    let mut best: HashMap<_, usize> = HashMap::new();
    for (i, r) in relations.iter().enumerate() {
        let key = pair_key(r);
        match best.get(&key) {
            Some(&j) => {
                let cur = &relations[j];
                if r.score > cur.score || (r.score == cur.score && r.predicate < cur.predicate) {
                    best.insert(key, i);
                }
            }
            None => {
                best.insert(key, i);
            }
        }
    }
    let mut kept: Vec<usize> = best.into_values().collect();
    kept.sort_unstable();
    kept.sort_by(|&a, &b| relations[b].score.total_cmp(&relations[a].score));
    kept.into_iter().take(k).map(|i| relations[i]).collect()
}

fn matches(p: &PredictedRelation, g: &TripletRecord) -> bool {
    p.predicate == g.predicate()
        && p.subject.class == g.subject.class
        && p.object.class == g.object.class
        && iou(&p.subject.bbox, &g.subject.bbox) >= MATCH_IOU
        && iou(&p.object.bbox, &g.object.bbox) >= MATCH_IOU
}

fn augment(
    g: usize,
    adj: &[Vec<usize>],
    seen: &mut [bool],
    owner: &mut [Option<usize>],
) -> bool {
    for &p in &adj[g] {
        if seen[p] {
            continue;
        }
        seen[p] = true;
        if owner[p].is_none() || augment(owner[p].unwrap(), adj, seen, owner) {
            owner[p] = Some(g);
            return true;
        }
    }
    false
}

/// Recalled ground truth per predicate for one image: a maximum one-to-one
/// matching between the kept predictions and the ground truth.
pub fn image_hits(predictions: &[PredictedRelation], gt: &[TripletRecord]) -> BTreeMap<u32, usize> {
    let adj: Vec<Vec<usize>> = gt
        .iter()
        .map(|g| {
            predictions
                .iter()
                .enumerate()
                .filter(|(_, p)| matches(p, g))
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    let mut owner = vec![None; predictions.len()];
    for gi in 0..gt.len() {
        let mut seen = vec![false; predictions.len()];
        augment(gi, &adj, &mut seen, &mut owner);
    }
    let mut hits = BTreeMap::new();
    for g in owner.into_iter().flatten() {
        *hits.entry(gt[g].predicate()).or_insert(0) += 1;
    }
    hits
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRecall {
    pub overall: f64,
    pub head: Option<f64>,
    pub body: Option<f64>,
    pub tail: Option<f64>,
}

impl GroupRecall {
    pub fn group(&self, g: Group) -> Option<f64> {
        match g {
            Group::Head => self.head,
            Group::Body => self.body,
            Group::Tail => self.tail,
        }
    }
}

/// Scores keyed by K. Classes without ground truth have `None` recall and
/// are left out of every mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub recall: BTreeMap<usize, f64>,
    pub mean_recall: BTreeMap<usize, GroupRecall>,
    pub f1: BTreeMap<usize, f64>,
    pub avg: BTreeMap<usize, f64>,
    pub per_class_recall: BTreeMap<usize, BTreeMap<u32, Option<f64>>>,
    pub gt_counts: BTreeMap<u32, u64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Evaluates predictions against every image of `gt`. Images without
/// predictions count as fully missed; predictions for unknown images are an
/// error. `label_space` supplies the group partition.
pub fn evaluate(
    gt: &Dataset,
    predictions: &BTreeMap<u64, Vec<PredictedRelation>>,
    ks: &[usize],
    label_space: &LabelSpace,
) -> Result<EvalReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::invalid("metrics", "K values must be positive"));
    }
    if let Some(id) = predictions.keys().find(|id| !gt.images().contains_key(id)) {
        return Err(Error::invalid(
            "metrics",
            format!("predictions for unknown image {id}"),
        ));
    }
    let gt_counts = gt.predicate_counts();
    let total: u64 = gt_counts.values().sum();
    let mut ks_sorted = ks.to_vec();
    ks_sorted.sort_unstable();
    ks_sorted.dedup();
    let mut report = EvalReport {
        ks: ks_sorted.clone(),
        recall: BTreeMap::new(),
        mean_recall: BTreeMap::new(),
        f1: BTreeMap::new(),
        avg: BTreeMap::new(),
        per_class_recall: BTreeMap::new(),
        gt_counts: gt_counts.clone(),
    };
    let empty = Vec::new();
    for &k in &ks_sorted {
        let mut hits: BTreeMap<u32, u64> = BTreeMap::new();
        for (id, image) in gt.images() {
            let preds = top_k(predictions.get(id).unwrap_or(&empty), k);
            for (p, h) in image_hits(&preds, &image.triplets) {
                *hits.entry(p).or_insert(0) += h as u64;
            }
        }
        let recalled: u64 = hits.values().sum();
        let r = if total == 0 { 0.0 } else { recalled as f64 / total as f64 };
        let mut per_class = BTreeMap::new();
        let mut by_group: BTreeMap<Group, Vec<f64>> = BTreeMap::new();
        let mut all = Vec::new();
        for p in 1..label_space.num_predicates() as u32 {
            let n = gt_counts.get(&p).copied().unwrap_or(0);
            let v = (n > 0).then(|| hits.get(&p).copied().unwrap_or(0) as f64 / n as f64);
            if let Some(v) = v {
                all.push(v);
                if let Some(g) = label_space.group_of(p) {
                    by_group.entry(g).or_default().push(v);
                }
            }
            per_class.insert(p, v);
        }
        let group = |g: Group| by_group.get(&g).and_then(|v| mean(v));
        let mr = GroupRecall {
            overall: mean(&all).unwrap_or(0.0),
            head: group(Group::Head),
            body: group(Group::Body),
            tail: group(Group::Tail),
        };
        report.recall.insert(k, r);
        report.f1.insert(k, f1(r, mr.overall));
        report.avg.insert(k, avg(r, mr.overall));
        report.mean_recall.insert(k, mr);
        report.per_class_recall.insert(k, per_class);
    }
    Ok(report)
}

fn parse_err(origin: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: origin.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn object_from(v: &Value, origin: &Path, line: usize) -> Result<ObjectRef> {
    let class = v
        .get("cls")
        .and_then(Value::as_u64)
        .ok_or_else(|| parse_err(origin, line, "object needs an integer \"cls\""))?;
    let b: Vec<f64> = v
        .get("box")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_f64).collect())
        .unwrap_or_default();
    if b.len() != 4 {
        return Err(parse_err(origin, line, "object needs a 4-number \"box\""));
    }
    let bbox = BBox::new(b[0], b[1], b[2], b[3]).map_err(|e| parse_err(origin, line, e.to_string()))?;
    Ok(ObjectRef {
        class: class as u32,
        bbox,
    })
}

/// Reads `{"image_id", "relations": [{"s", "o", "p", "score"}]}` lines.
pub fn parse_relation_predictions<R: BufRead>(
    reader: R,
    origin: &Path,
) -> Result<BTreeMap<u64, Vec<PredictedRelation>>> {
    let mut out: BTreeMap<u64, Vec<PredictedRelation>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| parse_err(origin, n, e.to_string()))?;
        let image_id = v
            .get("image_id")
            .and_then(Value::as_u64)
            .ok_or_else(|| parse_err(origin, n, "missing integer \"image_id\""))?;
        let rels = v
            .get("relations")
            .and_then(Value::as_array)
            .ok_or_else(|| parse_err(origin, n, "missing \"relations\" array"))?;
        let entry = out.entry(image_id).or_default();
        for r in rels {
            let subject = object_from(r.get("s").unwrap_or(&Value::Null), origin, n)?;
            let object = object_from(r.get("o").unwrap_or(&Value::Null), origin, n)?;
            let predicate = r
                .get("p")
                .and_then(Value::as_u64)
                .ok_or_else(|| parse_err(origin, n, "relation needs an integer \"p\""))?
                as u32;
            let score = r
                .get("score")
                .and_then(Value::as_f64)
                .filter(|s| s.is_finite())
                .ok_or_else(|| parse_err(origin, n, "relation needs a finite \"score\""))?;
            entry.push(PredictedRelation {
                subject,
                object,
                predicate,
                score,
            });
        }
    }
    Ok(out)
}

pub fn load_relation_predictions(path: impl AsRef<Path>) -> Result<BTreeMap<u64, Vec<PredictedRelation>>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_relation_predictions(std::io::BufReader::new(f), path)
}

pub fn write_relation_predictions<W: Write>(
    predictions: &BTreeMap<u64, Vec<PredictedRelation>>,
    mut w: W,
) -> std::io::Result<()> {
    let obj = |o: &ObjectRef| json!({"cls": o.class, "box": [o.bbox.x1, o.bbox.y1, o.bbox.x2, o.bbox.y2]});
    for (id, rels) in predictions {
        let rels: Vec<Value> = rels
            .iter()
            .map(|r| json!({"s": obj(&r.subject), "o": obj(&r.object), "p": r.predicate, "score": r.score}))
            .collect();
        writeln!(w, "{}", json!({"image_id": id, "relations": rels}))?;
    }
    Ok(())
}
