//! Readers and writers for the three input artifacts.
//!
//! * Annotations: JSON lines, one image per line, optionally preceded by a
//!   `{"label_space": ...}` header line naming the vocabularies.
//! * Prediction dumps: JSON lines of `{"triplet_id"|"negative_id", "vector"}`.
//! * Feature stores: little-endian binary, magic `TFRG`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::types::{
    BBox, ClassTriple, Group, LabelSpace, ObjectRef, SoftLabel, TripletRecord, BACKGROUND,
};

pub const BACKGROUND_NAME: &str = "__background__";

/// Tolerance beyond which a prediction vector is rejected rather than
/// renormalized.
pub const PREDICTION_SUM_TOLERANCE: f64 = 1e-4;

/// An object pair with no annotated relation.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativePair {
    pub id: u64,
    pub image_id: u64,
    pub subject: ObjectRef,
    pub object: ObjectRef,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Image {
    pub image_id: u64,
    pub triplets: Vec<TripletRecord>,
    pub negatives: Vec<NegativePair>,
}

/// A validated annotation set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    label_space: LabelSpace,
    images: BTreeMap<u64, Image>,
}

impl Dataset {
    /// Validates id uniqueness, image membership and class ranges.
    pub fn new(label_space: LabelSpace, images: BTreeMap<u64, Image>) -> Result<Self> {
        let n_obj = label_space.num_objects() as u32;
        let n_pred = label_space.num_predicates() as u32;
        let mut seen_triplets = BTreeSet::new();
        let mut seen_negatives = BTreeSet::new();
        for (&image_id, image) in &images {
            if image.image_id != image_id {
                return Err(Error::invalid("ingest", format!("image key {image_id} mismatch")));
            }
            for t in &image.triplets {
                if t.image_id != image_id {
                    return Err(Error::invalid(
                        "ingest",
                        format!("triplet {} filed under image {image_id}", t.triplet_id),
                    ));
                }
                if !seen_triplets.insert(t.triplet_id) {
                    return Err(Error::invalid(
                        "ingest",
                        format!("duplicate triplet_id {}", t.triplet_id),
                    ));
                }
                if t.subject.class >= n_obj || t.object.class >= n_obj {
                    return Err(Error::invalid(
                        "ingest",
                        format!("triplet {} has an out-of-range object class", t.triplet_id),
                    ));
                }
                if t.label.entries().iter().any(|&(p, _)| p >= n_pred) {
                    return Err(Error::invalid(
                        "ingest",
                        format!("triplet {} has an out-of-range predicate", t.triplet_id),
                    ));
                }
            }
            for n in &image.negatives {
                if !seen_negatives.insert(n.id) {
                    return Err(Error::invalid("ingest", format!("duplicate negative id {}", n.id)));
                }
                if n.subject.class >= n_obj || n.object.class >= n_obj {
                    return Err(Error::invalid(
                        "ingest",
                        format!("negative {} has an out-of-range object class", n.id),
                    ));
                }
            }
        }
        Ok(Dataset {
            label_space,
            images,
        })
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn images(&self) -> &BTreeMap<u64, Image> {
        &self.images
    }

    pub fn into_parts(self) -> (LabelSpace, BTreeMap<u64, Image>) {
        (self.label_space, self.images)
    }

    pub fn triplets(&self) -> impl Iterator<Item = &TripletRecord> {
        self.images.values().flat_map(|i| i.triplets.iter())
    }

    pub fn negatives(&self) -> impl Iterator<Item = &NegativePair> {
        self.images.values().flat_map(|i| i.negatives.iter())
    }

    pub fn num_triplets(&self) -> usize {
        self.images.values().map(|i| i.triplets.len()).sum()
    }

    pub fn triplet_index(&self) -> BTreeMap<u64, &TripletRecord> {
        self.triplets().map(|t| (t.triplet_id, t)).collect()
    }

    pub fn max_triplet_id(&self) -> Option<u64> {
        self.triplets().map(|t| t.triplet_id).max()
    }

    /// Instance counts per hard predicate.
    pub fn predicate_counts(&self) -> BTreeMap<u32, u64> {
        let mut counts = BTreeMap::new();
        for t in self.triplets() {
            *counts.entry(t.predicate()).or_insert(0) += 1;
        }
        counts
    }

    /// Every (s, p, o) with positive label mass in the annotations.
    pub fn observed_triples(&self) -> BTreeSet<ClassTriple> {
        self.triplets()
            .flat_map(|t| {
                t.label
                    .entries()
                    .iter()
                    .filter(|&&(p, _)| p != BACKGROUND)
                    .map(move |&(p, _)| ClassTriple::new(t.subject.class, p, t.object.class))
            })
            .collect()
    }

    /// Replaces the label space with one whose valid triples are recomputed
    /// from the current annotations, keeping vocabularies and groups.
    pub fn refresh_valid_triples(self) -> Result<Self> {
        let triples = self.observed_triples();
        let ls = LabelSpace::new(
            self.label_space.object_classes().to_vec(),
            self.label_space.predicate_classes().to_vec(),
            self.label_space.groups().clone(),
            triples,
        )?;
        Dataset::new(ls, self.images)
    }
}

// ----------------------------------------------------------------------------
// Annotation JSON lines

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
enum ClassRef {
    Index(u32),
    Name(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct ObjectLine {
    cls: ClassRef,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

#[derive(Debug, Serialize, Deserialize)]
struct TripletLine {
    id: u64,
    s: ObjectLine,
    o: ObjectLine,
    #[serde(skip_serializing_if = "Option::is_none")]
    p: Option<ClassRef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_soft: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NegativeLine {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<u64>,
    s: ObjectLine,
    o: ObjectLine,
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageLine {
    image_id: u64,
    #[serde(default)]
    triplets: Vec<TripletLine>,
    #[serde(default)]
    negatives: Vec<NegativeLine>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupLists {
    head: Vec<u32>,
    body: Vec<u32>,
    tail: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelSpaceHeader {
    objects: Vec<String>,
    predicates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    groups: Option<GroupLists>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderLine {
    label_space: LabelSpaceHeader,
}

fn groups_to_lists(groups: &BTreeMap<u32, Group>) -> GroupLists {
    let pick = |g: Group| {
        groups
            .iter()
            .filter(|(_, &x)| x == g)
            .map(|(&p, _)| p)
            .collect()
    };
    GroupLists {
        head: pick(Group::Head),
        body: pick(Group::Body),
        tail: pick(Group::Tail),
    }
}

fn lists_to_groups(lists: &GroupLists) -> BTreeMap<u32, Group> {
    let mut out = BTreeMap::new();
    for (g, ps) in [
        (Group::Head, &lists.head),
        (Group::Body, &lists.body),
        (Group::Tail, &lists.tail),
    ] {
        for &p in ps {
            out.insert(p, g);
        }
    }
    out
}

/// Serializes a group map as `{"head": [...], "body": [...], "tail": [...]}`.
pub fn groups_to_json(groups: &BTreeMap<u32, Group>) -> Value {
    serde_json::to_value(groups_to_lists(groups)).expect("group lists serialize")
}

/// Parses the `groups.json` layout produced by [`groups_to_json`].
pub fn groups_from_json(v: &Value) -> Result<BTreeMap<u32, Group>> {
    let lists: GroupLists = serde_json::from_value(v.clone())
        .map_err(|e| Error::invalid("ingest", format!("bad groups document: {e}")))?;
    let groups = lists_to_groups(&lists);
    let total = lists.head.len() + lists.body.len() + lists.tail.len();
    if groups.len() != total {
        return Err(Error::invalid("ingest", "a predicate appears in two groups"));
    }
    Ok(groups)
}

struct Vocab<'a> {
    header: Option<&'a LabelSpaceHeader>,
}

impl Vocab<'_> {
    fn object(&self, r: &ClassRef) -> std::result::Result<u32, String> {
        match (r, self.header) {
            (ClassRef::Index(i), Some(h)) if (*i as usize) >= h.objects.len() => {
                Err(format!("object class index {i} out of range"))
            }
            (ClassRef::Index(i), _) => Ok(*i),
            (ClassRef::Name(n), Some(h)) => h
                .objects
                .iter()
                .position(|x| x == n)
                .map(|i| i as u32)
                .ok_or_else(|| format!("unknown object class {n:?}")),
            (ClassRef::Name(n), None) => n
                .parse()
                .map_err(|_| format!("object class name {n:?} needs a label_space header")),
        }
    }

    fn predicate(&self, r: &ClassRef) -> std::result::Result<u32, String> {
        match (r, self.header) {
            (ClassRef::Index(i), Some(h)) if (*i as usize) >= h.predicates.len() => {
                Err(format!("predicate index {i} out of range"))
            }
            (ClassRef::Index(i), _) => Ok(*i),
            (ClassRef::Name(n), Some(h)) => h
                .predicates
                .iter()
                .position(|x| x == n)
                .map(|i| i as u32)
                .ok_or_else(|| format!("unknown predicate {n:?}")),
            (ClassRef::Name(n), None) if n == BACKGROUND_NAME => Ok(BACKGROUND),
            (ClassRef::Name(n), None) => n
                .parse()
                .map_err(|_| format!("predicate name {n:?} needs a label_space header")),
        }
    }
}

fn object_ref(vocab: &Vocab, o: &ObjectLine) -> std::result::Result<ObjectRef, String> {
    let class = vocab.object(&o.cls)?;
    let [x1, y1, x2, y2] = o.bbox;
    let bbox = BBox::new(x1, y1, x2, y2).map_err(|e| e.to_string())?;
    Ok(ObjectRef { class, bbox })
}

/// Loads an annotation file.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(BufReader::new(f), path)
}

/// Parses annotation JSON lines from any reader. `origin` is used in error
/// messages only.
pub fn parse_annotations<R: BufRead>(reader: R, origin: &Path) -> Result<Dataset> {
    let perr = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut header: Option<LabelSpaceHeader> = None;
    let mut parsed: Vec<(usize, ImageLine)> = Vec::new();
    let mut first = true;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| perr(lineno, e.to_string()))?;
        if first && v.get("label_space").is_some() {
            let h: HeaderLine = serde_json::from_value(v).map_err(|e| perr(lineno, e.to_string()))?;
            if h.label_space.predicates.first().map(String::as_str) != Some(BACKGROUND_NAME) {
                return Err(perr(
                    lineno,
                    format!("predicate 0 must be {BACKGROUND_NAME:?}"),
                ));
            }
            header = Some(h.label_space);
            first = false;
            continue;
        }
        first = false;
        let img: ImageLine = serde_json::from_value(v).map_err(|e| perr(lineno, e.to_string()))?;
        parsed.push((lineno, img));
    }

    let vocab = Vocab {
        header: header.as_ref(),
    };
    let mut images: BTreeMap<u64, Image> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    let mut explicit_neg_ids = BTreeSet::new();
    let mut pending_negatives: Vec<(u64, Option<u64>, ObjectRef, ObjectRef)> = Vec::new();
    let mut max_obj = None::<u32>;
    let mut max_pred = 0u32;
    for (lineno, img) in parsed {
        if images.contains_key(&img.image_id) {
            return Err(perr(lineno, format!("duplicate image_id {}", img.image_id)));
        }
        let mut image = Image {
            image_id: img.image_id,
            ..Default::default()
        };
        for t in &img.triplets {
            if !seen.insert(t.id) {
                return Err(perr(lineno, format!("duplicate triplet id {}", t.id)));
            }
            let subject = object_ref(&vocab, &t.s).map_err(|m| perr(lineno, m))?;
            let object = object_ref(&vocab, &t.o).map_err(|m| perr(lineno, m))?;
            let label = match (&t.p, &t.p_soft) {
                (Some(p), None) => {
                    let p = vocab.predicate(p).map_err(|m| perr(lineno, m))?;
                    SoftLabel::one_hot(p)
                }
                (None, Some(soft)) => {
                    let mut entries = Vec::with_capacity(soft.len());
                    for (name, &prob) in soft {
                        let p = vocab
                            .predicate(&ClassRef::Name(name.clone()))
                            .map_err(|m| perr(lineno, m))?;
                        entries.push((p, prob));
                    }
                    SoftLabel::from_entries(entries).map_err(|e| perr(lineno, e.to_string()))?
                }
                _ => {
                    return Err(perr(
                        lineno,
                        format!("triplet {} needs exactly one of p / p_soft", t.id),
                    ))
                }
            };
            if label.entries().iter().any(|&(p, _)| p == BACKGROUND) {
                return Err(perr(lineno, format!("triplet {} labeled background", t.id)));
            }
            max_obj = max_obj.max(Some(subject.class.max(object.class)));
            max_pred = max_pred.max(label.entries().iter().map(|e| e.0).max().unwrap_or(0));
            image.triplets.push(TripletRecord {
                triplet_id: t.id,
                image_id: img.image_id,
                subject,
                object,
                label,
            });
        }
        for n in &img.negatives {
            let subject = object_ref(&vocab, &n.s).map_err(|m| perr(lineno, m))?;
            let object = object_ref(&vocab, &n.o).map_err(|m| perr(lineno, m))?;
            if let Some(id) = n.id {
                if !explicit_neg_ids.insert(id) {
                    return Err(perr(lineno, format!("duplicate negative id {id}")));
                }
            }
            max_obj = max_obj.max(Some(subject.class.max(object.class)));
            pending_negatives.push((img.image_id, n.id, subject, object));
        }
        images.insert(img.image_id, image);
    }

    // Negatives without an explicit id are numbered after the largest
    // explicit one, in file order.
    let mut next_id = explicit_neg_ids.iter().next_back().map_or(0, |m| m + 1);
    for (image_id, id, subject, object) in pending_negatives {
        let id = id.unwrap_or_else(|| {
            let v = next_id;
            next_id += 1;
            v
        });
        images
            .get_mut(&image_id)
            .expect("image inserted above")
            .negatives
            .push(NegativePair {
                id,
                image_id,
                subject,
                object,
            });
    }

    let (objects, predicates, groups) = match header {
        Some(h) => {
            let groups = h.groups.as_ref().map(lists_to_groups);
            (h.objects, h.predicates, groups)
        }
        None => {
            let n_obj = max_obj.map_or(0, |m| m as usize + 1);
            let objects = (0..n_obj).map(|i| i.to_string()).collect();
            let predicates = std::iter::once(BACKGROUND_NAME.to_string())
                .chain((1..=max_pred).map(|i| i.to_string()))
                .collect();
            (objects, predicates, None)
        }
    };

    let provisional = Dataset {
        label_space: LabelSpace::new(objects.clone(), predicates.clone(), BTreeMap::new(), BTreeSet::new())?,
        images,
    };
    let triples = provisional.observed_triples();
    let label_space = match groups {
        Some(g) => LabelSpace::new(objects, predicates, g, triples)?,
        None => LabelSpace::from_counts(objects, predicates, &provisional.predicate_counts(), triples)?,
    };
    Dataset::new(label_space, provisional.images)
}

fn object_line(o: &ObjectRef) -> ObjectLine {
    ObjectLine {
        cls: ClassRef::Index(o.class),
        bbox: o.bbox.into(),
    }
}

/// Writes a dataset in the annotation format, header first, images in
/// ascending id order.
pub fn write_annotations<W: Write>(dataset: &Dataset, mut w: W) -> std::io::Result<()> {
    let ls = dataset.label_space();
    let header = HeaderLine {
        label_space: LabelSpaceHeader {
            objects: ls.object_classes().to_vec(),
            predicates: ls.predicate_classes().to_vec(),
            groups: (!ls.groups().is_empty()).then(|| groups_to_lists(ls.groups())),
        },
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for image in dataset.images().values() {
        let line = ImageLine {
            image_id: image.image_id,
            triplets: image
                .triplets
                .iter()
                .map(|t| {
                    let (p, p_soft) = if t.label.is_one_hot() {
                        (Some(ClassRef::Index(t.label.argmax())), None)
                    } else {
                        let soft = t
                            .label
                            .entries()
                            .iter()
                            .map(|&(p, v)| (ls.predicate_name(p).to_string(), v))
                            .collect();
                        (None, Some(soft))
                    };
                    TripletLine {
                        id: t.triplet_id,
                        s: object_line(&t.subject),
                        o: object_line(&t.object),
                        p,
                        p_soft,
                    }
                })
                .collect(),
            negatives: image
                .negatives
                .iter()
                .map(|n| NegativeLine {
                    id: Some(n.id),
                    s: object_line(&n.subject),
                    o: object_line(&n.object),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes a dataset to `path`.
pub fn save_annotations(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_annotations(dataset, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

// ----------------------------------------------------------------------------
// Prediction dumps

/// Mean prediction for one ground-truth combination.
#[derive(Debug, Clone, PartialEq)]
pub struct ComboStat {
    pub mean: Vec<f64>,
    pub support: usize,
}

/// Post-softmax predicate vectors from a biased model.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDump {
    num_predicates: usize,
    per_triplet: BTreeMap<u64, Vec<f64>>,
    per_combo: BTreeMap<ClassTriple, ComboStat>,
    per_negative: BTreeMap<u64, Vec<f64>>,
}

fn check_vector(v: &mut [f64], n: usize) -> std::result::Result<(), String> {
    if v.len() != n {
        return Err(format!("vector length {} does not match {n} predicates", v.len()));
    }
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err("vector has negative or non-finite entries".into());
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > PREDICTION_SUM_TOLERANCE {
        return Err(format!("vector sums to {sum}, expected 1"));
    }
    if sum != 1.0 {
        v.iter_mut().for_each(|x| *x /= sum);
    }
    Ok(())
}

impl PredictionDump {
    /// Validates vectors against `dataset` and aggregates per ground-truth
    /// combination.
    pub fn from_vectors(
        dataset: &Dataset,
        mut per_triplet: BTreeMap<u64, Vec<f64>>,
        mut per_negative: BTreeMap<u64, Vec<f64>>,
    ) -> Result<Self> {
        let n = dataset.label_space().num_predicates();
        let index = dataset.triplet_index();
        for (id, v) in per_triplet.iter_mut() {
            if !index.contains_key(id) {
                return Err(Error::invalid("ingest", format!("unknown triplet_id {id}")));
            }
            check_vector(v, n).map_err(|m| Error::invalid("ingest", format!("triplet {id}: {m}")))?;
        }
        let negatives: BTreeSet<u64> = dataset.negatives().map(|n| n.id).collect();
        for (id, v) in per_negative.iter_mut() {
            if !negatives.contains(id) {
                return Err(Error::invalid("ingest", format!("unknown negative_id {id}")));
            }
            check_vector(v, n).map_err(|m| Error::invalid("ingest", format!("negative {id}: {m}")))?;
        }
        let mut sums: BTreeMap<ClassTriple, (Vec<f64>, usize)> = BTreeMap::new();
        for (id, v) in &per_triplet {
            let combo = index[id].class_triple();
            let e = sums.entry(combo).or_insert_with(|| (vec![0.0; n], 0));
            e.0.iter_mut().zip(v).for_each(|(a, b)| *a += b);
            e.1 += 1;
        }
        let per_combo = sums
            .into_iter()
            .map(|(k, (mut s, c))| {
                s.iter_mut().for_each(|x| *x /= c as f64);
                (k, ComboStat { mean: s, support: c })
            })
            .collect();
        Ok(PredictionDump {
            num_predicates: n,
            per_triplet,
            per_combo,
            per_negative,
        })
    }

    pub fn num_predicates(&self) -> usize {
        self.num_predicates
    }

    pub fn per_triplet(&self) -> &BTreeMap<u64, Vec<f64>> {
        &self.per_triplet
    }

    pub fn per_combo(&self) -> &BTreeMap<ClassTriple, ComboStat> {
        &self.per_combo
    }

    pub fn per_negative(&self) -> &BTreeMap<u64, Vec<f64>> {
        &self.per_negative
    }

    pub fn triplet(&self, id: u64) -> Option<&[f64]> {
        self.per_triplet.get(&id).map(Vec::as_slice)
    }

    pub fn combo(&self, t: ClassTriple) -> Option<&ComboStat> {
        self.per_combo.get(&t)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    triplet_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    negative_id: Option<u64>,
    vector: Vec<f64>,
}

/// Loads a prediction dump and validates it against `dataset`.
pub fn load_predictions(path: impl AsRef<Path>, dataset: &Dataset) -> Result<PredictionDump> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(BufReader::new(f), path, dataset)
}

pub fn parse_predictions<R: BufRead>(
    reader: R,
    origin: &Path,
    dataset: &Dataset,
) -> Result<PredictionDump> {
    let perr = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let n = dataset.label_space().num_predicates();
    let index = dataset.triplet_index();
    let negatives: BTreeSet<u64> = dataset.negatives().map(|n| n.id).collect();
    let mut per_triplet = BTreeMap::new();
    let mut per_negative = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut p: PredictionLine =
            serde_json::from_str(&line).map_err(|e| perr(lineno, e.to_string()))?;
        check_vector(&mut p.vector, n).map_err(|m| perr(lineno, m))?;
        match (p.triplet_id, p.negative_id) {
            (Some(id), None) => {
                if !index.contains_key(&id) {
                    return Err(perr(lineno, format!("unknown triplet_id {id}")));
                }
                if per_triplet.insert(id, p.vector).is_some() {
                    return Err(perr(lineno, format!("duplicate triplet_id {id}")));
                }
            }
            (None, Some(id)) => {
                if !negatives.contains(&id) {
                    return Err(perr(lineno, format!("unknown negative_id {id}")));
                }
                if per_negative.insert(id, p.vector).is_some() {
                    return Err(perr(lineno, format!("duplicate negative_id {id}")));
                }
            }
            _ => {
                return Err(perr(
                    lineno,
                    "exactly one of triplet_id / negative_id is required".into(),
                ))
            }
        }
    }
    PredictionDump::from_vectors(dataset, per_triplet, per_negative)
}

pub fn write_predictions<W: Write>(dump: &PredictionDump, mut w: W) -> std::io::Result<()> {
    for (&id, v) in &dump.per_triplet {
        let line = PredictionLine {
            triplet_id: Some(id),
            negative_id: None,
            vector: v.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    for (&id, v) in &dump.per_negative {
        let line = PredictionLine {
            triplet_id: None,
            negative_id: Some(id),
            vector: v.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_predictions(dump: &PredictionDump, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_predictions(dump, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

// ----------------------------------------------------------------------------
// Feature stores

pub const FEATURE_MAGIC: &[u8; 4] = b"TFRG";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub class: u32,
    pub values: Vec<f32>,
}

/// Object feature vectors keyed by instance id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    rows: BTreeMap<u64, FeatureRow>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        FeatureStore {
            dim,
            rows: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: u64, class: u32, values: Vec<f32>) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::invalid(
                "ingest",
                format!("feature row {id} has length {}, expected {}", values.len(), self.dim),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("ingest", format!("feature row {id} is not finite")));
        }
        if self.rows.insert(id, FeatureRow { class, values }).is_some() {
            return Err(Error::invalid("ingest", format!("duplicate feature row {id}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &BTreeMap<u64, FeatureRow> {
        &self.rows
    }

    pub fn get(&self, id: u64) -> Option<&FeatureRow> {
        self.rows.get(&id)
    }

    /// Row vectors widened to f64 together with their classes, in id order.
    pub fn to_f64_rows(&self) -> (Vec<Vec<f64>>, Vec<u32>) {
        self.rows
            .values()
            .map(|r| (r.values.iter().map(|&v| v as f64).collect(), r.class))
            .unzip()
    }
}

pub fn write_features<W: Write>(store: &FeatureStore, mut w: W) -> std::io::Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(store.dim as u32).to_le_bytes())?;
    w.write_all(&(store.rows.len() as u32).to_le_bytes())?;
    for (&id, row) in &store.rows {
        w.write_all(&id.to_le_bytes())?;
        w.write_all(&row.class.to_le_bytes())?;
        for v in &row.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_features(store: &FeatureStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_features(store, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureStore> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_features(&bytes, path)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::invalid(
                "ingest",
                format!("{}: truncated at byte {}", self.origin.display(), self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn parse_features(bytes: &[u8], origin: &Path) -> Result<FeatureStore> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        origin,
    };
    if c.take(4)? != FEATURE_MAGIC {
        return Err(Error::invalid(
            "ingest",
            format!("{}: bad magic, expected TFRG", origin.display()),
        ));
    }
    let version = c.u32()?;
    if version != FEATURE_VERSION {
        return Err(Error::invalid(
            "ingest",
            format!("{}: unsupported feature version {version}", origin.display()),
        ));
    }
    let dim = c.u32()? as usize;
    let count = c.u32()? as usize;
    let mut store = FeatureStore::new(dim);
    for _ in 0..count {
        let id = c.u64()?;
        let class = c.u32()?;
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            values.push(c.f32()?);
        }
        store.insert(id, class, values).map_err(|e| {
            Error::invalid("ingest", format!("{}: {e}", origin.display()))
        })?;
    }
    if c.pos != bytes.len() {
        return Err(Error::invalid(
            "ingest",
            format!("{}: {} trailing bytes", origin.display(), bytes.len() - c.pos),
        ));
    }
    Ok(store)
}

/// Parses an annotation document held in memory.
pub fn annotations_from_str(s: &str) -> Result<Dataset> {
    parse_annotations(s.as_bytes(), &PathBuf::from("<memory>"))
}

/// Parses a prediction dump held in memory.
pub fn predictions_from_str(s: &str, dataset: &Dataset) -> Result<PredictionDump> {
    parse_predictions(s.as_bytes(), &PathBuf::from("<memory>"), dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG5: &str = r#"{"label_space":{"objects":["man","chair","laptop","table","plant","pot","person"],"predicates":["__background__","on","sitting on","in","above","looking at"]}}
{"image_id":1,"triplets":[{"id":1,"s":{"cls":"man","box":[10,10,50,90]},"o":{"cls":"chair","box":[20,50,60,100]},"p":"sitting on"},{"id":2,"s":{"cls":"laptop","box":[70,40,100,60]},"o":{"cls":"table","box":[60,55,140,100]},"p":"on"},{"id":3,"s":{"cls":"plant","box":[150,10,170,40]},"o":{"cls":"pot","box":[148,30,172,50]},"p":"in"},{"id":4,"s":{"cls":"person","box":[90,0,130,80]},"o":{"cls":"laptop","box":[70,40,100,60]},"p":"on"}],"negatives":[{"s":{"cls":"man","box":[10,10,50,90]},"o":{"cls":"table","box":[60,55,140,100]}}]}
"#;

    #[test]
    fn empty_file_gives_empty_dataset() {
        let d = annotations_from_str("").unwrap();
        assert_eq!(d.images().len(), 0);
        assert_eq!(d.num_triplets(), 0);
    }

    #[test]
    fn single_triplet() {
        let d = annotations_from_str(
            r#"{"image_id":7,"triplets":[{"id":3,"s":{"cls":0,"box":[0,0,1,1]},"o":{"cls":2,"box":[1,1,2,2]},"p":1}]}"#,
        )
        .unwrap();
        assert_eq!(d.num_triplets(), 1);
        assert_eq!(d.label_space().num_objects(), 3);
        assert_eq!(d.label_space().num_predicates(), 2);
        let t = d.triplets().next().unwrap();
        assert_eq!(t.class_triple(), ClassTriple::new(0, 1, 2));
    }

    #[test]
    fn figure_five_fixture_loads_four_relations() {
        let d = annotations_from_str(FIG5).unwrap();
        assert_eq!(d.images().len(), 1);
        assert_eq!(d.num_triplets(), 4);
        let ls = d.label_space();
        let on = ls.predicate_index("on").unwrap();
        let laptop = ls.object_index("laptop").unwrap();
        let table = ls.object_index("table").unwrap();
        assert!(ls.is_valid(ClassTriple::new(laptop, on, table)));
        assert_eq!(d.negatives().count(), 1);
        assert_eq!(d.negatives().next().unwrap().id, 0);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "{\"image_id\":1,\"triplets\":[]}\n{not json}\n";
        match annotations_from_str(bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let dup = concat!(
            r#"{"image_id":1,"triplets":[{"id":1,"s":{"cls":0,"box":[0,0,1,1]},"o":{"cls":0,"box":[0,0,1,1]},"p":1}]}"#,
            "\n",
            r#"{"image_id":2,"triplets":[{"id":1,"s":{"cls":0,"box":[0,0,1,1]},"o":{"cls":0,"box":[0,0,1,1]},"p":1}]}"#,
        );
        match annotations_from_str(dup) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("duplicate"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_and_malformed_rejected() {
        let header = r#"{"label_space":{"objects":["a"],"predicates":["__background__","on"]}}"#;
        let oor = format!(
            "{header}\n{}",
            r#"{"image_id":1,"triplets":[{"id":1,"s":{"cls":3,"box":[0,0,1,1]},"o":{"cls":0,"box":[0,0,1,1]},"p":1}]}"#
        );
        assert!(annotations_from_str(&oor).is_err());
        let bad_box = r#"{"image_id":1,"triplets":[{"id":1,"s":{"cls":0,"box":[2,0,1,1]},"o":{"cls":0,"box":[0,0,1,1]},"p":1}]}"#;
        assert!(annotations_from_str(bad_box).is_err());
        let bg = r#"{"image_id":1,"triplets":[{"id":1,"s":{"cls":0,"box":[0,0,1,1]},"o":{"cls":0,"box":[0,0,1,1]},"p":0}]}"#;
        assert!(annotations_from_str(bg).is_err());
    }

    #[test]
    fn soft_labels_round_trip_by_name() {
        let d = annotations_from_str(FIG5).unwrap();
        let (ls, mut images) = d.into_parts();
        let above = ls.predicate_index("above").unwrap();
        let on = ls.predicate_index("on").unwrap();
        let img = images.get_mut(&1).unwrap();
        img.triplets[1].label = SoftLabel::from_entries([(above, 0.76), (on, 0.24)]).unwrap();
        let d = Dataset::new(ls, images).unwrap();
        let mut buf = Vec::new();
        write_annotations(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains(r#""p_soft":{"above":0.76,"on":0.24}"#), "{text}");
        let back = annotations_from_str(&text).unwrap().refresh_valid_triples().unwrap();
        assert_eq!(back.images(), d.images());
    }

    fn tiny_dataset() -> Dataset {
        annotations_from_str(concat!(
            r#"{"image_id":1,"triplets":["#,
            r#"{"id":1,"s":{"cls":0,"box":[0,0,1,1]},"o":{"cls":1,"box":[1,1,2,2]},"p":1},"#,
            r#"{"id":2,"s":{"cls":0,"box":[0,0,1,1]},"o":{"cls":1,"box":[1,1,2,2]},"p":1},"#,
            r#"{"id":3,"s":{"cls":1,"box":[0,0,1,1]},"o":{"cls":1,"box":[1,1,2,2]},"p":2}"#,
            r#"],"negatives":[{"id":9,"s":{"cls":0,"box":[0,0,1,1]},"o":{"cls":0,"box":[3,3,4,4]}}]}"#
        ))
        .unwrap()
    }

    #[test]
    fn combo_means_and_support() {
        let d = tiny_dataset();
        let text = concat!(
            "{\"triplet_id\":1,\"vector\":[0.1,0.6,0.3]}\n",
            "{\"triplet_id\":2,\"vector\":[0.3,0.2,0.5]}\n",
            "{\"triplet_id\":3,\"vector\":[0.0,0.0,1.0]}\n",
            "{\"negative_id\":9,\"vector\":[0.9,0.05,0.05]}\n",
        );
        let dump = predictions_from_str(text, &d).unwrap();
        let a = dump.combo(ClassTriple::new(0, 1, 1)).unwrap();
        assert_eq!(a.support, 2);
        for (m, e) in a.mean.iter().zip([0.2, 0.4, 0.4]) {
            assert!((m - e).abs() < 1e-15);
        }
        let b = dump.combo(ClassTriple::new(1, 2, 1)).unwrap();
        assert_eq!(b.support, 1);
        assert_eq!(b.mean, vec![0.0, 0.0, 1.0]);
        assert_eq!(dump.per_negative().len(), 1);
    }

    #[test]
    fn prediction_validation() {
        let d = tiny_dataset();
        assert!(predictions_from_str("{\"triplet_id\":1,\"vector\":[0.5,0.5]}", &d).is_err());
        assert!(predictions_from_str("{\"triplet_id\":1,\"vector\":[0.5,0.5,0.5]}", &d).is_err());
        assert!(predictions_from_str("{\"triplet_id\":42,\"vector\":[1,0,0]}", &d).is_err());
        assert!(predictions_from_str("{\"negative_id\":42,\"vector\":[1,0,0]}", &d).is_err());
        let dump =
            predictions_from_str("{\"triplet_id\":1,\"vector\":[0.50003,0.25,0.25]}", &d).unwrap();
        let s: f64 = dump.triplet(1).unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn features_round_trip_and_errors() {
        let mut s = FeatureStore::new(4);
        s.insert(3, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        s.insert(8, 0, vec![-1.0, 0.5, 0.25, 0.0]).unwrap();
        let mut buf = Vec::new();
        write_features(&s, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"TFRG");
        assert_eq!(buf.len(), 16 + 2 * (12 + 16));
        let back = parse_features(&buf, Path::new("x")).unwrap();
        assert_eq!(back, s);
        assert!(parse_features(&buf[..buf.len() - 1], Path::new("x")).is_err());

        let empty = FeatureStore::new(1024);
        let mut buf = Vec::new();
        write_features(&empty, &mut buf).unwrap();
        let back = parse_features(&buf, Path::new("x")).unwrap();
        assert_eq!(back.dim(), 1024);
        assert!(back.is_empty());

        let mut nan = Vec::new();
        nan.extend_from_slice(b"TFRG");
        nan.extend_from_slice(&1u32.to_le_bytes());
        nan.extend_from_slice(&1u32.to_le_bytes());
        nan.extend_from_slice(&1u32.to_le_bytes());
        nan.extend_from_slice(&0u64.to_le_bytes());
        nan.extend_from_slice(&0u32.to_le_bytes());
        nan.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(parse_features(&nan, Path::new("x")).is_err());
    }
}
