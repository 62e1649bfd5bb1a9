//! Domain types shared by every pipeline stage: the label space, boxes,
//! soft predicate labels and annotated triplets.
//!
//! Predicate index 0 is always the background / no-relation class. It never
//! belongs to a frequency group and is never assigned by any transfer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the background (no-relation) predicate.
pub const BACKGROUND: u32 = 0;

/// Tolerance on the total mass of a [`SoftLabel`].
pub const SOFT_LABEL_TOLERANCE: f64 = 1e-9;

/// Predicate frequency group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Head,
    Body,
    Tail,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Head, Group::Body, Group::Tail];

    pub fn name(self) -> &'static str {
        match self {
            Group::Head => "head",
            Group::Body => "body",
            Group::Tail => "tail",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A (subject class, predicate class, object class) combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 3]", into = "[u32; 3]")]
pub struct ClassTriple {
    pub subject: u32,
    pub predicate: u32,
    pub object: u32,
}

impl ClassTriple {
    pub fn new(subject: u32, predicate: u32, object: u32) -> Self {
        ClassTriple {
            subject,
            predicate,
            object,
        }
    }
}

impl From<[u32; 3]> for ClassTriple {
    fn from([subject, predicate, object]: [u32; 3]) -> Self {
        ClassTriple::new(subject, predicate, object)
    }
}

impl From<ClassTriple> for [u32; 3] {
    fn from(t: ClassTriple) -> Self {
        [t.subject, t.predicate, t.object]
    }
}

/// Number of items making up `percent`% of `n`, rounded down.
pub fn percent_count(percent: f64, n: usize) -> usize {
    // The epsilon absorbs representation error in products like 0.7 * 10.
    let raw = (percent * n as f64) / 100.0;
    ((raw + 1e-9).floor() as usize).min(n)
}

/// Group sizes for a predicate space of `n` non-background classes, split
/// 16/17/17 out of 50 with nearest-integer rounding.
pub fn group_sizes(n: usize) -> (usize, usize, usize) {
    let head = ((n as f64) * 16.0 / 50.0).round() as usize;
    let body = ((n as f64) * 17.0 / 50.0).round() as usize;
    let head = head.min(n);
    let body = body.min(n - head);
    (head, body, n - head - body)
}

/// Assigns every predicate in `counts` to head, body or tail by descending
/// training count. Ties are broken by ascending class index. The background
/// class is ignored if present.
pub fn group_predicates(counts: &BTreeMap<u32, u64>) -> Result<BTreeMap<u32, Group>> {
    let mut ranked: Vec<(u32, u64)> = counts
        .iter()
        .filter(|(&p, _)| p != BACKGROUND)
        .map(|(&p, &c)| (p, c))
        .collect();
    if ranked.is_empty() {
        return Err(Error::invalid("core", "cannot group an empty predicate count map"));
    }
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let (head, body, _) = group_sizes(ranked.len());
    Ok(ranked
        .into_iter()
        .enumerate()
        .map(|(rank, (p, _))| {
            let g = if rank < head {
                Group::Head
            } else if rank < head + body {
                Group::Body
            } else {
                Group::Tail
            };
            (p, g)
        })
        .collect())
}

/// Axis-aligned box in continuous image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(Error::invalid(
                "core",
                format!("malformed box [{x1}, {y1}, {x2}, {y2}]"),
            ));
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    /// Intersection over union.
    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from([x1, y1, x2, y2]: [f64; 4]) -> Result<Self> {
        BBox::new(x1, y1, x2, y2)
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// Intersection area over union area of two valid boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Sparse probability distribution over predicate classes.
///
/// Entries are kept sorted by class and zero-mass entries are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel {
    entries: Vec<(u32, f64)>,
}

impl SoftLabel {
    pub fn one_hot(class: u32) -> Self {
        SoftLabel {
            entries: vec![(class, 1.0)],
        }
    }

    /// Builds a label from `(class, probability)` pairs. Duplicate classes are
    /// summed; the total must be 1 within [`SOFT_LABEL_TOLERANCE`].
    pub fn from_entries<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, f64)>,
    {
        let mut merged: BTreeMap<u32, f64> = BTreeMap::new();
        for (c, p) in entries {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(
                    "core",
                    format!("soft label probability {p} for class {c} outside [0, 1]"),
                ));
            }
            *merged.entry(c).or_insert(0.0) += p;
        }
        let total: f64 = merged.values().sum();
        if (total - 1.0).abs() > SOFT_LABEL_TOLERANCE {
            return Err(Error::invalid(
                "core",
                format!("soft label mass sums to {total}, expected 1"),
            ));
        }
        let entries: Vec<(u32, f64)> = merged.into_iter().filter(|&(_, p)| p > 0.0).collect();
        if entries.is_empty() {
            return Err(Error::invalid("core", "soft label has no mass"));
        }
        Ok(SoftLabel { entries })
    }

    /// Two-class transfer label: `target` gets `1/(1+q)` and `source` gets
    /// `q/(1+q)`.
    pub fn transfer(target: u32, source: u32, q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::invalid(
                "soft_transfer",
                format!("mapped reliability {q} outside [0, 1]"),
            ));
        }
        if target == source {
            return Err(Error::invalid(
                "soft_transfer",
                format!("source and target are both class {target}"),
            ));
        }
        let src = q / (1.0 + q);
        let tar = 1.0 - src;
        let mut entries = vec![(target, tar)];
        if src > 0.0 {
            entries.push((source, src));
        }
        entries.sort_by_key(|e| e.0);
        Ok(SoftLabel { entries })
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn prob(&self, class: u32) -> f64 {
        self.entries
            .iter()
            .find(|e| e.0 == class)
            .map_or(0.0, |e| e.1)
    }

    /// Most probable class; ties go to the lowest class index.
    pub fn argmax(&self) -> u32 {
        let mut best = self.entries[0];
        for &e in &self.entries[1..] {
            if e.1 > best.1 {
                best = e;
            }
        }
        best.0
    }

    pub fn is_one_hot(&self) -> bool {
        self.entries.len() == 1
    }

    pub fn support(&self) -> usize {
        self.entries.len()
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }
}

/// One side of a relation: a class and its box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectRef {
    pub class: u32,
    pub bbox: BBox,
}

/// One annotated relation instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletRecord {
    pub triplet_id: u64,
    pub image_id: u64,
    pub subject: ObjectRef,
    pub object: ObjectRef,
    pub label: SoftLabel,
}

impl TripletRecord {
    /// Hard predicate: the label's most probable class.
    pub fn predicate(&self) -> u32 {
        self.label.argmax()
    }

    pub fn class_triple(&self) -> ClassTriple {
        ClassTriple::new(self.subject.class, self.predicate(), self.object.class)
    }

    /// Feature-store instance id of the subject.
    pub fn subject_instance(&self) -> u64 {
        subject_instance_id(self.triplet_id)
    }

    /// Feature-store instance id of the object.
    pub fn object_instance(&self) -> u64 {
        object_instance_id(self.triplet_id)
    }
}

/// Instance id under which a triplet's subject feature is stored.
pub fn subject_instance_id(triplet_id: u64) -> u64 {
    triplet_id * 2
}

/// Instance id under which a triplet's object feature is stored.
pub fn object_instance_id(triplet_id: u64) -> u64 {
    triplet_id * 2 + 1
}

/// Object and predicate vocabularies plus the combinations seen in training.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSpace {
    object_classes: Vec<String>,
    predicate_classes: Vec<String>,
    groups: BTreeMap<u32, Group>,
    valid_triples: BTreeSet<ClassTriple>,
}

impl LabelSpace {
    pub fn new(
        object_classes: Vec<String>,
        predicate_classes: Vec<String>,
        groups: BTreeMap<u32, Group>,
        valid_triples: BTreeSet<ClassTriple>,
    ) -> Result<Self> {
        if predicate_classes.is_empty() {
            return Err(Error::invalid(
                "core",
                "predicate vocabulary must contain the background class",
            ));
        }
        let n_pred = predicate_classes.len() as u32;
        let n_obj = object_classes.len() as u32;
        let expected: BTreeSet<u32> = (1..n_pred).collect();
        let grouped: BTreeSet<u32> = groups.keys().copied().collect();
        if !groups.is_empty() && grouped != expected {
            return Err(Error::invalid(
                "core",
                "groups must cover every non-background predicate exactly once",
            ));
        }
        for t in &valid_triples {
            if t.subject >= n_obj || t.object >= n_obj || t.predicate >= n_pred {
                return Err(Error::invalid(
                    "core",
                    format!("valid triple {:?} references an out-of-range class", t),
                ));
            }
            if t.predicate == BACKGROUND {
                return Err(Error::invalid("core", "valid triples cannot use background"));
            }
        }
        Ok(LabelSpace {
            object_classes,
            predicate_classes,
            groups,
            valid_triples,
        })
    }

    /// Builds a label space whose groups come from training counts. Predicates
    /// absent from `counts` are treated as having zero instances.
    pub fn from_counts(
        object_classes: Vec<String>,
        predicate_classes: Vec<String>,
        counts: &BTreeMap<u32, u64>,
        valid_triples: BTreeSet<ClassTriple>,
    ) -> Result<Self> {
        let n_pred = predicate_classes.len() as u32;
        let groups = if n_pred > 1 {
            let full: BTreeMap<u32, u64> = (1..n_pred)
                .map(|p| (p, counts.get(&p).copied().unwrap_or(0)))
                .collect();
            group_predicates(&full)?
        } else {
            BTreeMap::new()
        };
        LabelSpace::new(object_classes, predicate_classes, groups, valid_triples)
    }

    pub fn object_classes(&self) -> &[String] {
        &self.object_classes
    }

    pub fn predicate_classes(&self) -> &[String] {
        &self.predicate_classes
    }

    pub fn num_objects(&self) -> usize {
        self.object_classes.len()
    }

    pub fn num_predicates(&self) -> usize {
        self.predicate_classes.len()
    }

    pub fn groups(&self) -> &BTreeMap<u32, Group> {
        &self.groups
    }

    pub fn group_of(&self, predicate: u32) -> Option<Group> {
        self.groups.get(&predicate).copied()
    }

    pub fn valid_triples(&self) -> &BTreeSet<ClassTriple> {
        &self.valid_triples
    }

    pub fn is_valid(&self, t: ClassTriple) -> bool {
        self.valid_triples.contains(&t)
    }

    pub fn predicate_name(&self, p: u32) -> &str {
        &self.predicate_classes[p as usize]
    }

    pub fn predicate_index(&self, name: &str) -> Option<u32> {
        self.predicate_classes
            .iter()
            .position(|n| n == name)
            .map(|i| i as u32)
    }

    pub fn object_index(&self, name: &str) -> Option<u32> {
        self.object_classes
            .iter()
            .position(|n| n == name)
            .map(|i| i as u32)
    }

    /// Same vocabularies with the groups replaced.
    pub fn with_groups(&self, groups: BTreeMap<u32, Group>) -> Result<Self> {
        LabelSpace::new(
            self.object_classes.clone(),
            self.predicate_classes.clone(),
            groups,
            self.valid_triples.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn fifty_predicates_split_16_17_17() {
        let counts: BTreeMap<u32, u64> = (1..=50).map(|p| (p, 1000 - p as u64 * 7)).collect();
        let groups = group_predicates(&counts).unwrap();
        let count = |g| groups.values().filter(|&&x| x == g).count();
        assert_eq!(count(Group::Head), 16);
        assert_eq!(count(Group::Body), 17);
        assert_eq!(count(Group::Tail), 17);
        assert_eq!(groups[&1], Group::Head);
        assert_eq!(groups[&16], Group::Head);
        assert_eq!(groups[&17], Group::Body);
        assert_eq!(groups[&50], Group::Tail);
    }

    #[test]
    fn three_predicates_one_each() {
        let counts = BTreeMap::from([(1, 10), (2, 5), (3, 1)]);
        let groups = group_predicates(&counts).unwrap();
        assert_eq!(groups[&1], Group::Head);
        assert_eq!(groups[&2], Group::Body);
        assert_eq!(groups[&3], Group::Tail);
    }

    #[test]
    fn empty_counts_rejected() {
        assert!(group_predicates(&BTreeMap::new()).is_err());
        assert!(group_predicates(&BTreeMap::from([(0, 5)])).is_err());
    }

    #[test]
    fn group_sizes_sum_to_total() {
        for n in 0..200 {
            let (h, b, t) = group_sizes(n);
            assert_eq!(h + b + t, n);
        }
        assert_eq!(group_sizes(9), (3, 3, 3));
    }

    proptest! {
        #[test]
        fn ties_follow_stable_sort_oracle(counts in proptest::collection::vec(0u64..4, 1..40)) {
            let map: BTreeMap<u32, u64> =
                counts.iter().enumerate().map(|(i, &c)| (i as u32 + 1, c)).collect();
            let groups = group_predicates(&map).unwrap();
            // Oracle: stable sort by descending count over ascending indices.
            let mut order: Vec<u32> = map.keys().copied().collect();
            order.sort_by(|a, b| map[b].cmp(&map[a]));
            let (h, bd, _) = group_sizes(order.len());
            for (rank, p) in order.iter().enumerate() {
                let expected = if rank < h { Group::Head } else if rank < h + bd { Group::Body } else { Group::Tail };
                prop_assert_eq!(groups[p], expected);
            }
        }

        #[test]
        fn iou_is_symmetric_and_bounded(
            a in (0.0f64..50.0, 0.0f64..50.0, 0.1f64..30.0, 0.1f64..30.0),
            c in (0.0f64..50.0, 0.0f64..50.0, 0.1f64..30.0, 0.1f64..30.0),
        ) {
            let ba = b(a.0, a.1, a.0 + a.2, a.1 + a.3);
            let bc = b(c.0, c.1, c.0 + c.2, c.1 + c.3);
            let x = iou(&ba, &bc);
            prop_assert_eq!(x, iou(&bc, &ba));
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert_eq!(iou(&a, &b(2.0, 0.0, 3.0, 2.0)), 0.0);
        let x = iou(&a, &b(1.0, 1.0, 3.0, 3.0));
        assert!((x - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn malformed_boxes_rejected() {
        assert!(BBox::new(1.0, 0.0, 1.0, 2.0).is_err());
        assert!(BBox::new(0.0, 3.0, 1.0, 2.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn soft_label_validation() {
        let l = SoftLabel::from_entries([(3, 0.76), (1, 0.24)]).unwrap();
        assert_eq!(l.entries(), &[(1, 0.24), (3, 0.76)]);
        assert_eq!(l.argmax(), 3);
        assert!(SoftLabel::from_entries([(1, 0.5), (2, 0.4)]).is_err());
        assert!(SoftLabel::from_entries([(1, 1.5), (2, -0.5)]).is_err());
        let tie = SoftLabel::from_entries([(4, 0.5), (2, 0.5)]).unwrap();
        assert_eq!(tie.argmax(), 2);
        let full = SoftLabel::transfer(5, 2, 0.0).unwrap();
        assert!(full.is_one_hot());
        assert_eq!(full.prob(2), 0.0);
    }

    #[test]
    fn label_space_rejects_bad_groups() {
        let objs = vec!["a".to_string(), "b".to_string()];
        let preds = vec!["__background__".to_string(), "on".to_string(), "in".to_string()];
        let groups = BTreeMap::from([(1, Group::Head)]);
        assert!(LabelSpace::new(objs.clone(), preds.clone(), groups, BTreeSet::new()).is_err());
        let triples = BTreeSet::from([ClassTriple::new(0, 1, 5)]);
        assert!(LabelSpace::new(objs, preds, BTreeMap::new(), triples).is_err());
    }
}
