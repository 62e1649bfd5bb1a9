//! Object-class sampler weighted by how badly the biased model predicts each
//! completed combination.
//!
//! For a subject/predicate pair the candidate objects are every class that
//! completes a valid triple. Each candidate's difficulty is the gap between
//! the top score of the combination's mean prediction and the score of the
//! ground-truth predicate; candidates are drawn proportionally to it.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::PredictionDump;
use crate::types::{ClassTriple, LabelSpace};

/// Every object class completing `(subject, predicate)` in the label space,
/// ascending.
pub fn candidates(label_space: &LabelSpace, subject: u32, predicate: u32) -> Result<Vec<u32>> {
    let lo = ClassTriple::new(subject, predicate, 0);
    let hi = ClassTriple::new(subject, predicate, u32::MAX);
    let out: Vec<u32> = label_space
        .valid_triples()
        .range(lo..=hi)
        .map(|t| t.object)
        .collect();
    if out.is_empty() {
        return Err(Error::invalid(
            "mp_sampler",
            format!("no candidates for subject {subject}, predicate {predicate}"),
        ));
    }
    Ok(out)
}

/// Difficulty of a combination: `max(l) - l[predicate]` for its mean
/// prediction `l`. Zero when the ground truth attains the maximum.
pub fn difficulty(dump: &PredictionDump, subject: u32, predicate: u32, object: u32) -> Result<f64> {
    let stat = dump
        .combo(ClassTriple::new(subject, predicate, object))
        .ok_or_else(|| {
            Error::invalid(
                "mp_sampler",
                format!("no predictions for combination ({subject}, {predicate}, {object})"),
            )
        })?;
    let top = stat.mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((top - stat.mean[predicate as usize]).max(0.0))
}

/// Sampling distribution proportional to `difficulties`, or uniform when
/// they are all zero. The flag reports the fallback.
pub fn probabilities(difficulties: &[f64]) -> (Vec<f64>, bool) {
    let total: f64 = difficulties.iter().sum();
    if difficulties.is_empty() {
        return (Vec::new(), true);
    }
    if total <= 0.0 {
        let u = 1.0 / difficulties.len() as f64;
        return (vec![u; difficulties.len()], true);
    }
    (difficulties.iter().map(|d| d / total).collect(), false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerEntry {
    pub subject: u32,
    pub predicate: u32,
    pub candidates: Vec<u32>,
    pub difficulty: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub uniform_fallback: bool,
}

impl SamplerEntry {
    /// Inverse-CDF draw.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (c, p) in self.candidates.iter().zip(&self.probabilities) {
            acc += p;
            if u < acc {
                return *c;
            }
        }
        // u landed in the rounding gap above the last cumulative sum
        *self
            .candidates
            .iter()
            .zip(&self.probabilities)
            .rev()
            .find(|(_, &p)| p > 0.0)
            .map(|(c, _)| c)
            .expect("non-empty distribution")
    }
}

/// Per `(subject, predicate)` sampling distribution over object classes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SamplerTable {
    entries: BTreeMap<(u32, u32), SamplerEntry>,
}

impl SamplerTable {
    /// One entry per subject/predicate key of the label space. Candidates
    /// without biased-model support are dropped; keys left without any
    /// candidate are omitted.
    pub fn build(label_space: &LabelSpace, dump: &PredictionDump) -> Self {
        let mut keys: Vec<(u32, u32)> = label_space
            .valid_triples()
            .iter()
            .map(|t| (t.subject, t.predicate))
            .collect();
        keys.dedup();
        let mut entries = BTreeMap::new();
        for (s, p) in keys {
            let Ok(all) = candidates(label_space, s, p) else {
                continue;
            };
            let scored: Vec<(u32, f64)> = all
                .into_iter()
                .filter_map(|o| difficulty(dump, s, p, o).ok().map(|d| (o, d)))
                .collect();
            if scored.is_empty() {
                continue;
            }
            let (cands, diffs): (Vec<u32>, Vec<f64>) = scored.into_iter().unzip();
            let (probs, uniform) = probabilities(&diffs);
            entries.insert(
                (s, p),
                SamplerEntry {
                    subject: s,
                    predicate: p,
                    candidates: cands,
                    difficulty: diffs,
                    probabilities: probs,
                    uniform_fallback: uniform,
                },
            );
        }
        SamplerTable { entries }
    }

    pub fn from_entries(entries: Vec<SamplerEntry>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for e in entries {
            if e.candidates.is_empty()
                || e.candidates.len() != e.probabilities.len()
                || e.candidates.len() != e.difficulty.len()
            {
                return Err(Error::invalid("mp_sampler", "malformed sampler entry"));
            }
            let total: f64 = e.probabilities.iter().sum();
            if (total - 1.0).abs() > 1e-9 || e.probabilities.iter().any(|p| *p < 0.0) {
                return Err(Error::invalid("mp_sampler", "sampler probabilities do not sum to 1"));
            }
            map.insert((e.subject, e.predicate), e);
        }
        Ok(SamplerTable { entries: map })
    }

    pub fn get(&self, subject: u32, predicate: u32) -> Option<&SamplerEntry> {
        self.entries.get(&(subject, predicate))
    }

    pub fn entries(&self) -> impl Iterator<Item = &SamplerEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Draws an object class for `(subject, predicate)`.
    pub fn draw<R: Rng + ?Sized>(&self, subject: u32, predicate: u32, rng: &mut R) -> Result<u32> {
        self.get(subject, predicate)
            .map(|e| e.draw(rng))
            .ok_or_else(|| {
                Error::invalid(
                    "mp_sampler",
                    format!("no sampler entry for subject {subject}, predicate {predicate}"),
                )
            })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "entries": self.entries.values().collect::<Vec<_>>() })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let entries: Vec<SamplerEntry> = serde_json::from_value(v["entries"].clone())
            .map_err(|e| Error::invalid("mp_sampler", format!("bad sampler document: {e}")))?;
        SamplerTable::from_entries(entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::annotations_from_str;
    use crate::rng::substream;
    use std::collections::BTreeSet;

    fn space(triples: &[(u32, u32, u32)]) -> LabelSpace {
        let objs = (0..6).map(|i| format!("o{i}")).collect();
        let preds = (0..4).map(|i| format!("p{i}")).collect();
        let set: BTreeSet<ClassTriple> =
            triples.iter().map(|&(s, p, o)| ClassTriple::new(s, p, o)).collect();
        LabelSpace::new(objs, preds, BTreeMap::new(), set).unwrap()
    }

    #[test]
    fn candidate_examples() {
        // man = 0, horse = 3, bench = 1, on = 2
        let ls = space(&[(0, 2, 3)]);
        assert_eq!(candidates(&ls, 0, 2).unwrap(), vec![3]);
        let ls = space(&[(0, 2, 3), (0, 2, 1), (1, 2, 4), (0, 1, 5)]);
        assert_eq!(candidates(&ls, 0, 2).unwrap(), vec![1, 3]);
        assert!(candidates(&ls, 2, 2).is_err());
    }

    type ComboMean = ((u32, u32, u32), Vec<f64>);

    fn dump_with(means: &[ComboMean]) -> PredictionDump {
        let trips: Vec<String> = means
            .iter()
            .enumerate()
            .map(|(i, ((s, p, o), _))| {
                format!(r#"{{"id":{i},"s":{{"cls":{s},"box":[0,0,1,1]}},"o":{{"cls":{o},"box":[0,0,1,1]}},"p":{p}}}"#)
            })
            .collect();
        let d = annotations_from_str(&format!(
            "{}\n{{\"image_id\":1,\"triplets\":[{}]}}",
            r#"{"label_space":{"objects":["0","1","2","3","4","5"],"predicates":["__background__","1","2"]}}"#,
            trips.join(",")
        ))
        .unwrap();
        let per = means
            .iter()
            .enumerate()
            .map(|(i, (_, v))| (i as u64, v.clone()))
            .collect();
        PredictionDump::from_vectors(&d, per, BTreeMap::new()).unwrap()
    }

    #[test]
    fn difficulty_examples() {
        let dump = dump_with(&[
            ((0, 1, 1), vec![0.1, 0.8, 0.1]),
            ((0, 1, 2), vec![0.6, 0.3, 0.1]),
            ((0, 2, 1), vec![0.0, 0.5, 0.5]),
        ]);
        assert_eq!(difficulty(&dump, 0, 1, 1).unwrap(), 0.0);
        assert!((difficulty(&dump, 0, 1, 2).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(difficulty(&dump, 0, 2, 1).unwrap(), 0.0);
        assert!(difficulty(&dump, 0, 2, 2).is_err());
    }

    #[test]
    fn probability_examples() {
        let (p, u) = probabilities(&[0.3, 0.1, 0.0]);
        assert!(!u);
        assert!((p[0] - 0.75).abs() < 1e-12 && (p[1] - 0.25).abs() < 1e-12 && p[2] == 0.0);
        assert_eq!(probabilities(&[0.0, 0.0]), (vec![0.5, 0.5], true));
        assert_eq!(probabilities(&[0.4]), (vec![1.0], false));
    }

    #[test]
    fn unsupported_combos_are_dropped() {
        let dump = dump_with(&[((0, 1, 1), vec![0.6, 0.3, 0.1])]);
        let ls = space(&[(0, 1, 1), (0, 1, 2)]);
        let table = SamplerTable::build(&ls, &dump);
        let e = table.get(0, 1).unwrap();
        assert_eq!(e.candidates, vec![1]);
        assert_eq!(e.probabilities, vec![1.0]);
    }

    #[test]
    fn draws_match_distribution_and_replay() {
        let e = SamplerEntry {
            subject: 0,
            predicate: 1,
            candidates: vec![4, 7],
            difficulty: vec![0.3, 0.1],
            probabilities: vec![0.75, 0.25],
            uniform_fallback: false,
        };
        let table = SamplerTable::from_entries(vec![e]).unwrap();
        let mut rng = substream(11, "test");
        let n = 10_000;
        let hits = (0..n).filter(|_| table.draw(0, 1, &mut rng).unwrap() == 4).count();
        assert!((hits as f64 / n as f64 - 0.75).abs() < 0.02);
        let a: Vec<u32> = {
            let mut r = substream(3, "x");
            (0..50).map(|_| table.draw(0, 1, &mut r).unwrap()).collect()
        };
        let b: Vec<u32> = {
            let mut r = substream(3, "x");
            (0..50).map(|_| table.draw(0, 1, &mut r).unwrap()).collect()
        };
        assert_eq!(a, b);
        assert!(table.draw(1, 1, &mut rng).is_err());
        let single = SamplerTable::from_entries(vec![SamplerEntry {
            subject: 0,
            predicate: 0,
            candidates: vec![2],
            difficulty: vec![0.0],
            probabilities: vec![1.0],
            uniform_fallback: true,
        }])
        .unwrap();
        assert!((0..100).all(|_| single.draw(0, 0, &mut rng).unwrap() == 2));
    }

    #[test]
    fn json_round_trip() {
        let dump = dump_with(&[
            ((0, 1, 1), vec![0.1, 0.8, 0.1]),
            ((0, 1, 2), vec![0.6, 0.3, 0.1]),
        ]);
        let ls = dump_space();
        let table = SamplerTable::build(&ls, &dump);
        let back = SamplerTable::from_json(&table.to_json()).unwrap();
        assert_eq!(back, table);
    }

    fn dump_space() -> LabelSpace {
        space(&[(0, 1, 1), (0, 1, 2)])
    }
}
