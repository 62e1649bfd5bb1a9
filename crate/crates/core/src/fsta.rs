//! Feature-space triplet augmentation planning.
//!
//! One training step: sample proposal pairs that overlap a ground-truth
//! triplet, enumerate generated-object (`spo'`) and swapped-subject (`s'po`)
//! combinations, undersample the head group, then draw object classes for
//! the generated side from the MP-sampler. The plan is resolved into concrete
//! feature triples separately, and its loss is the mean cross-entropy of the
//! relation head on those triples.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mp_sampler::SamplerTable;
use crate::types::{iou, BBox, ClassTriple, Group, LabelSpace, TripletRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FstaConfig {
    /// Pairs sampled per image.
    pub n_t: usize,
    /// Overlap threshold against ground truth.
    pub s_iou: f64,
    /// Retention probability for head-group artificial triplets.
    pub u_h: f64,
    /// Loss coefficient applied by the caller.
    pub alpha: f64,
    /// Keep swapped-subject triplets only for tail predicates.
    pub tail_only_s_po: bool,
}

impl Default for FstaConfig {
    fn default() -> Self {
        FstaConfig {
            n_t: 2,
            s_iou: 0.7,
            u_h: 0.2,
            alpha: 0.1,
            tail_only_s_po: true,
        }
    }
}

impl FstaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("fsta", m));
        if self.n_t < 1 {
            return bad(format!("n_t = {} must be at least 1", self.n_t));
        }
        if !(0.0..=1.0).contains(&self.s_iou) {
            return bad(format!("s_iou = {} outside [0, 1]", self.s_iou));
        }
        if !(0.0..=1.0).contains(&self.u_h) {
            return bad(format!("u_h = {} outside [0, 1]", self.u_h));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha = {} must be non-negative", self.alpha));
        }
        Ok(())
    }
}

/// A detected region with its predicted class. `instance` keys its feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub instance: u64,
    pub class: u32,
    pub bbox: BBox,
}

/// Proposals and ground truth for one image of the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageProposals {
    pub image_id: u64,
    pub proposals: Vec<Proposal>,
    pub ground_truth: Vec<TripletRecord>,
}

/// A proposal pair matched to a ground-truth triplet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub image_id: u64,
    /// Ground-truth triplet the pair was matched to.
    pub triplet_id: u64,
    pub subject: Proposal,
    pub object: Proposal,
    /// Inherited ground-truth predicate.
    pub predicate: u32,
    /// `min(IoU_subject, IoU_object)` against the matched triplet.
    pub overlap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtificialKind {
    SpoPrime,
    SPrimePo,
}

/// The replaced part of an artificial triplet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Foreign {
    /// Object to be generated; `class` is filled in by the MP-sampler.
    SpoPrime { class: Option<u32> },
    /// Subject taken from another candidate of the batch.
    SPrimePo { donor: usize, donor_triplet_id: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtificialTriplet {
    /// Index of the base candidate within the plan.
    pub base: usize,
    pub base_triplet_id: u64,
    pub predicate: u32,
    pub foreign: Foreign,
}

impl ArtificialTriplet {
    pub fn kind(&self) -> ArtificialKind {
        match self.foreign {
            Foreign::SpoPrime { .. } => ArtificialKind::SpoPrime,
            Foreign::SPrimePo { .. } => ArtificialKind::SPrimePo,
        }
    }

    /// Class combination of the artificial triplet, once fully resolved.
    pub fn classes(&self, candidates: &[Candidate]) -> Option<ClassTriple> {
        let base = candidates.get(self.base)?;
        match self.foreign {
            Foreign::SpoPrime { class } => Some(ClassTriple::new(
                base.subject.class,
                self.predicate,
                class?,
            )),
            Foreign::SPrimePo { donor, .. } => Some(ClassTriple::new(
                candidates.get(donor)?.subject.class,
                self.predicate,
                base.object.class,
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub head: usize,
    pub body: usize,
    pub tail: usize,
}

impl GroupCounts {
    pub fn of(triplets: &[ArtificialTriplet], label_space: &LabelSpace) -> Self {
        let mut c = GroupCounts::default();
        for t in triplets {
            match label_space.group_of(t.predicate) {
                Some(Group::Head) => c.head += 1,
                Some(Group::Body) => c.body += 1,
                Some(Group::Tail) => c.tail += 1,
                None => {}
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.head + self.body + self.tail
    }
}

/// Artificial triplets planned for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub step: u64,
    pub candidates: Vec<Candidate>,
    pub triplets: Vec<ArtificialTriplet>,
    pub counts: GroupCounts,
}

/// Every ordered proposal pair whose boxes overlap some ground-truth
/// triplet's subject and object with `min(IoU) > s_iou`, matched to the
/// best-overlapping triplet (ties to the lower triplet id). Pairs are in
/// ascending `(subject proposal, object proposal)` order.
pub fn candidate_pool(image: &ImageProposals, s_iou: f64) -> Vec<Candidate> {
    let mut pool = Vec::new();
    for (i, s) in image.proposals.iter().enumerate() {
        for (j, o) in image.proposals.iter().enumerate() {
            if i == j {
                continue;
            }
            let mut best: Option<(f64, &TripletRecord)> = None;
            for gt in &image.ground_truth {
                let m = iou(&s.bbox, &gt.subject.bbox).min(iou(&o.bbox, &gt.object.bbox));
                if m <= s_iou {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bm, bt)) => m > bm || (m == bm && gt.triplet_id < bt.triplet_id),
                };
                if better {
                    best = Some((m, gt));
                }
            }
            if let Some((m, gt)) = best {
                pool.push(Candidate {
                    image_id: image.image_id,
                    triplet_id: gt.triplet_id,
                    subject: *s,
                    object: *o,
                    predicate: gt.predicate(),
                    overlap: m,
                });
            }
        }
    }
    pool
}

/// Draws up to `n_t` pool pairs uniformly without replacement, kept in pool
/// order.
pub fn sample_pairs<R: Rng + ?Sized>(
    image: &ImageProposals,
    cfg: &FstaConfig,
    rng: &mut R,
) -> Vec<Candidate> {
    let pool = candidate_pool(image, cfg.s_iou);
    if pool.len() <= cfg.n_t {
        return pool;
    }
    let mut picks = index::sample(rng, pool.len(), cfg.n_t).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|i| pool[i]).collect()
}

/// Generated-object slots, one per candidate whose subject/predicate has a
/// sampler entry. Object classes are left unset.
pub fn spo_prime_slots(candidates: &[Candidate], sampler: &SamplerTable) -> Vec<ArtificialTriplet> {
    candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| sampler.get(c.subject.class, c.predicate).is_some())
        .map(|(i, c)| ArtificialTriplet {
            base: i,
            base_triplet_id: c.triplet_id,
            predicate: c.predicate,
            foreign: Foreign::SpoPrime { class: None },
        })
        .collect()
}

/// Fills every generated-object slot with a class drawn from the sampler,
/// in slot order.
pub fn assign_object_classes<R: Rng + ?Sized>(
    triplets: &mut [ArtificialTriplet],
    candidates: &[Candidate],
    sampler: &SamplerTable,
    rng: &mut R,
) -> Result<()> {
    for t in triplets {
        if let Foreign::SpoPrime { class } = &mut t.foreign {
            let base = candidates
                .get(t.base)
                .ok_or_else(|| Error::invalid("fsta", format!("base {} out of range", t.base)))?;
            *class = Some(sampler.draw(base.subject.class, t.predicate, rng)?);
        }
    }
    Ok(())
}

/// `spo'` combinations with their object classes drawn.
pub fn enum_spo_prime<R: Rng + ?Sized>(
    candidates: &[Candidate],
    sampler: &SamplerTable,
    rng: &mut R,
) -> Result<Vec<ArtificialTriplet>> {
    let mut out = spo_prime_slots(candidates, sampler);
    assign_object_classes(&mut out, candidates, sampler, rng)?;
    Ok(out)
}

/// `s'po` combinations: every base paired with every other candidate's
/// subject, kept when the swapped triple is valid (and tail, if configured).
pub fn enum_s_prime_po(
    candidates: &[Candidate],
    label_space: &LabelSpace,
    cfg: &FstaConfig,
) -> Vec<ArtificialTriplet> {
    let mut out = Vec::new();
    for (b, base) in candidates.iter().enumerate() {
        if cfg.tail_only_s_po && label_space.group_of(base.predicate) != Some(Group::Tail) {
            continue;
        }
        for (d, donor) in candidates.iter().enumerate() {
            if d == b {
                continue;
            }
            let t = ClassTriple::new(donor.subject.class, base.predicate, base.object.class);
            if label_space.is_valid(t) {
                out.push(ArtificialTriplet {
                    base: b,
                    base_triplet_id: base.triplet_id,
                    predicate: base.predicate,
                    foreign: Foreign::SPrimePo {
                        donor: d,
                        donor_triplet_id: donor.triplet_id,
                    },
                });
            }
        }
    }
    out
}

/// Keeps each head-group triplet independently with probability `u_h`.
/// Body and tail triplets pass through and draw no randomness.
pub fn undersample<R: Rng + ?Sized>(
    triplets: Vec<ArtificialTriplet>,
    label_space: &LabelSpace,
    u_h: f64,
    rng: &mut R,
) -> Vec<ArtificialTriplet> {
    triplets
        .into_iter()
        .filter(|t| label_space.group_of(t.predicate) != Some(Group::Head) || rng.random_bool(u_h))
        .collect()
}

/// Plans one step: sample → enumerate both sets → undersample both → draw
/// object classes.
pub fn plan_step<R: Rng + ?Sized>(
    step: u64,
    batch: &[ImageProposals],
    sampler: &SamplerTable,
    label_space: &LabelSpace,
    cfg: &FstaConfig,
    rng: &mut R,
) -> Result<AugmentationPlan> {
    cfg.validate()?;
    let mut candidates = Vec::new();
    for image in batch {
        candidates.extend(sample_pairs(image, cfg, rng));
    }
    let spo = spo_prime_slots(&candidates, sampler);
    let spo_s = enum_s_prime_po(&candidates, label_space, cfg);
    let mut spo = undersample(spo, label_space, cfg.u_h, rng);
    let spo_s = undersample(spo_s, label_space, cfg.u_h, rng);
    assign_object_classes(&mut spo, &candidates, sampler, rng)?;
    let mut triplets = spo;
    triplets.extend(spo_s);
    let counts = GroupCounts::of(&triplets, label_space);
    Ok(AugmentationPlan {
        step,
        candidates,
        triplets,
        counts,
    })
}

/// Access to the real features behind candidates.
pub trait TripletFeatures {
    fn subject(&self, c: &Candidate) -> Result<Vec<f64>>;
    fn predicate(&self, c: &Candidate) -> Result<Vec<f64>>;
    fn object(&self, c: &Candidate) -> Result<Vec<f64>>;
}

/// Source of synthetic object features for a requested class.
pub trait ObjectGenerator {
    fn generate(&self, class: u32, rng: &mut dyn rand::RngCore) -> Result<Vec<f64>>;
}

/// Relation head evaluated on one `(subject, predicate, object)` triple.
pub trait RelationEvaluator {
    fn predict(&self, subject: &[f64], predicate: &[f64], object: &[f64]) -> Result<Vec<f64>>;
}

/// Concrete features of one artificial triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedTriplet {
    pub subject: Vec<f64>,
    pub predicate_feature: Vec<f64>,
    pub object: Vec<f64>,
    pub predicate: u32,
}

/// Replaces the foreign part of every planned triplet with real or
/// generated features, in plan order.
pub fn resolve_plan<F, G>(
    plan: &AugmentationPlan,
    features: &F,
    generator: &G,
    rng: &mut dyn rand::RngCore,
) -> Result<Vec<ResolvedTriplet>>
where
    F: TripletFeatures + ?Sized,
    G: ObjectGenerator + ?Sized,
{
    let mut out = Vec::with_capacity(plan.triplets.len());
    for t in &plan.triplets {
        let base = plan
            .candidates
            .get(t.base)
            .ok_or_else(|| Error::invalid("fsta", format!("base {} out of range", t.base)))?;
        let (subject, object) = match t.foreign {
            Foreign::SpoPrime { class } => {
                let class = class.ok_or_else(|| {
                    Error::invalid("fsta", "generated-object slot without a class")
                })?;
                (features.subject(base)?, generator.generate(class, rng)?)
            }
            Foreign::SPrimePo { donor, .. } => {
                let donor = plan.candidates.get(donor).ok_or_else(|| {
                    Error::invalid("fsta", format!("donor {donor} out of range"))
                })?;
                (features.subject(donor)?, features.object(base)?)
            }
        };
        out.push(ResolvedTriplet {
            subject,
            predicate_feature: features.predicate(base)?,
            object,
            predicate: t.predicate,
        });
    }
    Ok(out)
}

/// Mean cross-entropy of the relation head against each artificial
/// triplet's predicate. Zero for an empty plan; the caller scales by alpha.
pub fn l_at<E: RelationEvaluator + ?Sized>(resolved: &[ResolvedTriplet], head: &E) -> Result<f64> {
    if resolved.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for r in resolved {
        let probs = head.predict(&r.subject, &r.predicate_feature, &r.object)?;
        let p = *probs.get(r.predicate as usize).ok_or_else(|| {
            Error::invalid("fsta", format!("predicate {} outside head output", r.predicate))
        })?;
        total += -p.max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / resolved.len() as f64)
}
