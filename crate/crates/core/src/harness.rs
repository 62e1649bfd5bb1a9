//! Desk-scale synthetic experiment.
//!
//! Generates a long-tailed relation dataset in which some rare, informative
//! predicates are often annotated as a frequent, general look-alike. A small
//! relation head is trained on the raw labels to act as the biased model,
//! and the transfer and augmentation variants are compared on a test split
//! drawn from the same annotation process.
//!
//! Each triplet owns its subject and object boxes; object features are
//! class-conditional Gaussians and the predicate feature is a fixed function
//! of pair geometry.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featgen::{self, argmax, softmax, Activation, GanConfig, GanState, Mlp, MlpGrad};
use crate::fsta::{self, Candidate, FstaConfig, ImageProposals, Proposal, RelationEvaluator, TripletFeatures};
use crate::ietrans;
use crate::ingest::{Dataset, FeatureStore, Image, NegativePair, PredictionDump};
use crate::metrics::{self, EvalReport, PredictedRelation};
use crate::mp_sampler::SamplerTable;
use crate::rng::substream;
use crate::soft_transfer::{self, QMode};
use crate::types::{
    object_instance_id, subject_instance_id, BBox, ClassTriple, Group, LabelSpace, ObjectRef, SoftLabel,
    TripletRecord, BACKGROUND,
};

const MODULE: &str = "harness";

fn invalid(msg: impl Into<String>) -> Error {
    Error::invalid(MODULE, msg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionPair {
    pub general: u32,
    pub informative: u32,
    /// Fraction of informative instances annotated as the general predicate.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_object_classes: usize,
    pub n_predicates: usize,
    /// Latent predicate `i` (1-based) has weight `i^-exponent`.
    pub tail_exponent: f64,
    pub confusion: Vec<ConfusionPair>,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub geometry_noise: f64,
    pub train_triplets: usize,
    pub test_triplets: usize,
    pub triplets_per_image: usize,
    /// No-relation pairs kept per training image.
    pub negatives_per_image: usize,
    /// Size of each predicate's subject and object class sets.
    pub classes_per_role: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_object_classes: 12,
            n_predicates: 9,
            tail_exponent: 1.0,
            confusion: vec![
                ConfusionPair { general: 4, informative: 7, rate: 0.5 },
                ConfusionPair { general: 5, informative: 8, rate: 0.5 },
                ConfusionPair { general: 6, informative: 9, rate: 0.5 },
            ],
            feature_dim: 16,
            feature_noise: 0.5,
            geometry_noise: 0.3,
            train_triplets: 5000,
            test_triplets: 1500,
            triplets_per_image: 3,
            negatives_per_image: 3,
            classes_per_role: 4,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_object_classes < 2 || self.n_predicates < 1 {
            return Err(invalid("need at least 2 object classes and 1 predicate"));
        }
        if self.classes_per_role < 2 || self.classes_per_role > self.n_object_classes {
            return Err(invalid("classes_per_role must lie in [2, n_object_classes]"));
        }
        if self.feature_dim == 0 || self.triplets_per_image == 0 {
            return Err(invalid("feature_dim and triplets_per_image must be positive"));
        }
        if !(self.tail_exponent >= 0.0 && self.feature_noise >= 0.0 && self.geometry_noise >= 0.0) {
            return Err(invalid("exponent and noise scales must be non-negative"));
        }
        let mut seen = BTreeSet::new();
        for c in &self.confusion {
            if !(0.0..=1.0).contains(&c.rate) {
                return Err(invalid(format!("confusion rate {} outside [0, 1]", c.rate)));
            }
            let n = self.n_predicates as u32;
            if c.general == 0 || c.informative == 0 || c.general > n || c.informative > n {
                return Err(invalid("confusion pair names an unknown predicate"));
            }
            if c.informative <= c.general {
                return Err(invalid(format!(
                    "informative predicate {} must be rarer than {}",
                    c.informative, c.general
                )));
            }
            if !seen.insert(c.informative) {
                return Err(invalid(format!("predicate {} confused twice", c.informative)));
            }
        }
        Ok(())
    }

    fn general_of(&self, q: u32) -> Option<&ConfusionPair> {
        self.confusion.iter().find(|c| c.informative == q)
    }
}

/// Geometry of the object box relative to the subject box, squashed to a
/// bounded range. This is the predicate-slot feature.
pub fn pair_feature(s: &BBox, o: &BBox) -> Vec<f64> {
    let (sx, sy) = s.center();
    let (ox, oy) = o.center();
    vec![
        ((ox - sx) / s.width() / 2.0).tanh(),
        ((oy - sy) / s.height() / 2.0).tanh(),
        (o.width() / s.width()).ln(),
        (o.height() / s.height()).ln(),
    ]
}

pub const PAIR_FEATURE_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthObject {
    pub class: u32,
    pub bbox: BBox,
    pub feature: Vec<f64>,
}

/// One split: annotations, the objects behind them and the latent labels.
#[derive(Debug, Clone)]
pub struct SynthSplit {
    pub dataset: Dataset,
    pub objects: Vec<SynthObject>,
    pub image_objects: BTreeMap<u64, Vec<usize>>,
    /// True predicate of every triplet before annotation confusion.
    pub latent: BTreeMap<u64, u32>,
    index: HashMap<(u64, [u64; 4]), usize>,
}

fn box_key(b: &BBox) -> [u64; 4] {
    [b.x1.to_bits(), b.y1.to_bits(), b.x2.to_bits(), b.y2.to_bits()]
}

impl SynthSplit {
    pub fn object_at(&self, image_id: u64, bbox: &BBox) -> Option<usize> {
        self.index.get(&(image_id, box_key(bbox))).copied()
    }

    /// Object features keyed by triplet instance ids.
    pub fn feature_store(&self) -> Result<FeatureStore> {
        let mut store = FeatureStore::new(self.objects.first().map_or(1, |o| o.feature.len()));
        for t in self.dataset.triplets() {
            for (id, obj) in [
                (subject_instance_id(t.triplet_id), &t.subject),
                (object_instance_id(t.triplet_id), &t.object),
            ] {
                let i = self.object_at(t.image_id, &obj.bbox).ok_or_else(|| invalid("unindexed box"))?;
                store.insert(id, obj.class, self.objects[i].feature.iter().map(|&v| v as f32).collect())?;
            }
        }
        Ok(store)
    }

    fn lookup(&self, image_id: u64, o: &ObjectRef) -> Result<usize> {
        self.object_at(image_id, &o.bbox)
            .ok_or_else(|| invalid(format!("no object at the given box in image {image_id}")))
    }
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub spec: SynthSpec,
    pub train: SynthSplit,
    pub test: SynthSplit,
}

struct Grammar {
    subjects: Vec<Vec<u32>>,
    objects: Vec<Vec<u32>>,
    geometry: Vec<[f64; 4]>,
    class_means: Vec<Vec<f64>>,
}

fn grammar(spec: &SynthSpec) -> Grammar {
    let mut rng = substream(spec.seed, "harness-grammar");
    let n_obj = spec.n_object_classes as u32;
    let all: Vec<u32> = (0..n_obj).collect();
    let n = spec.n_predicates + 1;
    let mut subjects = vec![Vec::new(); n];
    let mut objects = vec![Vec::new(); n];
    let mut geometry = vec![[0.0; 4]; n];
    let k = spec.classes_per_role;
    for p in 1..n {
        let pick = |rng: &mut crate::rng::Rng, from: &[u32], m: usize| {
            let mut v: Vec<u32> = from.choose_multiple(rng, m.min(from.len())).copied().collect();
            v.sort_unstable();
            v
        };
        let theta = std::f64::consts::TAU * (p - 1) as f64 / spec.n_predicates as f64;
        match spec.general_of(p as u32) {
            Some(c) => {
                let g = c.general as usize;
                let half = (k / 2).max(1);
                subjects[p] = pick(&mut rng, &subjects[g].clone(), half);
                objects[p] = pick(&mut rng, &objects[g].clone(), half);
                let base = geometry[g];
                geometry[p] = [base[0] + 0.35, base[1] - 0.3, base[2] + 0.4, base[3] + 0.4];
            }
            None => {
                subjects[p] = pick(&mut rng, &all, k);
                objects[p] = pick(&mut rng, &all, k);
                geometry[p] = [0.7 * theta.cos(), 0.7 * theta.sin(), 0.5 * (3.0 * theta).sin(), 0.5 * (2.0 * theta).cos()];
            }
        }
    }
    let class_means = (0..n_obj)
        .map(|_| (0..spec.feature_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    Grammar {
        subjects,
        objects,
        geometry,
        class_means,
    }
}

fn label_space(spec: &SynthSpec, g: &Grammar) -> Result<LabelSpace> {
    let mut triples = BTreeSet::new();
    for p in 1..=spec.n_predicates {
        for &s in &g.subjects[p] {
            for &o in &g.objects[p] {
                triples.insert(ClassTriple::new(s, p as u32, o));
            }
        }
    }
    let objs = (0..spec.n_object_classes).map(|i| format!("obj{i}")).collect();
    let mut preds = vec![crate::ingest::BACKGROUND_NAME.to_string()];
    preds.extend((1..=spec.n_predicates).map(|i| format!("pred{i}")));
    LabelSpace::new(objs, preds, BTreeMap::new(), triples)
}

fn generate_split(
    spec: &SynthSpec,
    g: &Grammar,
    ls: &LabelSpace,
    n_triplets: usize,
    negatives_per_image: usize,
    stream: &str,
) -> Result<SynthSplit> {
    let mut rng = substream(spec.seed, stream);
    let weights: Vec<f64> = (1..=spec.n_predicates)
        .map(|i| (i as f64).powf(-spec.tail_exponent))
        .collect();
    let pick = WeightedIndex::new(&weights).map_err(|e| invalid(e.to_string()))?;
    let geo = Normal::new(0.0, spec.geometry_noise.max(1e-12)).map_err(|e| invalid(e.to_string()))?;
    let feat = Normal::new(0.0, spec.feature_noise.max(1e-12)).map_err(|e| invalid(e.to_string()))?;
    let mut objects = Vec::new();
    let mut images = BTreeMap::new();
    let mut image_objects = BTreeMap::new();
    let mut latent = BTreeMap::new();
    let mut index = HashMap::new();
    let mut tid = 0u64;
    let mut nid = 0u64;
    let n_images = n_triplets.div_ceil(spec.triplets_per_image);
    for image_id in 0..n_images as u64 {
        let mut triplets = Vec::new();
        let mut members = Vec::new();
        let count = spec.triplets_per_image.min(n_triplets - tid as usize);
        for slot in 0..count {
            let p = pick.sample(&mut rng) as u32 + 1;
            let s = *g.subjects[p as usize].choose(&mut rng).unwrap_or(&0);
            let o = *g.objects[p as usize].choose(&mut rng).unwrap_or(&0);
            let m = g.geometry[p as usize];
            let w = rng.random_range(10.0..20.0);
            let h = rng.random_range(10.0..20.0);
            let cx = 200.0 * slot as f64 + 100.0 + rng.random_range(-10.0..10.0);
            let cy = 100.0 + rng.random_range(-10.0..10.0);
            let sb = BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)?;
            let (dx, dy) = (m[0] + geo.sample(&mut rng), m[1] + geo.sample(&mut rng));
            let ow = w * (m[2] + geo.sample(&mut rng)).exp();
            let oh = h * (m[3] + geo.sample(&mut rng)).exp();
            let (ocx, ocy) = (cx + 2.0 * w * dx.clamp(-0.99, 0.99).atanh(), cy + 2.0 * h * dy.clamp(-0.99, 0.99).atanh());
            let ob = BBox::new(ocx - ow / 2.0, ocy - oh / 2.0, ocx + ow / 2.0, ocy + oh / 2.0)?;
            let observed = match spec.general_of(p) {
                Some(c) if rng.random_bool(c.rate) => c.general,
                _ => p,
            };
            for (class, bbox) in [(s, sb), (o, ob)] {
                let feature = g.class_means[class as usize]
                    .iter()
                    .map(|mu| mu + feat.sample(&mut rng))
                    .collect();
                index.insert((image_id, box_key(&bbox)), objects.len());
                members.push(objects.len());
                objects.push(SynthObject { class, bbox, feature });
            }
            latent.insert(tid, p);
            triplets.push(TripletRecord {
                triplet_id: tid,
                image_id,
                subject: ObjectRef { class: s, bbox: sb },
                object: ObjectRef { class: o, bbox: ob },
                label: SoftLabel::one_hot(observed),
            });
            tid += 1;
        }
        let mut pairs = Vec::new();
        for &a in &members {
            for &b in &members {
                if a != b && a / 2 != b / 2 {
                    pairs.push((a, b));
                }
            }
        }
        let related: BTreeSet<(usize, usize)> = members.chunks(2).map(|c| (c[0], c[1])).collect();
        pairs.retain(|pr| !related.contains(pr));
        let chosen: Vec<(usize, usize)> = pairs
            .choose_multiple(&mut rng, negatives_per_image.min(pairs.len()))
            .copied()
            .collect();
        let negatives = chosen
            .into_iter()
            .map(|(a, b)| {
                let n = NegativePair {
                    id: nid,
                    image_id,
                    subject: ObjectRef { class: objects[a].class, bbox: objects[a].bbox },
                    object: ObjectRef { class: objects[b].class, bbox: objects[b].bbox },
                };
                nid += 1;
                n
            })
            .collect();
        image_objects.insert(image_id, members);
        images.insert(
            image_id,
            Image {
                image_id,
                triplets,
                negatives,
            },
        );
    }
    Ok(SynthSplit {
        dataset: Dataset::new(ls.clone(), images)?,
        objects,
        image_objects,
        latent,
        index,
    })
}

/// Builds both splits. Groups come from the training annotations and are
/// shared by the test split.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthWorld> {
    spec.validate()?;
    let g = grammar(spec);
    let ls = label_space(spec, &g)?;
    let mut train = generate_split(spec, &g, &ls, spec.train_triplets, spec.negatives_per_image, "harness-train-split")?;
    let mut test = generate_split(spec, &g, &ls, spec.test_triplets, 0, "harness-test-split")?;
    let ls = LabelSpace::from_counts(
        ls.object_classes().to_vec(),
        ls.predicate_classes().to_vec(),
        &train.dataset.predicate_counts(),
        ls.valid_triples().clone(),
    )?;
    for split in [&mut train, &mut test] {
        let (_, images) = split.dataset.clone().into_parts();
        split.dataset = Dataset::new(ls.clone(), images)?;
    }
    Ok(SynthWorld {
        spec: spec.clone(),
        train,
        test,
    })
}

/// Feature extractor plus predicate classifier over `[f_s; f_p; f_o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationHead {
    pub net: Mlp,
}

impl RelationHead {
    pub fn new(input_dim: usize, hidden: usize, n_classes: usize, slope: f64, seed: u64) -> Result<Self> {
        let mut rng = substream(seed, "harness-head-init");
        Ok(RelationHead {
            net: Mlp::init(
                &[input_dim, hidden, n_classes],
                &[Activation::LeakyRelu(slope), Activation::Identity],
                &mut rng,
            )?,
        })
    }

    pub fn probabilities(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.net.apply(input)?))
    }

    /// Adds `weight · ∇ Σ_c target_c·(−ln p_c)` into `acc`; returns the loss.
    fn accumulate(&self, input: &[f64], target: &SoftLabel, weight: f64, acc: &mut MlpGrad) -> Result<f64> {
        let cache = self.net.forward(input)?;
        let p = softmax(cache.output());
        let mut g: Vec<f64> = p.iter().map(|v| v * weight).collect();
        let mut loss = 0.0;
        for &(c, mass) in target.entries() {
            g[c as usize] -= weight * mass;
            loss -= mass * p[c as usize].max(f64::MIN_POSITIVE).ln();
        }
        self.net.backward(&cache, &g, Some(acc))?;
        Ok(loss)
    }
}

fn concat3(a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
    [a, b, c].concat()
}

impl RelationEvaluator for RelationHead {
    fn predict(&self, subject: &[f64], predicate: &[f64], object: &[f64]) -> Result<Vec<f64>> {
        self.probabilities(&concat3(subject, predicate, object))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Images per optimisation step.
    pub batch_images: usize,
    pub leaky_slope: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            hidden: 32,
            epochs: 12,
            lr: 0.1,
            batch_images: 8,
            leaky_slope: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleRule {
    /// Duplicate images with at least one tail triplet.
    #[default]
    AtLeastOne,
    /// Duplicate images with more than one tail triplet.
    MoreThanOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub head: HeadConfig,
    pub fsta: FstaConfig,
    pub gan: GanConfig,
    pub k_i: f64,
    pub k_e: f64,
    pub affinity_threshold: f64,
    pub k_s: f64,
    pub q_mode: QMode,
    pub reweight: bool,
    pub resample_rule: ResampleRule,
    pub ks: Vec<usize>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        let mut gan = GanConfig::toy(16);
        gan.max_iter = 600;
        gan.eval_every = 100;
        gan.eval_samples = 20;
        gan.pretrain_epochs = 10;
        HarnessConfig {
            head: HeadConfig::default(),
            fsta: FstaConfig {
                alpha: 0.25,
                ..FstaConfig::default()
            },
            gan,
            // The toy world confuses roughly a quarter of each general class,
            // and its mislabeled share caps the affinity well below 0.1.
            k_i: 25.0,
            k_e: ietrans::DEFAULT_KE,
            affinity_threshold: 0.05,
            k_s: 30.0,
            q_mode: QMode::default(),
            reweight: false,
            resample_rule: ResampleRule::default(),
            ks: vec![5, 10],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Raw,
    Ietrans,
    Soft,
    Fsta,
    Full,
    Resample(u32),
}

impl Variant {
    fn uses_fsta(self) -> bool {
        matches!(self, Variant::Fsta | Variant::Full)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Raw => f.write_str("raw"),
            Variant::Ietrans => f.write_str("ietrans"),
            Variant::Soft => f.write_str("soft"),
            Variant::Fsta => f.write_str("fsta"),
            Variant::Full => f.write_str("full"),
            Variant::Resample(n) => write!(f, "resample{n}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "raw" => Variant::Raw,
            "ietrans" => Variant::Ietrans,
            "soft" => Variant::Soft,
            "fsta" => Variant::Fsta,
            "full" => Variant::Full,
            other => {
                let n = other
                    .strip_prefix("resample")
                    .map(|r| r.trim_matches(|c| c == '(' || c == ')'))
                    .and_then(|r| if r.is_empty() { Some(1) } else { r.parse().ok() })
                    .ok_or_else(|| invalid(format!("unknown variant {other:?}")))?;
                Variant::Resample(n)
            }
        })
    }
}

/// One training example: concatenated input and its target.
struct Sample {
    input: Vec<f64>,
    label: SoftLabel,
}

fn pair_input(split: &SynthSplit, image_id: u64, s: &ObjectRef, o: &ObjectRef) -> Result<Vec<f64>> {
    let a = split.lookup(image_id, s)?;
    let b = split.lookup(image_id, o)?;
    Ok(concat3(
        &split.objects[a].feature,
        &pair_feature(&s.bbox, &o.bbox),
        &split.objects[b].feature,
    ))
}

fn image_samples(split: &SynthSplit, image: &Image) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for t in &image.triplets {
        out.push(Sample {
            input: pair_input(split, image.image_id, &t.subject, &t.object)?,
            label: t.label.clone(),
        });
    }
    for n in &image.negatives {
        out.push(Sample {
            input: pair_input(split, image.image_id, &n.subject, &n.object)?,
            label: SoftLabel::one_hot(BACKGROUND),
        });
    }
    Ok(out)
}

/// Inverse-frequency class weights (by hard label, background included),
/// normalised to mean 1 over the training examples.
fn class_weights(dataset: &Dataset, n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0u64; n_classes];
    for t in dataset.triplets() {
        counts[t.predicate() as usize] += 1;
    }
    for _ in dataset.negatives() {
        counts[BACKGROUND as usize] += 1;
    }
    let total: u64 = counts.iter().sum();
    let present = counts.iter().filter(|&&c| c > 0).count().max(1);
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { total as f64 / (present as f64 * c as f64) })
        .collect()
}

struct SplitFeatures<'a>(&'a SynthSplit);

impl TripletFeatures for SplitFeatures<'_> {
    fn subject(&self, c: &Candidate) -> Result<Vec<f64>> {
        Ok(self.0.objects[c.subject.instance as usize].feature.clone())
    }

    fn predicate(&self, c: &Candidate) -> Result<Vec<f64>> {
        Ok(pair_feature(&c.subject.bbox, &c.object.bbox))
    }

    fn object(&self, c: &Candidate) -> Result<Vec<f64>> {
        Ok(self.0.objects[c.object.instance as usize].feature.clone())
    }
}

/// Everything feature-space augmentation needs during training.
pub struct Augmentation<'a> {
    pub sampler: &'a SamplerTable,
    pub generator: &'a GanState,
    pub config: FstaConfig,
}

fn proposals(split: &SynthSplit, image: &Image) -> ImageProposals {
    let members = split.image_objects.get(&image.image_id).cloned().unwrap_or_default();
    ImageProposals {
        image_id: image.image_id,
        proposals: members
            .into_iter()
            .map(|i| Proposal {
                instance: i as u64,
                class: split.objects[i].class,
                bbox: split.objects[i].bbox,
            })
            .collect(),
        ground_truth: image.triplets.clone(),
    }
}

/// Images of `dataset`, each repeated `1 + n` times when it qualifies under
/// `rule`.
pub fn resample_images(dataset: &Dataset, n: u32, rule: ResampleRule) -> Vec<u64> {
    let ls = dataset.label_space();
    let mut out = Vec::new();
    for (&id, image) in dataset.images() {
        let tails = image
            .triplets
            .iter()
            .filter(|t| ls.group_of(t.predicate()) == Some(Group::Tail))
            .count();
        let hit = match rule {
            ResampleRule::AtLeastOne => tails >= 1,
            ResampleRule::MoreThanOne => tails > 1,
        };
        let copies = if hit { 1 + n as usize } else { 1 };
        out.extend(std::iter::repeat_n(id, copies));
    }
    out
}

/// Trains a relation head on `dataset` (whose boxes index `split`). With
/// augmentation and a positive alpha, every step adds `alpha · L_at` over
/// the step's planned artificial triplets. `schedule` lists the images of
/// one epoch (repeats allowed); `None` uses every image once.
pub fn train_head(
    split: &SynthSplit,
    dataset: &Dataset,
    schedule: Option<&[u64]>,
    augmentation: Option<&Augmentation<'_>>,
    cfg: &HarnessConfig,
    seed: u64,
) -> Result<RelationHead> {
    let ls = dataset.label_space();
    let n_classes = ls.num_predicates();
    let input_dim = 2 * split.objects.first().map_or(0, |o| o.feature.len()) + PAIR_FEATURE_DIM;
    let mut head = RelationHead::new(input_dim, cfg.head.hidden, n_classes, cfg.head.leaky_slope, seed)?;
    let weights = if cfg.reweight {
        class_weights(dataset, n_classes)
    } else {
        vec![1.0; n_classes]
    };
    let samples: BTreeMap<u64, Vec<Sample>> = dataset
        .images()
        .iter()
        .map(|(&id, image)| Ok((id, image_samples(split, image)?)))
        .collect::<Result<_>>()?;
    let mut order: Vec<u64> = match schedule {
        Some(s) => s.to_vec(),
        None => dataset.images().keys().copied().collect(),
    };
    let mut rng = substream(seed, "harness-train");
    let mut plan_rng = substream(seed, "harness-fsta-plan");
    let mut gen_rng = substream(seed, "harness-fsta-generate");
    let features = SplitFeatures(split);
    let aug = augmentation.filter(|a| a.config.alpha > 0.0);
    let mut step = 0u64;
    for epoch in 0..cfg.head.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.head.batch_images.max(1)) {
            let mut grads = MlpGrad::zeros_like(&head.net);
            let count: usize = batch.iter().map(|id| samples[id].len()).sum();
            let mut loss = 0.0;
            if count > 0 {
                let inv = 1.0 / count as f64;
                for id in batch {
                    for s in &samples[id] {
                        let w = weights[s.label.argmax() as usize] * inv;
                        loss += head.accumulate(&s.input, &s.label, w, &mut grads)?;
                    }
                }
            }
            if let Some(a) = aug {
                let images: Vec<ImageProposals> =
                    batch.iter().map(|id| proposals(split, &dataset.images()[id])).collect();
                let plan = fsta::plan_step(step, &images, a.sampler, ls, &a.config, &mut plan_rng)?;
                let resolved = fsta::resolve_plan(&plan, &features, a.generator, &mut gen_rng as &mut dyn RngCore)?;
                if !resolved.is_empty() {
                    let w = a.config.alpha / resolved.len() as f64;
                    for r in &resolved {
                        let input = concat3(&r.subject, &r.predicate_feature, &r.object);
                        loss += head.accumulate(&input, &SoftLabel::one_hot(r.predicate), w, &mut grads)?;
                    }
                }
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    module: MODULE,
                    iteration: epoch,
                    what: "relation head loss".into(),
                });
            }
            head.net.sgd_step(&grads, cfg.head.lr);
            step += 1;
        }
    }
    Ok(head)
}

/// Trains on the raw annotations and records the post-softmax outputs on
/// every training triplet and no-relation pair.
pub fn produce_biased_dump(world: &SynthWorld, cfg: &HarnessConfig, seed: u64) -> Result<(RelationHead, PredictionDump)> {
    let split = &world.train;
    let head = train_head(split, &split.dataset, None, None, cfg, seed)?;
    let mut per_triplet = BTreeMap::new();
    let mut per_negative = BTreeMap::new();
    for image in split.dataset.images().values() {
        for t in &image.triplets {
            per_triplet.insert(t.triplet_id, head.probabilities(&pair_input(split, image.image_id, &t.subject, &t.object)?)?);
        }
        for n in &image.negatives {
            per_negative.insert(n.id, head.probabilities(&pair_input(split, image.image_id, &n.subject, &n.object)?)?);
        }
    }
    let dump = PredictionDump::from_vectors(&split.dataset, per_triplet, per_negative)?;
    Ok((head, dump))
}

/// Scores every ordered object pair of every test image (top foreground
/// predicate per pair) and evaluates against the test annotations.
pub fn evaluate_head(head: &RelationHead, test: &SynthSplit, ks: &[usize]) -> Result<EvalReport> {
    let mut preds = BTreeMap::new();
    for (&image_id, members) in &test.image_objects {
        let mut rels = Vec::new();
        for &a in members {
            for &b in members {
                if a == b {
                    continue;
                }
                let (oa, ob) = (&test.objects[a], &test.objects[b]);
                let p = head.probabilities(&concat3(&oa.feature, &pair_feature(&oa.bbox, &ob.bbox), &ob.feature))?;
                let fg = 1 + argmax(&p[1..]);
                rels.push(PredictedRelation {
                    subject: ObjectRef { class: oa.class, bbox: oa.bbox },
                    object: ObjectRef { class: ob.class, bbox: ob.bbox },
                    predicate: fg as u32,
                    score: p[fg],
                });
            }
        }
        preds.insert(image_id, rels);
    }
    metrics::evaluate(&test.dataset, &preds, ks, test.dataset.label_space())
}

/// Datasets derived from the biased model for one world.
pub struct Transferred {
    pub dump: PredictionDump,
    pub ietrans: Dataset,
    pub soft: Dataset,
    pub decisions: Vec<ietrans::TransferDecision>,
}

pub fn transfer_datasets(world: &SynthWorld, cfg: &HarnessConfig, seed: u64) -> Result<Transferred> {
    let raw = &world.train.dataset;
    let (_, dump) = produce_biased_dump(world, cfg, seed)?;
    let counts = raw.predicate_counts();
    let map = ietrans::build_parent_child(&dump, &counts, cfg.affinity_threshold);
    let decisions = ietrans::internal_transfer(raw, &dump, &map, cfg.k_i)?;
    let external = ietrans::external_transfer(raw, &dump, cfg.k_e)?;
    let internal = soft_transfer::apply_soft_transfer(raw, &dump, &decisions, 0.0, cfg.q_mode)?;
    let ie = ietrans::merge_external(&internal, &external)?;
    let softened = soft_transfer::apply_soft_transfer(raw, &dump, &decisions, cfg.k_s, cfg.q_mode)?;
    let soft = ietrans::merge_external(&softened, &external)?;
    Ok(Transferred {
        dump,
        ietrans: ie,
        soft,
        decisions,
    })
}

/// Trains and evaluates every requested variant on one generated world.
pub fn run_cell(world: &SynthWorld, variants: &[Variant], cfg: &HarnessConfig, seed: u64) -> Result<Vec<(Variant, EvalReport)>> {
    let needs_transfer = variants.iter().any(|v| *v != Variant::Raw);
    let transferred = if needs_transfer {
        Some(transfer_datasets(world, cfg, seed)?)
    } else {
        None
    };
    let gan = if variants.iter().any(|v| v.uses_fsta()) && cfg.fsta.alpha > 0.0 {
        let store = world.train.feature_store()?;
        let data = featgen::LabeledFeatures::from_store(&store)?;
        let mut gcfg = cfg.gan;
        gcfg.seed = seed;
        gcfg.feature_dim = data.dim();
        let cond = featgen::ConditionTable::synthesize(&data.classes, gcfg.cond_dim, seed)?;
        Some(featgen::fit(&data, &cond, &gcfg)?)
    } else {
        None
    };
    let sampler = transferred
        .as_ref()
        .map(|t| SamplerTable::build(world.train.dataset.label_space(), &t.dump));
    let mut out = Vec::new();
    for &v in variants {
        let t = transferred.as_ref();
        let (dataset, schedule) = match v {
            Variant::Raw => (&world.train.dataset, None),
            Variant::Ietrans | Variant::Fsta => (&t.unwrap().ietrans, None),
            Variant::Soft | Variant::Full => (&t.unwrap().soft, None),
            Variant::Resample(n) => {
                let d = &t.unwrap().ietrans;
                (d, Some(resample_images(d, n, cfg.resample_rule)))
            }
        };
        let aug = match (&gan, &sampler) {
            (Some(g), Some(s)) if v.uses_fsta() => Some(Augmentation {
                sampler: s,
                generator: g,
                config: cfg.fsta,
            }),
            _ => None,
        };
        let head = train_head(&world.train, dataset, schedule.as_deref(), aug.as_ref(), cfg, seed)?;
        out.push((v, evaluate_head(&head, &world.test, &cfg.ks)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (zero for a single value).
    pub sd: f64,
    pub values: Vec<f64>,
}

impl Stat {
    pub fn of(values: Vec<f64>) -> Stat {
        let n = values.len() as f64;
        let mean = if values.is_empty() { 0.0 } else { values.iter().sum::<f64>() / n };
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, sd, values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub variant: String,
    pub metrics: BTreeMap<String, Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixTable {
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub rows: Vec<MatrixRow>,
}

/// Metric columns extracted from a report, in table order.
pub fn report_metrics(r: &EvalReport) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for &k in &r.ks {
        let mr = r.mean_recall[&k];
        out.push((format!("R@{k}"), r.recall[&k]));
        out.push((format!("mR@{k}"), mr.overall));
        for g in Group::ALL {
            out.push((format!("mR@{k}/{}", g.name()), mr.group(g).unwrap_or(0.0)));
        }
        out.push((format!("F1@{k}"), r.f1[&k]));
        out.push((format!("A@{k}"), r.avg[&k]));
    }
    out
}

/// Runs every variant for every seed (a fresh world per seed) and reports
/// mean ± sd per metric.
pub fn run_matrix(spec: &SynthSpec, variants: &[Variant], seeds: &[u64], cfg: &HarnessConfig) -> Result<MatrixTable> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(invalid("need at least one variant and one seed"));
    }
    let mut values: BTreeMap<usize, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    let mut columns: Vec<String> = Vec::new();
    for &seed in seeds {
        let world = synth_generate(&SynthSpec { seed, ..spec.clone() })?;
        let cell_seed = crate::rng::derive_seed(seed, "harness-cell", 0);
        for (i, (_, report)) in run_cell(&world, variants, cfg, cell_seed)?.into_iter().enumerate() {
            for (name, v) in report_metrics(&report) {
                if !columns.contains(&name) {
                    columns.push(name.clone());
                }
                values.entry(i).or_default().entry(name).or_default().push(v);
            }
        }
    }
    let rows = variants
        .iter()
        .enumerate()
        .map(|(i, v)| MatrixRow {
            variant: v.to_string(),
            metrics: values
                .remove(&i)
                .unwrap_or_default()
                .into_iter()
                .map(|(k, vals)| (k, Stat::of(vals)))
                .collect(),
        })
        .collect();
    Ok(MatrixTable {
        ks: cfg.ks.clone(),
        seeds: seeds.to_vec(),
        rows,
    })
}

impl MatrixTable {
    pub fn row(&self, variant: &str) -> Option<&MatrixRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn mean(&self, variant: &str, metric: &str) -> Option<f64> {
        self.row(variant)?.metrics.get(metric).map(|s| s.mean)
    }

    /// Markdown table with values in percent.
    pub fn to_markdown(&self) -> String {
        let mut cols: Vec<String> = Vec::new();
        for &k in &self.ks {
            for c in ["R", "mR", "mR/head", "mR/body", "mR/tail", "F1", "A"] {
                cols.push(match c.split_once('/') {
                    Some((a, g)) => format!("{a}@{k}/{g}"),
                    None => format!("{c}@{k}"),
                });
            }
        }
        let mut s = format!("| variant | {} |\n|---|{}\n", cols.join(" | "), "---|".repeat(cols.len()));
        for r in &self.rows {
            let cells: Vec<String> = cols
                .iter()
                .map(|c| match r.metrics.get(c) {
                    Some(st) => format!("{:.1} ± {:.1}", 100.0 * st.mean, 100.0 * st.sd),
                    None => "-".into(),
                })
                .collect();
            s.push_str(&format!("| {} | {} |\n", r.variant, cells.join(" | ")));
        }
        s
    }
}
