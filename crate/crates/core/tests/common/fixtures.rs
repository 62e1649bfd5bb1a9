use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use tripaug::featgen::LabeledFeatures;
use tripaug::fsta::{ImageProposals, Proposal};
use tripaug::ingest::{Dataset, Image, NegativePair, PredictionDump, BACKGROUND_NAME};
use tripaug::rng::substream;
use tripaug::types::{BBox, LabelSpace, ObjectRef, SoftLabel, TripletRecord};

pub const N_OBJECTS: u32 = 4;
/// Including background.
pub const N_PREDICATES: u32 = 7;

/// A handful of boxes; several pairs overlap above 0.5 so matching has
/// real choices to make.
pub fn palette() -> Vec<BBox> {
    [
        (0.0, 0.0, 10.0, 10.0),
        (0.0, 0.0, 10.0, 12.0),
        (1.0, 1.0, 11.0, 11.0),
        (20.0, 20.0, 30.0, 30.0),
        (21.0, 20.0, 31.0, 30.0),
        (40.0, 0.0, 52.0, 9.0),
    ]
    .into_iter()
    .map(|(a, b, c, d)| BBox::new(a, b, c, d).unwrap())
    .collect()
}

/// Probability vector from small integer weights, so equal vectors (and
/// equal entries) come up often.
pub fn coarse_vector<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n)
        .map(|i| (rng.random_range(0..4) + u32::from(i == 0)) as f64)
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

pub struct SmallWorld {
    pub dataset: Dataset,
    pub dump: PredictionDump,
}

fn object<R: Rng>(rng: &mut R, boxes: &[BBox]) -> ObjectRef {
    ObjectRef {
        class: rng.random_range(0..N_OBJECTS),
        bbox: boxes[rng.random_range(0..boxes.len())],
    }
}

/// Up to `max_triplets` triplets over a few images with skewed predicate
/// frequencies, a few negatives per image and coarse prediction vectors.
pub fn small_world(seed: u64, max_triplets: usize) -> SmallWorld {
    let mut rng = substream(seed, "small-world");
    let boxes = palette();
    let n = rng.random_range(1..=max_triplets);
    let n_images = rng.random_range(1..=5u64);
    let mut images: BTreeMap<u64, Image> = (0..n_images)
        .map(|i| (10 + i, Image { image_id: 10 + i, ..Image::default() }))
        .collect();
    // Lower predicates are drawn more often.
    let weights: Vec<u32> = (1..N_PREDICATES).map(|p| 1 << (N_PREDICATES - p)).collect();
    let total: u32 = weights.iter().sum();
    let mut ids: Vec<u64> = (0..n as u64).map(|i| 3 * i + rng.random_range(0..3)).collect();
    ids.shuffle(&mut rng);
    for id in ids {
        let mut u = rng.random_range(0..total);
        let mut p = 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                p = i as u32 + 1;
                break;
            }
            u -= w;
        }
        let image_id = 10 + rng.random_range(0..n_images);
        images.get_mut(&image_id).unwrap().triplets.push(TripletRecord {
            triplet_id: id,
            image_id,
            subject: object(&mut rng, &boxes),
            object: object(&mut rng, &boxes),
            label: SoftLabel::one_hot(p),
        });
    }
    let mut neg_id = 0;
    for image in images.values_mut() {
        for _ in 0..rng.random_range(0..4) {
            image.negatives.push(NegativePair {
                id: neg_id,
                image_id: image.image_id,
                subject: object(&mut rng, &boxes),
                object: object(&mut rng, &boxes),
            });
            neg_id += 1;
        }
    }
    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    for t in images.values().flat_map(|i| &i.triplets) {
        *counts.entry(t.predicate()).or_default() += 1;
    }
    let objects = (0..N_OBJECTS).map(|i| format!("obj{i}")).collect();
    let predicates = std::iter::once(BACKGROUND_NAME.to_string())
        .chain((1..N_PREDICATES).map(|i| format!("pred{i}")))
        .collect();
    let ls = LabelSpace::from_counts(objects, predicates, &counts, Default::default()).unwrap();
    let dataset = Dataset::new(ls, images).unwrap().refresh_valid_triples().unwrap();
    let per_triplet = dataset
        .triplets()
        .map(|t| (t.triplet_id, coarse_vector(&mut rng, N_PREDICATES as usize)))
        .collect();
    let per_negative = dataset
        .negatives()
        .map(|n| (n.id, coarse_vector(&mut rng, N_PREDICATES as usize)))
        .collect();
    let dump = PredictionDump::from_vectors(&dataset, per_triplet, per_negative).unwrap();
    SmallWorld { dataset, dump }
}

/// Proposals for every image: its ground-truth boxes with their classes
/// plus a few random extras, some of them misclassified.
pub fn proposals(dataset: &Dataset, seed: u64) -> Vec<ImageProposals> {
    let mut rng = substream(seed, "proposals");
    let boxes = palette();
    let mut instance = 0;
    let mut out = Vec::new();
    for image in dataset.images().values() {
        let mut regions: Vec<(u32, BBox)> = Vec::new();
        for t in &image.triplets {
            for o in [t.subject, t.object] {
                if !regions.contains(&(o.class, o.bbox)) {
                    regions.push((o.class, o.bbox));
                }
            }
        }
        for _ in 0..rng.random_range(0..3) {
            let o = object(&mut rng, &boxes);
            regions.push((o.class, o.bbox));
        }
        let proposals = regions
            .into_iter()
            .map(|(class, bbox)| {
                instance += 1;
                Proposal { instance, class, bbox }
            })
            .collect();
        out.push(ImageProposals {
            image_id: image.image_id,
            proposals,
            ground_truth: image.triplets.clone(),
        });
    }
    out
}

/// Three Gaussian clusters in `dim` dimensions, `per_class` rows each.
pub fn clusters(dim: usize, per_class: usize, seed: u64) -> (LabeledFeatures, Vec<Vec<f64>>) {
    let mut rng = substream(seed, "clusters");
    let noise = Normal::new(0.0, 0.5).unwrap();
    let means: Vec<Vec<f64>> = (0..3)
        .map(|c| (0..dim).map(|k| if k % 3 == c { 2.0 } else { -0.5 }).collect())
        .collect();
    let mut rows = Vec::new();
    let mut classes = Vec::new();
    for (c, m) in means.iter().enumerate() {
        for _ in 0..per_class {
            rows.push(m.iter().map(|v| v + noise.sample(&mut rng)).collect());
            classes.push(c as u32 + 1);
        }
    }
    (LabeledFeatures::new(rows, &classes).unwrap(), means)
}
