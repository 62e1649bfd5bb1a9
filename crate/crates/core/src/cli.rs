//! Command-line front end.
//!
//! Every subcommand writes its outputs plus a `<output>.manifest.json` that
//! echoes the resolved config and seed and hashes every input and output.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::featgen::{self, ConditionTable, LabeledFeatures};
use crate::fsta::{self, ImageProposals, Proposal};
use crate::harness::{self, SynthSpec, Variant};
use crate::ietrans::{self, TransferDecision};
use crate::ingest::{self, Dataset, FeatureStore};
use crate::metrics;
use crate::mp_sampler::SamplerTable;
use crate::rng::{derive_seed, substream};
use crate::soft_transfer::{self, QMode};
use crate::types::{group_predicates, object_instance_id, subject_instance_id, LabelSpace};

#[derive(Debug, Parser)]
#[command(name = "tripaug", version, about = "Label transfer, soft labels and feature-space triplet augmentation")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed (TF_SEED overrides the file, this flag overrides both).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Inputs {
    /// Annotation JSON lines.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Biased-model prediction dump (JSON lines).
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Internal and external transfer from a biased-model dump.
    Transfer {
        #[command(flatten)]
        inputs: Inputs,
        /// Percent of each source pool transferred [default: 70].
        #[arg(long)]
        ki: Option<f64>,
        /// Percent of no-relation pairs labeled [default: 100].
        #[arg(long)]
        ke: Option<f64>,
        /// Affinity threshold for parent-child links [default: 0.1].
        #[arg(long)]
        aff_threshold: Option<f64>,
        /// Decision JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
        /// External triplets in annotation format [default: <out stem>.external.jsonl].
        #[arg(long)]
        external_out: Option<PathBuf>,
    },
    /// Softens the least reliable internal transfers.
    SoftTransfer {
        #[command(flatten)]
        inputs: Inputs,
        /// Decision JSON lines from `transfer`.
        #[arg(long)]
        decisions: PathBuf,
        /// External triplets to merge in unchanged.
        #[arg(long)]
        external: Option<PathBuf>,
        /// Percent of decisions softened [default: 10].
        #[arg(long)]
        ks: Option<f64>,
        /// one-minus-minmax | minmax | naive [default: one-minus-minmax].
        #[arg(long)]
        q_mode: Option<QMode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Builds the misprediction-weighted object-class sampler.
    BuildSampler {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plans artificial triplets per batch for inspection.
    PlanFsta {
        #[command(flatten)]
        inputs: Inputs,
        /// Sampler JSON from `build-sampler` (built from --predictions when absent).
        #[arg(long)]
        sampler: Option<PathBuf>,
        /// Pairs sampled per image [default: 2].
        #[arg(long)]
        nt: Option<usize>,
        /// Proposal-to-ground-truth IoU threshold [default: 0.7].
        #[arg(long)]
        siou: Option<f64>,
        /// Fraction of head-group artificial triplets kept [default: 0.2].
        #[arg(long)]
        uh: Option<f64>,
        /// Images per planned step.
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trains the conditional object-feature generator.
    TrainGen {
        /// Real object features (binary feature store).
        #[arg(long)]
        features: Option<PathBuf>,
        /// Condition vectors (binary feature store keyed by class).
        #[arg(long, conflicts_with = "cond_synth")]
        cond: Option<PathBuf>,
        /// Draw unit-Gaussian condition vectors instead of loading them.
        #[arg(long)]
        cond_synth: bool,
        /// GAN settings (TOML); overrides the [gan] section of --config.
        #[arg(long = "gan-config")]
        gan_config: Option<PathBuf>,
        /// Generator iterations [default: 55000].
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Samples object features from a trained generator.
    GenFeatures {
        #[arg(long)]
        ckpt: PathBuf,
        /// Comma-separated class indices.
        #[arg(long, value_delimiter = ',', required = true)]
        classes: Vec<u32>,
        /// Features per class.
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recall, mean recall, F1 and Avg at each K.
    Eval {
        /// Relation predictions (JSON lines).
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth annotations.
        #[arg(long)]
        gt: PathBuf,
        /// Comma-separated K values [default: 50,100].
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        /// Head/body/tail assignment (JSON); defaults to the annotation header
        /// or, failing that, ground-truth counts.
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs the synthetic comparison matrix.
    SynthExp {
        /// Synthetic world settings (TOML).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "raw,ietrans,soft,fsta,full")]
        variants: Vec<Variant>,
        /// Number of seeds, counted up from the global seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// `.md` writes a markdown table, anything else JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let mut inputs: Vec<PathBuf> = cli.config.iter().cloned().collect();
    let name = command_name(&cli.command);
    let outputs = match cli.command {
        Command::Transfer {
            inputs: io,
            ki,
            ke,
            aff_threshold,
            out,
            external_out,
        } => {
            set(&mut cfg.ietrans.k_i, ki);
            set(&mut cfg.ietrans.k_e, ke);
            set(&mut cfg.ietrans.aff_threshold, aff_threshold);
            apply_inputs(&mut cfg, io);
            set_path(&mut cfg.paths.out, out);
            cfg.validate()?;
            let (dataset, dump) = load_dataset_and_dump(&cfg, &mut inputs)?;
            let out = output_path(&cfg)?;
            let ext = external_out.unwrap_or_else(|| sibling(&out, "external.jsonl"));
            let counts = dataset.predicate_counts();
            let map = ietrans::build_parent_child(&dump, &counts, cfg.ietrans.aff_threshold);
            let decisions = ietrans::internal_transfer(&dataset, &dump, &map, cfg.ietrans.k_i)?;
            let external = ietrans::external_transfer(&dataset, &dump, cfg.ietrans.k_e)?;
            write_with(&out, |w| {
                for d in &decisions {
                    serde_json::to_writer(&mut *w, d)?;
                    w.write_all(b"\n")?;
                }
                Ok(())
            })?;
            let (ls, _) = dataset.into_parts();
            let mut only: BTreeMap<u64, ingest::Image> = BTreeMap::new();
            for t in external {
                let image = only.entry(t.image_id).or_insert_with(|| ingest::Image {
                    image_id: t.image_id,
                    ..Default::default()
                });
                image.triplets.push(t);
            }
            ingest::save_annotations(&Dataset::new(ls, only)?, &ext)?;
            vec![out, ext]
        }
        Command::SoftTransfer {
            inputs: io,
            decisions,
            external,
            ks,
            q_mode,
            out,
        } => {
            set(&mut cfg.soft.k_s, ks);
            set(&mut cfg.soft.q_mode, q_mode);
            apply_inputs(&mut cfg, io);
            set_path(&mut cfg.paths.out, out);
            cfg.validate()?;
            let (dataset, dump) = load_dataset_and_dump(&cfg, &mut inputs)?;
            let out = output_path(&cfg)?;
            let list = load_decisions(&decisions)?;
            inputs.push(decisions);
            let mut enhanced = soft_transfer::apply_soft_transfer(&dataset, &dump, &list, cfg.soft.k_s, cfg.soft.q_mode)?;
            if let Some(ext) = external {
                let extra: Vec<_> = ingest::load_annotations(&ext)?.triplets().cloned().collect();
                enhanced = ietrans::merge_external(&enhanced, &extra)?;
                inputs.push(ext);
            }
            ingest::save_annotations(&enhanced, &out)?;
            vec![out]
        }
        Command::BuildSampler { inputs: io, out } => {
            apply_inputs(&mut cfg, io);
            set_path(&mut cfg.paths.out, out);
            cfg.validate()?;
            let (dataset, dump) = load_dataset_and_dump(&cfg, &mut inputs)?;
            let out = output_path(&cfg)?;
            let table = SamplerTable::build(dataset.label_space(), &dump);
            write_json(&out, &table.to_json())?;
            vec![out]
        }
        Command::PlanFsta {
            inputs: io,
            sampler,
            nt,
            siou,
            uh,
            batch,
            out,
        } => {
            set(&mut cfg.fsta.n_t, nt);
            set(&mut cfg.fsta.s_iou, siou);
            set(&mut cfg.fsta.u_h, uh);
            apply_inputs(&mut cfg, io);
            set_path(&mut cfg.paths.out, out);
            cfg.validate()?;
            if batch == 0 {
                return Err(Error::invalid("cli", "--batch must be positive"));
            }
            let annotations = required(&cfg.paths.annotations, "annotations")?;
            let dataset = ingest::load_annotations(&annotations)?;
            inputs.push(annotations);
            let table = match sampler {
                Some(p) => {
                    let v = read_json(&p)?;
                    inputs.push(p);
                    SamplerTable::from_json(&v)?
                }
                None => {
                    let preds = required(&cfg.paths.predictions, "predictions")?;
                    let dump = ingest::load_predictions(&preds, &dataset)?;
                    inputs.push(preds);
                    SamplerTable::build(dataset.label_space(), &dump)
                }
            };
            let out = output_path(&cfg)?;
            let images: Vec<ImageProposals> = dataset.images().values().map(ground_truth_proposals).collect();
            let mut rng = substream(cfg.seed, "fsta-plan");
            let mut plans = Vec::new();
            for (step, chunk) in images.chunks(batch).enumerate() {
                plans.push(fsta::plan_step(step as u64, chunk, &table, dataset.label_space(), &cfg.fsta, &mut rng)?);
            }
            write_with(&out, |w| {
                for p in &plans {
                    serde_json::to_writer(&mut *w, p)?;
                    w.write_all(b"\n")?;
                }
                Ok(())
            })?;
            vec![out]
        }
        Command::TrainGen {
            features,
            cond,
            cond_synth,
            gan_config,
            max_iter,
            out,
        } => {
            if let Some(p) = &gan_config {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                cfg.gan = toml::from_str(&text).map_err(|e| Error::Parse {
                    path: p.clone(),
                    line: e.span().map_or(0, |s| 1 + text[..s.start].matches('\n').count()),
                    message: e.message().to_string(),
                })?;
                inputs.push(p.clone());
            }
            set(&mut cfg.gan.max_iter, max_iter);
            set_path(&mut cfg.paths.features, features);
            set_path(&mut cfg.paths.out, out);
            if cond.is_none() && !cond_synth {
                return Err(Error::invalid("cli", "train-gen needs --cond PATH or --cond-synth"));
            }
            let feats = required(&cfg.paths.features, "features")?;
            let store = ingest::load_features(&feats)?;
            inputs.push(feats);
            let data = LabeledFeatures::from_store(&store)?;
            cfg.gan.feature_dim = data.dim();
            cfg.gan.seed = derive_seed(cfg.seed, "featgen", 0);
            let table = match cond {
                Some(p) => {
                    let t = ConditionTable::from_store(&ingest::load_features(&p)?)?;
                    inputs.push(p);
                    cfg.gan.cond_dim = t.dim();
                    t
                }
                None => ConditionTable::synthesize(&data.classes, cfg.gan.cond_dim, derive_seed(cfg.seed, "featgen-cond", 0))?,
            };
            cfg.validate()?;
            let out = output_path(&cfg)?;
            let state = featgen::fit(&data, &table, &cfg.gan)?;
            featgen::save_checkpoint(&state, &out)?;
            vec![out]
        }
        Command::GenFeatures { ckpt, classes, n, out } => {
            set_path(&mut cfg.paths.out, out);
            let out = output_path(&cfg)?;
            let state = featgen::load_checkpoint(&ckpt)?;
            inputs.push(ckpt);
            let mut store = FeatureStore::new(state.config.feature_dim);
            let mut rng = substream(cfg.seed, "gen-features");
            let mut id = 0u64;
            for &c in &classes {
                for _ in 0..n {
                    let x = state.generate(c, &mut rng)?;
                    store.insert(id, c, x.iter().map(|&v| v as f32).collect())?;
                    id += 1;
                }
            }
            ingest::save_features(&store, &out)?;
            vec![out]
        }
        Command::Eval {
            pred,
            gt,
            k,
            groups,
            out,
        } => {
            set(&mut cfg.eval.ks, k);
            set_path(&mut cfg.paths.out, out);
            cfg.validate()?;
            let out = output_path(&cfg)?;
            let dataset = ingest::load_annotations(&gt)?;
            let preds = metrics::load_relation_predictions(&pred)?;
            inputs.extend([pred, gt]);
            let ls = dataset.label_space();
            let assignment = match groups {
                Some(p) => {
                    let g = ingest::groups_from_json(&read_json(&p)?)?;
                    inputs.push(p);
                    g
                }
                None if !ls.groups().is_empty() => ls.groups().clone(),
                None => {
                    let counts = dataset.predicate_counts();
                    let full = (1..ls.num_predicates() as u32)
                        .map(|p| (p, counts.get(&p).copied().unwrap_or(0)))
                        .collect();
                    group_predicates(&full)?
                }
            };
            let space = LabelSpace::new(
                ls.object_classes().to_vec(),
                ls.predicate_classes().to_vec(),
                assignment,
                ls.valid_triples().clone(),
            )?;
            let report = metrics::evaluate(&dataset, &preds, &cfg.eval.ks, &space)?;
            write_json(&out, &serde_json::to_value(&report).map_err(|e| Error::invalid("cli", e.to_string()))?)?;
            vec![out]
        }
        Command::SynthExp {
            spec,
            variants,
            seeds,
            out,
        } => {
            set_path(&mut cfg.paths.out, out);
            cfg.validate()?;
            let world = match &spec {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    let s: SynthSpec = toml::from_str(&text).map_err(|e| Error::Parse {
                        path: p.clone(),
                        line: e.span().map_or(0, |s| 1 + text[..s.start].matches('\n').count()),
                        message: e.message().to_string(),
                    })?;
                    inputs.push(p.clone());
                    s
                }
                None => SynthSpec::default(),
            };
            if seeds == 0 {
                return Err(Error::invalid("cli", "--seeds must be positive"));
            }
            let out = output_path(&cfg)?;
            let list: Vec<u64> = (0..seeds).map(|i| cfg.seed.wrapping_add(i)).collect();
            let table = harness::run_matrix(&world, &variants, &list, &cfg.harness)?;
            if out.extension().is_some_and(|e| e == "md") {
                write_with(&out, |w| w.write_all(table.to_markdown().as_bytes()))?;
            } else {
                write_json(&out, &serde_json::to_value(&table).map_err(|e| Error::invalid("cli", e.to_string()))?)?;
            }
            vec![out]
        }
    };
    for out in &outputs {
        write_manifest(out, name, &cfg, &inputs, &outputs)?;
    }
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Transfer { .. } => "transfer",
        Command::SoftTransfer { .. } => "soft-transfer",
        Command::BuildSampler { .. } => "build-sampler",
        Command::PlanFsta { .. } => "plan-fsta",
        Command::TrainGen { .. } => "train-gen",
        Command::GenFeatures { .. } => "gen-features",
        Command::Eval { .. } => "eval",
        Command::SynthExp { .. } => "synth-exp",
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, v: Option<PathBuf>) {
    if v.is_some() {
        *slot = v;
    }
}

fn apply_inputs(cfg: &mut RunConfig, io: Inputs) {
    set_path(&mut cfg.paths.annotations, io.annotations);
    set_path(&mut cfg.paths.predictions, io.predictions);
}

fn required(p: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    p.clone()
        .ok_or_else(|| Error::invalid("cli", format!("missing --{name} (or paths.{name} in the config)")))
}

fn output_path(cfg: &RunConfig) -> Result<PathBuf> {
    required(&cfg.paths.out, "out")
}

fn load_dataset_and_dump(cfg: &RunConfig, inputs: &mut Vec<PathBuf>) -> Result<(Dataset, ingest::PredictionDump)> {
    let a = required(&cfg.paths.annotations, "annotations")?;
    let p = required(&cfg.paths.predictions, "predictions")?;
    let dataset = ingest::load_annotations(&a)?;
    let dump = ingest::load_predictions(&p, &dataset)?;
    inputs.extend([a, p]);
    Ok((dataset, dump))
}

/// `decisions.jsonl` → `decisions.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn load_decisions(path: &Path) -> Result<Vec<TransferDecision>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Proposals are the distinct annotated boxes of the image.
fn ground_truth_proposals(image: &ingest::Image) -> ImageProposals {
    let mut seen = BTreeSet::new();
    let mut proposals = Vec::new();
    for t in &image.triplets {
        for (id, o) in [
            (subject_instance_id(t.triplet_id), &t.subject),
            (object_instance_id(t.triplet_id), &t.object),
        ] {
            let key = (o.class, o.bbox.x1.to_bits(), o.bbox.y1.to_bits(), o.bbox.x2.to_bits(), o.bbox.y2.to_bits());
            if seen.insert(key) {
                proposals.push(Proposal {
                    instance: id,
                    class: o.class,
                    bbox: o.bbox,
                });
            }
        }
    }
    ImageProposals {
        image_id: image.image_id,
        proposals,
        ground_truth: image.triplets.clone(),
    }
}

fn write_with<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    body(&mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, v)?;
        w.write_all(b"\n")
    })
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    std::io::copy(&mut f, &mut h).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(h.finalize()))
}

/// Path of the manifest written beside `output`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn write_manifest(output: &Path, command: &str, cfg: &RunConfig, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<()> {
    let hashes = |paths: &[PathBuf]| -> Result<Vec<serde_json::Value>> {
        paths
            .iter()
            .map(|p| Ok(json!({ "path": p.display().to_string(), "sha256": sha256_file(p)? })))
            .collect()
    };
    let config = serde_json::to_value(cfg).map_err(|e| Error::invalid("cli", e.to_string()))?;
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": cfg.seed,
        "config": config,
        "inputs": hashes(inputs)?,
        "outputs": hashes(outputs)?,
    });
    write_json(&manifest_path(output), &manifest)
}
