//! Subcommands. Every command writes its resolved configuration next to
//! its outputs and reads each output back before reporting success.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use vqflow_core::codebook::quantize_nearest;
use vqflow_core::model::{ScaleGeometry, VqFlowModel};
use vqflow_core::sample::{Batch, FeatureSample};
use vqflow_core::score::{anomaly_map, evaluate, image_score};
use vqflow_core::synth::synth_dataset;
use vqflow_core::tape::Tape;
use vqflow_core::tensor::sq_dist;
use vqflow_core::train::{seed_codebooks, train};

use crate::checkpoint::{digest, load_checkpoint, save_checkpoint};
use crate::config::{Density, Preset, RunConfig};
use crate::error::{self, Error, Result};
use crate::manifest::{load_dataset, write_dataset, Dataset};
use crate::report::{loss_csv, p5_bytes, parse_p5, ReportJson};
use crate::vqft::read_feature_file;

pub const CHECKPOINT: &str = "checkpoint.vqck";
pub const RESOLVED: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "vqflow", version, about = "Vector-quantized conditional flows for multi-class anomaly detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-class dataset.
    Synth(SynthArgs),
    /// Train a model and write its checkpoint and loss trace.
    Train(TrainArgs),
    /// Score a test split and write the evaluation report.
    Eval(EvalArgs),
    /// Score a single feature file.
    Score(ScoreArgs),
    /// Summarize the codebooks of a checkpoint.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.lr=0.0005`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Manifest file or the directory holding it.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Standard normal base distribution instead of the prototype heads.
    #[arg(long)]
    pub no_cadm: bool,
    /// No prototype codebook.
    #[arg(long)]
    pub no_cpc: bool,
    /// No pattern codebooks (also drops the positional embedding).
    #[arg(long)]
    pub no_cspc: bool,
    /// No positional embedding in the pattern-codebook condition.
    #[arg(long)]
    pub no_pe: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum PresetArg {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum DensityArg {
    Dedicated,
    Mixture,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub density: Option<DensityArg>,
    /// Write one P5 heatmap per test sample under `maps/`.
    #[arg(long)]
    pub dump_maps: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// VQFT feature file.
    #[arg(long)]
    pub sample: PathBuf,
    /// JSON output.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub density: Option<DensityArg>,
    /// Also write the anomaly map as P5.
    #[arg(long)]
    pub map: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset for usage counts and the assignment table; without it the
    /// counters stored in the checkpoint are reported.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Which split of `--data` to assign.
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

fn load_config(args: &ConfigArgs, mut flags: Vec<(String, String)>) -> Result<RunConfig> {
    let text = match &args.config {
        Some(p) => String::from_utf8(error::read(p)?)
            .map_err(|_| Error::Config(format!("{} is not UTF-8", p.display())))?,
        None => String::new(),
    };
    let mut overrides = Vec::new();
    for s in &args.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("`--set {s}`: expected SECTION.KEY=VALUE")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    // dedicated flags win over --set
    overrides.append(&mut flags);
    RunConfig::load(&text, &overrides)
}

fn flag<T: ToString>(out: &mut Vec<(String, String)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        out.push((key.to_string(), v.to_string()));
    }
}

fn density_flag(out: &mut Vec<(String, String)>, d: Option<DensityArg>) {
    flag(
        out,
        "eval.density",
        d.map(|d| match d {
            DensityArg::Dedicated => "\"dedicated\"",
            DensityArg::Mixture => "\"mixture\"",
        }),
    );
}

fn write_resolved(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let text = cfg.resolved().to_toml()?;
    let path = dir.join(RESOLVED);
    error::write(&path, text.as_bytes())?;
    let back = RunConfig::load(&String::from_utf8_lossy(&error::read(&path)?), &[])?;
    if back != cfg.resolved() {
        return Err(Error::Config(format!("{} did not read back to the same configuration", path.display())));
    }
    Ok(())
}

fn geometry(samples: &[FeatureSample<f32>]) -> Result<Vec<ScaleGeometry>> {
    let s = samples
        .first()
        .ok_or_else(|| Error::Config("dataset split is empty".into()))?;
    Ok(s.geometry()
        .into_iter()
        .map(|(channels, height, width)| ScaleGeometry { channels, height, width })
        .collect())
}

fn density_name(d: Density) -> &'static str {
    match d {
        Density::Dedicated => "dedicated",
        Density::Mixture => "mixture",
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Score(a) => cmd_score(&a),
        Command::Inspect(a) => cmd_inspect(&a),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut flags = Vec::new();
    flag(&mut flags, "data.classes", a.classes);
    flag(&mut flags, "data.seed", a.seed);
    flag(&mut flags, "data.train", a.train);
    flag(&mut flags, "data.test", a.test);
    let cfg = load_config(&a.cfg, flags)?;
    let (train, test) = synth_dataset::<f32>(&cfg.synth_spec(), cfg.data.seed)?;
    let manifest = write_dataset(&a.out, &train, &test)?;
    let back = load_dataset(&manifest)?;
    if back != (Dataset { train: train.clone(), test: test.clone() }) {
        return Err(Error::Config(format!("{} did not read back bit-exactly", a.out.display())));
    }
    write_resolved(&a.out, &cfg)?;
    eprintln!(
        "wrote {} training and {} test samples ({} classes) to {}",
        train.len(),
        test.len(),
        cfg.data.classes,
        a.out.display()
    );
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut flags = Vec::new();
    flag(&mut flags, "train.epochs", a.epochs);
    flag(&mut flags, "train.seed", a.seed);
    flag(&mut flags, "train.lr", a.lr);
    flag(&mut flags, "train.batch_size", a.batch_size);
    flag(&mut flags, "train.checkpoint_every", a.checkpoint_every);
    flag(
        &mut flags,
        "model.preset",
        a.preset.map(|p| match p {
            PresetArg::Desk => "\"desk\"",
            PresetArg::Paper => "\"paper\"",
        }),
    );
    for (off, key) in [(a.no_cadm, "cadm"), (a.no_cpc, "cpc"), (a.no_cspc, "cspc"), (a.no_pe, "pe")] {
        if off {
            flags.push((format!("model.{key}"), "false".into()));
        }
    }
    let cfg = load_config(&a.cfg, flags)?;
    if cfg.model.preset == Preset::Paper {
        eprintln!("note: the paper preset is sized for large feature maps and trains slowly on a CPU");
    }
    let data = load_dataset(&a.data)?;
    let mcfg = cfg.model_config(geometry(&data.train)?)?;
    let tcfg = cfg.train_config();
    let mut model = vqflow_core::model::build_model::<f32>(&mcfg)?;
    if tcfg.epochs == 0 {
        seed_codebooks(&mut model, &data.train, &tcfg)?;
    }
    let out = a.out.clone();
    let report = train(&mut model, &data.train, &tcfg, |epoch, m| {
        if tcfg.checkpoint_every > 0 && epoch % tcfg.checkpoint_every == 0 {
            save_checkpoint(m, &out.join(format!("checkpoint-epoch{epoch:04}.vqck")))
                .map_err(|e| vqflow_core::Error::Contract(e.to_string()))?;
        }
        eprintln!("epoch {epoch} done");
        Ok(())
    })?;
    let path = a.out.join(CHECKPOINT);
    save_checkpoint(&model, &path)?;
    let written = error::read(&path)?;
    let reloaded = load_checkpoint(&path)?;
    if crate::checkpoint::encode(&reloaded)? != written {
        return Err(Error::Format { offset: 0, message: format!("{} did not read back bit-exactly", path.display()) });
    }
    error::write(&a.out.join("loss.csv"), loss_csv(&report.trace, mcfg.scales.len()).as_bytes())?;
    write_resolved(&a.out, &cfg)?;
    let last = report.trace.last().map(|r| r.loss.total);
    eprintln!(
        "trained {} steps; final loss {}; checkpoint {} sha256 {}",
        report.trace.len(),
        last.map_or("n/a".into(), |v| format!("{v:.4}")),
        path.display(),
        digest(&written)
    );
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mut flags = Vec::new();
    density_flag(&mut flags, a.density);
    let cfg = load_config(&a.cfg, flags)?;
    let model = load_checkpoint(&a.checkpoint)?;
    let data = load_dataset(&a.data)?;
    let report = evaluate(&model, &data.test, cfg.eval_options())?;
    let mut files = vec![None; report.maps.len()];
    if a.dump_maps {
        for (i, m) in report.maps.iter().enumerate() {
            let rel = format!("maps/{:05}.pgm", m.sample_id);
            let path = a.out.join(&rel);
            error::write(&path, &p5_bytes(m))?;
            let (w, h, _) = parse_p5(&error::read(&path)?)?;
            if (w, h) != (m.width, m.height) {
                return Err(Error::format(0, format!("{} has the wrong size", path.display())));
            }
            files[i] = Some(rel);
        }
    }
    let json = ReportJson::new(
        &report,
        density_name(cfg.eval.density),
        &format!("{:?}", cfg.eval.image_score).to_lowercase(),
        &files,
    );
    let path = a.out.join("report.json");
    json.write(&path)?;
    if ReportJson::read(&path)? != json {
        return Err(Error::Config(format!("{} did not read back", path.display())));
    }
    write_resolved(&a.out, &cfg)?;
    eprintln!(
        "detection AUROC {:.4}, localization AUROC {}",
        report.detection_auroc,
        report.localization_auroc.map_or("n/a".into(), |v| format!("{v:.4}"))
    );
    Ok(())
}

#[derive(Debug, Serialize, serde::Deserialize, PartialEq)]
pub struct ScoreJson {
    pub score: f64,
    pub image_score: String,
    pub density: String,
    pub prototype: Option<usize>,
    pub map_min: f64,
    pub map_max: f64,
    pub height: usize,
    pub width: usize,
}

pub fn cmd_score(a: &ScoreArgs) -> Result<()> {
    let mut flags = Vec::new();
    density_flag(&mut flags, a.density);
    let cfg = load_config(&a.cfg, flags)?;
    let model = load_checkpoint(&a.checkpoint)?;
    let sample = read_feature_file(&a.sample, 0)?;
    let opts = cfg.eval_options();
    let map = anomaly_map(&model, &sample, opts.density)?;
    let score = image_score(&map, opts.image_score)?;
    let prototype = match model.prototypes() {
        Some(_) => Some(model.assign_prototypes(&[&sample])?[0]),
        None => None,
    };
    let (map_min, map_max) = map.min_max();
    let json = ScoreJson {
        score,
        image_score: format!("{:?}", cfg.eval.image_score).to_lowercase(),
        density: density_name(cfg.eval.density).into(),
        prototype,
        map_min,
        map_max,
        height: map.height,
        width: map.width,
    };
    error::write(&a.out, serde_json::to_string_pretty(&json)?.as_bytes())?;
    let back: ScoreJson = serde_json::from_slice(&error::read(&a.out)?)?;
    if back != json {
        return Err(Error::Config(format!("{} did not read back", a.out.display())));
    }
    if let Some(p) = &a.map {
        error::write(p, &p5_bytes(&map))?;
        parse_p5(&error::read(p)?)?;
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        write_resolved(dir, &cfg)?;
    }
    eprintln!("score {score:.4}");
    Ok(())
}

/// Usage counts of every codebook over `samples`: prototypes first, then
/// pattern codebooks by scale.
pub fn codebook_usage(model: &VqFlowModel<f32>, samples: &[FeatureSample<f32>]) -> Result<Vec<Vec<u64>>> {
    let mut work = model.clone();
    for u in work.usage_mut() {
        u.iter_mut().for_each(|v| *v = 0);
    }
    for chunk in samples.chunks(16) {
        let refs: Vec<&FeatureSample<f32>> = chunk.iter().collect();
        let batch = Batch::from_samples(&refs)?;
        let mut tape = Tape::new();
        let p = work.params().bind(&mut tape);
        let fwd = work.forward(&mut tape, &p, &batch)?;
        work.record_usage(&fwd);
    }
    Ok(work.usage_mut().into_iter().map(|u| u.clone()).collect())
}

/// Distance from each codeword to its nearest other codeword.
pub fn nearest_other(codewords: &vqflow_core::Tensor<f32>) -> Vec<f64> {
    let k = codewords.rows();
    (0..k)
        .map(|i| {
            (0..k)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(codewords.row(i), codewords.row(j)) as f64).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, serde::Deserialize, PartialEq)]
pub struct PrototypeSummary {
    pub prototype_id: usize,
    pub usage: u64,
    pub dominant_class: Option<u32>,
    /// Share of the prototype's samples from its dominant class.
    pub purity: Option<f64>,
}

#[derive(Debug, Clone, Serialize, serde::Deserialize, PartialEq)]
pub struct InspectSummary {
    pub prototypes: usize,
    /// Entropy of the assignment histogram in nats, and its maximum `ln K`.
    pub assignment_entropy: Option<f64>,
    pub max_entropy: Option<f64>,
    /// Purity averaged over samples (each sample weighs its prototype's purity).
    pub weighted_purity: Option<f64>,
    pub per_prototype: Vec<PrototypeSummary>,
}

pub fn cmd_inspect(a: &InspectArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let samples = match &a.data {
        Some(d) => {
            let ds = load_dataset(d)?;
            Some(match a.split.as_str() {
                "train" => ds.train,
                "test" => ds.test,
                s => return Err(Error::Config(format!("unknown split `{s}`, expected train or test"))),
            })
        }
        None => None,
    };
    let usage = match &samples {
        Some(s) => codebook_usage(&model, s)?,
        None => {
            let mut m = model.clone();
            m.usage_mut().into_iter().map(|u| u.clone()).collect()
        }
    };
    let mut tables: Vec<(&str, usize, &vqflow_core::Tensor<f32>)> = Vec::new();
    if let Some(cw) = model.prototypes() {
        tables.push(("prototypes", 0, cw));
    }
    for (i, slot) in model.cspc_slots().iter().enumerate() {
        tables.push(("patterns", i + 1, model.params().get(slot.param)));
    }
    for (t, (kind, scale, cw)) in tables.iter().enumerate() {
        let name = if *scale == 0 { format!("{kind}.csv") } else { format!("{kind}{scale}.csv") };
        let id = if *scale == 0 { "prototype_id" } else { "codeword_id" };
        let mut csv = format!("{id},usage,nearest_other_distance\n");
        for (k, d) in nearest_other(cw).iter().enumerate() {
            csv.push_str(&format!("{k},{},{d}\n", usage[t][k]));
        }
        error::write(&a.out.join(name), csv.as_bytes())?;
    }

    let mut summary = InspectSummary {
        prototypes: model.prototypes().map_or(0, |c| c.rows()),
        assignment_entropy: None,
        max_entropy: None,
        weighted_purity: None,
        per_prototype: Vec::new(),
    };
    if let (Some(cw), Some(samples)) = (model.prototypes(), &samples) {
        let refs: Vec<&FeatureSample<f32>> = samples.iter().collect();
        let mut assign = Vec::with_capacity(samples.len());
        for chunk in refs.chunks(64) {
            let y = model.project_prototypes(chunk)?;
            assign.extend(quantize_nearest(cw, &y)?.indices);
        }
        let k = cw.rows();
        let mut classes: Vec<u32> = samples.iter().map(|s| s.class_id).collect();
        classes.sort_unstable();
        classes.dedup();
        let mut table = vec![vec![0u64; classes.len()]; k];
        for (s, &p) in samples.iter().zip(&assign) {
            let c = classes.binary_search(&s.class_id).unwrap();
            table[p][c] += 1;
        }
        let mut csv = String::from("prototype_id,class_id,count\n");
        for (p, row) in table.iter().enumerate() {
            for (c, &n) in row.iter().enumerate() {
                if n > 0 {
                    csv.push_str(&format!("{p},{},{n}\n", classes[c]));
                }
            }
        }
        error::write(&a.out.join("assignments.csv"), csv.as_bytes())?;
        let n = samples.len() as f64;
        let mut entropy = 0.0;
        let mut weighted = 0.0;
        for (p, row) in table.iter().enumerate() {
            let total: u64 = row.iter().sum();
            let (best, &top) = row.iter().enumerate().max_by_key(|(_, &v)| v).unwrap();
            let purity = (total > 0).then(|| top as f64 / total as f64);
            if total > 0 {
                let q = total as f64 / n;
                entropy -= q * q.ln();
                weighted += top as f64 / n;
            }
            summary.per_prototype.push(PrototypeSummary {
                prototype_id: p,
                usage: total,
                dominant_class: (total > 0).then_some(classes[best]),
                purity,
            });
        }
        summary.assignment_entropy = Some(entropy);
        summary.max_entropy = Some((k as f64).ln());
        summary.weighted_purity = Some(weighted);
    }
    let path = a.out.join("summary.json");
    error::write(&path, serde_json::to_string_pretty(&summary)?.as_bytes())?;
    let back: InspectSummary = serde_json::from_slice(&error::read(&path)?)?;
    if back != summary {
        return Err(Error::Config(format!("{} did not read back", path.display())));
    }
    eprintln!(
        "{} prototypes; assignment entropy {}",
        summary.prototypes,
        summary.assignment_entropy.map_or("n/a".into(), |e| format!("{e:.3} of {:.3}", summary.max_entropy.unwrap()))
    );
    Ok(())
}
