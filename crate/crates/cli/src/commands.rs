use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tempcon::dataspec::{generate_synthetic_dataset, load_manifest, split_by_location, Manifest};
use tempcon::detkit::{
    evaluate_detections, matriochka_sample, read_ground_truth, read_predictions, subsample_negative_tiles,
    tile_dataset, generate_detection_dataset, DetectionDataset, MatriochkaOutcome, MetricReport, Tile,
};
use tempcon::image::{DiskImages, ImageSource};
use tempcon::moco::{checkpoint_load, checkpoint_save, pretrain, write_training_log, Checkpoint, EpochLog};
use tempcon::probe::{run_label_efficiency_suite, LabelEfficiencyReport};
use tempcon::rng::{derive_indexed, derive_seed, seeded};
use tempcon::{Error, Result};

use crate::config::{DatasetSource, ExperimentConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const PRETRAIN_LOG_FILE: &str = "pretrain_log.jsonl";
pub const PROBE_REPORT_FILE: &str = "probe_report.json";
pub const PROBE_TABLE_FILE: &str = "probe_table.txt";
pub const DET_REPORT_FILE: &str = "det_report.json";
pub const TILES_FILE: &str = "tiles.jsonl";
pub const MATRIOCHKA_DIR: &str = "matriochka";
pub const MATRIOCHKA_TABLE_FILE: &str = "matriochka_summary.txt";
pub const REPORT_FILE: &str = "report.md";
pub const CONFIG_COPY_FILE: &str = "config.json";

/// Root-seed substreams; each command draws only from its own.
pub fn substream(cfg: &ExperimentConfig, name: &str) -> u64 {
    derive_seed(cfg.seed, name)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

/// Creates the output directory and stores the effective config in it.
fn prepare_output(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)
        .map_err(|e| Error::Validation(format!("output directory {} is not writable: {e}", dir.display())))?;
    write_text(&dir.join(CONFIG_COPY_FILE), &cfg.to_json())?;
    Ok(dir)
}

/// Train/validation manifests split by location, and their image source.
pub struct LoadedData {
    pub train: Manifest,
    pub val: Manifest,
    pub source: Box<dyn ImageSource>,
    /// Side of the square images, when all records agree.
    pub image_size: Option<usize>,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<LoadedData> {
    let (manifest, source): (Manifest, Box<dyn ImageSource>) = match &cfg.dataset.source {
        DatasetSource::Synthetic(spec) => {
            let spec = tempcon::dataspec::SyntheticSpec {
                seed: substream(cfg, "dataset"),
                ..spec.clone()
            };
            let ds = generate_synthetic_dataset(&spec)?;
            (ds.manifest, Box::new(ds.images))
        }
        DatasetSource::Manifest { path, image_root } => {
            let manifest = load_manifest(path)?;
            let root = image_root
                .clone()
                .unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
            (manifest, Box::new(DiskImages::new(root)))
        }
    };
    let mut sizes = manifest.records().map(|(_, r)| (r.width, r.height));
    let first = sizes.next();
    let image_size = match first {
        Some((w, h)) if w == h && sizes.all(|s| s == (w, h)) => Some(w as usize),
        _ => None,
    };
    let mut rng = seeded(substream(cfg, "split"));
    let (train, val) = split_by_location(&manifest, cfg.dataset.val_fraction, &mut rng)?;
    Ok(LoadedData {
        train,
        val,
        source,
        image_size,
    })
}

#[derive(Debug, Clone)]
pub struct PretrainArtifacts {
    pub checkpoint: PathBuf,
    pub log: Vec<EpochLog>,
}

/// Pretrains on the training split and writes the checkpoint and the
/// per-epoch log. `on_epoch` sees each log line as it is produced.
pub fn run_pretrain(cfg: &ExperimentConfig, on_epoch: impl FnMut(&EpochLog)) -> Result<PretrainArtifacts> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let contrastive = &cfg.pretrain.contrastive;
    let aug = &cfg.pretrain.augmentation;
    if let Some(s) = data.image_size {
        if s != aug.output_size {
            return Err(Error::Validation(format!(
                "images are {s} px, augmentation output_size is {}",
                aug.output_size
            )));
        }
    }
    let dir = prepare_output(cfg)?;
    let outcome = pretrain(
        &data.train,
        data.source.as_ref(),
        contrastive,
        aug,
        substream(cfg, "pretrain"),
        on_epoch,
    )?;
    let checkpoint = dir.join(CHECKPOINT_FILE);
    checkpoint_save(
        &Checkpoint {
            state: outcome.state,
            config: contrastive.clone(),
        },
        &checkpoint,
    )?;
    write_training_log(&outcome.log, &dir.join(PRETRAIN_LOG_FILE))?;
    Ok(PretrainArtifacts {
        checkpoint,
        log: outcome.log,
    })
}

/// Label-efficiency suite on top of a checkpoint's query encoder.
pub fn run_probe_suite(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<LabelEfficiencyReport> {
    cfg.validate()?;
    let ckpt = checkpoint_load(checkpoint)?;
    let data = load_data(cfg)?;
    let input = ckpt.state.arch.input_size;
    match data.image_size {
        Some(s) if s == input => {}
        Some(s) => {
            return Err(Error::Incompatible(format!(
                "checkpoint expects {input} px inputs, the dataset has {s} px images"
            )))
        }
        None => {
            return Err(Error::Incompatible(format!(
                "checkpoint expects {input} px square inputs, the dataset images differ in size or shape"
            )))
        }
    }
    let dir = prepare_output(cfg)?;
    let report = run_label_efficiency_suite(
        &ckpt.state,
        &data.train,
        &data.val,
        data.source.as_ref(),
        &cfg.probe,
        substream(cfg, "probe"),
    )?;
    write_text(&dir.join(PROBE_REPORT_FILE), &report.to_json())?;
    write_text(&dir.join(PROBE_TABLE_FILE), &report.render_table())?;
    Ok(report)
}

/// Level-1 and level-2 metrics of a prediction file against ground truth.
pub fn run_det_eval(cfg: &ExperimentConfig, gt: &Path, pred: &Path) -> Result<MetricReport> {
    cfg.detkit.validate()?;
    let d = &cfg.detkit;
    let gts = read_ground_truth(gt, &d.classes).map_err(|e| e.context(gt.display().to_string()))?;
    let preds = read_predictions(pred, &d.classes).map_err(|e| e.context(pred.display().to_string()))?;
    let report = evaluate_detections(&preds, &gts, &d.classes, &d.score_thresholds, d.iou_threshold)?;
    let dir = prepare_output(cfg)?;
    write_text(&dir.join(DET_REPORT_FILE), &to_json(&report))?;
    Ok(report)
}

#[derive(Serialize)]
struct TileRow<'a> {
    tile_id: String,
    positive: bool,
    #[serde(flatten)]
    tile: &'a Tile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileSummary {
    pub images: usize,
    pub positive_tiles: usize,
    pub negative_tiles: usize,
    pub kept_negative_tiles: usize,
    pub objects: usize,
}

/// Tiles a detection dataset directory, keeps `keep_ratio` of the negative
/// tiles and writes every kept tile with its tile-local labels.
pub fn run_tile(cfg: &ExperimentConfig, dataset_dir: &Path) -> Result<TileSummary> {
    cfg.detkit.validate()?;
    let ds = DetectionDataset::load_dir(dataset_dir, cfg.detkit.classes.clone())?;
    let split = tile_dataset(&ds, &cfg.detkit.tile)?;
    let mut rng = seeded(derive_seed(substream(cfg, "detkit"), "negatives"));
    let kept = subsample_negative_tiles(&split.negative, cfg.detkit.keep_ratio, &mut rng)?;
    let dir = prepare_output(cfg)?;
    let mut out = String::new();
    for (tile, positive) in split.positive.iter().map(|t| (t, true)).chain(kept.iter().map(|t| (t, false))) {
        let row = TileRow {
            tile_id: tile.tile_id(),
            positive,
            tile,
        };
        out.push_str(&serde_json::to_string(&row).expect("tile serializes"));
        out.push('\n');
    }
    write_text(&dir.join(TILES_FILE), &out)?;
    Ok(TileSummary {
        images: ds.images().len(),
        positive_tiles: split.positive.len(),
        negative_tiles: split.negative.len(),
        kept_negative_tiles: kept.len(),
        objects: ds.num_objects(),
    })
}

/// One row of the matriochka summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub name: String,
    pub images: usize,
    pub positive_tiles: usize,
    pub negative_tiles: usize,
    pub vehicles: u64,
    pub class_counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatriochkaReport {
    pub full: SplitRow,
    /// Per sampling seed, one outcome and one row per level.
    pub draws: Vec<(MatriochkaOutcome, Vec<SplitRow>)>,
}

impl MatriochkaReport {
    pub fn warnings(&self) -> impl Iterator<Item = &String> {
        self.draws.iter().flat_map(|(o, _)| o.warnings.iter())
    }

    /// Rows are splits, columns are images, tiles, vehicles and per-class counts.
    pub fn render_table(&self, classes: &[String]) -> String {
        let mut out = format!("{:<14} {:>7} {:>10} {:>10} {:>9}", "split", "images", "pos tiles", "neg tiles", "vehicles");
        for c in classes {
            let _ = write!(out, " {c:>11}");
        }
        out.push('\n');
        let rows = std::iter::once(&self.full).chain(self.draws.iter().flat_map(|(_, r)| r.iter()));
        for r in rows {
            let _ = write!(
                out,
                "{:<14} {:>7} {:>10} {:>10} {:>9}",
                r.name, r.images, r.positive_tiles, r.negative_tiles, r.vehicles
            );
            for c in &r.class_counts {
                let _ = write!(out, " {c:>11}");
            }
            out.push('\n');
        }
        out
    }
}

fn split_row(name: String, ds: &DetectionDataset, cfg: &ExperimentConfig, neg_seed: u64) -> Result<SplitRow> {
    let tiles = tile_dataset(ds, &cfg.detkit.tile)?;
    let kept = subsample_negative_tiles(&tiles.negative, cfg.detkit.keep_ratio, &mut seeded(neg_seed))?;
    let class_counts = ds.class_counts();
    Ok(SplitRow {
        name,
        images: ds.images().len(),
        positive_tiles: tiles.positive.len(),
        negative_tiles: kept.len(),
        vehicles: class_counts.iter().sum(),
        class_counts,
    })
}

/// `sampling_seeds` independent nested draws. Writes per seed and level the
/// image-id list, the outcomes as JSON and a summary table.
pub fn run_matriochka(cfg: &ExperimentConfig, dataset_dir: &Path) -> Result<MatriochkaReport> {
    cfg.detkit.validate()?;
    let d = &cfg.detkit;
    let ds = DetectionDataset::load_dir(dataset_dir, d.classes.clone())?;
    let root = substream(cfg, "detkit");
    let sample_seed = derive_seed(root, "matriochka");
    let neg_seed = derive_seed(root, "negatives");
    let dir = prepare_output(cfg)?;
    let mdir = dir.join(MATRIOCHKA_DIR);
    fs::create_dir_all(&mdir).map_err(io_err(&mdir))?;
    let full = split_row("full".into(), &ds, cfg, neg_seed)?;
    let counts = ds.image_counts();
    let mut draws = Vec::with_capacity(d.sampling_seeds);
    for k in 0..d.sampling_seeds {
        let mut rng = seeded(derive_indexed(sample_seed, &[k as u64]));
        let outcome = matriochka_sample(&counts, &d.target_fractions, d.proportion_tolerance, &mut rng)?;
        for w in outcome.levels.windows(2) {
            if !w[1].image_ids.iter().all(|id| w[0].image_ids.contains(id)) {
                return Err(Error::Contract(format!("seed {k}: level {} is not nested", w[1].fraction)));
            }
        }
        let mut rows = Vec::with_capacity(outcome.levels.len());
        for (li, level) in outcome.levels.iter().enumerate() {
            let pct = level.fraction * 100.0;
            let name = format!("seed{k}_{pct}%");
            write_text(&mdir.join(format!("seed{k}_{pct}.txt")), &(level.image_ids.join("\n") + "\n"))?;
            let subset = ds.subset(&level.image_ids);
            rows.push(split_row(name, &subset, cfg, derive_indexed(neg_seed, &[k as u64, li as u64]))?);
        }
        write_text(&mdir.join(format!("seed{k}.json")), &to_json(&outcome))?;
        draws.push((outcome, rows));
    }
    let report = MatriochkaReport { full, draws };
    write_text(&dir.join(MATRIOCHKA_TABLE_FILE), &report.render_table(&d.classes))?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Temporal,
    Detection,
}

/// Writes a synthetic dataset under `<output_dir>/<kind>`: PNGs and a
/// manifest for the temporal kind, image sizes and ground truth for the
/// detection kind. Returns that directory.
pub fn run_synth_gen(cfg: &ExperimentConfig, kind: SynthKind) -> Result<PathBuf> {
    let dir = prepare_output(cfg)?;
    match kind {
        SynthKind::Temporal => {
            let DatasetSource::Synthetic(spec) = &cfg.dataset.source else {
                return Err(Error::Validation("dataset.source is not synthetic".into()));
            };
            let spec = tempcon::dataspec::SyntheticSpec {
                seed: substream(cfg, "dataset"),
                ..spec.clone()
            };
            let out = dir.join("temporal");
            fs::create_dir_all(&out).map_err(io_err(&out))?;
            generate_synthetic_dataset(&spec)?.write_to(&out)?;
            Ok(out)
        }
        SynthKind::Detection => {
            cfg.detkit.validate()?;
            let mut rng = seeded(derive_seed(substream(cfg, "detkit"), "synthetic"));
            let ds = generate_detection_dataset(&cfg.detkit.synthetic, &mut rng)?;
            let out = dir.join("detection");
            ds.save_dir(&out)?;
            Ok(out)
        }
    }
}

/// Collects whatever artifacts exist in the output directory into one
/// markdown report.
pub fn run_report(cfg: &ExperimentConfig) -> Result<String> {
    let dir = &cfg.output_dir;
    let mut md = String::from("# Experiment report\n\n");
    let _ = writeln!(md, "seed: {}\n", cfg.seed);
    let log_path = dir.join(PRETRAIN_LOG_FILE);
    if log_path.is_file() {
        let lines: Vec<EpochLog> = read_text(&log_path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Format {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        md.push_str("## Pretraining\n\n| epoch | loss | lr |\n|---|---|---|\n");
        for l in &lines {
            let _ = writeln!(md, "| {} | {:.5} | {:.5} |", l.epoch, l.mean_loss, l.lr);
        }
        md.push('\n');
    }
    let table = dir.join(PROBE_TABLE_FILE);
    if table.is_file() {
        let _ = writeln!(md, "## Label efficiency (macro-F1 %, mean (sd))\n\n```\n{}```\n", read_text(&table)?);
    }
    let det = dir.join(DET_REPORT_FILE);
    if det.is_file() {
        let r: MetricReport = serde_json::from_str(&read_text(&det)?).map_err(|e| Error::Format {
            line: e.line(),
            message: e.to_string(),
        })?;
        let _ = writeln!(
            md,
            "## Detection (IoU > {})\n\n| F1 (best) | F1 @ 0.15 | AP | mAP |\n|---|---|---|---|\n| {:.4} | {:.4} | {:.4} | {:.4} |\n",
            r.iou_threshold, r.level1.f1, r.level1.f1_at_fixed_threshold, r.level1.ap, r.level2.map
        );
        md.push_str("| class | AP |\n|---|---|\n");
        for (c, ap) in &r.level2.per_class {
            let v = ap.map_or("-".to_string(), |a| format!("{a:.4}"));
            let _ = writeln!(md, "| {c} | {v} |");
        }
        md.push('\n');
    }
    let mt = dir.join(MATRIOCHKA_TABLE_FILE);
    if mt.is_file() {
        let _ = writeln!(md, "## Nested subsets\n\n```\n{}```\n", read_text(&mt)?);
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_text(&dir.join(REPORT_FILE), &md)?;
    Ok(md)
}
