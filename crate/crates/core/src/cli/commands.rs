use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::dataset::{
    apply_augmentation, load_record, write_phantom_tree, DatasetManifest, PhantomDatasetConfig, Source, Split, CLASS_DIRS,
};
use crate::layers::gradcheck::{run_suite, SuiteOptions};
use crate::metrics::MetricsReport;
use crate::model::{
    build_model, check_model_gradients, count_parameters, gradcheck_spec, load_checkpoint, save_checkpoint,
    DEFAULT_MODEL_EPSILON, MODEL_GRADCHECK_THRESHOLD,
};
use crate::nifti::{read_header, write_volume, Datatype, NiftiHeader};
use crate::trainer::{evaluate, export_curves, preprocess_for, train_with, EpochRecord, TrainConfig};

use super::config::{RunConfig, MANIFEST_FILE};
use super::CliError;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CURVES_FILE: &str = "curves.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const AB_FILE: &str = "ab.csv";

fn io(e: std::io::Error) -> CliError {
    CliError::Data(format!("IoFailure: {e}"))
}

/// Human-readable header dump.
pub fn format_header(h: &NiftiHeader) -> String {
    let rank = h.dim[0].clamp(0, 7) as usize;
    let join = |xs: &mut dyn Iterator<Item = String>| xs.collect::<Vec<_>>().join(" ");
    let datatype = match Datatype::from_code(h.datatype_code) {
        Ok(d) => format!("{d:?}").to_lowercase(),
        Err(_) => "unsupported".into(),
    };
    let magic = String::from_utf8_lossy(&h.magic[..3]).into_owned();
    [
        format!("sizeof_hdr: {}", h.sizeof_hdr),
        format!("magic: {magic}"),
        format!("endian: {:?}", h.endian).to_lowercase(),
        format!("dim: {}", join(&mut h.dim[1..=rank].iter().map(|d| d.to_string()))),
        format!("datatype: {} ({datatype})", h.datatype_code),
        format!("bitpix: {}", h.bitpix),
        format!("pixdim: {}", join(&mut h.pixdim[1..=rank].iter().map(|d| d.to_string()))),
        format!("vox_offset: {}", h.vox_offset),
        format!("scl_slope: {}", h.scl_slope),
        format!("scl_inter: {}", h.scl_inter),
    ]
    .join("\n")
}

pub fn cmd_inspect(path: &Path, out: &mut dyn Write) -> Result<NiftiHeader, CliError> {
    let h = read_header(path)?;
    writeln!(out, "{}", format_header(&h)).map_err(io)?;
    Ok(h)
}

/// Writes the configured phantom tree under `out.dir`.
pub fn cmd_phantom(cfg: &RunConfig, out: &mut dyn Write) -> Result<Vec<PathBuf>, CliError> {
    let paths = write_phantom_tree(&cfg.phantom, &cfg.out_dir)?;
    writeln!(out, "wrote {} phantoms under {}", paths.len(), cfg.out_dir.display()).map_err(io)?;
    Ok(paths)
}

fn file_stem(source: &Source, fallback: usize) -> String {
    match source {
        Source::Path(p) => {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            name.trim_end_matches(".gz").trim_end_matches(".nii").to_string()
        }
        Source::Phantom(_) => format!("phantom_{fallback:03}"),
    }
}

/// Resizes and normalizes every record (transforms included) to the model
/// input shape and writes the results as a folder tree under `out.dir`.
pub fn cmd_preprocess(cfg: &RunConfig, out: &mut dyn Write) -> Result<Vec<PathBuf>, CliError> {
    let manifest = cfg.dataset()?;
    let pre = preprocess_for(&cfg.spec, cfg.normalize);
    let mut written = Vec::with_capacity(manifest.records.len());
    for (i, r) in manifest.records.iter().enumerate() {
        let mut stem = file_stem(&r.source, i);
        if let Some(t) = &r.transform {
            stem = format!("{stem}_{}_{i:03}", t.tag().replace('+', "_"));
        }
        let dir = cfg.out_dir.join(r.split.dir_name()).join(CLASS_DIRS[r.label as usize]);
        fs::create_dir_all(&dir).map_err(io)?;
        let path = dir.join(format!("{stem}.nii.gz"));
        write_volume(&path, &load_record(r, &pre)?)?;
        written.push(path);
    }
    let [x, y, z] = pre.target_shape;
    writeln!(out, "preprocessed {} volumes to {x}x{y}x{z} under {}", written.len(), cfg.out_dir.display()).map_err(io)?;
    Ok(written)
}

/// Applies the augmentation policy to the train split and saves the
/// resulting manifest as `out.dir/manifest.jsonl`.
pub fn cmd_augment(cfg: &RunConfig, out: &mut dyn Write) -> Result<DatasetManifest, CliError> {
    let augmented = apply_augmentation(&cfg.dataset()?, &cfg.policy())?;
    fs::create_dir_all(&cfg.out_dir).map_err(io)?;
    augmented.save(cfg.out_dir.join(MANIFEST_FILE))?;
    let [h, p] = augmented.class_counts(Split::Train);
    writeln!(out, "train manifest: {} records ({h} health, {p} patient)", h + p).map_err(io)?;
    Ok(augmented)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub report: MetricsReport,
    /// Split the report was computed on.
    pub eval_split: Split,
    pub train_records: usize,
}

fn eval_split(manifest: &DatasetManifest) -> Split {
    if manifest.indices(Split::Test).is_empty() {
        Split::Train
    } else {
        Split::Test
    }
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainOutcome, CliError> {
    let manifest = cfg.dataset()?;
    let tc = cfg.train_config();
    let model = build_model::<f32>(&cfg.spec, cfg.seed)?;
    let count = count_parameters(&model);
    writeln!(out, "model: {} trainable / {} total parameters", count.trainable, count.total).map_err(io)?;
    let mut log_err = None;
    let run = train_with(model, &manifest, &tc, |r| {
        let mut line = format!("epoch {:>3}  loss {:.4}  acc {:.4}", r.epoch, r.train_loss, r.train_accuracy);
        if let (Some(l), Some(a)) = (r.val_loss, r.val_accuracy) {
            line += &format!("  val_loss {l:.4}  val_acc {a:.4}");
        }
        if let Err(e) = writeln!(out, "{line}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(io(e));
    }
    let [h, p] = run.train_manifest.class_counts(Split::Train);
    writeln!(out, "train manifest: {} records ({h} health, {p} patient)", h + p).map_err(io)?;
    fs::create_dir_all(&cfg.out_dir).map_err(io)?;
    save_checkpoint(&run.model, cfg.out_dir.join(CHECKPOINT_FILE))?;
    export_curves(&run.history, cfg.out_dir.join(CURVES_FILE))?;
    let split = eval_split(&manifest);
    let report = evaluate(&run.model, &manifest, split, cfg.threshold, cfg.normalize)?;
    report.save(cfg.out_dir.join(METRICS_FILE)).map_err(io)?;
    writeln!(out, "{} accuracy {:.4}  auc {}", split.dir_name(), report.accuracy, fmt_auc(report.auc)).map_err(io)?;
    Ok(TrainOutcome {
        history: run.history,
        report,
        eval_split: split,
        train_records: h + p,
    })
}

fn fmt_auc(auc: Option<f64>) -> String {
    auc.map_or_else(|| "n/a".into(), |a| format!("{a:.4}"))
}

/// Evaluates `out.dir/model.ckpt` on the test split (train split when no
/// test records exist) and writes `metrics.json`.
pub fn cmd_eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<MetricsReport, CliError> {
    let model = load_checkpoint(cfg.out_dir.join(CHECKPOINT_FILE))?;
    let manifest = cfg.dataset()?;
    let report = evaluate(&model, &manifest, eval_split(&manifest), cfg.threshold, cfg.normalize)?;
    report.save(cfg.out_dir.join(METRICS_FILE)).map_err(io)?;
    writeln!(out, "{}", report.to_json()).map_err(io)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbRow {
    pub seed: u64,
    pub baseline: MetricsReport,
    pub augmented: MetricsReport,
}

impl AbRow {
    pub fn delta_accuracy(&self) -> f64 {
        self.augmented.accuracy - self.baseline.accuracy
    }

    pub fn delta_auc(&self) -> Option<f64> {
        Some(self.augmented.auc? - self.baseline.auc?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbReport {
    pub rows: Vec<AbRow>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl AbReport {
    pub fn mean_baseline_accuracy(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.baseline.accuracy)).unwrap_or(f64::NAN)
    }

    pub fn mean_augmented_accuracy(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.augmented.accuracy)).unwrap_or(f64::NAN)
    }

    pub fn mean_delta_accuracy(&self) -> f64 {
        mean(self.rows.iter().map(AbRow::delta_accuracy)).unwrap_or(f64::NAN)
    }

    pub fn mean_baseline_auc(&self) -> Option<f64> {
        mean(self.rows.iter().filter_map(|r| r.baseline.auc))
    }

    pub fn mean_augmented_auc(&self) -> Option<f64> {
        mean(self.rows.iter().filter_map(|r| r.augmented.auc))
    }

    /// Over seeds where both arms have an AUC.
    pub fn mean_delta_auc(&self) -> Option<f64> {
        mean(self.rows.iter().filter_map(AbRow::delta_auc))
    }

    /// One row per seed and a closing `mean` row; deltas are augmented
    /// minus baseline, signed.
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map_or_else(String::new, |v| format!("{v:.6}"));
        let mut s = String::from("seed,baseline_accuracy,augmented_accuracy,delta_accuracy,baseline_auc,augmented_auc,delta_auc\n");
        for r in &self.rows {
            s += &format!(
                "{},{:.6},{:.6},{:+.6},{},{},{}\n",
                r.seed,
                r.baseline.accuracy,
                r.augmented.accuracy,
                r.delta_accuracy(),
                opt(r.baseline.auc),
                opt(r.augmented.auc),
                r.delta_auc().map_or_else(String::new, |d| format!("{d:+.6}")),
            );
        }
        s += &format!(
            "mean,{:.6},{:.6},{:+.6},{},{},{}\n",
            self.mean_baseline_accuracy(),
            self.mean_augmented_accuracy(),
            self.mean_delta_accuracy(),
            opt(self.mean_baseline_auc()),
            opt(self.mean_augmented_auc()),
            self.mean_delta_auc().map_or_else(String::new, |d| format!("{d:+.6}")),
        );
        s
    }
}

/// Baseline vs augmented arm per seed. Each seed fixes the phantom dataset,
/// the shared initialization and the training streams of both arms, which
/// are then scored on the same test split.
pub fn cmd_ab(cfg: &RunConfig, out: &mut dyn Write) -> Result<AbReport, CliError> {
    if cfg.phantom_seeds.len() < 2 {
        return Err(CliError::Config(format!(
            "the A/B experiment needs at least 2 seeds in data.phantom.seeds, got {}",
            cfg.phantom_seeds.len()
        )));
    }
    let mut rows = Vec::with_capacity(cfg.phantom_seeds.len());
    for &seed in &cfg.phantom_seeds {
        let manifest = crate::dataset::phantom_manifest(&PhantomDatasetConfig {
            seed,
            ..cfg.phantom.clone()
        })?;
        let base = TrainConfig {
            seed,
            epochs: cfg.ab_baseline_epochs,
            augmentation: None,
            ..cfg.train_config()
        };
        let aug = TrainConfig {
            epochs: cfg.ab_augmented_epochs,
            augmentation: Some(crate::volume_ops::AugmentationPolicy { seed, ..cfg.policy() }),
            ..base.clone()
        };
        let arm = |tc: &TrainConfig| -> Result<MetricsReport, CliError> {
            let run = train_with(build_model::<f32>(&cfg.spec, seed)?, &manifest, tc, |_| {})?;
            Ok(evaluate(&run.model, &manifest, Split::Test, cfg.threshold, cfg.normalize)?)
        };
        let row = AbRow {
            seed,
            baseline: arm(&base)?,
            augmented: arm(&aug)?,
        };
        writeln!(
            out,
            "seed {seed}: baseline acc {:.4} auc {}  augmented acc {:.4} auc {}  delta {:+.4}",
            row.baseline.accuracy,
            fmt_auc(row.baseline.auc),
            row.augmented.accuracy,
            fmt_auc(row.augmented.auc),
            row.delta_accuracy()
        )
        .map_err(io)?;
        rows.push(row);
    }
    let report = AbReport { rows };
    fs::create_dir_all(&cfg.out_dir).map_err(io)?;
    fs::write(cfg.out_dir.join(AB_FILE), report.to_csv()).map_err(io)?;
    writeln!(
        out,
        "mean delta accuracy {:+.4}  mean delta auc {}",
        report.mean_delta_accuracy(),
        report.mean_delta_auc().map_or_else(|| "n/a".into(), |d| format!("{d:+.4}"))
    )
    .map_err(io)?;
    Ok(report)
}

/// One line per layer plus the end-to-end model check; true when all pass.
pub fn cmd_gradcheck(cfg: &RunConfig, out: &mut dyn Write) -> Result<bool, CliError> {
    let opts = SuiteOptions {
        seed: cfg.gradcheck_seed,
        fault: cfg.gradcheck_fault,
        ..Default::default()
    };
    let checks = run_suite(&opts).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut all = true;
    writeln!(out, "{:<16} {:>12} {:>10}  result", "layer", "max_rel_err", "threshold").map_err(io)?;
    for c in &checks {
        all &= c.passed();
        let verdict = if c.passed() { "PASS" } else { "FAIL" };
        writeln!(out, "{:<16} {:>12.3e} {:>10.0e}  {verdict}", c.layer.name(), c.max_rel_error(), c.threshold).map_err(io)?;
    }
    let reports = check_model_gradients(&gradcheck_spec(), cfg.gradcheck_seed, DEFAULT_MODEL_EPSILON)?;
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let passed = reports.iter().all(|r| r.passed);
    all &= passed;
    writeln!(
        out,
        "{:<16} {:>12.3e} {:>10.0e}  {}",
        "model",
        worst,
        MODEL_GRADCHECK_THRESHOLD,
        if passed { "PASS" } else { "FAIL" }
    )
    .map_err(io)?;
    Ok(all)
}
