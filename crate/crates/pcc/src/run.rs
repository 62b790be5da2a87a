//! Training, completion and evaluation over the on-disk dataset. Each
//! category gets its own generator, discriminator and run directory
//! `<output>/<category>/`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use serde::Serialize;

use pcc_core::autodiff::{decode_checkpoint, encode_checkpoint, ParamStore};
use pcc_core::cloud::PointCloud;
use pcc_core::encodings::Orientation;
use pcc_core::metrics::{self, MetricReport};
use pcc_core::prn::{Prn, PrnConfig, PrnInput};
use pcc_core::shapes::Split;
use pcc_core::train::{EpochLosses, TrainSample, Trainer};

use crate::config::RunConfig;
use crate::dataset::{read_bank, read_gt, read_split, write_json};
use crate::error::{read_file, read_text, write_file, PccError, Result};

pub const LAST_CHECKPOINT: &str = "last.pccf";
pub const LOSS_CSV: &str = "losses.csv";
pub const LOSS_HEADER: &str = "epoch,l_part,l_rend,l_dens,l_gen,l_disc,seconds";

pub fn run_dir(cfg: &RunConfig, category: &str) -> PathBuf {
    cfg.output.join(category)
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.pccf")
}

/// Training samples of a category, with input normals oriented toward each
/// scan's camera.
pub fn load_training(cfg: &RunConfig, category: &str) -> Result<Vec<TrainSample>> {
    read_split(&cfg.data.root, category, Split::Train)?
        .into_iter()
        .map(|s| Ok(TrainSample::new(&s.id, s.partial, s.camera, s.mask, &cfg.prn)?))
        .collect()
}

pub fn save_checkpoint(path: &Path, trainer: &Trainer) -> Result<()> {
    let state = trainer.state_tensors();
    let bytes = encode_checkpoint(state.iter().map(|(n, t)| (n.as_str(), t)));
    write_file(path, &bytes)
}

pub fn load_checkpoint(path: &Path, trainer: &mut Trainer) -> Result<()> {
    let entries = decode_checkpoint(&read_file(path)?).map_err(|e| PccError::format(path, e.to_string()))?;
    trainer.load_state(&entries).map_err(|e| PccError::Config(format!("{}: {e}", path.display())))
}

/// Generator weights from a checkpoint. Shape disagreements with `prn`
/// are configuration errors.
pub fn load_generator(path: &Path, prn: &PrnConfig) -> Result<(Prn, ParamStore<f32>)> {
    let entries = decode_checkpoint(&read_file(path)?).map_err(|e| PccError::format(path, e.to_string()))?;
    let mut store = ParamStore::new();
    let model = Prn::new(prn.clone(), &mut store, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
    let names: Vec<String> = store.iter().map(|(n, _)| format!("gen/{n}")).collect();
    let mut picked = Vec::with_capacity(names.len());
    for n in &names {
        let t = entries
            .iter()
            .find(|(k, _)| k == n)
            .map(|(_, t)| t)
            .ok_or_else(|| PccError::Config(format!("{}: checkpoint has no `{n}`; does it match prn.*?", path.display())))?;
        picked.push((&n["gen/".len()..], t));
    }
    store
        .load_named(picked)
        .map_err(|e| PccError::Config(format!("{}: {e}", path.display())))?;
    Ok((model, store))
}

fn csv_row(l: &EpochLosses, seconds: f64) -> String {
    format!(
        "{},{:e},{:e},{:e},{:e},{:e},{:.3}\n",
        l.epoch, l.l_part, l.l_rend, l.l_dens, l.l_gen, l.l_disc, seconds
    )
}

/// Keeps the header and rows up to `epoch` of an existing loss log.
fn truncated_log(path: &Path, epoch: usize) -> Result<String> {
    let mut out = String::from(LOSS_HEADER);
    out.push('\n');
    if path.exists() {
        for line in read_text(path)?.lines().skip(1) {
            let e: usize = line.split(',').next().and_then(|v| v.parse().ok()).unwrap_or(usize::MAX);
            if e <= epoch {
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub category: String,
    pub losses: Vec<EpochLosses>,
    pub seconds: f64,
}

/// Trains one category to `train.epochs`, optionally resuming from a
/// checkpoint. `on_epoch` sees every finished epoch.
pub fn train_category(cfg: &RunConfig, category: &str, resume: Option<&Path>, mut on_epoch: impl FnMut(&EpochLosses, f64)) -> Result<TrainOutcome> {
    let samples = load_training(cfg, category)?;
    if samples.is_empty() {
        return Err(PccError::format(&cfg.data.root.join(category), "no training samples"));
    }
    let bank = read_bank(&cfg.data.root, category)?;
    let mut trainer = Trainer::new(cfg.prn.clone(), cfg.train_config(), bank.eta)?;
    let dir = run_dir(cfg, category);
    if let Some(path) = resume {
        load_checkpoint(path, &mut trainer)?;
    }
    write_file(&dir.join("config.json"), cfg.to_json().as_bytes())?;
    let log_path = dir.join(LOSS_CSV);
    let mut log = truncated_log(&log_path, trainer.epoch)?;
    write_file(&log_path, log.as_bytes())?;
    let start = Instant::now();
    let mut losses = Vec::new();
    while trainer.epoch < cfg.train.epochs {
        let t = Instant::now();
        let l = trainer.run_epoch(&samples, &bank)?;
        let secs = t.elapsed().as_secs_f64();
        if !l.all_finite() {
            return Err(pcc_core::Error::NonFiniteLoss {
                sample: format!("epoch {}", l.epoch),
                detail: format!("{l:?}"),
            }
            .into());
        }
        let _ = write!(log, "{}", csv_row(&l, secs));
        write_file(&log_path, log.as_bytes())?;
        if trainer.epoch % cfg.train.checkpoint_every == 0 {
            save_checkpoint(&dir.join(checkpoint_name(trainer.epoch)), &trainer)?;
        }
        on_epoch(&l, secs);
        losses.push(l);
    }
    save_checkpoint(&dir.join(LAST_CHECKPOINT), &trainer)?;
    Ok(TrainOutcome {
        category: category.to_string(),
        losses,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Prediction for a partial cloud. Normals face `eye` when the scanning
/// camera is known and point away from the centroid otherwise.
pub fn complete_cloud(model: &Prn, store: &ParamStore<f32>, partial: &PointCloud, eye: Option<[f64; 3]>) -> Result<PointCloud> {
    let orientation = match eye {
        Some(e) => Orientation::Toward(e),
        None => Orientation::Centroid,
    };
    let input = PrnInput::new(partial.clone().without_normals(), &model.config.encodings, orientation)?;
    let (_, out) = model.predict(store, &input)?;
    Ok(PointCloud::new(out)?)
}

/// Metrics in units of 1e-4, as conventionally reported.
pub const REPORT_SCALE: f64 = 1e4;

#[derive(Debug, Clone, Serialize)]
pub struct EvalRow {
    pub category: String,
    pub id: String,
    pub report: MetricReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub split: String,
    pub scale: f64,
    pub samples: usize,
    pub per_category: Vec<(String, MetricReport)>,
    pub overall: MetricReport,
}

pub fn scaled(r: &MetricReport) -> MetricReport {
    MetricReport {
        cd_l2: r.cd_l2 * REPORT_SCALE,
        precision: r.precision * REPORT_SCALE,
        coverage: r.coverage * REPORT_SCALE,
        ucd: r.ucd * REPORT_SCALE,
        uhd: r.uhd * REPORT_SCALE,
    }
}

/// Evaluates one category's samples of `split` with `checkpoint`.
pub fn evaluate_category(cfg: &RunConfig, category: &str, split: Split, checkpoint: &Path) -> Result<Vec<EvalRow>> {
    let (model, store) = load_generator(checkpoint, &cfg.prn)?;
    let mut rows = Vec::new();
    for s in read_split(&cfg.data.root, category, split)? {
        let gt = read_gt(&cfg.data.root, category, &s.id)?;
        let out = complete_cloud(&model, &store, &s.partial, Some(s.camera.eye()))?;
        rows.push(EvalRow {
            category: category.to_string(),
            id: s.id,
            report: scaled(&metrics::evaluate(out.positions(), gt.positions())?),
        });
    }
    Ok(rows)
}

pub const EVAL_HEADER: &str = "category,id,cd_l2,precision,coverage,ucd,uhd";

/// Writes `eval_<split>.csv` and `eval_<split>.json` under the output
/// directory. All values are scaled by [`REPORT_SCALE`].
pub fn write_eval(cfg: &RunConfig, split: Split, rows: &[EvalRow]) -> Result<EvalSummary> {
    let mut csv = String::from(EVAL_HEADER);
    csv.push('\n');
    for r in rows {
        let m = &r.report;
        let _ = writeln!(csv, "{},{},{:e},{:e},{:e},{:e},{:e}", r.category, r.id, m.cd_l2, m.precision, m.coverage, m.ucd, m.uhd);
    }
    let mut per_category = Vec::new();
    for c in &cfg.data.categories {
        let reports: Vec<MetricReport> = rows.iter().filter(|r| &r.category == c).map(|r| r.report).collect();
        if let Some(m) = metrics::mean_report(&reports) {
            per_category.push((c.clone(), m));
        }
    }
    let all: Vec<MetricReport> = rows.iter().map(|r| r.report).collect();
    let summary = EvalSummary {
        split: split.name().to_string(),
        scale: REPORT_SCALE,
        samples: rows.len(),
        per_category,
        overall: metrics::mean_report(&all).unwrap_or_default(),
    };
    write_file(&cfg.output.join(format!("eval_{}.csv", split.name())), csv.as_bytes())?;
    write_json(&cfg.output.join(format!("eval_{}.json", split.name())), &summary)?;
    Ok(summary)
}
