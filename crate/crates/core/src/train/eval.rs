use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::trainer::{EpochLog, Model};
use crate::container::ScoreMatrix;
use crate::error::{config_err, domain_err, shape_err, Error, Result};
use crate::longtail::{ClassHistogram, ShotGroup, ShotThresholds};
use crate::skeleton::Modality;

/// Accuracy of the many / medium / few-shot class groups; `None` for an
/// empty group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub many: Option<f64>,
    pub medium: Option<f64>,
    pub few: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_samples: usize,
    pub overall: f64,
    /// `None` for classes without evaluation samples.
    pub per_class: Vec<Option<f64>>,
    pub eval_counts: Vec<usize>,
    /// Training class counts, when known.
    pub n_train: Option<Vec<usize>>,
    pub class_groups: Option<Vec<ShotGroup>>,
    pub groups: Option<GroupAccuracy>,
    /// `confusion[truth][prediction]`.
    pub confusion: Vec<Vec<usize>>,
    pub epochs: Vec<EpochLog>,
    pub threads: Option<usize>,
}

/// Accuracy summary of a score matrix. Without a histogram the group fields
/// are left empty.
pub fn metrics(
    scores: &ScoreMatrix,
    histogram: Option<&ClassHistogram>,
    thresholds: &ShotThresholds,
) -> Result<MetricsReport> {
    let c = scores.num_classes;
    let n = scores.num_samples();
    if n == 0 {
        return Err(domain_err!("no samples to score"));
    }
    if let Some(h) = histogram {
        if h.num_classes() != c {
            return Err(shape_err!(
                "histogram has {} classes, scores have {c}",
                h.num_classes()
            ));
        }
    }
    let mut confusion = vec![vec![0usize; c]; c];
    for (pred, &truth) in scores.predictions().into_iter().zip(&scores.labels) {
        confusion[truth][pred] += 1;
    }
    let eval_counts: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let correct: Vec<usize> = (0..c).map(|k| confusion[k][k]).collect();
    let per_class = (0..c)
        .map(|k| (eval_counts[k] > 0).then(|| correct[k] as f64 / eval_counts[k] as f64))
        .collect();
    let overall = correct.iter().sum::<usize>() as f64 / n as f64;
    let class_groups: Option<Vec<ShotGroup>> =
        histogram.map(|h| h.counts.iter().map(|&x| thresholds.group_of(x)).collect());
    let groups = class_groups.as_ref().map(|g| {
        let acc = |which: ShotGroup| {
            let (mut hit, mut tot) = (0, 0);
            for k in (0..c).filter(|&k| g[k] == which) {
                hit += correct[k];
                tot += eval_counts[k];
            }
            (tot > 0).then(|| hit as f64 / tot as f64)
        };
        GroupAccuracy {
            many: acc(ShotGroup::Many),
            medium: acc(ShotGroup::Medium),
            few: acc(ShotGroup::Few),
        }
    });
    Ok(MetricsReport {
        num_samples: n,
        overall,
        per_class,
        eval_counts,
        n_train: histogram.map(|h| h.counts.clone()),
        class_groups,
        groups,
        confusion,
        epochs: Vec::new(),
        threads: None,
    })
}

/// Scores and metrics of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub scores: ScoreMatrix,
    pub report: MetricsReport,
}

/// Evaluates with the thresholds stored in the model's config.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<Evaluation> {
    let thresholds = model.config.shot_thresholds();
    evaluate_with(model, data, &thresholds)
}

pub fn evaluate_with(model: &Model, data: &Dataset, thresholds: &ShotThresholds) -> Result<Evaluation> {
    if data.manifest.num_classes != model.backbone.num_classes {
        return Err(shape_err!(
            "evaluation data has {} classes, model has {}",
            data.manifest.num_classes,
            model.backbone.num_classes
        ));
    }
    let [m, _, v, c] = data.shape();
    let b = &model.backbone;
    if (m, v, c) != (b.persons, b.joints, b.input_channels) {
        return Err(shape_err!(
            "evaluation samples are [{m}, _, {v}, {c}], model expects [{}, _, {}, {}]",
            b.persons,
            b.joints,
            b.input_channels
        ));
    }
    let rows = model.predict(&data.samples)?;
    let labels = data.samples.iter().map(|s| s.label).collect();
    let scores = ScoreMatrix::new(b.num_classes, rows.concat(), labels)?;
    let mut report = metrics(&scores, model.histogram.as_ref(), thresholds)?;
    report.epochs = model.log.clone();
    report.threads = Some(model.threads);
    Ok(Evaluation { scores, report })
}

/// Loads a checkpoint and a manifest and evaluates. A given `modality` must
/// match the one the checkpoint was trained on.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    manifest: &Path,
    modality: Option<Modality>,
) -> Result<Evaluation> {
    if !checkpoint.exists() {
        return Err(Error::Usage(format!(
            "checkpoint {} does not exist",
            checkpoint.display()
        )));
    }
    let model = Model::load(checkpoint)?;
    if let Some(m) = modality {
        if m != model.config.data.modality {
            return Err(config_err!(
                "checkpoint was trained on {} but {m} was requested",
                model.config.data.modality
            ));
        }
    }
    evaluate(&model, &Dataset::load(manifest)?)
}

/// Named stream sets for fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsemblePreset {
    FourStream,
    SixStream,
    Custom,
}

impl std::str::FromStr for EnsemblePreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "4stream" => Ok(EnsemblePreset::FourStream),
            "6stream" => Ok(EnsemblePreset::SixStream),
            "custom" => Ok(EnsemblePreset::Custom),
            _ => Err(config_err!("unknown preset {s:?} (expected 4stream, 6stream, custom)")),
        }
    }
}

impl EnsemblePreset {
    /// Streams the preset fuses; `None` for custom.
    pub fn modalities(self) -> Option<&'static [Modality]> {
        const FOUR: [Modality; 4] = [
            Modality::Joint,
            Modality::Bone,
            Modality::JointMotion,
            Modality::BoneMotion,
        ];
        const SIX: [Modality; 6] = [
            Modality::Joint,
            Modality::Bone,
            Modality::JointMotion,
            Modality::BoneMotion,
            Modality::Skip,
            Modality::SkipMotion,
        ];
        match self {
            EnsemblePreset::FourStream => Some(&FOUR),
            EnsemblePreset::SixStream => Some(&SIX),
            EnsemblePreset::Custom => None,
        }
    }
}

/// `sum_s w_s scores_s`; equal weights when `weights` is `None`.
pub fn ensemble(streams: &[ScoreMatrix], weights: Option<&[f64]>) -> Result<ScoreMatrix> {
    let first = streams
        .first()
        .ok_or_else(|| domain_err!("ensemble needs at least one score matrix"))?;
    for (i, s) in streams.iter().enumerate().skip(1) {
        if s.num_classes != first.num_classes || s.num_samples() != first.num_samples() {
            return Err(shape_err!(
                "stream {i} is {}x{}, stream 0 is {}x{}",
                s.num_samples(),
                s.num_classes,
                first.num_samples(),
                first.num_classes
            ));
        }
        if s.labels != first.labels {
            return Err(shape_err!("stream {i} lists different ground-truth labels"));
        }
    }
    let equal = vec![1.0; streams.len()];
    let w = weights.unwrap_or(&equal);
    if w.len() != streams.len() {
        return Err(shape_err!("{} weights for {} streams", w.len(), streams.len()));
    }
    if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) || w.iter().all(|&x| x == 0.0) {
        return Err(domain_err!("weights must be finite, >= 0 and not all zero"));
    }
    let mut fused = vec![0.0; first.scores.len()];
    for (s, &ws) in streams.iter().zip(w) {
        for (f, x) in fused.iter_mut().zip(&s.scores) {
            *f += ws * x;
        }
    }
    ScoreMatrix::new(first.num_classes, fused, first.labels.clone())
}

pub fn report_json(report: &MetricsReport) -> String {
    serde_json::to_string_pretty(report).expect("serializable report") + "\n"
}

pub fn report_csv(report: &MetricsReport) -> String {
    let mut out = String::from("class_index,n_train,group,accuracy\n");
    for (k, acc) in report.per_class.iter().enumerate() {
        let n = report
            .n_train
            .as_ref()
            .map(|n| n[k].to_string())
            .unwrap_or_default();
        let g = report
            .class_groups
            .as_ref()
            .map(|g| g[k].as_str())
            .unwrap_or("");
        let a = acc.map(|a| a.to_string()).unwrap_or_default();
        out.push_str(&format!("{k},{n},{g},{a}\n"));
    }
    out
}

/// Writes `<stem>.json` and `<stem>.csv`.
pub fn write_reports(report: &MetricsReport, stem: &Path) -> Result<()> {
    let json = stem.with_extension("json");
    let csv = stem.with_extension("csv");
    std::fs::write(&json, report_json(report)).map_err(|e| Error::io(&json, e))?;
    std::fs::write(&csv, report_csv(report)).map_err(|e| Error::io(&csv, e))?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
