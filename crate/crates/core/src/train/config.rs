use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::backbone::{Precision, SgdConfig};
use crate::error::{config_err, Error, Result};
use crate::exploration::{MixupConfig, ReverseSamplerConfig};
use crate::longtail::ShotThresholds;
use crate::loss::{ActionAwareHyper, LossKind, ScheduleConfig};
use crate::skeleton::Modality;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    /// Graph JSON; a bundled preset matching the joint count when unset.
    pub graph: Option<PathBuf>,
    pub modality: Modality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSection {
    pub flip_prob: f64,
    pub rotate_max_deg: f64,
    pub scale_low: f64,
    pub scale_high: f64,
    /// Frames kept by the uniform temporal sampler.
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixupSection {
    pub k: f64,
    pub selection_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseSection {
    pub enabled: bool,
    pub exponent: f64,
    pub cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSection {
    pub kind: LossKind,
    pub upsilon: f64,
    pub lambda: f64,
    pub normalize_weights: bool,
    pub focal_gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSection {
    pub epochs: usize,
    /// Defaults to `epochs - epochs / 6` (100 of 120).
    pub switch_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSection {
    pub widths: Vec<usize>,
    pub temporal_kernel: usize,
    pub strides: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimSection {
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub seed: u64,
    pub precision: Precision,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub out: PathBuf,
    /// Validate every this many epochs (0 disables).
    pub eval_every: usize,
    /// Write an intermediate checkpoint every this many epochs (0 disables).
    pub save_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub many_threshold: f64,
    pub few_threshold: f64,
    pub batch_size: usize,
}

/// Every knob of a training run, addressable by flat dotted keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub data: DataSection,
    pub augment: AugmentSection,
    pub mixup: MixupSection,
    pub reverse: ReverseSection,
    pub loss: LossSection,
    pub schedule: ScheduleSection,
    pub backbone: BackboneSection,
    pub optim: OptimSection,
    pub train: RunSection,
    pub eval: EvalSection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let aug = AugmentConfig::default();
        let mix = MixupConfig::default();
        let rev = ReverseSamplerConfig::default();
        let hyper = ActionAwareHyper::default();
        let sched = ScheduleConfig::default();
        let sgd = SgdConfig::default();
        let shots = ShotThresholds::default();
        Self {
            data: DataSection {
                train_manifest: None,
                val_manifest: None,
                graph: None,
                modality: Modality::Joint,
            },
            augment: AugmentSection {
                flip_prob: aug.flip_prob,
                rotate_max_deg: aug.rotate_max_deg,
                scale_low: aug.scale_low,
                scale_high: aug.scale_high,
                frames: aug.target_frames,
            },
            mixup: MixupSection {
                k: mix.k,
                selection_rate: mix.selection_rate,
            },
            reverse: ReverseSection {
                enabled: true,
                exponent: rev.exponent,
                cap: rev.cap,
            },
            loss: LossSection {
                kind: LossKind::Detached,
                upsilon: hyper.upsilon,
                lambda: hyper.lambda,
                normalize_weights: hyper.normalize_weights,
                focal_gamma: 2.0,
            },
            schedule: ScheduleSection {
                epochs: sched.total_epochs,
                switch_epoch: None,
            },
            backbone: BackboneSection {
                widths: vec![32, 64],
                temporal_kernel: 5,
                strides: vec![1, 2],
            },
            optim: OptimSection {
                batch_size: 16,
                lr: 0.1,
                momentum: sgd.momentum,
                weight_decay: sgd.weight_decay,
                nesterov: sgd.nesterov,
            },
            train: RunSection {
                seed: 0,
                precision: Precision::F32,
                threads: 1,
                out: PathBuf::from("runs/train"),
                eval_every: 0,
                save_every: 0,
            },
            eval: EvalSection {
                many_threshold: shots.many_above,
                few_threshold: shots.few_below,
                batch_size: 64,
            },
        }
    }
}

/// Description of one dotted key.
#[derive(Debug, Clone, Copy)]
pub struct KeyInfo {
    pub key: &'static str,
    pub help: &'static str,
}

const KEYS: &[KeyInfo] = &[
    KeyInfo { key: "data.train_manifest", help: "training manifest JSON" },
    KeyInfo { key: "data.val_manifest", help: "validation manifest JSON" },
    KeyInfo { key: "data.graph", help: "skeleton graph JSON (bundled preset when empty)" },
    KeyInfo { key: "data.modality", help: "input stream: joint, bone, skip, joint_motion, bone_motion, skip_motion" },
    KeyInfo { key: "augment.flip_prob", help: "probability of a left/right mirror" },
    KeyInfo { key: "augment.rotate_max_deg", help: "per-axis rotation bound in degrees" },
    KeyInfo { key: "augment.scale_low", help: "lower bound of the random scale" },
    KeyInfo { key: "augment.scale_high", help: "upper bound of the random scale" },
    KeyInfo { key: "augment.frames", help: "frames kept by the uniform temporal sampler" },
    KeyInfo { key: "mixup.k", help: "count-ratio threshold of the label mix weight" },
    KeyInfo { key: "mixup.selection_rate", help: "fraction of each batch replaced by partial mixup (0 disables)" },
    KeyInfo { key: "reverse.enabled", help: "oversample rare classes by repeat factors" },
    KeyInfo { key: "reverse.exponent", help: "power applied to median/n_c" },
    KeyInfo { key: "reverse.cap", help: "largest repeat factor" },
    KeyInfo { key: "loss.kind", help: "detached, ce, focal or weighted" },
    KeyInfo { key: "loss.upsilon", help: "lower end of the action-aware term" },
    KeyInfo { key: "loss.lambda", help: "width of the action-aware term" },
    KeyInfo { key: "loss.normalize_weights", help: "rescale class weights to mean 1" },
    KeyInfo { key: "loss.focal_gamma", help: "focusing exponent of the focal baseline" },
    KeyInfo { key: "schedule.epochs", help: "total training epochs" },
    KeyInfo { key: "schedule.switch_epoch", help: "first epoch of the action-aware loss (default epochs - epochs/6)" },
    KeyInfo { key: "backbone.widths", help: "comma-separated block widths" },
    KeyInfo { key: "backbone.temporal_kernel", help: "odd temporal kernel size" },
    KeyInfo { key: "backbone.strides", help: "comma-separated temporal strides (1 or 2)" },
    KeyInfo { key: "optim.batch_size", help: "samples per step" },
    KeyInfo { key: "optim.lr", help: "base learning rate of the cosine schedule" },
    KeyInfo { key: "optim.momentum", help: "momentum coefficient" },
    KeyInfo { key: "optim.weight_decay", help: "L2 penalty added to the gradient" },
    KeyInfo { key: "optim.nesterov", help: "use Nesterov momentum" },
    KeyInfo { key: "train.seed", help: "master seed of every random stream" },
    KeyInfo { key: "train.precision", help: "f32 or f64" },
    KeyInfo { key: "train.threads", help: "worker threads (0 = all cores)" },
    KeyInfo { key: "train.out", help: "output directory" },
    KeyInfo { key: "train.eval_every", help: "validate every N epochs (0 disables)" },
    KeyInfo { key: "train.save_every", help: "checkpoint every N epochs (0 disables)" },
    KeyInfo { key: "eval.many_threshold", help: "classes with more training samples are many-shot" },
    KeyInfo { key: "eval.few_threshold", help: "classes with fewer training samples are few-shot" },
    KeyInfo { key: "eval.batch_size", help: "samples per evaluation batch" },
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| config_err!("{key}: cannot parse {value:?}: {e}"))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl TrainConfig {
    pub fn keys() -> &'static [KeyInfo] {
        KEYS
    }

    /// Sets one dotted key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data.train_manifest" => self.data.train_manifest = parse_path(value),
            "data.val_manifest" => self.data.val_manifest = parse_path(value),
            "data.graph" => self.data.graph = parse_path(value),
            "data.modality" => self.data.modality = parse(key, value)?,
            "augment.flip_prob" => self.augment.flip_prob = parse(key, value)?,
            "augment.rotate_max_deg" => self.augment.rotate_max_deg = parse(key, value)?,
            "augment.scale_low" => self.augment.scale_low = parse(key, value)?,
            "augment.scale_high" => self.augment.scale_high = parse(key, value)?,
            "augment.frames" => self.augment.frames = parse(key, value)?,
            "mixup.k" => self.mixup.k = parse(key, value)?,
            "mixup.selection_rate" => self.mixup.selection_rate = parse(key, value)?,
            "reverse.enabled" => self.reverse.enabled = parse(key, value)?,
            "reverse.exponent" => self.reverse.exponent = parse(key, value)?,
            "reverse.cap" => self.reverse.cap = parse(key, value)?,
            "loss.kind" => self.loss.kind = parse(key, value)?,
            "loss.upsilon" => self.loss.upsilon = parse(key, value)?,
            "loss.lambda" => self.loss.lambda = parse(key, value)?,
            "loss.normalize_weights" => self.loss.normalize_weights = parse(key, value)?,
            "loss.focal_gamma" => self.loss.focal_gamma = parse(key, value)?,
            "schedule.epochs" => self.schedule.epochs = parse(key, value)?,
            "schedule.switch_epoch" => {
                self.schedule.switch_epoch = match value.trim() {
                    "" | "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "backbone.widths" => self.backbone.widths = parse_list(key, value)?,
            "backbone.temporal_kernel" => self.backbone.temporal_kernel = parse(key, value)?,
            "backbone.strides" => self.backbone.strides = parse_list(key, value)?,
            "optim.batch_size" => self.optim.batch_size = parse(key, value)?,
            "optim.lr" => self.optim.lr = parse(key, value)?,
            "optim.momentum" => self.optim.momentum = parse(key, value)?,
            "optim.weight_decay" => self.optim.weight_decay = parse(key, value)?,
            "optim.nesterov" => self.optim.nesterov = parse(key, value)?,
            "train.seed" => self.train.seed = parse(key, value)?,
            "train.precision" => self.train.precision = parse(key, value)?,
            "train.threads" => self.train.threads = parse(key, value)?,
            "train.out" => self.train.out = PathBuf::from(value.trim()),
            "train.eval_every" => self.train.eval_every = parse(key, value)?,
            "train.save_every" => self.train.save_every = parse(key, value)?,
            "eval.many_threshold" => self.eval.many_threshold = parse(key, value)?,
            "eval.few_threshold" => self.eval.few_threshold = parse(key, value)?,
            "eval.batch_size" => self.eval.batch_size = parse(key, value)?,
            _ => return Err(config_err!("unknown config key {key:?}")),
        }
        Ok(())
    }

    /// Text form of one dotted key, as accepted by [`TrainConfig::set`].
    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "data.train_manifest" => show_path(&self.data.train_manifest),
            "data.val_manifest" => show_path(&self.data.val_manifest),
            "data.graph" => show_path(&self.data.graph),
            "data.modality" => self.data.modality.to_string(),
            "augment.flip_prob" => self.augment.flip_prob.to_string(),
            "augment.rotate_max_deg" => self.augment.rotate_max_deg.to_string(),
            "augment.scale_low" => self.augment.scale_low.to_string(),
            "augment.scale_high" => self.augment.scale_high.to_string(),
            "augment.frames" => self.augment.frames.to_string(),
            "mixup.k" => self.mixup.k.to_string(),
            "mixup.selection_rate" => self.mixup.selection_rate.to_string(),
            "reverse.enabled" => self.reverse.enabled.to_string(),
            "reverse.exponent" => self.reverse.exponent.to_string(),
            "reverse.cap" => self.reverse.cap.to_string(),
            "loss.kind" => self.loss.kind.as_str().to_string(),
            "loss.upsilon" => self.loss.upsilon.to_string(),
            "loss.lambda" => self.loss.lambda.to_string(),
            "loss.normalize_weights" => self.loss.normalize_weights.to_string(),
            "loss.focal_gamma" => self.loss.focal_gamma.to_string(),
            "schedule.epochs" => self.schedule.epochs.to_string(),
            "schedule.switch_epoch" => self
                .schedule
                .switch_epoch
                .map_or_else(|| "auto".to_string(), |e| e.to_string()),
            "backbone.widths" => join(&self.backbone.widths),
            "backbone.temporal_kernel" => self.backbone.temporal_kernel.to_string(),
            "backbone.strides" => join(&self.backbone.strides),
            "optim.batch_size" => self.optim.batch_size.to_string(),
            "optim.lr" => self.optim.lr.to_string(),
            "optim.momentum" => self.optim.momentum.to_string(),
            "optim.weight_decay" => self.optim.weight_decay.to_string(),
            "optim.nesterov" => self.optim.nesterov.to_string(),
            "train.seed" => self.train.seed.to_string(),
            "train.precision" => self.train.precision.as_str().to_string(),
            "train.threads" => self.train.threads.to_string(),
            "train.out" => self.train.out.display().to_string(),
            "train.eval_every" => self.train.eval_every.to_string(),
            "train.save_every" => self.train.save_every.to_string(),
            "eval.many_threshold" => self.eval.many_threshold.to_string(),
            "eval.few_threshold" => self.eval.few_threshold.to_string(),
            "eval.batch_size" => self.eval.batch_size.to_string(),
            _ => return Err(config_err!("unknown config key {key:?}")),
        })
    }

    /// Applies `key = value` pairs from a TOML document.
    ///
    /// Both `[section]` tables and dotted keys are accepted; errors carry the
    /// line of the offending key.
    pub fn merge_toml(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| config_err!("{}", e.to_string().trim_end()))?;
        let mut flat = Vec::new();
        flatten("", &table, &mut flat);
        for (key, value) in flat {
            self.set(&key, &value).map_err(|e| match locate(text, &key) {
                Some(line) => config_err!("line {line}: {}", strip_config(e)),
                None => e,
            })?;
        }
        Ok(())
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::default();
        c.merge_toml(&text)
            .map_err(|e| config_err!("{}: {}", path.display(), strip_config(e)))?;
        Ok(c)
    }

    /// All keys with their current values, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        KEYS.iter()
            .map(|k| (k.key, self.get(k.key).expect("registered key")))
            .collect()
    }

    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, value) in self.entries() {
            let (sec, leaf) = key.split_once('.').expect("dotted key");
            if sec != section {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{sec}]\n"));
                section = sec;
            }
            out.push_str(&format!("{leaf} = {}\n", toml_value(key, &value)));
        }
        out
    }

    pub fn switch_epoch(&self) -> usize {
        self.schedule
            .switch_epoch
            .unwrap_or(self.schedule.epochs - self.schedule.epochs / 6)
    }

    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            total_epochs: self.schedule.epochs,
            switch_epoch: self.switch_epoch(),
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            flip_prob: self.augment.flip_prob,
            rotate_max_deg: self.augment.rotate_max_deg,
            scale_low: self.augment.scale_low,
            scale_high: self.augment.scale_high,
            target_frames: self.augment.frames,
            seed: self.train.seed,
        }
    }

    pub fn mixup_config(&self) -> MixupConfig {
        MixupConfig {
            k: self.mixup.k,
            selection_rate: self.mixup.selection_rate,
            seed: self.train.seed,
        }
    }

    pub fn reverse_config(&self) -> ReverseSamplerConfig {
        ReverseSamplerConfig {
            exponent: self.reverse.exponent,
            cap: self.reverse.cap,
            seed: self.train.seed,
        }
    }

    pub fn hyper(&self) -> ActionAwareHyper {
        ActionAwareHyper {
            upsilon: self.loss.upsilon,
            lambda: self.loss.lambda,
            normalize_weights: self.loss.normalize_weights,
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            momentum: self.optim.momentum,
            weight_decay: self.optim.weight_decay,
            nesterov: self.optim.nesterov,
        }
    }

    pub fn shot_thresholds(&self) -> ShotThresholds {
        ShotThresholds {
            many_above: self.eval.many_threshold,
            few_below: self.eval.few_threshold,
        }
    }

    /// Checks ranges and cross-key constraints. File existence is checked
    /// when the data is opened.
    pub fn validate(&self) -> Result<()> {
        self.augment_config().validate()?;
        self.mixup_config().validate()?;
        self.reverse_config().validate()?;
        self.hyper().validate()?;
        self.sgd().validate()?;
        if self.schedule.epochs == 0 {
            return Err(config_err!("schedule.epochs must be >= 1"));
        }
        self.schedule().validate()?;
        if self.optim.batch_size == 0 {
            return Err(config_err!("optim.batch_size must be >= 1"));
        }
        if !(self.optim.lr >= 0.0 && self.optim.lr.is_finite()) {
            return Err(config_err!("optim.lr must be finite and >= 0"));
        }
        if self.loss.kind == crate::loss::LossKind::Focal && self.mixup.selection_rate > 0.0 {
            return Err(config_err!(
                "focal loss needs one-hot labels; set mixup.selection_rate = 0"
            ));
        }
        if !(self.loss.focal_gamma >= 0.0) {
            return Err(config_err!("loss.focal_gamma must be >= 0"));
        }
        if !(self.eval.few_threshold >= 0.0 && self.eval.few_threshold <= self.eval.many_threshold)
        {
            return Err(config_err!(
                "eval.few_threshold {} above eval.many_threshold {}",
                self.eval.few_threshold,
                self.eval.many_threshold
            ));
        }
        if self.eval.batch_size == 0 {
            return Err(config_err!("eval.batch_size must be >= 1"));
        }
        if self.backbone.widths.is_empty()
            || self.backbone.widths.len() != self.backbone.strides.len()
        {
            return Err(config_err!(
                "backbone.widths and backbone.strides need the same non-zero length"
            ));
        }
        Ok(())
    }
}

fn strip_config(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, String)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            toml::Value::String(s) => out.push((key, s.clone())),
            toml::Value::Array(items) => {
                let parts: Vec<String> = items
                    .iter()
                    .map(|i| match i {
                        toml::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect();
                out.push((key, parts.join(",")));
            }
            other => out.push((key, other.to_string())),
        }
    }
}

/// 1-based line on which `key` is assigned, if it can be found.
fn locate(text: &str, key: &str) -> Option<usize> {
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        if let Some((lhs, _)) = line.split_once('=') {
            let lhs: String = lhs.split('.').map(|p| p.trim().trim_matches('"')).collect::<Vec<_>>().join(".");
            let full = if section.is_empty() {
                lhs
            } else {
                format!("{section}.{lhs}")
            };
            if full == key {
                return Some(i + 1);
            }
        }
    }
    None
}

fn toml_value(key: &str, value: &str) -> String {
    match key {
        "backbone.widths" | "backbone.strides" => format!("[{}]", value.replace(',', ", ")),
        "data.train_manifest" | "data.val_manifest" | "data.graph" | "data.modality"
        | "loss.kind" | "train.precision" | "train.out" | "schedule.switch_epoch" => {
            if key == "schedule.switch_epoch" && value != "auto" {
                value.to_string()
            } else {
                format!("{value:?}")
            }
        }
        _ => value.to_string(),
    }
}
