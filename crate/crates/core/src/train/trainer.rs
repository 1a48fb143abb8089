use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::Dataset;
use crate::augment::AugmentConfig;
use crate::backbone::checkpoint::Checkpoint;
use crate::backbone::{
    backward, build_adjacency, cosine_lr, forward, BackboneConfig, NormalizedAdjacency, ParamSet,
    Precision, Real, SampleInput, Sgd,
};
use crate::container::{argmax, Dtype};
use crate::error::{config_err, shape_err, Error, Result};
use crate::exploration::{
    build_epoch_index, partial_mixup, reverse_repeat_factors, select_mixup_pairs, SoftLabel,
};
use crate::longtail::ClassHistogram;
use crate::loss::{
    class_weights, inverse_frequency_weights, select_loss, softmax, LossKind, LossStage, Objective,
};
use crate::rng::{purpose, substream};
use crate::skeleton::{derive_modality, Modality, SkeletonGraph, SkeletonSequence};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: LossStage,
    pub lr: f64,
    /// Mean per-sample loss over the epoch.
    pub loss: f64,
    pub steps: usize,
    pub samples: usize,
    /// Samples replaced by partial mixup.
    pub mixed: usize,
    /// Loss weight each class received this epoch.
    pub class_weights: Vec<f64>,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    F32(ParamSet<f32>),
    F64(ParamSet<f64>),
}

/// A trained (or partially trained) network with everything evaluation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: TrainConfig,
    pub backbone: BackboneConfig,
    pub graph: SkeletonGraph,
    /// Training class counts; absent in checkpoints that did not record them.
    pub histogram: Option<ClassHistogram>,
    pub epochs_done: usize,
    pub log: Vec<EpochLog>,
    pub threads: usize,
    pub input_norm: InputNorm,
    pub weights: Weights,
}

/// Per-channel standardization of the network input, estimated on the
/// derived training stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    /// Channels with a standard deviation below this are only centered.
    const MIN_STD: f64 = 1e-8;

    /// Statistics over present persons of `modality` derived from `samples`.
    pub fn estimate(
        samples: &[SkeletonSequence],
        graph: &SkeletonGraph,
        modality: Modality,
    ) -> Result<Self> {
        let c = samples.first().map_or(0, |s| s.channels());
        let partial = samples
            .par_iter()
            .map(|s| {
                let d = derive_modality(s, graph, modality)?;
                let [m, t, v, _] = d.shape();
                let mut acc = vec![(0.0, 0.0, 0.0); c];
                for mi in (0..m).filter(|&mi| d.person_mask[mi]) {
                    for ti in 0..t {
                        for vi in 0..v {
                            for (a, &x) in acc.iter_mut().zip(d.point(mi, ti, vi)) {
                                a.0 += 1.0;
                                a.1 += x;
                                a.2 += x * x;
                            }
                        }
                    }
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total = vec![(0.0, 0.0, 0.0); c];
        for acc in &partial {
            for (t, a) in total.iter_mut().zip(acc) {
                t.0 += a.0;
                t.1 += a.1;
                t.2 += a.2;
            }
        }
        let (mut mean, mut std) = (Vec::with_capacity(c), Vec::with_capacity(c));
        for (n, sum, sq) in total {
            let mu = if n > 0.0 { sum / n } else { 0.0 };
            let var = if n > 0.0 { (sq / n - mu * mu).max(0.0) } else { 0.0 };
            mean.push(mu);
            std.push(if var.sqrt() < Self::MIN_STD { 1.0 } else { var.sqrt() });
        }
        Ok(Self { mean, std })
    }

    /// Standardized network input; absent persons stay zero.
    fn input<F: Real>(&self, s: &SkeletonSequence) -> SampleInput<F> {
        let c = s.channels();
        let per_person = s.frames() * s.joints() * c;
        let mut data = Vec::with_capacity(s.data().len());
        for (person, &present) in s.data().chunks(per_person.max(1)).zip(&s.person_mask) {
            if present {
                data.extend(person.iter().enumerate().map(|(i, &x)| {
                    let k = i % c;
                    F::from_f64((x - self.mean[k]) / self.std[k])
                }));
            } else {
                data.extend(person.iter().map(|_| F::from_f64(0.0)));
            }
        }
        SampleInput {
            data,
            person_mask: s.person_mask.clone(),
        }
    }
}

const FORMAT_VERSION: u64 = 2;

fn parse<T: serde::de::DeserializeOwned>(name: &str, v: serde_json::Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::Format(format!("checkpoint {name}: {e}")))
}

impl Model {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let (dtype, tensors) = match &self.weights {
            Weights::F32(p) => (Dtype::F32, tensors_of(p)),
            Weights::F64(p) => (Dtype::F64, tensors_of(p)),
        };
        let meta = serde_json::json!({
            "format_version": FORMAT_VERSION,
            "config": self.config,
            "backbone": self.backbone,
            "graph": self.graph,
            "histogram": self.histogram.as_ref().map(|h| h.counts.clone()),
            "epoch": self.epochs_done,
            "rng": {"seed": self.config.train.seed, "next_epoch": self.epochs_done},
            "threads": self.threads,
            "input_norm": self.input_norm,
            "log": self.log,
        });
        Ok(Checkpoint {
            dtype,
            meta,
            tensors,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let field = |name: &str| {
            ckpt.meta
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {name:?}")))
        };
        let config: TrainConfig = parse("config", field("config")?)?;
        let backbone: BackboneConfig = parse("backbone", field("backbone")?)?;
        let graph: SkeletonGraph = parse("graph", field("graph")?)?;
        graph.validate()?;
        backbone.validate()?;
        let histogram = match ckpt.meta.get("histogram") {
            Some(v) if !v.is_null() => {
                Some(ClassHistogram::from_counts(parse("histogram", v.clone())?)?)
            }
            _ => None,
        };
        let epochs_done: usize = parse("epoch", field("epoch")?)?;
        let threads: usize = parse("threads", field("threads")?)?;
        let log: Vec<EpochLog> = parse("log", field("log")?)?;
        let input_norm: InputNorm = parse("input_norm", field("input_norm")?)?;
        if input_norm.mean.len() != backbone.input_channels
            || input_norm.std.len() != backbone.input_channels
        {
            return Err(Error::Format(format!(
                "checkpoint input_norm does not cover {} channels",
                backbone.input_channels
            )));
        }
        let weights = match ckpt.dtype {
            Dtype::F32 => {
                let mut p = ParamSet::<f32>::zeros(&backbone);
                p.load_values(&ckpt.tensors)?;
                Weights::F32(p)
            }
            Dtype::F64 => {
                let mut p = ParamSet::<f64>::zeros(&backbone);
                p.load_values(&ckpt.tensors)?;
                Weights::F64(p)
            }
        };
        Ok(Self {
            config,
            backbone,
            graph,
            histogram,
            epochs_done,
            log,
            threads,
            input_norm,
            weights,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Softmax scores with center-mode sampling and no augmentation.
    pub fn predict(&self, samples: &[SkeletonSequence]) -> Result<Vec<Vec<f64>>> {
        let adj = build_adjacency(&self.graph)?;
        let ctx = Context {
            config: &self.config,
            backbone: &self.backbone,
            graph: &self.graph,
            adj: &adj,
            norm: &self.input_norm,
        };
        match &self.weights {
            Weights::F32(p) => ctx.predict(p, samples),
            Weights::F64(p) => ctx.predict(p, samples),
        }
    }
}

fn tensors_of<F: Real>(p: &ParamSet<F>) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    p.params
        .iter()
        .map(|x| {
            (
                x.name.clone(),
                x.shape.clone(),
                x.value.iter().map(|v| v.to_f64()).collect(),
            )
        })
        .collect()
}

struct Context<'a> {
    config: &'a TrainConfig,
    backbone: &'a BackboneConfig,
    graph: &'a SkeletonGraph,
    adj: &'a NormalizedAdjacency,
    norm: &'a InputNorm,
}

impl Context<'_> {
    fn eval_input<F: Real>(&self, aug: &AugmentConfig, s: &SkeletonSequence) -> Result<SampleInput<F>> {
        let sampled = aug.apply_eval(s);
        Ok(self.norm.input(&derive_modality(&sampled, self.graph, self.config.data.modality)?))
    }

    fn predict<F: Real>(&self, params: &ParamSet<F>, samples: &[SkeletonSequence]) -> Result<Vec<Vec<f64>>> {
        let aug = self.config.augment_config();
        let mut scores = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(self.config.eval.batch_size) {
            let inputs = chunk
                .par_iter()
                .map(|s| self.eval_input::<F>(&aug, s))
                .collect::<Result<Vec<_>>>()?;
            let (logits, _) = forward(params, self.backbone, self.adj, &inputs)?;
            scores.extend(logits.iter().map(|z| softmax(z)));
        }
        Ok(scores)
    }
}

fn accuracy(scores: &[Vec<f64>], samples: &[SkeletonSequence]) -> f64 {
    let hits = scores
        .iter()
        .zip(samples)
        .filter(|(s, x)| argmax(s) == x.label)
        .count();
    hits as f64 / samples.len().max(1) as f64
}

/// Trains on in-memory data; writes nothing unless `train.save_every` is set.
pub fn fit(
    config: &TrainConfig,
    train: &Dataset,
    val: Option<&Dataset>,
    graph: &SkeletonGraph,
    observer: &mut (dyn FnMut(&EpochLog) + Send),
) -> Result<Model> {
    config.validate()?;
    graph.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.train.threads)
        .build()
        .map_err(|e| config_err!("cannot start {} worker threads: {e}", config.train.threads))?;
    pool.install(|| match config.train.precision {
        Precision::F32 => fit_typed::<f32>(config, train, val, graph, observer),
        Precision::F64 => fit_typed::<f64>(config, train, val, graph, observer),
    })
}

fn fit_typed<F: Real>(
    config: &TrainConfig,
    train: &Dataset,
    val: Option<&Dataset>,
    graph: &SkeletonGraph,
    observer: &mut (dyn FnMut(&EpochLog) + Send),
) -> Result<Model>
where
    Weights: From<ParamSet<F>>,
{
    let [m, _, v, c] = train.shape();
    if graph.num_joints != v {
        return Err(shape_err!(
            "graph has {} joints, training samples have {v}",
            graph.num_joints
        ));
    }
    if let Some(val) = val {
        let [vm, _, vv, vc] = val.shape();
        if (vm, vv, vc) != (m, v, c) || val.manifest.num_classes != train.manifest.num_classes {
            return Err(shape_err!("validation data does not match the training data"));
        }
    }
    let num_classes = train.manifest.num_classes;
    let hist = ClassHistogram::from_manifest(&train.manifest)?;
    let backbone = BackboneConfig {
        input_channels: c,
        joints: v,
        frames: config.augment.frames,
        persons: m,
        num_classes,
        widths: config.backbone.widths.clone(),
        temporal_kernel: config.backbone.temporal_kernel,
        strides: config.backbone.strides.clone(),
    };
    backbone.validate()?;
    let adj = build_adjacency(graph)?;
    let input_norm = InputNorm::estimate(&train.samples, graph, config.data.modality)?;
    let ctx = Context {
        config,
        backbone: &backbone,
        graph,
        adj: &adj,
        norm: &input_norm,
    };
    let seed = config.train.seed;
    let mut params = ParamSet::<F>::init(&backbone, &mut substream(seed, &[purpose::INIT]));
    let mut opt = Sgd::new(config.sgd(), &params);
    let factors = if config.reverse.enabled {
        reverse_repeat_factors(&hist, &config.reverse_config())
    } else {
        vec![1; num_classes]
    };
    let schedule = config.schedule();
    let aug = config.augment_config();
    let mix = config.mixup_config();
    let modality = config.data.modality;
    let batch_size = config.optim.batch_size;
    let mut frozen: Option<Vec<f64>> = None;
    let mut log = Vec::with_capacity(schedule.total_epochs);

    for epoch in 0..schedule.total_epochs {
        let stage = select_loss(epoch, &schedule)?;
        let objective = match (config.loss.kind, stage) {
            (LossKind::Ce, _) | (LossKind::Detached, LossStage::GenericCe) => Objective::Ce,
            (LossKind::Detached, LossStage::ActionAware) => {
                if frozen.is_none() {
                    frozen = Some(class_weights(&hist, &config.hyper())?);
                }
                Objective::ClassWeighted(frozen.clone().unwrap())
            }
            (LossKind::Focal, _) => Objective::Focal(config.loss.focal_gamma),
            (LossKind::Weighted, _) => Objective::ClassWeighted(inverse_frequency_weights(&hist)),
        };
        let lr = cosine_lr(epoch, schedule.total_epochs, config.optim.lr)?;
        let e = epoch as u64;
        let index = build_epoch_index(
            &train.manifest,
            &factors,
            &mut substream(seed, &[purpose::EPOCH_INDEX, e]),
        )?;
        let (mut loss_sum, mut hits, mut mixed, mut steps) = (0.0, 0usize, 0usize, 0usize);
        for (step, chunk) in index.chunks(batch_size).enumerate() {
            let base = step * batch_size;
            let items = chunk
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let mut rng = substream(seed, &[purpose::AUGMENT, e, (base + k) as u64]);
                    let s = aug.apply_train(&train.samples[i], graph, &mut rng)?;
                    derive_modality(&s, graph, modality)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut labels: Vec<SoftLabel> = items
                .iter()
                .map(|s| SoftLabel::one_hot(s.label, num_classes))
                .collect();
            let pairs = if mix.selection_rate > 0.0 {
                select_mixup_pairs(
                    items.len(),
                    mix.selection_rate,
                    &mut substream(seed, &[purpose::MIXUP, e, step as u64]),
                )
            } else {
                Vec::new()
            };
            let mut inputs: Vec<SampleInput<F>> = items.iter().map(|s| input_norm.input(s)).collect();
            for &(t, q) in &pairs {
                let (s, l) = partial_mixup(&items[t], &items[q], graph, &hist, &mix)?;
                inputs[t] = input_norm.input(&s);
                labels[t] = l;
            }
            mixed += pairs.len();

            let (logits, cache) = forward(&params, &backbone, &adj, &inputs)?;
            let scale = 1.0 / inputs.len() as f64;
            let mut dlogits = Vec::with_capacity(inputs.len());
            for (k, (z, y)) in logits.iter().zip(&labels).enumerate() {
                let result = if z.iter().all(|x| x.is_finite()) {
                    objective.evaluate(z, y).ok()
                } else {
                    None
                };
                let (l, g) = match result {
                    Some((l, g)) if l.is_finite() => (l, g),
                    _ => {
                        let detail = diagnose(epoch, step, lr, chunk[k], y, z, &objective);
                        dump_diagnostic(&config.train.out, &detail);
                        return Err(Error::NonFiniteLoss {
                            epoch,
                            step,
                            detail,
                        });
                    }
                };
                loss_sum += l;
                if argmax(z) == y.dominant() {
                    hits += 1;
                }
                dlogits.push(g.into_iter().map(|d| d * scale).collect());
            }
            backward(&mut params, &backbone, &adj, &cache, &dlogits)?;
            opt.step(&mut params, lr);
            steps += 1;
        }
        if !params.all_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step: steps,
                detail: format!("parameters became non-finite at lr {lr}"),
            });
        }
        let val_accuracy = match val {
            Some(val)
                if config.train.eval_every > 0 && (epoch + 1) % config.train.eval_every == 0 =>
            {
                Some(accuracy(&ctx.predict(&params, &val.samples)?, &val.samples))
            }
            _ => None,
        };
        let entry = EpochLog {
            epoch,
            stage,
            lr,
            loss: loss_sum / index.len() as f64,
            steps,
            samples: index.len(),
            mixed,
            class_weights: objective.class_weights(num_classes),
            train_accuracy: hits as f64 / index.len() as f64,
            val_accuracy,
        };
        observer(&entry);
        log.push(entry);
        if config.train.save_every > 0 && (epoch + 1) % config.train.save_every == 0 {
            let snapshot = Model {
                config: config.clone(),
                backbone: backbone.clone(),
                graph: graph.clone(),
                histogram: Some(hist.clone()),
                epochs_done: epoch + 1,
                log: log.clone(),
                threads: rayon::current_num_threads(),
                input_norm: input_norm.clone(),
                weights: params.clone().into(),
            };
            let dir = &config.train.out;
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            snapshot.save(&dir.join(format!("epoch_{:03}.ckpt", epoch + 1)))?;
        }
    }
    Ok(Model {
        config: config.clone(),
        backbone,
        graph: graph.clone(),
        histogram: Some(hist),
        epochs_done: schedule.total_epochs,
        log,
        threads: rayon::current_num_threads(),
        input_norm,
        weights: params.into(),
    })
}

impl From<ParamSet<f32>> for Weights {
    fn from(p: ParamSet<f32>) -> Self {
        Weights::F32(p)
    }
}

impl From<ParamSet<f64>> for Weights {
    fn from(p: ParamSet<f64>) -> Self {
        Weights::F64(p)
    }
}

fn diagnose(
    epoch: usize,
    step: usize,
    lr: f64,
    entry: usize,
    label: &SoftLabel,
    logits: &[f64],
    objective: &Objective,
) -> String {
    let w = objective.class_weights(label.num_classes());
    let (wmin, wmax) = w
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let zmax = logits.iter().fold(0.0f64, |a, z| a.max(z.abs()));
    format!(
        "epoch {epoch} step {step}: manifest entry {entry} (label {}) gave a non-finite loss; \
         lr {lr}, max |logit| {zmax}, class weights in [{wmin}, {wmax}]",
        label.dominant()
    )
}

fn dump_diagnostic(out: &Path, detail: &str) {
    let path = out.join("nonfinite_loss.txt");
    if std::fs::create_dir_all(out).is_ok() {
        let _ = std::fs::write(&path, format!("{detail}\n"));
        log::error!("diagnostic written to {}", path.display());
    }
}

/// Files written by [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub config: PathBuf,
}

/// Loads the configured data, trains, and writes the checkpoint, the epoch
/// log and the resolved config into `train.out`.
pub fn train(
    config: &TrainConfig,
    observer: &mut (dyn FnMut(&EpochLog) + Send),
) -> Result<(Model, TrainArtifacts)> {
    config.validate()?;
    let train_path = config
        .data
        .train_manifest
        .as_ref()
        .ok_or_else(|| config_err!("data.train_manifest is required"))?;
    let train_data = Dataset::load(train_path)?;
    let val_data = config
        .data
        .val_manifest
        .as_deref()
        .map(Dataset::load)
        .transpose()?;
    let graph = match &config.data.graph {
        Some(p) => SkeletonGraph::load(p)?,
        None => SkeletonGraph::preset_for_joints(train_data.shape()[2])?,
    };
    let model = fit(config, &train_data, val_data.as_ref(), &graph, observer)?;
    let out = &config.train.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let artifacts = TrainArtifacts {
        checkpoint: out.join("model.ckpt"),
        log: out.join("train_log.json"),
        config: out.join("config.toml"),
    };
    model.save(&artifacts.checkpoint)?;
    let log = serde_json::to_string_pretty(&model.log).expect("serializable log");
    std::fs::write(&artifacts.log, log + "\n").map_err(|e| Error::io(&artifacts.log, e))?;
    std::fs::write(&artifacts.config, config.to_toml())
        .map_err(|e| Error::io(&artifacts.config, e))?;
    Ok((model, artifacts))
}
