use std::path::Path;

use anyhow::{bail, Context, Result};

use brl_core::container::{argmax, read_file, save_sequence, ScoreMatrix};
use brl_core::longtail::{
    imbalance_ratio, truncate_dataset, ClassOrderPolicy, LongTailSpec, ShotThresholds,
};
use brl_core::skeleton::derive_modality;
use brl_core::train::{
    ensemble as fuse, evaluate, evaluate_with, generate_synthetic, metrics, report_csv,
    report_json, train as run_train, write_reports, Dataset, EnsemblePreset, EpochLog, Model,
    SyntheticSpec, TrainConfig,
};
use brl_core::{ClassHistogram, DatasetManifest, Modality, SkeletonGraph};

use crate::{DeriveArgs, EnsembleArgs, EvalArgs, MakeLtArgs, ReportArgs, SynthArgs, TrainArgs};

fn threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring worker threads")
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut spec: SyntheticSpec = match &a.spec {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SyntheticSpec::default(),
    };
    macro_rules! set {
        ($($field:ident <- $flag:ident),*) => {
            $(if let Some(v) = a.$flag { spec.$field = v; })*
        };
    }
    set!(num_classes <- classes, joints <- joints, frames <- frames, persons <- persons,
         train_per_class <- train_per_class, val_per_class <- val_per_class, noise <- noise,
         variation <- variation, separation <- separation, seed <- seed);
    if let Some(d) = &a.dtype {
        spec.dtype = match d.as_str() {
            "f32" => brl_core::container::Dtype::F32,
            "f64" => brl_core::container::Dtype::F64,
            other => bail!("unknown dtype {other:?} (expected f32 or f64)"),
        };
    }
    create_dir(&a.out)?;
    let paths = generate_synthetic(&spec, &a.out)
        .with_context(|| format!("writing synthetic data to {}", a.out.display()))?;
    println!(
        "{} classes x {} train / {} val samples ({} joints, {} frames)",
        spec.num_classes, spec.train_per_class, spec.val_per_class, spec.joints, spec.frames
    );
    println!("train manifest: {}", paths.train_manifest.display());
    if spec.val_per_class > 0 {
        println!("val manifest:   {}", paths.val_manifest.display());
    }
    println!("graph:          {}", paths.graph.display());
    Ok(())
}

pub fn make_lt(a: MakeLtArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let policy = match a.order.as_str() {
        "label" => ClassOrderPolicy::LabelIndex,
        "random" => ClassOrderPolicy::RandomPermutation,
        other => bail!("unknown class order {other:?} (expected label or random)"),
    };
    let spec = LongTailSpec {
        max_per_class: a.max,
        imbalance_ratio: a.ratio,
        seed: a.seed,
    };
    let mut t = truncate_dataset(&manifest, &spec, policy)?;
    for c in &t.clamped {
        log::warn!(
            "class {} wanted {} samples but only {} exist",
            c.class,
            c.target,
            c.available
        );
    }
    // keep paths valid relative to the new manifest location
    if let Some(base) = &manifest.base_dir {
        let out_dir = a.out.parent().unwrap_or(Path::new(""));
        let same = std::fs::canonicalize(base).ok()
            == std::fs::canonicalize(if out_dir.as_os_str().is_empty() {
                Path::new(".")
            } else {
                out_dir
            })
            .ok();
        if !same {
            let abs = std::fs::canonicalize(base)
                .with_context(|| format!("resolving {}", base.display()))?;
            for e in &mut t.manifest.entries {
                if Path::new(&e.path).is_relative() {
                    e.path = abs.join(&e.path).display().to_string();
                }
            }
        }
    }
    t.manifest.save(&a.out)?;
    println!("class,count");
    for (c, n) in t.histogram.counts.iter().enumerate() {
        println!("{c},{n}");
    }
    println!(
        "{} samples, head {}, tail {}, achieved imbalance ratio {}",
        t.histogram.total(),
        t.histogram.n_max,
        t.histogram.n_min,
        imbalance_ratio(&t.histogram)
    );
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn derive(a: DeriveArgs) -> Result<()> {
    let modality: Modality = a.modality.parse()?;
    let graph_for = |joints: usize| -> Result<SkeletonGraph> {
        Ok(match &a.graph {
            Some(p) => SkeletonGraph::load(p)?,
            None => SkeletonGraph::preset_for_joints(joints)?,
        })
    };
    let is_manifest = a.input.extension().is_some_and(|e| e == "json");
    if !is_manifest {
        let (header, _) = read_file(&a.input)?;
        let seq = brl_core::container::load_sequence(&a.input)?;
        let out = derive_modality(&seq, &graph_for(seq.joints())?, modality)?;
        save_sequence(&a.out, &out, header.dtype)?;
        println!("wrote {}", a.out.display());
        return Ok(());
    }
    let manifest = DatasetManifest::load(&a.input)?;
    create_dir(&a.out)?;
    let mut graph: Option<SkeletonGraph> = None;
    for e in &manifest.entries {
        let src = manifest.resolve(e);
        let (header, _) = read_file(&src)?;
        let seq = brl_core::container::load_sequence(&src)?;
        if graph.is_none() {
            graph = Some(graph_for(seq.joints())?);
        }
        let out = derive_modality(&seq, graph.as_ref().unwrap(), modality)?;
        let dst = a.out.join(&e.path);
        if let Some(dir) = dst.parent() {
            create_dir(dir)?;
        }
        save_sequence(&dst, &out, header.dtype)?;
    }
    let out_manifest = a.out.join("manifest.json");
    DatasetManifest {
        base_dir: None,
        ..manifest.clone()
    }
    .save(&out_manifest)?;
    println!(
        "derived {} samples to {}; manifest {}",
        manifest.entries.len(),
        modality,
        out_manifest.display()
    );
    Ok(())
}

fn print_epoch(total: usize) -> impl FnMut(&EpochLog) + Send {
    move |e: &EpochLog| {
        let mut line = format!(
            "epoch {:>3}/{total}  {:<12} lr {:.6}  loss {:.5}  train_acc {:.4}",
            e.epoch + 1,
            match e.stage {
                brl_core::loss::LossStage::GenericCe => "ce",
                brl_core::loss::LossStage::ActionAware => "action_aware",
            },
            e.lr,
            e.loss,
            e.train_accuracy
        );
        if let Some(v) = e.val_accuracy {
            line.push_str(&format!("  val_acc {v:.4}"));
        }
        println!("{line}");
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => TrainConfig::from_toml_file(p)?,
        None => TrainConfig::default(),
    };
    for (k, v) in &a.overrides.values {
        config.set(k, v).with_context(|| format!("flag --{k}"))?;
    }
    config.validate()?;
    let mut observer = print_epoch(config.schedule.epochs);
    let (model, artifacts) = run_train(&config, &mut observer)?;
    println!("checkpoint: {}", artifacts.checkpoint.display());
    if let Some(val) = &config.data.val_manifest {
        let data = Dataset::load(val)?;
        let ev = evaluate(&model, &data)?;
        let out = &config.train.out;
        ev.scores.save(out.join("val_scores.skl"))?;
        write_reports(&ev.report, &out.join("val_report"))?;
        print_summary(&ev.report);
    }
    Ok(())
}

fn print_summary(r: &brl_core::train::MetricsReport) {
    let show = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    print!("overall {:.4}", r.overall);
    match &r.groups {
        Some(g) => println!(
            "  many {}  medium {}  few {}",
            show(g.many),
            show(g.medium),
            show(g.few)
        ),
        None => println!("  (shot groups unavailable: no training histogram)"),
    }
}

fn thresholds_from(
    base: ShotThresholds,
    many: Option<f64>,
    few: Option<f64>,
) -> ShotThresholds {
    ShotThresholds {
        many_above: many.unwrap_or(base.many_above),
        few_below: few.unwrap_or(base.few_below),
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    threads(a.threads)?;
    if !a.checkpoint.exists() {
        bail!("checkpoint {} does not exist", a.checkpoint.display());
    }
    let model = Model::load(&a.checkpoint)?;
    if let Some(m) = &a.modality {
        let m: Modality = m.parse()?;
        if m != model.config.data.modality {
            bail!(
                "checkpoint was trained on {} but --modality {m} was given",
                model.config.data.modality
            );
        }
    }
    let data = Dataset::load(&a.manifest)?;
    let th = thresholds_from(model.config.shot_thresholds(), a.many_threshold, a.few_threshold);
    let ev = evaluate_with(&model, &data, &th)?;
    create_dir(&a.out)?;
    ev.scores.save(a.out.join("scores.skl"))?;
    write_reports(&ev.report, &a.out.join("report"))?;
    print_summary(&ev.report);
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn ensemble(a: EnsembleArgs) -> Result<()> {
    let preset: EnsemblePreset = a.preset.parse()?;
    if let Some(m) = preset.modalities() {
        if m.len() != a.scores.len() {
            bail!(
                "preset {} expects {} score files ({}), got {}",
                a.preset,
                m.len(),
                m.iter().map(|x| x.as_str()).collect::<Vec<_>>().join(", "),
                a.scores.len()
            );
        }
    }
    let mats = a
        .scores
        .iter()
        .map(|p| ScoreMatrix::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let fused = fuse(&mats, a.weights.as_deref())?;
    create_dir(&a.out)?;
    fused.save(a.out.join("fused_scores.skl"))?;
    for (p, m) in a.scores.iter().zip(&mats) {
        println!("{:<40} acc {:.4}", p.display(), accuracy(m));
    }
    println!("{:<40} acc {:.4}", "fused", accuracy(&fused));
    if let Some(c) = &a.checkpoint {
        let model = Model::load(c)?;
        let r = metrics(&fused, model.histogram.as_ref(), &model.config.shot_thresholds())?;
        write_reports(&r, &a.out.join("report"))?;
        print_summary(&r);
    }
    Ok(())
}

fn accuracy(m: &ScoreMatrix) -> f64 {
    let hits = (0..m.num_samples())
        .filter(|&i| argmax(m.row(i)) == m.labels[i])
        .count();
    hits as f64 / m.num_samples().max(1) as f64
}

pub fn report(a: ReportArgs) -> Result<()> {
    let scores = ScoreMatrix::load(&a.scores)?;
    let (hist, base) = match (&a.checkpoint, &a.train_manifest) {
        (Some(c), _) => {
            let model = Model::load(c)?;
            (model.histogram.clone(), model.config.shot_thresholds())
        }
        (None, Some(m)) => (
            Some(ClassHistogram::from_manifest(&DatasetManifest::load(m)?)?),
            ShotThresholds::default(),
        ),
        (None, None) => (None, ShotThresholds::default()),
    };
    let th = thresholds_from(base, a.many_threshold, a.few_threshold);
    let r = metrics(&scores, hist.as_ref(), &th)?;
    match (a.format.as_str(), &a.out) {
        ("json", None) => print!("{}", report_json(&r)),
        ("csv", None) => print!("{}", report_csv(&r)),
        ("both", None) => bail!("--format both needs --out"),
        ("json" | "csv" | "both", Some(stem)) => {
            if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            let write = |ext: &str, text: String| -> Result<()> {
                let p = stem.with_extension(ext);
                std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
                println!("wrote {}", p.display());
                Ok(())
            };
            if a.format != "csv" {
                write("json", report_json(&r))?;
            }
            if a.format != "json" {
                write("csv", report_csv(&r))?;
            }
        }
        (other, _) => bail!("unknown format {other:?} (expected json, csv or both)"),
    }
    Ok(())
}
