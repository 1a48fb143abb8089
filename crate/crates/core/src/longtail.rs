//! Long-tailed split construction, class statistics and shot groups.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};
use crate::rng::{purpose, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
}

/// A list of labelled samples. Relative paths resolve against the
/// directory the manifest was loaded from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_classes: usize,
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(domain_err!("manifest has no entries"));
        }
        if let Some(e) = self.entries.iter().find(|e| e.label >= self.num_classes) {
            return Err(domain_err!(
                "entry {:?} has label {} but num_classes is {}",
                e.path,
                e.label,
                self.num_classes
            ));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        m.base_dir = path.parent().map(Path::to_path_buf);
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        match &self.base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for e in &self.entries {
            counts[e.label] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }
}

/// Per-class training counts with cached order statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassHistogram {
    pub counts: Vec<usize>,
    pub n_min: usize,
    pub n_max: usize,
    pub n_median: f64,
}

impl ClassHistogram {
    pub fn from_counts(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(domain_err!("histogram needs at least one class"));
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(domain_err!("class {c} has no training samples"));
        }
        let mut sorted = counts.clone();
        sorted.sort_unstable();
        let k = sorted.len();
        let n_median = if k % 2 == 1 {
            sorted[k / 2] as f64
        } else {
            (sorted[k / 2 - 1] + sorted[k / 2]) as f64 / 2.0
        };
        Ok(Self {
            n_min: sorted[0],
            n_max: sorted[k - 1],
            n_median,
            counts,
        })
    }

    pub fn from_manifest(m: &DatasetManifest) -> Result<Self> {
        Self::from_counts(m.class_counts())
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongTailSpec {
    pub max_per_class: usize,
    pub imbalance_ratio: f64,
    pub seed: u64,
}

impl LongTailSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.imbalance_ratio >= 1.0) || !self.imbalance_ratio.is_finite() {
            return Err(domain_err!(
                "imbalance ratio must be a finite value >= 1, got {}",
                self.imbalance_ratio
            ));
        }
        if (self.max_per_class as f64) / self.imbalance_ratio < 1.0 {
            return Err(domain_err!(
                "max_per_class {} / ratio {} leaves the tail class empty",
                self.max_per_class,
                self.imbalance_ratio
            ));
        }
        Ok(())
    }
}

/// Which classes become the head of the long tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassOrderPolicy {
    /// Class 0 is the head, the last label the tail.
    #[default]
    LabelIndex,
    /// Ranks come from a seeded permutation of the labels.
    RandomPermutation,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Exponentially decaying per-class targets from `max_per_class` down to
/// `max_per_class / ratio`.
pub fn exponential_profile(num_classes: usize, max_per_class: usize, ratio: f64) -> Result<Vec<usize>> {
    LongTailSpec {
        max_per_class,
        imbalance_ratio: ratio,
        seed: 0,
    }
    .validate()?;
    match num_classes {
        0 => Err(domain_err!("profile needs at least one class")),
        1 => Ok(vec![max_per_class]),
        n => {
            let last = (n - 1) as f64;
            Ok((0..n)
                .map(|c| round_half_up(max_per_class as f64 * ratio.powf(-(c as f64) / last)))
                .collect())
        }
    }
}

/// A class whose target exceeded what the manifest holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clamp {
    pub class: usize,
    pub target: usize,
    pub available: usize,
}

#[derive(Debug, Clone)]
pub struct Truncation {
    pub manifest: DatasetManifest,
    pub histogram: ClassHistogram,
    pub clamped: Vec<Clamp>,
}

/// Head-to-tail rank of every class.
pub fn class_ranks(num_classes: usize, policy: ClassOrderPolicy, seed: u64) -> Vec<usize> {
    match policy {
        ClassOrderPolicy::LabelIndex => (0..num_classes).collect(),
        ClassOrderPolicy::RandomPermutation => {
            let mut order: Vec<usize> = (0..num_classes).collect();
            order.shuffle(&mut substream(seed, &[purpose::CLASS_ORDER]));
            let mut rank = vec![0; num_classes];
            for (r, &c) in order.iter().enumerate() {
                rank[c] = r;
            }
            rank
        }
    }
}

/// Subsamples a balanced training manifest into a long-tailed one.
///
/// Entries keep their original relative order. Classes holding fewer
/// samples than their target keep everything and are reported in
/// [`Truncation::clamped`].
pub fn truncate_dataset(
    manifest: &DatasetManifest,
    spec: &LongTailSpec,
    policy: ClassOrderPolicy,
) -> Result<Truncation> {
    if manifest.split != Split::Train {
        return Err(Error::Usage(
            "only a training split may be truncated; validation data stays intact".into(),
        ));
    }
    manifest.validate()?;
    spec.validate()?;
    let k = manifest.num_classes;
    let profile = exponential_profile(k, spec.max_per_class, spec.imbalance_ratio)?;
    let ranks = class_ranks(k, policy, spec.seed);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, e) in manifest.entries.iter().enumerate() {
        by_class[e.label].push(i);
    }

    let mut keep = vec![false; manifest.entries.len()];
    let mut clamped = Vec::new();
    for (class, idx) in by_class.iter().enumerate() {
        if idx.is_empty() {
            return Err(domain_err!("class {class} has no samples in the manifest"));
        }
        let target = profile[ranks[class]];
        let take = if idx.len() < target {
            log::warn!(
                "class {class}: target {target} exceeds {} available samples; keeping all",
                idx.len()
            );
            clamped.push(Clamp {
                class,
                target,
                available: idx.len(),
            });
            idx.len()
        } else {
            target
        };
        let mut rng = substream(spec.seed, &[purpose::TRUNCATE, class as u64]);
        for j in rand::seq::index::sample(&mut rng, idx.len(), take) {
            keep[idx[j]] = true;
        }
    }

    let entries = manifest
        .entries
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(e, _)| e.clone())
        .collect();
    let out = DatasetManifest {
        num_classes: k,
        split: Split::Train,
        entries,
        base_dir: manifest.base_dir.clone(),
    };
    let histogram = ClassHistogram::from_manifest(&out)?;
    Ok(Truncation {
        manifest: out,
        histogram,
        clamped,
    })
}

/// Count thresholds separating many-, medium- and few-shot classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotThresholds {
    /// Many-shot classes have strictly more samples than this.
    pub many_above: f64,
    /// Few-shot classes have strictly fewer samples than this.
    pub few_below: f64,
}

impl Default for ShotThresholds {
    fn default() -> Self {
        Self {
            many_above: 100.0,
            few_below: 20.0,
        }
    }
}

impl ShotThresholds {
    /// Maps the default thresholds onto another exponential profile.
    ///
    /// The defaults sit at fixed fractions of the log-count span of a
    /// 600-sample, ratio-100 profile; this keeps those fractions for a
    /// profile running from `max_per_class` down by `ratio`.
    pub fn log_scaled(max_per_class: usize, ratio: f64) -> Self {
        let d = Self::default();
        let span = 100f64.ln();
        let frac = |t: f64| (600.0 / t).ln() / span;
        let at = |f: f64| max_per_class as f64 * ratio.powf(-f);
        Self {
            many_above: at(frac(d.many_above)),
            few_below: at(frac(d.few_below)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotGroups {
    pub many: Vec<usize>,
    pub medium: Vec<usize>,
    pub few: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShotGroup {
    Many,
    Medium,
    Few,
}

impl ShotGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            ShotGroup::Many => "many",
            ShotGroup::Medium => "medium",
            ShotGroup::Few => "few",
        }
    }
}

impl ShotThresholds {
    pub fn group_of(&self, n: usize) -> ShotGroup {
        let n = n as f64;
        if n > self.many_above {
            ShotGroup::Many
        } else if n < self.few_below {
            ShotGroup::Few
        } else {
            ShotGroup::Medium
        }
    }
}

pub fn shot_groups(hist: &ClassHistogram, thresholds: &ShotThresholds) -> ShotGroups {
    let mut g = ShotGroups {
        many: Vec::new(),
        medium: Vec::new(),
        few: Vec::new(),
    };
    for (c, &n) in hist.counts.iter().enumerate() {
        match thresholds.group_of(n) {
            ShotGroup::Many => g.many.push(c),
            ShotGroup::Medium => g.medium.push(c),
            ShotGroup::Few => g.few.push(c),
        }
    }
    g
}

pub fn imbalance_ratio(hist: &ClassHistogram) -> f64 {
    hist.n_max as f64 / hist.n_min as f64
}
