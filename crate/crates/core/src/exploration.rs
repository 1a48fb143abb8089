//! Spatial-temporal action exploration: rebalanced partial mixup over the
//! upper/lower body partition and the reverse oversampler for tail classes.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::longtail::{ClassHistogram, DatasetManifest};
use crate::skeleton::{SkeletonGraph, SkeletonSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixupConfig {
    /// Count ratio beyond which the label goes entirely to the rarer class.
    pub k: f64,
    /// Fraction of each batch replaced by mixed samples; 0 disables mixup.
    pub selection_rate: f64,
    pub seed: u64,
}

impl Default for MixupConfig {
    fn default() -> Self {
        Self {
            k: 3.0,
            selection_rate: 1.0 / 16.0,
            seed: 0,
        }
    }
}

impl MixupConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 1.0) {
            return Err(config_err!("mixup k must be > 1, got {}", self.k));
        }
        if !(0.0..=1.0).contains(&self.selection_rate) {
            return Err(config_err!(
                "mixup selection rate {} outside [0, 1]",
                self.selection_rate
            ));
        }
        Ok(())
    }
}

/// Per-class target distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel {
    pub probs: Vec<f64>,
}

impl SoftLabel {
    pub fn one_hot(class: usize, num_classes: usize) -> Self {
        let mut probs = vec![0.0; num_classes];
        probs[class] = 1.0;
        Self { probs }
    }

    /// `weight * onehot(a) + (1 - weight) * onehot(b)`.
    pub fn mix(weight: f64, a: usize, b: usize, num_classes: usize) -> Self {
        if a == b {
            return Self::one_hot(a, num_classes);
        }
        let mut probs = vec![0.0; num_classes];
        probs[a] = weight;
        probs[b] = 1.0 - weight;
        Self { probs }
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Index of the largest weight.
    pub fn dominant(&self) -> usize {
        crate::container::argmax(&self.probs)
    }

    /// The class index if the label is one-hot.
    pub fn hard(&self) -> Option<usize> {
        let mut nz = self.probs.iter().enumerate().filter(|(_, &p)| p != 0.0);
        match (nz.next(), nz.next()) {
            (Some((c, 1.0)), None) => Some(c),
            _ => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.probs.iter().all(|&p| p >= 0.0 && p.is_finite())
            && (self.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9
    }
}

/// Label mix weight given the training counts of both classes.
///
/// Returns 0 when `n_i / n_j > k`, 1 when `n_i / n_j <= 1/k`, and
/// `lambda_x` otherwise.
pub fn lambda_y(n_i: usize, n_j: usize, lambda_x: f64, k: f64) -> f64 {
    let ratio = n_i as f64 / n_j as f64;
    if ratio > k {
        0.0
    } else if ratio <= 1.0 / k {
        1.0
    } else {
        lambda_x
    }
}

/// Upper-body joints from `sample_i`, lower-body joints from `sample_j`,
/// with the label split by [`lambda_y`] using `lambda_x = |upper| / V`.
pub fn partial_mixup(
    sample_i: &SkeletonSequence,
    sample_j: &SkeletonSequence,
    graph: &SkeletonGraph,
    hist: &ClassHistogram,
    config: &MixupConfig,
) -> Result<(SkeletonSequence, SoftLabel)> {
    if sample_i.shape() != sample_j.shape() {
        return Err(shape_err!(
            "mixup samples differ in shape: {:?} vs {:?}",
            sample_i.shape(),
            sample_j.shape()
        ));
    }
    if graph.num_joints != sample_i.joints() {
        return Err(shape_err!(
            "graph partition covers {} joints, samples have {}",
            graph.num_joints,
            sample_i.joints()
        ));
    }
    let c = hist.num_classes();
    let (yi, yj) = (sample_i.label, sample_j.label);
    if yi >= c || yj >= c {
        return Err(shape_err!("labels ({yi}, {yj}) exceed {c} classes"));
    }
    let upper = graph.is_upper();
    let [m, t, v, _] = sample_i.shape();
    let mut mixed = sample_i.clone();
    for mi in 0..m {
        for ti in 0..t {
            for (vi, &up) in upper.iter().enumerate().take(v) {
                if !up {
                    mixed
                        .point_mut(mi, ti, vi)
                        .copy_from_slice(sample_j.point(mi, ti, vi));
                }
            }
        }
    }
    for (dst, (&a, &b)) in mixed
        .person_mask
        .iter_mut()
        .zip(sample_i.person_mask.iter().zip(&sample_j.person_mask))
    {
        *dst = a || b;
    }
    let ly = lambda_y(hist.counts[yi], hist.counts[yj], graph.upper_ratio(), config.k);
    let label = SoftLabel::mix(ly, yi, yj, c);
    mixed.label = label.dominant();
    Ok((mixed, label))
}

/// `(target, partner)` index pairs for one batch.
///
/// `floor(batch_size * selection_rate)` distinct targets; each partner is
/// drawn uniformly from the rest of the batch.
pub fn select_mixup_pairs<R: Rng + ?Sized>(
    batch_size: usize,
    selection_rate: f64,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    if batch_size < 2 {
        return Vec::new();
    }
    let n = ((batch_size as f64 * selection_rate) + 1e-9).floor() as usize;
    let n = n.min(batch_size);
    rand::seq::index::sample(rng, batch_size, n)
        .into_iter()
        .map(|target| {
            let r = rng.random_range(0..batch_size - 1);
            (target, if r >= target { r + 1 } else { r })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseSamplerConfig {
    /// Power applied to `median / n_c`.
    pub exponent: f64,
    /// Largest repeat factor.
    pub cap: usize,
    pub seed: u64,
}

impl Default for ReverseSamplerConfig {
    fn default() -> Self {
        Self {
            exponent: 0.5,
            cap: 4,
            seed: 0,
        }
    }
}

impl ReverseSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.exponent >= 0.0) {
            return Err(config_err!("reverse sampler exponent must be >= 0"));
        }
        if self.cap < 1 {
            return Err(config_err!("reverse sampler cap must be >= 1"));
        }
        Ok(())
    }
}

/// Per-class repeat factor `min(cap, max(1, round((median / n_c)^exponent)))`.
pub fn reverse_repeat_factors(hist: &ClassHistogram, config: &ReverseSamplerConfig) -> Vec<usize> {
    hist.counts
        .iter()
        .map(|&n| {
            let f = (hist.n_median / n as f64).powf(config.exponent);
            ((f + 0.5).floor() as usize).clamp(1, config.cap)
        })
        .collect()
}

/// Manifest entry indices for one epoch: every entry of class `c`
/// appears `factors[c]` times, then the list is shuffled.
pub fn build_epoch_index<R: Rng + ?Sized>(
    manifest: &DatasetManifest,
    factors: &[usize],
    rng: &mut R,
) -> Result<Vec<usize>> {
    if factors.len() != manifest.num_classes {
        return Err(shape_err!(
            "{} repeat factors for {} classes",
            factors.len(),
            manifest.num_classes
        ));
    }
    let mut index: Vec<usize> = manifest
        .entries
        .iter()
        .enumerate()
        .flat_map(|(i, e)| std::iter::repeat_n(i, factors[e.label]))
        .collect();
    index.shuffle(rng);
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::longtail::{ManifestEntry, Split};
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn lambda_y_branches() {
        assert_eq!(lambda_y(600, 100, 0.52, 3.0), 0.0);
        assert_eq!(lambda_y(100, 600, 0.52, 3.0), 1.0);
        assert_eq!(lambda_y(100, 100, 0.52, 3.0), 0.52);
        // ratio exactly k is not strictly greater
        assert_eq!(lambda_y(300, 100, 0.52, 3.0), 0.52);
        // ratio exactly 1/k takes the second branch
        assert_eq!(lambda_y(100, 300, 0.52, 3.0), 1.0);
    }

    fn seq_filled(v: usize, value: f64, label: usize) -> SkeletonSequence {
        SkeletonSequence::new([1, 2, v, 3], vec![value; 2 * v * 3], label).unwrap()
    }

    #[test]
    fn self_mix_is_identity() {
        let g = SkeletonGraph::ntu25();
        let h = ClassHistogram::from_counts(vec![600, 6]).unwrap();
        let s = seq_filled(25, 0.7, 1);
        let (x, y) = partial_mixup(&s, &s, &g, &h, &MixupConfig::default()).unwrap();
        assert_eq!(x.data(), s.data());
        assert_eq!(y, SoftLabel::one_hot(1, 2));
    }

    #[test]
    fn head_tail_mix_goes_to_tail() {
        let g = SkeletonGraph::ntu25();
        let h = ClassHistogram::from_counts(vec![600, 6]).unwrap();
        let head = seq_filled(25, 1.0, 0);
        let tail = seq_filled(25, 2.0, 1);
        let cfg = MixupConfig::default();
        let (_, y) = partial_mixup(&head, &tail, &g, &h, &cfg).unwrap();
        assert_eq!(y.probs, vec![0.0, 1.0]);
        let (_, y) = partial_mixup(&tail, &head, &g, &h, &cfg).unwrap();
        assert_eq!(y.probs, vec![0.0, 1.0]);
    }

    #[test]
    fn equal_counts_use_partition_ratio() {
        let g = SkeletonGraph::ntu25();
        let h = ClassHistogram::from_counts(vec![50, 50]).unwrap();
        let (x, y) = partial_mixup(
            &seq_filled(25, 1.0, 0),
            &seq_filled(25, 2.0, 1),
            &g,
            &h,
            &MixupConfig::default(),
        )
        .unwrap();
        assert!((y.probs[0] - 0.52).abs() < 1e-15);
        assert!((y.probs[1] - 0.48).abs() < 1e-15);
        let upper = g.is_upper();
        for (v, &up) in upper.iter().enumerate() {
            let want = if up { 1.0 } else { 2.0 };
            assert!(x.point(0, 1, v).iter().all(|&p| p == want));
        }
    }

    #[test]
    fn mixup_rejects_shape_mismatch() {
        let g = SkeletonGraph::toy5();
        let h = ClassHistogram::from_counts(vec![5, 5]).unwrap();
        let a = seq_filled(5, 0.0, 0);
        let b = SkeletonSequence::zeros([1, 3, 5, 3], 1);
        assert!(partial_mixup(&a, &b, &g, &h, &MixupConfig::default()).is_err());
    }

    #[test]
    fn pair_counts() {
        let mut rng = rng_from(1);
        assert_eq!(select_mixup_pairs(128, 1.0 / 16.0, &mut rng).len(), 8);
        assert_eq!(select_mixup_pairs(8, 1.0 / 16.0, &mut rng).len(), 0);
        assert_eq!(
            select_mixup_pairs(64, 1.0 / 16.0, &mut rng_from(9)),
            select_mixup_pairs(64, 1.0 / 16.0, &mut rng_from(9))
        );
        for (t, p) in select_mixup_pairs(20, 1.0, &mut rng) {
            assert_ne!(t, p);
        }
    }

    #[test]
    fn repeat_factors() {
        let cfg = ReverseSamplerConfig::default();
        let h = ClassHistogram::from_counts(vec![600, 100, 6]).unwrap();
        // (100 / 6)^0.5 = 4.08 -> 4
        assert_eq!(reverse_repeat_factors(&h, &cfg), vec![1, 1, 4]);
        let h = ClassHistogram::from_counts(vec![30; 5]).unwrap();
        assert_eq!(reverse_repeat_factors(&h, &cfg), vec![1; 5]);
        let h = ClassHistogram::from_counts(vec![600, 100, 6]).unwrap();
        let flat = ReverseSamplerConfig { exponent: 0.0, ..cfg };
        assert_eq!(reverse_repeat_factors(&h, &flat), vec![1, 1, 1]);
    }

    fn manifest(labels: &[usize], k: usize) -> DatasetManifest {
        DatasetManifest {
            num_classes: k,
            split: Split::Train,
            entries: labels
                .iter()
                .enumerate()
                .map(|(i, &label)| ManifestEntry {
                    path: format!("{i}"),
                    label,
                })
                .collect(),
            base_dir: None,
        }
    }

    #[test]
    fn epoch_index_counts() {
        let m = manifest(&[0, 0, 1, 1, 1, 1, 1, 0], 2);
        let mut idx = build_epoch_index(&m, &[1, 1], &mut rng_from(0)).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..8).collect::<Vec<_>>());
        let idx = build_epoch_index(&m, &[1, 3], &mut rng_from(0)).unwrap();
        assert_eq!(idx.iter().filter(|&&i| m.entries[i].label == 1).count(), 15);
        assert!(build_epoch_index(&m, &[1], &mut rng_from(0)).is_err());
    }

    proptest! {
        #[test]
        fn lambda_y_is_scale_invariant(ni in 1usize..1000, nj in 1usize..1000, a in 1usize..50, k in 1.01f64..10.0) {
            prop_assert_eq!(lambda_y(ni, nj, 0.4, k), lambda_y(a * ni, a * nj, 0.4, k));
        }

        #[test]
        fn mixed_labels_are_distributions(ni in 1usize..700, nj in 1usize..700, same in any::<bool>(), seed in 0u64..1000) {
            let g = SkeletonGraph::compact15();
            let h = ClassHistogram::from_counts(vec![ni, nj, 10]).unwrap();
            let mut rng = rng_from(seed);
            let mk = |label: usize, rng: &mut crate::rng::Rng| {
                let d = (0..2 * 15 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
                SkeletonSequence::new([1, 2, 15, 3], d, label).unwrap()
            };
            let a = mk(0, &mut rng);
            let b = mk(if same { 0 } else { 1 }, &mut rng);
            let (x, y) = partial_mixup(&a, &b, &g, &h, &MixupConfig::default()).unwrap();
            prop_assert!(y.is_valid());
            prop_assert!(y.probs.iter().enumerate().all(|(c, &p)| p == 0.0 || c == a.label || c == b.label));
            if same { prop_assert_eq!(y.hard(), Some(0)); }
            let upper = g.is_upper();
            for t in 0..2 { for (v, &up) in upper.iter().enumerate() {
                let src = if up { &a } else { &b };
                prop_assert_eq!(x.point(0, t, v), src.point(0, t, v));
            }}
        }

        #[test]
        fn epoch_index_length(counts in proptest::collection::vec(1usize..40, 2..8), seed in 0u64..100) {
            let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
            let m = manifest(&labels, counts.len());
            let h = ClassHistogram::from_counts(counts.clone()).unwrap();
            let f = reverse_repeat_factors(&h, &ReverseSamplerConfig::default());
            let idx = build_epoch_index(&m, &f, &mut rng_from(seed)).unwrap();
            prop_assert_eq!(idx.len(), counts.iter().zip(&f).map(|(n, r)| n * r).sum::<usize>());
            // factors never increase with the count
            let mut order: Vec<usize> = (0..counts.len()).collect();
            order.sort_by_key(|&c| counts[c]);
            prop_assert!(order.windows(2).all(|w| f[w[0]] >= f[w[1]]));
        }
    }
}
