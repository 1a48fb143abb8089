//! Spatial augmentations (flip, rotate, scale) and the uniform temporal sampler.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::skeleton::{SkeletonGraph, SkeletonSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Per-axis rotation bound in degrees.
    pub rotate_max_deg: f64,
    pub scale_low: f64,
    pub scale_high: f64,
    /// Output length of the temporal sampler.
    pub target_frames: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            rotate_max_deg: 15.0,
            scale_low: 0.9,
            scale_high: 1.1,
            target_frames: 64,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(config_err!("flip_prob {} outside [0, 1]", self.flip_prob));
        }
        if !(self.rotate_max_deg >= 0.0) {
            return Err(config_err!("rotate_max_deg must be >= 0"));
        }
        if !(self.scale_low > 0.0 && self.scale_low <= self.scale_high) {
            return Err(config_err!(
                "scale range ({}, {}) must satisfy 0 < low <= high",
                self.scale_low,
                self.scale_high
            ));
        }
        if self.target_frames < 1 {
            return Err(config_err!("target_frames must be >= 1"));
        }
        Ok(())
    }

    /// Training pipeline: flip, rotate, scale, then random-mode sampling.
    pub fn apply_train<R: Rng + ?Sized>(
        &self,
        seq: &SkeletonSequence,
        graph: &SkeletonGraph,
        rng: &mut R,
    ) -> Result<SkeletonSequence> {
        let mut out = if self.flip_prob > 0.0 {
            flip(seq, graph, self.flip_prob, rng)?
        } else {
            seq.clone()
        };
        out = rotate(&out, self.rotate_max_deg, rng);
        out = scale(&out, (self.scale_low, self.scale_high), rng);
        Ok(uniform_sample(&out, self.target_frames, SampleMode::Random, rng))
    }

    /// Evaluation pipeline: deterministic center-mode sampling only.
    pub fn apply_eval(&self, seq: &SkeletonSequence) -> SkeletonSequence {
        uniform_sample(seq, self.target_frames, SampleMode::Center, &mut NoRng)
    }
}

/// Mirrors a sequence with probability `prob`.
pub fn flip<R: Rng + ?Sized>(
    seq: &SkeletonSequence,
    graph: &SkeletonGraph,
    prob: f64,
    rng: &mut R,
) -> Result<SkeletonSequence> {
    check_flip(seq, graph)?;
    if rng.random::<f64>() < prob {
        flip_forced(seq, graph)
    } else {
        Ok(seq.clone())
    }
}

fn check_flip(seq: &SkeletonSequence, graph: &SkeletonGraph) -> Result<()> {
    if graph.symmetry_pairs.is_empty() {
        return Err(config_err!("flip needs left/right symmetry pairs in the graph"));
    }
    if graph.num_joints != seq.joints() {
        return Err(shape_err!(
            "graph has {} joints but sequence has {}",
            graph.num_joints,
            seq.joints()
        ));
    }
    Ok(())
}

/// Swaps every left/right joint pair and negates the lateral channel 0.
pub fn flip_forced(seq: &SkeletonSequence, graph: &SkeletonGraph) -> Result<SkeletonSequence> {
    check_flip(seq, graph)?;
    let [m, t, v, _] = seq.shape();
    let mut source: Vec<usize> = (0..v).collect();
    for &[l, r] in &graph.symmetry_pairs {
        source[l] = r;
        source[r] = l;
    }
    let mut out = seq.clone();
    for mi in 0..m {
        for ti in 0..t {
            for (vi, &src) in source.iter().enumerate() {
                let p = seq.point(mi, ti, src);
                let q = out.point_mut(mi, ti, vi);
                q.copy_from_slice(p);
                q[0] = -q[0];
            }
        }
    }
    Ok(out)
}

/// `R = Rz · Ry · Rx` for angles in radians.
pub fn rotation_matrix(angles: [f64; 3]) -> [[f64; 3]; 3] {
    let (sx, cx) = angles[0].sin_cos();
    let (sy, cy) = angles[1].sin_cos();
    let (sz, cz) = angles[2].sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    matmul3(&rz, &matmul3(&ry, &rx))
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Applies one rotation to channels 0..3 of every point.
pub fn rotate_with(seq: &SkeletonSequence, r: &[[f64; 3]; 3]) -> SkeletonSequence {
    let c = seq.channels();
    let mut data = seq.data().to_vec();
    if c >= 3 {
        for p in data.chunks_exact_mut(c) {
            let (x, y, z) = (p[0], p[1], p[2]);
            for (i, row) in r.iter().enumerate() {
                p[i] = row[0] * x + row[1] * y + row[2] * z;
            }
        }
    } else {
        // 2-D: the z-rotation block acts on (x, y)
        for p in data.chunks_exact_mut(c) {
            let (x, y) = (p[0], p[1]);
            p[0] = r[0][0] * x + r[0][1] * y;
            p[1] = r[1][0] * x + r[1][1] * y;
        }
    }
    seq.with_data(data)
}

/// Rotates by angles drawn uniformly from `[-max_deg, max_deg]` per axis
/// (only the in-plane axis for 2-D data).
pub fn rotate<R: Rng + ?Sized>(seq: &SkeletonSequence, max_deg: f64, rng: &mut R) -> SkeletonSequence {
    if max_deg == 0.0 {
        return seq.clone();
    }
    let bound = max_deg.to_radians();
    let mut draw = || rng.random_range(-bound..=bound);
    let angles = if seq.channels() >= 3 {
        [draw(), draw(), draw()]
    } else {
        [0.0, 0.0, draw()]
    };
    rotate_with(seq, &rotation_matrix(angles))
}

/// Multiplies the coordinate channels (at most the first three) by `s`.
pub fn scale_by(seq: &SkeletonSequence, s: f64) -> SkeletonSequence {
    let c = seq.channels();
    let coords = c.min(3);
    let mut data = seq.data().to_vec();
    for p in data.chunks_exact_mut(c) {
        p[..coords].iter_mut().for_each(|x| *x *= s);
    }
    seq.with_data(data)
}

pub fn sample_scale<R: Rng + ?Sized>(range: (f64, f64), rng: &mut R) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..=range.1)
    }
}

pub fn scale<R: Rng + ?Sized>(seq: &SkeletonSequence, range: (f64, f64), rng: &mut R) -> SkeletonSequence {
    let s = sample_scale(range, rng);
    if s == 1.0 {
        seq.clone()
    } else {
        scale_by(seq, s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Random,
    Center,
}

/// Frame indices for `target` equal-length splits of `frames` frames.
///
/// Split `s` covers `[floor(s*T/L), floor((s+1)*T/L))`; an empty split
/// reuses its start frame (clamped to `T-1`).
pub fn uniform_sample_indices<R: Rng + ?Sized>(
    frames: usize,
    target: usize,
    mode: SampleMode,
    rng: &mut R,
) -> Vec<usize> {
    let bound = |s: usize| s * frames / target;
    (0..target)
        .map(|s| {
            let (lo, hi) = (bound(s), bound(s + 1));
            if hi > lo {
                match mode {
                    SampleMode::Random => rng.random_range(lo..hi),
                    SampleMode::Center => (lo + hi) / 2,
                }
            } else {
                lo.min(frames - 1)
            }
        })
        .collect()
}

pub fn select_frames(seq: &SkeletonSequence, idx: &[usize]) -> SkeletonSequence {
    let [m, t, v, c] = seq.shape();
    let stride = v * c;
    let mut data = Vec::with_capacity(m * idx.len() * stride);
    for mi in 0..m {
        for &ti in idx {
            let o = (mi * t + ti) * stride;
            data.extend_from_slice(&seq.data()[o..o + stride]);
        }
    }
    seq.with_frames(idx.len(), data)
}

pub fn uniform_sample<R: Rng + ?Sized>(
    seq: &SkeletonSequence,
    target: usize,
    mode: SampleMode,
    rng: &mut R,
) -> SkeletonSequence {
    let idx = uniform_sample_indices(seq.frames(), target, mode, rng);
    select_frames(seq, &idx)
}

/// RNG for code paths that never draw.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("center sampling draws no random numbers")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("center sampling draws no random numbers")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("center sampling draws no random numbers")
    }
}
