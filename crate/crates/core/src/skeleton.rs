//! Skeleton motion tensors, joint topology, and the six modal streams.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};

/// Dense motion tensor laid out row-major as `[persons, frames, joints, channels]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSequence {
    shape: [usize; 4],
    data: Vec<f64>,
    pub label: usize,
    pub person_mask: Vec<bool>,
}

impl SkeletonSequence {
    /// Builds a sequence with every person marked present.
    pub fn new(shape: [usize; 4], data: Vec<f64>, label: usize) -> Result<Self> {
        let mask = vec![true; shape[0]];
        Self::with_mask(shape, data, label, mask)
    }

    pub fn with_mask(
        shape: [usize; 4],
        data: Vec<f64>,
        label: usize,
        person_mask: Vec<bool>,
    ) -> Result<Self> {
        let [m, t, v, c] = shape;
        if m < 1 || t < 1 || v < 1 || c < 2 {
            return Err(shape_err!(
                "sequence shape {shape:?} needs M>=1, T>=1, V>=1, C>=2"
            ));
        }
        if data.len() != m * t * v * c {
            return Err(shape_err!(
                "sequence shape {shape:?} needs {} values, got {}",
                m * t * v * c,
                data.len()
            ));
        }
        if person_mask.len() != m {
            return Err(shape_err!(
                "person mask has {} entries for {m} persons",
                person_mask.len()
            ));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("non-finite value at flat index {i}")));
        }
        Ok(Self {
            shape,
            data,
            label,
            person_mask,
        })
    }

    pub fn zeros(shape: [usize; 4], label: usize) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            label,
            person_mask: vec![true; shape[0]],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    pub fn persons(&self) -> usize {
        self.shape[0]
    }
    pub fn frames(&self) -> usize {
        self.shape[1]
    }
    pub fn joints(&self) -> usize {
        self.shape[2]
    }
    pub fn channels(&self) -> usize {
        self.shape[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, m: usize, t: usize, v: usize) -> usize {
        let [_, nt, nv, nc] = self.shape;
        ((m * nt + t) * nv + v) * nc
    }

    /// Channel vector of joint `v` at frame `t` of person `m`.
    #[inline]
    pub fn point(&self, m: usize, t: usize, v: usize) -> &[f64] {
        let o = self.offset(m, t, v);
        &self.data[o..o + self.shape[3]]
    }

    #[inline]
    pub fn point_mut(&mut self, m: usize, t: usize, v: usize) -> &mut [f64] {
        let o = self.offset(m, t, v);
        let c = self.shape[3];
        &mut self.data[o..o + c]
    }

    /// Same label, mask and shape with new values.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            shape: self.shape,
            data,
            label: self.label,
            person_mask: self.person_mask.clone(),
        }
    }

    /// Replaces the frame axis; used by temporal resampling.
    pub(crate) fn with_frames(&self, frames: usize, data: Vec<f64>) -> Self {
        let [m, _, v, c] = self.shape;
        debug_assert_eq!(data.len(), m * frames * v * c);
        Self {
            shape: [m, frames, v, c],
            data,
            label: self.label,
            person_mask: self.person_mask.clone(),
        }
    }
}

/// Joint topology of a skeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonGraph {
    pub num_joints: usize,
    pub edges: Vec<[usize; 2]>,
    /// Parent joint of each joint; a root maps to itself.
    pub parent: Vec<usize>,
    pub symmetry_pairs: Vec<[usize; 2]>,
    pub upper: Vec<usize>,
    pub lower: Vec<usize>,
}

impl SkeletonGraph {
    pub fn validate(&self) -> Result<()> {
        let v = self.num_joints;
        if v == 0 {
            return Err(config_err!("graph must have at least one joint"));
        }
        if self.parent.len() != v {
            return Err(config_err!(
                "parent map has {} entries for {v} joints",
                self.parent.len()
            ));
        }
        if let Some(&p) = self.parent.iter().find(|&&p| p >= v) {
            return Err(config_err!("parent index {p} out of range for {v} joints"));
        }
        for start in 0..v {
            let mut j = start;
            let mut steps = 0;
            while self.parent[j] != j {
                j = self.parent[j];
                steps += 1;
                if steps > v {
                    return Err(config_err!("parent map has a cycle through joint {start}"));
                }
            }
        }
        for e in &self.edges {
            if e[0] >= v || e[1] >= v {
                return Err(config_err!("edge {e:?} out of range for {v} joints"));
            }
        }
        let mut seen = vec![0u8; v];
        for &j in &self.upper {
            if j >= v {
                return Err(config_err!("upper joint {j} out of range"));
            }
            seen[j] |= 1;
        }
        for &j in &self.lower {
            if j >= v {
                return Err(config_err!("lower joint {j} out of range"));
            }
            if seen[j] & 2 != 0 || seen[j] & 1 != 0 {
                return Err(config_err!(
                    "joint {j} appears twice in the upper/lower partition"
                ));
            }
            seen[j] |= 2;
        }
        if self.upper.len() + self.lower.len() != v || seen.contains(&0) {
            return Err(config_err!("upper and lower must partition all {v} joints"));
        }
        let mut paired = vec![false; v];
        for &[l, r] in &self.symmetry_pairs {
            if l >= v || r >= v || l == r {
                return Err(config_err!("invalid symmetry pair ({l}, {r})"));
            }
            if paired[l] || paired[r] {
                return Err(config_err!(
                    "joint in symmetry pair ({l}, {r}) already belongs to another pair"
                ));
            }
            paired[l] = true;
            paired[r] = true;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: SkeletonGraph =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("graph JSON: {e}")))?;
        g.validate()?;
        Ok(g)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let g: SkeletonGraph = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        g.validate()?;
        Ok(g)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Builds a graph from a parent map; edges are the child-parent links.
    pub fn from_parents(
        parent: Vec<usize>,
        symmetry_pairs: Vec<[usize; 2]>,
        upper: Vec<usize>,
    ) -> Result<Self> {
        let v = parent.len();
        let edges = parent
            .iter()
            .enumerate()
            .filter(|&(j, &p)| j != p)
            .map(|(j, &p)| [j, p])
            .collect();
        let lower = (0..v).filter(|j| !upper.contains(j)).collect();
        let g = Self {
            num_joints: v,
            edges,
            parent,
            symmetry_pairs,
            upper,
            lower,
        };
        g.validate()?;
        Ok(g)
    }

    /// 25-joint humanoid (Kinect v2 joint order).
    pub fn ntu25() -> Self {
        Self::from_json(include_str!("../assets/graphs/ntu25.json")).expect("bundled graph")
    }

    /// 15-joint humanoid used by the synthetic generator.
    pub fn compact15() -> Self {
        Self::from_json(include_str!("../assets/graphs/compact15.json")).expect("bundled graph")
    }

    /// 5-joint toy topology for tests.
    pub fn toy5() -> Self {
        Self::from_json(include_str!("../assets/graphs/toy5.json")).expect("bundled graph")
    }

    pub fn preset_for_joints(v: usize) -> Result<Self> {
        match v {
            5 => Ok(Self::toy5()),
            15 => Ok(Self::compact15()),
            25 => Ok(Self::ntu25()),
            _ => Err(config_err!(
                "no bundled skeleton with {v} joints (available: 5, 15, 25)"
            )),
        }
    }

    pub fn grandparent(&self, v: usize) -> usize {
        self.parent[self.parent[v]]
    }

    /// Fraction of joints in the upper body.
    pub fn upper_ratio(&self) -> f64 {
        self.upper.len() as f64 / self.num_joints as f64
    }

    pub fn is_upper(&self) -> Vec<bool> {
        let mut mask = vec![false; self.num_joints];
        for &j in &self.upper {
            mask[j] = true;
        }
        mask
    }
}

/// One of the six input streams derived from raw joints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Joint,
    Bone,
    Skip,
    JointMotion,
    BoneMotion,
    SkipMotion,
}

impl Modality {
    pub const ALL: [Modality; 6] = [
        Modality::Joint,
        Modality::Bone,
        Modality::Skip,
        Modality::JointMotion,
        Modality::BoneMotion,
        Modality::SkipMotion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Joint => "joint",
            Modality::Bone => "bone",
            Modality::Skip => "skip",
            Modality::JointMotion => "joint_motion",
            Modality::BoneMotion => "bone_motion",
            Modality::SkipMotion => "skip_motion",
        }
    }

    /// Static stream a motion stream differentiates.
    pub fn base(self) -> Modality {
        match self {
            Modality::JointMotion => Modality::Joint,
            Modality::BoneMotion => Modality::Bone,
            Modality::SkipMotion => Modality::Skip,
            m => m,
        }
    }

    pub fn is_motion(self) -> bool {
        self.base() != self
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| config_err!("unknown modality {s:?}"))
    }
}

fn check_joints(seq: &SkeletonSequence, graph: &SkeletonGraph) -> Result<()> {
    if graph.num_joints != seq.joints() {
        return Err(shape_err!(
            "graph has {} joints but sequence has {}",
            graph.num_joints,
            seq.joints()
        ));
    }
    Ok(())
}

/// Joint-minus-parent vectors; roots yield zero.
pub fn bone_of(seq: &SkeletonSequence, graph: &SkeletonGraph) -> Result<SkeletonSequence> {
    check_joints(seq, graph)?;
    let [m, t, v, c] = seq.shape();
    let mut out = vec![0.0; seq.data().len()];
    for mi in 0..m {
        for ti in 0..t {
            for vi in 0..v {
                let o = seq.offset(mi, ti, vi);
                let p = seq.offset(mi, ti, graph.parent[vi]);
                for ci in 0..c {
                    out[o + ci] = seq.data[o + ci] - seq.data[p + ci];
                }
            }
        }
    }
    Ok(seq.with_data(out))
}

/// Joint-minus-grandparent vectors, computed as `bone[v] + bone[parent(v)]`.
///
/// Through the root self-loop the root yields zero and the root's children
/// yield their bone vector.
pub fn skip_of(seq: &SkeletonSequence, graph: &SkeletonGraph) -> Result<SkeletonSequence> {
    let bone = bone_of(seq, graph)?;
    let [m, t, v, c] = seq.shape();
    let mut out = vec![0.0; seq.data().len()];
    for mi in 0..m {
        for ti in 0..t {
            for vi in 0..v {
                let o = bone.offset(mi, ti, vi);
                let p = bone.offset(mi, ti, graph.parent[vi]);
                for ci in 0..c {
                    out[o + ci] = bone.data[o + ci] + bone.data[p + ci];
                }
            }
        }
    }
    Ok(seq.with_data(out))
}

/// Forward frame difference; the last frame is zero so `T` is preserved.
pub fn motion_of(seq: &SkeletonSequence) -> SkeletonSequence {
    let [m, t, v, c] = seq.shape();
    let stride = v * c;
    let mut out = vec![0.0; seq.data().len()];
    for mi in 0..m {
        let base = mi * t * stride;
        for ti in 0..t.saturating_sub(1) {
            let cur = base + ti * stride;
            let next = cur + stride;
            for k in 0..stride {
                out[cur + k] = seq.data[next + k] - seq.data[cur + k];
            }
        }
    }
    seq.with_data(out)
}

pub fn derive_modality(
    seq: &SkeletonSequence,
    graph: &SkeletonGraph,
    modality: Modality,
) -> Result<SkeletonSequence> {
    check_joints(seq, graph)?;
    let base = match modality.base() {
        Modality::Joint => seq.clone(),
        Modality::Bone => bone_of(seq, graph)?,
        Modality::Skip => skip_of(seq, graph)?,
        _ => unreachable!("base() returns a static stream"),
    };
    Ok(if modality.is_motion() {
        motion_of(&base)
    } else {
        base
    })
}
