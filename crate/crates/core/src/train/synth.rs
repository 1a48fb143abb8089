//! Class-conditional skeleton motions for desk-scale experiments.
//!
//! Each class drives every non-root joint with a sinusoidal rotation about a
//! class-specific axis; positions come from forward kinematics over the
//! graph's parent array, so motion propagates down each limb.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::container::{save_sequence, Dtype};
use crate::error::{config_err, Error, Result};
use crate::longtail::{DatasetManifest, ManifestEntry, Split};
use crate::rng::{purpose, substream};
use crate::skeleton::{SkeletonGraph, SkeletonSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    /// 5, 15 or 25; selects the bundled graph.
    pub joints: usize,
    pub frames: usize,
    pub persons: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    /// Standard deviation of i.i.d. coordinate noise.
    pub noise: f64,
    /// Relative spread of per-sample amplitude, phase, tempo, body size and
    /// heading. 0 makes every sample of a class the same motion.
    pub variation: f64,
    /// Scale of the class-specific departure from a shared motion template.
    pub separation: f64,
    pub seed: u64,
    pub dtype: Dtype,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            joints: 15,
            frames: 48,
            persons: 1,
            train_per_class: 200,
            val_per_class: 50,
            noise: 0.01,
            variation: 0.4,
            separation: 1.0,
            seed: 0,
            dtype: Dtype::F32,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 1 || self.frames < 1 || self.persons < 1 {
            return Err(config_err!("classes, frames and persons must be >= 1"));
        }
        if self.train_per_class < 1 {
            return Err(config_err!("train_per_class must be >= 1"));
        }
        for (name, v) in [
            ("noise", self.noise),
            ("variation", self.variation),
            ("separation", self.separation),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.separation == 0.0 && self.num_classes > 1 {
            return Err(config_err!("separation 0 makes every class identical"));
        }
        SkeletonGraph::preset_for_joints(self.joints).map(|_| ())
    }

    pub fn graph(&self) -> Result<SkeletonGraph> {
        SkeletonGraph::preset_for_joints(self.joints)
    }
}

#[derive(Debug, Clone)]
struct JointMotion {
    axis: [f64; 3],
    amplitude: f64,
    /// Cycles per sequence.
    frequency: f64,
    phase: f64,
}

#[derive(Debug, Clone)]
struct ClassMotion {
    joints: Vec<JointMotion>,
}

fn unit<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn class_motions(spec: &SyntheticSpec) -> Vec<ClassMotion> {
    let v = spec.joints;
    let mut rng = substream(spec.seed, &[purpose::SYNTH, 0]);
    let template: Vec<JointMotion> = (0..v)
        .map(|_| JointMotion {
            axis: unit(&mut rng),
            amplitude: rng.random_range(0.2..0.5),
            frequency: rng.random_range(1.0..2.0),
            phase: rng.random_range(0.0..2.0 * PI),
        })
        .collect();
    (0..spec.num_classes)
        .map(|c| {
            let mut rng = substream(spec.seed, &[purpose::SYNTH, 1, c as u64]);
            let s = spec.separation;
            let joints = template
                .iter()
                .map(|t| {
                    let d = unit(&mut rng);
                    let axis = [
                        t.axis[0] + s * d[0],
                        t.axis[1] + s * d[1],
                        t.axis[2] + s * d[2],
                    ];
                    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
                    let axis = if n > 1e-9 {
                        [axis[0] / n, axis[1] / n, axis[2] / n]
                    } else {
                        t.axis
                    };
                    JointMotion {
                        axis,
                        amplitude: t.amplitude * (1.0 + s * rng.random_range(-0.5..0.5)).max(0.1),
                        frequency: (t.frequency + s * rng.random_range(-0.75..0.75)).max(0.25),
                        phase: t.phase + s * rng.random_range(-PI..PI),
                    }
                })
                .collect();
            ClassMotion { joints }
        })
        .collect()
}

/// Rest-pose offset of each joint from its parent.
fn rest_offsets(graph: &SkeletonGraph) -> Vec<[f64; 3]> {
    let upper = graph.is_upper();
    let mut side = vec![0.0; graph.num_joints];
    for &[l, r] in &graph.symmetry_pairs {
        side[l] = 1.0;
        side[r] = -1.0;
    }
    (0..graph.num_joints)
        .map(|v| {
            if graph.parent[v] == v {
                return [0.0; 3];
            }
            let up = if upper[v] { 1.0 } else { -1.0 };
            let d = [0.6 * side[v], up, 0.15 * ((v % 3) as f64 - 1.0)];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            [0.25 * d[0] / n, 0.25 * d[1] / n, 0.25 * d[2] / n]
        })
        .collect()
}

/// Rotation by `angle` about the unit `axis`.
fn axis_angle(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    let [x, y, z] = axis;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn apply(r: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

/// Joints ordered so every parent precedes its children.
fn topological_order(graph: &SkeletonGraph) -> Vec<usize> {
    let v = graph.num_joints;
    let depth: Vec<usize> = (0..v)
        .map(|j| {
            let (mut k, mut d) = (j, 0);
            while graph.parent[k] != k && d <= v {
                k = graph.parent[k];
                d += 1;
            }
            d
        })
        .collect();
    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by_key(|&j| (depth[j], j));
    order
}

struct Generator {
    spec: SyntheticSpec,
    graph: SkeletonGraph,
    classes: Vec<ClassMotion>,
    offsets: Vec<[f64; 3]>,
    order: Vec<usize>,
}

impl Generator {
    fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let graph = spec.graph()?;
        Ok(Self {
            classes: class_motions(spec),
            offsets: rest_offsets(&graph),
            order: topological_order(&graph),
            graph,
            spec: spec.clone(),
        })
    }

    fn sample(&self, split: Split, class: usize, index: usize) -> SkeletonSequence {
        let spec = &self.spec;
        let (m, t, v) = (spec.persons, spec.frames, spec.joints);
        let split_key = match split {
            Split::Train => 0,
            Split::Val => 1,
        };
        let mut rng = substream(
            spec.seed,
            &[purpose::SYNTH, 2, split_key, class as u64, index as u64],
        );
        let var = spec.variation;
        let noise = Normal::new(0.0, spec.noise).expect("validated noise");
        let mut data = vec![0.0; m * t * v * 3];
        for mi in 0..m {
            let gauss = |rng: &mut crate::rng::Rng| -> f64 { StandardNormal.sample(rng) };
            let amp = (1.0 + var * gauss(&mut rng)).max(0.1);
            let tempo = (1.0 + 0.5 * var * gauss(&mut rng)).max(0.2);
            let shift = var * PI * gauss(&mut rng);
            let size = (1.0 + 0.5 * var * gauss(&mut rng)).max(0.2);
            let heading = axis_angle([0.0, 1.0, 0.0], var * gauss(&mut rng));
            let root = [mi as f64 * 1.0, 0.0, 0.0];
            let motion = &self.classes[class];
            for ti in 0..t {
                let phase = 2.0 * PI * tempo * ti as f64 / t as f64;
                let mut rot = vec![[[0.0; 3]; 3]; v];
                let mut pos = vec![[0.0; 3]; v];
                for &j in &self.order {
                    let p = self.graph.parent[j];
                    if p == j {
                        rot[j] = heading;
                        pos[j] = root;
                        continue;
                    }
                    let jm = &motion.joints[j];
                    let angle = amp * jm.amplitude * (jm.frequency * phase + jm.phase + shift).sin();
                    rot[j] = matmul(&rot[p], &axis_angle(jm.axis, angle));
                    let o = self.offsets[j];
                    let d = apply(&rot[j], [o[0] * size, o[1] * size, o[2] * size]);
                    pos[j] = [pos[p][0] + d[0], pos[p][1] + d[1], pos[p][2] + d[2]];
                }
                for (j, p) in pos.iter().enumerate() {
                    let o = ((mi * t + ti) * v + j) * 3;
                    for ch in 0..3 {
                        data[o + ch] = p[ch]
                            + if spec.noise > 0.0 {
                                noise.sample(&mut rng)
                            } else {
                                0.0
                            };
                    }
                }
            }
        }
        SkeletonSequence::new([m, t, v, 3], data, class).expect("finite synthetic data")
    }

    fn split(&self, split: Split) -> Vec<SkeletonSequence> {
        let per = match split {
            Split::Train => self.spec.train_per_class,
            Split::Val => self.spec.val_per_class,
        };
        (0..self.spec.num_classes)
            .flat_map(|c| (0..per).map(move |i| (c, i)))
            .map(|(c, i)| self.sample(split, c, i))
            .collect()
    }
}

/// In-memory synthetic dataset, ordered by class then index.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: Vec<SkeletonSequence>,
    pub val: Vec<SkeletonSequence>,
    pub graph: SkeletonGraph,
}

pub fn synthesize(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let g = Generator::new(spec)?;
    Ok(SyntheticData {
        train: g.split(Split::Train),
        val: g.split(Split::Val),
        graph: g.graph.clone(),
    })
}

/// Files written by [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPaths {
    pub train_manifest: PathBuf,
    pub val_manifest: PathBuf,
    pub graph: PathBuf,
}

/// Writes SKL1 samples under `out/train` and `out/val`, the two manifests
/// and the graph.
pub fn generate_synthetic(spec: &SyntheticSpec, out: &Path) -> Result<SyntheticPaths> {
    let data = synthesize(spec)?;
    let paths = SyntheticPaths {
        train_manifest: out.join("train_manifest.json"),
        val_manifest: out.join("val_manifest.json"),
        graph: out.join("graph.json"),
    };
    for (split, name, samples, manifest_path) in [
        (Split::Train, "train", &data.train, &paths.train_manifest),
        (Split::Val, "val", &data.val, &paths.val_manifest),
    ] {
        let dir = out.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut counters = vec![0usize; spec.num_classes];
        let mut entries = Vec::with_capacity(samples.len());
        for s in samples {
            let file = format!("c{:03}_{:05}.skl", s.label, counters[s.label]);
            counters[s.label] += 1;
            save_sequence(dir.join(&file), s, spec.dtype)?;
            entries.push(ManifestEntry {
                path: format!("{name}/{file}"),
                label: s.label,
            });
        }
        let manifest = DatasetManifest {
            num_classes: spec.num_classes,
            split,
            entries,
            base_dir: None,
        };
        if split == Split::Train || !manifest.entries.is_empty() {
            manifest.save(manifest_path)?;
        }
    }
    data.graph.save(&paths.graph)?;
    Ok(paths)
}
