use std::path::Path;

use rayon::prelude::*;

use crate::container::load_sequence;
use crate::error::{shape_err, Result};
use crate::longtail::{DatasetManifest, ManifestEntry, Split};
use crate::skeleton::SkeletonSequence;

/// A manifest with its samples held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<SkeletonSequence>,
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(path)?;
        let samples = manifest
            .entries
            .par_iter()
            .map(|e| {
                let s = load_sequence(manifest.resolve(e))?;
                if s.label != e.label {
                    return Err(shape_err!(
                        "{}: file label {} but manifest says {}",
                        e.path,
                        s.label,
                        e.label
                    ));
                }
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(manifest, samples)
    }

    pub fn new(manifest: DatasetManifest, samples: Vec<SkeletonSequence>) -> Result<Self> {
        manifest.validate()?;
        if manifest.entries.len() != samples.len() {
            return Err(shape_err!(
                "{} manifest entries but {} samples",
                manifest.entries.len(),
                samples.len()
            ));
        }
        let shape = samples[0].shape();
        if let Some(s) = samples.iter().find(|s| s.shape() != shape) {
            return Err(shape_err!(
                "samples differ in shape: {:?} vs {:?}",
                shape,
                s.shape()
            ));
        }
        Ok(Self { manifest, samples })
    }

    /// Wraps in-memory samples; entry paths are placeholders.
    pub fn from_samples(
        num_classes: usize,
        split: Split,
        samples: Vec<SkeletonSequence>,
    ) -> Result<Self> {
        let entries = samples
            .iter()
            .enumerate()
            .map(|(i, s)| ManifestEntry {
                path: format!("mem/{i:06}"),
                label: s.label,
            })
            .collect();
        let manifest = DatasetManifest {
            num_classes,
            split,
            entries,
            base_dir: None,
        };
        Self::new(manifest, samples)
    }

    /// Keeps only the samples a (truncated) manifest lists, matched by path.
    pub fn subset(&self, manifest: &DatasetManifest) -> Result<Self> {
        let index: std::collections::HashMap<&str, usize> = self
            .manifest
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.path.as_str(), i))
            .collect();
        let samples = manifest
            .entries
            .iter()
            .map(|e| {
                index
                    .get(e.path.as_str())
                    .map(|&i| self.samples[i].clone())
                    .ok_or_else(|| shape_err!("{} is not part of the dataset", e.path))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(manifest.clone(), samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn shape(&self) -> [usize; 4] {
        self.samples[0].shape()
    }
}
