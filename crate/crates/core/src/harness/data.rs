use std::collections::BTreeSet;

use crate::datapipe::synth::{identity_name, SynthSample};
use crate::datapipe::{eval_input, Manifest, SplitSpec};
use crate::error::Result;
use crate::raster::ColorImage;

/// Decoded images of one split, resized once to the model's input size.
#[derive(Debug, Clone, Default)]
pub struct ImageSet {
    pub images: Vec<ColorImage>,
    pub identities: Vec<String>,
    /// Where each image came from (file path or synthetic tag).
    pub sources: Vec<String>,
}

impl ImageSet {
    /// Loads every manifest record whose identity is in `keep`.
    pub fn load(manifest: &Manifest, keep: &[String], height: usize, width: usize) -> Result<Self> {
        let keep: BTreeSet<&str> = keep.iter().map(String::as_str).collect();
        let mut set = ImageSet::default();
        for r in manifest.records.iter().filter(|r| keep.contains(r.identity.as_str())) {
            let img = ColorImage::load(&r.path)?;
            set.push(
                img.resize(height, width),
                r.identity.clone(),
                r.path.display().to_string(),
            );
        }
        Ok(set)
    }

    /// Train and test sets for `split`.
    pub fn load_split(manifest: &Manifest, split: &SplitSpec, height: usize, width: usize) -> Result<(Self, Self)> {
        split.check_against(manifest)?;
        Ok((
            Self::load(manifest, &split.train, height, width)?,
            Self::load(manifest, &split.test, height, width)?,
        ))
    }

    pub fn from_samples(samples: &[SynthSample], height: usize, width: usize) -> Self {
        let mut set = ImageSet::default();
        for (i, s) in samples.iter().enumerate() {
            let img = if s.image.height() == height && s.image.width() == width {
                s.image.clone()
            } else {
                s.image.resize(height, width)
            };
            set.push(img, identity_name(s.identity), format!("synthetic:{i}"));
        }
        set
    }

    fn push(&mut self, img: ColorImage, identity: String, source: String) {
        self.images.push(img);
        self.identities.push(identity);
        self.sources.push(source);
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Images whose identity is in `ids`.
    pub fn subset(&self, ids: &[String]) -> Self {
        let keep: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        let mut out = ImageSet::default();
        for i in 0..self.len() {
            if keep.contains(self.identities[i].as_str()) {
                out.push(
                    self.images[i].clone(),
                    self.identities[i].clone(),
                    self.sources[i].clone(),
                );
            }
        }
        out
    }

    /// Dense labels in sorted-identity order, plus that order.
    pub fn labels(&self) -> (Vec<usize>, Vec<String>) {
        let names: Vec<String> = self
            .identities
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let labels = self
            .identities
            .iter()
            .map(|id| names.binary_search(id).expect("identity listed"))
            .collect();
        (labels, names)
    }

    /// `(item, identity)` pairs for the PK sampler.
    pub fn items(&self) -> Vec<(usize, String)> {
        self.identities.iter().cloned().enumerate().collect()
    }

    pub fn eval_inputs(&self, height: usize, width: usize) -> Vec<Vec<f64>> {
        self.images.iter().map(|img| eval_input(img, height, width)).collect()
    }
}
