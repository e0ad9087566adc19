use rand::Rng;

use crate::autograd::{Mat, Tape};
use crate::backbone::{extract_patches, ClassToken, EncoderOutput, Vit, VitConfig};
use crate::error::Result;
use crate::objectives::Classifier;
use crate::params::ParamStore;

pub const ENCODER_PREFIX: &str = "vit.";
const EMBED_CHUNK: usize = 64;

/// Encoder plus identity classifier, with their weights.
#[derive(Debug, Clone)]
pub struct ReidModel {
    pub config: VitConfig,
    pub vit: Vit,
    pub classifier: Classifier,
    pub store: ParamStore,
}

impl ReidModel {
    /// `neck` adds a batch-norm layer between the class feature and the classifier.
    pub fn init<R: Rng + ?Sized>(config: VitConfig, classes: usize, neck: bool, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let vit = Vit::init(config, ENCODER_PREFIX, &mut store, rng)?;
        let classifier = Classifier::init(config.embed_dim, classes, neck, &mut store, rng);
        Ok(ReidModel {
            config,
            vit,
            classifier,
            store,
        })
    }

    pub fn from_store(config: VitConfig, store: ParamStore) -> Result<Self> {
        let vit = Vit::bind(config, ENCODER_PREFIX, &store)?;
        let classifier = Classifier::bind(&store)?;
        Ok(ReidModel {
            config,
            vit,
            classifier,
            store,
        })
    }

    /// Full original-stream pass over normalised inputs.
    pub fn forward(&self, inputs: &[Vec<f64>]) -> Result<EncoderOutput> {
        let patches = extract_patches(&self.config, inputs)?;
        let mut tape = Tape::new();
        let tokens = self
            .vit
            .patchify(&mut tape, &self.store, &patches, ClassToken::Original)?;
        self.vit.encode(&mut tape, &self.store, &tokens)
    }

    /// Retrieval features: the original-stream class token, one row per input.
    pub fn embed(&self, inputs: &[Vec<f64>]) -> Result<Mat> {
        let d = self.config.embed_dim;
        let mut out = Mat::zeros((inputs.len(), d));
        for (c, chunk) in inputs.chunks(EMBED_CHUNK).enumerate() {
            let patches = extract_patches(&self.config, chunk)?;
            let mut tape = Tape::new();
            let tokens = self
                .vit
                .patchify(&mut tape, &self.store, &patches, ClassToken::Original)?;
            let enc = self.vit.encode(&mut tape, &self.store, &tokens)?;
            let feats = tape.value(enc.class_feature);
            out.slice_mut(ndarray::s![c * EMBED_CHUNK..c * EMBED_CHUNK + chunk.len(), ..])
                .assign(feats);
        }
        Ok(out)
    }
}
