//! The assembled model: shared encoder, match head and comment decoder.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Direction, Side, Vocabulary};
use crate::encoder::{ColdItemPolicy, EncoderConfig, FeatureMap, ImageEncoder};
use crate::error::{NorError, Result};
use crate::generator::{Decoded, GeneratorParams, JointFeatureMap, JointNodes};
use crate::matcher::{rank_candidates, MatchProbability, MatcherParams, RankedList, MATCH_ROW};
use crate::numerics::{checkpoint, softmax, Graph, ParamStore, Tensor};
use crate::util::write_atomic;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Matcher shared-space size `n`.
    pub shared_size: usize,
    /// Word embedding size `e`.
    pub embed_size: usize,
    /// Decoder hidden size `q`.
    pub hidden_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            shared_size: 256,
            embed_size: 300,
            hidden_size: 512,
        }
    }
}

impl ModelConfig {
    /// A small configuration for 32×32 images that trains in seconds on a CPU.
    pub fn desk() -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                image_size: 32,
                channels_in: 3,
                conv1_channels: 8,
                conv2_channels: 8,
                pool_window: 8,
                visual_dim: 16,
            },
            shared_size: 32,
            embed_size: 16,
            hidden_size: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.shared_size == 0 || self.embed_size == 0 || self.hidden_size == 0 {
            return Err(NorError::InvalidArgument("model sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Everything besides the weights needed to rebuild a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub tops: Vec<String>,
    pub bottoms: Vec<String>,
    /// Dataset the model was trained on, used to locate item images.
    pub data_root: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct NorModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: ImageEncoder,
    pub matcher: MatcherParams,
    pub generator: GeneratorParams,
    pub vocab: Vocabulary,
    tops: Vec<String>,
    bottoms: Vec<String>,
}

/// A generated comment in text form.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratedComment {
    pub top: String,
    pub bottom: String,
    pub comment: String,
    pub score: f64,
}

/// Raw attention weights behind one generated comment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionDump {
    pub top: String,
    pub bottom: String,
    pub region_count: usize,
    /// Weights over the top's regions, driven by the bottom.
    pub top_attention: Vec<f64>,
    /// Weights over the bottom's regions, driven by the top.
    pub bottom_attention: Vec<f64>,
    pub tokens: Vec<String>,
    /// One `2L` vector per generated token; top regions come first.
    pub cross_attention: Vec<Vec<f64>>,
}

fn sorted_unique(ids: &[String]) -> Vec<String> {
    let mut v = ids.to_vec();
    v.sort();
    v.dedup();
    v
}

impl NorModel {
    pub fn new(config: ModelConfig, vocab: Vocabulary, tops: &[String], bottoms: &[String], seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = ImageEncoder::register(&mut store, config.encoder.clone(), tops, bottoms, &mut rng)?;
        let m = config.encoder.latent_dim();
        let matcher = MatcherParams::register(&mut store, m, config.shared_size, &mut rng)?;
        let generator = GeneratorParams::register(
            &mut store,
            m,
            config.encoder.region_dim(),
            vocab.len(),
            config.embed_size,
            config.hidden_size,
            &mut rng,
        )?;
        Ok(NorModel {
            config,
            store,
            encoder,
            matcher,
            generator,
            vocab,
            tops: sorted_unique(tops),
            bottoms: sorted_unique(bottoms),
        })
    }

    pub fn items(&self, side: Side) -> &[String] {
        match side {
            Side::Top => &self.tops,
            Side::Bottom => &self.bottoms,
        }
    }

    pub fn knows(&self, side: Side, id: &str) -> bool {
        self.encoder.tables.contains(side, id)
    }

    pub fn check_known(&self, side: Side, id: &str) -> Result<()> {
        self.encoder.tables.row(side, id, ColdItemPolicy::Reject).map(|_| ())
    }

    pub fn features(&self, image: &Tensor) -> Result<FeatureMap> {
        self.encoder.extract_features(&self.store, image)
    }

    pub fn match_features(&self, f_t: &FeatureMap, f_b: &FeatureMap, top: &str, bottom: &str) -> Result<MatchProbability> {
        let mut g = Graph::new();
        let ft = g.constant(f_t.regions.clone());
        let fb = g.constant(f_b.regions.clone());
        let nodes = self
            .encoder
            .encode_pair_nodes(&mut g, &self.store, ft, fb, top, bottom, ColdItemPolicy::Reject)?;
        let lp = self.matcher.log_probs(&mut g, &self.store, nodes.v_t, nodes.v_b)?;
        let p = softmax(g.value(lp).data());
        Ok(MatchProbability {
            p_match: p[MATCH_ROW],
            p_no_match: p[1 - MATCH_ROW],
        })
    }

    pub fn match_images(&self, top_image: &Tensor, bottom_image: &Tensor, top: &str, bottom: &str) -> Result<MatchProbability> {
        self.check_known(Side::Top, top)?;
        self.check_known(Side::Bottom, bottom)?;
        self.match_features(&self.features(top_image)?, &self.features(bottom_image)?, top, bottom)
    }

    /// Rank `candidates` for `query` given a feature lookup for every item.
    pub fn rank<F>(&self, query: &str, direction: Direction, candidates: &[String], mut features: F) -> Result<RankedList>
    where
        F: FnMut(Side, &str) -> Result<FeatureMap>,
    {
        let qside = direction.query_side();
        self.check_known(qside, query)?;
        let fq = features(qside, query)?;
        rank_candidates(query, candidates, direction, |cand| {
            let fc = features(qside.other(), cand)?;
            let (top, bottom) = direction.pair(query, cand);
            let (ft, fb) = match qside {
                Side::Top => (&fq, &fc),
                Side::Bottom => (&fc, &fq),
            };
            Ok(self.match_features(ft, fb, top, bottom)?.p_match)
        })
    }

    /// Beam-search decode for a pair from precomputed features.
    pub fn decode(&self, f_t: &FeatureMap, f_b: &FeatureMap, top: &str, bottom: &str, beam: usize, max_len: usize) -> Result<(Decoded, Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new();
        let ft = g.constant(f_t.regions.clone());
        let fb = g.constant(f_b.regions.clone());
        let nodes = self
            .encoder
            .encode_pair_nodes(&mut g, &self.store, ft, fb, top, bottom, ColdItemPolicy::Reject)?;
        let joint = JointFeatureMap::new(&f_t.regions, &f_b.regions)?;
        let decoded = self.generator.beam_search(
            &self.store,
            g.value(nodes.v_t),
            g.value(nodes.v_b),
            &joint,
            beam,
            max_len,
        )?;
        Ok((
            decoded,
            g.value(nodes.top_weights).data().to_vec(),
            g.value(nodes.bottom_weights).data().to_vec(),
        ))
    }

    pub fn generate(&self, f_t: &FeatureMap, f_b: &FeatureMap, top: &str, bottom: &str, beam: usize, max_len: usize) -> Result<GeneratedComment> {
        let (decoded, _, _) = self.decode(f_t, f_b, top, bottom, beam, max_len)?;
        Ok(GeneratedComment {
            top: top.to_owned(),
            bottom: bottom.to_owned(),
            comment: self.vocab.decode(&decoded.tokens)?.join(" "),
            score: decoded.score,
        })
    }

    pub fn attention(&self, f_t: &FeatureMap, f_b: &FeatureMap, top: &str, bottom: &str, beam: usize, max_len: usize) -> Result<AttentionDump> {
        let (decoded, top_attention, bottom_attention) = self.decode(f_t, f_b, top, bottom, beam, max_len)?;
        let tokens = decoded
            .tokens
            .iter()
            .map(|&t| self.vocab.token(t).map(str::to_owned))
            .collect::<Result<Vec<_>>>()?;
        Ok(AttentionDump {
            top: top.to_owned(),
            bottom: bottom.to_owned(),
            region_count: f_t.region_count(),
            top_attention,
            bottom_attention,
            tokens,
            cross_attention: decoded.attention,
        })
    }

    pub fn meta(&self, data_root: Option<&Path>) -> ModelMeta {
        ModelMeta {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            tops: self.tops.clone(),
            bottoms: self.bottoms.clone(),
            data_root: data_root.map(Path::to_path_buf),
        }
    }

    /// Sidecar metadata path for a checkpoint: same stem, `.json` extension.
    pub fn meta_path(checkpoint: &Path) -> PathBuf {
        checkpoint.with_extension("json")
    }

    /// Write the weights to `path` and the metadata next to it.
    pub fn save(&self, path: &Path, data_root: Option<&Path>) -> Result<()> {
        let meta = serde_json::to_vec_pretty(&self.meta(data_root))?;
        write_atomic(&Self::meta_path(path), &meta)?;
        checkpoint::save(&self.store, path)
    }

    pub fn load(path: &Path) -> Result<(Self, ModelMeta)> {
        let meta_path = Self::meta_path(path);
        let bytes = std::fs::read(&meta_path).map_err(|e| NorError::io(&meta_path, e))?;
        let meta: ModelMeta = serde_json::from_slice(&bytes)?;
        let mut model = NorModel::new(meta.config.clone(), meta.vocab.clone(), &meta.tops, &meta.bottoms, 0)?;
        checkpoint::load_into(&mut model.store, path)?;
        Ok((model, meta))
    }
}

/// Feature extraction with a cache keyed by item, for repeated scoring.
pub struct FeatureCache<'a> {
    model: &'a NorModel,
    images: &'a crate::data::ImageStore,
    cache: std::collections::HashMap<(Side, String), FeatureMap>,
}

impl<'a> FeatureCache<'a> {
    pub fn new(model: &'a NorModel, images: &'a crate::data::ImageStore) -> Self {
        FeatureCache {
            model,
            images,
            cache: Default::default(),
        }
    }

    pub fn get(&mut self, side: Side, id: &str) -> Result<FeatureMap> {
        if let Some(f) = self.cache.get(&(side, id.to_owned())) {
            return Ok(f.clone());
        }
        let f = self.model.features(self.images.get(side, id)?)?;
        self.cache.insert((side, id.to_owned()), f.clone());
        Ok(f)
    }
}

/// Graph-level helper used in training: joint features of a pair.
pub fn joint_nodes(g: &mut Graph, f_t: crate::numerics::Var, f_b: crate::numerics::Var) -> Result<JointNodes> {
    JointNodes::join(g, f_t, f_b)
}
