//! Joint training of the match head and the comment decoder.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    split_dataset, tokenize, CandidatePool, Dataset, Direction, ImageStore, OutfitRecord, Side, Split, SplitName,
    SplitSizes, Vocabulary,
};
use crate::encoder::ColdItemPolicy;
use crate::error::{NorError, Result};
use crate::evaluate::{candidate_pools, rank_pool, PoolQueries};
use crate::generator::JointNodes;
use crate::matcher::MATCH_ROW;
use crate::metrics::RankingReport;
use crate::model::{ModelConfig, NorModel};
use crate::numerics::{clip_gradients, AdamState, Graph, ParamStore, Var, GRAD_CLIP};
use crate::util::write_atomic;

/// Attempts before negative sampling gives up.
pub const NEGATIVE_RETRIES: usize = 100;

/// Every setting of a training run. Each field is a `key = value` line in a
/// config file and a command-line flag of the same name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub model: ModelConfig,
    pub lambda_reg: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub validation_size: usize,
    pub test_size: usize,
    /// Sampled negatives per query in the frozen evaluation pools.
    pub candidates: usize,
    pub min_freq: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            model: ModelConfig::default(),
            lambda_reg: 1e-4,
            batch_size: 64,
            max_epochs: 10,
            seed: 0,
            learning_rate: 1e-3,
            validation_size: SplitSizes::PAPER.validation,
            test_size: SplitSizes::PAPER.test,
            candidates: 100,
            min_freq: 1,
        }
    }
}

/// Keys accepted by [`TrainingConfig::set`], in file order.
pub const CONFIG_KEYS: &[&str] = &[
    "preset",
    "lambda_reg",
    "batch_size",
    "max_epochs",
    "seed",
    "learning_rate",
    "validation_size",
    "test_size",
    "candidates",
    "min_freq",
    "image_size",
    "pool_window",
    "conv1_channels",
    "conv2_channels",
    "visual_dim",
    "shared_size",
    "embed_size",
    "hidden_size",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| NorError::InvalidArgument(format!("bad value `{value}` for `{key}`")))
}

impl TrainingConfig {
    /// Small model and splits for the synthetic dataset.
    pub fn desk() -> Self {
        TrainingConfig {
            model: ModelConfig::desk(),
            batch_size: 8,
            max_epochs: 30,
            validation_size: 2,
            test_size: 2,
            candidates: 5,
            ..Default::default()
        }
    }

    /// Apply one setting. `preset` (`paper` or `desk`) replaces every field,
    /// so it should come first.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "preset" => {
                let seed = self.seed;
                *self = match value {
                    "paper" => TrainingConfig::default(),
                    "desk" => TrainingConfig::desk(),
                    other => return Err(NorError::InvalidArgument(format!("unknown preset `{other}`"))),
                };
                self.seed = seed;
            }
            "lambda_reg" => self.lambda_reg = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "validation_size" => self.validation_size = parse(key, value)?,
            "test_size" => self.test_size = parse(key, value)?,
            "candidates" => self.candidates = parse(key, value)?,
            "min_freq" => self.min_freq = parse(key, value)?,
            "image_size" => self.model.encoder.image_size = parse(key, value)?,
            "pool_window" => self.model.encoder.pool_window = parse(key, value)?,
            "conv1_channels" => self.model.encoder.conv1_channels = parse(key, value)?,
            "conv2_channels" => self.model.encoder.conv2_channels = parse(key, value)?,
            "visual_dim" => self.model.encoder.visual_dim = parse(key, value)?,
            "shared_size" => self.model.shared_size = parse(key, value)?,
            "embed_size" => self.model.embed_size = parse(key, value)?,
            "hidden_size" => self.model.hidden_size = parse(key, value)?,
            other => return Err(NorError::InvalidArgument(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = TrainingConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| NorError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected `key = value`".into(),
            })?;
            cfg.set(k.trim(), v).map_err(|e| NorError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NorError::io(path, e))?;
        Self::from_text(&text, path)
    }

    pub fn to_text(&self) -> String {
        let e = &self.model.encoder;
        let pairs: [(&str, String); 17] = [
            ("lambda_reg", self.lambda_reg.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("validation_size", self.validation_size.to_string()),
            ("test_size", self.test_size.to_string()),
            ("candidates", self.candidates.to_string()),
            ("min_freq", self.min_freq.to_string()),
            ("image_size", e.image_size.to_string()),
            ("pool_window", e.pool_window.to_string()),
            ("conv1_channels", e.conv1_channels.to_string()),
            ("conv2_channels", e.conv2_channels.to_string()),
            ("visual_dim", e.visual_dim.to_string()),
            ("shared_size", self.model.shared_size.to_string()),
            ("embed_size", self.model.embed_size.to_string()),
            ("hidden_size", self.model.hidden_size.to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lambda_reg >= 0.0) {
            return Err(NorError::InvalidArgument("lambda_reg must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(NorError::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(NorError::InvalidArgument("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn split_sizes(&self) -> SplitSizes {
        SplitSizes {
            validation: self.validation_size,
            test: self.test_size,
        }
    }
}

/// Replace the top or the bottom (even odds) with a uniform draw, rejecting
/// known positives.
pub fn sample_negative<R: Rng>(
    positive: (&str, &str),
    tops: &[String],
    bottoms: &[String],
    known: &HashSet<(String, String)>,
    rng: &mut R,
) -> Result<(String, String)> {
    if tops.is_empty() || bottoms.is_empty() {
        return Err(NorError::InvalidArgument("negative sampling needs non-empty pools".into()));
    }
    for _ in 0..NEGATIVE_RETRIES {
        let pair = if rng.gen_bool(0.5) {
            (tops[rng.gen_range(0..tops.len())].clone(), positive.1.to_owned())
        } else {
            (positive.0.to_owned(), bottoms[rng.gen_range(0..bottoms.len())].clone())
        };
        if !known.contains(&pair) {
            return Ok(pair);
        }
    }
    Err(NorError::SamplingExhausted(NEGATIVE_RETRIES))
}

/// `Σ −log p(r)` where `p(r)` is the match probability for positives and the
/// no-match probability for negatives. `log_probs` nodes hold `[log p(match), log p(no match)]`.
pub fn matching_loss(g: &mut Graph, examples: &[(Var, bool)]) -> Result<Var> {
    let mut terms = Vec::with_capacity(examples.len());
    for &(lp, positive) in examples {
        let row = if positive { MATCH_ROW } else { 1 - MATCH_ROW };
        terms.push(g.pick(lp, row)?);
    }
    let sum = g.add_all(&terms)?;
    Ok(g.affine(sum, -1.0, 0.0))
}

/// Sum of per-positive comment NLLs.
pub fn generation_loss(g: &mut Graph, nlls: &[Var]) -> Result<Var> {
    g.add_all(nlls)
}

/// `Σ ‖θ‖²` over the regularized parameters.
pub fn l2_regularization(g: &mut Graph, store: &ParamStore) -> Result<Var> {
    let terms: Vec<Var> = store
        .ids()
        .filter(|&id| store.get(id).regularized)
        .map(|id| {
            let p = g.param(store, id);
            g.sum_sq(p)
        })
        .collect();
    g.add_all(&terms)
}

/// `L_mat + L_gen + λ·L_reg`.
pub fn total_loss(g: &mut Graph, l_mat: Var, l_gen: Var, l_reg: Var, lambda_reg: f64) -> Result<Var> {
    let scaled = g.affine(l_reg, lambda_reg, 0.0);
    let a = g.add(l_mat, l_gen)?;
    g.add(a, scaled)
}

/// One positive pair with its sampled comment and negative.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub top: String,
    pub bottom: String,
    /// BOS/EOS-wrapped token ids, absent when the outfit has no comments.
    pub comment: Option<Vec<usize>>,
    pub negative: (String, String),
}

/// Losses of one batch, before weighting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchLosses {
    pub matching: f64,
    pub generation: f64,
    pub regularization: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(rename = "L_mat")]
    pub l_mat: f64,
    #[serde(rename = "L_gen")]
    pub l_gen: f64,
    #[serde(rename = "L_reg")]
    pub l_reg: f64,
    pub val_map: f64,
    pub val_mrr: f64,
    pub val_auc: f64,
    pub seconds: f64,
}

/// Training state: model, optimizer, data and sampling RNG.
pub struct Trainer {
    pub config: TrainingConfig,
    pub model: NorModel,
    pub images: ImageStore,
    pub split: Split,
    adam: AdamState,
    rng: ChaCha8Rng,
    train: Vec<OutfitRecord>,
    comments: Vec<Vec<Vec<usize>>>,
    tops: Vec<String>,
    bottoms: Vec<String>,
    known: HashSet<(String, String)>,
    train_pool: CandidatePool,
    validation: Option<CandidatePool>,
    test: Option<CandidatePool>,
    epoch: usize,
}

fn side_items(records: &[OutfitRecord], side: Side) -> Vec<String> {
    let set: BTreeSet<&String> = records
        .iter()
        .map(|r| if side == Side::Top { &r.top } else { &r.bottom })
        .collect();
    set.into_iter().cloned().collect()
}

impl Trainer {
    pub fn new(dataset: &Dataset, config: TrainingConfig) -> Result<Self> {
        let images = ImageStore::load_catalog(&dataset.catalog, config.model.encoder.image_size)?;
        Self::with_images(dataset, config, images)
    }

    pub fn with_images(dataset: &Dataset, config: TrainingConfig, images: ImageStore) -> Result<Self> {
        config.validate()?;
        let split = split_dataset(&dataset.records, config.split_sizes(), config.seed)?;
        if split.train.is_empty() {
            return Err(NorError::InvalidArgument("no training outfits left after the split".into()));
        }
        let tokenized = Dataset::tokenized_comments(&split.train);
        let vocab = Vocabulary::build(tokenized.iter().map(Vec::as_slice), config.min_freq);
        let all_tops: Vec<String> = dataset.catalog.tops.keys().cloned().collect();
        let all_bottoms: Vec<String> = dataset.catalog.bottoms.keys().cloned().collect();
        let model = NorModel::new(config.model.clone(), vocab, &all_tops, &all_bottoms, config.seed)?;
        let comments = split
            .train
            .iter()
            .map(|r| {
                r.comments
                    .iter()
                    .map(|c| model.vocab.encode_comment(&tokenize(c)))
                    .collect()
            })
            .collect();
        let pool_seed = config.seed.wrapping_add(2);
        let pools = |queries| candidate_pools(&dataset.records, &dataset.catalog, queries, pool_seed, config.candidates);
        let train_pool = pools(PoolQueries::Records(&split.train))?;
        let validation = if config.validation_size == 0 {
            // nothing held out: run the protocol on the training pairs
            None
        } else {
            Some(pools(PoolQueries::HeldOut(&split.validation))?)
        };
        let test = if config.test_size == 0 {
            None
        } else {
            Some(pools(PoolQueries::HeldOut(&split.test))?)
        };
        let known = dataset
            .records
            .iter()
            .map(|r| (r.top.clone(), r.bottom.clone()))
            .collect();
        let adam = AdamState::new(&model.store).with_learning_rate(config.learning_rate);
        Ok(Trainer {
            tops: side_items(&split.train, Side::Top),
            bottoms: side_items(&split.train, Side::Bottom),
            train: split.train.clone(),
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1)),
            config,
            model,
            images,
            split,
            adam,
            comments,
            known,
            train_pool,
            validation,
            test,
            epoch: 0,
        })
    }

    pub fn train_records(&self) -> &[OutfitRecord] {
        &self.train
    }

    /// Pools used for model selection: the validation split, or the
    /// training pairs when nothing is held out.
    pub fn validation_pool(&self) -> &CandidatePool {
        self.validation.as_ref().unwrap_or(&self.train_pool)
    }

    /// Frozen pools whose queries are the training items.
    pub fn train_pool(&self) -> &CandidatePool {
        &self.train_pool
    }

    /// Frozen test pools for both directions, when a test split exists.
    pub fn test_pool(&self) -> Option<&CandidatePool> {
        self.test.as_ref()
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Shuffle the training pairs, sample comments and negatives, and cut
    /// into batches.
    pub fn sample_epoch(&mut self) -> Result<Vec<Vec<TrainingExample>>> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut examples = Vec::with_capacity(order.len());
        for i in order {
            let r = &self.train[i];
            let comment = if self.comments[i].is_empty() {
                log::warn!("outfit {} has no comments; it trains the match head only", r.outfit_id);
                None
            } else {
                Some(self.comments[i][self.rng.gen_range(0..self.comments[i].len())].clone())
            };
            let negative = sample_negative((&r.top, &r.bottom), &self.tops, &self.bottoms, &self.known, &mut self.rng)?;
            examples.push(TrainingExample {
                top: r.top.clone(),
                bottom: r.bottom.clone(),
                comment,
                negative,
            });
        }
        Ok(examples.chunks(self.config.batch_size).map(<[_]>::to_vec).collect())
    }

    /// Forward pass of a batch. Returns the total-loss node and its parts.
    pub fn batch_graph(&self, g: &mut Graph, batch: &[TrainingExample]) -> Result<(Var, BatchLosses)> {
        let model = &self.model;
        let store = &model.store;
        // one feature computation per distinct image in the batch
        let mut feats: HashMap<(Side, String), Var> = HashMap::new();
        let mut features = |g: &mut Graph, side: Side, id: &str| -> Result<Var> {
            if let Some(&v) = feats.get(&(side, id.to_owned())) {
                return Ok(v);
            }
            let img = g.constant(self.images.get(side, id)?.clone());
            let f = model.encoder.features(g, store, img)?;
            feats.insert((side, id.to_owned()), f);
            Ok(f)
        };
        let mut matches = Vec::with_capacity(2 * batch.len());
        let mut nlls = Vec::new();
        for ex in batch {
            let ft = features(g, Side::Top, &ex.top)?;
            let fb = features(g, Side::Bottom, &ex.bottom)?;
            let pos = model
                .encoder
                .encode_pair_nodes(g, store, ft, fb, &ex.top, &ex.bottom, ColdItemPolicy::Reject)?;
            matches.push((model.matcher.log_probs(g, store, pos.v_t, pos.v_b)?, true));
            if let Some(comment) = &ex.comment {
                let joint = JointNodes::join(g, ft, fb)?;
                nlls.push(model.generator.teacher_forced_nll(g, store, pos.v_t, pos.v_b, joint, comment)?);
            }
            let (nt, nb) = (&ex.negative.0, &ex.negative.1);
            let ft = features(g, Side::Top, nt)?;
            let fb = features(g, Side::Bottom, nb)?;
            let neg = model
                .encoder
                .encode_pair_nodes(g, store, ft, fb, nt, nb, ColdItemPolicy::Reject)?;
            matches.push((model.matcher.log_probs(g, store, neg.v_t, neg.v_b)?, false));
        }
        let l_mat = matching_loss(g, &matches)?;
        let l_gen = generation_loss(g, &nlls)?;
        let l_reg = l2_regularization(g, store)?;
        let total = total_loss(g, l_mat, l_gen, l_reg, self.config.lambda_reg)?;
        let losses = BatchLosses {
            matching: g.value(l_mat).item(),
            generation: g.value(l_gen).item(),
            regularization: g.value(l_reg).item(),
            total: g.value(total).item(),
        };
        Ok((total, losses))
    }

    /// One optimizer step on `batch`.
    pub fn step(&mut self, batch: &[TrainingExample], batch_index: usize) -> Result<BatchLosses> {
        let mut g = Graph::new();
        let (total, losses) = self.batch_graph(&mut g, batch)?;
        if !losses.total.is_finite() {
            return Err(NorError::NonFiniteLoss {
                epoch: self.epoch + 1,
                batch: batch_index,
                value: losses.total,
            });
        }
        g.backward(total, &mut self.model.store)?;
        clip_gradients(&mut self.model.store, GRAD_CLIP.0, GRAD_CLIP.1);
        self.adam.step(&mut self.model.store);
        Ok(losses)
    }

    /// Train for one epoch and validate. `seconds` covers both.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let start = Instant::now();
        let batches = self.sample_epoch()?;
        let (mut l_mat, mut l_gen) = (0.0, 0.0);
        for (i, batch) in batches.iter().enumerate() {
            let losses = self.step(batch, i)?;
            l_mat += losses.matching;
            l_gen += losses.generation;
        }
        self.epoch += 1;
        let val = self.validate()?;
        Ok(EpochLog {
            epoch: self.epoch,
            l_mat,
            l_gen,
            l_reg: self.model.store.l2_penalty(),
            val_map: val.map,
            val_mrr: val.mrr,
            val_auc: val.auc,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Bottom-recommendation metrics on the validation pools.
    pub fn validate(&self) -> Result<RankingReport> {
        rank_pool(&self.model, &self.images, self.validation_pool(), Direction::TopToBottom).map(|(r, _)| r)
    }
}

/// Files produced by [`train`].
#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
}

pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const LOG_FILE: &str = "train_log.jsonl";

/// Train for `max_epochs`, keeping the checkpoint with the best validation
/// AUC in `out_dir`. Frozen evaluation pools are written there too.
pub fn train(dataset: &Dataset, config: TrainingConfig, out_dir: &Path) -> Result<TrainingOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| NorError::io(out_dir, e))?;
    let mut trainer = Trainer::new(dataset, config)?;
    trainer
        .train_pool
        .save(&out_dir.join(CandidatePool::file_name(SplitName::Train)))?;
    if let Some(v) = &trainer.validation {
        v.save(&out_dir.join(CandidatePool::file_name(SplitName::Validation)))?;
    }
    if let Some(test) = &trainer.test {
        test.save(&out_dir.join(CandidatePool::file_name(SplitName::Test)))?;
    }
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let log_path = out_dir.join(LOG_FILE);
    let mut log = Vec::new();
    let mut lines = String::new();
    let (mut best_epoch, mut best_auc) = (0, f64::NEG_INFINITY);
    for _ in 0..trainer.config.max_epochs {
        let entry = trainer.run_epoch()?;
        log::info!(
            "epoch {} L_mat {:.4} L_gen {:.4} val_auc {:.4}",
            entry.epoch,
            entry.l_mat,
            entry.l_gen,
            entry.val_auc
        );
        if entry.val_auc > best_auc {
            best_auc = entry.val_auc;
            best_epoch = entry.epoch;
            trainer.model.save(&checkpoint, Some(&dataset.root))?;
        }
        lines.push_str(&serde_json::to_string(&entry)?);
        lines.push('\n');
        write_atomic(&log_path, lines.as_bytes())?;
        log.push(entry);
    }
    if log.is_empty() {
        trainer.model.save(&checkpoint, Some(&dataset.root))?;
        write_atomic(&log_path, b"")?;
    }
    Ok(TrainingOutcome {
        checkpoint,
        log_path,
        log,
        best_epoch,
        best_val_auc: best_auc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;
    use crate::numerics::Tensor;

    fn ids(p: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{p}{i}")).collect()
    }

    #[test]
    fn negatives_avoid_positives_and_keep_one_side() {
        let (tops, bottoms) = (ids("t", 3), ids("b", 3));
        let known: HashSet<(String, String)> = [("t0", "b0"), ("t1", "b0"), ("t0", "b2")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut seen = Vec::new();
        for _ in 0..200 {
            let (t, b) = sample_negative(("t0", "b0"), &tops, &bottoms, &known, &mut rng).unwrap();
            assert!(!known.contains(&(t.clone(), b.clone())));
            assert!(t == "t0" || b == "b0");
            seen.push((t, b));
        }
        let mut again = ChaCha8Rng::seed_from_u64(4);
        let replay: Vec<_> = (0..200)
            .map(|_| sample_negative(("t0", "b0"), &tops, &bottoms, &known, &mut again).unwrap())
            .collect();
        assert_eq!(seen, replay);
    }

    #[test]
    fn dense_positives_exhaust_the_budget() {
        let (tops, bottoms) = (ids("t", 2), ids("b", 2));
        let known: HashSet<(String, String)> = tops
            .iter()
            .flat_map(|t| bottoms.iter().map(move |b| (t.clone(), b.clone())))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_negative(("t0", "b0"), &tops, &bottoms, &known, &mut rng),
            Err(NorError::SamplingExhausted(NEGATIVE_RETRIES))
        ));
        assert!(sample_negative(("t0", "b0"), &[], &bottoms, &known, &mut rng).is_err());
    }

    #[test]
    fn loss_parts() {
        let mut g = Graph::new();
        let even = g.constant(Tensor::vector(vec![0.5f64.ln(), 0.5f64.ln()]));
        let l = matching_loss(&mut g, &[(even, true)]).unwrap();
        assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);

        let sure = g.constant(Tensor::vector(vec![(1.0f64 - 1e-12).ln(), 1e-12f64.ln()]));
        let l = matching_loss(&mut g, &[(sure, true)]).unwrap();
        assert!(g.value(l).item() >= 0.0 && g.value(l).item() < 1e-11);
        let l = matching_loss(&mut g, &[(sure, false)]).unwrap();
        assert!((g.value(l).item() + 1e-12f64.ln()).abs() < 1e-9);

        let none = generation_loss(&mut g, &[]).unwrap();
        assert_eq!(g.value(none).item(), 0.0);
        let n = g.constant(Tensor::scalar(5.0 * 10f64.ln()));
        let one = generation_loss(&mut g, &[n]).unwrap();
        let two = generation_loss(&mut g, &[n, n]).unwrap();
        assert!((g.value(one).item() - 11.5129).abs() < 1e-4);
        assert_eq!(g.value(two).item(), 2.0 * g.value(one).item());

        let (a, b, r) = (g.constant(Tensor::scalar(1.25)), g.constant(Tensor::scalar(2.5)), g.constant(Tensor::scalar(7.0)));
        let t = total_loss(&mut g, a, b, r, 0.0).unwrap();
        assert_eq!(g.value(t).item(), 3.75);
        let t = total_loss(&mut g, a, b, r, 1e-4).unwrap();
        assert!((g.value(t).item() - (3.75 + 7e-4)).abs() < 1e-15);
    }

    #[test]
    fn regularization_skips_biases() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::vector(vec![1.0, -2.0]), true).unwrap();
        store.add("b", Tensor::vector(vec![3.0]), false).unwrap();
        let mut g = Graph::new();
        let r = l2_regularization(&mut g, &store).unwrap();
        assert_eq!(g.value(r).item(), 5.0);
        for p in store.iter_mut() {
            p.value.fill(0.0);
        }
        let mut g = Graph::new();
        let r = l2_regularization(&mut g, &store).unwrap();
        assert_eq!(g.value(r).item(), 0.0);
    }

    #[test]
    fn config_text_round_trip() {
        let mut cfg = TrainingConfig::desk();
        cfg.seed = 17;
        cfg.learning_rate = 0.005;
        let text = format!("# comment\npreset = desk\n\n{}", cfg.to_text());
        let back = TrainingConfig::from_text(&text, Path::new("x.cfg")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(TrainingConfig::default().lambda_reg, 1e-4);
        assert_eq!(TrainingConfig::default().batch_size, 64);
        let err = TrainingConfig::from_text("batch_size = 4\nbogus = 1\n", Path::new("x.cfg")).unwrap_err();
        assert!(err.to_string().starts_with("x.cfg:2:"), "{err}");
        assert!(TrainingConfig::from_text("batch_size 4", Path::new("x.cfg")).is_err());
        for key in CONFIG_KEYS.iter().filter(|k| **k != "preset") {
            assert!(cfg.to_text().contains(&format!("{key} = ")), "{key}");
        }
    }

    fn desk_trainer(root: &Path) -> Trainer {
        let ds = synthetic::generate(8, 32).write(root).unwrap();
        let cfg = TrainingConfig {
            max_epochs: 2,
            validation_size: 1,
            test_size: 1,
            ..TrainingConfig::desk()
        };
        Trainer::new(&ds, cfg).unwrap()
    }

    #[test]
    fn batches_only_touch_training_items() {
        let dir = tempfile::tempdir().unwrap();
        let mut tr = desk_trainer(dir.path());
        let train_tops: BTreeSet<String> = side_items(tr.train_records(), Side::Top).into_iter().collect();
        let train_bottoms: BTreeSet<String> = side_items(tr.train_records(), Side::Bottom).into_iter().collect();
        for batch in tr.sample_epoch().unwrap() {
            for ex in batch {
                assert!(train_tops.contains(&ex.top) && train_tops.contains(&ex.negative.0));
                assert!(train_bottoms.contains(&ex.bottom) && train_bottoms.contains(&ex.negative.1));
                assert!(ex.comment.is_some());
            }
        }
    }

    #[test]
    fn first_epoch_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = desk_trainer(&dir.path().join("a"));
        let mut b = desk_trainer(&dir.path().join("b"));
        let (la, lb) = (a.run_epoch().unwrap(), b.run_epoch().unwrap());
        assert_eq!((la.l_mat, la.l_gen, la.l_reg, la.val_auc), (lb.l_mat, lb.l_gen, lb.l_reg, lb.val_auc));
        assert!(la.l_mat > 0.0 && la.l_gen > 0.0);
    }

    #[test]
    fn train_writes_checkpoint_log_and_pools() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic::generate(8, 32).write(&dir.path().join("data")).unwrap();
        let cfg = TrainingConfig {
            max_epochs: 2,
            validation_size: 1,
            test_size: 1,
            ..TrainingConfig::desk()
        };
        let out = dir.path().join("run");
        let outcome = train(&ds, cfg, &out).unwrap();
        assert_eq!(outcome.log.len(), 2);
        assert!(outcome.checkpoint.exists() && NorModel::meta_path(&outcome.checkpoint).exists());
        let text = std::fs::read_to_string(&outcome.log_path).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["epoch", "L_mat", "L_gen", "L_reg", "val_map", "val_mrr", "val_auc", "seconds"] {
            assert!(first.get(key).is_some(), "{key}");
        }
        assert!(out.join("candidates_validation.jsonl").exists());
        assert!(out.join("candidates_train.jsonl").exists());
        assert!(out.join("candidates_test.jsonl").exists());
    }
}
