//! Shared top/bottom image encoder.
//!
//! Both garments go through the same two convolution layers. The two feature
//! maps are concatenated along channels, max-pooled and flattened into `L`
//! region vectors of size `D`. Mutual attention then uses the global average
//! of one image to weight the regions of the other; the attended vector is
//! projected to `m_v` dimensions and concatenated with a per-item latent
//! factor row.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Side;
use crate::error::{NorError, Result};
use crate::numerics::{xavier_init_with, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub channels_in: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub pool_window: usize,
    pub visual_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            image_size: 224,
            channels_in: 3,
            conv1_channels: 32,
            conv2_channels: 32,
            pool_window: 16,
            visual_dim: 300,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pool_window == 0 || !self.image_size.is_multiple_of(self.pool_window) {
            return Err(NorError::InvalidArgument(format!(
                "image_size {} is not divisible by pool_window {}",
                self.image_size, self.pool_window
            )));
        }
        if [self.channels_in, self.conv1_channels, self.conv2_channels, self.visual_dim].contains(&0) {
            return Err(NorError::InvalidArgument("encoder sizes must be positive".into()));
        }
        Ok(())
    }

    /// Pooled grid side, `H = W = image_size / pool_window`.
    pub fn grid(&self) -> usize {
        self.image_size / self.pool_window
    }

    /// Number of regions `L`.
    pub fn region_count(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Region feature size `D = D¹ + D²`.
    pub fn region_dim(&self) -> usize {
        self.conv1_channels + self.conv2_channels
    }

    /// Item representation size `m = 2·m_v`.
    pub fn latent_dim(&self) -> usize {
        2 * self.visual_dim
    }
}

/// `L × D` region features of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub regions: Tensor,
}

impl FeatureMap {
    pub fn region_count(&self) -> usize {
        self.regions.shape()[0]
    }

    pub fn region_dim(&self) -> usize {
        self.regions.shape()[1]
    }
}

/// `[v^f ; v^latent]`, the item representation fed to both decoders.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemRepresentation {
    pub v: Tensor,
}

impl ItemRepresentation {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

/// Attention and projection weights shared by both attention directions.
#[derive(Clone, Debug)]
pub struct MutualAttentionParams {
    pub w_a: ParamId,
    pub u_a: ParamId,
    pub v_a: ParamId,
    pub w_p: ParamId,
}

/// How to resolve ids missing from a latent-factor table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColdItemPolicy {
    Reject,
    /// Use the table's dedicated trailing "unknown" row.
    UnknownRow,
}

/// Per-item latent factors. Each table has one row per known id plus a final
/// row reserved for unknown items.
#[derive(Clone, Debug)]
pub struct LatentFactorTables {
    pub tops: ParamId,
    pub bottoms: ParamId,
    top_rows: BTreeMap<String, usize>,
    bottom_rows: BTreeMap<String, usize>,
}

impl LatentFactorTables {
    pub fn ids(&self, side: Side) -> impl Iterator<Item = &String> {
        self.rows(side).keys()
    }

    fn rows(&self, side: Side) -> &BTreeMap<String, usize> {
        match side {
            Side::Top => &self.top_rows,
            Side::Bottom => &self.bottom_rows,
        }
    }

    pub fn table(&self, side: Side) -> ParamId {
        match side {
            Side::Top => self.tops,
            Side::Bottom => self.bottoms,
        }
    }

    pub fn contains(&self, side: Side, id: &str) -> bool {
        self.rows(side).contains_key(id)
    }

    pub fn row(&self, side: Side, id: &str, policy: ColdItemPolicy) -> Result<usize> {
        let rows = self.rows(side);
        match (rows.get(id), policy) {
            (Some(&r), _) => Ok(r),
            (None, ColdItemPolicy::UnknownRow) => Ok(rows.len()),
            (None, ColdItemPolicy::Reject) => Err(NorError::UnknownId {
                table: side.table(),
                id: id.to_owned(),
            }),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ImageEncoder {
    pub config: EncoderConfig,
    pub conv1_w: ParamId,
    pub conv1_b: ParamId,
    pub conv2_w: ParamId,
    pub conv2_b: ParamId,
    pub attention: MutualAttentionParams,
    pub tables: LatentFactorTables,
}

/// Graph handles produced by encoding one (top, bottom) pair.
#[derive(Clone, Copy, Debug)]
pub struct PairNodes {
    pub v_t: Var,
    pub v_b: Var,
    /// Attention over the top's regions, driven by the bottom's global features.
    pub top_weights: Var,
    /// Attention over the bottom's regions, driven by the top's global features.
    pub bottom_weights: Var,
}

/// Value-level result of [`ImageEncoder::encode_pair`].
#[derive(Clone, Debug)]
pub struct PairEncoding {
    pub v_t: ItemRepresentation,
    pub v_b: ItemRepresentation,
    pub f_t: FeatureMap,
    pub f_b: FeatureMap,
    pub top_weights: Vec<f64>,
    pub bottom_weights: Vec<f64>,
}

impl ImageEncoder {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        config: EncoderConfig,
        top_ids: &[String],
        bottom_ids: &[String],
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (c0, c1, c2) = (config.channels_in, config.conv1_channels, config.conv2_channels);
        let d = config.region_dim();
        let mv = config.visual_dim;
        let conv1_w = store.add("encoder.conv1.weight", xavier_init_with(&[c1, c0, 3, 3], rng), true)?;
        let conv1_b = store.add("encoder.conv1.bias", Tensor::zeros(&[c1]), false)?;
        let conv2_w = store.add("encoder.conv2.weight", xavier_init_with(&[c2, c1, 3, 3], rng), true)?;
        let conv2_b = store.add("encoder.conv2.bias", Tensor::zeros(&[c2]), false)?;
        let attention = MutualAttentionParams {
            w_a: store.add("encoder.attention.w_a", xavier_init_with(&[d, d], rng), true)?,
            u_a: store.add("encoder.attention.u_a", xavier_init_with(&[d, d], rng), true)?,
            v_a: store.add("encoder.attention.v_a", xavier_init_with(&[d], rng), true)?,
            w_p: store.add("encoder.projection.w_p", xavier_init_with(&[mv, d], rng), true)?,
        };
        let index = |ids: &[String]| -> BTreeMap<String, usize> {
            let mut sorted: Vec<&String> = ids.iter().collect();
            sorted.sort();
            sorted.dedup();
            sorted.into_iter().enumerate().map(|(i, id)| (id.clone(), i)).collect()
        };
        let top_rows = index(top_ids);
        let bottom_rows = index(bottom_ids);
        let tables = LatentFactorTables {
            tops: store.add(
                "encoder.latent.tops",
                xavier_init_with(&[top_rows.len() + 1, mv], rng),
                true,
            )?,
            bottoms: store.add(
                "encoder.latent.bottoms",
                xavier_init_with(&[bottom_rows.len() + 1, mv], rng),
                true,
            )?,
            top_rows,
            bottom_rows,
        };
        Ok(ImageEncoder {
            config,
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            attention,
            tables,
        })
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let c = &self.config;
        let want = [c.channels_in, c.image_size, c.image_size];
        if image.shape() != want {
            return Err(NorError::shape(
                "extract_features",
                format!("image {:?}, encoder expects {:?}", image.shape(), want),
            ));
        }
        Ok(())
    }

    /// conv → ReLU → conv → ReLU, channel concat, max-pool, flatten to `[L, D]`.
    pub fn features(&self, g: &mut Graph, store: &ParamStore, image: Var) -> Result<Var> {
        self.check_image(g.value(image))?;
        let (w1, b1) = (g.param(store, self.conv1_w), g.param(store, self.conv1_b));
        let (w2, b2) = (g.param(store, self.conv2_w), g.param(store, self.conv2_b));
        let c1 = g.conv2d(image, w1, b1)?;
        let f1 = g.relu(c1);
        let c2 = g.conv2d(f1, w2, b2)?;
        let f2 = g.relu(c2);
        let cat = g.concat(&[f1, f2])?;
        let pooled = g.max_pool2d(cat, self.config.pool_window)?;
        let d = self.config.region_dim();
        let flat = g.reshape(pooled, vec![d, self.config.region_count()])?;
        g.transpose(flat)
    }

    pub fn extract_features(&self, store: &ParamStore, image: &Tensor) -> Result<FeatureMap> {
        let mut g = Graph::new();
        let x = g.constant(image.clone());
        let f = self.features(&mut g, store, x)?;
        Ok(FeatureMap {
            regions: g.value(f).clone(),
        })
    }

    /// Features for several images; each image is processed independently.
    pub fn extract_features_batch(&self, store: &ParamStore, images: &[Tensor]) -> Result<Vec<FeatureMap>> {
        use rayon::prelude::*;
        images
            .par_iter()
            .map(|img| self.extract_features(store, img))
            .collect()
    }

    /// Attend over `f_self` using the global average of `f_other`.
    ///
    /// Returns the attended `[D]` vector and the `[L]` attention weights.
    pub fn mutual_attend(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f_self: Var,
        f_other: Var,
    ) -> Result<(Var, Var)> {
        mutual_attend(g, store, &self.attention, f_self, f_other)
    }

    /// `[ReLU(W_p g^a) ; latent row]`.
    pub fn represent(&self, g: &mut Graph, store: &ParamStore, attended: Var, latent: Var) -> Result<Var> {
        let w_p = g.param(store, self.attention.w_p);
        let proj = g.matvec(w_p, attended)?;
        let visual = g.relu(proj);
        g.concat(&[visual, latent])
    }

    /// Latent-factor row for an item as a graph node.
    pub fn latent(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        side: Side,
        id: &str,
        policy: ColdItemPolicy,
    ) -> Result<Var> {
        let row = self.tables.row(side, id, policy)?;
        g.param_row(store, self.tables.table(side), row)
    }

    /// Encode a pair from precomputed feature-map nodes.
    #[allow(clippy::too_many_arguments)]
    pub fn encode_pair_nodes(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f_t: Var,
        f_b: Var,
        top_id: &str,
        bottom_id: &str,
        policy: ColdItemPolicy,
    ) -> Result<PairNodes> {
        let lt = self.latent(g, store, Side::Top, top_id, policy)?;
        let lb = self.latent(g, store, Side::Bottom, bottom_id, policy)?;
        let (ga_t, top_weights) = self.mutual_attend(g, store, f_t, f_b)?;
        let (ga_b, bottom_weights) = self.mutual_attend(g, store, f_b, f_t)?;
        let v_t = self.represent(g, store, ga_t, lt)?;
        let v_b = self.represent(g, store, ga_b, lb)?;
        Ok(PairNodes {
            v_t,
            v_b,
            top_weights,
            bottom_weights,
        })
    }

    /// Run both images through the shared encoder and build `v_t`, `v_b`.
    pub fn encode_pair(
        &self,
        store: &ParamStore,
        top_image: &Tensor,
        bottom_image: &Tensor,
        top_id: &str,
        bottom_id: &str,
    ) -> Result<PairEncoding> {
        self.encode_pair_with(store, top_image, bottom_image, top_id, bottom_id, ColdItemPolicy::Reject)
    }

    pub fn encode_pair_with(
        &self,
        store: &ParamStore,
        top_image: &Tensor,
        bottom_image: &Tensor,
        top_id: &str,
        bottom_id: &str,
        policy: ColdItemPolicy,
    ) -> Result<PairEncoding> {
        // resolve ids first so a bad id fails before any convolution work
        self.tables.row(Side::Top, top_id, policy)?;
        self.tables.row(Side::Bottom, bottom_id, policy)?;
        let mut g = Graph::new();
        let it = g.constant(top_image.clone());
        let ib = g.constant(bottom_image.clone());
        let f_t = self.features(&mut g, store, it)?;
        let f_b = self.features(&mut g, store, ib)?;
        let nodes = self.encode_pair_nodes(&mut g, store, f_t, f_b, top_id, bottom_id, policy)?;
        Ok(PairEncoding {
            v_t: ItemRepresentation {
                v: g.value(nodes.v_t).clone(),
            },
            v_b: ItemRepresentation {
                v: g.value(nodes.v_b).clone(),
            },
            f_t: FeatureMap {
                regions: g.value(f_t).clone(),
            },
            f_b: FeatureMap {
                regions: g.value(f_b).clone(),
            },
            top_weights: g.value(nodes.top_weights).data().to_vec(),
            bottom_weights: g.value(nodes.bottom_weights).data().to_vec(),
        })
    }
}

/// `e_i = v_aᵀ tanh(W_a f_i + U_a ḡ)`, `α = softmax(e)`, returns `(Σ α_i f_i, α)`
/// where `f_i` are the rows of `f_self` and `ḡ` is the row mean of `f_other`.
pub fn mutual_attend(
    g: &mut Graph,
    store: &ParamStore,
    params: &MutualAttentionParams,
    f_self: Var,
    f_other: Var,
) -> Result<(Var, Var)> {
    let (ls, lo) = (g.value(f_self).shape().to_vec(), g.value(f_other).shape().to_vec());
    if ls != lo {
        return Err(NorError::shape(
            "mutual_attend",
            format!("feature maps {ls:?} and {lo:?} differ"),
        ));
    }
    let global = g.mean_rows(f_other)?;
    let w_a = g.param(store, params.w_a);
    let u_a = g.param(store, params.u_a);
    let v_a = g.param(store, params.v_a);
    let w_a_t = g.transpose(w_a)?;
    let local = g.matmul(f_self, w_a_t)?;
    let ctx = g.matvec(u_a, global)?;
    let pre = g.add_row(local, ctx)?;
    let act = g.tanh(pre);
    let scores = g.matvec(act, v_a)?;
    let weights = g.softmax(scores)?;
    let f_t = g.transpose(f_self)?;
    let attended = g.matvec(f_t, weights)?;
    Ok((attended, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            image_size: 8,
            channels_in: 3,
            conv1_channels: 2,
            conv2_channels: 2,
            pool_window: 4,
            visual_dim: 3,
        }
    }

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn encoder(config: EncoderConfig) -> (ParamStore, ImageEncoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = ImageEncoder::register(&mut store, config, &ids("t", 3), &ids("b", 2), &mut rng).unwrap();
        (store, enc)
    }

    fn image(config: &EncoderConfig, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.channels_in * config.image_size * config.image_size;
        Tensor::new(
            vec![config.channels_in, config.image_size, config.image_size],
            (0..n).map(|_| rng.gen::<f64>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn config_arithmetic() {
        let c = EncoderConfig::default();
        assert_eq!((c.grid(), c.region_count(), c.region_dim(), c.latent_dim()), (14, 196, 64, 600));
        let desk = EncoderConfig {
            image_size: 32,
            pool_window: 4,
            ..EncoderConfig::default()
        };
        assert_eq!((desk.region_count(), desk.region_dim()), (64, 64));
        assert!(EncoderConfig {
            image_size: 30,
            ..EncoderConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn desk_features_have_expected_shape() {
        let config = EncoderConfig {
            image_size: 32,
            pool_window: 4,
            ..EncoderConfig::default()
        };
        let (store, enc) = encoder(config.clone());
        let f = enc.extract_features(&store, &image(&config, 1)).unwrap();
        assert_eq!(f.regions.shape(), &[64, 64]);
        assert!(f.regions.data().iter().all(|&v| v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn zero_image_with_zero_bias_gives_zero_features() {
        let config = small_config();
        let (store, enc) = encoder(config.clone());
        let zero = Tensor::zeros(&[3, 8, 8]);
        let f = enc.extract_features(&store, &zero).unwrap();
        assert!(f.regions.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_image_shape_is_rejected() {
        let (store, enc) = encoder(small_config());
        assert!(enc.extract_features(&store, &Tensor::zeros(&[3, 16, 16])).is_err());
        assert!(enc.extract_features(&store, &Tensor::zeros(&[1, 8, 8])).is_err());
    }

    #[test]
    fn hand_evaluated_attention() {
        let mut store = ParamStore::new();
        let params = MutualAttentionParams {
            w_a: store.add("w_a", Tensor::matrix(1, 1, vec![1.0]).unwrap(), true).unwrap(),
            u_a: store.add("u_a", Tensor::matrix(1, 1, vec![1.0]).unwrap(), true).unwrap(),
            v_a: store.add("v_a", Tensor::vector(vec![1.0]), true).unwrap(),
            w_p: store.add("w_p", Tensor::matrix(1, 1, vec![1.0]).unwrap(), true).unwrap(),
        };
        let mut g = Graph::new();
        let fs = g.constant(Tensor::matrix(2, 1, vec![1.0, -1.0]).unwrap());
        let fo = g.constant(Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap());
        let (out, w) = mutual_attend(&mut g, &store, &params, fs, fo).unwrap();
        // e = [tanh(1.5), tanh(-0.5)], α = softmax(e), out = α₀ − α₁
        let e = [1.5f64.tanh(), (-0.5f64).tanh()];
        let z = e[0].exp() + e[1].exp();
        let alpha = [e[0].exp() / z, e[1].exp() / z];
        assert!((g.value(w).data()[0] - alpha[0]).abs() < 1e-15);
        assert!((g.value(out).item() - (alpha[0] - alpha[1])).abs() < 1e-15);
        assert!((e[0] - 0.905148).abs() < 1e-6 && (e[1] + 0.462117).abs() < 1e-6);
        assert!((alpha[0] - 0.796938).abs() < 1e-6);
        assert!((g.value(out).item() - 0.593876).abs() < 1e-6);
    }

    #[test]
    fn identical_regions_attend_to_themselves() {
        let (store, enc) = encoder(small_config());
        let mut g = Graph::new();
        let row = [0.3, 1.7, 0.0, 2.5];
        let fs = g.constant(Tensor::matrix(4, 4, row.repeat(4)).unwrap());
        let fo = g.constant(Tensor::matrix(4, 4, (0..16).map(|v| v as f64 * 0.1).collect()).unwrap());
        let (out, w) = enc.mutual_attend(&mut g, &store, fs, fo).unwrap();
        assert_eq!(g.value(out).data(), &row);
        assert!((g.value(w).data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn attention_rejects_region_mismatch() {
        let (store, enc) = encoder(small_config());
        let mut g = Graph::new();
        let fs = g.constant(Tensor::zeros(&[4, 4]));
        let fo = g.constant(Tensor::zeros(&[3, 4]));
        assert!(enc.mutual_attend(&mut g, &store, fs, fo).is_err());
    }

    #[test]
    fn pair_encoding_layout() {
        let config = small_config();
        let (mut store, enc) = encoder(config.clone());
        let (ti, bi) = (image(&config, 1), image(&config, 2));
        let out = enc.encode_pair(&store, &ti, &bi, "t1", "b0").unwrap();
        assert_eq!(out.v_t.len(), 6);
        assert!(out.v_t.v.data()[..3].iter().all(|&v| v >= 0.0));
        assert_eq!(&out.v_b.v.data()[3..], store.value(enc.tables.bottoms).row(0));

        // swapping physical images swaps the feature maps
        let swapped = enc.encode_pair(&store, &bi, &ti, "t1", "b0").unwrap();
        assert_eq!(swapped.f_t, out.f_b);
        assert_eq!(swapped.f_b, out.f_t);

        store.value_mut(enc.attention.w_p).fill(0.0);
        let zeroed = enc.encode_pair(&store, &ti, &bi, "t1", "b0").unwrap();
        assert!(zeroed.v_t.v.data()[..3].iter().all(|&v| v == 0.0));
        assert_eq!(&zeroed.v_t.v.data()[3..], store.value(enc.tables.tops).row(1));
    }

    #[test]
    fn unknown_ids_name_the_table() {
        let config = small_config();
        let (store, enc) = encoder(config.clone());
        let img = image(&config, 4);
        let err = enc.encode_pair(&store, &img, &img, "t9", "b0").unwrap_err();
        assert_eq!(err.to_string(), "unknown tops id `t9`");
        let err = enc.encode_pair(&store, &img, &img, "t0", "zz").unwrap_err();
        assert_eq!(err.to_string(), "unknown bottoms id `zz`");
        let cold = enc
            .encode_pair_with(&store, &img, &img, "t9", "zz", ColdItemPolicy::UnknownRow)
            .unwrap();
        assert_eq!(&cold.v_t.v.data()[3..], store.value(enc.tables.tops).row(3));
    }

    #[test]
    fn directions_share_parameter_storage() {
        let config = small_config();
        let (mut store, enc) = encoder(config.clone());
        let (ti, bi) = (image(&config, 5), image(&config, 6));
        let before = enc.encode_pair(&store, &ti, &bi, "t0", "b0").unwrap();
        // the same ids drive both directions, so one edit moves both weight vectors
        store.value_mut(enc.attention.v_a).data_mut()[0] += 0.5;
        let after = enc.encode_pair(&store, &ti, &bi, "t0", "b0").unwrap();
        assert_ne!(before.top_weights, after.top_weights);
        assert_ne!(before.bottom_weights, after.bottom_weights);
    }

    #[test]
    fn batch_extraction_is_position_independent() {
        let config = small_config();
        let (store, enc) = encoder(config.clone());
        let imgs: Vec<Tensor> = (0..4).map(|s| image(&config, s)).collect();
        let forward = enc.extract_features_batch(&store, &imgs).unwrap();
        let mut rev = imgs.clone();
        rev.reverse();
        let backward = enc.extract_features_batch(&store, &rev).unwrap();
        for (i, f) in forward.iter().enumerate() {
            assert_eq!(f, &backward[3 - i]);
        }
    }
}
