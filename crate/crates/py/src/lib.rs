//! Python bindings: load a trained model, score and rank outfits, write
//! comments, compute the evaluation metrics, and train on a dataset.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use nor_core::data::{load_dataset, load_image, synthetic, Catalog, Direction, Side};
use nor_core::metrics::{self, Prf};
use nor_core::model::NorModel;
use nor_core::numerics::Tensor;
use nor_core::training::{self, TrainingConfig};
use nor_core::NorError;

fn err(e: NorError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A trained model together with the image catalog it reads items from.
#[pyclass(module = "nor")]
struct Model {
    inner: NorModel,
    catalog: Catalog,
}

impl Model {
    fn image(&self, side: Side, id: &str) -> Result<Tensor, NorError> {
        self.inner.check_known(side, id)?;
        load_image(self.catalog.path(side, id)?, self.inner.config.encoder.image_size)
    }
}

#[pymethods]
impl Model {
    /// Load a checkpoint. `data` overrides the dataset recorded at training time.
    #[staticmethod]
    #[pyo3(signature = (checkpoint, data=None))]
    fn load(checkpoint: PathBuf, data: Option<PathBuf>) -> PyResult<Self> {
        let (inner, meta) = NorModel::load(&checkpoint).map_err(err)?;
        let root = data
            .or(meta.data_root)
            .ok_or_else(|| PyValueError::new_err("checkpoint does not record its dataset; pass data="))?;
        let catalog = Catalog::scan(&root).map_err(err)?;
        Ok(Model { inner, catalog })
    }

    #[getter]
    fn tops(&self) -> Vec<String> {
        self.inner.items(Side::Top).to_vec()
    }

    #[getter]
    fn bottoms(&self) -> Vec<String> {
        self.inner.items(Side::Bottom).to_vec()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab.len()
    }

    /// Probability that `top` and `bottom` make a good outfit.
    fn match_score(&self, top: &str, bottom: &str) -> PyResult<f64> {
        let (t, b) = (self.image(Side::Top, top).map_err(err)?, self.image(Side::Bottom, bottom).map_err(err)?);
        Ok(self.inner.match_images(&t, &b, top, bottom).map_err(err)?.p_match)
    }

    /// Candidates sorted by match probability, best first.
    #[pyo3(signature = (query, candidates, direction="top_to_bottom"))]
    fn rank(&self, query: &str, candidates: Vec<String>, direction: &str) -> PyResult<Vec<(String, f64)>> {
        let direction: Direction = direction.parse().map_err(err)?;
        let list = self
            .inner
            .rank(query, direction, &candidates, |side, id| {
                let img = self.image(side, id)?;
                self.inner.features(&img)
            })
            .map_err(err)?;
        Ok(list.ranking.into_iter().map(|s| (s.item, s.score)).collect())
    }

    /// Beam-search a comment; returns the text and its length-normalized log-probability.
    #[pyo3(signature = (top, bottom, beam=3, max_len=20))]
    fn generate(&self, top: &str, bottom: &str, beam: usize, max_len: usize) -> PyResult<(String, f64)> {
        let ft = self.inner.features(&self.image(Side::Top, top).map_err(err)?).map_err(err)?;
        let fb = self.inner.features(&self.image(Side::Bottom, bottom).map_err(err)?).map_err(err)?;
        let c = self.inner.generate(&ft, &fb, top, bottom, beam, max_len).map_err(err)?;
        Ok((c.comment, c.score))
    }
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    nor_core::data::tokenize(text)
}

#[pyfunction]
fn average_precision(relevance: Vec<bool>) -> PyResult<f64> {
    metrics::average_precision(&relevance).map_err(err)
}

#[pyfunction]
fn reciprocal_rank(relevance: Vec<bool>) -> PyResult<f64> {
    metrics::reciprocal_rank(&relevance).map_err(err)
}

#[pyfunction]
fn auc(scores: Vec<f64>, relevance: Vec<bool>) -> PyResult<f64> {
    metrics::auc(&scores, &relevance).map_err(err)
}

fn tokenized(candidate: &str, references: &[String]) -> (Vec<String>, Vec<Vec<String>>) {
    (
        nor_core::data::tokenize(candidate),
        references.iter().map(|r| nor_core::data::tokenize(r)).collect(),
    )
}

/// ROUGE-1, -2, -L and -SU4 as `(precision, recall, f1)` keyed by variant.
#[pyfunction]
fn rouge(candidate: &str, references: Vec<String>) -> BTreeMap<&'static str, (f64, f64, f64)> {
    let (c, r) = tokenized(candidate, &references);
    let t = |p: Prf| (p.p, p.r, p.f);
    BTreeMap::from([
        ("1", t(metrics::rouge_n(&c, &r, 1))),
        ("2", t(metrics::rouge_n(&c, &r, 2))),
        ("L", t(metrics::rouge_l(&c, &r))),
        ("SU4", t(metrics::rouge_su4(&c, &r))),
    ])
}

#[pyfunction]
#[pyo3(signature = (candidate, references, max_n=4))]
fn bleu(candidate: &str, references: Vec<String>, max_n: usize) -> f64 {
    let (c, r) = tokenized(candidate, &references);
    metrics::bleu(&c, &r, max_n)
}

/// Write a procedural dataset of `n` outfits with `size`×`size` images.
#[pyfunction]
#[pyo3(signature = (out, n=8, size=32))]
fn synthesize(out: PathBuf, n: usize, size: usize) -> PyResult<()> {
    synthetic::generate(n, size).write(&out).map_err(err)?;
    Ok(())
}

/// Train on `data`, writing checkpoints and logs to `out`.
///
/// `options` holds config keys such as `preset`, `max_epochs` or `seed`.
/// Returns the checkpoint path, best epoch and its validation AUC.
#[pyfunction]
#[pyo3(signature = (data, out, **options))]
fn train(
    py: Python<'_>,
    data: PathBuf,
    out: PathBuf,
    options: Option<BTreeMap<String, Bound<'_, PyAny>>>,
) -> PyResult<BTreeMap<&'static str, Py<PyAny>>> {
    let mut config = TrainingConfig::default();
    let mut options = options.unwrap_or_default();
    // the preset resets every other key, so it goes first
    if let Some(p) = options.remove("preset") {
        config.set("preset", &p.str()?.to_string()).map_err(err)?;
    }
    for (key, value) in &options {
        config.set(key, &value.str()?.to_string()).map_err(err)?;
    }
    config.validate().map_err(err)?;
    let outcome = py
        .detach(|| {
            let dataset = load_dataset(&data)?;
            training::train(&dataset, config, &out)
        })
        .map_err(err)?;
    Ok(BTreeMap::from([
        ("checkpoint", outcome.checkpoint.into_pyobject(py)?.into_any().unbind()),
        ("best_epoch", outcome.best_epoch.into_pyobject(py)?.into_any().unbind()),
        ("best_val_auc", outcome.best_val_auc.into_pyobject(py)?.into_any().unbind()),
    ]))
}

#[pymodule]
fn nor(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(reciprocal_rank, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(rouge, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
