//! Metrics for trained swappers: identity retrieval, attribute error through a
//! synthetic-ground-truth regressor, cross-swap identity loss and self-swap
//! reconstruction, plus the preset comparison runner.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::config::TrainConfig;
use crate::data::SyntheticDataset;
use crate::embedder::{pretrain_embedder, Embedder, EmbedderArch, PretrainOptions};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::losses::identity_loss;
use crate::nn::{Conv, Linear, ParamStore};
use crate::optim::{Adam, AdamConfig};
use crate::rng::child_rng;
use crate::tensor::Tensor;
use crate::training::{train, Preset, StepRecord, TrainState};
use crate::types::{FaceSpec, IdentityVector, ImageTensor};

/// Maps a source and a target image to a result image.
pub trait Swapper {
    fn swap_batch(
        &self,
        sources: &[&ImageTensor],
        targets: &[&ImageTensor],
    ) -> Result<Vec<ImageTensor>>;
}

/// A generator with the embedder that feeds it.
pub struct GeneratorSwapper<'a> {
    pub generator: &'a Generator<f32>,
    pub embedder: &'a Embedder<f32>,
}

impl Swapper for GeneratorSwapper<'_> {
    fn swap_batch(
        &self,
        sources: &[&ImageTensor],
        targets: &[&ImageTensor],
    ) -> Result<Vec<ImageTensor>> {
        let ids = self.embedder.embed_batch(sources)?;
        self.generator
            .swap_batch(&ids.iter().collect::<Vec<_>>(), targets)
    }
}

/// Returns the target unchanged.
pub struct Bypass;

impl Swapper for Bypass {
    fn swap_batch(
        &self,
        _sources: &[&ImageTensor],
        targets: &[&ImageTensor],
    ) -> Result<Vec<ImageTensor>> {
        Ok(targets.iter().map(|t| (*t).clone()).collect())
    }
}

const SWAP_CHUNK: usize = 16;

fn swap_all(
    swapper: &impl Swapper,
    sources: &[&ImageTensor],
    targets: &[&ImageTensor],
) -> Result<Vec<ImageTensor>> {
    let mut out = Vec::with_capacity(sources.len());
    for (s, t) in sources.chunks(SWAP_CHUNK).zip(targets.chunks(SWAP_CHUNK)) {
        out.extend(swapper.swap_batch(s, t)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub generated: usize,
    pub source_id: usize,
    pub retrieved_id: usize,
    /// Cosine distance to the retrieved gallery entry.
    pub distance: f64,
}

fn cosine_distance(a: &IdentityVector, b: &IdentityVector) -> f64 {
    let dot: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum();
    1.0 - dot / (a.norm() * b.norm())
}

/// Nearest gallery entry for every generated vector by cosine distance; ties
/// go to the lowest gallery index.
pub fn retrieve(
    generated: &[(IdentityVector, usize)],
    gallery: &[(IdentityVector, usize)],
) -> Result<Vec<RetrievalRecord>> {
    let Some((first, _)) = gallery.first() else {
        return Err(Error::InvalidInput("retrieval gallery is empty".into()));
    };
    let d = first.dim();
    if let Some((v, _)) = gallery.iter().chain(generated).find(|(v, _)| v.dim() != d) {
        return Err(Error::shape(
            format!("{d}-d vectors"),
            format!("{}-d vector", v.dim()),
        ));
    }
    Ok(generated
        .iter()
        .enumerate()
        .map(|(i, (v, source_id))| {
            let mut best = (f64::INFINITY, 0);
            for (j, (g, _)) in gallery.iter().enumerate() {
                let dist = cosine_distance(v, g);
                if dist < best.0 {
                    best = (dist, j);
                }
            }
            RetrievalRecord {
                generated: i,
                source_id: *source_id,
                retrieved_id: gallery[best.1].1,
                distance: best.0,
            }
        })
        .collect())
}

/// Percentage of generated vectors whose nearest gallery entry has the
/// source's identity.
pub fn id_retrieval(
    generated: &[(IdentityVector, usize)],
    gallery: &[(IdentityVector, usize)],
) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::InvalidInput(
            "no generated embeddings to score".into(),
        ));
    }
    let records = retrieve(generated, gallery)?;
    let hits = records
        .iter()
        .filter(|r| r.retrieved_id == r.source_id)
        .count();
    Ok(100.0 * hits as f64 / records.len() as f64)
}

/// Predicts yaw, expression and lighting (each scaled to `[0, 1]`) from an
/// image. Obtained only through [`AttributeRegressor::fit`].
#[derive(Clone, Debug)]
pub struct AttributeRegressor {
    params: ParamStore<f32>,
    convs: Vec<Conv>,
    head: Linear,
    input_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressorOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for RegressorOptions {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 32,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressorReport {
    /// Mean absolute error per attribute on the validation renders.
    pub validation_mae: [f64; 3],
    /// Mean L2 error on the validation renders; the floor of
    /// [`attribute_error`] on perfect results.
    pub validation_l2: f64,
}

const REGRESSOR_WIDTHS: [usize; 4] = [16, 32, 64, 64];

impl AttributeRegressor {
    fn init(input_size: usize, rng: &mut impl Rng) -> Self {
        let mut params = ParamStore::new();
        let mut cin = 3;
        let convs = REGRESSOR_WIDTHS
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let c = Conv::new(
                    &mut params,
                    &format!("attr.{i}"),
                    cin,
                    w,
                    3,
                    2,
                    1,
                    true,
                    rng,
                );
                cin = w;
                c
            })
            .collect();
        let flat = cin * (input_size / 16) * (input_size / 16);
        let head = Linear::new(
            &mut params,
            "attr.head",
            flat,
            3,
            (1.0 / flat as f64).sqrt(),
            Some(Tensor::full(&[3], 0.5)),
            rng,
        );
        Self {
            params,
            convs,
            head,
            input_size,
        }
    }

    fn forward<'t>(
        &self,
        tape: &'t Tape<f32>,
        x: Tensor<f32>,
        trainable: bool,
    ) -> (crate::nn::Bound<'t, f32>, crate::autograd::Var<'t, f32>) {
        let p = self.params.bind(tape, trainable);
        let s = self.input_size;
        let h = self
            .convs
            .iter()
            .fold(tape.constant(x).resize(s, s), |h, c| {
                c.forward(&p, &h).leaky_relu(0.2)
            });
        let n = h.shape()[0];
        let flat = h.reshape(&[n, h.value().len() / n]);
        let y = self.head.forward(&p, &flat);
        (p, y)
    }

    /// Fits on `train` renders and reports errors on `validation` renders.
    pub fn fit(
        train: &[(ImageTensor, FaceSpec)],
        validation: &[(ImageTensor, FaceSpec)],
        opts: &RegressorOptions,
        rng: &mut impl Rng,
    ) -> Result<(Self, RegressorReport)> {
        if train.is_empty() || validation.is_empty() {
            return Err(Error::InvalidInput(
                "attribute regressor needs training and validation images".into(),
            ));
        }
        let mut reg = Self::init(64, rng);
        let mut adam = Adam::new(
            AdamConfig {
                lr: opts.learning_rate,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            &reg.params,
        );
        let mut order: Vec<usize> = (0..train.len()).collect();
        for _ in 0..opts.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(opts.batch_size.max(1)) {
                let images: Vec<&ImageTensor> = chunk.iter().map(|&i| &train[i].0).collect();
                let truth: Vec<f32> = chunk
                    .iter()
                    .flat_map(|&i| train[i].1.attributes())
                    .map(|v| v as f32)
                    .collect();
                let tape = Tape::new();
                let (p, y) = reg.forward(&tape, ImageTensor::batch(&images)?, true);
                let loss = y
                    .sub(&tape.constant(Tensor::from_vec(&[chunk.len(), 3], truth)))
                    .square()
                    .mean();
                if !loss.item().is_finite() {
                    return Err(Error::NonFinite {
                        step: 0,
                        detail: "attribute regressor loss".into(),
                    });
                }
                let grads = p.grads(&tape.backward(loss));
                adam.update(&mut reg.params, &grads);
            }
        }
        let images: Vec<&ImageTensor> = validation.iter().map(|(i, _)| i).collect();
        let specs: Vec<&FaceSpec> = validation.iter().map(|(_, s)| s).collect();
        let preds = reg.predict(&images)?;
        let mut mae = [0.0; 3];
        for (p, s) in preds.iter().zip(&specs) {
            for (k, t) in s.attributes().iter().enumerate() {
                mae[k] += (p[k] - t).abs() / preds.len() as f64;
            }
        }
        let validation_l2 = mean_l2(&preds, &specs);
        Ok((
            reg,
            RegressorReport {
                validation_mae: mae,
                validation_l2,
            },
        ))
    }

    pub fn predict(&self, images: &[&ImageTensor]) -> Result<Vec<[f64; 3]>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let tape = Tape::new();
            let (_, y) = self.forward(&tape, ImageTensor::batch(chunk)?, false);
            out.extend(
                y.value()
                    .data()
                    .chunks(3)
                    .map(|r| [r[0] as f64, r[1] as f64, r[2] as f64]),
            );
        }
        Ok(out)
    }
}

fn mean_l2(preds: &[[f64; 3]], specs: &[&FaceSpec]) -> f64 {
    preds
        .iter()
        .zip(specs)
        .map(|(p, s)| {
            p.iter()
                .zip(s.attributes())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / preds.len() as f64
}

/// Mean L2 distance between the attributes predicted on `results` and the
/// ground-truth attributes of the matching target specs.
pub fn attribute_error(
    regressor: &AttributeRegressor,
    results: &[&ImageTensor],
    targets: &[&FaceSpec],
) -> Result<f64> {
    if results.len() != targets.len() || results.is_empty() {
        return Err(Error::InvalidInput(format!(
            "need one target spec per result image, got {} results and {} specs",
            results.len(),
            targets.len()
        )));
    }
    Ok(mean_l2(&regressor.predict(results)?, targets))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig7Scores {
    pub cross_id_loss: f64,
    pub self_recon_loss: f64,
}

/// Indices of `n` distinct items out of `len`, or `n` draws with replacement
/// when there are not enough.
fn pick(len: usize, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    if n <= len {
        rand::seq::index::sample(rng, len, n).into_vec()
    } else {
        log::warn!("requested {n} samples from {len} held-out images; sampling with replacement");
        (0..n).map(|_| rng.gen_range(0..len)).collect()
    }
}

/// Different-identity `(source, target)` index pairs from `specs`.
pub fn cross_pairs(
    specs: &[FaceSpec],
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, usize)>> {
    let ids: std::collections::BTreeSet<usize> = specs.iter().map(|s| s.identity_id).collect();
    if ids.len() < 2 {
        return Err(Error::InvalidInput(
            "cross pairs need at least 2 identities".into(),
        ));
    }
    let targets = pick(specs.len(), n, rng);
    Ok(targets
        .into_iter()
        .map(|t| loop {
            let s = rng.gen_range(0..specs.len());
            if specs[s].identity_id != specs[t].identity_id {
                break (s, t);
            }
        })
        .collect())
}

/// Cross-swap identity loss over `n_pairs` different-identity pairs and
/// self-swap reconstruction over `n_pairs` images of the held-out split.
pub fn fig7_protocol(
    swapper: &impl Swapper,
    embedder: &Embedder<f32>,
    dataset: &SyntheticDataset,
    n_pairs: usize,
    rng: &mut impl Rng,
) -> Result<Fig7Scores> {
    if n_pairs == 0 {
        return Err(Error::InvalidInput("n_pairs must be at least 1".into()));
    }
    let specs = &dataset.held_out;
    let images: Vec<ImageTensor> = specs
        .iter()
        .map(|s| dataset.render(s))
        .collect::<Result<_>>()?;
    let pairs = cross_pairs(specs, n_pairs, rng)?;
    let cross_id_loss = cross_identity_loss(swapper, embedder, &images, &pairs)?.0;

    let chosen = pick(images.len(), n_pairs, rng);
    let xs: Vec<&ImageTensor> = chosen.iter().map(|&i| &images[i]).collect();
    let out = swap_all(swapper, &xs, &xs)?;
    let self_recon_loss = out
        .iter()
        .zip(&xs)
        .map(|(r, x)| r.mean_abs_diff(x))
        .sum::<Result<f64>>()?
        / xs.len() as f64;
    Ok(Fig7Scores {
        cross_id_loss,
        self_recon_loss,
    })
}

fn cross_identity_loss(
    swapper: &impl Swapper,
    embedder: &Embedder<f32>,
    images: &[ImageTensor],
    pairs: &[(usize, usize)],
) -> Result<(f64, Vec<ImageTensor>)> {
    let sources: Vec<&ImageTensor> = pairs.iter().map(|&(s, _)| &images[s]).collect();
    let targets: Vec<&ImageTensor> = pairs.iter().map(|&(_, t)| &images[t]).collect();
    let results = swap_all(swapper, &sources, &targets)?;
    let v_r = embedder.embed_batch(&results.iter().collect::<Vec<_>>())?;
    let v_s = embedder.embed_batch(&sources)?;
    let total = v_r
        .iter()
        .zip(&v_s)
        .map(|(a, b)| identity_loss(a, b))
        .sum::<Result<f64>>()?;
    Ok((total / pairs.len() as f64, results))
}

/// Fixed evaluation machinery shared by every model scored on one dataset:
/// an independently trained recognizer for retrieval and the attribute
/// regressor.
pub struct Evaluator {
    pub dataset: SyntheticDataset,
    pub recognizer: Embedder<f32>,
    pub regressor: AttributeRegressor,
    pub regressor_report: RegressorReport,
    pub n_pairs: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluatorOptions {
    pub n_pairs: usize,
    pub recognizer: PretrainOptions,
    pub regressor: RegressorOptions,
    /// Training renders used to fit the regressor.
    pub regressor_train_images: usize,
}

impl Default for EvaluatorOptions {
    fn default() -> Self {
        Self {
            n_pairs: 200,
            recognizer: PretrainOptions::default(),
            regressor: RegressorOptions::default(),
            regressor_train_images: 2000,
        }
    }
}

/// Everything reported for one trained model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub id_retrieval: f64,
    pub attr_error: f64,
    /// The regressor's own validation error, a lower bound for `attr_error`.
    pub attr_error_floor: f64,
    pub cross_id_loss: f64,
    pub self_recon_loss: f64,
}

impl Evaluator {
    pub fn prepare(
        dataset: SyntheticDataset,
        id_dim: usize,
        seed: u64,
        opts: &EvaluatorOptions,
    ) -> Result<Self> {
        // Streams distinct from the one used for training.
        let mut rng = child_rng(seed, 101);
        let train_images = dataset.labeled(&dataset.train)?;
        let (recognizer, _) = pretrain_embedder(
            &train_images,
            EmbedderArch::new(id_dim),
            &opts.recognizer,
            &mut rng,
        )?;

        let mut rng = child_rng(seed, 102);
        let n = opts.regressor_train_images.min(dataset.train.len());
        let chosen = rand::seq::index::sample(&mut rng, dataset.train.len(), n).into_vec();
        let fit_set: Vec<(ImageTensor, FaceSpec)> = chosen
            .iter()
            .map(|&i| Ok((train_images[i].image.clone(), dataset.train[i].clone())))
            .collect::<Result<_>>()?;
        let validation: Vec<(ImageTensor, FaceSpec)> = dataset
            .held_out
            .iter()
            .map(|s| Ok((dataset.render(s)?, s.clone())))
            .collect::<Result<_>>()?;
        let (regressor, regressor_report) =
            AttributeRegressor::fit(&fit_set, &validation, &opts.regressor, &mut rng)?;
        Ok(Self {
            dataset,
            recognizer,
            regressor,
            regressor_report,
            n_pairs: opts.n_pairs,
            seed,
        })
    }

    /// Scores a swapper; `embedder` is the one its identity loss was trained
    /// with and is used for the cross-swap identity loss.
    pub fn evaluate(&self, swapper: &impl Swapper, embedder: &Embedder<f32>) -> Result<Metrics> {
        let mut rng = child_rng(self.seed, 103);
        let specs = &self.dataset.held_out;
        let images: Vec<ImageTensor> = specs
            .iter()
            .map(|s| self.dataset.render(s))
            .collect::<Result<_>>()?;
        let pairs = cross_pairs(specs, self.n_pairs, &mut rng)?;
        let (cross_id_loss, results) = cross_identity_loss(swapper, embedder, &images, &pairs)?;

        let gallery: Vec<(IdentityVector, usize)> = self
            .recognizer
            .embed_batch(&images.iter().collect::<Vec<_>>())?
            .into_iter()
            .zip(specs.iter().map(|s| s.identity_id))
            .collect();
        let generated: Vec<(IdentityVector, usize)> = self
            .recognizer
            .embed_batch(&results.iter().collect::<Vec<_>>())?
            .into_iter()
            .zip(pairs.iter().map(|&(s, _)| specs[s].identity_id))
            .collect();
        let id_retrieval = id_retrieval(&generated, &gallery)?;

        let target_specs: Vec<&FaceSpec> = pairs.iter().map(|&(_, t)| &specs[t]).collect();
        let attr_error = attribute_error(
            &self.regressor,
            &results.iter().collect::<Vec<_>>(),
            &target_specs,
        )?;

        let chosen = pick(images.len(), self.n_pairs, &mut rng);
        let xs: Vec<&ImageTensor> = chosen.iter().map(|&i| &images[i]).collect();
        let out = swap_all(swapper, &xs, &xs)?;
        let self_recon_loss = out
            .iter()
            .zip(&xs)
            .map(|(r, x)| r.mean_abs_diff(x))
            .sum::<Result<f64>>()?
            / xs.len() as f64;

        Ok(Metrics {
            id_retrieval,
            attr_error,
            attr_error_floor: self.regressor_report.validation_l2,
            cross_id_loss,
            self_recon_loss,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub preset: String,
    pub id_retrieval: f64,
    pub attr_error: f64,
    pub cross_id_loss: f64,
    pub self_recon_loss: f64,
}

impl AblationRow {
    pub fn new(preset: impl Into<String>, m: &Metrics) -> Self {
        Self {
            preset: preset.into(),
            id_retrieval: m.id_retrieval,
            attr_error: m.attr_error,
            cross_id_loss: m.cross_id_loss,
            self_recon_loss: m.self_recon_loss,
        }
    }
}

/// Trains every preset from `base` with the same seed and step budget and
/// evaluates each. `on_step` receives `(preset, record)` during training.
pub fn run_ablation(
    presets: &[Preset],
    base: &TrainConfig,
    embedder: &Embedder<f32>,
    evaluator: &Evaluator,
    out: Option<&Path>,
    mut on_step: impl FnMut(Preset, &StepRecord),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(presets.len());
    for &preset in presets {
        let cfg = preset.apply(base.clone());
        let mut state = TrainState::new(cfg, embedder.clone())?;
        let dir = out.map(|o| o.join(preset.name()));
        train(&mut state, &evaluator.dataset, dir.as_deref(), |r| {
            on_step(preset, r)
        })?;
        let swapper = GeneratorSwapper {
            generator: &state.generator,
            embedder: &state.embedder,
        };
        let metrics = evaluator.evaluate(&swapper, &state.embedder)?;
        rows.push(AblationRow::new(preset.name(), &metrics));
    }
    Ok(rows)
}

/// Outcome of the three-way ordering comparison between the all-layer,
/// default and no feature-matching presets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingVerdict {
    pub retrieval: bool,
    pub attr_error: bool,
    pub self_recon: bool,
}

impl OrderingVerdict {
    pub fn all(&self) -> bool {
        self.retrieval && self.attr_error && self.self_recon
    }
}

pub const RETRIEVAL_BAND: f64 = 2.0;
pub const RELATIVE_BAND: f64 = 0.05;

/// `a <= b` up to `band` relative to the larger magnitude.
fn le_rel(a: f64, b: f64, band: f64) -> bool {
    a <= b + band * a.abs().max(b.abs())
}

/// Checks the expected trends: retrieval oFM <= default <= nFM (2-point band),
/// attribute error in the reverse order and the nFM self-swap reconstruction
/// the largest of the three (5% relative band). Returns `None` when any of the
/// three rows is missing.
pub fn check_ordering(rows: &[AblationRow]) -> Option<OrderingVerdict> {
    let find = |p: Preset| rows.iter().find(|r| r.preset == p.name());
    let (o, s, n) = (find(Preset::OFm)?, find(Preset::Full)?, find(Preset::NFm)?);
    Some(OrderingVerdict {
        retrieval: o.id_retrieval <= s.id_retrieval + RETRIEVAL_BAND
            && s.id_retrieval <= n.id_retrieval + RETRIEVAL_BAND,
        attr_error: le_rel(o.attr_error, s.attr_error, RELATIVE_BAND)
            && le_rel(s.attr_error, n.attr_error, RELATIVE_BAND),
        self_recon: le_rel(o.self_recon_loss, n.self_recon_loss, RELATIVE_BAND)
            && le_rel(s.self_recon_loss, n.self_recon_loss, RELATIVE_BAND),
    })
}

pub fn format_table(rows: &[AblationRow]) -> String {
    let header = [
        "preset",
        "id_retrieval_%",
        "attr_error",
        "cross_id_loss",
        "self_recon_loss",
    ];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.preset.clone(),
                format!("{:.2}", r.id_retrieval),
                format!("{:.4}", r.attr_error),
                format!("{:.4}", r.cross_id_loss),
                format!("{:.4}", r.self_recon_loss),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..5)
        .map(|c| {
            body.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    line(
        widths
            .iter()
            .map(|&w| "-".repeat(w))
            .collect::<Vec<_>>()
            .iter()
            .map(|s| s.as_str())
            .collect(),
        &mut out,
    );
    for r in &body {
        line(r.iter().map(|s| s.as_str()).collect(), &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> IdentityVector {
        IdentityVector::normalized(v).unwrap()
    }

    #[test]
    fn exact_matches_retrieve_perfectly() {
        let gallery = vec![(unit(&[1.0, 0.0]), 0), (unit(&[0.0, 1.0]), 1)];
        let generated = vec![(unit(&[1.0, 0.0]), 0), (unit(&[0.0, 1.0]), 1)];
        assert_eq!(id_retrieval(&generated, &gallery).unwrap(), 100.0);
        let wrong = vec![(unit(&[1.0, 0.0]), 1), (unit(&[0.0, 1.0]), 0)];
        assert_eq!(id_retrieval(&wrong, &gallery).unwrap(), 0.0);
    }

    #[test]
    fn ties_go_to_the_first_gallery_entry() {
        let gallery = vec![(unit(&[1.0, 1.0]), 7), (unit(&[1.0, -1.0]), 3)];
        let r = retrieve(&[(unit(&[1.0, 0.0]), 3)], &gallery).unwrap();
        assert_eq!(r[0].retrieved_id, 7);
    }

    #[test]
    fn retrieval_errors() {
        assert!(id_retrieval(&[(unit(&[1.0]), 0)], &[]).is_err());
        assert!(id_retrieval(&[(unit(&[1.0, 0.0, 0.0]), 0)], &[(unit(&[1.0, 0.0]), 0)]).is_err());
    }

    #[test]
    fn ordering_uses_bands() {
        let row = |p: &str, r: f64, a: f64, s: f64| AblationRow {
            preset: p.into(),
            id_retrieval: r,
            attr_error: a,
            cross_id_loss: 0.0,
            self_recon_loss: s,
        };
        let rows = vec![
            row("oFM", 71.0, 0.10, 0.10),
            row("full", 70.0, 0.104, 0.12),
            row("nFM", 90.0, 0.2, 0.2),
        ];
        assert!(check_ordering(&rows).unwrap().all());
        let rows = vec![
            row("oFM", 80.0, 0.10, 0.10),
            row("full", 70.0, 0.104, 0.12),
            row("nFM", 90.0, 0.2, 0.11),
        ];
        let v = check_ordering(&rows).unwrap();
        assert!(!v.retrieval && v.attr_error && !v.self_recon);
        assert!(check_ordering(&rows[..2]).is_none());
    }

    #[test]
    fn table_has_one_line_per_row() {
        let rows = vec![AblationRow {
            preset: "nFM".into(),
            id_retrieval: 1.0,
            attr_error: 2.0,
            cross_id_loss: 3.0,
            self_recon_loss: 4.0,
        }];
        let t = format_table(&rows);
        assert_eq!(t.lines().count(), 3);
        assert!(t.contains("nFM"));
        assert_eq!(format_table(&[]).lines().count(), 2);
    }
}
