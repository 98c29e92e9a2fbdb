//! Identity embedder: a small convolutional recognizer that maps a face image
//! to a unit-length identity vector, plus readers for externally computed
//! embeddings.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::generator::check_same_layout;
use crate::nn::{Bound, Conv, Linear, ParamStore};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{Real, Tensor};
use crate::types::{IdentityVector, ImageTensor, LabeledImage};

const SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmbedderArch {
    pub widths: [usize; 4],
    pub id_dim: usize,
    /// Inputs are resized (bilinear) to this square size.
    pub input_size: usize,
}

impl EmbedderArch {
    pub fn new(id_dim: usize) -> Self {
        Self {
            widths: [32, 64, 128, 128],
            id_dim,
            input_size: 64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Embedder<R: Real = f32> {
    arch: EmbedderArch,
    params: ParamStore<R>,
    convs: Vec<Conv>,
    proj: Linear,
}

impl<R: Real> Embedder<R> {
    pub fn new(arch: EmbedderArch, rng: &mut impl Rng) -> Self {
        let mut params = ParamStore::new();
        let mut cin = 3;
        let convs = arch
            .widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let conv = Conv::new(&mut params, &format!("emb.{i}"), cin, w, 3, 2, 1, true, rng);
                cin = w;
                conv
            })
            .collect();
        let std = (1.0 / cin as f64).sqrt();
        let proj = Linear::new(
            &mut params,
            "emb.proj",
            cin,
            arch.id_dim,
            std,
            Some(Tensor::zeros(&[arch.id_dim])),
            rng,
        );
        Self {
            arch,
            params,
            convs,
            proj,
        }
    }

    pub fn arch(&self) -> &EmbedderArch {
        &self.arch
    }

    pub fn id_dim(&self) -> usize {
        self.arch.id_dim
    }

    pub fn params(&self) -> &ParamStore<R> {
        &self.params
    }

    pub fn load_params(&mut self, params: ParamStore<R>) -> Result<()> {
        check_same_layout(&self.params, &params)?;
        self.params = params;
        Ok(())
    }

    pub fn cast<S: Real>(&self) -> Embedder<S> {
        Embedder {
            arch: self.arch.clone(),
            params: self.params.cast(),
            convs: self.convs.clone(),
            proj: self.proj,
        }
    }

    /// `[N, 3, H, W] -> [N, d]` with unit rows.
    pub fn forward_var<'t>(&self, p: &Bound<'t, R>, x: &Var<'t, R>) -> Var<'t, R> {
        let s = self.arch.input_size;
        let h = self
            .convs
            .iter()
            .fold(x.resize(s, s), |h, c| c.forward(p, &h).leaky_relu(SLOPE));
        self.proj.forward(p, &h.global_avg_pool()).normalize_rows()
    }

    pub fn embed(&self, image: &ImageTensor) -> Result<IdentityVector> {
        Ok(self.embed_batch(&[image])?.remove(0))
    }

    pub fn embed_batch(&self, images: &[&ImageTensor]) -> Result<Vec<IdentityVector>> {
        let x = ImageTensor::batch::<R>(images)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let v = self.forward_var(&p, &tape.constant(x)).value();
        let d = self.arch.id_dim;
        v.data()
            .chunks(d)
            .map(|row| {
                IdentityVector::normalized(&row.iter().map(|x| x.as_f64()).collect::<Vec<_>>())
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Temperature of the cosine logits.
    pub logit_scale: f64,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            logit_scale: 16.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    pub epoch_losses: Vec<f64>,
    /// Classification accuracy on the training images after the last epoch.
    pub train_accuracy: f64,
}

/// Trains an embedder with a normalized-softmax identity classifier: logits are
/// scaled cosines between the embedding and one learned direction per
/// identity. The classifier is discarded; the returned embedder is frozen.
pub fn pretrain_embedder(
    images: &[LabeledImage],
    arch: EmbedderArch,
    opts: &PretrainOptions,
    rng: &mut impl Rng,
) -> Result<(Embedder<f32>, PretrainReport)> {
    let ids: BTreeSet<usize> = images.iter().map(|i| i.identity).collect();
    if ids.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "embedder pretraining needs at least 2 identities, got {}",
            ids.len()
        )));
    }
    let class_of: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(c, &id)| (id, c)).collect();
    let mut emb = Embedder::<f32>::new(arch.clone(), rng);
    let mut head = ParamStore::<f32>::new();
    let centers = head.add(
        "classifier",
        Tensor::randn(&[ids.len(), arch.id_dim], 1.0, rng),
    );
    let adam_cfg = AdamConfig {
        lr: opts.learning_rate,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut opt_emb = Adam::new(adam_cfg, &emb.params);
    let mut opt_head = Adam::new(adam_cfg, &head);

    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut epoch_losses = Vec::with_capacity(opts.epochs);
    for _ in 0..opts.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(opts.batch_size.max(1)) {
            let batch: Vec<&ImageTensor> = chunk.iter().map(|&i| &images[i].image).collect();
            let labels: Vec<usize> = chunk
                .iter()
                .map(|&i| class_of[&images[i].identity])
                .collect();
            let tape = Tape::new();
            let pe = emb.params.bind(&tape, true);
            let ph = head.bind(&tape, true);
            let v = emb.forward_var(&pe, &tape.constant(ImageTensor::batch::<f32>(&batch)?));
            let w = ph.var(centers).normalize_rows();
            let loss = v
                .linear(&w, None)
                .scale(opts.logit_scale)
                .cross_entropy(&labels);
            let l = loss.item() as f64;
            if !l.is_finite() {
                return Err(Error::NonFinite {
                    step: batches,
                    detail: "embedder pretraining loss".into(),
                });
            }
            total += l;
            batches += 1;
            let grads = tape.backward(loss);
            opt_emb.update(&mut emb.params, &pe.grads(&grads));
            opt_head.update(&mut head, &ph.grads(&grads));
        }
        epoch_losses.push(total / batches as f64);
    }

    // Held-in classification accuracy with the final classifier.
    let mut correct = 0usize;
    for chunk in images.chunks(64) {
        let batch: Vec<&ImageTensor> = chunk.iter().map(|i| &i.image).collect();
        let tape = Tape::new();
        let pe = emb.params.bind(&tape, false);
        let ph = head.bind(&tape, false);
        let v = emb.forward_var(&pe, &tape.constant(ImageTensor::batch::<f32>(&batch)?));
        let logits = v.linear(&ph.var(centers).normalize_rows(), None).value();
        let k = ids.len();
        for (row, item) in logits.data().chunks(k).zip(chunk) {
            let best = (0..k)
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .expect("k >= 2");
            correct += usize::from(best == class_of[&item.identity]);
        }
    }
    let train_accuracy = correct as f64 / images.len() as f64;
    Ok((
        emb,
        PretrainReport {
            epoch_losses,
            train_accuracy,
        },
    ))
}

/// Mean cosine similarity over same-identity and different-identity pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Separability {
    pub intra: f64,
    pub inter: f64,
}

impl Separability {
    pub fn margin(&self) -> f64 {
        self.intra - self.inter
    }
}

/// Embeds `images` and averages the cosine over every unordered pair, split by
/// whether the two share an identity.
pub fn separability(embedder: &Embedder<f32>, images: &[LabeledImage]) -> Result<Separability> {
    let mut vectors = Vec::with_capacity(images.len());
    for chunk in images.chunks(64) {
        vectors.extend(embedder.embed_batch(&chunk.iter().map(|i| &i.image).collect::<Vec<_>>())?);
    }
    let (mut intra, mut inter) = ((0.0, 0usize), (0.0, 0usize));
    for i in 0..images.len() {
        for j in i + 1..images.len() {
            let c = vectors[i].cosine(&vectors[j]);
            let acc = if images[i].identity == images[j].identity {
                &mut intra
            } else {
                &mut inter
            };
            acc.0 += c;
            acc.1 += 1;
        }
    }
    if intra.1 == 0 || inter.1 == 0 {
        return Err(Error::InvalidInput(
            "separability needs two images of one identity and two identities".into(),
        ));
    }
    Ok(Separability {
        intra: intra.0 / intra.1 as f64,
        inter: inter.0 / inter.1 as f64,
    })
}

/// Magic bytes of the binary embedding container.
pub const EMBEDDING_MAGIC: &[u8; 8] = b"IDEMBED1";

/// Reads embeddings from either the binary container
/// (`magic, d: u32, count: u32, then per record: id length u32, UTF-8 id,
/// d little-endian f32`) or a CSV with header `id,v0,...,v{d-1}`.
/// Every vector is renormalized to unit length. With `expected_dim` unset,
/// all records must share the first record's dimension.
pub fn load_external_embeddings(
    path: &Path,
    expected_dim: Option<usize>,
) -> Result<BTreeMap<String, IdentityVector>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let records = if bytes.starts_with(EMBEDDING_MAGIC) {
        parse_binary(&bytes)?
    } else {
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| Error::Embeddings("neither binary container nor UTF-8 CSV".into()))?;
        parse_csv(text)?
    };
    if records.is_empty() {
        return Err(Error::Embeddings("no records".into()));
    }
    let expected_dim = expected_dim.unwrap_or(records[0].1.len());
    let mut out = BTreeMap::new();
    for (id, v) in records {
        if v.len() != expected_dim {
            return Err(Error::Embeddings(format!(
                "record {id:?} has dimension {}, expected {expected_dim}",
                v.len()
            )));
        }
        let v = IdentityVector::normalized(&v)
            .map_err(|e| Error::Embeddings(format!("record {id:?}: {e}")))?;
        if out.insert(id.clone(), v).is_some() {
            return Err(Error::Embeddings(format!("duplicate id {id:?}")));
        }
    }
    Ok(out)
}

fn parse_binary(bytes: &[u8]) -> Result<Vec<(String, Vec<f64>)>> {
    let mut pos = EMBEDDING_MAGIC.len();
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos.checked_add(n).filter(|&e| e <= bytes.len());
        let end = end.ok_or_else(|| Error::Embeddings("truncated container".into()))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes")) as usize;
    let d = u32_at(take(4)?);
    let count = u32_at(take(4)?);
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = u32_at(take(4)?);
        let id = std::str::from_utf8(take(len)?)
            .map_err(|_| Error::Embeddings("record id is not UTF-8".into()))?
            .to_string();
        let v = take(4 * d)?
            .chunks(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        records.push((id, v));
    }
    if pos != bytes.len() {
        return Err(Error::Embeddings("trailing bytes after last record".into()));
    }
    Ok(records)
}

fn parse_csv(text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let Some(header) = lines.next() else {
        return Ok(Vec::new());
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let expected: Vec<String> = std::iter::once("id".to_string())
        .chain((0..cols.len().saturating_sub(1)).map(|i| format!("v{i}")))
        .collect();
    if cols.len() < 2 || cols != expected {
        return Err(Error::Embeddings(format!(
            "bad CSV header {header:?}; expected id,v0,..."
        )));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(Error::Embeddings(format!(
                    "row {} has {} fields, expected {}",
                    i + 1,
                    fields.len(),
                    cols.len()
                )));
            }
            let v = fields[1..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::Embeddings(format!("row {}: bad number {f:?}", i + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((fields[0].to_string(), v))
        })
        .collect()
}

/// Writes the binary embedding container.
pub fn write_embeddings(path: &Path, records: &[(String, IdentityVector)]) -> Result<()> {
    let d = records.first().map_or(0, |(_, v)| v.dim());
    let mut out = Vec::new();
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (id, v) in records {
        if v.dim() != d {
            return Err(Error::Embeddings(
                "all vectors must share one dimension".into(),
            ));
        }
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for x in v.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
