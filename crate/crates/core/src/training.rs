//! The adversarial training loop.
//!
//! Steps alternate between same-identity batches (odd steps, 1-based) and
//! different-identity batches (even steps). Each step updates the
//! discriminators once and then the generator once. The identity embedder is
//! frozen throughout.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::checkpoint::{read_tensors, restore_store, store_entries, write_tensors};
use crate::config::{FmKind, TrainConfig};
use crate::data::{ImageFolder, SyntheticDataset};
use crate::discriminator::{Discriminator, DiscriminatorArch};
use crate::embedder::{pretrain_embedder, Embedder, EmbedderArch, PretrainOptions, PretrainReport};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorArch};
use crate::losses::{
    fm_sum_var, hinge_d_var, hinge_g_var, identity_loss_var, interpolate, reconstruction_loss_var,
    LossReport,
};
use crate::nn::{Bound, ParamStore};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{child_rng, seeded_rng, RngState, SeededRng};
use crate::tensor::Tensor;
use crate::types::{ImageTensor, LabeledImage};

pub const ADAM_EPS: f64 = 1e-8;
pub const LOG_FILE: &str = "train_log.jsonl";
const STATE_FILE: &str = "state.json";
const CONFIG_FILE: &str = "config.toml";
const RUNNING_DECAY: f64 = 0.98;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Preset {
    Full,
    OFm,
    NFm,
    WFmBar,
    OFmFmMinus,
    OFmIdPlus,
    WFmIdPlus,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Full,
        Preset::OFm,
        Preset::NFm,
        Preset::WFmBar,
        Preset::OFmFmMinus,
        Preset::OFmIdPlus,
        Preset::WFmIdPlus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Full => "full",
            Preset::OFm => "oFM",
            Preset::NFm => "nFM",
            Preset::WFmBar => "wFM_bar",
            Preset::OFmFmMinus => "oFM_FM-",
            Preset::OFmIdPlus => "oFM_id+",
            Preset::WFmIdPlus => "wFM_id+",
        }
    }

    /// Sets the preset's feature-matching variant and loss weights on `base`.
    pub fn apply(self, mut base: TrainConfig) -> TrainConfig {
        let (kind, lambda_fm, lambda_id) = match self {
            Preset::Full => (FmKind::Weak, 10.0, 10.0),
            Preset::OFm => (FmKind::Full, 10.0, 10.0),
            Preset::NFm => (FmKind::Off, 10.0, 10.0),
            Preset::WFmBar => (FmKind::Early, 10.0, 10.0),
            Preset::OFmFmMinus => (FmKind::Full, 5.0, 10.0),
            Preset::OFmIdPlus => (FmKind::Full, 10.0, 20.0),
            Preset::WFmIdPlus => (FmKind::Weak, 10.0, 20.0),
        };
        base.fm_variant = kind;
        base.lambda_fm = lambda_fm;
        base.lambda_id = lambda_id;
        base
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "SimSwap" {
            return Ok(Preset::Full);
        }
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::Config(format!(
                    "unknown preset {s:?} (known: SimSwap, {})",
                    known.join(", ")
                ))
            })
    }
}

/// Pretrains the frozen identity embedder for `cfg` on `images`, using a
/// stream derived from the config seed.
pub fn pretrain_for(
    cfg: &TrainConfig,
    images: &[LabeledImage],
) -> Result<(Embedder<f32>, PretrainReport)> {
    let opts = PretrainOptions {
        epochs: cfg.embedder_epochs,
        ..PretrainOptions::default()
    };
    pretrain_embedder(
        images,
        EmbedderArch::new(cfg.id_dim),
        &opts,
        &mut child_rng(cfg.seed, 1),
    )
}

/// Default config with the named preset's deltas.
pub fn apply_preset(name: &str) -> Result<TrainConfig> {
    Ok(name.parse::<Preset>()?.apply(TrainConfig::default()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchKind {
    Same,
    Different,
}

impl BatchKind {
    /// Odd (1-based) steps draw same-identity pairs.
    pub fn for_step(step: u64) -> Self {
        if step % 2 == 1 {
            BatchKind::Same
        } else {
            BatchKind::Different
        }
    }

    pub fn is_same(self) -> bool {
        self == BatchKind::Same
    }
}

/// Anything that can hand out labelled source/target pairs.
pub trait PairSource {
    fn n_identities(&self) -> usize;

    fn image_size(&self) -> usize;

    /// `(source, source_identity, target, target_identity)`
    fn sample_pair(
        &self,
        same_identity: bool,
        rng: &mut SeededRng,
    ) -> Result<(ImageTensor, usize, ImageTensor, usize)>;

    /// Images used to pretrain the embedder.
    fn training_images(&self) -> Result<Vec<LabeledImage>>;
}

impl PairSource for SyntheticDataset {
    fn n_identities(&self) -> usize {
        self.identities.len()
    }

    fn image_size(&self) -> usize {
        self.image_size
    }

    fn sample_pair(
        &self,
        same_identity: bool,
        rng: &mut SeededRng,
    ) -> Result<(ImageTensor, usize, ImageTensor, usize)> {
        let p = SyntheticDataset::sample_pair(self, same_identity, rng)?;
        Ok((
            p.source,
            p.source_spec.identity_id,
            p.target,
            p.target_spec.identity_id,
        ))
    }

    fn training_images(&self) -> Result<Vec<LabeledImage>> {
        self.labeled(&self.train)
    }
}

impl PairSource for ImageFolder {
    fn n_identities(&self) -> usize {
        self.labels.len()
    }

    fn image_size(&self) -> usize {
        self.images.first().map_or(0, |i| i.image.height())
    }

    fn sample_pair(
        &self,
        same_identity: bool,
        rng: &mut SeededRng,
    ) -> Result<(ImageTensor, usize, ImageTensor, usize)> {
        let mut by_id: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, img) in self.images.iter().enumerate() {
            by_id.entry(img.identity).or_default().push(i);
        }
        let ids: Vec<usize> = by_id.keys().copied().collect();
        if ids.len() < 2 {
            return Err(Error::InvalidInput(
                "pair sampling needs at least 2 identities".into(),
            ));
        }
        let a = *ids.choose(rng).expect("non-empty");
        let b = if same_identity {
            a
        } else {
            let others: Vec<usize> = ids.iter().copied().filter(|&i| i != a).collect();
            *others.choose(rng).expect("non-empty")
        };
        let s = &self.images[*by_id[&a].choose(rng).expect("non-empty")];
        let t = &self.images[*by_id[&b].choose(rng).expect("non-empty")];
        Ok((s.image.clone(), a, t.image.clone(), b))
    }

    fn training_images(&self) -> Result<Vec<LabeledImage>> {
        Ok(self.images.clone())
    }
}

/// A batch of `[N, 3, H, W]` source and target images.
#[derive(Clone, Debug)]
pub struct Batch {
    pub kind: BatchKind,
    pub source: Tensor<f32>,
    pub target: Tensor<f32>,
    pub source_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
}

pub fn sample_batch(
    data: &impl PairSource,
    size: usize,
    kind: BatchKind,
    rng: &mut SeededRng,
) -> Result<Batch> {
    let mut sources = Vec::with_capacity(size);
    let mut targets = Vec::with_capacity(size);
    let (mut source_ids, mut target_ids) = (Vec::with_capacity(size), Vec::with_capacity(size));
    for _ in 0..size {
        let (s, si, t, ti) = data.sample_pair(kind.is_same(), rng)?;
        sources.push(s);
        targets.push(t);
        source_ids.push(si);
        target_ids.push(ti);
    }
    Ok(Batch {
        kind,
        source: ImageTensor::batch(&sources.iter().collect::<Vec<_>>())?,
        target: ImageTensor::batch(&targets.iter().collect::<Vec<_>>())?,
        source_ids,
        target_ids,
    })
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub batch_kind: BatchKind,
    #[serde(flatten)]
    pub report: LossReport,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DStepReport {
    pub l_adv_d: f64,
    pub l_gp: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GStepReport {
    pub l_id: f64,
    pub l_recon: f64,
    pub l_adv_g: f64,
    pub l_fm: f64,
    pub total_g: f64,
}

/// Models, optimizer moments and the random stream of a run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub cfg: TrainConfig,
    /// Completed steps.
    pub step: u64,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub embedder: Embedder<f32>,
    pub opt_g: Adam<f32>,
    pub opt_d: Adam<f32>,
    pub rng: SeededRng,
    /// Exponential moving averages of the logged losses.
    pub running: LossReport,
}

struct GTerms<'t> {
    l_id: Var<'t, f32>,
    l_recon: Var<'t, f32>,
    l_adv: Var<'t, f32>,
    l_fm: Option<Var<'t, f32>>,
    total: Var<'t, f32>,
}

fn check_finite(step: u64, name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            step,
            detail: format!("{name} = {v}"),
        })
    }
}

impl TrainState {
    /// Fresh models initialised from `cfg.seed`; the same stream then drives
    /// batch sampling.
    pub fn new(cfg: TrainConfig, embedder: Embedder<f32>) -> Result<Self> {
        let cfg = cfg.validate()?;
        if embedder.id_dim() != cfg.id_dim {
            return Err(Error::Config(format!(
                "embedder produces {}-d vectors but id_dim is {}",
                embedder.id_dim(),
                cfg.id_dim
            )));
        }
        let mut rng = seeded_rng(cfg.seed);
        let generator = Generator::new(GeneratorArch::from_config(&cfg), &mut rng);
        let discriminator = Discriminator::new(DiscriminatorArch::from_config(&cfg), &mut rng);
        let adam = AdamConfig {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: ADAM_EPS,
        };
        let opt_g = Adam::new(adam, generator.params());
        let opt_d = Adam::new(adam, discriminator.params());
        Ok(Self {
            cfg,
            step: 0,
            generator,
            discriminator,
            embedder,
            opt_g,
            opt_d,
            rng,
            running: LossReport::default(),
        })
    }

    fn source_identity(&self, batch: &Batch) -> Tensor<f32> {
        let tape = Tape::new();
        let p = self.embedder.params().bind(&tape, false);
        let v = self
            .embedder
            .forward_var(&p, &tape.constant(batch.source.clone()))
            .value();
        (*v).clone()
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let (_, c, h, w) = batch.target.dims4();
        if batch.source.shape() != batch.target.shape() || c != 3 {
            return Err(Error::shape(
                format!("{:?}", batch.target.shape()),
                format!("{:?}", batch.source.shape()),
            ));
        }
        self.generator.check_size(h, w)?;
        if h != self.cfg.image_size || w != self.cfg.image_size {
            return Err(Error::shape(
                format!("{0}x{0}", self.cfg.image_size),
                format!("{h}x{w}"),
            ));
        }
        Ok(())
    }

    /// One discriminator update on the hinge loss plus the weighted gradient
    /// penalty, with `fake` held fixed.
    fn d_update(
        &mut self,
        step: u64,
        real: &Tensor<f32>,
        fake: &Tensor<f32>,
    ) -> Result<DStepReport> {
        let alphas: Vec<f64> = (0..real.shape()[0])
            .map(|_| self.rng.gen::<f64>())
            .collect();
        let tape = Tape::new();
        let p = self.discriminator.params().bind(&tape, true);
        let real_out = self
            .discriminator
            .forward_var(&p, &tape.constant(real.clone()));
        let fake_out = self
            .discriminator
            .forward_var(&p, &tape.constant(fake.clone()));
        let real_scores: Vec<_> = real_out.iter().map(|o| o.score()).collect();
        let fake_scores: Vec<_> = fake_out.iter().map(|o| o.score()).collect();
        let loss = hinge_d_var(&real_scores, &fake_scores);
        let l_adv_d = check_finite(step, "l_adv_d", loss.item() as f64)?;
        let mut grads = p.grads(&tape.backward(loss));

        let x_hat = interpolate(real, fake, &alphas)?;
        let (l_gp, gp_grads) = self.discriminator.penalty_and_grads(&x_hat);
        let l_gp = check_finite(step, "l_gp", l_gp)?;
        if self.cfg.lambda_gp != 0.0 {
            let w = self.cfg.lambda_gp as f32;
            for (g, gp) in grads.iter_mut().zip(&gp_grads) {
                g.axpy(w, gp);
            }
        }
        self.opt_d.update(self.discriminator.params_mut(), &grads);
        Ok(DStepReport { l_adv_d, l_gp })
    }

    fn g_terms<'t>(
        &self,
        tape: &'t Tape<f32>,
        fake: Var<'t, f32>,
        batch: &Batch,
        v_s: &Tensor<f32>,
    ) -> GTerms<'t> {
        let cfg = &self.cfg;
        let pe = self.embedder.params().bind(tape, false);
        let v_r = self.embedder.forward_var(&pe, &fake);
        let l_id = identity_loss_var(&v_r, &tape.constant(v_s.clone()));
        let target = tape.constant(batch.target.clone());
        let l_recon = reconstruction_loss_var(&fake, &target, batch.kind.is_same());

        let pd = self.discriminator.params().bind(tape, false);
        let fake_out = self.discriminator.forward_var(&pd, &fake);
        let scores: Vec<_> = fake_out.iter().map(|o| o.score()).collect();
        let l_adv = hinge_g_var(&scores);
        let l_fm = if cfg.fm().kind == FmKind::Off {
            None
        } else {
            let target_out = self.discriminator.forward_var(&pd, &target);
            let fr: Vec<Vec<_>> = fake_out.into_iter().map(|o| o.features).collect();
            let ft: Vec<Vec<_>> = target_out.into_iter().map(|o| o.features).collect();
            fm_sum_var(&fr, &ft, cfg.fm())
        };

        let mut total = l_id
            .scale(cfg.lambda_id)
            .add(&l_recon.scale(cfg.lambda_recon))
            .add(&l_adv.scale(cfg.lambda_adv));
        if let Some(fm) = &l_fm {
            total = total.add(&fm.scale(cfg.lambda_fm));
        }
        GTerms {
            l_id,
            l_recon,
            l_adv,
            l_fm,
            total,
        }
    }

    fn g_update<'t>(
        &mut self,
        step: u64,
        tape: &'t Tape<f32>,
        p: &Bound<'t, f32>,
        terms: GTerms<'t>,
    ) -> Result<GStepReport> {
        let report = GStepReport {
            l_id: check_finite(step, "l_id", terms.l_id.item() as f64)?,
            l_recon: check_finite(step, "l_recon", terms.l_recon.item() as f64)?,
            l_adv_g: check_finite(step, "l_adv_g", terms.l_adv.item() as f64)?,
            l_fm: check_finite(step, "l_fm", terms.l_fm.map_or(0.0, |v| v.item() as f64))?,
            total_g: check_finite(step, "total_g", terms.total.item() as f64)?,
        };
        let grads = p.grads(&tape.backward(terms.total));
        self.opt_g.update(self.generator.params_mut(), &grads);
        Ok(report)
    }

    /// Discriminator update against the current generator's output on `batch`.
    pub fn train_step_d(&mut self, batch: &Batch) -> Result<DStepReport> {
        self.check_batch(batch)?;
        let v_s = self.source_identity(batch);
        let tape = Tape::new();
        let p = self.generator.params().bind(&tape, false);
        let fake = self.generator.forward_var(
            &p,
            &tape.constant(batch.target.clone()),
            &tape.constant(v_s),
        );
        let fake = (*fake.value()).clone();
        self.d_update(self.step + 1, &batch.target, &fake)
    }

    /// Generator update on the weighted generator objective.
    pub fn train_step_g(&mut self, batch: &Batch) -> Result<GStepReport> {
        self.check_batch(batch)?;
        let v_s = self.source_identity(batch);
        let tape = Tape::new();
        let p = self.generator.params().bind(&tape, true);
        let fake = self.generator.forward_var(
            &p,
            &tape.constant(batch.target.clone()),
            &tape.constant(v_s.clone()),
        );
        let terms = self.g_terms(&tape, fake, batch, &v_s);
        self.g_update(self.step + 1, &tape, &p, terms)
    }

    /// Runs one full step on `batch`: D update, then G update. The generator
    /// output is computed once and shared by both updates.
    pub fn step_on(&mut self, batch: &Batch) -> Result<StepRecord> {
        self.check_batch(batch)?;
        let step = self.step + 1;
        let v_s = self.source_identity(batch);
        let tape = Tape::new();
        let p = self.generator.params().bind(&tape, true);
        let fake = self.generator.forward_var(
            &p,
            &tape.constant(batch.target.clone()),
            &tape.constant(v_s.clone()),
        );
        let d = self.d_update(step, &batch.target, &fake.value())?;
        let terms = self.g_terms(&tape, fake, batch, &v_s);
        let g = self.g_update(step, &tape, &p, terms)?;

        let report = LossReport {
            l_id: g.l_id,
            l_recon: g.l_recon,
            l_adv_g: g.l_adv_g,
            l_adv_d: d.l_adv_d,
            l_gp: d.l_gp,
            l_fm: g.l_fm,
            total_g: g.total_g,
        };
        self.running = if self.step == 0 {
            report
        } else {
            blend(&self.running, &report, RUNNING_DECAY)
        };
        self.step = step;
        Ok(StepRecord {
            step,
            batch_kind: batch.kind,
            report,
        })
    }

    /// Samples the batch the schedule prescribes for the next step and runs it.
    pub fn train_step(&mut self, data: &impl PairSource) -> Result<StepRecord> {
        let kind = BatchKind::for_step(self.step + 1);
        let batch = sample_batch(data, self.cfg.batch_size, kind, &mut self.rng)?;
        self.step_on(&batch)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = store_entries("g", self.generator.params());
        entries.extend(store_entries("d", self.discriminator.params()));
        entries.extend(store_entries("e", self.embedder.params()));
        for (prefix, opt, store) in [
            ("opt_g", &self.opt_g, self.generator.params()),
            ("opt_d", &self.opt_d, self.discriminator.params()),
        ] {
            for ((name, _), (m, v)) in store.iter().zip(opt.m.iter().zip(&opt.v)) {
                entries.push((format!("{prefix}.m/{name}"), m));
                entries.push((format!("{prefix}.v/{name}"), v));
            }
        }
        write_tensors(dir, &entries)?;
        self.cfg.save(&dir.join(CONFIG_FILE))?;
        let rng = RngState::capture(&self.rng);
        let state = SavedState {
            step: self.step,
            rng_seed: rng.seed,
            rng_stream: rng.stream,
            rng_word_pos: rng.word_pos.to_string(),
            opt_g_step: self.opt_g.step,
            opt_d_step: self.opt_d.step,
            running: self.running,
        };
        let path = dir.join(STATE_FILE);
        let text =
            serde_json::to_string_pretty(&state).map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg = TrainConfig::load(&dir.join(CONFIG_FILE))?.validate()?;
        let path = dir.join(STATE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let saved: SavedState = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let entries = read_tensors(dir)?;

        // Architectures come from the config; the init stream is irrelevant
        // because every tensor is overwritten.
        let mut rng = seeded_rng(0);
        let mut embedder = Embedder::new(EmbedderArch::new(cfg.id_dim), &mut rng);
        embedder.load_params(restore_store(&entries, "e", embedder.params())?)?;
        let mut state = Self::new(cfg, embedder)?;
        let g = restore_store(&entries, "g", state.generator.params())?;
        state.generator.load_params(g)?;
        let d = restore_store(&entries, "d", state.discriminator.params())?;
        state.discriminator.load_params(d)?;
        for (prefix, opt, store, step) in [
            (
                "opt_g",
                &mut state.opt_g,
                state.generator.params(),
                saved.opt_g_step,
            ),
            (
                "opt_d",
                &mut state.opt_d,
                state.discriminator.params(),
                saved.opt_d_step,
            ),
        ] {
            opt.m = moments(&restore_store(&entries, &format!("{prefix}.m"), store)?);
            opt.v = moments(&restore_store(&entries, &format!("{prefix}.v"), store)?);
            opt.step = step;
        }
        let word_pos = saved
            .rng_word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng_word_pos {:?}", saved.rng_word_pos)))?;
        state.rng = RngState {
            seed: saved.rng_seed,
            stream: saved.rng_stream,
            word_pos,
        }
        .restore();
        state.step = saved.step;
        state.running = saved.running;
        Ok(state)
    }
}

fn moments(store: &ParamStore<f32>) -> Vec<Tensor<f32>> {
    store.iter().map(|(_, t)| t.clone()).collect()
}

fn blend(avg: &LossReport, new: &LossReport, decay: f64) -> LossReport {
    let mix = |a: f64, b: f64| decay * a + (1.0 - decay) * b;
    LossReport {
        l_id: mix(avg.l_id, new.l_id),
        l_recon: mix(avg.l_recon, new.l_recon),
        l_adv_g: mix(avg.l_adv_g, new.l_adv_g),
        l_adv_d: mix(avg.l_adv_d, new.l_adv_d),
        l_gp: mix(avg.l_gp, new.l_gp),
        l_fm: mix(avg.l_fm, new.l_fm),
        total_g: mix(avg.total_g, new.total_g),
    }
}

#[derive(Serialize, Deserialize)]
struct SavedState {
    step: u64,
    rng_seed: [u8; 32],
    rng_stream: u64,
    rng_word_pos: String,
    opt_g_step: u64,
    opt_d_step: u64,
    running: LossReport,
}

pub fn checkpoint_dir(out: &Path, step: u64) -> PathBuf {
    out.join("checkpoints").join(format!("step_{step:06}"))
}

pub fn final_dir(out: &Path) -> PathBuf {
    out.join("final")
}

/// Trains until `state.cfg.steps` steps are complete. With an output
/// directory, appends one JSON line per step to the log, writes periodic
/// checkpoints and a final one. `on_step` sees every record as it is logged.
pub fn train(
    state: &mut TrainState,
    data: &impl PairSource,
    out: Option<&Path>,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<Vec<StepRecord>> {
    if data.n_identities() < 2 {
        return Err(Error::InvalidInput(format!(
            "training needs at least 2 identities, dataset has {}",
            data.n_identities()
        )));
    }
    let mut log = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(LOG_FILE);
            let file: File = if state.step == 0 {
                File::create(&path)
            } else {
                OpenOptions::new().create(true).append(true).open(&path)
            }
            .map_err(|e| Error::io(&path, e))?;
            Some((path, BufWriter::new(file)))
        }
        None => None,
    };
    let mut records = Vec::new();
    while state.step < state.cfg.steps {
        let record = state.train_step(data)?;
        if let Some((path, w)) = log.as_mut() {
            let line = serde_json::to_string(&record).expect("records serialize");
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(path.as_path(), e))?;
        }
        on_step(&record);
        records.push(record);
        if let Some(dir) = out {
            let every = state.cfg.checkpoint_every;
            if every > 0 && state.step % every == 0 && state.step < state.cfg.steps {
                state.save(&checkpoint_dir(dir, state.step))?;
            }
        }
    }
    if let Some(dir) = out {
        state.save(&final_dir(dir))?;
    }
    Ok(records)
}

/// Reads a training log back.
pub fn read_log(path: &Path) -> Result<Vec<StepRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_alternates() {
        let kinds: Vec<BatchKind> = (1..=4).map(BatchKind::for_step).collect();
        assert_eq!(
            kinds,
            [
                BatchKind::Same,
                BatchKind::Different,
                BatchKind::Same,
                BatchKind::Different
            ]
        );
    }

    #[test]
    fn presets_match_their_definitions() {
        let c = apply_preset("wFM_id+").unwrap();
        assert_eq!((c.lambda_id, c.fm_variant), (20.0, FmKind::Weak));
        let c = apply_preset("oFM_FM-").unwrap();
        assert_eq!((c.lambda_fm, c.fm_variant), (5.0, FmKind::Full));
        let c = apply_preset("oFM_id+").unwrap();
        assert_eq!((c.lambda_id, c.fm_variant), (20.0, FmKind::Full));
        assert_eq!(apply_preset("SimSwap").unwrap(), TrainConfig::default());
        assert_eq!(apply_preset("nFM").unwrap().fm_variant, FmKind::Off);
        assert!(apply_preset("bogus").is_err());
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
    }

    #[test]
    fn log_lines_carry_the_batch_kind() {
        let r = StepRecord {
            step: 2,
            batch_kind: BatchKind::Different,
            report: LossReport::default(),
        };
        let line = serde_json::to_string(&r).unwrap();
        assert!(line.contains("\"batch_kind\":\"different\""), "{line}");
        assert!(line.contains("\"l_recon\":0.0"), "{line}");
        assert_eq!(serde_json::from_str::<StepRecord>(&line).unwrap(), r);
    }
}
