//! Training loops: supervised segmentation and the semi-supervised
//! adversarial multi-task procedure.
//!
//! Every step of the adversarial loop first updates the discriminator on a
//! batch and then the segmentor on the same batch. The network not being
//! updated runs in [`Mode::TrainFrozen`], so its parameters, running
//! statistics and optimizer state are untouched by the other's step.

mod evaluate;
mod resume;

use std::collections::BTreeMap;

use candle_core::{backprop::GradStore, DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_subset, Dataset};
use crate::discriminator::Discriminator;
use crate::losses::{
    discriminator_sup_loss_masked, discriminator_unsup_loss, segmentor_adv_loss,
    side_output_loss, LossConfig, LossKind,
};
use crate::metrics::DEFAULT_THRESHOLD;
use crate::nn::{Adam, AdamConfig, Mode, Snapshot};
use crate::segmentor::{images_to_tensor, Segmentor};
use crate::{Error, Result};

pub use evaluate::{evaluate, evaluate_maps, validation_scores};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_segmentor: f64,
    pub lr_discriminator: f64,
    /// Share of the training split that keeps its mask and class label.
    pub labeled_fraction: f64,
    pub loss: LossKind,
    pub loss_config: LossConfig,
    pub seed: u64,
    /// Save a resumable checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Reload the best-validation weights when training ends.
    pub restore_best: bool,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 16,
            lr_segmentor: 1e-5,
            lr_discriminator: 1e-4,
            labeled_fraction: 0.10,
            loss: LossKind::Kltv,
            loss_config: LossConfig::default(),
            seed: 0,
            checkpoint_every: 0,
            restore_best: true,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return bad(format!("labeled_fraction {} outside (0, 1]", self.labeled_fraction));
        }
        // Zero learning rates are allowed (frozen runs); negatives are not.
        for (name, lr) in [("lr_segmentor", self.lr_segmentor), ("lr_discriminator", self.lr_discriminator)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number, got {lr}"));
            }
        }
        self.loss_config.validate()
    }

    fn adam(lr: f64) -> AdamConfig {
        AdamConfig::with_lr(lr)
    }
}

/// One recorded scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub step: u64,
    pub term: String,
    pub value: f64,
}

/// Progress and history of a training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimization steps.
    pub step: u64,
    pub trace: Vec<TraceRow>,
    /// `(dice, accuracy)` of the best validation pass so far.
    pub best_score: Option<(f64, f64)>,
    pub best_epoch: Option<usize>,
    pub data_rng: ChaCha8Rng,
}

impl TrainState {
    fn new(seed: u64) -> Self {
        Self {
            epoch: 0,
            step: 0,
            trace: Vec::new(),
            best_score: None,
            best_epoch: None,
            data_rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Trace values of one term, in order.
    pub fn term(&self, term: &str) -> Vec<f64> {
        self.trace
            .iter()
            .filter(|r| r.term == term)
            .map(|r| r.value)
            .collect()
    }

    /// Trace as CSV with header `epoch,step,term,value`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("epoch,step,term,value\n");
        for r in &self.trace {
            out.push_str(&format!("{},{},{},{:e}\n", r.epoch, r.step, r.term, r.value));
        }
        out
    }
}

/// Indices of one step's samples. Labeled samples come first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

impl Batch {
    pub fn all(&self) -> Vec<usize> {
        self.labeled.iter().chain(&self.unlabeled).copied().collect()
    }
}

/// Labeled and unlabeled index sets of a training split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// Deterministic class-stratified choice of the labeled samples.
///
/// Samples without a class label are treated as one class.
pub fn select_labeled_subset(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Partition> {
    let labels: Vec<usize> = dataset
        .samples
        .iter()
        .map(|s| s.class_label.unwrap_or(0))
        .collect();
    let n_classes = dataset.n_classes().max(1);
    let labeled = stratified_subset(&labels, n_classes, fraction, seed)?;
    let mut is_labeled = vec![false; dataset.len()];
    for &i in &labeled {
        is_labeled[i] = true;
    }
    let unlabeled = (0..dataset.len()).filter(|&i| !is_labeled[i]).collect();
    Ok(Partition { labeled, unlabeled })
}

/// Scalar losses of one discriminator step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscriminatorLosses {
    pub sup: f64,
    pub unsup: f64,
}

/// Scalar losses of one segmentor step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentorLosses {
    pub seg: f64,
    pub adv: Option<f64>,
}

/// Reshuffled-on-exhaustion stream of indices.
#[derive(Clone, Debug)]
struct IndexStream {
    pool: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
}

impl IndexStream {
    fn new(pool: Vec<usize>) -> Self {
        Self {
            pool,
            order: Vec::new(),
            pos: 0,
        }
    }

    fn reshuffle(&mut self, rng: &mut ChaCha8Rng) {
        self.order = self.pool.clone();
        if !self.order.is_empty() {
            self.order.shuffle(rng);
        }
        self.pos = 0;
    }

    fn take(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n && !self.pool.is_empty() {
            if self.pos == self.order.len() {
                self.reshuffle(rng);
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// A training session owning the optimizers and the run state.
///
/// The models are borrowed; their variables are updated in place.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    segmentor: &'a Segmentor,
    discriminator: Option<&'a Discriminator>,
    seg_opt: Adam,
    disc_opt: Option<Adam>,
    partition: Partition,
    state: TrainState,
    best: Option<(Snapshot, Option<Snapshot>)>,
}

impl<'a> Trainer<'a> {
    /// Segmentation-only training on every sample of `train`.
    pub fn supervised(segmentor: &'a Segmentor, train: &Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        check_train_set(train, segmentor, true)?;
        Ok(Self {
            seg_opt: Adam::new(segmentor.store(), TrainConfig::adam(cfg.lr_segmentor))?,
            disc_opt: None,
            partition: Partition {
                labeled: (0..train.len()).collect(),
                unlabeled: Vec::new(),
            },
            state: TrainState::new(cfg.seed),
            cfg,
            segmentor,
            discriminator: None,
            best: None,
        })
    }

    /// Adversarial multi-task training. Only the labeled subset chosen by
    /// [`select_labeled_subset`] contributes masks and class labels.
    pub fn semisupervised(
        segmentor: &'a Segmentor,
        discriminator: &'a Discriminator,
        train: &Dataset,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        check_train_set(train, segmentor, false)?;
        let n_real = discriminator.config().n_real_classes;
        if discriminator.config().input_size != segmentor.config().input_size {
            return Err(Error::InvalidArgument(
                "segmentor and discriminator input sizes differ".into(),
            ));
        }
        let partition = select_labeled_subset(train, cfg.labeled_fraction, cfg.seed)?;
        for &i in &partition.labeled {
            let s = &train.samples[i];
            if s.mask.is_none() {
                return Err(Error::Data(format!("labeled sample {} has no mask", s.source_id)));
            }
            if s.class_label.unwrap_or(0) >= n_real {
                return Err(Error::Data(format!(
                    "sample {} has class {:?} but the discriminator has {n_real} real classes",
                    s.source_id, s.class_label
                )));
            }
        }
        Ok(Self {
            seg_opt: Adam::new(segmentor.store(), TrainConfig::adam(cfg.lr_segmentor))?,
            disc_opt: Some(Adam::new(
                discriminator.store(),
                TrainConfig::adam(cfg.lr_discriminator),
            )?),
            partition,
            state: TrainState::new(cfg.seed),
            cfg,
            segmentor,
            discriminator: Some(discriminator),
            best: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    /// `floor(m / b)`, with the batch shrunk to `m` when `m < b`.
    pub fn steps_per_epoch(&self, train: &Dataset) -> usize {
        let b = self.effective_batch(train);
        train.len() / b
    }

    fn effective_batch(&self, train: &Dataset) -> usize {
        self.cfg.batch_size.min(train.len()).max(1)
    }

    /// Labeled share of each batch, at least one sample.
    fn labeled_per_batch(&self, b: usize) -> usize {
        if self.partition.unlabeled.is_empty() {
            return b;
        }
        ((b as f64 * self.cfg.labeled_fraction).round() as usize).clamp(1, b)
    }

    /// Draws the batches of one epoch from the data stream.
    pub fn epoch_batches(&mut self, train: &Dataset) -> Vec<Batch> {
        let b = self.effective_batch(train);
        let steps = train.len() / b;
        let n_lab = self.labeled_per_batch(b);
        let rng = &mut self.state.data_rng;
        let mut labeled = IndexStream::new(self.partition.labeled.clone());
        let mut unlabeled = IndexStream::new(self.partition.unlabeled.clone());
        labeled.reshuffle(rng);
        unlabeled.reshuffle(rng);
        (0..steps)
            .map(|_| {
                let l = labeled.take(n_lab, rng);
                let u = unlabeled.take(b - n_lab, rng);
                Batch { labeled: l, unlabeled: u }
            })
            .collect()
    }

    /// Runs to `cfg.epochs`, validating after each epoch when `val` is
    /// given. `on_epoch` runs after every epoch (used for checkpointing).
    pub fn fit(
        &mut self,
        train: &Dataset,
        val: Option<&Dataset>,
        mut on_epoch: impl FnMut(&Trainer<'a>) -> Result<()>,
    ) -> Result<()> {
        while self.state.epoch < self.cfg.epochs {
            self.run_epoch(train)?;
            if let Some(val) = val.filter(|v| !v.is_empty()) {
                self.validate_epoch(val)?;
            }
            on_epoch(self)?;
        }
        if self.cfg.restore_best {
            if let Some((seg, disc)) = &self.best {
                self.segmentor.store().restore(seg)?;
                if let (Some(d), Some(snap)) = (self.discriminator, disc) {
                    d.store().restore(snap)?;
                }
            }
        }
        Ok(())
    }

    pub fn run_epoch(&mut self, train: &Dataset) -> Result<()> {
        let epoch = self.state.epoch;
        for batch in self.epoch_batches(train) {
            if self.discriminator.is_some() {
                self.discriminator_step(train, &batch)?;
                self.segmentor_step(train, &batch)?;
            } else {
                self.segmentor_step(train, &batch)?;
            }
            self.state.step += 1;
        }
        self.state.epoch = epoch + 1;
        log::debug!("epoch {} done ({} steps)", self.state.epoch, self.state.step);
        Ok(())
    }

    fn validate_epoch(&mut self, val: &Dataset) -> Result<()> {
        let (dice, acc) = validation_scores(self.segmentor, self.discriminator, val, self.cfg.threshold)?;
        self.record("val_dice", dice)?;
        if let Some(acc) = acc {
            self.record("val_accuracy", acc)?;
        }
        let score = (dice, acc.unwrap_or(0.0));
        let better = match self.state.best_score {
            None => true,
            Some(best) => score.0 > best.0 || (score.0 == best.0 && score.1 > best.1),
        };
        if better {
            self.state.best_score = Some(score);
            self.state.best_epoch = Some(self.state.epoch);
            let d = match self.discriminator {
                Some(d) => Some(d.store().snapshot()?),
                None => None,
            };
            self.best = Some((self.segmentor.store().snapshot()?, d));
        }
        Ok(())
    }

    fn record(&mut self, term: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Diverged {
                epoch: self.state.epoch,
                step: self.state.step,
                term: term.to_string(),
                value,
            });
        }
        self.state.trace.push(TraceRow {
            epoch: self.state.epoch,
            step: self.state.step,
            term: term.to_string(),
            value,
        });
        Ok(())
    }

    /// One segmentor update on `batch`: segmentation loss on the labeled
    /// samples plus, when adversarial, `c` times the adversarial term on
    /// every sample.
    pub fn segmentor_step(&mut self, data: &Dataset, batch: &Batch) -> Result<SegmentorLosses> {
        let (loss, losses) = self.segmentor_loss(data, batch, Mode::Train)?;
        self.record("seg", losses.seg)?;
        if let Some(adv) = losses.adv {
            self.record("adv", adv)?;
        }
        let grads = loss.backward()?;
        self.seg_opt.step(&grads)?;
        Ok(losses)
    }

    /// Segmentor objective on `batch` without updating anything but the
    /// running statistics selected by `mode`.
    pub fn segmentor_loss(&self, data: &Dataset, batch: &Batch, mode: Mode) -> Result<(Tensor, SegmentorLosses)> {
        let cfg = &self.cfg;
        let seg = self.segmentor;
        let all = batch.all();
        let x = batch_images(data, &all, seg)?;
        let y = batch_masks(data, &batch.labeled, seg)?;
        let out = seg.forward(&x, mode)?;
        let n_lab = batch.labeled.len();
        let labeled_part = |t: &Tensor| -> Result<Tensor> {
            if n_lab == all.len() {
                Ok(t.clone())
            } else {
                Ok(t.narrow(0, 0, n_lab)?)
            }
        };
        let seg_loss = if seg.config().deep_supervision {
            let sides = out.sides.iter().map(labeled_part).collect::<Result<Vec<_>>>()?;
            side_output_loss(&y, &sides, &cfg.loss_config, cfg.loss)?
        } else {
            cfg.loss.apply(&y, &labeled_part(&out.final_map)?, &cfg.loss_config)?
        };
        let seg_value = scalar(&seg_loss)?;
        let c = cfg.loss_config.c;
        match self.discriminator {
            Some(d) if c != 0.0 => {
                let dout = d.forward(&x, &out.final_map, Mode::TrainFrozen)?;
                let adv = segmentor_adv_loss(&dout.prob_predicted()?)?;
                let adv_value = scalar(&adv)?;
                let total = (seg_loss + (adv * c)?)?;
                Ok((total, SegmentorLosses { seg: seg_value, adv: Some(adv_value) }))
            }
            _ => Ok((seg_loss, SegmentorLosses { seg: seg_value, adv: None })),
        }
    }

    /// One discriminator update on `batch`: the supervised class term on
    /// labeled real pairs plus the real/predicted terms, real pairs from
    /// the labeled samples and predicted pairs from every sample.
    pub fn discriminator_step(&mut self, data: &Dataset, batch: &Batch) -> Result<DiscriminatorLosses> {
        let (loss, losses) = self.discriminator_loss(data, batch, Mode::Train)?;
        self.record("d_sup", losses.sup)?;
        self.record("d_unsup", losses.unsup)?;
        let grads: GradStore = loss.backward()?;
        self.disc_opt
            .as_mut()
            .expect("discriminator optimizer")
            .step(&grads)?;
        Ok(losses)
    }

    /// Discriminator loss (negated objective) on `batch`. The segmentor
    /// runs frozen and its output is detached.
    pub fn discriminator_loss(
        &self,
        data: &Dataset,
        batch: &Batch,
        mode: Mode,
    ) -> Result<(Tensor, DiscriminatorLosses)> {
        let d = self
            .discriminator
            .ok_or_else(|| Error::InvalidArgument("no discriminator in this session".into()))?;
        let seg = self.segmentor;
        let all = batch.all();
        let x = batch_images(data, &all, seg)?;
        let fake = seg.forward(&x, Mode::TrainFrozen)?.final_map.detach();
        let x_lab = batch_images(data, &batch.labeled, seg)?;
        let y_lab = batch_masks(data, &batch.labeled, seg)?.to_dtype(fake.dtype())?;
        let n_lab = batch.labeled.len();
        let xs = Tensor::cat(&[&x_lab, &x], 0)?;
        let masks = Tensor::cat(&[&y_lab, &fake], 0)?;
        let out = d.forward(&xs, &masks, mode)?;
        let probs = out.probs()?;
        let labels: Vec<Option<usize>> = batch
            .labeled
            .iter()
            .map(|&i| Some(data.samples[i].class_label.unwrap_or(0)))
            .chain(std::iter::repeat_n(None, all.len()))
            .collect();
        let sup = discriminator_sup_loss_masked(&probs, &labels)?;
        let p_pred = out.prob_predicted()?;
        let unsup = discriminator_unsup_loss(
            &p_pred.narrow(0, 0, n_lab)?,
            &p_pred.narrow(0, n_lab, all.len())?,
        )?;
        let losses = DiscriminatorLosses {
            sup: scalar(&sup)?,
            unsup: scalar(&unsup)?,
        };
        Ok(((sup + unsup)?, losses))
    }

    fn optimizer_states(&self) -> BTreeMap<&'static str, &Adam> {
        let mut out = BTreeMap::from([("segmentor", &self.seg_opt)]);
        if let Some(opt) = &self.disc_opt {
            out.insert("discriminator", opt);
        }
        out
    }
}

fn check_train_set(train: &Dataset, seg: &Segmentor, need_masks: bool) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let m = seg.config().input_size;
    if train.image_size() != m {
        return Err(Error::Data(format!(
            "images are {}x{0}, segmentor expects {m}x{m}",
            train.image_size()
        )));
    }
    if need_masks {
        if let Some(s) = train.samples.iter().find(|s| s.mask.is_none()) {
            return Err(Error::Data(format!("sample {} has no mask", s.source_id)));
        }
    }
    Ok(())
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

pub(crate) fn batch_images(data: &Dataset, idx: &[usize], seg: &Segmentor) -> Result<Tensor> {
    let images: Vec<_> = idx.iter().map(|&i| &data.samples[i].image).collect();
    images_to_tensor(&images, seg.config().input_size, &Device::Cpu)?
        .to_dtype(seg.store().dtype())
        .map_err(Into::into)
}

pub(crate) fn batch_masks(data: &Dataset, idx: &[usize], seg: &Segmentor) -> Result<Tensor> {
    let m = seg.config().input_size;
    let mut flat = Vec::with_capacity(idx.len() * m * m);
    for &i in idx {
        let s = &data.samples[i];
        let mask = s
            .mask
            .as_ref()
            .ok_or_else(|| Error::Data(format!("sample {} has no mask", s.source_id)))?;
        flat.extend(mask.iter().map(|&v| f32::from(v)));
    }
    Tensor::from_vec(flat, (idx.len(), 1, m, m), &Device::Cpu)?
        .to_dtype(seg.store().dtype())
        .map_err(Into::into)
}

/// Supervised training to `cfg.epochs` with best-validation selection.
pub fn train_supervised(
    segmentor: &Segmentor,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainState> {
    let mut trainer = Trainer::supervised(segmentor, train, cfg.clone())?;
    trainer.fit(train, val, |_| Ok(()))?;
    Ok(trainer.into_state())
}

/// Semi-supervised adversarial multi-task training to `cfg.epochs`.
pub fn train_semisupervised(
    segmentor: &Segmentor,
    discriminator: &Discriminator,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainState> {
    let mut trainer = Trainer::semisupervised(segmentor, discriminator, train, cfg.clone())?;
    trainer.fit(train, val, |_| Ok(()))?;
    Ok(trainer.into_state())
}
