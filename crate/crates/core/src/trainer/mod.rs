//! Adam training loop, learning-rate schedules, recipes and evaluation.
//!
//! Batch composition depends only on `(seed, step)`: the sample at global
//! position `p = step * batch + j` is element `p mod N` of the permutation for
//! epoch `p / N`, and flip decisions come from a per-step stream. Resuming
//! from a saved step therefore replays exactly the batches an uninterrupted
//! run would have seen.

mod adam;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

pub use adam::{adam_update, AdamConfig, AdamState};

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::metrics::{composite_loss, psnr, ssim, LossKind, LossSpec};
use crate::models::{load_checkpoint, save_checkpoint, Container, ModelGraph};
use crate::raw_pipeline::{augment_flip, BilinearBaseline, PairSet};
use crate::tensor::{concat_batch, rng_stream, Tensor};

const FLIP_STREAM: u64 = 1 << 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Halve every `every` steps, never going below `lr_final`.
    StepHalve {
        every: usize,
    },
    /// Linear interpolation reaching `lr_final` at `total_steps`.
    LinearDecay,
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LrSchedule::Constant => write!(f, "constant"),
            LrSchedule::StepHalve { every } => write!(f, "step_halve:{every}"),
            LrSchedule::LinearDecay => write!(f, "linear_decay"),
        }
    }
}

impl FromStr for LrSchedule {
    type Err = Error;

    /// `constant`, `linear_decay` or `step_halve:K`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "linear_decay" => Ok(LrSchedule::LinearDecay),
            _ => s
                .strip_prefix("step_halve:")
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k > 0)
                .map(|every| LrSchedule::StepHalve { every })
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "unknown schedule `{s}` (expected constant, linear_decay or step_halve:K)"
                    ))
                }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub lr_schedule: LrSchedule,
    pub total_steps: usize,
    pub loss: LossSpec,
    pub augment_flip: bool,
    pub seed: u64,
    /// Validate every this many steps; 0 disables periodic validation.
    pub validate_every: usize,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.lr_initial > 0.0 && self.lr_initial.is_finite()) {
            return Err(Error::invalid(format!(
                "initial learning rate must be positive, got {}",
                self.lr_initial
            )));
        }
        if !(self.lr_final >= 0.0 && self.lr_final <= self.lr_initial) {
            return Err(Error::invalid(format!(
                "final learning rate {} must lie in [0, {}]",
                self.lr_final, self.lr_initial
            )));
        }
        Ok(())
    }

    /// Learning rate used for the update at 0-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr_initial,
            LrSchedule::StepHalve { every } => {
                let halvings = (step / every.max(1)).min(1074) as i32;
                (self.lr_initial * 2f64.powi(-halvings)).max(self.lr_final)
            }
            LrSchedule::LinearDecay => {
                if step >= self.total_steps {
                    self.lr_final
                } else {
                    let t = step as f64 / self.total_steps as f64;
                    self.lr_initial + (self.lr_final - self.lr_initial) * t
                }
            }
        }
    }

    /// `key=value` lines describing every field.
    pub fn describe(&self) -> String {
        format!(
            "batch_size={}\nlr_initial={}\nlr_final={}\nlr_schedule={}\ntotal_steps={}\nloss={}\naugment_flip={}\nseed={}\nvalidate_every={}\ncheckpoint_every={}\n",
            self.batch_size,
            self.lr_initial,
            self.lr_final,
            self.lr_schedule,
            self.total_steps,
            self.loss,
            self.augment_flip,
            self.seed,
            self.validate_every,
            self.checkpoint_every
        )
    }
}

/// Named training setups and the model each one trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recipe {
    /// Smallnet: L1, batch 4, lr 1e-4 halved four times over the run.
    Dhisp,
    /// CSANet: Charbonnier + SSIM, lr 5e-4 decayed linearly to 1e-5,
    /// horizontal flips, batch 8.
    Aiisp,
    /// U-Net: MSE + SSIM, constant lr 1e-4, batch 4.
    Unet,
}

impl Recipe {
    pub const ALL: [Recipe; 3] = [Recipe::Dhisp, Recipe::Aiisp, Recipe::Unet];

    pub fn name(self) -> &'static str {
        match self {
            Recipe::Dhisp => "dhisp",
            Recipe::Aiisp => "aiisp",
            Recipe::Unet => "unet",
        }
    }

    pub fn model(self) -> &'static str {
        match self {
            Recipe::Dhisp => "smallnet",
            Recipe::Aiisp => "csanet",
            Recipe::Unet => "unet",
        }
    }

    pub fn config(self, total_steps: usize, seed: u64) -> TrainConfig {
        let base = TrainConfig {
            batch_size: 4,
            lr_initial: 1e-4,
            lr_final: 1e-4,
            lr_schedule: LrSchedule::Constant,
            total_steps,
            loss: LossSpec::single(LossKind::L1),
            augment_flip: false,
            seed,
            validate_every: 0,
            checkpoint_every: 0,
        };
        match self {
            Recipe::Dhisp => TrainConfig {
                lr_final: 1e-4 / 16.0,
                lr_schedule: LrSchedule::StepHalve {
                    every: (total_steps / 5).max(1),
                },
                ..base
            },
            Recipe::Aiisp => TrainConfig {
                batch_size: 8,
                lr_initial: 5e-4,
                lr_final: 1e-5,
                lr_schedule: LrSchedule::LinearDecay,
                loss: LossSpec::new(vec![(LossKind::Charbonnier, 1.0), (LossKind::Ssim, 0.5)]).expect("valid spec"),
                augment_flip: true,
                ..base
            },
            Recipe::Unet => TrainConfig {
                loss: LossSpec::new(vec![(LossKind::Mse, 1.0), (LossKind::Ssim, 0.5)]).expect("valid spec"),
                ..base
            },
        }
    }
}

impl FromStr for Recipe {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Recipe::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown recipe `{s}` (expected dhisp, aiisp or unet)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    /// Wall time since the trainer was created.
    pub seconds: f64,
}

/// Step log as CSV with header `step,lr,loss,seconds`.
pub fn log_csv(records: &[StepRecord]) -> String {
    let mut s = String::from("step,lr,loss,seconds\n");
    for r in records {
        s.push_str(&format!("{},{:e},{},{:.3}\n", r.step, r.lr, r.loss, r.seconds));
    }
    s
}

fn check_contract(model: &ModelGraph, data: &PairSet) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if model.in_channels() != 4 || model.out_channels() != 3 {
        return Err(Error::invalid(format!(
            "model `{}` maps {} -> {} channels; packed RAW to RGB needs 4 -> 3",
            model.name(),
            model.in_channels(),
            model.out_channels()
        )));
    }
    let (w, h) = (data.raws[0].width(), data.raws[0].height());
    if let Some(i) = data.raws.iter().position(|r| (r.width(), r.height()) != (w, h)) {
        return Err(Error::invalid(format!(
            "pair {i} is {}x{} but pair 0 is {w}x{h}; batches need equal sizes",
            data.raws[i].width(),
            data.raws[i].height()
        )));
    }
    let m = model.spatial_multiple();
    if (h / 2) % m != 0 || (w / 2) % m != 0 {
        return Err(Error::invalid(format!(
            "packed {}x{} input is not divisible by {m} as model `{}` requires",
            w / 2,
            h / 2,
            model.name()
        )));
    }
    Ok(())
}

/// Stateful optimizer loop over an in-memory pair set.
pub struct Trainer<'a> {
    model: ModelGraph,
    adam: AdamState,
    cfg: TrainConfig,
    data: &'a PairSet,
    step: usize,
    perm: Option<(usize, Vec<usize>)>,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(model: ModelGraph, cfg: TrainConfig, data: &'a PairSet) -> Result<Self> {
        let adam = AdamState::new(&model);
        Self::with_state(model, adam, cfg, data)
    }

    /// Continues from a saved optimizer state; the step counter resumes at
    /// `adam.step`.
    pub fn with_state(model: ModelGraph, adam: AdamState, cfg: TrainConfig, data: &'a PairSet) -> Result<Self> {
        cfg.validate()?;
        check_contract(&model, data)?;
        Ok(Trainer {
            step: adam.step as usize,
            model,
            adam,
            cfg,
            data,
            perm: None,
            started: Instant::now(),
        })
    }

    pub fn model(&self) -> &ModelGraph {
        &self.model
    }
    pub fn into_model(self) -> ModelGraph {
        self.model
    }
    pub fn step_index(&self) -> usize {
        self.step
    }
    pub fn optimizer(&self) -> &AdamState {
        &self.adam
    }

    fn sample_index(&mut self, position: usize) -> usize {
        let n = self.data.len();
        let epoch = position / n;
        if self.perm.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rng_stream(self.cfg.seed, epoch as u64));
            self.perm = Some((epoch, p));
        }
        self.perm.as_ref().expect("just set").1[position % n]
    }

    /// Packed inputs and targets for the batch of `step`.
    pub fn batch(&mut self, step: usize) -> Result<(Tensor, Tensor)> {
        let b = self.cfg.batch_size;
        let mut coins = rng_stream(self.cfg.seed, FLIP_STREAM + step as u64);
        let mut xs = Vec::with_capacity(b);
        let mut ys = Vec::with_capacity(b);
        for j in 0..b {
            let i = self.sample_index(step * b + j);
            let flip = coins.random_bool(0.5) && self.cfg.augment_flip;
            let (x, y) = augment_flip(&self.data.packed(i), &self.data.target(i), flip)?;
            xs.push(x);
            ys.push(y);
        }
        Ok((concat_batch(&xs)?, concat_batch(&ys)?))
    }

    /// Loss and per-parameter gradients of the model on one batch.
    pub fn loss_and_grads(&self, x: &Tensor, y: &Tensor) -> Result<(f64, Vec<Vec<f32>>)> {
        let mut tape = Tape::<f32>::new();
        let xv = tape.leaf(x.clone(), false);
        let params = self.model.params_on_tape(&mut tape, true);
        let out = self.model.forward_tape(&mut tape, xv, &params)?;
        let loss = composite_loss(&self.cfg.loss, tape.value(out), y)?;
        if !loss.value.is_finite() {
            return Ok((loss.value, Vec::new()));
        }
        tape.backward(out, loss.grad.into_data())?;
        let grads = params
            .iter()
            .zip(self.model.params())
            .map(|(&p, (_, t))| tape.grad(p).map_or_else(|| vec![0.0; t.len()], <[f32]>::to_vec))
            .collect();
        Ok((loss.value, grads))
    }

    /// Runs one optimizer step. A non-finite loss aborts before any update.
    pub fn step(&mut self) -> Result<StepRecord> {
        let step = self.step;
        let (x, y) = self.batch(step)?;
        let (loss, grads) = match self.loss_and_grads(&x, &y) {
            // A non-finite activation makes the loss non-finite too.
            Err(Error::NonFinite { .. }) => return Err(Error::NonFiniteLoss { step }),
            other => other?,
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let lr = self.cfg.lr_at(step);
        self.adam.apply(&mut self.model, &grads, lr)?;
        self.step += 1;
        Ok(StepRecord {
            step,
            lr,
            loss,
            seconds: self.started.elapsed().as_secs_f64(),
        })
    }

    /// Steps until `step_index() == target`, returning the records.
    pub fn run_until(&mut self, target: usize) -> Result<Vec<StepRecord>> {
        let mut out = Vec::with_capacity(target.saturating_sub(self.step));
        while self.step < target {
            out.push(self.step()?);
        }
        Ok(out)
    }

    /// Writes `{stem}.ckpt` and the matching optimizer state `{stem}.adam`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_checkpoint(&self.model, &dir.join(format!("{stem}.ckpt")))?;
        self.adam
            .to_container(&self.model)
            .write(&dir.join(format!("{stem}.adam")))
    }
}

/// Loads `{stem}.ckpt` and `{stem}.adam` written by [`Trainer::save`].
pub fn load_training_state(dir: &Path, stem: &str) -> Result<(ModelGraph, AdamState)> {
    let model = load_checkpoint(&dir.join(format!("{stem}.ckpt")))?;
    let adam = AdamState::from_container(&Container::read(&dir.join(format!("{stem}.adam")))?, &model)?;
    Ok((model, adam))
}

/// Where [`train`] writes artefacts and what it validates against.
#[derive(Default)]
pub struct TrainRun<'a> {
    pub validation: Option<&'a PairSet>,
    pub out_dir: Option<PathBuf>,
    /// Optimizer state to resume from; training continues at its step.
    pub resume: Option<AdamState>,
    /// Called after every step.
    pub on_step: Option<&'a mut dyn FnMut(&StepRecord)>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<StepRecord>,
    /// Validation results as `(step, psnr, ssim)`.
    pub validations: Vec<(usize, f64, f64)>,
    /// Step whose weights were kept, when validation ran.
    pub best_step: Option<usize>,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> Option<f64> {
        self.log.first().map(|r| r.loss)
    }
    pub fn final_loss(&self) -> Option<f64> {
        self.log.last().map(|r| r.loss)
    }
}

/// Full training run: steps, periodic checkpoints and validation, and at the
/// end the weights with the best validation PSNR.
///
/// With an output directory this writes `train_log.csv`, `step_NNNNNN.ckpt`
/// / `.adam` every `checkpoint_every` steps, `best.ckpt` and `final.ckpt`.
/// On a non-finite loss the error is returned and earlier checkpoints stay
/// on disk.
pub fn train(
    model: ModelGraph,
    data: &PairSet,
    cfg: &TrainConfig,
    run: TrainRun<'_>,
) -> Result<(ModelGraph, TrainOutcome)> {
    let TrainRun {
        validation,
        out_dir,
        resume,
        mut on_step,
    } = run;
    let adam = resume.unwrap_or_else(|| AdamState::new(&model));
    let mut trainer = Trainer::with_state(model, adam, cfg.clone(), data)?;
    let mut outcome = TrainOutcome {
        log: Vec::with_capacity(cfg.total_steps),
        validations: Vec::new(),
        best_step: None,
    };
    let mut best: Option<(f64, ModelGraph)> = None;
    let write_log = |log: &[StepRecord]| -> Result<()> {
        if let Some(dir) = &out_dir {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("train_log.csv"), log_csv(log))?;
        }
        Ok(())
    };
    while trainer.step_index() < cfg.total_steps {
        let rec = match trainer.step() {
            Ok(r) => r,
            Err(e) => {
                write_log(&outcome.log)?;
                return Err(e);
            }
        };
        outcome.log.push(rec);
        if let Some(f) = on_step.as_mut() {
            f(&rec);
        }
        let done = trainer.step_index();
        if let Some(dir) = &out_dir {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                trainer.save(dir, &format!("step_{done:06}"))?;
                write_log(&outcome.log)?;
            }
        }
        let validate_now = cfg.validate_every > 0 && (done % cfg.validate_every == 0 || done == cfg.total_steps);
        if let (Some(val), true) = (validation, validate_now) {
            let r = evaluate(trainer.model(), val)?;
            outcome.validations.push((done, r.psnr, r.ssim));
            if best.as_ref().is_none_or(|(p, _)| r.psnr > *p) {
                best = Some((r.psnr, trainer.model().clone()));
                outcome.best_step = Some(done);
            }
        }
    }
    write_log(&outcome.log)?;
    let last = trainer.into_model();
    let model = best.map_or(last.clone(), |(_, m)| m);
    if let Some(dir) = &out_dir {
        save_checkpoint(&last, &dir.join("final.ckpt"))?;
        save_checkpoint(&model, &dir.join("best.ckpt"))?;
    }
    Ok((model, outcome))
}

/// Anything that maps packed RAW `(N, 4, h, w)` to sRGB `(N, 3, 2h, 2w)`.
pub trait Predictor: Sync {
    fn predict(&self, packed: &Tensor) -> Result<Tensor>;
}

impl Predictor for ModelGraph {
    fn predict(&self, packed: &Tensor) -> Result<Tensor> {
        ModelGraph::predict(self, packed)
    }
}

impl Predictor for BilinearBaseline {
    fn predict(&self, packed: &Tensor) -> Result<Tensor> {
        BilinearBaseline::predict(self, packed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub psnr: f64,
    pub ssim: f64,
    pub count: usize,
}

/// Mean PSNR and SSIM over all pairs, on outputs clamped to `[0, 1]`. Pairs
/// are scored independently and averaged in index order.
pub fn evaluate(predictor: &(impl Predictor + ?Sized), data: &PairSet) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let scores: Vec<(f64, f64)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let pred = predictor.predict(&data.packed(i))?.map(|v| v.clamp(0.0, 1.0));
            let target = data.target(i);
            Ok((psnr(&pred, &target)?, ssim(&pred, &target)?.value))
        })
        .collect::<Result<_>>()?;
    let n = scores.len() as f64;
    Ok(EvalResult {
        psnr: scores.iter().map(|s| s.0).sum::<f64>() / n,
        ssim: scores.iter().map(|s| s.1).sum::<f64>() / n,
        count: scores.len(),
    })
}
