//! Two-phase training: the dual-stream generator on `λ₁·L_S + λ₂·L_D`,
//! then adversarial fine-tuning against a weight-clipped Wasserstein
//! critic. Also batch evaluation with timing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::image::{load_image, save_image, Image};
use crate::losses::{detail_loss, structure_loss, total_loss, wgan_losses, LossWeights};
use crate::metrics::{ImageScores, Metric, MetricReport, MetricsConfig};
use crate::models::{ModelBundle, ModelConfig};
use crate::seed;
use crate::synth::{random_crop_pair, Pair};
use crate::tensor::{no_grad, rmsprop_step, Tensor};
use crate::wavelet::dwt2_tensor;

/// When critic updates happen during adversarial training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticSchedule {
    /// `critic_steps_per_gen` critic updates before every generator update.
    PerBatch,
    /// `critic_steps_per_gen` critic-only passes over the data before each
    /// generator pass.
    PerEpoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    /// Side of the square random training crops.
    pub crop_size: usize,
    pub lr_structure: f64,
    pub lr_detail: f64,
    pub lr_critic: f64,
    pub rmsprop_smoothing: f64,
    pub rmsprop_eps: f64,
    pub weights: LossWeights,
    pub critic_steps_per_gen: usize,
    pub critic_schedule: CriticSchedule,
    pub phase1_epochs: usize,
    /// Ignored when the model has no critic.
    pub phase2_epochs: usize,
    /// Per-epoch checkpoints kept on disk (older ones are deleted).
    pub keep_checkpoints: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            batch_size: 4,
            crop_size: 64,
            lr_structure: 0.0005,
            lr_detail: 0.00002,
            lr_critic: 0.00005,
            rmsprop_smoothing: 0.9,
            rmsprop_eps: 1e-8,
            weights: LossWeights::default(),
            critic_steps_per_gen: 5,
            critic_schedule: CriticSchedule::PerBatch,
            phase1_epochs: 300,
            phase2_epochs: 50,
            keep_checkpoints: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        for (name, lr) in [
            ("lr_structure", self.lr_structure),
            ("lr_detail", self.lr_detail),
            ("lr_critic", self.lr_critic),
        ] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {lr}")));
            }
        }
        if !(0.0..1.0).contains(&self.rmsprop_smoothing) || !(self.rmsprop_eps > 0.0) {
            return Err(Error::Config("rmsprop_smoothing must lie in [0, 1) and rmsprop_eps be positive".into()));
        }
        let m = model.size_multiple();
        if self.crop_size == 0 || self.crop_size % m != 0 {
            return Err(Error::Config(format!(
                "crop_size {} must be a positive multiple of {m} for this model",
                self.crop_size
            )));
        }
        let structure_side = if model.dwt { self.crop_size / 2 } else { self.crop_size };
        if self.weights.alpha > 0.0 && structure_side < crate::losses::SSIM_WINDOW {
            return Err(Error::Config(format!(
                "crop_size {} gives a {structure_side}px structure target, below the {}px MS-SSIM window",
                self.crop_size,
                crate::losses::SSIM_WINDOW
            )));
        }
        if model.gan && self.crop_size < m.max(1 << model.critic.layers) {
            return Err(Error::Config(format!(
                "crop_size {} is smaller than the critic's minimum input {}",
                self.crop_size,
                1 << model.critic.layers
            )));
        }
        Ok(())
    }

    fn optim(&self) -> (f64, f64) {
        (self.rmsprop_smoothing, self.rmsprop_eps)
    }
}

/// Losses of one optimizer step (or the mean over an epoch).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub l_s: f64,
    pub l_d: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_adv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic: Option<f64>,
    /// `λ₁·L_S + λ₂·L_D (+ λ₃·L_adv)` as optimized.
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochLosses {
    pub epoch: usize,
    /// Global step count at the end of the epoch.
    pub step: u64,
    pub phase: u8,
    pub losses: StepLosses,
}

/// Everything needed to continue training besides the parameters.
/// Shuffling and crops derive from `(seed, epoch)`, so no RNG state is kept.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub global_step: u64,
    pub history: Vec<EpochLosses>,
    /// Epoch with the lowest mean total loss so far.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_total: Option<f64>,
}

impl TrainState {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("state is always representable as TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Checkpoint(format!("training state: {}", e.message())))
    }

    fn record(&mut self, row: EpochLosses) {
        if self.best_total.is_none_or(|b| row.losses.total < b) {
            self.best_total = Some(row.losses.total);
            self.best_epoch = Some(row.epoch);
        }
        self.epoch = row.epoch;
        self.global_step = row.step;
        self.history.push(row);
    }
}

pub const LOSS_LOG_FILE: &str = "losses.tsv";
pub const LOSS_LOG_HEADER: [&str; 6] = ["epoch", "step", "L_S", "L_D", "L_adv", "critic_loss"];

/// Loss log text for a training history.
pub fn loss_log(history: &[EpochLosses]) -> String {
    let mut s = LOSS_LOG_HEADER.join("\t");
    s.push('\n');
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.9}"));
    for r in history {
        let l = &r.losses;
        let _ = writeln!(
            s,
            "{}\t{}\t{:.9}\t{:.9}\t{}\t{}",
            r.epoch,
            r.step,
            l.l_s,
            l.l_d,
            opt(l.l_adv),
            opt(l.critic)
        );
    }
    s
}

/// Degraded and clean images of one batch, `N×3×S×S`.
pub struct Batch {
    pub degraded: Tensor<f32>,
    pub clean: Tensor<f32>,
}

impl Batch {
    pub fn from_images(degraded: &[&Image], clean: &[&Image]) -> Result<Self> {
        Ok(Batch {
            degraded: Image::batch_tensor(degraded)?,
            clean: Image::batch_tensor(clean)?,
        })
    }
}

/// Shuffled, cropped batches for one epoch; a function of `(seed, epoch)`.
pub fn epoch_batches(pairs: &[Pair], config: &TrainConfig, epoch: usize) -> Result<Vec<Batch>> {
    let mut rng = seed::stream(config.seed, &format!("epoch{epoch}"));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let mut batches = Vec::new();
    for chunk in order.chunks(config.batch_size) {
        let mut deg = Vec::with_capacity(chunk.len());
        let mut cln = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let (c, d) = random_crop_pair(&pairs[i].clean, &pairs[i].degraded, config.crop_size, rng.random())?;
            cln.push(c);
            deg.push(d);
        }
        let dr: Vec<&Image> = deg.iter().collect();
        let cr: Vec<&Image> = cln.iter().collect();
        batches.push(Batch::from_images(&dr, &cr)?);
    }
    Ok(batches)
}

fn value(t: &Tensor<f32>) -> f64 {
    t.item() as f64
}

struct GeneratorLosses {
    l_s: Tensor<f32>,
    l_d: Tensor<f32>,
    l_adv: Option<Tensor<f32>>,
    total: Tensor<f32>,
}

fn generator_losses(bundle: &ModelBundle<f32>, batch: &Batch, weights: &LossWeights, adversarial: bool) -> Result<GeneratorLosses> {
    let out = bundle.generate(&batch.degraded)?;
    let (l_s, l_d) = match &out.details {
        Some(details) => {
            let [gll, glh, ghl, ghh] = dwt2_tensor(&batch.clean)?;
            let l_s = structure_loss(&out.structure, &gll, weights.alpha, 2.0)?;
            let l_d = detail_loss(&details[0], &glh)?
                .add(&detail_loss(&details[1], &ghl)?)?
                .add(&detail_loss(&details[2], &ghh)?)?;
            (l_s, l_d)
        }
        None => (
            structure_loss(&out.structure, &batch.clean, weights.alpha, 1.0)?,
            detail_loss(&out.image, &batch.clean)?,
        ),
    };
    let l_adv = if adversarial {
        let scores = bundle.critic_forward(&out.image)?;
        Some(wgan_losses(&scores, &scores)?.1)
    } else {
        None
    };
    let total = total_loss(&l_s, &l_d, l_adv.as_ref(), weights)?;
    Ok(GeneratorLosses { l_s, l_d, l_adv, total })
}

fn check_finite(losses: &StepLosses) -> Result<()> {
    let all = [Some(losses.l_s), Some(losses.l_d), losses.l_adv, losses.critic, Some(losses.total)];
    if all.iter().flatten().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite loss: {losses:?}")))
    }
}

fn zero_all(bundle: &ModelBundle<f32>) {
    for p in bundle.params() {
        p.zero_grad();
    }
}

/// One generator update. `adversarial` adds the `λ₃·L_adv` term.
pub fn train_step_generator(bundle: &mut ModelBundle<f32>, batch: &Batch, config: &TrainConfig, adversarial: bool) -> Result<StepLosses> {
    zero_all(bundle);
    let g = generator_losses(bundle, batch, &config.weights, adversarial)?;
    let losses = StepLosses {
        l_s: value(&g.l_s),
        l_d: value(&g.l_d),
        l_adv: g.l_adv.as_ref().map(value),
        critic: None,
        total: value(&g.total),
    };
    check_finite(&losses)?;
    if g.total.requires_grad() {
        g.total.backward()?;
    }
    let (rho, eps) = config.optim();
    if !bundle.hooks.structure_passthrough {
        rmsprop_step(bundle.structure.params_mut(), config.lr_structure, rho, eps)?;
    }
    if let Some(d) = bundle.detail.as_mut() {
        rmsprop_step(d.params_mut(), config.lr_detail, rho, eps)?;
    }
    // L_adv also reaches the critic's weights; those gradients are discarded.
    zero_all(bundle);
    Ok(losses)
}

/// Phase-1 step: joint backward of `λ₁·L_S + λ₂·L_D`, then one RMSProp
/// update per sub-network at its own learning rate.
pub fn train_step_dual(bundle: &mut ModelBundle<f32>, batch: &Batch, config: &TrainConfig) -> Result<StepLosses> {
    train_step_generator(bundle, batch, config, false)
}

/// One critic update on a fixed generator output, followed by clipping.
/// Returns the critic loss before the update.
pub fn critic_step(bundle: &mut ModelBundle<f32>, real: &Tensor<f32>, fake: &Tensor<f32>, config: &TrainConfig) -> Result<f64> {
    zero_all(bundle);
    let (loss, _) = wgan_losses(&bundle.critic_forward(real)?, &bundle.critic_forward(fake)?)?;
    let v = value(&loss);
    if !v.is_finite() {
        return Err(Error::Numeric(format!("non-finite critic loss {v}")));
    }
    loss.backward()?;
    let (rho, eps) = config.optim();
    let critic = bundle
        .critic
        .as_mut()
        .ok_or_else(|| Error::Usage("adversarial training needs a critic".into()))?;
    rmsprop_step(critic.params_mut(), config.lr_critic, rho, eps)?;
    critic.clip()?;
    Ok(v)
}

/// Generator output for critic training, without a graph.
pub fn generate_detached(bundle: &ModelBundle<f32>, degraded: &Tensor<f32>) -> Result<Tensor<f32>> {
    no_grad(|| bundle.generate(degraded).map(|g| g.image))
}

/// Phase-2 step: `critic_steps_per_gen` critic updates against the current
/// generator output, then one generator update on the full objective.
pub fn train_step_gan(bundle: &mut ModelBundle<f32>, batch: &Batch, config: &TrainConfig) -> Result<StepLosses> {
    let fake = generate_detached(bundle, &batch.degraded)?;
    let mut critic_total = 0.0;
    for _ in 0..config.critic_steps_per_gen {
        critic_total += critic_step(bundle, &batch.clean, &fake, config)?;
    }
    let mut losses = train_step_generator(bundle, batch, config, true)?;
    if config.critic_steps_per_gen > 0 {
        losses.critic = Some(critic_total / config.critic_steps_per_gen as f64);
    }
    Ok(losses)
}

fn mean_losses(steps: &[StepLosses], critic: &[f64]) -> StepLosses {
    let n = steps.len().max(1) as f64;
    let avg = |f: &dyn Fn(&StepLosses) -> f64| steps.iter().map(f).sum::<f64>() / n;
    let adv: Vec<f64> = steps.iter().filter_map(|s| s.l_adv).collect();
    StepLosses {
        l_s: avg(&|s| s.l_s),
        l_d: avg(&|s| s.l_d),
        l_adv: (!adv.is_empty()).then(|| adv.iter().sum::<f64>() / adv.len() as f64),
        critic: (!critic.is_empty()).then(|| critic.iter().sum::<f64>() / critic.len() as f64),
        total: avg(&|s| s.total),
    }
}

/// Runs one epoch and returns its mean losses.
pub fn train_epoch(bundle: &mut ModelBundle<f32>, pairs: &[Pair], config: &TrainConfig, epoch: usize, phase: u8) -> Result<(StepLosses, u64)> {
    let batches = epoch_batches(pairs, config, epoch)?;
    let mut steps = Vec::with_capacity(batches.len());
    let mut critic = Vec::new();
    let per_epoch = phase == 2 && config.critic_schedule == CriticSchedule::PerEpoch;
    if per_epoch {
        for _ in 0..config.critic_steps_per_gen {
            for b in &batches {
                let fake = generate_detached(bundle, &b.degraded)?;
                critic.push(critic_step(bundle, &b.clean, &fake, config)?);
            }
        }
    }
    for b in &batches {
        let s = if phase == 1 {
            train_step_dual(bundle, b, config)
        } else if per_epoch {
            train_step_generator(bundle, b, config, true)
        } else {
            train_step_gan(bundle, b, config)
        };
        let s = s.map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {}: {m}", steps.len())),
            other => other,
        })?;
        if let Some(c) = s.critic {
            critic.push(c);
        }
        steps.push(s);
    }
    Ok((mean_losses(&steps, &critic), batches.len() as u64))
}

/// Where [`train`] writes.
pub struct TrainOutput<'a> {
    pub dir: &'a Path,
    /// Replace existing checkpoints and logs in `dir`.
    pub overwrite: bool,
}

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:04}.ckpt")
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";

fn existing_outputs(dir: &Path) -> Vec<PathBuf> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut v: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "ckpt") || p.file_name().is_some_and(|n| n == LOSS_LOG_FILE)
        })
        .collect();
    v.sort();
    v
}

fn dump_batch(dir: &Path, epoch: usize, pairs: &[Pair], config: &TrainConfig) -> Option<PathBuf> {
    let dump = dir.join(format!("nan-dump-epoch{epoch:04}"));
    std::fs::create_dir_all(&dump).ok()?;
    let batches = epoch_batches(pairs, config, epoch).ok()?;
    for (bi, b) in batches.iter().enumerate() {
        for (kind, t) in [("degraded", &b.degraded), ("clean", &b.clean)] {
            for i in 0..t.shape()[0] {
                let img = Image::from_tensor(t, i).ok()?;
                save_image(dump.join(format!("batch{bi}-{i}-{kind}.png")), &img).ok()?;
            }
        }
    }
    Some(dump)
}

/// Full two-phase training. Writes a checkpoint per epoch (keeping the last
/// `keep_checkpoints`), the loss log, and `final.ckpt`. With `resume`, the
/// checkpoint's configuration is used except for the epoch counts.
pub fn train(
    pairs: &[Pair],
    config: &RunConfig,
    out: TrainOutput<'_>,
    resume: Option<Checkpoint>,
    mut on_epoch: impl FnMut(&EpochLosses),
) -> Result<Checkpoint> {
    if pairs.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let (run, mut bundle, mut state) = match resume {
        Some(ckpt) => {
            let mut run = ckpt.config.clone();
            run.train.phase1_epochs = config.train.phase1_epochs;
            run.train.phase2_epochs = config.train.phase2_epochs;
            (run, ckpt.restore()?, ckpt.state)
        }
        None => {
            let existing = existing_outputs(out.dir);
            if !existing.is_empty() && !out.overwrite {
                return Err(Error::Usage(format!(
                    "{} already holds training output (pass --force to overwrite or --resume to continue)",
                    out.dir.display()
                )));
            }
            for p in existing {
                std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
            let bundle = ModelBundle::new(&config.model, config.train.seed)?;
            (config.clone(), bundle, TrainState::default())
        }
    };
    run.validate()?;
    let tc = run.train.clone();
    for p in pairs {
        if p.clean.height() < tc.crop_size || p.clean.width() < tc.crop_size {
            return Err(Error::Domain(format!(
                "{} is {}x{}, smaller than crop_size {}",
                p.variant,
                p.clean.height(),
                p.clean.width(),
                tc.crop_size
            )));
        }
    }
    std::fs::create_dir_all(out.dir).map_err(|e| Error::io(out.dir, e))?;
    let phase2 = if run.model.gan { tc.phase2_epochs } else { 0 };
    let total_epochs = tc.phase1_epochs + phase2;
    for epoch in state.epoch + 1..=total_epochs {
        let phase = if epoch <= tc.phase1_epochs { 1 } else { 2 };
        let (losses, steps) = match train_epoch(&mut bundle, pairs, &tc, epoch, phase) {
            Ok(v) => v,
            Err(Error::Numeric(m)) => {
                let dump = dump_batch(out.dir, epoch, pairs, &tc);
                let at = dump.map_or_else(String::new, |d| format!("; batch inputs written to {}", d.display()));
                return Err(Error::Numeric(format!("{m}{at}")));
            }
            Err(e) => return Err(e),
        };
        let row = EpochLosses {
            epoch,
            step: state.global_step + steps,
            phase,
            losses,
        };
        on_epoch(&row);
        state.record(row);
        let log = out.dir.join(LOSS_LOG_FILE);
        std::fs::write(&log, loss_log(&state.history)).map_err(|e| Error::io(&log, e))?;
        Checkpoint::capture(&run, &bundle, &state).save(&out.dir.join(epoch_checkpoint_name(epoch)))?;
        if epoch > tc.keep_checkpoints {
            let old = out.dir.join(epoch_checkpoint_name(epoch - tc.keep_checkpoints));
            if old.exists() {
                std::fs::remove_file(&old).map_err(|e| Error::io(&old, e))?;
            }
        }
    }
    let ckpt = Checkpoint::capture(&run, &bundle, &state);
    ckpt.save(&out.dir.join(FINAL_CHECKPOINT))?;
    Ok(ckpt)
}

/// Matches prediction files to reference files by file name. Fails with
/// the unmatched names on either side.
pub fn pair_by_name(preds: &[PathBuf], refs: &[PathBuf]) -> Result<Vec<(PathBuf, PathBuf)>> {
    let name = |p: &PathBuf| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut pairs = Vec::new();
    let mut missing_ref = Vec::new();
    for p in preds {
        match refs.iter().find(|r| name(r) == name(p)) {
            Some(r) => pairs.push((p.clone(), r.clone())),
            None => missing_ref.push(name(p)),
        }
    }
    let missing_pred: Vec<String> = refs
        .iter()
        .filter(|r| !preds.iter().any(|p| name(p) == name(r)))
        .map(name)
        .collect();
    if !missing_ref.is_empty() || !missing_pred.is_empty() {
        return Err(Error::Usage(format!(
            "prediction/reference sets differ; without reference: [{}]; without prediction: [{}]",
            missing_ref.join(", "),
            missing_pred.join(", ")
        )));
    }
    Ok(pairs)
}

/// Scores images, optionally enhancing them first. `references`, when
/// given, is aligned with `inputs`. Unreadable images are skipped and
/// listed; when a model is given, each row records its enhancement time.
pub fn evaluate(
    bundle: Option<&ModelBundle<f32>>,
    inputs: &[PathBuf],
    references: Option<&[PathBuf]>,
    metrics: &[Metric],
    config: &MetricsConfig,
) -> Result<MetricReport> {
    if let Some(m) = metrics.iter().find(|m| m.needs_reference()) {
        if references.is_none() {
            return Err(Error::Usage(format!("metric {m} needs reference images")));
        }
    }
    if let Some(r) = references {
        if r.len() != inputs.len() {
            return Err(Error::Usage("inputs and references differ in count".into()));
        }
    }
    let mut report = MetricReport::new(metrics.to_vec());
    for (i, path) in inputs.iter().enumerate() {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let scored = (|| -> Result<ImageScores> {
            let img = load_image(path)?;
            let reference = references.map(|r| load_image(&r[i])).transpose()?;
            let (img, seconds) = match bundle {
                Some(b) => {
                    let t = Instant::now();
                    let out = b.enhance(&img)?;
                    (out, Some(t.elapsed().as_secs_f64()))
                }
                None => (img, None),
            };
            let values = metrics
                .iter()
                .map(|m| m.score_with(&img, reference.as_ref(), config))
                .collect::<Result<Vec<_>>>()?;
            Ok(ImageScores { name: name.clone(), values, seconds })
        })();
        match scored {
            Ok(row) => report.rows.push(row),
            Err(e @ (Error::Io { .. } | Error::Image { .. })) => report.skipped.push((name, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}
