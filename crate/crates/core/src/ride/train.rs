use rand::seq::index;
use rand::Rng;

use crate::error::{ensure, Error, Result};
use crate::eval::loglik_rate;
use crate::imaging::{Image, NeighborhoodSpec};
use crate::mcgsm::{McgsmParams, Sample};
use crate::optim::{lbfgs_minimize, LbfgsConfig, LbfgsStatus, SgdState};
use crate::rng::{child_seed, stream};

use super::{RideModel, WhiteningTransform};

/// (context, pixel) pairs drawn uniformly without replacement from all pixel
/// positions of `images`, contexts zero padded at the borders. `count =
/// None`, or a count at least the number of pixels, returns every pair in
/// raster order.
pub fn collect_pairs<R: Rng + ?Sized>(
    images: &[Image],
    spec: &NeighborhoodSpec,
    count: Option<usize>,
    rng: &mut R,
) -> Vec<Sample> {
    let offsets: Vec<usize> = images
        .iter()
        .scan(0, |acc, im| {
            let start = *acc;
            *acc += im.len();
            Some(start)
        })
        .collect();
    let total: usize = images.iter().map(|im| im.len()).sum();
    let mut picks: Vec<usize> = match count {
        Some(n) if n < total => index::sample(rng, total, n).into_vec(),
        _ => (0..total).collect(),
    };
    picks.sort_unstable();
    picks
        .into_iter()
        .map(|flat| {
            let k = offsets.partition_point(|&o| o <= flat) - 1;
            let im = &images[k];
            let local = flat - offsets[k];
            let (i, j) = (local / im.width(), local % im.width());
            let mut ctx = vec![0.0; spec.dim()];
            spec.fill_context(im, i, j, &mut ctx);
            Sample { ctx, y: im.get(i, j) }
        })
        .collect()
}

fn whiten_pairs(wt: &WhiteningTransform, pairs: &[Sample]) -> Vec<Sample> {
    pairs
        .iter()
        .map(|s| {
            let mut ctx = vec![0.0; s.ctx.len()];
            wt.whiten_context(&s.ctx, &mut ctx);
            let y = wt.whiten_value(&ctx, s.y);
            Sample { ctx, y }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct McgsmTrainConfig {
    pub neighborhood: NeighborhoodSpec,
    pub components: usize,
    pub scales: usize,
    pub features: usize,
    pub max_iterations: usize,
    /// Training pairs to sample; `None` uses every pixel.
    pub train_pairs: Option<usize>,
    /// Validation pairs for early stopping; `None` uses every pixel.
    pub val_pairs: Option<usize>,
    /// Iterations between validation checks.
    pub val_interval: usize,
    /// Stop after this many checks without validation improvement.
    pub patience: usize,
}

impl Default for McgsmTrainConfig {
    fn default() -> Self {
        McgsmTrainConfig {
            neighborhood: NeighborhoodSpec::with_height(9, 5).unwrap(),
            components: 32,
            scales: 1,
            features: 32,
            max_iterations: 3000,
            train_pairs: Some(1_000_000),
            val_pairs: Some(100_000),
            val_interval: 25,
            patience: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McgsmTrainLog {
    /// Mean negative log-likelihood of the whitened training pairs.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    /// (iteration, mean validation log-likelihood in pixel space, nats).
    pub validation: Vec<(usize, f64)>,
    pub stopped_early: bool,
}

/// Fits whitening and an MCGSM to pixel neighborhoods of `train`,
/// minimizing the mean negative log-likelihood with L-BFGS. With validation
/// images, the parameters scoring best on validation pairs are returned.
pub fn train_mcgsm<R: Rng + ?Sized>(
    train: &[Image],
    val: &[Image],
    cfg: &McgsmTrainConfig,
    rng: &mut R,
) -> Result<(McgsmParams, WhiteningTransform, McgsmTrainLog)> {
    ensure!(!train.is_empty(), "no training images");
    ensure!(cfg.val_interval >= 1, "validation interval must be positive");
    let spec = &cfg.neighborhood;
    let pairs = collect_pairs(train, spec, cfg.train_pairs, rng);
    let whitening = WhiteningTransform::fit(&pairs)?;
    let pairs = whiten_pairs(&whitening, &pairs);
    let val_pairs = whiten_pairs(&whitening, &collect_pairs(val, spec, cfg.val_pairs, rng));
    let mut params = McgsmParams::init(spec.dim(), cfg.components, cfg.scales, cfg.features, rng)?;

    let mut scratch = params.clone();
    let objective = |x: &[f64], g: &mut [f64]| -> f64 {
        scratch.read_flat(x);
        match scratch.neg_loglik_grad(&pairs) {
            Ok((loss, grad)) if loss.is_finite() => {
                g.copy_from_slice(&grad.to_flat());
                loss
            }
            _ => f64::INFINITY,
        }
    };
    let initial_loss = -params.mean_log_likelihood(&pairs)?;
    let template = params.clone();
    let score = |flat: &[f64]| -> Result<f64> {
        let mut p = template.clone();
        p.read_flat(flat);
        Ok(p.mean_log_likelihood(&val_pairs)? + whitening.log_jacobian)
    };
    let mut validation = Vec::new();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut since_best = 0;
    let mut early = false;
    let mut monitor_error = None;
    if !val_pairs.is_empty() {
        let flat = params.to_flat();
        let s = score(&flat)?;
        validation.push((0, s));
        best = Some((s, flat));
    }
    let lbfgs = LbfgsConfig {
        max_iterations: cfg.max_iterations,
        gradient_tolerance: 1e-7,
        value_tolerance: 1e-10,
        ..LbfgsConfig::default()
    };
    let result = lbfgs_minimize(objective, &params.to_flat(), &lbfgs, |iter, x, _| {
        if val_pairs.is_empty() || iter % cfg.val_interval != 0 {
            return true;
        }
        let s = match score(x) {
            Ok(s) => s,
            Err(e) => {
                monitor_error = Some(e);
                return false;
            }
        };
        validation.push((iter, s));
        match &best {
            Some((b, _)) if s <= *b => {
                since_best += 1;
                if since_best >= cfg.patience {
                    early = true;
                    return false;
                }
            }
            _ => {
                best = Some((s, x.to_vec()));
                since_best = 0;
            }
        }
        true
    })?;
    if let Some(e) = monitor_error {
        return Err(e);
    }
    let final_flat = match best {
        Some((b, flat)) => {
            let last = score(&result.params)?;
            if last > b {
                result.params.clone()
            } else {
                flat
            }
        }
        None => result.params.clone(),
    };
    params.read_flat(&final_flat);
    let final_loss = -params.mean_log_likelihood(&pairs)?;
    let log = McgsmTrainLog {
        initial_loss,
        final_loss,
        iterations: result.iterations,
        validation,
        stopped_early: early || result.status == LbfgsStatus::Stopped,
    };
    Ok((params, whitening, log))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub batch_size: usize,
    pub momentum: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub epochs: usize,
    /// Patch side per epoch.
    pub patch_sizes: Vec<usize>,
    /// Upper bound on L-BFGS iterations when finetuning the head after each
    /// epoch. Zero skips finetuning.
    pub finetune_iters: usize,
    /// Head training pairs used for finetuning; `None` uses every pixel.
    pub finetune_pairs: Option<usize>,
    pub early_stop_patience: usize,
    /// SGD steps per epoch; `None` means one pass over the training pixels.
    pub batches_per_epoch: Option<usize>,
    /// Side of the validation patches (clipped to the validation images).
    pub val_patch: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            batch_size: 50,
            momentum: 0.9,
            lr_start: 1.0,
            lr_end: 1e-4,
            epochs: 8,
            patch_sizes: (0..8).map(|k| 8 + 2 * k).collect(),
            finetune_iters: 500,
            finetune_pairs: Some(100_000),
            early_stop_patience: 2,
            batches_per_epoch: None,
            val_patch: 64,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, "batch size must be positive");
        ensure!((0.0..1.0).contains(&self.momentum), "momentum must lie in [0, 1)");
        ensure!(
            self.lr_start > 0.0 && self.lr_end > 0.0 && self.lr_end <= self.lr_start,
            "learning rates need 0 < lr_end <= lr_start, got {} and {}",
            self.lr_start,
            self.lr_end
        );
        ensure!(
            self.patch_sizes.len() == self.epochs,
            "{} patch sizes for {} epochs",
            self.patch_sizes.len(),
            self.epochs
        );
        ensure!(self.patch_sizes.iter().all(|&p| p >= 1), "patch sizes must be positive");
        ensure!(
            self.patch_sizes.windows(2).all(|w| w[0] <= w[1]),
            "patch sizes must be non-decreasing"
        );
        ensure!(self.early_stop_patience >= 1, "early stopping patience must be positive");
        ensure!(self.val_patch >= 1, "validation patch side must be positive");
        ensure!(self.batches_per_epoch != Some(0), "batches per epoch must be positive");
        Ok(())
    }

    /// Geometric interpolation from `lr_start` (first epoch) to `lr_end`
    /// (last epoch).
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_start;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub patch_size: usize,
    pub batches: usize,
    /// Mean negative log-likelihood per pixel over the epoch's batches, nats.
    pub train_loss: f64,
    pub finetune_iterations: usize,
    /// Validation log-likelihood rate after the epoch, bit/px.
    pub val_rate: Option<f64>,
}

fn validation_rate(model: &RideModel, val: &[Image], side: usize) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let side = val
        .iter()
        .map(|im| im.height().min(im.width()))
        .min()
        .unwrap()
        .min(side);
    loglik_rate(model, val, side).map(Some)
}

fn random_patch<R: Rng + ?Sized>(images: &[Image], side: usize, rng: &mut R) -> Result<Image> {
    let im = &images[rng.random_range(0..images.len())];
    let top = rng.random_range(0..=im.height() - side);
    let left = rng.random_range(0..=im.width() - side);
    im.crop(top, left, side, side)
}

/// Finetunes the head with L-BFGS on (h ⊕ x̂, ŷ) pairs, holding the SLSTM
/// layers fixed. Returns the number of iterations used.
fn finetune_head<R: Rng + ?Sized>(
    model: &mut RideModel,
    train: &[Image],
    iters: usize,
    pairs: Option<usize>,
    rng: &mut R,
) -> Result<usize> {
    let per_image = crate::par::map(train, |im| model.head_samples(im));
    let mut all = Vec::new();
    for s in per_image {
        all.extend(s?);
    }
    let samples = match pairs {
        Some(n) if n < all.len() => {
            let mut picks = index::sample(rng, all.len(), n).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|k| all[k].clone()).collect()
        }
        _ => all,
    };
    let mut scratch = model.head.clone();
    let objective = |x: &[f64], g: &mut [f64]| -> f64 {
        scratch.read_flat(x);
        match scratch.neg_loglik_grad(&samples) {
            Ok((loss, grad)) if loss.is_finite() => {
                g.copy_from_slice(&grad.to_flat());
                loss
            }
            _ => f64::INFINITY,
        }
    };
    let cfg = LbfgsConfig {
        max_iterations: iters,
        gradient_tolerance: 1e-7,
        value_tolerance: 1e-10,
        ..LbfgsConfig::default()
    };
    let result = lbfgs_minimize(objective, &model.head.to_flat(), &cfg, |_, _, _| true)?;
    model.head.read_flat(&result.params);
    Ok(result.iterations)
}

/// Trains all parameters with momentum SGD on random patches, finetuning the
/// head with L-BFGS after every epoch. With validation images, the snapshot
/// with the best validation rate is returned and training stops after
/// `early_stop_patience` epochs without improvement.
pub fn train_ride<R: Rng + ?Sized>(
    mut model: RideModel,
    train: &[Image],
    val: &[Image],
    schedule: &TrainSchedule,
    rng: &mut R,
) -> Result<(RideModel, Vec<EpochLog>)> {
    schedule.validate()?;
    model.validate()?;
    let mut logs = Vec::new();
    if schedule.epochs == 0 {
        return Ok((model, logs));
    }
    ensure!(!train.is_empty(), "no training images");
    let smallest = train.iter().map(|im| im.height().min(im.width())).min().unwrap();
    let largest_patch = *schedule.patch_sizes.iter().max().unwrap();
    ensure!(
        largest_patch <= smallest,
        "patch size {largest_patch} exceeds the smallest training image side {smallest}"
    );
    let seed = child_seed(rng);
    let train_pixels: usize = train.iter().map(|im| im.len()).sum();

    let mut best_rate = validation_rate(&model, val, schedule.val_patch)?;
    let mut best = model.clone();
    let mut since_best = 0;
    let mut sgd = SgdState::new(model.num_params(), schedule.momentum, schedule.lr_start)?;
    let mut params = model.to_flat();

    for epoch in 0..schedule.epochs {
        let side = schedule.patch_sizes[epoch];
        sgd.learning_rate = schedule.learning_rate(epoch);
        let batches = schedule
            .batches_per_epoch
            .unwrap_or_else(|| train_pixels.div_ceil(schedule.batch_size * side * side));
        let mut loss_sum = 0.0;
        for batch in 0..batches {
            let mut brng = stream(seed, &[epoch as u64, batch as u64]);
            let patches = (0..schedule.batch_size)
                .map(|_| random_patch(train, side, &mut brng))
                .collect::<Result<Vec<_>>>()?;
            let (loss, grad) = model.neg_loglik_grad(&patches)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch, loss });
            }
            loss_sum += loss;
            sgd.step(&mut params, &grad.to_flat())?;
            model.set_flat(&params)?;
        }
        let finetune_iterations = if schedule.finetune_iters > 0 {
            let mut frng = stream(seed, &[epoch as u64, u64::MAX]);
            let n = finetune_head(&mut model, train, schedule.finetune_iters, schedule.finetune_pairs, &mut frng)?;
            params = model.to_flat();
            n
        } else {
            0
        };
        let val_rate = validation_rate(&model, val, schedule.val_patch)?;
        logs.push(EpochLog {
            epoch,
            learning_rate: sgd.learning_rate,
            patch_size: side,
            batches,
            train_loss: loss_sum / batches as f64,
            finetune_iterations,
            val_rate,
        });
        match (val_rate, best_rate) {
            (Some(r), Some(b)) if r <= b => {
                since_best += 1;
                if since_best >= schedule.early_stop_patience {
                    break;
                }
            }
            (Some(_), _) => {
                best_rate = val_rate;
                best = model.clone();
                since_best = 0;
            }
            (None, _) => best = model.clone(),
        }
    }
    Ok((best, logs))
}
