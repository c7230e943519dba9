//! Losses with gradients, Adam and the alternating training loop.

use log::debug;
use mocap_core::MotionMap;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discriminator;
use crate::error::{NetError, Result};
use crate::generator::{self, input_matrix, quat_matrix, GeneratorCache, Mode};
use crate::loss::{loss_adv, loss_disc, loss_sv, loss_sv_grad, LAMBDA_QUAT};
use crate::params::{Architecture, DiscriminatorParams, GeneratorParams, ParamSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr_gen: f64,
    pub lr_disc: f64,
    /// Factor applied to both rates over the last `decay_epochs` epochs
    /// (only when the run is longer than that).
    pub lr_decay: f64,
    pub decay_epochs: usize,
    pub lambda_quat: f64,
    /// Adds the adversarial term to the generator loss and trains the
    /// discriminator; off means sparse-view supervision only.
    pub adversarial: bool,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch: 32,
            lr_gen: 1e-3,
            lr_disc: 1e-2,
            lr_decay: 0.1,
            decay_epochs: 100,
            lambda_quat: LAMBDA_QUAT,
            adversarial: true,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NetError::InvalidInput(m.into()));
        if self.epochs == 0 {
            return bad("training needs at least one epoch");
        }
        if self.batch == 0 {
            return bad("batch size must be positive");
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.lr_gen) || !positive(self.lr_disc) || !positive(self.eps) {
            return bad("learning rates and epsilon must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("learning-rate decay must be in (0, 1]");
        }
        if !(self.lambda_quat >= 0.0 && self.lambda_quat.is_finite()) {
            return bad("lambda_quat must be >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam moment factors must be in [0, 1)");
        }
        Ok(())
    }

    /// Learning-rate multiplier for a 0-based epoch.
    pub fn rate_scale(&self, epoch: usize) -> f64 {
        if self.epochs > self.decay_epochs && epoch >= self.epochs - self.decay_epochs {
            self.lr_decay
        } else {
            1.0
        }
    }
}

/// A network input and its sparse-view reference, cut to a common length.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub input: MotionMap,
    pub target: MotionMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub loss_sv: f64,
    pub loss_adv: f64,
    pub loss_disc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochLosses>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trained {
    pub generator: GeneratorParams,
    pub discriminator: DiscriminatorParams,
    pub history: History,
}

#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grad: &P, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let grads = grad.slots();
        let mut at = 0;
        for (p, g) in params.slots_mut().into_iter().zip(grads) {
            for (w, &gv) in p.iter_mut().zip(g.2) {
                let m = &mut self.m[at];
                let v = &mut self.v[at];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gv;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gv * gv;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                at += 1;
            }
        }
    }
}

/// Generator objective on one batch and its parameter gradient.
pub struct GeneratorStep {
    pub output: Array2<f64>,
    pub loss_sv: f64,
    /// Zero without a discriminator.
    pub loss_adv: f64,
    pub grad: GeneratorParams,
    pub cache: GeneratorCache,
}

/// `L_sv + L_adv` averaged over the batch, with the discriminator (if any)
/// held fixed. `x` and `target` are time-major batch matrices.
pub fn generator_loss(
    gen: &GeneratorParams,
    disc: Option<&DiscriminatorParams>,
    x: &Array2<f64>,
    target: &Array2<f64>,
    batch: usize,
    mode: Mode,
    lambda_quat: f64,
) -> Result<GeneratorStep> {
    let (output, cache) = generator::forward_batch(gen, x, batch, mode)?;
    let scale = 1.0 / batch as f64;
    let lsv = loss_sv(output.view(), target.view(), lambda_quat)? * scale;
    let mut d_out = loss_sv_grad(output.view(), target.view(), lambda_quat)? * scale;
    let mut ladv = 0.0;
    if let Some(disc) = disc {
        let (p, dc) = discriminator::forward_batch(disc, &output, batch)?;
        ladv = p.iter().map(|&v| loss_adv(v)).sum::<f64>() * scale;
        let d_prob: Vec<f64> = p.iter().map(|&v| 2.0 * (v - 1.0) * scale).collect();
        let (_, dx) = discriminator::backward_batch(disc, &dc, &d_prob)?;
        d_out += &dx;
    }
    let grad = generator::backward_batch(gen, &cache, &d_out)?;
    Ok(GeneratorStep {
        output,
        loss_sv: lsv,
        loss_adv: ladv,
        grad,
        cache,
    })
}

/// `mean (D(real) - 1)^2 + mean D(fake)^2` and its parameter gradient.
pub fn discriminator_loss(
    disc: &DiscriminatorParams,
    real: &Array2<f64>,
    real_batch: usize,
    fake: &Array2<f64>,
    fake_batch: usize,
) -> Result<(f64, DiscriminatorParams)> {
    let (pr, rc) = discriminator::forward_batch(disc, real, real_batch)?;
    let (pf, fc) = discriminator::forward_batch(disc, fake, fake_batch)?;
    let (sr, sf) = (1.0 / real_batch as f64, 1.0 / fake_batch as f64);
    let loss = pr.iter().map(|&v| loss_disc(v, 0.0)).sum::<f64>() * sr + pf.iter().map(|&v| loss_disc(1.0, v)).sum::<f64>() * sf;
    let (mut grad, _) = discriminator::backward_batch(disc, &rc, &pr.iter().map(|&v| 2.0 * (v - 1.0) * sr).collect::<Vec<_>>())?;
    let (gf, _) = discriminator::backward_batch(disc, &fc, &pf.iter().map(|&v| 2.0 * v * sf).collect::<Vec<_>>())?;
    for (a, b) in grad.slots_mut().into_iter().zip(gf.slots()) {
        for (x, y) in a.iter_mut().zip(b.2) {
            *x += y;
        }
    }
    Ok((loss, grad))
}

/// Uniformly placed windows of `len` frames from randomly chosen sequences.
fn sample_windows(rng: &mut impl Rng, pool: &[&MotionMap], count: usize, len: usize) -> Result<Array2<f64>> {
    let windows: Vec<MotionMap> = (0..count)
        .map(|_| {
            let m = pool[rng.random_range(0..pool.len())];
            let start = rng.random_range(0..=m.frames() - len);
            m.window(start, len)
        })
        .collect::<Result<_, _>>()?;
    quat_matrix(&windows.iter().collect::<Vec<_>>())
}

fn check_dataset(arch: &Architecture, dataset: &[TrainingPair]) -> Result<usize> {
    let first = dataset.first().ok_or_else(|| NetError::InvalidInput("training set is empty".into()))?;
    let frames = first.input.frames();
    if frames < arch.kernel {
        return Err(NetError::SequenceTooShort { frames, kernel: arch.kernel });
    }
    for (i, p) in dataset.iter().enumerate() {
        for m in [&p.input, &p.target] {
            if m.frames() != frames || m.n_joints() != arch.n_joints {
                return Err(NetError::Shape(format!(
                    "training pair {i} is {} frames x {} joints, expected {frames} x {}",
                    m.frames(),
                    m.n_joints(),
                    arch.n_joints
                )));
            }
        }
    }
    Ok(frames)
}

/// Alternating generator and discriminator Adam steps over shuffled batches.
/// Every training window must have the same length; unpaired sequences
/// shorter than it are skipped.
pub fn train(arch: &Architecture, dataset: &[TrainingPair], unpaired: &[MotionMap], cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    arch.validate()?;
    let frames = check_dataset(arch, dataset)?;
    let pool: Vec<&MotionMap> = unpaired.iter().filter(|m| m.frames() >= frames && m.n_joints() == arch.n_joints).collect();
    if cfg.adversarial && pool.is_empty() {
        return Err(NetError::InvalidInput(format!(
            "adversarial training needs an unpaired sequence of at least {frames} frames"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gen = GeneratorParams::init(arch, &mut rng)?;
    let mut disc = DiscriminatorParams::init(arch, &mut rng)?;
    let mut opt_g = Adam::new(gen.num_params(), cfg);
    let mut opt_d = Adam::new(disc.num_params(), cfg);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..cfg.epochs {
        let rate = cfg.rate_scale(epoch);
        order.shuffle(&mut rng);
        let (mut sum_sv, mut sum_adv, mut sum_d) = (0.0, 0.0, 0.0);
        let batches: Vec<&[usize]> = order.chunks(cfg.batch).collect();
        for (bi, idx) in batches.iter().enumerate() {
            let batch = idx.len();
            let x = input_matrix(&idx.iter().map(|&i| &dataset[i].input).collect::<Vec<_>>())?;
            let target = quat_matrix(&idx.iter().map(|&i| &dataset[i].target).collect::<Vec<_>>())?;
            let mode = Mode::Train {
                dropout_seed: rng.random(),
            };
            let step = generator_loss(&gen, cfg.adversarial.then_some(&disc), &x, &target, batch, mode, cfg.lambda_quat)?;
            if !(step.loss_sv.is_finite() && step.loss_adv.is_finite()) {
                return Err(NetError::NonFiniteLoss { epoch: epoch + 1, batch: bi + 1 });
            }
            opt_g.step(&mut gen, &step.grad, cfg.lr_gen * rate);
            generator::update_running_stats(&mut gen, &step.cache);
            sum_sv += step.loss_sv;
            sum_adv += step.loss_adv;

            if cfg.adversarial {
                let real = sample_windows(&mut rng, &pool, batch, frames)?;
                let (ld, grad) = discriminator_loss(&disc, &real, batch, &step.output, batch)?;
                if !ld.is_finite() {
                    return Err(NetError::NonFiniteLoss { epoch: epoch + 1, batch: bi + 1 });
                }
                opt_d.step(&mut disc, &grad, cfg.lr_disc * rate);
                sum_d += ld;
            }
        }
        let n = batches.len() as f64;
        let entry = EpochLosses {
            epoch: epoch + 1,
            loss_sv: sum_sv / n,
            loss_adv: sum_adv / n,
            loss_disc: sum_d / n,
        };
        debug!(
            "epoch {}: L_sv {:.5} L_adv {:.5} L_D {:.5}",
            entry.epoch, entry.loss_sv, entry.loss_adv, entry.loss_disc
        );
        history.epochs.push(entry);
    }
    Ok(Trained {
        generator: gen,
        discriminator: disc,
        history,
    })
}

fn stack(seqs: &[&Array2<f64>]) -> Result<Array2<f64>> {
    let first = seqs.first().ok_or_else(|| NetError::InvalidInput("empty batch".into()))?;
    if seqs.iter().any(|s| s.dim() != first.dim()) {
        return Err(NetError::Shape("sequences in a batch must share their shape".into()));
    }
    let (frames, c) = first.dim();
    let batch = seqs.len();
    Ok(Array2::from_shape_fn((frames * batch, c), |(r, k)| seqs[r % batch][[r / batch, k]]))
}

/// Discriminator trained on its own to tell `real` from `fake` sequences
/// (all `T x 4N`, same `T`). Returns the parameters and the per-epoch loss.
pub fn train_discriminator(
    arch: &Architecture,
    real: &[Array2<f64>],
    fake: &[Array2<f64>],
    cfg: &TrainConfig,
) -> Result<(DiscriminatorParams, Vec<f64>)> {
    cfg.validate()?;
    arch.validate()?;
    if real.is_empty() || fake.is_empty() {
        return Err(NetError::InvalidInput("need both real and fake sequences".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut disc = DiscriminatorParams::init(arch, &mut rng)?;
    let mut opt = Adam::new(disc.num_params(), cfg);
    let mut real_order: Vec<usize> = (0..real.len()).collect();
    let mut fake_order: Vec<usize> = (0..fake.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        real_order.shuffle(&mut rng);
        fake_order.shuffle(&mut rng);
        let steps = real.len().max(fake.len()).div_ceil(cfg.batch);
        let mut sum = 0.0;
        for s in 0..steps {
            let pick = |order: &[usize], pool: &[Array2<f64>]| -> Vec<usize> {
                (0..cfg.batch.min(pool.len())).map(|k| order[(s * cfg.batch + k) % pool.len()]).collect()
            };
            let ri = pick(&real_order, real);
            let fi = pick(&fake_order, fake);
            let xr = stack(&ri.iter().map(|&i| &real[i]).collect::<Vec<_>>())?;
            let xf = stack(&fi.iter().map(|&i| &fake[i]).collect::<Vec<_>>())?;
            let (loss, grad) = discriminator_loss(&disc, &xr, ri.len(), &xf, fi.len())?;
            if !loss.is_finite() {
                return Err(NetError::NonFiniteLoss { epoch: epoch + 1, batch: s + 1 });
            }
            opt.step(&mut disc, &grad, cfg.lr_disc * cfg.rate_scale(epoch));
            sum += loss;
        }
        losses.push(sum / steps as f64);
    }
    Ok((disc, losses))
}

/// `mean D(real) - mean D(fake)`.
pub fn separability(disc: &DiscriminatorParams, real: &[Array2<f64>], fake: &[Array2<f64>]) -> Result<f64> {
    let mean = |seqs: &[Array2<f64>]| -> Result<f64> {
        let mut sum = 0.0;
        for s in seqs {
            sum += discriminator::discriminator_forward(disc, s.view())?;
        }
        Ok(sum / seqs.len().max(1) as f64)
    };
    Ok(mean(real)? - mean(fake)?)
}
