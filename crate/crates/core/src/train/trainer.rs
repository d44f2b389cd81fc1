use log::debug;
use serde::{Deserialize, Serialize};

use super::noise::gradient_noise;
use super::optimizer::OptimizerState;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{build_nin, fuse_batchnorm, ForwardMode, HyperConfig, InitSnapshot, Network};
use crate::tensor::{softmax_cross_entropy_batch, Rng, Scalar};

/// Step budget, learning-rate milestones and the stopping rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub max_steps: u64,
    /// Steps at which the learning rate is multiplied by 0.1.
    pub lr_milestones: Vec<u64>,
    /// Training stops once the estimated cross-entropy is at or below this.
    pub ce_threshold: f64,
    /// Steps between loss estimates.
    pub eval_every: u64,
    pub loss_batches: usize,
    /// Batch size of the loss estimate; 0 means the training batch size.
    pub loss_batch_size: usize,
    /// Examples used for each gradient-noise estimate.
    pub noise_sample: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            max_steps: 120_000,
            lr_milestones: vec![60_000, 90_000],
            ce_threshold: 0.01,
            eval_every: 100,
            loss_batches: 100,
            loss_batch_size: 0,
            noise_sample: 1000,
        }
    }
}

impl Schedule {
    pub fn learning_rate(&self, base: f64, step: u64) -> f64 {
        let drops = self.lr_milestones.iter().filter(|&&m| step >= m).count();
        base * 0.1f64.powi(drops as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    /// First loss-estimate step with cross-entropy ≤ 0.1.
    pub steps_to_01: Option<u64>,
    /// Further steps until cross-entropy ≤ 0.01.
    pub steps_01_to_001: Option<u64>,
    pub total_steps: u64,
    /// Gradient noise at the weights after the first full epoch.
    pub grad_noise_epoch1: Option<f64>,
    /// Last estimated training cross-entropy.
    pub final_train_ce: f64,
    pub final_train_error: f64,
    pub converged: bool,
    /// `(step, estimated cross-entropy)` at every estimate.
    pub loss_history: Vec<(u64, f64)>,
}

/// A trained network with everything the measures need.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelRecord {
    pub config: HyperConfig,
    pub seed: u64,
    /// Final weights with batch norm still in place.
    pub network: Network,
    pub init: InitSnapshot,
    pub trace: TrainingTrace,
    pub train_error: f64,
    pub test_error: f64,
    /// `test_error − train_error`.
    pub gap: f64,
}

impl ModelRecord {
    pub fn fused(&self) -> Result<Network> {
        fuse_batchnorm(&self.network)
    }

    pub fn fused_init(&self) -> Result<Network> {
        fuse_batchnorm(&self.init)
    }
}

/// Consecutive batches from a reshuffled permutation, so `k` batches whose
/// total size equals the dataset cover it exactly once.
pub(crate) struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl BatchStream {
    pub(crate) fn new(n: usize, rng: Rng) -> Self {
        let mut s = BatchStream {
            order: (0..n).collect(),
            pos: n,
            rng,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.rng.shuffle(&mut self.order);
        self.pos = 0;
    }

    /// Next training batch; the final batch of an epoch may be short. The
    /// flag marks the end of an epoch.
    fn next_epoch_batch(&mut self, size: usize) -> (Vec<usize>, bool) {
        if self.pos >= self.order.len() {
            self.reshuffle();
        }
        let end = (self.pos + size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        (batch, end == self.order.len())
    }

    /// Next full-size batch, wrapping across reshuffles.
    pub(crate) fn next_full_batch(&mut self, size: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.pos >= self.order.len() {
                self.reshuffle();
            }
            let take = (size - batch.len()).min(self.order.len() - self.pos);
            batch.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        batch
    }
}

/// Mean eval-mode cross-entropy over `num_batches` batches drawn without
/// replacement until the set is exhausted.
pub fn estimate_training_loss<T: Scalar>(
    net: &Network<T>,
    data: &Dataset,
    num_batches: usize,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if num_batches == 0 || batch_size == 0 {
        return Err(Error::invalid("loss estimate needs at least one nonempty batch"));
    }
    let stream_id = rng.next_u64();
    let mut stream = BatchStream::new(data.len(), rng.fork(stream_id));
    let mut total = 0.0;
    for _ in 0..num_batches {
        let idx = stream.next_full_batch(batch_size.min(data.len()));
        let (x, y) = data.batch(&idx);
        let logits = net.predict(&x.cast())?;
        total += softmax_cross_entropy_batch(&logits, &y)?.mean_loss;
    }
    Ok(total / num_batches as f64)
}

/// Full-set eval-mode `(mean cross-entropy, 0-1 error)`.
pub fn evaluate<T: Scalar>(net: &Network<T>, data: &Dataset) -> Result<(f64, f64)> {
    let (mut ce, mut wrong) = (0.0, 0usize);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(256) {
        let (x, y) = data.batch(chunk);
        let logits = net.predict(&x.cast())?;
        let out = softmax_cross_entropy_batch(&logits, &y)?;
        ce += out.losses.iter().sum::<f64>();
        for (p, &label) in out.probs.iter().zip(&y) {
            if argmax(p) != label {
                wrong += 1;
            }
        }
    }
    let m = data.len() as f64;
    Ok((ce / m, wrong as f64 / m))
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Train one NiN network from `seed` until the estimated training
/// cross-entropy reaches the threshold or the budget runs out.
pub fn train_model(
    config: &HyperConfig,
    data: &Split,
    seed: u64,
    schedule: &Schedule,
) -> Result<ModelRecord> {
    let root = Rng::new(seed);
    let (mut net, init) = build_nin(
        config,
        data.train.image_shape(),
        data.train.num_classes(),
        &mut root.fork(0),
    )?;
    let mut batches = BatchStream::new(data.train.len(), root.fork(1));
    let mut dropout_rng = root.fork(2);
    let mut loss_rng = root.fork(3);
    let mut noise_rng = root.fork(4);
    let mut opt = OptimizerState::new(
        config.optimizer,
        config.learning_rate,
        config.weight_decay,
        net.num_params(),
    );
    let loss_bs = match schedule.loss_batch_size {
        0 => config.batch_size,
        b => b,
    };
    let noise_at = |net: &Network, rng: &mut Rng| -> Result<f64> {
        gradient_noise(&fuse_batchnorm(net)?, &data.train, schedule.noise_sample, rng)
    };
    let mut trace = TrainingTrace {
        steps_to_01: None,
        steps_01_to_001: None,
        total_steps: 0,
        grad_noise_epoch1: None,
        final_train_ce: f64::NAN,
        final_train_error: f64::NAN,
        converged: false,
        loss_history: Vec::new(),
    };
    let mut step = 0u64;
    while step < schedule.max_steps {
        opt.learning_rate = schedule.learning_rate(config.learning_rate, step);
        let (idx, epoch_end) = batches.next_epoch_batch(config.batch_size);
        let (x, y) = data.train.batch(&idx);
        let (ce, grad, tape) = net.loss_and_grad(&x, &y, ForwardMode::Train(&mut dropout_rng))?;
        if !ce.mean_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingFailed(format!(
                "non-finite loss at step {step} for {config:?}"
            )));
        }
        net.update_running_stats(&tape);
        let mut w = net.param_vecc();
        opt.step(&mut w, &grad);
        net.scatter(&w)?;
        step += 1;
        if epoch_end && trace.grad_noise_epoch1.is_none() {
            trace.grad_noise_epoch1 = Some(noise_at(&net, &mut noise_rng)?);
        }
        if step.is_multiple_of(schedule.eval_every) || step == schedule.max_steps {
            let est = estimate_training_loss(
                &net,
                &data.train,
                schedule.loss_batches,
                loss_bs,
                &mut loss_rng,
            )?;
            if !est.is_finite() {
                return Err(Error::TrainingFailed(format!(
                    "non-finite loss estimate at step {step} for {config:?}"
                )));
            }
            debug!("step {step}: estimated cross-entropy {est:.5}");
            trace.loss_history.push((step, est));
            trace.final_train_ce = est;
            if est <= 0.1 && trace.steps_to_01.is_none() {
                trace.steps_to_01 = Some(step);
            }
            if est <= 0.01 && trace.steps_01_to_001.is_none() {
                trace.steps_01_to_001 = trace.steps_to_01.map(|s| step - s);
            }
            if est <= schedule.ce_threshold {
                trace.converged = true;
                break;
            }
        }
    }
    trace.total_steps = step;
    if trace.grad_noise_epoch1.is_none() {
        // stopped inside the first epoch
        trace.grad_noise_epoch1 = Some(noise_at(&net, &mut noise_rng)?);
    }
    let (_, train_error) = evaluate(&net, &data.train)?;
    let (_, test_error) = evaluate(&net, &data.test)?;
    trace.final_train_error = train_error;
    Ok(ModelRecord {
        config: config.clone(),
        seed,
        network: net,
        init,
        trace,
        train_error,
        test_error,
        gap: test_error - train_error,
    })
}
