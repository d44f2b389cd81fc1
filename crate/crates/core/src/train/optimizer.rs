use crate::model::OptimizerKind;
use crate::tensor::Scalar;

pub const MOMENTUM: f64 = 0.9;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-3;
pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_EPSILON: f64 = 1e-8;

/// Optimizer with its per-parameter buffers. Weight decay is coupled: `λ·w`
/// is added to the gradient before the update rule sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T = f32> {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub step: u64,
    /// Momentum buffer, Adam first moment, or RMSProp mean square.
    first: Vec<T>,
    /// Adam second moment.
    second: Vec<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, weight_decay: f64, num_params: usize) -> Self {
        let second = match kind {
            OptimizerKind::Adam => vec![T::zero(); num_params],
            _ => Vec::new(),
        };
        OptimizerState {
            kind,
            learning_rate,
            weight_decay,
            step: 0,
            first: vec![T::zero(); num_params],
            second,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.first.len());
        self.step += 1;
        let lr = T::of(self.learning_rate);
        let wd = T::of(self.weight_decay);
        let one = T::one();
        match self.kind {
            OptimizerKind::MomentumSgd => {
                let mu = T::of(MOMENTUM);
                for ((w, &g), v) in params.iter_mut().zip(grad).zip(&mut self.first) {
                    let g = g + wd * *w;
                    *v = mu * *v + g;
                    *w -= lr * *v;
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
                let eps = T::of(ADAM_EPSILON);
                let t = self.step as i32;
                let c1 = one - T::of(ADAM_BETA1.powi(t));
                let c2 = one - T::of(ADAM_BETA2.powi(t));
                for (((w, &g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    let g = g + wd * *w;
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mhat = *m / c1;
                    let vhat = *v / c2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
            OptimizerKind::RmsProp => {
                let rho = T::of(RMSPROP_DECAY);
                let eps = T::of(RMSPROP_EPSILON);
                for ((w, &g), s) in params.iter_mut().zip(grad).zip(&mut self.first) {
                    let g = g + wd * *w;
                    *s = rho * *s + (one - rho) * g * g;
                    *w -= lr * g / (s.sqrt() + eps);
                }
            }
        }
    }
}
