use crate::data::Dataset;
use crate::error::Result;
use crate::model::Network;
use crate::tensor::Rng;
use crate::train::{gradient_noise, TrainingTrace};

use super::{Measured, MeasureId, REASON_NOT_CONVERGED, REASON_NOT_REACHED};

/// Step counts and gradient noise; `net` is the fused final network.
pub fn optimization_measures(
    trace: &TrainingTrace,
    net: &Network,
    train: &Dataset,
    noise_sample: usize,
    rng: &mut Rng,
) -> Result<Vec<(MeasureId, Measured)>> {
    let steps = |s: Option<u64>, reason| match s {
        Some(v) => Measured::value(v as f64),
        None => Measured::undefined(reason),
    };
    let epoch1 = match trace.grad_noise_epoch1 {
        Some(v) => Measured::value(v),
        None => Measured::undefined("not-recorded"),
    };
    Ok(vec![
        (MeasureId::StepsToLoss01, steps(trace.steps_to_01, REASON_NOT_REACHED)),
        (
            MeasureId::StepsLoss01To001,
            steps(trace.steps_01_to_001, REASON_NOT_CONVERGED),
        ),
        (MeasureId::GradNoiseEpoch1, epoch1),
        (
            MeasureId::GradNoiseFinal,
            Measured::value(gradient_noise(net, train, noise_sample, rng)?),
        ),
    ])
}
