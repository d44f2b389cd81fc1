//! NiN-family networks, their hyperparameters and parameter flattening.

mod fuse;
mod network;
mod nin;

use serde::{Deserialize, Serialize};

pub use fuse::fuse_batchnorm;
pub use network::{ConvLayer, ConvSpec, ForwardMode, Layer, LayerSpec, Network, Tape};
pub use nin::{build_nin, conv_count, InitSnapshot};

/// The seven hyperparameter axes, in report column order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    BatchSize,
    Dropout,
    LearningRate,
    Depth,
    Optimizer,
    WeightDecay,
    Width,
}

impl Axis {
    pub const ALL: [Axis; 7] = [
        Axis::BatchSize,
        Axis::Dropout,
        Axis::LearningRate,
        Axis::Depth,
        Axis::Optimizer,
        Axis::WeightDecay,
        Axis::Width,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::BatchSize => "batch_size",
            Axis::Dropout => "dropout",
            Axis::LearningRate => "learning_rate",
            Axis::Depth => "depth",
            Axis::Optimizer => "optimizer",
            Axis::WeightDecay => "weight_decay",
            Axis::Width => "width",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether changing this axis changes the architecture.
    pub fn is_architectural(self) -> bool {
        matches!(self, Axis::Depth | Axis::Width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "momentum-sgd")]
    MomentumSgd,
    #[serde(rename = "adam")]
    Adam,
    #[serde(rename = "rmsprop")]
    RmsProp,
}

impl OptimizerKind {
    /// SGD < Adam < RMSProp.
    pub fn ordinal(self) -> usize {
        match self {
            OptimizerKind::MomentumSgd => 0,
            OptimizerKind::Adam => 1,
            OptimizerKind::RmsProp => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::MomentumSgd => "momentum-sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::RmsProp => "rmsprop",
        }
    }
}

/// One point of the hyperparameter grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub batch_size: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    /// Number of NiN blocks.
    pub depth: usize,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    /// Output channels of every block.
    pub width: usize,
}

impl HyperConfig {
    /// Numeric value of an axis, optimizers mapped to their ordinal.
    pub fn axis_value(&self, axis: Axis) -> f64 {
        match axis {
            Axis::BatchSize => self.batch_size as f64,
            Axis::Dropout => self.dropout,
            Axis::LearningRate => self.learning_rate,
            Axis::Depth => self.depth as f64,
            Axis::Optimizer => self.optimizer.ordinal() as f64,
            Axis::WeightDecay => self.weight_decay,
            Axis::Width => self.width as f64,
        }
    }
}
