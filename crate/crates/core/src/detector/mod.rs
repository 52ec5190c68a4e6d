//! Anchor-free single-scale convolutional detectors over pseudo-RGB
//! spectrograms, with suppression and training.

mod conv;
mod model;
mod nms;
mod train;

pub use conv::ConvSpec;
pub use model::{
    ArchId, DetectorModel, ForwardCache, Gradients, PredictionGrad, PredictionGrid, BOX_CHANNELS,
    GRID_STRIDE,
};
pub use nms::{
    detection_order, grid_candidates, nms, nms_candidates, Detection, DEFAULT_CONF_THRESHOLD,
    DEFAULT_IOU_THRESHOLD,
};
pub use train::{
    assign_targets, detection_loss, train_detector, CellTarget, EpochLog, TrainHyper, TrainSample,
};
