//! The benchmark classifiers, their training loop and SNR calibration.

mod calibrate;
mod network;
mod train;

pub use calibrate::{alpha_grid, calibrate_snr, select_alpha, Calibration, CalibrationRow, ACCURACY_THRESHOLD};
pub use network::{
    argmax_rows, batch_tensor, parameter_shapes, ArchKind, ArchitectureSpec, Classifier, ConvPlan, Layer,
    Network, NUM_CLASSES,
};
pub use train::{
    correctly_predicted_intersection, evaluate_accuracy, load_model, mean_loss, predict, save_model, train,
    TrainedModel, TrainingConfig, TrainingReport,
};
