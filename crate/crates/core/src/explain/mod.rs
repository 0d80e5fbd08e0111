//! Importance maps from trained classifiers and model-ignorant baselines.

mod baselines;
mod dispatch;
mod gradient;
mod lrp;
mod map;
mod perturb;

pub use baselines::{filter3, input_map, laplace, random_map, sobel, LAPLACE, SOBEL_X, SOBEL_Y};
pub use dispatch::{explain, explain_batch, request_stream, AttributionRequest, Method, MethodParams};
pub use gradient::{
    deconvolution, gradient_shap, guided_backprop, input_gradients, integrated_gradients, saliency,
};
pub use lrp::lrp_epsilon;
pub use map::{ImportanceMap, PatchGrid};
pub use perturb::{kernel_shap, lime, permutation_feature_importance, shapley_value_sampling, target_logits};
