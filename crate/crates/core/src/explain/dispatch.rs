//! Method registry and request routing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::baselines::{input_map, laplace, random_map, sobel};
use super::gradient::{deconvolution, gradient_shap, guided_backprop, integrated_gradients, saliency};
use super::lrp::lrp_epsilon;
use super::map::{ImportanceMap, PatchGrid};
use super::perturb::{kernel_shap, lime, permutation_feature_importance, shapley_value_sampling};
use crate::datagen::{ImageGrid, LabeledSample};
use crate::error::{Error, Result};
use crate::models::Network;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Saliency,
    IntegratedGradients,
    LrpEpsilon,
    GuidedBackprop,
    Deconvolution,
    Pfi,
    ShapleySampling,
    KernelShap,
    GradientShap,
    Lime,
    Sobel,
    Laplace,
    Random,
    Input,
}

impl Method {
    pub const ALL: [Method; 14] = [
        Method::Saliency,
        Method::IntegratedGradients,
        Method::LrpEpsilon,
        Method::GuidedBackprop,
        Method::Deconvolution,
        Method::Pfi,
        Method::ShapleySampling,
        Method::KernelShap,
        Method::GradientShap,
        Method::Lime,
        Method::Sobel,
        Method::Laplace,
        Method::Random,
        Method::Input,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::Saliency => "saliency",
            Method::IntegratedGradients => "integrated_gradients",
            Method::LrpEpsilon => "lrp_epsilon",
            Method::GuidedBackprop => "guided_backprop",
            Method::Deconvolution => "deconvolution",
            Method::Pfi => "pfi",
            Method::ShapleySampling => "shapley_sampling",
            Method::KernelShap => "kernel_shap",
            Method::GradientShap => "gradient_shap",
            Method::Lime => "lime",
            Method::Sobel => "sobel",
            Method::Laplace => "laplace",
            Method::Random => "random",
            Method::Input => "input",
        }
    }

    /// Looks up a registered id, or fails listing every id.
    pub fn parse(id: &str) -> Result<Method> {
        Method::ALL.into_iter().find(|m| m.id() == id).ok_or_else(|| Error::UnknownMethod {
            id: id.to_string(),
            available: Method::ALL.iter().map(|m| m.id().to_string()).collect(),
        })
    }

    /// Sobel, Laplace, random and input maps ignore the model.
    pub fn is_model_ignorant(self) -> bool {
        matches!(self, Method::Sobel | Method::Laplace | Method::Random | Method::Input)
    }

    pub fn is_signed(self) -> bool {
        !matches!(self, Method::Sobel | Method::Input | Method::Pfi)
    }

    pub fn uses_patches(self) -> bool {
        matches!(self, Method::Pfi | Method::ShapleySampling | Method::KernelShap | Method::Lime)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// Hyperparameters for every method. Unset patch-dependent values are
/// derived from the patch count `M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodParams {
    pub ig_steps: usize,
    pub shapley_permutations: usize,
    /// Defaults to `2M + 16`.
    pub kernel_shap_coalitions: Option<usize>,
    pub lime_samples: usize,
    pub lime_ridge: f64,
    /// Defaults to `0.25 * sqrt(M)`.
    pub lime_kernel_width: Option<f64>,
    pub gradshap_samples: usize,
    pub gradshap_noise: f64,
    pub lrp_epsilon: f64,
    pub pfi_repeats: usize,
    /// Defaults to 1 up to 8x8 and `side / 16` above.
    pub patch_size: Option<usize>,
}

impl Default for MethodParams {
    fn default() -> Self {
        MethodParams {
            ig_steps: 64,
            shapley_permutations: 25,
            kernel_shap_coalitions: None,
            lime_samples: 1000,
            lime_ridge: 1e-3,
            lime_kernel_width: None,
            gradshap_samples: 32,
            gradshap_noise: 0.1,
            lrp_epsilon: 1e-6,
            pfi_repeats: 5,
            patch_size: None,
        }
    }
}

impl MethodParams {
    pub fn patches(&self, side: usize) -> Result<PatchGrid> {
        match self.patch_size {
            Some(size) => PatchGrid::new(side, size),
            None => Ok(PatchGrid::default_for(side)),
        }
    }

    /// The hyperparameters a method actually reads, resolved for `side`.
    pub fn resolved(&self, method: Method, side: usize) -> Result<serde_json::Value> {
        let patches = self.patches(side)?;
        let m = patches.count();
        let patch = patches.size();
        Ok(match method {
            Method::IntegratedGradients => json!({ "steps": self.ig_steps }),
            Method::LrpEpsilon => json!({ "epsilon": self.lrp_epsilon }),
            Method::Pfi => json!({ "repeats": self.pfi_repeats, "patch_size": patch, "error": "cross_entropy_increase" }),
            Method::ShapleySampling => json!({ "permutations": self.shapley_permutations, "patch_size": patch }),
            Method::KernelShap => json!({
                "coalitions": self.kernel_shap_coalitions.unwrap_or(2 * m + 16),
                "patch_size": patch,
            }),
            Method::GradientShap => json!({ "samples": self.gradshap_samples, "noise": self.gradshap_noise }),
            Method::Lime => json!({
                "perturbations": self.lime_samples,
                "ridge": self.lime_ridge,
                "kernel_width": self.lime_kernel_width.unwrap_or(0.25 * (m as f64).sqrt()),
                "patch_size": patch,
            }),
            _ => json!({}),
        })
    }
}

/// One sample to explain with one method.
#[derive(Clone, Debug)]
pub struct AttributionRequest<'a> {
    pub method: Method,
    pub model: &'a Network,
    pub sample: &'a ImageGrid,
    pub sample_id: usize,
    /// Class whose logit is explained.
    pub target: usize,
    pub baseline: ImageGrid,
    pub params: &'a MethodParams,
    pub seed: u64,
    /// Batch that permutation importance shuffles within.
    pub reference: &'a [LabeledSample],
}

impl<'a> AttributionRequest<'a> {
    /// Explains the true class against the all-zero baseline.
    pub fn new(
        method: Method,
        model: &'a Network,
        sample: &'a LabeledSample,
        sample_id: usize,
        params: &'a MethodParams,
        seed: u64,
    ) -> Self {
        AttributionRequest {
            method,
            model,
            sample: &sample.image,
            sample_id,
            target: sample.label as usize,
            baseline: ImageGrid::zeros(sample.image.side()),
            params,
            seed,
            reference: &[],
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the random stream for one (seed, method, sample) triple.
pub fn request_stream(seed: u64, method: Method, sample_id: usize) -> u64 {
    let method_index = Method::ALL.iter().position(|&m| m == method).expect("registered") as u64;
    splitmix(splitmix(splitmix(seed) ^ method_index) ^ sample_id as u64)
}

/// Routes a request to its method and stamps the provenance.
pub fn explain(req: &AttributionRequest<'_>) -> Result<ImportanceMap> {
    let side = req.sample.side();
    if req.baseline.side() != side {
        return Err(Error::shape("explain", "baseline and sample differ in shape"));
    }
    if !req.method.is_model_ignorant() {
        if req.model.arch().input_len() != req.sample.len() {
            return Err(Error::shape(
                "explain",
                format!("{}-pixel sample for a {}-input model", req.sample.len(), req.model.arch().input_len()),
            ));
        }
        if req.target >= crate::models::NUM_CLASSES {
            return Err(Error::InvalidArgument(format!("target class {} out of range", req.target)));
        }
    }
    let p = req.params;
    let stream = request_stream(req.seed, req.method, req.sample_id);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let patches = p.patches(side)?;
    let m = patches.count();
    let (net, x, b, t) = (req.model, req.sample, &req.baseline, req.target);
    let grid = match req.method {
        Method::Saliency => saliency(net, x, t)?,
        Method::IntegratedGradients => integrated_gradients(net, x, b, t, p.ig_steps)?,
        Method::LrpEpsilon => lrp_epsilon(net, x, t, p.lrp_epsilon)?,
        Method::GuidedBackprop => guided_backprop(net, x, t)?,
        Method::Deconvolution => deconvolution(net, x, t)?,
        Method::Pfi => {
            if req.reference.is_empty() {
                return Err(Error::InvalidArgument("permutation importance needs a reference batch".into()));
            }
            // batch-level: the stream ignores the sample so every member shares one map
            let mut batch_rng = ChaCha8Rng::seed_from_u64(request_stream(req.seed, req.method, usize::MAX));
            permutation_feature_importance(net, req.reference, &patches, p.pfi_repeats, &mut batch_rng)?
        }
        Method::ShapleySampling => shapley_value_sampling(net, x, b, t, &patches, p.shapley_permutations, &mut rng)?,
        Method::KernelShap => {
            let c = p.kernel_shap_coalitions.unwrap_or(2 * m + 16);
            kernel_shap(net, x, b, t, &patches, c, &mut rng)?
        }
        Method::GradientShap => gradient_shap(net, x, b, t, p.gradshap_samples, p.gradshap_noise, &mut rng)?,
        Method::Lime => {
            let width = p.lime_kernel_width.unwrap_or(0.25 * (m as f64).sqrt());
            lime(net, x, b, t, &patches, p.lime_samples, width, p.lime_ridge, &mut rng)?
        }
        Method::Sobel => sobel(x),
        Method::Laplace => laplace(x),
        Method::Random => random_map(side, &mut rng),
        Method::Input => input_map(x),
    };
    if grid.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{} produced a non-finite score for sample {}",
            req.method, req.sample_id
        )));
    }
    Ok(ImportanceMap {
        grid,
        method: req.method.id().to_string(),
        sample_id: req.sample_id,
        signed: req.method.is_signed(),
        provenance: json!({
            "method": req.method.id(),
            "seed": req.seed,
            "stream": stream,
            "target": req.target,
            "baseline": "zero",
            "hyperparameters": p.resolved(req.method, side)?,
        }),
    })
}

/// Explains every `(sample, method)` pair in parallel. `samples` pairs a
/// sample id with the sample; `reference` is the batch permutation importance
/// shuffles within, and its map is computed once and attached to each
/// sample. Output is ordered by method, then by sample.
pub fn explain_batch(
    model: &Network,
    methods: &[Method],
    samples: &[(usize, &LabeledSample)],
    reference: &[LabeledSample],
    params: &MethodParams,
    seed: u64,
) -> Result<Vec<ImportanceMap>> {
    let mut out = Vec::with_capacity(methods.len() * samples.len());
    for &method in methods {
        if method == Method::Pfi {
            let Some(&(first_id, first)) = samples.first() else { continue };
            let mut req = AttributionRequest::new(method, model, first, first_id, params, seed);
            req.reference = reference;
            let shared = explain(&req)?;
            out.extend(samples.iter().map(|&(id, _)| ImportanceMap {
                sample_id: id,
                ..shared.clone()
            }));
            continue;
        }
        let maps: Result<Vec<ImportanceMap>> = samples
            .par_iter()
            .map(|&(id, s)| explain(&AttributionRequest::new(method, model, s, id, params, seed)))
            .collect();
        out.extend(maps?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{Mask, RigidTransform};
    use crate::models::{ArchKind, ArchitectureSpec};
    use crate::tensor::Tensor;

    fn sample(seed: u64, label: u8) -> LabeledSample {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LabeledSample {
            image: ImageGrid::new(8, (0..64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
            label,
            mask: Mask::empty(8),
            transform: RigidTransform::IDENTITY,
            xor_case: None,
        }
    }

    /// LLR whose class-1 logit is `3 x_5`.
    fn three_x5() -> Network {
        let mut w = vec![0.0; 128];
        w[5 * 2 + 1] = 3.0;
        let params = vec![Tensor::new(vec![64, 2], w).unwrap(), Tensor::new(vec![2], vec![0.0; 2]).unwrap()];
        Network::from_params(ArchitectureSpec::new(ArchKind::Llr, 8), params).unwrap()
    }

    #[test]
    fn ids_round_trip_and_unknown_ids_list_everything() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.id()).unwrap(), m);
        }
        match Method::parse("gradcam") {
            Err(Error::UnknownMethod { available, .. }) => assert_eq!(available.len(), 14),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dispatch_matches_direct_calls() {
        let net = three_x5();
        let s = sample(1, 1);
        let params = MethodParams::default();
        let map = explain(&AttributionRequest::new(Method::Saliency, &net, &s, 0, &params, 0)).unwrap();
        assert_eq!(map.grid, saliency(&net, &s.image, 1).unwrap());
        let mut expected = vec![0.0; 64];
        expected[5] = 3.0;
        assert_eq!(map.grid.data(), &expected[..]);
        assert_eq!(map.provenance["target"], 1);
    }

    #[test]
    fn stochastic_methods_are_reproducible() {
        let net = Network::new(ArchitectureSpec::new(ArchKind::Mlp, 8), 2).unwrap();
        let s = sample(3, 0);
        let params = MethodParams { lime_samples: 200, ..MethodParams::default() };
        for method in [Method::ShapleySampling, Method::KernelShap, Method::GradientShap, Method::Lime, Method::Random] {
            let a = explain(&AttributionRequest::new(method, &net, &s, 4, &params, 9)).unwrap();
            let b = explain(&AttributionRequest::new(method, &net, &s, 4, &params, 9)).unwrap();
            assert_eq!(a, b, "{method}");
            let c = explain(&AttributionRequest::new(method, &net, &s, 5, &params, 9)).unwrap();
            assert_ne!(a.grid, c.grid, "{method}");
        }
    }

    #[test]
    fn batch_yields_one_map_per_pair() {
        let net = Network::new(ArchitectureSpec::new(ArchKind::Llr, 8), 3).unwrap();
        let data: Vec<LabeledSample> = (0..6).map(|i| sample(10 + i, (i % 2) as u8)).collect();
        let picked: Vec<(usize, &LabeledSample)> = [0usize, 2, 3].iter().map(|&i| (i, &data[i])).collect();
        let methods = [Method::Saliency, Method::Pfi, Method::Sobel];
        let params = MethodParams::default();
        let maps = explain_batch(&net, &methods, &picked, &data, &params, 0).unwrap();
        assert_eq!(maps.len(), 9);
        let pfi: Vec<&ImportanceMap> = maps.iter().filter(|m| m.method == "pfi").collect();
        assert_eq!(pfi.iter().map(|m| m.sample_id).collect::<Vec<_>>(), [0, 2, 3]);
        assert!(pfi.windows(2).all(|w| w[0].grid == w[1].grid));
    }
}
