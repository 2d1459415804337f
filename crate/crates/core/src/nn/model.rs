//! The classifier: a small convolutional feature extractor followed by
//! three fully-connected modules, each fully-connected + batch norm +
//! ReLU, the last one as wide as the current task count. The output of
//! the final module is used directly as the logits.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers;
use crate::nn::params::ParamSet;
use crate::nn::tensor::Tensor;

/// Network topology. `conv_channels[i]` is the output channel count of
/// the i-th 3x3 conv block (stride 1, padding 1, ReLU, then 2x2 mean
/// pooling with stride 2), starting from a single input channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_size: usize,
    pub conv_channels: Vec<usize>,
    pub head_widths: [usize; 2],
    /// Output width = number of tasks the head currently serves.
    pub out: usize,
}

impl ModelSpec {
    /// Desk-scale default: three conv blocks 8/16/32 and a 128/64 head.
    pub fn new(input_size: usize, out: usize) -> Self {
        ModelSpec { input_size, conv_channels: vec![8, 16, 32], head_widths: [128, 64], out }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() || self.conv_channels.iter().any(|&c| c == 0) {
            return Err(Error::config("conv_channels must be non-empty and positive"));
        }
        if self.head_widths.iter().any(|&w| w == 0) || self.out == 0 {
            return Err(Error::config("head widths must be positive"));
        }
        let blocks = self.conv_channels.len();
        if self.input_size == 0 || self.input_size % (1 << blocks) != 0 {
            return Err(Error::config(format!(
                "input_size {} must be divisible by 2^{blocks}",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Flattened extractor output width.
    pub fn feature_dim(&self) -> usize {
        let spatial = self.input_size >> self.conv_channels.len();
        self.conv_channels.last().unwrap() * spatial * spatial
    }

    /// Widths of the three head modules.
    fn head_dims(&self) -> [(usize, usize); 3] {
        let f = self.feature_dim();
        let [w1, w2] = self.head_widths;
        [(f, w1), (w1, w2), (w2, self.out)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running statistics of the three head batch-norm layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub momentum: f64,
    pub mode: BnMode,
    layers: Vec<BnLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BnLayer {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl BatchNormState {
    pub fn new(spec: &ModelSpec) -> Self {
        let layers = spec
            .head_dims()
            .iter()
            .map(|&(_, w)| BnLayer { mean: vec![0.0; w], var: vec![1.0; w] })
            .collect();
        BatchNormState { momentum: 0.1, mode: BnMode::Train, layers }
    }

    pub fn set_mode(&mut self, mode: BnMode) {
        self.mode = mode;
    }

    /// Reset the final layer's statistics for a head of `new_out`
    /// outputs; the other layers keep their running state.
    pub fn replace_final(&mut self, new_out: usize) {
        self.layers[2] = BnLayer { mean: vec![0.0; new_out], var: vec![1.0; new_out] };
    }

    /// Interpolate running statistics towards the mean of per-task
    /// states, mirroring the outer parameter update so the statistics
    /// follow the parameters they normalise. Accumulation order is the
    /// caller's task order.
    pub fn interpolate_towards(&mut self, others: &[BatchNormState], eta: f64) {
        if others.is_empty() {
            return;
        }
        let k = others.len() as f64;
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            for j in 0..layer.mean.len() {
                let mean_sum: f64 = others.iter().map(|o| o.layers[idx].mean[j]).sum();
                let var_sum: f64 = others.iter().map(|o| o.layers[idx].var[j]).sum();
                layer.mean[j] = layer.mean[j] * (1.0 - eta) + (mean_sum / k) * eta;
                layer.var[j] = layer.var[j] * (1.0 - eta) + (var_sum / k) * eta;
            }
        }
    }

    fn layer(&self, i: usize) -> (&[f64], &[f64]) {
        (&self.layers[i].mean, &self.layers[i].var)
    }

    fn layer_mut(&mut self, i: usize) -> (&mut [f64], &mut [f64]) {
        let l = &mut self.layers[i];
        (&mut l.mean, &mut l.var)
    }
}

/// Kaiming-uniform bound for a fan-in.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn kaiming_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = kaiming_bound(fan_in);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape/data agree by construction")
}

fn push_head_module(params: &mut ParamSet, rng: &mut ChaCha8Rng, idx: usize, f_in: usize, f_out: usize) {
    params.push(format!("head{idx}.weight"), kaiming_tensor(rng, vec![f_in, f_out], f_in));
    params.push(format!("head{idx}.bias"), Tensor::zeros(vec![f_out]));
    params.push(format!("head{idx}.gamma"), Tensor::new(vec![f_out], vec![1.0; f_out]).unwrap());
    params.push(format!("head{idx}.beta"), Tensor::zeros(vec![f_out]));
}

/// Seeded initialisation: Kaiming-uniform weights, zero biases, batch
/// norm scale 1 / shift 0, unit running variance.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<(ParamSet, BatchNormState)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let mut c_in = 1usize;
    for (i, &c_out) in spec.conv_channels.iter().enumerate() {
        let fan_in = c_in * 9;
        params.push(format!("conv{}.weight", i + 1), kaiming_tensor(&mut rng, vec![c_out, fan_in], fan_in));
        params.push(format!("conv{}.bias", i + 1), Tensor::zeros(vec![c_out]));
        c_in = c_out;
    }
    for (i, &(f_in, f_out)) in spec.head_dims().iter().enumerate() {
        push_head_module(&mut params, &mut rng, i + 1, f_in, f_out);
    }
    Ok((params, BatchNormState::new(spec)))
}

/// Copy every parameter except the final head module, which is
/// re-initialised at width `new_out` (Kaiming-uniform, fan-in = the
/// second head width). The extractor and the first two head modules
/// are bit-identical to the input.
pub fn replace_head(
    params: &ParamSet,
    spec: &ModelSpec,
    new_out: usize,
    seed: u64,
) -> Result<(ParamSet, ModelSpec)> {
    if new_out < 2 {
        return Err(Error::param("replacement head needs at least 2 outputs"));
    }
    let mut new_spec = spec.clone();
    new_spec.out = new_out;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ParamSet::new();
    for (name, tensor) in params.iter() {
        if !name.starts_with("head3.") {
            out.push(name, tensor.clone());
        }
    }
    let f_in = spec.head_widths[1];
    push_head_module(&mut out, &mut rng, 3, f_in, new_out);
    Ok((out, new_spec))
}

struct ConvStageCache {
    input: Vec<f64>,
    pre_relu: Vec<f64>,
    spatial: usize,
    c_in: usize,
    c_out: usize,
}

struct HeadStageCache {
    input: Vec<f64>,
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    relu_out: Vec<f64>,
    f_in: usize,
    f_out: usize,
}

/// Activations saved by a training-mode forward pass.
pub struct Cache {
    batch_n: usize,
    conv: Vec<ConvStageCache>,
    head: Vec<HeadStageCache>,
    train_mode: bool,
}

fn check_input(spec: &ModelSpec, batch: &Tensor) -> Result<usize> {
    let shape = batch.shape();
    if shape.len() != 3 || shape[1] != spec.input_size || shape[2] != spec.input_size {
        return Err(Error::shape(format!(
            "expected batch [n, {0}, {0}], got {shape:?}",
            spec.input_size
        )));
    }
    if shape[0] == 0 {
        return Err(Error::shape("empty batch"));
    }
    Ok(shape[0])
}

/// Forward pass; returns pre-softmax logits `[n, out]` and the cached
/// activations for [`backward`]. In `Train` mode the head batch norms
/// use batch statistics and update the running state; in `Eval` mode
/// they read the running state and leave it untouched.
pub fn forward(
    spec: &ModelSpec,
    params: &ParamSet,
    bn: &mut BatchNormState,
    batch: &Tensor,
) -> Result<(Tensor, Cache)> {
    let n = check_input(spec, batch)?;
    let train = bn.mode == BnMode::Train;

    let mut conv_caches = Vec::with_capacity(spec.conv_channels.len());
    let mut activation = batch.data().to_vec();
    let mut c_in = 1usize;
    let mut spatial = spec.input_size;
    for (i, &c_out) in spec.conv_channels.iter().enumerate() {
        let weight = param(params, &format!("conv{}.weight", i + 1))?;
        let bias = param(params, &format!("conv{}.bias", i + 1))?;
        let pre_relu = layers::conv_forward(&activation, n, c_in, spatial, weight, bias, c_out);
        ensure_finite(&pre_relu, "conv")?;
        let relu = layers::relu_forward(&pre_relu);
        let pooled = layers::avgpool_forward(&relu, n, c_out, spatial);
        conv_caches.push(ConvStageCache { input: activation, pre_relu, spatial, c_in, c_out });
        activation = pooled;
        spatial /= 2;
        c_in = c_out;
    }

    let mut head_caches = Vec::with_capacity(3);
    for (i, &(f_in, f_out)) in spec.head_dims().iter().enumerate() {
        let weight = param(params, &format!("head{}.weight", i + 1))?;
        let bias = param(params, &format!("head{}.bias", i + 1))?;
        let gamma = param(params, &format!("head{}.gamma", i + 1))?;
        let beta = param(params, &format!("head{}.beta", i + 1))?;
        let z = layers::fc_forward(&activation, n, f_in, weight, bias, f_out);
        ensure_finite(&z, "fully-connected")?;
        let (bn_out, x_hat, inv_std) = if train {
            let momentum = bn.momentum;
            let (mean, var) = bn.layer_mut(i);
            layers::batchnorm_train(&z, n, f_out, gamma, beta, mean, var, momentum)
        } else {
            let (mean, var) = bn.layer(i);
            let out = layers::batchnorm_eval(&z, n, f_out, gamma, beta, mean, var);
            (out, Vec::new(), Vec::new())
        };
        ensure_finite(&bn_out, "batch norm")?;
        let relu_out = layers::relu_forward(&bn_out);
        head_caches.push(HeadStageCache {
            input: activation,
            x_hat,
            inv_std,
            relu_out: relu_out.clone(),
            f_in,
            f_out,
        });
        activation = relu_out;
    }

    let logits = Tensor::new(vec![n, spec.out], activation)?;
    Ok((logits, Cache { batch_n: n, conv: conv_caches, head: head_caches, train_mode: train }))
}

/// Eval-mode forward that leaves the batch-norm state untouched.
pub fn forward_eval(
    spec: &ModelSpec,
    params: &ParamSet,
    bn: &BatchNormState,
    batch: &Tensor,
) -> Result<Tensor> {
    let mut frozen = bn.clone();
    frozen.set_mode(BnMode::Eval);
    let (logits, _) = forward(spec, params, &mut frozen, batch)?;
    Ok(logits)
}

/// Exact reverse-mode gradients of the forward graph. Requires a cache
/// from a training-mode [`forward`] with matching batch shape; the
/// returned set is congruent with `params`.
pub fn backward(
    spec: &ModelSpec,
    params: &ParamSet,
    cache: &Cache,
    dlogits: &Tensor,
) -> Result<ParamSet> {
    if !cache.train_mode {
        return Err(Error::param("backward needs a training-mode cache"));
    }
    let n = cache.batch_n;
    if dlogits.shape() != [n, spec.out] {
        return Err(Error::shape(format!(
            "dlogits shape {:?} does not match cache [{}, {}]",
            dlogits.shape(),
            n,
            spec.out
        )));
    }

    let mut grads_rev: Vec<(String, Tensor)> = Vec::new();
    let mut d = dlogits.data().to_vec();
    for (i, stage) in cache.head.iter().enumerate().rev() {
        let weight = param(params, &format!("head{}.weight", i + 1))?;
        let gamma = param(params, &format!("head{}.gamma", i + 1))?;
        let d_bn_out = layers::relu_backward(&d, &stage.relu_out);
        let (dz, d_gamma, d_beta) = layers::batchnorm_backward(
            &d_bn_out,
            &stage.x_hat,
            &stage.inv_std,
            gamma,
            n,
            stage.f_out,
        );
        let (d_weight, d_bias, d_input) =
            layers::fc_backward(&stage.input, n, stage.f_in, weight, stage.f_out, &dz);
        grads_rev.push((format!("head{}.beta", i + 1), Tensor::new(vec![stage.f_out], d_beta)?));
        grads_rev.push((format!("head{}.gamma", i + 1), Tensor::new(vec![stage.f_out], d_gamma)?));
        grads_rev.push((format!("head{}.bias", i + 1), Tensor::new(vec![stage.f_out], d_bias)?));
        grads_rev.push((
            format!("head{}.weight", i + 1),
            Tensor::new(vec![stage.f_in, stage.f_out], d_weight)?,
        ));
        d = d_input;
    }

    for (i, stage) in cache.conv.iter().enumerate().rev() {
        let weight = param(params, &format!("conv{}.weight", i + 1))?;
        let d_pooled = layers::avgpool_backward(&d, n, stage.c_out, stage.spatial);
        let d_pre = layers::relu_backward(&d_pooled, &stage.pre_relu);
        let (d_weight, d_bias, d_input) =
            layers::conv_backward(&stage.input, n, stage.c_in, stage.spatial, weight, stage.c_out, &d_pre);
        grads_rev.push((format!("conv{}.bias", i + 1), Tensor::new(vec![stage.c_out], d_bias)?));
        grads_rev.push((
            format!("conv{}.weight", i + 1),
            Tensor::new(vec![stage.c_out, stage.c_in * 9], d_weight)?,
        ));
        d = d_input;
    }

    let mut grads = ParamSet::new();
    for (name, tensor) in grads_rev.into_iter().rev() {
        grads.push(name, tensor);
    }
    params.ensure_congruent(&grads, "backward")?;
    grads.ensure_finite("backward")?;
    Ok(grads)
}

fn ensure_finite(values: &[f64], context: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!("{context} produced a non-finite activation")))
    }
}

fn param<'a>(params: &'a ParamSet, name: &str) -> Result<&'a [f64]> {
    params
        .get(name)
        .map(|t| t.data())
        .ok_or_else(|| Error::shape(format!("missing parameter '{name}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ModelSpec {
        ModelSpec {
            input_size: 8,
            conv_channels: vec![2, 3],
            head_widths: [6, 5],
            out: 3,
        }
    }

    #[test]
    fn spec_validation() {
        assert!(tiny_spec().validate().is_ok());
        let mut bad = tiny_spec();
        bad.input_size = 6;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn feature_dim_matches_topology() {
        assert_eq!(tiny_spec().feature_dim(), 3 * 2 * 2);
        assert_eq!(ModelSpec::new(64, 5).feature_dim(), 32 * 8 * 8);
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let spec = tiny_spec();
        let (params, mut bn) = init_params(&spec, 1).unwrap();
        let zeroed = params.zeros_like();
        let batch = Tensor::new(vec![2, 8, 8], vec![0.5; 2 * 64]).unwrap();
        let (logits, _) = forward(&spec, &zeroed, &mut bn, &batch).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_mode_repeats_identical_rows() {
        let spec = tiny_spec();
        let (params, mut bn) = init_params(&spec, 7).unwrap();
        bn.set_mode(BnMode::Eval);
        let row: Vec<f64> = (0..64).map(|i| (i as f64) / 64.0).collect();
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(&row);
        }
        let batch = Tensor::new(vec![4, 8, 8], data).unwrap();
        let (logits, _) = forward(&spec, &params, &mut bn, &batch).unwrap();
        let out = logits.data();
        for r in 1..4 {
            assert_eq!(&out[r * 3..(r + 1) * 3], &out[0..3]);
        }
    }

    #[test]
    fn replace_head_keeps_everything_but_the_final_module() {
        let spec = tiny_spec();
        let (params, _) = init_params(&spec, 3).unwrap();
        let (new_params, new_spec) = replace_head(&params, &spec, 4, 11).unwrap();
        assert_eq!(new_spec.out, 4);
        for (name, tensor) in params.iter() {
            if !name.starts_with("head3.") {
                assert_eq!(new_params.get(name).unwrap(), tensor, "{name}");
            }
        }
        assert_eq!(new_params.get("head3.weight").unwrap().shape(), &[5, 4]);
        let bound = kaiming_bound(5);
        assert!(new_params
            .get("head3.weight")
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() <= bound));
    }

    #[test]
    fn initialisation_is_deterministic() {
        let spec = tiny_spec();
        let (a, _) = init_params(&spec, 42).unwrap();
        let (b, _) = init_params(&spec, 42).unwrap();
        assert_eq!(a, b);
    }
}
