//! Densely connected classifiers over hyperspectral patches.
//!
//! One backbone, three input treatments: full spectrum as 2D channels,
//! per-pixel mean/std summary as two 2D channels, or the whole cube as a
//! single-channel 3D volume. The backbone is an initial convolution, three
//! dense blocks joined by channel-halving transitions, then global average
//! pooling into a two-logit head.
//!
//! Every walk over the parameter list (initialization, counting, binding
//! for a forward pass, checkpoint layout) goes through [`for_each_tensor`],
//! so the orderings cannot drift apart.

mod checkpoint;
#[cfg(test)]
mod tests;

pub use checkpoint::{load_params, save_params};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::Patch;
use crate::tensor::gradcheck::{check_scalar_fn, GradCheckReport};
use crate::tensor::{
    avg_pool2d, avg_pool3d, batch_norm, concat_channels, conv2d, conv3d, dense,
    global_avg_pool, relu, softmax_cross_entropy, Mode, RunningStats, Tape, Tensor,
};

pub const NUM_CLASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "densenet2d")]
    Densenet2d,
    #[serde(rename = "densenet2d-ms")]
    Densenet2dMs,
    #[serde(rename = "densenet3d")]
    Densenet3d,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Densenet2d => "Densenet2D",
            Variant::Densenet2dMs => "Densenet2D-MS",
            Variant::Densenet3d => "Densenet3D",
        })
    }
}

/// Architecture description; every field participates in the layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub variant: Variant,
    /// Spectral depth of the incoming patches (pre-summary for the MS variant).
    pub bands: usize,
    pub patch_size: usize,
    pub initial_channels: usize,
    pub growth_rate: usize,
    pub layers_per_block: [usize; 3],
    pub num_classes: usize,
    /// Weight-initialization seed.
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            variant: Variant::Densenet3d,
            bands: 30,
            patch_size: 32,
            initial_channels: 16,
            growth_rate: 12,
            layers_per_block: [4, 4, 4],
            num_classes: NUM_CLASSES,
            seed: 1,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes != NUM_CLASSES {
            return Err(Error::Parameter(format!(
                "only {NUM_CLASSES}-class heads are supported, got {}",
                self.num_classes
            )));
        }
        if self.initial_channels == 0 || self.growth_rate == 0 {
            return Err(Error::Parameter(
                "initial channels and growth rate must be positive".into(),
            ));
        }
        if self.layers_per_block.iter().any(|&l| l == 0) {
            return Err(Error::Parameter(
                "each dense block needs at least one layer".into(),
            ));
        }
        if self.bands == 0 {
            return Err(Error::Parameter("bands must be positive".into()));
        }
        // Two transitions each halve the spatial extent; anything reaching
        // the head with extent zero is a spec error, not a runtime surprise.
        if self.patch_size < 4 {
            return Err(Error::Parameter(format!(
                "patch size {} collapses below 1 before global pooling",
                self.patch_size
            )));
        }
        if self.variant == Variant::Densenet3d && self.bands < 4 {
            return Err(Error::Parameter(format!(
                "3D variant pools the spectral axis twice; {} bands collapse below 1",
                self.bands
            )));
        }
        Ok(())
    }

    /// Channels the first convolution consumes.
    pub fn in_channels(&self) -> usize {
        match self.variant {
            Variant::Densenet2d => self.bands,
            Variant::Densenet2dMs => 2,
            Variant::Densenet3d => 1,
        }
    }

    /// Expected input shape for a batch of `n` samples.
    pub fn input_shape(&self, n: usize) -> Vec<usize> {
        let s = self.patch_size;
        match self.variant {
            Variant::Densenet2d | Variant::Densenet2dMs => vec![n, self.in_channels(), s, s],
            Variant::Densenet3d => vec![n, 1, self.bands, s, s],
        }
    }

    /// Values per sample.
    pub fn sample_numel(&self) -> usize {
        self.input_shape(1).iter().product()
    }

    /// Spectral depth a patch must carry for this variant.
    pub fn patch_bands(&self) -> usize {
        match self.variant {
            Variant::Densenet2dMs => 2,
            _ => self.bands,
        }
    }
}

/// Tiny configuration for finite-difference checks: every variant, a few
/// hundred parameters.
pub fn micro_spec(variant: Variant) -> ModelSpec {
    ModelSpec {
        variant,
        bands: 4,
        patch_size: 8,
        initial_channels: 4,
        growth_rate: 2,
        layers_per_block: [1, 1, 1],
        num_classes: NUM_CLASSES,
        seed: 11,
    }
}

enum Init {
    He { fan_in: usize },
    One,
    Zero,
}

/// Walk the trainable tensors in their canonical order.
fn for_each_tensor(spec: &ModelSpec, mut f: impl FnMut(String, Vec<usize>, Init)) {
    let volumetric = spec.variant == Variant::Densenet3d;
    let g = spec.growth_rate;

    let conv_shape = |out_c: usize, in_c: usize, k: usize| -> (Vec<usize>, usize) {
        if volumetric {
            (vec![out_c, in_c, k, k, k], in_c * k * k * k)
        } else {
            (vec![out_c, in_c, k, k], in_c * k * k)
        }
    };

    let (shape, fan) = conv_shape(spec.initial_channels, spec.in_channels(), 3);
    f("stem.kernel".into(), shape, Init::He { fan_in: fan });

    let mut channels = spec.initial_channels;
    for b in 0..3 {
        let block_in = channels;
        for l in 0..spec.layers_per_block[b] {
            let cin = block_in + l * g;
            f(format!("block{b}.layer{l}.norm.gamma"), vec![cin], Init::One);
            f(format!("block{b}.layer{l}.norm.beta"), vec![cin], Init::Zero);
            let (shape, fan) = conv_shape(g, cin, 3);
            f(format!("block{b}.layer{l}.conv.kernel"), shape, Init::He { fan_in: fan });
        }
        channels = block_in + spec.layers_per_block[b] * g;
        if b < 2 {
            f(format!("transition{b}.norm.gamma"), vec![channels], Init::One);
            f(format!("transition{b}.norm.beta"), vec![channels], Init::Zero);
            let half = channels / 2;
            let (shape, fan) = conv_shape(half, channels, 1);
            f(format!("transition{b}.conv.kernel"), shape, Init::He { fan_in: fan });
            channels = half;
        }
    }

    f("head.norm.gamma".into(), vec![channels], Init::One);
    f("head.norm.beta".into(), vec![channels], Init::Zero);
    f("head.dense.weight".into(), vec![NUM_CLASSES, channels], Init::He { fan_in: channels });
    f("head.dense.bias".into(), vec![NUM_CLASSES], Init::Zero);
}

/// Walk the normalization layers (owners of running statistics) in order.
fn for_each_stat(spec: &ModelSpec, mut f: impl FnMut(String, usize)) {
    let g = spec.growth_rate;
    let mut channels = spec.initial_channels;
    for b in 0..3 {
        let block_in = channels;
        for l in 0..spec.layers_per_block[b] {
            f(format!("block{b}.layer{l}.norm"), block_in + l * g);
        }
        channels = block_in + spec.layers_per_block[b] * g;
        if b < 2 {
            f(format!("transition{b}.norm"), channels);
            channels /= 2;
        }
    }
    f("head.norm".into(), channels);
}

/// Trainable tensor: shape plus flat values.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// A built model: spec, trainable tensors, and norm running statistics.
#[derive(Clone, Debug)]
pub struct ModelParams {
    spec: ModelSpec,
    tensors: Vec<(String, ParamTensor)>,
    stats: Vec<(String, RunningStats)>,
}

/// He-normal initialization of every tensor, seeded by the spec.
pub fn build(spec: &ModelSpec) -> Result<ModelParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tensors = Vec::new();
    for_each_tensor(spec, |name, shape, init| {
        let n: usize = shape.iter().product();
        let values = match init {
            Init::He { fan_in } => {
                let std = (2.0 / fan_in as f64).sqrt();
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        std * z
                    })
                    .collect()
            }
            Init::One => vec![1.0; n],
            Init::Zero => vec![0.0; n],
        };
        tensors.push((name, ParamTensor { shape, values }));
    });
    let mut stats = Vec::new();
    for_each_stat(spec, |name, channels| {
        stats.push((name, RunningStats::new(channels)));
    });
    Ok(ModelParams { spec: spec.clone(), tensors, stats })
}

/// A forward pass keeps the logits and the tape-bound parameter tensors so
/// gradients can be read back per parameter after `backward`.
pub struct ForwardPass {
    pub logits: Tensor,
    pub bound: Vec<Tensor>,
}

impl ModelParams {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn tensors(&self) -> &[(String, ParamTensor)] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [(String, ParamTensor)] {
        &mut self.tensors
    }

    pub fn stats(&self) -> &[(String, RunningStats)] {
        &self.stats
    }

    /// Trainable scalars; a pure function of the spec.
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.values.len()).sum()
    }

    /// Reassemble from checkpoint parts, enforcing the canonical layout.
    pub(crate) fn from_parts(
        spec: ModelSpec,
        tensors: Vec<(String, ParamTensor)>,
        stats: Vec<(String, RunningStats)>,
    ) -> Result<Self> {
        spec.validate()
            .map_err(|e| Error::Checkpoint(format!("embedded spec invalid: {e}")))?;
        let mut expected = Vec::new();
        for_each_tensor(&spec, |name, shape, _| expected.push((name, shape)));
        if expected.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors for this spec, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, tensor), (want_name, want_shape)) in tensors.iter().zip(&expected) {
            if name != want_name || &tensor.shape != want_shape {
                return Err(Error::Checkpoint(format!(
                    "tensor '{name}' with shape {:?} where '{want_name}' {want_shape:?} belongs",
                    tensor.shape
                )));
            }
        }
        let mut expected_stats = Vec::new();
        for_each_stat(&spec, |name, channels| expected_stats.push((name, channels)));
        if expected_stats.len() != stats.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} norm layers, found {}",
                expected_stats.len(),
                stats.len()
            )));
        }
        for ((name, s), (want_name, channels)) in stats.iter().zip(&expected_stats) {
            if name != want_name || s.mean.len() != *channels || s.var.len() != *channels {
                return Err(Error::Checkpoint(format!(
                    "running stats '{name}' ({} channels) where '{want_name}' ({channels}) belongs",
                    s.mean.len()
                )));
            }
        }
        Ok(ModelParams { spec, tensors, stats })
    }

    fn check_input(&self, input: &[f64], n: usize) -> Result<Vec<usize>> {
        if n == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let shape = self.spec.input_shape(n);
        let want: usize = shape.iter().product();
        if input.len() != want {
            return Err(Error::Shape(format!(
                "input: {} values do not fill {shape:?} for {}",
                input.len(),
                self.spec.variant
            )));
        }
        Ok(shape)
    }

    /// Run the network, updating running statistics when training.
    pub fn forward(&mut self, input: &[f64], n: usize, mode: Mode) -> Result<ForwardPass> {
        let shape = self.check_input(input, n)?;
        let tape = Tape::new();
        let mut bound = Vec::with_capacity(self.tensors.len());
        for (_, t) in &self.tensors {
            bound.push(tape.param(&t.shape, t.values.clone())?);
        }
        let x = tape.leaf(&shape, input.to_vec())?;
        let mut stats: Vec<RunningStats> = self.stats.iter().map(|(_, s)| s.clone()).collect();
        let logits = run_network(&self.spec, &bound, &x, mode, &mut stats)?;
        if mode == Mode::Train {
            for ((_, dst), src) in self.stats.iter_mut().zip(stats) {
                *dst = src;
            }
        }
        Ok(ForwardPass { logits, bound })
    }

    /// Deterministic evaluation pass; running statistics are read, not moved.
    pub fn forward_eval(&self, input: &[f64], n: usize) -> Result<ForwardPass> {
        let shape = self.check_input(input, n)?;
        let tape = Tape::new();
        let mut bound = Vec::with_capacity(self.tensors.len());
        for (_, t) in &self.tensors {
            bound.push(tape.param(&t.shape, t.values.clone())?);
        }
        let x = tape.leaf(&shape, input.to_vec())?;
        let mut stats: Vec<RunningStats> = self.stats.iter().map(|(_, s)| s.clone()).collect();
        let logits = run_network(&self.spec, &bound, &x, Mode::Eval, &mut stats)?;
        Ok(ForwardPass { logits, bound })
    }

    /// Eval-mode class probabilities, one `[healthy, tumor]` row per sample.
    pub fn predict_proba(&self, input: &[f64], n: usize) -> Result<Vec<[f64; 2]>> {
        let pass = self.forward_eval(input, n)?;
        let logits = pass.logits.value();
        Ok(softmax_rows(&logits))
    }
}

/// Numerically stable two-class softmax per row.
pub fn softmax_rows(logits: &[f64]) -> Vec<[f64; 2]> {
    logits
        .chunks_exact(2)
        .map(|row| {
            let m = row[0].max(row[1]);
            let e0 = (row[0] - m).exp();
            let e1 = (row[1] - m).exp();
            let z = e0 + e1;
            [e0 / z, e1 / z]
        })
        .collect()
}

/// Prefix shape errors with the stage that raised them.
fn staged(stage: &str, e: Error) -> Error {
    match e {
        Error::Shape(m) => Error::Shape(format!("{stage}: {m}")),
        other => other,
    }
}

struct BoundCursor<'a> {
    bound: &'a [Tensor],
    at: usize,
}

impl<'a> BoundCursor<'a> {
    fn next(&mut self, stage: &str) -> Result<&'a Tensor> {
        let t = self.bound.get(self.at).ok_or_else(|| {
            Error::Shape(format!("{stage}: parameter list exhausted at index {}", self.at))
        })?;
        self.at += 1;
        Ok(t)
    }
}

/// The backbone walk over tape-bound tensors, shared by training, eval, and
/// finite-difference checks.
pub(crate) fn run_network(
    spec: &ModelSpec,
    bound: &[Tensor],
    input: &Tensor,
    mode: Mode,
    stats: &mut [RunningStats],
) -> Result<Tensor> {
    let volumetric = spec.variant == Variant::Densenet3d;
    let conv = if volumetric { conv3d } else { conv2d };
    let pool = if volumetric { avg_pool3d } else { avg_pool2d };
    let g = spec.growth_rate;
    let mut t = BoundCursor { bound, at: 0 };
    let mut si = 0usize;

    let kernel = t.next("stem")?;
    let mut h = conv(input, kernel, 1, 1).map_err(|e| staged("stem", e))?;

    let mut channels = spec.initial_channels;
    for b in 0..3 {
        let block_in = channels;
        let mut features = vec![h.clone()];
        for l in 0..spec.layers_per_block[b] {
            let stage = format!("block{b}.layer{l}");
            let x = if features.len() == 1 {
                features[0].clone()
            } else {
                concat_channels(&features).map_err(|e| staged(&stage, e))?
            };
            // Dense connectivity: layer l sees the block input plus one
            // growth-rate slab per previous layer.
            assert_eq!(
                x.shape()[1],
                block_in + l * g,
                "dense concatenation out of step at {stage}"
            );
            let gamma = t.next(&stage)?;
            let beta = t.next(&stage)?;
            let y = batch_norm(&x, gamma, beta, &mut stats[si], mode)
                .map_err(|e| staged(&stage, e))?;
            si += 1;
            let y = relu(&y).map_err(|e| staged(&stage, e))?;
            let kernel = t.next(&stage)?;
            let y = conv(&y, kernel, 1, 1).map_err(|e| staged(&stage, e))?;
            features.push(y);
        }
        h = if features.len() == 1 {
            features[0].clone()
        } else {
            concat_channels(&features).map_err(|e| staged("block output", e))?
        };
        channels = block_in + spec.layers_per_block[b] * g;

        if b < 2 {
            let stage = format!("transition{b}");
            let gamma = t.next(&stage)?;
            let beta = t.next(&stage)?;
            let y = batch_norm(&h, gamma, beta, &mut stats[si], mode)
                .map_err(|e| staged(&stage, e))?;
            si += 1;
            let y = relu(&y).map_err(|e| staged(&stage, e))?;
            let kernel = t.next(&stage)?;
            let y = conv(&y, kernel, 1, 0).map_err(|e| staged(&stage, e))?;
            h = pool(&y).map_err(|e| staged(&stage, e))?;
            channels /= 2;
        }
    }

    let gamma = t.next("head")?;
    let beta = t.next("head")?;
    let y = batch_norm(&h, gamma, beta, &mut stats[si], mode).map_err(|e| staged("head", e))?;
    si += 1;
    let y = relu(&y).map_err(|e| staged("head", e))?;
    let pooled = global_avg_pool(&y).map_err(|e| staged("head", e))?;
    let weight = t.next("head")?;
    let bias = t.next("head")?;
    let logits = dense(&pooled, weight, bias).map_err(|e| staged("head", e))?;

    assert_eq!(t.at, bound.len(), "unconsumed parameters after head");
    assert_eq!(si, stats.len(), "unconsumed running statistics after head");
    Ok(logits)
}

/// Stack patches into a batch for this spec's variant.
///
/// The patch layout (band-major planes) already matches the network input
/// layout for every variant; the 3D treatment merely views the bands as a
/// depth axis under a single channel.
pub fn assemble_batch(spec: &ModelSpec, patches: &[&Patch]) -> Result<Vec<f64>> {
    let want_bands = spec.patch_bands();
    let mut out = Vec::with_capacity(patches.len() * spec.sample_numel());
    for p in patches {
        if p.size != spec.patch_size || p.bands != want_bands {
            return Err(Error::Shape(format!(
                "patch {}x{}x{} does not fit {} ({}x{}x{})",
                p.size,
                p.size,
                p.bands,
                spec.variant,
                spec.patch_size,
                spec.patch_size,
                want_bands
            )));
        }
        out.extend_from_slice(&p.data);
    }
    Ok(out)
}

/// Finite-difference check of the full forward + weighted loss for one
/// variant at the micro spec.
pub fn gradcheck_variant(variant: Variant, seed: u64) -> Result<GradCheckReport> {
    let spec = micro_spec(variant);
    let params = build(&spec)?;
    let n = 2;
    let shape = spec.input_shape(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input: Vec<f64> = (0..n * spec.sample_numel())
        .map(|_| rng.gen_range(0.1..0.9))
        .collect();
    let labels = vec![0usize, 1];
    let weights = [1.25, 0.8];
    let stats0: Vec<RunningStats> = params.stats().iter().map(|(_, s)| s.clone()).collect();
    let check_params: Vec<(Vec<usize>, Vec<f64>)> = params
        .tensors()
        .iter()
        .map(|(_, t)| (t.shape.clone(), t.values.clone()))
        .collect();

    check_scalar_fn(&variant.to_string(), &check_params, move |tape, bound| {
        let x = tape.leaf(&shape, input.clone())?;
        let mut stats = stats0.clone();
        let logits = run_network(&spec, bound, &x, Mode::Train, &mut stats)?;
        softmax_cross_entropy(&logits, &labels, weights)
    })
}
