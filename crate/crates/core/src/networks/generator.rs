use std::collections::HashMap;

use ndarray::{s, Array4, ArrayD, ArrayView4, Ix4, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{gaussian, ParamSet, INIT_STD};
use super::INPUT_COPY_CHANNELS;
use crate::autograd::{Graph, Scalar, Var};
use crate::data::Resolution;
use crate::error::{ensure_valid, CaganError, Result};

/// Kernel size of the generator's stride-2 convolutions and their
/// transposed counterparts.
pub const GENERATOR_KERNEL: usize = 4;

/// Initial bias of the alpha logit. A fresh generator starts close to the
/// identity mapping (alpha near 0.05) instead of a uniform half blend.
pub const ALPHA_BIAS_INIT: f64 = -3.0;

/// Channels of the output head: one alpha plus three color channels.
pub const GENERATOR_OUTPUT_CHANNELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub input_resolution: Resolution,
    /// Channels of the first encoder stage; doubled at every later stage.
    pub base_channels: usize,
    /// Number of stride-2 encoder stages (and of mirrored decoder stages).
    pub depth: usize,
}

/// Channel count and spatial size of one stage's activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        ensure_valid!(self.depth >= 1, "generator depth must be at least 1");
        ensure_valid!(
            self.base_channels > INPUT_COPY_CHANNELS,
            "base_channels ({}) must exceed the {} input-copy channels",
            self.base_channels,
            INPUT_COPY_CHANNELS
        );
        ensure_valid!(
            self.input_resolution.divisible_by_pow2(self.depth),
            "resolution {} (HxW {}x{}) is not divisible by 2^{}",
            self.input_resolution,
            self.input_resolution.height,
            self.input_resolution.width,
            self.depth
        );
        Ok(())
    }

    /// Output shapes of the encoder stages, shallowest first.
    pub fn encoder_stages(&self) -> Vec<StageShape> {
        (0..self.depth)
            .map(|k| StageShape {
                channels: self.base_channels << k,
                height: self.input_resolution.height >> (k + 1),
                width: self.input_resolution.width >> (k + 1),
            })
            .collect()
    }

    /// Output shapes of the decoder stages, deepest first; the last one is
    /// the four-channel head at full resolution.
    pub fn decoder_stages(&self) -> Vec<StageShape> {
        let enc = self.encoder_stages();
        (0..self.depth)
            .map(|k| {
                if k + 1 == self.depth {
                    StageShape {
                        channels: GENERATOR_OUTPUT_CHANNELS,
                        height: self.input_resolution.height,
                        width: self.input_resolution.width,
                    }
                } else {
                    enc[self.depth - 2 - k]
                }
            })
            .collect()
    }

    /// Input channels of decoder stage `k` (deepest first).
    fn decoder_in_channels(&self, k: usize) -> usize {
        let enc = self.encoder_stages();
        if k == 0 {
            enc[self.depth - 1].channels
        } else {
            2 * enc[self.depth - 1 - k].channels
        }
    }
}

/// Prediction of one generator pass.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorOutput<T> {
    /// `[n, 1, h, w]`, sigmoid output.
    pub alpha: Array4<T>,
    /// `[n, 3, h, w]`, tanh output.
    pub raw_color: Array4<T>,
    /// `alpha * raw_color + (1 - alpha) * x`.
    pub composite: Array4<T>,
}

/// Graph handles of one recorded generator pass.
#[derive(Clone, Debug)]
pub struct GeneratorVars {
    pub alpha: Var,
    pub raw_color: Var,
    pub composite: Var,
    /// Encoder activations, shallowest first.
    pub encoder: Vec<Var>,
    /// Decoder activations, deepest first; the last is the raw head.
    pub decoder: Vec<Var>,
}

/// Encoder-decoder with skip connections and an alpha/color head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator<T> {
    spec: GeneratorSpec,
    params: ParamSet<T>,
}

impl<T: Scalar> Generator<T> {
    /// Draws fresh parameters: Gaussian weights, zero biases except for the
    /// alpha logit, which starts at [`ALPHA_BIAS_INIT`].
    pub fn new<R: Rng + ?Sized>(spec: GeneratorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let k = GENERATOR_KERNEL;
        let mut params = ParamSet::default();
        let mut in_ch = 3 * 3;
        for (i, stage) in spec.encoder_stages().iter().enumerate() {
            params.push(format!("enc{}.weight", i + 1), gaussian(&[stage.channels, in_ch, k, k], INIT_STD, rng));
            params.push(format!("enc{}.bias", i + 1), ArrayD::zeros(IxDyn(&[stage.channels])));
            in_ch = stage.channels;
        }
        for (i, stage) in spec.decoder_stages().iter().enumerate() {
            let cin = spec.decoder_in_channels(i);
            params.push(format!("dec{}.weight", i + 1), gaussian(&[cin, stage.channels, k, k], INIT_STD, rng));
            let mut bias = ArrayD::zeros(IxDyn(&[stage.channels]));
            if i + 1 == spec.depth {
                bias[[0]] = T::from_f64_lossy(ALPHA_BIAS_INIT);
            }
            params.push(format!("dec{}.bias", i + 1), bias);
        }
        Ok(Generator { spec, params })
    }

    /// Wraps existing parameters after checking their layout.
    pub fn from_params(spec: GeneratorSpec, params: ParamSet<T>) -> Result<Self> {
        let template = Generator::<T>::new(spec, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        template.params.check_layout(&params)?;
        Ok(Generator { spec, params })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> Generator<U> {
        Generator {
            spec: self.spec,
            params: self.params.cast(),
        }
    }

    /// Records one pass. `params` are the handles returned by
    /// `self.params().bind(..)`; `x`, `y_old` and `y_new` are `[n, 3, h, w]`.
    pub fn forward_graph(&self, g: &mut Graph<T>, params: &[Var], x: Var, y_old: Var, y_new: Var) -> GeneratorVars {
        assert_eq!(params.len(), self.params.len(), "parameter handle count");
        let depth = self.spec.depth;
        let xy = g.concat_channels(x, y_old);
        let input = g.concat_channels(xy, y_new);
        let mut copies = CopyCache::new(g, x, y_new);

        let mut encoder = Vec::with_capacity(depth);
        let mut h = input;
        for k in 0..depth {
            h = g.conv2d(h, params[2 * k], params[2 * k + 1], 2, 1);
            if k > 0 {
                h = g.instance_norm(h);
            }
            h = g.relu(h);
            h = copies.inject(g, h);
            encoder.push(h);
        }

        let mut decoder = Vec::with_capacity(depth);
        for k in 0..depth {
            let input = if k == 0 {
                encoder[depth - 1]
            } else {
                g.concat_channels(h, encoder[depth - 1 - k])
            };
            let p = 2 * (depth + k);
            h = g.conv_transpose2d(input, params[p], params[p + 1], 2, 1);
            if k + 1 < depth {
                h = g.instance_norm(h);
                h = g.relu(h);
                h = copies.inject(g, h);
            }
            decoder.push(h);
        }

        let alpha_logit = g.narrow_channels(h, 0, 1);
        let color_logit = g.narrow_channels(h, 1, 3);
        let alpha = g.sigmoid(alpha_logit);
        let raw_color = g.tanh(color_logit);
        let composite = g.alpha_blend(alpha, raw_color, x);
        GeneratorVars {
            alpha,
            raw_color,
            composite,
            encoder,
            decoder,
        }
    }

    /// Checks that three image batches match the configured resolution.
    pub fn check_inputs(&self, x: ArrayView4<T>, y_old: ArrayView4<T>, y_new: ArrayView4<T>) -> Result<()> {
        let res = self.spec.input_resolution;
        for (name, dim) in [("x", x.dim()), ("y_old", y_old.dim()), ("y_new", y_new.dim())] {
            let (n, c, h, w) = dim;
            ensure_valid!(c == 3, "{name} must have 3 channels, has {c}");
            ensure_valid!(
                (h, w) == (res.height, res.width),
                "{name} is {w}x{h} but the generator expects {res}"
            );
            ensure_valid!(n == x.dim().0 && n > 0, "inconsistent batch size for {name}");
        }
        Ok(())
    }

    /// Evaluates the generator without recording gradients.
    pub fn forward(&self, x: ArrayView4<T>, y_old: ArrayView4<T>, y_new: ArrayView4<T>) -> Result<GeneratorOutput<T>> {
        self.check_inputs(x, y_old, y_new)?;
        let mut g = Graph::new();
        let params = self.params.bind(&mut g, false);
        let xv = g.constant(x.to_owned().into_dyn());
        let yo = g.constant(y_old.to_owned().into_dyn());
        let yn = g.constant(y_new.to_owned().into_dyn());
        let vars = self.forward_graph(&mut g, &params, xv, yo, yn);
        let take = |v: Var| -> Array4<T> {
            g.value(v).clone().into_dimensionality::<Ix4>().expect("rank 4")
        };
        Ok(GeneratorOutput {
            alpha: take(vars.alpha),
            raw_color: take(vars.raw_color),
            composite: take(vars.composite),
        })
    }
}

/// Downsampled `[a, b]` copies per spatial size, recorded once per pass.
pub(crate) struct CopyCache {
    source: Var,
    by_size: HashMap<(usize, usize), Var>,
}

impl CopyCache {
    pub(crate) fn new<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Self {
        let source = g.concat_channels(a, b);
        CopyCache {
            source,
            by_size: HashMap::new(),
        }
    }

    pub(crate) fn inject<T: Scalar>(&mut self, g: &mut Graph<T>, activation: Var) -> Var {
        let shape = g.value(activation).shape().to_vec();
        let (h, w) = (shape[2], shape[3]);
        let source = self.source;
        let copies = *self
            .by_size
            .entry((h, w))
            .or_insert_with(|| g.resize_area(source, h, w));
        g.overwrite_trailing_channels(activation, copies)
    }
}

/// Replaces the last six channels of `activation` (`[n, c, h, w]`, `c > 6`)
/// with `x_small` and `y_small` (`[n, 3, h, w]` each).
pub fn inject_input_copies<T: Scalar>(
    activation: ArrayView4<T>,
    x_small: ArrayView4<T>,
    y_small: ArrayView4<T>,
) -> Result<Array4<T>> {
    let (n, c, h, w) = activation.dim();
    if c <= INPUT_COPY_CHANNELS {
        return Err(CaganError::Validation(format!(
            "activation has {c} channels; input copies need more than {INPUT_COPY_CHANNELS}"
        )));
    }
    for (name, dim) in [("x_small", x_small.dim()), ("y_small", y_small.dim())] {
        ensure_valid!(
            dim == (n, 3, h, w),
            "{name} has shape {:?}, expected {:?}",
            dim,
            (n, 3, h, w)
        );
    }
    let mut out = activation.to_owned();
    out.slice_mut(s![.., c - 6..c - 3, .., ..]).assign(&x_small);
    out.slice_mut(s![.., c - 3.., .., ..]).assign(&y_small);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(h: usize, w: usize, depth: usize) -> GeneratorSpec {
        GeneratorSpec {
            input_resolution: Resolution::new(h, w),
            base_channels: 8,
            depth,
        }
    }

    #[test]
    fn bottleneck_of_depth_five_at_128_by_96() {
        let s = GeneratorSpec {
            input_resolution: Resolution::new(128, 96),
            base_channels: 16,
            depth: 5,
        };
        s.validate().unwrap();
        let last = *s.encoder_stages().last().unwrap();
        assert_eq!((last.height, last.width), (4, 3));
        assert_eq!(last.channels, 256);
    }

    #[test]
    fn indivisible_resolution_is_rejected() {
        let s = GeneratorSpec {
            input_resolution: Resolution::new(100, 96),
            base_channels: 16,
            depth: 5,
        };
        assert!(Generator::<f32>::new(s, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err().is_validation());
        let thin = GeneratorSpec { base_channels: 6, ..spec(16, 16, 2) };
        assert!(thin.validate().is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Generator::<f32>::new(spec(16, 16, 2), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = Generator::<f32>::new(spec(16, 16, 2), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        let c = Generator::<f32>::new(spec(16, 16, 2), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forward_produces_valid_ranges_and_shapes() {
        let gen = Generator::<f32>::new(spec(16, 8, 2), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut img = || Array::from_shape_fn((2, 3, 16, 8), |_| rng.gen_range(-1.0f32..1.0));
        let (x, yo, yn) = (img(), img(), img());
        let out = gen.forward(x.view(), yo.view(), yn.view()).unwrap();
        assert_eq!(out.alpha.dim(), (2, 1, 16, 8));
        assert_eq!(out.composite.dim(), (2, 3, 16, 8));
        assert!(out.alpha.iter().all(|&a| (0.0..=1.0).contains(&a)));
        assert!(out.raw_color.iter().all(|&c| (-1.0..=1.0).contains(&c)));
        let bad = Array4::<f32>::zeros((2, 3, 8, 8));
        assert!(gen.forward(bad.view(), yo.view(), yn.view()).is_err());
    }

    #[test]
    fn fresh_generator_starts_near_identity() {
        let gen = Generator::<f32>::new(spec(16, 8, 2), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = Array::from_elem((1, 3, 16, 8), 0.3f32);
        let out = gen.forward(x.view(), x.view(), x.view()).unwrap();
        let expected = 1.0 / (1.0 + (-ALPHA_BIAS_INIT).exp());
        let mean = out.alpha.mean().unwrap() as f64;
        assert!((mean - expected).abs() < 0.02, "alpha mean {mean} vs {expected}");
    }

    #[test]
    fn from_params_checks_layout() {
        let a = Generator::<f32>::new(spec(16, 16, 2), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(Generator::from_params(*a.spec(), a.params().clone()).is_ok());
        assert!(Generator::from_params(spec(16, 16, 1), a.params().clone()).is_err());
    }

    #[test]
    fn injection_overwrites_exactly_the_last_six_channels() {
        let act = Array::from_shape_fn((1, 32, 2, 3), |(_, c, y, x)| (c * 100 + y * 10 + x) as f64);
        let xs = Array::from_elem((1, 3, 2, 3), -1.0);
        let ys = Array::from_elem((1, 3, 2, 3), 0.5);
        let out = inject_input_copies(act.view(), xs.view(), ys.view()).unwrap();
        assert_eq!(out.slice(s![.., ..26, .., ..]), act.slice(s![.., ..26, .., ..]));
        assert_eq!(out.slice(s![.., 26..29, .., ..]), xs);
        assert_eq!(out.slice(s![.., 29.., .., ..]), ys);
        let twice = inject_input_copies(out.view(), xs.view(), ys.view()).unwrap();
        assert_eq!(twice, out);
        let narrow = Array4::<f64>::zeros((1, 6, 2, 3));
        assert!(inject_input_copies(narrow.view(), xs.view(), ys.view()).is_err());
    }
}
