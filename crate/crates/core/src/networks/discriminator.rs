use ndarray::{Array3, ArrayD, ArrayView4, Axis, Ix4, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::generator::CopyCache;
use super::params::{gaussian, ParamSet, INIT_STD};
use super::{receptive_field, INPUT_COPY_CHANNELS};
use crate::autograd::conv::conv_output_size;
use crate::autograd::{Graph, Scalar, Var};
use crate::data::Resolution;
use crate::error::{ensure_valid, CaganError, Result};

/// Receptive field every discriminator stack must have.
pub const DISCRIMINATOR_RECEPTIVE_FIELD: usize = 63;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
}

impl ConvLayerSpec {
    fn pad(&self) -> usize {
        self.kernel / 2
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub input_resolution: Resolution,
    pub base_channels: usize,
    pub conv_layers: Vec<ConvLayerSpec>,
}

impl DiscriminatorSpec {
    /// Five 3x3 stride-2 convolutions with doubling channels and a
    /// single-channel output layer.
    pub fn standard(input_resolution: Resolution, base_channels: usize) -> Self {
        let mut conv_layers: Vec<ConvLayerSpec> = (0..4)
            .map(|k| ConvLayerSpec {
                kernel: 3,
                stride: 2,
                out_channels: base_channels << k,
            })
            .collect();
        conv_layers.push(ConvLayerSpec {
            kernel: 3,
            stride: 2,
            out_channels: 1,
        });
        DiscriminatorSpec {
            input_resolution,
            base_channels,
            conv_layers,
        }
    }

    pub fn receptive_field(&self) -> usize {
        let layers: Vec<(usize, usize)> = self.conv_layers.iter().map(|l| (l.kernel, l.stride)).collect();
        receptive_field(&layers)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_valid!(!self.conv_layers.is_empty(), "discriminator has no layers");
        ensure_valid!(
            self.receptive_field() == DISCRIMINATOR_RECEPTIVE_FIELD,
            "discriminator receptive field is {}, must be {}",
            self.receptive_field(),
            DISCRIMINATOR_RECEPTIVE_FIELD
        );
        let last = self.conv_layers.last().expect("nonempty");
        ensure_valid!(last.out_channels == 1, "final discriminator layer must output 1 channel");
        for layer in &self.conv_layers[..self.conv_layers.len() - 1] {
            ensure_valid!(
                layer.out_channels > INPUT_COPY_CHANNELS,
                "hidden discriminator layers need more than {INPUT_COPY_CHANNELS} channels"
            );
        }
        for layer in &self.conv_layers {
            ensure_valid!(layer.kernel % 2 == 1, "discriminator kernels must be odd");
            ensure_valid!(layer.stride >= 1, "stride must be positive");
        }
        ensure_valid!(
            self.input_resolution.height >= 1 && self.input_resolution.width >= 1,
            "empty input resolution"
        );
        Ok(())
    }

    /// Spatial size of the score field: each layer maps `n` to
    /// `ceil(n / stride)`, so exact division by the stride product whenever
    /// the resolution is divisible by it.
    pub fn field_shape(&self) -> (usize, usize) {
        self.stage_shapes().last().copied().unwrap_or((
            self.input_resolution.height,
            self.input_resolution.width,
        ))
    }

    /// Spatial size after every layer.
    pub fn stage_shapes(&self) -> Vec<(usize, usize)> {
        let (mut h, mut w) = (self.input_resolution.height, self.input_resolution.width);
        self.conv_layers
            .iter()
            .map(|l| {
                h = conv_output_size(h, l.kernel, l.stride, l.pad());
                w = conv_output_size(w, l.kernel, l.stride, l.pad());
                (h, w)
            })
            .collect()
    }
}

/// Per-patch scores `[n, h_d, w_d]` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorField<T> {
    scores: Array3<T>,
}

impl<T: Scalar> DiscriminatorField<T> {
    pub fn new(scores: Array3<T>) -> Result<Self> {
        ensure_valid!(!scores.is_empty(), "empty discriminator field");
        if let Some(bad) = scores.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(CaganError::NumericalGuard(format!(
                "discriminator score {bad:?} outside [0, 1]"
            )));
        }
        Ok(DiscriminatorField { scores })
    }

    /// A field filled with one value.
    pub fn constant(batch: usize, height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(Array3::from_elem((batch, height, width), value))
    }

    pub fn scores(&self) -> &Array3<T> {
        &self.scores
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.scores.dim()
    }
}

/// Patch discriminator over `[x, y]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator<T> {
    spec: DiscriminatorSpec,
    params: ParamSet<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(spec: DiscriminatorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::default();
        let mut in_ch = 2 * 3;
        for (i, layer) in spec.conv_layers.iter().enumerate() {
            let k = layer.kernel;
            params.push(format!("conv{}.weight", i + 1), gaussian(&[layer.out_channels, in_ch, k, k], INIT_STD, rng));
            params.push(format!("conv{}.bias", i + 1), ArrayD::zeros(IxDyn(&[layer.out_channels])));
            in_ch = layer.out_channels;
        }
        Ok(Discriminator { spec, params })
    }

    pub fn from_params(spec: DiscriminatorSpec, params: ParamSet<T>) -> Result<Self> {
        let template = Discriminator::<T>::new(spec.clone(), &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        template.params.check_layout(&params)?;
        Ok(Discriminator { spec, params })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> Discriminator<U> {
        Discriminator {
            spec: self.spec.clone(),
            params: self.params.cast(),
        }
    }

    /// Records one pass and returns the `[n, 1, h_d, w_d]` score node.
    pub fn forward_graph(&self, g: &mut Graph<T>, params: &[Var], x: Var, y: Var) -> Var {
        assert_eq!(params.len(), self.params.len(), "parameter handle count");
        let layers = &self.spec.conv_layers;
        let mut copies = CopyCache::new(g, x, y);
        let mut h = g.concat_channels(x, y);
        for (k, layer) in layers.iter().enumerate() {
            h = g.conv2d(h, params[2 * k], params[2 * k + 1], layer.stride, layer.pad());
            if k + 1 == layers.len() {
                break;
            }
            if k > 0 {
                h = g.instance_norm(h);
            }
            h = g.relu(h);
            h = copies.inject(g, h);
        }
        g.sigmoid(h)
    }

    pub fn check_inputs(&self, x: ArrayView4<T>, y: ArrayView4<T>) -> Result<()> {
        let res = self.spec.input_resolution;
        for (name, dim) in [("x", x.dim()), ("y", y.dim())] {
            let (n, c, h, w) = dim;
            ensure_valid!(c == 3, "{name} must have 3 channels, has {c}");
            ensure_valid!(
                (h, w) == (res.height, res.width),
                "{name} is {w}x{h} but the discriminator expects {res}"
            );
            ensure_valid!(n == x.dim().0 && n > 0, "inconsistent batch size for {name}");
        }
        Ok(())
    }

    /// Evaluates the score field without recording gradients.
    pub fn forward(&self, x: ArrayView4<T>, y: ArrayView4<T>) -> Result<DiscriminatorField<T>> {
        self.check_inputs(x, y)?;
        let mut g = Graph::new();
        let params = self.params.bind(&mut g, false);
        let xv = g.constant(x.to_owned().into_dyn());
        let yv = g.constant(y.to_owned().into_dyn());
        let out = self.forward_graph(&mut g, &params, xv, yv);
        let scores = g
            .value(out)
            .clone()
            .into_dimensionality::<Ix4>()
            .expect("rank 4")
            .index_axis_move(Axis(1), 0);
        DiscriminatorField::new(scores)
    }
}
