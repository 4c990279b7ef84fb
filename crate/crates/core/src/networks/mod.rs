//! Generator and patch discriminator.
//!
//! Both networks reserve the trailing six channels of every intermediate
//! activation for area-downsampled copies of two of their input images:
//! `x` and `y_new` for the generator, `x` and `y` for the discriminator.

mod discriminator;
mod generator;
mod params;

pub use discriminator::{
    ConvLayerSpec, Discriminator, DiscriminatorField, DiscriminatorSpec, DISCRIMINATOR_RECEPTIVE_FIELD,
};
pub use generator::{
    inject_input_copies, Generator, GeneratorOutput, GeneratorSpec, GeneratorVars, StageShape,
    ALPHA_BIAS_INIT, GENERATOR_KERNEL, GENERATOR_OUTPUT_CHANNELS,
};
pub use params::{ParamSet, INIT_STD};

/// Channels holding downsampled input copies in every hidden activation.
pub const INPUT_COPY_CHANNELS: usize = 6;

/// Receptive field of a stack of `(kernel, stride)` convolutions:
/// `r_0 = 1`, `r_n = r_{n-1} + (kernel_n - 1) * prod_{m<n} stride_m`.
pub fn receptive_field(layers: &[(usize, usize)]) -> usize {
    let mut field = 1;
    let mut jump = 1;
    for &(kernel, stride) in layers {
        field += (kernel - 1) * jump;
        jump *= stride;
    }
    field
}
