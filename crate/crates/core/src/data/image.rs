use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::imageops::FilterType;
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use ndarray::{s, Array2, Array3, Array4, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_valid, CaganError, Result};

/// Height and width of an image, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resolution {
    pub height: usize,
    pub width: usize,
}

impl Resolution {
    pub const fn new(height: usize, width: usize) -> Self {
        Resolution { height, width }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Whether both sides are multiples of `2^depth`.
    pub fn divisible_by_pow2(&self, depth: usize) -> bool {
        let factor = 1usize << depth;
        self.height % factor == 0 && self.width % factor == 0
    }

    /// Parses the `WIDTHxHEIGHT` form used on the command line.
    pub fn parse_width_x_height(text: &str) -> Result<Self> {
        let (w, h) = text
            .split_once(['x', 'X'])
            .ok_or_else(|| CaganError::Validation(format!("resolution `{text}` is not WIDTHxHEIGHT")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| CaganError::Validation(format!("bad resolution component `{v}` in `{text}`")))
        };
        Ok(Resolution::new(parse(h)?, parse(w)?))
    }
}

impl fmt::Display for Resolution {
    /// Formats as `WIDTHxHEIGHT`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Declared value range of an [`ImageTensor`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeTag {
    /// Values in `[-1, 1]`; the canonical internal range of images.
    UnitSigned,
    /// Values in `[0, 1]`; used for alpha mattes and on-disk conversion.
    Unit,
}

impl RangeTag {
    pub fn bounds(self) -> (f32, f32) {
        match self {
            RangeTag::UnitSigned => (-1.0, 1.0),
            RangeTag::Unit => (0.0, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RangeTag::UnitSigned => "unit_signed",
            RangeTag::Unit => "unit",
        }
    }
}

impl FromStr for RangeTag {
    type Err = CaganError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit_signed" => Ok(RangeTag::UnitSigned),
            "unit" => Ok(RangeTag::Unit),
            other => Err(CaganError::Validation(format!("unknown range tag `{other}`"))),
        }
    }
}

/// A `[channels, height, width]` image with a declared value range.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    data: Array3<f32>,
    range: RangeTag,
}

impl ImageTensor {
    /// Wraps `data`, checking channel count and value bounds.
    pub fn new(data: Array3<f32>, range: RangeTag) -> Result<Self> {
        let (c, h, w) = data.dim();
        ensure_valid!(c == 1 || c == 3, "image must have 1 or 3 channels, got {c}");
        ensure_valid!(h >= 1 && w >= 1, "image must be at least 1x1, got {w}x{h}");
        let (lo, hi) = range.bounds();
        if let Some(bad) = data.iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(CaganError::Validation(format!(
                "value {bad} outside {} range [{lo}, {hi}]",
                range.name()
            )));
        }
        Ok(ImageTensor { data, range })
    }

    /// Clamps into the range before wrapping; for network outputs whose
    /// rounding may step a hair outside the bounds.
    pub fn new_clamped(mut data: Array3<f32>, range: RangeTag) -> Result<Self> {
        let (lo, hi) = range.bounds();
        data.mapv_inplace(|v| v.clamp(lo, hi));
        Self::new(data, range)
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    pub fn range(&self) -> RangeTag {
        self.range
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn resolution(&self) -> Resolution {
        let (_, h, w) = self.data.dim();
        Resolution::new(h, w)
    }

    /// Affine map into `target`'s range.
    pub fn normalize(&self, target: RangeTag) -> ImageTensor {
        let data = match (self.range, target) {
            (a, b) if a == b => self.data.clone(),
            (RangeTag::Unit, RangeTag::UnitSigned) => self.data.mapv(|v| (v * 2.0 - 1.0).clamp(-1.0, 1.0)),
            (RangeTag::UnitSigned, RangeTag::Unit) => self.data.mapv(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0)),
            _ => unreachable!("all tag pairs are covered"),
        };
        ImageTensor { data, range: target }
    }

    /// Inverse of [`ImageTensor::normalize`] back into the unit range.
    pub fn denormalize(&self) -> ImageTensor {
        self.normalize(RangeTag::Unit)
    }

    /// Loads an 8-bit PNG (or any format the codec understands) as RGB,
    /// resizing bilinearly when its size differs from `resolution`.
    pub fn load_rgb(path: &Path, resolution: Resolution) -> Result<ImageTensor> {
        let img = image::open(path).map_err(|e| CaganError::image(path, e))?.to_rgb8();
        Ok(Self::from_rgb8(&img, resolution))
    }

    /// Loads an image as RGB at its stored size.
    pub fn load_rgb_native(path: &Path) -> Result<ImageTensor> {
        let img = image::open(path).map_err(|e| CaganError::image(path, e))?.to_rgb8();
        let res = Resolution::new(img.height() as usize, img.width() as usize);
        Ok(Self::from_rgb8(&img, res))
    }

    pub fn from_rgb8(img: &RgbImage, resolution: Resolution) -> ImageTensor {
        let img = if (img.height() as usize, img.width() as usize) == (resolution.height, resolution.width) {
            img.clone()
        } else {
            image::imageops::resize(
                img,
                resolution.width as u32,
                resolution.height as u32,
                FilterType::Triangle,
            )
        };
        let data = Array3::from_shape_fn((3, resolution.height, resolution.width), |(c, y, x)| {
            img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
        });
        ImageTensor {
            data,
            range: RangeTag::Unit,
        }
        .normalize(RangeTag::UnitSigned)
    }

    /// 8-bit RGB (three channels) or grayscale (one channel) rendering.
    pub fn to_rgb8(&self) -> RgbImage {
        let unit = self.denormalize();
        let (c, h, w) = unit.data.dim();
        ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let px = |ch: usize| to_u8(unit.data[[ch.min(c - 1), y as usize, x as usize]]);
            Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| CaganError::image(path, e))
    }
}

pub(crate) fn to_u8(unit: f32) -> u8 {
    (unit.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a binary mask as grayscale PNG with values {0, 255}.
pub fn save_mask_png(mask: &Array2<bool>, path: &Path) -> Result<()> {
    let (h, w) = mask.dim();
    let img: GrayImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([if mask[[y as usize, x as usize]] { 255 } else { 0 }])
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| CaganError::image(path, e))
}

/// Reads a mask written by [`save_mask_png`]; pixels above mid-gray are set.
pub fn load_mask_png(path: &Path) -> Result<Array2<bool>> {
    let img = image::open(path).map_err(|e| CaganError::image(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32)[0] >= 128
    }))
}

/// Stacks equally sized images into an `[n, c, h, w]` batch.
pub fn stack_images<'a>(images: impl IntoIterator<Item = ArrayView3<'a, f32>>) -> Array4<f32> {
    let views: Vec<_> = images.into_iter().collect();
    assert!(!views.is_empty(), "cannot stack an empty image list");
    let (c, h, w) = views[0].dim();
    let mut out = Array4::zeros((views.len(), c, h, w));
    for (i, v) in views.iter().enumerate() {
        out.slice_mut(s![i, .., .., ..]).assign(v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn range_endpoints_map_exactly() {
        let img = ImageTensor::new(Array3::from_shape_vec((1, 1, 2), vec![0.0, 1.0]).unwrap(), RangeTag::Unit).unwrap();
        let signed = img.normalize(RangeTag::UnitSigned);
        assert_eq!(signed.data().as_slice().unwrap(), &[-1.0, 1.0]);
        assert_eq!(signed.range(), RangeTag::UnitSigned);
    }

    #[test]
    fn rejects_bad_channel_counts_and_ranges() {
        assert!(ImageTensor::new(Array3::zeros((2, 4, 4)), RangeTag::Unit).is_err());
        assert!(ImageTensor::new(Array3::from_elem((1, 2, 2), 1.5), RangeTag::UnitSigned).is_err());
        assert!(ImageTensor::new(Array3::from_elem((1, 2, 2), -0.5), RangeTag::Unit).is_err());
    }

    #[test]
    fn unknown_range_tag_is_a_validation_error() {
        let err = "srgb".parse::<RangeTag>().unwrap_err();
        assert!(err.is_validation());
        assert_eq!("unit_signed".parse::<RangeTag>().unwrap(), RangeTag::UnitSigned);
    }

    #[test]
    fn parses_width_by_height() {
        assert_eq!(Resolution::parse_width_x_height("64x48").unwrap(), Resolution::new(48, 64));
        assert_eq!(Resolution::new(48, 64).to_string(), "64x48");
        assert!(Resolution::parse_width_x_height("64").is_err());
        assert!(Resolution::parse_width_x_height("0x48").is_err());
    }

    #[test]
    fn png_round_trip_is_exact_on_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let data = Array3::from_shape_fn((3, 4, 5), |(c, y, x)| ((c * 20 + y * 5 + x) as f32) / 255.0);
        let img = ImageTensor::new(data, RangeTag::Unit).unwrap().normalize(RangeTag::UnitSigned);
        img.save_png(&path).unwrap();
        let back = ImageTensor::load_rgb(&path, Resolution::new(4, 5)).unwrap();
        for (a, b) in back.data().iter().zip(img.data().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn normalize_round_trip(values in prop::collection::vec(0.0f32..=1.0, 12)) {
            let img = ImageTensor::new(Array3::from_shape_vec((3, 2, 2), values).unwrap(), RangeTag::Unit).unwrap();
            let back = img.normalize(RangeTag::UnitSigned).denormalize();
            for (a, b) in back.data().iter().zip(img.data().iter()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
