//! Procedural stand-in dataset with exact garment masks.
//!
//! Every pair shows the same figure on a plain background. The garment is a
//! torso-shaped region, drawn under a per-pair affine jitter and brightness
//! shift, whose colors come from the pair's article. The article image is
//! the same pattern on a centered rectangle.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::{load_mask_png, save_mask_png, to_u8, ImageTensor, Resolution};
use super::manifest::{DatasetManifest, PairEntry};
use crate::error::{ensure_valid, CaganError, Result};

/// Metadata file written next to the toy manifest.
pub const TOY_METADATA_FILE: &str = "toy.json";

const BACKGROUND: [f32; 3] = [0.82, 0.84, 0.86];
const ARTICLE_BACKGROUND: [f32; 3] = [0.97, 0.97, 0.97];
const SKIN: [f32; 3] = [0.93, 0.76, 0.62];
const PANTS: [f32; 3] = [0.22, 0.24, 0.35];

/// Canonical garment rectangle in figure coordinates `(u0, v0, u1, v1)`.
const GARMENT: (f64, f64, f64, f64) = (0.30, 0.27, 0.70, 0.62);
/// Article rectangle on the product photo, same coordinates.
const ARTICLE_RECT: (f64, f64, f64, f64) = (0.25, 0.15, 0.75, 0.85);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArticlePattern {
    Solid,
    /// Horizontal stripes alternating with `secondary`; `period` is a
    /// fraction of the garment height.
    Stripes { secondary: [f32; 3], period: f32 },
}

/// Palette entry: base color (unit range) and pattern.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArticleStyle {
    pub color: [f32; 3],
    pub pattern: ArticlePattern,
}

impl ArticleStyle {
    pub const fn solid(r: f32, g: f32, b: f32) -> Self {
        ArticleStyle {
            color: [r, g, b],
            pattern: ArticlePattern::Solid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyDatasetSpec {
    pub count: usize,
    pub resolution: Resolution,
    pub seed: u64,
    pub article_palette: Vec<ArticleStyle>,
    /// Magnitude of the garment's affine jitter (relative scale/shear and
    /// translation as a fraction of the figure size).
    pub deformation: f64,
    /// Maximum additive brightness shift of the worn garment, unit range.
    pub brightness: f64,
    /// Maximum per-channel perturbation of the palette color, unit range.
    pub color_jitter: f64,
    /// Number of stride-2 stages the resolution must support.
    pub depth: usize,
}

impl Default for ToyDatasetSpec {
    fn default() -> Self {
        ToyDatasetSpec {
            count: 200,
            resolution: Resolution::new(48, 64),
            seed: 0,
            article_palette: default_palette(),
            deformation: 0.06,
            brightness: 0.04,
            color_jitter: 0.05,
            depth: 4,
        }
    }
}

pub fn default_palette() -> Vec<ArticleStyle> {
    vec![
        ArticleStyle::solid(0.80, 0.12, 0.12),
        ArticleStyle::solid(0.12, 0.62, 0.22),
        ArticleStyle::solid(0.12, 0.25, 0.80),
        ArticleStyle::solid(0.92, 0.82, 0.12),
        ArticleStyle::solid(0.55, 0.18, 0.65),
        ArticleStyle::solid(0.95, 0.50, 0.08),
        ArticleStyle::solid(0.05, 0.55, 0.55),
        ArticleStyle::solid(0.95, 0.45, 0.70),
    ]
}

impl ToyDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        ensure_valid!(self.count >= 2, "toy dataset needs at least 2 pairs, got {}", self.count);
        ensure_valid!(
            self.resolution.divisible_by_pow2(self.depth),
            "resolution {} is not divisible by 2^{}",
            self.resolution,
            self.depth
        );
        ensure_valid!(
            self.resolution.height >= 16 && self.resolution.width >= 16,
            "toy resolution {} is too small to draw a figure",
            self.resolution
        );
        ensure_valid!(!self.article_palette.is_empty(), "article palette is empty");
        for (name, v, max) in [
            ("deformation", self.deformation, 0.15),
            ("brightness", self.brightness, 0.5),
            ("color_jitter", self.color_jitter, 0.5),
        ] {
            ensure_valid!((0.0..=max).contains(&v), "{name} must lie in [0, {max}], got {v}");
        }
        for style in &self.article_palette {
            let ok = |c: &[f32; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
            ensure_valid!(ok(&style.color), "palette color out of [0,1]: {:?}", style.color);
            if let ArticlePattern::Stripes { secondary, period } = &style.pattern {
                ensure_valid!(ok(secondary), "stripe color out of [0,1]: {secondary:?}");
                ensure_valid!(*period > 0.0 && *period <= 1.0, "stripe period must be in (0, 1]");
            }
        }
        Ok(())
    }
}

/// Garment placement: `p = center + A (q - center) + t` in figure units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarmentJitter {
    pub scale_u: f64,
    pub scale_v: f64,
    pub shear: f64,
    pub shift_u: f64,
    pub shift_v: f64,
}

impl GarmentJitter {
    /// Maps a figure-space point back into canonical garment space.
    fn inverse(&self, u: f64, v: f64) -> (f64, f64) {
        let (cu, cv) = ((GARMENT.0 + GARMENT.2) / 2.0, (GARMENT.1 + GARMENT.3) / 2.0);
        let du = u - cu - self.shift_u;
        let dv = v - cv - self.shift_v;
        // A = [[scale_u, shear], [0, scale_v]]
        let qv = dv / self.scale_v;
        let qu = (du - self.shear * qv) / self.scale_u;
        (cu + qu, cv + qv)
    }
}

/// Per-pair generation parameters and derived colors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyPair {
    pub pair_id: String,
    pub style_index: usize,
    /// Article base color after jitter, unit range.
    pub article_color: [f32; 3],
    pub brightness_shift: f32,
    pub jitter: GarmentJitter,
    /// Mean color of the article rectangle, `unit_signed`.
    pub dominant_color: [f32; 3],
    /// Mean color of the worn garment on the person, `unit_signed`.
    pub worn_color: [f32; 3],
}

/// A generated dataset held in memory.
#[derive(Clone, Debug)]
pub struct ToyDataset {
    pub spec: ToyDatasetSpec,
    pub pairs: Vec<ToyPair>,
    pub humans: Vec<ImageTensor>,
    pub articles: Vec<ImageTensor>,
    pub masks: Vec<Array2<bool>>,
}

#[derive(Serialize, Deserialize)]
struct ToyMetadata {
    spec: ToyDatasetSpec,
    pairs: Vec<ToyPair>,
}

/// Ground truth needed to score swaps on a toy dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyGroundTruth {
    pub pairs: Vec<ToyPair>,
    pub masks: Vec<Array2<bool>>,
}

impl ToyDataset {
    pub fn ground_truth(&self) -> ToyGroundTruth {
        ToyGroundTruth {
            pairs: self.pairs.clone(),
            masks: self.masks.clone(),
        }
    }

    /// Manifest rooted at `root` with the layout used by [`ToyDataset::write`].
    pub fn manifest(&self, root: &Path) -> Result<DatasetManifest> {
        let entries = self
            .pairs
            .iter()
            .map(|p| PairEntry {
                pair_id: p.pair_id.clone(),
                human: PathBuf::from(format!("humans/{}.png", p.pair_id)),
                article: PathBuf::from(format!("articles/{}.png", p.pair_id)),
            })
            .collect();
        DatasetManifest::new(root, entries)
    }

    /// Writes images, masks, manifest and metadata under `root`.
    pub fn write(&self, root: &Path) -> Result<DatasetManifest> {
        for sub in ["humans", "articles", "masks"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| CaganError::io(&dir, e))?;
        }
        let manifest = self.manifest(root)?;
        for (i, pair) in self.pairs.iter().enumerate() {
            self.humans[i].save_png(&manifest.human_path(i))?;
            self.articles[i].save_png(&manifest.article_path(i))?;
            save_mask_png(&self.masks[i], &root.join(format!("masks/{}.png", pair.pair_id)))?;
        }
        manifest.write()?;
        let meta = ToyMetadata {
            spec: self.spec.clone(),
            pairs: self.pairs.clone(),
        };
        let path = root.join(TOY_METADATA_FILE);
        fs::write(&path, serde_json::to_vec_pretty(&meta)?).map_err(|e| CaganError::io(&path, e))?;
        Ok(manifest)
    }
}

/// Reads `toy.json` and the mask PNGs for every pair of `manifest`.
pub fn load_toy_ground_truth(manifest: &DatasetManifest) -> Result<ToyGroundTruth> {
    let path = manifest.root().join(TOY_METADATA_FILE);
    let text = fs::read(&path).map_err(|e| {
        CaganError::Validation(format!("toy metadata {} unavailable: {e}", path.display()))
    })?;
    let meta: ToyMetadata = serde_json::from_slice(&text)?;
    let mut pairs = Vec::with_capacity(manifest.len());
    let mut masks = Vec::with_capacity(manifest.len());
    for entry in manifest.entries() {
        let pair = meta
            .pairs
            .iter()
            .find(|p| p.pair_id == entry.pair_id)
            .ok_or_else(|| CaganError::Validation(format!("no toy metadata for pair `{}`", entry.pair_id)))?;
        let mask_path = manifest.root().join(format!("masks/{}.png", entry.pair_id));
        if !mask_path.is_file() {
            return Err(CaganError::Validation(format!(
                "ground-truth mask {} is missing",
                mask_path.display()
            )));
        }
        pairs.push(pair.clone());
        masks.push(load_mask_png(&mask_path)?);
    }
    Ok(ToyGroundTruth { pairs, masks })
}

/// Generates the toy dataset described by `spec`; deterministic in the seed.
pub fn synthesize_toy_dataset(spec: &ToyDatasetSpec) -> Result<ToyDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let frame = Frame::new(spec.resolution);
    let mut out = ToyDataset {
        spec: spec.clone(),
        pairs: Vec::with_capacity(spec.count),
        humans: Vec::with_capacity(spec.count),
        articles: Vec::with_capacity(spec.count),
        masks: Vec::with_capacity(spec.count),
    };
    for index in 0..spec.count {
        let style_index = rng.gen_range(0..spec.article_palette.len());
        let style = &spec.article_palette[style_index];
        let cj = spec.color_jitter as f32;
        let mut jitter_color = |c: [f32; 3]| c.map(|v| (v + rng.gen_range(-cj..=cj)).clamp(0.02, 0.98));
        let article_color = jitter_color(style.color);
        let pattern = match &style.pattern {
            ArticlePattern::Solid => ArticlePattern::Solid,
            ArticlePattern::Stripes { secondary, period } => ArticlePattern::Stripes {
                secondary: jitter_color(*secondary),
                period: *period,
            },
        };
        let b = spec.brightness as f32;
        let brightness_shift = if b > 0.0 { rng.gen_range(-b..=b) } else { 0.0 };
        let d = spec.deformation;
        let mut sym = |m: f64| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
        let jitter = GarmentJitter {
            scale_u: 1.0 + sym(d),
            scale_v: 1.0 + sym(d),
            shear: sym(d / 2.0),
            shift_u: sym(d / 2.0),
            shift_v: sym(d / 2.0),
        };

        let (human, mask) = frame.render_human(article_color, &pattern, brightness_shift, &jitter);
        let article = frame.render_article(article_color, &pattern);
        let article_mask = frame.article_mask();

        let human = ImageTensor::from_rgb8(&human, spec.resolution);
        let article = ImageTensor::from_rgb8(&article, spec.resolution);
        out.pairs.push(ToyPair {
            pair_id: format!("pair{index:04}"),
            style_index,
            article_color,
            brightness_shift,
            jitter,
            dominant_color: masked_mean(&article, &article_mask),
            worn_color: masked_mean(&human, &mask),
        });
        out.humans.push(human);
        out.articles.push(article);
        out.masks.push(mask);
    }
    Ok(out)
}

/// Per-channel mean of `img` over the set pixels of `mask`.
pub(crate) fn masked_mean(img: &ImageTensor, mask: &Array2<bool>) -> [f32; 3] {
    let data = img.data();
    let mut sum = [0f64; 3];
    let mut count = 0usize;
    for ((y, x), &m) in mask.indexed_iter() {
        if m {
            count += 1;
            for (c, s) in sum.iter_mut().enumerate() {
                *s += data[[c, y, x]] as f64;
            }
        }
    }
    let count = count.max(1) as f64;
    sum.map(|s| (s / count) as f32)
}

/// Maps pixels to figure coordinates: a centered square of side
/// `min(height, width)`.
struct Frame {
    res: Resolution,
    scale: f64,
    off_u: f64,
    off_v: f64,
}

impl Frame {
    fn new(res: Resolution) -> Self {
        let scale = res.height.min(res.width) as f64;
        Frame {
            res,
            scale,
            off_u: (res.width as f64 - scale) / 2.0,
            off_v: (res.height as f64 - scale) / 2.0,
        }
    }

    fn coords(&self, x: usize, y: usize) -> (f64, f64) {
        (
            (x as f64 + 0.5 - self.off_u) / self.scale,
            (y as f64 + 0.5 - self.off_v) / self.scale,
        )
    }

    fn render_human(
        &self,
        color: [f32; 3],
        pattern: &ArticlePattern,
        shift: f32,
        jitter: &GarmentJitter,
    ) -> (RgbImage, Array2<bool>) {
        let mut mask = Array2::from_elem((self.res.height, self.res.width), false);
        let img = RgbImage::from_fn(self.res.width as u32, self.res.height as u32, |x, y| {
            let (u, v) = self.coords(x as usize, y as usize);
            let (qu, qv) = jitter.inverse(u, v);
            let px = if inside(GARMENT, qu, qv) {
                mask[[y as usize, x as usize]] = true;
                let base = pattern_color(color, pattern, (qv - GARMENT.1) / (GARMENT.3 - GARMENT.1));
                base.map(|c| (c + shift).clamp(0.0, 1.0))
            } else if body_region(u, v) == Some(Body::Skin) {
                SKIN
            } else if body_region(u, v) == Some(Body::Pants) {
                PANTS
            } else {
                BACKGROUND
            };
            Rgb(px.map(to_u8))
        });
        (img, mask)
    }

    fn render_article(&self, color: [f32; 3], pattern: &ArticlePattern) -> RgbImage {
        RgbImage::from_fn(self.res.width as u32, self.res.height as u32, |x, y| {
            let (u, v) = self.coords(x as usize, y as usize);
            let px = if inside(ARTICLE_RECT, u, v) {
                pattern_color(color, pattern, (v - ARTICLE_RECT.1) / (ARTICLE_RECT.3 - ARTICLE_RECT.1))
            } else {
                ARTICLE_BACKGROUND
            };
            Rgb(px.map(to_u8))
        })
    }

    fn article_mask(&self) -> Array2<bool> {
        Array2::from_shape_fn((self.res.height, self.res.width), |(y, x)| {
            let (u, v) = self.coords(x, y);
            inside(ARTICLE_RECT, u, v)
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Body {
    Skin,
    Pants,
}

fn inside(rect: (f64, f64, f64, f64), u: f64, v: f64) -> bool {
    u >= rect.0 && u < rect.2 && v >= rect.1 && v < rect.3
}

fn body_region(u: f64, v: f64) -> Option<Body> {
    let head = (u - 0.5).powi(2) + (v - 0.15).powi(2) <= 0.085f64.powi(2);
    let neck = inside((0.46, 0.20, 0.54, 0.30), u, v);
    let arms = inside((0.20, 0.30, 0.30, 0.62), u, v) || inside((0.70, 0.30, 0.80, 0.62), u, v);
    let torso = inside(GARMENT, u, v);
    let legs = inside((0.36, 0.60, 0.48, 0.96), u, v) || inside((0.52, 0.60, 0.64, 0.96), u, v);
    if head || neck || arms || torso {
        Some(Body::Skin)
    } else if legs {
        Some(Body::Pants)
    } else {
        None
    }
}

/// Pattern color at fractional height `t` within the article.
fn pattern_color(color: [f32; 3], pattern: &ArticlePattern, t: f64) -> [f32; 3] {
    match pattern {
        ArticlePattern::Solid => color,
        ArticlePattern::Stripes { secondary, period } => {
            if ((t / *period as f64).floor() as i64).rem_euclid(2) == 0 {
                color
            } else {
                *secondary
            }
        }
    }
}
