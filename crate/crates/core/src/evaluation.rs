//! Article swaps with a trained generator, figure-style grids and toy-task
//! metrics.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::{s, Array2, Array3, ArrayView3, ArrayView4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_index_pairs, stack_images, ImageTensor, PairedDataset, RangeTag, Resolution, ToyGroundTruth};
use crate::error::{ensure_valid, CaganError, Result};
use crate::networks::{Generator, GeneratorOutput};
use crate::objectives::cycle_loss;
use crate::trainer::load_checkpoint;

/// Width of the white separator around grid tiles, in pixels.
pub const GRID_BORDER: usize = 2;

/// Alpha above this value counts as part of the predicted article region.
pub const ALPHA_THRESHOLD: f32 = 0.5;

/// Images processed per generator call during evaluation.
const EVAL_CHUNK: usize = 16;

/// Dataset indices behind one swap: the person, the article they wear and
/// the article painted on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapIndices {
    pub human: usize,
    pub old_article: usize,
    pub new_article: usize,
}

/// Anything that repaints an article onto a person: the trained generator
/// or a reference model built from ground truth.
pub trait ArticleSwapper {
    fn resolution(&self) -> Resolution;

    /// Swaps a batch. `indices` names the dataset entries behind each
    /// element; for a second (cycle) pass the human index still names the
    /// original person.
    fn swap_batch(
        &self,
        x: ArrayView4<f32>,
        y_old: ArrayView4<f32>,
        y_new: ArrayView4<f32>,
        indices: &[SwapIndices],
    ) -> Result<GeneratorOutput<f32>>;
}

impl ArticleSwapper for Generator<f32> {
    fn resolution(&self) -> Resolution {
        self.spec().input_resolution
    }

    fn swap_batch(
        &self,
        x: ArrayView4<f32>,
        y_old: ArrayView4<f32>,
        y_new: ArrayView4<f32>,
        _indices: &[SwapIndices],
    ) -> Result<GeneratorOutput<f32>> {
        self.forward(x, y_old, y_new)
    }
}

/// Loads the generator stored in a checkpoint.
pub fn load_generator(path: &Path) -> Result<Generator<f32>> {
    let ckpt = load_checkpoint(path)?;
    Generator::from_params(ckpt.config.generator_spec(), ckpt.generator)
}

/// Provenance of a swap, as pair ids of the source manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapInputs {
    pub human: String,
    pub old_article: String,
    pub new_article: String,
}

/// One swapped image and its matte.
#[derive(Clone, Debug, PartialEq)]
pub struct SwapResult {
    /// `unit_signed`, three channels.
    pub composite: ImageTensor,
    /// `unit`, one channel.
    pub alpha: ImageTensor,
    pub inputs: SwapInputs,
}

fn check_image(name: &str, img: &ImageTensor, res: Resolution) -> Result<()> {
    ensure_valid!(
        img.resolution() == res,
        "{name} is {} but the model expects {res}",
        img.resolution()
    );
    ensure_valid!(img.channels() == 3, "{name} must have 3 channels");
    Ok(())
}

/// Paints `y_new` onto the person in `x`, who wears `y_old`.
pub fn swap<S: ArticleSwapper + ?Sized>(
    model: &S,
    x: &ImageTensor,
    y_old: &ImageTensor,
    y_new: &ImageTensor,
    inputs: SwapInputs,
    indices: SwapIndices,
) -> Result<SwapResult> {
    let res = model.resolution();
    for (name, img) in [("x", x), ("y_old", y_old), ("y_new", y_new)] {
        check_image(name, img, res)?;
    }
    let signed = |img: &ImageTensor| img.normalize(RangeTag::UnitSigned).into_data();
    let (xs, yo, yn) = (signed(x), signed(y_old), signed(y_new));
    let batch = |a: &Array3<f32>| stack_images([a.view()]);
    let out = model.swap_batch(batch(&xs).view(), batch(&yo).view(), batch(&yn).view(), &[indices])?;
    Ok(SwapResult {
        composite: ImageTensor::new_clamped(out.composite.index_axis_move(Axis(0), 0), RangeTag::UnitSigned)?,
        alpha: ImageTensor::new_clamped(out.alpha.index_axis_move(Axis(0), 0), RangeTag::Unit)?,
        inputs,
    })
}

/// Swaps `(human, new_article)` pairs of `data`, keeping the person's own
/// article as `y_old`.
fn swap_dataset<S: ArticleSwapper + ?Sized>(
    model: &S,
    data: &PairedDataset,
    pairs: &[(usize, usize)],
) -> Result<GeneratorOutput<f32>> {
    ensure_valid!(
        model.resolution() == data.resolution(),
        "dataset is {} but the model expects {}",
        data.resolution(),
        model.resolution()
    );
    for &(i, j) in pairs {
        ensure_valid!(i < data.len() && j < data.len(), "index ({i}, {j}) out of range for {} pairs", data.len());
    }
    let x = stack_images(pairs.iter().map(|&(i, _)| data.human(i).view()));
    let y_old = stack_images(pairs.iter().map(|&(i, _)| data.article(i).view()));
    let y_new = stack_images(pairs.iter().map(|&(_, j)| data.article(j).view()));
    let indices: Vec<SwapIndices> = pairs
        .iter()
        .map(|&(i, j)| SwapIndices {
            human: i,
            old_article: i,
            new_article: j,
        })
        .collect();
    model.swap_batch(x.view(), y_old.view(), y_new.view(), &indices)
}

/// Which figure layout to render.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GridRequest {
    /// One person wearing each listed article.
    FixedHuman { human: usize, articles: Vec<usize> },
    /// Each listed person wearing one article.
    FixedArticle { article: usize, humans: Vec<usize> },
    /// Rows of `(x_i, y_i, y_j, swapped)`, optionally followed by the alpha
    /// matte.
    TripletRows { rows: Vec<(usize, usize)>, alpha_column: bool },
}

/// Tile arrangement of a rendered grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
    /// Pixel size of the whole image.
    pub width: usize,
    pub height: usize,
}

impl GridLayout {
    pub fn new(rows: usize, cols: usize, tile: Resolution) -> Self {
        GridLayout {
            rows,
            cols,
            width: cols * tile.width + (cols + 1) * GRID_BORDER,
            height: rows * tile.height + (rows + 1) * GRID_BORDER,
        }
    }

    /// Near-square arrangement of `n` tiles: `ceil(sqrt(n))` columns.
    pub fn square(n: usize, tile: Resolution) -> Self {
        let cols = (1..=n).find(|c| c * c >= n).unwrap_or(1);
        GridLayout::new(n.div_ceil(cols), cols, tile)
    }
}

fn signed_to_rgb(tile: ArrayView3<f32>) -> Vec<[u8; 3]> {
    let (c, h, w) = tile.dim();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let px = |ch: usize| {
                let v = tile[[ch.min(c - 1), y, x]];
                let unit = if c == 1 { v } else { (v + 1.0) * 0.5 };
                (unit.clamp(0.0, 1.0) * 255.0).round() as u8
            };
            out.push([px(0), px(1), px(2)]);
        }
    }
    out
}

/// Tiles are `unit_signed` RGB or `unit` single-channel images, listed
/// row-major.
fn compose_grid(tiles: &[Array3<f32>], layout: GridLayout, tile: Resolution) -> RgbImage {
    let mut img = RgbImage::from_pixel(layout.width as u32, layout.height as u32, Rgb([255, 255, 255]));
    for (k, t) in tiles.iter().enumerate() {
        let (r, c) = (k / layout.cols, k % layout.cols);
        let x0 = GRID_BORDER + c * (tile.width + GRID_BORDER);
        let y0 = GRID_BORDER + r * (tile.height + GRID_BORDER);
        for (p, rgb) in signed_to_rgb(t.view()).into_iter().enumerate() {
            let (y, x) = (p / tile.width, p % tile.width);
            img.put_pixel((x0 + x) as u32, (y0 + y) as u32, Rgb(rgb));
        }
    }
    img
}

/// Renders `request` into an in-memory image.
pub fn render_grid<S: ArticleSwapper + ?Sized>(
    model: &S,
    data: &PairedDataset,
    request: &GridRequest,
) -> Result<(RgbImage, GridLayout)> {
    let tile = data.resolution();
    let (pairs, layout) = match request {
        GridRequest::FixedHuman { human, articles } => {
            ensure_valid!(!articles.is_empty(), "grid needs at least one article");
            (
                articles.iter().map(|&j| (*human, j)).collect::<Vec<_>>(),
                GridLayout::square(articles.len(), tile),
            )
        }
        GridRequest::FixedArticle { article, humans } => {
            ensure_valid!(!humans.is_empty(), "grid needs at least one human");
            (
                humans.iter().map(|&i| (i, *article)).collect(),
                GridLayout::square(humans.len(), tile),
            )
        }
        GridRequest::TripletRows { rows, alpha_column } => {
            ensure_valid!(!rows.is_empty(), "grid needs at least one row");
            (rows.clone(), GridLayout::new(rows.len(), if *alpha_column { 5 } else { 4 }, tile))
        }
    };
    let mut outputs = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(EVAL_CHUNK) {
        outputs.push(swap_dataset(model, data, chunk)?);
    }
    let composites: Vec<Array3<f32>> = outputs
        .iter()
        .flat_map(|o| o.composite.outer_iter().map(|v| v.to_owned()).collect::<Vec<_>>())
        .collect();
    let alphas: Vec<Array3<f32>> = outputs
        .iter()
        .flat_map(|o| o.alpha.outer_iter().map(|v| v.to_owned()).collect::<Vec<_>>())
        .collect();

    let tiles: Vec<Array3<f32>> = match request {
        GridRequest::TripletRows { rows, alpha_column } => rows
            .iter()
            .enumerate()
            .flat_map(|(k, &(i, j))| {
                let mut row = vec![
                    data.human(i).clone(),
                    data.article(i).clone(),
                    data.article(j).clone(),
                    composites[k].clone(),
                ];
                if *alpha_column {
                    row.push(alphas[k].clone());
                }
                row
            })
            .collect(),
        _ => composites,
    };
    Ok((compose_grid(&tiles, layout, tile), layout))
}

/// Renders `request` and writes it as an 8-bit RGB PNG.
pub fn grid_render<S: ArticleSwapper + ?Sized>(
    model: &S,
    data: &PairedDataset,
    request: &GridRequest,
    out_path: &Path,
) -> Result<GridLayout> {
    let (img, layout) = render_grid(model, data, request)?;
    img.save_with_format(out_path, image::ImageFormat::Png)
        .map_err(|e| CaganError::image(out_path, e))?;
    Ok(layout)
}

/// Toy-task scores averaged over sampled swaps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean IoU between `alpha > 0.5` and the worn-garment mask.
    pub alpha_iou: f64,
    /// Mean channel-averaged L1 gap between the composite's mean color
    /// inside the mask and the new article's dominant color
    /// (`unit_signed`).
    pub color_swap_error: f64,
    /// Mean L1 between the original and the swapped-back image.
    pub cycle_error: f64,
    /// Mean L1 between composite and original outside the mask.
    pub identity_leakage: f64,
    pub n_samples: usize,
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| CaganError::io(path, e))
    }
}

fn mask_iou(alpha: ArrayView3<f32>, mask: &Array2<bool>) -> f64 {
    let alpha = alpha.index_axis(Axis(0), 0);
    let (mut inter, mut union) = (0usize, 0usize);
    for (a, &m) in alpha.iter().zip(mask.iter()) {
        let p = *a > ALPHA_THRESHOLD;
        inter += (p && m) as usize;
        union += (p || m) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Channel-averaged `|mean(img | mask) - target|`.
fn masked_color_error(img: ArrayView3<f32>, mask: &Array2<bool>, target: [f32; 3]) -> f64 {
    let count = mask.iter().filter(|&&m| m).count().max(1) as f64;
    (0..3)
        .map(|c| {
            let sum: f64 = img
                .index_axis(Axis(0), c)
                .iter()
                .zip(mask.iter())
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v as f64)
                .sum();
            (sum / count - target[c] as f64).abs()
        })
        .sum::<f64>()
        / 3.0
}

/// Mean `|a - b|` over channels and the pixels where `mask` is false.
fn leakage(a: ArrayView3<f32>, b: ArrayView3<f32>, mask: &Array2<bool>) -> f64 {
    let outside = mask.iter().filter(|&&m| !m).count();
    if outside == 0 {
        return 0.0;
    }
    let mut total = 0.0f64;
    for c in 0..a.dim().0 {
        for ((&va, &vb), &m) in a.slice(s![c, .., ..]).iter().zip(b.slice(s![c, .., ..]).iter()).zip(mask.iter()) {
            if !m {
                total += (va - vb).abs() as f64;
            }
        }
    }
    total / (outside * a.dim().0) as f64
}

/// Scores `model` on `n_samples` seeded triplets of a toy dataset.
pub fn evaluate_toy<S: ArticleSwapper + ?Sized>(
    model: &S,
    data: &PairedDataset,
    truth: &ToyGroundTruth,
    n_samples: usize,
    seed: u64,
) -> Result<EvalReport> {
    ensure_valid!(n_samples >= 1, "n_samples must be at least 1");
    ensure_valid!(
        truth.masks.len() == data.len() && truth.pairs.len() == data.len(),
        "ground truth covers {} masks for {} pairs",
        truth.masks.len(),
        data.len()
    );
    let res = data.resolution();
    for mask in &truth.masks {
        ensure_valid!(
            mask.dim() == (res.height, res.width),
            "ground-truth mask size does not match the dataset resolution {res}"
        );
    }
    let pairs = sample_index_pairs(data.len(), n_samples, &mut ChaCha8Rng::seed_from_u64(seed))?;

    let (mut iou, mut color, mut cycle, mut leak) = (0.0, 0.0, 0.0, 0.0);
    for chunk in pairs.chunks(EVAL_CHUNK) {
        let forward = swap_dataset(model, data, chunk)?;
        let x = stack_images(chunk.iter().map(|&(i, _)| data.human(i).view()));
        let y_i = stack_images(chunk.iter().map(|&(i, _)| data.article(i).view()));
        let y_j = stack_images(chunk.iter().map(|&(_, j)| data.article(j).view()));
        let back_indices: Vec<SwapIndices> = chunk
            .iter()
            .map(|&(i, j)| SwapIndices {
                human: i,
                old_article: j,
                new_article: i,
            })
            .collect();
        let back = model.swap_batch(forward.composite.view(), y_j.view(), y_i.view(), &back_indices)?;
        for (k, &(i, j)) in chunk.iter().enumerate() {
            let mask = &truth.masks[i];
            let composite = forward.composite.index_axis(Axis(0), k);
            iou += mask_iou(forward.alpha.index_axis(Axis(0), k), mask);
            color += masked_color_error(composite, mask, truth.pairs[j].dominant_color);
            leak += leakage(composite, x.index_axis(Axis(0), k), mask);
            cycle += cycle_loss(x.index_axis(Axis(0), k), back.composite.index_axis(Axis(0), k))? as f64;
        }
    }
    let n = n_samples as f64;
    let report = EvalReport {
        alpha_iou: iou / n,
        color_swap_error: color / n,
        cycle_error: cycle / n,
        identity_leakage: leak / n,
        n_samples,
    };
    for (name, v) in [
        ("alpha_iou", report.alpha_iou),
        ("color_swap_error", report.color_swap_error),
        ("cycle_error", report.cycle_error),
        ("identity_leakage", report.identity_leakage),
    ] {
        if !v.is_finite() {
            return Err(CaganError::NumericalGuard(format!("{name} is not finite")));
        }
    }
    Ok(report)
}
