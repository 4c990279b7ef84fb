//! Dataset ingestion, triplet sampling and the procedural toy dataset.

mod image;
mod manifest;
mod toy;

use ndarray::{Array3, Array4};
use rand::Rng;

pub use self::image::{
    load_mask_png, save_mask_png, stack_images, ImageTensor, RangeTag, Resolution,
};
pub use self::manifest::{load_manifest, parse_manifest, DatasetManifest, PairEntry, MANIFEST_FILE};
pub use self::toy::{
    load_toy_ground_truth, synthesize_toy_dataset, ArticlePattern, ArticleStyle, ToyDataset,
    ToyDatasetSpec, ToyGroundTruth, ToyPair, TOY_METADATA_FILE,
};

use crate::error::{CaganError, Result};

/// A manifest with every image decoded at one resolution in the
/// `unit_signed` range.
#[derive(Clone, Debug)]
pub struct PairedDataset {
    manifest: DatasetManifest,
    resolution: Resolution,
    humans: Vec<Array3<f32>>,
    articles: Vec<Array3<f32>>,
}

impl PairedDataset {
    /// Decodes every pair of `manifest`, resizing to `resolution`.
    ///
    /// Articles are resized to the same resolution as the humans so that
    /// both can be stacked along the channel axis.
    pub fn load(manifest: DatasetManifest, resolution: Resolution) -> Result<Self> {
        let mut humans = Vec::with_capacity(manifest.len());
        let mut articles = Vec::with_capacity(manifest.len());
        for (i, entry) in manifest.entries().iter().enumerate() {
            let load = |path: std::path::PathBuf| {
                ImageTensor::load_rgb(&path, resolution).map_err(|e| CaganError::Ingestion {
                    pair_id: entry.pair_id.clone(),
                    reason: e.to_string(),
                })
            };
            humans.push(load(manifest.human_path(i))?.into_data());
            articles.push(load(manifest.article_path(i))?.into_data());
        }
        Ok(PairedDataset {
            manifest,
            resolution,
            humans,
            articles,
        })
    }

    /// Builds a dataset from in-memory `unit_signed` images.
    pub fn from_images(
        manifest: DatasetManifest,
        humans: Vec<ImageTensor>,
        articles: Vec<ImageTensor>,
    ) -> Result<Self> {
        if humans.len() != manifest.len() || articles.len() != manifest.len() {
            return Err(CaganError::Validation(format!(
                "{} pairs in manifest but {} humans and {} articles",
                manifest.len(),
                humans.len(),
                articles.len()
            )));
        }
        let resolution = humans[0].resolution();
        for img in humans.iter().chain(&articles) {
            if img.resolution() != resolution || img.channels() != 3 || img.range() != RangeTag::UnitSigned {
                return Err(CaganError::Validation(
                    "dataset images must be 3-channel unit_signed at one resolution".into(),
                ));
            }
        }
        Ok(PairedDataset {
            manifest,
            resolution,
            humans: humans.into_iter().map(ImageTensor::into_data).collect(),
            articles: articles.into_iter().map(ImageTensor::into_data).collect(),
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.humans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.humans.is_empty()
    }

    pub fn human(&self, index: usize) -> &Array3<f32> {
        &self.humans[index]
    }

    pub fn article(&self, index: usize) -> &Array3<f32> {
        &self.articles[index]
    }

    /// Assembles the batch for explicit `(i, j)` index pairs.
    pub fn triplets_for(&self, indices: &[(usize, usize)]) -> Result<TripletBatch> {
        if indices.is_empty() {
            return Err(CaganError::Validation("a triplet batch needs at least one element".into()));
        }
        for &(i, j) in indices {
            if i == j || i >= self.len() || j >= self.len() {
                return Err(CaganError::Validation(format!(
                    "invalid triplet ({i}, {j}) for {} pairs",
                    self.len()
                )));
            }
        }
        Ok(TripletBatch {
            x: stack_images(indices.iter().map(|&(i, _)| self.humans[i].view())),
            y_i: stack_images(indices.iter().map(|&(i, _)| self.articles[i].view())),
            y_j: stack_images(indices.iter().map(|&(_, j)| self.articles[j].view())),
            indices: indices.to_vec(),
        })
    }

    /// Draws `batch_size` triplets `(x_i, y_i, y_j)` with `i` uniform over
    /// the pairs and `j` uniform over the remaining ones.
    pub fn sample_triplets<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<TripletBatch> {
        let indices = sample_index_pairs(self.len(), batch_size, rng)?;
        self.triplets_for(&indices)
    }
}

/// Draws `(i, j)` index pairs with `i` uniform on `0..n` and `j` uniform on
/// `0..n` without `i`.
pub fn sample_index_pairs<R: Rng + ?Sized>(
    n: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    if n < 2 {
        return Err(CaganError::DatasetTooSmall(n));
    }
    if batch_size == 0 {
        return Err(CaganError::Validation("batch_size must be at least 1".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..batch_size)
        .map(|_| {
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect();
    debug_assert!(pairs.iter().all(|&(i, j)| i != j));
    Ok(pairs)
}

/// A batch of `(x_i, y_i, y_j)` samples, each `[batch, 3, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletBatch {
    /// People, each wearing its own article `y_i`.
    pub x: Array4<f32>,
    /// The articles worn in `x`.
    pub y_i: Array4<f32>,
    /// The articles to paint onto `x`; never the worn one.
    pub y_j: Array4<f32>,
    /// `(i, j)` for every element, with `i != j`.
    pub indices: Vec<(usize, usize)>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}
