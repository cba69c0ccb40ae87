//! Deterministic stand-in for a vision transformer.
//!
//! The image is averaged over a 16x16 grid of cells (linear in the pixels).
//! The grid splits into 4x4 patches of 4x4 cells; patch token `k` is a
//! seeded Gaussian matrix (specific to the layer and to `k`) applied to its
//! 16 cell means, and the class token is another seeded matrix applied to
//! all 256 cell means. The whole map is linear in the pixel buffer, so the
//! tokens of a blended buffer equal the blend of the tokens.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{aggregate_tokens, Aggregation, ImageEmbedder};
use crate::error::{Error, Result};

/// Patch tokens per image (the class token comes on top).
pub const MOCK_PATCH_TOKENS: usize = 16;
pub const MOCK_WIDTH: usize = 64;
const GRID: usize = 16;
const PATCH_GRID: usize = 4;
const CELLS_PER_PATCH: usize = (GRID / PATCH_GRID) * (GRID / PATCH_GRID);

fn mix(seed: u64, layer: usize, token: usize) -> u64 {
    // splitmix64 finalizer over the packed triple
    let mut z = seed
        ^ (layer as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (token as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (cols as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    })
}

/// Cell means of a gray plane given as `resolution^2` real values.
fn cell_means(gray: &[f64], resolution: usize) -> Vec<f64> {
    let mut sums = vec![0.0; GRID * GRID];
    let mut counts = vec![0usize; GRID * GRID];
    for r in 0..resolution {
        let cr = r * GRID / resolution;
        for c in 0..resolution {
            let cc = c * GRID / resolution;
            sums[cr * GRID + cc] += gray[r * resolution + c];
            counts[cr * GRID + cc] += 1;
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect()
}

/// Token matrix (`17 x 64`, class token first) for a real-valued gray plane.
pub fn mock_tokens_from_gray(gray: &[f64], resolution: usize, layer: usize, seed: u64) -> Result<Array2<f32>> {
    if resolution < GRID || gray.len() != resolution * resolution {
        return Err(Error::Shape(format!(
            "mock backend needs a square plane of side >= {GRID}, got {} values for side {resolution}",
            gray.len()
        )));
    }
    let cells = cell_means(gray, resolution);
    let mut tokens = Array2::<f32>::zeros((MOCK_PATCH_TOKENS + 1, MOCK_WIDTH));

    let cls = gaussian_matrix(MOCK_WIDTH, GRID * GRID, mix(seed, layer, usize::MAX));
    for (f, w) in cls.outer_iter().enumerate() {
        tokens[[0, f]] = w.iter().zip(&cells).map(|(a, b)| a * b).sum::<f64>() as f32;
    }

    let side = GRID / PATCH_GRID;
    for pi in 0..PATCH_GRID {
        for pj in 0..PATCH_GRID {
            let k = pi * PATCH_GRID + pj;
            let mut local = Vec::with_capacity(CELLS_PER_PATCH);
            for r in pi * side..(pi + 1) * side {
                for c in pj * side..(pj + 1) * side {
                    local.push(cells[r * GRID + c]);
                }
            }
            let w = gaussian_matrix(MOCK_WIDTH, CELLS_PER_PATCH, mix(seed, layer, k));
            for (f, row) in w.outer_iter().enumerate() {
                tokens[[k + 1, f]] = row.iter().zip(&local).map(|(a, b)| a * b).sum::<f64>() as f32;
            }
        }
    }
    Ok(tokens)
}

/// Token matrix for an interleaved RGB buffer; pixel values are scaled to
/// `[0, 1]` and the three channels averaged.
pub fn mock_embed(pixels: &[u8], resolution: usize, layer: usize, seed: u64) -> Result<Array2<f32>> {
    if pixels.len() != resolution * resolution * 3 {
        return Err(Error::Shape(format!(
            "pixel buffer has {} bytes, expected {}",
            pixels.len(),
            resolution * resolution * 3
        )));
    }
    let gray: Vec<f64> = pixels
        .chunks_exact(3)
        .map(|p| (f64::from(p[0]) + f64::from(p[1]) + f64::from(p[2])) / (3.0 * 255.0))
        .collect();
    mock_tokens_from_gray(&gray, resolution, layer, seed)
}

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    seed: u64,
    depth: usize,
    model_id: String,
}

impl MockEmbedder {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            depth: 12,
            model_id: "mock".into(),
        }
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl ImageEmbedder for MockEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn depth(&self) -> usize {
        self.depth
    }

    fn width(&self) -> usize {
        MOCK_WIDTH
    }

    fn embed_image(
        &self,
        pixels: &[u8],
        resolution: usize,
        layers: &[usize],
        aggregation: Aggregation,
    ) -> Result<Vec<Vec<f32>>> {
        layers
            .iter()
            .map(|&layer| {
                if layer > self.depth {
                    return Err(Error::LayerOutOfRange {
                        model_id: self.model_id.clone(),
                        layer,
                        depth: self.depth,
                    });
                }
                let tokens = mock_embed(pixels, resolution, layer, self.seed)?;
                aggregate_tokens(tokens.view(), aggregation)
            })
            .collect()
    }
}
