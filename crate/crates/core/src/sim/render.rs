use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::rgb_distance;
use super::{EnvKind, EnvState, RenderParams, CLOTH_SIDE};
use crate::error::{Error, Result};

/// Foreground threshold on the RGB distance from the background color.
pub const SEGMENT_THRESHOLD: f64 = 60.0;

pub const IMAGE_SIZES: [usize; 3] = [16, 32, 64];

/// Square 8-bit RGB image stored row-major, channels last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageObs {
    size: usize,
    pixels: Vec<u8>,
}

impl ImageObs {
    pub fn new(size: usize, pixels: Vec<u8>) -> Result<Self> {
        if !IMAGE_SIZES.contains(&size) {
            return Err(Error::InvalidArgument(format!("image size {size} not in {IMAGE_SIZES:?}")));
        }
        if pixels.len() != size * size * 3 {
            return Err(Error::Shape(format!(
                "{size}x{size} RGB image needs {} bytes, got {}",
                size * size * 3,
                pixels.len()
            )));
        }
        Ok(ImageObs { size, pixels })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn rgb(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.size + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Model input: channel-major floats with `0 -> -1` and `255 -> 1`.
    pub fn to_normalized(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.pixels.len());
        normalize_into(&self.pixels, self.size, &mut out);
        out
    }
}

/// Appends the channel-major normalization of an HWC byte image.
pub fn normalize_into(pixels: &[u8], size: usize, out: &mut Vec<f32>) {
    let hw = size * size;
    for c in 0..3 {
        out.extend((0..hw).map(|p| pixels[p * 3 + c] as f32 / 127.5 - 1.0));
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    size: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    /// Row-major mask of a `size x size` image.
    pub fn from_bits(size: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != size * size {
            return Err(Error::Shape(format!("{} mask bits for a {size}x{size} image", bits.len())));
        }
        Ok(BinaryMask { size, bits })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.size + col]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// `(row, col)` of every foreground pixel in raster order.
    pub fn foreground(&self) -> Vec<(usize, usize)> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i / self.size, i % self.size))
            .collect()
    }
}

fn dist_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

fn in_triangle(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    let cross = |o: [f64; 2], u: [f64; 2], v: [f64; 2]| (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0]);
    let d1 = cross(a, b, p);
    let d2 = cross(b, c, p);
    let d3 = cross(c, a, p);
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

/// Marks every pixel whose center lies inside the shape; `inside` is tested
/// only within the workspace-space bounding box `[lo, hi]`.
fn fill(cover: &mut [bool], size: usize, lo: [f64; 2], hi: [f64; 2], inside: impl Fn([f64; 2]) -> bool) {
    let s = size as f64;
    let range = |lo: f64, hi: f64| {
        let a = ((lo * s - 0.5).floor().max(0.0)) as usize;
        let b = ((hi * s - 0.5).ceil().min(s - 1.0)).max(0.0) as usize;
        a..=b
    };
    for r in range(lo[1], hi[1]) {
        for c in range(lo[0], hi[0]) {
            let p = [(c as f64 + 0.5) / s, (r as f64 + 0.5) / s];
            if inside(p) {
                cover[r * size + c] = true;
            }
        }
    }
}

/// Pixels covered by the object: a disk per particle, a capsule per rope
/// segment, and the two triangles of every cloth cell.
pub fn coverage(state: &EnvState, radius_px: f64, size: usize) -> Vec<bool> {
    let mut cover = vec![false; size * size];
    let r = radius_px / size as f64;
    let xy: Vec<[f64; 2]> = state.positions.iter().map(|p| [p[0], p[1]]).collect();
    for &c in &xy {
        fill(&mut cover, size, [c[0] - r, c[1] - r], [c[0] + r, c[1] + r], |p| {
            (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) <= r * r
        });
    }
    let capsule = |cover: &mut Vec<bool>, a: [f64; 2], b: [f64; 2]| {
        let lo = [a[0].min(b[0]) - r, a[1].min(b[1]) - r];
        let hi = [a[0].max(b[0]) + r, a[1].max(b[1]) + r];
        fill(cover, size, lo, hi, |p| dist_to_segment(p, a, b) <= r);
    };
    match state.kind {
        EnvKind::Pointmass => {}
        EnvKind::Rope => {
            for w in xy.windows(2) {
                capsule(&mut cover, w[0], w[1]);
            }
        }
        EnvKind::Cloth => {
            let n = CLOTH_SIDE;
            for row in 0..n {
                for col in 0..n {
                    let i = row * n + col;
                    if col + 1 < n {
                        capsule(&mut cover, xy[i], xy[i + 1]);
                    }
                    if row + 1 < n {
                        capsule(&mut cover, xy[i], xy[i + n]);
                    }
                    if row + 1 < n && col + 1 < n {
                        let quad = [xy[i], xy[i + 1], xy[i + n + 1], xy[i + n]];
                        let lo = quad.iter().fold([f64::INFINITY; 2], |m, p| [m[0].min(p[0]), m[1].min(p[1])]);
                        let hi = quad.iter().fold([f64::NEG_INFINITY; 2], |m, p| [m[0].max(p[0]), m[1].max(p[1])]);
                        fill(&mut cover, size, lo, hi, |p| {
                            in_triangle(p, quad[0], quad[1], quad[2]) || in_triangle(p, quad[0], quad[2], quad[3])
                        });
                    }
                }
            }
        }
    }
    cover
}

/// Top-down orthographic rendering with brightness gain and bounded noise.
/// Noise is uniform with the requested standard deviation and is drawn from
/// `params.noise_seed`, so rendering is a pure function of its inputs.
pub fn render(state: &EnvState, params: &RenderParams, size: usize) -> Result<ImageObs> {
    let cover = coverage(state, params.radius_px, size);
    let bg = params.effective_background();
    let fg = params.effective_object();
    let half_width = params.noise_std * 3f64.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(params.noise_seed);
    let mut pixels = Vec::with_capacity(size * size * 3);
    for &on in &cover {
        let color = if on { fg } else { bg };
        for ch in color {
            let v = if half_width > 0.0 {
                ch as f64 + rng.gen_range(-half_width..=half_width)
            } else {
                ch as f64
            };
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    ImageObs::new(size, pixels)
}

pub fn segment(obs: &ImageObs, params: &RenderParams) -> BinaryMask {
    let bg = params.effective_background();
    let bits = obs
        .pixels
        .chunks_exact(3)
        .map(|p| rgb_distance([p[0], p[1], p[2]], bg) > SEGMENT_THRESHOLD)
        .collect();
    BinaryMask { size: obs.size, bits }
}
