//! Trimap generation from ground-truth alpha, unknown-band growth, and the
//! two-stage randomized perturbation that produces a noisier trimap for the
//! textural path.

use std::path::Path;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::Tensor;
use crate::error::{MatteError, Result};
use crate::imaging::AlphaMatte;
use crate::scalar::Scalar;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Label {
    Background,
    Unknown,
    Foreground,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Trimap {
    pub height: usize,
    pub width: usize,
    labels: Vec<Label>,
}

impl Trimap {
    pub fn new(height: usize, width: usize, labels: Vec<Label>) -> Self {
        assert_eq!(labels.len(), height * width);
        Trimap {
            height,
            width,
            labels,
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> Label) -> Self {
        let labels = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Trimap {
            height,
            width,
            labels,
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> Label {
        self.labels[y * self.width + x]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn unknown_mask(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l == Label::Unknown).collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn flip_horizontal(&self) -> Trimap {
        Trimap::from_fn(self.height, self.width, |y, x| {
            self.get(y, self.width - 1 - x)
        })
    }

    /// FNV-1a over the label bytes; used by the training log to show when the
    /// two path trimaps coincide.
    pub fn content_hash(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        for &l in &self.labels {
            let b = match l {
                Label::Background => 0u8,
                Label::Unknown => 1,
                Label::Foreground => 2,
            };
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

/// The semantic-path and textural-path trimaps for one sample. At inference
/// both are the user-provided trimap.
#[derive(Clone, Debug)]
pub struct TrimapPair {
    pub sp: Trimap,
    pub tcp: Trimap,
}

/// Kernel and step ranges for randomized trimap generation, all inclusive.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrimapGenConfig {
    pub base_kernel_min: usize,
    pub base_kernel_max: usize,
    pub steps_max: u32,
    pub iterations_max: u32,
    pub dilation_kernel_min: usize,
    pub dilation_kernel_max: usize,
    pub erosion_kernel_min: usize,
    pub erosion_kernel_max: usize,
    pub seed: u64,
}

impl Default for TrimapGenConfig {
    fn default() -> Self {
        TrimapGenConfig {
            base_kernel_min: 1,
            base_kernel_max: 30,
            steps_max: 3,
            iterations_max: 3,
            dilation_kernel_min: 1,
            dilation_kernel_max: 30,
            erosion_kernel_min: 1,
            erosion_kernel_max: 10,
            seed: 0,
        }
    }
}

/// Label assignment from ground-truth alpha: exactly 1 is foreground,
/// exactly 0 is background, anything in between is unknown.
pub fn trimap_from_alpha(alpha: &AlphaMatte) -> Trimap {
    let labels = alpha
        .data()
        .iter()
        .map(|&a| {
            if a >= 1.0 {
                Label::Foreground
            } else if a <= 0.0 {
                Label::Background
            } else {
                Label::Unknown
            }
        })
        .collect();
    Trimap::new(alpha.height, alpha.width, labels)
}

// Square structuring element of size k: window offsets in
// [-(k-1)/2, +k/2], which grows monotonically with k and is the identity at
// k = 1. Erosion treats out-of-image as outside the mask.

fn window(k: usize) -> (isize, isize) {
    (((k - 1) / 2) as isize, (k / 2) as isize)
}

pub(crate) fn erode_mask(mask: &[bool], h: usize, w: usize, k: usize) -> Vec<bool> {
    if k == 1 {
        return mask.to_vec();
    }
    let (lo, hi) = window(k);
    // separable: rows then columns
    let mut tmp = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut all = true;
            for dx in -lo..=hi {
                let xx = x as isize + dx;
                if xx < 0 || xx >= w as isize || !mask[y * w + xx as usize] {
                    all = false;
                    break;
                }
            }
            tmp[y * w + x] = all;
        }
    }
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut all = true;
            for dy in -lo..=hi {
                let yy = y as isize + dy;
                if yy < 0 || yy >= h as isize || !tmp[yy as usize * w + x] {
                    all = false;
                    break;
                }
            }
            out[y * w + x] = all;
        }
    }
    out
}

pub(crate) fn dilate_mask(mask: &[bool], h: usize, w: usize, k: usize) -> Vec<bool> {
    if k == 1 {
        return mask.to_vec();
    }
    // reflected structuring element keeps dilation dual to erosion
    let (lo, hi) = window(k);
    let (lo, hi) = (hi, lo);
    let mut tmp = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut any = false;
            for dx in -lo..=hi {
                let xx = x as isize + dx;
                if xx >= 0 && xx < w as isize && mask[y * w + xx as usize] {
                    any = true;
                    break;
                }
            }
            tmp[y * w + x] = any;
        }
    }
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut any = false;
            for dy in -lo..=hi {
                let yy = y as isize + dy;
                if yy >= 0 && yy < h as isize && tmp[yy as usize * w + x] {
                    any = true;
                    break;
                }
            }
            out[y * w + x] = any;
        }
    }
    out
}

fn masks(t: &Trimap) -> (Vec<bool>, Vec<bool>) {
    let fg = t.labels.iter().map(|&l| l == Label::Foreground).collect();
    let bg = t.labels.iter().map(|&l| l == Label::Background).collect();
    (fg, bg)
}

fn from_masks(h: usize, w: usize, fg: &[bool], bg: &[bool]) -> Trimap {
    let labels = fg
        .iter()
        .zip(bg)
        .map(|(&f, &b)| {
            if f {
                Label::Foreground
            } else if b {
                Label::Background
            } else {
                Label::Unknown
            }
        })
        .collect();
    Trimap::new(h, w, labels)
}

/// Enlarges the unknown band by eroding the foreground and background masks
/// with a k x k square element; k = 1 is the identity.
pub fn grow_unknown(t: &Trimap, kernel: usize) -> Result<Trimap> {
    if !(1..=30).contains(&kernel) {
        return Err(MatteError::InvalidArgument(format!(
            "grow_unknown: kernel {kernel} outside [1, 30]"
        )));
    }
    let (fg, bg) = masks(t);
    let fge = erode_mask(&fg, t.height, t.width, kernel);
    let bge = erode_mask(&bg, t.height, t.width, kernel);
    Ok(from_masks(t.height, t.width, &fge, &bge))
}

/// Semantic-path trimap: label from alpha, then grow the unknown band with a
/// uniformly drawn base kernel.
pub fn gen_sp_trimap(alpha: &AlphaMatte, cfg: &TrimapGenConfig, rng: &mut impl Rng) -> Trimap {
    let k = rng.gen_range(cfg.base_kernel_min..=cfg.base_kernel_max);
    grow_unknown(&trimap_from_alpha(alpha), k).expect("config-validated kernel")
}

/// One perturbation step applied to the label masks. `dilate_unknown` erodes
/// both known masks; the inverse step dilates them and relabels unknown
/// pixels by whichever mask reaches them (ties stay unknown).
fn perturb_step(t: &Trimap, dilate_unknown: bool, iterations: u32, kernel: usize) -> Trimap {
    let (h, w) = (t.height, t.width);
    let (mut fg, mut bg) = masks(t);
    for _ in 0..iterations {
        if dilate_unknown {
            fg = erode_mask(&fg, h, w, kernel);
            bg = erode_mask(&bg, h, w, kernel);
        } else {
            let fgd = dilate_mask(&fg, h, w, kernel);
            let bgd = dilate_mask(&bg, h, w, kernel);
            for i in 0..h * w {
                if !fg[i] && !bg[i] {
                    match (fgd[i], bgd[i]) {
                        (true, false) => fg[i] = true,
                        (false, true) => bg[i] = true,
                        _ => {}
                    }
                }
            }
        }
    }
    from_masks(h, w, &fg, &bg)
}

/// Textural-path trimap: n extra random morphological steps on top of the
/// semantic-path trimap. Draw order per call: n; then per step op, p, kernel
/// (kernel drawn once per step and reused across its p iterations).
pub fn perturb_for_tcp(sp: &Trimap, cfg: &TrimapGenConfig, rng: &mut impl Rng) -> Trimap {
    let n = rng.gen_range(0..=cfg.steps_max);
    let mut t = sp.clone();
    for _ in 0..n {
        let dilate_unknown = rng.gen_bool(0.5);
        let p = rng.gen_range(0..=cfg.iterations_max);
        let k = if dilate_unknown {
            rng.gen_range(cfg.dilation_kernel_min..=cfg.dilation_kernel_max)
        } else {
            rng.gen_range(cfg.erosion_kernel_min..=cfg.erosion_kernel_max)
        };
        t = perturb_step(&t, dilate_unknown, p, k);
    }
    t
}

/// One-hot encoding with channel order (background, unknown, foreground).
pub fn one_hot<S: Scalar>(t: &Trimap) -> Tensor<S> {
    let hw = t.height * t.width;
    let mut data = vec![S::zero(); 3 * hw];
    write_one_hot(t, &mut data);
    Tensor::constant(vec![3, t.height, t.width], data)
}

/// Writes the 3 x H x W one-hot planes into `out` (used for batch assembly).
pub fn write_one_hot<S: Scalar>(t: &Trimap, out: &mut [S]) {
    let hw = t.height * t.width;
    assert_eq!(out.len(), 3 * hw);
    for v in out.iter_mut() {
        *v = S::zero();
    }
    for (i, &l) in t.labels.iter().enumerate() {
        let c = match l {
            Label::Background => 0,
            Label::Unknown => 1,
            Label::Foreground => 2,
        };
        out[c * hw + i] = S::one();
    }
}

/// PNG byte encoding: 0 = background, 128 = unknown, 255 = foreground.
pub fn save_trimap_png(path: &Path, t: &Trimap) -> Result<()> {
    let mut buf = image::GrayImage::new(t.width as u32, t.height as u32);
    for (x, y, p) in buf.enumerate_pixels_mut() {
        p.0[0] = match t.get(y as usize, x as usize) {
            Label::Background => 0,
            Label::Unknown => 128,
            Label::Foreground => 255,
        };
    }
    buf.save(path).map_err(|e| MatteError::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Reads a trimap PNG; bytes other than {0, 128, 255} snap to the nearest of
/// the three with a warning.
pub fn load_trimap_png(path: &Path) -> Result<Trimap> {
    let img = image::open(path).map_err(|e| MatteError::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(buf) => buf,
        other => other.into_luma8(),
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let mut warned = false;
    let labels = gray
        .into_raw()
        .iter()
        .map(|&b| match b {
            0 => Label::Background,
            128 => Label::Unknown,
            255 => Label::Foreground,
            other => {
                if !warned {
                    warn!(
                        "{}: trimap byte {other} snapped to nearest label",
                        path.display()
                    );
                    warned = true;
                }
                if other < 64 {
                    Label::Background
                } else if other < 192 {
                    Label::Unknown
                } else {
                    Label::Foreground
                }
            }
        })
        .collect();
    Ok(Trimap::new(h, w, labels))
}
