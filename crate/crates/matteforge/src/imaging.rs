//! Image I/O, alpha compositing and synthetic dataset construction.

use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{MatteError, Result};
use crate::trimap::{Label, Trimap};

/// RGB image with channel-interleaved f32 values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height >= 1 && width >= 1);
        Image {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut img = Image::new(height, width);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    img.set(y, x, c, f(y, x, c));
                }
            }
        }
        img
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.height, self.width, |y, x, c| {
            self.get(y, self.width - 1 - x, c)
        })
    }
}

/// Single-channel opacity map with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaMatte {
    pub height: usize,
    pub width: usize,
    data: Vec<f32>,
}

impl AlphaMatte {
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height >= 1 && width >= 1);
        AlphaMatte {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width);
        AlphaMatte {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        AlphaMatte {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn flip_horizontal(&self) -> AlphaMatte {
        AlphaMatte::from_fn(self.height, self.width, |y, x| {
            self.get(y, self.width - 1 - x)
        })
    }
}

/// Result of decoding a PNG: RGB files load as images, grayscale as mattes.
#[derive(Debug)]
pub enum PngBuffer {
    Color(Image),
    Gray(AlphaMatte),
}

/// Loads an 8-bit PNG; the alpha channel of RGBA files is ignored with a
/// warning, and 16-bit files are rejected.
pub fn load_png(path: &Path) -> Result<PngBuffer> {
    let img = image::open(path).map_err(|e| MatteError::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    use image::DynamicImage::*;
    match img {
        ImageLuma8(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            let data = buf.into_raw().iter().map(|&v| v as f32 / 255.0).collect();
            Ok(PngBuffer::Gray(AlphaMatte::from_data(h, w, data)))
        }
        ImageLumaA8(buf) => {
            warn!("{}: ignoring alpha channel of grayscale-alpha PNG", path.display());
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            let mut m = AlphaMatte::new(h, w);
            for (x, y, p) in buf.enumerate_pixels() {
                m.set(y as usize, x as usize, p.0[0] as f32 / 255.0);
            }
            Ok(PngBuffer::Gray(m))
        }
        ImageRgb8(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            let data = buf.into_raw().iter().map(|&v| v as f32 / 255.0).collect();
            Ok(PngBuffer::Color(Image {
                height: h,
                width: w,
                data,
            }))
        }
        ImageRgba8(buf) => {
            warn!("{}: ignoring alpha channel of RGBA PNG", path.display());
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            let mut img = Image::new(h, w);
            for (x, y, p) in buf.enumerate_pixels() {
                for c in 0..3 {
                    img.set(y as usize, x as usize, c, p.0[c] as f32 / 255.0);
                }
            }
            Ok(PngBuffer::Color(img))
        }
        _ => Err(MatteError::Data(format!(
            "{}: unsupported bit depth (only 8-bit PNG accepted)",
            path.display()
        ))),
    }
}

pub fn load_image(path: &Path) -> Result<Image> {
    match load_png(path)? {
        PngBuffer::Color(img) => Ok(img),
        PngBuffer::Gray(_) => Err(MatteError::Data(format!(
            "{}: expected an RGB image, got grayscale",
            path.display()
        ))),
    }
}

pub fn load_alpha(path: &Path) -> Result<AlphaMatte> {
    match load_png(path)? {
        PngBuffer::Gray(m) => Ok(m),
        PngBuffer::Color(_) => Err(MatteError::Data(format!(
            "{}: expected a grayscale matte, got RGB",
            path.display()
        ))),
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_image_png(path: &Path, img: &Image) -> Result<()> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for (x, y, p) in buf.enumerate_pixels_mut() {
        for c in 0..3 {
            p.0[c] = quantize(img.get(y as usize, x as usize, c));
        }
    }
    buf.save(path).map_err(|e| MatteError::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn save_alpha_png(path: &Path, m: &AlphaMatte) -> Result<()> {
    let mut buf = image::GrayImage::new(m.width as u32, m.height as u32);
    for (x, y, p) in buf.enumerate_pixels_mut() {
        p.0[0] = quantize(m.get(y as usize, x as usize));
    }
    buf.save(path).map_err(|e| MatteError::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Per-pixel compositing I = alpha * F + (1 - alpha) * B, clamped to [0, 1].
pub fn composite(fg: &Image, bg: &Image, alpha: &AlphaMatte) -> Result<Image> {
    if fg.height != bg.height
        || fg.width != bg.width
        || fg.height != alpha.height
        || fg.width != alpha.width
    {
        return Err(MatteError::shape(
            "composite",
            &[fg.height, fg.width],
            &[bg.height, bg.width, alpha.height, alpha.width],
        ));
    }
    let mut out = Image::new(fg.height, fg.width);
    for y in 0..fg.height {
        for x in 0..fg.width {
            let a = alpha.get(y, x);
            for c in 0..3 {
                let v = a * fg.get(y, x, c) + (1.0 - a) * bg.get(y, x, c);
                out.set(y, x, c, v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Alpha recovered by inverting the compositing equation, with a flag per
/// pixel marking where |F - B| was below the contrast floor in every channel.
pub struct RecoveredAlpha {
    pub alpha: AlphaMatte,
    pub defined: Vec<bool>,
}

/// Contrast floor below which alpha recovery is flagged undefined.
pub const EPS_DIV: f64 = 1e-3;

/// Least-squares inversion of the compositing equation over channels:
/// alpha = sum_c (I-B)(F-B) / sum_c (F-B)^2, clamped to [0, 1].
pub fn recover_alpha(comp: &Image, fg: &Image, bg: &Image) -> Result<RecoveredAlpha> {
    if fg.height != bg.height || fg.height != comp.height || fg.width != bg.width || fg.width != comp.width
    {
        return Err(MatteError::shape(
            "recover_alpha",
            &[comp.height, comp.width],
            &[fg.height, fg.width, bg.height, bg.width],
        ));
    }
    let mut alpha = AlphaMatte::new(fg.height, fg.width);
    let mut defined = vec![false; fg.height * fg.width];
    for y in 0..fg.height {
        for x in 0..fg.width {
            let mut num = 0.0f64;
            let mut den = 0.0f64;
            let mut any_contrast = false;
            for c in 0..3 {
                let d = fg.get(y, x, c) as f64 - bg.get(y, x, c) as f64;
                let r = comp.get(y, x, c) as f64 - bg.get(y, x, c) as f64;
                num += r * d;
                den += d * d;
                if d.abs() >= EPS_DIV {
                    any_contrast = true;
                }
            }
            if any_contrast {
                alpha.set(y, x, (num / den).clamp(0.0, 1.0) as f32);
                defined[y * fg.width + x] = true;
            }
        }
    }
    Ok(RecoveredAlpha { alpha, defined })
}

/// Bilinear resize with half-pixel centers.
pub fn resize_bilinear_image(img: &Image, out_h: usize, out_w: usize) -> Image {
    let mut out = Image::new(out_h, out_w);
    for y in 0..out_h {
        for x in 0..out_w {
            let (sy, sx, fy, fx) = bilinear_coords(y, x, img.height, img.width, out_h, out_w);
            for c in 0..3 {
                let v00 = img.get(sy.0, sx.0, c);
                let v01 = img.get(sy.0, sx.1, c);
                let v10 = img.get(sy.1, sx.0, c);
                let v11 = img.get(sy.1, sx.1, c);
                let v = v00 * (1.0 - fy) * (1.0 - fx)
                    + v01 * (1.0 - fy) * fx
                    + v10 * fy * (1.0 - fx)
                    + v11 * fy * fx;
                out.set(y, x, c, v);
            }
        }
    }
    out
}

pub fn resize_bilinear_alpha(m: &AlphaMatte, out_h: usize, out_w: usize) -> AlphaMatte {
    let mut out = AlphaMatte::new(out_h, out_w);
    for y in 0..out_h {
        for x in 0..out_w {
            let (sy, sx, fy, fx) = bilinear_coords(y, x, m.height, m.width, out_h, out_w);
            let v = m.get(sy.0, sx.0) * (1.0 - fy) * (1.0 - fx)
                + m.get(sy.0, sx.1) * (1.0 - fy) * fx
                + m.get(sy.1, sx.0) * fy * (1.0 - fx)
                + m.get(sy.1, sx.1) * fy * fx;
            out.set(y, x, v);
        }
    }
    out
}

#[allow(clippy::type_complexity)]
fn bilinear_coords(
    y: usize,
    x: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
) -> ((usize, usize), (usize, usize), f32, f32) {
    let map = |d: usize, inn: usize, out: usize| -> (usize, usize, f32) {
        let src = ((d as f32 + 0.5) * inn as f32 / out as f32 - 0.5).max(0.0);
        let lo = (src.floor() as usize).min(inn - 1);
        let hi = (lo + 1).min(inn - 1);
        (lo, hi, src - lo as f32)
    };
    let (y0, y1, fy) = map(y, in_h, out_h);
    let (x0, x1, fx) = map(x, in_w, out_w);
    ((y0, y1), (x0, x1), fy, fx)
}

/// One synthesized composite in the Composition-1k style.
#[derive(Clone)]
pub struct CompositeSample {
    pub fg_id: String,
    pub bg_id: String,
    pub foreground: Image,
    pub background: Image,
    pub alpha: AlphaMatte,
    pub composite: Image,
}

/// Resizes `bg` so both dimensions cover `(h, w)` (aspect-preserving) and
/// center-crops to exactly `(h, w)`.
pub fn fit_background(bg: &Image, h: usize, w: usize) -> Image {
    let scale = (h as f64 / bg.height as f64).max(w as f64 / bg.width as f64);
    let rh = ((bg.height as f64 * scale).ceil() as usize).max(h);
    let rw = ((bg.width as f64 * scale).ceil() as usize).max(w);
    let resized = if rh == bg.height && rw == bg.width {
        bg.clone()
    } else {
        resize_bilinear_image(bg, rh, rw)
    };
    let oy = (rh - h) / 2;
    let ox = (rw - w) / 2;
    Image::from_fn(h, w, |y, x, c| resized.get(y + oy, x + ox, c))
}

/// Deterministically composes `per_fg` samples for each foreground, drawing
/// backgrounds without replacement (with replacement and a warning when the
/// pool is smaller than `per_fg`).
pub fn synthesize_set(
    foregrounds: &[(String, Image)],
    alphas: &[(String, AlphaMatte)],
    backgrounds: &[(String, Image)],
    per_fg: usize,
    rng: &mut impl Rng,
) -> Result<Vec<CompositeSample>> {
    if foregrounds.is_empty() || backgrounds.is_empty() {
        return Err(MatteError::Data("synthesize_set: empty inputs".into()));
    }
    if foregrounds.len() != alphas.len() {
        return Err(MatteError::Data(format!(
            "synthesize_set: {} foregrounds vs {} alphas",
            foregrounds.len(),
            alphas.len()
        )));
    }
    if per_fg < 1 {
        return Err(MatteError::InvalidArgument("synthesize_set: per_fg must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(foregrounds.len() * per_fg);
    for ((fg_id, fg), (_, alpha)) in foregrounds.iter().zip(alphas) {
        if fg.height != alpha.height || fg.width != alpha.width {
            return Err(MatteError::shape(
                "synthesize_set fg/alpha",
                &[fg.height, fg.width],
                &[alpha.height, alpha.width],
            ));
        }
        let picks: Vec<usize> = if backgrounds.len() >= per_fg {
            let mut idx: Vec<usize> = (0..backgrounds.len()).collect();
            idx.shuffle(rng);
            idx.truncate(per_fg);
            idx
        } else {
            warn!(
                "background pool ({}) smaller than per_fg ({}); drawing with replacement",
                backgrounds.len(),
                per_fg
            );
            (0..per_fg).map(|_| rng.gen_range(0..backgrounds.len())).collect()
        };
        for bi in picks {
            let (bg_id, bg) = &backgrounds[bi];
            let fitted = fit_background(bg, fg.height, fg.width);
            let comp = composite(fg, &fitted, alpha)?;
            out.push(CompositeSample {
                fg_id: fg_id.clone(),
                bg_id: bg_id.clone(),
                foreground: fg.clone(),
                background: fitted,
                alpha: alpha.clone(),
                composite: comp,
            });
        }
    }
    Ok(out)
}

pub(crate) fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * n - 2;
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Reflect-pads an image to at least `(h, w)` (bottom/right).
pub fn reflect_pad_image(img: &Image, h: usize, w: usize) -> Image {
    if img.height >= h && img.width >= w {
        return img.clone();
    }
    let (nh, nw) = (img.height.max(h), img.width.max(w));
    Image::from_fn(nh, nw, |y, x, c| {
        img.get(mirror(y as isize, img.height), mirror(x as isize, img.width), c)
    })
}

pub fn reflect_pad_alpha(m: &AlphaMatte, h: usize, w: usize) -> AlphaMatte {
    if m.height >= h && m.width >= w {
        return m.clone();
    }
    let (nh, nw) = (m.height.max(h), m.width.max(w));
    AlphaMatte::from_fn(nh, nw, |y, x| {
        m.get(mirror(y as isize, m.height), mirror(x as isize, m.width))
    })
}

/// A training crop: composite patch and its aligned alpha at `out x out`.
pub struct TrainingCrop {
    pub image: Image,
    pub alpha: AlphaMatte,
    pub flipped: bool,
}

/// Crops around a random unknown-region pixel at a random size from `sizes`,
/// resizes to `out x out` and flips horizontally with probability 1/2.
/// Smaller images are reflect-padded first; an empty unknown region falls
/// back to a uniformly random center.
pub fn crop_for_training(
    comp: &Image,
    alpha: &AlphaMatte,
    trimap: &Trimap,
    sizes: &[usize],
    out: usize,
    rng: &mut impl Rng,
) -> Result<TrainingCrop> {
    if sizes.is_empty() {
        return Err(MatteError::InvalidArgument("crop_for_training: empty size list".into()));
    }
    let size = sizes[rng.gen_range(0..sizes.len())];
    let comp = reflect_pad_image(comp, size, size);
    let alpha_p = reflect_pad_alpha(alpha, size, size);

    let unknown: Vec<(usize, usize)> = (0..trimap.height)
        .flat_map(|y| (0..trimap.width).map(move |x| (y, x)))
        .filter(|&(y, x)| trimap.get(y, x) == Label::Unknown)
        .collect();
    let (cy, cx) = if unknown.is_empty() {
        (rng.gen_range(0..comp.height), rng.gen_range(0..comp.width))
    } else {
        unknown[rng.gen_range(0..unknown.len())]
    };
    let y0 = cy.saturating_sub(size / 2).min(comp.height - size);
    let x0 = cx.saturating_sub(size / 2).min(comp.width - size);

    let patch = Image::from_fn(size, size, |y, x, c| comp.get(y0 + y, x0 + x, c));
    let apatch = AlphaMatte::from_fn(size, size, |y, x| alpha_p.get(y0 + y, x0 + x));
    let (mut img, mut a) = if size == out {
        (patch, apatch)
    } else {
        (
            resize_bilinear_image(&patch, out, out),
            resize_bilinear_alpha(&apatch, out, out),
        )
    };
    let flipped = rng.gen_bool(0.5);
    if flipped {
        img = img.flip_horizontal();
        a = a.flip_horizontal();
    }
    Ok(TrainingCrop {
        image: img,
        alpha: a,
        flipped,
    })
}
