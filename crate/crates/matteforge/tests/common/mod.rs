//! Shared helpers for the integration suites: central-difference gradient
//! checking and procedural toy corpora.

#![allow(dead_code)]

pub mod checks;

use matteforge::engine::Tensor;
use matteforge::imaging::{save_alpha_png, save_image_png, AlphaMatte, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub type T64 = Tensor<f64>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn rand_param(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> T64 {
    let n = shape.iter().product();
    Tensor::param(shape.to_vec(), rand_vec(rng, n, lo, hi))
}

/// Central-difference gradient check. Re-runs `f` (which must rebuild the
/// graph from the current parameter data) with each checked element nudged
/// by +-h and compares to the analytic gradient from one backward pass.
/// Relative error uses max(1, |analytic|, |numeric|) as the scale. At most
/// `max_per_tensor` evenly spaced elements are checked per parameter.
pub fn check_grads(
    context: &str,
    f: &dyn Fn() -> T64,
    params: &[(&str, T64)],
    h: f64,
    tol: f64,
    max_per_tensor: usize,
) {
    for (_, p) in params {
        p.zero_grad();
    }
    let loss = f();
    loss.backward().unwrap();
    for (name, p) in params {
        let analytic = p
            .grad()
            .unwrap_or_else(|| panic!("{context}/{name}: no gradient"));
        let n = p.numel();
        let stride = n.div_ceil(max_per_tensor).max(1);
        for i in (0..n).step_by(stride) {
            let orig = p.data()[i];
            p.data_mut()[i] = orig + h;
            let lp = f().item();
            p.data_mut()[i] = orig - h;
            let lm = f().item();
            p.data_mut()[i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[i];
            let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            assert!(
                rel < tol,
                "{context}/{name}[{i}]: analytic {a} vs numeric {numeric} (rel {rel:.3e})"
            );
        }
    }
}

/// Soft-disc alpha with a genuine unknown band.
pub fn disc_alpha(h: usize, w: usize, phase: usize) -> AlphaMatte {
    let cy = h as f32 / 2.0 + phase as f32;
    AlphaMatte::from_fn(h, w, |y, x| {
        let d = ((y as f32 - cy).powi(2) + (x as f32 - w as f32 / 2.0).powi(2)).sqrt();
        (1.0 - (d - h as f32 / 5.0) / 4.0).clamp(0.0, 1.0)
    })
}

pub fn textured_image(h: usize, w: usize, phase: usize) -> Image {
    Image::from_fn(h, w, |y, x, c| {
        (((y + phase * 3) * 7 + x * 11 + c * 5) % 17) as f32 / 17.0
    })
}

/// Writes `n` fg/alpha/bg PNG triples under root/fg, root/alpha, root/bg.
pub fn write_toy_corpus(root: &Path, n: usize, size: usize) {
    for sub in ["fg", "alpha", "bg"] {
        std::fs::create_dir_all(root.join(sub)).unwrap();
    }
    for i in 0..n {
        let fg = textured_image(size, size, i);
        let alpha = disc_alpha(size, size, i);
        let bg = Image::from_fn(size, size, |y, x, c| {
            (((y * 13 + x * 3 + c * 2 + i) % 19) as f32) / 19.0
        });
        save_image_png(&root.join(format!("fg/s{i}.png")), &fg).unwrap();
        save_alpha_png(&root.join(format!("alpha/s{i}.png")), &alpha).unwrap();
        save_image_png(&root.join(format!("bg/b{i}.png")), &bg).unwrap();
    }
}
