//! Reusable oracle checks shared by the oracle suite and the acceptance
//! gate: per-op finite-difference gradient verification and brute-force
//! references for the losses and metrics.

use super::{rand_param, rand_vec, rng, check_grads};
use matteforge::engine::ops::{
    add, batch_norm, clamp_unit, concat_channels, conv2d, max_pool2, relu, resize_nearest, scale,
    scale_const, sum, tanh, BnStats, NormMode,
};
use matteforge::engine::Tensor;
use matteforge::imaging::AlphaMatte;
use matteforge::loss::{alpha_prediction_loss, background_enhancement_loss};
use matteforge::metrics::{
    connectivity_error, gradient_error, mse, sad, CONNECTIVITY_STEP, CONNECTIVITY_TOLERANCE,
    GRADIENT_SIGMA,
};
use rand::Rng;

use super::T64;

fn head(y: &T64) -> T64 {
    sum(&tanh(y))
}

/// Finite-difference check of every differentiable op against its analytic
/// backward pass.
pub fn op_gradchecks(h: f64, tol: f64) {
    let mut r = rng(1);
    let x = rand_param(&mut r, &[2, 3, 5, 5], -1.0, 1.0);
    let w = rand_param(&mut r, &[4, 3, 3, 3], -0.5, 0.5);
    let b = rand_param(&mut r, &[4], -0.5, 0.5);
    check_grads(
        "conv2d s1",
        &|| head(&conv2d(&x, &w, &b, 1, 1).unwrap()),
        &[("x", x.clone()), ("w", w.clone()), ("b", b.clone())],
        h,
        tol,
        40,
    );
    let x2 = rand_param(&mut r, &[1, 2, 6, 6], -1.0, 1.0);
    let w2 = rand_param(&mut r, &[3, 2, 3, 3], -0.5, 0.5);
    let b2 = rand_param(&mut r, &[3], -0.5, 0.5);
    check_grads(
        "conv2d s2",
        &|| head(&conv2d(&x2, &w2, &b2, 2, 1).unwrap()),
        &[("x", x2.clone()), ("w", w2.clone()), ("b", b2.clone())],
        h,
        tol,
        40,
    );

    let xr = rand_param(&mut r, &[1, 2, 3, 4], -1.0, 1.0);
    check_grads(
        "resize up",
        &|| head(&resize_nearest(&xr, 7, 9).unwrap()),
        &[("x", xr.clone())],
        h,
        tol,
        24,
    );
    let xd = rand_param(&mut r, &[1, 2, 6, 6], -1.0, 1.0);
    check_grads(
        "resize down",
        &|| head(&resize_nearest(&xd, 3, 2).unwrap()),
        &[("x", xd.clone())],
        h,
        tol,
        72,
    );

    // pointwise ops; keep relu inputs away from the kink at 0
    let data: Vec<f64> = rand_vec(&mut r, 24, 0.05, 1.0)
        .iter()
        .zip(rand_vec(&mut r, 24, 0.0, 1.0))
        .map(|(&v, s)| if s < 0.5 { v } else { -v })
        .collect();
    let xp = Tensor::param(vec![2, 3, 2, 2], data);
    check_grads("relu", &|| sum(&relu(&xp)), &[("x", xp.clone())], h, tol, 24);
    check_grads("tanh", &|| head(&tanh(&xp)), &[("x", xp.clone())], h, tol, 24);
    check_grads(
        "scale_const",
        &|| head(&scale_const(&xp, 0.7)),
        &[("x", xp.clone())],
        h,
        tol,
        24,
    );
    // clamp subgradient is identity on the closed interval: test strictly
    // inside (0, 1)
    let c = rand_param(&mut r, &[1, 1, 4, 4], 0.05, 0.95);
    check_grads(
        "clamp_unit",
        &|| head(&clamp_unit(&c)),
        &[("x", c.clone())],
        h,
        tol,
        16,
    );

    let a = rand_param(&mut r, &[1, 2, 3, 3], -1.0, 1.0);
    let b3 = rand_param(&mut r, &[1, 2, 3, 3], -1.0, 1.0);
    check_grads(
        "add",
        &|| head(&add(&a, &b3).unwrap()),
        &[("a", a.clone()), ("b", b3.clone())],
        h,
        tol,
        18,
    );
    let s = Tensor::param(vec![1], vec![0.6]);
    check_grads(
        "scale",
        &|| head(&scale(&a, &s).unwrap()),
        &[("x", a.clone()), ("s", s.clone())],
        h,
        tol,
        18,
    );
    check_grads(
        "concat",
        &|| head(&concat_channels(&[&a, &b3]).unwrap()),
        &[("a", a.clone()), ("b", b3.clone())],
        h,
        tol,
        18,
    );

    // well-separated values keep the argmax stable under the FD nudge
    let n = 2 * 4 * 4;
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    use rand::seq::SliceRandom;
    vals.shuffle(&mut r);
    let xm = Tensor::param(vec![2, 1, 4, 4], vals);
    check_grads(
        "max_pool2",
        &|| head(&max_pool2(&xm).unwrap()),
        &[("x", xm.clone())],
        1e-6,
        tol,
        32,
    );

    let xb = rand_param(&mut r, &[2, 3, 3, 3], -1.0, 1.0);
    let gamma = rand_param(&mut r, &[3], 0.5, 1.5);
    let beta = rand_param(&mut r, &[3], -0.5, 0.5);
    let stats: BnStats<f64> = BnStats::new(3);
    check_grads(
        "batch_norm",
        &|| head(&batch_norm(&xb, &gamma, &beta, &stats, NormMode::Train, 0.1, 1e-5).unwrap()),
        &[
            ("x", xb.clone()),
            ("gamma", gamma.clone()),
            ("beta", beta.clone()),
        ],
        h,
        tol,
        30,
    );
}

pub fn loss_gradchecks(h: f64, tol: f64) {
    let mut r = rng(7);
    let n = 64;
    let gt = rand_vec(&mut r, n, 0.0, 1.0);
    let pred = rand_param(&mut r, &[n], 0.0, 1.0);
    let unknown: Vec<bool> = (0..n).map(|i| i % 3 != 0).collect();
    check_grads(
        "alpha_prediction_loss",
        &|| alpha_prediction_loss(&gt, &pred, &unknown, 1e-6).unwrap(),
        &[("pred", pred.clone())],
        h,
        tol,
        64,
    );
    check_grads(
        "background_enhancement_loss",
        &|| background_enhancement_loss(&gt, &pred, &unknown, 0.1, 1e-6).unwrap(),
        &[("pred", pred.clone())],
        h,
        tol,
        64,
    );
}

/// Both losses against brute-force pixel loops on random cases, including
/// background-region membership at theta = 0.1.
pub fn loss_brute_force_cases(cases: usize) {
    const EPS: f64 = 1e-6;
    const THETA: f64 = 0.1;
    let mut r = rng(8);
    for case in 0..cases {
        let n = 64;
        let gt = rand_vec(&mut r, n, 0.0, 1.0);
        let pred_data = rand_vec(&mut r, n, 0.0, 1.0);
        let mut unknown: Vec<bool> = (0..n).map(|_| r.gen_bool(0.5)).collect();
        unknown[r.gen_range(0..n)] = true;

        let mut la_ref = 0.0;
        let mut la_n = 0usize;
        let mut lbg_ref = 0.0;
        let mut lbg_n = 0usize;
        for i in 0..n {
            let d = pred_data[i] - gt[i];
            let c = (d * d + EPS * EPS).sqrt();
            if unknown[i] {
                la_ref += c;
                la_n += 1;
                if gt[i] < THETA {
                    lbg_ref += c;
                    lbg_n += 1;
                }
            }
        }
        la_ref /= la_n as f64;

        let pred = Tensor::param(vec![n], pred_data);
        let la = alpha_prediction_loss(&gt, &pred, &unknown, EPS).unwrap();
        assert!((la.item() - la_ref).abs() < 1e-9, "case {case}");
        let lbg = background_enhancement_loss(&gt, &pred, &unknown, THETA, EPS).unwrap();
        let lbg_expected = if lbg_n == 0 { 0.0 } else { lbg_ref / lbg_n as f64 };
        assert!((lbg.item() - lbg_expected).abs() < 1e-9, "case {case}");
    }
}

/// Exact prediction floors the alpha loss at the stability constant.
pub fn loss_floor_check() {
    let mut r = rng(9);
    let gt = rand_vec(&mut r, 32, 0.0, 1.0);
    let pred = Tensor::param(vec![32], gt.clone());
    let la = alpha_prediction_loss(&gt, &pred, &vec![true; 32], 1e-6).unwrap();
    assert!((la.item() - 1e-6).abs() < 1e-18);
}

pub fn rand_matte(r: &mut rand_chacha::ChaCha8Rng, h: usize, w: usize) -> AlphaMatte {
    let data: Vec<f32> = (0..h * w).map(|_| r.gen_range(0.0..1.0f32)).collect();
    AlphaMatte::from_data(h, w, data)
}

pub fn sad_mse_loop_cases(cases: usize) {
    let mut r = rng(50);
    for _ in 0..cases {
        let (h, w) = (7, 9);
        let gt = rand_matte(&mut r, h, w);
        let pred = rand_matte(&mut r, h, w);
        let unknown: Vec<bool> = (0..h * w).map(|_| r.gen_bool(0.6)).collect();
        let mut sad_ref = 0.0f64;
        let mut mse_ref = 0.0f64;
        let mut n = 0usize;
        for i in 0..h * w {
            if unknown[i] {
                let d = gt.data()[i] as f64 - pred.data()[i] as f64;
                sad_ref += d.abs();
                mse_ref += d * d;
                n += 1;
            }
        }
        assert_eq!(sad(&gt, &pred, &unknown).unwrap(), sad_ref / 1000.0);
        let m = mse(&gt, &pred, &unknown).unwrap();
        match n {
            0 => assert_eq!(m, None),
            _ => assert_eq!(m, Some(mse_ref / n as f64)),
        }
    }
}

/// Direct (non-separable) 2-D convolution oracle for the gradient metric,
/// with kernels built from the definition: outer products of a Gaussian and
/// its first derivative, truncated at radius ceil(3 sigma), the 2-D filter
/// L1-normalized.
pub fn gradient_magnitude_direct(m: &AlphaMatte, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let gauss = |t: f64| (-t * t / (2.0 * sigma * sigma)).exp();
    let n = (2 * radius + 1) as usize;
    let mut kx = vec![vec![0.0f64; n]; n]; // d/dx filter: rows y, cols x
    for yy in -radius..=radius {
        for xx in -radius..=radius {
            kx[(yy + radius) as usize][(xx + radius) as usize] =
                gauss(yy as f64) * (-(xx as f64)) * gauss(xx as f64);
        }
    }
    // L1-normalizing the 2-D filter (with the smoothing direction summing to
    // 1) reduces to dividing every tap by the filter's L1 norm
    let norm: f64 = kx.iter().flatten().map(|v| v.abs()).sum();
    let mirror = |mut i: isize, n: usize| -> usize {
        let n = n as isize;
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= n {
                i = 2 * n - 1 - i;
            } else {
                return i as usize;
            }
        }
    };
    let (h, w) = (m.height, m.width);
    let mut out = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let v = m.get(mirror(y as isize + dy, h), mirror(x as isize + dx, w)) as f64;
                    let tap = kx[(dy + radius) as usize][(dx + radius) as usize] / norm;
                    gx += tap * v;
                    // d/dy filter is the transpose
                    let tap_t = kx[(dx + radius) as usize][(dy + radius) as usize] / norm;
                    gy += tap_t * v;
                }
            }
            out[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

pub fn gradient_error_direct_cases(cases: usize) {
    let mut r = rng(51);
    for case in 0..cases {
        let (h, w) = (12, 14);
        let gt = rand_matte(&mut r, h, w);
        let pred = rand_matte(&mut r, h, w);
        let unknown: Vec<bool> = (0..h * w).map(|_| r.gen_bool(0.5)).collect();
        let lib = gradient_error(&gt, &pred, &unknown, GRADIENT_SIGMA).unwrap();
        let g1 = gradient_magnitude_direct(&gt, GRADIENT_SIGMA);
        let g2 = gradient_magnitude_direct(&pred, GRADIENT_SIGMA);
        let mut reference = 0.0;
        for i in 0..h * w {
            if unknown[i] {
                let d = g1[i] - g2[i];
                reference += d * d;
            }
        }
        reference /= 1000.0;
        assert!(
            (lib - reference).abs() < 1e-6,
            "case {case}: {lib} vs {reference}"
        );
    }
}

/// BFS flood-fill reference for the connectivity metric.
pub fn connectivity_reference(gt: &AlphaMatte, pred: &AlphaMatte, unknown: &[bool]) -> f64 {
    let (h, w) = (gt.height, gt.width);
    let mut li = vec![0.0f64; h * w];
    let mut level = CONNECTIVITY_STEP;
    while level < 1.0 - 1e-9 {
        let mask: Vec<bool> = (0..h * w)
            .map(|i| gt.data()[i] as f64 >= level && pred.data()[i] as f64 >= level)
            .collect();
        // enumerate 4-connected components by BFS, in row-major seed order
        let mut comp = vec![usize::MAX; h * w];
        let mut comp_sizes = Vec::new();
        for start in 0..h * w {
            if !mask[start] || comp[start] != usize::MAX {
                continue;
            }
            let id = comp_sizes.len();
            let mut queue = std::collections::VecDeque::from([start]);
            comp[start] = id;
            let mut size = 0usize;
            while let Some(i) = queue.pop_front() {
                size += 1;
                let (y, x) = (i / w, i % w);
                let mut push = |j: usize| {
                    if mask[j] && comp[j] == usize::MAX {
                        comp[j] = id;
                        queue.push_back(j);
                    }
                };
                if x > 0 {
                    push(i - 1);
                }
                if x + 1 < w {
                    push(i + 1);
                }
                if y > 0 {
                    push(i - w);
                }
                if y + 1 < h {
                    push(i + w);
                }
            }
            comp_sizes.push(size);
        }
        if !comp_sizes.is_empty() {
            // max size; ties go to the earliest-seeded component, i.e. the
            // one containing the smallest row-major index
            let best = comp_sizes
                .iter()
                .enumerate()
                .max_by(|(ia, sa), (ib, sb)| sa.cmp(sb).then(ib.cmp(ia)))
                .map(|(i, _)| i)
                .unwrap();
            for i in 0..h * w {
                if comp[i] == best {
                    li[i] = level;
                }
            }
        }
        level += CONNECTIVITY_STEP;
    }
    let phi = |alpha: f64, l: f64| {
        let d = alpha - l;
        if d >= CONNECTIVITY_TOLERANCE {
            1.0 - d
        } else {
            1.0
        }
    };
    let mut acc = 0.0;
    for i in 0..h * w {
        if unknown[i] {
            acc += (phi(gt.data()[i] as f64, li[i]) - phi(pred.data()[i] as f64, li[i])).abs();
        }
    }
    acc / 1000.0
}

pub fn connectivity_oracle_cases(cases: usize) {
    let mut r = rng(52);
    for case in 0..cases {
        let gt = rand_matte(&mut r, 8, 8);
        let pred = rand_matte(&mut r, 8, 8);
        let unknown: Vec<bool> = (0..64).map(|_| r.gen_bool(0.7)).collect();
        let lib = connectivity_error(&gt, &pred, &unknown, CONNECTIVITY_STEP, CONNECTIVITY_TOLERANCE)
            .unwrap();
        let reference = connectivity_reference(&gt, &pred, &unknown);
        assert!(
            (lib - reference).abs() < 1e-12,
            "case {case}: {lib} vs {reference}"
        );
    }
}

pub fn metrics_zero_on_identical() {
    let m = AlphaMatte::from_fn(9, 9, |y, x| ((y * 9 + x) % 11) as f32 / 10.0);
    let u = vec![true; 81];
    assert_eq!(sad(&m, &m, &u).unwrap(), 0.0);
    assert_eq!(mse(&m, &m, &u).unwrap(), Some(0.0));
    assert_eq!(gradient_error(&m, &m, &u, GRADIENT_SIGMA).unwrap(), 0.0);
    assert_eq!(
        connectivity_error(&m, &m, &u, CONNECTIVITY_STEP, CONNECTIVITY_TOLERANCE).unwrap(),
        0.0
    );
}
