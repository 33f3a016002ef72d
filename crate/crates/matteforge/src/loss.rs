//! Alpha-prediction loss, Background Enhancement Loss, and their weighted
//! combination. Both losses are smoothed-L1 style averages over the unknown
//! region; pixels outside the mask never influence the value or gradient.

use serde::{Deserialize, Serialize};

use crate::engine::{BackwardFn, Tensor};
use crate::error::{MatteError, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Stability constant that keeps the square root differentiable at 0.
    pub eps: f64,
    /// Ground-truth threshold below which an unknown pixel counts as pure
    /// background.
    pub theta: f64,
    pub w1: f64,
    pub w2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            eps: 1e-6,
            theta: 0.1,
            w1: 0.9,
            w2: 0.1,
        }
    }
}

struct MaskedCharbonnierBackward<S: Scalar> {
    gt: Vec<S>,
    mask: Vec<bool>,
    count: usize,
    eps: S,
}

impl<S: Scalar> BackwardFn<S> for MaskedCharbonnierBackward<S> {
    fn backward(&self, grad_out: &[S], _out: &[S], parents: &[Tensor<S>]) {
        let pred = &parents[0];
        let g = grad_out[0];
        let n = S::from_usize_lossy(self.count);
        let pd = pred.data();
        let mut dpred = vec![S::zero(); pd.len()];
        for i in 0..pd.len() {
            if self.mask[i] {
                let d = pd[i] - self.gt[i];
                dpred[i] = g * d / ((d * d + self.eps * self.eps).sqrt() * n);
            }
        }
        drop(pd);
        pred.accumulate_grad(&dpred);
    }
}

fn masked_charbonnier<S: Scalar>(
    gt: &[S],
    pred: &Tensor<S>,
    mask: &[bool],
    eps: S,
) -> Tensor<S> {
    let count = mask.iter().filter(|&&m| m).count();
    debug_assert!(count >= 1);
    let pd = pred.data();
    let mut acc = S::zero();
    for i in 0..pd.len() {
        if mask[i] {
            let d = pd[i] - gt[i];
            acc += (d * d + eps * eps).sqrt();
        }
    }
    drop(pd);
    let value = acc / S::from_usize_lossy(count);
    Tensor::from_op(
        vec![1],
        vec![value],
        vec![pred.clone()],
        Box::new(MaskedCharbonnierBackward {
            gt: gt.to_vec(),
            mask: mask.to_vec(),
            count,
            eps,
        }),
    )
}

fn check_shapes<S: Scalar>(gt: &[S], pred: &Tensor<S>, mask: &[bool], context: &str) -> Result<()> {
    if gt.len() != pred.numel() || mask.len() != pred.numel() {
        return Err(MatteError::shape(
            context,
            &[gt.len(), mask.len()],
            pred.shape(),
        ));
    }
    Ok(())
}

/// Mean Charbonnier distance between ground truth and prediction over the
/// unknown region. Errors on an empty region: a training crop must contain
/// unknown pixels.
pub fn alpha_prediction_loss<S: Scalar>(
    gt: &[S],
    pred: &Tensor<S>,
    unknown: &[bool],
    eps: S,
) -> Result<Tensor<S>> {
    check_shapes(gt, pred, unknown, "alpha_prediction_loss")?;
    if !unknown.iter().any(|&m| m) {
        return Err(MatteError::Data(
            "alpha_prediction_loss: empty unknown region".into(),
        ));
    }
    Ok(masked_charbonnier(gt, pred, unknown, eps))
}

/// Same distance restricted to unknown pixels whose ground truth is below
/// `theta` (strict). An empty background region yields a constant zero with
/// no gradient.
pub fn background_enhancement_loss<S: Scalar>(
    gt: &[S],
    pred: &Tensor<S>,
    unknown: &[bool],
    theta: S,
    eps: S,
) -> Result<Tensor<S>> {
    check_shapes(gt, pred, unknown, "background_enhancement_loss")?;
    let mask: Vec<bool> = gt
        .iter()
        .zip(unknown)
        .map(|(&a, &u)| u && a < theta)
        .collect();
    if !mask.iter().any(|&m| m) {
        return Ok(Tensor::constant(vec![1], vec![S::zero()]));
    }
    Ok(masked_charbonnier(gt, pred, &mask, eps))
}

/// L = w1 * L_a + w2 * L_bg.
pub fn total_loss<S: Scalar>(la: &Tensor<S>, lbg: &Tensor<S>, w1: S, w2: S) -> Tensor<S> {
    use crate::engine::ops::{add, scale_const};
    add(&scale_const(la, w1), &scale_const(lbg, w2)).expect("scalar losses")
}
