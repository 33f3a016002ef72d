//! Inference: checkpoint + image + trimap in, 8-bit matte out. The
//! user-provided trimap feeds both paths.

use std::path::Path;

use crate::engine::ops::NormMode;
use crate::error::{MatteError, Result};
use crate::imaging::{load_image, save_alpha_png};
use crate::model::{
    crop_matte, matte_from_prediction, pad_image_to_stride, pad_trimap_to_stride, predict_matte,
    MattingModel,
};
use crate::trimap::{load_trimap_png, TrimapPair};

pub fn infer(checkpoint: &Path, image_path: &Path, trimap_path: &Path, out_path: &Path) -> Result<()> {
    let (model, _opt) = MattingModel::<f32>::load_checkpoint(checkpoint)?;
    infer_with_model(&model, image_path, trimap_path, out_path)
}

pub(crate) fn infer_with_model(
    model: &MattingModel<f32>,
    image_path: &Path,
    trimap_path: &Path,
    out_path: &Path,
) -> Result<()> {
    let image = load_image(image_path)?;
    let trimap = load_trimap_png(trimap_path)?;
    if image.height != trimap.height || image.width != trimap.width {
        return Err(MatteError::Data(format!(
            "image {}x{} and trimap {}x{} sizes differ",
            image.height, image.width, trimap.height, trimap.width
        )));
    }
    let (padded, info) = pad_image_to_stride(&image);
    let padded_trimap = pad_trimap_to_stride(&trimap);
    let pair = TrimapPair {
        sp: padded_trimap.clone(),
        tcp: padded_trimap,
    };
    let trace = model.forward_single(&padded, &pair, NormMode::Eval)?;
    let pred = crop_matte(&matte_from_prediction(&trace.alpha_pred, 0), info);
    let matte = predict_matte(&pred, &trimap);
    save_alpha_png(out_path, &matte)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{load_alpha, save_image_png, Image};
    use crate::model::ModelConfig;
    use crate::trimap::{save_trimap_png, Label, Trimap};

    fn setup(dir: &Path, h: usize, w: usize, label: impl Fn(usize, usize) -> Label) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
        let cfg = ModelConfig {
            base_width: 2,
            tcp_width: 2,
            ..Default::default()
        };
        let model: MattingModel<f32> = MattingModel::new(cfg, 11).unwrap();
        let ckpt = dir.join("m.mfck");
        model.save_checkpoint(&ckpt, &[]).unwrap();
        let img = Image::from_fn(h, w, |y, x, c| ((y * 3 + x + c) % 11) as f32 / 11.0);
        let img_path = dir.join("img.png");
        save_image_png(&img_path, &img).unwrap();
        let tm = Trimap::from_fn(h, w, label);
        let tm_path = dir.join("tm.png");
        save_trimap_png(&tm_path, &tm).unwrap();
        (ckpt, img_path, tm_path)
    }

    #[test]
    fn all_foreground_trimap_gives_all_white() {
        let dir = tempfile::tempdir().unwrap();
        let (ckpt, img, tm) = setup(dir.path(), 40, 40, |_, _| Label::Foreground);
        let out = dir.path().join("matte.png");
        infer(&ckpt, &img, &tm, &out).unwrap();
        let m = load_alpha(&out).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn output_matches_odd_input_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let (ckpt, img, tm) = setup(dir.path(), 65, 97, |y, _| {
            if y < 20 {
                Label::Foreground
            } else if y < 40 {
                Label::Unknown
            } else {
                Label::Background
            }
        });
        let out = dir.path().join("matte.png");
        infer(&ckpt, &img, &tm, &out).unwrap();
        let m = load_alpha(&out).unwrap();
        assert_eq!((m.height, m.width), (65, 97));
    }

    #[test]
    fn infer_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (ckpt, img, tm) = setup(dir.path(), 48, 48, |y, x| {
            if (y + x) % 3 == 0 {
                Label::Unknown
            } else {
                Label::Background
            }
        });
        let out1 = dir.path().join("a.png");
        let out2 = dir.path().join("b.png");
        infer(&ckpt, &img, &tm, &out1).unwrap();
        infer(&ckpt, &img, &tm, &out2).unwrap();
        assert_eq!(std::fs::read(out1).unwrap(), std::fs::read(out2).unwrap());
    }

    #[test]
    fn size_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ckpt, img, _) = setup(dir.path(), 40, 40, |_, _| Label::Unknown);
        let other = Trimap::from_fn(30, 30, |_, _| Label::Unknown);
        let tm2 = dir.path().join("tm2.png");
        save_trimap_png(&tm2, &other).unwrap();
        assert!(infer(&ckpt, &img, &tm2, &dir.path().join("o.png")).is_err());
    }
}
