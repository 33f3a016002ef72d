//! Directory scanning and stem-matched loading shared by the subcommands.

use std::path::{Path, PathBuf};

use crate::error::{MatteError, Result};
use crate::imaging::{load_alpha, load_image, AlphaMatte, Image};

/// All PNG files in a directory, sorted by filename stem.
pub(crate) fn list_pngs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| MatteError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| MatteError::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| MatteError::Data(format!("{}: bad filename", path.display())))?
            .to_string();
        out.push((stem, path));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

pub(crate) fn load_images_dir(dir: &Path) -> Result<Vec<(String, Image)>> {
    list_pngs(dir)?
        .into_iter()
        .map(|(stem, path)| Ok((stem, load_image(&path)?)))
        .collect()
}

pub(crate) fn load_alphas_dir(dir: &Path) -> Result<Vec<(String, AlphaMatte)>> {
    list_pngs(dir)?
        .into_iter()
        .map(|(stem, path)| Ok((stem, load_alpha(&path)?)))
        .collect()
}

/// Pairs foregrounds with alphas by filename stem; any stem present on only
/// one side is an error.
pub(crate) fn match_fg_alpha(
    fgs: Vec<(String, Image)>,
    alphas: Vec<(String, AlphaMatte)>,
) -> Result<Vec<(String, Image, AlphaMatte)>> {
    let fg_stems: Vec<&String> = fgs.iter().map(|(s, _)| s).collect();
    let a_stems: Vec<&String> = alphas.iter().map(|(s, _)| s).collect();
    if fg_stems != a_stems {
        let only_fg: Vec<_> = fg_stems.iter().filter(|s| !a_stems.contains(s)).collect();
        let only_a: Vec<_> = a_stems.iter().filter(|s| !fg_stems.contains(s)).collect();
        return Err(MatteError::Data(format!(
            "foreground/alpha stems do not match (fg only: {only_fg:?}, alpha only: {only_a:?})"
        )));
    }
    fgs.into_iter()
        .zip(alphas)
        .map(|((stem, fg), (_, alpha))| {
            if fg.height != alpha.height || fg.width != alpha.width {
                return Err(MatteError::Data(format!(
                    "{stem}: foreground {}x{} and alpha {}x{} sizes differ",
                    fg.height, fg.width, alpha.height, alpha.width
                )));
            }
            Ok((stem, fg, alpha))
        })
        .collect()
}
