use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const MASK_SUFFIX: &str = "_segmentation";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub image_path: PathBuf,
    pub mask_path: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetCatalog {
    pub samples: Vec<Sample>,
    /// Non-fatal diagnostics, e.g. mask files without a matching image.
    pub warnings: Vec<String>,
}

impl DatasetCatalog {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }

    pub fn with_masks(&self) -> DatasetCatalog {
        DatasetCatalog {
            samples: self.samples.iter().filter(|s| s.mask_path.is_some()).cloned().collect(),
            warnings: self.warnings.clone(),
        }
    }
}

fn is_raster(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png"))
        .unwrap_or(false)
}

fn list_rasters(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && is_raster(&path) {
            out.push(path);
        }
    }
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Pairs images with `<id>_segmentation` masks.
///
/// Accepts either the split layout (`root/images`, `root/masks`) or a flat
/// directory holding both. Samples come back sorted by id.
pub fn scan_catalog(root: impl AsRef<Path>) -> Result<DatasetCatalog> {
    let root = root.as_ref();
    let images_dir = root.join("images");
    let (image_files, mask_files) = if images_dir.is_dir() {
        let masks_dir = root.join("masks");
        let masks = if masks_dir.is_dir() { list_rasters(&masks_dir)? } else { Vec::new() };
        (list_rasters(&images_dir)?, masks)
    } else {
        let all = list_rasters(root)?;
        all.into_iter().partition(|p| !stem(p).ends_with(MASK_SUFFIX))
    };

    let mut images: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut warnings = Vec::new();
    for p in image_files {
        let id = stem(&p);
        if let Some(prev) = images.insert(id.clone(), p.clone()) {
            // Keep the lexicographically smaller path so the result is stable.
            let keep = prev.clone().min(p.clone());
            warnings.push(format!(
                "duplicate image id {id}: {} and {}, using {}",
                prev.display(),
                p.display(),
                keep.display()
            ));
            images.insert(id, keep);
        }
    }

    let mut masks: BTreeMap<String, PathBuf> = BTreeMap::new();
    for p in mask_files {
        let s = stem(&p);
        match s.strip_suffix(MASK_SUFFIX) {
            Some(id) if images.contains_key(id) => {
                masks.insert(id.to_string(), p);
            }
            _ => warnings.push(format!("unpaired mask file {}", p.display())),
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let samples = images
        .into_iter()
        .map(|(id, image_path)| {
            let mask_path = masks.remove(&id);
            Sample { id, image_path, mask_path }
        })
        .collect();
    Ok(DatasetCatalog { samples, warnings })
}
