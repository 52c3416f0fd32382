//! Light-field directories: `class_name/sample_id/view_{r}_{c}.pgm`.
//!
//! Class labels follow the lexical order of class directory names; samples
//! within a class follow the lexical order of their directory names. The
//! `U x V` angular grid is flattened into channels in row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use super::pgm::{read_pgm, write_pgm};
use super::LabeledImage;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LightFieldSample {
    /// `[U*V, H, W]`, channel `r*V + c` holds view `(r, c)`.
    pub views: Tensor,
    pub label: usize,
    pub class_name: String,
    pub grid: (usize, usize),
}

impl LightFieldSample {
    pub fn into_labeled(self) -> LabeledImage {
        LabeledImage {
            pixels: self.views,
            label: self.label,
        }
    }
}

pub fn view_file_name(row: usize, col: usize) -> String {
    format!("view_{row}_{col}.pgm")
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Err(Error::NotFound(dir.to_path_buf()));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn dir_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn load_lightfield(directory: &Path, grid_u: usize, grid_v: usize) -> Result<Vec<LightFieldSample>> {
    if grid_u == 0 || grid_v == 0 {
        return Err(Error::Config(format!("light-field grid {grid_u}x{grid_v} must be positive")));
    }
    let mut samples = Vec::new();
    let mut extent: Option<(usize, usize)> = None;
    for (label, class_dir) in sorted_subdirs(directory)?.into_iter().enumerate() {
        let class_name = dir_name(&class_dir);
        for sample_dir in sorted_subdirs(&class_dir)? {
            let mut data = Vec::new();
            for r in 0..grid_u {
                for c in 0..grid_v {
                    let path = sample_dir.join(view_file_name(r, c));
                    if !path.is_file() {
                        return Err(Error::MissingView(path));
                    }
                    let img = read_pgm(&path)?;
                    let found = (img.height, img.width);
                    match extent {
                        None => extent = Some(found),
                        Some(expected) if expected != found => {
                            return Err(Error::InconsistentExtent { path, expected, found });
                        }
                        Some(_) => {}
                    }
                    data.extend(img.pixels);
                }
            }
            let (h, w) = extent.expect("at least one view read");
            samples.push(LightFieldSample {
                views: Tensor::new(vec![grid_u * grid_v, h, w], data)?,
                label,
                class_name: class_name.clone(),
                grid: (grid_u, grid_v),
            });
        }
    }
    Ok(samples)
}

/// Writes samples in the directory convention. Sample directories are
/// named by their zero-padded index within the class.
pub fn write_lightfield(directory: &Path, samples: &[LightFieldSample]) -> Result<()> {
    let mut per_class: std::collections::BTreeMap<&str, usize> = Default::default();
    for s in samples {
        let (u, v) = s.grid;
        let shape = s.views.shape();
        if shape.len() != 3 || shape[0] != u * v {
            return Err(Error::Config(format!("views {shape:?} do not match grid {u}x{v}")));
        }
        let idx = per_class.entry(&s.class_name).or_default();
        let dir = directory.join(&s.class_name).join(format!("{idx:04}"));
        *idx += 1;
        fs::create_dir_all(&dir)?;
        let (h, w) = (shape[1], shape[2]);
        for (ch, plane) in s.views.data().chunks(h * w).enumerate() {
            write_pgm(&dir.join(view_file_name(ch / v, ch % v)), h, w, plane)?;
        }
    }
    Ok(())
}
