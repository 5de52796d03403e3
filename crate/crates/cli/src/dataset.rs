//! On-disk layout of a generated dataset.
//!
//! ```text
//! DIR/dataset.cfg
//! DIR/{train,test}/index.txt
//! DIR/{train,test}/NNNN_{shading,semantic,normals,mask,depth}.dnfr
//! ```
//!
//! `index.txt` starts with a `#` header naming the columns, then one
//! tab-separated line of file names per scene.

use crate::error::{CliError, CliResult};
use dnorm_core::io::{read_float_raster, write_float_raster, FloatRaster};
use dnorm_core::toygen::SceneSample;
use dnorm_core::{LatentField, NormalMap};
use std::path::{Path, PathBuf};

pub const KINDS: [&str; 5] = ["shading", "semantic", "normals", "mask", "depth"];
const HEADER: &str = "# id\tshading\tsemantic\tnormals\tmask\tdepth";

pub fn write_split(dir: &Path, scenes: &[SceneSample]) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut index = String::from(HEADER);
    index.push('\n');
    for (i, s) in scenes.iter().enumerate() {
        let (h, w) = (s.normals.height(), s.normals.width());
        let rasters = [
            FloatRaster::from_latent(&s.shading),
            FloatRaster::from_latent(&s.semantic),
            FloatRaster::from_latent(&s.normals.to_latent()),
            FloatRaster::from_mask(h, w, s.normals.mask())?,
            FloatRaster::from_latent(&s.heightfield.height_map()),
        ];
        let mut row = format!("{i:04}");
        for (kind, r) in KINDS.iter().zip(&rasters) {
            let name = format!("{i:04}_{kind}.dnfr");
            write_raster(&dir.join(&name), r)?;
            row.push('\t');
            row.push_str(&name);
        }
        index.push_str(&row);
        index.push('\n');
    }
    let path = dir.join("index.txt");
    std::fs::write(&path, index).map_err(|e| CliError::io(&path, e))
}

/// One scene as read back from disk.
pub struct StoredScene {
    pub shading: LatentField,
    pub semantic: LatentField,
    pub normals: NormalMap,
}

pub fn read_split(dir: &Path) -> CliResult<Vec<StoredScene>> {
    let path = dir.join("index.txt");
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let mut scenes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != KINDS.len() + 1 {
            return Err(CliError::Io(format!("{}:{}: expected {} columns", path.display(), lineno + 1, KINDS.len() + 1)));
        }
        let file = |k: usize| dir.join(cols[k + 1]);
        let mask = read_raster(&file(3))?.to_mask()?;
        scenes.push(StoredScene {
            shading: read_raster(&file(0))?.to_latent()?,
            semantic: read_raster(&file(1))?.to_latent()?,
            normals: NormalMap::from_latent(&read_raster(&file(2))?.to_latent()?, Some(&mask))?,
        });
    }
    if scenes.is_empty() {
        return Err(CliError::Io(format!("{} lists no scenes", path.display())));
    }
    Ok(scenes)
}

pub fn read_raster(path: &Path) -> CliResult<FloatRaster> {
    read_float_raster(path).map_err(|e| CliError::io(path, e))
}

pub fn write_raster(path: &Path, raster: &FloatRaster) -> CliResult<()> {
    write_float_raster(path, raster).map_err(|e| CliError::io(path, e))
}

/// Normal map from a 3-channel raster; zero vectors and pixels off the
/// optional mask are invalid.
pub fn read_normals(path: &Path, mask: Option<&Path>) -> CliResult<NormalMap> {
    let field = read_raster(path)?.to_latent()?;
    let mask = mask.map(read_mask).transpose()?;
    if let Some(m) = &mask {
        if m.len() != field.pixel_count() {
            return Err(CliError::usage(format!("mask has {} pixels, normals have {}", m.len(), field.pixel_count())));
        }
    }
    Ok(NormalMap::from_latent(&field, mask.as_deref())?)
}

pub fn read_mask(path: &Path) -> CliResult<Vec<bool>> {
    Ok(read_raster(path)?.to_mask()?)
}

pub fn write_normals(path: &Path, n: &NormalMap) -> CliResult<()> {
    write_raster(path, &FloatRaster::from_latent(&n.to_latent()))
}

/// Sidecar next to a checkpoint holding the settings it was trained with.
pub fn sidecar(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}
