//! On-disk outputs: binary PGM images, the stats CSV and scene documents.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use frustumocc::lift_splat::BevGrid;
use frustumocc::occupancy::OccupancyVolume;
use frustumocc::synth::{RigConfig, Scene, SceneConfig};
use serde::{Deserialize, Serialize};

use crate::pipeline::ForwardResult;

/// Binary graymap (`P5`, maxval 255), rows top to bottom.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel count must match the image size");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Per-cell feature norm scaled so the strongest cell is 255. World `+y`
/// points up in the image.
pub fn bev_heatmap(bev: &BevGrid<f32>) -> Vec<u8> {
    let norms = bev.cell_norms();
    let max = norms.iter().copied().fold(0.0, f64::max);
    let (rows, cols) = (bev.rows(), bev.cols());
    let mut pixels = Vec::with_capacity(rows * cols);
    for img_row in 0..rows {
        let row = rows - 1 - img_row;
        for col in 0..cols {
            let v = if max > 0.0 { (255.0 * norms[row * cols + col] / max).round() } else { 0.0 };
            pixels.push(v as u8);
        }
    }
    encode_pgm(cols, rows, &pixels)
}

/// Labels of the middle feature row: one image column per pixel, one image
/// row per depth bin (near bins on top); occupied points are white.
pub fn occupancy_midslice(labels: &OccupancyVolume<f32>) -> Vec<u8> {
    let shape = labels.shape();
    let row = shape.height / 2;
    let mut pixels = Vec::with_capacity(shape.width * shape.bins);
    for bin in 0..shape.bins {
        for col in 0..shape.width {
            pixels.push(if labels.get(row, col, bin) > 0.0 { 255 } else { 0 });
        }
    }
    encode_pgm(shape.width, shape.bins, &pixels)
}

pub const STATS_HEADER: &str =
    "in_range_points,dropped_points,bev_nonzero_cells,bev_mass,loss_depth,loss_exocc,loss_det_proxy,loss_total";

pub fn stats_csv(result: &ForwardResult) -> String {
    let l = &result.losses;
    let mass: f64 = result.bev.channel_sums().iter().sum();
    format!(
        "{STATS_HEADER}\n{},{},{},{},{},{},{},{}\n",
        result.stats.in_range,
        result.stats.dropped,
        result.bev.nonzero_cells(),
        mass,
        l.depth,
        l.exocc,
        l.det_proxy,
        l.total
    )
}

pub const SCENE_FORMAT: &str = "frustumocc-scene";
pub const SCENE_VERSION: u32 = 1;

/// Versioned scene file: generation inputs plus the resulting geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDocument {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub scene_config: SceneConfig,
    pub camera_config: RigConfig,
    pub scene: Scene,
}

impl SceneDocument {
    pub fn new(scene: Scene, scene_config: SceneConfig, camera_config: RigConfig) -> Self {
        Self { format: SCENE_FORMAT.into(), version: SCENE_VERSION, seed: scene.seed, scene_config, camera_config, scene }
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let doc: SceneDocument = serde_json::from_str(text)?;
        anyhow::ensure!(doc.format == SCENE_FORMAT, "not a scene document (format `{}`)", doc.format);
        anyhow::ensure!(doc.version == SCENE_VERSION, "unsupported scene document version {}", doc.version);
        Ok(doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use frustumocc::geom::VolumeShape;

    #[test]
    fn pgm_header() {
        let img = encode_pgm(3, 2, &[0, 1, 2, 3, 4, 5]);
        assert_eq!(&img[..11], b"P5\n3 2\n255\n");
        assert_eq!(&img[11..], &[0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn heatmap_flips_rows_and_scales() {
        let bev = BevGrid::from_values(1, 2, 2, vec![0.0f32, 1.0, 2.0, 4.0]).unwrap();
        let img = bev_heatmap(&bev);
        // Grid row 1 (larger y) is the top image row.
        assert_eq!(&img[img.len() - 4..], &[128, 255, 0, 64]);
        let zero = bev_heatmap(&BevGrid::<f32>::zeros(2, 2, 2));
        assert!(zero[zero.len() - 4..].iter().all(|&p| p == 0));
    }

    #[test]
    fn midslice_layout() {
        let shape = VolumeShape::new(3, 2, 2);
        let mut v = vec![0.0f32; shape.len()];
        v[shape.index(1, 1, 0)] = 1.0;
        let img = occupancy_midslice(&OccupancyVolume::labels(shape, v).unwrap());
        assert_eq!(&img[img.len() - 4..], &[0, 255, 0, 0]);
    }
}
