//! Raster data model: scene images, temporal sequences, the tile grid, and
//! the synthetic ground-truth scene generator used for verification.
//!
//! Pixel values are reflectances normalized to `[0, 1]`, stored channel-major
//! as `(channel, row, col)`.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use ndarray::{s, Array3};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mts::{Mts, MtsCollection, Provenance};

/// One raster image of the observed region at a single timestamp.
#[derive(Debug, Clone)]
pub struct SceneImage {
    /// Timestamp index `t`, 1-based.
    pub timestamp_index: usize,
    /// Values as `(channel, row, col)`, each in `[0, 1]`.
    pub values: Array3<f64>,
}

impl SceneImage {
    pub fn new(timestamp_index: usize, values: Array3<f64>) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::InvalidSpec(
                "image values must be finite and in [0, 1]".into(),
            ));
        }
        Ok(SceneImage {
            timestamp_index,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Ordered temporal sequence of co-registered scene images.
#[derive(Debug, Clone)]
pub struct SceneSequence {
    images: Vec<SceneImage>,
}

impl SceneSequence {
    pub fn new(images: Vec<SceneImage>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyInput("scene sequence needs T >= 1 images".into()));
        }
        let shape = images[0].values.raw_dim();
        for img in &images {
            if img.values.raw_dim() != shape {
                return Err(Error::ShapeMismatch(
                    "all images in a sequence must share (width, height, channels)".into(),
                ));
            }
        }
        if !images
            .windows(2)
            .all(|w| w[0].timestamp_index < w[1].timestamp_index)
        {
            return Err(Error::InvalidSpec(
                "timestamps must be strictly increasing".into(),
            ));
        }
        Ok(SceneSequence { images })
    }

    pub fn t_len(&self) -> usize {
        self.images.len()
    }

    pub fn channels(&self) -> usize {
        self.images[0].channels()
    }

    pub fn height(&self) -> usize {
        self.images[0].height()
    }

    pub fn width(&self) -> usize {
        self.images[0].width()
    }

    /// Image at position `t` (1-based).
    pub fn image(&self, t: usize) -> Result<&SceneImage> {
        if t == 0 || t > self.images.len() {
            return Err(Error::IndexOutOfRange(format!(
                "timestamp {t} outside 1..={}",
                self.images.len()
            )));
        }
        Ok(&self.images[t - 1])
    }

    pub fn images(&self) -> &[SceneImage] {
        &self.images
    }
}

/// Non-overlapping decomposition of an image into square `s x s` cells.
/// Residual border pixels that do not fill a complete tile are excluded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    pub tile_size: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TileGrid {
    /// Number of tile slots `m = rows * cols`.
    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Top-left pixel `(row, col)` of grid cell `i` (row-major).
    pub fn cell_origin(&self, i: usize) -> Result<(usize, usize)> {
        if i >= self.num_cells() {
            return Err(Error::IndexOutOfRange(format!(
                "grid index {i} outside 0..{}",
                self.num_cells()
            )));
        }
        let row = i / self.cols;
        let col = i % self.cols;
        Ok((row * self.tile_size, col * self.tile_size))
    }

    /// Center of grid cell `i` in pixel coordinates `(x, y)`.
    pub fn cell_center(&self, i: usize) -> Result<(f64, f64)> {
        let (r, c) = self.cell_origin(i)?;
        let half = self.tile_size as f64 / 2.0;
        Ok((c as f64 + half, r as f64 + half))
    }
}

/// A single `s x s` tile cut from one image.
#[derive(Debug, Clone)]
pub struct Tile {
    /// Values as `(channel, s, s)`.
    pub values: Array3<f64>,
    pub grid_index: usize,
    pub timestamp_index: usize,
}

/// Decompose image dimensions `(width, height)` into a grid of square tiles.
pub fn decompose_grid(width: usize, height: usize, tile_size: usize) -> Result<TileGrid> {
    if tile_size == 0 {
        return Err(Error::InvalidGeometry("tile size must be >= 1".into()));
    }
    if width < tile_size || height < tile_size {
        return Err(Error::InvalidGeometry(format!(
            "image {width}x{height} smaller than tile size {tile_size}"
        )));
    }
    Ok(TileGrid {
        tile_size,
        rows: height / tile_size,
        cols: width / tile_size,
    })
}

/// Extract the tile at grid cell `i` of image `X^t` (1-based `t`).
pub fn extract_tile(seq: &SceneSequence, grid: &TileGrid, i: usize, t: usize) -> Result<Tile> {
    let img = seq.image(t)?;
    let (row, col) = grid.cell_origin(i)?;
    let s = grid.tile_size;
    if row + s > img.height() || col + s > img.width() {
        return Err(Error::InvalidGeometry(
            "grid cell extends past image bounds".into(),
        ));
    }
    let values = img
        .values
        .slice(s![.., row..row + s, col..col + s])
        .to_owned();
    Ok(Tile {
        values,
        grid_index: i,
        timestamp_index: t,
    })
}

/// Extract a pixel-anchored `s x s` patch with top-left corner `(x, y)`.
/// Used by the geographic triplet sampler, where patches may overlap grid
/// cell boundaries.
pub fn extract_patch(seq: &SceneSequence, x: usize, y: usize, size: usize, t: usize) -> Result<Array3<f64>> {
    let img = seq.image(t)?;
    if y + size > img.height() || x + size > img.width() {
        return Err(Error::IndexOutOfRange(format!(
            "patch at ({x}, {y}) size {size} outside {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(img.values.slice(s![.., y..y + size, x..x + size]).to_owned())
}

/// The full temporal stack of tiles at grid cell `i`.
pub fn tile_sequence(seq: &SceneSequence, grid: &TileGrid, i: usize) -> Result<Vec<Tile>> {
    (1..=seq.t_len())
        .map(|t| extract_tile(seq, grid, i, t))
        .collect()
}

/// One zone of a synthetic scene: a base color modulated by a seasonal
/// sinusoid, plus clamped i.i.d. Gaussian pixel noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZoneSpec {
    /// Base RGB (or per-channel) color, each in [0, 1].
    pub base_color: Vec<f64>,
    /// Phase of the seasonal sinusoid, radians.
    pub seasonal_phase: f64,
    /// Amplitude of the seasonal brightness shift.
    #[serde(default = "default_seasonal_amplitude")]
    pub seasonal_amplitude: f64,
    /// Standard deviation of the per-pixel Gaussian noise.
    pub noise_amplitude: f64,
}

fn default_seasonal_amplitude() -> f64 {
    0.15
}

impl ZoneSpec {
    /// Noise-free color of channel `c` at timestamp `t` (1-based) of `t_len`.
    pub fn color_at(&self, c: usize, t: usize, t_len: usize) -> f64 {
        let season = TAU * (t - 1) as f64 / t_len as f64 + self.seasonal_phase;
        (self.base_color[c] + self.seasonal_amplitude * season.sin()).clamp(0.0, 1.0)
    }
}

/// Ground-truth description of a planted-zone scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub zones: Vec<ZoneSpec>,
    /// Zone label per grid cell, row-major, length `grid_rows * grid_cols`.
    pub layout: Vec<usize>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub tile_size: usize,
    /// Sequence length T.
    pub t_len: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
}

fn default_channels() -> usize {
    3
}

impl SyntheticSceneSpec {
    pub fn width(&self) -> usize {
        self.grid_cols * self.tile_size
    }

    pub fn height(&self) -> usize {
        self.grid_rows * self.tile_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.zones.is_empty() {
            return Err(Error::InvalidSpec("zone count must be >= 1".into()));
        }
        if self.layout.len() != self.grid_rows * self.grid_cols {
            return Err(Error::InvalidSpec(format!(
                "layout length {} != grid cells {}",
                self.layout.len(),
                self.grid_rows * self.grid_cols
            )));
        }
        if let Some(&bad) = self.layout.iter().find(|&&z| z >= self.zones.len()) {
            return Err(Error::InvalidSpec(format!(
                "layout references zone {bad} but only {} zones exist",
                self.zones.len()
            )));
        }
        for (k, zone) in self.zones.iter().enumerate() {
            if zone.base_color.len() != self.channels {
                return Err(Error::InvalidSpec(format!(
                    "zone {k} has {} channels, expected {}",
                    zone.base_color.len(),
                    self.channels
                )));
            }
            if zone.noise_amplitude < 0.0 {
                return Err(Error::InvalidSpec("noise amplitude must be >= 0".into()));
            }
            if !zone.base_color.iter().all(|v| (0.0..=1.0).contains(v)) {
                return Err(Error::InvalidSpec("base colors must be in [0, 1]".into()));
            }
        }
        if self.t_len == 0 || self.tile_size == 0 || self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::InvalidSpec("dimensions must be >= 1".into()));
        }
        Ok(())
    }

    /// A 2x2-quadrant layout commonly used in tests: four zones on a
    /// `rows x cols` grid.
    pub fn quadrant_layout(rows: usize, cols: usize) -> Vec<usize> {
        let mut layout = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let top = r < rows / 2;
                let left = c < cols / 2;
                layout.push(match (top, left) {
                    (true, true) => 0,
                    (true, false) => 1,
                    (false, true) => 2,
                    (false, false) => 3,
                });
            }
        }
        layout
    }
}

/// Planted zone id per grid cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthLabels {
    pub labels: Vec<usize>,
}

/// Generate a synthetic scene and its planted labels. Deterministic given
/// `(spec, seed)`.
pub fn generate_synthetic_scene(
    spec: &SyntheticSceneSpec,
    seed: u64,
) -> Result<(SceneSequence, GroundTruthLabels)> {
    spec.validate()?;
    let mut rng = crate::util::stream_rng(seed, 0);
    let (h, w, ch, s) = (spec.height(), spec.width(), spec.channels, spec.tile_size);
    let standard = Normal::new(0.0, 1.0).expect("unit normal");
    let mut images = Vec::with_capacity(spec.t_len);
    for t in 1..=spec.t_len {
        let mut values = Array3::zeros((ch, h, w));
        for (cell, &zone_id) in spec.layout.iter().enumerate() {
            let zone = &spec.zones[zone_id];
            let row0 = (cell / spec.grid_cols) * s;
            let col0 = (cell % spec.grid_cols) * s;
            for c in 0..ch {
                let base = zone.color_at(c, t, spec.t_len);
                for r in row0..row0 + s {
                    for col in col0..col0 + s {
                        let noise: f64 = standard.sample(&mut rng) * zone.noise_amplitude;
                        values[[c, r, col]] = (base + noise).clamp(0.0, 1.0);
                    }
                }
            }
        }
        images.push(SceneImage::new(t, values)?);
    }
    Ok((
        SceneSequence::new(images)?,
        GroundTruthLabels {
            labels: spec.layout.clone(),
        },
    ))
}

/// Pixel-mean baseline features: for each grid cell and timestamp, the
/// per-channel mean over the tile's pixels. Yields an `MtsCollection`
/// with `d = channels`.
pub fn mean_rgb_features(seq: &SceneSequence, tile_size: usize) -> Result<MtsCollection> {
    let grid = decompose_grid(seq.width(), seq.height(), tile_size)?;
    let t_len = seq.t_len();
    let d = seq.channels();
    let mut items = Vec::with_capacity(grid.num_cells());
    for i in 0..grid.num_cells() {
        let mut values = ndarray::Array2::zeros((t_len, d));
        for t in 1..=t_len {
            let tile = extract_tile(seq, &grid, i, t)?;
            for c in 0..d {
                values[[t - 1, c]] = tile.values.index_axis(ndarray::Axis(0), c).mean().unwrap();
            }
        }
        items.push(Mts {
            values,
            grid_index: i,
        });
    }
    MtsCollection::new(items, Provenance::PixelBaseline)
}

// ---------------------------------------------------------------------------
// Scene I/O
// ---------------------------------------------------------------------------

/// Per-image entry in a scene manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub timestamp: usize,
}

/// Manifest describing a scene directory, ordered by timestamp.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneManifest {
    pub images: Vec<ManifestEntry>,
}

/// Sidecar header for the raw float32 container.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawSidecar {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub timestamp: usize,
}

/// Load a scene from a directory holding `manifest.json` plus per-timestamp
/// images. Each image is either an 8-bit RGB PNG or a raw little-endian
/// float32 array (channel-major) with a `.json` sidecar.
pub fn load_scene_dir(dir: &Path) -> Result<SceneSequence> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: SceneManifest =
        serde_json::from_str(&text).map_err(|e| Error::json(&manifest_path, e))?;
    let mut images = Vec::with_capacity(manifest.images.len());
    for entry in &manifest.images {
        let path = dir.join(&entry.file);
        let values = if entry.file.ends_with(".png") {
            let img = image::open(&path)?.to_rgb8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            let mut arr = Array3::zeros((3, h, w));
            for (x, y, px) in img.enumerate_pixels() {
                for c in 0..3 {
                    arr[[c, y as usize, x as usize]] = px.0[c] as f64 / 255.0;
                }
            }
            arr
        } else {
            let sidecar_path = path.with_extension("json");
            let sidecar_text =
                fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
            let sidecar: RawSidecar =
                serde_json::from_str(&sidecar_text).map_err(|e| Error::json(&sidecar_path, e))?;
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let expected = sidecar.channels * sidecar.height * sidecar.width * 4;
            if bytes.len() != expected {
                return Err(Error::ShapeMismatch(format!(
                    "{} holds {} bytes, sidecar implies {}",
                    path.display(),
                    bytes.len(),
                    expected
                )));
            }
            let floats: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            Array3::from_shape_vec((sidecar.channels, sidecar.height, sidecar.width), floats)
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?
        };
        images.push(SceneImage::new(entry.timestamp, values)?);
    }
    SceneSequence::new(images)
}

/// Persist a scene as raw float32 containers plus a manifest.
pub fn save_scene_dir(seq: &SceneSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for img in seq.images() {
        let stem = format!("t{:04}", img.timestamp_index);
        let raw_path = dir.join(format!("{stem}.raw"));
        let mut bytes = Vec::with_capacity(img.values.len() * 4);
        for &v in img.values.iter() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        crate::util::write_atomic(&raw_path, &bytes)?;
        let sidecar = RawSidecar {
            width: img.width(),
            height: img.height(),
            channels: img.channels(),
            timestamp: img.timestamp_index,
        };
        let sidecar_path = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::json(&sidecar_path, e))?;
        crate::util::write_atomic(&sidecar_path, text.as_bytes())?;
        entries.push(ManifestEntry {
            file: format!("{stem}.raw"),
            timestamp: img.timestamp_index,
        });
    }
    let manifest = SceneManifest { images: entries };
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&manifest_path, e))?;
    crate::util::write_atomic(&manifest_path, text.as_bytes())
}
