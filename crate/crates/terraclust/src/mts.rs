//! Multivariate time series of tile embeddings and the distances used by
//! clustering.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::raster::{extract_tile, SceneSequence, TileGrid};

/// One tile sequence embedded as a `(T, d)` matrix: row `t` is the embedding
/// of the tile at timestamp `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mts {
    pub values: Array2<f64>,
    pub grid_index: usize,
}

/// Where a collection's vectors came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Geographic,
    Clustering,
    PixelBaseline,
}

/// The set `Z` of embedded sequences over the grid, uniform in `(T, d)`.
#[derive(Debug, Clone)]
pub struct MtsCollection {
    items: Vec<Mts>,
    pub provenance: Provenance,
}

impl MtsCollection {
    pub fn new(items: Vec<Mts>, provenance: Provenance) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyInput("collection needs m >= 1 items".into()));
        }
        let dim = items[0].values.raw_dim();
        for item in &items {
            if item.values.raw_dim() != dim {
                return Err(Error::ShapeMismatch(
                    "all MTS in a collection must share (T, d)".into(),
                ));
            }
            if !item.values.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidInput("MTS values must be finite".into()));
            }
        }
        Ok(MtsCollection { items, provenance })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn t_len(&self) -> usize {
        self.items[0].values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.items[0].values.ncols()
    }

    pub fn items(&self) -> &[Mts] {
        &self.items
    }

    pub fn item(&self, i: usize) -> &Mts {
        &self.items[i]
    }

    /// All items flattened row-major into an `(m, T*d)` matrix.
    pub fn flattened(&self) -> Array2<f64> {
        let (m, td) = (self.len(), self.t_len() * self.dim());
        let mut out = Array2::zeros((m, td));
        for (i, item) in self.items.iter().enumerate() {
            for (j, &v) in item.values.iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        out
    }
}

/// Distance between two MTS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// Euclidean distance on the flattened `(T*d)` vectors. The default:
    /// mean centroids are exactly optimal for it, so Lloyd's iterations are
    /// monotone.
    #[default]
    ConcatEuclidean,
    /// Sum over timestamps of per-step Euclidean norms.
    PerStepSum,
}

fn euclid(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Distance between two MTS of identical shape.
pub fn mts_distance(a: &Mts, b: &Mts, mode: DistanceMode) -> Result<f64> {
    if a.values.raw_dim() != b.values.raw_dim() {
        return Err(Error::ShapeMismatch(format!(
            "MTS shapes {:?} vs {:?}",
            a.values.shape(),
            b.values.shape()
        )));
    }
    Ok(match mode {
        DistanceMode::ConcatEuclidean => a
            .values
            .iter()
            .zip(b.values.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        DistanceMode::PerStepSum => (0..a.values.nrows())
            .map(|t| euclid(a.values.row(t), b.values.row(t)))
            .sum(),
    })
}

/// Embed every tile sequence of the grid with the encoder: item `i`, row
/// `t - 1` is the embedding of tile `(i, t)`.
pub fn embed_sequences(
    params: &EncoderParams,
    seq: &SceneSequence,
    grid: &TileGrid,
    provenance: Provenance,
) -> Result<MtsCollection> {
    let t_len = seq.t_len();
    let d = params.config().embedding_dim;
    let mut items = Vec::with_capacity(grid.num_cells());
    for i in 0..grid.num_cells() {
        let mut values = Array2::zeros((t_len, d));
        for t in 1..=t_len {
            let tile = extract_tile(seq, grid, i, t)?;
            let z = params.embed(&tile.values)?;
            values.row_mut(t - 1).assign(&z);
        }
        items.push(Mts {
            values,
            grid_index: i,
        });
    }
    MtsCollection::new(items, provenance)
}

/// JSON header accompanying the binary collection file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollectionHeader {
    pub m: usize,
    pub t_len: usize,
    pub dim: usize,
    pub provenance: Provenance,
    pub encoder_checkpoint_hash: Option<String>,
}

/// Save a collection as `<base>.bin` (little-endian float32, `(m, T, d)`
/// row-major) plus `<base>.json`.
pub fn save_collection(
    coll: &MtsCollection,
    base: &Path,
    encoder_checkpoint_hash: Option<String>,
) -> Result<()> {
    let mut bytes = Vec::with_capacity(coll.len() * coll.t_len() * coll.dim() * 4);
    for item in coll.items() {
        for &v in item.values.iter() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    crate::util::write_atomic(&base.with_extension("bin"), &bytes)?;
    let header = CollectionHeader {
        m: coll.len(),
        t_len: coll.t_len(),
        dim: coll.dim(),
        provenance: coll.provenance,
        encoder_checkpoint_hash,
    };
    let json_path = base.with_extension("json");
    let text = serde_json::to_string_pretty(&header).map_err(|e| Error::json(&json_path, e))?;
    crate::util::write_atomic(&json_path, text.as_bytes())
}

/// Load a collection written by [`save_collection`].
pub fn load_collection(base: &Path) -> Result<MtsCollection> {
    let json_path = base.with_extension("json");
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: CollectionHeader =
        serde_json::from_str(&text).map_err(|e| Error::json(&json_path, e))?;
    let bin_path = base.with_extension("bin");
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let expected = header.m * header.t_len * header.dim * 4;
    if bytes.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "{} holds {} bytes, header implies {}",
            bin_path.display(),
            bytes.len(),
            expected
        )));
    }
    let mut floats = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
    let mut items = Vec::with_capacity(header.m);
    for i in 0..header.m {
        let mut values = Array2::zeros((header.t_len, header.dim));
        for t in 0..header.t_len {
            for j in 0..header.dim {
                values[[t, j]] = floats.next().unwrap();
            }
        }
        items.push(Mts {
            values,
            grid_index: i,
        });
    }
    MtsCollection::new(items, header.provenance)
}
