//! Training-set generation: geographic-neighborhood triplets and
//! clustering-neighborhood triplets, both under the same-timestamp
//! constraint.

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::encoder::{TripletSource, TripletTiles};
use crate::error::{Error, Result};
use crate::kmeans::{Centroids, Partition};
use crate::mts::{mts_distance, DistanceMode};
use crate::raster::{extract_patch, extract_tile, SceneSequence, TileGrid};
use crate::util::stream_rng;

/// Location of one tile within a triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TileLoc {
    /// Pixel-anchored patch with top-left corner `(x, y)`; geographic mode.
    Pixel { x: usize, y: usize },
    /// Grid cell index; clustering mode.
    Cell(usize),
}

/// An (anchor, neighbor, distant) triple sharing one timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub t: usize,
    pub anchor: TileLoc,
    pub neighbor: TileLoc,
    pub distant: TileLoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeoSamplerConfig {
    /// Number of triplets N.
    pub count: usize,
    /// Neighborhood radius r in pixels.
    pub radius: f64,
    pub tile_size: usize,
    pub seed: u64,
    /// When set, timestamps cycle through `1..=T` in fixed quotas instead of
    /// being drawn uniformly at random.
    #[serde(default)]
    pub per_timestamp_quota: bool,
}

impl Default for GeoSamplerConfig {
    fn default() -> Self {
        GeoSamplerConfig {
            count: 100_000,
            radius: 100.0,
            tile_size: 100,
            seed: 0,
            per_timestamp_quota: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterSamplerConfig {
    /// Number of triplets M.
    pub count: usize,
    pub seed: u64,
}

impl Default for ClusterSamplerConfig {
    fn default() -> Self {
        ClusterSamplerConfig {
            count: 20_000,
            seed: 0,
        }
    }
}

const MAX_REJECTS: usize = 100_000;

/// Sample the geographic training set `D^g`: anchors at uniform
/// pixel-anchored positions, neighbor centers within `r` pixels, distant
/// centers outside. Anchor and neighbor patches may partially overlap.
/// Deterministic given the seed; triplet `i` draws from its own RNG stream.
pub fn sample_geo_triplets(seq: &SceneSequence, cfg: &GeoSamplerConfig) -> Result<Vec<Triplet>> {
    let s = cfg.tile_size;
    if cfg.count == 0 || cfg.radius < 1.0 {
        return Err(Error::InvalidConfig("need N >= 1 and r >= 1".into()));
    }
    if seq.width() < s || seq.height() < s {
        return Err(Error::InvalidGeometry("image smaller than tile size".into()));
    }
    let max_x = seq.width() - s;
    let max_y = seq.height() - s;
    // The worst-placed anchor sits at the center of the position rectangle;
    // its farthest available position must still lie outside the r-ball.
    let worst_reach = ((max_x as f64 / 2.0).powi(2) + (max_y as f64 / 2.0).powi(2)).sqrt();
    if worst_reach <= cfg.radius {
        return Err(Error::InvalidGeometry(format!(
            "no distant position outside radius {} exists for every anchor",
            cfg.radius
        )));
    }
    let r2 = cfg.radius * cfg.radius;
    let ri = cfg.radius.floor() as i64;
    let t_len = seq.t_len();
    let mut out = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let mut rng = stream_rng(cfg.seed, i as u64);
        let t = if cfg.per_timestamp_quota {
            i % t_len + 1
        } else {
            rng.random_range(1..=t_len)
        };
        let ax = rng.random_range(0..=max_x);
        let ay = rng.random_range(0..=max_y);
        let neighbor = {
            let mut found = None;
            for _ in 0..MAX_REJECTS {
                let dx = rng.random_range(-ri..=ri);
                let dy = rng.random_range(-ri..=ri);
                let dist2 = (dx * dx + dy * dy) as f64;
                if dist2 == 0.0 || dist2 > r2 {
                    continue;
                }
                let nx = ax as i64 + dx;
                let ny = ay as i64 + dy;
                if nx < 0 || ny < 0 || nx > max_x as i64 || ny > max_y as i64 {
                    continue;
                }
                found = Some((nx as usize, ny as usize));
                break;
            }
            found.ok_or_else(|| Error::InvalidGeometry("no neighbor position found".into()))?
        };
        let distant = {
            let mut found = None;
            for _ in 0..MAX_REJECTS {
                let cx = rng.random_range(0..=max_x);
                let cy = rng.random_range(0..=max_y);
                let dx = cx as f64 - ax as f64;
                let dy = cy as f64 - ay as f64;
                if dx * dx + dy * dy > r2 {
                    found = Some((cx, cy));
                    break;
                }
            }
            found.ok_or_else(|| Error::InvalidGeometry("no distant position found".into()))?
        };
        out.push(Triplet {
            t,
            anchor: TileLoc::Pixel { x: ax, y: ay },
            neighbor: TileLoc::Pixel {
                x: neighbor.0,
                y: neighbor.1,
            },
            distant: TileLoc::Pixel {
                x: distant.0,
                y: distant.1,
            },
        });
    }
    Ok(out)
}

/// Probability of each distant cluster `j != k`:
/// `p_j ∝ |P_j| * d(c_k, c_j)`, normalized. Falls back to size-proportional
/// weights when every other centroid coincides with `c_k`.
pub fn distant_cluster_distribution(
    partition: &Partition,
    centroids: &Centroids,
    k: usize,
    mode: DistanceMode,
) -> Result<Vec<f64>> {
    let num_k = partition.k;
    if num_k < 2 {
        return Err(Error::InvalidPartition("need K >= 2 clusters".into()));
    }
    if k >= num_k {
        return Err(Error::IndexOutOfRange(format!("cluster {k} outside 0..{num_k}")));
    }
    let sizes = partition.sizes();
    let mut weights = vec![0.0; num_k];
    for j in 0..num_k {
        if j == k {
            continue;
        }
        weights[j] =
            sizes[j] as f64 * mts_distance(&centroids.items[k], &centroids.items[j], mode)?;
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        for (j, w) in weights.iter_mut().enumerate() {
            *w = if j == k { 0.0 } else { sizes[j] as f64 };
        }
    }
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

fn weighted_pick(rng: &mut impl RngExt, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut target = rng.random_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if target < w {
            return i;
        }
        target -= w;
    }
    weights.len() - 1
}

/// Sample the clustering training set `D^c` from a prior partition: anchor
/// and neighbor sequences from one size-proportionally drawn cluster,
/// distant sequence from another cluster drawn proportionally to size and
/// centroid distance; one shared uniform timestamp per triplet.
pub fn sample_cluster_triplets(
    seq: &SceneSequence,
    partition: &Partition,
    centroids: &Centroids,
    cfg: &ClusterSamplerConfig,
    mode: DistanceMode,
) -> Result<Vec<Triplet>> {
    if partition.k < 2 {
        return Err(Error::InvalidPartition("need K >= 2 clusters".into()));
    }
    if cfg.count == 0 {
        return Err(Error::InvalidConfig("need M >= 1".into()));
    }
    let sizes = partition.sizes();
    let size_weights: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let members: Vec<Vec<usize>> = (0..partition.k).map(|c| partition.members(c)).collect();
    let distant_dists: Vec<Vec<f64>> = (0..partition.k)
        .map(|k| distant_cluster_distribution(partition, centroids, k, mode))
        .collect::<Result<_>>()?;
    let t_len = seq.t_len();
    let mut out = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let mut rng = stream_rng(cfg.seed, i as u64);
        // Singleton clusters admit no neighbor; resample the cluster draw.
        let mut k = weighted_pick(&mut rng, &size_weights);
        let mut resamples = 0;
        while sizes[k] < 2 {
            resamples += 1;
            if resamples > 100 {
                return Err(Error::InvalidPartition(
                    "cluster draw kept hitting singleton clusters".into(),
                ));
            }
            k = weighted_pick(&mut rng, &size_weights);
        }
        let anchor = members[k][rng.random_range(0..members[k].len())];
        let neighbor = loop {
            let cand = members[k][rng.random_range(0..members[k].len())];
            if cand != anchor {
                break cand;
            }
        };
        let j = weighted_pick(&mut rng, &distant_dists[k]);
        let distant = members[j][rng.random_range(0..members[j].len())];
        let t = rng.random_range(1..=t_len);
        out.push(Triplet {
            t,
            anchor: TileLoc::Cell(anchor),
            neighbor: TileLoc::Cell(neighbor),
            distant: TileLoc::Cell(distant),
        });
    }
    Ok(out)
}

/// Resolves triplet locations against a scene so the encoder can train on
/// pixel data.
pub struct SceneTriplets<'a> {
    seq: &'a SceneSequence,
    grid: TileGrid,
    tile_size: usize,
    triplets: Vec<Triplet>,
}

impl<'a> SceneTriplets<'a> {
    pub fn new(seq: &'a SceneSequence, grid: TileGrid, triplets: Vec<Triplet>) -> Self {
        let tile_size = grid.tile_size;
        SceneTriplets {
            seq,
            grid,
            tile_size,
            triplets,
        }
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    fn resolve(&self, loc: TileLoc, t: usize) -> Result<ndarray::Array3<f64>> {
        match loc {
            TileLoc::Pixel { x, y } => extract_patch(self.seq, x, y, self.tile_size, t),
            TileLoc::Cell(i) => Ok(extract_tile(self.seq, &self.grid, i, t)?.values),
        }
    }
}

impl TripletSource for SceneTriplets<'_> {
    fn len(&self) -> usize {
        self.triplets.len()
    }

    fn tiles(&self, idx: usize) -> Result<TripletTiles> {
        let tr = &self.triplets[idx];
        Ok(TripletTiles {
            anchor: self.resolve(tr.anchor, tr.t)?,
            neighbor: self.resolve(tr.neighbor, tr.t)?,
            distant: self.resolve(tr.distant, tr.t)?,
        })
    }
}

// ---------------------------------------------------------------------------
// CSV serialization
// ---------------------------------------------------------------------------

/// Geographic triplets as CSV rows `(t, ax, ay, bx, by, cx, cy)`.
pub fn geo_triplets_to_csv(triplets: &[Triplet]) -> Result<String> {
    let mut out = String::from("t,ax,ay,bx,by,cx,cy\n");
    for tr in triplets {
        match (tr.anchor, tr.neighbor, tr.distant) {
            (
                TileLoc::Pixel { x: ax, y: ay },
                TileLoc::Pixel { x: bx, y: by },
                TileLoc::Pixel { x: cx, y: cy },
            ) => out.push_str(&format!("{},{ax},{ay},{bx},{by},{cx},{cy}\n", tr.t)),
            _ => {
                return Err(Error::InvalidInput(
                    "geo CSV requires pixel-anchored triplets".into(),
                ))
            }
        }
    }
    Ok(out)
}

/// Clustering triplets as CSV rows `(t, i_a, i_b, i_c)`.
pub fn cluster_triplets_to_csv(triplets: &[Triplet]) -> Result<String> {
    let mut out = String::from("t,i_a,i_b,i_c\n");
    for tr in triplets {
        match (tr.anchor, tr.neighbor, tr.distant) {
            (TileLoc::Cell(a), TileLoc::Cell(b), TileLoc::Cell(c)) => {
                out.push_str(&format!("{},{a},{b},{c}\n", tr.t))
            }
            _ => {
                return Err(Error::InvalidInput(
                    "cluster CSV requires grid-cell triplets".into(),
                ))
            }
        }
    }
    Ok(out)
}
