//! Partitional clustering of MTS collections: k-means++ seeding, Lloyd
//! iterations with restarts, error, centroids, medoids, and a brute-force
//! oracle for small instances.

use std::fs;
use std::path::Path;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mts::{mts_distance, DistanceMode, Mts, MtsCollection, Provenance};
use crate::util::stream_rng;

/// Cluster id per item; every cluster nonempty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub assignment: Vec<usize>,
    pub k: usize,
}

impl Partition {
    pub fn new(assignment: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&bad) = assignment.iter().find(|&&c| c >= k) {
            return Err(Error::InvalidPartition(format!(
                "cluster id {bad} outside 0..{k}"
            )));
        }
        let mut sizes = vec![0usize; k];
        for &c in &assignment {
            sizes[c] += 1;
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidPartition("every cluster must be nonempty".into()));
        }
        Ok(Partition { assignment, k })
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }

    /// Item indices belonging to cluster `c`, ascending.
    pub fn members(&self, c: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|&(_, &a)| a == c)
            .map(|(i, _)| i)
            .collect()
    }
}

/// The K mean-MTS cluster centers.
#[derive(Debug, Clone)]
pub struct Centroids {
    pub items: Vec<Mts>,
}

impl Centroids {
    pub fn k(&self) -> usize {
        self.items.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub mode: DistanceMode,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 5,
            restarts: 10,
            max_iter: 300,
            rel_tol: 1e-6,
            mode: DistanceMode::ConcatEuclidean,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub partition: Partition,
    pub centroids: Centroids,
    pub error: f64,
    pub iterations: usize,
    pub best_restart: usize,
}

/// Elementwise mean MTS of a nonempty set of items.
pub fn centroid(items: &[&Mts]) -> Result<Mts> {
    if items.is_empty() {
        return Err(Error::EmptyInput("centroid of an empty cluster".into()));
    }
    let mut values = items[0].values.clone();
    for item in &items[1..] {
        if item.values.raw_dim() != values.raw_dim() {
            return Err(Error::ShapeMismatch("cluster items must share (T, d)".into()));
        }
        values = values + &item.values;
    }
    values /= items.len() as f64;
    Ok(Mts {
        values,
        grid_index: usize::MAX,
    })
}

/// The cluster member closest to the centroid; ties go to the lowest grid
/// index.
pub fn medoid(items: &[&Mts], center: &Mts, mode: DistanceMode) -> Result<usize> {
    if items.is_empty() {
        return Err(Error::EmptyInput("medoid of an empty cluster".into()));
    }
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, item) in items.iter().enumerate() {
        let d = mts_distance(item, center, mode)?;
        let better = d < best_dist
            || (d == best_dist && item.grid_index < items[best].grid_index);
        if better {
            best = i;
            best_dist = d;
        }
    }
    Ok(items[best].grid_index)
}

/// Clustering error: sum over clusters of squared distances to the centroid.
pub fn kmeans_error(
    coll: &MtsCollection,
    partition: &Partition,
    centroids: &Centroids,
    mode: DistanceMode,
) -> Result<f64> {
    if partition.assignment.len() != coll.len() {
        return Err(Error::ShapeMismatch(format!(
            "assignment length {} != m {}",
            partition.assignment.len(),
            coll.len()
        )));
    }
    if centroids.k() != partition.k {
        return Err(Error::ShapeMismatch("centroid count != K".into()));
    }
    let mut total = 0.0;
    for (item, &c) in coll.items().iter().zip(&partition.assignment) {
        let d = mts_distance(item, &centroids.items[c], mode)?;
        total += d * d;
    }
    Ok(total)
}

/// k-means++ seeding: first centroid uniform, each next drawn with
/// probability proportional to the squared distance to the nearest chosen
/// centroid. Deterministic given `seed`.
pub fn kmeanspp_init(
    coll: &MtsCollection,
    k: usize,
    seed: u64,
    mode: DistanceMode,
) -> Result<Centroids> {
    let m = coll.len();
    if k == 0 || k > m {
        return Err(Error::InvalidConfig(format!("K = {k} must be in 1..={m}")));
    }
    let mut rng = stream_rng(seed, 0x9c11);
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..m));
    let mut nearest_sq: Vec<f64> = coll
        .items()
        .iter()
        .map(|z| {
            let d = mts_distance(z, coll.item(chosen[0]), mode).unwrap();
            d * d
        })
        .collect();
    while chosen.len() < k {
        let total: f64 = nearest_sq.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = m - 1;
            for (i, &w) in nearest_sq.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // All remaining points coincide with a centroid; fall back to a
            // uniform unchosen index.
            let unchosen: Vec<usize> = (0..m).filter(|i| !chosen.contains(i)).collect();
            unchosen[rng.random_range(0..unchosen.len())]
        };
        chosen.push(next);
        for (i, z) in coll.items().iter().enumerate() {
            let d = mts_distance(z, coll.item(next), mode)?;
            nearest_sq[i] = nearest_sq[i].min(d * d);
        }
    }
    Ok(Centroids {
        items: chosen.iter().map(|&i| coll.item(i).clone()).collect(),
    })
}

/// One Lloyd run from given initial centroids.
fn lloyd_run(
    coll: &MtsCollection,
    mut centroids: Centroids,
    cfg: &KMeansConfig,
) -> Result<(Partition, Centroids, f64, usize)> {
    let m = coll.len();
    let k = cfg.k;
    let mut assignment = vec![0usize; m];
    let mut prev_error = f64::INFINITY;
    let mut iterations = 0;
    for _iter in 0..cfg.max_iter {
        iterations += 1;
        // Assignment step; ties go to the lowest cluster index.
        for (i, item) in coll.items().iter().enumerate() {
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for (c, center) in centroids.items.iter().enumerate() {
                let d = mts_distance(item, center, cfg.mode)?;
                if d < best_dist {
                    best = c;
                    best_dist = d;
                }
            }
            assignment[i] = best;
        }
        // Repair empty clusters by stealing the point farthest from its
        // current centroid (among clusters that keep >= 2 members).
        loop {
            let mut sizes = vec![0usize; k];
            for &c in &assignment {
                sizes[c] += 1;
            }
            let Some(empty) = sizes.iter().position(|&s| s == 0) else {
                break;
            };
            let mut farthest: Option<(usize, f64)> = None;
            for (i, item) in coll.items().iter().enumerate() {
                if sizes[assignment[i]] < 2 {
                    continue;
                }
                let d = mts_distance(item, &centroids.items[assignment[i]], cfg.mode)?;
                if farthest.map_or(true, |(_, fd)| d > fd) {
                    farthest = Some((i, d));
                }
            }
            let (steal, _) = farthest.ok_or_else(|| {
                Error::InvalidPartition("cannot repair empty cluster".into())
            })?;
            assignment[steal] = empty;
        }
        // Update step: mean centroids.
        for c in 0..k {
            let members: Vec<&Mts> = coll
                .items()
                .iter()
                .zip(&assignment)
                .filter(|&(_, &a)| a == c)
                .map(|(z, _)| z)
                .collect();
            centroids.items[c] = centroid(&members)?;
        }
        let partition = Partition {
            assignment: assignment.clone(),
            k,
        };
        let error = kmeans_error(coll, &partition, &centroids, cfg.mode)?;
        if cfg.mode == DistanceMode::ConcatEuclidean {
            assert!(
                error <= prev_error * (1.0 + 1e-12) + 1e-12,
                "Lloyd error increased: {prev_error} -> {error}"
            );
        }
        let rel_change = if prev_error.is_finite() && prev_error > 0.0 {
            (prev_error - error).abs() / prev_error
        } else if prev_error == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        prev_error = error;
        if rel_change < cfg.rel_tol {
            break;
        }
    }
    Ok((
        Partition { assignment, k },
        centroids,
        prev_error,
        iterations,
    ))
}

/// Lloyd's algorithm with k-means++ seeding and restarts; returns the best
/// run by final error. Deterministic given `(coll, cfg)`.
pub fn lloyd(coll: &MtsCollection, cfg: &KMeansConfig) -> Result<KMeansResult> {
    if cfg.k == 0 || cfg.k > coll.len() {
        return Err(Error::InvalidConfig(format!(
            "K = {} must be in 1..={}",
            cfg.k,
            coll.len()
        )));
    }
    if cfg.restarts == 0 {
        return Err(Error::InvalidConfig("restarts must be >= 1".into()));
    }
    let mut best: Option<KMeansResult> = None;
    for restart in 0..cfg.restarts {
        let init = kmeanspp_init(coll, cfg.k, cfg.seed.wrapping_add(restart as u64), cfg.mode)?;
        let (partition, centroids, error, iterations) = lloyd_run(coll, init, cfg)?;
        if best.as_ref().map_or(true, |b| error < b.error) {
            best = Some(KMeansResult {
                partition,
                centroids,
                error,
                iterations,
                best_restart: restart,
            });
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// Run Lloyd from given initial centroids (warm start).
pub fn lloyd_warm(coll: &MtsCollection, init: Centroids, cfg: &KMeansConfig) -> Result<KMeansResult> {
    if init.k() != cfg.k {
        return Err(Error::InvalidConfig("warm-start centroid count != K".into()));
    }
    let (partition, centroids, error, iterations) = lloyd_run(coll, init, cfg)?;
    Ok(KMeansResult {
        partition,
        centroids,
        error,
        iterations,
        best_restart: 0,
    })
}

/// Exhaustive global optimum over all surjective assignments; only feasible
/// for tiny instances (`m <= 10`).
pub fn brute_force_kmeans(
    coll: &MtsCollection,
    k: usize,
    mode: DistanceMode,
) -> Result<(Partition, f64)> {
    let m = coll.len();
    if m > 10 {
        return Err(Error::TooLarge(format!("m = {m} exceeds brute-force limit 10")));
    }
    if k == 0 || k > m {
        return Err(Error::InvalidConfig(format!("K = {k} must be in 1..={m}")));
    }
    let mut assignment = vec![0usize; m];
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let mut sizes = vec![0usize; k];
        for &c in &assignment {
            sizes[c] += 1;
        }
        if sizes.iter().all(|&s| s > 0) {
            let partition = Partition {
                assignment: assignment.clone(),
                k,
            };
            let mut centroids = Vec::with_capacity(k);
            for c in 0..k {
                let members: Vec<&Mts> = coll
                    .items()
                    .iter()
                    .zip(&assignment)
                    .filter(|&(_, &a)| a == c)
                    .map(|(z, _)| z)
                    .collect();
                centroids.push(centroid(&members)?);
            }
            let error = kmeans_error(coll, &partition, &Centroids { items: centroids }, mode)?;
            if best.as_ref().map_or(true, |(_, e)| error < *e) {
                best = Some((assignment.clone(), error));
            }
        }
        // Next assignment in base-K counting order.
        let mut pos = 0;
        loop {
            if pos == m {
                let (assignment, error) = best.expect("at least one surjective assignment");
                return Ok((Partition { assignment, k }, error));
            }
            assignment[pos] += 1;
            if assignment[pos] < k {
                break;
            }
            assignment[pos] = 0;
            pos += 1;
        }
    }
}

// ---------------------------------------------------------------------------
// Result serialization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KMeansResultHeader {
    pub k: usize,
    pub error: f64,
    pub iterations: usize,
    pub seed: u64,
}

/// Save a clustering result: `<base>.json` summary, `<base>.csv` assignment
/// rows `(grid_index, cluster_id)`, and `<base>_centroids.{bin,json}` in the
/// collection binary format.
pub fn save_result(result: &KMeansResult, base: &Path, seed: u64) -> Result<()> {
    let header = KMeansResultHeader {
        k: result.partition.k,
        error: result.error,
        iterations: result.iterations,
        seed,
    };
    let json_path = base.with_extension("json");
    let text = serde_json::to_string_pretty(&header).map_err(|e| Error::json(&json_path, e))?;
    crate::util::write_atomic(&json_path, text.as_bytes())?;

    let mut csv = String::from("grid_index,cluster_id\n");
    for (i, &c) in result.partition.assignment.iter().enumerate() {
        csv.push_str(&format!("{i},{c}\n"));
    }
    crate::util::write_atomic(&base.with_extension("csv"), csv.as_bytes())?;

    let centroid_coll = MtsCollection::new(result.centroids.items.clone(), Provenance::Clustering)?;
    let centroid_base = base.with_file_name(format!(
        "{}_centroids",
        base.file_name().unwrap().to_string_lossy()
    ));
    crate::mts::save_collection(&centroid_coll, &centroid_base, None)
}

/// Load a result written by [`save_result`].
pub fn load_result(base: &Path) -> Result<(KMeansResultHeader, Partition, Centroids)> {
    let json_path = base.with_extension("json");
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: KMeansResultHeader =
        serde_json::from_str(&text).map_err(|e| Error::json(&json_path, e))?;
    let csv_path = base.with_extension("csv");
    let csv = fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut assignment = Vec::new();
    for line in csv.lines().skip(1) {
        let mut parts = line.split(',');
        let _idx = parts.next();
        let c: usize = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::InvalidInput(format!("bad assignment row: {line}")))?;
        assignment.push(c);
    }
    let partition = Partition::new(assignment, header.k)?;
    let centroid_base = base.with_file_name(format!(
        "{}_centroids",
        base.file_name().unwrap().to_string_lossy()
    ));
    let coll = crate::mts::load_collection(&centroid_base)?;
    let centroids = Centroids {
        items: coll.items().to_vec(),
    };
    Ok((header, partition, centroids))
}
