//! Post-clustering toolkit: PCA colorization, cluster-map rendering, MDS
//! projection, semantic trees, interpolation representatives, and validity
//! scores.

use std::path::Path;

use image::RgbImage;
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::{Centroids, Partition};
use crate::mts::{mts_distance, DistanceMode, Mts, MtsCollection};
use crate::raster::TileGrid;
use crate::util::write_atomic;

const EIG_TOL: f64 = 1e-9;

/// Top-3 principal axes of a flattened MTS collection, with the
/// per-component projection ranges needed for color scaling.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    pub mean: Array1<f64>,
    /// Row per component, zero rows where the data rank fell short.
    pub axes: Array2<f64>,
    pub variances: [f64; 3],
    pub degenerate: [bool; 3],
    /// Min and max projection of the fitted data per component.
    pub ranges: [(f64, f64); 3],
}

impl PcaBasis {
    /// Projection of a flattened sequence onto the three axes.
    pub fn project(&self, flat: &Array1<f64>) -> Result<[f64; 3]> {
        if flat.len() != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "vector length {} != fitted length {}",
                flat.len(),
                self.mean.len()
            )));
        }
        let centered = flat - &self.mean;
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = self.axes.row(c).dot(&centered);
        }
        Ok(out)
    }
}

/// 8-bit RGB color per cluster id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterColorMap {
    pub colors: Vec<[u8; 3]>,
}

/// 2D coordinates from classical MDS.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Projection2D {
    pub points: Vec<[f64; 2]>,
    /// Positive eigenvalue mass not captured by the two kept axes.
    pub eigen_residual: f64,
    /// Set when the distance matrix is not Euclidean-embeddable (negative
    /// eigenvalues beyond tolerance); possible under the per-step metric.
    pub non_euclidean: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeNode {
    pub cluster: usize,
    pub size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeEdge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
}

/// Minimum spanning tree over the complete graph of centroid distances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemanticTree {
    pub nodes: Vec<TreeNode>,
    pub edges: Vec<TreeEdge>,
}

impl SemanticTree {
    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    /// DOT-format graph text for external viewers.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph semantic_tree {\n");
        for node in &self.nodes {
            out.push_str(&format!(
                "  n{} [label=\"{} ({})\"];\n",
                node.cluster, node.cluster, node.size
            ));
        }
        for edge in &self.edges {
            out.push_str(&format!(
                "  n{} -- n{} [label=\"{:.4}\", len={:.4}];\n",
                edge.a, edge.b, edge.length, edge.length
            ));
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSpace {
    Geographic2d,
    Embedded,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidityScores {
    pub silhouette: f64,
    pub calinski_harabasz: f64,
    /// Set when within-cluster scatter was zero and C-H is an infinity
    /// sentinel.
    pub ch_degenerate: bool,
    pub space: ScoreSpace,
}

// ---------------------------------------------------------------------------
// PCA colorization
// ---------------------------------------------------------------------------

fn sign_fix(v: &mut DVector<f64>) {
    let mut idx = 0;
    let mut best = -1.0;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        *v *= -1.0;
    }
}

/// Fit the top-3 principal components of the flattened collection. Axes are
/// oriented so their largest-magnitude entry is positive; rank below 3 pads
/// the missing components with zeros and flags them degenerate.
pub fn pca_fit(coll: &MtsCollection) -> Result<PcaBasis> {
    let m = coll.len();
    if m < 2 {
        return Err(Error::EmptyInput("PCA needs at least 2 sequences".into()));
    }
    let flat = coll.flattened();
    let n = flat.ncols();
    let mean = flat.mean_axis(ndarray::Axis(0)).unwrap();
    let centered = &flat - &mean.clone().insert_axis(ndarray::Axis(0));
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let c = centered.column(i).dot(&centered.column(j)) / (m as f64 - 1.0);
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let max_eig = eig.eigenvalues[order[0]].max(0.0);
    let mut axes = Array2::zeros((3, n));
    let mut variances = [0.0; 3];
    let mut degenerate = [false; 3];
    for c in 0..3 {
        let lambda = if c < n { eig.eigenvalues[order[c]] } else { 0.0 };
        if c >= n || lambda <= EIG_TOL * max_eig.max(1.0) {
            degenerate[c] = true;
            continue;
        }
        variances[c] = lambda;
        let mut v = eig.eigenvectors.column(order[c]).into_owned();
        sign_fix(&mut v);
        for (j, &x) in v.iter().enumerate() {
            axes[[c, j]] = x;
        }
    }
    let mut basis = PcaBasis {
        mean,
        axes,
        variances,
        degenerate,
        ranges: [(0.0, 0.0); 3],
    };
    for i in 0..m {
        let p = basis.project(&flat.row(i).to_owned())?;
        for c in 0..3 {
            if i == 0 {
                basis.ranges[c] = (p[c], p[c]);
            } else {
                basis.ranges[c].0 = basis.ranges[c].0.min(p[c]);
                basis.ranges[c].1 = basis.ranges[c].1.max(p[c]);
            }
        }
    }
    Ok(basis)
}

fn flatten_mts(mts: &Mts) -> Array1<f64> {
    Array1::from_iter(mts.values.iter().copied())
}

/// Color each centroid by its first three PCA components, min-max scaled by
/// the fitted collection's ranges. Degenerate components render mid-gray.
pub fn centroid_colors(basis: &PcaBasis, centroids: &Centroids) -> Result<ClusterColorMap> {
    let mut colors = Vec::with_capacity(centroids.k());
    for center in &centroids.items {
        let p = basis.project(&flatten_mts(center))?;
        let mut rgb = [0u8; 3];
        for c in 0..3 {
            let (lo, hi) = basis.ranges[c];
            rgb[c] = if basis.degenerate[c] || hi - lo <= 0.0 {
                128
            } else {
                (((p[c] - lo) / (hi - lo) * 255.0).clamp(0.0, 255.0)).round() as u8
            };
        }
        colors.push(rgb);
    }
    Ok(ClusterColorMap { colors })
}

/// Paint each grid cell with its cluster color at full tile resolution.
pub fn render_cluster_map(
    grid: &TileGrid,
    partition: &Partition,
    colors: &ClusterColorMap,
) -> Result<RgbImage> {
    if partition.len() != grid.num_cells() {
        return Err(Error::ShapeMismatch(format!(
            "assignment length {} != grid cells {}",
            partition.len(),
            grid.num_cells()
        )));
    }
    if partition.k > colors.colors.len() {
        return Err(Error::Render(format!(
            "no color for cluster ids up to {}",
            partition.k - 1
        )));
    }
    let s = grid.tile_size as u32;
    let mut img = RgbImage::new(grid.cols as u32 * s, grid.rows as u32 * s);
    for (i, &c) in partition.assignment.iter().enumerate() {
        let (y0, x0) = grid.cell_origin(i)?;
        let color = image::Rgb(colors.colors[c]);
        for dy in 0..s {
            for dx in 0..s {
                img.put_pixel(x0 as u32 + dx, y0 as u32 + dy, color);
            }
        }
    }
    Ok(img)
}

/// Encode an RGB image as PNG and write it atomically.
pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    use image::ImageEncoder;
    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(&mut buf)
        .write_image(
            img.as_raw(),
            img.width(),
            img.height(),
            image::ExtendedColorType::Rgb8,
        )
        .map_err(Error::Image)?;
    write_atomic(path, &buf)
}

// ---------------------------------------------------------------------------
// MDS
// ---------------------------------------------------------------------------

/// Classical (Torgerson) MDS of a distance matrix down to 2D: double-center
/// the squared distances, keep the top-2 eigenpairs, scale eigenvectors by
/// the square root of their eigenvalues. Fully deterministic.
pub fn mds_from_distances(dist: &Array2<f64>) -> Result<Projection2D> {
    let m = dist.nrows();
    if m < 3 || dist.ncols() != m {
        return Err(Error::InvalidInput(
            "MDS needs a square distance matrix with m >= 3".into(),
        ));
    }
    let mut b = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            b[(i, j)] = dist[[i, j]].powi(2);
        }
    }
    // B = -1/2 J D^2 J with J = I - (1/m) 1 1^T.
    let row_mean: Vec<f64> = (0..m).map(|i| b.row(i).sum() / m as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / m as f64;
    for i in 0..m {
        for j in 0..m {
            b[(i, j)] = -0.5 * (b[(i, j)] - row_mean[i] - row_mean[j] + grand);
        }
    }
    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let max_eig = eig.eigenvalues[order[0]].max(0.0);
    let min_eig = eig.eigenvalues[order[m - 1]];
    let non_euclidean = min_eig < -EIG_TOL * max_eig.max(1.0);
    let mut points = vec![[0.0; 2]; m];
    for axis in 0..2 {
        let mut lambda = eig.eigenvalues[order[axis]].max(0.0);
        if lambda <= EIG_TOL * max_eig.max(1.0) {
            lambda = 0.0;
        }
        let mut v = eig.eigenvectors.column(order[axis]).into_owned();
        sign_fix(&mut v);
        let scale = lambda.sqrt();
        for i in 0..m {
            points[i][axis] = v[i] * scale;
        }
    }
    let eigen_residual: f64 = order[2..]
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0))
        .sum();
    Ok(Projection2D {
        points,
        eigen_residual,
        non_euclidean,
    })
}

/// MDS of a sequence collection under the chosen distance.
pub fn mds_project(coll: &MtsCollection, mode: DistanceMode) -> Result<Projection2D> {
    let m = coll.len();
    if m < 3 {
        return Err(Error::EmptyInput("MDS needs at least 3 sequences".into()));
    }
    let mut dist = Array2::zeros((m, m));
    for i in 0..m {
        for j in i + 1..m {
            let d = mts_distance(coll.item(i), coll.item(j), mode)?;
            dist[[i, j]] = d;
            dist[[j, i]] = d;
        }
    }
    mds_from_distances(&dist)
}

// ---------------------------------------------------------------------------
// Semantic tree
// ---------------------------------------------------------------------------

/// Minimum spanning tree of the complete centroid-distance graph via Prim's
/// algorithm; nodes carry cluster sizes.
pub fn semantic_tree(
    centroids: &Centroids,
    partition: &Partition,
    mode: DistanceMode,
) -> Result<SemanticTree> {
    let k = centroids.k();
    if k < 2 {
        return Err(Error::InvalidInput("semantic tree needs K >= 2".into()));
    }
    if partition.k != k {
        return Err(Error::ShapeMismatch("partition K != centroid count".into()));
    }
    let mut dist = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let d = mts_distance(&centroids.items[i], &centroids.items[j], mode)?;
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut in_tree = vec![false; k];
    let mut best_dist = vec![f64::INFINITY; k];
    let mut best_from = vec![0usize; k];
    in_tree[0] = true;
    for j in 1..k {
        best_dist[j] = dist[0][j];
    }
    let mut edges = Vec::with_capacity(k - 1);
    for _ in 1..k {
        let mut next = usize::MAX;
        for j in 0..k {
            if !in_tree[j] && (next == usize::MAX || best_dist[j] < best_dist[next]) {
                next = j;
            }
        }
        edges.push(TreeEdge {
            a: best_from[next].min(next),
            b: best_from[next].max(next),
            length: best_dist[next],
        });
        in_tree[next] = true;
        for j in 0..k {
            if !in_tree[j] && dist[next][j] < best_dist[j] {
                best_dist[j] = dist[next][j];
                best_from[j] = next;
            }
        }
    }
    let sizes = partition.sizes();
    Ok(SemanticTree {
        nodes: (0..k)
            .map(|c| TreeNode {
                cluster: c,
                size: sizes[c],
            })
            .collect(),
        edges,
    })
}

// ---------------------------------------------------------------------------
// Interpolation and nearest sequences
// ---------------------------------------------------------------------------

/// Affine combination `w * c_k + (1 - w) * c_k2`.
pub fn interpolate(c_k: &Mts, c_k2: &Mts, w: f64) -> Result<Mts> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::OutOfRange(format!("w = {w} outside [0, 1]")));
    }
    if c_k.values.raw_dim() != c_k2.values.raw_dim() {
        return Err(Error::ShapeMismatch("interpolation endpoints differ in shape".into()));
    }
    Ok(Mts {
        values: w * &c_k.values + (1.0 - w) * &c_k2.values,
        grid_index: usize::MAX,
    })
}

/// Grid index of the collection item nearest to `target`; ties go to the
/// lowest item index.
pub fn nearest_sequence(coll: &MtsCollection, target: &Mts, mode: DistanceMode) -> Result<usize> {
    if coll.is_empty() {
        return Err(Error::EmptyInput("nearest sequence of an empty collection".into()));
    }
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, item) in coll.items().iter().enumerate() {
        let d = mts_distance(item, target, mode)?;
        if d < best_dist {
            best = i;
            best_dist = d;
        }
    }
    Ok(coll.item(best).grid_index)
}

// ---------------------------------------------------------------------------
// Validity scores
// ---------------------------------------------------------------------------

fn row_dist(points: &Array2<f64>, i: usize, j: usize) -> f64 {
    points
        .row(i)
        .iter()
        .zip(points.row(j))
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Mean silhouette coefficient over all points; singleton points and the
/// all-distances-zero degenerate case score 0.
pub fn silhouette(points: &Array2<f64>, partition: &Partition) -> Result<f64> {
    let m = points.nrows();
    if partition.len() != m {
        return Err(Error::ShapeMismatch("assignment length != point count".into()));
    }
    if partition.k < 2 {
        return Err(Error::InvalidInput("silhouette needs K >= 2".into()));
    }
    if m <= partition.k {
        return Err(Error::InvalidInput("silhouette needs m > K".into()));
    }
    let sizes = partition.sizes();
    let mut total = 0.0;
    for i in 0..m {
        let own = partition.assignment[i];
        if sizes[own] < 2 {
            continue;
        }
        let mut sums = vec![0.0; partition.k];
        for j in 0..m {
            if j != i {
                sums[partition.assignment[j]] += row_dist(points, i, j);
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..partition.k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        total += if denom > 0.0 { (b - a) / denom } else { 0.0 };
    }
    Ok(total / m as f64)
}

/// Calinski-Harabasz score; returns infinity when within-cluster scatter is
/// exactly zero.
pub fn calinski_harabasz(points: &Array2<f64>, partition: &Partition) -> Result<f64> {
    let m = points.nrows();
    let n = points.ncols();
    if partition.len() != m {
        return Err(Error::ShapeMismatch("assignment length != point count".into()));
    }
    if partition.k < 2 {
        return Err(Error::InvalidInput("Calinski-Harabasz needs K >= 2".into()));
    }
    if m <= partition.k {
        return Err(Error::InvalidInput("Calinski-Harabasz needs m > K".into()));
    }
    let grand = points.mean_axis(ndarray::Axis(0)).unwrap();
    let sizes = partition.sizes();
    let mut centers = Array2::<f64>::zeros((partition.k, n));
    for i in 0..m {
        let c = partition.assignment[i];
        for j in 0..n {
            centers[[c, j]] += points[[i, j]];
        }
    }
    for c in 0..partition.k {
        for j in 0..n {
            centers[[c, j]] /= sizes[c] as f64;
        }
    }
    let mut between = 0.0;
    for c in 0..partition.k {
        let d2: f64 = (0..n)
            .map(|j| {
                let diff: f64 = centers[[c, j]] - grand[j];
                diff * diff
            })
            .sum();
        between += sizes[c] as f64 * d2;
    }
    let mut within = 0.0;
    for i in 0..m {
        let c = partition.assignment[i];
        within += (0..n)
            .map(|j| {
                let diff: f64 = points[[i, j]] - centers[[c, j]];
                diff * diff
            })
            .sum::<f64>();
    }
    if within == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((between / (partition.k as f64 - 1.0)) / (within / (m as f64 - partition.k as f64)))
}

fn scores(points: &Array2<f64>, partition: &Partition, space: ScoreSpace) -> Result<ValidityScores> {
    let ch = calinski_harabasz(points, partition)?;
    Ok(ValidityScores {
        silhouette: silhouette(points, partition)?,
        calinski_harabasz: ch,
        ch_degenerate: ch.is_infinite(),
        space,
    })
}

/// Silhouette and Calinski-Harabasz on tile-center pixel coordinates; the
/// embedding plays no role here.
pub fn geographic_space_scores(grid: &TileGrid, partition: &Partition) -> Result<ValidityScores> {
    if partition.len() != grid.num_cells() {
        return Err(Error::ShapeMismatch("assignment length != grid cells".into()));
    }
    let mut points = Array2::zeros((grid.num_cells(), 2));
    for i in 0..grid.num_cells() {
        let (x, y) = grid.cell_center(i)?;
        points[[i, 0]] = x;
        points[[i, 1]] = y;
    }
    scores(&points, partition, ScoreSpace::Geographic2d)
}

/// Silhouette and Calinski-Harabasz on the flattened sequences themselves.
pub fn embedded_space_scores(coll: &MtsCollection, partition: &Partition) -> Result<ValidityScores> {
    scores(&coll.flattened(), partition, ScoreSpace::Embedded)
}

/// Adjusted Rand index between two labelings of the same items: 1 for
/// identical partitions up to relabeling, expected 0 for independent random
/// labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "label lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("ARI of empty labelings".into()));
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let comb2 = |n: u64| (n * n.saturating_sub(1) / 2) as f64;
    let row_sums: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let sum_cells: f64 = table.iter().flatten().map(|&c| comb2(c)).sum();
    let sum_rows: f64 = row_sums.iter().map(|&c| comb2(c)).sum();
    let sum_cols: f64 = col_sums.iter().map(|&c| comb2(c)).sum();
    let total = comb2(a.len() as u64);
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < 1e-12 {
        // Both partitions trivial (all-in-one or all singletons).
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / (max_index - expected))
}
