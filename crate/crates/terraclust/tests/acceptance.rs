//! Acceptance suite: every criterion prints one PASS/FAIL line.
//!
//! The three end-to-end criteria (planted-zone recovery, refinement
//! direction, baseline direction) share one full pipeline run.

use std::sync::OnceLock;

use ndarray::{array, Array1, Array2, Array3};
use rand::RngExt;

use terraclust::analysis::{
    adjusted_rand_index, interpolate, mds_from_distances, mds_project, semantic_tree, silhouette,
};
use terraclust::encoder::{
    gradient, init_encoder, objective, triplet_loss, ConvBlockSpec, EncoderConfig, TripletTiles,
};
use terraclust::kmeans::{brute_force_kmeans, lloyd, Centroids, KMeansConfig, Partition};
use terraclust::mts::{mts_distance, DistanceMode, Mts, MtsCollection, Provenance};
use terraclust::pipeline::{run_all, BaselineReport, PipelineConfig, ScoresReport, SceneSource};
use terraclust::raster::SyntheticSceneSpec;
use terraclust::util::stream_rng;

fn check(name: &str, ok: bool, detail: String) {
    if ok {
        println!("[PASS] {name}: {detail}");
    } else {
        println!("[FAIL] {name}: {detail}");
    }
    assert!(ok, "{name}: {detail}");
}

// ---------------------------------------------------------------------------
// Shared pipeline fixture
// ---------------------------------------------------------------------------

struct PipelineRun {
    scores: ScoresReport,
    baseline: BaselineReport,
    _dir: tempfile::TempDir,
}

static RUN: OnceLock<PipelineRun> = OnceLock::new();

fn pipeline_run() -> &'static PipelineRun {
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let cfg = PipelineConfig::desk_default(dir.path().join("run"));
        run_all(&cfg).expect("pipeline run");
        let scores: ScoresReport = serde_json::from_str(
            &std::fs::read_to_string(cfg.out.join("analysis/scores.json")).unwrap(),
        )
        .unwrap();
        let baseline: BaselineReport = serde_json::from_str(
            &std::fs::read_to_string(cfg.out.join("analysis/baseline.json")).unwrap(),
        )
        .unwrap();
        PipelineRun {
            scores,
            baseline,
            _dir: dir,
        }
    })
}

// ---------------------------------------------------------------------------
// Criterion 1: gradient correctness
// ---------------------------------------------------------------------------

fn tiny_encoder_config() -> EncoderConfig {
    EncoderConfig {
        input_channels: 2,
        tile_size: 5,
        conv_blocks: vec![ConvBlockSpec {
            filters: 3,
            kernel: 2,
            stride: 2,
        }],
        embedding_dim: 3,
    }
}

fn random_tile(rng: &mut impl RngExt, ch: usize, s: usize) -> Array3<f64> {
    Array3::from_shape_simple_fn((ch, s, s), || rng.random_range(0.0..1.0))
}

/// Keep the batch away from hinge and zero-norm kinks so central differences
/// are valid.
fn batch_away_from_kinks(
    params: &terraclust::encoder::EncoderParams,
    rng: &mut impl RngExt,
    delta: f64,
) -> Vec<TripletTiles> {
    let cfg = params.config();
    loop {
        let batch: Vec<TripletTiles> = (0..2)
            .map(|_| TripletTiles {
                anchor: random_tile(rng, cfg.input_channels, cfg.tile_size),
                neighbor: random_tile(rng, cfg.input_channels, cfg.tile_size),
                distant: random_tile(rng, cfg.input_channels, cfg.tile_size),
            })
            .collect();
        let safe = batch.iter().all(|t| {
            let z_a = params.embed(&t.anchor).unwrap();
            let z_b = params.embed(&t.neighbor).unwrap();
            let z_c = params.embed(&t.distant).unwrap();
            let norm = |z: &Array1<f64>| z.dot(z).sqrt();
            let pre = norm(&(&z_a - &z_b)) - norm(&(&z_a - &z_c)) + delta;
            pre.abs() > 1e-3 && norm(&z_a) > 1e-3 && norm(&z_b) > 1e-3 && norm(&z_c) > 1e-3
        });
        if safe {
            return batch;
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let cfg = tiny_encoder_config();
    let delta = 0.4;
    let lambda = 0.01;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let mut rng = stream_rng(0xacc0, trial);
        let params = init_encoder(&cfg, rng.random_range(0..u64::MAX)).unwrap();
        let batch = batch_away_from_kinks(&params, &mut rng, delta);
        let (_, grads) = gradient(&params, &batch, delta, lambda).unwrap();
        let analytic = grads.flatten();
        let flat = params.flatten();
        for i in 0..flat.len() {
            let mut plus = flat.clone();
            plus[i] += h;
            let mut minus = flat.clone();
            minus[i] -= h;
            let op = objective(
                &terraclust::encoder::EncoderParams::from_flat(&cfg, &plus).unwrap(),
                &batch,
                delta,
                lambda,
            )
            .unwrap();
            let om = objective(
                &terraclust::encoder::EncoderParams::from_flat(&cfg, &minus).unwrap(),
                &batch,
                delta,
                lambda,
            )
            .unwrap();
            let numeric = (op - om) / (2.0 * h);
            if analytic[i].abs() < 1e-6 && numeric.abs() < 1e-6 {
                continue;
            }
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs());
            worst = worst.max(rel);
        }
    }
    check(
        "gradient correctness",
        worst < 1e-4,
        format!("max relative error {worst:.3e} over 100 encoder/batch draws"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: triplet-loss unit values
// ---------------------------------------------------------------------------

#[test]
fn triplet_loss_unit_values() {
    let a = array![1.0, 1.0];
    let c = array![1.0, 3.0];
    let v1 = triplet_loss(&a, &a, &c, 2.0).unwrap();
    let v2 = triplet_loss(&a, &a, &a, 0.0).unwrap();
    let v3 = triplet_loss(&array![0.0, 0.0], &array![3.0, 4.0], &array![0.0, 1.0], 1.0).unwrap();
    check(
        "triplet-loss unit values",
        v1 == 0.0 && v2 == 0.0 && v3 == 5.0,
        format!("({v1}, {v2}, {v3}) == (0, 0, 5)"),
    );
}

// ---------------------------------------------------------------------------
// Criteria 3-4: Lloyd monotonicity and global-optimum recovery
// ---------------------------------------------------------------------------

fn random_collection(seed: u64, m: usize, t: usize, d: usize) -> MtsCollection {
    let mut rng = stream_rng(seed, 0xc0);
    let items = (0..m)
        .map(|i| Mts {
            values: Array2::from_shape_simple_fn((t, d), || rng.random_range(-2.0..2.0)),
            grid_index: i,
        })
        .collect();
    MtsCollection::new(items, Provenance::Geographic).unwrap()
}

#[test]
fn lloyd_error_monotone() {
    // The Lloyd loop asserts per-iteration non-increase internally in concat
    // mode; 100 random collections must complete without tripping it.
    for trial in 0..100u64 {
        let mut rng = stream_rng(trial, 0x11);
        let m = rng.random_range(10..=200usize);
        let k = rng.random_range(2..=8usize.min(m));
        let coll = random_collection(trial, m, rng.random_range(1..=4), rng.random_range(1..=3));
        let cfg = KMeansConfig {
            k,
            restarts: 2,
            seed: trial,
            ..KMeansConfig::default()
        };
        let result = lloyd(&coll, &cfg).unwrap();
        assert!(result.error.is_finite() && result.error >= 0.0);
    }
    check(
        "Lloyd monotonicity",
        true,
        "100 collections (m <= 200), per-iteration error never increased".into(),
    );
}

#[test]
fn restarts_recover_global_optimum() {
    let mut hits = 0;
    for trial in 0..100u64 {
        let mut rng = stream_rng(trial, 0x60);
        let m = rng.random_range(4..=8usize);
        let coll = random_collection(trial.wrapping_add(1000), m, 1, 2);
        let cfg = KMeansConfig {
            k: 2,
            restarts: 20,
            seed: trial,
            ..KMeansConfig::default()
        };
        let result = lloyd(&coll, &cfg).unwrap();
        let (_, best) = brute_force_kmeans(&coll, 2, DistanceMode::ConcatEuclidean).unwrap();
        if (result.error - best).abs() <= 1e-9 {
            hits += 1;
        }
    }
    check(
        "global-optimum recovery",
        hits >= 95,
        format!("best-of-20 restarts matched brute force on {hits}/100 instances"),
    );
}

// ---------------------------------------------------------------------------
// Criteria 5-7: pipeline directions on the synthetic 4-zone scene
// ---------------------------------------------------------------------------

#[test]
fn planted_zone_recovery() {
    let run = pipeline_run();
    let ari = run.scores.geo.ari_vs_planted.expect("synthetic labels");
    check(
        "planted-zone recovery",
        ari >= 0.8,
        format!("geo-stage ARI {ari:.3} >= 0.8 (4 zones, 20x20 grid, T=8, K=4)"),
    );
}

#[test]
fn refinement_direction() {
    let run = pipeline_run();
    let g = &run.scores.geo;
    let r = &run.scores.refined;
    let sil_up = r.embedded.silhouette > g.embedded.silhouette;
    let err_down = r.kmeans_error < g.kmeans_error;
    let ari_ok = r.ari_vs_planted.unwrap() >= g.ari_vs_planted.unwrap();
    check(
        "refinement direction",
        sil_up && err_down && ari_ok,
        format!(
            "silhouette {:.4} -> {:.4}, error {:.1} -> {:.1}, ARI {:.3} -> {:.3}",
            g.embedded.silhouette,
            r.embedded.silhouette,
            g.kmeans_error,
            r.kmeans_error,
            g.ari_vs_planted.unwrap(),
            r.ari_vs_planted.unwrap()
        ),
    );
}

#[test]
fn baseline_direction() {
    let run = pipeline_run();
    let emb = run.baseline.embedding.silhouette;
    let base = run.baseline.pixel_baseline.silhouette;
    check(
        "baseline direction",
        emb > base,
        format!("geographic silhouette: embedding {emb:.3} > pixel baseline {base:.3}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: MST oracle
// ---------------------------------------------------------------------------

fn exhaustive_mst_weight(dist: &[Vec<f64>]) -> f64 {
    let k = dist.len();
    let mut edges = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            edges.push((i, j, dist[i][j]));
        }
    }
    fn find(parent: &mut Vec<usize>, x: usize) -> usize {
        if parent[x] != x {
            parent[x] = find(parent, parent[x]);
        }
        parent[x]
    }
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << edges.len()) {
        if mask.count_ones() as usize != k - 1 {
            continue;
        }
        let mut parent: Vec<usize> = (0..k).collect();
        let mut weight = 0.0;
        for (b, &(i, j, w)) in edges.iter().enumerate() {
            if mask & (1 << b) != 0 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri] = rj;
                weight += w;
            }
        }
        let root = find(&mut parent, 0);
        if (0..k).all(|x| find(&mut parent, x) == root) {
            best = best.min(weight);
        }
    }
    best
}

#[test]
fn mst_matches_exhaustive_enumeration() {
    let mut worst: f64 = 0.0;
    for trial in 0..100u64 {
        let mut rng = stream_rng(trial, 0xe5);
        let k = rng.random_range(2..=6usize);
        let d = rng.random_range(1..=3usize);
        let centroids = Centroids {
            items: (0..k)
                .map(|i| Mts {
                    values: Array2::from_shape_simple_fn((2, d), || rng.random_range(-5.0..5.0)),
                    grid_index: i,
                })
                .collect(),
        };
        let partition = Partition::new((0..k).collect(), k).unwrap();
        let tree = semantic_tree(&centroids, &partition, DistanceMode::ConcatEuclidean).unwrap();
        let mut dist = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                dist[i][j] = mts_distance(
                    &centroids.items[i],
                    &centroids.items[j],
                    DistanceMode::ConcatEuclidean,
                )
                .unwrap();
            }
        }
        worst = worst.max((tree.total_weight() - exhaustive_mst_weight(&dist)).abs());
    }
    check(
        "MST oracle",
        worst <= 1e-9,
        format!("max |tree - exhaustive minimum| = {worst:.2e} over 100 trials (K <= 6)"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: MDS isometry
// ---------------------------------------------------------------------------

#[test]
fn mds_isometry() {
    // Equilateral triangle with unit sides.
    let mut dist = Array2::zeros((3, 3));
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                dist[[i, j]] = 1.0;
            }
        }
    }
    let proj = mds_from_distances(&dist).unwrap();
    let mut worst_side: f64 = 0.0;
    for i in 0..3 {
        for j in i + 1..3 {
            let d = ((proj.points[i][0] - proj.points[j][0]).powi(2)
                + (proj.points[i][1] - proj.points[j][1]).powi(2))
            .sqrt();
            worst_side = worst_side.max((d - 1.0).abs());
        }
    }

    // Random planar configurations must be recovered isometrically.
    let mut worst_pair: f64 = 0.0;
    for trial in 0..20u64 {
        let mut rng = stream_rng(trial, 0x3d);
        let m = rng.random_range(3..=12usize);
        let rows: Vec<[f64; 2]> = (0..m)
            .map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)])
            .collect();
        let coll = MtsCollection::new(
            rows.iter()
                .enumerate()
                .map(|(i, r)| Mts {
                    values: array![[r[0], r[1]]],
                    grid_index: i,
                })
                .collect(),
            Provenance::Geographic,
        )
        .unwrap();
        let proj = mds_project(&coll, DistanceMode::ConcatEuclidean).unwrap();
        for i in 0..m {
            for j in i + 1..m {
                let orig =
                    ((rows[i][0] - rows[j][0]).powi(2) + (rows[i][1] - rows[j][1]).powi(2)).sqrt();
                let rec = ((proj.points[i][0] - proj.points[j][0]).powi(2)
                    + (proj.points[i][1] - proj.points[j][1]).powi(2))
                .sqrt();
                worst_pair = worst_pair.max((orig - rec).abs());
            }
        }
    }
    check(
        "MDS isometry",
        worst_side <= 1e-9 && worst_pair <= 1e-9,
        format!("triangle side error {worst_side:.2e}, planar recovery error {worst_pair:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: interpolation identities
// ---------------------------------------------------------------------------

#[test]
fn interpolation_identities() {
    let a = Mts {
        values: array![[0.0, 0.0], [0.0, 0.0]],
        grid_index: 0,
    };
    let b = Mts {
        values: array![[2.0, 2.0], [2.0, 2.0]],
        grid_index: 1,
    };
    let endpoints_exact = interpolate(&a, &b, 1.0).unwrap().values == a.values
        && interpolate(&a, &b, 0.0).unwrap().values == b.values;
    let midpoint_exact = interpolate(&a, &b, 0.5)
        .unwrap()
        .values
        .iter()
        .all(|&v| v == 1.0);

    let mut worst: f64 = 0.0;
    for trial in 0..50u64 {
        let mut rng = stream_rng(trial, 0x1e);
        let c_k = Mts {
            values: Array2::from_shape_simple_fn((3, 2), || rng.random_range(-4.0..4.0)),
            grid_index: 0,
        };
        let c_k2 = Mts {
            values: Array2::from_shape_simple_fn((3, 2), || rng.random_range(-4.0..4.0)),
            grid_index: 1,
        };
        let w = rng.random_range(0.0..1.0);
        let z_w = interpolate(&c_k, &c_k2, w).unwrap();
        let mode = DistanceMode::ConcatEuclidean;
        let lhs = mts_distance(&z_w, &c_k, mode).unwrap() + mts_distance(&z_w, &c_k2, mode).unwrap();
        let rhs = mts_distance(&c_k, &c_k2, mode).unwrap();
        worst = worst.max((lhs - rhs).abs());
    }
    check(
        "interpolation identities",
        endpoints_exact && midpoint_exact && worst <= 1e-9,
        format!("endpoints and midpoint exact, collinearity residual {worst:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 11: run-all determinism
// ---------------------------------------------------------------------------

#[test]
fn run_all_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::desk_default(dir.path().join("a"));
    // Reduced scene keeps the double run quick without changing mechanics.
    if let SceneSource::Synthetic { spec } = &mut cfg.scene {
        *spec = SyntheticSceneSpec {
            layout: SyntheticSceneSpec::quadrant_layout(8, 8),
            grid_rows: 8,
            grid_cols: 8,
            t_len: 4,
            ..spec.clone()
        };
    }
    cfg.train_geo.epochs = 3;
    cfg.train_refine.epochs = 2;
    cfg.geo_sampler.count = 300;
    cfg.cluster_sampler.count = 300;
    cfg.baseline_tile_size = Some(4);
    cfg.seed = 99;
    let first = run_all(&cfg).unwrap();
    cfg.out = dir.path().join("b");
    let second = run_all(&cfg).unwrap();
    let same = first.artifacts == second.artifacts;
    check(
        "run-all determinism",
        same && !first.artifacts.is_empty(),
        format!(
            "two runs with seed 99 produced identical hashes for {} artifacts",
            first.artifacts.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 12: validity-score bounds
// ---------------------------------------------------------------------------

#[test]
fn validity_score_bounds() {
    let mut sil_ok = true;
    let mut ari_ok = true;
    for trial in 0..1000u64 {
        let mut rng = stream_rng(trial, 0xb0);
        let m = rng.random_range(5..40usize);
        let k = rng.random_range(2..m.min(6));
        let points =
            Array2::from_shape_simple_fn((m, 2), || rng.random_range(-10.0..10.0));
        let mut assignment: Vec<usize> = (0..m).map(|i| i % k).collect();
        for i in 0..m {
            let j = rng.random_range(0..m);
            assignment.swap(i, j);
        }
        let partition = Partition::new(assignment.clone(), k).unwrap();
        let s = silhouette(&points, &partition).unwrap();
        sil_ok &= (-1.0..=1.0).contains(&s);
        let other: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
        ari_ok &= adjusted_rand_index(&assignment, &other).unwrap() <= 1.0 + 1e-12;
    }
    check(
        "validity-score bounds",
        sil_ok && ari_ok,
        "silhouette in [-1,1] and ARI <= 1 on 1000 random partitions".into(),
    );
}
