use pcc_core::autodiff::{ParamStore, Tape, Tensor};
use pcc_core::camera::{elevation_deg, Camera};
use pcc_core::cloud::{Point3, PointCloud};
use pcc_core::eigen::eigen_sym3;
use pcc_core::encodings::{curvature_encoding, estimate_normals, position_encoding, Orientation};
use pcc_core::knn::{brute_force_knn, KnnIndex};
use pcc_core::man::Discriminator;
use pcc_core::metrics::{ucd, uhd};
use pcc_core::prn::{retrieve_top_l, Prn, PrnConfig};
use pcc_core::render::{rasterize, SplatConfig};
use pcc_core::shapes::{generate_sample, Category, DatasetConfig, Split};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn point() -> impl Strategy<Value = Point3> {
    prop::array::uniform3(-1.0f64..1.0)
}

fn cloud(min: usize, max: usize) -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(point(), min..max)
}

/// Points on an ellipsoid with semi-axes in [0.5, 1].
fn ellipsoid(n: usize, axes: [f64; 3], seed: u64) -> Vec<Point3> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z).sqrt();
            [axes[0] * s * t.cos(), axes[1] * s * t.sin(), axes[2] * z]
        })
        .collect()
}

fn rotation(a: f64, b: f64, c: f64) -> [[f64; 3]; 3] {
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sc, cc) = c.sin_cos();
    let rz = [[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]];
    let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cc, -sc], [0.0, sc, cc]];
    mat_mul(&mat_mul(&rz, &ry), &rx)
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

fn transform(points: &[Point3], r: &[[f64; 3]; 3], s: f64, t: Point3) -> Vec<Point3> {
    points
        .iter()
        .map(|p| {
            let mut q = [0.0; 3];
            for i in 0..3 {
                q[i] = s * (r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2]) + t[i];
            }
            q
        })
        .collect()
}

fn front_camera(size: usize) -> Camera {
    Camera::look_at_default([2.0, 0.0, 0.0], [0.0; 3], [0.0, 0.0, 1.0], size, size).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..9, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-30.0..30.0)).collect();
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(&[rows, cols], data).unwrap());
        let s = tape.softmax(x, 1).unwrap();
        let v = tape.value(s).data().to_vec();
        for r in 0..rows {
            let row = &v[r * cols..(r + 1) * cols];
            prop_assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_linear_in_the_loss(data in prop::collection::vec(-2.0f64..2.0, 1..12), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let n = data.len();
        let grad_of = |scale_f: f64, scale_g: f64| {
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(Tensor::from_vec(&[n], data.clone()).unwrap(), true);
            let sq = tape.square(x).unwrap();
            let f = tape.sum_all(sq);
            let th = tape.tanh(x);
            let g = tape.sum_all(th);
            let f = tape.mul_scalar(f, scale_f);
            let g = tape.mul_scalar(g, scale_g);
            let loss = tape.add(f, g).unwrap();
            tape.backward(loss).unwrap().get(x).unwrap().to_vec()
        };
        let gf = grad_of(1.0, 0.0);
        let gg = grad_of(0.0, 1.0);
        let combined = grad_of(a, b);
        for i in 0..n {
            prop_assert!((combined[i] - (a * gf[i] + b * gg[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn knn_matches_brute_force(points in cloud(2, 200), query in point(), k in 1usize..16) {
        let k = k.min(points.len());
        let index = KnnIndex::build(&points).unwrap();
        let fast = index.knn(query, k, None).unwrap();
        let slow = brute_force_knn(&points, query, k, None).unwrap();
        prop_assert_eq!(&fast, &slow);
        prop_assert!(fast.windows(2).all(|w| w[0].distance <= w[1].distance));
        let again = KnnIndex::build(&points).unwrap().knn(query, k, None).unwrap();
        prop_assert_eq!(fast, again);
    }

    #[test]
    fn knn_exclusion_skips_the_query(points in cloud(3, 120), k in 1usize..8) {
        let k = k.min(points.len() - 1);
        let index = KnnIndex::build(&points).unwrap();
        for (i, p) in points.iter().enumerate().take(10) {
            let nb = index.knn(*p, k, Some(i)).unwrap();
            prop_assert!(nb.iter().all(|n| n.index != i));
            prop_assert_eq!(nb, brute_force_knn(&points, *p, k, Some(i)).unwrap());
        }
    }

    #[test]
    fn position_encoding_is_rigid_invariant_and_scale_equivariant(
        points in cloud(20, 120),
        angles in prop::array::uniform3(0.0f64..6.3),
        t in point(),
        s in 0.2f64..5.0,
        k in 1usize..12,
    ) {
        let base = position_encoding(&PointCloud::new(points.clone()).unwrap(), k).unwrap();
        let moved = transform(&points, &rotation(angles[0], angles[1], angles[2]), s, t);
        let enc = position_encoding(&PointCloud::new(moved).unwrap(), k).unwrap();
        for (a, b) in base.values.iter().zip(&enc.values) {
            prop_assert!((s * a - b).abs() < 1e-9 * (1.0 + s * a));
        }
    }

    #[test]
    fn curvature_is_invariant_under_similarity(
        axes in prop::array::uniform3(0.5f64..1.0),
        seed in any::<u64>(),
        angles in prop::array::uniform3(0.0f64..6.3),
        t in point(),
        s in 0.2f64..5.0,
    ) {
        let k = 12;
        let points = ellipsoid(300, axes, seed);
        let curv = |pts: Vec<Point3>| {
            let c = PointCloud::new(pts).unwrap();
            let n = estimate_normals(&c, k, Orientation::Centroid).unwrap();
            curvature_encoding(&c, &n, k, 1e-8).unwrap().values
        };
        let base = curv(points.clone());
        let moved = curv(transform(&points, &rotation(angles[0], angles[1], angles[2]), s, t));
        for (a, b) in base.iter().zip(&moved) {
            prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn rendered_maps_stay_in_range(points in prop::collection::vec(prop::array::uniform3(-0.5f64..0.5), 1..200), r in 0.01f64..0.1) {
        let cam = front_camera(32);
        let splat = SplatConfig::default().with_radius(r);
        let raster = rasterize(&points, &cam, &splat).unwrap();
        prop_assert!(raster.silhouette(splat.gamma).values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!(raster.depth().values.iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn rendering_ignores_point_order(points in prop::collection::vec(prop::array::uniform3(-0.5f64..0.5), 2..150), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let cam = front_camera(32);
        let splat = SplatConfig::default().with_radius(0.05);
        let mut shuffled = points.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = rasterize(&points, &cam, &splat).unwrap();
        let b = rasterize(&shuffled, &cam, &splat).unwrap();
        let (da, db) = (a.depth().values, b.depth().values);
        for (x, y) in da.iter().zip(&db) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let (sa, sb) = (a.silhouette(splat.gamma).values, b.silhouette(splat.gamma).values);
        for (x, y) in sa.iter().zip(&sb) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn pushing_points_along_their_rays_scales_depth(points in prop::collection::vec(prop::array::uniform3(-0.3f64..0.3), 1..100), grow in 0.01f64..0.5) {
        let cam = front_camera(32);
        let eye = cam.eye();
        let splat = SplatConfig::default().with_radius(0.05);
        let near = rasterize(&points, &cam, &splat).unwrap().depth().values;
        let far_pts: Vec<Point3> = points
            .iter()
            .map(|p| [0, 1, 2].map(|a| eye[a] + (1.0 + grow) * (p[a] - eye[a])))
            .collect();
        let far = rasterize(&far_pts, &cam, &splat).unwrap().depth().values;
        for (a, b) in near.iter().zip(&far) {
            prop_assert_eq!(*a > 0.0, *b > 0.0);
            prop_assert!((b - (1.0 + grow) * a).abs() < 1e-9);
            prop_assert!(*b >= *a);
        }
    }

    #[test]
    fn metric_properties(a in cloud(1, 60), b in cloud(1, 60), s in 0.1f64..10.0) {
        prop_assert_eq!(ucd(&a, &a, true).unwrap(), 0.0);
        prop_assert_eq!(uhd(&a, &a).unwrap(), 0.0);
        let d = ucd(&a, &b, false).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!(uhd(&a, &b).unwrap() >= d);
        let cd = ucd(&a, &b, true).unwrap() + ucd(&b, &a, true).unwrap();
        let cd_rev = ucd(&b, &a, true).unwrap() + ucd(&a, &b, true).unwrap();
        prop_assert!((cd - cd_rev).abs() < 1e-15);
        let sa: Vec<Point3> = a.iter().map(|p| [p[0] * s, p[1] * s, p[2] * s]).collect();
        let sb: Vec<Point3> = b.iter().map(|p| [p[0] * s, p[1] * s, p[2] * s]).collect();
        let scaled = ucd(&sa, &sb, true).unwrap();
        prop_assert!((scaled - s * s * ucd(&a, &b, true).unwrap()).abs() < 1e-9 * (1.0 + scaled));
        let uhd_scaled = uhd(&sa, &sb).unwrap();
        prop_assert!((uhd_scaled - s * uhd(&a, &b).unwrap()).abs() < 1e-9 * (1.0 + uhd_scaled));
    }

    #[test]
    fn ucd_is_zero_only_for_subsets(a in cloud(1, 40), extra in point()) {
        let mut b = a.clone();
        b.push(extra);
        prop_assert_eq!(ucd(&a, &b, true).unwrap(), 0.0);
        let far = vec![[5.0, 5.0, 5.0]];
        prop_assert!(ucd(&far, &a, true).unwrap() > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn eigen_decomposition_reconstructs(m in prop::array::uniform6(-10.0f64..10.0)) {
        let a = [[m[0], m[1], m[2]], [m[1], m[3], m[4]], [m[2], m[4], m[5]]];
        let e = eigen_sym3(&a).unwrap();
        let scale = a.iter().flatten().fold(1.0f64, |x, v| x.max(v.abs()));
        prop_assert!(e.values[0] <= e.values[1] && e.values[1] <= e.values[2]);
        for (lambda, v) in e.values.iter().zip(&e.vectors) {
            let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            prop_assert!((len - 1.0).abs() < 1e-10);
            for i in 0..3 {
                let av = a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2];
                prop_assert!((av - lambda * v[i]).abs() < 1e-9 * scale);
            }
        }
    }
}

fn small_prn() -> (Prn, ParamStore<f64>) {
    let cfg = PrnConfig {
        n_in: 24,
        n_coarse: 8,
        m_out: 16,
        l_retrieve: 4,
        global_dim: 16,
        refine_hidden: 16,
        ..PrnConfig::default()
    };
    let mut store = ParamStore::new();
    let prn = Prn::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    (prn, store)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_rows_are_distributions(f_in in prop::collection::vec(0.0f64..1.0, 24), f_c in prop::collection::vec(0.0f64..1.0, 8), l in 1usize..10) {
        let (prn, store) = small_prn();
        let mut tape = Tape::<f64>::new();
        let p = store.bind(&mut tape, false);
        let w = prn.position_head.weights(&mut tape, &p, &f_in, &f_c).unwrap();
        let vals = tape.value(w).data().to_vec();
        for r in 0..8 {
            let row = &vals[r * 24..(r + 1) * 24];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let got = retrieve_top_l(&mut tape, w, &f_in, l).unwrap();
        for r in 0..8 {
            let row = &vals[r * 24..(r + 1) * 24];
            let mut order: Vec<usize> = (0..24).collect();
            order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
            prop_assert_eq!(&got.source_indices[r * l..(r + 1) * l], &order[..l]);
            for j in 0..l {
                prop_assert_eq!(got.values[r * l + j], f_in[order[j]]);
            }
        }
    }

    #[test]
    fn global_feature_ignores_point_order(points in prop::collection::vec(point(), 24), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let (prn, store) = small_prn();
        let feature = |pts: &[Point3]| {
            let mut tape = Tape::<f64>::new();
            let p = store.bind(&mut tape, false);
            let flat: Vec<f64> = pts.iter().flatten().copied().collect();
            let x = tape.constant(Tensor::from_vec(&[pts.len(), 3], flat).unwrap());
            let g = prn.encode_global(&mut tape, &p, x).unwrap();
            tape.value(g).data().to_vec()
        };
        let mut shuffled = points.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (a, b) = (feature(&points), feature(&shuffled));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn discriminator_scores_one_per_map(batch in 1usize..4, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new();
        let d = Discriminator::new(&mut store, 32, 32, &mut rng).unwrap();
        let maps: Vec<Vec<f64>> = (0..batch).map(|_| (0..32 * 32).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let scores = d.score(&store, &maps).unwrap();
        prop_assert_eq!(scores.len(), batch);
        prop_assert!(scores.iter().all(|s| s.is_finite()));
    }
}

#[test]
fn dataset_viewpoints_stay_within_elevation_range() {
    let cfg = DatasetConfig {
        train: 12,
        val: 0,
        test: 0,
        m_gt: 512,
        ..DatasetConfig::default()
    };
    for cat in Category::ALL {
        for i in 0..cfg.train {
            let s = generate_sample(cat, Split::Train, i, &cfg).unwrap();
            let e = elevation_deg(&s.scan.camera);
            assert!((-30.0 - 1e-9..=30.0 + 1e-9).contains(&e), "{e}");
            assert!(s.scan.partial.positions().iter().flatten().all(|v| v.is_finite()));
        }
    }
}
