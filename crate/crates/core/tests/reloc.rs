use gsreloc::features::FeatureMatch;
use gsreloc::features::{oracle_match, OracleConfig, OracleMatcher, ReferenceMatcher};
use gsreloc::image::Image;
use gsreloc::pnp::{solve_pnp, PnpConfig};
use gsreloc::reloc::{
    build_anchor_db, global_descriptor, lift_to_3d, load_anchor_db, relocalize, retrieve, save_anchor_db,
    AnchorDatabase, Query, RelocConfig, RelocError, RelocStatus,
};
use gsreloc::render::RenderedView;
use gsreloc::scene::synthetic::perturb_pose;
use gsreloc::scene::{
    generate_synthetic_scene, pose_delta, CameraIntrinsics, Pose, SplatScene, SyntheticConfig, Trajectory,
};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn world(seed: u64) -> (SplatScene, Trajectory, AnchorDatabase, CameraIntrinsics) {
    let cam = CameraIntrinsics::default();
    let (scene, traj) = generate_synthetic_scene(seed, &SyntheticConfig::default()).unwrap();
    let db = build_anchor_db(&scene, &traj, &cam, 3.0).unwrap();
    (scene, traj, db, cam)
}

fn query_image(scene: &SplatScene, pose: &Pose, cam: &CameraIntrinsics) -> Image {
    RenderedView::render(scene, pose, cam).rgb.quantize_8bit()
}

#[test]
fn anchors_subsample_the_trajectory_by_spacing() {
    let (_, traj, db, _) = world(1);
    assert_eq!(traj.len(), 10);
    let ids: Vec<u64> = db.anchors.iter().map(|a| a.id).collect();
    assert_eq!(ids, vec![0, 3, 6, 9]);
    for a in &db.anchors {
        assert_eq!(a.pose(), traj.get(a.id).unwrap());
        assert!(
            a.view.valid_depth_fraction() >= 0.2,
            "{}",
            a.view.valid_depth_fraction()
        );
    }
}

#[test]
fn invalid_spacing_and_short_trajectories_are_rejected() {
    let cam = CameraIntrinsics::default();
    let (scene, traj) = generate_synthetic_scene(2, &SyntheticConfig::default()).unwrap();
    assert!(matches!(
        build_anchor_db(&scene, &traj, &cam, 0.0),
        Err(RelocError::InvalidSpacing(_))
    ));
    assert!(matches!(
        build_anchor_db(&scene, &traj, &cam, 20.0),
        Err(RelocError::TrajectoryTooShort { .. })
    ));
}

#[test]
fn global_descriptor_properties() {
    let (scene, traj, _, cam) = world(3);
    let img = query_image(&scene, traj.get(4).unwrap(), &cam);
    let a = global_descriptor(&img);
    assert_eq!(a, global_descriptor(&img));
    let dim = global_descriptor(&img.scaled(0.5));
    let cos: f64 = a.iter().zip(&dim).map(|(x, y)| x * y).sum();
    assert!(cos > 0.95, "{cos}");

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let data: Vec<f32> = (0..48 * 32 * 3).map(|_| rng.random_range(0.0..1.0)).collect();
        let d = global_descriptor(&Image::from_vec(48, 32, 3, data));
        assert_eq!(d.len(), 192);
        let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

#[test]
fn retrieval_finds_self_and_nearby_anchor() {
    let (scene, _, db, cam) = world(0);
    for a in &db.anchors {
        assert_eq!(retrieve(&a.view.rgb, &db).unwrap().id, a.id);
    }
    for a in &db.anchors {
        for sign in [-1.0, 1.0] {
            let pose = Pose::new(
                *a.pose().rotation(),
                a.pose().translation() + Vector3::x() * (sign * 0.4 * db.spacing),
            );
            let q = query_image(&scene, &pose, &cam);
            let got = retrieve(&q, &db).unwrap();
            // brute-force similarity over all anchors
            let qd = global_descriptor(&q);
            let best = db.anchors.iter().map(|b| (cosine(&qd, &b.descriptor), b.id)).fold(
                (f64::NEG_INFINITY, u64::MAX),
                |acc, x| if x.0 > acc.0 { x } else { acc },
            );
            assert_eq!(got.id, best.1);
            assert_eq!(got.id, a.id, "offset {sign} from anchor {}", a.id);
        }
    }
    let empty = AnchorDatabase {
        camera: cam,
        spacing: 3.0,
        anchors: vec![],
    };
    assert!(matches!(
        retrieve(&db.anchors[0].view.rgb, &empty),
        Err(RelocError::EmptyDatabase)
    ));
}

fn flat_view(cam: &CameraIntrinsics, depth: f32, pose: Pose) -> RenderedView {
    RenderedView {
        pose,
        rgb: Image::new(cam.width, cam.height, 3),
        depth: Image::filled(cam.width, cam.height, 1, depth),
    }
}

fn m(q: Vector2<f64>, r: Vector2<f64>) -> FeatureMatch {
    FeatureMatch {
        pixel_query: q,
        pixel_ref: r,
        confidence: 1.0,
    }
}

#[test]
fn lifting_back_projects_through_depth_and_pose() {
    let cam = CameraIntrinsics::default();
    let view = flat_view(&cam, 5.0, Pose::identity());
    let pp = Vector2::new(cam.cx, cam.cy);
    let c = lift_to_3d(&[m(pp, pp)], &view, &cam);
    assert_eq!(c.len(), 1);
    assert!((c[0].world_point - Vector3::new(0.0, 0.0, 5.0)).norm() < 1e-12);

    let pose = Pose::new(
        gsreloc::scene::axis_angle(Vector3::new(0.3, 1.0, 0.1), 0.7),
        Vector3::new(2.0, -1.0, 4.0),
    );
    let view = flat_view(&cam, 7.25, pose);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let pc = cam.back_project(
            &Vector2::new(rng.random_range(0.0..319.0), rng.random_range(0.0..239.0)),
            7.25,
        );
        let pw = pose.transform_point(&pc);
        let pixel = cam.project(&pose.inverse_transform_point(&pw));
        let c = lift_to_3d(&[m(pixel, pixel)], &view, &cam);
        assert!((c[0].world_point - pw).norm() < 1e-6);
    }

    let mut sky = flat_view(&cam, 5.0, Pose::identity());
    sky.depth.set(10, 10, 0, 0.0);
    let ms = [
        m(pp, Vector2::new(10.0, 10.0)),
        m(pp, Vector2::new(9.5, 10.0)),
        m(pp, Vector2::new(11.0, 10.0)),
    ];
    let lifted = lift_to_3d(&ms, &sky, &cam);
    assert_eq!(lifted.len(), 1, "sky pixel and its bilinear neighbourhood are dropped");
}

#[test]
fn noise_free_matches_at_truth_are_a_fixed_point() {
    let (scene, traj, _, cam) = world(5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..5 {
        let truth = perturb_pose(traj.get(2 * k).unwrap(), 0.3, 0.05, &mut rng);
        let view = RenderedView::render(&scene, &truth, &cam);
        let cfg = OracleConfig {
            pixel_noise_sigma: 0.0,
            ..Default::default()
        };
        let out = oracle_match(&truth, &view, &cam, &cfg, k, 1).unwrap();
        let corrs = lift_to_3d(&out.matches, &view, &cam);
        assert_eq!(corrs.len(), out.matches.len());
        let rep = solve_pnp(&corrs, &cam, &PnpConfig::default()).unwrap();
        let (dt, dr) = pose_delta(&rep.pose, &truth);
        assert!(dt < 1e-6 && dr < 1e-6, "{dt} {dr}");
    }
}

#[test]
fn query_at_an_anchor_converges_immediately() {
    let (scene, _, db, cam) = world(6);
    let anchor = &db.anchors[1];
    let img = anchor.view.rgb.clone();
    let matcher = OracleMatcher {
        config: OracleConfig {
            pixel_noise_sigma: 0.0,
            ..Default::default()
        },
    };
    let q = Query {
        id: 0,
        image: &img,
        pose_gt: Some(anchor.pose()),
    };
    let res = relocalize(&q, &db, &scene, &cam, &matcher, &RelocConfig::default()).unwrap();
    assert_eq!(res.status, RelocStatus::Converged);
    assert_eq!(res.iterations, 1);
    assert_eq!(res.anchor_id, anchor.id);
    let (dt, dr) = pose_delta(&res.pose, anchor.pose());
    assert!(dt < 1e-6 && dr < 1e-6);
}

#[test]
fn offset_queries_converge_with_the_oracle() {
    let cfg = RelocConfig::default();
    for seed in 0..5u64 {
        let (scene, _, db, cam) = world(100 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchor = &db.anchors[rng.random_range(0..db.anchors.len())];
        let truth = perturb_pose(anchor.pose(), 0.5, 5f64.to_radians(), &mut rng);
        let img = query_image(&scene, &truth, &cam);
        let q = Query {
            id: seed,
            image: &img,
            pose_gt: Some(&truth),
        };
        let matcher = OracleMatcher {
            config: OracleConfig {
                seed,
                ..Default::default()
            },
        };
        let res = relocalize(&q, &db, &scene, &cam, &matcher, &cfg).unwrap();
        assert_eq!(res.status, RelocStatus::Converged, "{:?}", res.error);
        assert!(res.iterations <= 10);
        let (dt, _) = pose_delta(&res.pose, &truth);
        assert!(dt < 0.02, "seed {seed}: {dt}");

        let last = res.traces.last().unwrap();
        let within = last.translation_delta.unwrap() <= cfg.trans_eps && last.rotation_delta.unwrap() <= cfg.rot_eps;
        assert!(within);
        for (i, t) in res.traces.iter().enumerate() {
            assert_eq!(t.iteration, i + 1);
            if i + 1 < res.traces.len() {
                let early = t.translation_delta.unwrap() <= cfg.trans_eps && t.rotation_delta.unwrap() <= cfg.rot_eps;
                assert!(!early, "loop continued past convergence");
            }
        }
    }
}

#[test]
fn featureless_query_fails_with_insufficient_matches() {
    let (scene, _, db, cam) = world(7);
    let img = Image::rgb_filled(cam.width, cam.height, [0.5, 0.5, 0.5]);
    let q = Query {
        id: 3,
        image: &img,
        pose_gt: None,
    };
    let res = relocalize(
        &q,
        &db,
        &scene,
        &cam,
        &ReferenceMatcher::default(),
        &RelocConfig::default(),
    )
    .unwrap();
    assert_eq!(res.status, RelocStatus::Failed);
    assert!(
        res.error.as_deref().unwrap().contains("insufficient matches"),
        "{:?}",
        res.error
    );
    assert_eq!(
        res.pose,
        *db.anchors.iter().find(|a| a.id == res.anchor_id).unwrap().pose()
    );
}

#[test]
fn camera_mismatch_is_an_error() {
    let (scene, _, db, cam) = world(8);
    let img = Image::rgb_filled(160, 120, [0.5, 0.5, 0.5]);
    let q = Query {
        id: 0,
        image: &img,
        pose_gt: None,
    };
    assert!(matches!(
        relocalize(
            &q,
            &db,
            &scene,
            &cam,
            &ReferenceMatcher::default(),
            &RelocConfig::default()
        ),
        Err(RelocError::CameraMismatch(_))
    ));
}

#[test]
fn anchor_database_round_trips_through_disk() {
    let (_, _, db, _) = world(9);
    let dir = tempfile::tempdir().unwrap();
    save_anchor_db(&db, dir.path()).unwrap();
    let back = load_anchor_db(dir.path()).unwrap();
    assert_eq!(back.camera, db.camera);
    assert_eq!(back.spacing, db.spacing);
    assert_eq!(back.anchors.len(), db.anchors.len());
    for (a, b) in db.anchors.iter().zip(&back.anchors) {
        assert_eq!(a.id, b.id);
        let (dt, dr) = pose_delta(a.pose(), b.pose());
        assert!(dt < 1e-12 && dr < 1e-12);
        assert_eq!(a.view.rgb, b.view.rgb);
        assert_eq!(a.view.depth, b.view.depth);
        assert_eq!(a.descriptor, b.descriptor);
    }
}

/// Translation error never grows by more than the oracle noise floor: each
/// step ends at or below max(previous error, trans_eps). Past the floor,
/// successive estimates are independent draws, so strict shrinkage is
/// reported but not required.
#[test]
fn oracle_iterations_contract() {
    let cfg = RelocConfig::default();
    let floor = cfg.trans_eps;
    let (mut steps, mut contracting, mut strict) = (0usize, 0usize, 0usize);
    let mut monotone_counts = 0;
    for seed in 0..50u64 {
        let (scene, _, db, cam) = world(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchor = &db.anchors[rng.random_range(0..db.anchors.len())];
        let truth = perturb_pose(anchor.pose(), 0.5, 5f64.to_radians(), &mut rng);
        let img = query_image(&scene, &truth, &cam);
        let q = Query {
            id: seed,
            image: &img,
            pose_gt: Some(&truth),
        };
        let matcher = OracleMatcher {
            config: OracleConfig {
                seed,
                ..Default::default()
            },
        };
        let res = relocalize(&q, &db, &scene, &cam, &matcher, &cfg).unwrap();

        // status is converged exactly when the last step is below both thresholds
        let last = res.traces.last().unwrap();
        let small = last.translation_delta.unwrap() <= cfg.trans_eps && last.rotation_delta.unwrap() <= cfg.rot_eps;
        assert_eq!(res.status == RelocStatus::Converged, small, "seed {seed}");

        let start = db.anchors.iter().find(|a| a.id == res.anchor_id).unwrap().pose();
        let mut errs = vec![pose_delta(start, &truth).0];
        errs.extend(res.traces.iter().map(|t| pose_delta(&t.pose, &truth).0));
        for w in errs.windows(2) {
            steps += 1;
            contracting += usize::from(w[1] <= w[0].max(floor));
            strict += usize::from(w[1] <= w[0]);
        }
        monotone_counts += usize::from(res.traces.windows(2).all(|w| w[1].match_count >= w[0].match_count));
    }
    eprintln!("contracting {contracting}/{steps}, strictly shrinking {strict}/{steps}, monotone match counts {monotone_counts}/50");
    assert!(contracting as f64 >= 0.9 * steps as f64, "{contracting}/{steps}");
    assert!(monotone_counts >= 45, "{monotone_counts}/50");
}
