use voxmi::bench::{
    read_summary_csv, read_trials_csv, run_benchmark, summarize, synth_scene, write_summary_csv,
    write_trials_csv, BenchmarkCase, PerturbationSpec, SceneSpec,
};
use voxmi::voxel::{voxelize, voxelize_with};
use voxmi::{AlignmentConfig, Execution, GridSpec, Point3, PointCloud, RigidTransform};

fn self_case() -> BenchmarkCase {
    let scene = synth_scene(&SceneSpec { seed: 8, ..SceneSpec::default() }).unwrap();
    BenchmarkCase {
        label: "self".into(),
        scan_a: scene.clone(),
        scan_b: scene,
        truth: RigidTransform::identity(),
    }
}

#[test]
fn self_alignment_batch_recovers() {
    let pert = PerturbationSpec {
        translation_magnitudes: vec![1.0],
        rotation_magnitudes: vec![],
        trials_per_magnitude: 3,
        seed: 3,
    };
    let recs = run_benchmark(&[self_case()], &pert, &AlignmentConfig::default(), 1).unwrap();
    assert_eq!(recs.len(), 3);
    for r in &recs {
        assert!(r.final_terr_m < 0.5, "{r:?}");
        assert!(r.error.is_none());
    }

    let mut trials = Vec::new();
    write_trials_csv(&recs, &mut trials).unwrap();
    let text = String::from_utf8(trials.clone()).unwrap();
    assert!(text.starts_with(
        "magnitude,trial,init_terr_m,final_terr_m,init_rerr_deg,final_rerr_deg,geodesic_rerr_deg,iters,wall_s,converged\n"
    ));
    assert_eq!(text.lines().count(), 4);

    let mut summary = Vec::new();
    write_summary_csv(&recs, &mut summary).unwrap();
    let emitted = read_summary_csv(&summary[..]).unwrap();
    assert_eq!(emitted, summarize(&read_trials_csv(&trials[..]).unwrap()));
    let mean = recs.iter().map(|r| r.final_terr_m).sum::<f64>() / 3.0;
    assert!((emitted[0].columns[1].mean - mean).abs() < 1e-15);
}

#[test]
fn batch_is_deterministic_apart_from_timing() {
    let pert = PerturbationSpec {
        translation_magnitudes: vec![2.0],
        rotation_magnitudes: vec![4.0],
        trials_per_magnitude: 2,
        seed: 5,
    };
    let case = self_case();
    let strip = |v: Vec<voxmi::bench::TrialRecord>| {
        v.into_iter()
            .map(|mut r| {
                r.wall_s = 0.0;
                r
            })
            .collect::<Vec<_>>()
    };
    let a = run_benchmark(std::slice::from_ref(&case), &pert, &AlignmentConfig::default(), 1).unwrap();
    let b = run_benchmark(std::slice::from_ref(&case), &pert, &AlignmentConfig::default(), 3).unwrap();
    assert_eq!(strip(a), strip(b));
}

#[test]
fn failed_trials_become_rows() {
    let a = PointCloud::from_points((0..50).map(|i| Point3::new(i as f64 * 0.1, 0.0, 0.0)).collect());
    let b = PointCloud::from_points(vec![Point3::new(1e5, 0.0, 0.0)]);
    let case = BenchmarkCase { label: "disjoint".into(), scan_a: a, scan_b: b, truth: RigidTransform::identity() };
    let pert = PerturbationSpec {
        translation_magnitudes: vec![1.0],
        rotation_magnitudes: vec![],
        trials_per_magnitude: 2,
        seed: 0,
    };
    let recs = run_benchmark(&[case], &pert, &AlignmentConfig::default(), 1).unwrap();
    assert_eq!(recs.len(), 2);
    assert!(recs.iter().all(|r| !r.converged && r.error.is_some() && r.final_terr_m == r.init_terr_m));
}

#[test]
fn sparse_clouds_voxelize_like_dense_ones() {
    // two far-apart clusters force the sorted bucketing path
    let mut pts: Vec<Point3> = (0..300).map(|i| Point3::new((i % 17) as f64 * 0.3, (i % 5) as f64, 0.1)).collect();
    let far: Vec<Point3> = pts.iter().map(|p| Point3::new(p.x + 500_000.0, p.y, p.z)).collect();
    pts.extend(far);
    let cloud = PointCloud::from_points(pts);
    let grid = GridSpec::default();
    let serial = voxelize(&cloud, &grid).unwrap();
    assert_eq!(serial, voxelize_with(&cloud, &grid, Execution::Parallel).unwrap());
    let near = PointCloud::from_points(cloud.points()[..300].to_vec());
    let dense = voxelize(&near, &grid).unwrap();
    assert_eq!(&serial.keys()[..dense.len()], dense.keys());
    for i in 0..dense.len() {
        assert_eq!(serial.members(i), dense.members(i));
    }
    assert_eq!(serial.len(), 2 * dense.len());
}
