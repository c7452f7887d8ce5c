use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use voxmi::bench::{synth_scene, SceneSpec};
use voxmi::geometry::{apply_transform, euler_to_transform};
use voxmi::mi::JointHistogram;
use voxmi::scan_io::{format_kitti_pose_line, save_cloud};
use voxmi::{EulerPose, Point3, PointCloud};

fn voxmi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxmi")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn scene() -> PointCloud {
    synth_scene(&SceneSpec { seed: 4, n_points: 20_000, n_structures: 25, ..SceneSpec::default() }).unwrap()
}

/// Writes the scene as `a.<ext>` and, when given, the scene seen from `truth` as `b.<ext>`.
fn write_pair(dir: &TempDir, ext: &str, truth: Option<&EulerPose>) -> (PathBuf, PathBuf) {
    let a = scene();
    let pa = dir.path().join(format!("a.{ext}"));
    save_cloud(&pa, &a, None).unwrap();
    let pb = dir.path().join(format!("b.{ext}"));
    let b = match truth {
        Some(t) => apply_transform(&a, &euler_to_transform(t).unwrap().inverse()),
        None => a,
    };
    save_cloud(&pb, &b, None).unwrap();
    (pa, pb)
}

fn sweep_rows(text: &str) -> Vec<(f64, Option<f64>)> {
    text.lines()
        .skip(1)
        .map(|l| {
            let (v, m) = l.split_once(',').unwrap();
            (v.parse().unwrap(), m.parse().ok())
        })
        .collect()
}

fn argmax(rows: &[(f64, Option<f64>)]) -> f64 {
    rows.iter()
        .filter_map(|(v, m)| m.map(|m| (*v, m)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

#[test]
fn synth_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let p1 = dir.path().join("one.xyz");
    let p2 = dir.path().join("two.xyz");
    for p in [&p1, &p2] {
        let o = voxmi(&["synth", "--seed", "1", "--points", "5000", "--out", s(p)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = fs::read(&p1).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, fs::read(&p2).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 5000);
}

#[test]
fn self_alignment_of_bin_scan() {
    let dir = TempDir::new().unwrap();
    let (a, _) = write_pair(&dir, "bin", None);
    let report = dir.path().join("report.json");
    let o = voxmi(&["align", s(&a), s(&a), "--init", "0 0 0 0 0 0", "--out", s(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("final MI"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let pose = &json["estimated_pose"];
    for k in ["tx", "ty", "tz"] {
        assert!(pose[k].as_f64().unwrap().abs() < 0.05, "{k} = {}", pose[k]);
    }
    for k in ["rx", "ry", "rz"] {
        assert!(pose[k].as_f64().unwrap().to_degrees().abs() < 0.5, "{k} = {}", pose[k]);
    }
    assert_eq!(json["kitti_pose"].as_str().unwrap().split_whitespace().count(), 12);
}

#[test]
fn missing_file_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nowhere.bin");
    let o = voxmi(&["align", s(&missing), s(&missing)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("nowhere.bin"), "{}", stderr(&o));
}

#[test]
fn bad_arguments_are_input_errors() {
    assert_eq!(code(&voxmi(&["align", "--no-such-flag"])), 1);
    let dir = TempDir::new().unwrap();
    let (a, _) = write_pair(&dir, "xyz", None);
    assert_eq!(code(&voxmi(&["align", s(&a), s(&a), "--init", "1 2 3"])), 1);
    assert_eq!(code(&voxmi(&["align", s(&a), s(&a), "--simplex", "1 1 1"])), 1);
    assert_eq!(code(&voxmi(&["histogram", s(&a), s(&a), "--bins", "0"])), 1);
}

#[test]
fn disjoint_scans_exit_with_no_overlap() {
    let dir = TempDir::new().unwrap();
    let near = PointCloud::from_points((0..100).map(|i| Point3::new(i as f64 * 0.2, 0.3, 0.1)).collect());
    let far = PointCloud::from_points((0..100).map(|i| Point3::new(10_000.0 + i as f64 * 0.2, 0.3, 0.1)).collect());
    let (pa, pb) = (dir.path().join("near.xyz"), dir.path().join("far.xyz"));
    save_cloud(&pa, &near, None).unwrap();
    save_cloud(&pb, &far, None).unwrap();
    let o = voxmi(&["align", s(&pb), s(&pa)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn yaw_sweep_finds_true_heading() {
    let dir = TempDir::new().unwrap();
    let truth = EulerPose::new(0.0, 0.0, 0.0, 0.0, 0.0, 10f64.to_radians());
    let (a, b) = write_pair(&dir, "xyz", Some(&truth));
    let o = voxmi(&["sweep", s(&b), s(&a), "--axis", "rz", "--range", "-20,20", "--steps", "81"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = sweep_rows(&String::from_utf8(o.stdout).unwrap());
    assert_eq!(rows.len(), 81);
    assert!((argmax(&rows) - 10.0).abs() <= 0.5 + 1e-9);
}

#[test]
fn tx_sweep_on_identical_scans_peaks_at_zero() {
    let dir = TempDir::new().unwrap();
    let (a, _) = write_pair(&dir, "ply", None);
    let out = dir.path().join("sweep.csv");
    let o = voxmi(&["sweep", s(&a), s(&a), "--axis", "tx", "--range", "-5,5", "--steps", "41", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = sweep_rows(&fs::read_to_string(&out).unwrap());
    assert!(argmax(&rows).abs() <= 0.25);

    let o = voxmi(&["sweep", s(&a), s(&a), "--axis", "tx", "--range", "0,3", "--steps", "1"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 2);
}

fn histogram_at(a: &Path, b: &Path, init: &str, extra: &[&str]) -> String {
    let mut args = vec!["histogram", s(b), s(a), "--init", init];
    args.extend_from_slice(extra);
    let o = voxmi(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn histogram_dumps() {
    let dir = TempDir::new().unwrap();
    let truth = EulerPose::new(3.0, -2.0, 0.0, 0.0, 0.0, 8f64.to_radians());
    let (a, b) = write_pair(&dir, "xyz", Some(&truth));

    let same = histogram_at(&a, &a, "0 0 0 0 0 0", &["--phi", "off"]);
    assert!(same.lines().next().unwrap().contains("phi=omitted"));
    let (h, spec) = JointHistogram::read_csv(same.as_bytes()).unwrap();
    assert!(!h.includes_phi());
    assert_eq!(h.dim(), spec.bins);
    for i in 0..h.dim() {
        for j in 0..h.dim() {
            if i != j {
                assert_eq!(h.get(i, j), 0);
            }
        }
    }

    let before = histogram_at(&a, &b, "0 0 0 0 0 0", &[]);
    let after = histogram_at(&a, &b, "3 -2 0 0 0 8", &[]);
    let corr = |t: &str| JointHistogram::read_csv(t.as_bytes()).unwrap().0.occupied_correlation().unwrap();
    assert!(corr(&after) > corr(&before), "{} vs {}", corr(&after), corr(&before));
}

#[test]
fn init_from_kitti_pose_file() {
    let dir = TempDir::new().unwrap();
    let truth = EulerPose::new(1.5, 1.0, 0.0, 0.0, 0.0, 4f64.to_radians());
    let (a, b) = write_pair(&dir, "xyz", Some(&truth));
    let init = dir.path().join("init.txt");
    fs::write(&init, format_kitti_pose_line(&euler_to_transform(&truth).unwrap()) + "\n").unwrap();
    let literal = histogram_at(&a, &b, "1.5 1 0 0 0 4", &[]);
    let from_file = histogram_at(&a, &b, s(&init), &[]);
    assert_eq!(literal, from_file);
}

#[test]
fn benchmark_writes_both_csvs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("bench");
    let o = voxmi(&[
        "benchmark", "--tmags", "1,3", "--trials", "2", "--scenes", "1", "--points", "8000", "--jobs", "1",
        "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trials = fs::read_to_string(out.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 5);
    assert_eq!(fs::read_to_string(out.join("summary.csv")).unwrap().lines().count(), 3);

    let empty = dir.path().join("empty");
    let o = voxmi(&["benchmark", "--out", s(&empty)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(empty.join("trials.csv")).unwrap(),
        "magnitude,trial,init_terr_m,final_terr_m,init_rerr_deg,final_rerr_deg,geodesic_rerr_deg,iters,wall_s,converged\n"
    );
}

#[test]
fn log_directory_override() {
    let dir = TempDir::new().unwrap();
    let logs = dir.path().join("logs");
    let out = dir.path().join("s.xyz");
    let o = Command::new(env!("CARGO_BIN_EXE_voxmi"))
        .args(["-v", "synth", "--points", "100", "--out", s(&out)])
        .env("VOXMI_LOG_DIR", &logs)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = fs::read_to_string(logs.join("voxmi.log")).unwrap();
    assert!(log.contains("wrote 100 points"), "{log}");
}
