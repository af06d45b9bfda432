mod common;

use std::fs;
use std::path::Path;

use radar_reloc::data::format::{read_poses, read_scan, write_poses, write_scan, DatasetManifest, ScanDtype, SequenceEntry, Split};
use radar_reloc::data::{
    generate_synthetic_dataset, load_dataset, loop_trajectory, make_windows, simulate_scan, simulate_sequence,
    window_starts, NoiseModel, ScanParams, SimWorld,
};
use radar_reloc::geometry::{CartesianSpec, PolarScan};
use radar_reloc::pose::{compose, Pose};
use radar_reloc::Error;
use rand::seq::SliceRandom;
use rand::Rng;

fn scan(seed: u64, ts: i64) -> PolarScan {
    let mut rng = common::rng(seed);
    let data = (0..16 * 12).map(|_| rng.gen_range(0.0f32..1.0)).collect();
    PolarScan::new(16, 12, data, 0.25, ts).unwrap()
}

/// One sequence of `n` scans at 100 ms spacing with poses shifted by `pose_offset_ns`.
fn write_fixture(root: &Path, n: usize, pose_offset_ns: i64, dtype: ScanDtype) -> (DatasetManifest, Vec<PolarScan>, Vec<Pose>) {
    let scans: Vec<PolarScan> = (0..n).map(|i| scan(i as u64, 1_000_000_000 + i as i64 * 100_000_000)).collect();
    let mut rng = common::rng(99);
    let poses: Vec<Pose> = scans
        .iter()
        .map(|s| common::random_pose(&mut rng, s.timestamp + pose_offset_ns))
        .collect();
    for s in &scans {
        write_scan(&root.join("a/scans"), s, dtype).unwrap();
    }
    write_poses(&root.join("a/poses.csv"), &poses).unwrap();
    let mut manifest = DatasetManifest::new(root);
    manifest.sequences.push(SequenceEntry {
        name: "a".into(),
        scan_dir: "a/scans".into(),
        pose_file: "a/poses.csv".into(),
        tag: "fixture".into(),
        split: Split::Train,
    });
    manifest.save().unwrap();
    (manifest, scans, poses)
}

#[test]
fn ten_scans_round_trip() {
    for dtype in [ScanDtype::F32, ScanDtype::U8] {
        let dir = tempfile::tempdir().unwrap();
        let (_, scans, poses) = write_fixture(dir.path(), 10, 0, dtype);
        let manifest = DatasetManifest::load(dir.path()).unwrap();
        let data = load_dataset(&manifest).unwrap();
        assert_eq!(data.counts(), vec![("a".to_string(), 10)]);
        let seq = &data.sequences[0];
        for ((f, s), p) in seq.frames.iter().zip(&scans).zip(&poses) {
            assert_eq!(f.scan.timestamp, s.timestamp);
            assert_eq!(f.pose, *p);
            let tol = if dtype == ScanDtype::U8 { 0.5 / 255.0 + 1e-6 } else { 0.0 };
            for (a, b) in f.scan.intensities().iter().zip(s.intensities()) {
                assert!((a - b).abs() <= tol, "{a} vs {b}");
            }
            assert_eq!(f.scan.range_resolution, s.range_resolution);
        }
    }
}

#[test]
fn pose_matching_respects_tolerance() {
    let tol = DatasetManifest::new(".").pose_tolerance_ns;
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _, poses) = write_fixture(dir.path(), 5, tol / 2, ScanDtype::F32);
    let data = load_dataset(&manifest).unwrap();
    assert_eq!(data.sequences[0].poses(), poses);

    let dir = tempfile::tempdir().unwrap();
    let (manifest, scans, _) = write_fixture(dir.path(), 5, 2 * tol, ScanDtype::F32);
    match load_dataset(&manifest) {
        Err(Error::MissingPose { timestamp_ns, .. }) => assert_eq!(timestamp_ns, scans[0].timestamp),
        other => panic!("expected a missing pose, got {other:?}"),
    }
}

#[test]
fn empty_scan_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _, _) = write_fixture(dir.path(), 3, 0, ScanDtype::F32);
    for e in fs::read_dir(dir.path().join("a/scans")).unwrap() {
        fs::remove_file(e.unwrap().path()).unwrap();
    }
    assert!(matches!(load_dataset(&manifest), Err(Error::EmptySequence(name)) if name == "a"));
}

#[test]
fn pose_file_order_does_not_matter() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _, poses) = write_fixture(dir.path(), 8, 0, ScanDtype::F32);
    let before = load_dataset(&manifest).unwrap();
    let text = fs::read_to_string(dir.path().join("a/poses.csv")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let header = lines.remove(0);
    lines.shuffle(&mut common::rng(5));
    let shuffled = std::iter::once(header).chain(lines).collect::<Vec<_>>().join("\n");
    fs::write(dir.path().join("a/poses.csv"), shuffled).unwrap();
    assert_eq!(read_poses(&dir.path().join("a/poses.csv")).unwrap(), poses);
    let after = load_dataset(&manifest).unwrap();
    assert_eq!(before, after);
}

#[test]
fn malformed_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("poses.csv");
    fs::write(&p, "timestamp_ns,px,py,pz,qu,qx,qy,qz\n1,0,0,0,2,0,0,0\n").unwrap();
    assert!(read_poses(&p).is_err());
    fs::write(&p, "1,0,0\n").unwrap();
    assert!(read_poses(&p).is_err());
    fs::write(dir.path().join("junk.npy"), b"not numpy").unwrap();
    assert!(read_scan(&dir.path().join("junk.npy")).is_err());
    assert!(DatasetManifest::load(dir.path().join("missing.toml")).is_err());
}

fn quiet_world(seed: u64) -> SimWorld {
    SimWorld::random(30, 30.0, 10.0, 2.0, seed)
}

#[test]
fn generated_dataset_matches_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let world = quiet_world(1);
    let traj = loop_trajectory([0.0, 0.0], 10.0, 16, 16, 0, 250_000_000);
    let params = ScanParams::desk();
    let manifest = generate_synthetic_dataset(&world, &traj, &params, 7, dir.path()).unwrap();
    let loaded = load_dataset(&DatasetManifest::load(manifest.root.join("manifest.toml")).unwrap()).unwrap();
    let direct = simulate_sequence(&world, &traj, &params, 7).unwrap();
    assert_eq!(loaded.sequences.len(), 1);
    assert_eq!(loaded.sequences[0].frames, direct);
    assert!(generate_synthetic_dataset(&world, &[], &params, 7, dir.path()).is_err());
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_seed_writes_identical_files() {
    let mut world = quiet_world(2).with_random_dynamics(2, 30.0, 3);
    world.noise = NoiseModel::moderate();
    let traj = loop_trajectory([0.0, 0.0], 10.0, 12, 12, 0, 250_000_000);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_synthetic_dataset(&world, &traj, &ScanParams::desk(), 11, a.path()).unwrap();
    generate_synthetic_dataset(&world, &traj, &ScanParams::desk(), 11, b.path()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 12 * 2 + 2);
    assert!(ta == tb);
}

#[test]
fn revisited_poses_give_identical_scans() {
    let world = quiet_world(3);
    let traj = loop_trajectory([0.0, 0.0], 10.0, 20, 40, 0, 250_000_000);
    let frames = simulate_sequence(&world, &traj, &ScanParams::desk(), 4).unwrap();
    for i in 0..20 {
        assert_eq!(frames[i].scan.intensities(), frames[i + 20].scan.intensities(), "frame {i}");
        assert_eq!(frames[i].pose.p, frames[i + 20].pose.p);
    }
}

#[test]
fn moving_world_and_sensor_together_leaves_scan_unchanged() {
    let world = quiet_world(4);
    let mut rng = common::rng(6);
    for _ in 0..10 {
        let yaw = rng.gen_range(-3.0..3.0);
        let t = [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)];
        let moved = world.transformed(yaw, t);
        let pose = Pose::planar(rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0), rng.gen_range(-3.0..3.0), 0);
        let moved_pose = compose(&Pose::planar(t[0], t[1], yaw, 0), &pose);
        let a = simulate_scan(&world, &pose, &ScanParams::desk(), 1).unwrap();
        let b = simulate_scan(&moved, &moved_pose, &ScanParams::desk(), 1).unwrap();
        let err = a.intensities().iter().zip(b.intensities()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        assert!(err < 1e-4, "max difference {err}");
    }
}

#[test]
fn windows_have_increasing_timestamps() {
    let world = quiet_world(5);
    let traj = loop_trajectory([0.0, 0.0], 10.0, 10, 10, 0, 250_000_000);
    let seq = radar_reloc::data::Sequence {
        name: "s".into(),
        tag: "t".into(),
        split: Split::Train,
        frames: simulate_sequence(&world, &traj, &ScanParams::desk(), 0).unwrap(),
    };
    let images = seq.to_images(&CartesianSpec::desk()).unwrap();
    for (n, stride, expected) in [(4, 1, 7), (4, 2, 4), (10, 1, 1), (11, 1, 0), (1, 3, 4)] {
        let ws = make_windows(&images, n, stride);
        assert_eq!(ws.len(), expected, "n={n} stride={stride}");
        assert_eq!(window_starts(10, n, stride).len(), expected);
        for w in &ws {
            assert_eq!(w.len(), n);
            assert!(w.poses.windows(2).all(|p| p[0].timestamp < p[1].timestamp));
            assert!(w.images.windows(2).all(|p| p[0].timestamp < p[1].timestamp));
        }
    }
}
