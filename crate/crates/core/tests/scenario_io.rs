use std::collections::BTreeMap;

use gripforge_core::metrics::{evaluate, Thresholds};
use gripforge_core::scenario::{corrupt, export_contacts, read_contacts, synthesize_demo, Scenario, Task, Trajectory};
use tempfile::TempDir;

#[test]
fn contact_csv_statics_balance_the_weight() {
    let s = synthesize_demo(Task::GraspLift, 21).unwrap();
    let ro = s.replay().unwrap();
    let records: Vec<_> = ro.contacts.iter().flatten().cloned().collect();
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("c.csv");
    export_contacts(&records, &path).unwrap();

    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), records.len() + 1);
    assert_eq!(read_contacts(&path).unwrap(), records);

    // Column sums straight from the file text.
    let mut lift: BTreeMap<usize, f64> = BTreeMap::new();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        *lift.entry(cols[0].parse().unwrap()).or_default() += cols[14].parse::<f64>().unwrap();
    }
    let weight = s.scene.object.mass * s.scene.gravity.norm();
    for frame in 55..65 {
        assert!((lift[&frame] - weight).abs() < 0.02 * weight, "frame {frame}: {}", lift[&frame]);
    }
}

#[test]
fn empty_contact_list_writes_only_the_header() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("none.csv");
    export_contacts(&[], &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
    assert!(read_contacts(&path).unwrap().is_empty());
    std::fs::write(&path, "frame,oops\n").unwrap();
    assert!(read_contacts(&path).is_err());
}

#[test]
fn scenario_files_round_trip() {
    let s = synthesize_demo(Task::GraspLift, 22).unwrap();
    let c = corrupt(&s, &"jitter:0.002:5-30".parse().unwrap()).unwrap();
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("c.scn");
    c.save(&path).unwrap();
    assert_eq!(Scenario::load(&path).unwrap(), c);
}

fn replayed(s: &Scenario) -> Trajectory {
    let t = &s.trajectory;
    Trajectory::from_rollout(&s.simulator().unwrap(), &s.replay().unwrap(), &t.controls(), t.frame_rate, t.start_frame)
}

#[test]
fn ground_truth_replays_and_gap_corruption_does_not() {
    let s = synthesize_demo(Task::GraspLift, 7).unwrap();
    let tips = s.scene.gripper.fingertip_keypoints();
    let clean = evaluate(&replayed(&s), &s.trajectory, &tips, &Thresholds::default()).unwrap();
    assert!(clean.success);
    assert!(clean.max_e_t < 1e-9);

    let c = corrupt(&s, &"fingertip_gap:0.02".parse().unwrap()).unwrap();
    let report = evaluate(&replayed(&c), &s.trajectory, &tips, &Thresholds::default()).unwrap();
    assert!(!report.success);
    assert!(report.max_e_t > 3.0);
    assert_eq!(report.failing_frames.last(), Some(&64));
}
