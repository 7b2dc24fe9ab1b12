use std::collections::HashSet;
use std::fs;

use coverage_pilot::dataset::{
    check_record, collect, export, import, manifest_path, read_records, validate_dataset, CollectConfig, DatasetRecord,
    ExportOptions, RecordWriter, Split,
};
use coverage_pilot::grid::GridMap;
use coverage_pilot::mcts::{score_node, MctsConfig};
use coverage_pilot::proposer::HeuristicProposer;

fn small(episodes: usize) -> CollectConfig {
    CollectConfig { episodes, search: MctsConfig { n_rollouts: 3, ..MctsConfig::default() }, ..CollectConfig::default() }
}

fn run(cfg: &CollectConfig, seed: u64, jobs: usize) -> Vec<DatasetRecord> {
    collect(cfg, &HeuristicProposer::default(), seed, jobs, &mut |_| Ok(())).unwrap()
}

#[test]
fn collection_is_deterministic_and_job_count_independent() {
    let cfg = small(3);
    let a = run(&cfg, 42, 1);
    assert_eq!(a.len(), 3);
    assert_eq!(a, run(&cfg, 42, 1));
    assert_eq!(a, run(&cfg, 42, 3));
    assert_ne!(a, run(&cfg, 43, 1));
    assert_eq!(a.iter().map(|r| r.episode).collect::<Vec<_>>(), vec![0, 1, 2]);
}

#[test]
fn records_are_self_consistent() {
    let recs = run(&small(6), 7, 2);
    for r in &recs {
        assert!(check_record(r).is_empty(), "{:?}", check_record(r));
        let map = GridMap::from_file(&r.map).unwrap();
        assert_eq!(r.trajectory.first(), Some(map.start()));
        assert!(r.input.contains(&r.instruction));
        assert_eq!(r.meta.backend, "heuristic");
        assert_eq!(r.meta.rollouts, 3);
        assert!(CollectConfig::default().instructions.contains(&r.instruction));
        // independent rescoring from a fresh coverage map
        let mut cov = coverage_pilot::grid::CoverageMap::new(&map);
        cov.visit(&map, map.start()).unwrap();
        let q = score_node(&map, &cov, map.start(), &r.trajectory, &r.meta.config.weights, r.compliance);
        assert!((q - r.score).abs() < 1e-9);
    }
}

#[test]
fn export_import_round_trip() {
    let recs = run(&small(10), 1, 1);
    let dir = tempfile::tempdir().unwrap();
    let opts = ExportOptions { split_ratio: 0.7, shard_size: 3, seed: 5 };
    let m = export(&recs, dir.path(), "cov", &opts).unwrap();
    assert_eq!((m.total, m.train, m.val), (10, 7, 3));
    let names: Vec<&str> = m.shards.iter().map(|s| s.file.as_str()).collect();
    assert_eq!(names, vec!["cov.0000.train", "cov.0001.train", "cov.0002.train", "cov.0000.val"]);
    assert!(m.shards.iter().all(|s| s.records <= 3));
    let (train, val) = import(manifest_path(dir.path(), "cov")).unwrap();
    let tr: HashSet<usize> = train.iter().map(|r| r.episode).collect();
    let va: HashSet<usize> = val.iter().map(|r| r.episode).collect();
    assert!(tr.is_disjoint(&va));
    let mut back: Vec<DatasetRecord> = train.into_iter().chain(val).collect();
    back.sort_by_key(|r| r.episode);
    assert_eq!(back, recs);
    let report = validate_dataset(manifest_path(dir.path(), "cov")).unwrap();
    assert!(report.ok(), "{:?}", report.failures);
    assert_eq!((report.checked, report.passed), (10, 10));
    // same seed, same split
    let dir2 = tempfile::tempdir().unwrap();
    assert_eq!(export(&recs, dir2.path(), "cov", &opts).unwrap(), m);
    assert_eq!(
        fs::read(dir.path().join("cov.0000.val")).unwrap(),
        fs::read(dir2.path().join("cov.0000.val")).unwrap()
    );
}

#[test]
fn split_ratio_edges() {
    let recs = run(&small(4), 2, 1);
    let dir = tempfile::tempdir().unwrap();
    let m = export(&recs, dir.path(), "all", &ExportOptions { split_ratio: 1.0, shard_size: 10, seed: 0 }).unwrap();
    assert_eq!((m.train, m.val), (4, 0));
    assert!(m.shards.iter().all(|s| s.split == Split::Train));
    assert!(export(&recs, dir.path(), "x", &ExportOptions { split_ratio: 1.5, shard_size: 10, seed: 0 }).is_err());
    assert!(export(&recs, dir.path(), "x", &ExportOptions { split_ratio: 0.5, shard_size: 0, seed: 0 }).is_err());
}

#[test]
fn validation_flags_bad_records() {
    let recs = run(&small(4), 3, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");

    let mut stale = recs[0].clone();
    stale.score += 0.01;
    let mut colliding = recs[1].clone();
    let map = GridMap::from_file(&colliding.map).unwrap();
    let obstacle = map.obstacle_cells().next().unwrap();
    let mut wps = colliding.trajectory.waypoints().to_vec();
    wps.push(obstacle);
    colliding.trajectory = wps.into_iter().collect();
    colliding.output = coverage_pilot::proposer::serialize_trajectory(&colliding.trajectory);
    let mut elsewhere = recs[2].clone();
    let mut wps = elsewhere.trajectory.waypoints().to_vec();
    wps.remove(0);
    elsewhere.trajectory = wps.into_iter().collect();
    elsewhere.output = coverage_pilot::proposer::serialize_trajectory(&elsewhere.trajectory);

    let mut text = String::new();
    for r in [&stale, &colliding, &elsewhere, &recs[3]] {
        text.push_str(&serde_json::to_string(r).unwrap());
        text.push('\n');
    }
    text.push_str("{\"episode\": 9}\n");
    fs::write(&path, text).unwrap();

    let report = validate_dataset(&path).unwrap();
    assert_eq!((report.checked, report.passed), (5, 1));
    let reasons: Vec<String> = report.failures.iter().map(|f| f.reasons.join(" | ")).collect();
    assert!(reasons[0].starts_with("score:"), "{}", reasons[0]);
    assert!(reasons[1].contains("collision"), "{}", reasons[1]);
    assert!(reasons[2].contains("must start at"), "{}", reasons[2]);
    assert!(reasons[3].starts_with("schema:"), "{}", reasons[3]);
    assert_eq!(report.failures.iter().map(|f| f.line).collect::<Vec<_>>(), vec![1, 2, 3, 5]);
}

#[test]
fn tampered_shard_fails_digest_check() {
    let recs = run(&small(3), 4, 1);
    let dir = tempfile::tempdir().unwrap();
    let m = export(&recs, dir.path(), "d", &ExportOptions { split_ratio: 0.5, shard_size: 10, seed: 1 }).unwrap();
    let shard = dir.path().join(&m.shards[0].file);
    let mut text = fs::read_to_string(&shard).unwrap();
    text.push('\n');
    fs::write(&shard, text).unwrap();
    let report = validate_dataset(manifest_path(dir.path(), "d")).unwrap();
    assert!(!report.ok());
    assert!(report.failures.iter().any(|f| f.reasons[0].starts_with("digest")));
    assert_eq!(report.passed, 3);
}

#[test]
fn interrupted_stream_keeps_complete_lines() {
    let cfg = small(5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stream.jsonl");
    let mut writer = RecordWriter::create(&path).unwrap();
    let mut written = 0;
    let result = collect(&cfg, &HeuristicProposer::default(), 9, 1, &mut |r| {
        if written == 3 {
            return Err(coverage_pilot::dataset::DatasetError::Setup("interrupted".into()));
        }
        written += 1;
        writer.write(r)
    });
    assert!(result.is_err());
    // no explicit flush or drop of the writer before reading
    let back = read_records(&path).unwrap();
    assert_eq!(back.len(), 3);
    let report = validate_dataset(&path).unwrap();
    assert!(report.ok() && report.checked == 3);
    drop(writer);
}

#[test]
fn collect_rejects_bad_setup() {
    let p = HeuristicProposer::default();
    let mut sink = |_: &DatasetRecord| Ok(());
    assert!(collect(&CollectConfig { episodes: 0, ..small(1) }, &p, 0, 1, &mut sink).is_err());
    assert!(collect(&CollectConfig { instructions: vec![" ".into()], ..small(1) }, &p, 0, 1, &mut sink).is_err());
    let bad = CollectConfig { search: MctsConfig { alpha: 0.0, ..MctsConfig::default() }, ..small(1) };
    assert!(collect(&bad, &p, 0, 1, &mut sink).is_err());
}
