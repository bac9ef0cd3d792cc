use std::fs;
use std::path::Path;

use dksh_core::pipeline::stages;
use dksh_core::synthetic::planted_partition;
use dksh_core::{run_pipeline, run_sweep, ExperimentConfig, SweepParam};

fn small_config(data: &Path, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.edges = data.join("edges.txt");
    cfg.labels = data.join("labels.txt");
    cfg.walk.window_size = 5;
    cfg.walk.walk_length = 40;
    cfg.walk.walks_per_node = 4;
    cfg.layers = 2;
    cfg.landmarks = 48;
    cfg.code_bits = 16;
    cfg.trainer.max_outer_iters = 5;
    cfg.ratios = vec![0.5, 0.9];
    cfg.seeds = vec![1, 2, 3];
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn write_graph(dir: &Path) {
    planted_partition(3, 40, 0.25, 0.01, 11).write(dir).unwrap();
}

#[test]
fn clustered_graph_is_classified_well() {
    let work = tempfile::tempdir().unwrap();
    write_graph(&work.path().join("data"));
    let cfg = small_config(&work.path().join("data"), &work.path().join("out"));
    let table = run_pipeline(&cfg).unwrap();
    assert_eq!(table.rows.len(), 6);
    for agg in table.aggregates() {
        assert_eq!(agg.successes, 3, "{}", table.render());
        assert!(agg.mean.unwrap() > 0.8, "{}", table.render());
    }

    let csv = fs::read_to_string(work.path().join("out/results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "ratio,seed,accuracy,note");
    assert_eq!(lines.len(), 1 + 2 * 4);
    assert!(lines[4].starts_with("0.5,mean,"));
    let cell = work.path().join("out/cells/ratio0.9-seed2");
    for f in ["split.csv", "net.txt", "hash_model.bin", "codes.txt", "predictions.csv"] {
        assert!(cell.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn cached_stages_match_recomputation() {
    let work = tempfile::tempdir().unwrap();
    write_graph(&work.path().join("data"));
    let mut cfg = small_config(&work.path().join("data"), &work.path().join("cold"));
    cfg.ratios = vec![0.7];
    cfg.seeds = vec![4];
    cfg.cache_dir = Some(work.path().join("cache"));
    let cold = run_pipeline(&cfg).unwrap();
    assert!(fs::read_dir(work.path().join("cache")).unwrap().count() >= 3);

    // second run reads every cached stage and, in verify mode, recomputes
    // and compares it
    cfg.out_dir = work.path().join("warm");
    cfg.verify_cache = true;
    let warm = run_pipeline(&cfg).unwrap();
    assert_eq!(cold, warm);

    let mut uncached = cfg.clone();
    uncached.cache = false;
    uncached.out_dir = work.path().join("none");
    assert_eq!(run_pipeline(&uncached).unwrap(), cold);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let work = tempfile::tempdir().unwrap();
    write_graph(&work.path().join("data"));
    let mut cfg = small_config(&work.path().join("data"), &work.path().join("out"));
    cfg.seeds = vec![1];
    let result = run_sweep(&cfg, SweepParam::CodeBits, &[4, 8, 1000]).unwrap();
    assert_eq!(result.points.len(), 3);
    let csv = fs::read_to_string(work.path().join("out/sweep_M.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "param,value,mean_accuracy,std_accuracy,successful_cells");
    assert!(lines[1].starts_with("M,4,") && lines[1].ends_with(",1/1"));
    // more bits than landmarks is rejected for that value only
    assert!(lines[3].ends_with(",0/1"), "{csv}");
    assert!("Q".parse::<SweepParam>().is_err());
}

#[test]
fn file_stages_chain_through_the_artifact_directory() {
    let work = tempfile::tempdir().unwrap();
    write_graph(&work.path().join("data"));
    let out = work.path().join("art");
    let cfg = small_config(&work.path().join("data"), &out);
    stages::walk(&cfg, &out).unwrap();
    stages::structure(&cfg, &out).unwrap();
    stages::similarity(&cfg, &out, 0.9, 1).unwrap();
    stages::dkl_train(&cfg, &out, 0.9, 1).unwrap();
    stages::hash(&cfg, &out, 1).unwrap();
    let acc = stages::classify_stage(&cfg, &out, 0.9, 1).unwrap();
    assert!((0.0..=1.0).contains(&acc));
    for f in ["walks.txt", "structure.bin", "split.csv", "similarity.csv", "net.txt", "training_log.csv", "codes.txt"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }

    // the staged chain and the in-memory runner agree on the same cell
    let mut single = cfg.clone();
    single.ratios = vec![0.9];
    single.seeds = vec![1];
    single.cache = false;
    single.out_dir = work.path().join("whole");
    let table = run_pipeline(&single).unwrap();
    assert_eq!(table.rows[0].accuracy, Some(acc));
}

#[test]
fn missing_edge_file_is_reported() {
    let work = tempfile::tempdir().unwrap();
    let cfg = small_config(&work.path().join("nothing"), &work.path().join("out"));
    let err = run_pipeline(&cfg).unwrap_err().to_string();
    assert!(err.contains("edges.txt"), "{err}");
}
