mod common;

use std::fs;

use bgcn::error::Error;
use bgcn::graph_data::{load_dataset, normalize};
use bgcn::model::{param_count, Topology};
use common::{data_dir, random_dataset, write_dataset};

fn check(name: &str, nodes: usize, edges: usize, classes: usize, train: usize, test: usize, features: usize) {
    let ds = load_dataset(data_dir(name)).unwrap();
    assert_eq!(ds.num_nodes, nodes);
    assert_eq!(ds.declared_edges, Some(edges));
    assert_eq!(ds.num_classes, classes);
    assert_eq!(ds.train_mask.len(), train);
    assert_eq!(ds.test_mask.len(), test);
    assert_eq!(ds.num_features, features);
    // Every class appears equally often in the training split.
    let mut per_class = vec![0; classes];
    for &i in &ds.train_mask {
        per_class[ds.labels[i]] += 1;
    }
    assert!(per_class.iter().all(|&c| c == train / classes), "{per_class:?}");
    let g = normalize(&ds);
    assert_eq!(g.nnz(), nodes + 2 * ds.edges.len());
}

#[test]
fn cora_statistics() {
    check("cora", 2708, 5429, 7, 140, 1000, 1433);
    let ds = load_dataset(data_dir("cora")).unwrap();
    assert_eq!(ds.edge_records, 5429);
    assert_eq!(param_count(Topology::new(ds.num_features, 16, ds.num_classes)), 23063);
}

#[test]
fn citeseer_statistics() {
    check("citeseer", 3327, 4732, 6, 120, 1000, 3703);
}

#[test]
fn pubmed_statistics() {
    check("pubmed", 19717, 44338, 3, 60, 1000, 500);
}

#[test]
fn normalized_operator_is_symmetric_with_unit_row_weighting() {
    let ds = load_dataset(data_dir("cora")).unwrap();
    let g = normalize(&ds);
    let deg = ds.degrees();
    for i in (0..ds.num_nodes).step_by(97) {
        let (cols, vals) = g.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            let (cj, vj) = g.row(j);
            let k = cj.binary_search(&i).unwrap();
            assert_eq!(vj[k], v);
            let want = 1.0 / (((deg[i] + 1) * (deg[j] + 1)) as f64).sqrt();
            assert!((v - want).abs() < 1e-15);
        }
    }
}

#[test]
fn round_trip_through_files() {
    let ds = random_dataset(5, 15, 7, 3);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &ds);
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.edges, ds.edges);
    assert_eq!(back.labels, ds.labels);
    assert_eq!(back.features, ds.features);
    assert_eq!(back.train_mask, ds.train_mask);
}

#[test]
fn missing_file_names_the_file() {
    let ds = random_dataset(5, 10, 4, 2);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &ds);
    fs::remove_file(dir.path().join("labels.txt")).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Load { ref file, .. } if file == "labels.txt"), "{err}");
}

#[test]
fn bad_rows_report_line_numbers() {
    let ds = random_dataset(5, 10, 4, 2);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &ds);
    let mut labels = fs::read_to_string(dir.path().join("labels.txt")).unwrap();
    labels = labels.replacen('\n', "\n9\n", 1);
    let trimmed: Vec<&str> = labels.lines().take(10).collect();
    fs::write(dir.path().join("labels.txt"), trimmed.join("\n") + "\n").unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(
        matches!(err, Error::Validation { line: Some(2), .. }),
        "{err}"
    );

    write_dataset(dir.path(), &ds);
    let edges = fs::read_to_string(dir.path().join("graph.edges")).unwrap();
    fs::write(dir.path().join("graph.edges"), format!("{edges}3\t99\n")).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().starts_with("graph.edges:"), "{err}");

    write_dataset(dir.path(), &ds);
    fs::write(dir.path().join("features.tsv"), "0\t1\tnan\n").unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().starts_with("features.tsv:1"), "{err}");
}

#[test]
fn overlapping_splits_are_rejected() {
    let ds = random_dataset(5, 10, 4, 2);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &ds);
    fs::write(dir.path().join("splits.json"), "{\"train\": [0, 1], \"test\": [1, 2]}").unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("both train and test"), "{err}");
}
