//! Citation-graph datasets and the renormalized graph operator.
//!
//! A dataset directory holds five plain-text files:
//!
//! | file          | contents                                                  |
//! |---------------|-----------------------------------------------------------|
//! | `meta.json`   | `{"nodes", "features", "classes", "row_normalize"}`       |
//! | `graph.edges` | one `src<TAB>dst` pair per line, 0-based                  |
//! | `features.tsv`| sparse triples `node<TAB>feature<TAB>value`               |
//! | `labels.txt`  | line `i` holds the class of node `i`                      |
//! | `splits.json` | `{"train": [...], "test": [...]}`                         |
//!
//! `meta.json` may also carry `"edges"`, the edge count declared by the
//! upstream release. Edge records are undirected: reversed and repeated
//! records collapse to one edge, and self-loop records are dropped because
//! [`normalize`] adds a self-loop to every node.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::Deserialize;

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_start: Vec<usize>,
    pub col_index: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a CSR matrix from `(row, col, value)` triples. Entries within a
    /// row are sorted by column; a repeated coordinate is rejected.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|e| (e.0, e.1));
        let mut row_start = vec![0usize; rows + 1];
        let mut col_index = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            if r >= rows || c >= cols {
                return Err(Error::Dimension(format!(
                    "entry ({r}, {c}) outside a {rows}x{cols} matrix"
                )));
            }
            if prev == Some((r, c)) {
                return Err(Error::invalid(format!("duplicate entry ({r}, {c})")));
            }
            prev = Some((r, c));
            row_start[r + 1] += 1;
            col_index.push(c);
            values.push(v);
        }
        for r in 0..rows {
            row_start[r + 1] += row_start[r];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_start,
            col_index,
            values,
        })
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_start[r]..self.row_start[r + 1];
        (&self.col_index[span.clone()], &self.values[span])
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[[r, c]] = v;
            }
        }
        out
    }

    /// `self · dense`.
    pub fn mul_dense(&self, dense: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if dense.nrows() != self.cols {
            return Err(Error::Dimension(format!(
                "sparse {}x{} times dense {}x{}",
                self.rows,
                self.cols,
                dense.nrows(),
                dense.ncols()
            )));
        }
        let width = dense.ncols();
        let mut out = Array2::zeros((self.rows, width));
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            let mut out_row = out.row_mut(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out_row.scaled_add(v, &dense.row(c));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · dense`, without materializing the transpose.
    pub fn transpose_mul_dense(&self, dense: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if dense.nrows() != self.rows {
            return Err(Error::Dimension(format!(
                "transposed sparse {}x{} times dense {}x{}",
                self.cols,
                self.rows,
                dense.nrows(),
                dense.ncols()
            )));
        }
        let mut out = Array2::zeros((self.cols, dense.ncols()));
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            let src = dense.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out.row_mut(c).scaled_add(v, &src);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
    /// Undirected edges stored once as `(min, max)`, sorted, no self-loops.
    pub edges: Vec<(usize, usize)>,
    /// Number of records in the source edge list before deduplication.
    pub edge_records: usize,
    /// Edge count declared by the upstream release, when recorded.
    pub declared_edges: Option<usize>,
    pub features: SparseMatrix,
    pub labels: Vec<usize>,
    pub train_mask: Vec<usize>,
    pub test_mask: Vec<usize>,
}

impl Dataset {
    /// Assembles a dataset from in-memory parts, deduplicating edges and
    /// checking every invariant the loader checks.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        num_nodes: usize,
        num_features: usize,
        num_classes: usize,
        edge_records: &[(usize, usize)],
        features: SparseMatrix,
        labels: Vec<usize>,
        train_mask: Vec<usize>,
        test_mask: Vec<usize>,
    ) -> Result<Self> {
        let file = "<memory>";
        let mut edges = BTreeSet::new();
        for (i, &(a, b)) in edge_records.iter().enumerate() {
            check_edge(file, i + 1, a, b, num_nodes)?;
            if a != b {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let ds = Dataset {
            num_nodes,
            num_features,
            num_classes,
            edges: edges.into_iter().collect(),
            edge_records: edge_records.len(),
            declared_edges: None,
            features,
            labels,
            train_mask,
            test_mask,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let bad = |file: &str, message: String| Error::Validation {
            file: file.to_string(),
            line: None,
            message,
        };
        if self.features.rows != self.num_nodes || self.features.cols != self.num_features {
            return Err(Error::Dimension(format!(
                "features are {}x{}, expected {}x{}",
                self.features.rows, self.features.cols, self.num_nodes, self.num_features
            )));
        }
        if self.features.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(bad("features.tsv", "feature values must be finite and nonnegative".into()));
        }
        if self.labels.len() != self.num_nodes {
            return Err(bad(
                "labels.txt",
                format!("{} labels for {} nodes", self.labels.len(), self.num_nodes),
            ));
        }
        if let Some((i, &y)) = self.labels.iter().enumerate().find(|(_, &y)| y >= self.num_classes) {
            return Err(Error::Validation {
                file: "labels.txt".into(),
                line: Some(i + 1),
                message: format!("label {y} >= {} classes", self.num_classes),
            });
        }
        let mut seen = vec![0u8; self.num_nodes];
        for (flag, mask) in [(1u8, &self.train_mask), (2u8, &self.test_mask)] {
            for &i in mask.iter() {
                if i >= self.num_nodes {
                    return Err(bad("splits.json", format!("node {i} out of range")));
                }
                if seen[i] & flag != 0 {
                    return Err(bad("splits.json", format!("node {i} listed twice")));
                }
                seen[i] |= flag;
                if seen[i] == 3 {
                    return Err(bad("splits.json", format!("node {i} is in both train and test")));
                }
            }
        }
        Ok(())
    }

    /// Raw (self-loop free) degree of every node.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }
}

fn check_edge(file: &str, line: usize, a: usize, b: usize, n: usize) -> Result<()> {
    if a >= n || b >= n {
        return Err(Error::Validation {
            file: file.into(),
            line: Some(line),
            message: format!("edge ({a}, {b}) has an endpoint >= {n} nodes"),
        });
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct Meta {
    nodes: usize,
    features: usize,
    classes: usize,
    #[serde(default)]
    row_normalize: bool,
    #[serde(default)]
    edges: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct Splits {
    train: Vec<usize>,
    test: Vec<usize>,
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(Error::Load {
            file: name.into(),
            message: format!("missing file {}", path.display()),
        });
    }
    fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

fn parse_field<T: std::str::FromStr>(file: &str, line: usize, field: Option<&str>) -> Result<T> {
    let raw = field.ok_or_else(|| Error::Validation {
        file: file.into(),
        line: Some(line),
        message: "missing column".into(),
    })?;
    raw.trim().parse().map_err(|_| Error::Validation {
        file: file.into(),
        line: Some(line),
        message: format!("cannot parse {raw:?}"),
    })
}

/// Loads and validates a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let meta: Meta = serde_json::from_str(&read(dir, "meta.json")?).map_err(|e| Error::Validation {
        file: "meta.json".into(),
        line: Some(e.line()),
        message: e.to_string(),
    })?;
    let n = meta.nodes;

    let mut edges = BTreeSet::new();
    let mut edge_records = 0;
    for (i, line) in read(dir, "graph.edges")?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let a: usize = parse_field("graph.edges", i + 1, cols.next())?;
        let b: usize = parse_field("graph.edges", i + 1, cols.next())?;
        check_edge("graph.edges", i + 1, a, b, n)?;
        edge_records += 1;
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }

    let mut triplets = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in read(dir, "features.tsv")?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let node: usize = parse_field("features.tsv", i + 1, cols.next())?;
        let feat: usize = parse_field("features.tsv", i + 1, cols.next())?;
        let value: f64 = parse_field("features.tsv", i + 1, cols.next())?;
        let fail = |message: String| Error::Validation {
            file: "features.tsv".into(),
            line: Some(i + 1),
            message,
        };
        if node >= n || feat >= meta.features {
            return Err(fail(format!("entry ({node}, {feat}) out of range")));
        }
        if !(value.is_finite() && value >= 0.0) {
            return Err(fail(format!("value {value} is not a finite nonnegative real")));
        }
        if !seen.insert((node, feat)) {
            return Err(fail(format!("duplicate entry ({node}, {feat})")));
        }
        triplets.push((node, feat, value));
    }
    if meta.row_normalize {
        let mut sums = vec![0.0; n];
        for &(r, _, v) in &triplets {
            sums[r] += v;
        }
        for t in triplets.iter_mut() {
            if sums[t.0] > 0.0 {
                t.2 /= sums[t.0];
            }
        }
    }
    let features = SparseMatrix::from_triplets(n, meta.features, &triplets)?;

    let mut labels = Vec::with_capacity(n);
    for (i, line) in read(dir, "labels.txt")?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let y: usize = parse_field("labels.txt", i + 1, Some(line))?;
        if y >= meta.classes {
            return Err(Error::Validation {
                file: "labels.txt".into(),
                line: Some(i + 1),
                message: format!("label {y} >= {} classes", meta.classes),
            });
        }
        labels.push(y);
    }

    let splits_text = read(dir, "splits.json")?;
    let splits: Splits = serde_json::from_str(&splits_text).map_err(|e| Error::Validation {
        file: "splits.json".into(),
        line: Some(e.line()),
        message: e.to_string(),
    })?;

    let ds = Dataset {
        num_nodes: n,
        num_features: meta.features,
        num_classes: meta.classes,
        edges: edges.into_iter().collect(),
        edge_records,
        declared_edges: meta.edges,
        features,
        labels,
        train_mask: splits.train,
        test_mask: splits.test,
    };
    ds.validate().map_err(|e| locate_split_error(e, &splits_text))?;
    Ok(ds)
}

// Attach the line of the offending node index when splits.json is pretty-printed.
fn locate_split_error(err: Error, text: &str) -> Error {
    match err {
        Error::Validation {
            file,
            line: None,
            message,
        } if file == "splits.json" => {
            let node = message.split_whitespace().nth(1).unwrap_or("");
            let line = text
                .lines()
                .position(|l| {
                    l.split(|c: char| !c.is_ascii_digit())
                        .any(|tok| tok == node)
                })
                .map(|p| p + 1);
            Error::Validation {
                file,
                line,
                message,
            }
        }
        other => other,
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedGraph {
    pub n: usize,
    pub values: Vec<f64>,
    pub col_index: Vec<usize>,
    pub row_start: Vec<usize>,
}

impl NormalizedGraph {
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.row_start[i]..self.row_start[i + 1];
        (&self.col_index[span.clone()], &self.values[span])
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out[[i, j]] = v;
            }
        }
        out
    }

    /// `Â · dense`. Â is symmetric, so this is also the adjoint product.
    pub fn spmm(&self, dense: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if dense.nrows() != self.n {
            return Err(Error::Dimension(format!(
                "graph has {} nodes, dense operand has {} rows",
                self.n,
                dense.nrows()
            )));
        }
        let mut out = Array2::zeros((self.n, dense.ncols()));
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut out_row = out.row_mut(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out_row.scaled_add(v, &dense.row(j));
            }
        }
        Ok(out)
    }
}

/// Builds the self-loop renormalized adjacency. Entry `(i, j)` is
/// `1/√((dᵢ+1)(dⱼ+1))`; the integer product keeps the matrix exactly symmetric
/// and the diagonal exactly `1/(dᵢ+1)`.
pub fn normalize(dataset: &Dataset) -> NormalizedGraph {
    let n = dataset.num_nodes;
    let deg = dataset.degrees();
    let mut neighbors: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for &(a, b) in &dataset.edges {
        neighbors[a].push(b);
        neighbors[b].push(a);
    }
    let mut row_start = Vec::with_capacity(n + 1);
    let mut col_index = Vec::with_capacity(n + 2 * dataset.edges.len());
    let mut values = Vec::with_capacity(n + 2 * dataset.edges.len());
    row_start.push(0);
    for (i, nbrs) in neighbors.iter_mut().enumerate() {
        nbrs.sort_unstable();
        for &j in nbrs.iter() {
            let scale = ((deg[i] as u64 + 1) * (deg[j] as u64 + 1)) as f64;
            col_index.push(j);
            values.push(1.0 / scale.sqrt());
        }
        row_start.push(col_index.len());
    }
    NormalizedGraph {
        n,
        values,
        col_index,
        row_start,
    }
}

/// Free-function form of [`NormalizedGraph::spmm`].
pub fn spmm(g: &NormalizedGraph, dense: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    g.spmm(dense)
}
