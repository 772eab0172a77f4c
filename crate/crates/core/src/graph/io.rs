//! Three-file dataset directory:
//!
//! * `graph.edges`  one `u<TAB>v` pair per line, 0-indexed
//! * `features.csv` n rows of f comma-separated reals, no header
//! * `labels.csv`   n rows of C comma-separated 0/1 entries
//!
//! plus an optional `splits.json` with `train`/`val`/`test` index arrays.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Graph, Split};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const EDGES_FILE: &str = "graph.edges";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const SPLITS_FILE: &str = "splits.json";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_rows<T>(
    path: &Path,
    text: &str,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<(Vec<T>, usize, usize)> {
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for field in line.split(',') {
            let v = parse(field.trim())
                .ok_or_else(|| parse_err(path, i + 1, format!("cannot parse value {field:?}")))?;
            values.push(v);
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(parse_err(path, i + 1, format!("expected {w} columns, found {count}")))
            }
            _ => {}
        }
        rows += 1;
    }
    Ok((values, rows, width.unwrap_or(0)))
}

fn parse_edges(path: &Path, text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(path, i + 1, "expected two node ids"));
        };
        let u = a
            .parse::<usize>()
            .map_err(|_| parse_err(path, i + 1, format!("bad node id {a:?}")))?;
        let v = b
            .parse::<usize>()
            .map_err(|_| parse_err(path, i + 1, format!("bad node id {b:?}")))?;
        edges.push((u, v));
    }
    Ok(edges)
}

/// Loads and validates a dataset directory. Edges are symmetrized and
/// deduplicated; self-loops in the file are dropped with a warning.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Graph> {
    let dir = dir.as_ref();
    let fpath = dir.join(FEATURES_FILE);
    let lpath = dir.join(LABELS_FILE);
    let epath = dir.join(EDGES_FILE);

    let (fvals, n, f) = parse_rows(&fpath, &read(&fpath)?, |s| s.parse::<f64>().ok())?;
    let (lvals, ln, c) = parse_rows(&lpath, &read(&lpath)?, |s| match s {
        "0" => Some(0u8),
        "1" => Some(1u8),
        _ => None,
    })?;
    if ln != n {
        return Err(Error::Shape(format!(
            "{} has {n} rows but {} has {ln}",
            fpath.display(),
            lpath.display()
        )));
    }
    let mut edges = parse_edges(&epath, &read(&epath)?)?;
    let before = edges.len();
    edges.retain(|(u, v)| u != v);
    if edges.len() != before {
        log::warn!("dropped {} self-loop(s) from {}", before - edges.len(), epath.display());
    }
    let graph = Graph::from_edges(&edges, Matrix::from_vec(n, f, fvals), lvals, c)?;
    graph.warn_unlabeled(&(0..n).collect::<Vec<_>>());
    Ok(graph)
}

/// Writes the three dataset files. Reals use the shortest representation that
/// parses back to the same value.
pub fn save_dataset(graph: &Graph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut edges = String::new();
    for (u, v) in graph.edge_list() {
        writeln!(edges, "{u}\t{v}").unwrap();
    }
    let mut feats = String::new();
    for r in 0..graph.num_nodes() {
        let row: Vec<String> = graph.features().row(r).iter().map(|x| format!("{x:?}")).collect();
        feats.push_str(&row.join(","));
        feats.push('\n');
    }
    let mut labels = String::new();
    for v in 0..graph.num_nodes() {
        let row: Vec<&str> = graph
            .labels_of(v)
            .iter()
            .map(|&y| if y == 1 { "1" } else { "0" })
            .collect();
        labels.push_str(&row.join(","));
        labels.push('\n');
    }
    for (name, body) in [(EDGES_FILE, edges), (FEATURES_FILE, feats), (LABELS_FILE, labels)] {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Reads `splits.json` from a dataset directory if present.
pub fn load_splits(dir: impl AsRef<Path>, num_nodes: usize) -> Result<Option<Split>> {
    let path: PathBuf = dir.as_ref().join(SPLITS_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let split: Split = serde_json::from_str(&read(&path)?)?;
    split.validate(num_nodes)?;
    Ok(Some(split))
}

pub fn save_splits(split: &Split, dir: impl AsRef<Path>) -> Result<()> {
    let path = dir.as_ref().join(SPLITS_FILE);
    let body = serde_json::to_string(split)?;
    fs::write(&path, body).map_err(|e| Error::io(&path, e))
}
