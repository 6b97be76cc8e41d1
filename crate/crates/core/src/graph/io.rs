//! Directory interchange format.
//!
//! ```text
//! meta.json      {"name", "num_nodes", "num_features", "num_classes", "has_self_loops"}
//! features.csv   one row per node, comma-separated floats
//! edges.csv      source,target
//! labels.csv     node,class
//! masks.csv      node,train|val|test
//! checksums.txt  optional, `sha256sum` format over the files above
//! ```
//!
//! Files written by [`save_graph`] are canonical: loading and saving them
//! again reproduces them byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Graph, Split};
use crate::error::GraphError;
use crate::tensor::DenseMatrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub name: String,
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
    pub has_self_loops: bool,
}

const DATA_FILES: [&str; 5] = [
    "meta.json",
    "features.csv",
    "edges.csv",
    "labels.csv",
    "masks.csv",
];

fn read(path: &Path) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            GraphError::MissingFile { path: path.into() }
        } else {
            GraphError::Io {
                path: path.into(),
                source,
            }
        }
    })
}

/// Data lines of a CSV file with 1-based line numbers. A first line whose
/// leading field is not numeric is treated as a header.
fn rows(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(i, l)| {
            !l.trim().is_empty()
                && !(*i == 1
                    && l.split(',')
                        .next()
                        .is_some_and(|f| f.trim().parse::<f64>().is_err()))
        })
}

fn parse_pair(path: &Path, line: usize, text: &str) -> Result<(usize, String), GraphError> {
    let parse_err = |message: String| GraphError::Parse {
        path: path.into(),
        line,
        message,
    };
    let mut parts = text.split(',');
    let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(parse_err(format!("expected two fields, got {text:?}")));
    };
    let a = a
        .trim()
        .parse::<usize>()
        .map_err(|e| parse_err(format!("bad node id {a:?}: {e}")))?;
    Ok((a, b.trim().to_string()))
}

fn check_node(
    path: &Path,
    line: usize,
    node: usize,
    num_nodes: usize,
) -> Result<usize, GraphError> {
    if node >= num_nodes {
        return Err(GraphError::NodeOutOfRange {
            path: path.into(),
            line,
            node,
            num_nodes,
        });
    }
    Ok(node)
}

/// Loads an interchange directory.
pub fn load_graph(dir: impl AsRef<Path>) -> Result<Graph, GraphError> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(GraphError::MissingFile { path: dir.into() });
    }
    let meta_path = dir.join("meta.json");
    let meta: Meta = serde_json::from_str(&read(&meta_path)?).map_err(|e| GraphError::Parse {
        path: meta_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let n = meta.num_nodes;

    let path = dir.join("features.csv");
    let text = read(&path)?;
    let mut data = Vec::with_capacity(n * meta.num_features);
    let mut count = 0;
    for (line, row) in rows(&text) {
        let before = data.len();
        for field in row.split(',') {
            let v: f64 = field.trim().parse().map_err(|e| GraphError::Parse {
                path: path.clone(),
                line,
                message: format!("bad float {field:?}: {e}"),
            })?;
            if !v.is_finite() {
                return Err(GraphError::NonFinite {
                    path: path.clone(),
                    line,
                });
            }
            data.push(v);
        }
        if data.len() - before != meta.num_features {
            return Err(GraphError::DimensionMismatch {
                path: path.clone(),
                message: format!(
                    "line {line} has {} values, meta.json declares {}",
                    data.len() - before,
                    meta.num_features
                ),
            });
        }
        count += 1;
    }
    if count != n {
        return Err(GraphError::DimensionMismatch {
            path: path.clone(),
            message: format!("{count} feature rows, meta.json declares {n} nodes"),
        });
    }
    let features = DenseMatrix::from_vec(n, meta.num_features, data).expect("row count verified");

    let path = dir.join("edges.csv");
    let text = read(&path)?;
    let mut edges = Vec::new();
    for (line, row) in rows(&text) {
        let (s, t) = parse_pair(&path, line, row)?;
        let t: usize = t.parse().map_err(|e| GraphError::Parse {
            path: path.clone(),
            line,
            message: format!("bad node id {t:?}: {e}"),
        })?;
        edges.push((
            check_node(&path, line, s, n)?,
            check_node(&path, line, t, n)?,
        ));
    }

    let path = dir.join("labels.csv");
    let text = read(&path)?;
    let mut labels = vec![None; n];
    for (line, row) in rows(&text) {
        let (node, class) = parse_pair(&path, line, row)?;
        let node = check_node(&path, line, node, n)?;
        let class: usize = class.parse().map_err(|e| GraphError::Parse {
            path: path.clone(),
            line,
            message: format!("bad class {class:?}: {e}"),
        })?;
        if class >= meta.num_classes {
            return Err(GraphError::DimensionMismatch {
                path: path.clone(),
                message: format!(
                    "line {line}: class {class} outside {} classes",
                    meta.num_classes
                ),
            });
        }
        labels[node] = Some(class);
    }

    let path = dir.join("masks.csv");
    let text = read(&path)?;
    let mut splits = vec![None; n];
    for (line, row) in rows(&text) {
        let (node, split) = parse_pair(&path, line, row)?;
        let node = check_node(&path, line, node, n)?;
        splits[node] = Some(
            split
                .parse::<Split>()
                .map_err(|message| GraphError::Parse {
                    path: path.clone(),
                    line,
                    message,
                })?,
        );
    }

    Graph::new(
        meta.name,
        features,
        edges,
        labels,
        splits,
        meta.num_classes,
        meta.has_self_loops,
    )
}

fn write(path: PathBuf, contents: &str) -> Result<(), GraphError> {
    fs::write(&path, contents).map_err(|source| GraphError::Io { path, source })
}

/// Writes `graph` in canonical interchange form.
pub fn save_graph(graph: &Graph, dir: impl AsRef<Path>) -> Result<(), GraphError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| GraphError::Io {
        path: dir.into(),
        source,
    })?;
    let meta = Meta {
        name: graph.name().to_string(),
        num_nodes: graph.num_nodes(),
        num_features: graph.num_features(),
        num_classes: graph.num_classes(),
        has_self_loops: graph.has_self_loops(),
    };
    let mut json = serde_json::to_string_pretty(&meta).expect("meta serialises");
    json.push('\n');
    write(dir.join("meta.json"), &json)?;

    let mut out = String::new();
    for r in 0..graph.num_nodes() {
        for (i, v) in graph.features().row(r).iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    write(dir.join("features.csv"), &out)?;

    out.clear();
    for (s, t) in graph.edges() {
        writeln!(out, "{s},{t}").unwrap();
    }
    write(dir.join("edges.csv"), &out)?;

    out.clear();
    for (v, label) in graph.labels().iter().enumerate() {
        if let Some(c) = label {
            writeln!(out, "{v},{c}").unwrap();
        }
    }
    write(dir.join("labels.csv"), &out)?;

    out.clear();
    for (v, split) in graph.splits().iter().enumerate() {
        if let Some(s) = split {
            writeln!(out, "{v},{s}").unwrap();
        }
    }
    write(dir.join("masks.csv"), &out)
}

/// Verifies `checksums.txt` when present. Returns the number of files
/// checked (0 without a checksum file).
pub fn verify_checksums(dir: impl AsRef<Path>) -> Result<usize, GraphError> {
    let dir = dir.as_ref();
    let path = dir.join("checksums.txt");
    if !path.exists() {
        return Ok(0);
    }
    let text = read(&path)?;
    let mut checked = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((expected, file)) = line.split_once(char::is_whitespace) else {
            return Err(GraphError::Parse {
                path: path.clone(),
                line: i + 1,
                message: "expected `<sha256> <file>`".into(),
            });
        };
        let file = file.trim().trim_start_matches('*');
        let bytes = fs::read(dir.join(file)).map_err(|source| GraphError::Io {
            path: dir.join(file),
            source,
        })?;
        let found: String = Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        if !found.eq_ignore_ascii_case(expected) {
            return Err(GraphError::Checksum {
                file: file.to_string(),
                expected: expected.to_string(),
                found,
            });
        }
        checked += 1;
    }
    Ok(checked)
}

/// Writes `checksums.txt` covering the data files in `dir`.
pub fn write_checksums(dir: impl AsRef<Path>) -> Result<(), GraphError> {
    let dir = dir.as_ref();
    let mut out = String::new();
    for file in DATA_FILES {
        let bytes = fs::read(dir.join(file)).map_err(|source| GraphError::Io {
            path: dir.join(file),
            source,
        })?;
        let digest: String = Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        writeln!(out, "{digest}  {file}").unwrap();
    }
    write(dir.join("checksums.txt"), &out)
}
