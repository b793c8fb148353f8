//! Dataset directory format.
//!
//! ```text
//! meta.json      {"n": int, "d": int, "classes": int}
//! features.tsv   n rows of d tab-separated floats
//! edges.tsv      one "u<TAB>v" per line, u < v
//! labels.tsv     one integer class per line
//! masks.tsv      one of train / val / test per line
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Graph, Split};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const META_FILE: &str = "meta.json";
pub const FEATURES_FILE: &str = "features.tsv";
pub const EDGES_FILE: &str = "edges.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const MASKS_FILE: &str = "masks.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub n: usize,
    pub d: usize,
    pub classes: usize,
}

/// Raw contents of the five dataset files.
#[derive(Debug, Clone, Default)]
pub struct DatasetText {
    pub meta: String,
    pub features: String,
    pub edges: String,
    pub labels: String,
    pub masks: String,
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r'))).filter(|(_, l)| !l.is_empty())
}

fn parse_usize(file: &str, line: usize, field: &str) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::parse(file, line, format!("expected a non-negative integer, found {field:?}")))
}

/// Parses and validates a dataset from the text of its files.
pub fn parse_dataset(text: &DatasetText) -> Result<Graph> {
    let meta: DatasetMeta = serde_json::from_str(&text.meta).map_err(|e| Error::json(META_FILE, e))?;
    let DatasetMeta { n, d, classes } = meta;
    if n == 0 || d == 0 || classes == 0 {
        return Err(Error::Dataset(format!("{META_FILE}: n, d and classes must be positive")));
    }

    let mut features = Vec::with_capacity(n.saturating_mul(d).min(1 << 24));
    let mut rows = 0;
    for (line, content) in data_lines(&text.features) {
        let start = features.len();
        for field in content.split('\t') {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(FEATURES_FILE, line, format!("expected a float, found {field:?}")))?;
            if !x.is_finite() {
                return Err(Error::parse(FEATURES_FILE, line, "non-finite feature value"));
            }
            features.push(x);
        }
        if features.len() - start != d {
            return Err(Error::parse(
                FEATURES_FILE,
                line,
                format!("expected {d} columns, found {}", features.len() - start),
            ));
        }
        rows += 1;
        if rows > n {
            return Err(Error::Dataset(format!("{FEATURES_FILE}: more than n={n} rows")));
        }
    }
    if rows != n {
        return Err(Error::Dataset(format!("{FEATURES_FILE}: {rows} rows, meta declares n={n}")));
    }

    let mut edges = Vec::new();
    for (line, content) in data_lines(&text.edges) {
        let mut fields = content.split('\t');
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::parse(EDGES_FILE, line, "expected \"u<TAB>v\""));
        };
        let (u, v) = (parse_usize(EDGES_FILE, line, a)?, parse_usize(EDGES_FILE, line, b)?);
        if u >= n || v >= n {
            return Err(Error::parse(EDGES_FILE, line, format!("edge ({u}, {v}) references a node >= n={n}")));
        }
        if u >= v {
            return Err(Error::parse(EDGES_FILE, line, format!("edge ({u}, {v}) must satisfy u < v")));
        }
        edges.push((u, v));
    }

    let mut labels = Vec::with_capacity(n);
    for (line, content) in data_lines(&text.labels) {
        let y = parse_usize(LABELS_FILE, line, content)?;
        if y >= classes {
            return Err(Error::parse(LABELS_FILE, line, format!("label {y} out of range for {classes} classes")));
        }
        labels.push(y);
        if labels.len() > n {
            return Err(Error::Dataset(format!("{LABELS_FILE}: more than n={n} labels")));
        }
    }
    if labels.len() != n {
        return Err(Error::Dataset(format!("{LABELS_FILE}: {} labels, meta declares n={n}", labels.len())));
    }

    let mut splits = Vec::with_capacity(n);
    for (line, content) in data_lines(&text.masks) {
        let split: Split = content
            .trim()
            .parse()
            .map_err(|_| Error::parse(MASKS_FILE, line, format!("expected train, val or test, found {content:?}")))?;
        splits.push(split);
        if splits.len() > n {
            return Err(Error::Dataset(format!("{MASKS_FILE}: more than n={n} entries")));
        }
    }
    if splits.len() != n {
        return Err(Error::Dataset(format!("{MASKS_FILE}: {} entries, meta declares n={n}", splits.len())));
    }

    Graph::new(n, edges, Tensor::matrix(n, d, features), labels, classes, splits)
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Graph> {
    let dir = dir.as_ref();
    let text = DatasetText {
        meta: read(dir, META_FILE)?,
        features: read(dir, FEATURES_FILE)?,
        edges: read(dir, EDGES_FILE)?,
        labels: read(dir, LABELS_FILE)?,
        masks: read(dir, MASKS_FILE)?,
    };
    parse_dataset(&text)
}

/// Renders `g` into the text of the five dataset files.
pub fn render_dataset(g: &Graph) -> DatasetText {
    let meta = DatasetMeta { n: g.n(), d: g.feature_dim(), classes: g.classes() };
    let mut features = String::new();
    for i in 0..g.n() {
        for (j, x) in g.features().row(i).iter().enumerate() {
            if j > 0 {
                features.push('\t');
            }
            // shortest representation that round-trips exactly
            let _ = write!(features, "{x:?}");
        }
        features.push('\n');
    }
    let mut edges = String::new();
    for &(u, v) in g.edges() {
        let _ = writeln!(edges, "{u}\t{v}");
    }
    let labels: String = g.labels().iter().map(|y| format!("{y}\n")).collect();
    let masks: String = g.splits().iter().map(|s| format!("{s}\n")).collect();
    DatasetText { meta: serde_json::to_string(&meta).expect("meta serializes") + "\n", features, edges, labels, masks }
}

pub fn save_dataset(g: &Graph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let text = render_dataset(g);
    for (name, content) in [
        (META_FILE, &text.meta),
        (FEATURES_FILE, &text.features),
        (EDGES_FILE, &text.edges),
        (LABELS_FILE, &text.labels),
        (MASKS_FILE, &text.masks),
    ] {
        let path = dir.join(name);
        fs::write(&path, content).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, SbmSpec};

    fn small() -> DatasetText {
        render_dataset(&generate_sbm(&SbmSpec::new(12, 2, 0.5, 0.1).with_seed(1)).unwrap())
    }

    #[test]
    fn text_round_trip() {
        let g = generate_sbm(&SbmSpec::new(40, 4, 0.3, 0.05).with_seed(3)).unwrap();
        assert_eq!(parse_dataset(&render_dataset(&g)).unwrap(), g);
    }

    #[test]
    fn directory_round_trip() {
        let g = generate_sbm(&SbmSpec::new(20, 2, 0.3, 0.05).with_seed(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&g, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), g);
    }

    #[test]
    fn edge_to_node_n_is_rejected() {
        let mut t = small();
        t.edges.push_str("3\t12\n");
        let msg = parse_dataset(&t).unwrap_err().to_string();
        assert!(msg.contains("edges.tsv"), "{msg}");
    }

    #[test]
    fn label_beyond_declared_classes_is_rejected() {
        let mut t = small();
        t.labels = t.labels.replacen('0', "2", 1);
        let msg = parse_dataset(&t).unwrap_err().to_string();
        assert!(msg.contains("labels.tsv") && msg.contains("out of range"), "{msg}");
    }

    #[test]
    fn inconsistent_node_count_is_rejected() {
        let mut t = small();
        t.meta = r#"{"n": 13, "d": 16, "classes": 2}"#.into();
        assert!(parse_dataset(&t).is_err());
    }

    #[test]
    fn unknown_meta_keys_are_rejected() {
        let mut t = small();
        t.meta = r#"{"n": 12, "d": 16, "classes": 2, "extra": 1}"#.into();
        assert!(parse_dataset(&t).is_err());
    }

    #[test]
    fn missing_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let msg = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("meta.json"), "{msg}");
    }
}
