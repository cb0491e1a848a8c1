//! Line-oriented JSON dataset files.
//!
//! Line 1 is a header with schema version, provenance and split sizes; every
//! following line is one graph, written train first, then val, then test.
//! Edges are stored once per undirected pair in canonical `(min, max)`
//! order, so saving is idempotent: load → save reproduces the input bytes.

use super::{
    expand_edge_labels, DatasetMeta, DatasetSplit, Features, Graph, GraphError, Target, TaskKind,
    SCHEMA_VERSION,
};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    schema_version: u32,
    generator: String,
    seed: u64,
    task: TaskKind,
    n_train: usize,
    n_val: usize,
    n_test: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphLine {
    n: usize,
    edges: Vec<(usize, usize)>,
    x: Features,
    e: Option<Features>,
    y: Target,
}

fn parse_err(line: usize, detail: impl ToString) -> GraphError {
    GraphError::Parse {
        line,
        detail: detail.to_string(),
    }
}

fn target_matches(task: TaskKind, target: &Target) -> bool {
    matches!(
        (task, target),
        (TaskKind::NodeClass, Target::NodeLabels(_))
            | (TaskKind::GraphClass, Target::GraphLabel(_))
            | (TaskKind::GraphRegress, Target::GraphScalar(_))
            | (TaskKind::EdgeClass, Target::EdgeLabels(_))
    )
}

fn graph_to_line(g: &Graph) -> GraphLine {
    let edges = g.undirected_edges();
    let e = g.edge_feat.as_ref().map(|f| match f {
        Features::Codes(c) => {
            Features::Codes(edges.iter().map(|&(v, u)| c[g.slot_of(v, u)]).collect())
        }
        Features::Dense { dim, values } => {
            let mut out = Vec::with_capacity(edges.len() * dim);
            for &(v, u) in &edges {
                let s = g.slot_of(v, u);
                out.extend_from_slice(&values[s * dim..(s + 1) * dim]);
            }
            Features::Dense {
                dim: *dim,
                values: out,
            }
        }
    });
    let y = match &g.target {
        Target::EdgeLabels(l) => Target::EdgeLabels(
            edges.iter().map(|&(v, u)| l[g.slot_of(v, u)]).collect(),
        ),
        t => t.clone(),
    };
    GraphLine {
        n: g.n_nodes(),
        edges,
        x: g.node_feat.clone(),
        e,
        y,
    }
}

fn line_to_graph(line: GraphLine, lineno: usize) -> Result<Graph, GraphError> {
    let GraphLine { n, edges, x, e, y } = line;
    match y {
        Target::EdgeLabels(per_edge) => {
            if per_edge.len() != edges.len() {
                return Err(parse_err(
                    lineno,
                    format!(
                        "{} edge labels for {} edges",
                        per_edge.len(),
                        edges.len()
                    ),
                ));
            }
            let g = Graph::from_edges(n, &edges, true, x, e, Target::EdgeLabels(vec![]))
                .map_err(|err| parse_err(lineno, err))?;
            let labels = expand_edge_labels(&g, &edges, &per_edge);
            Ok(Graph {
                target: Target::EdgeLabels(labels),
                ..g
            })
        }
        y => Graph::from_edges(n, &edges, true, x, e, y).map_err(|err| parse_err(lineno, err)),
    }
}

/// Renders a dataset in the on-disk format. Deterministic: equal splits
/// yield equal strings.
pub fn dataset_to_string(split: &DatasetSplit) -> Result<String, GraphError> {
    let header = HeaderLine {
        schema_version: split.meta.schema_version,
        generator: split.meta.generator.clone(),
        seed: split.meta.seed,
        task: split.task,
        n_train: split.train.len(),
        n_val: split.val.len(),
        n_test: split.test.len(),
    };
    let mut out = serde_json::to_string(&header).map_err(|e| parse_err(1, e))?;
    out.push('\n');
    for (i, g) in split
        .train
        .iter()
        .chain(&split.val)
        .chain(&split.test)
        .enumerate()
    {
        if !target_matches(split.task, &g.target) {
            return Err(parse_err(
                i + 2,
                format!("target does not fit task {}", split.task),
            ));
        }
        out.push_str(&serde_json::to_string(&graph_to_line(g)).map_err(|e| parse_err(i + 2, e))?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes a dataset file, creating parent directories as needed.
pub fn save_dataset(split: &DatasetSplit, path: &Path) -> Result<(), GraphError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(dataset_to_string(split)?.as_bytes())?;
    Ok(())
}

/// Reads a dataset file back. Errors carry 1-based line numbers.
pub fn load_dataset(path: &Path) -> Result<DatasetSplit, GraphError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header_text) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty dataset file"))?;
    let header: HeaderLine =
        serde_json::from_str(header_text).map_err(|e| parse_err(1, e))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(parse_err(
            1,
            format!(
                "schema version {} unsupported (expected {})",
                header.schema_version, SCHEMA_VERSION
            ),
        ));
    }
    let mut graphs = Vec::with_capacity(header.n_train + header.n_val + header.n_test);
    for (idx, text) in lines {
        if text.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let line: GraphLine = serde_json::from_str(text).map_err(|e| parse_err(lineno, e))?;
        let g = line_to_graph(line, lineno)?;
        if !target_matches(header.task, &g.target) {
            return Err(parse_err(
                lineno,
                format!("target does not fit task {}", header.task),
            ));
        }
        graphs.push(g);
    }
    let want = header.n_train + header.n_val + header.n_test;
    if graphs.len() != want {
        return Err(parse_err(
            graphs.len() + 1,
            format!("{} graphs on disk, header promises {}", graphs.len(), want),
        ));
    }
    let mut it = graphs.into_iter();
    let train: Vec<Graph> = it.by_ref().take(header.n_train).collect();
    let val: Vec<Graph> = it.by_ref().take(header.n_val).collect();
    let test: Vec<Graph> = it.collect();
    Ok(DatasetSplit {
        train,
        val,
        test,
        task: header.task,
        meta: DatasetMeta {
            schema_version: header.schema_version,
            generator: header.generator,
            seed: header.seed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generate::{
        molecule_like, sbm_pattern, tour_like, MoleculeLikeConfig, SbmPatternConfig, SplitSizes,
        TourLikeConfig,
    };

    fn small_sizes() -> SplitSizes {
        SplitSizes {
            n_train: 4,
            n_val: 2,
            n_test: 2,
        }
    }

    #[test]
    fn round_trip_is_byte_stable_across_feature_kinds() {
        let splits = vec![
            sbm_pattern(&SbmPatternConfig {
                sizes: small_sizes(),
                ..Default::default()
            })
            .unwrap(),
            molecule_like(&MoleculeLikeConfig {
                sizes: small_sizes(),
                ..Default::default()
            })
            .unwrap(),
            tour_like(&TourLikeConfig {
                sizes: small_sizes(),
                ..Default::default()
            })
            .unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        for (i, split) in splits.iter().enumerate() {
            let path = dir.path().join(format!("d{i}.jsonl"));
            save_dataset(split, &path).unwrap();
            let bytes1 = std::fs::read(&path).unwrap();
            let loaded = load_dataset(&path).unwrap();
            assert_eq!(loaded.train, split.train);
            assert_eq!(loaded.val, split.val);
            assert_eq!(loaded.test, split.test);
            assert_eq!(loaded.task, split.task);
            assert_eq!(loaded.meta, split.meta);
            let path2 = dir.path().join(format!("d{i}_again.jsonl"));
            save_dataset(&loaded, &path2).unwrap();
            let bytes2 = std::fs::read(&path2).unwrap();
            assert_eq!(bytes1, bytes2, "dataset {i} not byte-stable");
        }
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let split = sbm_pattern(&SbmPatternConfig {
            sizes: small_sizes(),
            ..Default::default()
        })
        .unwrap();
        let mut text = dataset_to_string(&split).unwrap();
        // Corrupt the third line (second graph).
        let lines: Vec<&str> = text.lines().collect();
        let mut broken: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        broken[2] = "{not json".to_string();
        text = broken.join("\n");
        text.push('\n');
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.jsonl");
        std::fs::write(&path, text).unwrap();
        match load_dataset(&path) {
            Err(GraphError::Parse { line: 3, .. }) => {}
            other => panic!("expected parse error at line 3, got {other:?}"),
        }
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let split = sbm_pattern(&SbmPatternConfig {
            sizes: small_sizes(),
            ..Default::default()
        })
        .unwrap();
        let text = dataset_to_string(&split)
            .unwrap()
            .replacen("\"schema_version\":1", "\"schema_version\":9", 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v9.jsonl");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(GraphError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn graph_count_mismatch_is_rejected() {
        let split = sbm_pattern(&SbmPatternConfig {
            sizes: small_sizes(),
            ..Default::default()
        })
        .unwrap();
        let text = dataset_to_string(&split).unwrap();
        let truncated: String = text
            .lines()
            .take(4)
            .map(|l| format!("{l}\n"))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.jsonl");
        std::fs::write(&path, truncated).unwrap();
        assert!(matches!(load_dataset(&path), Err(GraphError::Parse { .. })));
    }
}
