//! Evaluation: score a reconstructed propagation graph against the ground
//! truth on exact parent edges, and render graphs as DOT.

use serde::{Deserialize, Serialize};

use crate::traceback::PropagationGraph;

/// Edge-level accuracy of one reconstruction.
///
/// An edge counts as a true positive only when both endpoints match a
/// ground-truth parent edge exactly. With nothing reconstructed, precision
/// is vacuously 1; with nothing to find, recall is vacuously 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathMetrics {
    pub tp: u32,
    #[serde(rename = "fn")]
    pub fn_: u32,
    pub fp: u32,
    pub precision: f64,
    pub recall: f64,
    /// The reconstructed origin set equals the true one exactly.
    pub origins_correct: bool,
}

/// Compare a reconstruction's parent edges against the ground truth's.
pub fn compare_paths(reconstruction: &PropagationGraph, truth: &PropagationGraph) -> PathMetrics {
    let rec = reconstruction.edge_set();
    let tru = truth.edge_set();
    let tp = rec.intersection(&tru).count() as u32;
    let fp = (rec.len() - rec.intersection(&tru).count()) as u32;
    let fn_ = (tru.len() - tru.intersection(&rec).count()) as u32;
    let precision = if tp + fp == 0 { 1.0 } else { f64::from(tp) / f64::from(tp + fp) };
    let recall = if tp + fn_ == 0 { 1.0 } else { f64::from(tp) / f64::from(tp + fn_) };
    PathMetrics {
        tp,
        fn_,
        fp,
        precision,
        recall,
        origins_correct: reconstruction.origins == truth.origins,
    }
}

/// Render one graph as DOT: `parent -> child` per edge, origins drawn as
/// double circles.
pub fn export_dot(graph: &PropagationGraph) -> String {
    let mut out = String::from("digraph propagation {\n");
    out.push_str("  rankdir=TB;\n");
    for origin in &graph.origins {
        out.push_str(&format!("  {origin} [shape=doublecircle];\n"));
    }
    for host in &graph.infected {
        if !graph.origins.contains(host) {
            out.push_str(&format!("  {host};\n"));
        }
    }
    for e in &graph.edges {
        out.push_str(&format!("  {} -> {};\n", e.parent, e.child));
    }
    out.push_str("}\n");
    out
}

/// Render a reconstruction against the truth in one picture: matched edges
/// solid, missed true edges dashed, spurious reconstructed edges red and
/// dotted.
pub fn export_dot_diff(reconstruction: &PropagationGraph, truth: &PropagationGraph) -> String {
    let rec = reconstruction.edge_set();
    let tru = truth.edge_set();
    let mut out = String::from("digraph comparison {\n");
    out.push_str("  rankdir=TB;\n");
    for origin in &truth.origins {
        out.push_str(&format!("  {origin} [shape=doublecircle];\n"));
    }
    for (parent, child) in rec.intersection(&tru) {
        out.push_str(&format!("  {parent} -> {child};\n"));
    }
    for (parent, child) in tru.difference(&rec) {
        out.push_str(&format!("  {parent} -> {child} [style=dashed];\n"));
    }
    for (parent, child) in rec.difference(&tru) {
        out.push_str(&format!("  {parent} -> {child} [color=red, style=dotted];\n"));
    }
    out.push_str("}\n");
    out
}
