//! Equal-angle radial layout.
//!
//! The tree is rooted at its topological center, which sits at the origin.
//! Every subtree gets an angular wedge proportional to its leaf count; a
//! child is placed along the bisector of its wedge at its (display) edge
//! length from the parent. Children are visited in edge order.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::nj::NjTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    /// Edges shorter than this are drawn at this length.
    pub min_edge_length: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self { min_edge_length: 0.0 }
    }
}

/// Fills node coordinates in place.
pub fn radial_layout(tree: &mut NjTree, cfg: &LayoutConfig) {
    if tree.node_count() == 0 {
        return;
    }
    let root = tree.center();
    let (parent, order) = tree.rooted(root);

    // Leaves under each node; a leaf root does not count itself.
    let mut leaves = vec![0usize; tree.node_count()];
    for &v in order.iter().rev() {
        let own = usize::from(tree.is_leaf(v) && v != root);
        let below: usize = tree.children(v, &parent).map(|(c, _)| leaves[c]).sum();
        leaves[v] = own + below;
    }

    let total = leaves[root].max(1) as f64;
    let mut wedge_start = vec![0.0; tree.node_count()];
    let mut pos = vec![(0.0, 0.0); tree.node_count()];
    for &v in &order {
        let mut start = wedge_start[v];
        let (px, py) = pos[v];
        let children: Vec<(usize, usize)> = tree.children(v, &parent).collect();
        for (c, e) in children {
            let width = TAU * leaves[c] as f64 / total;
            let angle = start + 0.5 * width;
            let len = tree.edges()[e].length.max(cfg.min_edge_length);
            pos[c] = (px + len * angle.cos(), py + len * angle.sin());
            wedge_start[c] = start;
            start += width;
        }
    }
    for (node, (x, y)) in tree.nodes_mut().iter_mut().zip(pos) {
        node.x = x;
        node.y = y;
    }
}
