//! Geometric cluster trees and admissibility-based block trees.

use std::sync::Arc;

use crate::vec3::{BoundingBox, Vec3};

pub const DEFAULT_LEAF_SIZE: usize = 32;
pub const DEFAULT_ETA: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterNode {
    /// Index range into the tree ordering.
    pub start: usize,
    pub end: usize,
    /// Box used for the admissibility test.
    pub bbox: BoundingBox,
    pub children: Option<[usize; 2]>,
    pub level: usize,
}

impl ClusterNode {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Binary tree over point indices; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTree {
    nodes: Vec<ClusterNode>,
    /// perm[tree position] = original index
    perm: Vec<usize>,
    /// inverse[original index] = tree position
    inverse: Vec<usize>,
    leaf_size: usize,
}

impl ClusterTree {
    pub fn nodes(&self) -> &[ClusterNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &ClusterNode {
        &self.nodes[i]
    }

    pub fn root(&self) -> &ClusterNode {
        &self.nodes[0]
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn inverse_permutation(&self) -> &[usize] {
        &self.inverse
    }

    /// Original indices of node `i`.
    pub fn indices(&self, i: usize) -> &[usize] {
        let n = &self.nodes[i];
        &self.perm[n.start..n.end]
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf())
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0)
    }
}

/// Cluster tree whose boxes bound the points themselves.
pub fn build_cluster_tree(centers: &[Vec3], leaf_size: usize) -> ClusterTree {
    let boxes: Vec<BoundingBox> = centers.iter().map(|&c| BoundingBox::from_points([&c])).collect();
    build_cluster_tree_with_supports(centers, &boxes, leaf_size)
}

/// Splits by the centers but bounds each cluster by the union of its
/// members' support boxes, so that disjoint boxes imply disjoint supports.
pub fn build_cluster_tree_with_supports(centers: &[Vec3], supports: &[BoundingBox], leaf_size: usize) -> ClusterTree {
    assert_eq!(centers.len(), supports.len(), "one support box per center");
    let leaf_size = leaf_size.max(1);
    let n = centers.len();
    let mut tree = ClusterTree {
        nodes: Vec::new(),
        perm: (0..n).collect(),
        inverse: vec![0; n],
        leaf_size,
    };
    let mut stack = vec![(0usize, n, 0usize, None::<(usize, usize)>)];
    // depth-first; children are linked to their parent after creation
    while let Some((start, end, level, parent)) = stack.pop() {
        let idx = &mut tree.perm[start..end];
        let mut bbox = BoundingBox::empty();
        for &i in idx.iter() {
            bbox.merge(&supports[i]);
        }
        let id = tree.nodes.len();
        tree.nodes.push(ClusterNode {
            start,
            end,
            bbox,
            children: None,
            level,
        });
        if let Some((p, slot)) = parent {
            let ch = tree.nodes[p].children.get_or_insert([0, 0]);
            ch[slot] = id;
        }
        if end - start > leaf_size {
            let split_box = BoundingBox::from_points(idx.iter().map(|&i| &centers[i]));
            let axis = split_box.longest_axis();
            let mid = (end - start) / 2;
            idx.select_nth_unstable_by(mid, |&a, &b| {
                centers[a][axis].total_cmp(&centers[b][axis]).then(a.cmp(&b))
            });
            // keep each half in a canonical order
            idx[..mid].sort_unstable_by(|&a, &b| centers[a][axis].total_cmp(&centers[b][axis]).then(a.cmp(&b)));
            idx[mid..].sort_unstable_by(|&a, &b| centers[a][axis].total_cmp(&centers[b][axis]).then(a.cmp(&b)));
            stack.push((start + mid, end, level + 1, Some((id, 1))));
            stack.push((start, start + mid, level + 1, Some((id, 0))));
        }
    }
    for (pos, &orig) in tree.perm.iter().enumerate() {
        tree.inverse[orig] = pos;
    }
    tree
}

/// min(diam t, diam s) ≤ η·dist(t, s) with a strictly positive distance.
pub fn is_admissible(t: &BoundingBox, s: &BoundingBox, eta: f64) -> bool {
    let dist = t.distance(s);
    eta > 0.0 && dist > 0.0 && t.diameter().min(s.diameter()) <= eta * dist
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Admissible,
    Inadmissible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLeaf {
    pub row: usize,
    pub col: usize,
    pub kind: BlockKind,
}

/// Leaves of the block cluster tree over (row tree × column tree).
#[derive(Debug, Clone)]
pub struct BlockTree {
    pub rows: Arc<ClusterTree>,
    pub cols: Arc<ClusterTree>,
    pub eta: f64,
    pub leaves: Vec<BlockLeaf>,
}

impl BlockTree {
    pub fn leaf_shape(&self, leaf: &BlockLeaf) -> (usize, usize) {
        (self.rows.node(leaf.row).len(), self.cols.node(leaf.col).len())
    }

    pub fn admissible_count(&self) -> usize {
        self.leaves.iter().filter(|l| l.kind == BlockKind::Admissible).count()
    }
}

pub fn build_block_tree(rows: Arc<ClusterTree>, cols: Arc<ClusterTree>, eta: f64) -> BlockTree {
    let mut leaves = Vec::new();
    let mut stack = vec![(0usize, 0usize)];
    while let Some((t, s)) = stack.pop() {
        let (nt, ns) = (rows.node(t), cols.node(s));
        if is_admissible(&nt.bbox, &ns.bbox, eta) {
            leaves.push(BlockLeaf {
                row: t,
                col: s,
                kind: BlockKind::Admissible,
            });
            continue;
        }
        match (nt.children, ns.children) {
            (None, None) => leaves.push(BlockLeaf {
                row: t,
                col: s,
                kind: BlockKind::Inadmissible,
            }),
            (Some(ct), None) => stack.extend(ct.iter().rev().map(|&c| (c, s))),
            (None, Some(cs)) => stack.extend(cs.iter().rev().map(|&c| (t, c))),
            (Some(ct), Some(cs)) => {
                for &a in ct.iter().rev() {
                    for &b in cs.iter().rev() {
                        stack.push((a, b));
                    }
                }
            }
        }
    }
    BlockTree { rows, cols, eta, leaves }
}
