//! Exact nearest-center search over a kd-tree.
//!
//! Branches are pruned only when the splitting-plane bound strictly exceeds
//! the best distance found, so equidistant centers are always visited and the
//! lowest id wins ties exactly as a linear scan would.

use crate::geometry::sq_dist;

#[derive(Debug, Clone)]
enum Node {
    Leaf(Vec<u32>),
    Split {
        dim: usize,
        value: f32,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    root: Node,
    leaf_size: usize,
}

impl KdTree {
    /// `centers` is row-major with `dim` columns.
    pub fn build(centers: &[f32], dim: usize, leaf_size: usize) -> Self {
        let k = centers.len() / dim;
        let ids: Vec<u32> = (0..k as u32).collect();
        let leaf_size = leaf_size.max(1);
        KdTree {
            root: build_node(centers, dim, ids, leaf_size),
            leaf_size,
        }
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    /// Returns `(id, squared distance)` of the nearest center.
    pub fn nearest(&self, centers: &[f32], dim: usize, q: &[f32]) -> (u32, f32) {
        let mut best = (u32::MAX, f32::INFINITY);
        search(&self.root, centers, dim, q, &mut best);
        best
    }
}

fn build_node(centers: &[f32], dim: usize, mut ids: Vec<u32>, leaf_size: usize) -> Node {
    if ids.len() <= leaf_size {
        return Node::Leaf(ids);
    }
    let row = |i: u32| &centers[i as usize * dim..(i as usize + 1) * dim];
    // Split on the dimension of largest spread.
    let mut split_dim = 0;
    let mut widest = -1.0f32;
    for d in 0..dim {
        let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
        for &i in &ids {
            let v = row(i)[d];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi - lo > widest {
            widest = hi - lo;
            split_dim = d;
        }
    }
    if widest <= 0.0 {
        return Node::Leaf(ids);
    }
    ids.sort_by(|&a, &b| row(a)[split_dim].total_cmp(&row(b)[split_dim]).then(a.cmp(&b)));
    let mid = ids.len() / 2;
    let value = row(ids[mid])[split_dim];
    let right = ids.split_off(mid);
    Node::Split {
        dim: split_dim,
        value,
        left: Box::new(build_node(centers, dim, ids, leaf_size)),
        right: Box::new(build_node(centers, dim, right, leaf_size)),
    }
}

fn search(node: &Node, centers: &[f32], dim: usize, q: &[f32], best: &mut (u32, f32)) {
    match node {
        Node::Leaf(ids) => {
            for &i in ids {
                let d = sq_dist(q, &centers[i as usize * dim..(i as usize + 1) * dim]);
                if d < best.1 || (d == best.1 && i < best.0) {
                    *best = (i, d);
                }
            }
        }
        Node::Split { dim: sd, value, left, right } => {
            // Left holds values <= split, right holds values >= split.
            let diff = q[*sd] - value;
            let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
            search(near, centers, dim, q, best);
            if diff * diff <= best.1 {
                search(far, centers, dim, q, best);
            }
        }
    }
}
