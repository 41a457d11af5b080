//! Exact k-nearest-neighbour search over 3D points.
//!
//! [`KdIndex`] is a balanced kd-tree with median splits on the axis of
//! largest spread. Queries are exact: results (including tie order) are
//! identical to [`knn_brute_force`], which defines the reference semantics.
//! Ordering is by Euclidean distance, ties broken by the lower point index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Balanced kd-tree over a point set. Original point indices are retained.
#[derive(Debug, Clone)]
pub struct KdIndex {
    points: Vec<Point3>,
    /// Point indices permuted so that every leaf owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node>,
    root: usize,
}

/// One query hit: original point index and Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

/// Heap entry ordered by (squared distance, index); the heap top is the
/// current worst candidate.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    d2: f64,
    index: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

impl KdIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        Self::from_points(cloud.points().to_vec())
    }

    pub fn from_points(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        let n = points.len();
        let root = build_node(&points, &mut order, 0, n, &mut nodes);
        Ok(KdIndex {
            points,
            order,
            nodes,
            root,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// Depth of the tree; a single leaf has depth 0.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, self.root)
    }

    /// Every stored point index, in leaf order.
    pub fn leaf_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        let mut stack = vec![self.root];
        while let Some(at) = stack.pop() {
            match self.nodes[at] {
                Node::Leaf { start, end } => out.extend_from_slice(&self.order[start..end]),
                Node::Split { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    /// The `k` nearest points to `query`, sorted ascending. `k` is clamped to
    /// the index size.
    pub fn knn(&self, query: Point3, k: usize) -> Result<Vec<Neighbor>> {
        self.knn_excluding(query, k, None)
    }

    /// Like [`KdIndex::knn`] but never returns the point with index `exclude`.
    pub fn knn_excluding(
        &self,
        query: Point3,
        k: usize,
        exclude: Option<usize>,
    ) -> Result<Vec<Neighbor>> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let available = self.len() - usize::from(exclude.is_some_and(|e| e < self.len()));
        let k = k.min(available);
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(self.root, query, k, exclude, &mut heap);
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| Neighbor {
                index: c.index,
                distance: c.d2.sqrt(),
            })
            .collect())
    }

    fn search(
        &self,
        at: usize,
        query: Point3,
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[at] {
            Node::Leaf { start, end } => {
                for &index in &self.order[start..end] {
                    if Some(index) == exclude {
                        continue;
                    }
                    let cand = Candidate {
                        d2: query.squared_distance(self.points[index]),
                        index,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap holds k items") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query.coord(axis) - value;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, k, exclude, heap);
                // Equal plane distance must still be explored: a tie on
                // distance can be won by a lower index on the far side.
                let plane = diff * diff;
                if heap.len() < k || plane <= heap.peek().expect("non-empty").d2 {
                    self.search(far, query, k, exclude, heap);
                }
            }
        }
    }
}

fn build_node(
    points: &[Point3],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return nodes.len() - 1;
    }
    let slice = &mut order[start..end];
    let axis = widest_axis(points, slice);
    let mid = slice.len() / 2;
    // Median by (coordinate, index) so construction is deterministic.
    slice.select_nth_unstable_by(mid, |&a, &b| {
        points[a]
            .coord(axis)
            .total_cmp(&points[b].coord(axis))
            .then(a.cmp(&b))
    });
    let value = points[slice[mid]].coord(axis);
    // Left holds coordinates <= value, right holds >= value; both sides are
    // searched whenever the query lies within the plane distance.
    let left = build_node(points, order, start, start + mid, nodes);
    let right = build_node(points, order, start + mid, end, nodes);
    nodes.push(Node::Split {
        axis,
        value,
        left,
        right,
    });
    nodes.len() - 1
}

fn widest_axis(points: &[Point3], idx: &[usize]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in idx {
        let p = points[i].to_array();
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .unwrap_or(0)
}

pub fn build_index(cloud: &PointCloud) -> Result<KdIndex> {
    KdIndex::build(cloud)
}

/// Reference semantics for [`KdIndex::knn`]: a full scan, sorted by
/// (distance, index).
pub fn knn_brute_force(
    points: &[Point3],
    query: Point3,
    k: usize,
    exclude: Option<usize>,
) -> Result<Vec<Neighbor>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut all: Vec<Candidate> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(index, p)| Candidate {
            d2: query.squared_distance(*p),
            index,
        })
        .collect();
    all.sort();
    all.truncate(k);
    Ok(all
        .into_iter()
        .map(|c| Neighbor {
            index: c.index,
            distance: c.d2.sqrt(),
        })
        .collect())
}

/// Per-point lists of the `k` nearest *other* points. `k` is clamped to
/// `n - 1`.
pub fn knn_graph(cloud: &PointCloud, k: usize) -> Result<Vec<Vec<usize>>> {
    if cloud.len() < 2 {
        return Err(Error::invalid("a neighbour graph needs at least 2 points"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let index = KdIndex::build(cloud)?;
    cloud
        .points()
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            Ok(index
                .knn_excluding(p, k, Some(i))?
                .into_iter()
                .map(|n| n.index)
                .collect())
        })
        .collect()
}
