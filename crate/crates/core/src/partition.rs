//! Median-based spatial partitioning (MSP): recursive median splits along
//! the widest axis until every leaf fits the on-chip array.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{quantize_tile, PointCloud, RawPoint, Tile};

/// Below this many points, subtrees are split on the calling thread.
const PARALLEL_SPLIT_MIN: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionTree {
    Node {
        axis: Axis,
        /// Largest coordinate on `axis` in the left subtree.
        median_value: f64,
        left: Box<PartitionTree>,
        right: Box<PartitionTree>,
    },
    /// Global point indices, ascending.
    Leaf(Vec<usize>),
}

impl PartitionTree {
    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&[usize]> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a [usize]>) {
        match self {
            PartitionTree::Leaf(ix) => out.push(ix),
            PartitionTree::Node { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            PartitionTree::Leaf(_) => 0,
            PartitionTree::Node { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

fn coord(points: &[RawPoint], i: usize, axis: Axis) -> f64 {
    points[i].coord(axis.index())
}

/// Splits `indices` at the median of `axis`. The left half receives
/// `floor(n/2)` points; coordinate ties are ordered by global index.
pub fn median_split(
    indices: &[usize],
    cloud: &PointCloud,
    axis: Axis,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if indices.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "median split needs at least 2 indices, got {}",
            indices.len()
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= cloud.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: cloud.len(),
        });
    }
    Ok(split_unchecked(indices, &cloud.points, axis))
}

fn split_unchecked(indices: &[usize], points: &[RawPoint], axis: Axis) -> (Vec<usize>, Vec<usize>) {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable_by(|&a, &b| {
        coord(points, a, axis)
            .total_cmp(&coord(points, b, axis))
            .then(a.cmp(&b))
    });
    let right = sorted.split_off(sorted.len() / 2);
    (sorted, right)
}

fn widest_axis(indices: &[usize], points: &[RawPoint]) -> Axis {
    let mut best = Axis::X;
    let mut best_extent = f64::NEG_INFINITY;
    for axis in Axis::ALL {
        let (lo, hi) = indices
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = coord(points, i, axis);
                (lo.min(v), hi.max(v))
            });
        if hi - lo > best_extent {
            best_extent = hi - lo;
            best = axis;
        }
    }
    best
}

fn build(indices: Vec<usize>, points: &[RawPoint], capacity: usize) -> PartitionTree {
    if indices.len() <= capacity {
        let mut leaf = indices;
        leaf.sort_unstable();
        return PartitionTree::Leaf(leaf);
    }
    let axis = widest_axis(&indices, points);
    let (left, right) = split_unchecked(&indices, points, axis);
    let median_value = left
        .iter()
        .map(|&i| coord(points, i, axis))
        .fold(f64::NEG_INFINITY, f64::max);
    let (l, r) = if indices.len() >= PARALLEL_SPLIT_MIN {
        rayon::join(
            || build(left, points, capacity),
            || build(right, points, capacity),
        )
    } else {
        (
            build(left, points, capacity),
            build(right, points, capacity),
        )
    };
    PartitionTree::Node {
        axis,
        median_value,
        left: Box::new(l),
        right: Box::new(r),
    }
}

pub fn partition_tree(cloud: &PointCloud, capacity: usize) -> Result<PartitionTree> {
    if capacity == 0 {
        return Err(Error::InvalidArgument("capacity must be at least 1".into()));
    }
    if cloud.is_empty() {
        return Err(Error::Empty("point cloud".into()));
    }
    Ok(build((0..cloud.len()).collect(), &cloud.points, capacity))
}

/// Partitions the cloud and quantizes each leaf into a [`Tile`].
pub fn msp_partition(cloud: &PointCloud, capacity: usize) -> Result<Vec<Tile>> {
    let tree = partition_tree(cloud, capacity)?;
    tiles_from_tree(&tree, cloud, capacity)
}

pub fn tiles_from_tree(
    tree: &PartitionTree,
    cloud: &PointCloud,
    capacity: usize,
) -> Result<Vec<Tile>> {
    tree.leaves()
        .into_iter()
        .map(|leaf| {
            let pts: Vec<RawPoint> = leaf.iter().map(|&i| cloud.points[i]).collect();
            quantize_tile(&pts, leaf, capacity)
        })
        .collect()
}

/// Mean fill ratio of the tiles.
pub fn utilization(tiles: &[Tile], capacity: usize) -> f64 {
    let sizes: Vec<usize> = tiles.iter().map(Tile::len).collect();
    utilization_of_sizes(&sizes, capacity)
}

pub fn utilization_of_sizes(sizes: &[usize], capacity: usize) -> f64 {
    if sizes.is_empty() || capacity == 0 {
        return 0.0;
    }
    sizes
        .iter()
        .map(|&s| s as f64 / capacity as f64)
        .sum::<f64>()
        / sizes.len() as f64
}
