//! Reference distances, exact sampling/grouping oracles and the L1 lattice
//! query.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::QuantPoint;

/// An L1 distance in the 19-bit range used by the distance engine and CAM.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Distance19(u32);

impl Distance19 {
    pub const BITS: u32 = 19;
    pub const MAX: Distance19 = Distance19((1 << 19) - 1);
    pub const ZERO: Distance19 = Distance19(0);

    pub fn new(value: u32) -> Result<Self> {
        if value > Self::MAX.0 {
            return Err(Error::InvalidArgument(format!(
                "{value} does not fit in 19 bits"
            )));
        }
        Ok(Self(value))
    }

    /// Caller guarantees `value < 2^19`.
    #[inline]
    pub(crate) const fn from_raw(value: u32) -> Self {
        Self(value)
    }

    #[inline]
    pub const fn get(self) -> u32 {
        self.0
    }

    #[inline]
    pub const fn bit(self, pos: u32) -> bool {
        (self.0 >> pos) & 1 == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryConfig {
    /// Ball-query radius in quantized units.
    pub radius_r: u32,
    pub scale_factor: f64,
    pub max_neighbors_k: usize,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            radius_r: 6554,
            scale_factor: 1.6,
            max_neighbors_k: 32,
        }
    }
}

impl QueryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_factor > 0.0 && self.scale_factor.is_finite()) {
            return Err(Error::Config(format!(
                "scale factor must be positive, got {}",
                self.scale_factor
            )));
        }
        if self.max_neighbors_k == 0 {
            return Err(Error::Config("max_neighbors_k must be at least 1".into()));
        }
        Ok(())
    }

    /// Lattice range `L = round(scale_factor * R)`, half up.
    pub fn lattice_range(&self) -> u32 {
        (self.scale_factor * f64::from(self.radius_r) + 0.5).floor() as u32
    }
}

#[inline]
pub fn l2_sq(a: QuantPoint, b: QuantPoint) -> u64 {
    a.coords()
        .iter()
        .zip(b.coords())
        .map(|(&p, q)| {
            let d = u64::from(p.abs_diff(q));
            d * d
        })
        .sum()
}

#[inline]
pub fn l1(a: QuantPoint, b: QuantPoint) -> Distance19 {
    let s: u32 = a
        .coords()
        .iter()
        .zip(b.coords())
        .map(|(&p, q)| u32::from(p.abs_diff(q)))
        .sum();
    Distance19::from_raw(s)
}

#[inline]
pub fn distance(metric: Metric, a: QuantPoint, b: QuantPoint) -> u64 {
    match metric {
        Metric::L1 => u64::from(l1(a, b).get()),
        Metric::L2 => l2_sq(a, b),
    }
}

/// Farthest point sampling with running minimum distances. The first
/// centroid is `seed_index`; each later one maximizes the distance to the
/// sampled set among unsampled points, ties to the lowest index.
pub fn exact_fps(
    points: &[QuantPoint],
    m: usize,
    seed_index: usize,
    metric: Metric,
) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "sample count {m} outside 1..={n}"
        )));
    }
    if seed_index >= n {
        return Err(Error::IndexOutOfRange {
            index: seed_index,
            len: n,
        });
    }
    let mut min_dist = vec![u64::MAX; n];
    let mut sampled = vec![false; n];
    let mut out = Vec::with_capacity(m);
    let mut current = seed_index;
    loop {
        out.push(current);
        sampled[current] = true;
        if out.len() == m {
            return Ok(out);
        }
        let c = points[current];
        let mut best: Option<(u64, usize)> = None;
        for (i, p) in points.iter().enumerate() {
            let d = distance(metric, *p, c);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if !sampled[i] && best.is_none_or(|(bd, _)| min_dist[i] > bd) {
                best = Some((min_dist[i], i));
            }
        }
        current = best.expect("m <= n leaves an unsampled point").1;
    }
}

fn nearest_within(
    points: &[QuantPoint],
    center: QuantPoint,
    limit: u64,
    k: usize,
    metric: Metric,
) -> Vec<usize> {
    let mut hits: Vec<(u64, usize)> = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let d = distance(metric, *p, center);
            (d <= limit).then_some((d, i))
        })
        .collect();
    hits.sort_unstable();
    hits.truncate(k);
    hits.into_iter().map(|(_, i)| i).collect()
}

/// Points within L2 radius `radius` of the center, nearest `k` first.
pub fn ball_query(
    points: &[QuantPoint],
    center_idx: usize,
    radius: u32,
    k: usize,
) -> Result<Vec<usize>> {
    let center = *points.get(center_idx).ok_or(Error::IndexOutOfRange {
        index: center_idx,
        len: points.len(),
    })?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let r = u64::from(radius);
    Ok(nearest_within(points, center, r * r, k, Metric::L2))
}

/// Points within L1 range `L = round(scale * R)` of the center, nearest
/// `K` by L1 first.
pub fn lattice_query(
    points: &[QuantPoint],
    center_idx: usize,
    cfg: &QueryConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    let center = *points.get(center_idx).ok_or(Error::IndexOutOfRange {
        index: center_idx,
        len: points.len(),
    })?;
    Ok(nearest_within(
        points,
        center,
        u64::from(cfg.lattice_range()),
        cfg.max_neighbors_k,
        Metric::L1,
    ))
}

pub fn knn(
    points: &[QuantPoint],
    center: QuantPoint,
    k: usize,
    metric: Metric,
) -> Result<Vec<usize>> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1..={}",
            points.len()
        )));
    }
    Ok(nearest_within(points, center, u64::MAX, k, metric))
}

/// Smoothing term of the inverse-distance weights, in quantized units.
pub const INTERPOLATION_EPS: f64 = 1.0;

/// Normalized inverse-distance weights `(1/(d+eps)) / sum_j 1/(d_j+eps)`.
pub fn interpolate_weights(distances: &[Distance19]) -> Vec<f64> {
    let inv: Vec<f64> = distances
        .iter()
        .map(|d| 1.0 / (f64::from(d.get()) + INTERPOLATION_EPS))
        .collect();
    let total: f64 = inv.iter().sum();
    inv.into_iter().map(|w| w / total).collect()
}
