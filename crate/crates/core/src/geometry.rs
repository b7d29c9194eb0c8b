//! Planar locations, datasets, and a 2-D k-d tree for fixed-radius neighbor search.
//!
//! Neighborhoods are open balls: a point at distance exactly `radius` is not a neighbor. Compactly
//! supported covariances vanish at their support radius, so boundary pairs would only store
//! structural zeros.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparsePattern;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn distance(&self, other: &Location) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    #[inline]
    fn coord(&self, axis: u8) -> f64 {
        if axis == 0 {
            self.x
        } else {
            self.y
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Observed values at distinct planar locations.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    locations: Vec<Location>,
    values: Vec<f64>,
    name: Option<String>,
}

impl Dataset {
    /// Validates lengths, finiteness, and that no location appears twice.
    pub fn new(locations: Vec<Location>, values: Vec<f64>) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::Ingest {
                message: "dataset is empty".into(),
                indices: vec![],
            });
        }
        if locations.len() != values.len() {
            return Err(Error::Ingest {
                message: format!("{} locations but {} values", locations.len(), values.len()),
                indices: vec![],
            });
        }
        let bad: Vec<usize> = (0..locations.len())
            .filter(|&i| !locations[i].is_finite() || !values[i].is_finite())
            .collect();
        if !bad.is_empty() {
            return Err(Error::Ingest {
                message: "non-finite coordinate or value".into(),
                indices: bad,
            });
        }
        check_duplicates(&locations)?;
        Ok(Self {
            locations,
            values,
            name: None,
        })
    }

    /// For subsets and value transforms of an already validated dataset.
    pub(crate) fn from_parts_unchecked(
        locations: Vec<Location>,
        values: Vec<f64>,
        name: Option<String>,
    ) -> Self {
        debug_assert_eq!(locations.len(), values.len());
        Self {
            locations,
            values,
            name,
        }
    }

    /// Same locations with new values, which the caller guarantees to be finite.
    pub(crate) fn with_values(self, values: Vec<f64>) -> Dataset {
        Self::from_parts_unchecked(self.locations, values, self.name)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    /// Rows at `indices`, in that order. Indices must be in range and distinct.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            locations: indices.iter().map(|&i| self.locations[i]).collect(),
            values: indices.iter().map(|&i| self.values[i]).collect(),
            name: self.name.clone(),
        }
    }

    /// Same locations, values replaced by `f(value)`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Dataset {
        Dataset {
            locations: self.locations.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            name: self.name.clone(),
        }
    }

    /// Length of the bounding-box diagonal.
    pub fn diameter(&self) -> f64 {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &self.locations {
            x0 = x0.min(p.x);
            x1 = x1.max(p.x);
            y0 = y0.min(p.y);
            y1 = y1.max(p.y);
        }
        ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt()
    }
}

fn check_duplicates(locations: &[Location]) -> Result<()> {
    // +0.0 folds negative zero onto positive zero.
    let key = |p: &Location| ((p.x + 0.0).to_bits(), (p.y + 0.0).to_bits());
    let mut order: Vec<usize> = (0..locations.len()).collect();
    order.sort_unstable_by_key(|&i| key(&locations[i]));
    let mut dups = Vec::new();
    for w in order.windows(2) {
        if key(&locations[w[0]]) == key(&locations[w[1]]) {
            dups.push(w[0]);
            dups.push(w[1]);
        }
    }
    if dups.is_empty() {
        return Ok(());
    }
    dups.sort_unstable();
    dups.dedup();
    Err(Error::Ingest {
        message: format!("{} rows share a location with another row", dups.len()),
        indices: dups,
    })
}

const LEAF_SIZE: usize = 12;

/// Immutable 2-D k-d tree with median splits.
///
/// Points are stored reordered so that every subtree occupies a contiguous slice; the split
/// point of the slice `[lo, hi)` sits at `(lo + hi) / 2` and its axis in `axes`.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    points: Vec<Location>,
    ids: Vec<usize>,
    axes: Vec<u8>,
    original: Vec<Location>,
}

impl SpatialIndex {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Locations in their original order.
    pub fn locations(&self) -> &[Location] {
        &self.original
    }

    pub(crate) fn for_each_within(
        &self,
        center: &Location,
        radius: f64,
        mut f: impl FnMut(usize, f64),
    ) {
        if self.points.is_empty() {
            return;
        }
        let mut stack = vec![(0usize, self.points.len())];
        while let Some((lo, hi)) = stack.pop() {
            if hi - lo <= LEAF_SIZE {
                for k in lo..hi {
                    let d = center.distance(&self.points[k]);
                    if d < radius {
                        f(self.ids[k], d);
                    }
                }
                continue;
            }
            let mid = (lo + hi) / 2;
            let p = &self.points[mid];
            let d = center.distance(p);
            if d < radius {
                f(self.ids[mid], d);
            }
            let axis = self.axes[mid];
            let delta = center.coord(axis) - p.coord(axis);
            let (near, far) = if delta < 0.0 {
                ((lo, mid), (mid + 1, hi))
            } else {
                ((mid + 1, hi), (lo, mid))
            };
            // Euclidean distance never undercuts a single coordinate gap.
            if delta.abs() < radius {
                stack.push(far);
            }
            stack.push(near);
        }
    }
}

pub fn build_index(locations: &[Location]) -> Result<SpatialIndex> {
    if locations.is_empty() {
        return Err(Error::Ingest {
            message: "cannot index an empty location set".into(),
            indices: vec![],
        });
    }
    let bad: Vec<usize> = (0..locations.len())
        .filter(|&i| !locations[i].is_finite())
        .collect();
    if !bad.is_empty() {
        return Err(Error::Ingest {
            message: "non-finite coordinate".into(),
            indices: bad,
        });
    }
    check_duplicates(locations)?;

    let n = locations.len();
    let mut ids: Vec<usize> = (0..n).collect();
    let mut axes = vec![0u8; n];
    split(locations, &mut ids, &mut axes, 0, n);
    let points = ids.iter().map(|&i| locations[i]).collect();
    Ok(SpatialIndex {
        points,
        ids,
        axes,
        original: locations.to_vec(),
    })
}

fn split(locations: &[Location], ids: &mut [usize], axes: &mut [u8], lo: usize, hi: usize) {
    if hi - lo <= LEAF_SIZE {
        return;
    }
    let slice = &mut ids[lo..hi];
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &i in slice.iter() {
        let p = locations[i];
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let axis = u8::from(y1 - y0 > x1 - x0);
    let mid = (lo + hi) / 2;
    slice.select_nth_unstable_by(mid - lo, |&a, &b| {
        locations[a]
            .coord(axis)
            .total_cmp(&locations[b].coord(axis))
    });
    axes[mid] = axis;
    split(locations, ids, axes, lo, mid);
    split(locations, ids, axes, mid + 1, hi);
}

/// Indexed points strictly closer than `radius` to `center`, as `(original index, distance)`
/// sorted by index.
pub fn neighbors_within(index: &SpatialIndex, center: &Location, radius: f64) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    index.for_each_within(center, radius, |i, d| out.push((i, d)));
    out.sort_unstable_by_key(|&(i, _)| i);
    out
}

/// Lower-triangular neighbor structure with the distance of every stored pair.
#[derive(Clone, Debug)]
pub(crate) struct LowerNeighbors {
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub dist: Vec<f64>,
}

pub(crate) fn lower_neighbors(index: &SpatialIndex, radius: f64) -> LowerNeighbors {
    let n = index.len();
    let columns: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut col = Vec::new();
            index.for_each_within(&index.original[j], radius, |i, d| {
                if i >= j {
                    col.push((i, d));
                }
            });
            // The center itself is always found at distance 0.
            col.sort_unstable_by_key(|&(i, _)| i);
            col
        })
        .collect();
    let nnz = columns.iter().map(Vec::len).sum();
    let mut col_ptr = Vec::with_capacity(n + 1);
    let mut row_idx = Vec::with_capacity(nnz);
    let mut dist = Vec::with_capacity(nnz);
    col_ptr.push(0);
    for col in columns {
        for (i, d) in col {
            row_idx.push(i);
            dist.push(d);
        }
        col_ptr.push(row_idx.len());
    }
    LowerNeighbors {
        col_ptr,
        row_idx,
        dist,
    }
}

/// Dense lower triangle, for models without compact support.
pub(crate) fn lower_all_pairs(locations: &[Location]) -> LowerNeighbors {
    let n = locations.len();
    let mut col_ptr = Vec::with_capacity(n + 1);
    let mut row_idx = Vec::with_capacity(n * (n + 1) / 2);
    let mut dist = Vec::with_capacity(n * (n + 1) / 2);
    col_ptr.push(0);
    for j in 0..n {
        for i in j..n {
            row_idx.push(i);
            dist.push(locations[j].distance(&locations[i]));
        }
        col_ptr.push(row_idx.len());
    }
    LowerNeighbors {
        col_ptr,
        row_idx,
        dist,
    }
}

/// Lower-triangular pattern (diagonal included) of all pairs closer than `radius`.
pub fn pairwise_pattern(index: &SpatialIndex, radius: f64) -> SparsePattern {
    let lower = lower_neighbors(index, radius);
    SparsePattern::from_parts_unchecked(index.len(), lower.col_ptr, lower.row_idx)
}
