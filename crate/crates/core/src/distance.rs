//! Seeded geodesic distances on the grid graph and shortest-distance clustering.
//!
//! Edges join face neighbours; an edge costs the mean of its endpoint costs
//! times the spacing along its axis. Distances come from a Dijkstra front
//! ordered by `(distance, linear index)`, so results never depend on heap
//! internals.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Result, SegError};
use crate::grid::{Field, GridIndex, Label, LabelMap};
use crate::scalar::Real;

/// Seed voxels of one label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedSet {
    pub label: Label,
    pub voxels: Vec<GridIndex>,
}

/// Geodesic distances from one label's seeds; `+inf` where unreached.
pub type DistanceField<T> = Field<T>;

#[derive(Clone, Copy, Debug)]
struct Entry<T> {
    dist: T,
    lin: usize,
}

impl<T: Real> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Real> Eq for Entry<T> {}

impl<T: Real> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Real> Ord for Entry<T> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.lin.cmp(&self.lin))
    }
}

/// Shortest-path distance from the given linear seed indices.
pub fn distance_from<T: Real>(gcost: &Field<T>, seeds: &[usize]) -> Result<DistanceField<T>> {
    if seeds.is_empty() {
        return Err(SegError::EmptySeeds);
    }
    let dims = *gcost.dims();
    let sp = dims.spacing();
    let half = T::half();
    let mut dist = vec![T::infinity(); dims.len()];
    let mut heap = BinaryHeap::new();
    for &s in seeds {
        if s >= dims.len() {
            return Err(SegError::OutOfBounds(format!("seed {}", s)));
        }
        if dist[s] != T::zero() {
            dist[s] = T::zero();
            heap.push(Entry {
                dist: T::zero(),
                lin: s,
            });
        }
    }
    let mut done = vec![false; dims.len()];
    while let Some(Entry { dist: d, lin }) = heap.pop() {
        if done[lin] {
            continue;
        }
        done[lin] = true;
        let ga = gcost.get(lin);
        dims.for_each_neighbor(lin, |j, axis| {
            if done[j] {
                return;
            }
            let w = (ga + gcost.get(j)) * half * T::lit(sp[axis]);
            let nd = d + w;
            if nd < dist[j] {
                dist[j] = nd;
                heap.push(Entry { dist: nd, lin: j });
            }
        });
    }
    Field::from_vec(dims, dist)
}

/// Geodesic distance from a seed set under cost `gcost` (expected `>= 1`).
pub fn seed_distance<T: Real>(gcost: &Field<T>, seeds: &SeedSet) -> Result<DistanceField<T>> {
    let dims = *gcost.dims();
    let mut lins = Vec::with_capacity(seeds.voxels.len());
    for &v in &seeds.voxels {
        if !dims.contains(v) {
            return Err(SegError::OutOfBounds(format!("{:?}", v)));
        }
        lins.push(dims.linear(v));
    }
    distance_from(gcost, &lins)
}

/// Nearest label per voxel; `dists[k]` belongs to label `k + 1`. Ties go to the
/// smallest label.
pub fn assign_labels<T: Real>(dists: &[DistanceField<T>]) -> Result<LabelMap> {
    if dists.is_empty() {
        return Err(SegError::EmptySeeds);
    }
    let dims = *dists[0].dims();
    let mut out = Vec::with_capacity(dims.len());
    for lin in 0..dims.len() {
        let mut best: Option<(usize, T)> = None;
        for (k, d) in dists.iter().enumerate() {
            let v = d.get(lin);
            if v.is_finite() && best.is_none_or(|(_, b)| v < b) {
                best = Some((k, v));
            }
        }
        match best {
            Some((k, _)) => out.push((k + 1) as Label),
            None => return Err(SegError::Unreached(lin)),
        }
    }
    LabelMap::from_vec(dims, out)
}

/// Distance-clustering natural speed of label `label` at `lin`:
/// `+g` where it is the unique nearest, `-g` where it is not nearest,
/// `0` on exact ties between it and its best competitor.
pub fn natural_speed_dist<T: Real>(
    label: Label,
    lin: usize,
    dists: &[DistanceField<T>],
    gcost: &Field<T>,
) -> T {
    let k = label as usize - 1;
    let own = dists[k].get(lin);
    let comp = dists
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != k)
        .map(|(_, d)| d.get(lin))
        .fold(T::infinity(), |a, b| a.min(b));
    let dmin = own.min(comp);
    let g = gcost.get(lin);
    let g_own = if own != dmin { g } else { T::zero() };
    let g_comp = if comp != dmin { g } else { T::zero() };
    -(g_own - g_comp)
}

/// Speed fields of every label, in label order.
pub fn natural_speeds_dist<T: Real>(dists: &[DistanceField<T>], gcost: &Field<T>) -> Vec<Field<T>> {
    let dims = *gcost.dims();
    (1..=dists.len())
        .map(|l| Field::from_fn(dims, |lin| natural_speed_dist(l as Label, lin, dists, gcost)))
        .collect()
}
