//! Region-competition dynamics built on first-order region statistics.
//!
//! Each label pays `g_i = |I - mu_i|^2 delta(phi_i)` for owning a voxel; the
//! natural speed of label `i` is its best competitor's cost minus its own.

use crate::error::{Result, SegError};
use crate::grid::{Field, ImageVolume, Label, LabelMap};
use crate::heaviside::HeavisideParams;
use crate::levelset::LevelSetField;
use crate::scalar::Real;

/// Per-label intensity sums, counts and means (labels `1..=N`).
#[derive(Clone, Debug, PartialEq)]
pub struct RegionStats<T> {
    pub sums: Vec<Vec<T>>,
    pub counts: Vec<usize>,
    pub means: Vec<Vec<T>>,
}

impl<T: Real> RegionStats<T> {
    /// Mean vector of `label`.
    pub fn mean(&self, label: Label) -> &[T] {
        &self.means[label as usize - 1]
    }

    pub fn n_labels(&self) -> usize {
        self.counts.len()
    }
}

/// Exact per-label means over the current assignment. Empty labels take the
/// global image mean. Summation runs in voxel order.
pub fn update_stats<T: Real>(
    img: &ImageVolume<T>,
    labels: &LabelMap,
    n_labels: usize,
) -> Result<RegionStats<T>> {
    if !labels.same_shape(img.dims()) {
        return Err(SegError::DimensionMismatch("image vs label map".into()));
    }
    let nc = img.channels();
    let mut sums = vec![vec![T::zero(); nc]; n_labels];
    let mut counts = vec![0usize; n_labels];
    for (lin, &l) in labels.labels().iter().enumerate() {
        let k = l as usize;
        if k == 0 || k > n_labels {
            return Err(SegError::UnknownLabel(l));
        }
        counts[k - 1] += 1;
        for (s, &v) in sums[k - 1].iter_mut().zip(img.voxel(lin)) {
            *s = *s + v;
        }
    }
    let global = img.global_mean();
    let means = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| {
            if c == 0 {
                global.clone()
            } else {
                let n = T::from_usize(c).unwrap();
                s.iter().map(|&v| v / n).collect()
            }
        })
        .collect();
    Ok(RegionStats {
        sums,
        counts,
        means,
    })
}

#[inline]
fn residual_sq<T: Real>(px: &[T], mean: &[T]) -> T {
    px.iter()
        .zip(mean)
        .fold(T::zero(), |acc, (&a, &m)| acc + (a - m) * (a - m))
}

/// `g_i(x) = |I(x) - mu_i|^2 delta(phi_i(x))`.
pub fn g_region<T: Real>(
    img: &ImageVolume<T>,
    stats: &RegionStats<T>,
    field: &LevelSetField<T>,
    lin: usize,
) -> T {
    let d = field.delta_at(lin);
    if d == T::zero() {
        return T::zero();
    }
    residual_sq(img.voxel(lin), stats.mean(field.label())) * d
}

/// Smallest cost among the competitors whose band reaches `lin`
/// (`delta > 0`); zero when none does. `fields` is indexed by `label - 1`.
pub fn g_competitor<T: Real>(
    img: &ImageVolume<T>,
    stats: &RegionStats<T>,
    fields: &[LevelSetField<T>],
    label: Label,
    lin: usize,
) -> T {
    fields
        .iter()
        .filter(|f| f.label() != label && f.delta_at(lin) > T::zero())
        .map(|f| g_region(img, stats, f, lin))
        .fold(None, |a: Option<T>, b| Some(a.map_or(b, |a| a.min(b))))
        .unwrap_or_else(T::zero)
}

/// `G_i = -(g_i - g_i^c)`.
#[inline]
pub fn compose_g<T: Real>(g_own: T, g_comp: T) -> T {
    -(g_own - g_comp)
}

/// Natural speed field of every label, in label order.
pub fn natural_speeds<T: Real>(
    img: &ImageVolume<T>,
    stats: &RegionStats<T>,
    fields: &[LevelSetField<T>],
) -> Vec<Field<T>> {
    let dims = *img.dims();
    let n = dims.len();
    let mut own = vec![vec![T::zero(); n]; fields.len()];
    let mut present = vec![vec![false; n]; fields.len()];
    for (k, f) in fields.iter().enumerate() {
        for lin in 0..n {
            own[k][lin] = g_region(img, stats, f, lin);
            present[k][lin] = f.delta_at(lin) > T::zero();
        }
    }
    (0..fields.len())
        .map(|k| {
            Field::from_fn(dims, |lin| {
                let comp = (0..fields.len())
                    .filter(|&j| j != k && present[j][lin])
                    .map(|j| own[j][lin])
                    .fold(None, |a: Option<T>, b| Some(a.map_or(b, |a| a.min(b))))
                    .unwrap_or_else(T::zero);
                compose_g(own[k][lin], comp)
            })
        })
        .collect()
}

/// Pointwise bound on `|G_i|` valid for every reachable state:
/// `delta_max * sum_c max((I_c - min_c)^2, (I_c - max_c)^2)`.
pub fn g_m_bound<T: Real>(img: &ImageVolume<T>, params: &HeavisideParams<T>) -> Field<T> {
    let range = img.channel_range();
    let dmax = params.delta_max();
    Field::from_fn(*img.dims(), |lin| {
        let s = img
            .voxel(lin)
            .iter()
            .zip(&range)
            .fold(T::zero(), |acc, (&v, &(lo, hi))| {
                let a = (v - lo) * (v - lo);
                let b = (v - hi) * (v - hi);
                acc + a.max(b)
            });
        dmax * s
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Dims;

    fn p() -> HeavisideParams<f64> {
        HeavisideParams::new(1.5)
    }

    #[test]
    fn column_means() {
        let d = Dims::d2(2, 2);
        let img = ImageVolume::new(d, 1, vec![10.0, 20.0, 10.0, 20.0]).unwrap();
        let lm = LabelMap::from_vec(d, vec![1, 2, 1, 2]).unwrap();
        let s = update_stats(&img, &lm, 2).unwrap();
        assert_eq!(s.mean(1), &[10.0]);
        assert_eq!(s.mean(2), &[20.0]);
    }

    #[test]
    fn empty_label_takes_global_mean() {
        let d = Dims::d2(2, 2);
        let img = ImageVolume::new(d, 1, vec![10.0, 20.0, 10.0, 20.0]).unwrap();
        let lm = LabelMap::filled(d, 1);
        let s = update_stats(&img, &lm, 3).unwrap();
        assert_eq!(s.mean(2), &[15.0]);
        assert_eq!(s.mean(1), &[15.0]);
    }

    #[test]
    fn g_region_at_zero_crossing() {
        let d = Dims::d2(1, 2);
        let img = ImageVolume::new(d, 1, vec![15.0, 15.0]).unwrap();
        let stats = RegionStats {
            sums: vec![vec![0.0]],
            counts: vec![1],
            means: vec![vec![10.0]],
        };
        // phi = [0, -1]: voxel 0 sits exactly on the crossing
        let f = LevelSetField::from_values(1, p(), Field::from_vec(d, vec![0.0, -1.0]).unwrap()).unwrap();
        assert_eq!(f.get(0), 0.0);
        let g = g_region(&img, &stats, &f, 0);
        assert!((g - 25.0 * 2.0 / 3.0).abs() < 1e-12);
        assert!((compose_g(g, 0.0) + 16.666_666_666_666_668).abs() < 1e-9);
        assert!((compose_g(0.0, g) - 16.666_666_666_666_668).abs() < 1e-9);
    }

    #[test]
    fn g_m_bound_values() {
        let d = Dims::d2(1, 3);
        let img = ImageVolume::new(d, 1, vec![0.0, 100.0, 255.0]).unwrap();
        let gm = g_m_bound(&img, &p());
        assert!((gm.get(1) - 24025.0 * 2.0 / 3.0).abs() < 1e-9);
        assert!((gm.get(0) - 255.0 * 255.0 * 2.0 / 3.0).abs() < 1e-9);
        let flat = ImageVolume::new(d, 1, vec![7.0; 3]).unwrap();
        assert!(g_m_bound(&flat, &p()).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn competitor_is_min_over_others() {
        // three labels on a 1x3 row, each owning one voxel
        let d = Dims::d2(1, 3);
        let img = ImageVolume::new(d, 1, vec![0.0, 0.0, 0.0]).unwrap();
        let lm = LabelMap::from_vec(d, vec![1, 2, 3]).unwrap();
        let fields: Vec<_> = (1..=3).map(|l| LevelSetField::from_labels(&lm, l, p())).collect();
        let stats = RegionStats {
            sums: vec![vec![0.0]; 3],
            counts: vec![1; 3],
            means: vec![vec![2.0], vec![3.0], vec![1.0]],
        };
        let x = 1;
        let g: Vec<f64> = fields.iter().map(|f| g_region(&img, &stats, f, x)).collect();
        let want = g[1].min(g[2]);
        assert_eq!(g_competitor(&img, &stats, &fields, 1, x), want);
    }
}
