//! Regular-grid storage: extents, indexing, scalar fields, images and label maps.
//!
//! Every grid is stored with three logical axes ordered slowest-first
//! (`[z, y, x]`, last axis fastest). A 2-D grid is a 3-D grid whose first
//! axis has extent 1, so stencils and neighbourhoods are written once and
//! automatically reduce to the 4-neighbourhood in 2-D and the
//! 6-neighbourhood in 3-D.

use crate::error::{Result, SegError};
use crate::scalar::Real;

/// Integer label carried by a voxel. Labels run `1..=N`; `N` is background.
pub type Label = u16;

/// Grid extents and physical spacing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dims {
    ext: [usize; 3],
    spacing: [f64; 3],
    ndim: usize,
}

impl Dims {
    /// Builds 2-D (`[h, w]`) or 3-D (`[d, h, w]`) extents with unit spacing.
    pub fn new(extents: &[usize]) -> Result<Self> {
        let ext = match *extents {
            [h, w] => [1, h, w],
            [d, h, w] => [d, h, w],
            _ => {
                return Err(SegError::InvalidInput(format!(
                    "grids have 2 or 3 axes, got {}",
                    extents.len()
                )))
            }
        };
        if ext.contains(&0) {
            return Err(SegError::InvalidInput("grid extents must be >= 1".into()));
        }
        Ok(Self {
            ext,
            spacing: [1.0; 3],
            ndim: extents.len(),
        })
    }

    pub fn d2(h: usize, w: usize) -> Self {
        Self::new(&[h, w]).expect("non-zero 2-D extents")
    }

    pub fn d3(d: usize, h: usize, w: usize) -> Self {
        Self::new(&[d, h, w]).expect("non-zero 3-D extents")
    }

    /// Replaces the per-axis spacing (same axis order as [`Dims::new`]).
    pub fn with_spacing(mut self, spacing: &[f64]) -> Result<Self> {
        if spacing.len() != self.ndim || spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(SegError::InvalidInput("spacing must be positive per axis".into()));
        }
        let off = 3 - self.ndim;
        for (k, s) in spacing.iter().enumerate() {
            self.spacing[off + k] = *s;
        }
        Ok(self)
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    /// Extents in user axis order (length 2 or 3).
    pub fn extents(&self) -> Vec<usize> {
        self.ext[3 - self.ndim..].to_vec()
    }

    /// Padded `[z, y, x]` extents.
    pub fn padded(&self) -> [usize; 3] {
        self.ext
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.ext[0] * self.ext[1] * self.ext[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing[3 - self.ndim..]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Euclidean length of the grid diagonal in physical units.
    pub fn diagonal(&self) -> f64 {
        (0..3)
            .map(|a| {
                let l = (self.ext[a] as f64 - 1.0) * self.spacing[a];
                l * l
            })
            .sum::<f64>()
            .sqrt()
    }

    #[inline]
    pub fn linear(&self, idx: GridIndex) -> usize {
        let [z, y, x] = idx.0;
        (z * self.ext[1] + y) * self.ext[2] + x
    }

    #[inline]
    pub fn index(&self, lin: usize) -> GridIndex {
        let x = lin % self.ext[2];
        let r = lin / self.ext[2];
        GridIndex([r / self.ext[1], r % self.ext[1], x])
    }

    pub fn contains(&self, idx: GridIndex) -> bool {
        idx.0.iter().zip(self.ext.iter()).all(|(c, e)| c < e)
    }

    /// Calls `f(neighbour, axis)` for each face neighbour of `lin`, in a fixed
    /// order (axis-major, minus side first).
    #[inline]
    pub fn for_each_neighbor(&self, lin: usize, mut f: impl FnMut(usize, usize)) {
        let stride = [self.ext[1] * self.ext[2], self.ext[2], 1];
        let c = self.index(lin).0;
        for axis in 0..3 {
            if self.ext[axis] == 1 {
                continue;
            }
            if c[axis] > 0 {
                f(lin - stride[axis], axis);
            }
            if c[axis] + 1 < self.ext[axis] {
                f(lin + stride[axis], axis);
            }
        }
    }

    /// Face neighbours collected into a small fixed buffer.
    #[inline]
    pub fn neighbors(&self, lin: usize) -> Neighbors {
        let mut n = Neighbors {
            buf: [(0, 0); 6],
            len: 0,
        };
        self.for_each_neighbor(lin, |j, a| {
            n.buf[n.len] = (j, a);
            n.len += 1;
        });
        n
    }
}

/// Up to six `(linear index, axis)` face neighbours.
#[derive(Clone, Copy, Debug)]
pub struct Neighbors {
    buf: [(usize, usize); 6],
    len: usize,
}

impl Neighbors {
    pub fn as_slice(&self) -> &[(usize, usize)] {
        &self.buf[..self.len]
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.as_slice().iter().map(|p| p.0)
    }
}

/// Integer voxel coordinate stored as padded `[z, y, x]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridIndex(pub [usize; 3]);

impl GridIndex {
    pub fn d2(y: usize, x: usize) -> Self {
        GridIndex([0, y, x])
    }

    pub fn d3(z: usize, y: usize, x: usize) -> Self {
        GridIndex([z, y, x])
    }

    pub fn x(&self) -> usize {
        self.0[2]
    }

    pub fn y(&self) -> usize {
        self.0[1]
    }

    pub fn z(&self) -> usize {
        self.0[0]
    }
}

/// One real value per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    dims: Dims,
    values: Vec<T>,
}

impl<T: Copy> Field<T> {
    pub fn filled(dims: Dims, v: T) -> Self {
        Self {
            dims,
            values: vec![v; dims.len()],
        }
    }

    pub fn from_vec(dims: Dims, values: Vec<T>) -> Result<Self> {
        if values.len() != dims.len() {
            return Err(SegError::DimensionMismatch(format!(
                "field has {} values for {} voxels",
                values.len(),
                dims.len()
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn from_fn(dims: Dims, f: impl FnMut(usize) -> T) -> Self {
        Self {
            dims,
            values: (0..dims.len()).map(f).collect(),
        }
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn get(&self, lin: usize) -> T {
        self.values[lin]
    }

    #[inline]
    pub fn set(&mut self, lin: usize, v: T) {
        self.values[lin] = v;
    }

    #[inline]
    pub fn at(&self, idx: GridIndex) -> T {
        self.values[self.dims.linear(idx)]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Field<U> {
        Field {
            dims: self.dims,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl<T: Real> Field<T> {
    pub fn max_abs(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Real scalar field in the crate-default precision.
pub type ScalarField = Field<f64>;

/// Intensity grid `I(x)` with `n >= 1` channels interleaved per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageVolume<T> {
    dims: Dims,
    channels: usize,
    values: Vec<T>,
}

impl<T: Real> ImageVolume<T> {
    pub fn new(dims: Dims, channels: usize, values: Vec<T>) -> Result<Self> {
        if channels == 0 {
            return Err(SegError::InvalidInput("image needs at least one channel".into()));
        }
        if values.len() != dims.len() * channels {
            return Err(SegError::DimensionMismatch(format!(
                "image has {} values for {} voxels x {} channels",
                values.len(),
                dims.len(),
                channels
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SegError::InvalidInput("image intensities must be finite".into()));
        }
        Ok(Self {
            dims,
            channels,
            values,
        })
    }

    /// Single-channel image from a scalar field.
    pub fn from_field(f: &Field<T>) -> Result<Self> {
        Self::new(*f.dims(), 1, f.values().to_vec())
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Channel vector at voxel `lin`.
    #[inline]
    pub fn voxel(&self, lin: usize) -> &[T] {
        &self.values[lin * self.channels..(lin + 1) * self.channels]
    }

    /// Per-channel `(min, max)`.
    pub fn channel_range(&self) -> Vec<(T, T)> {
        let mut r = vec![(T::infinity(), T::neg_infinity()); self.channels];
        for px in self.values.chunks_exact(self.channels) {
            for (c, &v) in px.iter().enumerate() {
                r[c].0 = r[c].0.min(v);
                r[c].1 = r[c].1.max(v);
            }
        }
        r
    }

    /// Per-channel mean over the whole image.
    pub fn global_mean(&self) -> Vec<T> {
        let mut s = vec![T::zero(); self.channels];
        for px in self.values.chunks_exact(self.channels) {
            for (c, &v) in px.iter().enumerate() {
                s[c] = s[c] + v;
            }
        }
        let n = T::from_usize(self.dims.len()).unwrap();
        s.into_iter().map(|v| v / n).collect()
    }
}

/// Full-cover partition of the grid into labels `1..=N`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    // extents only: spacing is a property of the image, not the partition
    ext: [usize; 3],
    ndim: usize,
    labels: Vec<Label>,
}

impl LabelMap {
    pub fn filled(dims: Dims, label: Label) -> Self {
        Self {
            ext: dims.ext,
            ndim: dims.ndim,
            labels: vec![label; dims.len()],
        }
    }

    pub fn from_vec(dims: Dims, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != dims.len() {
            return Err(SegError::DimensionMismatch(format!(
                "label map has {} entries for {} voxels",
                labels.len(),
                dims.len()
            )));
        }
        if labels.contains(&0) {
            return Err(SegError::InvalidInput("labels start at 1".into()));
        }
        Ok(Self {
            ext: dims.ext,
            ndim: dims.ndim,
            labels,
        })
    }

    pub fn from_fn(dims: Dims, f: impl FnMut(usize) -> Label) -> Self {
        let labels: Vec<Label> = (0..dims.len()).map(f).collect();
        Self::from_vec(dims, labels).expect("label function yields labels >= 1")
    }

    /// Extents with unit spacing.
    pub fn dims(&self) -> Dims {
        Dims {
            ext: self.ext,
            spacing: [1.0; 3],
            ndim: self.ndim,
        }
    }

    pub fn same_shape(&self, dims: &Dims) -> bool {
        self.ext == dims.ext && self.ndim == dims.ndim
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [Label] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, lin: usize) -> Label {
        self.labels[lin]
    }

    #[inline]
    pub fn set(&mut self, lin: usize, l: Label) {
        self.labels[lin] = l;
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn max_label(&self) -> Label {
        self.labels.iter().copied().max().unwrap_or(1)
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Number of voxels whose label differs between `self` and `other`.
    pub fn diff_count(&self, other: &LabelMap) -> usize {
        self.labels
            .iter()
            .zip(other.labels.iter())
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// `g(x) = 1 + |grad I|^2`, summed over axes and channels; central differences
/// inside, one-sided at the border, zero along unit-extent axes.
pub fn gradient_magnitude_sq<T: Real>(img: &ImageVolume<T>) -> Field<T> {
    let dims = *img.dims();
    let ext = dims.padded();
    let sp = dims.spacing();
    let stride = [ext[1] * ext[2], ext[2], 1];
    let nc = img.channels();
    Field::from_fn(dims, |lin| {
        let c = dims.index(lin).0;
        let mut acc = T::one();
        for axis in 0..3 {
            let n = ext[axis];
            if n == 1 {
                continue;
            }
            let h = T::lit(sp[axis]);
            let (lo, hi, span) = if c[axis] == 0 {
                (lin, lin + stride[axis], h)
            } else if c[axis] + 1 == n {
                (lin - stride[axis], lin, h)
            } else {
                (lin - stride[axis], lin + stride[axis], T::two() * h)
            };
            for ch in 0..nc {
                let d = (img.values()[hi * nc + ch] - img.values()[lo * nc + ch]) / span;
                acc = acc + d * d;
            }
        }
        acc
    })
}

/// Dice overlap of `label` between two maps; 1 when the label is absent from both.
pub fn dice(a: &LabelMap, b: &LabelMap, label: Label) -> Result<f64> {
    if a.ext != b.ext || a.ndim != b.ndim {
        return Err(SegError::DimensionMismatch("dice on maps of different extents".into()));
    }
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.labels.iter().zip(b.labels.iter()) {
        let (ia, ib) = (x == label, y == label);
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Hop distance (face neighbours) from each masked voxel to the nearest
/// unmasked voxel or the grid border; 0 outside the mask.
pub fn erosion_depth(dims: &Dims, mask: &[bool]) -> Vec<u32> {
    let mut depth = vec![u32::MAX; dims.len()];
    let mut queue = std::collections::VecDeque::new();
    let ext = dims.padded();
    for i in 0..dims.len() {
        if !mask[i] {
            depth[i] = 0;
            continue;
        }
        let c = dims.index(i).0;
        let on_border = (0..3).any(|a| ext[a] > 1 && (c[a] == 0 || c[a] + 1 == ext[a]));
        let mut touches = on_border;
        dims.for_each_neighbor(i, |j, _| touches |= !mask[j]);
        if touches {
            depth[i] = 1;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let d = depth[i];
        dims.for_each_neighbor(i, |j, _| {
            if depth[j] == u32::MAX {
                depth[j] = d + 1;
                queue.push_back(j);
            }
        });
    }
    depth
}

/// Face-connected components of voxels sharing the same `Some` key. Each
/// component lists its voxels in increasing linear order; components are
/// ordered by their smallest voxel.
pub fn connected_components<K: Copy + PartialEq>(dims: &Dims, key: &[Option<K>]) -> Vec<(K, Vec<usize>)> {
    let mut seen = vec![false; dims.len()];
    let mut out = Vec::new();
    for start in 0..dims.len() {
        let k = match key[start] {
            Some(k) if !seen[start] => k,
            _ => continue,
        };
        seen[start] = true;
        let mut comp = vec![start];
        let mut head = 0;
        while head < comp.len() {
            let i = comp[head];
            head += 1;
            dims.for_each_neighbor(i, |j, _| {
                if !seen[j] && key[j] == Some(k) {
                    seen[j] = true;
                    comp.push(j);
                }
            });
        }
        comp.sort_unstable();
        out.push((k, comp));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_index_roundtrip_and_neighbors() {
        let d = Dims::d3(2, 3, 4);
        for lin in 0..d.len() {
            assert_eq!(d.linear(d.index(lin)), lin);
        }
        let d2 = Dims::d2(3, 3);
        assert_eq!(d2.neighbors(4).as_slice().len(), 4);
        assert_eq!(d2.neighbors(0).as_slice().len(), 2);
        assert_eq!(d.neighbors(d.linear(GridIndex::d3(1, 1, 1))).as_slice().len(), 5);
    }

    #[test]
    fn erosion_and_components() {
        let d = Dims::d2(5, 5);
        let mask: Vec<bool> = (0..25).map(|i| { let (y, x) = (i / 5, i % 5); (1..4).contains(&y) && (1..4).contains(&x) }).collect();
        let depth = erosion_depth(&d, &mask);
        assert_eq!(depth[12], 2);
        assert_eq!(depth[6], 1);
        assert_eq!(depth[0], 0);
        let full = erosion_depth(&d, &[true; 25]);
        assert_eq!(full[12], 3);
        assert_eq!(full[0], 1);

        let key: Vec<Option<u8>> = (0..25).map(|i| match i % 5 { 0 => Some(1), 4 => Some(2), 2 if i < 10 => Some(1), _ => None }).collect();
        let comps = connected_components(&d, &key);
        assert_eq!(comps.len(), 3);
        assert_eq!(comps[0], (1, vec![0, 5, 10, 15, 20]));
        assert_eq!(comps[1], (1, vec![2, 7]));
        assert_eq!(comps[2].0, 2);
    }

    #[test]
    fn gradient_of_constant_is_one() {
        let d = Dims::d2(4, 5);
        let img = ImageVolume::new(d, 1, vec![42.0f64; 20]).unwrap();
        assert!(gradient_magnitude_sq(&img).values().iter().all(|&v| v == 1.0));
        let rgb = ImageVolume::new(d, 3, vec![7.0f64; 60]).unwrap();
        assert!(gradient_magnitude_sq(&rgb).values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn gradient_row_central_difference() {
        let img = ImageVolume::new(Dims::d2(1, 4), 1, vec![0.0f64, 0.0, 10.0, 10.0]).unwrap();
        let g = gradient_magnitude_sq(&img);
        assert_eq!(g.get(1), 26.0);
        // one-sided at the left border: (0 - 0)/1
        assert_eq!(g.get(0), 1.0);
    }

    #[test]
    fn dice_cases() {
        let d = Dims::d2(2, 4);
        let a = LabelMap::from_vec(d, vec![1, 1, 1, 1, 2, 2, 2, 2]).unwrap();
        assert_eq!(dice(&a, &a, 1).unwrap(), 1.0);
        let b = LabelMap::from_vec(d, vec![2, 2, 2, 2, 1, 1, 1, 1]).unwrap();
        assert_eq!(dice(&a, &b, 1).unwrap(), 0.0);
        let c = LabelMap::from_vec(d, vec![2, 2, 1, 1, 1, 1, 2, 2]).unwrap();
        assert_eq!(dice(&a, &c, 1).unwrap(), 0.5);
        assert_eq!(dice(&a, &a, 7).unwrap(), 1.0);
        let e = LabelMap::filled(Dims::d2(3, 3), 1);
        assert!(dice(&a, &e, 1).is_err());
    }

    #[test]
    fn invalid_dims_rejected() {
        assert!(Dims::new(&[0, 3]).is_err());
        assert!(Dims::new(&[3]).is_err());
        assert!(ImageVolume::new(Dims::d2(1, 2), 1, vec![0.0, f64::NAN]).is_err());
    }
}
