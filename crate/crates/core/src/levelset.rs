//! Narrow-band level-set fields and their explicit evolution.
//!
//! A field stores one signed value per voxel, positive (or zero) inside its
//! region. Only voxels within `epsilon + 1` of the zero crossing carry exact
//! values; everything else is clamped to `+-(epsilon + 1)`. After every Euler
//! update the band is maintained locally: voxels away from a sign change are
//! held 1-Lipschitz against their same-sign neighbours, which pulls the next
//! layer into the band ahead of a moving crossing. Values at the crossing are
//! never touched, so `H(phi)` there changes only through the dynamics. No
//! global re-initialization is ever performed.

use crate::error::{Result, SegError};
use crate::grid::{Dims, Field, Label, LabelMap};
use crate::heaviside::HeavisideParams;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct LevelSetField<T> {
    label: Label,
    params: HeavisideParams<T>,
    phi: Field<T>,
}

impl<T: Real> LevelSetField<T> {
    /// Wraps raw values; the band is rebuilt so the sparse invariants hold.
    pub fn from_values(label: Label, params: HeavisideParams<T>, phi: Field<T>) -> Result<Self> {
        if !phi.all_finite() {
            return Err(SegError::NonFinite("level-set values"));
        }
        let mut f = Self { label, params, phi };
        f.rebuild_band();
        Ok(f)
    }

    /// Signed band distance to the boundary of `label`'s region, clamped at
    /// `+-(epsilon + 1)`. The image border is not a boundary.
    pub fn from_labels(labels: &LabelMap, label: Label, params: HeavisideParams<T>) -> Self {
        let dims = labels.dims();
        // voxels next to the boundary sit half a voxel from the crossing
        let far = params.epsilon + T::one();
        let phi = Field::from_fn(dims, |i| {
            let own = labels.get(i) == label;
            let mut edge = false;
            dims.for_each_neighbor(i, |j, _| edge |= (labels.get(j) == label) != own);
            let m = if edge { T::half() } else { far };
            if own {
                m
            } else {
                -m
            }
        });
        let mut f = Self { label, params, phi };
        f.rebuild_band();
        f
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn params(&self) -> &HeavisideParams<T> {
        &self.params
    }

    pub fn dims(&self) -> &Dims {
        self.phi.dims()
    }

    pub fn phi(&self) -> &Field<T> {
        &self.phi
    }

    #[inline]
    pub fn get(&self, lin: usize) -> T {
        self.phi.get(lin)
    }

    /// Clamp magnitude outside the band.
    pub fn far_value(&self) -> T {
        self.params.epsilon + T::one()
    }

    #[inline]
    pub fn inside(&self, lin: usize) -> bool {
        self.phi.get(lin) >= T::zero()
    }

    /// Voxels carrying unclamped values, in increasing linear order.
    pub fn band(&self) -> Vec<usize> {
        let far = self.far_value();
        (0..self.phi.values().len())
            .filter(|&i| self.phi.get(i).abs() < far)
            .collect()
    }

    #[inline]
    pub fn heaviside_at(&self, lin: usize) -> T {
        self.params.heaviside(self.phi.get(lin))
    }

    #[inline]
    pub fn delta_at(&self, lin: usize) -> T {
        self.params.delta(self.phi.get(lin))
    }

    /// Largest `dt` for which `dt * max|speed| * delta_max <= 0.5`.
    pub fn stable_dt(&self, max_speed: T) -> T {
        stable_dt(&self.params, max_speed)
    }

    /// One explicit Euler step `phi += dt * speed * delta(phi)` followed by
    /// local band maintenance.
    pub fn evolve_step(&mut self, speed: &Field<T>, dt: T) -> Result<()> {
        if speed.dims().padded() != self.dims().padded() {
            return Err(SegError::DimensionMismatch("speed vs level set".into()));
        }
        let eps = self.params.epsilon;
        let mut max_speed = T::zero();
        for (p, s) in self.phi.values().iter().zip(speed.values()) {
            if p.abs() < eps {
                if !s.is_finite() {
                    return Err(SegError::NonFinite("speed on band"));
                }
                max_speed = max_speed.max(s.abs());
            }
        }
        let cap = stable_dt(&self.params, max_speed);
        if dt > cap * T::lit(1.0 + 1e-9) {
            return Err(SegError::InvalidInput(format!(
                "dt {} exceeds stability cap {}",
                dt, cap
            )));
        }
        let params = self.params;
        let mut flipped = Vec::new();
        for (i, (p, &s)) in self.phi.values_mut().iter_mut().zip(speed.values()).enumerate() {
            let d = params.delta(*p);
            if d > T::zero() {
                let before = *p >= T::zero();
                *p = *p + dt * s * d;
                if (*p >= T::zero()) != before {
                    flipped.push(i);
                }
            }
        }
        self.advance_fronts(&flipped);
        self.rebuild_band();
        Ok(())
    }

    /// Overwrites values on `voxels` without any band maintenance.
    pub fn set_raw(&mut self, voxels: &[usize], value: T) {
        for &v in voxels {
            self.phi.set(v, value);
        }
    }

    /// Overwrites values on `voxels` (used by impulses) and repairs the fronts.
    pub fn assign(&mut self, voxels: &[usize], value: T) {
        self.set_raw(voxels, value);
        self.repair_fronts();
    }

    /// A voxel that just changed sign becomes the crossing: opposite-sign
    /// neighbours farther than one grid unit from it are pulled to that unit
    /// distance, so the next layer can move. The crossing voxel keeps its value.
    fn advance_fronts(&mut self, crossed: &[usize]) {
        let dims = *self.phi.dims();
        for &i in crossed {
            let pi = self.phi.get(i);
            let si = pi >= T::zero();
            let reach = T::one() - pi.abs();
            if reach <= T::zero() {
                continue;
            }
            dims.for_each_neighbor(i, |j, _| {
                let pj = self.phi.get(j);
                if (pj >= T::zero()) != si && pj.abs() > reach {
                    self.phi.set(j, if si { -reach } else { reach });
                }
            });
        }
    }

    /// Every voxel adjacent to a sign change lies in the band.
    pub fn band_invariant_holds(&self) -> bool {
        let dims = *self.dims();
        let far = self.far_value();
        (0..dims.len()).all(|i| {
            let s = self.inside(i);
            let mut ok = true;
            dims.for_each_neighbor(i, |j, _| {
                if self.inside(j) != s && self.phi.get(i).abs() >= far {
                    ok = false;
                }
            });
            ok
        })
    }

    /// Local band maintenance after an Euler step. Off-front voxels are kept
    /// 1-Lipschitz with respect to same-sign neighbours, so layers ahead of a
    /// moving crossing enter the band as it approaches. Voxels at a crossing
    /// keep their values and nothing is ever re-initialized.
    pub fn rebuild_band(&mut self) {
        let far = self.far_value();
        let dims = *self.phi.dims();
        for v in self.phi.values_mut() {
            if v.abs() > far {
                *v = if *v >= T::zero() { far } else { -far };
            }
        }
        loop {
            let old = self.phi.values().to_vec();
            let mut changed = false;
            for i in 0..old.len() {
                let si = old[i] >= T::zero();
                let mut front = false;
                let mut bound = far;
                dims.for_each_neighbor(i, |j, _| {
                    if (old[j] >= T::zero()) != si {
                        front = true;
                    } else {
                        bound = bound.min(old[j].abs() + T::one());
                    }
                });
                if !front && bound < old[i].abs() {
                    self.phi.set(i, if si { bound } else { -bound });
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    /// Front repair after a jump (impulse or direct assignment): crossing
    /// pairs farther apart than one grid unit are pulled to their linear
    /// sub-voxel crossing, then the band is maintained as usual.
    pub fn repair_fronts(&mut self) {
        let dims = *self.phi.dims();
        let old = self.phi.values().to_vec();
        for i in 0..old.len() {
            let si = old[i] >= T::zero();
            let ai = old[i].abs();
            let mut m = ai;
            dims.for_each_neighbor(i, |j, _| {
                let aj = old[j].abs();
                if (old[j] >= T::zero()) != si && ai + aj > T::one() {
                    m = m.min(ai / (ai + aj));
                }
            });
            if m < ai {
                self.phi.set(i, if si { m } else { -m });
            }
        }
        self.rebuild_band();
    }
}

/// `0.5 / (max_speed * delta_max)`; infinite for zero speed.
pub fn stable_dt<T: Real>(params: &HeavisideParams<T>, max_speed: T) -> T {
    if max_speed <= T::zero() {
        return T::infinity();
    }
    T::half() / (max_speed * params.delta_max())
}

/// Per-voxel argmax of the fields; ties go to the smallest label.
pub fn argmax_labels<T: Real>(fields: &[LevelSetField<T>]) -> LabelMap {
    let dims = *fields[0].dims();
    LabelMap::from_fn(dims, |i| {
        let mut best = 0;
        for (k, f) in fields.iter().enumerate().skip(1) {
            if f.get(i) > fields[best].get(i) {
                best = k;
            }
        }
        fields[best].label()
    })
}
