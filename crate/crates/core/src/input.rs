//! User strokes and their accumulated per-label support fields.
//!
//! Two input models are provided. The region model turns each stroke into a
//! geodesic kernel, sums kernels per label and diffuses the sum; the distance
//! model keeps, per label, the geodesic distance to the nearest stroke. Both
//! end in a signed support field `U_i`, positive where label `i` is favoured.

use crate::distance::distance_from;
use crate::error::{Result, SegError};
use crate::grid::{Dims, Field, GridIndex, Label};
use crate::heaviside::HeavisideParams;
use crate::scalar::Real;

/// One scribble for one label.
#[derive(Clone, Debug, PartialEq)]
pub struct Stroke {
    pub label: Label,
    pub voxels: Vec<GridIndex>,
    /// Event time of the stroke.
    pub t: f64,
    /// Per-label sequence number `k`.
    pub seq: u32,
}

impl Stroke {
    /// Linear indices, validating bounds.
    pub fn linear(&self, dims: &Dims) -> Result<Vec<usize>> {
        if self.voxels.is_empty() {
            return Err(SegError::EmptySeeds);
        }
        self.voxels
            .iter()
            .map(|&v| {
                if dims.contains(v) {
                    Ok(dims.linear(v))
                } else {
                    Err(SegError::OutOfBounds(format!(
                        "({}, {}, {})",
                        v.x(),
                        v.y(),
                        v.z()
                    )))
                }
            })
            .collect()
    }
}

/// Accumulated effect `u_i` of all strokes of one label.
#[derive(Clone, Debug, PartialEq)]
pub struct InputField<T> {
    pub label: Label,
    pub values: Field<T>,
}

/// Signed support `U_i` per label, indexed by `label - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateInput<T> {
    pub fields: Vec<Field<T>>,
}

impl<T: Real> AggregateInput<T> {
    pub fn zeros(dims: Dims, n_labels: usize) -> Self {
        Self {
            fields: vec![Field::filled(dims, T::zero()); n_labels],
        }
    }

    pub fn get(&self, label: Label) -> &Field<T> {
        &self.fields[label as usize - 1]
    }
}

/// `h0(d) = (d_max - d) / d_max`, zero beyond `d_max`, with `d` the
/// geodesic distance to the stroke.
pub fn stroke_kernel_region<T: Real>(stroke: &Stroke, gcost: &Field<T>, d_max: T) -> Result<Field<T>> {
    if d_max <= T::zero() {
        return Err(SegError::InvalidInput("d_max must be positive".into()));
    }
    let seeds = stroke.linear(gcost.dims())?;
    let d = distance_from(gcost, &seeds)?;
    // d_min is zero: the stroke voxels themselves
    Ok(d.map(|v| {
        if v >= d_max {
            T::zero()
        } else {
            (d_max - v) / d_max
        }
    }))
}

/// Settings of the gated diffusion applied to `u_i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionParams<T> {
    pub steps: usize,
    pub dt: T,
    pub u_cap: T,
}

impl Default for DiffusionParams<f64> {
    fn default() -> Self {
        Self {
            steps: 5,
            dt: 0.2,
            u_cap: 4.0,
        }
    }
}

/// Explicit steps of `du/dt = u + div(H((u/g_M)^2 - 1) grad u)`, clamped to
/// `[0, u_cap]`. Where `g_M == 0` the gate counts as fully open.
pub fn diffuse_input<T: Real>(
    u: &InputField<T>,
    g_m: &Field<T>,
    heav: &HeavisideParams<T>,
    diff: &DiffusionParams<T>,
) -> Result<InputField<T>> {
    let dims = *u.values.dims();
    if g_m.dims().padded() != dims.padded() {
        return Err(SegError::DimensionMismatch("input vs g_M".into()));
    }
    if !u.values.all_finite() {
        return Err(SegError::NonFinite("input field"));
    }
    let hmin = dims.min_spacing();
    if diff.dt.as_f64() > 0.25 * hmin * hmin * (1.0 + 1e-12) {
        return Err(SegError::InvalidInput(format!(
            "diffusion dt {} above 0.25 h^2",
            diff.dt
        )));
    }
    let sp = dims.spacing();
    let mut cur = u.values.clone();
    let mut gate = vec![T::zero(); dims.len()];
    for _ in 0..diff.steps {
        for (lin, gv) in gate.iter_mut().enumerate() {
            let gm = g_m.get(lin);
            *gv = if gm > T::zero() {
                let r = cur.get(lin) / gm;
                heav.heaviside(r * r - T::one())
            } else {
                T::one()
            };
        }
        let next = Field::from_fn(dims, |lin| {
            let ua = cur.get(lin);
            let mut flux = T::zero();
            if gate[lin] > T::zero() {
                dims.for_each_neighbor(lin, |j, axis| {
                    let c = (gate[lin] + gate[j]) * T::half();
                    let h = T::lit(sp[axis]);
                    flux = flux + c * (cur.get(j) - ua) / (h * h);
                });
            }
            let v = ua + diff.dt * (ua + flux);
            v.max(T::zero()).min(diff.u_cap)
        });
        cur = next;
    }
    Ok(InputField {
        label: u.label,
        values: cur,
    })
}

/// `U_i = u_i - sum_{j != i} u_j`, for every label. `inputs[k]` is label `k + 1`.
pub fn accumulate_region<T: Real>(inputs: &[Field<T>]) -> Result<AggregateInput<T>> {
    let dims = *inputs
        .first()
        .ok_or_else(|| SegError::InvalidInput("no input fields".into()))?
        .dims();
    if inputs.iter().any(|f| f.dims().padded() != dims.padded()) {
        return Err(SegError::DimensionMismatch("input fields".into()));
    }
    // summed per label rather than as 2u_i - total, so two labels stay
    // exactly antisymmetric in floating point
    Ok(AggregateInput {
        fields: (0..inputs.len())
            .map(|k| {
                Field::from_fn(dims, |lin| {
                    let others = inputs
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != k)
                        .fold(T::zero(), |a, (_, f)| a + f.get(lin));
                    inputs[k].get(lin) - others
                })
            })
            .collect(),
    })
}

/// Geodesic distance from the stroke voxels (0 on the stroke, `+inf` where
/// disconnected).
pub fn stroke_distance_input<T: Real>(stroke: &Stroke, gcost: &Field<T>) -> Result<InputField<T>> {
    let seeds = stroke.linear(gcost.dims())?;
    Ok(InputField {
        label: stroke.label,
        values: distance_from(gcost, &seeds)?,
    })
}

/// `U_i = -min(own distances) + min(other labels' distances)`. `nearest[k]`
/// holds, for label `k + 1`, the pointwise minimum over its strokes and seeds.
pub fn accumulate_distance<T: Real>(nearest: &[Field<T>], label: Label) -> Field<T> {
    let k = label as usize - 1;
    let dims = *nearest[k].dims();
    Field::from_fn(dims, |lin| {
        let own = nearest[k].get(lin);
        let other = nearest
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .map(|(_, f)| f.get(lin))
            .fold(T::infinity(), |a, b| a.min(b));
        if own == other {
            // covers inf == inf
            T::zero()
        } else {
            other - own
        }
    })
}
