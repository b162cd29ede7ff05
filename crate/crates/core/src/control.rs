//! Feedback layer: labeling errors, the regulating control law, the estimator
//! of the user's intended partition, Lyapunov monitors and impulses.
//!
//! The closed loop evolves, for every label `i`,
//!
//! ```text
//! d phi_i / dt  = [G_i - alpha_i^2 xi_i] delta(phi_i)
//! d est_i / dt  = k_i [xi_i - |U_i| e_i] delta(est_i)
//! xi_i = H(phi_i) - H(est_i),   e_i = H(est_i) - H(U_i)
//! ```
//!
//! with `alpha_i^2 = g_M + margin`. The estimator rate `k_i > 0` only rescales
//! time pointwise, so the sign of the coupled energy derivative is unchanged.
//!
//! Ticks integrate both equations in the local time `d tau = alpha^2 dt`:
//! every speed is divided by `alpha^2(x)`. Where `g_M` varies by orders of
//! magnitude (edges in distance mode) a global step would otherwise be set by
//! the stiffest voxel and flat regions would never move.

use crate::distance::{natural_speeds_dist, DistanceField};
use crate::error::{Result, SegError};
use crate::grid::{Field, ImageVolume, Label, LabelMap};
use crate::heaviside::HeavisideParams;
use crate::input::AggregateInput;
use crate::levelset::{argmax_labels, stable_dt, LevelSetField};
use crate::region::{natural_speeds, update_stats};
use crate::scalar::Real;

/// Which intrinsic dynamics drive the fronts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dynamics {
    Region,
    Distance,
}

impl Dynamics {
    pub fn as_str(&self) -> &'static str {
        match self {
            Dynamics::Region => "region",
            Dynamics::Distance => "distance",
        }
    }
}

impl std::str::FromStr for Dynamics {
    type Err = SegError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "region" => Ok(Dynamics::Region),
            "distance" => Ok(Dynamics::Distance),
            other => Err(SegError::InvalidInput(format!("unknown mode {other}"))),
        }
    }
}

/// How the estimator's rate is scaled pointwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorRate {
    /// `k = 1`.
    Unit,
    /// `k = alpha^2 / (1 + |U|)`: estimator speeds share the state's scale.
    Matched,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlParams<T> {
    /// `alpha^2 = g_M + alpha_margin`.
    pub alpha_margin: T,
    pub nu: T,
    pub rho: T,
    pub heaviside: HeavisideParams<T>,
    /// Magnitude of the impulse target `P = sign(U) * magnitude`.
    pub impulse_magnitude: T,
    pub estimator_rate: EstimatorRate,
}

impl<T: Real> ControlParams<T> {
    pub fn with_epsilon(epsilon: T) -> Self {
        Self {
            alpha_margin: T::one(),
            nu: T::zero(),
            rho: epsilon,
            heaviside: HeavisideParams::new(epsilon),
            impulse_magnitude: epsilon,
            estimator_rate: EstimatorRate::Matched,
        }
    }
}

impl Default for ControlParams<f64> {
    fn default() -> Self {
        Self::with_epsilon(1.5)
    }
}

/// Energies sampled at a tick boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LyapunovSample {
    pub t: f64,
    pub v: f64,
    pub e: f64,
    pub vhat: f64,
}

/// `xi = H(phi) - H(target)`.
#[inline]
pub fn label_error<T: Real>(h: &HeavisideParams<T>, phi: T, target: T) -> T {
    h.heaviside(phi) - h.heaviside(target)
}

/// `F = -alpha^2 xi`.
#[inline]
pub fn control_signal<T: Real>(xi: T, alpha_sq: T) -> T {
    -alpha_sq * xi
}

/// Estimator speed `k [xi - |U| (H(est) - H(U))]` at one voxel.
#[inline]
pub fn estimator_speed<T: Real>(h: &HeavisideParams<T>, xi: T, est: T, u: T, rate: T) -> T {
    let e_u = h.heaviside(est) - h.heaviside(u);
    rate * (xi - u.abs() * e_u)
}

/// One Euler step of the estimator under a given error field and support.
pub fn estimator_step<T: Real>(
    est: &mut LevelSetField<T>,
    xi_hat: &Field<T>,
    support: &Field<T>,
    rate: &Field<T>,
    dt: T,
) -> Result<()> {
    let h = *est.params();
    let speed = Field::from_fn(*est.dims(), |lin| {
        estimator_speed(&h, xi_hat.get(lin), est.get(lin), support.get(lin), rate.get(lin))
    });
    est.evolve_step(&speed, dt)
}

/// What drives `F` in the state equation.
#[derive(Clone, Debug, PartialEq)]
pub enum Feedback<T> {
    /// No control: automatic segmentation; the estimator copies the state.
    Open,
    /// Control against the running estimate.
    Closed,
    /// Control against a known ideal partition (test oracle).
    Oracle(Vec<LevelSetField<T>>),
}

/// Full numeric state of one segmentation loop.
#[derive(Clone, Debug)]
pub struct LoopState<T> {
    pub dynamics: Dynamics,
    pub params: ControlParams<T>,
    pub image: ImageVolume<T>,
    /// Path cost `1 + |grad I|^2`.
    pub gcost: Field<T>,
    /// Pointwise bound on `|G_i|`.
    pub g_m: Field<T>,
    pub alpha_sq: Field<T>,
    pub phi: Vec<LevelSetField<T>>,
    pub est: Vec<LevelSetField<T>>,
    pub labels: LabelMap,
    pub support: AggregateInput<T>,
    /// Distance mode: per-label distance to the union of seeds and strokes.
    pub nearest: Vec<DistanceField<T>>,
    pub feedback: Feedback<T>,
    pub t: T,
    /// Upper bound on the tick step; the actual step also obeys stability caps.
    pub dt_max: T,
}

/// Outcome of one tick.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport<T> {
    pub dt: T,
    pub reclassified: usize,
    pub alpha_violations: usize,
}

impl<T: Real> LoopState<T> {
    /// Fresh loop with `phi = est` built from `labels`. Distance mode needs
    /// `nearest` distances for every label.
    pub fn new(
        dynamics: Dynamics,
        params: ControlParams<T>,
        image: ImageVolume<T>,
        labels: LabelMap,
        n_labels: usize,
        nearest: Vec<DistanceField<T>>,
        dt_max: T,
    ) -> Result<Self> {
        let dims = *image.dims();
        if !labels.same_shape(&dims) {
            return Err(SegError::DimensionMismatch("image vs label map".into()));
        }
        if n_labels < 2 {
            return Err(SegError::InvalidInput("need at least two labels".into()));
        }
        if labels.max_label() as usize > n_labels {
            return Err(SegError::UnknownLabel(labels.max_label()));
        }
        if !(dt_max > T::zero()) {
            return Err(SegError::InvalidInput("dt must be positive".into()));
        }
        if !(params.alpha_margin > T::zero()) {
            return Err(SegError::InvalidInput("alpha margin must be positive".into()));
        }
        if dynamics == Dynamics::Distance && nearest.len() != n_labels {
            return Err(SegError::EmptySeeds);
        }
        let h = params.heaviside;
        let grad = crate::grid::gradient_magnitude_sq(&image);
        let gcost = grad.map(|g| T::one() + g);
        let g_m = match dynamics {
            Dynamics::Region => crate::region::g_m_bound(&image, &h),
            Dynamics::Distance => gcost.clone(),
        };
        let alpha_sq = g_m.map(|g| g + params.alpha_margin);
        let phi: Vec<_> = (1..=n_labels)
            .map(|l| LevelSetField::from_labels(&labels, l as Label, h))
            .collect();
        Ok(Self {
            dynamics,
            params,
            image,
            gcost,
            g_m,
            alpha_sq,
            est: phi.clone(),
            phi,
            labels,
            support: AggregateInput::zeros(dims, n_labels),
            nearest,
            feedback: Feedback::Closed,
            t: T::zero(),
            dt_max,
        })
    }

    pub fn n_labels(&self) -> usize {
        self.phi.len()
    }

    /// Intrinsic speeds `G_i` for the current state.
    pub fn natural_speeds(&self) -> Result<Vec<Field<T>>> {
        match self.dynamics {
            Dynamics::Region => {
                let stats = update_stats(&self.image, &self.labels, self.n_labels())?;
                Ok(natural_speeds(&self.image, &stats, &self.phi))
            }
            Dynamics::Distance => Ok(natural_speeds_dist(&self.nearest, &self.gcost)),
        }
    }

    /// `xi_i` against the estimator (closed/open) or the oracle target.
    pub fn errors(&self) -> Vec<Field<T>> {
        let h = self.params.heaviside;
        let targets = match &self.feedback {
            Feedback::Oracle(t) => t,
            _ => &self.est,
        };
        self.phi
            .iter()
            .zip(targets)
            .map(|(p, e)| Field::from_fn(*p.dims(), |lin| label_error(&h, p.get(lin), e.get(lin))))
            .collect()
    }

    fn estimator_rates(&self) -> Vec<Field<T>> {
        let dims = *self.gcost.dims();
        (0..self.n_labels())
            .map(|k| match self.params.estimator_rate {
                EstimatorRate::Unit => Field::filled(dims, T::one()),
                EstimatorRate::Matched => {
                    let u = &self.support.fields[k];
                    Field::from_fn(dims, |lin| {
                        self.alpha_sq.get(lin) / (T::one() + u.get(lin).abs())
                    })
                }
            })
            .collect()
    }

    /// Step bound from the linearized error decay. In local time state and
    /// estimator each contract `xi` at a rate up to `delta_max^2`; keeping the
    /// combined factor per tick at or below 1/2 rules out overshoot.
    pub fn stiffness_cap(&self) -> T {
        let dm = self.params.heaviside.delta_max();
        T::lit(0.25) / (dm * dm)
    }

    /// Voxels of any field's band where `alpha^2 < g_M`.
    pub fn alpha_violations(&self) -> usize {
        let far = self.params.heaviside.epsilon + T::one();
        (0..self.gcost.values().len())
            .filter(|&lin| {
                self.phi.iter().any(|p| p.get(lin).abs() < far)
                    && self.alpha_sq.get(lin) < self.g_m.get(lin)
            })
            .count()
    }

    /// One synchronized tick of state and estimator, then label refresh.
    pub fn coupled_step(&mut self) -> Result<StepReport<T>> {
        let g = self.natural_speeds()?;
        let xi = self.errors();
        let h = self.params.heaviside;
        let n = self.n_labels();
        let controlled = !matches!(self.feedback, Feedback::Open);

        let speeds: Vec<Field<T>> = (0..n)
            .map(|k| {
                Field::from_fn(*g[k].dims(), |lin| {
                    let f = if controlled {
                        control_signal(xi[k].get(lin), self.alpha_sq.get(lin))
                    } else {
                        T::zero()
                    };
                    (g[k].get(lin) + f) / self.alpha_sq.get(lin)
                })
            })
            .collect();

        let closed = matches!(self.feedback, Feedback::Closed);
        let est_speeds: Vec<Field<T>> = if closed {
            let rates = self.estimator_rates();
            (0..n)
                .map(|k| {
                    Field::from_fn(*g[k].dims(), |lin| {
                        estimator_speed(
                            &h,
                            xi[k].get(lin),
                            self.est[k].get(lin),
                            self.support.fields[k].get(lin),
                            rates[k].get(lin),
                        ) / self.alpha_sq.get(lin)
                    })
                })
                .collect()
        } else {
            Vec::new()
        };

        let mut dt = self.dt_max;
        if controlled {
            dt = dt.min(self.stiffness_cap());
        }
        for (f, s) in self.phi.iter().zip(&speeds) {
            dt = dt.min(band_cap(f, s)?);
        }
        for (f, s) in self.est.iter().zip(&est_speeds) {
            dt = dt.min(band_cap(f, s)?);
        }

        for (f, s) in self.phi.iter_mut().zip(&speeds) {
            f.evolve_step(s, dt)?;
        }
        for (f, s) in self.est.iter_mut().zip(&est_speeds) {
            f.evolve_step(s, dt)?;
        }

        let prev = std::mem::replace(&mut self.labels, argmax_labels(&self.phi));
        if matches!(self.feedback, Feedback::Open) {
            self.est = self.phi.clone();
        }
        self.t = self.t + dt;
        Ok(StepReport {
            dt,
            reclassified: prev.diff_count(&self.labels),
            alpha_violations: self.alpha_violations(),
        })
    }

    /// `E`, `V_hat` and their sum at the current state.
    pub fn lyapunov_sample(&self) -> LyapunovSample {
        let h = self.params.heaviside;
        let vol = self.gcost.dims().voxel_volume();
        let xi = self.errors();
        let mut vhat = 0.0;
        for x in &xi {
            vhat += x.values().iter().map(|v| v.as_f64().powi(2)).sum::<f64>();
        }
        vhat *= 0.5 * vol;
        let mut e = 0.0;
        if !matches!(self.feedback, Feedback::Oracle(_)) {
            for (k, est) in self.est.iter().enumerate() {
                let u = &self.support.fields[k];
                for lin in 0..u.values().len() {
                    let uv = u.get(lin);
                    if uv == T::zero() {
                        continue;
                    }
                    let eu = (h.heaviside(est.get(lin)) - h.heaviside(uv)).as_f64();
                    e += uv.abs().as_f64() * eu * eu;
                }
            }
            e *= 0.5 * vol;
        }
        LyapunovSample {
            t: self.t.as_f64(),
            v: e + vhat,
            e,
            vhat,
        }
    }

    /// `rho * sum delta^2(phi_i) xi_i^2 <= sum xi_i^2` for every label.
    pub fn rate_condition_check(&self, rho: T) -> bool {
        let xi = self.errors();
        self.phi.iter().zip(&xi).all(|(p, x)| {
            let mut lhs = T::zero();
            let mut rhs = T::zero();
            for lin in 0..x.values().len() {
                let e2 = x.get(lin) * x.get(lin);
                let d = p.delta_at(lin);
                lhs = lhs + d * d * e2;
                rhs = rhs + e2;
            }
            rho * lhs <= rhs
        })
    }

    /// Jump of state and estimator on the stroke voxels: `est <- P`, then
    /// `phi <- est`, with `P = sign(U) * magnitude` for every label.
    /// `U` must already include the stroke.
    pub fn apply_impulse(&mut self, label: Label, voxels: &[usize]) -> Result<()> {
        let k = label as usize - 1;
        if k >= self.n_labels() {
            return Err(SegError::UnknownLabel(label));
        }
        for &v in voxels {
            if self.support.fields[k].get(v) <= T::zero() {
                return Err(SegError::ImpulseSign(format!(
                    "U_{} = {} at voxel {}",
                    label,
                    self.support.fields[k].get(v),
                    v
                )));
            }
        }
        let mag = self.params.impulse_magnitude;
        for j in 0..self.n_labels() {
            let (pos, neg): (Vec<usize>, Vec<usize>) = voxels
                .iter()
                .partition(|&&v| j == k || self.support.fields[j].get(v) > T::zero());
            for (set, val) in [(pos, mag), (neg, -mag)] {
                if set.is_empty() {
                    continue;
                }
                self.est[j].assign(&set, val);
                self.phi[j].assign(&set, val);
            }
        }
        self.labels = argmax_labels(&self.phi);
        Ok(())
    }
}

fn band_cap<T: Real>(f: &LevelSetField<T>, speed: &Field<T>) -> Result<T> {
    let eps = f.params().epsilon;
    let mut m = T::zero();
    for (p, s) in f.phi().values().iter().zip(speed.values()) {
        if p.abs() < eps {
            if !s.is_finite() {
                return Err(SegError::NonFinite("speed on band"));
            }
            m = m.max(s.abs());
        }
    }
    Ok(stable_dt(f.params(), m))
}
