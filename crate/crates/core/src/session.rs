//! Session lifecycle: start, stroke ingestion with impulses, ticks with metric
//! accounting, and the synthetic user that drives headless closed loops.
//!
//! Every state-changing call is appended to an event list; `log_text`
//! renders it and `crate::replay` rebuilds an identical session from it.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::control::{ControlParams, Dynamics, EstimatorRate, Feedback, LoopState, LyapunovSample};
use crate::distance::{assign_labels, distance_from, SeedSet};
use crate::error::{Result, SegError};
use crate::grid::{connected_components, dice, erosion_depth, Field, ImageVolume, Label, LabelMap};
use crate::heaviside::HeavisideParams;
use crate::input::{
    accumulate_distance, accumulate_region, diffuse_input, stroke_distance_input, stroke_kernel_region,
    AggregateInput, DiffusionParams, InputField, Stroke,
};
use crate::scalar::Real;
use crate::synth::ball_in_label;

/// Whether the session runs the estimator (closed) or plain automatic
/// segmentation (open).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeedbackMode {
    Open,
    Closed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionConfig<T> {
    pub dynamics: Dynamics,
    /// Label count including the background, which is label `n_labels`.
    pub n_labels: usize,
    pub params: ControlParams<T>,
    /// Kernel support radius; `None` means 10% of the grid diagonal.
    pub d_max: Option<T>,
    pub diffusion: DiffusionParams<T>,
    pub dt: T,
    /// Ticks between synthetic-user reviews.
    pub review_interval: usize,
    pub seed: u64,
    pub feedback: FeedbackMode,
}

impl<T: Real> SessionConfig<T> {
    pub fn new(dynamics: Dynamics, n_labels: usize) -> Self {
        Self {
            dynamics,
            n_labels,
            params: ControlParams::with_epsilon(T::lit(1.5)),
            d_max: None,
            diffusion: DiffusionParams {
                steps: 5,
                dt: T::lit(0.2),
                u_cap: T::lit(4.0),
            },
            dt: T::one(),
            review_interval: 25,
            seed: 0,
            feedback: FeedbackMode::Closed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_labels < 2 || self.n_labels > Label::MAX as usize {
            return Err(SegError::InvalidInput(format!("label count {}", self.n_labels)));
        }
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return Err(SegError::InvalidInput("dt must be positive".into()));
        }
        if !(self.params.heaviside.epsilon > T::zero()) {
            return Err(SegError::InvalidInput("epsilon must be positive".into()));
        }
        if !(self.params.alpha_margin > T::zero()) {
            return Err(SegError::InvalidInput("alpha margin must be positive".into()));
        }
        if let Some(d) = self.d_max {
            if !(d > T::zero()) {
                return Err(SegError::InvalidInput("d_max must be positive".into()));
            }
        }
        if self.review_interval == 0 {
            return Err(SegError::InvalidInput("review interval must be positive".into()));
        }
        Ok(())
    }

    /// Canonical one-line form; the seed travels in the log header instead.
    pub fn to_line(&self) -> String {
        let p = &self.params;
        let rate = match p.estimator_rate {
            EstimatorRate::Unit => "unit",
            EstimatorRate::Matched => "matched",
        };
        let dmax = self.d_max.map_or("auto".to_string(), |d| d.to_string());
        let fb = match self.feedback {
            FeedbackMode::Open => "open",
            FeedbackMode::Closed => "closed",
        };
        format!(
            "config mode={} labels={} feedback={} epsilon={} margin={} nu={} rho={} impulse={} rate={} dmax={} dsteps={} ddt={} ucap={} dt={} review={}",
            self.dynamics.as_str(),
            self.n_labels,
            fb,
            p.heaviside.epsilon,
            p.alpha_margin,
            p.nu,
            p.rho,
            p.impulse_magnitude,
            rate,
            dmax,
            self.diffusion.steps,
            self.diffusion.dt,
            self.diffusion.u_cap,
            self.dt,
            self.review_interval,
        )
    }

    pub fn from_line(line: &str, seed: u64) -> Result<Self> {
        let bad = |m: String| SegError::MalformedLog(m);
        let mut it = line.split_whitespace();
        if it.next() != Some("config") {
            return Err(bad("expected config line".into()));
        }
        let mut cfg = Self::new(Dynamics::Region, 2);
        cfg.seed = seed;
        let num = |k: &str, v: &str| -> Result<T> {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .map(T::lit)
                .ok_or_else(|| SegError::MalformedLog(format!("bad {k}={v}")))
        };
        let int = |k: &str, v: &str| -> Result<usize> {
            v.parse::<usize>()
                .map_err(|_| SegError::MalformedLog(format!("bad {k}={v}")))
        };
        for kv in it {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad field {kv}")))?;
            match k {
                "mode" => cfg.dynamics = v.parse().map_err(|_| bad(format!("bad mode {v}")))?,
                "labels" => cfg.n_labels = int(k, v)?,
                "feedback" => {
                    cfg.feedback = match v {
                        "open" => FeedbackMode::Open,
                        "closed" => FeedbackMode::Closed,
                        _ => return Err(bad(format!("bad feedback {v}"))),
                    }
                }
                "epsilon" => cfg.params.heaviside = HeavisideParams::new(num(k, v)?),
                "margin" => cfg.params.alpha_margin = num(k, v)?,
                "nu" => cfg.params.nu = num(k, v)?,
                "rho" => cfg.params.rho = num(k, v)?,
                "impulse" => cfg.params.impulse_magnitude = num(k, v)?,
                "rate" => {
                    cfg.params.estimator_rate = match v {
                        "unit" => EstimatorRate::Unit,
                        "matched" => EstimatorRate::Matched,
                        _ => return Err(bad(format!("bad rate {v}"))),
                    }
                }
                "dmax" => cfg.d_max = if v == "auto" { None } else { Some(num(k, v)?) },
                "dsteps" => cfg.diffusion.steps = int(k, v)?,
                "ddt" => cfg.diffusion.dt = num(k, v)?,
                "ucap" => cfg.diffusion.u_cap = num(k, v)?,
                "dt" => cfg.dt = num(k, v)?,
                "review" => cfg.review_interval = int(k, v)?,
                _ => return Err(bad(format!("unknown config field {k}"))),
            }
        }
        cfg.validate().map_err(|e| bad(e.to_string()))?;
        Ok(cfg)
    }

    /// First 16 hex digits of the SHA-256 of the config line.
    pub fn digest(&self) -> String {
        line_digest(&self.to_line())
    }
}

pub(crate) fn line_digest(line: &str) -> String {
    let h = Sha256::digest(line.as_bytes());
    hex::encode(&h[..8])
}

/// Initial condition of a session.
#[derive(Clone, Debug, PartialEq)]
pub enum SessionInit {
    Labels(LabelMap),
    Seeds(Vec<SeedSet>),
}

/// Metrics of one tick (tick 0 is the state right after start).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TickMetrics {
    pub tick: u64,
    pub t: f64,
    pub dt: f64,
    pub lyapunov: LyapunovSample,
    pub rate_condition: bool,
    /// Cumulative stroked voxels at the end of the tick.
    pub actuated: usize,
    pub reclassified: usize,
    pub alpha_violations: usize,
    /// Smallest foreground Dice against the reference, when one is set.
    pub dice: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    pub actuated: usize,
    pub impulses: usize,
    pub series: Vec<TickMetrics>,
}

impl Metrics {
    pub fn last(&self) -> Option<&TickMetrics> {
        self.series.last()
    }

    /// CSV trace with one row per tick.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| SegError::Io(std::io::Error::other(e));
        w.write_record([
            "tick",
            "t",
            "V",
            "E",
            "Vhat",
            "rate_condition",
            "actuated",
            "reclassified",
            "dice",
        ])
        .map_err(io)?;
        for m in &self.series {
            w.write_record([
                m.tick.to_string(),
                m.t.to_string(),
                m.lyapunov.v.to_string(),
                m.lyapunov.e.to_string(),
                m.lyapunov.vhat.to_string(),
                (m.rate_condition as u8).to_string(),
                m.actuated.to_string(),
                m.reclassified.to_string(),
                m.dice.map_or(String::new(), |d| d.to_string()),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EventKind {
    Init,
    Stroke(Stroke),
    /// A run of consecutive ticks.
    Tick(u64),
    Impulse { label: Label, k: u32, checksum: String },
    Snapshot(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionEvent {
    pub seq: u64,
    pub kind: EventKind,
}

/// Reply to an ingested stroke.
#[derive(Clone, Debug, PartialEq)]
pub struct ImpulseAck {
    pub label: Label,
    pub k: u32,
    /// Distinct voxels of the stroke.
    pub actuated: usize,
    /// Stroke voxels skipped because opposing strokes outweigh this label there.
    pub contested: usize,
    pub checksum: String,
}

/// Per-label split of the current partition against a reference, in linear
/// order. Index `k` holds label `k + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorDecomposition {
    pub correct: Vec<Vec<usize>>,
    pub misclassified: Vec<Vec<usize>>,
    pub unreached: Vec<Vec<usize>>,
}

impl ErrorDecomposition {
    pub fn new(current: &LabelMap, reference: &LabelMap, n_labels: usize) -> Result<Self> {
        if current.dims().padded() != reference.dims().padded() {
            return Err(SegError::DimensionMismatch("reference vs labels".into()));
        }
        let mut out = Self {
            correct: vec![Vec::new(); n_labels],
            misclassified: vec![Vec::new(); n_labels],
            unreached: vec![Vec::new(); n_labels],
        };
        for (lin, (&c, &r)) in current.labels().iter().zip(reference.labels()).enumerate() {
            for l in [c, r] {
                if l == 0 || l as usize > n_labels {
                    return Err(SegError::UnknownLabel(l));
                }
            }
            if c == r {
                out.correct[c as usize - 1].push(lin);
            } else {
                out.misclassified[c as usize - 1].push(lin);
                out.unreached[r as usize - 1].push(lin);
            }
        }
        Ok(out)
    }
}

/// Result of a synthetic-user run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopOutcome {
    pub impulses: usize,
    pub actuated: usize,
    pub ticks: u64,
    pub dice: f64,
    /// The synthetic user was satisfied within the budget.
    pub converged: bool,
}

/// Smallest foreground Dice (background is the last label).
pub fn min_foreground_dice(labels: &LabelMap, reference: &LabelMap, n_labels: usize) -> Result<f64> {
    let mut m = 1.0f64;
    for l in 1..n_labels as Label {
        m = m.min(dice(labels, reference, l)?);
    }
    Ok(m)
}

/// A stroke's surviving voxels and its diffused kernel.
#[derive(Clone, Debug)]
struct Mark<T> {
    label: Label,
    voxels: Vec<usize>,
    u: Field<T>,
}

pub struct Session<T> {
    id: String,
    cfg: SessionConfig<T>,
    d_max: T,
    image: ImageVolume<T>,
    init: SessionInit,
    reference: Option<LabelMap>,
    state: LoopState<T>,
    /// Region mode: live strokes with their diffused kernels.
    marks: Vec<Mark<T>>,
    /// Distance mode: seed and stroke voxels per label (`label - 1`).
    sources: Vec<Vec<usize>>,
    strokes_per_label: Vec<u32>,
    metrics: Metrics,
    events: Vec<SessionEvent>,
    ticks: u64,
    pending_ticks: u64,
}

impl<T: Real> Session<T> {
    /// Open a session. Region mode accepts a label map or seeds (seeds are
    /// grown to their geodesic clustering); distance mode needs seeds for
    /// every label, background included.
    pub fn start(
        id: &str,
        image: ImageVolume<T>,
        init: SessionInit,
        cfg: SessionConfig<T>,
        reference: Option<LabelMap>,
    ) -> Result<Self> {
        cfg.validate()?;
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(SegError::InvalidInput(format!("bad session id {id:?}")));
        }
        let dims = *image.dims();
        let n = cfg.n_labels;
        if let Some(r) = &reference {
            if !r.same_shape(&dims) {
                return Err(SegError::DimensionMismatch("reference vs image".into()));
            }
            if r.labels().iter().any(|&l| l == 0 || l as usize > n) {
                return Err(SegError::UnknownLabel(r.max_label()));
            }
        }
        let gcost = crate::grid::gradient_magnitude_sq(&image).map(|g| T::one() + g);
        let seed_sources = |seeds: &[SeedSet]| -> Result<Vec<Vec<usize>>> {
            (1..=n as Label)
                .map(|l| {
                    let mut v = Vec::new();
                    for s in seeds.iter().filter(|s| s.label == l) {
                        for &g in &s.voxels {
                            if !dims.contains(g) {
                                return Err(SegError::OutOfBounds(format!("{:?}", g)));
                            }
                            v.push(dims.linear(g));
                        }
                    }
                    v.sort_unstable();
                    v.dedup();
                    if v.is_empty() {
                        return Err(SegError::EmptySeeds);
                    }
                    Ok(v)
                })
                .collect()
        };
        let dists = |src: &[Vec<usize>]| -> Result<Vec<Field<T>>> {
            src.iter().map(|v| distance_from(&gcost, v)).collect()
        };
        if let SessionInit::Seeds(seeds) = &init {
            if let Some(s) = seeds.iter().find(|s| s.label == 0 || s.label as usize > n) {
                return Err(SegError::UnknownLabel(s.label));
            }
        }
        let (labels, nearest, sources) = match (&init, cfg.dynamics) {
            (SessionInit::Labels(lm), Dynamics::Region) => {
                if !lm.same_shape(&dims) {
                    return Err(SegError::DimensionMismatch("init labels vs image".into()));
                }
                for l in 1..=n as Label {
                    if lm.count(l) == 0 {
                        return Err(SegError::InvalidInput(format!("init misses label {l}")));
                    }
                }
                if lm.labels().iter().any(|&l| l == 0 || l as usize > n) {
                    return Err(SegError::UnknownLabel(lm.max_label()));
                }
                (lm.clone(), Vec::new(), Vec::new())
            }
            (SessionInit::Seeds(seeds), Dynamics::Region) => {
                (assign_labels(&dists(&seed_sources(seeds)?)?)?, Vec::new(), Vec::new())
            }
            (SessionInit::Seeds(seeds), Dynamics::Distance) => {
                let src = seed_sources(seeds)?;
                let d = dists(&src)?;
                (assign_labels(&d)?, d, src)
            }
            (SessionInit::Labels(_), Dynamics::Distance) => return Err(SegError::EmptySeeds),
        };
        let mut state = LoopState::new(cfg.dynamics, cfg.params, image.clone(), labels, n, nearest, cfg.dt)?;
        state.feedback = match cfg.feedback {
            FeedbackMode::Open => Feedback::Open,
            FeedbackMode::Closed => Feedback::Closed,
        };
        if cfg.dynamics == Dynamics::Distance {
            state.support = AggregateInput {
                fields: (1..=n as Label)
                    .map(|l| accumulate_distance(&state.nearest, l))
                    .collect(),
            };
        }
        let d_max = cfg.d_max.unwrap_or_else(|| T::lit(0.1 * dims.diagonal()));
        let mut s = Self {
            id: id.to_string(),
            d_max,
            image,
            init,
            reference,
            state,
            marks: Vec::new(),
            sources,
            strokes_per_label: vec![0; n],
            metrics: Metrics::default(),
            events: Vec::new(),
            ticks: 0,
            pending_ticks: 0,
            cfg,
        };
        s.push(EventKind::Init);
        let m = s.sample(0, T::zero(), 0, 0)?;
        s.metrics.series.push(m);
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig<T> {
        &self.cfg
    }

    pub fn image(&self) -> &ImageVolume<T> {
        &self.image
    }

    pub fn init(&self) -> &SessionInit {
        &self.init
    }

    pub fn reference(&self) -> Option<&LabelMap> {
        self.reference.as_ref()
    }

    pub fn state(&self) -> &LoopState<T> {
        &self.state
    }

    pub fn labels(&self) -> &LabelMap {
        &self.state.labels
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn d_max(&self) -> T {
        self.d_max
    }

    /// Strokes ingested so far for `label`.
    pub fn stroke_count(&self, label: Label) -> u32 {
        self.strokes_per_label[label as usize - 1]
    }

    fn push(&mut self, kind: EventKind) {
        let seq = self.events.last().map_or(0, |e| e.seq + 1);
        self.events.push(SessionEvent { seq, kind });
    }

    fn flush_ticks(&mut self) {
        if self.pending_ticks > 0 {
            let n = std::mem::take(&mut self.pending_ticks);
            self.push(EventKind::Tick(n));
        }
    }

    fn sample(&self, tick: u64, dt: T, reclassified: usize, alpha_violations: usize) -> Result<TickMetrics> {
        let dice = match &self.reference {
            Some(r) => Some(min_foreground_dice(&self.state.labels, r, self.cfg.n_labels)?),
            None => None,
        };
        Ok(TickMetrics {
            tick,
            t: self.state.t.as_f64(),
            dt: dt.as_f64(),
            lyapunov: self.state.lyapunov_sample(),
            rate_condition: self.state.rate_condition_check(self.cfg.params.rho),
            actuated: self.metrics.actuated,
            reclassified,
            alpha_violations,
            dice,
        })
    }

    /// Digest of labels, fields, tick count and the metric series.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for &l in self.state.labels.labels() {
            h.update(l.to_le_bytes());
        }
        for f in self.state.phi.iter().chain(&self.state.est) {
            for v in f.phi().values() {
                h.update(v.as_f64().to_bits().to_le_bytes());
            }
        }
        h.update(self.ticks.to_le_bytes());
        h.update(self.state.t.as_f64().to_bits().to_le_bytes());
        for m in &self.metrics.series {
            h.update(m.tick.to_le_bytes());
            for x in [m.t, m.dt, m.lyapunov.v, m.lyapunov.e, m.lyapunov.vhat] {
                h.update(x.to_bits().to_le_bytes());
            }
            h.update([m.rate_condition as u8]);
            h.update((m.actuated as u64).to_le_bytes());
            h.update((m.reclassified as u64).to_le_bytes());
            h.update((m.alpha_violations as u64).to_le_bytes());
        }
        hex::encode(&h.finalize()[..16])
    }

    /// Log a stroke, fold it into the inputs and apply its impulse. The
    /// stroke's time and sequence number are assigned by the session.
    pub fn ingest_stroke(&mut self, mut stroke: Stroke) -> Result<ImpulseAck> {
        let n = self.cfg.n_labels;
        if stroke.label == 0 || stroke.label as usize > n {
            return Err(SegError::UnknownLabel(stroke.label));
        }
        let dims = *self.image.dims();
        let mut voxels = stroke.linear(&dims)?;
        let k_idx = stroke.label as usize - 1;
        stroke.t = self.state.t.as_f64();
        stroke.seq = self.strokes_per_label[k_idx];

        self.flush_ticks();
        self.push(EventKind::Stroke(stroke.clone()));

        voxels.sort_unstable();
        voxels.dedup();
        match self.cfg.dynamics {
            Dynamics::Region => {
                let mut marks = std::mem::take(&mut self.marks);
                for m in marks.iter_mut().filter(|m| m.label != stroke.label) {
                    let before = m.voxels.len();
                    m.voxels.retain(|v| voxels.binary_search(v).is_err());
                    if m.voxels.len() != before && !m.voxels.is_empty() {
                        m.u = self.diffused_kernel(m.label, &m.voxels)?;
                    }
                }
                marks.retain(|m| !m.voxels.is_empty());
                self.marks = marks;
                let u = self.diffused_kernel(stroke.label, &voxels)?;
                self.marks.push(Mark {
                    label: stroke.label,
                    voxels: voxels.clone(),
                    u,
                });
                let mut inputs = vec![Field::filled(dims, T::zero()); n];
                for m in &self.marks {
                    let acc = &mut inputs[m.label as usize - 1];
                    for (a, &b) in acc.values_mut().iter_mut().zip(m.u.values()) {
                        *a = *a + b;
                    }
                }
                self.state.support = accumulate_region(&inputs)?;
            }
            Dynamics::Distance => {
                for j in 0..n {
                    if j == k_idx {
                        continue;
                    }
                    let kept: Vec<usize> = self.sources[j]
                        .iter()
                        .copied()
                        .filter(|v| voxels.binary_search(v).is_err())
                        .collect();
                    // A label keeps its last source voxels so its distance stays finite.
                    if kept.len() != self.sources[j].len() && !kept.is_empty() {
                        self.state.nearest[j] = distance_from(&self.state.gcost, &kept)?;
                        self.sources[j] = kept;
                    }
                }
                let own = &mut self.sources[k_idx];
                own.extend_from_slice(&voxels);
                own.sort_unstable();
                own.dedup();
                let d = stroke_distance_input(&stroke, &self.state.gcost)?;
                for (a, &b) in self.state.nearest[k_idx]
                    .values_mut()
                    .iter_mut()
                    .zip(d.values.values())
                {
                    *a = a.min(b);
                }
                self.state.support = AggregateInput {
                    fields: (1..=n as Label)
                        .map(|l| accumulate_distance(&self.state.nearest, l))
                        .collect(),
                };
            }
        }

        let actuated = voxels.len();
        let u = &self.state.support.fields[k_idx];
        let (live, contested): (Vec<usize>, Vec<usize>) =
            voxels.iter().partition(|&&v| u.get(v) > T::zero());
        if !live.is_empty() {
            self.state.apply_impulse(stroke.label, &live)?;
        }
        self.metrics.actuated += actuated;
        self.metrics.impulses += 1;
        self.strokes_per_label[k_idx] += 1;
        let checksum = self.checksum();
        self.push(EventKind::Impulse {
            label: stroke.label,
            k: stroke.seq,
            checksum: checksum.clone(),
        });
        Ok(ImpulseAck {
            label: stroke.label,
            k: stroke.seq,
            actuated,
            contested: contested.len(),
            checksum,
        })
    }

    /// Geodesic kernel of a voxel set, diffused under the session's settings.
    fn diffused_kernel(&self, label: Label, voxels: &[usize]) -> Result<Field<T>> {
        let dims = *self.image.dims();
        let stroke = Stroke {
            label,
            voxels: voxels.iter().map(|&v| dims.index(v)).collect(),
            t: 0.0,
            seq: 0,
        };
        let kernel = stroke_kernel_region(&stroke, &self.state.gcost, self.d_max)?;
        let u = diffuse_input(
            &InputField { label, values: kernel },
            &self.state.g_m,
            &self.cfg.params.heaviside,
            &self.cfg.diffusion,
        )?;
        Ok(u.values)
    }

    /// One coupled step plus metric sampling.
    pub fn tick(&mut self) -> Result<TickMetrics> {
        let rep = self.state.coupled_step()?;
        self.ticks += 1;
        self.pending_ticks += 1;
        let m = self.sample(self.ticks, rep.dt, rep.reclassified, rep.alpha_violations)?;
        self.metrics.series.push(m);
        Ok(m)
    }

    /// Append a snapshot event carrying the current checksum.
    pub fn snapshot(&mut self) -> String {
        self.flush_ticks();
        let c = self.checksum();
        self.push(EventKind::Snapshot(c.clone()));
        c
    }

    pub fn error_decomposition(&self, reference: &LabelMap) -> Result<ErrorDecomposition> {
        ErrorDecomposition::new(&self.state.labels, reference, self.cfg.n_labels)
    }

    /// The next stroke a careful user would draw, or `None` once the
    /// segmentation is good enough. Targets the largest face-connected error
    /// component (keyed by its reference label) and brushes a ball around
    /// its most interior voxel, clipped to that reference label.
    pub fn synthetic_user_step(&self, reference: &LabelMap, brush: f64) -> Result<Option<Stroke>> {
        let cur = &self.state.labels;
        if !reference.same_shape(self.image.dims()) {
            return Err(SegError::DimensionMismatch("reference vs image".into()));
        }
        let n = self.cfg.n_labels;
        if min_foreground_dice(cur, reference, n)? >= 0.95 {
            return Ok(None);
        }
        let dims = cur.dims();
        let key: Vec<Option<Label>> = cur
            .labels()
            .iter()
            .zip(reference.labels())
            .map(|(&c, &r)| (c != r).then_some(r))
            .collect();
        let comps = connected_components(&dims, &key);
        let Some((label, comp)) = comps
            .iter()
            .fold(None::<&(Label, Vec<usize>)>, |best, c| match best {
                Some(b) if b.1.len() >= c.1.len() => Some(b),
                _ => Some(c),
            })
        else {
            return Ok(None);
        };
        if (comp.len() as f64) < 0.005 * dims.len() as f64 {
            return Ok(None);
        }
        let mut mask = vec![false; dims.len()];
        for &i in comp {
            mask[i] = true;
        }
        let depth = erosion_depth(&dims, &mask);
        let mut center = comp[0];
        for &i in comp {
            if depth[i] > depth[center] {
                center = i;
            }
        }
        let voxels = ball_in_label(reference, *label, center, brush);
        Ok(Some(Stroke {
            label: *label,
            voxels: voxels.into_iter().map(|i| dims.index(i)).collect(),
            t: self.state.t.as_f64(),
            seq: self.strokes_per_label[*label as usize - 1],
        }))
    }

    /// Alternate review windows of `review_interval` ticks with synthetic
    /// strokes until the user is satisfied, the impulse budget is spent, or
    /// `max_ticks` have elapsed.
    pub fn run_synthetic_user(
        &mut self,
        reference: &LabelMap,
        brush: f64,
        budget: usize,
        max_ticks: u64,
    ) -> Result<LoopOutcome> {
        let start = self.metrics.impulses;
        let converged = loop {
            for _ in 0..self.cfg.review_interval {
                if self.ticks >= max_ticks {
                    break;
                }
                self.tick()?;
            }
            match self.synthetic_user_step(reference, brush)? {
                None => break true,
                Some(s) => {
                    if self.metrics.impulses - start >= budget || self.ticks >= max_ticks {
                        break false;
                    }
                    self.ingest_stroke(s)?;
                }
            }
        };
        Ok(LoopOutcome {
            impulses: self.metrics.impulses - start,
            actuated: self.metrics.actuated,
            ticks: self.ticks,
            dice: min_foreground_dice(&self.state.labels, reference, self.cfg.n_labels)?,
            converged,
        })
    }

    /// Tick until no voxel changes label for `quiet` consecutive ticks.
    /// Returns whether that happened within `max_ticks` total ticks.
    pub fn settle(&mut self, quiet: usize, max_ticks: u64) -> Result<bool> {
        let mut run = 0;
        while self.ticks < max_ticks {
            if self.tick()?.reclassified == 0 {
                run += 1;
                if run >= quiet {
                    return Ok(true);
                }
            } else {
                run = 0;
            }
        }
        Ok(false)
    }

    /// The event log as text, including ticks not yet flushed.
    pub fn log_text(&self) -> String {
        let mut out = String::new();
        let dims = *self.image.dims();
        let _ = writeln!(out, "seglog v1 {} {}", self.cfg.digest(), self.cfg.seed);
        let _ = writeln!(out, "{}", self.cfg.to_line());
        let _ = writeln!(out, "session {}", self.id);
        let ext = dims.extents();
        let _ = write!(out, "image {}", ext.len());
        for e in &ext {
            let _ = write!(out, " {e}");
        }
        let _ = write!(out, " {}", self.image.channels());
        for v in self.image.values() {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
        if let Some(r) = &self.reference {
            let _ = writeln!(out, "reference {}", crate::io::rle_encode(r));
        }
        for e in &self.events {
            match &e.kind {
                EventKind::Init => match &self.init {
                    SessionInit::Labels(lm) => {
                        let _ = writeln!(out, "init labels {}", crate::io::rle_encode(lm));
                    }
                    SessionInit::Seeds(seeds) => {
                        for s in seeds {
                            let _ = write!(out, "seed {} {}", s.label, s.voxels.len());
                            for &v in &s.voxels {
                                for c in crate::io::coords_of(&dims, v) {
                                    let _ = write!(out, " {c}");
                                }
                            }
                            out.push('\n');
                        }
                        out.push_str("init seeds\n");
                    }
                },
                EventKind::Stroke(s) => {
                    out.push_str(&stroke_line(&self.id, &dims, s));
                    out.push('\n');
                }
                EventKind::Tick(n) => {
                    let _ = writeln!(out, "tick {n}");
                }
                EventKind::Impulse { label, k, checksum } => {
                    let _ = writeln!(out, "impulse {label} {k} {checksum}");
                }
                EventKind::Snapshot(c) => {
                    let _ = writeln!(out, "snapshot {c}");
                }
            }
        }
        if self.pending_ticks > 0 {
            let _ = writeln!(out, "tick {}", self.pending_ticks);
        }
        out
    }
}

/// Wire form `stroke <session> <label> <t> <k> <n> <x> <y> [<z>] ...`.
pub fn stroke_line(session: &str, dims: &crate::grid::Dims, s: &Stroke) -> String {
    let mut out = format!("stroke {} {} {} {} {}", session, s.label, s.t, s.seq, s.voxels.len());
    for &v in &s.voxels {
        for c in crate::io::coords_of(dims, v) {
            let _ = write!(out, " {c}");
        }
    }
    out
}

/// Parse a stroke wire line; returns the session id and the stroke.
pub fn parse_stroke_line(line: &str, dims: &crate::grid::Dims) -> Result<(String, Stroke)> {
    let bad = |m: &str| SegError::InvalidInput(format!("stroke: {m}"));
    let tok: Vec<&str> = line.split_whitespace().collect();
    if tok.len() < 6 || tok[0] != "stroke" {
        return Err(bad("expected `stroke <session> <label> <t> <k> <n> coords...`"));
    }
    let label: Label = tok[2].parse().map_err(|_| bad("label"))?;
    let t: f64 = tok[3].parse().map_err(|_| bad("time"))?;
    if !t.is_finite() {
        return Err(bad("time"));
    }
    let seq: u32 = tok[4].parse().map_err(|_| bad("sequence number"))?;
    let n: usize = tok[5].parse().map_err(|_| bad("voxel count"))?;
    let nd = dims.ndim();
    let coords = &tok[6..];
    if n == 0 || coords.len() != n * nd {
        return Err(bad(&format!("expected {} coordinates, got {}", n * nd, coords.len())));
    }
    let mut voxels = Vec::with_capacity(n);
    for chunk in coords.chunks(nd) {
        let c: Vec<usize> = chunk
            .iter()
            .map(|s| s.parse::<usize>().map_err(|_| bad("coordinate")))
            .collect::<Result<_>>()?;
        voxels.push(crate::io::index_from_coords(dims, &c)?);
    }
    Ok((
        tok[1].to_string(),
        Stroke {
            label,
            voxels,
            t,
            seq,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Dims, GridIndex};
    use crate::synth;

    fn two_disk_session(mode: Dynamics) -> (Session<f64>, synth::SynthCase) {
        let case = synth::two_disks(32, 0.0, 1);
        let cfg = SessionConfig::new(mode, case.n_labels);
        let init = match mode {
            Dynamics::Region => SessionInit::Labels(case.init.clone()),
            Dynamics::Distance => SessionInit::Seeds(case.seeds.clone()),
        };
        let s = Session::start("t", case.image.clone(), init, cfg, Some(case.reference.clone())).unwrap();
        (s, case)
    }

    #[test]
    fn config_line_roundtrip() {
        let mut c = SessionConfig::<f64>::new(Dynamics::Distance, 3);
        c.d_max = Some(4.25);
        c.params.alpha_margin = 1e4;
        c.feedback = FeedbackMode::Open;
        let back = SessionConfig::from_line(&c.to_line(), 0).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest().len(), 16);
        assert!(SessionConfig::<f64>::from_line("config labels=1", 0).is_err());
        assert!(SessionConfig::<f64>::from_line("config dt=0", 0).is_err());
    }

    #[test]
    fn start_checks() {
        let (s, case) = two_disk_session(Dynamics::Region);
        assert_eq!(s.metrics().series.len(), 1);
        assert_eq!(s.state().n_labels(), 3);
        let mut seeds = case.seeds.clone();
        seeds.retain(|s| s.label != 3);
        let cfg = SessionConfig::new(Dynamics::Distance, 3);
        let r = Session::start("t", case.image.clone(), SessionInit::Seeds(seeds), cfg.clone(), None);
        assert!(matches!(r, Err(SegError::EmptySeeds)));
        let r = Session::start("t", case.image.clone(), SessionInit::Labels(case.init.clone()), cfg, None);
        assert!(r.is_err());
        let small = LabelMap::filled(Dims::d2(4, 4), 1);
        let cfg = SessionConfig::new(Dynamics::Region, 3);
        assert!(Session::start("t", case.image, SessionInit::Labels(small), cfg, None).is_err());
    }

    #[test]
    fn five_voxel_stroke_counts_five() {
        let (mut s, _) = two_disk_session(Dynamics::Region);
        let stroke = Stroke {
            label: 3,
            voxels: (0..5).map(|x| GridIndex::d2(1, x)).collect(),
            t: 0.0,
            seq: 0,
        };
        let ack = s.ingest_stroke(stroke).unwrap();
        assert_eq!(ack.actuated, 5);
        assert_eq!(s.metrics().actuated, 5);
        assert_eq!(s.stroke_count(3), 1);
        let bad = Stroke {
            label: 4,
            voxels: vec![GridIndex::d2(0, 0)],
            t: 0.0,
            seq: 0,
        };
        assert!(matches!(s.ingest_stroke(bad), Err(SegError::UnknownLabel(4))));
        let oob = Stroke {
            label: 1,
            voxels: vec![GridIndex::d2(40, 0)],
            t: 0.0,
            seq: 0,
        };
        assert!(matches!(s.ingest_stroke(oob), Err(SegError::OutOfBounds(_))));
    }

    #[test]
    fn decomposition_identity() {
        let d = Dims::d2(2, 3);
        let cur = LabelMap::from_vec(d, vec![1, 1, 2, 2, 3, 3]).unwrap();
        let refm = LabelMap::from_vec(d, vec![1, 2, 2, 3, 3, 1]).unwrap();
        let e = ErrorDecomposition::new(&cur, &refm, 3).unwrap();
        assert_eq!(e.correct, vec![vec![0], vec![2], vec![4]]);
        assert_eq!(e.misclassified, vec![vec![1], vec![3], vec![5]]);
        assert_eq!(e.unreached, vec![vec![5], vec![1], vec![3]]);
    }

    #[test]
    fn synthetic_user_targets_blob() {
        let (s, _) = two_disk_session(Dynamics::Region);
        let perfect = s.labels().clone();
        assert_eq!(s.synthetic_user_step(&perfect, 2.0).unwrap(), None);
        // a 10-voxel blob of label 1 in the reference where the state has background
        let dims = perfect.dims();
        let mut r = perfect.clone();
        let blob: Vec<usize> = (0..10).map(|x| dims.linear(GridIndex::d2(28, 2 + x))).collect();
        for &i in &blob {
            assert_eq!(r.get(i), 3);
            r.set(i, 1);
        }
        let st = s.synthetic_user_step(&r, 1.0).unwrap().unwrap();
        assert_eq!(st.label, 1);
        assert!(st.voxels.iter().all(|&v| blob.contains(&dims.linear(v))));
    }

    #[test]
    fn stroke_wire_roundtrip() {
        let d = Dims::d2(8, 9);
        let s = Stroke {
            label: 2,
            voxels: vec![GridIndex::d2(1, 7), GridIndex::d2(3, 0)],
            t: 0.125,
            seq: 4,
        };
        let line = stroke_line("abc", &d, &s);
        assert_eq!(line, "stroke abc 2 0.125 4 2 7 1 0 3");
        assert_eq!(parse_stroke_line(&line, &d).unwrap(), ("abc".to_string(), s));
        assert!(parse_stroke_line("stroke abc 2 0 0 2 7 1 0", &d).is_err());
        assert!(parse_stroke_line("stroke abc 2 0 0 1 9 0", &d).is_err());
        assert!(parse_stroke_line("stroke abc 2 0 0 1 x 0", &d).is_err());
    }
}
