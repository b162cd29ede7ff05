//! Line protocol spoken between the service and its clients.
//!
//! Every message is one UTF-8 line starting with its kind:
//!
//! ```text
//! hello                                             client greeting
//! hello <session> <mode> <labels> <nd> <ext..>      server reply, extents slowest first
//! stroke <session> <label> <t> <k> <n> <x y [z]>..  same grammar as the session log
//! frame <tick> <rle> <contours>                     label map and zero crossings
//! tickstats <tick> <t> <V> <E> <Vhat> <rate> <actuated> <reclassified> <dice|->
//! impulse_ack <label> <k> <actuated> <contested> <checksum>
//! error <text>
//! ```
//!
//! `<contours>` is `-` or polylines joined by `;`, each `label@z:x,y,x,y,...`.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use crate::error::{Result, SegError};
use crate::grid::{Dims, Field, Label};
use crate::levelset::LevelSetField;
use crate::scalar::Real;
use crate::session::TickMetrics;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MessageKind {
    Hello,
    Frame,
    Stroke,
    TickStats,
    ImpulseAck,
    Error,
}

/// One zero-crossing polyline in voxel coordinates of slice `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    pub label: Label,
    pub z: usize,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HelloInfo {
    pub session: String,
    pub mode: String,
    pub labels: usize,
    pub extents: Vec<usize>,
}

/// Stroke payload before it is checked against a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct StrokeMsg {
    pub session: String,
    pub label: Label,
    pub t: f64,
    pub k: u32,
    pub coords: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ApiMessage {
    /// `None` from a client, filled in the server's reply.
    Hello(Option<HelloInfo>),
    Frame {
        tick: u64,
        rle: String,
        contours: Vec<Polyline>,
    },
    Stroke(StrokeMsg),
    TickStats(TickMetrics),
    ImpulseAck {
        label: Label,
        k: u32,
        actuated: usize,
        contested: usize,
        checksum: String,
    },
    Error(String),
}

impl ApiMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            ApiMessage::Hello(_) => MessageKind::Hello,
            ApiMessage::Frame { .. } => MessageKind::Frame,
            ApiMessage::Stroke(_) => MessageKind::Stroke,
            ApiMessage::TickStats(_) => MessageKind::TickStats,
            ApiMessage::ImpulseAck { .. } => MessageKind::ImpulseAck,
            ApiMessage::Error(_) => MessageKind::Error,
        }
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = |m: &str| SegError::InvalidInput(format!("protocol: {m}"));
        let line = line.trim_end_matches(['\r', '\n']);
        let (head, rest) = line.split_once(' ').unwrap_or((line, ""));
        let tok: Vec<&str> = rest.split_whitespace().collect();
        let num = |s: &str, what: &str| -> Result<f64> { s.parse::<f64>().map_err(|_| bad(what)) };
        match head {
            "hello" if tok.is_empty() => Ok(ApiMessage::Hello(None)),
            "hello" => {
                if tok.len() < 4 {
                    return Err(bad("short hello"));
                }
                let nd: usize = tok[3].parse().map_err(|_| bad("hello nd"))?;
                if tok.len() != 4 + nd {
                    return Err(bad("hello extents"));
                }
                let extents = tok[4..]
                    .iter()
                    .map(|s| s.parse().map_err(|_| bad("hello extent")))
                    .collect::<Result<_>>()?;
                Ok(ApiMessage::Hello(Some(HelloInfo {
                    session: tok[0].into(),
                    mode: tok[1].into(),
                    labels: tok[2].parse().map_err(|_| bad("hello labels"))?,
                    extents,
                })))
            }
            "stroke" => {
                if tok.len() < 5 {
                    return Err(bad("expected `stroke <session> <label> <t> <k> <n> coords...`"));
                }
                let label: Label = tok[1].parse().map_err(|_| bad("stroke label"))?;
                let t = num(tok[2], "stroke time")?;
                if !t.is_finite() {
                    return Err(bad("stroke time"));
                }
                let k: u32 = tok[3].parse().map_err(|_| bad("stroke sequence"))?;
                let n: usize = tok[4].parse().map_err(|_| bad("stroke count"))?;
                let vals: Vec<usize> = tok[5..]
                    .iter()
                    .map(|s| s.parse().map_err(|_| bad("stroke coordinate")))
                    .collect::<Result<_>>()?;
                if n == 0 || !vals.len().is_multiple_of(n) || !(2..=3).contains(&(vals.len() / n)) {
                    return Err(bad("stroke coordinate count"));
                }
                let nd = vals.len() / n;
                Ok(ApiMessage::Stroke(StrokeMsg {
                    session: tok[0].into(),
                    label,
                    t,
                    k,
                    coords: vals.chunks(nd).map(|c| c.to_vec()).collect(),
                }))
            }
            "frame" => {
                let [tick, rle, contours] = tok.as_slice() else {
                    return Err(bad("expected `frame <tick> <rle> <contours>`"));
                };
                Ok(ApiMessage::Frame {
                    tick: tick.parse().map_err(|_| bad("frame tick"))?,
                    rle: rle.to_string(),
                    contours: parse_contours(contours)?,
                })
            }
            "tickstats" => {
                if tok.len() != 9 {
                    return Err(bad("tickstats field count"));
                }
                let v = num(tok[2], "V")?;
                let e = num(tok[3], "E")?;
                let vhat = num(tok[4], "Vhat")?;
                let t = num(tok[1], "t")?;
                Ok(ApiMessage::TickStats(TickMetrics {
                    tick: tok[0].parse().map_err(|_| bad("tick"))?,
                    t,
                    dt: 0.0,
                    lyapunov: crate::control::LyapunovSample { t, v, e, vhat },
                    rate_condition: match tok[5] {
                        "1" => true,
                        "0" => false,
                        _ => return Err(bad("rate flag")),
                    },
                    actuated: tok[6].parse().map_err(|_| bad("actuated"))?,
                    reclassified: tok[7].parse().map_err(|_| bad("reclassified"))?,
                    alpha_violations: 0,
                    dice: if tok[8] == "-" { None } else { Some(num(tok[8], "dice")?) },
                }))
            }
            "impulse_ack" => {
                let [label, k, actuated, contested, checksum] = tok.as_slice() else {
                    return Err(bad("impulse_ack field count"));
                };
                Ok(ApiMessage::ImpulseAck {
                    label: label.parse().map_err(|_| bad("ack label"))?,
                    k: k.parse().map_err(|_| bad("ack k"))?,
                    actuated: actuated.parse().map_err(|_| bad("ack actuated"))?,
                    contested: contested.parse().map_err(|_| bad("ack contested"))?,
                    checksum: checksum.to_string(),
                })
            }
            "error" => Ok(ApiMessage::Error(rest.to_string())),
            other => Err(bad(&format!("unknown message {other:?}"))),
        }
    }
}

impl fmt::Display for ApiMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ApiMessage::Hello(None) => write!(f, "hello"),
            ApiMessage::Hello(Some(h)) => {
                write!(f, "hello {} {} {} {}", h.session, h.mode, h.labels, h.extents.len())?;
                for e in &h.extents {
                    write!(f, " {e}")?;
                }
                Ok(())
            }
            ApiMessage::Stroke(s) => {
                write!(f, "stroke {} {} {} {} {}", s.session, s.label, s.t, s.k, s.coords.len())?;
                for c in s.coords.iter().flatten() {
                    write!(f, " {c}")?;
                }
                Ok(())
            }
            ApiMessage::Frame { tick, rle, contours } => {
                write!(f, "frame {tick} {rle} {}", format_contours(contours))
            }
            ApiMessage::TickStats(m) => {
                let l = &m.lyapunov;
                write!(
                    f,
                    "tickstats {} {} {:e} {:e} {:e} {} {} {} ",
                    m.tick,
                    m.t,
                    l.v,
                    l.e,
                    l.vhat,
                    u8::from(m.rate_condition),
                    m.actuated,
                    m.reclassified
                )?;
                match m.dice {
                    Some(d) => write!(f, "{d}"),
                    None => write!(f, "-"),
                }
            }
            ApiMessage::ImpulseAck {
                label,
                k,
                actuated,
                contested,
                checksum,
            } => write!(f, "impulse_ack {label} {k} {actuated} {contested} {checksum}"),
            ApiMessage::Error(m) => write!(f, "error {}", m.replace(['\n', '\r'], " ")),
        }
    }
}

fn format_contours(c: &[Polyline]) -> String {
    if c.is_empty() {
        return "-".into();
    }
    let mut out = String::new();
    for (i, p) in c.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        let _ = write!(out, "{}@{}:", p.label, p.z);
        for (j, (x, y)) in p.points.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{x},{y}");
        }
    }
    out
}

fn parse_contours(s: &str) -> Result<Vec<Polyline>> {
    let bad = |m: &str| SegError::InvalidInput(format!("protocol: contour {m}"));
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|p| {
            let (head, pts) = p.split_once(':').ok_or_else(|| bad("separator"))?;
            let (label, z) = head.split_once('@').ok_or_else(|| bad("slice"))?;
            let vals: Vec<f64> = pts
                .split(',')
                .map(|v| v.parse().map_err(|_| bad("coordinate")))
                .collect::<Result<_>>()?;
            if !vals.len().is_multiple_of(2) {
                return Err(bad("odd coordinate count"));
            }
            Ok(Polyline {
                label: label.parse().map_err(|_| bad("label"))?,
                z: z.parse().map_err(|_| bad("z"))?,
                points: vals.chunks(2).map(|c| (c[0], c[1])).collect(),
            })
        })
        .collect()
}

/// Quantised point key for joining segment endpoints.
fn key(p: (f64, f64)) -> (i64, i64) {
    ((p.0 * 1e6).round() as i64, (p.1 * 1e6).round() as i64)
}

/// Zero crossings of one slice of `phi` by marching squares over voxel
/// centres, with linear interpolation along cell edges. Segments are chained
/// into polylines; closed curves repeat their first point at the end.
pub fn zero_crossings<T: Real>(phi: &Field<T>, z: usize) -> Vec<Vec<(f64, f64)>> {
    let [_, h, w] = phi.dims().padded();
    let at = |y: usize, x: usize| phi.get((z * h + y) * w + x).as_f64();
    let cross = |a: (f64, f64, f64), b: (f64, f64, f64)| {
        let t = a.2 / (a.2 - b.2);
        let r = |v: f64| (v * 1e3).round() / 1e3;
        (r(a.0 + t * (b.0 - a.0)), r(a.1 + t * (b.1 - a.1)))
    };
    let mut segs: Vec<((f64, f64), (f64, f64))> = Vec::new();
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            // corners (x, y, value) counter-clockwise
            let c = [
                (x as f64, y as f64, at(y, x)),
                (x as f64 + 1.0, y as f64, at(y, x + 1)),
                (x as f64 + 1.0, y as f64 + 1.0, at(y + 1, x + 1)),
                (x as f64, y as f64 + 1.0, at(y + 1, x)),
            ];
            let mut pts = Vec::with_capacity(4);
            for e in 0..4 {
                let (a, b) = (c[e], c[(e + 1) % 4]);
                if (a.2 >= 0.0) != (b.2 >= 0.0) {
                    pts.push(cross(a, b));
                }
            }
            match pts.len() {
                2 => segs.push((pts[0], pts[1])),
                // saddle: pair edges by the sign of the cell centre
                4 => {
                    let centre = c.iter().map(|p| p.2).sum::<f64>() / 4.0;
                    if (centre >= 0.0) == (c[0].2 >= 0.0) {
                        segs.push((pts[0], pts[3]));
                        segs.push((pts[1], pts[2]));
                    } else {
                        segs.push((pts[0], pts[1]));
                        segs.push((pts[2], pts[3]));
                    }
                }
                _ => {}
            }
        }
    }
    chain(segs)
}

fn chain(segs: Vec<((f64, f64), (f64, f64))>) -> Vec<Vec<(f64, f64)>> {
    let mut ends: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, (a, b)) in segs.iter().enumerate() {
        ends.entry(key(*a)).or_default().push(i);
        ends.entry(key(*b)).or_default().push(i);
    }
    let mut used = vec![false; segs.len()];
    let mut out = Vec::new();
    let other = |i: usize, p: (f64, f64)| if key(segs[i].0) == key(p) { segs[i].1 } else { segs[i].0 };
    let next = |p: (f64, f64), used: &[bool]| ends.get(&key(p)).and_then(|v| v.iter().copied().find(|&j| !used[j]));
    // open curves first start at an endpoint of degree one
    let mut order: Vec<usize> = (0..segs.len())
        .filter(|&i| ends[&key(segs[i].0)].len() == 1 || ends[&key(segs[i].1)].len() == 1)
        .collect();
    order.extend(0..segs.len());
    for start in order {
        if used[start] {
            continue;
        }
        used[start] = true;
        let (mut a, mut b) = segs[start];
        if ends[&key(b)].len() == 1 {
            std::mem::swap(&mut a, &mut b);
        }
        let mut line = vec![a, b];
        let mut tip = b;
        while let Some(j) = next(tip, &used) {
            used[j] = true;
            tip = other(j, tip);
            line.push(tip);
        }
        out.push(line);
    }
    out
}

/// Contours of every label on every slice.
pub fn label_contours<T: Real>(phi: &[LevelSetField<T>]) -> Vec<Polyline> {
    let mut out = Vec::new();
    for f in phi {
        let [d, _, _] = f.dims().padded();
        for z in 0..d {
            for points in zero_crossings(f.phi(), z) {
                out.push(Polyline {
                    label: f.label(),
                    z,
                    points,
                });
            }
        }
    }
    out
}

impl StrokeMsg {
    /// Checks coordinates against `dims`.
    pub fn to_stroke(&self, dims: &Dims) -> Result<crate::input::Stroke> {
        if self.coords.iter().any(|c| c.len() != dims.ndim()) {
            return Err(SegError::InvalidInput(format!(
                "protocol: stroke needs {} coordinates per voxel",
                dims.ndim()
            )));
        }
        let voxels = self
            .coords
            .iter()
            .map(|c| crate::io::index_from_coords(dims, c))
            .collect::<Result<_>>()?;
        Ok(crate::input::Stroke {
            label: self.label,
            voxels,
            t: self.t,
            seq: self.k,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heaviside::HeavisideParams;
    use crate::grid::LabelMap;

    #[test]
    fn messages_roundtrip() {
        let msgs = [
            "hello",
            "hello s1 region 3 2 32 48",
            "stroke s1 2 0.5 4 2 7 1 0 3",
            "frame 12 1:5,2:11 1@0:0.5,1,1,0.5,1.5,1,0.5,1;2@0:3,3,4,4",
            "frame 0 2:16 -",
            "impulse_ack 1 0 13 2 00ff",
            "error stroke: label",
        ];
        for m in msgs {
            let parsed = ApiMessage::parse(m).unwrap();
            assert_eq!(parsed.to_string(), m);
        }
        let t = "tickstats 7 3.5 1.25e0 5e-1 7.5e-1 1 12 3 0.97";
        let m = ApiMessage::parse(t).unwrap();
        assert_eq!(m.kind(), MessageKind::TickStats);
        assert_eq!(m.to_string(), t);
    }

    #[test]
    fn malformed_messages_rejected() {
        for m in ["", "strok 1", "stroke s1 x 0 0 1 1 1", "stroke s1 1 0 0 2 1 1 1", "frame 1", "tickstats 1 2"] {
            assert!(ApiMessage::parse(m).is_err(), "{m:?}");
        }
    }

    #[test]
    fn stroke_coordinates_checked_against_grid() {
        let d = Dims::d2(4, 5);
        let ApiMessage::Stroke(s) = ApiMessage::parse("stroke a 1 0 0 1 9 0").unwrap() else {
            panic!()
        };
        assert!(s.to_stroke(&d).is_err());
        let ApiMessage::Stroke(s) = ApiMessage::parse("stroke a 1 0 0 1 4 3").unwrap() else {
            panic!()
        };
        assert_eq!(s.to_stroke(&d).unwrap().voxels[0].0, [0, 3, 4]);
    }

    #[test]
    fn square_contour_is_closed_loop() {
        let d = Dims::d2(6, 6);
        let lm = LabelMap::from_fn(d, |i| {
            let g = d.index(i);
            if (2..4).contains(&g.y()) && (2..4).contains(&g.x()) {
                1
            } else {
                2
            }
        });
        let f = LevelSetField::<f64>::from_labels(&lm, 1, HeavisideParams::new(1.5));
        let c = zero_crossings(f.phi(), 0);
        assert_eq!(c.len(), 1);
        let line = &c[0];
        assert_eq!(line.first(), line.last());
        // every point lies between the inside block and its ring
        for &(x, y) in line {
            assert!((1.0..=4.0).contains(&x) && (1.0..=4.0).contains(&y), "{x},{y}");
        }
    }
}
