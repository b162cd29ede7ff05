//! Rebuilds a session from its text log and checks every recorded checksum.

use crate::distance::SeedSet;
use crate::error::{Result, SegError};
use crate::grid::{Dims, ImageVolume, Label};
use crate::io::{index_from_coords, rle_decode};
use crate::scalar::Real;
use crate::session::{line_digest, parse_stroke_line, Session, SessionConfig, SessionInit};

pub struct ReplayOutcome<T> {
    pub session: Session<T>,
    /// Checksum of the last `snapshot` line, if any.
    pub recorded: Option<String>,
    /// Checksum of the replayed final state.
    pub checksum: String,
}

fn malformed(no: usize, msg: impl std::fmt::Display) -> SegError {
    SegError::MalformedLog(format!("line {}: {}", no + 1, msg))
}

fn parse_num<F: std::str::FromStr>(no: usize, s: &str) -> Result<F> {
    s.parse().map_err(|_| malformed(no, format!("bad number {s:?}")))
}

/// Header line `seglog v1 <digest> <seed>`.
pub fn parse_header(line: &str) -> Result<(String, u64)> {
    let t: Vec<&str> = line.split_whitespace().collect();
    match t.as_slice() {
        ["seglog", "v1", digest, seed] => Ok((digest.to_string(), parse_num(0, seed)?)),
        _ => Err(malformed(0, "expected `seglog v1 <digest> <seed>`")),
    }
}

fn parse_image<T: Real>(no: usize, line: &str) -> Result<ImageVolume<T>> {
    let t: Vec<&str> = line.split_whitespace().collect();
    if t.len() < 2 || t[0] != "image" {
        return Err(malformed(no, "expected image line"));
    }
    let nd: usize = parse_num(no, t[1])?;
    if !(2..=3).contains(&nd) || t.len() < 3 + nd {
        return Err(malformed(no, "bad image shape"));
    }
    let ext: Vec<usize> = t[2..2 + nd].iter().map(|s| parse_num(no, s)).collect::<Result<_>>()?;
    let ch: usize = parse_num(no, t[2 + nd])?;
    let dims = Dims::new(&ext).map_err(|e| malformed(no, e))?;
    let vals: Vec<T> = t[3 + nd..]
        .iter()
        .map(|s| parse_num::<f64>(no, s).map(T::lit))
        .collect::<Result<_>>()?;
    ImageVolume::new(dims, ch, vals).map_err(|e| malformed(no, e))
}

fn parse_seed(no: usize, line: &str, dims: &Dims) -> Result<SeedSet> {
    let t: Vec<&str> = line.split_whitespace().collect();
    if t.len() < 3 {
        return Err(malformed(no, "bad seed line"));
    }
    let label: Label = parse_num(no, t[1])?;
    let n: usize = parse_num(no, t[2])?;
    let nd = dims.ndim();
    if t.len() != 3 + n * nd {
        return Err(malformed(no, "seed coordinate count"));
    }
    let voxels = t[3..]
        .chunks(nd)
        .map(|c| {
            let c: Vec<usize> = c.iter().map(|s| parse_num(no, s)).collect::<Result<_>>()?;
            index_from_coords(dims, &c).map_err(|e| malformed(no, e))
        })
        .collect::<Result<_>>()?;
    Ok(SeedSet { label, voxels })
}

/// Re-run a logged session. Fails with `DigestMismatch` when the header does
/// not match the config line and with `ChecksumMismatch` at the first impulse
/// or snapshot whose state differs from the recording.
pub fn replay<T: Real>(text: &str) -> Result<ReplayOutcome<T>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut next = |what: &str| lines.next().ok_or_else(|| SegError::MalformedLog(format!("missing {what}")));

    let (_, header) = next("header")?;
    let (digest, seed) = parse_header(header)?;
    let (no, cfg_line) = next("config")?;
    let found = line_digest(cfg_line.trim_end());
    if found != digest {
        return Err(SegError::DigestMismatch {
            expected: digest,
            found,
        });
    }
    let cfg = SessionConfig::<T>::from_line(cfg_line, seed).map_err(|e| malformed(no, e))?;
    let (no, sline) = next("session")?;
    let id = match sline.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["session", id] => id.to_string(),
        _ => return Err(malformed(no, "expected `session <id>`")),
    };
    let (no, iline) = next("image")?;
    let image = parse_image::<T>(no, iline)?;
    let dims = *image.dims();

    let mut reference = None;
    let mut seeds = Vec::new();
    let init = loop {
        let (no, l) = next("init")?;
        let t: Vec<&str> = l.split_whitespace().collect();
        match t.as_slice() {
            ["reference", rle] if reference.is_none() && seeds.is_empty() => {
                reference = Some(rle_decode(dims, rle).map_err(|e| malformed(no, e))?)
            }
            ["seed", ..] => seeds.push(parse_seed(no, l, &dims)?),
            ["init", "seeds"] => break SessionInit::Seeds(std::mem::take(&mut seeds)),
            ["init", "labels", rle] if seeds.is_empty() => {
                break SessionInit::Labels(rle_decode(dims, rle).map_err(|e| malformed(no, e))?)
            }
            _ => return Err(malformed(no, "expected init")),
        }
    };
    let mut session = Session::start(&id, image, init, cfg, reference)?;

    let mut recorded = None;
    let mut pending = None;
    for (no, l) in lines {
        let t: Vec<&str> = l.split_whitespace().collect();
        match t.first().copied() {
            Some("stroke") => {
                if pending.is_some() {
                    return Err(malformed(no, "stroke without impulse"));
                }
                let (sid, s) = parse_stroke_line(l, &dims).map_err(|e| malformed(no, e))?;
                if sid != id {
                    return Err(malformed(no, format!("stroke for session {sid}")));
                }
                pending = Some(s);
            }
            Some("impulse") => {
                let s = pending.take().ok_or_else(|| malformed(no, "impulse without stroke"))?;
                let [_, label, k, sum] = t.as_slice() else {
                    return Err(malformed(no, "expected `impulse <label> <k> <checksum>`"));
                };
                let label: Label = parse_num(no, label)?;
                let k: u32 = parse_num(no, k)?;
                if label != s.label || k != s.seq {
                    return Err(malformed(no, "impulse does not match its stroke"));
                }
                let (t_rec, k_rec) = (s.t, s.seq);
                let ack = session.ingest_stroke(s)?;
                let t_now = session.events().iter().rev().find_map(|e| match &e.kind {
                    crate::session::EventKind::Stroke(s) => Some(s.t),
                    _ => None,
                });
                if ack.k != k_rec || t_now != Some(t_rec) {
                    return Err(malformed(no, "stroke time or sequence out of order"));
                }
                if ack.checksum != *sum {
                    return Err(SegError::ChecksumMismatch {
                        expected: sum.to_string(),
                        found: ack.checksum,
                    });
                }
            }
            Some("tick") => {
                if pending.is_some() {
                    return Err(malformed(no, "tick between stroke and impulse"));
                }
                let [_, n] = t.as_slice() else {
                    return Err(malformed(no, "expected `tick <count>`"));
                };
                let n: u64 = parse_num(no, n)?;
                if n == 0 {
                    return Err(malformed(no, "empty tick run"));
                }
                for _ in 0..n {
                    session.tick()?;
                }
            }
            Some("snapshot") => {
                if pending.is_some() {
                    return Err(malformed(no, "snapshot between stroke and impulse"));
                }
                let [_, sum] = t.as_slice() else {
                    return Err(malformed(no, "expected `snapshot <checksum>`"));
                };
                let found = session.snapshot();
                if found != *sum {
                    return Err(SegError::ChecksumMismatch {
                        expected: sum.to_string(),
                        found,
                    });
                }
                recorded = Some(sum.to_string());
            }
            _ => return Err(malformed(no, format!("unknown event {:?}", t.first().unwrap_or(&"")))),
        }
    }
    if pending.is_some() {
        return Err(SegError::MalformedLog("log ends between stroke and impulse".into()));
    }
    let checksum = session.checksum();
    Ok(ReplayOutcome {
        session,
        recorded,
        checksum,
    })
}
