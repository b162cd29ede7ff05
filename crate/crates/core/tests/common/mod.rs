#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segctl::control::{ControlParams, Dynamics, Feedback, LoopState};
use segctl::distance::distance_from;
use segctl::grid::{gradient_magnitude_sq, Dims, Field, ImageVolume, LabelMap};
use segctl::levelset::LevelSetField;
use segctl::session::{Session, SessionConfig, SessionInit};
use segctl::synth::SynthCase;

/// Settings under which the descent suites run (see README).
pub const DESCENT_MARGIN: f64 = 1e6;
pub const DESCENT_DT: f64 = 0.1;

/// Plain Bellman-Ford over the face-neighbour graph; edge cost is the mean of
/// the endpoint costs times the axis spacing.
pub fn bellman_ford(gcost: &Field<f64>, seeds: &[usize]) -> Vec<f64> {
    let dims = *gcost.dims();
    let mut edges = Vec::new();
    for a in 0..dims.len() {
        dims.for_each_neighbor(a, |b, axis| {
            edges.push((a, b, (gcost.get(a) + gcost.get(b)) * 0.5 * dims.spacing()[axis]));
        });
    }
    let mut d = vec![f64::INFINITY; dims.len()];
    for &s in seeds {
        d[s] = 0.0;
    }
    for _ in 0..dims.len() {
        let mut changed = false;
        for &(a, b, w) in &edges {
            if d[a] + w < d[b] {
                d[b] = d[a] + w;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    d
}

type Disk = (f64, f64, f64);

fn disks(d: Dims, rng: &mut ChaCha8Rng, n: usize, jitter: Option<&[Disk]>) -> (LabelMap, Vec<Disk>) {
    let [_, h, w] = d.padded();
    let shapes: Vec<Disk> = match jitter {
        Some(s) => s
            .iter()
            .map(|&(y, x, r)| {
                (
                    y + rng.gen_range(-2.0..2.0),
                    x + rng.gen_range(-2.0..2.0),
                    (r + rng.gen_range(-2.0..2.0)).max(1.5),
                )
            })
            .collect(),
        None => (0..n - 1)
            .map(|_| {
                (
                    rng.gen_range(0.0..h as f64),
                    rng.gen_range(0.0..w as f64),
                    rng.gen_range(2.0..(h.min(w) as f64 / 3.0).max(2.5)),
                )
            })
            .collect(),
    };
    let lm = LabelMap::from_fn(d, |i| {
        let g = d.index(i);
        for (k, &(y, x, r)) in shapes.iter().enumerate() {
            let (dy, dx) = (g.y() as f64 - y, g.x() as f64 - x);
            if dy * dy + dx * dx <= r * r {
                return (k + 1) as u16;
            }
        }
        n as u16
    });
    (lm, shapes)
}

/// Random instance of at most 32x32: 2 or 3 labels made of disks, a jittered
/// initial partition, piecewise-constant intensities plus uniform noise.
/// The loop is driven against the reference as a saturated level set.
pub fn oracle_instance(mode: Dynamics, seed: u64, margin: f64, dt: f64) -> LoopState<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.gen_range(8..=32);
    let w = rng.gen_range(8..=32);
    let n = rng.gen_range(2..=3);
    let d = Dims::d2(h, w);
    let (reference, shapes) = disks(d, &mut rng, n, None);
    let (init, _) = disks(d, &mut rng, n, Some(&shapes));
    let levels: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..255.0)).collect();
    let sigma = [0.0, 10.0, 25.0][rng.gen_range(0..3)];
    let vals = (0..d.len())
        .map(|i| (levels[reference.get(i) as usize - 1] + sigma * (rng.gen::<f64>() - 0.5) * 3.4).clamp(0.0, 255.0))
        .collect();
    let img = ImageVolume::new(d, 1, vals).unwrap();
    let params = ControlParams {
        alpha_margin: margin,
        ..ControlParams::default()
    };
    let (labels, nearest) = match mode {
        Dynamics::Region => (init.clone(), vec![]),
        Dynamics::Distance => {
            let gc = gradient_magnitude_sq(&img).map(|g| 1.0 + g);
            let mut ds = vec![];
            for l in 1..=n as u16 {
                let vox: Vec<usize> = (0..d.len()).filter(|&i| init.get(i) == l).collect();
                let pick = if vox.is_empty() { rng.gen_range(0..d.len()) } else { vox[vox.len() / 2] };
                ds.push(distance_from(&gc, &[pick]).unwrap());
            }
            (segctl::distance::assign_labels(&ds).unwrap(), ds)
        }
    };
    let mut s = LoopState::new(mode, params, img, labels, n, nearest, dt).unwrap();
    let far = params.heaviside.epsilon + 1.0;
    let targets = (1..=n as u16)
        .map(|l| {
            let phi = Field::from_fn(d, |i| if reference.get(i) == l { far } else { -far });
            LevelSetField::from_values(l, params.heaviside, phi).unwrap()
        })
        .collect();
    s.feedback = Feedback::Oracle(targets);
    s
}

pub fn session_for(case: &SynthCase, cfg: SessionConfig<f64>) -> Session<f64> {
    let init = match cfg.dynamics {
        Dynamics::Region => SessionInit::Labels(case.init.clone()),
        Dynamics::Distance => SessionInit::Seeds(case.seeds.clone()),
    };
    Session::start(&case.name, case.image.clone(), init, cfg, Some(case.reference.clone())).unwrap()
}

/// Per-tick violations of `V(t+1) <= V(t) + tol * V(t)`.
pub fn increases(series: &[f64], tol: f64) -> usize {
    series.windows(2).filter(|w| w[1] > w[0] + tol * w[0]).count()
}

/// Least-squares slope of `y` against `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    sxy / sxx
}
