//! Seeded synthetic images with reference partitions, rough initializations
//! and seeds, for headless closed-loop runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::distance::SeedSet;
use crate::grid::{erosion_depth, Dims, GridIndex, ImageVolume, Label, LabelMap};

/// One synthetic test image.
#[derive(Clone, Debug)]
pub struct SynthCase {
    pub name: String,
    pub image: ImageVolume<f64>,
    pub reference: LabelMap,
    /// Rough initial partition (small disks inside each object).
    pub init: LabelMap,
    /// One seed blob per label, background included.
    pub seeds: Vec<SeedSet>,
    pub n_labels: usize,
}

fn rng_for(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Image from a reference map, per-label intensity and per-voxel texture,
/// plus Gaussian noise; rounded and clamped to 8-bit range.
fn render(
    reference: &LabelMap,
    value: impl Fn(Label, GridIndex) -> f64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> ImageVolume<f64> {
    let dims = reference.dims();
    let noise = Normal::new(0.0, sigma.max(1e-12)).expect("valid sigma");
    let vals = (0..dims.len())
        .map(|i| {
            let base = value(reference.get(i), dims.index(i));
            let n = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            (base + n).round().clamp(0.0, 255.0)
        })
        .collect();
    ImageVolume::new(dims, 1, vals).expect("finite synthetic image")
}

/// Most interior voxel of each label (max erosion depth, smallest index on ties).
pub fn interior_point(labels: &LabelMap, label: Label) -> Option<usize> {
    let dims = labels.dims();
    let mask: Vec<bool> = labels.labels().iter().map(|&l| l == label).collect();
    let depth = erosion_depth(&dims, &mask);
    let mut best: Option<(u32, usize)> = None;
    for (i, &d) in depth.iter().enumerate() {
        if mask[i] && best.is_none_or(|(bd, _)| d > bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i)
}

/// Voxels of `label` within Euclidean radius `r` of `center`, in linear order.
pub fn ball_in_label(labels: &LabelMap, label: Label, center: usize, r: f64) -> Vec<usize> {
    let dims = labels.dims();
    let c = dims.index(center).0;
    (0..dims.len())
        .filter(|&i| {
            let p = dims.index(i).0;
            let d2: f64 = (0..3).map(|a| (p[a] as f64 - c[a] as f64).powi(2)).sum();
            d2 <= r * r && labels.get(i) == label
        })
        .collect()
}

fn finish(name: &str, image: ImageVolume<f64>, reference: LabelMap, n_labels: usize) -> SynthCase {
    let dims = reference.dims();
    let bg = n_labels as Label;
    let mut init = LabelMap::filled(dims, bg);
    let mut seeds = Vec::new();
    for l in 1..=n_labels as Label {
        let Some(c) = interior_point(&reference, l) else {
            continue;
        };
        let blob = ball_in_label(&reference, l, c, 2.0);
        if l != bg {
            for &i in &ball_in_label(&reference, l, c, 4.0) {
                init.set(i, l);
            }
        }
        seeds.push(SeedSet {
            label: l,
            voxels: blob.iter().map(|&i| dims.index(i)).collect(),
        });
    }
    SynthCase {
        name: name.into(),
        image,
        reference,
        init,
        seeds,
        n_labels,
    }
}

fn disk(y: f64, x: f64, r: f64) -> impl Fn(GridIndex) -> bool {
    move |g| {
        let (dy, dx) = (g.y() as f64 - y, g.x() as f64 - x);
        dy * dy + dx * dx <= r * r
    }
}

/// Ellipse object (label 1) on background (label 2), levels 80 / 170.
pub fn two_region(size: usize, sigma: f64, seed: u64) -> SynthCase {
    let mut rng = rng_for(seed, 1);
    let d = Dims::d2(size, size);
    let s = size as f64;
    let (cy, cx) = (s * rng.gen_range(0.42..0.58), s * rng.gen_range(0.42..0.58));
    let (ry, rx) = (s * rng.gen_range(0.22..0.3), s * rng.gen_range(0.22..0.3));
    let reference = LabelMap::from_fn(d, |i| {
        let g = d.index(i);
        let (dy, dx) = ((g.y() as f64 - cy) / ry, (g.x() as f64 - cx) / rx);
        if dy * dy + dx * dx <= 1.0 {
            1
        } else {
            2
        }
    });
    let img = render(&reference, |l, _| if l == 1 { 80.0 } else { 170.0 }, sigma, &mut rng);
    finish(&format!("two_region_s{}", sigma as u32), img, reference, 2)
}

/// Two disks (labels 1, 2) on background (label 3).
pub fn two_disks(size: usize, sigma: f64, seed: u64) -> SynthCase {
    let mut rng = rng_for(seed, 2);
    let d = Dims::d2(size, size);
    let s = size as f64;
    let a = disk(s * 0.35, s * 0.3, s * 0.17);
    let b = disk(s * 0.62, s * 0.7, s * 0.2);
    let reference = LabelMap::from_fn(d, |i| {
        let g = d.index(i);
        if a(g) {
            1
        } else if b(g) {
            2
        } else {
            3
        }
    });
    let img = render(&reference, |l, _| [200.0, 120.0, 40.0][l as usize - 1], sigma, &mut rng);
    finish("two_disks", img, reference, 3)
}

/// Object and background share the same mean and overlapping ranges; only
/// their textures differ (stripes inside, checkerboard outside).
pub fn overlapping_texture(size: usize, sigma: f64, seed: u64) -> SynthCase {
    let mut rng = rng_for(seed, 3);
    let d = Dims::d2(size, size);
    let s = size as f64;
    let obj = disk(s * rng.gen_range(0.45..0.55), s * rng.gen_range(0.45..0.55), s * 0.28);
    let reference = LabelMap::from_fn(d, |i| if obj(d.index(i)) { 1 } else { 2 });
    let img = render(
        &reference,
        |l, g| {
            if l == 1 {
                if (g.x() / 2) % 2 == 0 {
                    95.0
                } else {
                    165.0
                }
            } else if (g.x() / 3 + g.y() / 3) % 2 == 0 {
                110.0
            } else {
                150.0
            }
        },
        sigma,
        &mut rng,
    );
    finish("overlapping_texture", img, reference, 2)
}

/// Thin bright structures (label 1) on a dark background (label 2): a
/// two-voxel bar and a ring of width three.
pub fn thin_structures(size: usize, sigma: f64, seed: u64) -> SynthCase {
    let mut rng = rng_for(seed, 4);
    let d = Dims::d2(size, size);
    let s = size as f64;
    let row = (s * rng.gen_range(0.2..0.3)) as usize;
    let (cy, cx, r) = (s * 0.62, s * 0.5, s * 0.22);
    let reference = LabelMap::from_fn(d, |i| {
        let g = d.index(i);
        let bar = (g.y() == row || g.y() == row + 1) && g.x() >= size / 8 && g.x() < size - size / 8;
        let (dy, dx) = (g.y() as f64 - cy, g.x() as f64 - cx);
        let rr = (dy * dy + dx * dx).sqrt();
        if bar || (rr >= r - 1.5 && rr <= r + 1.5) {
            1
        } else {
            2
        }
    });
    let img = render(&reference, |l, _| if l == 1 { 190.0 } else { 60.0 }, sigma, &mut rng);
    finish(&format!("thin_structures_s{}", sigma as u32), img, reference, 2)
}

/// Three piecewise-constant regions: two blocks and background.
pub fn three_region(size: usize, sigma: f64, seed: u64) -> SynthCase {
    let mut rng = rng_for(seed, 5);
    let d = Dims::d2(size, size);
    let s = size as f64;
    let a = disk(s * 0.5, s * 0.3, s * 0.2);
    let reference = LabelMap::from_fn(d, |i| {
        let g = d.index(i);
        if a(g) {
            1
        } else if g.x() as f64 > s * 0.6 && g.y() as f64 > s * 0.15 && (g.y() as f64) < s * 0.85 {
            2
        } else {
            3
        }
    });
    let img = render(&reference, |l, _| [60.0, 140.0, 210.0][l as usize - 1], sigma, &mut rng);
    finish("three_region", img, reference, 3)
}

/// The closed-loop suite: eight images covering noise levels, texture
/// overlap and thin structures.
pub fn suite(size: usize, seed: u64) -> Vec<SynthCase> {
    vec![
        two_region(size, 0.0, seed),
        two_region(size, 10.0, seed),
        two_region(size, 25.0, seed),
        two_disks(size, 0.0, seed),
        overlapping_texture(size, 5.0, seed),
        thin_structures(size, 0.0, seed),
        thin_structures(size, 10.0, seed),
        three_region(size, 10.0, seed),
    ]
}
