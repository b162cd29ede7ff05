//! Brute-force references for the numerical kernels.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segctl::distance::distance_from;
use segctl::grid::{dice, Dims, Field, LabelMap};
use segctl::heaviside::HeavisideParams;
use segctl::levelset::{argmax_labels, LevelSetField};
use segctl::session::min_foreground_dice;

#[test]
fn distance_matches_bellman_ford_in_3d_with_spacing() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let d = Dims::d3(rng.gen_range(1..=5), rng.gen_range(1..=6), rng.gen_range(1..=6))
            .with_spacing(&[rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0)])
            .unwrap();
        let g = Field::from_fn(d, |_| rng.gen_range(1.0..100.0));
        let seeds = [rng.gen_range(0..d.len()), rng.gen_range(0..d.len())];
        let fast = distance_from(&g, &seeds).unwrap();
        for (a, b) in fast.values().iter().zip(common::bellman_ford(&g, &seeds)) {
            assert!((a - b).abs() <= 1e-9 * b.max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn heaviside_is_the_integral_of_delta() {
    let h = HeavisideParams::new(1.5f64);
    // composite Simpson from -eps, where H is 0
    let n = 3000;
    let step = 2.0 * h.epsilon / n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let a = -h.epsilon + i as f64 * step;
        acc += step / 6.0 * (h.delta(a) + 4.0 * h.delta(a + step / 2.0) + h.delta(a + step));
        let x = a + step;
        assert!((acc - h.heaviside(x)).abs() < 1e-12, "at {x}");
    }
}

#[test]
fn argmax_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = HeavisideParams::new(1.5f64);
    for _ in 0..50 {
        let d = Dims::d2(rng.gen_range(1..8), rng.gen_range(1..8));
        let n = rng.gen_range(2..=4);
        let fields: Vec<_> = (1..=n as u16)
            .map(|l| {
                // coarse values so ties occur
                let phi = Field::from_fn(d, |_| rng.gen_range(-5i32..=5) as f64 * 0.5);
                LevelSetField::from_values(l, h, phi).unwrap()
            })
            .collect();
        let got = argmax_labels(&fields);
        for lin in 0..d.len() {
            let mut best = 0;
            for k in 1..n {
                if fields[k].get(lin) > fields[best].get(lin) {
                    best = k;
                }
            }
            assert_eq!(got.get(lin) as usize, best + 1);
        }
    }
}

#[test]
fn dice_matches_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let d = Dims::d2(rng.gen_range(1..10), rng.gen_range(1..10));
        let n = rng.gen_range(2..=3);
        let a = LabelMap::from_fn(d, |_| rng.gen_range(1..=n));
        let b = LabelMap::from_fn(d, |_| rng.gen_range(1..=n));
        let mut worst = 1.0f64;
        for l in 1..=n {
            let inter = (0..d.len()).filter(|&i| a.get(i) == l && b.get(i) == l).count();
            let sum = a.count(l) + b.count(l);
            let want = if sum == 0 { 1.0 } else { 2.0 * inter as f64 / sum as f64 };
            assert!((dice(&a, &b, l).unwrap() - want).abs() < 1e-15);
            if l < n {
                worst = worst.min(want);
            }
        }
        assert!((min_foreground_dice(&a, &b, n as usize).unwrap() - worst).abs() < 1e-15);
    }
}
