use proptest::prelude::*;
use ued_core::modality::{constellation_transform, normalize_iq, IQTrace};
use ued_core::numerics::RngState;
use ued_core::synth::{
    make_emitter, random_symbols, synth_dataset, synth_trace, EmitterProfile, MessageMode, Modulation, ScenarioConfig,
};

fn random_trace(n: usize, rng: &mut RngState) -> IQTrace {
    let i = (0..n).map(|_| rng.normal()).collect();
    let q = (0..n).map(|_| rng.normal()).collect();
    IQTrace::new(i, q, 0, 0).unwrap()
}

fn random_perm(n: usize, rng: &mut RngState) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut p);
    p
}

fn binning_oracle(x: &IQTrace, k: usize) -> Vec<f64> {
    let mut cells = vec![0.0; k * k];
    let eps = 1.0 / k as f64;
    for n in 0..x.len() {
        let (a, b) = ((x.i[n] + 1.0) / 2.0, (x.q[n] + 1.0) / 2.0);
        'outer: for i in 0..k {
            for j in 0..k {
                let in_i = a >= i as f64 * eps && (a < (i + 1) as f64 * eps || i == k - 1);
                let in_j = b >= j as f64 * eps && (b < (j + 1) as f64 * eps || j == k - 1);
                if in_i && in_j {
                    cells[i * k + j] += 1.0;
                    break 'outer;
                }
            }
        }
    }
    let n = x.len() as f64;
    cells.iter().map(|c| c / n).collect()
}

fn l2(a: &IQTrace, b: &IQTrace) -> f64 {
    let s: f64 = a.i.iter().zip(&b.i).chain(a.q.iter().zip(&b.q)).map(|(x, y)| (x - y) * (x - y)).sum();
    s.sqrt()
}

fn vec_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// (mean within-emitter distance, mean between-emitter distance) over all pairs.
fn within_between<T>(items: &[(i32, T)], dist: impl Fn(&T, &T) -> f64) -> (f64, f64) {
    let (mut w, mut nw, mut b, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for x in 0..items.len() {
        for y in x + 1..items.len() {
            let d = dist(&items[x].1, &items[y].1);
            if items[x].0 == items[y].0 {
                w += d;
                nw += 1;
            } else {
                b += d;
                nb += 1;
            }
        }
    }
    (w / nw as f64, b / nb as f64)
}

/// Mean silhouette coefficient with emitter ids as the clustering.
fn silhouette<T>(items: &[(i32, T)], dist: impl Fn(&T, &T) -> f64) -> f64 {
    let labels: Vec<i32> = {
        let mut l: Vec<i32> = items.iter().map(|i| i.0).collect();
        l.sort_unstable();
        l.dedup();
        l
    };
    let mut total = 0.0;
    for (k, (lk, xk)) in items.iter().enumerate() {
        let mut sums = vec![(0.0, 0usize); labels.len()];
        for (m, (lm, xm)) in items.iter().enumerate() {
            if m == k {
                continue;
            }
            let c = labels.iter().position(|l| l == lm).unwrap();
            sums[c].0 += dist(xk, xm);
            sums[c].1 += 1;
        }
        let own = labels.iter().position(|l| l == lk).unwrap();
        let a = sums[own].0 / sums[own].1 as f64;
        let b = sums
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != own)
            .map(|(_, (s, n))| s / *n as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / items.len() as f64
}

fn sample(mode: MessageMode, snr: f64, per: usize, seed: u64) -> Vec<(i32, IQTrace)> {
    let ds = synth_dataset(&ScenarioConfig::new(mode, 6, 1, per, Some(snr)), seed).unwrap();
    ds.traces.into_iter().map(|t| (t.emitter_id, t)).collect()
}

// ------------------------------------------------------------- modality

#[test]
fn constellation_is_permutation_invariant_on_1000_traces() {
    let mut rng = RngState::new(1);
    for _ in 0..1000 {
        let x = normalize_iq(&random_trace(256, &mut rng)).unwrap();
        let p = random_perm(256, &mut rng);
        let a = constellation_transform(&x, 60).unwrap();
        let b = constellation_transform(&x.permuted(&p), 60).unwrap();
        assert!(a.cells.iter().zip(&b.cells).all(|(u, v)| u.to_bits() == v.to_bits()));
        assert!((a.mass() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn constellation_matches_nested_loop_binning() {
    let mut rng = RngState::new(2);
    for _ in 0..20 {
        let x = normalize_iq(&random_trace(256, &mut rng)).unwrap();
        let g = constellation_transform(&x, 60).unwrap();
        assert_eq!(g.cells, binning_oracle(&x, 60));
    }
}

#[test]
fn constellation_examples() {
    let one = IQTrace::new(vec![1.0], vec![0.0], 0, 0).unwrap();
    let g = constellation_transform(&one, 2).unwrap();
    assert_eq!(g.get(1, 1), 1.0);
    assert_eq!(g.mass(), 1.0);

    let four = IQTrace::new(vec![0.3; 4], vec![-0.7; 4], 0, 0).unwrap();
    let g = constellation_transform(&four, 10).unwrap();
    assert_eq!(g.cells.iter().filter(|&&c| c == 1.0).count(), 1);
    assert_eq!(g.cells.iter().filter(|&&c| c == 0.0).count(), 99);

    let loud = IQTrace::new(vec![1.5], vec![0.0], 0, 0).unwrap();
    assert!(matches!(constellation_transform(&loud, 4), Err(ued_core::Error::Validation(_))));
}

#[test]
fn normalize_examples() {
    let x = IQTrace::new(vec![2.0, -4.0], vec![1.0, 0.0], 3, 1).unwrap();
    let n = normalize_iq(&x).unwrap();
    assert_eq!(n.i, vec![0.5, -1.0]);
    assert_eq!(n.q, vec![0.25, 0.0]);
    assert_eq!((n.emitter_id, n.day), (3, 1));
    assert_eq!(normalize_iq(&n).unwrap(), n);
    let z = IQTrace::new(vec![0.0; 4], vec![0.0; 4], 0, 0).unwrap();
    assert!(matches!(normalize_iq(&z), Err(ued_core::Error::Degenerate(_))));
}

#[test]
fn argmax_cell_survives_rescaling() {
    let mut rng = RngState::new(3);
    for _ in 0..50 {
        let x = random_trace(256, &mut rng);
        let c = rng.uniform_range(0.01, 100.0);
        let scaled = IQTrace::new(
            x.i.iter().map(|v| v * c).collect(),
            x.q.iter().map(|v| v * c).collect(),
            0,
            0,
        )
        .unwrap();
        let a = constellation_transform(&normalize_iq(&x).unwrap(), 60).unwrap();
        let b = constellation_transform(&normalize_iq(&scaled).unwrap(), 60).unwrap();
        let argmax = |g: &[f64]| g.iter().enumerate().fold(0, |m, (k, v)| if *v > g[m] { k } else { m });
        assert_eq!(argmax(&a.cells), argmax(&b.cells));
    }
}

proptest! {
    #[test]
    fn normalize_is_scale_invariant(seed in any::<u64>(), c in 1e-3f64..1e3) {
        let mut rng = RngState::new(seed);
        let x = random_trace(32, &mut rng);
        let y = IQTrace::new(x.i.iter().map(|v| v * c).collect(), x.q.iter().map(|v| v * c).collect(), 0, 0).unwrap();
        let a = normalize_iq(&x).unwrap();
        let b = normalize_iq(&y).unwrap();
        prop_assert_eq!(a.max_abs(), 1.0);
        for (u, v) in a.channels().iter().zip(b.channels()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
        prop_assert_eq!(normalize_iq(&a).unwrap(), a);
    }

    #[test]
    fn grid_mass_is_one(seed in any::<u64>(), n in 1usize..300, k in 1usize..80) {
        let mut rng = RngState::new(seed);
        let x = normalize_iq(&random_trace(n, &mut rng)).unwrap();
        let g = constellation_transform(&x, k).unwrap();
        prop_assert!((g.mass() - 1.0).abs() < 1e-9);
        prop_assert!(g.cells.iter().all(|&c| c >= 0.0));
    }
}

// ------------------------------------------------------------- synth

#[test]
fn emitters_are_deterministic_and_distinct() {
    let a = make_emitter(&mut RngState::new(10));
    let b = make_emitter(&mut RngState::new(10));
    let c = make_emitter(&mut RngState::new(11));
    assert_eq!(a, b);
    assert_ne!(a.delta_f, c.delta_f);
    assert!(a.delta_f.abs() <= 2e-4 && (0.0..=0.2).contains(&a.phi0) && a.phi_drift.abs() <= 1e-4);
}

#[test]
fn zero_profile_without_noise_returns_the_symbols() {
    let cfg = ScenarioConfig::new(MessageMode::SameMessages, 2, 1, 1, None);
    let y = random_symbols(Modulation::Qpsk, 256, &mut RngState::new(4));
    let x = synth_trace(&EmitterProfile::ZERO, &cfg, Some(&y), &mut RngState::new(5), 0, 0).unwrap();
    for (n, &(re, im)) in y.iter().enumerate() {
        assert_eq!((x.i[n], x.q[n]), (re, im));
    }
}

#[test]
fn same_message_traces_repeat_without_noise() {
    let cfg = ScenarioConfig::new(MessageMode::SameMessages, 2, 1, 2, None);
    let ds = synth_dataset(&cfg, 6).unwrap();
    assert_eq!(ds.traces[0].i, ds.traces[1].i);
    assert_eq!(ds.traces[0].q, ds.traces[1].q);
    assert_ne!(ds.traces[0].i, ds.traces[2].i);
}

#[test]
fn fingerprint_matches_phase_rotation_formula() {
    let mut rng = RngState::new(12);
    for modulation in [Modulation::Qpsk, Modulation::Qam16] {
        let mut cfg = ScenarioConfig::new(MessageMode::DifferentMessages, 2, 1, 1, None);
        cfg.modulation = modulation;
        for _ in 0..20 {
            let p = make_emitter(&mut rng);
            let y = random_symbols(modulation, 256, &mut rng);
            let x = synth_trace(&p, &cfg, Some(&y), &mut rng, 0, 0).unwrap();
            let (mut num, mut den, mut formula) = (0.0, 0.0, 0.0);
            for (n, &(re, im)) in y.iter().enumerate() {
                let e2 = (x.i[n] - re).powi(2) + (x.q[n] - im).powi(2);
                let y2 = re * re + im * im;
                let theta = 2.0 * std::f64::consts::PI * p.delta_f * n as f64 + p.phi0 + p.phi_drift * n as f64;
                let rot = (theta.cos() - 1.0).powi(2) + theta.sin().powi(2);
                num += e2;
                den += y2;
                formula += y2 * rot;
            }
            assert!(((num / den).sqrt() - (formula / den).sqrt()).abs() < 1e-9);
        }
    }
}

#[test]
fn dataset_bookkeeping() {
    let cfg = ScenarioConfig::new(MessageMode::SameMessages, 6, 4, 50, Some(25.0));
    let ds = synth_dataset(&cfg, 1).unwrap();
    assert_eq!(ds.len(), 1200);
    for e in 0..6 {
        for d in 0..4u16 {
            let n = ds.traces.iter().filter(|t| t.emitter_id == e && t.day == d).count();
            assert_eq!(n, 50);
        }
    }
    assert_eq!(ds, synth_dataset(&cfg, 1).unwrap());
    assert_ne!(ds, synth_dataset(&cfg, 2).unwrap());
    let bad = ScenarioConfig::new(MessageMode::SameMessages, 1, 1, 5, None);
    assert!(synth_dataset(&bad, 0).is_err());
}

#[test]
fn same_message_emitters_separate() {
    let items = sample(MessageMode::SameMessages, 30.0, 20, 3);
    let (w, b) = within_between(&items, l2);
    assert!(b > w, "between {b} within {w}");
    let items = sample(MessageMode::SameMessages, 20.0, 15, 4);
    assert!(silhouette(&items, l2) > 0.0);
}

#[test]
fn different_messages_mask_emitters() {
    let items = sample(MessageMode::DifferentMessages, 30.0, 20, 3);
    let (w, b) = within_between(&items, l2);
    let ratio = w / b;
    assert!((0.8..=1.25).contains(&ratio), "ratio {ratio}");
    let items = sample(MessageMode::DifferentMessages, 20.0, 15, 4);
    assert!(silhouette(&items, l2) <= 0.05);
}

#[test]
fn constellations_unmask_different_message_emitters() {
    let items = sample(MessageMode::DifferentMessages, 20.0, 20, 5);
    let grids: Vec<(i32, Vec<f64>)> = items
        .iter()
        .map(|(e, t)| (*e, constellation_transform(&normalize_iq(t).unwrap(), 60).unwrap().cells))
        .collect();
    let (w, b) = within_between(&grids, |a, b| vec_dist(a, b));
    assert!(w < b, "within {w} between {b}");
}
