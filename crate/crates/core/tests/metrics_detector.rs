mod common;

use common::*;
use proptest::prelude::*;
use ued_core::detector::{
    decode_detector, encode_detector, fit_detector, load_detector, save_detector, ClusterDetector, DEFAULT_TAIL_MASS,
};
use ued_core::metrics::{config_digest, f1_binary, nmi, reports_to_csv, roc_auc, EvalReport, CSV_HEADER};
use ued_core::numerics::{kmeans_fit, Matrix, RngState};

fn random_labels(n: usize, rng: &mut RngState) -> Vec<u8> {
    loop {
        let l: Vec<u8> = (0..n).map(|_| rng.below(2) as u8).collect();
        if l.contains(&0) && l.contains(&1) {
            return l;
        }
    }
}

fn blobs(n_per: usize, centers: &[[f64; 2]], spread: f64, rng: &mut RngState) -> Matrix {
    let mut rows = Vec::new();
    for c in centers {
        for _ in 0..n_per {
            rows.push([c[0] + spread * rng.normal(), c[1] + spread * rng.normal()]);
        }
    }
    Matrix::from_rows(&rows).unwrap()
}

// ------------------------------------------------------------- metrics

#[test]
fn metrics_match_brute_force_on_100_instances() {
    let mut rng = RngState::new(31);
    for _ in 0..100 {
        let n = 20 + rng.below(200);
        let labels = random_labels(n, &mut rng);
        // coarse scores so ties occur
        let scores: Vec<f64> = (0..n).map(|_| (rng.uniform() * 20.0).floor() / 20.0).collect();
        let auc = roc_auc(&scores, &labels).unwrap();
        assert!((auc - auc_pairs(&scores, &labels)).abs() < 1e-9);

        let k1 = 1 + rng.below(6);
        let k2 = 1 + rng.below(6);
        let a: Vec<usize> = (0..n).map(|_| rng.below(k1)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.below(k2)).collect();
        assert!((nmi(&a, &b).unwrap() - nmi_direct(&a, &b)).abs() < 1e-9);

        let pred = random_labels(n, &mut rng);
        assert!((f1_binary(&pred, &labels).unwrap() - f1_counts(&pred, &labels)).abs() < 1e-9);
    }
}

#[test]
fn auc_examples() {
    assert_eq!(roc_auc(&[0.1, 0.9], &[0, 1]).unwrap(), 1.0);
    assert_eq!(roc_auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
    assert!(matches!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(ued_core::Error::UndefinedMetric(_))));
}

#[test]
fn nmi_examples() {
    let t = [0usize, 0, 1, 1, 2, 2];
    assert!((nmi(&t, &t).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(nmi(&[0usize; 5], &[7usize; 5]).unwrap(), 0.0);
    assert!(nmi(&[0usize, 1], &[0usize]).is_err());

    let mut rng = RngState::new(4);
    let a: Vec<usize> = (0..10_000).map(|_| rng.below(4)).collect();
    let b: Vec<usize> = (0..10_000).map(|_| rng.below(4)).collect();
    assert!(nmi(&a, &b).unwrap() < 0.02);
}

#[test]
fn f1_examples() {
    assert_eq!(f1_binary(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
    assert_eq!(f1_binary(&[0, 0, 0], &[1, 0, 1]).unwrap(), 0.0);
    let mut pred = vec![1u8; 8];
    let mut labels = vec![1u8; 8];
    pred.extend([1, 1]);
    labels.extend([0, 0]);
    pred.extend([0; 4]);
    labels.extend([1; 4]);
    let f = f1_binary(&pred, &labels).unwrap();
    let want = 2.0 * (0.8 * 2.0 / 3.0) / (0.8 + 2.0 / 3.0);
    assert!((f - want).abs() < 1e-12);
}

proptest! {
    #[test]
    fn auc_ignores_monotone_transforms(seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let labels = random_labels(50, &mut rng);
        let scores: Vec<f64> = (0..50).map(|_| rng.normal()).collect();
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
        prop_assert!((roc_auc(&scores, &labels).unwrap() - roc_auc(&warped, &labels).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn nmi_symmetric_and_relabel_invariant(seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let a: Vec<usize> = (0..60).map(|_| rng.below(4)).collect();
        let b: Vec<usize> = (0..60).map(|_| rng.below(3)).collect();
        let relabeled: Vec<usize> = a.iter().map(|x| 10 - x).collect();
        let v = nmi(&a, &b).unwrap();
        prop_assert!((v - nmi(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((v - nmi(&relabeled, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn f1_ignores_sample_order(seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let p = random_labels(40, &mut rng);
        let l = random_labels(40, &mut rng);
        let mut idx: Vec<usize> = (0..40).collect();
        rng.shuffle(&mut idx);
        let p2: Vec<u8> = idx.iter().map(|&k| p[k]).collect();
        let l2: Vec<u8> = idx.iter().map(|&k| l[k]).collect();
        prop_assert_eq!(f1_binary(&p, &l).unwrap(), f1_binary(&p2, &l2).unwrap());
    }
}

#[test]
fn report_csv_and_digest() {
    let r = EvalReport {
        fold: 2,
        epoch: 15,
        approach: "dc".into(),
        extractor: "kan".into(),
        modality: "iq".into(),
        roc_auc: 71.25,
        nmi: 40.0,
        f1: 12.5,
        params: 143_360,
        flops: 1000,
        seed: 9,
        config_digest: "x".into(),
    };
    let csv = reports_to_csv(&[r.clone()]);
    assert_eq!(csv, format!("{CSV_HEADER}\n2,15,dc,kan,iq,71.250000,40.000000,12.500000,143360,1000\n"));
    let d1 = config_digest(&r).unwrap();
    let back: EvalReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    assert_eq!(d1, config_digest(&back).unwrap());
    assert_eq!(d1.len(), 64);
}

// ------------------------------------------------------------- detector

fn detector_with_table(table: Vec<f64>) -> ClusterDetector {
    let x = Matrix::from_rows(&[[0.0]]).unwrap();
    let kmeans = kmeans_fit(&x, 1, &mut RngState::new(0), 5).unwrap();
    ClusterDetector {
        kmeans,
        tables: vec![table],
        alpha: 1.0 - DEFAULT_TAIL_MASS,
    }
}

#[test]
fn score_examples() {
    let det = detector_with_table(vec![1.0, 2.0, 3.0, 4.0]);
    let d = det.score_sample(&[2.5]).unwrap();
    assert_eq!((d.score, d.label), (0.5, 0));
    let d = det.score_sample(&[-5.0]).unwrap();
    assert_eq!((d.score, d.label), (1.0, 1));
    let d = det.score_sample(&[0.5]).unwrap();
    assert_eq!((d.score, d.label), (0.0, 0));
    // ties are not counted
    assert_eq!(det.score_sample(&[3.0]).unwrap().score, 0.5);
    let empty = detector_with_table(vec![]);
    assert!(matches!(empty.score_sample(&[1.0]), Err(ued_core::Error::EmptyCluster { cluster: 0 })));
    let (dec, scores) = det.classify_batch(&Matrix::zeros(0, 1)).unwrap();
    assert!(dec.is_empty() && scores.is_empty());
}

#[test]
fn tight_blobs_have_radius_tables() {
    let x = Matrix::from_rows(&[[0.0, 1.0], [0.0, -1.0], [10.0, 12.0], [10.0, 8.0]]).unwrap();
    let det = fit_detector(&x, 2, &mut RngState::new(1)).unwrap();
    let mut maxes: Vec<f64> = det.tables.iter().map(|t| *t.last().unwrap()).collect();
    maxes.sort_by(f64::total_cmp);
    assert_eq!(maxes, vec![1.0, 2.0]);
}

#[test]
fn one_cluster_per_point_gives_zero_tables() {
    let mut rng = RngState::new(2);
    let rows: Vec<[f64; 3]> = (0..8).map(|_| [rng.normal(), rng.normal(), rng.normal()]).collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let det = fit_detector(&x, 8, &mut rng).unwrap();
    assert!(det.tables.iter().all(|t| t == &vec![0.0]));
    assert!(fit_detector(&x, 9, &mut rng).is_err());
}

#[test]
fn tables_match_linear_scan() {
    let mut rng = RngState::new(3);
    let x = blobs(40, &[[0.0, 0.0], [5.0, 0.0], [0.0, 5.0], [5.0, 5.0], [2.5, 2.5]], 1.0, &mut rng);
    let det = fit_detector(&x, 5, &mut rng).unwrap();
    let mut expect = vec![Vec::new(); 5];
    for row in x.iter_rows() {
        let mut best = (0, f64::INFINITY);
        for c in 0..5 {
            let d: f64 = det.kmeans.centers.row(c).iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (c, d);
            }
        }
        expect[best.0].push(best.1.sqrt());
    }
    for t in &mut expect {
        t.sort_by(f64::total_cmp);
    }
    assert_eq!(det.tables.len(), 5);
    for (a, b) in det.tables.iter().zip(&expect) {
        assert_eq!(a.len(), b.len());
        for (u, v) in a.iter().zip(b) {
            assert!((u - v).abs() < 1e-12);
        }
    }
    assert_eq!(det.tables.iter().map(Vec::len).sum::<usize>(), 200);
}

#[test]
fn self_scoring_flags_the_tail_mass() {
    let mut rng = RngState::new(4);
    let x = blobs(1000, &[[0.0, 0.0], [6.0, 0.0], [0.0, 6.0], [6.0, 6.0], [3.0, 3.0]], 1.0, &mut rng);
    let det = fit_detector(&x, 10, &mut rng).unwrap();
    let (decisions, _) = det.classify_batch(&x).unwrap();
    let flagged = decisions.iter().filter(|d| d.label == 1).count() as f64 / 5000.0;
    assert!((flagged - 0.05).abs() <= 0.015, "flagged {flagged}");
    assert!(flagged <= 0.05);
    for d in &decisions {
        assert_eq!(d.label, u8::from(d.score > det.alpha));
        assert!(d.score < 1.0);
    }
    let far = Matrix::from_rows(&[[1e4, 1e4]]).unwrap();
    assert_eq!(det.classify_batch(&far).unwrap().1, vec![1.0]);
}

#[test]
fn scores_are_monotone_and_scale_equivariant() {
    let mut rng = RngState::new(5);
    let x = blobs(100, &[[0.0, 0.0], [4.0, 4.0]], 1.0, &mut rng);
    let test = blobs(30, &[[1.0, 1.0], [3.0, 2.0]], 2.0, &mut rng);
    let det = fit_detector(&x, 4, &mut RngState::new(6)).unwrap();
    let c = 7.5;
    let scale = |m: &Matrix| Matrix::from_vec(m.rows(), m.cols(), m.data().iter().map(|v| v * c).collect()).unwrap();
    let det2 = fit_detector(&scale(&x), 4, &mut RngState::new(6)).unwrap();
    let (a, _) = det.classify_batch(&test).unwrap();
    let (b, _) = det2.classify_batch(&scale(&test)).unwrap();
    for (u, v) in a.iter().zip(&b) {
        assert_eq!((u.score, u.label), (v.score, v.label));
    }

    let center = det.kmeans.centers.row(0).to_vec();
    let mut last = 0.0;
    for step in 0..50 {
        let h = [center[0] + 0.02 * step as f64, center[1]];
        let d = det.score_sample(&h).unwrap();
        if d.cluster != 0 {
            break;
        }
        assert!(d.score >= last);
        last = d.score;
    }
}

#[test]
fn detector_persistence_round_trips() {
    let mut rng = RngState::new(7);
    let x = blobs(30, &[[0.0, 0.0], [3.0, 3.0]], 0.5, &mut rng);
    let det = fit_detector(&x, 3, &mut rng).unwrap().with_tail_mass(0.1).unwrap();
    assert_eq!(decode_detector(&encode_detector(&det).unwrap()).unwrap(), det);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("det.bin");
    save_detector(&path, &det).unwrap();
    assert_eq!(load_detector(&path).unwrap(), det);
    let mut bytes = encode_detector(&det).unwrap();
    bytes[0] = b'X';
    assert!(matches!(decode_detector(&bytes), Err(ued_core::Error::Format { .. })));
    bytes = encode_detector(&det).unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(matches!(decode_detector(&bytes), Err(ued_core::Error::Format { .. })));
    assert!(det.clone().with_tail_mass(1.5).is_err());
}
