use super::*;
use crate::rng::{self, normal};
use approx::assert_abs_diff_eq;
use rand::Rng;

#[test]
fn acc_examples() {
    let t = RankTable::from_ranks(&[1, 2, 5], 5).unwrap();
    assert_abs_diff_eq!(acc_at_q(&t, 1).unwrap(), 1.0 / 3.0);
    assert_eq!(acc_at_q(&t, 5).unwrap(), 1.0);
    assert!(acc_at_q(&t, 0).is_err());
    assert!(acc_at_q(&t, 6).is_err());
    let mut prev = 0.0;
    for q in 1..=5 {
        let a = acc_at_q(&t, q).unwrap();
        assert!(a >= prev);
        prev = a;
    }
    assert!(RankTable::from_ranks(&[0], 5).is_err());
    assert!(RankTable::from_ranks(&[6], 5).is_err());
}

#[test]
fn arp_examples() {
    assert_abs_diff_eq!(
        arp(&RankTable::from_ranks(&[1, 3, 5], 5).unwrap()).unwrap(),
        0.5
    );
    assert_eq!(
        arp(&RankTable::from_ranks(&[1, 1], 7).unwrap()).unwrap(),
        1.0
    );
    assert_eq!(
        arp(&RankTable::from_ranks(&[7, 7], 7).unwrap()).unwrap(),
        0.0
    );
    assert!(arp(&RankTable::from_ranks(&[1], 1).unwrap()).is_err());
}

#[test]
fn ranks_from_embeddings_ignore_id_relabeling_without_ties() {
    let mut r = rng::stream(3, 0, 0);
    let g: Vec<Vec<f64>> = (0..6)
        .map(|_| (0..3).map(|_| r.gen_range(-1.0..1.0)).collect())
        .collect();
    let q: Vec<Vec<f64>> = (0..6)
        .map(|_| (0..3).map(|_| r.gen_range(-1.0..1.0)).collect())
        .collect();
    let qids: Vec<String> = (0..6).map(|i| alloc::format!("s{i}")).collect();
    let a: Vec<String> = (0..6).map(|i| alloc::format!("p{i}")).collect();
    let b: Vec<String> = (0..6).map(|i| alloc::format!("x{}", 9 - i)).collect();
    let targets: Vec<usize> = (0..6).collect();
    let ta = RankTable::from_embeddings(&qids, &q, &targets, &a, &g).unwrap();
    let tb = RankTable::from_embeddings(&qids, &q, &targets, &b, &g).unwrap();
    assert_eq!(arp(&ta).unwrap(), arp(&tb).unwrap());
}

fn gaussian(n: usize, d: usize, seed: u64, mu: f64, sigma: f64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, 0, 0);
    (0..n)
        .map(|_| (0..d).map(|_| mu + sigma * normal(&mut r)).collect())
        .collect()
}

#[test]
fn fid_identity_symmetry_and_one_dimensional_case() {
    let a = gaussian(200, 4, 1, 0.0, 1.0);
    let b = gaussian(150, 4, 2, 0.5, 2.0);
    assert!(fid(&a, &a).unwrap().abs() <= 1e-6);
    assert_abs_diff_eq!(fid(&a, &b).unwrap(), fid(&b, &a).unwrap(), epsilon = 1e-9);
    let x = gaussian(100_000, 1, 3, 0.0, 1.0);
    let y = gaussian(100_000, 1, 4, 2.0, 3.0);
    assert!((fid(&x, &y).unwrap() - 8.0).abs() < 0.2);
    assert!(matches!(
        fid(&gaussian(4, 4, 1, 0.0, 1.0), &a),
        Err(Error::TooFewSamples { .. })
    ));
}

#[test]
fn consistency_bins() {
    let bins = certainty_consistency(&[0.55, 0.55, 0.55], &[0.2, 0.4, 0.6]).unwrap();
    assert_eq!(bins.len(), 1);
    assert_eq!(bins[0].index, 5);
    assert_abs_diff_eq!(bins[0].mean_arp, 0.4, epsilon = 1e-12);
    assert_eq!(score_bin(0.1), 1);
    assert_eq!(score_bin(1.0), 9);
    assert_eq!(score_bin(0.0), 0);
    let mut r = rng::stream(5, 0, 0);
    let s: Vec<f64> = (0..300).map(|_| r.gen_range(0.0..1.0)).collect();
    let p: Vec<f64> = (0..300).map(|_| r.gen_range(0.0..1.0)).collect();
    let bins = certainty_consistency(&s, &p).unwrap();
    assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 300);
    for b in &bins {
        let sub: Vec<f64> = s
            .iter()
            .zip(&p)
            .filter(|(x, _)| score_bin(**x) == b.index)
            .map(|(_, y)| *y)
            .collect();
        assert_abs_diff_eq!(
            b.mean_arp,
            sub.iter().sum::<f64>() / sub.len() as f64,
            epsilon = 1e-12
        );
    }
}

#[test]
fn spearman_cases() {
    assert_abs_diff_eq!(
        spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(),
        1.0
    );
    assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 0.0]).unwrap(), -1.0);
    assert_abs_diff_eq!(
        spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(),
        0.8,
        epsilon = 1e-12
    );
    assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_none());
}
