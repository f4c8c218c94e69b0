//! Closed-form Gaussian quantities against sampling and quadrature.

mod support;

use introlab::gaussian::{self, as_distance_plain, kernel_k, DiagonalGaussian, PosteriorBatch};
use introlab::{rng, Tape};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use support::{g1, monte_carlo_kl, quadrature_kernel, random_gaussian, tape_distance};

#[test]
fn kl_to_prior_small_cases() {
    assert_eq!(g1(0.0, 1.0).kl_to_prior(), 0.0);
    assert!((g1(1.0, 1.0).kl_to_prior() - 0.5).abs() < 1e-15);
}

#[test]
fn kl_to_prior_matches_monte_carlo() {
    let q = g1(0.0, std::f64::consts::E);
    let closed = q.kl_to_prior();
    assert!((closed - (std::f64::consts::E - 2.0) / 2.0).abs() < 1e-12);
    let mc = monte_carlo_kl(&q, &DiagonalGaussian::standard(1), 10_000_000, 11);
    assert!((mc - closed).abs() < 1e-3, "mc {mc} vs closed {closed}");
}

#[test]
fn kl_between_matches_monte_carlo() {
    assert!((g1(0.0, 1.0).kl_between(&g1(1.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
    let mut r = rng::seeded(5);
    for draw in 0..3 {
        let a = random_gaussian(&mut r, 2, (0.6, 1.4));
        let b = random_gaussian(&mut r, 2, (0.6, 1.4));
        assert_eq!(a.kl_between(&a).unwrap(), 0.0);
        let closed = a.kl_between(&b).unwrap();
        let mc = monte_carlo_kl(&a, &b, 10_000_000, 100 + draw);
        assert!((mc - closed).abs() < 1e-3, "draw {draw}: mc {mc} vs closed {closed}");
    }
}

#[test]
fn reparameterized_mean_matches_location() {
    let q = DiagonalGaussian::new(vec![1.0, 2.0], vec![4.0, 9.0]).unwrap();
    assert_eq!(q.reparameterize(&[1.0, -1.0]).unwrap(), vec![3.0, -1.0]);
    let mut r = rng::seeded(3);
    let mut sum = [0.0; 2];
    let draws = 1_000_000;
    for _ in 0..draws {
        let z = q.reparameterize(&[r.sample(StandardNormal), r.sample(StandardNormal)]).unwrap();
        sum[0] += z[0];
        sum[1] += z[1];
    }
    assert!((sum[0] / draws as f64 - 1.0).abs() < 0.01);
    assert!((sum[1] / draws as f64 - 2.0).abs() < 0.01);
}

#[test]
fn kernel_matches_quadrature() {
    let a = g1(0.0, 0.5);
    assert!((kernel_k(&a, &a).unwrap() - quadrature_kernel(&a, &a)).abs() < 1e-9);
    assert!((kernel_k(&a, &a).unwrap() - 0.398942).abs() < 1e-6);
    let b = g1(2.0, 0.5);
    assert!((kernel_k(&a, &b).unwrap() - quadrature_kernel(&a, &b)).abs() < 1e-9);
    assert!((kernel_k(&a, &b).unwrap() - 0.053991).abs() < 1e-6);

    let mut r = rng::seeded(17);
    for draw in 0..50 {
        let n = if draw % 2 == 0 { 1 } else { 3 };
        let a = random_gaussian(&mut r, n, (0.2, 2.0));
        let b = random_gaussian(&mut r, n, (0.2, 2.0));
        let closed = kernel_k(&a, &b).unwrap();
        let quad = quadrature_kernel(&a, &b);
        assert!((closed - quad).abs() < 1e-9, "draw {draw} (n={n}): {closed} vs {quad}");
    }
}

#[test]
fn singleton_distance_composes_from_quadrature() {
    let (r, g) = (g1(0.0, 0.5), g1(2.0, 0.5));
    let oracle = quadrature_kernel(&r, &r) + quadrature_kernel(&g, &g) - 2.0 * quadrature_kernel(&r, &g);
    assert!((oracle - 0.689902).abs() < 1e-6);
    let plain = as_distance_plain(std::slice::from_ref(&r), std::slice::from_ref(&g)).unwrap();
    assert!((plain - oracle).abs() < 1e-9);

    let mut tape = Tape::new();
    let rb = PosteriorBatch::from_gaussians(&mut tape, &[r], false).unwrap();
    let gb = PosteriorBatch::from_gaussians(&mut tape, &[g], false).unwrap();
    let d = gaussian::as_distance(&mut tape, &rb, &gb).unwrap();
    assert!((tape.scalar(d) - oracle).abs() < 1e-9);
}

#[test]
fn far_populations_lose_the_cross_term() {
    let sigma: f64 = 0.5;
    let (r, g) = (g1(0.0, sigma * sigma), g1(100.0 * sigma, sigma * sigma));
    let d = as_distance_plain(std::slice::from_ref(&r), std::slice::from_ref(&g)).unwrap();
    let limit = kernel_k(&r, &r).unwrap() + kernel_k(&g, &g).unwrap();
    assert!((d - limit).abs() < 1e-12);
}

#[test]
fn distance_nonnegative_and_zero_on_identical_batches() {
    let mut rg = rng::seeded(23);
    for pair in 0..100 {
        let n = 1 + pair % 3;
        let (br, bg) = (1 + pair % 7, 1 + (pair * 5) % 9);
        let r: Vec<_> = (0..br).map(|_| random_gaussian(&mut rg, n, (0.05, 2.0))).collect();
        let g: Vec<_> = (0..bg).map(|_| random_gaussian(&mut rg, n, (0.05, 2.0))).collect();
        let d = tape_distance(&r, &g);
        assert!(d >= -1e-12, "pair {pair}: {d}");
        assert!((d - as_distance_plain(&r, &g).unwrap()).abs() < 1e-10);
        assert!(tape_distance(&r, &r).abs() < 1e-12);
    }
}

fn gaussian_strategy(n: usize) -> impl Strategy<Value = DiagonalGaussian> {
    (prop::collection::vec(-3.0..3.0f64, n), prop::collection::vec(0.01..4.0f64, n))
        .prop_map(|(m, v)| DiagonalGaussian::new(m, v).unwrap())
}

fn batch_strategy(n: usize) -> impl Strategy<Value = Vec<DiagonalGaussian>> {
    prop::collection::vec(gaussian_strategy(n), 1..6)
}

proptest! {
    #[test]
    fn kl_is_nonnegative(a in gaussian_strategy(3), b in gaussian_strategy(3)) {
        prop_assert!(a.kl_to_prior() >= -1e-12);
        prop_assert!(a.kl_between(&b).unwrap() >= -1e-12);
    }

    #[test]
    fn kernel_is_symmetric_and_positive(a in gaussian_strategy(2), b in gaussian_strategy(2)) {
        let (ab, ba) = (kernel_k(&a, &b).unwrap(), kernel_k(&b, &a).unwrap());
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn distance_is_symmetric_and_nonnegative(r in batch_strategy(2), g in batch_strategy(2)) {
        let d = tape_distance(&r, &g);
        prop_assert!(d >= -1e-12);
        prop_assert!((d - tape_distance(&g, &r)).abs() < 1e-12);
    }

    #[test]
    fn kl_to_prior_agrees_with_tape(q in batch_strategy(3)) {
        let mut tape = Tape::new();
        let b = PosteriorBatch::from_gaussians(&mut tape, &q, false).unwrap();
        let kl = b.kl_to_prior(&mut tape).unwrap();
        for (row, g) in tape.value(kl).iter().zip(&q) {
            prop_assert!((row - g.kl_to_prior()).abs() < 1e-12);
        }
    }
}
