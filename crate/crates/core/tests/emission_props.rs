mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fewtag::emission::{
    alignment_errors, build_scorer, error_nulling_projection, log_softmax_rows, EpisodeBindings, ScorerConfig, Variant,
};

fn inputs(seed: u64, l: usize, dim: usize, n: usize) -> [DMatrix<f64>; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [
        common::gaussian_matrix(&mut rng, l, dim),
        common::gaussian_matrix(&mut rng, l, dim),
        common::gaussian_matrix(&mut rng, l, dim),
        common::gaussian_matrix(&mut rng, n, dim),
    ]
}

fn orthogonal(seed: u64, dim: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    common::gaussian_matrix(&mut rng, dim, dim).qr().q()
}

fn emissions(cfg: &ScorerConfig, phi: &DMatrix<f64>, s: &DMatrix<f64>, c: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let present = vec![true; phi.nrows()];
    EpisodeBindings::build(cfg, phi, s, c.clone(), present)
        .unwrap()
        .emission_scores(x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_annihilates_errors(seed in any::<u64>(), d in prop::sample::select(vec![8usize, 32, 64]), frac in 0.0f64..1.0) {
        let l = 1 + ((d - 2) as f64 * frac) as usize;
        let [psi, c, _, _] = inputs(seed, l, d, 1);
        let present = vec![true; l];
        let m = error_nulling_projection(&psi, &c, &present, None).unwrap();
        prop_assert_eq!(m.ncols(), d - l);
        let eps = alignment_errors(&psi, &c, &present).unwrap();
        prop_assert!((&eps * &m).amax() <= 1e-6);
        let gram = m.transpose() * &m - DMatrix::identity(d - l, d - l);
        prop_assert!(gram.amax() <= 1e-8);
    }

    #[test]
    fn rows_are_log_distributions(seed in any::<u64>(), n in 1usize..6, l in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = common::gaussian_matrix(&mut rng, n, l) * 30.0;
        let lp = log_softmax_rows(&logits);
        for i in 0..n {
            let total: f64 = lp.row(i).iter().map(|v| v.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rotating_every_vector_keeps_emissions(seed in any::<u64>(), variant in prop::sample::select(Variant::ALL.to_vec())) {
        let (l, d, n) = (5, 12, 4);
        let [phi, s, c, x] = inputs(seed, l, d, n);
        let q = orthogonal(seed ^ 0x55, d);
        let cfg = build_scorer(variant, &[]).unwrap();
        let a = emissions(&cfg, &phi, &s, &c, &x);
        let b = emissions(&cfg, &(&phi * &q), &(&s * &q), &(&c * &q), &(&x * &q));
        prop_assert!((a - b).amax() < 1e-8);
    }

    #[test]
    fn unlabelled_l_tapnet_is_tapnet(seed in any::<u64>()) {
        let [phi, s, c, x] = inputs(seed, 4, 10, 3);
        let tapnet = build_scorer(Variant::TapNet, &[]).unwrap();
        let reduced = build_scorer(Variant::LTapNet, &[]).unwrap().with_factors(Some(0.0), Some(1.0)).unwrap();
        let a = emissions(&tapnet, &phi, &s, &c, &x);
        let b = emissions(&reduced, &phi, &s, &c, &x);
        prop_assert!((a - b).amax() < 1e-12);
    }
}

#[test]
fn single_label_uses_raw_reference() {
    let [psi, c, _, _] = inputs(3, 1, 6, 1);
    let eps = alignment_errors(&psi, &c, &[true]).unwrap();
    let expected = psi.row(0) / psi.row(0).norm() - c.row(0) / c.row(0).norm();
    assert!((eps.row(0) - expected).amax() < 1e-12);
}
