use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sqg_core::data::{verify_initial_ordering, DataSpec};
use sqg_core::diagnostics::kendall_trend;
use sqg_core::io::{read_spectrum, write_spectrum};
use sqg_core::key_lemma::{hardy_check, random_hardy_function};
use sqg_core::spectral::{dealias, divergence, sobolev_norm, Field, Grid, MultiplierSpec, SpectralOps, Spectrum, ODD_ODD};
use sqg_core::tracker::PaddedField;
use std::f64::consts::PI;

/// A few random odd-odd modes on a 64^2 lattice.
fn modes() -> impl Strategy<Value = Vec<(usize, usize, f64)>> {
    prop::collection::vec((1usize..32, 1usize..32, -1.0f64..1.0), 1..8)
}

fn spectrum_of(g: Grid, m: &[(usize, usize, f64)]) -> Spectrum {
    let mut s = Spectrum::zeros(g, ODD_ODD);
    for &(a, b, c) in m {
        s.set([a, b], c);
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn transform_round_trip(m in modes()) {
        let g = Grid::new(64).unwrap();
        let ops = SpectralOps::new(g);
        let s = spectrum_of(g, &m);
        let f = ops.inverse(&s).unwrap();
        let back = ops.forward(&f).unwrap();
        let scale = s.max_abs().max(1e-300);
        let err = back.coeffs().iter().zip(s.coeffs()).fold(0.0f64, |e, (a, b)| e.max((a - b).abs()));
        prop_assert!(err <= 1e-12 * scale, "err {err}");
    }

    #[test]
    fn dealias_is_idempotent(m in modes()) {
        let s = spectrum_of(Grid::new(64).unwrap(), &m);
        let once = dealias(&s);
        prop_assert_eq!(dealias(&once), once.clone());
        prop_assert!(once.tail_fraction() >= 0.0 && once.tail_fraction() <= 1.0);
    }

    #[test]
    fn velocity_is_divergence_free(m in modes(), alpha in 1.0f64..=2.0, gamma in 0.0f64..2.0) {
        let g = Grid::new(64).unwrap();
        let ops = SpectralOps::new(g);
        let mult = MultiplierSpec { alpha, gamma, normalization: 2.0 * PI };
        let (u1, u2) = ops.velocity_from_scalar(&spectrum_of(g, &m), &mult).unwrap();
        let div = divergence(&u1, &u2).unwrap().max_abs();
        let scale = PI * g.half() as f64 * u1.max_abs().max(u2.max_abs());
        prop_assert!(div <= 1e-13 * scale.max(1e-300), "div {div} scale {scale}");
    }

    #[test]
    fn sobolev_norm_grows_with_index(m in modes(), s1 in 0.0f64..3.0, ds in 0.0f64..1.0) {
        let s = spectrum_of(Grid::new(64).unwrap(), &m);
        let s2 = (s1 + ds).min(3.0);
        prop_assert!(sobolev_norm(&s, s1).unwrap() <= sobolev_norm(&s, s2).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn spectrum_container_round_trip(m in modes(), t in 0.0f64..10.0) {
        let g = Grid::new(64).unwrap();
        let s = spectrum_of(g, &m);
        let mut buf = Vec::new();
        write_spectrum(&mut buf, &s, Some(MultiplierSpec::sqg()), Some(t), None).unwrap();
        let (back, h) = read_spectrum(buf.as_slice()).unwrap();
        prop_assert_eq!(back, s);
        prop_assert_eq!(h.time, Some(t));
    }

    #[test]
    fn hardy_inequalities_hold(seed in any::<u64>(), l in 0.05f64..=1.0, k in 3usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_hardy_function(&mut rng, l, k, 2048);
        let r = hardy_check(&f).unwrap();
        prop_assert!(r.first_holds() && r.second_holds(), "{r:?}");
    }

    #[test]
    fn initial_ordering_holds_across_ratios(q in 2.31f64..=4.0, n_max in 3u32..8) {
        let spec = DataSpec { n0: 3, n_max, alpha: 0.55, scale_ratio: q, outer_scale: 1.75 };
        prop_assert!(verify_initial_ordering(&spec).is_ok(), "q = {q}");
    }

    #[test]
    fn interpolation_reproduces_odd_polynomials(
        c in prop::array::uniform4(-1.0f64..1.0),
        x in 0.0f64..0.85,
        y in 0.0f64..0.85,
    ) {
        // odd in both variables, degree 3 in each; the 8-point stencil stays
        // clear of x = 1, where the extension is odd about 1 instead
        let p = |x: f64, y: f64| x * y * (c[0] + c[1] * x * x + c[2] * y * y + c[3] * x * x * y * y);
        let g = Grid::new(64).unwrap();
        let f = PaddedField::new(&Field::from_fn(g, ODD_ODD, p));
        prop_assert!((f.eval([x, y]) - p(x, y)).abs() < 1e-12);
    }

    #[test]
    fn kendall_trend_is_bounded_and_antisymmetric(v in prop::collection::vec(-1e3f64..1e3, 0..40)) {
        let t = kendall_trend(&v);
        prop_assert!((-1.0..=1.0).contains(&t));
        let mut r = v.clone();
        r.reverse();
        prop_assert!((kendall_trend(&r) + t).abs() < 1e-12);
    }
}
