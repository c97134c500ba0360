use focp::fracint::{gl_matrix, quad_weights, FracIntegrationMatrix, QuadratureRule, Scheme};
use proptest::prelude::*;

fn exact_monomial(power: i32, alpha: f64, t: f64) -> f64 {
    // I^α t^m = Γ(m+1)/Γ(m+1+α) t^{m+α}
    let m = power as f64;
    libm::tgamma(m + 1.0) / libm::tgamma(m + 1.0 + alpha) * t.powf(m + alpha)
}

fn alphas() -> impl Strategy<Value = f64> {
    prop_oneof![0.05f64..1.0, Just(1.0)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rows_zero_at_origin_and_nothing_above_the_band(alpha in alphas(), half in 1usize..40, scheme_ix in 0usize..3) {
        let scheme = Scheme::ALL[scheme_ix];
        let n = 2 * half;
        let w = FracIntegrationMatrix::<f64>::new(scheme, alpha, n).unwrap();
        for j in 0..=n {
            prop_assert_eq!(w.get(0, j), 0.0);
        }
        for i in 1..=n {
            // SI odd rows reach one node ahead; every other entry above the diagonal is zero.
            let reach = if scheme == Scheme::Si && i % 2 == 1 { i + 1 } else { i };
            for j in reach + 1..=n {
                prop_assert_eq!(w.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn constants_integrate_exactly(alpha in alphas(), half in 1usize..60, scheme_ix in 1usize..3) {
        let scheme = Scheme::ALL[scheme_ix];
        let n = 2 * half;
        let w = FracIntegrationMatrix::<f64>::new(scheme, alpha, n).unwrap();
        prop_assert!(w.constant_defect() < 1e-12, "defect {}", w.constant_defect());
    }

    #[test]
    fn trapezoid_exact_on_lines(alpha in alphas(), n in 1usize..120, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let w = FracIntegrationMatrix::<f64>::new(Scheme::Tr, alpha, n).unwrap();
        let y: Vec<f64> = (0..=n).map(|i| a + b * w.node(i)).collect();
        let got = w.apply(&y).unwrap();
        for (i, g) in got.iter().enumerate() {
            let t = w.node(i);
            let want = a * exact_monomial(0, alpha, t) + b * exact_monomial(1, alpha, t);
            prop_assert!((g - want).abs() < 1e-12, "row {i}: {g} vs {want}");
        }
    }

    #[test]
    fn simpson_exact_on_parabolas(alpha in alphas(), half in 1usize..60, c in -3.0f64..3.0) {
        let n = 2 * half;
        let w = FracIntegrationMatrix::<f64>::new(Scheme::Si, alpha, n).unwrap();
        let y: Vec<f64> = (0..=n).map(|i| 1.0 - w.node(i) + c * w.node(i).powi(2)).collect();
        let got = w.apply(&y).unwrap();
        for (i, g) in got.iter().enumerate() {
            let t = w.node(i);
            let want = exact_monomial(0, alpha, t) - exact_monomial(1, alpha, t) + c * exact_monomial(2, alpha, t);
            prop_assert!((g - want).abs() < 1e-12, "row {i}: {g} vs {want}");
        }
    }

    #[test]
    fn grunwald_rows_are_shifted_copies(alpha in alphas(), n in 2usize..80) {
        let w = gl_matrix::<f64>(alpha, n).unwrap();
        for i in 2..=n {
            for j in 1..=i {
                prop_assert_eq!(w.get(i, j), w.get(i - 1, j - 1));
            }
        }
    }

    #[test]
    fn single_precision_tracks_double(alpha in 0.1f64..1.0, half in 1usize..20, scheme_ix in 0usize..3) {
        let scheme = Scheme::ALL[scheme_ix];
        let n = 2 * half;
        let w64 = FracIntegrationMatrix::<f64>::new(scheme, alpha, n).unwrap();
        let w32 = FracIntegrationMatrix::<f32>::new(scheme, alpha as f32, n).unwrap();
        for i in 0..=n {
            for j in 0..=n {
                let d = (w32.get(i, j) as f64 - w64.get(i, j)).abs();
                prop_assert!(d < 1e-5, "({i},{j}) differs by {d}");
            }
        }
    }

    #[test]
    fn quadrature_weights_sum_to_one(half in 1usize..200) {
        let n = 2 * half;
        for rule in [QuadratureRule::Trapezoid, QuadratureRule::Simpson] {
            let q = quad_weights::<f64>(rule, n).unwrap();
            prop_assert!((q.sum() - 1.0).abs() < 1e-13);
        }
    }
}
