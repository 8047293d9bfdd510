mod common;

use common::{field_diff, material, Setup};
use elastdg::assembly::{Formulation, MethodConfig, Pairing};
use elastdg::fe_spaces::Alpha;
use proptest::prelude::*;

const REDUCTIONS: [Formulation; 3] = [Formulation::ThreeFieldH, Formulation::ThreeFieldW, Formulation::TwoField];

fn regimes() -> Vec<MethodConfig> {
    vec![
        MethodConfig::h1(Formulation::FourFieldH1, Alpha::new(0, 1, 1, 0), 1.0, 1.0, 1.0, material()),
        MethodConfig::hdiv(Formulation::FourFieldHdiv, Alpha::new(1, 0, 0, 1), 1.0, 1.0, 1.0, material()),
    ]
}

#[test]
fn reductions_agree_with_four_field() {
    for cfg in regimes() {
        let s = Setup::new(2, cfg.alpha, material());
        let four = s.solve(&cfg);
        for form in REDUCTIONS {
            let d = field_diff(&s.solve_as(&cfg, form), &four);
            assert!(d <= 1e-10, "{} {form}: {d:e}", cfg.alpha);
        }
    }
}

#[test]
fn grad_and_div_pairings_agree() {
    for mut cfg in regimes() {
        let s = Setup::new(2, cfg.alpha, material());
        cfg.pairing = Some(Pairing::Grad);
        let a = s.solve(&cfg);
        cfg.pairing = Some(Pairing::Div);
        let b = s.solve(&cfg);
        assert!(field_diff(&a, &b) <= 1e-10);
    }
}

#[test]
fn higher_order_reductions_agree() {
    let cfg = MethodConfig::hdiv(Formulation::FourFieldHdiv, Alpha::new(2, 1, 2, 2), 1.0, 1.0, 1.0, material());
    let s = Setup::new(2, cfg.alpha, material());
    let four = s.solve(&cfg);
    for form in REDUCTIONS {
        assert!(field_diff(&s.solve_as(&cfg, form), &four) <= 1e-10, "{form}");
    }
}

fn alphas() -> impl Strategy<Value = Alpha> {
    prop::sample::select(vec![
        Alpha::new(0, 1, 1, 0),
        Alpha::new(1, 0, 0, 1),
        Alpha::new(1, 0, 1, 1),
        Alpha::new(1, 1, 1, 1),
        Alpha::new(2, 1, 2, 2),
    ])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn equivalence_for_random_parameters(
        alpha in alphas(),
        rho1 in 0.1f64..10.0,
        rho2 in 0.1f64..10.0,
        gamma in -1.0f64..1.0,
        h1 in any::<bool>(),
    ) {
        let cfg = if h1 {
            MethodConfig::h1(Formulation::FourFieldH1, alpha, rho1, rho2, gamma, material())
        } else {
            MethodConfig::hdiv(Formulation::FourFieldHdiv, alpha, rho1, rho2, gamma, material())
        };
        let s = Setup::new(2, alpha, material());
        let four = s.solve(&cfg);
        for form in REDUCTIONS {
            let d = field_diff(&s.solve_as(&cfg, form), &four);
            prop_assert!(d <= 1e-9, "{} {}: {:e}", alpha, form, d);
        }
        let other = if h1 { Formulation::FourFieldHdiv } else { Formulation::FourFieldH1 };
        let d = field_diff(&s.solve_as(&cfg, other), &four);
        prop_assert!(d <= 1e-9, "pairings: {:e}", d);
    }
}
