mod common;

use common::material;
use elastdg::assembly::{Formulation, MethodConfig, Param};
use elastdg::convergence_lab::{run_locking_study, run_study, ErrorReport, Status, StudyConfig, CSV_HEADER};
use elastdg::fe_spaces::Alpha;

fn h1() -> MethodConfig {
    MethodConfig::h1(Formulation::FourFieldH1, Alpha::new(0, 1, 1, 0), 1.0, 1.0, 1.0, material())
}

fn hdiv() -> MethodConfig {
    MethodConfig::hdiv(Formulation::FourFieldHdiv, Alpha::new(1, 0, 0, 1), 1.0, 1.0, 1.0, material())
}

fn study(method: MethodConfig, lo: u32, hi: u32) -> ErrorReport {
    run_study(&StudyConfig::new(method, lo..=hi)).unwrap()
}

#[test]
fn csv_is_deterministic_and_well_formed() {
    let a = study(hdiv(), 1, 4).to_csv();
    let b = study(hdiv(), 1, 4).to_csv();
    assert_eq!(a, b);
    assert!(!a.contains('\r'));
    let mut lines = a.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 15);
        assert_eq!(cells[0], (i + 1).to_string());
        assert_eq!(cells[14], "ok");
        // Rates are empty on the first row only.
        assert_eq!(cells[10].is_empty(), i == 0);
        for c in cells[6..14].iter().filter(|c| !c.is_empty()) {
            let mantissa = c.split('e').next().unwrap().replace(['-', '.'], "");
            assert!(mantissa.len() >= 12, "{c}");
            c.parse::<f64>().unwrap();
        }
    }
}

#[test]
fn singular_levels_are_flagged() {
    // Both closures off: only (sigma, u) couple, and P1 displacements
    // outnumber P0 stresses.
    let zero = Param::new(0.0, 0);
    let cfg = MethodConfig::new(Formulation::FourFieldH1, Alpha::new(0, 1, 0, 0), zero, zero, 0.0, material());
    let r = study(cfg, 2, 3);
    assert!(r.rows.iter().all(|row| row.status == Status::Singular && row.errors.is_none()));
    let csv = r.to_csv();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",,,,,,,,,singular")), "{csv}");
}

/// The discrete solution norm over `||f||_0` (level independent) stays
/// within a factor two between levels 3 and 6.
#[test]
fn discrete_norms_are_stable() {
    for method in [h1(), hdiv()] {
        let r = study(method, 3, 6);
        let v: Vec<f64> = r
            .rows
            .iter()
            .map(|row| row.norms.unwrap().iter().map(|n| n * n).sum::<f64>().sqrt())
            .collect();
        let hi = v.iter().cloned().fold(0.0, f64::max);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(hi / lo < 2.0, "{v:?}");
    }
}

/// Past the pre-asymptotic levels the distance of each rate to one only
/// shrinks or stays within tolerance.
#[test]
fn rates_stabilize() {
    for (method, cols) in [(h1(), vec![0, 3]), (hdiv(), vec![0, 1, 2])] {
        let r = study(method, 2, 6);
        for c in cols {
            let dev: Vec<f64> = (2..r.rows.len()).map(|i| (r.rates(i)[c].unwrap() - 1.0).abs()).collect();
            for w in dev.windows(2) {
                assert!(w[1] <= w[0].max(0.15), "column {c}: {dev:?}");
            }
            assert!(*dev.last().unwrap() <= 0.15);
        }
    }
}

#[test]
fn locking_first_ratio_matches_plain_study() {
    let cfg = StudyConfig::new(hdiv(), 2..=3);
    let lock = run_locking_study(&cfg, &[0.4, 0.49]).unwrap();
    assert_eq!(lock.reports[0].to_csv(), run_study(&cfg).unwrap().to_csv());
}
