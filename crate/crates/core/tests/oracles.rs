//! Frozen reference values computed independently (adaptive quadrature and
//! bracketing root finds in double precision) and closed-form discrete
//! solutions.

use homolab::grid::{apply_laplacian, DiscreteField, PeriodicGrid};
use homolab::homog::{oracle_1d, quadrature_reference, rve_periodic, EffectiveLaw};
use homolab::material::{make_linear_midpoint, make_rational_uhlenbeck, OperatorFamily};
use homolab::randomfield::{ClampSpec, FieldSpec, KernelShape, ParameterField};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

// E over y ~ N(0,1) with omega = tanh(y).
const MIDPOINT_Q1: f64 = 1.432370888988157;
const RATIONAL_Q: [(f64, f64); 3] = [(0.5, 0.4517599577371), (1.0, 0.7869392509859), (2.0, 1.4147429515158)];

#[test]
fn site_law_linear_midpoint_is_harmonic_mean() {
    let fam = make_linear_midpoint(1, 1);
    let r = quadrature_reference(&fam, &ClampSpec::default(), 1.0, 1e-13).unwrap();
    assert!(rel(r.q, MIDPOINT_Q1) < 1e-9, "{} vs {MIDPOINT_Q1}", r.q);
    // Linear: q is 1 / E[1/a], and dg/dq = E[1/a].
    assert!((r.dg_dq * r.q - 1.0).abs() < 1e-9);
}

#[test]
fn site_law_rational_family() {
    let fam = make_rational_uhlenbeck(1, 1);
    for (xi, q) in RATIONAL_Q {
        let r = quadrature_reference(&fam, &ClampSpec::default(), xi, 1e-13).unwrap();
        assert!(rel(r.q, q) < 1e-9, "xi={xi}: {} vs {q}", r.q);
    }
}

#[test]
fn site_law_table_interpolates_frozen_values() {
    let fam = make_rational_uhlenbeck(1, 1);
    let law = EffectiveLaw::site_law_1d(&fam, &ClampSpec::default(), 0.0, 2.5, 48).unwrap();
    for (xi, q) in RATIONAL_Q {
        let v = law.eval(&[xi]).unwrap()[0];
        assert!(rel(v, q) < 1e-8, "xi={xi}: {v} vs {q}");
    }
}

fn two_phase(grid: PeriodicGrid, period: usize, hi: f64, lo: f64) -> ParameterField {
    let values = (0..grid.num_sites())
        .map(|s| if grid.coords(s)[0] % period < period / 2 { hi } else { lo })
        .collect();
    ParameterField::from_values(grid, 1, values, grid.length() / grid.n() as f64 * period as f64).unwrap()
}

#[test]
fn one_dimensional_two_phase_harmonic_mean() {
    // a = (3 + omega)/2 takes the values 1.25 and 1.75.
    let grid = PeriodicGrid::new(1, 512, 8.0).unwrap();
    let omega = two_phase(grid, 16, -0.5, 0.5);
    let fam = make_linear_midpoint(1, 1);
    let est = rve_periodic(&omega, &fam, &[1.0], 1e-11).unwrap();
    let exact = 2.0 / (1.0 / 1.25 + 1.0 / 1.75);
    assert!(rel(est.value[0], exact) < 1e-9, "{} vs {exact}", est.value[0]);
}

#[test]
fn laminate_in_two_dimensions() {
    // Layers normal to e1: harmonic mean across, arithmetic mean along.
    let grid = PeriodicGrid::new(2, 32, 4.0).unwrap();
    let values: Vec<f64> = (0..grid.num_sites())
        .map(|s| (2.0 * std::f64::consts::PI * grid.coords(s)[0] as f64 / 32.0).sin() * 0.8)
        .collect();
    let a: Vec<f64> = (0..32).map(|i| 0.5 * (3.0 + 0.8 * (2.0 * std::f64::consts::PI * i as f64 / 32.0).sin())).collect();
    let harmonic = a.len() as f64 / a.iter().map(|v| 1.0 / v).sum::<f64>();
    let arithmetic = a.iter().sum::<f64>() / a.len() as f64;
    let omega = ParameterField::from_values(grid, 1, values, 1.0).unwrap();
    let fam = make_linear_midpoint(1, 2);
    let across = rve_periodic(&omega, &fam, &[1.0, 0.0], 1e-11).unwrap();
    let along = rve_periodic(&omega, &fam, &[0.0, 1.0], 1e-11).unwrap();
    assert!(rel(across.value[0], harmonic) < 1e-9, "{} vs {harmonic}", across.value[0]);
    assert!(across.value[1].abs() < 1e-9);
    assert!(rel(along.value[1], arithmetic) < 1e-12);
    assert!(along.value[0].abs() < 1e-12);
}

#[test]
fn nonlinear_laminate_matches_scalar_root() {
    // Constant flux q with mean of the inverse law equal to xi.
    let grid = PeriodicGrid::new(1, 256, 4.0).unwrap();
    let omega = two_phase(grid, 32, -0.6, 0.9);
    let fam = make_rational_uhlenbeck(1, 1);
    let via_oracle = oracle_1d(&omega, &fam, 1.0, 1e-14).unwrap();
    let via_solver = rve_periodic(&omega, &fam, &[1.0], 1e-11).unwrap().value[0];
    // Two phases: solve A(w1, g1) = A(w2, g2) = q with (g1 + g2)/2 = 1 by bisection here.
    let a = |w: f64, g: f64| fam.apply(&[w], &[g])[0];
    let inv = |w: f64, q: f64| {
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if a(w, mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let (mut lo, mut hi) = (0.0, 2.0);
    for _ in 0..200 {
        let q = 0.5 * (lo + hi);
        if 0.5 * (inv(-0.6, q) + inv(0.9, q)) < 1.0 {
            lo = q;
        } else {
            hi = q;
        }
    }
    let q = 0.5 * (lo + hi);
    assert!(rel(via_oracle, q) < 1e-11, "{via_oracle} vs {q}");
    assert!(rel(via_solver, q) < 1e-8, "{via_solver} vs {q}");
}

#[test]
fn constant_medium_has_no_corrector() {
    let grid = PeriodicGrid::new(2, 16, 2.0).unwrap();
    let omega = ParameterField::constant(grid, &[0.3], 0.5).unwrap();
    let fam = make_rational_uhlenbeck(1, 2);
    let xi = [0.7, -1.2];
    let est = rve_periodic(&omega, &fam, &xi, 1e-10).unwrap();
    let exact = fam.apply(&[0.3], &xi);
    for c in 0..2 {
        assert!((est.value[c] - exact[c]).abs() < 1e-12);
    }
}

#[test]
fn discrete_laplacian_symbol_on_sine_modes() {
    for (d, n, l) in [(1usize, 64usize, 3.0f64), (2, 16, 1.0), (3, 8, 2.0)] {
        let grid = PeriodicGrid::new(d, n, l).unwrap();
        let h = grid.spacing();
        for k in [1usize, 3, n / 2 - 1] {
            let u = DiscreteField::from_fn(grid, &[1], |x, out| {
                out[0] = (2.0 * std::f64::consts::PI * k as f64 * x[0] / l).sin();
            });
            let lap = apply_laplacian(&u);
            let lam = -4.0 / (h * h) * (std::f64::consts::PI * k as f64 * h / l).sin().powi(2);
            let err = lap
                .values()
                .iter()
                .zip(u.values())
                .map(|(a, b)| (a - lam * b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9 * lam.abs(), "d={d} k={k}: {err}");
        }
    }
}

#[test]
fn iid_sites_converge_to_site_law() {
    // Delta kernel: sites are i.i.d. with the one-point law, so the RVE
    // average over a long torus sits near the quadrature value.
    let fam: OperatorFamily = make_rational_uhlenbeck(1, 1);
    let spec = FieldSpec::new(1.0, KernelShape::Delta, ClampSpec::default());
    let grid = PeriodicGrid::new(1, 1 << 15, 8192.0).unwrap();
    let omega = spec.sample(&grid, 17).unwrap();
    let q = oracle_1d(&omega, &fam, 1.0, 1e-13).unwrap();
    // Per-site sd of the estimator is O(1/sqrt(n)) ~ 6e-3 / 181.
    assert!((q - RATIONAL_Q[1].1).abs() < 5e-4, "{q}");
}
