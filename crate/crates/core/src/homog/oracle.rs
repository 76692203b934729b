//! One-dimensional effective laws by monotone inversion.
//!
//! In `d = 1`, `m = 1` the periodic corrector has constant flux `q`, and
//! `xi + D+phi = g(omega, q)` with `A(omega, g) = q`. Zero mean of `D+phi`
//! gives `mean g(omega, q) = xi`, a scalar monotone equation for `q`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::material::OperatorFamily;
use crate::randomfield::{ClampSpec, ParameterField};

fn check_scalar(fam: &OperatorFamily) -> Result<()> {
    if fam.m() != 1 || fam.d() != 1 {
        return Err(Error::InvalidArgument(format!(
            "one-dimensional oracle needs m = d = 1, got m = {}, d = {}",
            fam.m(),
            fam.d()
        )));
    }
    Ok(())
}

/// Safeguarded Newton on a bracket `[lo, hi]` with `f(lo) <= 0 <= f(hi)`.
fn monotone_root(mut f: impl FnMut(f64) -> (f64, f64), lo: f64, hi: f64, tol: f64, what: &str) -> Result<f64> {
    let (mut lo, mut hi) = (lo, hi);
    let (flo, fhi) = (f(lo).0, f(hi).0);
    if flo > 0.0 || fhi < 0.0 {
        return Err(Error::Bracketing(format!(
            "{what}: f({lo}) = {flo:e}, f({hi}) = {fhi:e} do not bracket a root"
        )));
    }
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - fx / dfx;
        let next = if dfx > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - x).abs();
        x = next;
        if step <= tol * (1.0 + x.abs()) || hi - lo <= tol * (1.0 + x.abs()) {
            return Ok(x);
        }
    }
    Err(Error::Bracketing(format!("{what}: no convergence in 200 steps")))
}

/// `g` with `A(omega, g) = q`, and `dg/dq = 1 / a`.
fn invert(fam: &OperatorFamily, omega: &[f64], q: f64, tol: f64) -> Result<(f64, f64)> {
    let (l, ll) = fam.constants();
    let (mut lo, mut hi) = if q >= 0.0 { (q / ll, q / l) } else { (q / l, q / ll) };
    let pad = 1e-12 * (1.0 + q.abs());
    lo -= pad;
    hi += pad;
    let mut out = [0.0];
    let mut da = [0.0];
    let g = monotone_root(
        |g| {
            fam.eval(omega, &[g], &mut out);
            fam.d_xi(omega, &[g], &mut da);
            (out[0] - q, da[0])
        },
        lo,
        hi,
        tol,
        "site inversion",
    )?;
    fam.d_xi(omega, &[g], &mut da);
    Ok((g, 1.0 / da[0]))
}

/// Weighted mean of `g(omega_i, q)` and of `dg/dq`.
fn weighted_inverse(fam: &OperatorFamily, points: &[(f64, &[f64])], q: f64, tol: f64) -> Result<(f64, f64)> {
    let mut g = 0.0;
    let mut dg = 0.0;
    for &(w, o) in points {
        let (gi, di) = invert(fam, o, q, tol)?;
        g += w * gi;
        dg += w * di;
    }
    Ok((g, dg))
}

/// Constant flux `q` with `sum_i w_i g(omega_i, q) = xi`; also returns the
/// derivative of the left side at the root.
pub fn constant_flux_1d(fam: &OperatorFamily, points: &[(f64, &[f64])], xi: f64, root_tol: f64) -> Result<(f64, f64)> {
    check_scalar(fam)?;
    if !(root_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("root tolerance must be positive, got {root_tol}")));
    }
    if xi == 0.0 {
        return Ok((0.0, weighted_inverse(fam, points, 0.0, root_tol)?.1));
    }
    let (l, ll) = fam.constants();
    let (lo, hi) = if xi > 0.0 { (l * xi, ll * xi) } else { (ll * xi, l * xi) };
    let pad = 1e-9 * xi.abs();
    let inner = 1e-3 * root_tol;
    let mut err = None;
    let q = monotone_root(
        |q| match weighted_inverse(fam, points, q, inner) {
            Ok((g, dg)) => (g - xi, dg),
            Err(e) => {
                err.get_or_insert(e);
                (f64::NAN, f64::NAN)
            }
        },
        lo - pad,
        hi + pad,
        root_tol,
        "constant flux",
    );
    if let Some(e) = err {
        return Err(e);
    }
    let q = q?;
    let dg = weighted_inverse(fam, points, q, inner)?.1;
    Ok((q, dg))
}

/// Effective flux of the periodic one-dimensional cell problem on the given
/// lattice field.
pub fn oracle_1d(omega: &ParameterField, fam: &OperatorFamily, xi: f64, root_tol: f64) -> Result<f64> {
    if omega.grid().dim() != 1 {
        return Err(Error::InvalidArgument("oracle_1d needs a one-dimensional field".into()));
    }
    let k = omega.k();
    let w = 1.0 / omega.grid().num_sites() as f64;
    let points: Vec<(f64, &[f64])> = omega.values().chunks(k).map(|o| (w, o)).collect();
    Ok(constant_flux_1d(fam, &points, xi, root_tol)?.0)
}

/// `mean_x g(omega(x), q)`.
pub fn mean_inverse_1d(omega: &ParameterField, fam: &OperatorFamily, q: f64, root_tol: f64) -> Result<f64> {
    check_scalar(fam)?;
    let k = omega.k();
    let w = 1.0 / omega.grid().num_sites() as f64;
    let points: Vec<(f64, &[f64])> = omega.values().chunks(k).map(|o| (w, o)).collect();
    Ok(weighted_inverse(fam, &points, q, root_tol)?.0)
}

/// Effective flux when sites are i.i.d. with the one-point law of the
/// clamped standard Gaussian, which is the infinite-volume limit of the
/// one-dimensional cell problem at fixed lattice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SiteLawReference {
    pub xi: f64,
    pub q: f64,
    /// `E[dg/dq]` at the root, `1 / (harmonic-type mean)`.
    pub dg_dq: f64,
    pub nodes: usize,
}

pub fn quadrature_reference(fam: &OperatorFamily, clamp: &ClampSpec, xi: f64, root_tol: f64) -> Result<SiteLawReference> {
    check_scalar(fam)?;
    if fam.k() != 1 {
        return Err(Error::InvalidArgument("quadrature reference needs a single channel".into()));
    }
    // Trapezoid rule on [-10, 10] against the standard normal density.
    let nodes = 20001;
    let (a, b) = (-10.0, 10.0);
    let dy = (b - a) / (nodes - 1) as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut omegas = Vec::with_capacity(nodes);
    let mut weights = Vec::with_capacity(nodes);
    let mut o = [0.0];
    for i in 0..nodes {
        let y = a + i as f64 * dy;
        let end = if i == 0 || i + 1 == nodes { 0.5 } else { 1.0 };
        weights.push(end * dy * norm * (-0.5 * y * y).exp());
        clamp.apply(&[y], &mut o);
        omegas.push(o);
    }
    let total: f64 = weights.iter().sum();
    let points: Vec<(f64, &[f64])> = weights.iter().zip(&omegas).map(|(w, o)| (w / total, &o[..])).collect();
    let (q, dg_dq) = constant_flux_1d(fam, &points, xi, root_tol)?;
    Ok(SiteLawReference { xi, q, dg_dq, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PeriodicGrid;
    use crate::homog::rve_periodic;
    use crate::material::{make_linear_midpoint, make_rational_uhlenbeck, MaterialLaw, LawFlags};
    use crate::randomfield::{FieldSpec, KernelShape};

    #[test]
    fn constant_field() {
        let g = PeriodicGrid::new(1, 16, 1.0).unwrap();
        let omega = ParameterField::constant(g, &[0.4], 0.25).unwrap();
        let fam = make_rational_uhlenbeck(1, 1);
        let q = oracle_1d(&omega, &fam, 1.3, 1e-13).unwrap();
        assert!((q - fam.apply(&[0.4], &[1.3])[0]).abs() < 1e-12);
    }

    #[test]
    fn harmonic_mean() {
        let g = PeriodicGrid::new(1, 64, 1.0).unwrap();
        // midpoint family: a = (3 + omega)/2, so omega = -1 + 1e-9 ~ 1, omega ~ 1 -> 2
        let w = 1.0 - 1e-9;
        let vals = (0..64).map(|i| if i % 2 == 0 { -w } else { w }).collect();
        let omega = ParameterField::from_values(g, 1, vals, 0.25).unwrap();
        let q = oracle_1d(&omega, &make_linear_midpoint(1, 1), 1.0, 1e-14).unwrap();
        let a1 = 0.5 * (3.0 - w);
        let a2 = 0.5 * (3.0 + w);
        assert!((q - 2.0 / (1.0 / a1 + 1.0 / a2)).abs() < 1e-12);
    }

    #[test]
    fn agrees_with_cell_problem() {
        let g = PeriodicGrid::new(1, 512, 16.0).unwrap();
        let fam = make_rational_uhlenbeck(1, 1);
        for seed in 0..3 {
            let omega = FieldSpec::new(0.25, KernelShape::GaussianBump, Default::default())
                .sample(&g, seed)
                .unwrap();
            let q = oracle_1d(&omega, &fam, 1.0, 1e-13).unwrap();
            let r = rve_periodic(&omega, &fam, &[1.0], 1e-11).unwrap();
            assert!((q - r.value[0]).abs() < 1e-8, "{q} {}", r.value[0]);
        }
    }

    #[test]
    fn quadrature_of_constant_law() {
        let fam = make_linear_midpoint(1, 1);
        // Affine clip with a tiny slope keeps omega ~ 0, so a ~ 3/2.
        let clamp = ClampSpec::new(crate::randomfield::ClampMap::AffineClip, 1e-12);
        let r = quadrature_reference(&fam, &clamp, 2.0, 1e-14).unwrap();
        assert!((r.q - 3.0).abs() < 1e-9);
        assert!((r.dg_dq - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn quadrature_matches_large_sample_mean() {
        // Midpoint family with tanh clamp: E[1/a] by quadrature vs Monte Carlo.
        let fam = make_linear_midpoint(1, 1);
        let clamp = ClampSpec::default();
        let r = quadrature_reference(&fam, &clamp, 1.0, 1e-14).unwrap();
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let mut o = [0.0];
        let mut s = 0.0;
        for _ in 0..n {
            let y: f64 = StandardNormal.sample(&mut rng);
            clamp.apply(&[y], &mut o);
            s += 2.0 / (3.0 + o[0]);
        }
        let q_mc = n as f64 / s;
        assert!((r.q - q_mc).abs() < 2e-3, "{} {q_mc}", r.q);
    }

    struct NonMonotone;
    impl MaterialLaw for NonMonotone {
        fn name(&self) -> String {
            "bad".into()
        }
        fn m(&self) -> usize {
            1
        }
        fn d(&self) -> usize {
            1
        }
        fn k(&self) -> usize {
            1
        }
        fn eval(&self, _: &[f64], xi: &[f64], out: &mut [f64]) {
            out[0] = xi[0].sin();
        }
        fn d_xi(&self, _: &[f64], xi: &[f64], out: &mut [f64]) {
            out[0] = xi[0].cos();
        }
        fn d_omega(&self, _: &[f64], _: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn constants(&self) -> (f64, f64) {
            (1.0, 1.0)
        }
        fn flags(&self) -> LawFlags {
            LawFlags::default()
        }
    }

    #[test]
    fn non_monotone_family_fails_bracketing() {
        let g = PeriodicGrid::new(1, 8, 1.0).unwrap();
        let omega = ParameterField::constant(g, &[0.0], 0.25).unwrap();
        let fam = OperatorFamily::custom(NonMonotone);
        assert!(matches!(oracle_1d(&omega, &fam, 5.0, 1e-12), Err(Error::Bracketing(_))));
    }
}
