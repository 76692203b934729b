//! Newton-Krylov solver for discrete monotone problems
//!
//! ```text
//! F(u) = -D-.A(omega, G + D+u) + mu u - f = 0
//! ```
//!
//! on the torus or the Dirichlet box. The preconditioner is the constant
//! coefficient operator `P = c(-D-.D+) + mu` with `c = sqrt(lambda Lambda)`,
//! inverted by FFT. Residuals are measured in the dual norm
//! `|F|_* = <F, P^-1 F>^1/2`, and GMRES runs in the `P` inner product, so
//! iteration counts do not grow with the grid size.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Boundary, DiscreteField, Neighbors, PeriodicGrid, SpectralSolver};
use crate::material::OperatorFamily;
use crate::randomfield::ParameterField;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_newton: usize,
    pub restart: usize,
    /// Krylov iterations per linear solve.
    pub max_krylov: usize,
    pub max_relaxation: usize,
    /// `false` skips Newton and runs the relaxation directly.
    pub newton: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_newton: 60,
            restart: 40,
            max_krylov: 2000,
            max_relaxation: 50_000,
            newton: true,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolveStats {
    pub method: String,
    pub newton_iterations: usize,
    pub krylov_iterations: usize,
    pub relaxation_iterations: usize,
    pub residual: f64,
    pub threshold: f64,
    pub history: Vec<f64>,
    pub preconditioner: String,
}

/// Grid, stencils and FFT plans shared by all solves on one grid.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub grid: PeriodicGrid,
    pub nb: Neighbors,
    pub fft: SpectralSolver,
    pub boundary: Boundary,
    pub m: usize,
}

impl Discretization {
    pub fn new(grid: &PeriodicGrid, boundary: Boundary, m: usize) -> Self {
        Self {
            grid: *grid,
            nb: Neighbors::new(grid),
            fft: SpectralSolver::new(grid, boundary),
            boundary,
            m,
        }
    }

    pub fn ns(&self) -> usize {
        self.grid.num_sites()
    }

    pub fn d(&self) -> usize {
        self.grid.dim()
    }

    pub fn md(&self) -> usize {
        self.m * self.grid.dim()
    }

    pub fn mask(&self, v: &mut [f64]) {
        self.boundary.mask(&self.grid, v, self.m);
    }

    /// Removes the per-component mean (torus without mass term only).
    pub fn project(&self, v: &mut [f64], mass: f64) {
        if self.boundary == Boundary::Periodic && mass == 0.0 {
            remove_mean(v, self.m);
        } else {
            self.mask(v);
        }
    }

    pub fn precondition(&self, r: &[f64], c: f64, mass: f64, out: &mut [f64]) {
        self.fft.solve(r, self.m, c, mass, out);
        self.mask(out);
    }

    pub fn dual_norm(&self, r: &[f64], c: f64, mass: f64) -> f64 {
        let mut z = vec![0.0; r.len()];
        self.precondition(r, c, mass, &mut z);
        dot(r, &z).max(0.0).sqrt()
    }
}

pub(crate) fn remove_mean(v: &mut [f64], nc: usize) {
    let ns = v.len() / nc;
    for c in 0..nc {
        let mean = v.iter().skip(c).step_by(nc).sum::<f64>() / ns as f64;
        v.iter_mut().skip(c).step_by(nc).for_each(|x| *x -= mean);
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(b, a)| *b += alpha * a);
}

/// Linear operator `v -> -D-.(a D+v) + mass v` with a site-wise
/// `(m d) x (m d)` coefficient (or its transpose).
pub struct CoefficientOperator<'a> {
    pub disc: &'a Discretization,
    pub coef: &'a [f64],
    pub transpose: bool,
    pub mass: f64,
}

impl CoefficientOperator<'_> {
    /// `flux = a (xi + D+v)` site-wise.
    pub fn flux(&self, v: &[f64], background: &[f64], out: &mut [f64]) {
        let disc = self.disc;
        let md = disc.md();
        let mut g = vec![0.0; disc.ns() * md];
        disc.nb.gradient(v, disc.m, &mut g);
        let mut gs = vec![0.0; md];
        for s in 0..disc.ns() {
            for (c, x) in gs.iter_mut().enumerate() {
                *x = g[s * md + c] + background.get(c).copied().unwrap_or(0.0);
            }
            let a = &self.coef[s * md * md..(s + 1) * md * md];
            let f = &mut out[s * md..(s + 1) * md];
            for r in 0..md {
                let mut acc = 0.0;
                for c in 0..md {
                    let arc = if self.transpose { a[c * md + r] } else { a[r * md + c] };
                    acc += arc * gs[c];
                }
                f[r] = acc;
            }
        }
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let disc = self.disc;
        let mut flux = vec![0.0; disc.ns() * disc.md()];
        self.flux(v, &[], &mut flux);
        disc.nb.divergence(&flux, disc.m, out);
        out.iter_mut().zip(v).for_each(|(o, x)| *o = self.mass * x - *o);
        disc.mask(out);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct KrylovOutcome {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Restarted GMRES for `op x = b`, left-preconditioned by `P` and
/// orthogonalized in the `P` inner product. Stops when the dual norm of the
/// residual drops below `abs_tol`.
#[allow(clippy::too_many_arguments)]
pub fn gmres(
    op: &CoefficientOperator<'_>,
    b: &[f64],
    x: &mut [f64],
    c: f64,
    abs_tol: f64,
    restart: usize,
    max_iter: usize,
) -> KrylovOutcome {
    let disc = op.disc;
    let mass = op.mass;
    let n = b.len();
    let mut total = 0usize;
    let mut ax = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut jv = vec![0.0; n];
    loop {
        op.apply(x, &mut ax);
        for i in 0..n {
            r[i] = b[i] - ax[i];
        }
        disc.mask(&mut r);
        let mut z = vec![0.0; n];
        disc.precondition(&r, c, mass, &mut z);
        let beta = dot(&r, &z).max(0.0).sqrt();
        if beta <= abs_tol || total >= max_iter || beta == 0.0 {
            return KrylovOutcome {
                iterations: total,
                residual: beta,
                converged: beta <= abs_tol,
            };
        }
        let mut basis: Vec<Vec<f64>> = vec![z.iter().map(|v| v / beta).collect()];
        let mut pbasis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k = 0;
        for j in 0..restart {
            op.apply(&basis[j], &mut jv);
            disc.precondition(&jv, c, mass, &mut w);
            let mut pw = jv.clone();
            for i in 0..=j {
                let hij = dot(&w, &pbasis[i]);
                h[i][j] = hij;
                axpy(-hij, &basis[i], &mut w);
                axpy(-hij, &pbasis[i], &mut pw);
            }
            let hn = dot(&w, &pw).max(0.0).sqrt();
            h[j + 1][j] = hn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let den = (h[j][j] * h[j][j] + h[j + 1][j] * h[j + 1][j]).sqrt();
            if den == 0.0 {
                k = j;
                break;
            }
            cs[j] = h[j][j] / den;
            sn[j] = h[j + 1][j] / den;
            h[j][j] = den;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            total += 1;
            k = j + 1;
            if g[j + 1].abs() <= abs_tol || total >= max_iter || hn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
            pbasis.push(pw.iter().map(|v| v / hn).collect());
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut acc = g[i];
            for l in i + 1..k {
                acc -= h[i][l] * y[l];
            }
            y[i] = acc / h[i][i];
        }
        for (i, yi) in y.iter().enumerate() {
            axpy(*yi, &basis[i], x);
        }
        if k == 0 {
            return KrylovOutcome {
                iterations: total,
                residual: beta,
                converged: false,
            };
        }
    }
}

/// The nonlinear problem `F(u) = 0` on one grid.
pub struct MonotoneProblem<'a> {
    pub disc: &'a Discretization,
    pub omega: &'a ParameterField,
    pub fam: &'a OperatorFamily,
    pub background: &'a [f64],
    pub mass: f64,
    pub rhs: Option<&'a [f64]>,
}

impl MonotoneProblem<'_> {
    fn c_ref(&self) -> f64 {
        let (l, ll) = self.fam.constants();
        (l * ll).sqrt()
    }

    /// `q = A(omega, G + D+u)` site-wise.
    pub fn flux(&self, u: &[f64], q: &mut [f64]) {
        let disc = self.disc;
        let md = disc.md();
        let k = self.omega.k();
        disc.nb.gradient(u, disc.m, q);
        let mut g = vec![0.0; md];
        let om = self.omega.values();
        for s in 0..disc.ns() {
            let qs = &mut q[s * md..(s + 1) * md];
            for c in 0..md {
                g[c] = qs[c] + self.background[c];
            }
            self.fam.eval(&om[s * k..(s + 1) * k], &g, qs);
        }
    }

    pub fn residual(&self, u: &[f64], q: &mut [f64], f: &mut [f64]) {
        self.flux(u, q);
        self.disc.nb.divergence(q, self.disc.m, f);
        for i in 0..f.len() {
            f[i] = self.mass * u[i] - f[i] - self.rhs.map_or(0.0, |r| r[i]);
        }
        self.disc.mask(f);
    }

    pub fn jacobian(&self, u: &[f64]) -> Vec<f64> {
        let disc = self.disc;
        let md = disc.md();
        let k = self.omega.k();
        let mut grad = vec![0.0; disc.ns() * md];
        disc.nb.gradient(u, disc.m, &mut grad);
        let mut coef = vec![0.0; disc.ns() * md * md];
        let om = self.omega.values();
        let mut g = vec![0.0; md];
        for s in 0..disc.ns() {
            for c in 0..md {
                g[c] = grad[s * md + c] + self.background[c];
            }
            self.fam
                .d_xi(&om[s * k..(s + 1) * k], &g, &mut coef[s * md * md..(s + 1) * md * md]);
        }
        coef
    }

    /// Threshold `tol (|G| sqrt(N) + |f|_*)`.
    pub fn threshold(&self, tol: f64) -> f64 {
        let g = self.background.iter().map(|v| v * v).sum::<f64>().sqrt();
        let f = self
            .rhs
            .map_or(0.0, |r| self.disc.dual_norm(r, self.c_ref(), self.mass));
        tol * (g * (self.disc.ns() as f64).sqrt() + f)
    }

    /// Solves in place; returns the flux of the solution and statistics.
    pub fn solve(&self, u: &mut [f64], opts: &SolverOptions) -> Result<(Vec<f64>, SolveStats)> {
        let disc = self.disc;
        let n = u.len();
        let c = self.c_ref();
        let mass = self.mass;
        let thr = self.threshold(opts.tol);
        let mut stats = SolveStats {
            threshold: thr,
            preconditioner: format!("fft c={c:.6} mu={mass:e}"),
            ..Default::default()
        };
        let mut q = vec![0.0; disc.ns() * disc.md()];
        if thr == 0.0 {
            u.fill(0.0);
            self.flux(u, &mut q);
            stats.method = "trivial".into();
            return Ok((q, stats));
        }
        disc.project(u, mass);
        let mut f = vec![0.0; n];
        self.residual(u, &mut q, &mut f);
        let mut r = disc.dual_norm(&f, c, mass);
        stats.history.push(r);
        let linear = self.fam.flags().linear;
        let mut prev_r = r;
        let mut eta = 0.1;

        if opts.newton {
            stats.method = "newton".into();
            let mut trial = vec![0.0; n];
            let mut ft = vec![0.0; n];
            let mut qt = vec![0.0; q.len()];
            while r > thr && stats.newton_iterations < opts.max_newton {
                let coef = self.jacobian(u);
                let op = CoefficientOperator {
                    disc,
                    coef: &coef,
                    transpose: false,
                    mass,
                };
                let target = if linear { 0.1 * thr } else { (eta * r).max(0.1 * thr) };
                let b: Vec<f64> = f.iter().map(|v| -v).collect();
                let mut delta = vec![0.0; n];
                let out = gmres(&op, &b, &mut delta, c, target, opts.restart, opts.max_krylov);
                stats.krylov_iterations += out.iterations;
                stats.newton_iterations += 1;
                let mut alpha = 1.0;
                let mut accepted = false;
                while alpha >= 1.0 / 64.0 {
                    for i in 0..n {
                        trial[i] = u[i] + alpha * delta[i];
                    }
                    disc.project(&mut trial, mass);
                    self.residual(&trial, &mut qt, &mut ft);
                    let rt = disc.dual_norm(&ft, c, mass);
                    if rt <= (1.0 - 1e-4 * alpha) * r {
                        u.copy_from_slice(&trial);
                        std::mem::swap(&mut f, &mut ft);
                        std::mem::swap(&mut q, &mut qt);
                        prev_r = r;
                        r = rt;
                        accepted = true;
                        break;
                    }
                    alpha *= 0.5;
                }
                stats.history.push(r);
                if !accepted {
                    log::debug!("newton line search failed at residual {r:e}; switching to relaxation");
                    break;
                }
                eta = (0.5 * thr / r).max((0.9 * (r / prev_r).powi(2)).min(0.1));
            }
        }

        if r > thr {
            stats.method = if opts.newton { "newton+relaxation" } else { "relaxation" }.into();
            let (l, ll) = self.fam.constants();
            let lp = (l / c).min(1.0);
            let lq = (ll / c).max(1.0);
            let tau = lp / (lq * lq);
            let mut z = vec![0.0; n];
            while r > thr && stats.relaxation_iterations < opts.max_relaxation {
                disc.precondition(&f, c, mass, &mut z);
                axpy(-tau, &z, u);
                disc.project(u, mass);
                self.residual(u, &mut q, &mut f);
                r = disc.dual_norm(&f, c, mass);
                stats.relaxation_iterations += 1;
                if stats.relaxation_iterations % 10 == 0 || r <= thr {
                    stats.history.push(r);
                }
            }
        }
        stats.residual = r;
        if r > thr || !r.is_finite() {
            return Err(Error::NotConverged {
                solver: "monotone",
                iterations: stats.newton_iterations + stats.relaxation_iterations,
                residual: r,
                threshold: thr,
                history: stats.history,
            });
        }
        Ok((q, stats))
    }
}

/// Solves `-D-.A(omega, G + D+u) + mass u = rhs` (zero mean on the torus
/// when `mass = 0`, zero boundary values on the Dirichlet box).
#[allow(clippy::too_many_arguments)]
pub fn solve_monotone_problem(
    omega: &ParameterField,
    fam: &OperatorFamily,
    background: &[f64],
    mass: f64,
    rhs: Option<&DiscreteField>,
    boundary: Boundary,
    init: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<(DiscreteField, DiscreteField, SolveStats)> {
    let grid = *omega.grid();
    let m = fam.m();
    check_family(omega, fam)?;
    if background.len() != fam.md() {
        return Err(Error::shape(format!("slope with {} entries", fam.md()), format!("{}", background.len())));
    }
    if mass < 0.0 {
        return Err(Error::InvalidArgument(format!("mass term must be non-negative, got {mass}")));
    }
    if let Some(r) = rhs {
        if r.grid() != &grid || r.ncomp() != m {
            return Err(Error::shape(format!("rhs [{m}] on n={}", grid.n()), format!("{:?}", r.shape())));
        }
        if boundary == Boundary::Periodic && mass == 0.0 {
            for (c, mean) in r.mean().iter().enumerate() {
                if mean.abs() > 1e-10 * r.max_abs().max(f64::MIN_POSITIVE) {
                    return Err(Error::NotSolvable { component: c, mean: *mean });
                }
            }
        }
    }
    let disc = Discretization::new(&grid, boundary, m);
    let problem = MonotoneProblem {
        disc: &disc,
        omega,
        fam,
        background,
        mass,
        rhs: rhs.map(|r| r.values()),
    };
    let mut u = match init {
        Some(v) if v.len() == grid.num_sites() * m => v.to_vec(),
        Some(v) => return Err(Error::shape(format!("{} values", grid.num_sites() * m), format!("{}", v.len()))),
        None => vec![0.0; grid.num_sites() * m],
    };
    let (q, stats) = problem.solve(&mut u, opts)?;
    Ok((
        DiscreteField::from_values(grid, &[m], u)?,
        DiscreteField::from_values(grid, &[m, grid.dim()], q)?,
        stats,
    ))
}

pub(crate) fn check_family(omega: &ParameterField, fam: &OperatorFamily) -> Result<()> {
    if fam.d() != omega.grid().dim() {
        return Err(Error::shape(
            format!("family dimension {}", omega.grid().dim()),
            format!("{}", fam.d()),
        ));
    }
    if omega.k() < fam.k() {
        return Err(Error::shape(format!("{} parameter channels", fam.k()), format!("{}", omega.k())));
    }
    Ok(())
}
