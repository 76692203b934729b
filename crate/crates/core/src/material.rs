//! Monotone material laws `A(omega, xi)`.
//!
//! `xi` is an `m x d` matrix stored row-major (`xi[l * d + j]`). Derivatives
//! use the same flattening: `d_xi` is `(m d) x (m d)` row-major with entry
//! `[r * md + c] = dA_r / dxi_c`, `d_omega` is `(m d) x k`, and the mixed
//! derivative is `k` consecutive `(m d) x (m d)` blocks.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::randomfield::BALL_RADIUS;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LawFlags {
    pub has_second_derivative: bool,
    pub uhlenbeck: bool,
    pub frame_indifferent: bool,
    pub linear: bool,
}

pub trait MaterialLaw: Send + Sync {
    fn name(&self) -> String;
    fn m(&self) -> usize;
    fn d(&self) -> usize;
    fn k(&self) -> usize;
    fn eval(&self, omega: &[f64], xi: &[f64], out: &mut [f64]);
    fn d_xi(&self, omega: &[f64], xi: &[f64], out: &mut [f64]);
    fn d_omega(&self, omega: &[f64], xi: &[f64], out: &mut [f64]);
    /// Mixed derivative; returns `false` when not available.
    fn d_omega_d_xi(&self, _omega: &[f64], _xi: &[f64], _out: &mut [f64]) -> bool {
        false
    }
    /// Declared `(lambda, Lambda)`.
    fn constants(&self) -> (f64, f64);
    fn flags(&self) -> LawFlags;
}

/// Shared handle to a material law.
#[derive(Clone)]
pub struct OperatorFamily {
    law: Arc<dyn MaterialLaw>,
}

impl fmt::Debug for OperatorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (l, ll) = self.constants();
        write!(
            f,
            "OperatorFamily({}, m={}, d={}, k={}, lambda={l}, Lambda={ll})",
            self.name(),
            self.m(),
            self.d(),
            self.k()
        )
    }
}

impl OperatorFamily {
    pub fn custom(law: impl MaterialLaw + 'static) -> Self {
        Self { law: Arc::new(law) }
    }

    pub fn name(&self) -> String {
        self.law.name()
    }
    pub fn m(&self) -> usize {
        self.law.m()
    }
    pub fn d(&self) -> usize {
        self.law.d()
    }
    pub fn k(&self) -> usize {
        self.law.k()
    }
    /// `m * d`, the length of a flattened slope.
    pub fn md(&self) -> usize {
        self.law.m() * self.law.d()
    }
    pub fn lambda(&self) -> f64 {
        self.law.constants().0
    }
    pub fn big_lambda(&self) -> f64 {
        self.law.constants().1
    }
    pub fn constants(&self) -> (f64, f64) {
        self.law.constants()
    }
    pub fn flags(&self) -> LawFlags {
        self.law.flags()
    }
    #[inline]
    pub fn eval(&self, omega: &[f64], xi: &[f64], out: &mut [f64]) {
        self.law.eval(omega, xi, out)
    }
    #[inline]
    pub fn d_xi(&self, omega: &[f64], xi: &[f64], out: &mut [f64]) {
        self.law.d_xi(omega, xi, out)
    }
    #[inline]
    pub fn d_omega(&self, omega: &[f64], xi: &[f64], out: &mut [f64]) {
        self.law.d_omega(omega, xi, out)
    }
    pub fn d_omega_d_xi(&self, omega: &[f64], xi: &[f64], out: &mut [f64]) -> bool {
        self.law.d_omega_d_xi(omega, xi, out)
    }

    /// Convenience: `A(omega, xi)` as a new vector.
    pub fn apply(&self, omega: &[f64], xi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.md()];
        self.eval(omega, xi, &mut out);
        out
    }

    /// Parses `rational_uhlenbeck`, `linear:midpoint`, `lin<c>` and
    /// `convex_mixture:<a>,<b>` with `<a>, <b>` of the form `lin<c>`.
    pub fn from_spec(spec: &str, m: usize, d: usize) -> Result<Self> {
        let spec = spec.trim();
        if spec == "rational_uhlenbeck" {
            return Ok(make_rational_uhlenbeck(m, d));
        }
        if spec == "linear:midpoint" {
            return Ok(make_linear_midpoint(m, d));
        }
        if let Some(rest) = spec.strip_prefix("convex_mixture:") {
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() != 2 {
                return Err(Error::InvalidArgument(format!("convex_mixture needs two components, got `{rest}`")));
            }
            let a1 = Self::from_spec(parts[0], m, d)?;
            let a2 = Self::from_spec(parts[1], m, d)?;
            return make_convex_mixture(&a1, &a2);
        }
        if let Some(c) = spec.strip_prefix("lin") {
            let c: f64 = c
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad scaled identity `{spec}`")))?;
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("scaled identity needs c > 0, got {c}")));
            }
            return Ok(Self::custom(ScaledIdentity { c, m, d }));
        }
        Err(Error::InvalidArgument(format!("unknown operator family `{spec}`")))
    }
}

/// `A(xi) = c xi`, independent of `omega` (one dummy channel).
#[derive(Clone, Debug)]
pub struct ScaledIdentity {
    pub c: f64,
    pub m: usize,
    pub d: usize,
}

impl MaterialLaw for ScaledIdentity {
    fn name(&self) -> String {
        format!("lin{}", self.c)
    }
    fn m(&self) -> usize {
        self.m
    }
    fn d(&self) -> usize {
        self.d
    }
    fn k(&self) -> usize {
        1
    }
    fn eval(&self, _omega: &[f64], xi: &[f64], out: &mut [f64]) {
        out.iter_mut().zip(xi).for_each(|(o, x)| *o = self.c * x);
    }
    fn d_xi(&self, _omega: &[f64], _xi: &[f64], out: &mut [f64]) {
        identity_into(out, self.m * self.d, self.c);
    }
    fn d_omega(&self, _omega: &[f64], _xi: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn d_omega_d_xi(&self, _omega: &[f64], _xi: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }
    fn constants(&self) -> (f64, f64) {
        (self.c, self.c)
    }
    fn flags(&self) -> LawFlags {
        LawFlags {
            has_second_derivative: true,
            uhlenbeck: true,
            frame_indifferent: true,
            linear: true,
        }
    }
}

fn identity_into(out: &mut [f64], n: usize, c: f64) {
    out.fill(0.0);
    for i in 0..n {
        out[i * n + i] = c;
    }
}

/// `w = (omega_0 + 1) / 2`.
#[inline]
fn weight(omega: &[f64]) -> f64 {
    0.5 * (omega[0] + 1.0)
}

/// `A(omega, xi) = (1 + s)/(1 + (1 + w) s) xi` with `s = |xi|^2`.
#[derive(Clone, Debug)]
pub struct RationalUhlenbeck {
    m: usize,
    d: usize,
}

impl RationalUhlenbeck {
    /// `(rho, rho_s, rho_w, rho_ws)`.
    fn rho(w: f64, s: f64) -> (f64, f64, f64, f64) {
        let den = 1.0 + (1.0 + w) * s;
        let rho = (1.0 + s) / den;
        let rho_s = -w / (den * den);
        let rho_w = -(1.0 + s) * s / (den * den);
        let rho_ws = -(1.0 + 2.0 * s) / (den * den) + 2.0 * (s + s * s) * (1.0 + w) / (den * den * den);
        (rho, rho_s, rho_w, rho_ws)
    }
}

impl MaterialLaw for RationalUhlenbeck {
    fn name(&self) -> String {
        "rational_uhlenbeck".into()
    }
    fn m(&self) -> usize {
        self.m
    }
    fn d(&self) -> usize {
        self.d
    }
    fn k(&self) -> usize {
        1
    }
    fn eval(&self, omega: &[f64], xi: &[f64], out: &mut [f64]) {
        let s: f64 = xi.iter().map(|v| v * v).sum();
        let (rho, ..) = Self::rho(weight(omega), s);
        out.iter_mut().zip(xi).for_each(|(o, x)| *o = rho * x);
    }
    fn d_xi(&self, omega: &[f64], xi: &[f64], out: &mut [f64]) {
        let n = xi.len();
        let s: f64 = xi.iter().map(|v| v * v).sum();
        let (rho, rho_s, ..) = Self::rho(weight(omega), s);
        for r in 0..n {
            for c in 0..n {
                out[r * n + c] = 2.0 * rho_s * xi[r] * xi[c];
            }
            out[r * n + r] += rho;
        }
    }
    fn d_omega(&self, omega: &[f64], xi: &[f64], out: &mut [f64]) {
        let s: f64 = xi.iter().map(|v| v * v).sum();
        let (_, _, rho_w, _) = Self::rho(weight(omega), s);
        out.iter_mut().zip(xi).for_each(|(o, x)| *o = 0.5 * rho_w * x);
    }
    fn d_omega_d_xi(&self, omega: &[f64], xi: &[f64], out: &mut [f64]) -> bool {
        let n = xi.len();
        let s: f64 = xi.iter().map(|v| v * v).sum();
        let (_, _, rho_w, rho_ws) = Self::rho(weight(omega), s);
        for r in 0..n {
            for c in 0..n {
                out[r * n + c] = rho_ws * xi[r] * xi[c];
            }
            out[r * n + r] += 0.5 * rho_w;
        }
        true
    }
    /// `d/dr (r rho(r^2))` is smallest at `w = 1`, `s = 3/2`, where it equals
    /// `7/16`; `rho <= 1` everywhere.
    fn constants(&self) -> (f64, f64) {
        (7.0 / 16.0, 1.0)
    }
    fn flags(&self) -> LawFlags {
        LawFlags {
            has_second_derivative: true,
            uhlenbeck: true,
            frame_indifferent: true,
            linear: false,
        }
    }
}

pub fn make_rational_uhlenbeck(m: usize, d: usize) -> OperatorFamily {
    OperatorFamily::custom(RationalUhlenbeck { m, d })
}

/// `w A1(xi) + (1 - w) A2(xi)`; the components are evaluated at `omega = 0`.
#[derive(Clone)]
pub struct ConvexMixture {
    a1: OperatorFamily,
    a2: OperatorFamily,
}

impl ConvexMixture {
    fn zero(&self) -> Vec<f64> {
        vec![0.0; self.a1.k().max(self.a2.k())]
    }
}

impl MaterialLaw for ConvexMixture {
    fn name(&self) -> String {
        format!("convex_mixture:{},{}", self.a1.name(), self.a2.name())
    }
    fn m(&self) -> usize {
        self.a1.m()
    }
    fn d(&self) -> usize {
        self.a1.d()
    }
    fn k(&self) -> usize {
        1
    }
    fn eval(&self, omega: &[f64], xi: &[f64], out: &mut [f64]) {
        let w = weight(omega);
        let z = self.zero();
        let mut b = vec![0.0; out.len()];
        self.a1.eval(&z, xi, out);
        self.a2.eval(&z, xi, &mut b);
        out.iter_mut().zip(&b).for_each(|(o, v)| *o = w * *o + (1.0 - w) * v);
    }
    fn d_xi(&self, omega: &[f64], xi: &[f64], out: &mut [f64]) {
        let w = weight(omega);
        let z = self.zero();
        let mut b = vec![0.0; out.len()];
        self.a1.d_xi(&z, xi, out);
        self.a2.d_xi(&z, xi, &mut b);
        out.iter_mut().zip(&b).for_each(|(o, v)| *o = w * *o + (1.0 - w) * v);
    }
    fn d_omega(&self, _omega: &[f64], xi: &[f64], out: &mut [f64]) {
        let z = self.zero();
        let mut b = vec![0.0; out.len()];
        self.a1.eval(&z, xi, out);
        self.a2.eval(&z, xi, &mut b);
        out.iter_mut().zip(&b).for_each(|(o, v)| *o = 0.5 * (*o - v));
    }
    fn d_omega_d_xi(&self, _omega: &[f64], xi: &[f64], out: &mut [f64]) -> bool {
        let z = self.zero();
        let mut b = vec![0.0; out.len()];
        self.a1.d_xi(&z, xi, out);
        self.a2.d_xi(&z, xi, &mut b);
        out.iter_mut().zip(&b).for_each(|(o, v)| *o = 0.5 * (*o - v));
        true
    }
    fn constants(&self) -> (f64, f64) {
        (
            self.a1.lambda().min(self.a2.lambda()),
            self.a1.big_lambda().max(self.a2.big_lambda()),
        )
    }
    fn flags(&self) -> LawFlags {
        let (f1, f2) = (self.a1.flags(), self.a2.flags());
        LawFlags {
            has_second_derivative: true,
            uhlenbeck: f1.uhlenbeck && f2.uhlenbeck,
            frame_indifferent: f1.frame_indifferent && f2.frame_indifferent,
            linear: f1.linear && f2.linear,
        }
    }
}

pub fn make_convex_mixture(a1: &OperatorFamily, a2: &OperatorFamily) -> Result<OperatorFamily> {
    if a1.m() != a2.m() || a1.d() != a2.d() {
        return Err(Error::shape(
            format!("m={}, d={}", a1.m(), a1.d()),
            format!("m={}, d={}", a2.m(), a2.d()),
        ));
    }
    Ok(OperatorFamily::custom(ConvexMixture {
        a1: a1.clone(),
        a2: a2.clone(),
    }))
}

type MatrixFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// `A(omega, xi) = a(omega) xi` with `a(omega)` an `(m d) x (m d)` matrix.
#[derive(Clone)]
pub struct LinearLaw {
    name: String,
    m: usize,
    d: usize,
    k: usize,
    a: MatrixFn,
    /// `k` blocks `da/domega_j`.
    da: MatrixFn,
    constants: (f64, f64),
    isotropic: bool,
}

impl LinearLaw {
    fn matrix(&self, omega: &[f64]) -> Vec<f64> {
        let n = self.m * self.d;
        let mut a = vec![0.0; n * n];
        (self.a)(omega, &mut a);
        a
    }
}

impl MaterialLaw for LinearLaw {
    fn name(&self) -> String {
        self.name.clone()
    }
    fn m(&self) -> usize {
        self.m
    }
    fn d(&self) -> usize {
        self.d
    }
    fn k(&self) -> usize {
        self.k
    }
    fn eval(&self, omega: &[f64], xi: &[f64], out: &mut [f64]) {
        let n = xi.len();
        let a = self.matrix(omega);
        for r in 0..n {
            out[r] = (0..n).map(|c| a[r * n + c] * xi[c]).sum();
        }
    }
    fn d_xi(&self, omega: &[f64], _xi: &[f64], out: &mut [f64]) {
        (self.a)(omega, out);
    }
    fn d_omega(&self, omega: &[f64], xi: &[f64], out: &mut [f64]) {
        let n = xi.len();
        let mut da = vec![0.0; self.k * n * n];
        (self.da)(omega, &mut da);
        for r in 0..n {
            for j in 0..self.k {
                out[r * self.k + j] = (0..n).map(|c| da[j * n * n + r * n + c] * xi[c]).sum();
            }
        }
    }
    fn d_omega_d_xi(&self, omega: &[f64], _xi: &[f64], out: &mut [f64]) -> bool {
        (self.da)(omega, out);
        true
    }
    fn constants(&self) -> (f64, f64) {
        self.constants
    }
    fn flags(&self) -> LawFlags {
        LawFlags {
            has_second_derivative: true,
            uhlenbeck: self.isotropic,
            frame_indifferent: self.isotropic,
            linear: true,
        }
    }
}

/// Linear family from a matrix-valued `a(omega)` and its `omega`-derivative.
/// The declared `(lambda, Lambda)` are audited against the eigenvalues of the
/// symmetric matrices `a(omega)` on a sweep over the ball.
#[allow(clippy::too_many_arguments)]
pub fn make_linear(
    name: &str,
    m: usize,
    d: usize,
    k: usize,
    a: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    da: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    constants: (f64, f64),
    isotropic: bool,
) -> Result<OperatorFamily> {
    let law = LinearLaw {
        name: name.to_string(),
        m,
        d,
        k,
        a: Arc::new(a),
        da: Arc::new(da),
        constants,
        isotropic,
    };
    let n = m * d;
    let (lambda, big_lambda) = constants;
    let mut rng = ChaCha8Rng::seed_from_u64(0x11ea);
    let mut probes: Vec<Vec<f64>> = Vec::new();
    for i in 0..=64 {
        let mut w = vec![0.0; k];
        w[0] = BALL_RADIUS * (2.0 * i as f64 / 64.0 - 1.0);
        probes.push(w);
    }
    for _ in 0..200 {
        probes.push(sample_ball(&mut rng, k, BALL_RADIUS));
    }
    for w in &probes {
        let a = DMatrix::from_row_slice(n, n, &law.matrix(w));
        if (&a - a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
            return Err(Error::AssumptionViolated(format!("a(omega) is not symmetric at omega = {w:?}")));
        }
        let eig = a.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if lo < lambda * (1.0 - 1e-12) || hi > big_lambda * (1.0 + 1e-12) {
            return Err(Error::AssumptionViolated(format!(
                "eigenvalues of a(omega) in [{lo}, {hi}] leave [{lambda}, {big_lambda}] at omega = {w:?}"
            )));
        }
    }
    Ok(OperatorFamily::custom(law))
}

/// `a(omega) = (3 + omega_0)/2 Id`, so `lambda = 1`, `Lambda = 2`.
pub fn make_linear_midpoint(m: usize, d: usize) -> OperatorFamily {
    let n = m * d;
    make_linear(
        "linear:midpoint",
        m,
        d,
        1,
        move |w, out| identity_into(out, n, 0.5 * (3.0 + w[0])),
        move |_, out| identity_into(out, n, 0.5),
        (1.0, 2.0),
        true,
    )
    .expect("midpoint family is admissible")
}

/// Uniform sample of the ball of radius `r` in `R^n`.
pub fn sample_ball<R: Rng>(rng: &mut R, n: usize, r: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    let rad = r * rng.random::<f64>().powf(1.0 / n as f64);
    v.iter_mut().for_each(|x| *x *= rad / norm);
    v
}

/// Haar-distributed rotation in `SO(n)` (QR of a Gaussian matrix).
pub fn random_rotation<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

/// `O xi` for `xi` an `m x d` row-major matrix and `O` in `SO(m)`.
pub fn rotate_left(o: &DMatrix<f64>, xi: &[f64], d: usize) -> Vec<f64> {
    let m = o.nrows();
    let x = DMatrix::from_row_slice(m, d, xi);
    let y = o * x;
    row_major(&y)
}

/// `xi O` for `O` in `SO(d)`.
pub fn rotate_right(o: &DMatrix<f64>, xi: &[f64], m: usize) -> Vec<f64> {
    let d = o.nrows();
    let x = DMatrix::from_row_slice(m, d, xi);
    row_major(&(x * o))
}

fn row_major(a: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            out.push(a[(i, j)]);
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn spectral_norm(rows: usize, cols: usize, data: &[f64]) -> f64 {
    DMatrix::from_row_slice(rows, cols, data).singular_values().max()
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub family: String,
    pub n_probe: usize,
    pub declared: (f64, f64),
    /// `min (A(xi2) - A(xi1)).(xi2 - xi1) / |xi2 - xi1|^2`.
    pub observed_lambda: f64,
    /// `max |A(xi2) - A(xi1)| / |xi2 - xi1|`.
    pub observed_lipschitz: f64,
    pub max_at_origin: f64,
    /// `max |d_omega A| / |xi|`.
    pub d_omega_ratio: f64,
    pub mixed_norm: Option<f64>,
    /// Relative mismatch between analytic and central-difference derivatives.
    pub fd_error_xi: f64,
    pub fd_error_omega: f64,
    pub frame_error: Option<f64>,
    pub a1: bool,
    pub a2: bool,
    pub a3: bool,
    pub derivatives: bool,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.a1 && self.a2 && self.a3 && self.derivatives
    }
}

const REL_TOL: f64 = 1e-6;

/// Probes (A1)-(A3) and the analytic derivatives at `n_probe` random points
/// (`|xi| <= 10`, `omega` uniform in the ball).
pub fn validate_assumptions(fam: &OperatorFamily, n_probe: usize, seed: u64) -> Result<ValidationReport> {
    if n_probe < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 probes, got {n_probe}")));
    }
    let (n, k) = (fam.md(), fam.k());
    let (lambda, big_lambda) = fam.constants();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = ValidationReport {
        family: fam.name(),
        n_probe,
        declared: (lambda, big_lambda),
        observed_lambda: f64::INFINITY,
        observed_lipschitz: 0.0,
        max_at_origin: 0.0,
        d_omega_ratio: 0.0,
        mixed_norm: None,
        fd_error_xi: 0.0,
        fd_error_omega: 0.0,
        frame_error: None,
        a1: false,
        a2: false,
        a3: false,
        derivatives: false,
    };
    let zero = vec![0.0; n];
    let (mut a1, mut a2) = (vec![0.0; n], vec![0.0; n]);
    let mut jac = vec![0.0; n * n];
    let mut dom = vec![0.0; n * k];
    let mut mixed = vec![0.0; n * n * k];
    let (mut ap, mut am) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..n_probe {
        let omega = sample_ball(&mut rng, k, BALL_RADIUS);
        let x1 = sample_ball(&mut rng, n, 10.0);
        let x2 = sample_ball(&mut rng, n, 10.0);
        fam.eval(&omega, &x1, &mut a1);
        fam.eval(&omega, &x2, &mut a2);
        let dx: Vec<f64> = x2.iter().zip(&x1).map(|(a, b)| a - b).collect();
        let da: Vec<f64> = a2.iter().zip(&a1).map(|(a, b)| a - b).collect();
        let dx2 = dx.iter().map(|v| v * v).sum::<f64>();
        if dx2 > 0.0 {
            let mono = da.iter().zip(&dx).map(|(a, b)| a * b).sum::<f64>() / dx2;
            rep.observed_lambda = rep.observed_lambda.min(mono);
            rep.observed_lipschitz = rep.observed_lipschitz.max(norm(&da) / dx2.sqrt());
        }
        fam.eval(&omega, &zero, &mut a1);
        rep.max_at_origin = rep.max_at_origin.max(norm(&a1));

        // analytic vs central differences
        let step = 1e-5 * (1.0 + norm(&x1));
        fam.d_xi(&omega, &x1, &mut jac);
        let mut err: f64 = 0.0;
        for c in 0..n {
            let mut xp = x1.clone();
            let mut xm = x1.clone();
            xp[c] += step;
            xm[c] -= step;
            fam.eval(&omega, &xp, &mut ap);
            fam.eval(&omega, &xm, &mut am);
            for r in 0..n {
                let fd = (ap[r] - am[r]) / (2.0 * step);
                err = err.max((fd - jac[r * n + c]).abs());
            }
        }
        rep.fd_error_xi = rep.fd_error_xi.max(err / (1.0 + norm(&jac)));

        fam.d_omega(&omega, &x1, &mut dom);
        let xn = norm(&x1);
        if xn > 0.0 {
            rep.d_omega_ratio = rep.d_omega_ratio.max(spectral_norm(n, k, &dom) / xn);
        }
        let wstep = 1e-5;
        let mut err: f64 = 0.0;
        for j in 0..k {
            let mut wp = omega.clone();
            let mut wm = omega.clone();
            wp[j] += wstep;
            wm[j] -= wstep;
            fam.eval(&wp, &x1, &mut ap);
            fam.eval(&wm, &x1, &mut am);
            for r in 0..n {
                let fd = (ap[r] - am[r]) / (2.0 * wstep);
                err = err.max((fd - dom[r * k + j]).abs());
            }
        }
        rep.fd_error_omega = rep.fd_error_omega.max(err / (1.0 + norm(&dom)));

        if fam.d_omega_d_xi(&omega, &x1, &mut mixed) {
            let mut worst: f64 = rep.mixed_norm.unwrap_or(0.0);
            for j in 0..k {
                worst = worst.max(spectral_norm(n, n, &mixed[j * n * n..(j + 1) * n * n]));
            }
            rep.mixed_norm = Some(worst);
        }
    }
    if fam.flags().frame_indifferent && fam.m() > 1 {
        rep.frame_error = Some(frame_indifference_error(fam, 100, seed ^ 0xf4a3e)?);
    }
    rep.a1 = rep.observed_lambda >= lambda * (1.0 - REL_TOL);
    rep.a2 = rep.observed_lipschitz <= big_lambda * (1.0 + REL_TOL) && rep.max_at_origin <= 1e-12;
    rep.a3 = rep.d_omega_ratio <= big_lambda * (1.0 + REL_TOL)
        && rep.mixed_norm.is_none_or(|v| v <= big_lambda * (1.0 + REL_TOL));
    rep.derivatives = rep.fd_error_xi <= REL_TOL && rep.fd_error_omega <= REL_TOL;
    Ok(rep)
}

/// `max |A(omega, O xi) - O A(omega, xi)|` over random rotations in `SO(m)`.
pub fn frame_indifference_error(fam: &OperatorFamily, n_rot: usize, seed: u64) -> Result<f64> {
    let (m, d, k) = (fam.m(), fam.d(), fam.k());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_rot {
        let o = random_rotation(&mut rng, m);
        let omega = sample_ball(&mut rng, k, BALL_RADIUS);
        let xi = sample_ball(&mut rng, m * d, 10.0);
        let lhs = fam.apply(&omega, &rotate_left(&o, &xi, d));
        let rhs = rotate_left(&o, &fam.apply(&omega, &xi), d);
        worst = worst.max(lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct NegativeIdentity;

    impl MaterialLaw for NegativeIdentity {
        fn name(&self) -> String {
            "neg".into()
        }
        fn m(&self) -> usize {
            1
        }
        fn d(&self) -> usize {
            2
        }
        fn k(&self) -> usize {
            1
        }
        fn eval(&self, _: &[f64], xi: &[f64], out: &mut [f64]) {
            out.iter_mut().zip(xi).for_each(|(o, x)| *o = -x);
        }
        fn d_xi(&self, _: &[f64], _: &[f64], out: &mut [f64]) {
            identity_into(out, 2, -1.0);
        }
        fn d_omega(&self, _: &[f64], _: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
        fn constants(&self) -> (f64, f64) {
            (1.0, 1.0)
        }
        fn flags(&self) -> LawFlags {
            LawFlags::default()
        }
    }

    #[test]
    fn mixture_endpoints_and_midpoint() {
        let fam = OperatorFamily::from_spec("convex_mixture:lin1,lin2", 1, 2).unwrap();
        let xi = [0.3, -1.2];
        assert_eq!(fam.apply(&[1.0], &xi), vec![0.3, -1.2]);
        let mid = fam.apply(&[0.0], &xi);
        assert!((mid[0] - 0.45).abs() < 1e-15 && (mid[1] + 1.8).abs() < 1e-15);
        assert_eq!(fam.apply(&[0.4], &[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn rational_reduces_to_identity_at_w_zero() {
        let fam = make_rational_uhlenbeck(1, 3);
        let xi = [1.0, -2.0, 0.5];
        let a = fam.apply(&[-1.0], &xi);
        for (x, y) in a.iter().zip(&xi) {
            assert!((x - y).abs() < 1e-15);
        }
        assert_eq!(fam.apply(&[0.3], &[0.0; 3]), vec![0.0; 3]);
    }

    #[test]
    fn rational_lambda_is_attained() {
        // 1D: derivative of r rho(r^2) at w = 1, s = 3/2.
        let fam = make_rational_uhlenbeck(1, 1);
        let mut j = [0.0];
        fam.d_xi(&[1.0], &[1.5f64.sqrt()], &mut j);
        assert!((j[0] - 7.0 / 16.0).abs() < 1e-14);
    }

    #[test]
    fn frame_indifference() {
        let fam = make_rational_uhlenbeck(3, 2);
        assert!(frame_indifference_error(&fam, 100, 4).unwrap() <= 1e-12);
    }

    #[test]
    fn linear_midpoint_passes() {
        let fam = make_linear_midpoint(1, 2);
        let rep = validate_assumptions(&fam, 500, 1).unwrap();
        assert!(rep.all_pass(), "{rep:?}");
        assert!(rep.d_omega_ratio <= 0.5 + 1e-12);
        assert_eq!(fam.apply(&[0.2], &[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn linear_rejects_bad_constants() {
        let r = make_linear(
            "bad",
            1,
            1,
            1,
            |w, out| out[0] = 0.5 * (3.0 + w[0]),
            |_, out| out[0] = 0.5,
            (1.2, 2.0),
            true,
        );
        assert!(r.is_err());
    }

    #[test]
    fn negative_identity_fails_monotonicity() {
        let fam = OperatorFamily::custom(NegativeIdentity);
        let rep = validate_assumptions(&fam, 100, 2).unwrap();
        assert!(!rep.a1);
        assert!(rep.observed_lambda < 0.0);
    }

    #[test]
    fn rational_passes_on_many_probes() {
        let fam = make_rational_uhlenbeck(1, 1);
        let rep = validate_assumptions(&fam, 10_000, 3).unwrap();
        assert!(rep.a1 && rep.a2 && rep.a3 && rep.derivatives, "{rep:?}");
    }

    #[test]
    fn validator_requires_enough_probes() {
        assert!(validate_assumptions(&make_linear_midpoint(1, 1), 10, 0).is_err());
    }

    #[test]
    fn spec_strings() {
        for s in ["rational_uhlenbeck", "linear:midpoint", "convex_mixture:lin1,lin2", "lin3"] {
            assert!(OperatorFamily::from_spec(s, 1, 2).is_ok(), "{s}");
        }
        assert!(OperatorFamily::from_spec("nope", 1, 1).is_err());
        assert!(OperatorFamily::from_spec("convex_mixture:lin1", 1, 1).is_err());
    }

    #[test]
    fn central_differences_are_second_order() {
        let fam = make_rational_uhlenbeck(1, 2);
        let omega = [0.3];
        let xi = [0.7, -0.4];
        let mut jac = [0.0; 4];
        fam.d_xi(&omega, &xi, &mut jac);
        let err = |h: f64| {
            let mut e: f64 = 0.0;
            for c in 0..2 {
                let mut xp = xi;
                let mut xm = xi;
                xp[c] += h;
                xm[c] -= h;
                let (ap, am) = (fam.apply(&omega, &xp), fam.apply(&omega, &xm));
                for r in 0..2 {
                    e = e.max(((ap[r] - am[r]) / (2.0 * h) - jac[r * 2 + c]).abs());
                }
            }
            e
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }
}
