//! Stationary, finite-range parameter fields on the torus.
//!
//! A sample is built in three steps: lattice white noise `W` (variance
//! `h^-d` per site and channel), circular convolution `Y = beta * W` with a
//! radial kernel normalized to unit pointwise variance, and a 1-Lipschitz
//! clamp `theta : R^k -> B_1`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Boundary, DiscreteField, PeriodicGrid, SpectralSolver};
use crate::harness::seed_stream;

/// Largest admissible `|omega|`.
pub const BALL_RADIUS: f64 = 1.0 - 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelShape {
    /// `exp(-9 r^2 / (2 eps^2))`, cut off at `r = eps`.
    GaussianBump,
    /// `exp(-1 / (1 - (r/eps)^2))` on `r < eps`.
    BumpCompact,
    /// Single-site kernel; `Y` is rescaled white noise.
    Delta,
    /// Zero kernel; `Y = 0` and the field is deterministic.
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub shape: KernelShape,
    pub epsilon: f64,
    pub k: usize,
}

impl KernelSpec {
    pub fn new(shape: KernelShape, epsilon: f64, k: usize) -> Self {
        Self { shape, epsilon, k }
    }

    fn profile(&self, r: f64) -> f64 {
        let t = r / self.epsilon;
        match self.shape {
            KernelShape::GaussianBump if t < 1.0 => (-4.5 * t * t).exp(),
            KernelShape::BumpCompact if t < 1.0 => (-1.0 / (1.0 - t * t)).exp(),
            _ => 0.0,
        }
    }

    /// Kernel values on the lattice (origin at site 0, minimum image
    /// distance), normalized so that `h^d sum beta^2 = 1`.
    pub fn discretize(&self, grid: &PeriodicGrid) -> Result<Vec<f64>> {
        let ns = grid.num_sites();
        let mut beta = vec![0.0; ns];
        match self.shape {
            KernelShape::Constant => return Ok(beta),
            KernelShape::Delta => {
                beta[0] = grid.cell_volume().powf(-0.5);
                return Ok(beta);
            }
            _ => {}
        }
        let origin = [0.0; 3];
        for (s, b) in beta.iter_mut().enumerate() {
            *b = self.profile(grid.wrap_distance(s, &origin));
        }
        let mass2: f64 = beta.iter().map(|b| b * b).sum::<f64>() * grid.cell_volume();
        if !(mass2 > 0.0) {
            return Err(Error::UnderResolved {
                epsilon: self.epsilon,
                min: 4.0 * grid.spacing(),
            });
        }
        let scale = mass2.sqrt().recip();
        beta.iter_mut().for_each(|b| *b *= scale);
        Ok(beta)
    }

    fn check_resolution(&self, grid: &PeriodicGrid) -> Result<()> {
        if matches!(self.shape, KernelShape::Delta | KernelShape::Constant) {
            return Ok(());
        }
        let h = grid.spacing();
        if self.epsilon < 4.0 * h * (1.0 - 1e-12) {
            return Err(Error::UnderResolved {
                epsilon: self.epsilon,
                min: 4.0 * h,
            });
        }
        if self.epsilon > grid.length() / 4.0 * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "correlation length {} exceeds a quarter of the period {}",
                self.epsilon,
                grid.length()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClampMap {
    /// `tanh(|y|) y/|y|`.
    TanhRadial,
    /// `y`, projected radially onto the ball.
    AffineClip,
    /// `(1 + tanh y)/2` per channel, range `(0, 1)`.
    HalfTanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClampSpec {
    pub map: ClampMap,
    /// Input scaling; the clamp has Lipschitz constant `lipschitz` (half of
    /// it for `HalfTanh`).
    #[serde(default = "one")]
    pub lipschitz: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ClampSpec {
    fn default() -> Self {
        Self {
            map: ClampMap::TanhRadial,
            lipschitz: 1.0,
        }
    }
}

impl ClampSpec {
    pub fn new(map: ClampMap, lipschitz: f64) -> Self {
        Self { map, lipschitz }
    }

    pub fn apply(&self, y: &[f64], out: &mut [f64]) {
        let l = self.lipschitz;
        match self.map {
            ClampMap::TanhRadial => {
                let r = l * y.iter().map(|v| v * v).sum::<f64>().sqrt();
                let scale = if r > 0.0 { r.tanh() / r * l } else { 0.0 };
                out.iter_mut().zip(y).for_each(|(o, v)| *o = scale * v);
            }
            ClampMap::AffineClip => {
                out.iter_mut().zip(y).for_each(|(o, v)| *o = l * v);
            }
            ClampMap::HalfTanh => {
                out.iter_mut()
                    .zip(y)
                    .for_each(|(o, v)| *o = 1.0 / (1.0 + (-2.0 * l * v).exp()));
            }
        }
        let r = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r > BALL_RADIUS {
            let s = BALL_RADIUS / r;
            out.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// How a parameter field was produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub kernel: Option<KernelSpec>,
    pub clamp: Option<ClampSpec>,
    pub restricted_to: Option<f64>,
    pub subsampled: Option<usize>,
    pub note: Option<String>,
}

/// Lattice samples of `omega : torus -> B_1 in R^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterField {
    field: DiscreteField,
    epsilon: f64,
    seed: Option<u64>,
    lineage: Lineage,
}

impl ParameterField {
    /// Wraps site-major values, rejecting any site with `|omega| >= 1`.
    pub fn from_values(grid: PeriodicGrid, k: usize, values: Vec<f64>, epsilon: f64) -> Result<Self> {
        let field = DiscreteField::from_values(grid, &[k], values)?;
        Self::from_field(field, epsilon, None, Lineage::default())
    }

    pub fn constant(grid: PeriodicGrid, value: &[f64], epsilon: f64) -> Result<Self> {
        let field = DiscreteField::constant(grid, &[value.len()], value);
        Self::from_field(
            field,
            epsilon,
            None,
            Lineage {
                note: Some("constant".into()),
                ..Default::default()
            },
        )
    }

    fn from_field(field: DiscreteField, epsilon: f64, seed: Option<u64>, lineage: Lineage) -> Result<Self> {
        if field.shape().len() != 1 {
            return Err(Error::shape("[k]", format!("{:?}", field.shape())));
        }
        let k = field.ncomp();
        for s in 0..field.grid().num_sites() {
            let r2: f64 = field.values()[s * k..(s + 1) * k].iter().map(|v| v * v).sum();
            if r2 >= 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "parameter value outside the unit ball at site {s} (|omega| = {})",
                    r2.sqrt()
                )));
            }
        }
        Ok(Self {
            field,
            epsilon,
            seed,
            lineage,
        })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.field.grid()
    }

    pub fn k(&self) -> usize {
        self.field.ncomp()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn lineage(&self) -> &Lineage {
        &self.lineage
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn at(&self, site: usize) -> &[f64] {
        self.field.at(site)
    }

    pub fn as_field(&self) -> &DiscreteField {
        &self.field
    }

    /// `out(x) = self(x - offset h)`.
    pub fn translate(&self, offset: &[isize]) -> Self {
        Self {
            field: self.field.translate(offset),
            ..self.clone()
        }
    }

    /// Applies `f(site, omega)` in place at every site and re-checks the ball
    /// constraint.
    pub fn map_sites(&self, mut f: impl FnMut(usize, &mut [f64])) -> Result<Self> {
        let mut field = self.field.clone();
        let k = self.k();
        for (s, chunk) in field.values_mut().chunks_mut(k).enumerate() {
            f(s, chunk);
        }
        Self::from_field(field, self.epsilon, self.seed, self.lineage.clone())
    }

    /// Every `factor`-th site along each axis.
    pub fn subsample(&self, factor: usize) -> Result<Self> {
        let field = self.field.subsample(factor)?;
        let mut lineage = self.lineage.clone();
        lineage.subsampled = Some(factor * lineage.subsampled.unwrap_or(1));
        Ok(Self {
            field,
            lineage,
            ..self.clone()
        })
    }
}

/// Full description of a sampled field (without the grid and seed).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub epsilon: f64,
    #[serde(default = "one_usize")]
    pub k: usize,
    #[serde(default = "default_kernel")]
    pub kernel: KernelShape,
    #[serde(default)]
    pub clamp: ClampSpec,
}

fn one_usize() -> usize {
    1
}

fn default_kernel() -> KernelShape {
    KernelShape::GaussianBump
}

impl FieldSpec {
    pub fn new(epsilon: f64, kernel: KernelShape, clamp: ClampSpec) -> Self {
        Self {
            epsilon,
            k: 1,
            kernel,
            clamp,
        }
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        KernelSpec::new(self.kernel, self.epsilon, self.k)
    }

    /// White noise, convolution and clamp in one go.
    pub fn sample(&self, grid: &PeriodicGrid, seed: u64) -> Result<ParameterField> {
        let w = sample_white_noise(grid, self.k, seed);
        let y = gaussian_field(&w, &self.kernel_spec())?;
        let mut omega = clamp_to_ball(&y, &self.clamp, self.epsilon);
        omega.seed = Some(seed);
        omega.lineage.kernel = Some(self.kernel_spec());
        Ok(omega)
    }
}

/// I.i.d. `N(0, h^-d)` per site and channel from a ChaCha8 stream.
pub fn sample_white_noise(grid: &PeriodicGrid, k: usize, seed: u64) -> DiscreteField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = grid.cell_volume().powf(-0.5);
    let values = (0..grid.num_sites() * k)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect();
    DiscreteField::from_values(*grid, &[k], values).expect("finite gaussian samples")
}

/// `Y(x) = h^d sum_y beta(x - y) W(y)`, computed by FFT.
pub fn gaussian_field(w: &DiscreteField, kernel: &KernelSpec) -> Result<DiscreteField> {
    let grid = *w.grid();
    kernel.check_resolution(&grid)?;
    if w.ncomp() != kernel.k {
        return Err(Error::shape(format!("{} channels", kernel.k), format!("{}", w.ncomp())));
    }
    let mut beta = kernel.discretize(&grid)?;
    let hd = grid.cell_volume();
    beta.iter_mut().for_each(|b| *b *= hd);
    let mut out = vec![0.0; w.values().len()];
    if kernel.shape == KernelShape::Delta {
        out.iter_mut().zip(w.values()).for_each(|(o, v)| *o = beta[0] * v);
    } else if kernel.shape != KernelShape::Constant {
        SpectralSolver::new(&grid, Boundary::Periodic).circular_convolution(&beta, w.values(), w.ncomp(), &mut out);
    }
    DiscreteField::from_values(grid, w.shape(), out)
}

/// `omega(x) = theta(Y(x))`.
pub fn clamp_to_ball(y: &DiscreteField, clamp: &ClampSpec, epsilon: f64) -> ParameterField {
    let k = y.ncomp();
    let mut values = vec![0.0; y.values().len()];
    for (src, dst) in y.values().chunks(k).zip(values.chunks_mut(k)) {
        clamp.apply(src, dst);
    }
    let field = DiscreteField::from_values(*y.grid(), &[k], values).expect("clamped values are finite");
    ParameterField {
        field,
        epsilon,
        seed: None,
        lineage: Lineage {
            clamp: Some(*clamp),
            ..Default::default()
        },
    }
}

/// Keeps `omega` on the ball `B_{l_box/4}` around the torus center and sets
/// it to zero elsewhere.
pub fn restrict_pi_l(omega: &ParameterField, l_box: f64) -> Result<ParameterField> {
    if !(l_box > 0.0) || l_box > omega.grid().length() * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "restriction box {l_box} must lie in (0, {}]",
            omega.grid().length()
        )));
    }
    let grid = *omega.grid();
    let center = grid.center();
    let radius = 0.25 * l_box;
    let mut out = omega.map_sites(|s, w| {
        if grid.wrap_distance(s, &center) > radius {
            w.iter_mut().for_each(|v| *v = 0.0);
        }
    })?;
    out.lineage.restricted_to = Some(match omega.lineage.restricted_to {
        Some(prev) => prev.min(l_box),
        None => l_box,
    });
    Ok(out)
}

/// Average of channel `channel` over the lattice ball `B_r(center)`.
pub fn ball_average(omega: &ParameterField, center: &[f64; 3], r: f64, channel: usize) -> f64 {
    let grid = omega.grid();
    let k = omega.k();
    let (mut sum, mut count) = (0.0, 0usize);
    for s in 0..grid.num_sites() {
        if grid.wrap_distance(s, center) <= r {
            sum += omega.values()[s * k + channel];
            count += 1;
        }
    }
    sum / count.max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralGapEstimate {
    pub radius: f64,
    pub n_samples: usize,
    /// Sample variance of the ball average and its standard error.
    pub variance: f64,
    pub variance_se: f64,
    /// Pooled one-point variance of channel 0.
    pub pointwise_variance: f64,
    pub ratio: f64,
    pub ratio_se: f64,
}

/// Variance of `F(omega) = avg_{B_r} omega_0` normalized by
/// `(eps/r)^d` times the one-point variance.
pub fn empirical_spectral_gap_ratio<S>(sampler: S, r: f64, base_seed: u64, n_samples: usize) -> Result<SpectralGapEstimate>
where
    S: Fn(u64) -> Result<ParameterField>,
{
    if n_samples < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 samples, got {n_samples}")));
    }
    let mut f = Vec::with_capacity(n_samples);
    // Welford accumulators for the pooled one-point law
    let (mut pmean, mut pm2, mut pn) = (0.0, 0.0, 0usize);
    let mut eps = 0.0;
    let mut d = 1;
    for i in 0..n_samples {
        let omega = sampler(seed_stream(base_seed, i as u64))?;
        let grid = *omega.grid();
        eps = omega.epsilon();
        d = grid.dim();
        f.push(ball_average(&omega, &grid.center(), r, 0));
        for &v in omega.values().iter().step_by(omega.k()) {
            pn += 1;
            let delta = v - pmean;
            pmean += delta / pn as f64;
            pm2 += delta * (v - pmean);
        }
    }
    let n = n_samples as f64;
    let mean = if f.iter().all(|&v| v == f[0]) { f[0] } else { f.iter().sum::<f64>() / n };
    let dev2: Vec<f64> = f.iter().map(|v| (v - mean).powi(2)).collect();
    let m2 = dev2.iter().sum::<f64>() / n;
    let m4 = dev2.iter().map(|v| v * v).sum::<f64>() / n;
    let variance = m2 * n / (n - 1.0);
    let variance_se = ((m4 - m2 * m2).max(0.0) / n).sqrt();
    let pointwise_variance = pm2 / pn as f64;
    let norm = (eps / r).powi(d as i32) * pointwise_variance;
    let (ratio, ratio_se) = if norm > 0.0 && variance > 0.0 {
        (variance / norm, variance_se / norm)
    } else {
        (0.0, 0.0)
    };
    Ok(SpectralGapEstimate {
        radius: r,
        n_samples,
        variance,
        variance_se,
        pointwise_variance,
        ratio,
        ratio_se,
    })
}
