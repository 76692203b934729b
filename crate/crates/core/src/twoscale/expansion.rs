//! Two-scale expansion `u_hat = u_bar + sum_k eta_k (phi_k - c_k)` and its
//! residual flux.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::partition::{ball_sites, local_slopes, LocalSlopes, PartitionOfUnity};
use crate::corrector::{CorrectorProblem, SolverOptions};
use crate::error::{Error, Result};
use crate::grid::{DiscreteField, Neighbors};
use crate::homog::EffectiveLaw;
use crate::material::OperatorFamily;
use crate::randomfield::ParameterField;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recentering {
    /// `c_k` is the average of `phi_k` over `B_eps(k)`.
    #[default]
    LocalBall,
    /// Zero-mean correctors, no shift.
    Global,
}

#[derive(Clone, Debug)]
pub struct ExpansionOptions {
    pub tol: f64,
    pub recenter: Recentering,
    /// Share one corrector between slopes equal up to `1e-12`.
    pub dedup: bool,
    /// Constant macroscopic slope added to `D+ u_bar`.
    pub background: Option<Vec<f64>>,
}

impl Default for ExpansionOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            recenter: Recentering::LocalBall,
            dedup: true,
            background: None,
        }
    }
}

/// One solved corrector shared by all centers with the same slope.
#[derive(Clone, Debug)]
pub struct LocalCorrector {
    pub xi: Vec<f64>,
    pub phi: DiscreteField,
    pub sigma: DiscreteField,
    pub flux_average: Vec<f64>,
    pub residual: f64,
}

/// Per-center residual audit.
#[derive(Clone, Debug, Serialize)]
pub struct CellResidual {
    pub center: usize,
    /// `int eta_l |R|^2`.
    pub lhs: f64,
    /// `delta^2 int_{B_2delta} |D+D+ u_bar|^2`.
    pub hessian_term: f64,
    /// `delta^-2 sum_k int_{B_6delta} |phi_l - phi_k|^2 + |sigma_l - sigma_k|^2`.
    pub corrector_term: f64,
}

impl CellResidual {
    pub fn rhs(&self) -> f64 {
        self.hessian_term + self.corrector_term
    }
}

#[derive(Clone, Debug)]
pub struct TwoScaleExpansion {
    pub u_hom: DiscreteField,
    pub slopes: LocalSlopes,
    /// Center `k` uses `correctors[corrector_of[k]]`.
    pub corrector_of: Vec<usize>,
    pub correctors: Vec<LocalCorrector>,
    /// `c_k` per center.
    pub shifts: Vec<Vec<f64>>,
    pub u_hat: DiscreteField,
    /// `R = I + II + III`, shape `[m, d]`.
    pub residual: DiscreteField,
    pub term_norms: [f64; 3],
    pub cells: Vec<CellResidual>,
    /// `max_l lhs / rhs` over cells with nonzero right-hand side.
    pub c_hat_max: f64,
    /// `sum lhs / sum rhs`.
    pub c_hat_global: f64,
    /// `max_k |qbar_k - A_hat(xi_k)|`; zero without a reference law.
    pub law_defect: f64,
}

impl TwoScaleExpansion {
    /// `(int |R|^2)^{1/2}`.
    pub fn residual_norm(&self) -> f64 {
        let hd = self.u_hom.grid().cell_volume();
        (self.residual.values().iter().map(|v| v * v).sum::<f64>() * hd).sqrt()
    }

    pub fn corrector(&self, k: usize) -> &LocalCorrector {
        &self.correctors[self.corrector_of[k]]
    }

    /// Rebuilds `u_hom + sum_k eta_k (phi_k - c_k)` from the stored parts.
    pub fn reassemble(&self, pu: &PartitionOfUnity) -> DiscreteField {
        let m = self.u_hom.ncomp();
        let mut out = self.u_hom.clone();
        let v = out.values_mut();
        for (k, w) in pu.weights.iter().enumerate() {
            let phi = self.corrector(k).phi.values();
            for &(s, e) in w {
                for l in 0..m {
                    v[s * m + l] += e * (phi[s * m + l] - self.shifts[k][l]);
                }
            }
        }
        out
    }
}

fn slope_key(xi: &[f64]) -> Vec<i64> {
    xi.iter().map(|x| (x / 1e-12).round() as i64).collect()
}

/// Builds the expansion, solving one periodic corrector per distinct local
/// slope. Without `a_hom`, `A_hom(D+ u_bar)` in the residual is replaced by
/// the partition interpolant `sum_k eta_k qbar_k`.
pub fn two_scale_expand(
    u_hom: &DiscreteField,
    pu: &PartitionOfUnity,
    omega: &ParameterField,
    fam: &OperatorFamily,
    a_hom: Option<&EffectiveLaw>,
    opts: &ExpansionOptions,
) -> Result<TwoScaleExpansion> {
    let grid = *omega.grid();
    if u_hom.grid() != &grid || pu.grid != grid {
        return Err(Error::InvalidArgument("u_hom, partition and field must share one grid".into()));
    }
    let (m, d) = (fam.m(), grid.dim());
    let md = m * d;
    if u_hom.ncomp() != m {
        return Err(Error::shape(format!("[{m}]"), format!("{:?}", u_hom.shape())));
    }
    if let Some(a) = a_hom {
        if a.md() != md {
            return Err(Error::shape(format!("law on {md} entries"), format!("{}", a.md())));
        }
    }
    let ns = grid.num_sites();
    let hd = grid.cell_volume();
    let h = grid.spacing();
    let nb = Neighbors::new(&grid);

    // Macroscopic gradient G.
    let mut g = vec![0.0; ns * md];
    nb.gradient(u_hom.values(), m, &mut g);
    if let Some(bg) = &opts.background {
        if bg.len() != md {
            return Err(Error::shape(format!("background with {md} entries"), format!("{}", bg.len())));
        }
        for s in 0..ns {
            for c in 0..md {
                g[s * md + c] += bg[c];
            }
        }
    }
    let gf = DiscreteField::from_values(grid, &[m, d], g.clone())?;
    let slopes = local_slopes(&gf, pu)?;

    let mut corrector_of = Vec::with_capacity(pu.len());
    let mut unique: Vec<Vec<f64>> = Vec::new();
    let mut owner: Vec<usize> = Vec::new();
    let mut index: HashMap<Vec<i64>, usize> = HashMap::new();
    for (k, xi) in slopes.xi.iter().enumerate() {
        let j = if opts.dedup {
            *index.entry(slope_key(xi)).or_insert_with(|| {
                unique.push(xi.clone());
                owner.push(k);
                unique.len() - 1
            })
        } else {
            unique.push(xi.clone());
            owner.push(k);
            unique.len() - 1
        };
        corrector_of.push(j);
    }

    let sopts = SolverOptions::with_tol(opts.tol);
    let correctors: Vec<LocalCorrector> = unique
        .par_iter()
        .zip(owner.par_iter())
        .map(|(xi, &k)| {
            let set = CorrectorProblem::new(omega, fam, xi)
                .solve(&sopts)
                .and_then(|c| c.with_flux_corrector())
                .map_err(|e| Error::Task {
                    task: format!("corrector for center {k} (xi = {xi:?})"),
                    source: Box::new(e),
                })?;
            Ok(LocalCorrector {
                xi: xi.clone(),
                flux_average: set.flux_average(),
                residual: set.residual_norm,
                phi: set.phi,
                sigma: set.sigma.expect("flux corrector attached"),
            })
        })
        .collect::<Result<_>>()?;

    let eps = omega.epsilon();
    let shifts: Vec<Vec<f64>> = (0..pu.len())
        .map(|k| match opts.recenter {
            Recentering::Global => vec![0.0; m],
            Recentering::LocalBall => {
                let sites = ball_sites(&grid, &pu.centers[k], eps);
                let phi = correctors[corrector_of[k]].phi.values();
                (0..m)
                    .map(|l| sites.iter().map(|&s| phi[s * m + l]).sum::<f64>() / sites.len() as f64)
                    .collect()
            }
        })
        .collect();

    // Recentered correctors per unique slope would need one copy per shift;
    // keep shifts separate and subtract on the fly.
    let phi_of = |k: usize, s: usize, l: usize| correctors[corrector_of[k]].phi.values()[s * m + l] - shifts[k][l];

    let by_site = pu.by_site();
    let eta_at = |k: usize, s: usize| by_site[s].iter().find(|p| p.0 == k).map_or(0.0, |p| p.1);

    // u_hat.
    let mut u_hat = u_hom.clone();
    {
        let v = u_hat.values_mut();
        for s in 0..ns {
            for &(k, e) in &by_site[s] {
                for l in 0..m {
                    v[s * m + l] += e * phi_of(k, s, l);
                }
            }
        }
    }
    let mut grad_hat = vec![0.0; ns * md];
    nb.gradient(u_hat.values(), m, &mut grad_hat);
    if let Some(bg) = &opts.background {
        for s in 0..ns {
            for c in 0..md {
                grad_hat[s * md + c] += bg[c];
            }
        }
    }

    // Corrector gradients per unique slope.
    let dphi: Vec<Vec<f64>> = correctors
        .iter()
        .map(|c| {
            let mut out = vec![0.0; ns * md];
            nb.gradient(c.phi.values(), m, &mut out);
            out
        })
        .collect();

    let mut law_defect: f64 = 0.0;
    if let Some(a) = a_hom {
        for c in &correctors {
            let v = a.eval(&c.xi)?;
            for (x, y) in v.iter().zip(&c.flux_average) {
                law_defect = law_defect.max((x - y).abs());
            }
        }
    }

    let mut residual = vec![0.0; ns * md];
    let mut sq = [0.0f64; 3];
    let mut a_buf = vec![0.0; md];
    let mut arg = vec![0.0; md];
    for s in 0..ns {
        let om = omega.at(s);
        let gs = &g[s * md..(s + 1) * md];
        // Bumps seen at s or through a forward difference.
        let mut ks: Vec<usize> = by_site[s].iter().map(|p| p.0).collect();
        for a in 0..d {
            for p in &by_site[nb.forward(a, s)] {
                if !ks.contains(&p.0) {
                    ks.push(p.0);
                }
            }
        }
        let mut t1 = vec![0.0; md];
        let mut t2 = vec![0.0; md];
        let mut t3 = vec![0.0; md];
        // G + sum eta Phi.
        let mut gp = gs.to_vec();
        for &(k, e) in &by_site[s] {
            let dp = &dphi[corrector_of[k]][s * md..(s + 1) * md];
            for c in 0..md {
                gp[c] += e * dp[c];
            }
        }
        let a_hat_g: Vec<f64> = match a_hom {
            Some(a) => a.eval(gs)?,
            None => {
                let mut v = vec![0.0; md];
                for &(k, e) in &by_site[s] {
                    for c in 0..md {
                        v[c] += e * correctors[corrector_of[k]].flux_average[c];
                    }
                }
                v
            }
        };
        for &(k, e) in &by_site[s] {
            let cor = &correctors[corrector_of[k]];
            let dp = &dphi[corrector_of[k]][s * md..(s + 1) * md];
            for c in 0..md {
                t1[c] += e * (cor.flux_average[c] - a_hat_g[c]);
            }
            for c in 0..md {
                arg[c] = gs[c] + dp[c];
            }
            fam.eval(om, &arg, &mut a_buf);
            let a_g_phi = a_buf.clone();
            for c in 0..md {
                arg[c] = cor.xi[c] + dp[c];
            }
            fam.eval(om, &arg, &mut a_buf);
            for c in 0..md {
                t1[c] += e * (a_g_phi[c] - a_buf[c]);
                t3[c] -= e * a_g_phi[c];
            }
        }
        fam.eval(om, &gp, &mut a_buf);
        for c in 0..md {
            t3[c] += a_buf[c];
            t2[c] -= a_buf[c];
        }
        fam.eval(om, &grad_hat[s * md..(s + 1) * md], &mut a_buf);
        for c in 0..md {
            t2[c] += a_buf[c];
        }
        // -sum_k sigma_k D+eta_k, contracting the last axis of sigma.
        for &k in &ks {
            let e0 = eta_at(k, s);
            let sig = correctors[corrector_of[k]].sigma.values();
            for i in 0..d {
                let de = (eta_at(k, nb.forward(i, s)) - e0) / h;
                if de == 0.0 {
                    continue;
                }
                for l in 0..m {
                    for j in 0..d {
                        t2[l * d + j] -= sig[((s * m + l) * d + j) * d + i] * de;
                    }
                }
            }
        }
        for c in 0..md {
            residual[s * md + c] = t1[c] + t2[c] + t3[c];
            sq[0] += t1[c] * t1[c];
            sq[1] += t2[c] * t2[c];
            sq[2] += t3[c] * t3[c];
        }
    }
    let term_norms = sq.map(|v| (v * hd).sqrt());

    // Hessian D+D+ u_bar.
    let mut hess = vec![0.0; ns * md * d];
    nb.gradient(&g, md, &mut hess);
    let delta = pu.delta;
    let cells: Vec<CellResidual> = (0..pu.len())
        .into_par_iter()
        .map(|l| {
            let lhs = pu.weights[l]
                .iter()
                .map(|&(s, e)| e * residual[s * md..(s + 1) * md].iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                * hd;
            let b2 = ball_sites(&grid, &pu.centers[l], 2.0 * delta);
            let hessian_term = delta
                * delta
                * hd
                * b2
                    .iter()
                    .map(|&s| hess[s * md * d..(s + 1) * md * d].iter().map(|v| v * v).sum::<f64>())
                    .sum::<f64>();
            let b6 = ball_sites(&grid, &pu.centers[l], 6.0 * delta);
            let mut corrector_term = 0.0;
            let jl = corrector_of[l];
            for k in pu.neighbors(l) {
                let jk = corrector_of[k];
                let (pl, pk) = (correctors[jl].phi.values(), correctors[jk].phi.values());
                let (sl, sk) = (correctors[jl].sigma.values(), correctors[jk].sigma.values());
                let nsig = md * d;
                let mut acc = 0.0;
                for &s in &b6 {
                    for c in 0..m {
                        let diff = (pl[s * m + c] - shifts[l][c]) - (pk[s * m + c] - shifts[k][c]);
                        acc += diff * diff;
                    }
                    if jl != jk {
                        for c in 0..nsig {
                            let diff = sl[s * nsig + c] - sk[s * nsig + c];
                            acc += diff * diff;
                        }
                    }
                }
                corrector_term += acc * hd / (delta * delta);
            }
            CellResidual {
                center: l,
                lhs,
                hessian_term,
                corrector_term,
            }
        })
        .collect();
    let mut c_hat_max: f64 = 0.0;
    let (mut sl, mut sr) = (0.0, 0.0);
    for c in &cells {
        sl += c.lhs;
        sr += c.rhs();
        if c.rhs() > 0.0 {
            c_hat_max = c_hat_max.max(c.lhs / c.rhs());
        }
    }
    let c_hat_global = if sr > 0.0 { sl / sr } else { 0.0 };

    Ok(TwoScaleExpansion {
        u_hom: u_hom.clone(),
        slopes,
        corrector_of,
        correctors,
        shifts,
        u_hat,
        residual: DiscreteField::from_values(grid, &[m, d], residual)?,
        term_norms,
        cells,
        c_hat_max,
        c_hat_global,
        law_defect,
    })
}
