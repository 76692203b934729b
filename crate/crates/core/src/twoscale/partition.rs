//! Partition of unity on `delta Z^d` and local slope averages.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{DiscreteField, Neighbors, PeriodicGrid};

/// Smooth step with `S(s) + S(1 - s) = 1`.
fn smooth_step(s: f64) -> f64 {
    let f = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    let (a, b) = (f(s), f(1.0 - s));
    a / (a + b)
}

/// One-dimensional profile supported in `[-1, 1]` whose integer translates
/// sum to one.
pub fn profile(t: f64) -> f64 {
    let a = t.abs();
    if a >= 1.0 {
        0.0
    } else {
        smooth_step(1.0 - a)
    }
}

/// Signed minimum-image difference.
fn wrap(dx: f64, l: f64) -> f64 {
    let mut d = dx.rem_euclid(l);
    if d > 0.5 * l {
        d -= l;
    }
    d
}

/// Lattice sites within wrap distance `r` of `center`.
pub(crate) fn ball_sites(grid: &PeriodicGrid, center: &[f64; 3], r: f64) -> Vec<usize> {
    let d = grid.dim();
    let h = grid.spacing();
    let n = grid.n() as isize;
    let reach = ((r / h).floor() as isize + 1).min(n / 2 + 1);
    let mut base = [0isize; 3];
    for a in 0..d {
        base[a] = (center[a] / h).round() as isize;
    }
    let span = (2 * reach + 1).min(n);
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let count = (span as usize).pow(d as u32);
    for idx in 0..count {
        let mut c = [0isize; 3];
        let mut rem = idx;
        for a in 0..d {
            c[a] = base[a] - span / 2 + (rem % span as usize) as isize;
            rem /= span as usize;
        }
        let s = grid.site(&c[..d]);
        if grid.wrap_distance(s, center) <= r * (1.0 + 1e-12) && seen.insert(s) {
            out.push(s);
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct PartitionOfUnity {
    #[serde(skip)]
    pub grid: PeriodicGrid,
    pub delta: f64,
    pub centers: Vec<[f64; 3]>,
    /// Sparse `eta_k` as `(site, value)`.
    #[serde(skip)]
    pub weights: Vec<Vec<(usize, f64)>>,
    /// `h^d sum eta_k`.
    pub masses: Vec<f64>,
    /// `max_x |sum_k eta_k(x) - 1|`.
    pub sum_defect: f64,
    /// `delta max_k |D+ eta_k|`.
    pub gradient_bound: f64,
    /// Largest number of bumps covering one site.
    pub max_overlap: usize,
    /// Largest `#(K cap B_{4 delta}(k))`.
    pub max_neighbors: usize,
    /// Largest `max(delta^d / mass, mass / delta^d)`.
    pub mass_ratio: f64,
    /// Smallest constant compatible with all of the above.
    pub c_bar: f64,
}

impl PartitionOfUnity {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Per site, the bumps `(k, eta_k)` that do not vanish there.
    pub fn by_site(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); self.grid.num_sites()];
        for (k, w) in self.weights.iter().enumerate() {
            for &(s, v) in w {
                out[s].push((k, v));
            }
        }
        out
    }

    /// Centers within `4 delta` of center `k` (including `k`).
    pub fn neighbors(&self, k: usize) -> Vec<usize> {
        let l = self.grid.length();
        let d = self.grid.dim();
        (0..self.len())
            .filter(|&j| {
                let r2: f64 = (0..d)
                    .map(|a| wrap(self.centers[j][a] - self.centers[k][a], l).powi(2))
                    .sum();
                r2.sqrt() <= 4.0 * self.delta * (1.0 + 1e-12)
            })
            .collect()
    }
}

/// `K = delta Z^d` on the torus with tensor-product bumps
/// `eta_k(x) = prod_i psi((x_i - k_i) / delta)`.
pub fn build_partition(grid: &PeriodicGrid, delta: f64) -> Result<PartitionOfUnity> {
    let h = grid.spacing();
    let l = grid.length();
    if !(delta >= 4.0 * h * (1.0 - 1e-12)) {
        return Err(Error::InvalidArgument(format!("delta = {delta} is below 4h = {}", 4.0 * h)));
    }
    let per_axis = l / delta;
    if (per_axis - per_axis.round()).abs() > 1e-9 * per_axis {
        return Err(Error::InvalidArgument(format!("delta = {delta} does not divide the period {l}")));
    }
    let nk = per_axis.round() as usize;
    if nk < 2 {
        // A single periodic bump does not sum to one.
        return Err(Error::InvalidArgument(format!("delta = {delta} leaves fewer than two cells per period {l}")));
    }
    let d = grid.dim();
    let n = grid.n();
    // psi on each lattice coordinate for each 1D center index.
    let axis: Vec<Vec<(usize, f64)>> = (0..nk)
        .map(|i| {
            let c = i as f64 * delta;
            (0..n)
                .filter_map(|j| {
                    let v = profile(wrap(j as f64 * h - c, l) / delta);
                    (v > 0.0).then_some((j, v))
                })
                .collect()
        })
        .collect();
    let nkd = nk.pow(d as u32);
    let mut centers = Vec::with_capacity(nkd);
    let mut weights = Vec::with_capacity(nkd);
    for idx in 0..nkd {
        let mut ki = [0usize; 3];
        let mut rem = idx;
        for a in (0..d).rev() {
            ki[a] = rem % nk;
            rem /= nk;
        }
        let mut c = [0.0; 3];
        for a in 0..d {
            c[a] = ki[a] as f64 * delta;
        }
        centers.push(c);
        let mut w: Vec<(Vec<isize>, f64)> = vec![(Vec::new(), 1.0)];
        for a in 0..d {
            let mut next = Vec::with_capacity(w.len() * axis[ki[a]].len());
            for (coords, v) in &w {
                for &(j, p) in &axis[ki[a]] {
                    let mut cc = coords.clone();
                    cc.push(j as isize);
                    next.push((cc, v * p));
                }
            }
            w = next;
        }
        weights.push(w.into_iter().map(|(c, v)| (grid.site(&c), v)).collect::<Vec<_>>());
    }

    let hd = grid.cell_volume();
    let masses: Vec<f64> = weights.iter().map(|w| w.iter().map(|p| p.1).sum::<f64>() * hd).collect();
    let mut total = vec![0.0; grid.num_sites()];
    let mut cover = vec![0usize; grid.num_sites()];
    for w in &weights {
        for &(s, v) in w {
            total[s] += v;
            cover[s] += 1;
        }
    }
    let sum_defect = total.iter().map(|t| (t - 1.0).abs()).fold(0.0, f64::max);
    let max_overlap = cover.iter().cloned().max().unwrap_or(0);
    let nb = Neighbors::new(grid);
    let mut grad: f64 = 0.0;
    let mut dense = vec![0.0; grid.num_sites()];
    for w in &weights {
        for &(s, v) in w {
            dense[s] = v;
        }
        for &(s, _) in w {
            for a in 0..d {
                let b = nb.backward(a, s);
                grad = grad.max((dense[s] - dense[b]).abs());
                let f = nb.forward(a, s);
                grad = grad.max((dense[f] - dense[s]).abs());
            }
        }
        for &(s, _) in w {
            dense[s] = 0.0;
        }
    }
    let gradient_bound = delta * grad / h;
    let dd = delta.powi(d as i32);
    let mass_ratio = masses.iter().map(|m| (dd / m).max(m / dd)).fold(0.0, f64::max);
    let mut pu = PartitionOfUnity {
        grid: *grid,
        delta,
        centers,
        weights,
        masses,
        sum_defect,
        gradient_bound,
        max_overlap,
        max_neighbors: 0,
        mass_ratio,
        c_bar: 0.0,
    };
    pu.max_neighbors = (0..pu.len().min(1)).map(|k| pu.neighbors(k).len()).max().unwrap_or(0);
    pu.c_bar = [1.0, gradient_bound, pu.max_neighbors as f64, mass_ratio, max_overlap as f64]
        .into_iter()
        .fold(0.0, f64::max);
    Ok(pu)
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalSlopes {
    pub xi: Vec<Vec<f64>>,
    /// `max_k |xi_k| / (delta^-d int_{B_2delta(k)} |g|^2)^{1/2}`.
    pub bound_ratio: f64,
    /// `max_{|k - k'| <= 4 delta} delta^-1 |xi_k - xi_k'| / (delta^-d int_{B_6delta(k')} |D+ g|^2)^{1/2}`.
    pub neighbor_ratio: f64,
}

/// `xi_k = (int eta_k)^-1 int g eta_k`.
pub fn local_slopes(g: &DiscreteField, pu: &PartitionOfUnity) -> Result<LocalSlopes> {
    if g.grid() != &pu.grid {
        return Err(Error::InvalidArgument("slope field and partition live on different grids".into()));
    }
    let nc = g.ncomp();
    let hd = pu.grid.cell_volume();
    let v = g.values();
    let xi: Vec<Vec<f64>> = pu
        .weights
        .iter()
        .zip(&pu.masses)
        .map(|(w, m)| {
            let mut acc = vec![0.0; nc];
            for &(s, e) in w {
                for c in 0..nc {
                    acc[c] += e * v[s * nc + c];
                }
            }
            acc.iter().map(|a| a * hd / m).collect()
        })
        .collect();

    let d = pu.grid.dim();
    let dd = pu.delta.powi(d as i32);
    let norm2 = |sites: &[usize], f: &[f64], k: usize| -> f64 {
        sites
            .iter()
            .map(|&s| f[s * k..(s + 1) * k].iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            * hd
            / dd
    };
    let mut bound_ratio: f64 = 0.0;
    for (k, x) in xi.iter().enumerate() {
        let sites = ball_sites(&pu.grid, &pu.centers[k], 2.0 * pu.delta);
        let rhs = norm2(&sites, v, nc).sqrt();
        let lhs = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        if rhs > 0.0 {
            bound_ratio = bound_ratio.max(lhs / rhs);
        }
    }
    let nb = Neighbors::new(&pu.grid);
    let mut dg = vec![0.0; v.len() * d];
    nb.gradient(v, nc, &mut dg);
    let mut neighbor_ratio: f64 = 0.0;
    for kp in 0..pu.len() {
        let sites = ball_sites(&pu.grid, &pu.centers[kp], 6.0 * pu.delta);
        let rhs = norm2(&sites, &dg, nc * d).sqrt();
        for k in pu.neighbors(kp) {
            let diff = xi[k]
                .iter()
                .zip(&xi[kp])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
                / pu.delta;
            if rhs > 0.0 {
                neighbor_ratio = neighbor_ratio.max(diff / rhs);
            } else if diff > 1e-12 {
                neighbor_ratio = f64::INFINITY;
            }
        }
    }
    Ok(LocalSlopes {
        xi,
        bound_ratio,
        neighbor_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn profile_translates_sum_to_one() {
        for i in 0..1000 {
            let t = i as f64 / 1000.0;
            assert!((profile(t) + profile(t - 1.0) - 1.0).abs() < 1e-15);
        }
        assert_eq!(profile(1.0), 0.0);
        assert_eq!(profile(0.0), 1.0);
    }

    #[test]
    fn one_dimensional_partition() {
        let g = PeriodicGrid::new(1, 128, 1.0).unwrap();
        let pu = build_partition(&g, 0.125).unwrap();
        assert_eq!(pu.len(), 8);
        assert!(pu.sum_defect < 1e-12);
        assert!(pu.max_overlap <= 3);
        assert!(pu.gradient_bound <= pu.c_bar);
        for (k, w) in pu.weights.iter().enumerate() {
            for &(s, v) in w {
                assert!((0.0..=1.0).contains(&v));
                assert!(g.wrap_distance(s, &pu.centers[k]) < 2.0 * pu.delta);
            }
        }
    }

    #[test]
    fn two_dimensional_partition() {
        let g = PeriodicGrid::new(2, 64, 2.0).unwrap();
        let pu = build_partition(&g, 0.25).unwrap();
        assert_eq!(pu.len(), 64);
        assert!(pu.sum_defect < 1e-12);
        assert!(pu.max_overlap <= 9);
        assert!(pu.max_neighbors as f64 <= pu.c_bar);
    }

    #[test]
    fn rejects_bad_delta() {
        let g = PeriodicGrid::new(1, 64, 1.0).unwrap();
        assert!(build_partition(&g, 0.03).is_err());
        assert!(build_partition(&g, 0.3).is_err());
    }

    #[test]
    fn constant_slope_is_reproduced() {
        let g = PeriodicGrid::new(2, 32, 1.0).unwrap();
        let pu = build_partition(&g, 0.25).unwrap();
        let f = DiscreteField::constant(g, &[1, 2], &[0.3, -1.2]);
        let s = local_slopes(&f, &pu).unwrap();
        for x in &s.xi {
            assert!((x[0] - 0.3).abs() < 1e-13 && (x[1] + 1.2).abs() < 1e-13);
        }
        assert_eq!(s.neighbor_ratio, 0.0);
    }

    #[test]
    fn smooth_slope_audits_are_finite() {
        let g = PeriodicGrid::new(1, 256, 1.0).unwrap();
        let pu = build_partition(&g, 1.0 / 16.0).unwrap();
        let f = DiscreteField::from_fn(g, &[1, 1], |x, v| v[0] = (2.0 * PI * x[0]).cos());
        let s = local_slopes(&f, &pu).unwrap();
        assert!(s.bound_ratio.is_finite() && s.bound_ratio < 2.0);
        assert!(s.neighbor_ratio.is_finite() && s.neighbor_ratio < 2.0, "{}", s.neighbor_ratio);
    }
}
