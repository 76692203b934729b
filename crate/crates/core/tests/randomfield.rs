//! Statistical properties of sampled parameter fields.

use homolab::grid::PeriodicGrid;
use homolab::harness::seed_stream;
use homolab::randomfield::{restrict_pi_l, ClampSpec, FieldSpec, KernelShape, ParameterField};

const SAMPLES: usize = 600;

fn spec() -> FieldSpec {
    FieldSpec::new(1.0, KernelShape::GaussianBump, ClampSpec::default())
}

struct Moments {
    n: f64,
    sum: f64,
    sum2: f64,
}

impl Moments {
    fn new() -> Self {
        Self { n: 0.0, sum: 0.0, sum2: 0.0 }
    }
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        self.sum += v;
        self.sum2 += v * v;
    }
    fn mean(&self) -> f64 {
        self.sum / self.n
    }
    fn var(&self) -> f64 {
        (self.sum2 - self.sum * self.sum / self.n) / (self.n - 1.0)
    }
    fn se(&self) -> f64 {
        (self.var() / self.n).sqrt()
    }
}

fn within(a: &Moments, b: &Moments) -> bool {
    (a.mean() - b.mean()).abs() <= 3.0 * (a.se().powi(2) + b.se().powi(2)).sqrt()
}

#[test]
fn mean_field_is_spatially_constant() {
    let grid = PeriodicGrid::new(2, 16, 4.0).unwrap();
    let ns = grid.num_sites();
    let mut per_site: Vec<Moments> = (0..ns).map(|_| Moments::new()).collect();
    for i in 0..SAMPLES {
        let w = spec().sample(&grid, seed_stream(91, i as u64)).unwrap();
        assert!(w.values().iter().all(|v| v.abs() < 1.0));
        for s in 0..ns {
            per_site[s].push(w.values()[s]);
        }
    }
    let pooled = per_site.iter().map(|m| m.mean()).sum::<f64>() / ns as f64;
    // Every site within 3 standard errors of the pooled mean, with a
    // Bonferroni-sized allowance for the sites jointly.
    let z: Vec<f64> = per_site.iter().map(|m| (m.mean() - pooled) / m.se()).collect();
    let zmax = z.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let chi = z.iter().map(|v| v * v).sum::<f64>() / ns as f64;
    assert!(zmax < 4.5, "max |z| = {zmax}");
    assert!(chi < 3.0, "mean z^2 = {chi}");
    // Field is symmetric in law, so the pooled mean is zero up to noise.
    let se0 = per_site[0].se();
    assert!(pooled.abs() < 3.0 * se0, "{pooled}");
    let sites = [0, 37, 128, 255];
    for &s in &sites {
        assert!((per_site[s].mean() - pooled).abs() <= 3.0 * per_site[s].se() + 1e-12, "site {s}");
    }
}

fn window_stats(omega: &ParameterField, radius: f64, lag: usize, one: &mut Moments, two: &mut Moments) {
    let grid = omega.grid();
    let c = grid.center();
    let v = omega.values();
    for s in 0..grid.num_sites() {
        if grid.wrap_distance(s, &c) <= radius {
            one.push(v[s]);
            let mut x = grid.coords(s).map(|a| a as isize);
            x[0] += lag as isize;
            let t = grid.site(&x[..grid.dim()]);
            if grid.wrap_distance(t, &c) <= radius {
                two.push(v[s] * v[t]);
            }
        }
    }
}

#[test]
fn periodization_preserves_local_law() {
    // Same kernel and seeds on tori of period L and 2L; compare the law
    // seen through a window of radius L/4 around the center.
    let l = 16.0;
    let small = PeriodicGrid::new(1, 64, l).unwrap();
    let large = PeriodicGrid::new(1, 128, 2.0 * l).unwrap();
    let h = small.spacing();
    let (mut one_a, mut two_a) = (Moments::new(), Moments::new());
    let (mut one_b, mut two_b) = (Moments::new(), Moments::new());
    let lag = 2;
    for i in 0..SAMPLES {
        let seed = seed_stream(7, i as u64);
        let a = restrict_pi_l(&spec().sample(&small, seed).unwrap(), l).unwrap();
        let b = restrict_pi_l(&spec().sample(&large, seed).unwrap(), l).unwrap();
        // One window average per sample keeps the draws independent.
        let (mut oa, mut ta) = (Moments::new(), Moments::new());
        let (mut ob, mut tb) = (Moments::new(), Moments::new());
        window_stats(&a, 0.25 * l - lag as f64 * h, lag, &mut oa, &mut ta);
        window_stats(&b, 0.25 * l - lag as f64 * h, lag, &mut ob, &mut tb);
        one_a.push(oa.mean());
        two_a.push(ta.mean());
        one_b.push(ob.mean());
        two_b.push(tb.mean());
    }
    assert!(within(&one_a, &one_b), "one-point {} vs {}", one_a.mean(), one_b.mean());
    assert!(within(&two_a, &two_b), "lag-{lag} {} vs {}", two_a.mean(), two_b.mean());
    // Correlation at lag 2h = eps/2 is clearly positive.
    assert!(two_a.mean() > 0.05);
}

#[test]
fn pointwise_variance_of_gaussian_stage_is_one() {
    // tanh^-1 undoes the radial clamp in one channel.
    let grid = PeriodicGrid::new(1, 256, 64.0).unwrap();
    let mut m = Moments::new();
    for i in 0..200 {
        let w = spec().sample(&grid, seed_stream(3, i)).unwrap();
        for v in w.values().iter().step_by(8) {
            m.push(v.atanh());
        }
    }
    assert!((m.var() - 1.0).abs() < 0.03, "{}", m.var());
}

#[test]
fn lineage_reproduces_bitwise() {
    let grid = PeriodicGrid::new(3, 16, 2.0).unwrap();
    let s = FieldSpec::new(0.5, KernelShape::BumpCompact, ClampSpec::default());
    let a = s.sample(&grid, 1234).unwrap();
    let lin = a.lineage().clone();
    let b = s.sample(&grid, a.seed().unwrap()).unwrap();
    assert_eq!(b.lineage(), &lin);
    assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    let c = s.sample(&grid, 1235).unwrap();
    assert_ne!(a.values(), c.values());
}
