//! Closed-form or tabulated effective laws used as references.

use serde::{Deserialize, Serialize};

use super::oracle::{oracle_1d, quadrature_reference};
use crate::error::{Error, Result};
use crate::material::OperatorFamily;
use crate::randomfield::{ClampSpec, ParameterField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EffectiveLaw {
    /// `xi -> M xi` with `M` row-major `md x md`.
    Linear { md: usize, matrix: Vec<f64> },
    /// Scalar law (`m = d = 1`) interpolated on Chebyshev points of `[lo, hi]`.
    Table1d { lo: f64, hi: f64, values: Vec<f64> },
}

fn cheb_nodes(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let t = (std::f64::consts::PI * j as f64 / (n - 1) as f64).cos();
            0.5 * (lo + hi) + 0.5 * (hi - lo) * t
        })
        .collect()
}

impl EffectiveLaw {
    /// `a Id` on `R^{m x d}`.
    pub fn scalar(a: f64, md: usize) -> Self {
        let mut matrix = vec![0.0; md * md];
        for i in 0..md {
            matrix[i * md + i] = a;
        }
        EffectiveLaw::Linear { md, matrix }
    }

    pub fn md(&self) -> usize {
        match self {
            EffectiveLaw::Linear { md, .. } => *md,
            EffectiveLaw::Table1d { .. } => 1,
        }
    }

    pub fn tabulate_1d(f: impl Fn(f64) -> Result<f64>, lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo < hi) || n < 2 {
            return Err(Error::InvalidArgument(format!("bad table [{lo}, {hi}] with {n} nodes")));
        }
        let values = cheb_nodes(lo, hi, n).into_iter().map(f).collect::<Result<Vec<_>>>()?;
        Ok(EffectiveLaw::Table1d { lo, hi, values })
    }

    /// Infinite-volume law of the one-point site distribution.
    pub fn site_law_1d(fam: &OperatorFamily, clamp: &ClampSpec, lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::tabulate_1d(|x| Ok(quadrature_reference(fam, clamp, x, 1e-13)?.q), lo, hi, n)
    }

    /// Periodic-RVE law of a fixed one-dimensional field.
    pub fn rve_1d(omega: &ParameterField, fam: &OperatorFamily, lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::tabulate_1d(|x| oracle_1d(omega, fam, x, 1e-13), lo, hi, n)
    }

    pub fn eval(&self, xi: &[f64]) -> Result<Vec<f64>> {
        match self {
            EffectiveLaw::Linear { md, matrix } => {
                if xi.len() != *md {
                    return Err(Error::shape(format!("{md} entries"), format!("{}", xi.len())));
                }
                Ok((0..*md)
                    .map(|i| (0..*md).map(|j| matrix[i * md + j] * xi[j]).sum())
                    .collect())
            }
            EffectiveLaw::Table1d { lo, hi, values } => {
                if xi.len() != 1 {
                    return Err(Error::shape("1 entry", format!("{}", xi.len())));
                }
                let x = xi[0];
                let slack = 1e-12 * (hi - lo);
                if x < lo - slack || x > hi + slack {
                    return Err(Error::InvalidArgument(format!("{x} outside the table range [{lo}, {hi}]")));
                }
                // Barycentric formula on Chebyshev points of the second kind.
                let n = values.len();
                let nodes = cheb_nodes(*lo, *hi, n);
                let (mut num, mut den) = (0.0, 0.0);
                for j in 0..n {
                    let dx = x - nodes[j];
                    if dx == 0.0 {
                        return Ok(vec![values[j]]);
                    }
                    let mut w = if j % 2 == 0 { 1.0 } else { -1.0 };
                    if j == 0 || j == n - 1 {
                        w *= 0.5;
                    }
                    num += w / dx * values[j];
                    den += w / dx;
                }
                Ok(vec![num / den])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chebyshev_table_is_spectrally_accurate() {
        let law = EffectiveLaw::tabulate_1d(|x| Ok(x.sin() + 0.3 * x), -2.0, 2.0, 25).unwrap();
        for i in 0..101 {
            let x = -2.0 + 4.0 * i as f64 / 100.0;
            assert!((law.eval(&[x]).unwrap()[0] - (x.sin() + 0.3 * x)).abs() < 1e-12);
        }
        assert!(law.eval(&[2.5]).is_err());
    }

    #[test]
    fn scalar_law() {
        let law = EffectiveLaw::scalar(1.5, 2);
        assert_eq!(law.eval(&[1.0, -2.0]).unwrap(), vec![1.5, -3.0]);
    }
}
