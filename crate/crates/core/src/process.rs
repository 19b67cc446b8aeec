//! Synthetic spatial fields on standard exponential margins.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeomxError, Result};
use crate::margins::{rank_to_exponential, DataMatrix};
use crate::spatial::{powered_exp_corr, CorrelationSpec, SpatialDomain};
use crate::special::{bivariate_normal_upper_orthant, gaussian_to_exponential, ln_norm_sf, norm_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessKind {
    Gaussian,
    Laplace,
    /// Huser–Wadsworth random scale mixture.
    Hw,
}

impl std::str::FromStr for ProcessKind {
    type Err = GeomxError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(ProcessKind::Gaussian),
            "laplace" => Ok(ProcessKind::Laplace),
            "hw" => Ok(ProcessKind::Hw),
            _ => Err(GeomxError::Config(format!(
                "--kind must be gaussian, laplace or hw, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub kind: ProcessKind,
    pub corr: CorrelationSpec,
    /// Mixing parameter of the HW process; ignored otherwise.
    pub delta: f64,
    pub seed: u64,
    pub n: usize,
}

impl ProcessSpec {
    pub fn gaussian(lambda: f64, kappa: f64, n: usize, seed: u64) -> Self {
        Self {
            kind: ProcessKind::Gaussian,
            corr: CorrelationSpec { lambda, kappa },
            delta: 0.0,
            seed,
            n,
        }
    }

    pub fn laplace(lambda: f64, kappa: f64, n: usize, seed: u64) -> Self {
        Self {
            kind: ProcessKind::Laplace,
            ..Self::gaussian(lambda, kappa, n, seed)
        }
    }

    pub fn hw(lambda: f64, kappa: f64, delta: f64, n: usize, seed: u64) -> Self {
        Self {
            kind: ProcessKind::Hw,
            delta,
            ..Self::gaussian(lambda, kappa, n, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.corr.validate()?;
        if self.kind == ProcessKind::Hw && !(0.0..=1.0).contains(&self.delta) {
            return Err(GeomxError::InvalidParameter(format!(
                "delta must lie in [0, 1], got {}",
                self.delta
            )));
        }
        if self.n == 0 {
            return Err(GeomxError::InvalidParameter("n must be positive".into()));
        }
        Ok(())
    }

    /// True when the HW mixing parameter puts the process in the
    /// asymptotically dependent regime.
    pub fn is_asymptotically_dependent(&self) -> bool {
        self.kind == ProcessKind::Hw && self.delta > 0.5
    }
}

/// Random stream for replicate `index` under `seed`.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Maps a standard Laplace value (density `½e^{−|z|}`) to standard
/// exponential margins through the exact CDF.
pub fn laplace_to_exponential(z: f64) -> f64 {
    if z >= 0.0 {
        z + std::f64::consts::LN_2
    } else {
        -(-0.5 * z.exp()).ln_1p()
    }
}

/// Latent standard-normal draws `L ε` for each replicate, in replicate order.
fn latent_gaussian(l: &nalgebra::DMatrix<f64>, n: usize, seed: u64) -> Vec<(Vec<f64>, ChaCha8Rng)> {
    let d = l.nrows();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i as u64);
            let eps: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut z = vec![0.0; d];
            for r in 0..d {
                let mut s = 0.0;
                for c in 0..=r {
                    s += l[(r, c)] * eps[c];
                }
                z[r] = s;
            }
            (z, rng)
        })
        .collect()
}

/// Latent Gaussian field values (before any marginal transform).
pub fn simulate_latent_gaussian(spec: &ProcessSpec, domain: &SpatialDomain) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let c = powered_exp_corr(&domain.h, &spec.corr)?;
    Ok(latent_gaussian(&c.chol, spec.n, spec.seed)
        .into_iter()
        .map(|(z, _)| z)
        .collect())
}

pub fn simulate(spec: &ProcessSpec, domain: &SpatialDomain) -> Result<DataMatrix> {
    spec.validate()?;
    let c = powered_exp_corr(&domain.h, &spec.corr)?;
    let ids: Vec<String> = domain.sites.iter().map(|s| s.id.clone()).collect();
    let latent = latent_gaussian(&c.chol, spec.n, spec.seed);
    let rows: Vec<Vec<f64>> = match spec.kind {
        ProcessKind::Gaussian => latent
            .into_iter()
            .map(|(z, _)| z.into_iter().map(gaussian_to_exponential).collect())
            .collect(),
        ProcessKind::Laplace => latent
            .into_par_iter()
            .map(|(z, mut rng)| {
                // √(2E)·Z has unit Laplace margins
                let e: f64 = Exp1.sample(&mut rng);
                let s = (2.0 * e).sqrt();
                z.into_iter().map(|v| laplace_to_exponential(s * v)).collect()
            })
            .collect(),
        ProcessKind::Hw => {
            let delta = spec.delta;
            // log Z = δ log R_P + (1−δ) log W_P, with log R_P ~ Exp(1) and
            // log W_P = −log Φ̄(z)
            let log_z: Vec<Vec<f64>> = latent
                .into_par_iter()
                .map(|(z, mut rng)| {
                    let log_r: f64 = Exp1.sample(&mut rng);
                    z.into_iter()
                        .map(|v| delta * log_r + (1.0 - delta) * (-ln_norm_sf(v)))
                        .collect()
                })
                .collect();
            let d = domain.dim();
            let mut rows = vec![vec![0.0; d]; spec.n];
            for j in 0..d {
                let col: Vec<f64> = log_z.iter().map(|r| r[j]).collect();
                for (row, x) in rows.iter_mut().zip(rank_to_exponential(&col)) {
                    row[j] = x;
                }
            }
            rows
        }
    };
    DataMatrix::from_dense(ids, rows)
}

/// Exact `χ_u` of a bivariate Gaussian pair with correlation `rho`.
pub fn true_chi_u_gaussian(rho: f64, u: f64) -> f64 {
    let q = norm_quantile(u);
    (bivariate_normal_upper_orthant(q, rho, 1e-9) / (1.0 - u)).clamp(0.0, 1.0)
}

/// Empirical `χ_u` of columns `j`, `k` of a matrix on exponential margins.
pub fn empirical_chi_u(data: &DataMatrix, j: usize, k: usize, u: f64) -> f64 {
    let q = -(1.0 - u).ln();
    let mut both = 0usize;
    let mut n = 0usize;
    for r in &data.rows {
        if let (Some(a), Some(b)) = (r[j], r[k]) {
            n += 1;
            if a > q && b > q {
                both += 1;
            }
        }
    }
    both as f64 / (n as f64 * (1.0 - u))
}
