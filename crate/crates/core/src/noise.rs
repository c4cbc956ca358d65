//! Diagonal multiplicative noise `B(x) h = sum_k mu_k <e_k, h> x * e_k`
//! driven by a truncated cylindrical Wiener process, plus numerical
//! certification of the Hilbert-Schmidt and dual-norm growth constants.

use crate::dirichlet::{DirichletOperator, SpaceError};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("modes are not orthonormal in L^2(mu): <e_{i}, e_{j}>_mu = {value}")]
    NotOrthonormal { i: usize, j: usize, value: f64 },
    #[error("invalid noise specification: {0}")]
    InvalidSpec(String),
}

/// Truncated diagonal noise operator. Modes beyond the truncation contribute
/// nothing by construction, so the truncation is exact for this family.
#[derive(Debug, Clone)]
pub struct DiagonalNoise {
    /// Orthonormal modes `e_k` in `L^2(mu)`, length `n` each.
    modes: Vec<Vec<f64>>,
    /// Coefficients `mu_k > 0`.
    coeffs: Vec<f64>,
    /// Measured multiplier bounds `xi_k` (populated by certification).
    multiplier_bounds: Vec<f64>,
}

impl DiagonalNoise {
    pub fn new(modes: Vec<Vec<f64>>, coeffs: Vec<f64>, weights: &[f64]) -> Result<Self, NoiseError> {
        if modes.len() != coeffs.len() {
            return Err(NoiseError::InvalidSpec(
                "one coefficient per mode required".into(),
            ));
        }
        if coeffs.iter().any(|&c| c <= 0.0) {
            return Err(NoiseError::InvalidSpec("coefficients must be > 0".into()));
        }
        let n = weights.len();
        for m in &modes {
            if m.len() != n {
                return Err(NoiseError::DimensionMismatch {
                    expected: n,
                    got: m.len(),
                });
            }
        }
        let inner = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).zip(weights).map(|((x, y), w)| x * y * w).sum()
        };
        for i in 0..modes.len() {
            for j in i..modes.len() {
                let v = inner(&modes[i], &modes[j]);
                let target = if i == j { 1.0 } else { 0.0 };
                if (v - target).abs() > 1e-10 {
                    return Err(NoiseError::NotOrthonormal { i, j, value: v });
                }
            }
        }
        let k = modes.len();
        Ok(DiagonalNoise {
            modes,
            coeffs,
            multiplier_bounds: vec![0.0; k],
        })
    }

    pub fn truncation(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[Vec<f64>] {
        &self.modes
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn multiplier_bounds(&self) -> &[f64] {
        &self.multiplier_bounds
    }

    /// `B(x) dW = sum_k mu_k dW_k x * e_k` (pointwise products).
    pub fn apply(&self, x: &[f64], dw: &WienerIncrement) -> Result<Vec<f64>, NoiseError> {
        if dw.gaussians.len() != self.truncation() {
            return Err(NoiseError::DimensionMismatch {
                expected: self.truncation(),
                got: dw.gaussians.len(),
            });
        }
        let n = x.len();
        let mut out = vec![0.0; n];
        for (k, mode) in self.modes.iter().enumerate() {
            if mode.len() != n {
                return Err(NoiseError::DimensionMismatch {
                    expected: mode.len(),
                    got: n,
                });
            }
            let scale = self.coeffs[k] * dw.gaussians[k];
            for i in 0..n {
                out[i] += scale * x[i] * mode[i];
            }
        }
        Ok(out)
    }

    /// Hilbert-Schmidt norm `||B(x)||_{L_2(L^2, L^2)} = (sum_k mu_k^2 |x e_k|_2^2)^{1/2}`.
    pub fn hs_norm_l2(&self, x: &[f64], weights: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (k, mode) in self.modes.iter().enumerate() {
            let mut term = 0.0;
            for i in 0..x.len() {
                let v = x[i] * mode[i];
                term += v * v * weights[i];
            }
            acc += self.coeffs[k] * self.coeffs[k] * term;
        }
        acc.sqrt()
    }

    /// The analytic (H3)(i) constant for this family:
    /// `C_3 = (sum_k mu_k^2 |e_k|_inf^2)^{1/2}`.
    pub fn c3_bound(&self) -> f64 {
        self.modes
            .iter()
            .zip(&self.coeffs)
            .map(|(m, c)| {
                let sup = m.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
                c * c * sup * sup
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Summability certificate `sum_k mu_k^2 (xi_k^2 + |e_k|_inf^2)` (finite
    /// sum at the truncation).
    pub fn summability(&self) -> f64 {
        self.modes
            .iter()
            .zip(&self.coeffs)
            .zip(&self.multiplier_bounds)
            .map(|((m, c), xi)| {
                let sup = m.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
                c * c * (xi * xi + sup * sup)
            })
            .sum()
    }

    /// `int_E (sum_k |B(x) e_k|^2)^m dmu` — the (H3)(ii) moment functional.
    pub fn hs_moment_2m(&self, x: &[f64], m: f64, weights: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..x.len() {
            let mut s = 0.0;
            for (k, mode) in self.modes.iter().enumerate() {
                let v = self.coeffs[k] * x[i] * mode[i];
                s += v * v;
            }
            acc += s.powf(m) * weights[i];
        }
        acc
    }

    /// The analytic (H3)(ii) constant:
    /// `C_4 = sup_i (sum_k mu_k^2 e_k(i)^2)^m`.
    pub fn c4_bound(&self, m: f64) -> f64 {
        let n = self.modes.first().map_or(0, Vec::len);
        let mut sup = 0.0f64;
        for i in 0..n {
            let mut s = 0.0;
            for (k, mode) in self.modes.iter().enumerate() {
                s += self.coeffs[k] * self.coeffs[k] * mode[i] * mode[i];
            }
            sup = sup.max(s);
        }
        sup.powf(m)
    }

    /// `(sum_k || mu_k x e_k ||^2_{F*_{1,2,nu}})^{1/2}` — the (H2)(ii)
    /// Hilbert-Schmidt norm into the dual space.
    pub fn hs_norm_dual(
        &self,
        op: &DirichletOperator,
        x: &[f64],
        nu: f64,
    ) -> Result<f64, SpaceError> {
        let mut acc = 0.0;
        for (k, mode) in self.modes.iter().enumerate() {
            let v: Vec<f64> = x
                .iter()
                .zip(mode)
                .map(|(a, b)| self.coeffs[k] * a * b)
                .collect();
            let norm = op.dual_norm(&v, nu)?;
            acc += norm * norm;
        }
        Ok(acc.sqrt())
    }

    /// Measures the multiplier bounds `xi_k` by maximizing the pairing
    /// quotient `|<x, e_k u>_mu| / (||x||_{F*_nu} ||u||_{F_nu})` over random
    /// pairs and the given `nu` grid, and stores them on the model.
    pub fn certify_multipliers(
        &mut self,
        op: &DirichletOperator,
        nu_grid: &[f64],
        trials: usize,
        rng: &mut impl Rng,
    ) -> Result<&[f64], SpaceError> {
        let n = op.len();
        let mut bounds = vec![0.0f64; self.truncation()];
        for _ in 0..trials {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for (k, mode) in self.modes.iter().enumerate() {
                let eu: Vec<f64> = u.iter().zip(mode).map(|(a, b)| a * b).collect();
                let pairing: f64 = op.space().inner(&x, &eu);
                for &nu in nu_grid {
                    let xn = op.dual_norm(&x, nu)?;
                    let un = op.graph_norm_sq(&u, nu)?.sqrt();
                    if xn > 1e-14 && un > 1e-14 {
                        bounds[k] = bounds[k].max(pairing.abs() / (xn * un));
                    }
                }
            }
        }
        self.multiplier_bounds = bounds;
        Ok(&self.multiplier_bounds)
    }

    /// Measures the (H2)(ii) constant directly:
    /// `C_2(nu) = max over random x of hs_norm_dual(x, nu) / ||x||_{F*_nu}`,
    /// one entry per grid value. Linearity of `B` makes the same numbers the
    /// (H2)(i) Lipschitz constants.
    pub fn certify_c2(
        &self,
        op: &DirichletOperator,
        nu_grid: &[f64],
        trials: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<(f64, f64)>, SpaceError> {
        let n = op.len();
        let mut out = Vec::with_capacity(nu_grid.len());
        for &nu in nu_grid {
            let mut c2 = 0.0f64;
            for _ in 0..trials {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let denom = op.dual_norm(&x, nu)?;
                if denom > 1e-14 {
                    c2 = c2.max(self.hs_norm_dual(op, &x, nu)? / denom);
                }
            }
            out.push((nu, c2));
        }
        Ok(out)
    }
}

/// Identifier of a reproducible increment stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StreamId {
    pub master_seed: u64,
    pub sample: u64,
}

/// One Wiener increment: `truncation` independent `N(0, dt)` coordinates.
#[derive(Debug, Clone)]
pub struct WienerIncrement {
    pub dt: f64,
    pub gaussians: Vec<f64>,
    pub stream: StreamId,
}

/// Counter-seeded Gaussian stream: trajectory `sample` of a run with a fixed
/// master seed always replays the same increments, independent of scheduling.
#[derive(Debug, Clone)]
pub struct IncrementStream {
    id: StreamId,
    rng: ChaCha12Rng,
    modes: usize,
}

impl IncrementStream {
    pub fn new(id: StreamId, modes: usize) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(id.master_seed);
        rng.set_stream(id.sample);
        IncrementStream { id, rng, modes }
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    pub fn sample_increment(&mut self, dt: f64) -> WienerIncrement {
        assert!(dt >= 0.0);
        let sqrt_dt = dt.sqrt();
        let gaussians = (0..self.modes)
            .map(|_| {
                let z: f64 = self.rng.sample(StandardNormal);
                z * sqrt_dt
            })
            .collect();
        WienerIncrement {
            dt,
            gaussians,
            stream: self.id,
        }
    }
}
