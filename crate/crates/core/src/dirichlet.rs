//! Finite measure spaces with symmetric sub-Markovian generators.
//!
//! An operator `L` is symmetric in the weighted inner product
//! `<u, v>_mu = sum_i u_i v_i mu_i` and negative semidefinite; transience is
//! modeled as strict negative definiteness (boundary killing), which is
//! exactly invertibility of `-L` on a finite space. The energy form is
//! `E(u, v) = <-L u, v>_mu` and the scale of dual norms is
//! `||l||_nu = <l, (nu - L)^{-1} l>_mu^{1/2}`.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operator is not transient (min eigenvalue of -L is {min_eig:.3e}); {context}")]
    NotTransient { min_eig: f64, context: String },
    #[error("operator kind has no jump kernel")]
    NoKernel,
    #[error("invalid Bernstein descriptor: {0}")]
    InvalidBernstein(String),
    #[error("invalid operator specification: {0}")]
    InvalidSpec(String),
}

/// Finite measure space: `n` points with weights `mu_i > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSpace {
    weights: Vec<f64>,
    labels: Option<Vec<String>>,
}

impl MeasureSpace {
    pub fn new(weights: Vec<f64>) -> Self {
        assert!(!weights.is_empty() && weights.iter().all(|&w| w > 0.0));
        MeasureSpace {
            weights,
            labels: None,
        }
    }

    pub fn with_labels(weights: Vec<f64>, labels: Vec<String>) -> Self {
        assert_eq!(weights.len(), labels.len());
        let mut s = Self::new(weights);
        s.labels = Some(labels);
        s
    }

    pub fn uniform(n: usize, w: f64) -> Self {
        Self::new(vec![w; n])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Total mass `mu(E)`.
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter()
            .zip(v)
            .zip(&self.weights)
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    /// `|u|_p = (sum |u_i|^p mu_i)^{1/p}`.
    pub fn lp_norm(&self, u: &[f64], p: f64) -> f64 {
        self.lp_power(u, p).powf(1.0 / p)
    }

    /// `|u|_p^p`.
    pub fn lp_power(&self, u: &[f64], p: f64) -> f64 {
        u.iter()
            .zip(&self.weights)
            .map(|(a, w)| a.abs().powf(p) * w)
            .sum()
    }

    pub fn l2_norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    GridDirichlet,
    SpectralFunction,
    JumpKernel,
    Sierpinski,
}

/// Cached eigendecomposition in the `mu`-weighted inner product:
/// `-L v_k = kappa_k v_k` with `<v_k, v_j>_mu = delta_{kj}` and
/// `kappa_k >= 0` in increasing order.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub kappas: Vec<f64>,
    /// Column `k` is the eigenvector `v_k` (length `n`).
    pub basis: DMatrix<f64>,
}

/// Symmetric sub-Markovian generator on a finite measure space.
#[derive(Debug, Clone)]
pub struct DirichletOperator {
    space: MeasureSpace,
    matrix: DMatrix<f64>,
    kind: OperatorKind,
    kernel: Option<DMatrix<f64>>,
    killing: Option<Vec<f64>>,
    spectrum: Spectrum,
}

/// Bernstein functions admitted for subordination `-f(-L)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BernsteinFn {
    /// `f(s) = s^{alpha/2}`, `alpha in (0, 2]`.
    Power { alpha: f64 },
    /// `f(s) = scale * ln(1 + s)`, `scale > 0`.
    Log { scale: f64 },
    /// Nonnegative linear combination of the above.
    Combination { terms: Vec<(f64, BernsteinFn)> },
}

impl BernsteinFn {
    fn validate(&self) -> Result<(), SpaceError> {
        match self {
            BernsteinFn::Power { alpha } => {
                if !(*alpha > 0.0 && *alpha <= 2.0) {
                    return Err(SpaceError::InvalidBernstein(format!(
                        "power exponent alpha = {alpha} outside (0, 2]"
                    )));
                }
            }
            BernsteinFn::Log { scale } => {
                if !(*scale > 0.0) {
                    return Err(SpaceError::InvalidBernstein("log scale must be > 0".into()));
                }
            }
            BernsteinFn::Combination { terms } => {
                if terms.is_empty() {
                    return Err(SpaceError::InvalidBernstein("empty combination".into()));
                }
                for (w, f) in terms {
                    if *w < 0.0 {
                        return Err(SpaceError::InvalidBernstein(format!(
                            "negative combination weight {w}"
                        )));
                    }
                    f.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            BernsteinFn::Power { alpha } => s.powf(alpha / 2.0),
            BernsteinFn::Log { scale } => scale * (1.0 + s).ln(),
            BernsteinFn::Combination { terms } => {
                terms.iter().map(|(w, f)| w * f.eval(s)).sum()
            }
        }
    }
}

impl DirichletOperator {
    fn assemble(
        space: MeasureSpace,
        matrix: DMatrix<f64>,
        kind: OperatorKind,
        kernel: Option<DMatrix<f64>>,
        killing: Option<Vec<f64>>,
    ) -> Result<Self, SpaceError> {
        let n = space.len();
        assert_eq!(matrix.nrows(), n);
        assert_eq!(matrix.ncols(), n);
        // mu-symmetry: mu_i L_ij = mu_j L_ji.
        for i in 0..n {
            for j in (i + 1)..n {
                let a = space.weights[i] * matrix[(i, j)];
                let b = space.weights[j] * matrix[(j, i)];
                if (a - b).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
                    return Err(SpaceError::InvalidSpec(format!(
                        "operator is not mu-symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let spectrum = eigendecompose(&space, &matrix);
        if spectrum.kappas.iter().any(|&k| k < -1e-9) {
            return Err(SpaceError::InvalidSpec(format!(
                "operator is not negative semidefinite (kappa_min = {:.3e})",
                spectrum.kappas[0]
            )));
        }
        Ok(DirichletOperator {
            space,
            matrix,
            kind,
            kernel,
            killing,
            spectrum,
        })
    }

    /// Standard `(2 dim + 1)`-point grid Laplacian with Dirichlet (killing)
    /// boundary on `sides^dim` interior points, `mu_i = h^dim`.
    pub fn grid(dim: usize, sides: usize, h: f64) -> Result<Self, SpaceError> {
        if !(dim == 1 || dim == 2) {
            return Err(SpaceError::InvalidSpec("grid dim must be 1 or 2".into()));
        }
        if sides == 0 || h <= 0.0 {
            return Err(SpaceError::InvalidSpec("grid needs sides >= 1, h > 0".into()));
        }
        let n = sides.pow(dim as u32);
        let inv_h2 = 1.0 / (h * h);
        let mut l = DMatrix::zeros(n, n);
        let idx = |i: usize, j: usize| i * sides + j;
        for p in 0..n {
            l[(p, p)] = -2.0 * dim as f64 * inv_h2;
        }
        match dim {
            1 => {
                for i in 0..sides.saturating_sub(1) {
                    l[(i, i + 1)] = inv_h2;
                    l[(i + 1, i)] = inv_h2;
                }
            }
            _ => {
                for i in 0..sides {
                    for j in 0..sides {
                        if i + 1 < sides {
                            l[(idx(i, j), idx(i + 1, j))] = inv_h2;
                            l[(idx(i + 1, j), idx(i, j))] = inv_h2;
                        }
                        if j + 1 < sides {
                            l[(idx(i, j), idx(i, j + 1))] = inv_h2;
                            l[(idx(i, j + 1), idx(i, j))] = inv_h2;
                        }
                    }
                }
            }
        }
        let space = MeasureSpace::uniform(n, h.powi(dim as i32));
        // The missing boundary neighbours are the killing part: the grid is a
        // jump form with J_ij = L_ij / 2 plus kill rate from the row deficit.
        let mut kernel = DMatrix::zeros(n, n);
        let mut killing = vec![0.0; n];
        for i in 0..n {
            let mut off = 0.0;
            for j in 0..n {
                if i != j {
                    kernel[(i, j)] = 0.5 * l[(i, j)];
                    off += l[(i, j)];
                }
            }
            killing[i] = -l[(i, i)] - off;
        }
        Self::assemble(space, l, OperatorKind::GridDirichlet, Some(kernel), Some(killing))
    }

    /// Subordinate generator `-f(-L)`: same eigenvectors, eigenvalues
    /// `-f(kappa_k)`.
    pub fn spectral_function(base: &DirichletOperator, f: &BernsteinFn) -> Result<Self, SpaceError> {
        f.validate()?;
        if !base.is_transient() {
            return Err(SpaceError::NotTransient {
                min_eig: base.spectrum.kappas[0],
                context: "spectral_function requires a strictly negative definite base".into(),
            });
        }
        let n = base.space.len();
        let d: Vec<f64> = base.space.weights.iter().map(|w| w.sqrt()).collect();
        // L' = -D^{-1/2} Q f(K) Q^T D^{1/2} with A~ = D^{1/2}(-L)D^{-1/2} = Q K Q^T.
        let mut q = base.spectrum.basis.clone();
        for k in 0..n {
            for i in 0..n {
                q[(i, k)] *= d[i];
            }
        }
        let mut l = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += q[(i, k)] * f.eval(base.spectrum.kappas[k]) * q[(j, k)];
                }
                l[(i, j)] = -acc / d[i] / d[j];
            }
        }
        Self::assemble(
            base.space.clone(),
            l,
            OperatorKind::SpectralFunction,
            None,
            None,
        )
    }

    /// Jump-kernel Dirichlet form `E(u, v) = sum_{i,j} (u_i - u_j)(v_i - v_j) J_ij mu_i`
    /// plus an optional killing form `sum_i kappa_i u_i v_i mu_i`.
    ///
    /// `J` must be nonnegative, have zero diagonal, and satisfy the
    /// mu-symmetry `J_ij mu_i = J_ji mu_j`. Passing `killing: None` requires
    /// the pure jump part to be nonsingular, which it never is on a connected
    /// finite space — supply killing (possibly zero) to opt out of transience.
    pub fn jump_kernel(
        space: MeasureSpace,
        j: DMatrix<f64>,
        killing: Option<Vec<f64>>,
    ) -> Result<Self, SpaceError> {
        let n = space.len();
        if j.nrows() != n || j.ncols() != n {
            return Err(SpaceError::DimensionMismatch {
                expected: n,
                got: j.nrows(),
            });
        }
        for i in 0..n {
            if j[(i, i)] != 0.0 {
                return Err(SpaceError::InvalidSpec("kernel diagonal must vanish".into()));
            }
            for k in 0..n {
                if j[(i, k)] < 0.0 {
                    return Err(SpaceError::InvalidSpec("kernel must be nonnegative".into()));
                }
                let a = j[(i, k)] * space.weights[i];
                let b = j[(k, i)] * space.weights[k];
                if (a - b).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
                    return Err(SpaceError::InvalidSpec(format!(
                        "kernel is not mu-symmetric at ({i},{k})"
                    )));
                }
            }
        }
        if let Some(kill) = &killing {
            if kill.len() != n {
                return Err(SpaceError::DimensionMismatch {
                    expected: n,
                    got: kill.len(),
                });
            }
            if kill.iter().any(|&k| k < 0.0) {
                return Err(SpaceError::InvalidSpec("killing rates must be >= 0".into()));
            }
        }
        // (L u)_i = 2 sum_j J_ij (u_j - u_i) - kappa_i u_i
        let mut l = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut row = 0.0;
            for k in 0..n {
                if i != k {
                    l[(i, k)] = 2.0 * j[(i, k)];
                    row += 2.0 * j[(i, k)];
                }
            }
            l[(i, i)] = -row - killing.as_ref().map_or(0.0, |kl| kl[i]);
        }
        let no_killing = killing.is_none();
        let op = Self::assemble(space, l, OperatorKind::JumpKernel, Some(j), killing)?;
        if no_killing && !op.is_transient() {
            return Err(SpaceError::NotTransient {
                min_eig: op.spectrum.kappas[0],
                context: "pure jump form is singular; supply a killing rate".into(),
            });
        }
        Ok(op)
    }

    /// Finite truncation of the Sierpinski graph: vertices are the words over
    /// `{0,1,2}` of length `<= level`; each word is joined to its three
    /// children, the three children of a common parent form a triangle, and
    /// words at the truncation depth carry killing. The measure is
    /// `mu(x) = (c / (3 lambda_p))^{|x|}` and an edge created at generation
    /// `g` has conductance `c^g`.
    pub fn sierpinski(level: usize, c: f64, lambda_p: f64) -> Result<Self, SpaceError> {
        if !(c > 0.0 && c < lambda_p && lambda_p < 1.0) {
            return Err(SpaceError::InvalidSpec(
                "sierpinski needs 0 < c < lambda_p < 1".into(),
            ));
        }
        if level == 0 {
            return Err(SpaceError::InvalidSpec("sierpinski level must be >= 1".into()));
        }
        // Enumerate words level by level; remember each word's parent index.
        let mut labels: Vec<String> = vec![String::new()];
        let mut depth: Vec<usize> = vec![0];
        let mut parent: Vec<Option<usize>> = vec![None];
        let mut level_start = vec![0usize];
        for d in 1..=level {
            level_start.push(labels.len());
            let (prev_lo, prev_hi) = (level_start[d - 1], level_start[d]);
            for p in prev_lo..prev_hi {
                for letter in 0..3u8 {
                    labels.push(format!("{}{}", labels[p], letter));
                    depth.push(d);
                    parent.push(Some(p));
                }
            }
        }
        let n = labels.len();
        let ratio = c / (3.0 * lambda_p);
        let mu: Vec<f64> = depth.iter().map(|&d| ratio.powi(d as i32)).collect();
        let mut conduct = DMatrix::zeros(n, n);
        let add_edge = |a: usize, b: usize, w: f64, m: &mut DMatrix<f64>| {
            m[(a, b)] += w;
            m[(b, a)] += w;
        };
        for v in 0..n {
            if let Some(p) = parent[v] {
                let g = depth[v] as i32;
                add_edge(p, v, c.powi(g), &mut conduct);
            }
        }
        // sibling triangles
        for p in 0..n {
            if depth[p] < level {
                let base = level_start[depth[p] + 1] + 3 * (p - level_start[depth[p]]);
                let g = (depth[p] + 1) as i32;
                add_edge(base, base + 1, c.powi(g), &mut conduct);
                add_edge(base + 1, base + 2, c.powi(g), &mut conduct);
                add_edge(base, base + 2, c.powi(g), &mut conduct);
            }
        }
        // E(u,v) = 1/2 sum_{x,y} c(x,y)(u(x)-u(y))(v(x)-v(y)) is the jump form
        // with J(x,y) = c(x,y) / (2 mu(x)).
        let mut j = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    j[(a, b)] = conduct[(a, b)] / (2.0 * mu[a]);
                }
            }
        }
        // Killing on the truncation boundary stands in for the escaping edges.
        let kill: Vec<f64> = (0..n)
            .map(|v| {
                if depth[v] == level {
                    c.powi(level as i32 + 1) / mu[v]
                } else {
                    0.0
                }
            })
            .collect();
        let space = MeasureSpace::with_labels(mu, labels);
        let mut op = Self::jump_kernel(space, j, Some(kill))?;
        op.kind = OperatorKind::Sierpinski;
        Ok(op)
    }

    pub fn space(&self) -> &MeasureSpace {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn kernel(&self) -> Option<&DMatrix<f64>> {
        self.kernel.as_ref()
    }

    pub fn killing(&self) -> Option<&[f64]> {
        self.killing.as_deref()
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    /// Strict negative definiteness of `L` — the finite-space transience
    /// surrogate.
    pub fn is_transient(&self) -> bool {
        self.spectrum.kappas[0] > 1e-12 * (1.0 + self.spectrum.kappas.last().unwrap())
    }

    /// `L u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = self.len();
        assert_eq!(u.len(), n);
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.matrix[(i, j)] * u[j];
            }
            out[i] = acc;
        }
        out
    }

    /// `(nu - L) u`.
    pub fn apply_shifted(&self, nu: f64, u: &[f64]) -> Vec<f64> {
        let mut out = self.apply(u);
        for (o, &x) in out.iter_mut().zip(u) {
            *o = nu * x - *o;
        }
        out
    }

    /// Energy form `E(u, v) = <-L u, v>_mu`.
    pub fn energy(&self, u: &[f64], v: &[f64]) -> Result<f64, SpaceError> {
        let n = self.len();
        if u.len() != n || v.len() != n {
            return Err(SpaceError::DimensionMismatch {
                expected: n,
                got: u.len().max(v.len()),
            });
        }
        let lu = self.apply(u);
        Ok(-self.space.inner(&lu, v))
    }

    /// `||v||_{F_{1,2,nu}}^2 = E(v,v) + nu |v|_2^2`.
    pub fn graph_norm_sq(&self, v: &[f64], nu: f64) -> Result<f64, SpaceError> {
        Ok(self.energy(v, v)? + nu * self.space.inner(v, v))
    }

    /// Coefficients of `l` against the mu-orthonormal eigenbasis.
    fn spectral_coeffs(&self, l: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut c = vec![0.0; n];
        for k in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += l[i] * self.spectrum.basis[(i, k)] * self.space.weights[i];
            }
            c[k] = acc;
        }
        c
    }

    /// Dual norm `||l||_{F*_{1,2,nu}} = <l, (nu - L)^{-1} l>_mu^{1/2}`;
    /// `nu = 0` yields the extended-space dual norm and requires transience.
    pub fn dual_norm(&self, l: &[f64], nu: f64) -> Result<f64, SpaceError> {
        if l.len() != self.len() {
            return Err(SpaceError::DimensionMismatch {
                expected: self.len(),
                got: l.len(),
            });
        }
        assert!(nu >= 0.0);
        if nu == 0.0 && !self.is_transient() {
            return Err(SpaceError::NotTransient {
                min_eig: self.spectrum.kappas[0],
                context: "nu = 0 dual norm needs an invertible -L".into(),
            });
        }
        let coeffs = self.spectral_coeffs(l);
        let mut acc = 0.0;
        for (c, &kappa) in coeffs.iter().zip(&self.spectrum.kappas) {
            acc += c * c / (nu + kappa.max(0.0));
        }
        Ok(acc.sqrt())
    }

    /// `(nu - L)^{-1} rhs` through the cached spectrum.
    pub fn resolvent_solve(&self, nu: f64, rhs: &[f64]) -> Result<Vec<f64>, SpaceError> {
        if nu == 0.0 && !self.is_transient() {
            return Err(SpaceError::NotTransient {
                min_eig: self.spectrum.kappas[0],
                context: "nu = 0 solve needs an invertible -L".into(),
            });
        }
        let coeffs = self.spectral_coeffs(rhs);
        let n = self.len();
        let mut out = vec![0.0; n];
        for k in 0..n {
            let scale = coeffs[k] / (nu + self.spectrum.kappas[k].max(0.0));
            for i in 0..n {
                out[i] += scale * self.spectrum.basis[(i, k)];
            }
        }
        Ok(out)
    }

    /// Pointwise square field `Gamma(u, v)_i = 2 sum_j (u_i - u_j)(v_i - v_j) J_ij`.
    /// Killing contributions are excluded here and reported separately by
    /// [`Self::h4i_split`].
    pub fn carre_du_champ(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>, SpaceError> {
        let kernel = self.kernel.as_ref().ok_or(SpaceError::NoKernel)?;
        let n = self.len();
        if u.len() != n || v.len() != n {
            return Err(SpaceError::DimensionMismatch {
                expected: n,
                got: u.len().max(v.len()),
            });
        }
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += (u[i] - u[j]) * (v[i] - v[j]) * kernel[(i, j)];
            }
            out[i] = 2.0 * acc;
        }
        Ok(out)
    }

    /// The Beurling–Deny split of the energy: returns
    /// `(1/2 int Gamma(u,u) dmu, killing term)`, whose sum is `E(u, u)`.
    pub fn h4i_split(&self, u: &[f64]) -> Result<(f64, f64), SpaceError> {
        let gamma = self.carre_du_champ(u, u)?;
        let jump_part = 0.5 * self.space.inner(&gamma, &vec![1.0; self.len()]);
        let kill_part = match &self.killing {
            Some(kill) => u
                .iter()
                .zip(kill)
                .zip(self.space.weights())
                .map(|((x, k), w)| k * x * x * w)
                .sum(),
            None => 0.0,
        };
        Ok((jump_part, kill_part))
    }

    /// (H4)(ii) data for a nondecreasing Lipschitz map `phi` with `phi(0)=0`:
    /// returns `Gamma(phi(u), phi(u))`, `Gamma(u, phi(u))` and the constant
    /// `C5 = 2 Lip(phi)` valid for jump forms.
    pub fn check_h4ii(
        &self,
        u: &[f64],
        phi: &ScalarMap,
    ) -> Result<(Vec<f64>, Vec<f64>, f64), SpaceError> {
        let pu: Vec<f64> = u.iter().map(|&r| phi.eval(r)).collect();
        let lhs = self.carre_du_champ(&pu, &pu)?;
        let rhs = self.carre_du_champ(u, &pu)?;
        Ok((lhs, rhs, 2.0 * phi.lipschitz()))
    }
}

/// Nondecreasing Lipschitz scalar maps with `phi(0) = 0`, used by the
/// (H4)(ii) certification.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarMap {
    Identity,
    Scale { k: f64 },
    Clamp { lo: f64, hi: f64 },
    /// `sign(r) max(|r| - a, 0)`.
    DeadZone { a: f64 },
    /// `k * clamp(r, lo, hi)`.
    ScaledClamp { k: f64, lo: f64, hi: f64 },
}

impl ScalarMap {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            ScalarMap::Identity => r,
            ScalarMap::Scale { k } => k * r,
            ScalarMap::Clamp { lo, hi } => r.clamp(lo, hi),
            ScalarMap::DeadZone { a } => r.signum() * (r.abs() - a).max(0.0),
            ScalarMap::ScaledClamp { k, lo, hi } => k * r.clamp(lo, hi),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            ScalarMap::Identity | ScalarMap::Clamp { .. } | ScalarMap::DeadZone { .. } => 1.0,
            ScalarMap::Scale { k } | ScalarMap::ScaledClamp { k, .. } => k,
        }
    }
}

fn eigendecompose(space: &MeasureSpace, l: &DMatrix<f64>) -> Spectrum {
    let n = space.len();
    let d: Vec<f64> = space.weights.iter().map(|w| w.sqrt()).collect();
    // A~ = D^{1/2} (-L) D^{-1/2}: symmetric, positive semidefinite.
    let mut sym = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            sym[(i, j)] = -d[i] * l[(i, j)] / d[j];
        }
    }
    // enforce exact symmetry against roundoff
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (sym[(i, j)] + sym[(j, i)]);
            sym[(i, j)] = avg;
            sym[(j, i)] = avg;
        }
    }
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut kappas = Vec::with_capacity(n);
    let mut basis = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        kappas.push(eig.eigenvalues[k]);
        for i in 0..n {
            basis[(i, col)] = eig.eigenvectors[(i, k)] / d[i];
        }
    }
    Spectrum { kappas, basis }
}

/// Riesz identity check value: `||(1-L)u||_{F*_{1,2,1}}` should equal
/// `sqrt(E(u,u) + |u|_2^2)`.
pub fn riesz_image_norm(op: &DirichletOperator, u: &[f64]) -> Result<(f64, f64), SpaceError> {
    let image = op.apply_shifted(1.0, u);
    let lhs = op.dual_norm(&image, 1.0)?;
    let rhs = op.graph_norm_sq(u, 1.0)?.sqrt();
    Ok((lhs, rhs))
}

/// CSV export of the operator matrix, spectrum and measure (one file each)
/// for external inspection.
pub fn export_operator_csv(
    op: &DirichletOperator,
    dir: &std::path::Path,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let n = op.len();
    let mut rows = String::from("i,j,l_ij\n");
    for i in 0..n {
        for j in 0..n {
            if op.matrix()[(i, j)] != 0.0 || i == j {
                rows.push_str(&format!("{},{},{}\n", i, j, op.matrix()[(i, j)]));
            }
        }
    }
    std::fs::write(dir.join("operator.csv"), rows)?;
    let mut spec = String::from("k,kappa\n");
    for (k, kappa) in op.spectrum().kappas.iter().enumerate() {
        spec.push_str(&format!("{},{}\n", k, kappa));
    }
    std::fs::write(dir.join("spectrum.csv"), spec)?;
    let mut mu = String::from("i,mu,label\n");
    for i in 0..n {
        let label = op
            .space()
            .labels()
            .map(|l| l[i].clone())
            .unwrap_or_default();
        mu.push_str(&format!("{},{},{}\n", i, op.space().weights()[i], label));
    }
    std::fs::write(dir.join("measure.csv"), mu)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn two_point_chain() -> DirichletOperator {
        DirichletOperator::grid(1, 2, 1.0).unwrap()
    }

    /// L = -I on `n` points via a pure-killing jump form.
    fn minus_identity(n: usize) -> DirichletOperator {
        DirichletOperator::jump_kernel(
            MeasureSpace::uniform(n, 1.0),
            DMatrix::zeros(n, n),
            Some(vec![1.0; n]),
        )
        .unwrap()
    }

    fn random_state(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn grid_single_point() {
        let op = DirichletOperator::grid(1, 1, 1.0).unwrap();
        assert_eq!(op.matrix()[(0, 0)], -2.0);
    }

    #[test]
    fn grid_two_point_eigenvalues() {
        // Direct 2x2 eigensolve of [[-2,1],[1,-2]]: eigenvalues {-1,-3}.
        let op = two_point_chain();
        assert_relative_eq!(op.spectrum().kappas[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(op.spectrum().kappas[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn grid_row_sums_nonpositive() {
        for (dim, sides) in [(1usize, 7usize), (2, 4)] {
            let op = DirichletOperator::grid(dim, sides, 0.5).unwrap();
            let n = op.len();
            let mut any_strict = false;
            for i in 0..n {
                let row: f64 = (0..n).map(|j| op.matrix()[(i, j)]).sum();
                assert!(row <= 1e-12);
                if row < -1e-12 {
                    any_strict = true;
                }
            }
            assert!(any_strict, "boundary-adjacent rows must kill");
            assert!(op.is_transient());
        }
    }

    #[test]
    fn spectral_identity_and_sqrt() {
        let base = two_point_chain();
        let id = DirichletOperator::spectral_function(&base, &BernsteinFn::Power { alpha: 2.0 })
            .unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(id.matrix()[(i, j)], base.matrix()[(i, j)], epsilon = 1e-10);
            }
        }
        let sqrt = DirichletOperator::spectral_function(&base, &BernsteinFn::Power { alpha: 1.0 })
            .unwrap();
        assert_relative_eq!(sqrt.spectrum().kappas[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sqrt.spectrum().kappas[1], 3f64.sqrt(), epsilon = 1e-10);
        // single eigenvalue -4 -> -2
        let one = DirichletOperator::jump_kernel(
            MeasureSpace::uniform(1, 1.0),
            DMatrix::zeros(1, 1),
            Some(vec![4.0]),
        )
        .unwrap();
        let sq = DirichletOperator::spectral_function(&one, &BernsteinFn::Power { alpha: 1.0 })
            .unwrap();
        assert_relative_eq!(sq.matrix()[(0, 0)], -2.0, epsilon = 1e-12);
    }

    #[test]
    fn bernstein_rejects_negative_weights() {
        let f = BernsteinFn::Combination {
            terms: vec![(-1.0, BernsteinFn::Power { alpha: 1.0 })],
        };
        let base = two_point_chain();
        assert!(matches!(
            DirichletOperator::spectral_function(&base, &f),
            Err(SpaceError::InvalidBernstein(_))
        ));
    }

    #[test]
    fn jump_kernel_examples() {
        let mut j = DMatrix::zeros(2, 2);
        j[(0, 1)] = 1.0;
        j[(1, 0)] = 1.0;
        let op = DirichletOperator::jump_kernel(
            MeasureSpace::uniform(2, 1.0),
            j.clone(),
            Some(vec![1.0, 0.0]),
        )
        .unwrap();
        let u = vec![1.0, 0.0];
        assert_relative_eq!(op.energy(&u, &u).unwrap(), 3.0, epsilon = 1e-12);
        // constant function, zero killing: energy 0
        let free = DirichletOperator::jump_kernel(
            MeasureSpace::uniform(2, 1.0),
            j.clone(),
            Some(vec![0.0, 0.0]),
        )
        .unwrap();
        let c = vec![0.7, 0.7];
        assert_relative_eq!(free.energy(&c, &c).unwrap(), 0.0, epsilon = 1e-12);
        assert!(!free.is_transient());
        assert!(free.dual_norm(&c, 0.0).is_err());
        // no killing supplied at all -> refuse
        assert!(matches!(
            DirichletOperator::jump_kernel(MeasureSpace::uniform(2, 1.0), j, None),
            Err(SpaceError::NotTransient { .. })
        ));
        // J = 0, kappa = 1 -> L = -I
        let neg_id = minus_identity(3);
        for i in 0..3 {
            assert_relative_eq!(neg_id.matrix()[(i, i)], -1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn energy_matrix_oracle() {
        // 2-point chain, u=(1,0), v=(0,1): <-L u, v>_mu = -1.
        let op = two_point_chain();
        let u = vec![1.0, 0.0];
        let v = vec![0.0, 1.0];
        assert_relative_eq!(op.energy(&u, &v).unwrap(), -1.0, epsilon = 1e-14);
        assert_eq!(op.energy(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        // L = -I: E(u,u) = |u|_2^2
        let neg_id = minus_identity(4);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let w = random_state(4, &mut rng);
        assert_relative_eq!(
            neg_id.energy(&w, &w).unwrap(),
            neg_id.space().inner(&w, &w),
            epsilon = 1e-12
        );
    }

    #[test]
    fn dual_norm_examples() {
        let neg_id = minus_identity(5);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let l = random_state(5, &mut rng);
        for nu in [0.0, 0.3, 1.0, 2.5] {
            assert_relative_eq!(
                neg_id.dual_norm(&l, nu).unwrap(),
                neg_id.space().l2_norm(&l) / (1.0 + nu).sqrt(),
                epsilon = 1e-12
            );
        }
        let zero = vec![0.0; 5];
        assert_eq!(neg_id.dual_norm(&zero, 0.5).unwrap(), 0.0);
        // 2-point chain, l = (1,0), nu = 0: solve -Lz = l directly.
        let op = two_point_chain();
        let l = vec![1.0, 0.0];
        let z = op.resolvent_solve(0.0, &l).unwrap();
        assert_relative_eq!(z[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(z[1], 1.0 / 3.0, epsilon = 1e-12);
        let expect = op.space().inner(&l, &z).sqrt();
        assert_relative_eq!(op.dual_norm(&l, 0.0).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn dual_norm_matches_direct_solve_oracle() {
        let op = DirichletOperator::sierpinski(2, 0.3, 0.5).unwrap();
        let n = op.len();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..20 {
            let l = random_state(n, &mut rng);
            for nu in [0.0, 1e-4, 0.5] {
                // independent route: dense LU solve of (nu - L) z = l
                let mut m = -op.matrix().clone();
                for i in 0..n {
                    m[(i, i)] += nu;
                }
                let rhs = DVector::from_column_slice(&l);
                let z = m.lu().solve(&rhs).unwrap();
                let direct = op
                    .space()
                    .inner(&l, z.as_slice())
                    .sqrt();
                assert_relative_eq!(op.dual_norm(&l, nu).unwrap(), direct, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn proposition_21_family() {
        let ops = vec![
            DirichletOperator::grid(1, 24, 0.2).unwrap(),
            DirichletOperator::sierpinski(2, 0.3, 0.5).unwrap(),
        ];
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        for op in &ops {
            let n = op.len();
            for _ in 0..50 {
                let l = random_state(n, &mut rng);
                // nu -> ||l||_nu is decreasing: traversing nu = 1, 1e-1, ...
                // downward the values must not shrink.
                let mut prev = 0.0;
                for k in 0..=8 {
                    let nu = 10f64.powi(-k);
                    let val = op.dual_norm(&l, nu).unwrap();
                    assert!(val >= prev * (1.0 - 1e-13));
                    prev = val;
                }
                // limit matches nu = 0
                let at_tiny = op.dual_norm(&l, 1e-8).unwrap();
                let at_zero = op.dual_norm(&l, 0.0).unwrap();
                assert!((at_tiny - at_zero).abs() <= 1e-6 * at_zero.max(1e-30));
                // sandwich against the nu = 1 norm
                let ref_norm = op.dual_norm(&l, 1.0).unwrap();
                for nu in [0.9, 0.5, 0.1, 1e-3] {
                    let val = op.dual_norm(&l, nu).unwrap();
                    assert!(ref_norm <= val * (1.0 + 1e-12));
                    assert!(val <= ref_norm / nu.sqrt() * (1.0 + 1e-12));
                }
                // embedding: ||u||_{F*_{1,2,nu0}} <= |u|_2 / sqrt(nu0)
                for nu0 in [1.0, 0.25, 1e-2] {
                    assert!(
                        op.dual_norm(&l, nu0).unwrap()
                            <= op.space().l2_norm(&l) / nu0.sqrt() * (1.0 + 1e-12)
                    );
                }
            }
        }
    }

    #[test]
    fn riesz_isometry() {
        let ops = vec![
            DirichletOperator::grid(1, 16, 0.25).unwrap(),
            DirichletOperator::sierpinski(2, 0.25, 0.6).unwrap(),
        ];
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for op in &ops {
            for _ in 0..30 {
                let u = random_state(op.len(), &mut rng);
                let (lhs, rhs) = riesz_image_norm(op, &u).unwrap();
                assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn carre_du_champ_examples() {
        let mut j = DMatrix::zeros(2, 2);
        j[(0, 1)] = 1.0;
        j[(1, 0)] = 1.0;
        let op = DirichletOperator::jump_kernel(
            MeasureSpace::uniform(2, 1.0),
            j,
            Some(vec![0.0, 0.0]),
        )
        .unwrap();
        let u = vec![1.0, 0.0];
        let g = op.carre_du_champ(&u, &u).unwrap();
        assert_relative_eq!(g[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(g[1], 2.0, epsilon = 1e-14);
        let c = vec![0.4, 0.4];
        assert_eq!(op.carre_du_champ(&c, &c).unwrap(), vec![0.0, 0.0]);
        assert_eq!(op.carre_du_champ(&u, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        // spectral kinds expose no kernel
        let base = two_point_chain();
        let spectral =
            DirichletOperator::spectral_function(&base, &BernsteinFn::Power { alpha: 1.0 })
                .unwrap();
        assert!(matches!(
            spectral.carre_du_champ(&u, &u),
            Err(SpaceError::NoKernel)
        ));
    }

    #[test]
    fn h4_identity_and_domination() {
        let ops = vec![
            DirichletOperator::grid(1, 12, 0.3).unwrap(),
            DirichletOperator::sierpinski(2, 0.3, 0.5).unwrap(),
        ];
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for op in &ops {
            for _ in 0..40 {
                let u = random_state(op.len(), &mut rng);
                let (jump, kill) = op.h4i_split(&u).unwrap();
                let total = op.energy(&u, &u).unwrap();
                assert_relative_eq!(jump + kill, total, max_relative = 1e-11);
                // (H4)(ii) with identity and a clamp
                for phi in [
                    ScalarMap::Identity,
                    ScalarMap::Clamp { lo: -1.0, hi: 1.0 },
                    ScalarMap::DeadZone { a: 0.2 },
                ] {
                    let (lhs, rhs, c5) = op.check_h4ii(&u, &phi).unwrap();
                    for (a, b) in lhs.iter().zip(&rhs) {
                        assert!(*a <= c5 * *b + 1e-12, "pointwise (H4)(ii)");
                    }
                }
            }
        }
    }

    #[test]
    fn sierpinski_construction() {
        let op = DirichletOperator::sierpinski(1, 0.3, 0.5).unwrap();
        // words of length <= 1 over three letters
        assert_eq!(op.len(), 4);
        // mu at the root word is (c/3 lambda)^0 = 1
        assert_relative_eq!(op.space().weights()[0], 1.0, epsilon = 1e-15);
        assert!(op.is_transient());
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let lvl3 = DirichletOperator::sierpinski(3, 0.3, 0.5).unwrap();
        assert_eq!(lvl3.len(), 40);
        for _ in 0..20 {
            let a: Vec<f64> = (0..lvl3.len())
                .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
                .collect();
            assert!(lvl3.energy(&a, &a).unwrap() >= -1e-12);
        }
    }
}
