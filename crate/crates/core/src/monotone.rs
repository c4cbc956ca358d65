//! Maximal monotone graphs on the real line with polynomial growth.
//!
//! A graph is stored as finitely many smooth pieces (power / linear /
//! constant) on contiguous half-open intervals, plus filled jump intervals
//! at discontinuities. This covers the sign graph, fast diffusion
//! `|r|^gamma sign(r)`, the classical power nonlinearity `|r|^{m-1} r` and
//! the staircase-with-gaps example, and admits exact scalar resolvents.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid graph specification: {0}")]
    InvalidSpec(String),
    #[error("graph is not maximal monotone near y = {at}: resolvent target unreachable (gap width {gap:.3e})")]
    NonMaximal { at: f64, gap: f64 },
}

/// One smooth branch of the graph.
///
/// `Power` is `r -> c * |r - r0|^{a-1} (r - r0) + offset` with `a > 0`,
/// `c >= 0`; it degenerates to `Linear` at `a = 1`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PieceKind {
    Power { a: f64, c: f64, r0: f64, offset: f64 },
    Linear { slope: f64, offset: f64 },
    Constant { value: f64 },
}

impl PieceKind {
    fn value(&self, r: f64) -> f64 {
        match *self {
            PieceKind::Power { a, c, r0, offset } => {
                // |t|^{a-1} t written as |t|^a sign(t) so that t = 0 is finite
                // for a < 1.
                let t = r - r0;
                if t == 0.0 {
                    offset
                } else {
                    c * t.abs().powf(a) * t.signum() + offset
                }
            }
            PieceKind::Linear { slope, offset } => slope * r + offset,
            PieceKind::Constant { value } => value,
        }
    }

    /// Classical derivative of the branch; `+inf` where it blows up
    /// (power pieces with a < 1 at the center point).
    fn slope(&self, r: f64) -> f64 {
        match *self {
            PieceKind::Power { a, c, r0, .. } => {
                let t = (r - r0).abs();
                if t == 0.0 {
                    if a > 1.0 {
                        0.0
                    } else if a == 1.0 {
                        c
                    } else {
                        f64::INFINITY
                    }
                } else {
                    c * a * t.powf(a - 1.0)
                }
            }
            PieceKind::Linear { slope, .. } => slope,
            PieceKind::Constant { .. } => 0.0,
        }
    }

    fn is_nondecreasing(&self) -> bool {
        match *self {
            PieceKind::Power { a, c, .. } => a > 0.0 && c >= 0.0,
            PieceKind::Linear { slope, .. } => slope >= 0.0,
            PieceKind::Constant { .. } => true,
        }
    }
}

/// A filled discontinuity: `Psi(at) = [lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Jump {
    pub at: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Maximal monotone multi-valued map `R -> 2^R` with `0 in Psi(0)` and
/// growth `sup |Psi(r)| <= C (|r|^m + 1)`.
///
/// Pieces live on contiguous intervals delimited by `breakpoints`:
/// piece `i` covers `[breakpoints[i-1], breakpoints[i])` (first piece is
/// unbounded to the left, last to the right). Jumps sit at breakpoints.
#[derive(Debug, Clone)]
pub struct MonotoneGraph {
    breakpoints: Vec<f64>,
    pieces: Vec<PieceKind>,
    jumps: Vec<Jump>,
    growth_m: f64,
    growth_c: f64,
}

impl MonotoneGraph {
    /// Validates ordering of pieces, per-piece and cross-piece monotonicity,
    /// `0 in Psi(0)` and the declared growth bound on a sample grid.
    /// Gap-filling (maximality) is *not* fully decided here; an unfilled gap
    /// surfaces as [`GraphError::NonMaximal`] from the resolvent.
    pub fn new(
        breakpoints: Vec<f64>,
        pieces: Vec<PieceKind>,
        jumps: Vec<Jump>,
        growth_m: f64,
        growth_c: f64,
    ) -> Result<Self, GraphError> {
        if pieces.is_empty() || pieces.len() != breakpoints.len() + 1 {
            return Err(GraphError::InvalidSpec(
                "need k pieces and k-1 breakpoints".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GraphError::InvalidSpec(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        if !(growth_m >= 1.0) || !(growth_c > 0.0) {
            return Err(GraphError::InvalidSpec(
                "growth requires m >= 1 and C > 0".into(),
            ));
        }
        for jump in &jumps {
            if !breakpoints.contains(&jump.at) {
                return Err(GraphError::InvalidSpec(format!(
                    "jump at {} is not a piece breakpoint",
                    jump.at
                )));
            }
            if jump.lo > jump.hi {
                return Err(GraphError::InvalidSpec("jump interval empty".into()));
            }
        }
        let graph = MonotoneGraph {
            breakpoints,
            pieces,
            jumps,
            growth_m,
            growth_c,
        };
        graph.validate_monotone()?;
        graph.validate_origin()?;
        graph.validate_growth()?;
        Ok(graph)
    }

    fn validate_monotone(&self) -> Result<(), GraphError> {
        for (i, piece) in self.pieces.iter().enumerate() {
            if !piece.is_nondecreasing() {
                return Err(GraphError::InvalidSpec(format!(
                    "piece {i} is not nondecreasing"
                )));
            }
        }
        // Across breakpoints: left limit <= (jump lo <= jump hi <=) right limit.
        for (i, &b) in self.breakpoints.iter().enumerate() {
            let left = self.pieces[i].value(b);
            let right = self.pieces[i + 1].value(b);
            let tol = 1e-12 * (1.0 + left.abs().max(right.abs()));
            if let Some(j) = self.jump_at(b) {
                if left > j.lo + tol || j.hi > right + tol {
                    return Err(GraphError::InvalidSpec(format!(
                        "jump at {b} breaks monotone ordering"
                    )));
                }
            } else if left > right + tol {
                return Err(GraphError::InvalidSpec(format!(
                    "branch decreases across breakpoint {b}"
                )));
            }
        }
        Ok(())
    }

    fn validate_origin(&self) -> Result<(), GraphError> {
        let (lo, hi) = self.eval_set(0.0);
        if lo > 1e-12 || hi < -1e-12 {
            return Err(GraphError::InvalidSpec("0 not in Psi(0)".into()));
        }
        Ok(())
    }

    fn validate_growth(&self) -> Result<(), GraphError> {
        let mut r = -20.0;
        while r <= 20.0 {
            let (lo, hi) = self.eval_set(r);
            let sup = lo.abs().max(hi.abs());
            let bound = self.growth_c * (r.abs().powf(self.growth_m) + 1.0);
            if sup > bound * (1.0 + 1e-12) {
                return Err(GraphError::InvalidSpec(format!(
                    "growth bound C(|r|^m + 1) violated at r = {r}: |Psi| = {sup}, bound = {bound}"
                )));
            }
            r += 0.25;
        }
        Ok(())
    }

    pub fn growth_m(&self) -> f64 {
        self.growth_m
    }

    pub fn growth_c(&self) -> f64 {
        self.growth_c
    }

    pub fn pieces(&self) -> &[PieceKind] {
        &self.pieces
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    fn jump_at(&self, r: f64) -> Option<&Jump> {
        self.jumps.iter().find(|j| j.at == r)
    }

    /// Index of the piece whose half-open interval contains `r`.
    fn piece_index(&self, r: f64) -> usize {
        self.breakpoints.partition_point(|&b| b <= r)
    }

    fn branch_value(&self, r: f64) -> f64 {
        self.pieces[self.piece_index(r)].value(r)
    }

    /// `Psi(r)` as a closed interval `[lo, hi]` (singleton off jumps).
    pub fn eval_set(&self, r: f64) -> (f64, f64) {
        if let Some(j) = self.jump_at(r) {
            (j.lo, j.hi)
        } else {
            let v = self.branch_value(r);
            (v, v)
        }
    }

    /// Minimal section `Psi^0(r)`: the element of `Psi(r)` of least modulus.
    pub fn minimal_section(&self, r: f64) -> f64 {
        let (lo, hi) = self.eval_set(r);
        if lo <= 0.0 && 0.0 <= hi {
            0.0
        } else if lo > 0.0 {
            lo
        } else {
            hi
        }
    }

    /// One-sided slope interval of the graph at `r` (for generalized
    /// derivatives): `inf`/`sup` of branch slopes on the two sides, with
    /// `+inf` at jump points.
    pub fn slope_interval(&self, r: f64) -> (f64, f64) {
        if self.jump_at(r).is_some() {
            return (f64::INFINITY, f64::INFINITY);
        }
        let idx = self.piece_index(r);
        let here = self.pieces[idx].slope(r);
        // At a continuous breakpoint the left piece may have a different slope.
        if idx > 0 && self.breakpoints[idx - 1] == r {
            let left = self.pieces[idx - 1].slope(r);
            (here.min(left), here.max(left))
        } else {
            (here, here)
        }
    }

    /// Resolvent `(1 + lambda Psi)^{-1}(r)`: the unique `y` with
    /// `y + lambda Psi(y) ∋ r`. Exact for linear/constant branches; power
    /// branches are solved to machine precision by safeguarded Newton.
    pub fn resolvent(&self, lambda: f64, r: f64) -> Result<f64, GraphError> {
        assert!(lambda > 0.0, "resolvent needs lambda > 0");
        if r == 0.0 {
            return Ok(0.0);
        }
        // g(y) = y + lambda*Psi(y) is strictly increasing; the solution lies
        // between 0 and r because 0 in Psi(0).
        let g_interval = |y: f64| {
            let (lo, hi) = self.eval_set(y);
            (y + lambda * lo, y + lambda * hi)
        };
        let (g0_lo, g0_hi) = g_interval(0.0);
        if g0_lo <= r && r <= g0_hi {
            return Ok(0.0);
        }
        let (mut a, mut b) = if r > 0.0 { (0.0, r) } else { (r, 0.0) };
        // Walk the breakpoints inside (a, b) to find the carrying segment.
        let lo_idx = self.breakpoints.partition_point(|&v| v <= a);
        let hi_idx = self.breakpoints.partition_point(|&v| v < b);
        for k in lo_idx..hi_idx {
            let bp = self.breakpoints[k];
            let (glo, ghi) = g_interval(bp);
            if glo <= r && r <= ghi {
                return Ok(bp);
            }
            if ghi < r {
                a = bp;
            } else {
                b = bp;
                break;
            }
        }
        // Detect an unfilled gap: the interval limits on each side of `b`
        // (or `a`) must sandwich the target for a maximal graph.
        let piece = {
            let mid = 0.5 * (a + b);
            let idx = self.piece_index(mid);
            // Left endpoint may be a breakpoint whose right piece is `idx`.
            self.pieces[idx]
        };
        let left_val = a + lambda * piece.value(a);
        let right_val = b + lambda * piece.value(b);
        let (seg_lo, seg_hi) = (left_val.min(right_val), left_val.max(right_val));
        let tol = 1e-12 * (1.0 + r.abs());
        if r < seg_lo - tol || r > seg_hi + tol {
            // The smooth segment cannot reach the target: the graph has a gap.
            let gap = if r < seg_lo { seg_lo - r } else { r - seg_hi };
            return Err(GraphError::NonMaximal { at: a, gap });
        }
        Ok(solve_piece(&piece, lambda, r, a, b))
    }

    /// Yosida approximation `Psi_lambda(r) = (r - (1+lambda Psi)^{-1} r)/lambda`.
    pub fn yosida(&self, lambda: f64, r: f64) -> Result<f64, GraphError> {
        Ok((r - self.resolvent(lambda, r)?) / lambda)
    }

    /// Convex primitive `j(r) = int_0^r Psi^0(s) ds`, in closed form per piece.
    pub fn primitive_j(&self, r: f64) -> f64 {
        if r == 0.0 {
            return 0.0;
        }
        let (lo, hi) = if r > 0.0 { (0.0, r) } else { (r, 0.0) };
        let sign = if r > 0.0 { 1.0 } else { -1.0 };
        let mut total = 0.0;
        let mut left = lo;
        let start = self.breakpoints.partition_point(|&b| b <= lo);
        for k in start..self.breakpoints.len() {
            let bp = self.breakpoints[k];
            if bp >= hi {
                break;
            }
            total += piece_integral(&self.pieces[k], left, bp);
            left = bp;
        }
        let idx = self.piece_index(0.5 * (left + hi));
        total += piece_integral(&self.pieces[idx], left, hi);
        sign * total
    }

    /// Moreau envelope `j_lambda(r) = inf { |r - s|^2 / (2 lambda) + j(s) }`,
    /// evaluated through the proximal identity with `s = (1+lambda Psi)^{-1}(r)`.
    pub fn moreau_envelope(&self, lambda: f64, r: f64) -> Result<f64, GraphError> {
        let y = self.resolvent(lambda, r)?;
        Ok((r - y) * (r - y) / (2.0 * lambda) + self.primitive_j(y))
    }

    /// Solves `|z|^{m-1} z + Psi(z) ∋ w` (the duality device used for
    /// uniqueness), by set-valued bisection with bracket expansion.
    pub fn duality_resolvent(&self, m: f64, w: f64) -> Result<f64, GraphError> {
        assert!(m >= 1.0, "duality resolvent needs m >= 1");
        if w == 0.0 {
            return Ok(0.0);
        }
        let f_interval = |z: f64| {
            let j = z.abs().powf(m - 1.0) * z;
            let (lo, hi) = self.eval_set(z);
            (j + lo, j + hi)
        };
        let (mut a, mut b) = (w.min(0.0), w.max(0.0));
        // Expand until the bracket straddles the target (range of J + Psi is R).
        for _ in 0..200 {
            let (alo, _) = f_interval(a);
            let (_, bhi) = f_interval(b);
            if alo <= w && w <= bhi {
                break;
            }
            if w < alo {
                a = 2.0 * a - 1.0;
            } else {
                b = 2.0 * b + 1.0;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            let (lo, hi) = f_interval(mid);
            if lo <= w && w <= hi {
                return Ok(mid);
            }
            if hi < w {
                a = mid;
            } else {
                b = mid;
            }
            if b - a < 1e-12 * (1.0 + w.abs()) {
                break;
            }
        }
        let mid = 0.5 * (a + b);
        let (lo, hi) = f_interval(mid);
        let dist = if w < lo {
            lo - w
        } else if w > hi {
            w - hi
        } else {
            0.0
        };
        if dist > 1e-9 * (1.0 + w.abs()) {
            return Err(GraphError::NonMaximal { at: mid, gap: dist });
        }
        Ok(mid)
    }

    // ---- canonical graphs ----

    /// `Psi(r) = slope * r`.
    pub fn linear(slope: f64) -> Self {
        MonotoneGraph::new(
            vec![],
            vec![PieceKind::Linear { slope, offset: 0.0 }],
            vec![],
            1.0,
            slope.max(1.0),
        )
        .expect("linear graph is valid")
    }

    /// `Psi == 0` (free motion; still a valid maximal monotone graph).
    pub fn zero() -> Self {
        MonotoneGraph::new(
            vec![],
            vec![PieceKind::Constant { value: 0.0 }],
            vec![],
            1.0,
            1.0,
        )
        .expect("zero graph is valid")
    }

    /// The sign graph: `-1` on `r<0`, `[-1,1]` at `0`, `1` on `r>0`.
    pub fn sign() -> Self {
        MonotoneGraph::new(
            vec![0.0],
            vec![
                PieceKind::Constant { value: -1.0 },
                PieceKind::Constant { value: 1.0 },
            ],
            vec![Jump {
                at: 0.0,
                lo: -1.0,
                hi: 1.0,
            }],
            1.0,
            1.0,
        )
        .expect("sign graph is valid")
    }

    /// Fast diffusion `Psi(r) = |r|^gamma sign(r)`, `gamma in [0,1]`;
    /// `gamma = 0` degenerates to the sign graph (the SOC model).
    pub fn fast_diffusion(gamma: f64) -> Self {
        assert!((0.0..=1.0).contains(&gamma));
        if gamma == 0.0 {
            return Self::sign();
        }
        MonotoneGraph::new(
            vec![],
            vec![PieceKind::Power {
                a: gamma,
                c: 1.0,
                r0: 0.0,
                offset: 0.0,
            }],
            vec![],
            1.0,
            1.0,
        )
        .expect("fast diffusion graph is valid")
    }

    /// `Psi(r) = |r|^{m-1} r`, the classical porous-medium nonlinearity.
    pub fn power(m: f64) -> Self {
        assert!(m >= 1.0);
        MonotoneGraph::new(
            vec![],
            vec![PieceKind::Power {
                a: m,
                c: 1.0,
                r0: 0.0,
                offset: 0.0,
            }],
            vec![],
            m,
            1.0,
        )
        .expect("power graph is valid")
    }

    /// The staircase-with-gaps graph: power branches around `r = ±2`,
    /// plateaus at `∓2`/`±2`, the power core `|r|^{m-1} r` on `(-1,1)`,
    /// and filled jumps `[-2,-1]` at `r=-1` and `[1,2]` at `r=1`.
    pub fn staircase(m: f64) -> Self {
        assert!(m >= 1.0);
        MonotoneGraph::new(
            vec![-2.0, -1.0, 1.0, 2.0],
            vec![
                PieceKind::Power {
                    a: m,
                    c: 1.0,
                    r0: -2.0,
                    offset: -2.0,
                },
                PieceKind::Constant { value: -2.0 },
                PieceKind::Power {
                    a: m,
                    c: 1.0,
                    r0: 0.0,
                    offset: 0.0,
                },
                PieceKind::Constant { value: 2.0 },
                PieceKind::Power {
                    a: m,
                    c: 1.0,
                    r0: 2.0,
                    offset: 2.0,
                },
            ],
            vec![
                Jump {
                    at: -1.0,
                    lo: -2.0,
                    hi: -1.0,
                },
                Jump {
                    at: 1.0,
                    lo: 1.0,
                    hi: 2.0,
                },
            ],
            m,
            2.0,
        )
        .expect("staircase graph is valid")
    }
}

/// Solve `y + lambda * piece(y) = r` for `y` in `[a, b]` on one smooth piece.
fn solve_piece(piece: &PieceKind, lambda: f64, r: f64, a: f64, b: f64) -> f64 {
    match *piece {
        PieceKind::Constant { value } => r - lambda * value,
        PieceKind::Linear { slope, offset } => (r - lambda * offset) / (1.0 + lambda * slope),
        PieceKind::Power { a: exp, c, r0, offset } => {
            // t + kappa |t|^{exp-1} t = rho with t = y - r0.
            let kappa = lambda * c;
            let rho = r - r0 - lambda * offset;
            if kappa == 0.0 {
                return (r0 + rho).clamp(a, b);
            }
            if rho == 0.0 {
                return r0.clamp(a, b);
            }
            let mag = solve_power_scalar(kappa, exp, rho.abs());
            (r0 + rho.signum() * mag).clamp(a, b)
        }
    }
}

/// Root of `u + kappa u^a = rho` over `u >= 0` (`kappa, rho > 0`), by
/// bisection-safeguarded Newton, to machine precision.
fn solve_power_scalar(kappa: f64, a: f64, rho: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, rho);
    let mut u = rho / (1.0 + kappa * rho.powf(a - 1.0));
    if !u.is_finite() || u <= lo || u >= hi {
        u = 0.5 * rho;
    }
    for _ in 0..200 {
        let f = u + kappa * u.powf(a) - rho;
        if f > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let fp = 1.0 + kappa * a * u.powf(a - 1.0);
        let step = f / fp;
        let mut next = u - step;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= 4.0 * f64::EPSILON * (1.0 + u.abs()) {
            return next;
        }
        u = next;
        if hi - lo <= 4.0 * f64::EPSILON * (1.0 + hi) {
            return 0.5 * (lo + hi);
        }
    }
    u
}

/// `int piece(s) ds` over `[lo, hi]` in closed form.
fn piece_integral(piece: &PieceKind, lo: f64, hi: f64) -> f64 {
    match *piece {
        PieceKind::Constant { value } => value * (hi - lo),
        PieceKind::Linear { slope, offset } => {
            0.5 * slope * (hi * hi - lo * lo) + offset * (hi - lo)
        }
        PieceKind::Power { a, c, r0, offset } => {
            let anti = |s: f64| c * (s - r0).abs().powf(a + 1.0) / (a + 1.0) + offset * s;
            anti(hi) - anti(lo)
        }
    }
}

/// A graph together with a fixed Yosida parameter `lambda > 0`.
#[derive(Debug, Clone, Copy)]
pub struct YosidaView<'a> {
    pub graph: &'a MonotoneGraph,
    pub lambda: f64,
}

impl<'a> YosidaView<'a> {
    pub fn new(graph: &'a MonotoneGraph, lambda: f64) -> Self {
        assert!(lambda > 0.0, "Yosida parameter must be positive");
        YosidaView { graph, lambda }
    }

    pub fn resolvent(&self, r: f64) -> Result<f64, GraphError> {
        self.graph.resolvent(self.lambda, r)
    }

    pub fn yosida(&self, r: f64) -> Result<f64, GraphError> {
        self.graph.yosida(self.lambda, r)
    }

    pub fn moreau_envelope(&self, r: f64) -> Result<f64, GraphError> {
        self.graph.moreau_envelope(self.lambda, r)
    }

    /// `(Psi_lambda + lambda I)(r)` — the regularized drift nonlinearity.
    pub fn drift(&self, r: f64) -> Result<f64, GraphError> {
        Ok(self.yosida(r)? + self.lambda * r)
    }

    /// Inverse of the strictly increasing `Psi_lambda + lambda I`.
    ///
    /// Reduces to one plain resolvent: with `beta = (1 + lambda^2)/lambda`,
    /// `z = (1 + beta Psi)^{-1}(w / lambda)` and `eta = (w - lambda z)/(1 + lambda^2)`
    /// give `y = z + lambda * eta`.
    pub fn drift_inverse(&self, w: f64) -> Result<f64, GraphError> {
        let l = self.lambda;
        let beta = (1.0 + l * l) / l;
        let z = self.graph.resolvent(beta, w / l)?;
        let eta = (w - l * z) / (1.0 + l * l);
        Ok(z + l * eta)
    }

    /// Generalized derivative of [`Self::drift_inverse`] at `w`, midpoint of
    /// the clamped-slope interval at kinks.
    pub fn drift_inverse_slope(&self, w: f64) -> Result<f64, GraphError> {
        let l = self.lambda;
        let beta = (1.0 + l * l) / l;
        let z = self.graph.resolvent(beta, w / l)?;
        let (s_lo, s_hi) = self.graph.slope_interval(z);
        let dy = |s: f64| {
            let zprime = if s.is_infinite() {
                0.0
            } else {
                (1.0 / l) / (1.0 + beta * s)
            };
            (zprime + l) / (1.0 + l * l)
        };
        Ok(0.5 * (dy(s_lo) + dy(s_hi)))
    }

    /// Pointwise lift of the drift to state vectors.
    pub fn drift_vec(&self, x: &[f64]) -> Result<Vec<f64>, GraphError> {
        x.iter().map(|&r| self.drift(r)).collect()
    }

    pub fn yosida_vec(&self, x: &[f64]) -> Result<Vec<f64>, GraphError> {
        x.iter().map(|&r| self.yosida(r)).collect()
    }

    pub fn drift_inverse_vec(&self, w: &[f64]) -> Result<Vec<f64>, GraphError> {
        w.iter().map(|&r| self.drift_inverse(r)).collect()
    }
}
