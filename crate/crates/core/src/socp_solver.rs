//! Second-order cone solver for problems of the form
//!
//! ```text
//! minimize    t
//! subject to  ‖A_i z‖ ≤ t      (slack cones)
//!             ‖A_i z‖ ≤ c_i    (constant cones)
//!             a_kᵀ z ≥ b_k     (linear rows)
//! ```
//!
//! solved by a log-barrier path-following method with damped Newton steps.
//! Infeasible warm starts go through a phase-I problem first. All sums run
//! in a fixed order, so results do not depend on the thread count.

use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use std::ops::AddAssign;

use crate::error::{ConstraintClass, Error, Result};

/// Real linear map `z ↦ A z` used inside a cone constraint.
pub trait ConeBlock: Send + Sync + std::fmt::Debug {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// `out = A z`.
    fn apply(&self, z: &[f64], out: &mut [f64]);
    /// `out = Aᵀ u`.
    fn apply_t(&self, u: &[f64], out: &mut [f64]);
    /// `h += scale · AᵀA`.
    fn add_gram(&self, scale: f64, h: &mut DMatrix<f64>) {
        let n = self.cols();
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; self.rows()];
        let mut g = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            self.apply_t(&col, &mut g);
            for i in 0..n {
                h[(i, j)] += scale * g[i];
            }
            e[j] = 0.0;
        }
    }
    /// Number of complex columns when the block is the real embedding
    /// `[[Re S, −Im S], [Im S, Re S]]` of a complex map `S`.
    fn complex_cols(&self) -> Option<usize> {
        None
    }
    /// `g += scale · SᴴS`; only called when `complex_cols` is `Some`.
    fn add_complex_gram(&self, _scale: f64, _g: &mut DMatrix<Complex64>) {
        unreachable!("block has no complex embedding")
    }
    fn to_dense(&self) -> DMatrix<f64> {
        let n = self.cols();
        let mut m = DMatrix::zeros(self.rows(), n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; self.rows()];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            m.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        m
    }
}

/// Dense block with a cached Gram matrix.
#[derive(Debug, Clone)]
pub struct DenseBlock {
    a: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl DenseBlock {
    pub fn new(a: DMatrix<f64>) -> Self {
        let gram = a.transpose() * &a;
        Self { a, gram }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
}

impl ConeBlock for DenseBlock {
    fn rows(&self) -> usize {
        self.a.nrows()
    }

    fn cols(&self) -> usize {
        self.a.ncols()
    }

    fn apply(&self, z: &[f64], out: &mut [f64]) {
        let (r, c) = self.a.shape();
        for (i, o) in out.iter_mut().enumerate().take(r) {
            let mut acc = 0.0;
            for (j, zj) in z.iter().enumerate().take(c) {
                acc += self.a[(i, j)] * zj;
            }
            *o = acc;
        }
    }

    fn apply_t(&self, u: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.a.column(j).iter().zip(u).map(|(a, b)| a * b).sum();
        }
    }

    fn add_gram(&self, scale: f64, h: &mut DMatrix<f64>) {
        h.zip_apply(&self.gram, |a, b| *a += scale * b);
    }

    fn to_dense(&self) -> DMatrix<f64> {
        self.a.clone()
    }
}

/// Identity block `z ↦ z`, used for norm bounds.
#[derive(Debug, Clone, Copy)]
pub struct IdentityBlock {
    n: usize,
    complex: bool,
}

impl IdentityBlock {
    /// `complex` marks `z` as the embedding `[Re h; Im h]` of complex taps.
    pub fn new(n: usize, complex: bool) -> Self {
        Self { n, complex }
    }
}

impl ConeBlock for IdentityBlock {
    fn rows(&self) -> usize {
        self.n
    }

    fn cols(&self) -> usize {
        self.n
    }

    fn apply(&self, z: &[f64], out: &mut [f64]) {
        out[..self.n].copy_from_slice(&z[..self.n]);
    }

    fn apply_t(&self, u: &[f64], out: &mut [f64]) {
        out[..self.n].copy_from_slice(&u[..self.n]);
    }

    fn add_gram(&self, scale: f64, h: &mut DMatrix<f64>) {
        for i in 0..self.n {
            h[(i, i)] += scale;
        }
    }

    fn complex_cols(&self) -> Option<usize> {
        (self.complex && self.n.is_multiple_of(2)).then_some(self.n / 2)
    }

    fn add_complex_gram(&self, scale: f64, g: &mut DMatrix<Complex64>) {
        for i in 0..self.n / 2 {
            g[(i, i)] += scale;
        }
    }
}

/// Real embedding of a complex matrix acting on `[Re h; Im h]`:
/// `[[Re S, −Im S], [Im S, Re S]]`. With `real_taps` only the first
/// column half is kept (`h` constrained to be real).
pub fn lift_complex_matrix(s: &DMatrix<Complex64>, real_taps: bool) -> DMatrix<f64> {
    let (m, n) = s.shape();
    let cols = if real_taps { n } else { 2 * n };
    DMatrix::from_fn(2 * m, cols, |r, c| {
        let (row, top) = if r < m { (r, true) } else { (r - m, false) };
        let (col, left) = if c < n { (c, true) } else { (c - n, false) };
        let v = s[(row, col)];
        match (top, left) {
            (true, true) => v.re,
            (true, false) => -v.im,
            (false, true) => v.im,
            (false, false) => v.re,
        }
    })
}

pub fn lift_complex_vector(h: &DVector<Complex64>, real_taps: bool) -> DVector<f64> {
    let n = h.len();
    if real_taps {
        DVector::from_fn(n, |i, _| h[i].re)
    } else {
        DVector::from_fn(2 * n, |i, _| if i < n { h[i].re } else { h[i - n].im })
    }
}

pub fn unlift_vector(z: &[f64], taps: usize) -> DVector<Complex64> {
    if z.len() == taps {
        DVector::from_fn(taps, |i, _| Complex64::new(z[i], 0.0))
    } else {
        DVector::from_fn(taps, |i, _| Complex64::new(z[i], z[taps + i]))
    }
}

/// Row `r` with `Re(cᴴh) = rᵀ z`.
pub fn lift_affine(c: &DVector<Complex64>, real_taps: bool) -> DVector<f64> {
    lift_complex_vector(c, real_taps)
}

/// Dense block built from a complex matrix.
pub fn lift_complex(s: &DMatrix<Complex64>, real_taps: bool) -> DenseBlock {
    DenseBlock::new(lift_complex_matrix(s, real_taps))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConeBound {
    /// `‖A z‖ ≤ t`.
    Slack,
    /// `‖A z‖ ≤ c`.
    Constant(f64),
}

#[derive(Debug, Clone)]
pub struct SocConstraint {
    pub block: Arc<dyn ConeBlock>,
    pub bound: ConeBound,
    pub class: ConstraintClass,
}

/// `rowᵀ z ≥ rhs`.
#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub row: DVector<f64>,
    pub rhs: f64,
    pub class: ConstraintClass,
}

#[derive(Debug, Clone)]
pub struct ConeProblem {
    n: usize,
    socs: Vec<SocConstraint>,
    rows: Vec<LinearConstraint>,
}

impl ConeProblem {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            socs: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n
    }

    pub fn socs(&self) -> &[SocConstraint] {
        &self.socs
    }

    pub fn linear(&self) -> &[LinearConstraint] {
        &self.rows
    }

    pub fn add_soc(
        &mut self,
        block: Arc<dyn ConeBlock>,
        bound: ConeBound,
        class: ConstraintClass,
    ) -> Result<()> {
        if block.cols() != self.n {
            return Err(Error::DimensionMismatch {
                what: "cone block columns",
                expected: self.n,
                got: block.cols(),
            });
        }
        if let ConeBound::Constant(c) = bound {
            if !(c >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "cone bound must be non-negative, got {c}"
                )));
            }
        }
        self.socs.push(SocConstraint {
            block,
            bound,
            class,
        });
        Ok(())
    }

    pub fn add_linear(&mut self, row: DVector<f64>, rhs: f64, class: ConstraintClass) -> Result<()> {
        if row.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "linear row",
                expected: self.n,
                got: row.len(),
            });
        }
        self.rows.push(LinearConstraint { row, rhs, class });
        Ok(())
    }

    fn has_slack(&self) -> bool {
        self.socs.iter().any(|s| s.bound == ConeBound::Slack)
    }

    /// Norms `‖A_i z‖` of every cone block.
    pub fn cone_norms(&self, z: &[f64]) -> Vec<f64> {
        let mut buf = Vec::new();
        self.socs
            .iter()
            .map(|s| {
                buf.resize(s.block.rows(), 0.0);
                s.block.apply(z, &mut buf);
                buf.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .collect()
    }

    /// Smallest `t` compatible with the slack cones at `z`.
    pub fn slack_value(&self, z: &[f64]) -> f64 {
        self.cone_norms(z)
            .iter()
            .zip(&self.socs)
            .filter(|(_, s)| s.bound == ConeBound::Slack)
            .map(|(n, _)| *n)
            .fold(0.0, f64::max)
    }

    /// Positive parts of every constraint violation at `(z, t)`.
    pub fn violations(&self, z: &[f64], t: f64) -> Vec<Violation> {
        let norms = self.cone_norms(z);
        let mut out = Vec::new();
        for (i, (s, n)) in self.socs.iter().zip(norms).enumerate() {
            let bound = match s.bound {
                ConeBound::Slack => t,
                ConeBound::Constant(c) => c,
            };
            if n > bound {
                out.push(Violation {
                    index: ConstraintIndex::Cone(i),
                    class: s.class,
                    amount: n - bound,
                });
            }
        }
        for (k, r) in self.rows.iter().enumerate() {
            let v = r.rhs - dot(r.row.as_slice(), z);
            if v > 0.0 {
                out.push(Violation {
                    index: ConstraintIndex::Linear(k),
                    class: r.class,
                    amount: v,
                });
            }
        }
        out
    }

    pub fn max_violation(&self, z: &[f64], t: f64) -> f64 {
        self.violations(z, t)
            .iter()
            .map(|v| v.amount)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintIndex {
    Cone(usize),
    Linear(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub index: ConstraintIndex,
    pub class: ConstraintClass,
    pub amount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct ConeSolution {
    pub z: DVector<f64>,
    pub t: f64,
    pub status: SolveStatus,
    /// Barrier duality-gap bound `ν/τ` at exit.
    pub gap: f64,
    pub max_violation: f64,
    pub newton_steps: usize,
    /// Violated constraints of the phase-I optimum when infeasible.
    pub certificate: Vec<Violation>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Absolute duality-gap target.
    pub gap_abs: f64,
    /// Relative duality-gap target (scaled by `max(|t|, 1e-3)`).
    pub gap_rel: f64,
    /// Feasibility tolerance reported against.
    pub feas_tol: f64,
    pub max_newton: usize,
    /// Barrier weight growth per outer iteration.
    pub mu: f64,
    /// Cones per parallel chunk when assembling the Hessian.
    pub chunk: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            gap_abs: 1e-9,
            gap_rel: 1e-6,
            feas_tol: 1e-6,
            max_newton: 5000,
            mu: 12.0,
            chunk: 64,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Internal barrier problem over `x = [z; extra]` where `extra` is the slack
/// `t` (main phase) or the infeasibility `s` (phase I).
struct Barrier<'a> {
    p: &'a ConeProblem,
    phase1: bool,
    /// Lower bound on the extra variable (phase I) or `t ≥ 0` (no slack cones).
    extra_floor: Option<f64>,
    chunk: usize,
    complex_gram: bool,
}

fn all_complex(socs: &[SocConstraint], n: usize) -> bool {
    !socs.is_empty() && socs.iter().all(|s| s.block.complex_cols().map(|c| 2 * c) == Some(n))
}

struct Eval {
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

/// `(s_i, D_i = s_i² − ‖u_i‖², u_i)` of one cone at a strictly interior point.
type ConeMargin = (f64, f64, Vec<f64>);

impl<'a> Barrier<'a> {
    fn n(&self) -> usize {
        self.p.n + 1
    }

    /// `(s_i, D_i)` for each cone and the residuals of the linear rows; `None`
    /// when `x` is not strictly inside.
    fn margins(&self, x: &[f64]) -> Option<(Vec<ConeMargin>, Vec<f64>, Option<f64>)> {
        let n = self.p.n;
        let (z, e) = (&x[..n], x[n]);
        let mut cones = Vec::with_capacity(self.p.socs.len());
        for s in &self.p.socs {
            let mut u = vec![0.0; s.block.rows()];
            s.block.apply(z, &mut u);
            let sv = match (s.bound, self.phase1) {
                (ConeBound::Slack, false) => e,
                (ConeBound::Constant(c), false) => c,
                (ConeBound::Constant(c), true) => c + e,
                (ConeBound::Slack, true) => unreachable!("slack cones are dropped in phase I"),
            };
            let d = sv * sv - dot(&u, &u);
            if !(sv > 0.0 && d > 0.0) {
                return None;
            }
            cones.push((sv, d, u));
        }
        let mut lin = Vec::with_capacity(self.p.rows.len());
        for r in &self.p.rows {
            let mut v = dot(r.row.as_slice(), z) - r.rhs;
            if self.phase1 {
                v += e;
            }
            if !(v > 0.0) {
                return None;
            }
            lin.push(v);
        }
        let floor = match self.extra_floor {
            Some(f) => {
                let v = e - f;
                if !(v > 0.0) {
                    return None;
                }
                Some(v)
            }
            None => None,
        };
        Some((cones, lin, floor))
    }

    fn eval(&self, x: &[f64], tau: f64) -> Option<Eval> {
        let n = self.p.n;
        let dim = self.n();
        let (cones, lin, floor) = self.margins(x)?;
        let mut grad = DVector::zeros(dim);
        grad[n] = tau;

        // Hessian contributions from the cones, summed chunk by chunk in a
        // fixed order.
        let pairs: Vec<(&SocConstraint, &ConeMargin)> =
            self.p.socs.iter().zip(cones.iter()).collect();
        struct Partial {
            hz: DMatrix<f64>,
            hc: DMatrix<Complex64>,
            border: DVector<f64>,
            corner: f64,
            grad: DVector<f64>,
        }
        let half = n / 2;
        let complex = self.complex_gram;
        let partials: Vec<Partial> = pairs
            .par_chunks(self.chunk.max(1))
            .map(|chunk| {
                let mut part = Partial {
                    hz: DMatrix::zeros(if complex { 0 } else { n }, if complex { 0 } else { n }),
                    hc: DMatrix::zeros(if complex { half } else { 0 }, if complex { half } else { 0 }),
                    border: DVector::zeros(n),
                    corner: 0.0,
                    grad: DVector::zeros(dim),
                };
                // rank-one terms, one scaled column per cone
                let mut qm = DMatrix::zeros(n, chunk.len());
                let mut q = DVector::zeros(n);
                for (k, (s, (sv, d, u))) in chunk.iter().enumerate() {
                    s.block.apply_t(u, q.as_mut_slice());
                    // the extra variable enters the cone bound unless the
                    // bound is a fixed constant in the main phase
                    let ge = match (s.bound, self.phase1) {
                        (ConeBound::Constant(_), false) => 0.0,
                        _ => 1.0,
                    };
                    part.grad.rows_mut(0, n).axpy(2.0 / d, &q, 1.0);
                    part.grad[n] -= 2.0 * sv * ge / d;
                    if complex {
                        s.block.add_complex_gram(2.0 / d, &mut part.hc);
                    } else {
                        s.block.add_gram(2.0 / d, &mut part.hz);
                    }
                    let c = 4.0 / (d * d);
                    qm.column_mut(k).axpy(c.sqrt(), &q, 0.0);
                    let qe = -sv * ge;
                    part.border.axpy(c * qe, &q, 1.0);
                    part.corner += c * qe * qe - 2.0 * ge * ge / d;
                }
                let outer = &qm * qm.transpose();
                if complex {
                    part.hz = outer;
                } else {
                    part.hz += outer;
                }
                part
            })
            .collect();
        let mut hess = DMatrix::zeros(dim, dim);
        let mut hc = DMatrix::<Complex64>::zeros(if complex { half } else { 0 }, if complex { half } else { 0 });
        for part in partials {
            hess.view_mut((0, 0), (n, n)).add_assign(&part.hz);
            if complex {
                hc += part.hc;
            }
            for i in 0..n {
                hess[(n, i)] += part.border[i];
                hess[(i, n)] += part.border[i];
            }
            hess[(n, n)] += part.corner;
            grad += part.grad;
        }
        if complex {
            for j in 0..half {
                for i in 0..half {
                    let g = hc[(i, j)];
                    hess[(i, j)] += g.re;
                    hess[(i, j + half)] -= g.im;
                    hess[(i + half, j)] += g.im;
                    hess[(i + half, j + half)] += g.re;
                }
            }
        }

        for (r, v) in self.p.rows.iter().zip(&lin) {
            let w = 1.0 / v;
            for i in 0..n {
                grad[i] -= w * r.row[i];
            }
            if self.phase1 {
                grad[n] -= w;
            }
            let w2 = w * w;
            for j in 0..n {
                let rj = r.row[j] * w2;
                if rj != 0.0 {
                    for i in 0..n {
                        hess[(i, j)] += rj * r.row[i];
                    }
                }
                if self.phase1 {
                    hess[(n, j)] += rj;
                    hess[(j, n)] += rj;
                }
            }
            if self.phase1 {
                hess[(n, n)] += w2;
            }
        }
        if let Some(v) = floor {
            grad[n] -= 1.0 / v;
            hess[(n, n)] += 1.0 / (v * v);
        }
        Some(Eval { grad, hess })
    }

    fn nu(&self) -> f64 {
        2.0 * self.p.socs.len() as f64
            + self.p.rows.len() as f64
            + f64::from(u8::from(self.extra_floor.is_some()))
    }

    /// Damped Newton centering; returns the number of steps taken.
    /// `f(trial) − f(x)` computed from margin ratios, which stays accurate
    /// when `τ` is large; `None` when `trial` is not interior.
    fn value_change(&self, x: &[f64], trial: &[f64], tau: f64) -> Option<f64> {
        let (c0, l0, f0) = self.margins(x)?;
        let (c1, l1, f1) = self.margins(trial)?;
        let n = self.p.n;
        let mut d = tau * (trial[n] - x[n]);
        for ((_, a, _), (_, b, _)) in c0.iter().zip(&c1) {
            d -= (b / a).ln();
        }
        for (a, b) in l0.iter().zip(&l1) {
            d -= (b / a).ln();
        }
        if let (Some(a), Some(b)) = (f0, f1) {
            d -= (b / a).ln();
        }
        Some(d)
    }

    /// Damped Newton centering; returns the number of steps taken.
    fn center(
        &self,
        x: &mut DVector<f64>,
        tau: f64,
        budget: usize,
        stop: impl Fn(&DVector<f64>) -> bool,
    ) -> Result<usize> {
        let mut steps = 0;
        while steps < budget.min(200) && !stop(x) {
            let ev = self
                .eval(x.as_slice(), tau)
                .ok_or_else(|| Error::Solver("iterate left the interior".into()))?;
            let dx = newton_direction(&ev.hess, &ev.grad)?;
            let dec = -ev.grad.dot(&dx);
            steps += 1;
            if dec / 2.0 <= 1e-9 {
                break;
            }
            // backtracking line search that keeps the iterate interior
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial = &*x + &dx * alpha;
                if let Some(df) = self.value_change(x.as_slice(), trial.as_slice(), tau) {
                    if df <= -0.25 * alpha * dec {
                        *x = trial;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Ok(steps)
    }
}

fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = h.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut reg = 0.0;
    for _ in 0..12 {
        let mut hh = h.clone();
        if reg > 0.0 {
            for i in 0..hh.nrows() {
                hh[(i, i)] += reg * scale;
            }
        }
        if let Some(ch) = hh.cholesky() {
            return Ok(-ch.solve(g));
        }
        reg = if reg == 0.0 { 1e-14 } else { reg * 100.0 };
    }
    Err(Error::Solver("barrier Hessian is not positive definite".into()))
}

/// Result of minimizing the common infeasibility `s` over the non-slack
/// constraints.
#[derive(Debug, Clone)]
pub struct PhaseOne {
    pub z: DVector<f64>,
    /// Negative when `z` is strictly feasible.
    pub s: f64,
    pub steps: usize,
    pub converged: bool,
}

/// Minimizes the common infeasibility `s`; stops early once the iterate is
/// strictly feasible with margin.
pub fn phase_one(p: &ConeProblem, z0: &[f64], settings: &SolverSettings) -> Result<PhaseOne> {
    let constants: Vec<SocConstraint> = p
        .socs
        .iter()
        .filter(|s| s.bound != ConeBound::Slack)
        .cloned()
        .collect();
    let sub = ConeProblem {
        n: p.n,
        socs: constants,
        rows: p.rows.clone(),
    };
    let viol = sub.max_violation(z0, 0.0);
    let norms = sub.cone_norms(z0);
    let mut s0 = viol;
    for (c, nrm) in sub.socs.iter().zip(&norms) {
        if let ConeBound::Constant(b) = c.bound {
            // keep every cone bound strictly positive as well
            s0 = s0.max(nrm - b);
        }
    }
    let scale = 1.0 + s0.abs();
    s0 += 0.1 * scale;
    let floor = -scale;
    let bar = Barrier {
        p: &sub,
        phase1: true,
        extra_floor: Some(floor),
        chunk: settings.chunk,
        complex_gram: all_complex(&sub.socs, p.n),
    };
    let mut x = DVector::zeros(p.n + 1);
    x.rows_mut(0, p.n).copy_from_slice(z0);
    x[p.n] = s0;
    let nu = bar.nu();
    let mut tau = nu / scale;
    let mut steps = 0;
    let target = -1e-3 * scale;
    loop {
        let budget = settings.max_newton.saturating_sub(steps).max(1);
        steps += bar.center(&mut x, tau, budget, |x| x[p.n] < target)?;
        if x[p.n] < target {
            return Ok(PhaseOne {
                z: x.rows(0, p.n).into_owned(),
                s: x[p.n],
                steps,
                converged: false,
            });
        }
        if nu / tau <= 1e-9 * scale || steps >= settings.max_newton {
            return Ok(PhaseOne {
                z: x.rows(0, p.n).into_owned(),
                s: x[p.n],
                steps,
                converged: nu / tau <= 1e-9 * scale,
            });
        }
        tau *= settings.mu;
    }
}

/// Solves `p` from the warm start `z0`.
pub fn solve(p: &ConeProblem, z0: &[f64], settings: &SolverSettings) -> Result<ConeSolution> {
    if z0.len() != p.n {
        return Err(Error::DimensionMismatch {
            what: "warm start",
            expected: p.n,
            got: z0.len(),
        });
    }
    let strictly_inside = |z: &[f64]| -> bool {
        let norms = p.cone_norms(z);
        p.socs.iter().zip(&norms).all(|(s, n)| match s.bound {
            ConeBound::Slack => true,
            ConeBound::Constant(c) => *n < c,
        }) && p
            .rows
            .iter()
            .all(|r| dot(r.row.as_slice(), z) - r.rhs > 0.0)
    };
    let mut steps = 0;
    let mut z = DVector::from_column_slice(z0);
    if !strictly_inside(z.as_slice()) {
        let ph = phase_one(p, z0, settings)?;
        steps += ph.steps;
        if ph.s >= 0.0 || !strictly_inside(ph.z.as_slice()) {
            let status = if ph.converged {
                SolveStatus::Infeasible
            } else {
                SolveStatus::MaxIter
            };
            let certificate = p.violations(ph.z.as_slice(), f64::INFINITY);
            return Ok(ConeSolution {
                t: p.slack_value(ph.z.as_slice()),
                max_violation: p.max_violation(ph.z.as_slice(), f64::INFINITY),
                z: ph.z,
                status,
                gap: f64::INFINITY,
                newton_steps: steps,
                certificate,
            });
        }
        z = ph.z;
    }

    if !p.has_slack() {
        return Ok(ConeSolution {
            t: 0.0,
            max_violation: p.max_violation(z.as_slice(), 0.0),
            z,
            status: SolveStatus::Optimal,
            gap: 0.0,
            newton_steps: steps,
            certificate: Vec::new(),
        });
    }

    let t_now = p.slack_value(z.as_slice());
    let scale = t_now.abs().max(1e-12);
    let bar = Barrier {
        p,
        phase1: false,
        extra_floor: None,
        chunk: settings.chunk,
        complex_gram: all_complex(&p.socs, p.n),
    };
    let mut x = DVector::zeros(p.n + 1);
    x.rows_mut(0, p.n).copy_from(&z);
    x[p.n] = t_now + 0.1 * scale + 1e-12;
    // initial weight balancing the objective against the barrier slope in t
    let tau0 = {
        let (cones, _, _) = bar
            .margins(x.as_slice())
            .ok_or_else(|| Error::Solver("warm start is not interior".into()))?;
        cones
            .iter()
            .zip(&p.socs)
            .filter(|(_, s)| s.bound == ConeBound::Slack)
            .map(|((sv, d, _), _)| 2.0 * sv / d)
            .sum::<f64>()
            .max(1.0 / scale)
    };
    let nu = bar.nu();
    let mut tau = tau0;
    let mut status = SolveStatus::MaxIter;
    loop {
        let budget = settings.max_newton.saturating_sub(steps);
        if budget == 0 {
            break;
        }
        steps += bar.center(&mut x, tau, budget, |_| false)?;
        let t = x[p.n];
        if nu / tau <= settings.gap_abs + settings.gap_rel * t.abs().max(1e-3) {
            status = SolveStatus::Optimal;
            break;
        }
        tau *= settings.mu;
    }
    let z = x.rows(0, p.n).into_owned();
    // report the tightest slack compatible with the returned taps
    let t = p.slack_value(z.as_slice());
    let max_violation = p.max_violation(z.as_slice(), t);
    Ok(ConeSolution {
        z,
        t,
        status,
        gap: nu / tau,
        max_violation,
        newton_steps: steps,
        certificate: Vec::new(),
    })
}

/// Writes a plain-text dump: a header line, then each cone as
/// `soc slack|const <c> <rows> <cols>` followed by its dense rows, then each
/// linear row as `lin <rhs>` followed by the coefficients.
pub fn write_dump<W: Write>(mut out: W, p: &ConeProblem) -> Result<()> {
    writeln!(out, "cone-problem {} {} {}", p.n, p.socs.len(), p.rows.len())?;
    for s in &p.socs {
        let a = s.block.to_dense();
        match s.bound {
            ConeBound::Slack => writeln!(out, "soc slack 0 {} {} {}", a.nrows(), a.ncols(), s.class)?,
            ConeBound::Constant(c) => {
                writeln!(out, "soc const {c} {} {} {}", a.nrows(), a.ncols(), s.class)?
            }
        }
        for r in 0..a.nrows() {
            let line: Vec<String> = a.row(r).iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
    }
    for r in &p.rows {
        writeln!(out, "lin {:e} {}", r.rhs, r.class)?;
        let line: Vec<String> = r.row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

fn parse_class(s: &str) -> Result<ConstraintClass> {
    match s {
        "passband" => Ok(ConstraintClass::Passband),
        "transition" => Ok(ConstraintClass::Transition),
        "stopband" => Ok(ConstraintClass::Stopband),
        "tap-norm" => Ok(ConstraintClass::TapNorm),
        other => Err(Error::Parse(format!("unknown constraint class `{other}`"))),
    }
}

fn parse_floats(line: &str, expect: usize) -> Result<Vec<f64>> {
    let v = line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("bad number `{t}`: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if v.len() != expect {
        return Err(Error::Parse(format!("expected {expect} numbers, got {}", v.len())));
    }
    Ok(v)
}

pub fn read_dump<R: BufRead>(input: R) -> Result<ConeProblem> {
    let mut lines = input.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::Parse("unexpected end of dump".into()))?
            .map_err(Error::from)
    };
    let header = next()?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 4 || h[0] != "cone-problem" {
        return Err(Error::Parse(format!("bad dump header `{header}`")));
    }
    let num = |s: &str| -> Result<usize> {
        s.parse().map_err(|e| Error::Parse(format!("bad count `{s}`: {e}")))
    };
    let (n, ns, nl) = (num(h[1])?, num(h[2])?, num(h[3])?);
    let mut p = ConeProblem::new(n);
    for _ in 0..ns {
        let head = next()?;
        let f: Vec<&str> = head.split_whitespace().collect();
        if f.len() != 6 || f[0] != "soc" {
            return Err(Error::Parse(format!("bad cone header `{head}`")));
        }
        let c: f64 = f[2].parse().map_err(|e| Error::Parse(format!("bad bound: {e}")))?;
        let bound = match f[1] {
            "slack" => ConeBound::Slack,
            "const" => ConeBound::Constant(c),
            other => return Err(Error::Parse(format!("unknown bound kind `{other}`"))),
        };
        let (rows, cols) = (num(f[3])?, num(f[4])?);
        let mut a = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            let v = parse_floats(&next()?, cols)?;
            a.row_mut(r).copy_from_slice(&v);
        }
        p.add_soc(Arc::new(DenseBlock::new(a)), bound, parse_class(f[5])?)?;
    }
    for _ in 0..nl {
        let head = next()?;
        let f: Vec<&str> = head.split_whitespace().collect();
        if f.len() != 3 || f[0] != "lin" {
            return Err(Error::Parse(format!("bad linear header `{head}`")));
        }
        let rhs: f64 = f[1].parse().map_err(|e| Error::Parse(format!("bad rhs: {e}")))?;
        let row = parse_floats(&next()?, n)?;
        p.add_linear(DVector::from_vec(row), rhs, parse_class(f[2])?)?;
    }
    Ok(p)
}
