//! Minimal reverse-mode automatic differentiation on a thread-local tape.
//!
//! The tape records one node per scalar operation with its local partials.
//! Each deformation evaluation for a single Gaussian fits comfortably in one
//! tape, so the tape is cleared and reused per Gaussian. Because the tape is
//! thread-local, independent Gaussians can be differentiated on different
//! rayon workers without synchronization.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::math::{jacobi_eigen, Mat3, Real, Vec3};

const CONST: u32 = u32::MAX;

/// Relative eigenvalue gap below which eigenvector derivatives are dropped.
pub const EIGEN_GAP_EPS: f64 = 1e-12;

#[derive(Default)]
struct Tape {
    offsets: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
}

impl Tape {
    fn push(&mut self, edges: &[(u32, f64)]) -> u32 {
        if self.offsets.is_empty() {
            self.offsets.push(0);
        }
        for &(p, d) in edges {
            if p != CONST {
                self.parents.push(p);
                self.partials.push(d);
            }
        }
        self.offsets.push(self.parents.len() as u32);
        (self.offsets.len() - 2) as u32
    }

    fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }
}

thread_local! {
    static TAPE: RefCell<Tape> = RefCell::new(Tape::default());
}

/// A scalar recorded on the current thread's tape (or a constant).
#[derive(Clone, Copy, Debug)]
pub struct Var {
    val: f64,
    idx: u32,
}

impl Var {
    /// A new independent variable.
    pub fn input(val: f64) -> Var {
        let idx = TAPE.with(|t| t.borrow_mut().push(&[]));
        Var { val, idx }
    }

    pub fn constant(val: f64) -> Var {
        Var { val, idx: CONST }
    }

    pub fn is_constant(self) -> bool {
        self.idx == CONST
    }

    /// Node whose local partials w.r.t. `parents` are given explicitly.
    pub fn custom(val: f64, parents: &[(Var, f64)]) -> Var {
        if parents.iter().all(|(p, _)| p.idx == CONST) {
            return Var::constant(val);
        }
        let edges: Vec<(u32, f64)> = parents.iter().map(|(p, d)| (p.idx, *d)).collect();
        let idx = TAPE.with(|t| t.borrow_mut().push(&edges));
        Var { val, idx }
    }

    #[inline]
    fn unary(val: f64, a: Var, da: f64) -> Var {
        if a.idx == CONST {
            return Var::constant(val);
        }
        let idx = TAPE.with(|t| t.borrow_mut().push(&[(a.idx, da)]));
        Var { val, idx }
    }

    #[inline]
    fn binary(val: f64, a: Var, da: f64, b: Var, db: f64) -> Var {
        match (a.idx == CONST, b.idx == CONST) {
            (true, true) => Var::constant(val),
            (false, true) => Var::unary(val, a, da),
            (true, false) => Var::unary(val, b, db),
            (false, false) => {
                let idx = TAPE.with(|t| t.borrow_mut().push(&[(a.idx, da), (b.idx, db)]));
                Var { val, idx }
            }
        }
    }
}

/// Clears the current thread's tape. Variables created before the call
/// become dangling and must not be used afterwards.
pub fn reset() {
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        t.offsets.clear();
        t.parents.clear();
        t.partials.clear();
    });
}

/// Number of nodes currently recorded on this thread's tape.
pub fn tape_len() -> usize {
    TAPE.with(|t| t.borrow().len())
}

/// Adjoints of every recorded node after a reverse sweep.
pub struct Adjoints(Vec<f64>);

impl Adjoints {
    pub fn wrt(&self, v: Var) -> f64 {
        if v.idx == CONST {
            0.0
        } else {
            self.0[v.idx as usize]
        }
    }
}

/// Reverse sweep seeded with `Σ seed_k · ∂/∂out_k`.
pub fn backward(seeds: &[(Var, f64)]) -> Adjoints {
    TAPE.with(|t| {
        let t = t.borrow();
        let n = t.len();
        let mut adj = vec![0.0; n];
        for &(v, s) in seeds {
            if v.idx != CONST {
                adj[v.idx as usize] += s;
            }
        }
        for i in (0..n).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let (lo, hi) = (t.offsets[i] as usize, t.offsets[i + 1] as usize);
            for k in lo..hi {
                adj[t.parents[k] as usize] += a * t.partials[k];
            }
        }
        Adjoints(adj)
    })
}

impl Add for Var {
    type Output = Var;
    #[inline]
    fn add(self, o: Var) -> Var {
        Var::binary(self.val + o.val, self, 1.0, o, 1.0)
    }
}

impl Sub for Var {
    type Output = Var;
    #[inline]
    fn sub(self, o: Var) -> Var {
        Var::binary(self.val - o.val, self, 1.0, o, -1.0)
    }
}

impl Mul for Var {
    type Output = Var;
    #[inline]
    fn mul(self, o: Var) -> Var {
        Var::binary(self.val * o.val, self, o.val, o, self.val)
    }
}

impl Div for Var {
    type Output = Var;
    #[inline]
    fn div(self, o: Var) -> Var {
        let inv = 1.0 / o.val;
        let v = self.val * inv;
        Var::binary(v, self, inv, o, -v * inv)
    }
}

impl Neg for Var {
    type Output = Var;
    #[inline]
    fn neg(self) -> Var {
        Var::unary(-self.val, self, -1.0)
    }
}

impl Real for Var {
    #[inline]
    fn cst(v: f64) -> Self {
        Var::constant(v)
    }
    #[inline]
    fn val(self) -> f64 {
        self.val
    }
    fn sqrt(self) -> Self {
        let r = self.val.sqrt();
        Var::unary(r, self, 0.5 / r)
    }
    fn tanh(self) -> Self {
        let t = self.val.tanh();
        Var::unary(t, self, 1.0 - t * t)
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        Var::unary(e, self, e)
    }
    fn ln(self) -> Self {
        Var::unary(self.val.ln(), self, 1.0 / self.val)
    }

    /// Values come from the `f64` Jacobi routine; derivatives from first-order
    /// perturbation theory: `dλ_k = w_kᵀ dA w_k` and
    /// `dw_k = Σ_{l≠k} w_l (w_lᵀ dA w_k) / (λ_k − λ_l)`.
    fn sym_eigen(a: &Mat3<Var>) -> (Vec3<Var>, Mat3<Var>) {
        let av = a.value();
        let (lam, w) = jacobi_eigen(av.m);
        // Upper-triangle entries are the independent inputs; for a symmetric
        // perturbation dA_ab = dA_ba, so off-diagonal partials are doubled.
        let pairs = [(0usize, 0usize), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];
        let scale = lam.iter().fold(0.0f64, |m, l| m.max(l.abs())).max(f64::MIN_POSITIVE);

        // ∂(w_lᵀ A w_k)/∂A_ab for the upper-triangle parametrization.
        let bilinear = |l: usize, k: usize, a_: usize, b_: usize| -> f64 {
            if a_ == b_ {
                w[a_][l] * w[a_][k]
            } else {
                w[a_][l] * w[b_][k] + w[b_][l] * w[a_][k]
            }
        };

        let inputs: Vec<Var> = pairs.iter().map(|&(i, j)| a.m[i][j]).collect();

        let mut vals = [Var::constant(0.0); 3];
        for k in 0..3 {
            let parents: Vec<(Var, f64)> = pairs
                .iter()
                .zip(&inputs)
                .map(|(&(i, j), &v)| (v, bilinear(k, k, i, j)))
                .collect();
            vals[k] = Var::custom(lam[k], &parents);
        }

        let mut vecs = Mat3::<Var>::zeros();
        for k in 0..3 {
            for row in 0..3 {
                let mut parents: Vec<(Var, f64)> = Vec::with_capacity(6);
                for (&(i, j), &v) in pairs.iter().zip(&inputs) {
                    let mut d = 0.0;
                    for l in 0..3 {
                        if l == k {
                            continue;
                        }
                        let gap = lam[k] - lam[l];
                        if gap.abs() <= EIGEN_GAP_EPS * scale {
                            continue;
                        }
                        d += w[row][l] * bilinear(l, k, i, j) / gap;
                    }
                    parents.push((v, d));
                }
                vecs.m[row][k] = Var::custom(w[row][k], &parents);
            }
        }
        (Vec3::new(vals[0], vals[1], vals[2]), vecs)
    }
}
