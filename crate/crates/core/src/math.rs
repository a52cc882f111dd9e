//! Small fixed-size linear algebra: 3-vectors, 3x3 matrices, quaternions.
//!
//! Every type is generic over [`Real`] so the same formulas run on plain
//! `f64` and on the reverse-mode tape variables in [`crate::ad`]. The
//! default type parameter is `f64`.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar abstraction shared by `f64` and [`crate::ad::Var`].
pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn val(self) -> f64;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;

    /// Eigen-decomposition of a symmetric matrix by cyclic Jacobi sweeps
    /// started from the identity basis. Eigenvalues are NOT sorted: column
    /// `k` of the returned basis is the one continuously connected to axis
    /// `k`, so a nearly diagonal input yields a nearly identity basis.
    fn sym_eigen(a: &Mat3<Self>) -> (Vec3<Self>, Mat3<Self>);
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn val(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sym_eigen(a: &Mat3<f64>) -> (Vec3<f64>, Mat3<f64>) {
        let (vals, vecs) = jacobi_eigen(a.m);
        (Vec3::new(vals[0], vals[1], vals[2]), Mat3 { m: vecs })
    }
}

/// Relative off-diagonal residual at which Jacobi sweeps stop. The documented
/// guarantee is 1e-10; sweeps usually run to roundoff.
pub const JACOBI_TOL: f64 = 1e-15;
const JACOBI_MAX_SWEEPS: usize = 64;

/// Cyclic Jacobi on a symmetric 3x3 matrix. Returns unsorted eigenvalues and
/// the eigenvector matrix (eigenvectors in columns).
pub fn jacobi_eigen(mut a: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let scale = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return ([0.0; 3], v);
    }
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]).sqrt();
        if off <= JACOBI_TOL * scale {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // A' = Jᵀ A J with J the (p,q) plane rotation.
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            a[p][q] = 0.0;
            a[q][p] = 0.0;
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2]], v)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vec3<T = f64> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zeros() -> Self {
        Self::new(T::cst(0.0), T::cst(0.0), T::cst(0.0))
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    pub fn norm(self) -> T {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn value(self) -> Vec3<f64> {
        Vec3::new(self.x.val(), self.y.val(), self.z.val())
    }

    pub fn lift(v: Vec3<f64>) -> Self {
        Self::new(T::cst(v.x), T::cst(v.y), T::cst(v.z))
    }

    /// Outer product `self · otherᵀ`.
    pub fn outer(self, o: Self) -> Mat3<T> {
        let a = self.to_array();
        let b = o.to_array();
        Mat3 {
            m: [
                [a[0] * b[0], a[0] * b[1], a[0] * b[2]],
                [a[1] * b[0], a[1] * b[1], a[1] * b[2]],
                [a[2] * b[0], a[2] * b[1], a[2] * b[2]],
            ],
        }
    }
}

impl Vec3<f64> {
    pub const ZERO: Vec3<f64> = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn distance(self, o: Self) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn max_component(self) -> f64 {
        self.x.max(self.y).max(self.z)
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl AddAssign for Vec3<f64> {
    fn add_assign(&mut self, o: Self) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl Mul<f64> for Vec3<f64> {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        self.scale(s)
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat3<T = f64> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn identity() -> Self {
        let o = T::cst(0.0);
        let l = T::cst(1.0);
        Self {
            m: [[l, o, o], [o, l, o], [o, o, l]],
        }
    }

    pub fn zeros() -> Self {
        let o = T::cst(0.0);
        Self { m: [[o; 3]; 3] }
    }

    pub fn from_diag(d: Vec3<T>) -> Self {
        let o = T::cst(0.0);
        Self {
            m: [[d.x, o, o], [o, d.y, o], [o, o, d.z]],
        }
    }

    pub fn from_cols(c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Self {
        Self {
            m: [[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]],
        }
    }

    pub fn col(&self, j: usize) -> Vec3<T> {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Self {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let a = &self.m;
        let b = &o.m;
        let mut out = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        out
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut out = *self;
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = self.m[i][j] + o.m[i][j];
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = *self;
        for row in out.m.iter_mut() {
            for x in row.iter_mut() {
                *x = *x * s;
            }
        }
        out
    }

    pub fn det(&self) -> T {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn value(&self) -> Mat3<f64> {
        let mut out = Mat3::<f64>::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = self.m[i][j].val();
            }
        }
        out
    }

    pub fn lift(v: &Mat3<f64>) -> Self {
        let mut out = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = T::cst(v.m[i][j]);
            }
        }
        out
    }
}

impl Mat3<f64> {
    pub fn frobenius(&self) -> f64 {
        self.m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.scale(-1.0))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let m = &self.m;
        (m[0][1] - m[1][0])
            .abs()
            .max((m[0][2] - m[2][0]).abs())
            .max((m[1][2] - m[2][1]).abs())
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|x| x.is_finite())
    }

    /// Checks `R·Rᵀ = I` and `det R = +1` within `tol`.
    pub fn is_rotation(&self, tol: f64) -> bool {
        let rrt = self.mul_mat(&self.transpose());
        rrt.sub(&Mat3::identity()).frobenius() <= tol && (self.det() - 1.0).abs() <= tol
    }
}

/// Hamilton quaternion `w + xi + yj + zk`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat<T = f64> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Quat<T> {
    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::cst(1.0), T::cst(0.0), T::cst(0.0), T::cst(0.0))
    }

    pub fn dot(self, o: Self) -> T {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    /// Divides by the norm. The caller guarantees a non-zero norm.
    pub fn normalized(self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conj(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn neg(self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn mul(self, o: Self) -> Self {
        Self::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    /// Rotation matrix of a unit quaternion (no normalization).
    pub fn to_mat_unit(self) -> Mat3<T> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let one = T::cst(1.0);
        let two = T::cst(2.0);
        Mat3 {
            m: [
                [
                    one - two * (y * y + z * z),
                    two * (x * y - w * z),
                    two * (x * z + w * y),
                ],
                [
                    two * (x * y + w * z),
                    one - two * (x * x + z * z),
                    two * (y * z - w * x),
                ],
                [
                    two * (x * z - w * y),
                    two * (y * z + w * x),
                    one - two * (x * x + y * y),
                ],
            ],
        }
    }

    /// Quaternion of a rotation matrix (Shepperd's method, branch chosen on
    /// values). The sign is fixed by the largest-magnitude component.
    pub fn from_mat(r: &Mat3<T>) -> Self {
        let m = &r.m;
        let (d0, d1, d2) = (m[0][0].val(), m[1][1].val(), m[2][2].val());
        let tr = d0 + d1 + d2;
        let one = T::cst(1.0);
        let quarter = T::cst(0.25);
        if tr >= d0 && tr >= d1 && tr >= d2 {
            let s = (one + m[0][0] + m[1][1] + m[2][2]).sqrt() * T::cst(2.0);
            Self::new(
                quarter * s,
                (m[2][1] - m[1][2]) / s,
                (m[0][2] - m[2][0]) / s,
                (m[1][0] - m[0][1]) / s,
            )
        } else if d0 >= d1 && d0 >= d2 {
            let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * T::cst(2.0);
            Self::new(
                (m[2][1] - m[1][2]) / s,
                quarter * s,
                (m[0][1] + m[1][0]) / s,
                (m[0][2] + m[2][0]) / s,
            )
        } else if d1 >= d2 {
            let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * T::cst(2.0);
            Self::new(
                (m[0][2] - m[2][0]) / s,
                (m[0][1] + m[1][0]) / s,
                quarter * s,
                (m[1][2] + m[2][1]) / s,
            )
        } else {
            let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * T::cst(2.0);
            Self::new(
                (m[1][0] - m[0][1]) / s,
                (m[0][2] + m[2][0]) / s,
                (m[1][2] + m[2][1]) / s,
                quarter * s,
            )
        }
    }

    pub fn to_array(self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn value(self) -> Quat<f64> {
        Quat::new(self.w.val(), self.x.val(), self.y.val(), self.z.val())
    }

    pub fn lift(q: Quat<f64>) -> Self {
        Self::new(T::cst(q.w), T::cst(q.x), T::cst(q.y), T::cst(q.z))
    }
}

impl Quat<f64> {
    pub const IDENTITY: Quat<f64> = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let a = axis.scale(1.0 / axis.norm());
        let (s, c) = (0.5 * angle).sin_cos();
        Self::new(c, a.x * s, a.y * s, a.z * s)
    }

    pub fn try_normalized(self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroQuaternion);
        }
        Ok(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        self.to_mat_unit().mul_vec(v)
    }

    /// Rotation angle (radians, in `[0, π]`) between two unit quaternions,
    /// treating `q` and `-q` as the same rotation.
    pub fn angle_to(self, o: Self) -> f64 {
        let d = self.dot(o).abs().min(1.0);
        2.0 * d.acos()
    }

    /// Sign-invariant Euclidean distance `min(|a-b|, |a+b|)`.
    pub fn distance(self, o: Self) -> f64 {
        let d = [self.w - o.w, self.x - o.x, self.y - o.y, self.z - o.z];
        let s = [self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z];
        let n = |v: [f64; 4]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        n(d).min(n(s))
    }

    pub fn is_finite(self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

/// Rotation factor `F (FᵀF)^{-1/2}` of the polar decomposition of an
/// invertible matrix with positive determinant.
pub fn polar_rotation(f: &Mat3) -> Result<Mat3> {
    let (lam, w) = jacobi_eigen(f.transpose().mul_mat(f).m);
    if lam.iter().any(|l| !(*l > 0.0)) || f.det() <= 0.0 {
        return Err(Error::invalid("polar decomposition needs det > 0"));
    }
    let w = Mat3 { m: w };
    let inv_sqrt = Mat3::from_diag(Vec3::new(1.0 / lam[0].sqrt(), 1.0 / lam[1].sqrt(), 1.0 / lam[2].sqrt()));
    Ok(f.mul_mat(&w.mul_mat(&inv_sqrt).mul_mat(&w.transpose())))
}

/// Rotation matrix of `q` after normalization.
pub fn quat_to_mat(q: Quat) -> Result<Mat3> {
    if !q.is_finite() {
        return Err(Error::invalid("non-finite quaternion"));
    }
    Ok(q.try_normalized()?.to_mat_unit())
}

/// Vector-Jacobian product of [`Quat::to_mat_unit`]: given `g = ∂L/∂R`,
/// returns `∂L/∂q` on the raw components.
pub fn quat_to_mat_vjp(q: Quat, g: &Mat3) -> Quat {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    let g = &g.m;
    let contract = |d: [[f64; 3]; 3]| -> f64 {
        let mut acc = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                acc += g[i][j] * d[i][j];
            }
        }
        acc
    };
    let dw = [
        [0.0, -2.0 * z, 2.0 * y],
        [2.0 * z, 0.0, -2.0 * x],
        [-2.0 * y, 2.0 * x, 0.0],
    ];
    let dx = [
        [0.0, 2.0 * y, 2.0 * z],
        [2.0 * y, -4.0 * x, -2.0 * w],
        [2.0 * z, 2.0 * w, -4.0 * x],
    ];
    let dy = [
        [-4.0 * y, 2.0 * x, 2.0 * w],
        [2.0 * x, 0.0, 2.0 * z],
        [-2.0 * w, 2.0 * z, -4.0 * y],
    ];
    let dz = [
        [-4.0 * z, -2.0 * w, 2.0 * x],
        [2.0 * w, -4.0 * z, 2.0 * y],
        [2.0 * x, 2.0 * y, 0.0],
    ];
    Quat::new(contract(dw), contract(dx), contract(dy), contract(dz))
}

/// Vector-Jacobian product of `q ↦ q ⊗ a` (linear in `q`).
pub fn quat_mul_right_vjp(a: Quat, g: Quat) -> Quat {
    let basis = [
        Quat::new(1.0, 0.0, 0.0, 0.0),
        Quat::new(0.0, 1.0, 0.0, 0.0),
        Quat::new(0.0, 0.0, 1.0, 0.0),
        Quat::new(0.0, 0.0, 0.0, 1.0),
    ];
    let c = basis.map(|e| e.mul(a).dot(g));
    Quat::new(c[0], c[1], c[2], c[3])
}
