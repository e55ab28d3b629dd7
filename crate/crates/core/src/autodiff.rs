//! Forward-mode differentiation scaffolding.
//!
//! The photometric-style losses and the pose optimizer need exact gradients
//! of fairly deep compositions (unproject → rigid motion → project →
//! bilinear sample → likelihood). Rather than hand-expanding those chains,
//! the loss kernels are written once over the [`Real`] scalar trait and
//! instantiated twice: with `f64` for plain evaluation and with [`Dual`] for
//! evaluation plus exact first derivatives. Finite differences stay in the
//! tests as an independent check, never in the production path.

use nalgebra::{Rotation3, Vector3};

/// Scalar that supports the operations the loss kernels use. Implemented by
/// `f64` and by [`Dual`].
pub trait Real:
    Copy
    + Send
    + Sync
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
{
    fn from_f64(x: f64) -> Self;
    /// Primal (value) part.
    fn val(self) -> f64;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    /// Branch on the primal value; derivatives follow the chosen branch
    /// (one-sided at ties, like `max` subgradients).
    fn max_by_val(self, other: Self) -> Self {
        if self.val() >= other.val() {
            self
        } else {
            other
        }
    }

    fn min_by_val(self, other: Self) -> Self {
        if self.val() <= other.val() {
            self
        } else {
            other
        }
    }

    fn clamp_by_val(self, lo: Self, hi: Self) -> Self {
        self.max_by_val(lo).min_by_val(hi)
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn val(self) -> f64 {
        self
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

/// Dual number with `N` derivative lanes: value plus the gradient of that
/// value with respect to `N` independent inputs, propagated exactly by the
/// chain rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(v: f64) -> Self {
        Self { v, d: [0.0; N] }
    }

    /// Independent variable seeded on derivative lane `lane`.
    pub fn variable(v: f64, lane: usize) -> Self {
        let mut d = [0.0; N];
        d[lane] = 1.0;
        Self { v, d }
    }

    #[inline]
    fn map(self, v: f64, dv: f64) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = dv * self.d[i];
        }
        Self { v, d }
    }
}

impl<const N: usize> std::ops::Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] + rhs.d[i];
        }
        Self {
            v: self.v + rhs.v,
            d,
        }
    }
}

impl<const N: usize> std::ops::Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] - rhs.d[i];
        }
        Self {
            v: self.v - rhs.v,
            d,
        }
    }
}

impl<const N: usize> std::ops::Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * rhs.v + self.v * rhs.d[i];
        }
        Self {
            v: self.v * rhs.v,
            d,
        }
    }
}

impl<const N: usize> std::ops::Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.v;
        let v = self.v * inv;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (self.d[i] - v * rhs.d[i]) * inv;
        }
        Self { v, d }
    }
}

impl<const N: usize> std::ops::Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = -self.d[i];
        }
        Self { v: -self.v, d }
    }
}

impl<const N: usize> Real for Dual<N> {
    fn from_f64(x: f64) -> Self {
        Self::constant(x)
    }
    fn val(self) -> f64 {
        self.v
    }
    fn ln(self) -> Self {
        self.map(self.v.ln(), 1.0 / self.v)
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.map(s, 0.5 / s)
    }
    fn sin(self) -> Self {
        self.map(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.map(self.v.cos(), -self.v.sin())
    }
}

/// 3-vector over a generic scalar, for use inside the differentiated kernels.
/// Public geometry APIs stay on nalgebra types; this stays crate-internal.
#[derive(Clone, Copy, Debug)]
pub(crate) struct V3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> V3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn lift(v: &Vector3<f64>) -> Self {
        Self::new(T::from_f64(v.x), T::from_f64(v.y), T::from_f64(v.z))
    }

    pub fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

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
}

/// Row-major 3×3 matrix over a generic scalar.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Mat3<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn lift(r: &Rotation3<f64>) -> Self {
        let a = r.matrix();
        let mut m = [[T::from_f64(0.0); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e = T::from_f64(a[(i, j)]);
            }
        }
        Self { m }
    }

    pub fn mul_vec(&self, v: V3<T>) -> V3<T> {
        V3::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y + self.m[0][2] * v.z,
            self.m[1][0] * v.x + self.m[1][1] * v.y + self.m[1][2] * v.z,
            self.m[2][0] * v.x + self.m[2][1] * v.y + self.m[2][2] * v.z,
        )
    }

    /// For rotations the transpose is the inverse.
    pub fn transpose_mul_vec(&self, v: V3<T>) -> V3<T> {
        V3::new(
            self.m[0][0] * v.x + self.m[1][0] * v.y + self.m[2][0] * v.z,
            self.m[0][1] * v.x + self.m[1][1] * v.y + self.m[2][1] * v.z,
            self.m[0][2] * v.x + self.m[1][2] * v.y + self.m[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Mat3<T>) -> Mat3<T> {
        let mut m = [[T::from_f64(0.0); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e = self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j] + self.m[i][2] * o.m[2][j];
            }
        }
        Mat3 { m }
    }
}

/// Rotation matrix `exp(ω̂)` from an axis-angle vector, valid for any scalar.
///
/// Uses the closed form `I + A·ω̂ + B·ω̂²` with `A = sin θ / θ` and
/// `B = (1 − cos θ) / θ²`; below a small-angle threshold both coefficients
/// switch to their Taylor series in `θ²`, which keeps everything smooth at
/// `ω = 0` (where the optimizer always evaluates them).
pub(crate) fn rodrigues<T: Real>(omega: V3<T>) -> Mat3<T> {
    let theta_sq = omega.dot(omega);
    let (a, b) = if theta_sq.val() < 1e-8 {
        let c2 = T::from_f64(1.0 / 6.0);
        let c4 = T::from_f64(1.0 / 120.0);
        let d2 = T::from_f64(1.0 / 24.0);
        let d4 = T::from_f64(1.0 / 720.0);
        let one = T::from_f64(1.0);
        let half = T::from_f64(0.5);
        (
            one - theta_sq * (c2 - theta_sq * c4),
            half - theta_sq * (d2 - theta_sq * d4),
        )
    } else {
        let theta = theta_sq.sqrt();
        (theta.sin() / theta, (T::from_f64(1.0) - theta.cos()) / theta_sq)
    };

    let zero = T::from_f64(0.0);
    let one = T::from_f64(1.0);
    let (wx, wy, wz) = (omega.x, omega.y, omega.z);
    // Cross-product matrix and its square, assembled inline.
    let hat = [[zero, -wz, wy], [wz, zero, -wx], [-wy, wx, zero]];
    let mut m = [[zero; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, e) in row.iter_mut().enumerate() {
            let hat_sq =
                hat[i][0] * hat[0][j] + hat[i][1] * hat[1][j] + hat[i][2] * hat[2][j];
            let ident = if i == j { one } else { zero };
            *e = ident + a * hat[i][j] + b * hat_sq;
        }
    }
    Mat3 { m }
}

/// Rigid camera-to-world transform over a generic scalar: a base pose lifted
/// to `T`, optionally perturbed by an axis-angle/translation increment
/// applied the same way [`crate::geometry::Pose::retract`] applies it.
#[derive(Clone, Copy, Debug)]
pub(crate) struct GPose<T> {
    pub r: Mat3<T>,
    pub t: V3<T>,
}

impl<T: Real> GPose<T> {
    pub fn lift(pose: &crate::geometry::Pose) -> Self {
        Self {
            r: Mat3::lift(&pose.rotation().to_rotation_matrix()),
            t: V3::lift(pose.translation()),
        }
    }

    /// `exp(ω̂)·R` and `t + v` around a base pose.
    pub fn retract(pose: &crate::geometry::Pose, omega: V3<T>, v: V3<T>) -> Self {
        let base = Self::lift(pose);
        Self {
            r: rodrigues(omega).mul_mat(&base.r),
            t: base.t.add(v),
        }
    }

    /// Camera frame to world frame.
    pub fn transform(&self, p: V3<T>) -> V3<T> {
        self.r.mul_vec(p).add(self.t)
    }

    /// World frame to camera frame.
    pub fn inverse_transform(&self, p: V3<T>) -> V3<T> {
        self.r.transpose_mul_vec(p.sub(self.t))
    }
}
