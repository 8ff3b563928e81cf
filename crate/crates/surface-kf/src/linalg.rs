//! Fixed-size vectors and matrices over a generic [`Real`] scalar.

use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use crate::scalar::Real;

/// 3-vector; units depend on context (m·s⁻², rad·s⁻¹, unitless direction).
#[derive(Clone, Debug, PartialEq)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Vec3 { x, y, z }
    }

    pub fn from_f64s(x: f64, y: f64, z: f64) -> Self {
        Vec3::new(T::from(x), T::from(y), T::from(z))
    }

    pub fn zeros() -> Self {
        Vec3::new(T::zero(), T::zero(), T::zero())
    }

    pub fn comp(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index out of range: {i}"),
        }
    }

    pub fn dot(&self, o: &Self) -> T {
        self.x.clone() * &o.x + self.y.clone() * &o.y + self.z.clone() * &o.z
    }

    pub fn cross(&self, o: &Self) -> Self {
        Vec3::new(
            self.y.clone() * &o.z - self.z.clone() * &o.y,
            self.z.clone() * &o.x - self.x.clone() * &o.z,
            self.x.clone() * &o.y - self.y.clone() * &o.x,
        )
    }

    pub fn norm_sq(&self) -> T {
        self.dot(self)
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, s: &T) -> Self {
        Vec3::new(self.x.clone() * s, self.y.clone() * s, self.z.clone() * s)
    }

    /// Unit vector along `self`, or `None` when the norm is zero.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        if n.is_zero() {
            return None;
        }
        Some(self.scale(&(T::one() / n)))
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_f64s(&self) -> [f64; 3] {
        [self.x.to_f64(), self.y.to_f64(), self.z.to_f64()]
    }

    pub fn to_col(&self) -> SMat<T, 3, 1> {
        SMat::from_fn(|i, _| self.comp(i).clone())
    }

    /// Outer product `self · otherᵀ`.
    pub fn outer(&self, o: &Self) -> Mat3<T> {
        SMat::from_fn(|i, j| self.comp(i).clone() * o.comp(j))
    }

    pub fn from_col(m: &SMat<T, 3, 1>) -> Self {
        Vec3::new(m[(0, 0)].clone(), m[(1, 0)].clone(), m[(2, 0)].clone())
    }
}

impl<T: Real> Add for &Vec3<T> {
    type Output = Vec3<T>;
    fn add(self, o: &Vec3<T>) -> Vec3<T> {
        Vec3::new(
            self.x.clone() + &o.x,
            self.y.clone() + &o.y,
            self.z.clone() + &o.z,
        )
    }
}

impl<T: Real> Sub for &Vec3<T> {
    type Output = Vec3<T>;
    fn sub(self, o: &Vec3<T>) -> Vec3<T> {
        Vec3::new(
            self.x.clone() - &o.x,
            self.y.clone() - &o.y,
            self.z.clone() - &o.z,
        )
    }
}

impl<T: Real> Neg for &Vec3<T> {
    type Output = Vec3<T>;
    fn neg(self) -> Vec3<T> {
        Vec3::new(-self.x.clone(), -self.y.clone(), -self.z.clone())
    }
}

impl<T: Real> Mul<&T> for &Vec3<T> {
    type Output = Vec3<T>;
    fn mul(self, s: &T) -> Vec3<T> {
        self.scale(s)
    }
}

/// Dense row-major matrix with compile-time dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct SMat<T, const R: usize, const C: usize>(pub [[T; C]; R]);

pub type Mat2<T> = SMat<T, 2, 2>;
pub type Mat3<T> = SMat<T, 3, 3>;
pub type Mat6<T> = SMat<T, 6, 6>;
pub type Vec6<T> = SMat<T, 6, 1>;

impl<T: Real, const R: usize, const C: usize> SMat<T, R, C> {
    pub fn from_fn(mut f: impl FnMut(usize, usize) -> T) -> Self {
        SMat(std::array::from_fn(|i| std::array::from_fn(|j| f(i, j))))
    }

    pub fn zeros() -> Self {
        Self::from_fn(|_, _| T::zero())
    }

    pub fn from_rows_f64(rows: [[f64; C]; R]) -> Self {
        Self::from_fn(|i, j| T::from(rows[i][j]))
    }

    pub fn transpose(&self) -> SMat<T, C, R> {
        SMat::from_fn(|i, j| self.0[j][i].clone())
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::from_fn(|i, j| self.0[i][j].clone() + &o.0[i][j])
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self::from_fn(|i, j| self.0[i][j].clone() - &o.0[i][j])
    }

    pub fn scale(&self, s: &T) -> Self {
        Self::from_fn(|i, j| self.0[i][j].clone() * s)
    }

    pub fn mul<const K: usize>(&self, o: &SMat<T, C, K>) -> SMat<T, R, K> {
        SMat::from_fn(|i, k| {
            let mut acc = T::zero();
            for j in 0..C {
                acc = acc + self.0[i][j].clone() * &o.0[j][k];
            }
            acc
        })
    }

    pub fn set_block<const BR: usize, const BC: usize>(
        &mut self,
        i0: usize,
        j0: usize,
        b: &SMat<T, BR, BC>,
    ) {
        for i in 0..BR {
            for j in 0..BC {
                self.0[i0 + i][j0 + j] = b.0[i][j].clone();
            }
        }
    }

    pub fn max_abs(&self) -> T {
        let mut m = T::zero();
        for row in &self.0 {
            for v in row {
                m = m.maximum(&v.abs());
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|row| row.iter().all(|v| v.is_finite()))
    }

    pub fn to_f64s(&self) -> [[f64; C]; R] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.0[i][j].to_f64()))
    }
}

impl<T: Real, const N: usize> SMat<T, N, N> {
    pub fn identity() -> Self {
        Self::from_fn(|i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn diag_f64(d: [f64; N]) -> Self {
        Self::from_fn(|i, j| if i == j { T::from(d[i]) } else { T::zero() })
    }

    /// `(M + Mᵀ) / 2`.
    pub fn symmetrized(&self) -> Self {
        let half = T::from(0.5);
        Self::from_fn(|i, j| (self.0[i][j].clone() + &self.0[j][i]) * &half)
    }

    /// Lower-triangular `L` with `L·Lᵀ = self`; `None` when a pivot is not
    /// strictly positive.
    pub fn cholesky(&self) -> Option<Self> {
        let mut l = Self::zeros();
        for i in 0..N {
            for j in 0..=i {
                let mut sum = self.0[i][j].clone();
                for k in 0..j {
                    sum = sum - l.0[i][k].clone() * &l.0[j][k];
                }
                if i == j {
                    if sum <= T::zero() {
                        return None;
                    }
                    l.0[i][i] = sum.sqrt();
                } else {
                    l.0[i][j] = sum / &l.0[j][j];
                }
            }
        }
        Some(l)
    }

    /// Solves `self · X = B` for symmetric positive-definite `self` via
    /// Cholesky. Returns `None` when factorization fails or the estimated
    /// condition number exceeds `1/√ε` at the active precision.
    pub fn spd_solve<const K: usize>(&self, b: &SMat<T, N, K>) -> Option<SMat<T, N, K>> {
        let l = self.cholesky()?;
        let mut dmax = l.0[0][0].clone();
        let mut dmin = l.0[0][0].clone();
        for i in 1..N {
            dmax = dmax.maximum(&l.0[i][i]);
            dmin = dmin.minimum(&l.0[i][i]);
        }
        // cond₂(self) ≈ (max diag L / min diag L)²; reject beyond 2^(p/2).
        let ratio = dmax / dmin;
        let bound = T::exp2i(T::mantissa_bits() as i32 / 4);
        if ratio > bound {
            return None;
        }

        // Forward substitution: L·Y = B.
        let mut y = b.clone();
        for k in 0..K {
            for i in 0..N {
                let mut sum = y.0[i][k].clone();
                for j in 0..i {
                    sum = sum - l.0[i][j].clone() * &y.0[j][k];
                }
                y.0[i][k] = sum / &l.0[i][i];
            }
        }
        // Back substitution: Lᵀ·X = Y.
        let mut x = y;
        for k in 0..K {
            for i in (0..N).rev() {
                let mut sum = x.0[i][k].clone();
                for j in i + 1..N {
                    sum = sum - l.0[j][i].clone() * &x.0[j][k];
                }
                x.0[i][k] = sum / &l.0[i][i];
            }
        }
        Some(x)
    }

    /// Cholesky-based positive-semidefiniteness check with a diagonal shift
    /// of `tol` absorbing roundoff-scale negative pivots.
    pub fn is_positive_semidefinite(&self, tol: &T) -> bool {
        let shifted = Self::from_fn(|i, j| {
            if i == j {
                self.0[i][j].clone() + tol
            } else {
                self.0[i][j].clone()
            }
        });
        shifted.cholesky().is_some()
    }
}

impl<T: Real, const N: usize> SMat<T, N, 1> {
    pub fn vget(&self, i: usize) -> &T {
        &self.0[i][0]
    }

    pub fn vset(&mut self, i: usize, v: T) {
        self.0[i][0] = v;
    }

    pub fn from_slice_f64(v: [f64; N]) -> Self {
        Self::from_fn(|i, _| T::from(v[i]))
    }

    pub fn norm(&self) -> T {
        let mut acc = T::zero();
        for i in 0..N {
            acc = acc + self.0[i][0].clone() * &self.0[i][0];
        }
        acc.sqrt()
    }
}

impl<T: Real> Vec6<T> {
    pub fn from_vec3s(top: &Vec3<T>, bottom: &Vec3<T>) -> Self {
        let mut v = Self::zeros();
        for i in 0..3 {
            v.vset(i, top.comp(i).clone());
            v.vset(i + 3, bottom.comp(i).clone());
        }
        v
    }

    pub fn split(&self) -> (Vec3<T>, Vec3<T>) {
        (
            Vec3::new(
                self.vget(0).clone(),
                self.vget(1).clone(),
                self.vget(2).clone(),
            ),
            Vec3::new(
                self.vget(3).clone(),
                self.vget(4).clone(),
                self.vget(5).clone(),
            ),
        )
    }
}

impl<T: Real> Mat3<T> {
    pub fn mul_vec3(&self, v: &Vec3<T>) -> Vec3<T> {
        Vec3::from_col(&self.mul(&v.to_col()))
    }
}

impl<T, const R: usize, const C: usize> Index<(usize, usize)> for SMat<T, R, C> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.0[i][j]
    }
}

impl<T, const R: usize, const C: usize> IndexMut<(usize, usize)> for SMat<T, R, C> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.0[i][j]
    }
}

impl<T: Real, const R: usize, const C: usize> Add for &SMat<T, R, C> {
    type Output = SMat<T, R, C>;
    fn add(self, o: Self) -> SMat<T, R, C> {
        SMat::add(self, o)
    }
}

impl<T: Real, const R: usize, const C: usize> Sub for &SMat<T, R, C> {
    type Output = SMat<T, R, C>;
    fn sub(self, o: Self) -> SMat<T, R, C> {
        SMat::sub(self, o)
    }
}

impl<T: Real, const R: usize, const C: usize, const K: usize> Mul<&SMat<T, C, K>>
    for &SMat<T, R, C>
{
    type Output = SMat<T, R, K>;
    fn mul(self, o: &SMat<T, C, K>) -> SMat<T, R, K> {
        SMat::mul(self, o)
    }
}
