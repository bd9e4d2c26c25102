//! Exact quenched arithmetic for multitype linear-fractional offspring laws.
//!
//! A letter of the environment is a pair `(M, w)` with offspring generating
//! function `F^{(i)}(s) = 1 - (M(i), 1-s) / (1 + (w, 1-s))`. Such laws are
//! closed under composition: along an environment `(M_k, w_k)_{k>=1}`
//!
//! ```text
//! 1 - F_{0,n}^{(i)}(s) = (M_{1,n}(i), 1-s) / (1 + (D_n, 1-s)),
//! M_{1,n} = M_1 ... M_n,   D_n = w_1 M_{2,n} + ... + w_{n-1} M_n + w_n.
//! ```
//!
//! Raw products grow like `e^{S_n}`, so [`QuenchedState`] stores the
//! normalized `Mtilde = e^{-S_n} M_{1,n}` and `Dtilde = e^{-S_n} D_n`. It also
//! stores the components of both that are orthogonal to the common left
//! eigenvector direction `v` (the residuals `Rtilde`, `Etilde`), updated by
//! their own recursions. The type-resolved probabilities depend on a
//! difference of two nearly equal terms of size `O(1)` whose exact value is
//! `O(e^{-S_n})`; expressing it through the residuals avoids the catastrophic
//! cancellation that a direct evaluation suffers for large `S_n`.
//!
//! [`RawComposition`] keeps the unnormalized `M_{1,n}` and `D_n` and works in
//! any [`Field`]; with exact rationals it serves as a reference
//! implementation for the stabilized path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{dot, sum, Field, Real};

/// Integer power by repeated squaring, usable for any [`Field`].
pub fn pow_u<T: Field>(x: &T, mut e: u64) -> T {
    let mut base = x.clone();
    let mut acc = T::one();
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * base.clone();
        }
        base = base.clone() * base;
        e >>= 1;
    }
    acc
}

/// `n` as an element of the field (by repeated doubling of one).
pub fn from_count<T: Field>(n: u64) -> T {
    let two = T::one() + T::one();
    let mut acc = T::zero();
    let mut bit = T::one();
    let mut m = n;
    while m > 0 {
        if m & 1 == 1 {
            acc = acc + bit.clone();
        }
        bit = bit.clone() * two.clone();
        m >>= 1;
    }
    acc
}

/// Multinomial coefficient `|z|! / (z_1! ... z_K!)` as a field element.
pub fn multinomial<T: Field>(z: &[u64]) -> T {
    let mut acc = T::one();
    let mut prefix = 0u64;
    for &zr in z {
        for t in 1..=zr {
            acc = acc * from_count::<T>(prefix + t) / from_count::<T>(t);
        }
        prefix += zr;
    }
    acc
}

/// One environment letter: mean matrix `M` and shift vector `w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "RawLaw<T>",
    into = "RawLaw<T>",
    bound(serialize = "T: Field + Serialize", deserialize = "T: Field + Deserialize<'de>")
)]
pub struct LinFracLaw<T: Clone> {
    m: Matrix<T>,
    w: Vec<T>,
}

/// Serialized shape of a [`LinFracLaw`]: `{"M": [[..]], "w": [..]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Field + Serialize", deserialize = "T: Field + Deserialize<'de>"))]
pub struct RawLaw<T: Clone> {
    #[serde(rename = "M")]
    pub m: Matrix<T>,
    pub w: Vec<T>,
}

impl<T: Field> TryFrom<RawLaw<T>> for LinFracLaw<T> {
    type Error = Error;
    fn try_from(raw: RawLaw<T>) -> Result<Self> {
        LinFracLaw::new(raw.m, raw.w)
    }
}

impl<T: Field> From<LinFracLaw<T>> for RawLaw<T> {
    fn from(law: LinFracLaw<T>) -> Self {
        RawLaw { m: law.m, w: law.w }
    }
}

impl<T: Field> LinFracLaw<T> {
    /// Validates dimensions and signs: `M >= 0` with positive row sums, `w >= 0`.
    pub fn new(m: Matrix<T>, w: Vec<T>) -> Result<Self> {
        let k = m.dim();
        if w.len() != k {
            return Err(Error::DomainError(format!(
                "shift vector has length {} but M is {k}x{k}",
                w.len()
            )));
        }
        if m.as_slice().iter().any(|a| *a < T::zero()) {
            return Err(Error::DomainError("mean matrix has a negative entry".into()));
        }
        if (0..k).any(|i| m.row_sum(i) <= T::zero()) {
            return Err(Error::DomainError("mean matrix has a zero row".into()));
        }
        if w.iter().any(|a| *a < T::zero()) {
            return Err(Error::DomainError("shift vector has a negative entry".into()));
        }
        Ok(Self { m, w })
    }

    /// Convenience constructor from nested rows.
    pub fn from_rows(rows: Vec<Vec<T>>, w: Vec<T>) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?, w)
    }

    /// Number of types `K`.
    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    /// Mean matrix `M`.
    pub fn mean_matrix(&self) -> &Matrix<T> {
        &self.m
    }

    /// Shift vector `w`.
    pub fn shift(&self) -> &[T] {
        &self.w
    }

    /// Head weights `c_j = M(i,j) - |M(i)| w_j / (1 + |w|)`.
    ///
    /// Conditionally on survival, an individual of type `i` has one "head"
    /// child of type `J ~ c / |c|` plus a geometric number of children with
    /// types drawn from `w / |w|`. The pair `(M, w)` is a genuine offspring
    /// law if and only if every head weight is nonnegative and every
    /// one-step survival probability `|M(i)| / (1 + |w|)` is at most one.
    pub fn head_weights(&self, i: usize) -> Vec<T> {
        let a = T::one() + sum(&self.w);
        let mi = self.m.row_sum(i);
        self.m
            .row(i)
            .iter()
            .zip(&self.w)
            .map(|(mij, wj)| mij.clone() - mi.clone() * wj.clone() / a.clone())
            .collect()
    }

    /// Smallest normalized head weight `min_{i,j} c_j(i) / |M(i)|`; the law
    /// is a valid generating function iff this is nonnegative.
    pub fn min_head_weight(&self) -> T {
        let mut best: Option<T> = None;
        for i in 0..self.dim() {
            let mi = self.m.row_sum(i);
            for c in self.head_weights(i) {
                let x = c / mi.clone();
                best = match best {
                    Some(b) if b <= x => Some(b),
                    _ => Some(x),
                };
            }
        }
        best.unwrap_or_else(T::zero)
    }

    /// Largest one-step survival probability `max_i |M(i)| / (1 + |w|)`;
    /// the law is a valid generating function only if this is at most one.
    pub fn max_survival(&self) -> T {
        let a = T::one() + sum(&self.w);
        let mut best = T::zero();
        for i in 0..self.dim() {
            let q = self.m.row_sum(i) / a.clone();
            if q > best {
                best = q;
            }
        }
        best
    }

    /// Ratio `max M(i,j) / min M(i,j)`; `None` if some entry is zero.
    pub fn entry_ratio(&self) -> Option<T> {
        let mut lo = self.m.get(0, 0).clone();
        let mut hi = lo.clone();
        for a in self.m.as_slice() {
            if *a < lo {
                lo = a.clone();
            }
            if *a > hi {
                hi = a.clone();
            }
        }
        if lo <= T::zero() {
            None
        } else {
            Some(hi / lo)
        }
    }

    /// Whether `max M / min M <= 1/alpha`.
    pub fn ratio_ok(&self, alpha: &T) -> bool {
        match self.entry_ratio() {
            Some(r) => r * alpha.clone() <= T::one(),
            None => false,
        }
    }

    /// Single-letter generating function `F^{(i)}(s)`.
    pub fn gf(&self, i: usize, s: &[T]) -> T {
        let y: Vec<T> = s.iter().map(|sj| T::one() - sj.clone()).collect();
        T::one() - dot(self.m.row(i), &y) / (T::one() + dot(&self.w, &y))
    }

    /// Converts the scalar type.
    pub fn map<U: Field>(&self, f: impl Fn(&T) -> U) -> LinFracLaw<U> {
        LinFracLaw {
            m: self.m.map(&f),
            w: self.w.iter().map(&f).collect(),
        }
    }
}

/// Relative tolerance for the left-eigenvector check in scalar type `T`.
fn eigen_tol<T: Real>() -> T {
    T::c(1e-12).max(T::epsilon() * T::c(256.0))
}

/// Perron root `rho` with `v M = rho v`, checked componentwise.
pub fn perron_root<T: Real>(law: &LinFracLaw<T>, v: &[T]) -> Result<T> {
    let k = law.dim();
    if v.len() != k {
        return Err(Error::DomainError(format!(
            "eigenvector has length {} but K = {k}",
            v.len()
        )));
    }
    if v.iter().any(|x| !(*x > T::zero())) {
        return Err(Error::DomainError("v must be strictly positive".into()));
    }
    let vm = law.m.left_mul(v);
    let ratios: Vec<T> = vm.iter().zip(v).map(|(a, b)| *a / *b).collect();
    let rho = ratios[0];
    let tol = eigen_tol::<T>();
    for (j, r) in ratios.iter().enumerate() {
        if (*r - rho).abs() > tol * rho.abs().max(T::min_positive_value()) {
            return Err(Error::EigenMismatch(format!(
                "(vM)_{j}/v_{j} = {r} differs from (vM)_0/v_0 = {rho}"
            )));
        }
    }
    if !(rho > T::zero()) {
        return Err(Error::DomainError("Perron root must be positive".into()));
    }
    // Average the componentwise ratios to make the root symmetric in j.
    Ok(ratios.iter().fold(T::zero(), |a, b| a + *b) / T::c(k as f64))
}

/// Survival/extinction quantities of a quenched state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedQuantities<T> {
    /// Survival probabilities `Q_n(i)`.
    pub q: Vec<T>,
    /// Extinction probabilities `R_n(i) = 1 - Q_n(i)`.
    pub r: Vec<T>,
    /// Geometric ratio `H_n = |D_n| / (1 + |D_n|)`.
    pub h: T,
    /// Right eigenvector of `M_{1,n}` normalized by `(v, u) = 1`.
    pub u_hat: Vec<T>,
    /// Whether the power iteration for `u_hat` met its tolerance.
    pub u_converged: bool,
}

/// A probability together with a flag telling whether clamping was applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Clamped<T> {
    pub value: T,
    pub clamped: bool,
}

/// Stabilized quenched state after `n` letters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Field + Serialize", deserialize = "T: Field + Deserialize<'de>"))]
pub struct QuenchedState<T: Clone> {
    n: usize,
    s: T,
    mt: Matrix<T>,
    dt: Vec<T>,
    rt: Matrix<T>,
    et: Vec<T>,
    v: Vec<T>,
    v_norm: T,
}

/// Removes the `v`-direction: `x - (|x| / |v|) v`.
fn project_out<T: Real>(x: &mut [T], v: &[T], v_norm: T) {
    let t = x.iter().fold(T::zero(), |a, b| a + *b) / v_norm;
    for (xj, vj) in x.iter_mut().zip(v) {
        *xj = *xj - t * *vj;
    }
}

impl<T: Real> QuenchedState<T> {
    /// Initial state (`n = 0`): `S = 0`, `Mtilde = I`, `Dtilde = 0`.
    pub fn new(v: Vec<T>) -> Result<Self> {
        let k = v.len();
        if k == 0 || v.iter().any(|x| !(*x > T::zero() && x.is_finite())) {
            return Err(Error::DomainError(
                "v must be a nonempty strictly positive vector".into(),
            ));
        }
        let v_norm = v.iter().fold(T::zero(), |a, b| a + *b);
        let mut rt = Matrix::identity(k);
        for i in 0..k {
            let mut row = rt.row(i).to_vec();
            project_out(&mut row, &v, v_norm);
            for (j, x) in row.into_iter().enumerate() {
                *rt.get_mut(i, j) = x;
            }
        }
        Ok(Self {
            n: 0,
            s: T::zero(),
            mt: Matrix::identity(k),
            dt: vec![T::zero(); k],
            rt,
            et: vec![T::zero(); k],
            v,
            v_norm,
        })
    }

    /// Builds the state after the whole environment `env`.
    pub fn from_env(v: Vec<T>, env: &[LinFracLaw<T>]) -> Result<Self> {
        let mut st = Self::new(v)?;
        for law in env {
            st.advance(law)?;
        }
        Ok(st)
    }

    /// Value-semantics step: returns the state after one more letter.
    pub fn step(&self, law: &LinFracLaw<T>) -> Result<Self> {
        let mut next = self.clone();
        next.advance(law)?;
        Ok(next)
    }

    /// In-place step; returns `ln rho` of the letter.
    pub fn advance(&mut self, law: &LinFracLaw<T>) -> Result<T> {
        if law.dim() != self.dim() {
            return Err(Error::DomainError(format!(
                "law has K = {} but the state has K = {}",
                law.dim(),
                self.dim()
            )));
        }
        let rho = perron_root(law, &self.v)?;
        let x = rho.ln();
        let p = law.m.scale(&(T::one() / rho));
        self.s = self.s + x;
        let e = (-self.s).exp();
        let k = self.dim();

        self.mt = self.mt.mul(&p);

        let mut rt = self.rt.mul(&p);
        for i in 0..k {
            let t = rt.row_sum(i) / self.v_norm;
            for j in 0..k {
                let vj = self.v[j];
                let cell = rt.get_mut(i, j);
                *cell = *cell - t * vj;
            }
        }
        self.rt = rt;

        let mut dt = p.left_mul(&self.dt);
        for (d, wj) in dt.iter_mut().zip(law.shift()) {
            *d = *d + e * *wj;
        }
        self.dt = dt;

        let mut et = p.left_mul(&self.et);
        for (d, wj) in et.iter_mut().zip(law.shift()) {
            *d = *d + e * *wj;
        }
        project_out(&mut et, &self.v, self.v_norm);
        self.et = et;

        self.n += 1;
        Ok(x)
    }

    /// Number of types `K`.
    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// Generation count `n`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Log Perron product `S_n`.
    pub fn log_scale(&self) -> T {
        self.s
    }

    /// `Mtilde = e^{-S_n} M_{1,n}`.
    pub fn mtilde(&self) -> &Matrix<T> {
        &self.mt
    }

    /// `Dtilde = e^{-S_n} D_n`.
    pub fn dtilde(&self) -> &[T] {
        &self.dt
    }

    /// Residual `Mtilde - (Mtilde 1 / |v|) v` tracked without cancellation.
    pub fn mtilde_residual(&self) -> &Matrix<T> {
        &self.rt
    }

    /// Residual `Dtilde - (|Dtilde| / |v|) v` tracked without cancellation.
    pub fn dtilde_residual(&self) -> &[T] {
        &self.et
    }

    /// Common left eigenvector `v`.
    pub fn v(&self) -> &[T] {
        &self.v
    }

    /// `|v|`.
    pub fn v_norm(&self) -> T {
        self.v_norm
    }

    fn check_type(&self, i: usize) -> Result<()> {
        if i >= self.dim() {
            return Err(Error::IndexError {
                index: i,
                max: self.dim() - 1,
            });
        }
        Ok(())
    }

    /// `e^{-S_n}`.
    fn e(&self) -> T {
        (-self.s).exp()
    }

    /// `e^{-S_n} (1 + |D_n|)`.
    fn den(&self) -> T {
        self.e() + self.dt.iter().fold(T::zero(), |a, b| a + *b)
    }

    /// Survival probability `Q_n(i) = |M_{1,n}(i)| / (1 + |D_n|)`.
    pub fn q(&self, i: usize) -> T {
        (self.mt.row_sum(i) / self.den()).min(T::one())
    }

    /// `H_n = |D_n| / (1 + |D_n|)`.
    pub fn h(&self) -> T {
        let d = self.dt.iter().fold(T::zero(), |a, b| a + *b);
        d / (self.e() + d)
    }

    /// `1 - H_n = 1 / (1 + |D_n|)`, computed without cancellation.
    pub fn one_minus_h(&self) -> T {
        self.e() / self.den()
    }

    /// Survival and extinction probabilities, `H_n` and `u(M_{1,n})`.
    pub fn survival_probs(&self) -> DerivedQuantities<T> {
        let k = self.dim();
        let q: Vec<T> = (0..k).map(|i| self.q(i)).collect();
        let r = q.iter().map(|x| T::one() - *x).collect();
        let (u_hat, u_converged) = self.right_eigenvector(default_eigen_tol(), 1000.max(10 * k));
        DerivedQuantities {
            q,
            r,
            h: self.h(),
            u_hat,
            u_converged,
        }
    }

    /// Right eigenvector of `Mtilde` normalized by `(v, u) = 1`, by power
    /// iteration started from `1/|v|`. Returns the vector and whether the
    /// relative change dropped below `tol` within `max_iter` iterations.
    pub fn right_eigenvector(&self, tol: T, max_iter: usize) -> (Vec<T>, bool) {
        let k = self.dim();
        let mut u = vec![T::one() / self.v_norm; k];
        for _ in 0..max_iter {
            let mut next = self.mt.right_mul(&u);
            let norm = dot(&self.v, &next);
            if !(norm > T::zero()) {
                return (u, false);
            }
            for x in next.iter_mut() {
                *x = *x / norm;
            }
            let change = next
                .iter()
                .zip(&u)
                .fold(T::zero(), |a, (p, q)| a.max((*p - *q).abs() / p.abs()));
            u = next;
            if change <= tol {
                return (u, true);
            }
        }
        (u, false)
    }

    /// `Mtilde 1 / |v|`: the direction of `M_{1,n} x` for positive `x`,
    /// normalized by `(v, .) = 1`. Converges to the same limit `u` as the
    /// right eigenvector and costs no iteration.
    pub fn u_proxy(&self) -> Vec<T> {
        self.mt
            .row_sums()
            .into_iter()
            .map(|x| x / self.v_norm)
            .collect()
    }

    /// `e^{-S_n} |M_{1,n}(i)|`.
    pub fn mtilde_row_sum(&self, i: usize) -> T {
        self.mt.row_sum(i)
    }

    /// Local probability `P_{e_i}(|Z_n| = z) = Q_n(i)^2 H_n^{z-1} / |M_{1,n}(i)|`.
    pub fn local_prob_total(&self, i: usize, z: u64) -> Result<T> {
        Ok(self.scaled_local_prob_total(i, z)? * self.e())
    }

    /// `e^{S_n} P_{e_i}(|Z_n| = z)`, the quantity averaged under the tilted
    /// measure; it stays of order one when `S_n` is large.
    pub fn scaled_local_prob_total(&self, i: usize, z: u64) -> Result<T> {
        self.check_type(i)?;
        if z < 1 {
            return Err(Error::DomainError("z must be at least 1".into()));
        }
        let den = self.den();
        let base = self.mt.row_sum(i) / (den * den);
        Ok(base * powu_real(self.h(), z - 1))
    }

    /// `e^{S_n} P_{e_i}(|Z_n| = k)` for `k = 1..=kmax` (index 0 holds `k = 1`).
    pub fn scaled_local_probs_total(&self, i: usize, kmax: u64) -> Result<Vec<T>> {
        (1..=kmax).map(|z| self.scaled_local_prob_total(i, z)).collect()
    }

    /// Stabilized head weights `ctilde_j = e^{-S_n} c_j`, where
    /// `c_j = M_{1,n}(i,j) - |M_{1,n}(i)| D_n(j) / (1 + |D_n|)`; unclamped.
    pub fn head_weights_tilde(&self, i: usize) -> Vec<T> {
        let e = self.e();
        let den = self.den();
        let mu = self.mt.row_sum(i) / self.v_norm;
        (0..self.dim())
            .map(|l| *self.rt.get(i, l) + mu * (e * self.v[l] - self.v_norm * self.et[l]) / den)
            .collect()
    }

    /// `e^{S_n} c_j / (1 + |D_n|)`-style weights used by the scaled vector
    /// probabilities: returns `e^{S_n} ctilde_j` computed from the residuals.
    fn head_weights_scaled(&self, i: usize) -> Vec<T> {
        let es = self.s.exp();
        let den = self.den();
        let mu = self.mt.row_sum(i) / self.v_norm;
        (0..self.dim())
            .map(|l| {
                es * *self.rt.get(i, l) + mu * (self.v[l] - self.v_norm * es * self.et[l]) / den
            })
            .collect()
    }

    fn vector_prob(&self, z: &[u64], heads: &[T], den: T) -> Clamped<T> {
        let total: u64 = z.iter().sum();
        let coeff: T = multinomial_real(z);
        let ratios: Vec<T> = self.dt.iter().map(|d| *d / den).collect();
        let mut acc = T::zero();
        let mut clamped = false;
        for j in 0..self.dim() {
            if z[j] == 0 {
                continue;
            }
            let mut c = heads[j];
            if c < T::zero() {
                clamped = true;
                c = T::zero();
            }
            let mut term = T::c(z[j] as f64 / total as f64) * c / den;
            for (r, ratio) in ratios.iter().enumerate() {
                let ex = if r == j { z[r] - 1 } else { z[r] };
                term = term * powu_real(*ratio, ex);
            }
            acc = acc + term;
        }
        Clamped {
            value: coeff * acc,
            clamped,
        }
    }

    fn check_vector(&self, i: usize, z: &[u64]) -> Result<()> {
        self.check_type(i)?;
        if z.len() != self.dim() {
            return Err(Error::DomainError(format!(
                "z has length {} but K = {}",
                z.len(),
                self.dim()
            )));
        }
        if z.iter().all(|x| *x == 0) {
            return Err(Error::DomainError("z must be nonzero".into()));
        }
        Ok(())
    }

    /// `P_{e_i}(Z_n = z)` with a clamping flag. Evaluated as
    /// `(|z|!/prod z_r!) sum_j (z_j/|z|) (c_j/a) prod_r (D_n(r)/a)^{z_r - [r=j]}`
    /// with `a = 1 + |D_n|`, which equals the usual closed form and stays
    /// finite when some `D_n(j)` vanishes.
    pub fn local_prob_vector_checked(&self, i: usize, z: &[u64]) -> Result<Clamped<T>> {
        self.check_vector(i, z)?;
        let heads = self.head_weights_tilde(i);
        let mut p = self.vector_prob(z, &heads, self.den());
        if p.value > T::one() {
            p.value = T::one();
            p.clamped = true;
        }
        Ok(p)
    }

    /// `P_{e_i}(Z_n = z)`, clamped to `[0, 1]`.
    pub fn local_prob_vector(&self, i: usize, z: &[u64]) -> Result<T> {
        Ok(self.local_prob_vector_checked(i, z)?.value)
    }

    /// `e^{S_n} P_{e_i}(Z_n = z)` with a clamping flag.
    pub fn scaled_local_prob_vector_checked(&self, i: usize, z: &[u64]) -> Result<Clamped<T>> {
        self.check_vector(i, z)?;
        let heads = self.head_weights_scaled(i);
        Ok(self.vector_prob(z, &heads, self.den()))
    }

    /// `e^{S_n} P_{e_i}(Z_n = z)`.
    pub fn scaled_local_prob_vector(&self, i: usize, z: &[u64]) -> Result<T> {
        Ok(self.scaled_local_prob_vector_checked(i, z)?.value)
    }

    /// Quenched generating function `F_{0,n}^{(i)}(s)`.
    pub fn gf_eval(&self, i: usize, s: &[T]) -> Result<T> {
        self.check_type(i)?;
        if s.len() != self.dim() || s.iter().any(|x| !(*x >= T::zero() && *x <= T::one())) {
            return Err(Error::DomainError("s must lie in [0,1]^K".into()));
        }
        let y: Vec<T> = s.iter().map(|x| T::one() - *x).collect();
        let num = dot(self.mt.row(i), &y);
        if num == T::zero() {
            return Ok(T::one());
        }
        Ok(T::one() - num / (self.e() + dot(&self.dt, &y)))
    }
}

/// Default power-iteration tolerance for scalar type `T`.
pub fn default_eigen_tol<T: Real>() -> T {
    T::c(1e-12).max(T::epsilon() * T::c(16.0))
}

/// `x^e` for floats, exact for moderate exponents.
pub fn powu_real<T: Real>(x: T, e: u64) -> T {
    if e <= i32::MAX as u64 {
        x.powi(e as i32)
    } else {
        x.powf(T::c(e as f64))
    }
}

/// Multinomial coefficient in floating point.
pub fn multinomial_real<T: Real>(z: &[u64]) -> T {
    let mut acc = T::one();
    let mut prefix = 0u64;
    for &zr in z {
        for t in 1..=zr {
            acc = acc * T::c((prefix + t) as f64) / T::c(t as f64);
        }
        prefix += zr;
    }
    acc
}

/// Unstabilized composition `M_{1,n}`, `D_n` in an arbitrary field.
///
/// Intended for exact (rational) reference computations on short
/// environments; raw products overflow floating point for long ones.
#[derive(Clone, Debug, PartialEq)]
pub struct RawComposition<T: Clone> {
    n: usize,
    m: Matrix<T>,
    d: Vec<T>,
}

impl<T: Field> RawComposition<T> {
    /// Empty composition: `M_{1,0} = I`, `D_0 = 0`.
    pub fn new(k: usize) -> Self {
        Self {
            n: 0,
            m: Matrix::identity(k),
            d: vec![T::zero(); k],
        }
    }

    /// Composition along `env`.
    pub fn from_env(k: usize, env: &[LinFracLaw<T>]) -> Self {
        let mut c = Self::new(k);
        for law in env {
            c.advance(law);
        }
        c
    }

    /// Appends one letter: `M <- M M_{n+1}`, `D <- D M_{n+1} + w_{n+1}`.
    pub fn advance(&mut self, law: &LinFracLaw<T>) {
        self.m = self.m.mul(law.mean_matrix());
        let mut d = law.mean_matrix().left_mul(&self.d);
        for (x, w) in d.iter_mut().zip(law.shift()) {
            *x = x.clone() + w.clone();
        }
        self.d = d;
        self.n += 1;
    }

    /// Number of letters composed.
    pub fn n(&self) -> usize {
        self.n
    }

    /// `M_{1,n}`.
    pub fn m(&self) -> &Matrix<T> {
        &self.m
    }

    /// `D_n`.
    pub fn d(&self) -> &[T] {
        &self.d
    }

    fn a(&self) -> T {
        T::one() + sum(&self.d)
    }

    /// Survival probability `Q_n(i)`.
    pub fn q(&self, i: usize) -> T {
        self.m.row_sum(i) / self.a()
    }

    /// `H_n`.
    pub fn h(&self) -> T {
        sum(&self.d) / self.a()
    }

    /// `P_{e_i}(|Z_n| = z)`, `z >= 1`.
    pub fn local_prob_total(&self, i: usize, z: u64) -> T {
        let a = self.a();
        self.m.row_sum(i) / (a.clone() * a) * pow_u(&self.h(), z - 1)
    }

    /// Head weights of the composed law.
    pub fn head_weights(&self, i: usize) -> Vec<T> {
        let a = self.a();
        let mi = self.m.row_sum(i);
        self.m
            .row(i)
            .iter()
            .zip(&self.d)
            .map(|(mij, dj)| mij.clone() - mi.clone() * dj.clone() / a.clone())
            .collect()
    }

    /// `P_{e_i}(Z_n = z)`, `z != 0`.
    pub fn local_prob_vector(&self, i: usize, z: &[u64]) -> T {
        let a = self.a();
        let total: u64 = z.iter().sum();
        let c = self.head_weights(i);
        let mut acc = T::zero();
        for j in 0..z.len() {
            if z[j] == 0 {
                continue;
            }
            let mut term = from_count::<T>(z[j]) / from_count::<T>(total) * c[j].clone() / a.clone();
            for r in 0..z.len() {
                let ex = if r == j { z[r] - 1 } else { z[r] };
                term = term * pow_u(&(self.d[r].clone() / a.clone()), ex);
            }
            acc = acc + term;
        }
        multinomial::<T>(z) * acc
    }

    /// Quenched generating function `F_{0,n}^{(i)}(s)`.
    pub fn gf(&self, i: usize, s: &[T]) -> T {
        let y: Vec<T> = s.iter().map(|x| T::one() - x.clone()).collect();
        T::one() - dot(self.m.row(i), &y) / (T::one() + dot(&self.d, &y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l0() -> LinFracLaw<f64> {
        LinFracLaw::from_rows(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![1.0, 1.0]).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn perron_root_examples() {
        let id = LinFracLaw::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]).unwrap();
        assert_eq!(perron_root(&id, &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(perron_root(&l0(), &[1.0, 1.0]).unwrap(), 2.0);
        // Column reweighting with v = (1,2), rho = 3 from A = [[1,2],[1,2]].
        let a = [[1.0, 2.0], [1.0, 2.0]];
        let v = [1.0, 2.0];
        let rows = (0..2)
            .map(|i| {
                (0..2)
                    .map(|j| {
                        let col: f64 = (0..2).map(|r| v[r] * a[r][j]).sum();
                        a[i][j] * 3.0 * v[j] / col
                    })
                    .collect()
            })
            .collect();
        let law = LinFracLaw::from_rows(rows, vec![0.5, 0.5]).unwrap();
        assert!(close(perron_root(&law, &v).unwrap(), 3.0, 1e-14));
        let bad = LinFracLaw::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![0.0, 0.0]).unwrap();
        assert!(matches!(perron_root(&bad, &[1.0, 1.0]), Err(Error::EigenMismatch(_))));
    }

    #[test]
    fn step_examples() {
        let s0 = QuenchedState::new(vec![1.0, 1.0]).unwrap();
        let s1 = s0.step(&l0()).unwrap();
        assert!(close(s1.log_scale(), 2f64.ln(), 1e-15));
        assert_eq!(s1.mtilde().to_rows(), vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert_eq!(s1.dtilde(), &[0.5, 0.5]);
        let s2 = s1.step(&l0()).unwrap();
        assert!(close(s2.log_scale(), 4f64.ln(), 1e-15));
        assert_eq!(s2.dtilde(), &[0.75, 0.75]);
        let id = LinFracLaw::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]).unwrap();
        let t = s2.step(&id).unwrap();
        assert_eq!(t.n(), 3);
        assert_eq!(t.mtilde(), s2.mtilde());
        assert_eq!(t.dtilde(), s2.dtilde());
        assert_eq!(t.log_scale(), s2.log_scale());
    }

    #[test]
    fn survival_examples() {
        let s1 = QuenchedState::from_env(vec![1.0, 1.0], &[l0()]).unwrap();
        let d = s1.survival_probs();
        assert!(close(d.q[0], 2.0 / 3.0, 1e-15) && close(d.q[1], 2.0 / 3.0, 1e-15));
        assert!(close(d.r[0], 1.0 / 3.0, 1e-14));
        assert!(close(d.h, 2.0 / 3.0, 1e-15));
        let s2 = s1.step(&l0()).unwrap();
        assert!(close(s2.q(0), 4.0 / 7.0, 1e-15));
        assert!(close(s2.h(), 6.0 / 7.0, 1e-15));
        let nw = LinFracLaw::from_rows(vec![vec![0.3, 0.2], vec![0.2, 0.3]], vec![0.0, 0.0]).unwrap();
        let s = QuenchedState::from_env(vec![1.0, 1.0], &[nw]).unwrap();
        assert_eq!(s.h(), 0.0);
    }

    #[test]
    fn local_probability_examples() {
        let s1 = QuenchedState::from_env(vec![1.0, 1.0], &[l0()]).unwrap();
        assert!(close(s1.local_prob_total(0, 1).unwrap(), 2.0 / 9.0, 1e-15));
        assert!(close(s1.local_prob_total(0, 3).unwrap(), 8.0 / 81.0, 1e-15));
        assert!(matches!(s1.local_prob_total(0, 0), Err(Error::DomainError(_))));
        let tail = s1.local_prob_total(0, 1).unwrap() / (1.0 - s1.h());
        assert!(close(1.0 - s1.q(0) + tail, 1.0, 1e-15));
        assert!(close(s1.local_prob_vector(0, &[1, 0]).unwrap(), 1.0 / 9.0, 1e-15));
        assert!(close(s1.local_prob_vector(0, &[0, 1]).unwrap(), 1.0 / 9.0, 1e-15));
        assert!(matches!(s1.local_prob_vector(0, &[0, 0]), Err(Error::DomainError(_))));
        assert!(matches!(s1.local_prob_vector(2, &[1, 0]), Err(Error::IndexError { .. })));
    }

    #[test]
    fn gf_examples() {
        let s1 = QuenchedState::from_env(vec![1.0, 1.0], &[l0()]).unwrap();
        assert_eq!(s1.gf_eval(0, &[1.0, 1.0]).unwrap(), 1.0);
        assert!(close(s1.gf_eval(0, &[0.0, 0.0]).unwrap(), 1.0 - s1.q(0), 1e-15));
        assert!(close(s1.gf_eval(0, &[0.5, 0.5]).unwrap(), 0.5, 1e-15));
        assert!(s1.gf_eval(0, &[1.5, 0.0]).is_err());
    }

    #[test]
    fn l0_head_weights() {
        assert!(l0().head_weights(0).iter().all(|c| close(*c, 1.0 / 3.0, 1e-15)));
        let s1 = QuenchedState::from_env(vec![1.0, 1.0], &[l0()]).unwrap();
        let c = s1.head_weights_tilde(0);
        assert!(close(c[0], 1.0 / 6.0, 1e-15));
    }

    #[test]
    fn vanishing_shift_has_finite_vector_probabilities() {
        // w = 0: a surviving individual has exactly one child of type J ~ M(i,.).
        let law = LinFracLaw::from_rows(vec![vec![0.3, 0.2], vec![0.2, 0.3]], vec![0.0, 0.0]).unwrap();
        let s = QuenchedState::from_env(vec![1.0, 1.0], &[law.clone(), law]).unwrap();
        let p10 = s.local_prob_vector(0, &[1, 0]).unwrap();
        let p01 = s.local_prob_vector(0, &[0, 1]).unwrap();
        assert!(close(p10, 0.3 * 0.3 + 0.2 * 0.2, 1e-14));
        assert!(close(p01, 0.3 * 0.2 + 0.2 * 0.3, 1e-14));
        assert_eq!(s.local_prob_vector(0, &[1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn f32_instantiation_matches_f64() {
        let law32 = l0().map(|x| *x as f32);
        let s = QuenchedState::<f32>::from_env(vec![1.0, 1.0], &[law32.clone(), law32]).unwrap();
        assert!((s.q(0) - 4.0 / 7.0).abs() < 1e-6);
        assert!((s.local_prob_total(0, 2).unwrap() - (4.0f32 / 49.0) * (6.0 / 7.0)).abs() < 1e-6);
    }
}
