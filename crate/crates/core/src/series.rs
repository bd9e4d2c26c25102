//! Truncated multivariate power series and pgf coefficient extraction.
//!
//! This is an independent route to the quenched law of `Z_n`: the offspring
//! generating functions are composed as truncated power series,
//! `F_{0,n} = F_1(F_2(...F_n(s)))`, and the coefficient of `s^z` in
//! `F_{0,n}^{(i)}` is `P_{e_i}(Z_n = z)`. No closed form for the composed law is
//! used, so agreement with the stabilized formulas is a genuine check.
//! Works over any [`Field`]; with exact rationals the coefficients are exact.

use crate::linfrac::LinFracLaw;
use crate::scalar::Field;

/// Power series in `K` variables truncated above total degree `deg`.
///
/// Coefficients are stored densely over `[0, deg]^K`; entries of total
/// degree above `deg` are kept at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Series<T> {
    k: usize,
    deg: usize,
    coeffs: Vec<T>,
}

impl<T: Field> Series<T> {
    /// The zero series.
    pub fn zero(k: usize, deg: usize) -> Self {
        Self {
            k,
            deg,
            coeffs: vec![T::zero(); (deg + 1).pow(k as u32)],
        }
    }

    /// The constant series `c`.
    pub fn constant(k: usize, deg: usize, c: T) -> Self {
        let mut s = Self::zero(k, deg);
        s.coeffs[0] = c;
        s
    }

    /// The coordinate series `s_j`.
    pub fn variable(k: usize, deg: usize, j: usize) -> Self {
        let mut s = Self::zero(k, deg);
        if deg >= 1 {
            let mut z = vec![0u64; k];
            z[j] = 1;
            let idx = s.index(&z);
            s.coeffs[idx] = T::one();
        }
        s
    }

    fn index(&self, z: &[u64]) -> usize {
        z.iter()
            .fold(0usize, |acc, &zr| acc * (self.deg + 1) + zr as usize)
    }

    fn multi_index(&self, mut idx: usize) -> Vec<u64> {
        let mut z = vec![0u64; self.k];
        for r in (0..self.k).rev() {
            z[r] = (idx % (self.deg + 1)) as u64;
            idx /= self.deg + 1;
        }
        z
    }

    /// Coefficient of `s^z` (zero above the truncation degree).
    pub fn coeff(&self, z: &[u64]) -> T {
        let total: u64 = z.iter().sum();
        if z.len() != self.k || total as usize > self.deg {
            return T::zero();
        }
        self.coeffs[self.index(z)].clone()
    }

    /// Constant term.
    pub fn constant_term(&self) -> T {
        self.coeffs[0].clone()
    }

    fn admissible(&self) -> impl Iterator<Item = (usize, Vec<u64>)> + '_ {
        (0..self.coeffs.len())
            .map(move |idx| (idx, self.multi_index(idx)))
            .filter(move |(_, z)| z.iter().sum::<u64>() as usize <= self.deg)
    }

    /// `self + other`.
    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *a = a.clone() + b.clone();
        }
        out
    }

    /// `self - other`.
    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *a = a.clone() - b.clone();
        }
        out
    }

    /// `c * self`.
    pub fn scale(&self, c: &T) -> Self {
        let mut out = self.clone();
        for a in out.coeffs.iter_mut() {
            *a = a.clone() * c.clone();
        }
        out
    }

    /// Truncated product.
    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero(self.k, self.deg);
        let terms: Vec<(usize, Vec<u64>)> = self.admissible().collect();
        for (ia, za) in &terms {
            let a = &self.coeffs[*ia];
            if *a == T::zero() {
                continue;
            }
            let da: u64 = za.iter().sum();
            for (ib, zb) in &terms {
                let db: u64 = zb.iter().sum();
                if (da + db) as usize > self.deg {
                    continue;
                }
                let b = &other.coeffs[*ib];
                if *b == T::zero() {
                    continue;
                }
                let z: Vec<u64> = za.iter().zip(zb).map(|(x, y)| x + y).collect();
                let idx = out.index(&z);
                out.coeffs[idx] = out.coeffs[idx].clone() + a.clone() * b.clone();
            }
        }
        out
    }

    /// Truncated multiplicative inverse; requires a nonzero constant term.
    pub fn inverse(&self) -> Self {
        let a0 = self.constant_term();
        assert!(a0 != T::zero(), "series inverse needs a nonzero constant term");
        let mut order: Vec<(usize, Vec<u64>)> = self.admissible().collect();
        order.sort_by_key(|(_, z)| z.iter().sum::<u64>());
        let mut out = Self::zero(self.k, self.deg);
        out.coeffs[0] = T::one() / a0.clone();
        for (idx, z) in order.iter().skip(1) {
            // b_z = -(1/a0) sum_{y <= z, y != z} a_{z-y} b_y
            let mut acc = T::zero();
            for (iy, y) in &order {
                if y == z || y.iter().zip(z).any(|(p, q)| p > q) {
                    continue;
                }
                let d: Vec<u64> = z.iter().zip(y).map(|(p, q)| p - q).collect();
                let a = self.coeffs[self.index(&d)].clone();
                if a == T::zero() {
                    continue;
                }
                acc = acc + a * out.coeffs[*iy].clone();
            }
            out.coeffs[*idx] = T::zero() - acc / a0.clone();
        }
        out
    }
}

/// Applies one letter to a vector of series: `F^{(i)}(G)` for every type `i`.
pub fn apply_letter<T: Field>(law: &LinFracLaw<T>, g: &[Series<T>]) -> Vec<Series<T>> {
    let k = law.dim();
    let (kk, deg) = (g[0].k, g[0].deg);
    let one = Series::constant(kk, deg, T::one());
    let y: Vec<Series<T>> = g.iter().map(|gj| one.sub(gj)).collect();
    let mut wy = one.clone();
    for (wj, yj) in law.shift().iter().zip(&y) {
        wy = wy.add(&yj.scale(wj));
    }
    let inv = wy.inverse();
    (0..k)
        .map(|i| {
            let mut my = Series::zero(kk, deg);
            for (mij, yj) in law.mean_matrix().row(i).iter().zip(&y) {
                my = my.add(&yj.scale(mij));
            }
            one.sub(&my.mul(&inv))
        })
        .collect()
}

/// Truncated expansions of `F_{0,n}^{(i)}` for all `i`, up to total degree `deg`.
pub fn composed_pgf<T: Field>(k: usize, env: &[LinFracLaw<T>], deg: usize) -> Vec<Series<T>> {
    let mut g: Vec<Series<T>> = (0..k).map(|j| Series::variable(k, deg, j)).collect();
    for law in env.iter().rev() {
        g = apply_letter(law, &g);
    }
    g
}

/// All nonzero `z` in `N^k` with `|z| <= max_total`, ordered by total then
/// lexicographically.
pub fn enumerate_support(k: usize, max_total: u64) -> Vec<Vec<u64>> {
    let mut out = Vec::new();
    for total in 1..=max_total {
        let mut z = vec![0u64; k];
        compositions(k, total, 0, &mut z, &mut out);
    }
    out
}

fn compositions(k: usize, remaining: u64, pos: usize, z: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
    if pos + 1 == k {
        z[pos] = remaining;
        out.push(z.clone());
        return;
    }
    for x in (0..=remaining).rev() {
        z[pos] = x;
        compositions(k, remaining - x, pos + 1, z, out);
    }
    z[pos] = 0;
}
