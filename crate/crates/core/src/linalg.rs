//! Direct solvers for the time stepping (tridiagonal Thomas) and the
//! monolithic space-time systems (banded LU with partial pivoting,
//! LAPACK gbtrf-style storage).

use crate::error::{Error, Result};

/// Solve a general tridiagonal system in place. `rhs` is overwritten with
/// the solution. Fails on a vanishing pivot.
pub fn thomas_solve(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    debug_assert_eq!(sub.len(), n - 1);
    debug_assert_eq!(sup.len(), n - 1);
    debug_assert_eq!(rhs.len(), n);
    let mut c = vec![0.0; n - 1];
    let mut piv = diag[0];
    if piv.abs() < f64::MIN_POSITIVE * 1e4 {
        return Err(Error::Solver("tridiagonal pivot underflow at row 0".into()));
    }
    c[0] = sup[0] / piv;
    rhs[0] /= piv;
    for i in 1..n {
        piv = diag[i] - sub[i - 1] * c[i - 1];
        if piv.abs() < f64::MIN_POSITIVE * 1e4 {
            return Err(Error::Solver(format!(
                "tridiagonal pivot underflow at row {i}"
            )));
        }
        if i < n - 1 {
            c[i] = sup[i] / piv;
        }
        rhs[i] = (rhs[i] - sub[i - 1] * rhs[i - 1]) / piv;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    Ok(())
}

/// Banded matrix with `kl` sub- and `ku` super-diagonals. Storage keeps
/// `kl` extra super-diagonals for pivoting fill-in, as in LAPACK.
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    /// column-major band: entry (i, j) lives at ab[j * ldab + (kl + ku + i - j)]
    ab: Vec<f64>,
    ldab: usize,
    pivots: Vec<usize>,
    factored: bool,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            ab: vec![0.0; ldab * n],
            ldab,
            pivots: vec![0; n],
            factored: false,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(
            i + self.ku + self.kl >= j && j + self.kl >= i,
            "({i},{j}) outside band"
        );
        j * self.ldab + (self.kl + self.ku + i - j)
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.ab[s] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.ab[s] = v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i + self.ku >= j && j + self.kl >= i {
            self.ab[self.slot(i, j)]
        } else {
            0.0
        }
    }

    /// LU factorization with row partial pivoting, in place.
    pub fn factor(&mut self) -> Result<()> {
        let (n, kl, ku, ldab) = (self.n, self.kl, self.ku, self.ldab);
        let kv = kl + ku; // width of the factored upper band
        for j in 0..n {
            // pivot search in column j among rows j..=min(j+kl, n-1)
            let reach = kl.min(n - 1 - j);
            let mut p = 0;
            let mut pmax = 0.0;
            for r in 0..=reach {
                let v = self.ab[j * ldab + kl + ku + r].abs();
                if v > pmax {
                    pmax = v;
                    p = r;
                }
            }
            if pmax == 0.0 || !pmax.is_finite() {
                return Err(Error::Solver(format!(
                    "banded LU breakdown at column {j} (pivot {pmax})"
                )));
            }
            self.pivots[j] = j + p;
            // swap rows j and j+p across the active band of columns
            if p != 0 {
                let jmax = (j + kv).min(n - 1);
                for c in j..=jmax {
                    let s1 = self.slot(j, c);
                    let s2 = self.slot(j + p, c);
                    self.ab.swap(s1, s2);
                }
            }
            // eliminate below the pivot
            let pivval = self.ab[j * ldab + kl + ku];
            for r in 1..=reach {
                let s = self.slot(j + r, j);
                let mult = self.ab[s] / pivval;
                self.ab[s] = mult; // store L
                if mult != 0.0 {
                    let jmax = (j + kv).min(n - 1);
                    for c in (j + 1)..=jmax {
                        let su = self.slot(j, c);
                        let st = self.slot(j + r, c);
                        self.ab[st] -= mult * self.ab[su];
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solve with the factored matrix; `rhs` is overwritten.
    pub fn solve(&self, rhs: &mut [f64]) -> Result<()> {
        if !self.factored {
            return Err(Error::Solver("banded solve before factorization".into()));
        }
        let (n, kl) = (self.n, self.kl);
        let kv = self.kl + self.ku;
        // forward: apply pivots and L
        for j in 0..n {
            let p = self.pivots[j];
            if p != j {
                rhs.swap(j, p);
            }
            let reach = kl.min(n - 1 - j);
            for r in 1..=reach {
                rhs[j + r] -= self.ab[self.slot(j + r, j)] * rhs[j];
            }
        }
        // backward: U x = y
        for j in (0..n).rev() {
            let jmax = (j + kv).min(n - 1);
            let mut v = rhs[j];
            for c in (j + 1)..=jmax {
                v -= self.ab[self.slot(j, c)] * rhs[c];
            }
            rhs[j] = v / self.ab[self.slot(j, j)];
        }
        Ok(())
    }
}
