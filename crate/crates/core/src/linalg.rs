//! Exact rational linear algebra over `S` and `T`.
//!
//! Row reduction, row-space membership and null spaces are computed with
//! arbitrary-precision rationals: safety under the linear-system relaxation is a
//! yes/no question about the row space of `S`, so no tolerance is involved.
//! The least-squares point estimate is a floating-point baseline.

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::bag::{Dataset, Mapping};
use crate::error::Result;
use crate::lp::{solve_lp, LpOutcome, LpProblem, Relation, VarBound};

pub type Rational = BigRational;

pub fn rat(v: i64) -> Rational {
    BigRational::from_integer(BigInt::from(v))
}

pub fn rat_u64(v: u64) -> Rational {
    BigRational::from_integer(BigInt::from(v))
}

pub fn rat_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Exact conversion of a finite float.
pub fn rat_from_f64(v: f64) -> Rational {
    BigRational::from_float(v).expect("finite float")
}

/// Dense matrix of exact rationals (always in lowest terms).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RationalMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Rational>,
}

impl RationalMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RationalMatrix { rows, cols, data: vec![Rational::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Rational::one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<Rational>>, cols: usize) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend(r);
        }
        RationalMatrix { rows: n, cols, data }
    }

    pub fn from_u64_rows(rows: &[Vec<u64>], cols: usize) -> Self {
        Self::from_rows(rows.iter().map(|r| r.iter().map(|&v| rat_u64(v)).collect()).collect(), cols)
    }

    pub fn from_i64_rows(rows: &[Vec<i64>], cols: usize) -> Self {
        Self::from_rows(rows.iter().map(|r| r.iter().map(|&v| rat(v)).collect()).collect(), cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &Rational {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Rational) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[Rational] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j).clone());
            }
        }
        t
    }

    pub fn mul(&self, other: &RationalMatrix) -> RationalMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let b = other.get(k, j);
                    if !b.is_zero() {
                        let v = out.get(i, j) + a * b;
                        out.set(i, j, v);
                    }
                }
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(Zero::is_zero)
    }

    pub fn to_f64_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).iter().map(rat_to_f64).collect()).collect()
    }
}

/// `αᵀ A` for a row vector of coefficients.
pub fn combine_rows(alpha: &[Rational], a: &RationalMatrix) -> Vec<Rational> {
    assert_eq!(alpha.len(), a.rows());
    let mut out = vec![Rational::zero(); a.cols()];
    for (i, c) in alpha.iter().enumerate() {
        if c.is_zero() {
            continue;
        }
        for (j, o) in out.iter_mut().enumerate() {
            let v = a.get(i, j);
            if !v.is_zero() {
                *o += c * v;
            }
        }
    }
    out
}

/// Output of [`rref`]: `transform · input = rref`.
#[derive(Clone, Debug)]
pub struct RrefResult {
    pub rref: RationalMatrix,
    pub pivot_cols: Vec<usize>,
    pub rank: usize,
    pub transform: RationalMatrix,
}

type SparseRow = Vec<(usize, Rational)>;

fn nonzeros(row: &[Rational]) -> SparseRow {
    row.iter().enumerate().filter(|(_, v)| !v.is_zero()).map(|(j, v)| (j, v.clone())).collect()
}

/// `target -= factor * pivot` where `pivot` is given sparsely.
fn axpy(target: &mut [Rational], factor: &Rational, pivot: &SparseRow) {
    for (j, v) in pivot {
        target[*j] -= factor * v;
    }
}

/// Gauss-Jordan elimination pivoting only on columns `< pivot_limit`.
/// Returns reduced rows (pivot rows first), pivot columns, and optionally the
/// row transform.
fn eliminate(
    mut rows: Vec<Vec<Rational>>,
    cols: usize,
    pivot_limit: usize,
    track: bool,
) -> (Vec<Vec<Rational>>, Vec<usize>, Option<Vec<Vec<Rational>>>) {
    let n = rows.len();
    // The transform rides along as extra columns.
    if track {
        for (i, r) in rows.iter_mut().enumerate() {
            r.extend((0..n).map(|k| if k == i { Rational::one() } else { Rational::zero() }));
        }
    }
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..pivot_limit.min(cols) {
        if r == n {
            break;
        }
        let Some(p) = (r..n).find(|&i| !rows[i][c].is_zero()) else {
            continue;
        };
        rows.swap(r, p);
        let inv = rows[r][c].recip();
        if !inv.is_one() {
            for v in rows[r].iter_mut() {
                if !v.is_zero() {
                    *v *= &inv;
                }
            }
        }
        let pivot = nonzeros(&rows[r]);
        for i in 0..n {
            if i != r && !rows[i][c].is_zero() {
                let f = rows[i][c].clone();
                axpy(&mut rows[i], &f, &pivot);
            }
        }
        pivots.push(c);
        r += 1;
    }
    let transform = if track {
        Some(rows.iter_mut().map(|row| row.split_off(cols)).collect())
    } else {
        None
    };
    (rows, pivots, transform)
}

/// Exact reduced row echelon form; the pivot is the first nonzero entry
/// found scanning down each column.
pub fn rref(m: &RationalMatrix) -> RrefResult {
    let rows: Vec<Vec<Rational>> = (0..m.rows()).map(|i| m.row(i).to_vec()).collect();
    let (reduced, pivot_cols, transform) = eliminate(rows, m.cols(), m.cols(), true);
    let rank = pivot_cols.len();
    RrefResult {
        rref: RationalMatrix::from_rows(reduced, m.cols()),
        pivot_cols,
        rank,
        transform: RationalMatrix::from_rows(transform.expect("tracked"), m.rows()),
    }
}

pub fn rank(m: &RationalMatrix) -> usize {
    let rows: Vec<Vec<Rational>> = (0..m.rows()).map(|i| m.row(i).to_vec()).collect();
    eliminate(rows, m.cols(), m.cols(), false).1.len()
}

/// Basis of the row space of a matrix kept in reduced form, with the
/// coefficients that express each basis row through the original rows.
#[derive(Clone, Debug)]
pub struct RowSpace {
    cols: usize,
    n_source_rows: usize,
    basis: Vec<Vec<Rational>>,
    pivot_cols: Vec<usize>,
    coeffs: Vec<Vec<Rational>>,
}

impl RowSpace {
    pub fn new(m: &RationalMatrix) -> Self {
        let res = rref(m);
        let basis = (0..res.rank).map(|i| res.rref.row(i).to_vec()).collect();
        let coeffs = (0..res.rank).map(|i| res.transform.row(i).to_vec()).collect();
        RowSpace { cols: m.cols(), n_source_rows: m.rows(), basis, pivot_cols: res.pivot_cols, coeffs }
    }

    /// An empty row space that rows can be added to one at a time.
    pub fn empty(cols: usize) -> Self {
        RowSpace { cols, n_source_rows: 0, basis: Vec::new(), pivot_cols: Vec::new(), coeffs: Vec::new() }
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn pivot_cols(&self) -> &[usize] {
        &self.pivot_cols
    }

    pub fn basis(&self) -> &[Vec<Rational>] {
        &self.basis
    }

    /// Residual of `x` after removing its row-space component along the pivots.
    fn residual(&self, x: &[Rational]) -> Vec<Rational> {
        let mut res = x.to_vec();
        for (k, &p) in self.pivot_cols.iter().enumerate() {
            if !res[p].is_zero() {
                let f = res[p].clone();
                for (j, v) in self.basis[k].iter().enumerate() {
                    if !v.is_zero() {
                        res[j] -= &f * v;
                    }
                }
            }
        }
        res
    }

    pub fn contains(&self, x: &[Rational]) -> bool {
        assert_eq!(x.len(), self.cols);
        self.residual(x).iter().all(Zero::is_zero)
    }

    /// Some `α` with `αᵀS = x`, or `None` when `x` is outside the row space.
    pub fn coefficients(&self, x: &[Rational]) -> Option<Vec<Rational>> {
        if !self.contains(x) {
            return None;
        }
        let mut alpha = vec![Rational::zero(); self.n_source_rows];
        for (k, &p) in self.pivot_cols.iter().enumerate() {
            if x[p].is_zero() {
                continue;
            }
            for (a, c) in alpha.iter_mut().zip(&self.coeffs[k]) {
                if !c.is_zero() {
                    *a += &x[p] * c;
                }
            }
        }
        Some(alpha)
    }

    /// Adds a row if it is independent of the current basis; returns whether it was added.
    /// Coefficients are not tracked for incrementally added rows.
    pub fn try_insert(&mut self, x: &[Rational]) -> bool {
        assert_eq!(x.len(), self.cols);
        let mut res = self.residual(x);
        let Some(p) = res.iter().position(|v| !v.is_zero()) else {
            return false;
        };
        let inv = res[p].recip();
        for v in res.iter_mut() {
            *v *= &inv;
        }
        let sparse = nonzeros(&res);
        for row in self.basis.iter_mut() {
            if !row[p].is_zero() {
                let f = row[p].clone();
                axpy(row, &f, &sparse);
            }
        }
        let at = self.pivot_cols.partition_point(|&c| c < p);
        self.pivot_cols.insert(at, p);
        self.basis.insert(at, res);
        self.coeffs.clear();
        self.n_source_rows = 0;
        true
    }
}

/// Some `α` with `αᵀS = x` exactly, or `None`.
pub fn row_space_membership(s: &RationalMatrix, x: &[Rational]) -> Option<Vec<Rational>> {
    RowSpace::new(s).coefficients(x)
}

/// Columns of `b` span the null space of `S`: `S b = 0`.
#[derive(Clone, Debug)]
pub struct NullBasis {
    pub b: RationalMatrix,
}

impl NullBasis {
    pub fn dim(&self) -> usize {
        self.b.cols()
    }

    /// Rows of `B` that are entirely zero; for `S` these are the source atoms
    /// whose mapping is pinned down by the data.
    pub fn zero_rows(&self) -> Vec<usize> {
        (0..self.b.rows()).filter(|&i| self.b.row(i).iter().all(Zero::is_zero)).collect()
    }
}

pub fn null_space_basis(s: &RationalMatrix) -> NullBasis {
    let res = rref(s);
    let n = s.cols();
    let free: Vec<usize> = (0..n).filter(|c| !res.pivot_cols.contains(c)).collect();
    let mut b = RationalMatrix::zeros(n, free.len());
    for (k, &f) in free.iter().enumerate() {
        b.set(f, k, Rational::one());
        for (r, &p) in res.pivot_cols.iter().enumerate() {
            let v = res.rref.get(r, f);
            if !v.is_zero() {
                b.set(p, k, -v);
            }
        }
    }
    NullBasis { b }
}

/// Minimum-norm least-squares mapping `S⁺T`.
///
/// The solution lies in the row space of `S`, so with `R` an exact basis of
/// that row space and `W = S Rᵀ` (full column rank) we solve the normal
/// equations `WᵀW Z = WᵀT` and return `M = Rᵀ Z`.
pub fn least_squares(d: &Dataset) -> Mapping<f64> {
    let (ns, nt, n) = (d.n_source(), d.n_target(), d.n_examples());
    if n == 0 || ns == 0 {
        return Mapping::zeros(ns, nt);
    }
    let space = RowSpace::new(&RationalMatrix::from_u64_rows(d.s(), ns));
    let r = space.rank();
    if r == 0 {
        return Mapping::zeros(ns, nt);
    }
    let basis = DMatrix::from_fn(r, ns, |i, j| rat_to_f64(&space.basis()[i][j]));
    let s = DMatrix::from_fn(n, ns, |i, j| d.s()[i][j] as f64);
    let t = DMatrix::from_fn(n, nt, |i, j| d.t()[i][j] as f64);
    let w = &s * basis.transpose();
    let gram = w.transpose() * &w;
    let rhs = w.transpose() * &t;
    let z = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram.lu().solve(&rhs).expect("row-space Gram matrix is nonsingular"),
    };
    let m = basis.transpose() * z;
    let entries = (0..ns).flat_map(|i| (0..nt).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect();
    Mapping::from_entries(ns, nt, entries).expect("shape")
}

/// `‖S M − T‖₂` for a real mapping.
pub fn residual_norm(d: &Dataset, m: &Mapping<f64>) -> f64 {
    let mut acc = 0.0;
    for (x, y) in d.s().iter().zip(d.t()) {
        let xf: Vec<f64> = x.iter().map(|&c| c as f64).collect();
        let pred = DVector::from_vec(m.apply(&xf));
        let gold = DVector::from_iterator(y.len(), y.iter().map(|&c| c as f64));
        acc += (pred - gold).norm_squared();
    }
    acc.sqrt()
}

/// Fits a real-valued mapping minimizing `‖S M − T‖₁` and reports each row's
/// L1 residual. Columns of `M` are independent, so one LP is solved per target atom:
/// `min Σ(e⁺ + e⁻)` s.t. `S m_t − e⁺ + e⁻ = T_t`, `m_t` free, `e ≥ 0`.
pub fn l1_residual_fit(d: &Dataset) -> Result<(Mapping<f64>, Vec<f64>)> {
    let (ns, nt, n) = (d.n_source(), d.n_target(), d.n_examples());
    let mut m = Mapping::zeros(ns, nt);
    let mut residuals = vec![0.0; n];
    if n == 0 {
        return Ok((m, residuals));
    }
    for t in 0..nt {
        // Columns with a zero target column are fit exactly by m_t = 0.
        if d.t().iter().all(|row| row[t] == 0) {
            continue;
        }
        let nv = ns + 2 * n;
        let mut lp = LpProblem::new(nv);
        for j in 0..ns {
            lp.set_bound(j, VarBound::Free);
        }
        let mut obj = vec![0.0; nv];
        obj[ns..].iter_mut().for_each(|c| *c = -1.0);
        lp.set_objective(obj);
        for i in 0..n {
            let mut row = vec![0.0; nv];
            for j in 0..ns {
                row[j] = d.s()[i][j] as f64;
            }
            row[ns + i] = -1.0;
            row[ns + n + i] = 1.0;
            lp.add_constraint(row, Relation::Eq, d.t()[i][t] as f64);
        }
        match solve_lp(&lp)? {
            LpOutcome::Optimal { point, .. } => {
                for j in 0..ns {
                    m.set(j, t, point[j]);
                }
            }
            // e⁺ = T, m = 0 is always feasible and the objective is bounded by 0.
            LpOutcome::Infeasible | LpOutcome::Unbounded => unreachable!("L1 fit LP is always solvable"),
        }
    }
    for (i, (x, y)) in d.s().iter().zip(d.t()).enumerate() {
        let xf: Vec<f64> = x.iter().map(|&c| c as f64).collect();
        residuals[i] = m.apply(&xf).iter().zip(y).map(|(p, &q)| (p - q as f64).abs()).sum();
    }
    Ok((m, residuals))
}

/// Checks `S M = T` solvable over the reals (ranks of `S` and `[S|T]` agree).
pub fn is_consistent_ls(d: &Dataset) -> bool {
    let (ns, nt) = (d.n_source(), d.n_target());
    let rows: Vec<Vec<Rational>> = d
        .s()
        .iter()
        .zip(d.t())
        .map(|(x, y)| x.iter().chain(y.iter()).map(|&v| rat_u64(v)).collect())
        .collect();
    let (reduced, pivots, _) = eliminate(rows, ns + nt, ns, false);
    reduced.iter().skip(pivots.len()).all(|row| row.iter().all(Zero::is_zero))
}

/// Reduced form of `[S | T]` with pivots restricted to the `S` block. Each pivot
/// row `k` reads `e_{p_k} + (free part) ↦ out_k`, which gives `αᵀT` for any `x`
/// in the row space without materializing `α`.
#[derive(Clone, Debug)]
pub struct RowSpaceMap {
    space: RowSpace,
    outputs: Vec<Vec<Rational>>,
    n_target: usize,
}

impl RowSpaceMap {
    /// Fails with `None` when `S M = T` has no real solution.
    pub fn new(d: &Dataset) -> Option<Self> {
        let (ns, nt) = (d.n_source(), d.n_target());
        let rows: Vec<Vec<Rational>> = d
            .s()
            .iter()
            .zip(d.t())
            .map(|(x, y)| x.iter().chain(y.iter()).map(|&v| rat_u64(v)).collect())
            .collect();
        let (mut reduced, pivots, _) = eliminate(rows, ns + nt, ns, false);
        if reduced.iter().skip(pivots.len()).any(|row| row.iter().any(|v| !v.is_zero())) {
            return None;
        }
        reduced.truncate(pivots.len());
        let mut basis = Vec::with_capacity(pivots.len());
        let mut outputs = Vec::with_capacity(pivots.len());
        for mut row in reduced {
            outputs.push(row.split_off(ns));
            basis.push(row);
        }
        let space = RowSpace { cols: ns, n_source_rows: 0, basis, pivot_cols: pivots, coeffs: Vec::new() };
        Some(RowSpaceMap { space, outputs, n_target: nt })
    }

    pub fn rank(&self) -> usize {
        self.space.rank()
    }

    pub fn space(&self) -> &RowSpace {
        &self.space
    }

    /// The unique output `xM` shared by every solution of `S M = T`, if `x` is in the row space.
    pub fn output(&self, x: &[Rational]) -> Option<Vec<Rational>> {
        if !self.space.contains(x) {
            return None;
        }
        let mut y = vec![Rational::zero(); self.n_target];
        for (k, &p) in self.space.pivot_cols.iter().enumerate() {
            if x[p].is_zero() {
                continue;
            }
            for (o, v) in y.iter_mut().zip(&self.outputs[k]) {
                if !v.is_zero() {
                    *o += &x[p] * v;
                }
            }
        }
        Some(y)
    }

    pub fn n_target(&self) -> usize {
        self.n_target
    }
}

/// Converts a rational vector to non-negative integers if every entry is one.
pub fn to_nonneg_integers(v: &[Rational]) -> Option<Vec<u64>> {
    v.iter()
        .map(|r| if r.is_integer() && !r.is_negative() { r.to_integer().to_u64() } else { None })
        .collect()
}
