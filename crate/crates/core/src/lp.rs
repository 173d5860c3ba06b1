//! Dense two-phase simplex, the consistency polytope, and the relative-interior
//! construction behind the two-mapping test.
//!
//! The consistency polytope `{vec(M) : M ≥ 0, S M = T}` is written in the single
//! form `A p ≤ b`, with each equality split into two opposite inequalities. A
//! point in its relative interior comes from the slack-maximizing LP
//!
//! ```text
//! max 1ᵀξ  s.t.  A p + ξ ≤ α b,  0 ≤ ξ ≤ 1,  α ≥ 1
//! ```
//!
//! Rows with `ξ* = 0` are active everywhere on the polytope; all other rows can
//! be made strictly slack, and `p* / α*` is slack on all of them at once. A ball
//! of radius `R = (α* max‖a_j‖)⁻¹` inside the affine hull then stays inside the
//! polytope.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::bag::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{null_space_basis, rat_from_f64, rat_to_f64, RationalMatrix};

/// Feasibility tolerance of the simplex.
pub const FEAS_TOL: f64 = 1e-9;
/// Slack values within this distance of 0 or 1 are classified; anything else is ambiguous.
pub const CLASS_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// Bounds of a single variable; `None` means infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarBound {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl VarBound {
    #[allow(non_upper_case_globals)]
    pub const NonNeg: VarBound = VarBound { lower: Some(0.0), upper: None };
    #[allow(non_upper_case_globals)]
    pub const Free: VarBound = VarBound { lower: None, upper: None };

    pub fn range(lower: f64, upper: f64) -> Self {
        VarBound { lower: Some(lower), upper: Some(upper) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `max cᵀp` subject to linear constraints and per-variable bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct LpProblem {
    n_vars: usize,
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
    bounds: Vec<VarBound>,
}

impl LpProblem {
    /// All variables start non-negative with a zero objective.
    pub fn new(n_vars: usize) -> Self {
        LpProblem {
            n_vars,
            objective: vec![0.0; n_vars],
            constraints: Vec::new(),
            bounds: vec![VarBound::NonNeg; n_vars],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn bounds(&self) -> &[VarBound] {
        &self.bounds
    }

    pub fn set_objective(&mut self, c: Vec<f64>) {
        assert_eq!(c.len(), self.n_vars);
        self.objective = c;
    }

    pub fn set_bound(&mut self, var: usize, bound: VarBound) {
        self.bounds[var] = bound;
    }

    pub fn bound(&self, var: usize) -> VarBound {
        self.bounds[var]
    }

    /// Adds a constraint from a dense coefficient row.
    pub fn add_constraint(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        assert_eq!(coeffs.len(), self.n_vars);
        let sparse = coeffs.into_iter().enumerate().filter(|(_, v)| *v != 0.0).collect();
        self.constraints.push(Constraint { coeffs: sparse, relation, rhs });
    }

    pub fn add_sparse_constraint(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        debug_assert!(coeffs.iter().all(|(j, _)| *j < self.n_vars));
        self.constraints.push(Constraint { coeffs, relation, rhs });
    }

    /// Largest violation of any constraint or bound at `p`.
    pub fn max_violation(&self, p: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().map(|(j, v)| v * p[*j]).sum();
            let viol = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        for (x, b) in p.iter().zip(&self.bounds) {
            if let Some(l) = b.lower {
                worst = worst.max(l - x);
            }
            if let Some(u) = b.upper {
                worst = worst.max(x - u);
            }
        }
        worst
    }

    pub fn value(&self, p: &[f64]) -> f64 {
        self.objective.iter().zip(p).map(|(c, x)| c * x).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { point: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

/// How an original variable is expressed through non-negative tableau columns.
#[derive(Clone, Copy, Debug)]
enum VarMap {
    /// x = offset + col
    Shifted { col: usize, offset: f64 },
    /// x = offset - col
    Flipped { col: usize, offset: f64 },
    /// x = pos - neg
    Split { pos: usize, neg: usize },
}

struct Tableau {
    /// `rows x (cols + 1)`; last entry of each row is the right-hand side.
    a: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

enum Phase {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize, obj: &mut [f64]) {
        let inv = 1.0 / self.a[r][c];
        for v in self.a[r].iter_mut() {
            *v *= inv;
        }
        self.a[r][c] = 1.0;
        let (before, rest) = self.a.split_at_mut(r);
        let (pivot_row, after) = rest.split_first_mut().expect("pivot row");
        let nz: Vec<usize> = (0..=self.cols).filter(|&j| pivot_row[j] != 0.0).collect();
        for row in before.iter_mut().chain(after.iter_mut()) {
            let f = row[c];
            if f != 0.0 {
                for &j in &nz {
                    row[j] -= f * pivot_row[j];
                }
                row[c] = 0.0;
            }
        }
        let f = obj[c];
        if f != 0.0 {
            for &j in &nz {
                obj[j] -= f * pivot_row[j];
            }
            obj[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Maximizes with reduced costs held in `obj` (`obj[j]` = reduced cost of
    /// column j; last entry = minus the current objective value). Bland's rule
    /// for both entering and leaving choices.
    fn run(&mut self, obj: &mut [f64], allowed: &[bool], max_iter: usize) -> Result<Phase> {
        for _ in 0..max_iter {
            let Some(enter) = (0..self.cols).find(|&j| allowed[j] && obj[j] > FEAS_TOL) else {
                return Ok(Phase::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.a.iter().enumerate() {
                let coef = row[enter];
                if coef > FEAS_TOL {
                    let ratio = row[self.cols].max(0.0) / coef;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-12
                                || (ratio <= br + 1e-12 && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return Ok(Phase::Unbounded),
                Some((r, _)) => self.pivot(r, enter, obj),
            }
        }
        Err(Error::CycleDetected)
    }
}

/// Solves an LP with a dense two-phase simplex under Bland's rule.
pub fn solve_lp(problem: &LpProblem) -> Result<LpOutcome> {
    // Map variables onto non-negative columns.
    let mut maps = Vec::with_capacity(problem.n_vars);
    let mut ncols = 0;
    let mut extra_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for b in &problem.bounds {
        let m = match (b.lower, b.upper) {
            (Some(l), u) => {
                let col = ncols;
                ncols += 1;
                if let Some(u) = u {
                    if u < l - FEAS_TOL {
                        return Ok(LpOutcome::Infeasible);
                    }
                    extra_rows.push((vec![(col, 1.0)], u - l));
                }
                VarMap::Shifted { col, offset: l }
            }
            (None, Some(u)) => {
                let col = ncols;
                ncols += 1;
                VarMap::Flipped { col, offset: u }
            }
            (None, None) => {
                let (pos, neg) = (ncols, ncols + 1);
                ncols += 2;
                VarMap::Split { pos, neg }
            }
        };
        maps.push(m);
    }
    let n_struct = ncols;

    // Rows over structural columns, as (coeffs, relation, rhs).
    let mut rows: Vec<(Vec<(usize, f64)>, Relation, f64)> = Vec::new();
    for c in &problem.constraints {
        let mut coeffs: Vec<(usize, f64)> = Vec::with_capacity(c.coeffs.len() + 1);
        let mut rhs = c.rhs;
        for &(j, v) in &c.coeffs {
            match maps[j] {
                VarMap::Shifted { col, offset } => {
                    coeffs.push((col, v));
                    rhs -= v * offset;
                }
                VarMap::Flipped { col, offset } => {
                    coeffs.push((col, -v));
                    rhs -= v * offset;
                }
                VarMap::Split { pos, neg } => {
                    coeffs.push((pos, v));
                    coeffs.push((neg, -v));
                }
            }
        }
        rows.push((coeffs, c.relation, rhs));
    }
    for (coeffs, rhs) in extra_rows {
        rows.push((coeffs, Relation::Le, rhs));
    }

    // Normalize to non-negative right-hand sides.
    for (coeffs, rel, rhs) in rows.iter_mut() {
        if *rhs < 0.0 {
            *rhs = -*rhs;
            coeffs.iter_mut().for_each(|(_, v)| *v = -*v);
            *rel = match rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let cols = n_struct + n_slack + n_art;
    let mut tab = Tableau { a: vec![vec![0.0; cols + 1]; m], basis: vec![0; m], cols };
    let mut is_art = vec![false; cols];
    let (mut next_slack, mut next_art) = (n_struct, n_struct + n_slack);
    for (i, (coeffs, rel, rhs)) in rows.iter().enumerate() {
        let row = &mut tab.a[i];
        for &(j, v) in coeffs {
            row[j] += v;
        }
        row[cols] = *rhs;
        match rel {
            Relation::Le => {
                row[next_slack] = 1.0;
                tab.basis[i] = next_slack;
                next_slack += 1;
            }
            Relation::Ge => {
                row[next_slack] = -1.0;
                next_slack += 1;
                row[next_art] = 1.0;
                is_art[next_art] = true;
                tab.basis[i] = next_art;
                next_art += 1;
            }
            Relation::Eq => {
                row[next_art] = 1.0;
                is_art[next_art] = true;
                tab.basis[i] = next_art;
                next_art += 1;
            }
        }
    }
    let max_iter = 50_000 + 50 * (m + cols);
    let rhs_scale = 1.0 + rows.iter().map(|r| r.2.abs()).fold(0.0, f64::max);

    // Phase 1: maximize -Σ artificials.
    if n_art > 0 {
        let mut obj = vec![0.0; cols + 1];
        for (i, row) in tab.a.iter().enumerate() {
            if is_art[tab.basis[i]] {
                for (o, v) in obj.iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        for j in 0..cols {
            if is_art[j] {
                obj[j] = 0.0;
            }
        }
        let allowed = vec![true; cols];
        tab.run(&mut obj, &allowed, max_iter)?;
        let infeas: f64 = tab
            .a
            .iter()
            .zip(&tab.basis)
            .filter(|(_, &b)| is_art[b])
            .map(|(row, _)| row[cols])
            .sum();
        if infeas > FEAS_TOL * rhs_scale * (m as f64).max(1.0) {
            return Ok(LpOutcome::Infeasible);
        }
        // Drive zero-level artificials out of the basis where possible.
        for i in 0..m {
            if is_art[tab.basis[i]] {
                if let Some(j) = (0..cols).find(|&j| !is_art[j] && tab.a[i][j].abs() > 1e-7) {
                    tab.pivot(i, j, &mut obj);
                }
            }
        }
    }

    // Phase 2.
    let mut cost = vec![0.0; cols];
    for (j, &c) in problem.objective.iter().enumerate() {
        match maps[j] {
            VarMap::Shifted { col, .. } => cost[col] += c,
            VarMap::Flipped { col, .. } => cost[col] -= c,
            VarMap::Split { pos, neg } => {
                cost[pos] += c;
                cost[neg] -= c;
            }
        }
    }
    let mut obj = vec![0.0; cols + 1];
    obj[..cols].copy_from_slice(&cost);
    for (i, row) in tab.a.iter().enumerate() {
        let cb = cost[tab.basis[i]];
        if cb != 0.0 {
            for (o, v) in obj.iter_mut().zip(row) {
                *o -= cb * v;
            }
        }
    }
    let allowed: Vec<bool> = is_art.iter().map(|a| !a).collect();
    if let Phase::Unbounded = tab.run(&mut obj, &allowed, max_iter)? {
        return Ok(LpOutcome::Unbounded);
    }

    let mut colval = vec![0.0; cols];
    for (i, &b) in tab.basis.iter().enumerate() {
        colval[b] = tab.a[i][cols].max(0.0);
    }
    let point: Vec<f64> = maps
        .iter()
        .map(|m| match *m {
            VarMap::Shifted { col, offset } => offset + colval[col],
            VarMap::Flipped { col, offset } => offset - colval[col],
            VarMap::Split { pos, neg } => colval[pos] - colval[neg],
        })
        .collect();
    let value = problem.value(&point);
    Ok(LpOutcome::Optimal { point, value })
}

/// Sparse row `aⱼ` of a polytope.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyRow {
    pub coeffs: Vec<(usize, f64)>,
}

impl PolyRow {
    pub fn dot(&self, p: &[f64]) -> f64 {
        self.coeffs.iter().map(|(j, v)| v * p[*j]).sum()
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }
}

/// `{p : A p ≤ b}` with rows that came from equalities flagged.
#[derive(Clone, Debug, PartialEq)]
pub struct Polytope {
    pub dim: usize,
    pub rows: Vec<PolyRow>,
    pub b: Vec<f64>,
    pub equality_derived: Vec<bool>,
}

impl Polytope {
    pub fn new(dim: usize) -> Self {
        Polytope { dim, rows: Vec::new(), b: Vec::new(), equality_derived: Vec::new() }
    }

    pub fn push(&mut self, coeffs: Vec<(usize, f64)>, b: f64, equality_derived: bool) {
        let coeffs = coeffs.into_iter().filter(|(_, v)| *v != 0.0).collect();
        self.rows.push(PolyRow { coeffs });
        self.b.push(b);
        self.equality_derived.push(equality_derived);
    }

    /// Adds `a·p = b` as the pair `a·p ≤ b`, `-a·p ≤ -b`.
    pub fn push_equality(&mut self, coeffs: Vec<(usize, f64)>, b: f64) {
        let neg = coeffs.iter().map(|&(j, v)| (j, -v)).collect();
        self.push(coeffs, b, true);
        self.push(neg, -b, true);
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn max_violation(&self, p: &[f64]) -> f64 {
        self.rows.iter().zip(&self.b).map(|(r, b)| r.dot(p) - b).fold(0.0, f64::max)
    }

    /// Feasibility as an LP (zero objective, free variables).
    pub fn is_feasible(&self) -> Result<bool> {
        let mut lp = LpProblem::new(self.dim);
        for j in 0..self.dim {
            lp.set_bound(j, VarBound::Free);
        }
        for (r, &b) in self.rows.iter().zip(&self.b) {
            lp.add_sparse_constraint(r.coeffs.clone(), Relation::Le, b);
        }
        Ok(matches!(solve_lp(&lp)?, LpOutcome::Optimal { .. }))
    }
}

/// `{vec(M) : M ≥ 0, S M = T}` with `vec(M)[s * n_t + t] = M[s][t]`.
///
/// For each example and target atom the equality `Σ_s S_is M_st = T_it`
/// contributes two rows; then one row `-M_st ≤ 0` per entry.
pub fn build_consistency_polytope(d: &Dataset) -> Polytope {
    let (ns, nt) = (d.n_source(), d.n_target());
    let mut poly = Polytope::new(ns * nt);
    for (x, y) in d.s().iter().zip(d.t()) {
        for (t, &yt) in y.iter().enumerate() {
            let coeffs: Vec<(usize, f64)> =
                x.iter().enumerate().filter(|(_, &c)| c > 0).map(|(s, &c)| (s * nt + t, c as f64)).collect();
            poly.push_equality(coeffs, yt as f64);
        }
    }
    for k in 0..ns * nt {
        poly.push(vec![(k, -1.0)], 0.0, false);
    }
    poly
}

/// A relative-interior point `p1` with everything needed to sample a second
/// point from a ball inside the polytope's affine hull.
#[derive(Clone, Debug, PartialEq)]
pub struct InteriorPoint {
    pub p1: Vec<f64>,
    /// Effective scale: `R = (alpha_star · max_{slack rows} ‖aⱼ‖)⁻¹`.
    pub alpha_star: f64,
    pub xi_star: Vec<f64>,
    pub always_active: Vec<usize>,
    pub radius: f64,
    /// `dim x d`, orthonormal columns spanning the null space of the always-active rows.
    pub null_basis: Vec<Vec<f64>>,
}

impl InteriorPoint {
    pub fn dim(&self) -> usize {
        self.null_basis.first().map_or(0, Vec::len)
    }
}

/// Groups variables that share a row; rows and variables in different groups
/// never interact, so each group's slack LP can be solved on its own.
fn components(poly: &Polytope) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut parent: Vec<usize> = (0..poly.dim).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for row in &poly.rows {
        if let Some(&(first, _)) = row.coeffs.first() {
            let a = find(&mut parent, first);
            for &(j, _) in &row.coeffs[1..] {
                let b = find(&mut parent, j);
                if a != b {
                    parent[b] = a;
                }
            }
        }
    }
    let mut id = vec![usize::MAX; poly.dim];
    let mut comps: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for v in 0..poly.dim {
        let r = find(&mut parent, v);
        if id[r] == usize::MAX {
            id[r] = comps.len();
            comps.push((Vec::new(), Vec::new()));
        }
        comps[id[r]].0.push(v);
    }
    for (j, row) in poly.rows.iter().enumerate() {
        if let Some(&(first, _)) = row.coeffs.first() {
            let r = find(&mut parent, first);
            comps[id[r]].1.push(j);
        }
    }
    comps
}

/// Gram-Schmidt (two passes) on the columns; drops numerically dependent ones.
fn orthonormalize(cols: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    for mut v in cols {
        for _ in 0..2 {
            for q in &out {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-12 {
            v.iter_mut().for_each(|a| *a /= n);
            out.push(v);
        }
    }
    out
}

/// Solves the slack LP for one group of variables/rows.
/// Returns (p*, ξ*, α*) restricted to the group.
fn slack_lp(poly: &Polytope, vars: &[usize], rows: &[usize]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let nv = vars.len();
    let nr = rows.len();
    let local: std::collections::HashMap<usize, usize> = vars.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    // Layout: p (free), ξ in [0,1], α ≥ 1.
    let alpha = nv + nr;
    let mut lp = LpProblem::new(nv + nr + 1);
    for i in 0..nv {
        lp.set_bound(i, VarBound::Free);
    }
    for k in 0..nr {
        lp.set_bound(nv + k, VarBound::range(0.0, 1.0));
    }
    lp.set_bound(alpha, VarBound { lower: Some(1.0), upper: None });
    let mut obj = vec![0.0; nv + nr + 1];
    obj[nv..nv + nr].iter_mut().for_each(|c| *c = 1.0);
    lp.set_objective(obj);
    for (k, &j) in rows.iter().enumerate() {
        let mut coeffs: Vec<(usize, f64)> = poly.rows[j].coeffs.iter().map(|&(v, a)| (local[&v], a)).collect();
        coeffs.push((nv + k, 1.0));
        if poly.b[j] != 0.0 {
            coeffs.push((alpha, -poly.b[j]));
        }
        lp.add_sparse_constraint(coeffs, Relation::Le, 0.0);
    }
    match solve_lp(&lp)? {
        LpOutcome::Optimal { point, .. } => {
            let p = point[..nv].to_vec();
            let xi = point[nv..nv + nr].to_vec();
            Ok((p, xi, point[alpha]))
        }
        LpOutcome::Infeasible => Err(Error::InfeasiblePolytope),
        LpOutcome::Unbounded => unreachable!("slack LP objective is bounded by the row count"),
    }
}

/// Finds a relative-interior point, the always-active rows, a safe radius and
/// an orthonormal basis of the polytope's affine directions.
pub fn relative_interior(poly: &Polytope) -> Result<InteriorPoint> {
    let m = poly.n_rows();
    let mut p1 = vec![0.0; poly.dim];
    let mut xi = vec![0.0; m];
    let mut radius = f64::INFINITY;
    let mut max_norm: f64 = 0.0;
    let mut null_cols: Vec<Vec<f64>> = Vec::new();

    // Rows with no variables: 0 ≤ b.
    for (j, row) in poly.rows.iter().enumerate() {
        if row.coeffs.is_empty() {
            if poly.b[j] < -FEAS_TOL {
                return Err(Error::InfeasiblePolytope);
            }
            xi[j] = if poly.b[j] > FEAS_TOL { 1.0 } else { 0.0 };
        }
    }

    for (vars, rows) in components(poly) {
        if rows.is_empty() {
            // Unconstrained coordinates: every direction is free.
            for &v in &vars {
                let mut e = vec![0.0; poly.dim];
                e[v] = 1.0;
                null_cols.push(e);
            }
            continue;
        }
        let (p, x, alpha) = slack_lp(poly, &vars, &rows)?;
        let mut active = Vec::new();
        let mut comp_norm: f64 = 0.0;
        for (k, &j) in rows.iter().enumerate() {
            let v = x[k];
            if v <= CLASS_TOL {
                xi[j] = 0.0;
                active.push(j);
            } else if v >= 1.0 - CLASS_TOL {
                xi[j] = 1.0;
                comp_norm = comp_norm.max(poly.rows[j].norm());
            } else {
                return Err(Error::NumericalAmbiguity { row: j, value: v });
            }
        }
        for (i, &v) in vars.iter().enumerate() {
            p1[v] = p[i] / alpha;
        }
        if comp_norm > 0.0 {
            radius = radius.min(1.0 / (alpha * comp_norm));
            max_norm = max_norm.max(comp_norm);
        }
        // Exact null space of the always-active rows on this group.
        let local: std::collections::HashMap<usize, usize> =
            vars.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut a0 = RationalMatrix::zeros(active.len(), vars.len());
        for (r, &j) in active.iter().enumerate() {
            for &(v, a) in &poly.rows[j].coeffs {
                a0.set(r, local[&v], rat_from_f64(a));
            }
        }
        let nb = null_space_basis(&a0);
        let cols: Vec<Vec<f64>> = (0..nb.dim())
            .map(|k| (0..vars.len()).map(|i| rat_to_f64(nb.b.get(i, k))).collect())
            .collect();
        for q in orthonormalize(cols) {
            let mut e = vec![0.0; poly.dim];
            for (i, &v) in vars.iter().enumerate() {
                e[v] = q[i];
            }
            null_cols.push(e);
        }
    }

    if !radius.is_finite() {
        // No row can be slack: the polytope is its own affine hull.
        radius = 1.0;
    }
    let alpha_star = if max_norm > 0.0 { 1.0 / (radius * max_norm) } else { 1.0 };
    let always_active = (0..m).filter(|&j| xi[j] == 0.0).collect();
    // Store N as dim rows x d columns.
    let d = null_cols.len();
    let null_basis = (0..poly.dim).map(|i| (0..d).map(|k| null_cols[k][i]).collect()).collect();
    Ok(InteriorPoint { p1, alpha_star, xi_star: xi, always_active, radius, null_basis })
}

/// Uniform draw from the unit ball in `d` dimensions.
pub fn sample_unit_ball<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    if d == 0 {
        return Vec::new();
    }
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-300 {
            let u: f64 = rng.random::<f64>();
            let r = u.powf(1.0 / d as f64);
            return g.into_iter().map(|x| x * r / n).collect();
        }
    }
}

/// `p2 = p1 + R N v` with `v` uniform in the unit ball.
pub fn sample_second_point<R: Rng + ?Sized>(ip: &InteriorPoint, rng: &mut R) -> Vec<f64> {
    let d = ip.dim();
    let v = sample_unit_ball(d, rng);
    ip.p1
        .iter()
        .zip(&ip.null_basis)
        .map(|(p, nrow)| p + ip.radius * nrow.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pentagon() -> Polytope {
        // Variables (x, y, z).
        let mut p = Polytope::new(3);
        p.push(vec![(2, 1.0)], 0.0, false);
        p.push(vec![(2, -1.0)], 0.0, false);
        p.push(vec![(0, -1.0)], 0.0, false);
        p.push(vec![(1, -1.0)], 0.0, false);
        p.push(vec![(0, 1.0), (1, 1.0)], 6.0, false);
        p
    }

    #[test]
    fn box_lp() {
        let mut lp = LpProblem::new(2);
        lp.set_objective(vec![1.0, 1.0]);
        lp.add_constraint(vec![1.0, 0.0], Relation::Le, 1.0);
        lp.add_constraint(vec![0.0, 1.0], Relation::Le, 1.0);
        match solve_lp(&lp).unwrap() {
            LpOutcome::Optimal { point, value } => {
                assert!((value - 2.0).abs() < 1e-9);
                assert!((point[0] - 1.0).abs() < 1e-9 && (point[1] - 1.0).abs() < 1e-9);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LpProblem::new(1);
        lp.set_objective(vec![1.0]);
        lp.add_constraint(vec![1.0], Relation::Ge, 1.0);
        lp.add_constraint(vec![1.0], Relation::Le, 0.0);
        assert_eq!(solve_lp(&lp).unwrap(), LpOutcome::Infeasible);
        let mut lp = LpProblem::new(1);
        lp.set_objective(vec![1.0]);
        assert_eq!(solve_lp(&lp).unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn free_and_bounded_variables() {
        // min x (i.e. max -x) with x free and x >= -3 via a constraint
        let mut lp = LpProblem::new(2);
        lp.set_bound(0, VarBound::Free);
        lp.set_bound(1, VarBound { lower: None, upper: Some(4.0) });
        lp.set_objective(vec![-1.0, 1.0]);
        lp.add_constraint(vec![1.0, 0.0], Relation::Ge, -3.0);
        match solve_lp(&lp).unwrap() {
            LpOutcome::Optimal { point, value } => {
                assert!((point[0] + 3.0).abs() < 1e-9);
                assert!((point[1] - 4.0).abs() < 1e-9);
                assert!((value - 7.0).abs() < 1e-9);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn degenerate_equalities() {
        // Redundant equality rows leave artificials at zero level.
        let mut lp = LpProblem::new(2);
        lp.set_objective(vec![1.0, 2.0]);
        lp.add_constraint(vec![1.0, 1.0], Relation::Eq, 1.0);
        lp.add_constraint(vec![2.0, 2.0], Relation::Eq, 2.0);
        lp.add_constraint(vec![1.0, 1.0], Relation::Le, 1.0);
        match solve_lp(&lp).unwrap() {
            LpOutcome::Optimal { point, value } => {
                assert!((value - 2.0).abs() < 1e-9, "{point:?}");
                assert!(lp.max_violation(&point) < 1e-9);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn pentagon_slack_lp() {
        let poly = pentagon();
        let comps = components(&poly);
        assert_eq!(comps.len(), 2);
        let mut total = 0.0;
        for (vars, rows) in comps {
            let (p, xi, alpha) = slack_lp(&poly, &vars, &rows).unwrap();
            total += xi.iter().sum::<f64>();
            if vars == vec![0, 1] {
                assert!((alpha - 1.0).abs() < 1e-9);
                assert!((p[0] - 1.0).abs() < 1e-9 && (p[1] - 1.0).abs() < 1e-9);
            }
        }
        assert!((total - 3.0).abs() < 1e-9);
    }

    #[test]
    fn pentagon_relative_interior() {
        let ip = relative_interior(&pentagon()).unwrap();
        for (a, b) in ip.p1.iter().zip([1.0, 1.0, 0.0]) {
            assert!((a - b).abs() < 1e-6, "{:?}", ip.p1);
        }
        assert!((ip.radius - 1.0 / 2f64.sqrt()).abs() < 1e-6);
        assert_eq!(ip.always_active, vec![0, 1]);
        assert_eq!(ip.xi_star, vec![0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(ip.dim(), 2);
        assert!((ip.alpha_star - 1.0).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p2 = sample_second_point(&ip, &mut rng);
            assert!(p2[2].abs() < 1e-12);
            assert!(pentagon().max_violation(&p2) <= 1e-9);
        }
    }

    #[test]
    fn single_point_polytope() {
        let mut p = Polytope::new(2);
        p.push_equality(vec![(0, 1.0)], 2.0);
        p.push_equality(vec![(1, 1.0)], 3.0);
        let ip = relative_interior(&p).unwrap();
        assert_eq!(ip.dim(), 0);
        assert!((ip.p1[0] - 2.0).abs() < 1e-9 && (ip.p1[1] - 3.0).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_second_point(&ip, &mut rng), ip.p1);
    }

    #[test]
    fn empty_polytope_is_reported() {
        let mut p = Polytope::new(1);
        p.push(vec![(0, -1.0)], -1.0, false);
        p.push(vec![(0, 1.0)], 0.0, false);
        assert_eq!(relative_interior(&p), Err(Error::InfeasiblePolytope));
    }

    #[test]
    fn ball_samples_are_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = 3;
        let mut mean = vec![0.0; d];
        let n = 10_000;
        for _ in 0..n {
            let v = sample_unit_ball(d, &mut rng);
            assert!(v.iter().map(|x| x * x).sum::<f64>() <= 1.0 + 1e-12);
            mean.iter_mut().zip(&v).for_each(|(m, x)| *m += x / n as f64);
        }
        assert!(mean.iter().all(|m| m.abs() < 0.05), "{mean:?}");
    }

    #[test]
    fn always_active_rows_cannot_be_slackened() {
        let poly = pentagon();
        let ip = relative_interior(&poly).unwrap();
        for j in 0..poly.n_rows() {
            // max slack of row j alone: max s s.t. a_j p + s <= b_j, A p <= b, 0 <= s <= 1
            let mut lp = LpProblem::new(poly.dim + 1);
            for v in 0..poly.dim {
                lp.set_bound(v, VarBound::Free);
            }
            lp.set_bound(poly.dim, VarBound::range(0.0, 1.0));
            let mut obj = vec![0.0; poly.dim + 1];
            obj[poly.dim] = 1.0;
            lp.set_objective(obj);
            for (k, (r, &b)) in poly.rows.iter().zip(&poly.b).enumerate() {
                let mut c = r.coeffs.clone();
                if k == j {
                    c.push((poly.dim, 1.0));
                }
                lp.add_sparse_constraint(c, Relation::Le, b);
            }
            let LpOutcome::Optimal { value, .. } = solve_lp(&lp).unwrap() else { panic!() };
            assert_eq!(value.abs() < 1e-9, ip.always_active.contains(&j));
        }
    }
}
