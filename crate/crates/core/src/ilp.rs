//! Branch and bound over the simplex solver, and the integer consistency sets.
//!
//! Three families of constraint sets are supported: exact consistency
//! (`S M = T`), consistency up to a total L1 budget of target-atom edits, and
//! denotation supervision where each example only names a list of candidate
//! outputs. Unanimity on an input `x` is decided from the minimum and maximum
//! of `x M v` over the set for a random direction `v`.
//!
//! Source atoms linked through shared training rows form components; the
//! exact and denotation sets factor over components (and the exact set further
//! over target atoms), so only the components touched by `x` are solved at
//! prediction time. The noise budget couples components, which is handled by
//! charging untouched components their minimal residual.

use serde::{Deserialize, Serialize};

use crate::bag::{CountVector, Dataset};
use crate::error::{Error, Result};
use crate::lp::{solve_lp, LpOutcome, LpProblem, Relation, VarBound};

/// Integrality tolerance before rounding.
pub const INT_TOL: f64 = 1e-6;
pub const DEFAULT_NODE_CAP: usize = 1_000_000;

/// An LP with integrality flags.
#[derive(Clone, Debug, PartialEq)]
pub struct IlpProblem {
    pub lp: LpProblem,
    pub integral: Vec<bool>,
}

impl IlpProblem {
    /// Every variable integral.
    pub fn all_integral(lp: LpProblem) -> Self {
        let n = lp.n_vars();
        IlpProblem { lp, integral: vec![true; n] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum IlpOutcome {
    Optimal { point: Vec<f64>, value: f64 },
    Infeasible,
}

pub fn solve_ilp(p: &IlpProblem) -> Result<IlpOutcome> {
    solve_ilp_capped(p, DEFAULT_NODE_CAP)
}

fn most_fractional(point: &[f64], integral: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, (&x, &int)) in point.iter().zip(integral).enumerate() {
        if !int {
            continue;
        }
        let frac = x - x.floor();
        let dist = frac.min(1.0 - frac);
        if dist > INT_TOL && best.is_none_or(|(_, d)| dist > d + 1e-12) {
            best = Some((j, dist));
        }
    }
    best.map(|(j, _)| j)
}

struct Node {
    bounds: Vec<VarBound>,
    point: Vec<f64>,
    value: f64,
}

fn solve_node(base: &LpProblem, bounds: &[VarBound]) -> Result<Option<(Vec<f64>, f64)>> {
    let mut lp = base.clone();
    for (j, b) in bounds.iter().enumerate() {
        lp.set_bound(j, *b);
    }
    match solve_lp(&lp)? {
        LpOutcome::Optimal { point, value } => Ok(Some((point, value))),
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => Err(Error::Unbounded),
    }
}

/// Depth-first branch and bound on the most fractional variable. Both children
/// are solved on branching and the one with the better bound is explored first.
pub fn solve_ilp_capped(p: &IlpProblem, node_cap: usize) -> Result<IlpOutcome> {
    let root_bounds = p.lp.bounds().to_vec();
    let Some((point, value)) = solve_node(&p.lp, &root_bounds)? else {
        return Ok(IlpOutcome::Infeasible);
    };
    let mut stack = vec![Node { bounds: root_bounds, point, value }];
    let mut incumbent: Option<(Vec<f64>, f64)> = None;
    let mut nodes = 1usize;
    while let Some(node) = stack.pop() {
        if let Some((_, best)) = &incumbent {
            if node.value <= best + 1e-9 * (1.0 + best.abs()) {
                continue;
            }
        }
        let Some(j) = most_fractional(&node.point, &p.integral) else {
            let mut pt = node.point;
            for (x, &int) in pt.iter_mut().zip(&p.integral) {
                if int {
                    *x = x.round();
                }
            }
            let v = p.lp.value(&pt);
            incumbent = Some((pt, v));
            continue;
        };
        let x = node.point[j];
        let mut children = Vec::with_capacity(2);
        let old = node.bounds[j];
        let mut down = node.bounds.clone();
        down[j] = VarBound { lower: old.lower, upper: Some(x.floor()) };
        let mut up = node.bounds;
        up[j] = VarBound { lower: Some(x.ceil()), upper: old.upper };
        for bounds in [down, up] {
            nodes += 1;
            if nodes > node_cap {
                return Err(Error::BudgetExceeded(node_cap));
            }
            if let Some((point, value)) = solve_node(&p.lp, &bounds)? {
                children.push(Node { bounds, point, value });
            }
        }
        // Worse bound first on the stack so the better one is popped next.
        children.sort_by(|a, b| a.value.total_cmp(&b.value));
        stack.extend(children);
    }
    Ok(match incumbent {
        Some((point, value)) => IlpOutcome::Optimal { point, value },
        None => IlpOutcome::Infeasible,
    })
}

/// An example supervised by a list of candidate outputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateExample {
    pub input: CountVector,
    pub candidates: Vec<CountVector>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConsistencyKind {
    /// `S M = T`.
    Exact,
    /// `‖S M − T‖₁ ≤ n_mistakes` through `S M − T = e⁺ − e⁻`, `Σ(e⁺ + e⁻) ≤ n_mistakes`.
    NoiseBudget { n_mistakes: u64 },
    /// `x_i M = π_i T_i`, `Σ_j π_ij = 1`, `π` binary. Holds the `k_i x n_t` candidate matrices.
    Denotation { candidates: Vec<Vec<Vec<u64>>> },
}

/// Consistent mappings for one family, ready for min/max queries.
#[derive(Clone, Debug)]
pub struct ConstraintSet {
    ns: usize,
    nt: usize,
    s: Vec<Vec<u64>>,
    t: Vec<Vec<u64>>,
    kind: ConsistencyKind,
    relaxed: bool,
    comp_of: Vec<Option<usize>>,
    comp_sources: Vec<Vec<usize>>,
    comp_rows: Vec<Vec<usize>>,
    upper: Vec<Vec<f64>>,
    min_budget: Vec<u64>,
    feasible: bool,
    node_cap: usize,
}

/// Per-entry upper bound `U_st` valid for every integral member of the set:
/// row `i` containing `s` forces `S_is M_st ≤ (largest allowed T_it)`.
fn entry_upper_bounds(s: &[Vec<u64>], ns: usize, nt: usize, row_cap: impl Fn(usize, usize) -> u64) -> Vec<Vec<f64>> {
    let mut u = vec![vec![f64::INFINITY; nt]; ns];
    for (i, row) in s.iter().enumerate() {
        for (src, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            for (t, ut) in u[src].iter_mut().enumerate() {
                let b = (row_cap(i, t) / c) as f64;
                if b < *ut {
                    *ut = b;
                }
            }
        }
    }
    u
}

impl ConstraintSet {
    fn new(ns: usize, nt: usize, s: Vec<Vec<u64>>, t: Vec<Vec<u64>>, kind: ConsistencyKind) -> Result<Self> {
        // Components of source atoms linked by shared rows.
        let mut parent: Vec<usize> = (0..ns).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut seen = vec![false; ns];
        for row in &s {
            let mut first = None;
            for (j, &c) in row.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                seen[j] = true;
                match first {
                    None => first = Some(find(&mut parent, j)),
                    Some(a) => {
                        let b = find(&mut parent, j);
                        if a != b {
                            parent[b] = a;
                        }
                    }
                }
            }
        }
        let mut comp_id = vec![usize::MAX; ns];
        let mut comp_of = vec![None; ns];
        let mut comp_sources: Vec<Vec<usize>> = Vec::new();
        for j in 0..ns {
            if !seen[j] {
                continue;
            }
            let r = find(&mut parent, j);
            if comp_id[r] == usize::MAX {
                comp_id[r] = comp_sources.len();
                comp_sources.push(Vec::new());
            }
            comp_of[j] = Some(comp_id[r]);
            comp_sources[comp_id[r]].push(j);
        }
        let mut comp_rows = vec![Vec::new(); comp_sources.len()];
        for (i, row) in s.iter().enumerate() {
            if let Some(j) = row.iter().position(|&c| c > 0) {
                comp_rows[comp_of[j].expect("seen")].push(i);
            }
        }
        let upper = match &kind {
            ConsistencyKind::Exact => entry_upper_bounds(&s, ns, nt, |i, tt| t_at(&t, i, tt)),
            ConsistencyKind::NoiseBudget { n_mistakes } => {
                entry_upper_bounds(&s, ns, nt, |i, tt| t_at(&t, i, tt) + n_mistakes)
            }
            ConsistencyKind::Denotation { candidates } => entry_upper_bounds(&s, ns, nt, |i, tt| {
                candidates[i].iter().map(|c| c[tt]).max().unwrap_or(0)
            }),
        };
        let mut cs = ConstraintSet {
            ns,
            nt,
            s,
            t,
            kind,
            relaxed: false,
            comp_of,
            comp_sources,
            comp_rows,
            upper,
            min_budget: Vec::new(),
            feasible: true,
            node_cap: DEFAULT_NODE_CAP,
        };
        cs.feasible = cs.compute_feasibility()?;
        Ok(cs)
    }

    /// Drops integrality (π ∈ [0,1], M real).
    pub fn relaxed(mut self) -> Result<Self> {
        self.relaxed = true;
        self.feasible = self.compute_feasibility()?;
        Ok(self)
    }

    pub fn with_node_cap(mut self, cap: usize) -> Self {
        self.node_cap = cap;
        self
    }

    pub fn kind(&self) -> &ConsistencyKind {
        &self.kind
    }

    pub fn is_feasible(&self) -> bool {
        self.feasible
    }

    pub fn n_source(&self) -> usize {
        self.ns
    }

    pub fn n_target(&self) -> usize {
        self.nt
    }

    /// `U_st`; infinite for source atoms that never occur in training.
    pub fn upper_bound(&self, s: usize, t: usize) -> f64 {
        self.upper[s][t]
    }

    /// Whether source atom `s` occurs in some training input.
    pub fn is_seen(&self, s: usize) -> bool {
        self.comp_of[s].is_some()
    }

    fn solve(&self, p: &IlpProblem) -> Result<IlpOutcome> {
        if self.relaxed {
            return Ok(match solve_lp(&p.lp)? {
                LpOutcome::Optimal { point, value } => IlpOutcome::Optimal { point, value },
                LpOutcome::Infeasible => IlpOutcome::Infeasible,
                LpOutcome::Unbounded => return Err(Error::Unbounded),
            });
        }
        solve_ilp_capped(p, self.node_cap)
    }

    fn m_bound(&self, s: usize, t: usize) -> VarBound {
        if self.relaxed {
            // The floored bounds only hold for integral points.
            return VarBound::NonNeg;
        }
        let u = self.upper[s][t];
        VarBound { lower: Some(0.0), upper: u.is_finite().then_some(u) }
    }

    /// Exact family, one component and one target: variables `M_{c,t}`.
    fn exact_block(&self, c: usize, t: usize, obj: Option<&[u64]>, sign: f64) -> IlpProblem {
        let srcs = &self.comp_sources[c];
        let mut lp = LpProblem::new(srcs.len());
        for (k, &s) in srcs.iter().enumerate() {
            lp.set_bound(k, self.m_bound(s, t));
        }
        for &i in &self.comp_rows[c] {
            let coeffs = srcs
                .iter()
                .enumerate()
                .filter(|(_, &s)| self.s[i][s] > 0)
                .map(|(k, &s)| (k, self.s[i][s] as f64))
                .collect();
            lp.add_sparse_constraint(coeffs, Relation::Eq, self.t[i][t] as f64);
        }
        if let Some(x) = obj {
            lp.set_objective(srcs.iter().map(|&s| sign * x[s] as f64).collect());
        }
        IlpProblem { integral: vec![!self.relaxed; srcs.len()], lp }
    }

    /// Noise family, one component and one target: minimal L1 residual.
    fn residual_block(&self, c: usize, t: usize) -> IlpProblem {
        let srcs = &self.comp_sources[c];
        let rows = &self.comp_rows[c];
        let (nm, nr) = (srcs.len(), rows.len());
        let mut lp = LpProblem::new(nm + 2 * nr);
        for (k, &s) in srcs.iter().enumerate() {
            lp.set_bound(k, self.m_bound(s, t));
        }
        let mut obj = vec![0.0; nm + 2 * nr];
        obj[nm..].iter_mut().for_each(|v| *v = -1.0);
        lp.set_objective(obj);
        for (r, &i) in rows.iter().enumerate() {
            let mut coeffs: Vec<(usize, f64)> = srcs
                .iter()
                .enumerate()
                .filter(|(_, &s)| self.s[i][s] > 0)
                .map(|(k, &s)| (k, self.s[i][s] as f64))
                .collect();
            coeffs.push((nm + r, -1.0));
            coeffs.push((nm + nr + r, 1.0));
            lp.add_sparse_constraint(coeffs, Relation::Eq, self.t[i][t] as f64);
        }
        let mut integral = vec![false; nm + 2 * nr];
        integral[..nm].iter_mut().for_each(|v| *v = !self.relaxed);
        IlpProblem { lp, integral }
    }

    /// Layout of `M` variables over a set of components: `(source, target) -> var`.
    fn m_layout(&self, comps: &[usize]) -> Vec<(usize, usize)> {
        comps
            .iter()
            .flat_map(|&c| self.comp_sources[c].iter().flat_map(move |&s| (0..self.nt).map(move |t| (s, t))))
            .collect()
    }

    /// Noise family over the given components with the remaining budget.
    fn noise_coupled(&self, comps: &[usize], budget: f64, w: &[f64], x: &[u64]) -> IlpProblem {
        let layout = self.m_layout(comps);
        let rows: Vec<usize> = comps.iter().flat_map(|&c| self.comp_rows[c].iter().copied()).collect();
        let nm = layout.len();
        let ne = rows.len() * self.nt;
        let mut lp = LpProblem::new(nm + 2 * ne);
        let mut index = std::collections::HashMap::new();
        let mut obj = vec![0.0; nm + 2 * ne];
        for (k, &(s, t)) in layout.iter().enumerate() {
            lp.set_bound(k, self.m_bound(s, t));
            index.insert((s, t), k);
            obj[k] = w[t] * x[s] as f64;
        }
        lp.set_objective(obj);
        let mut budget_row = Vec::with_capacity(2 * ne);
        for (r, &i) in rows.iter().enumerate() {
            for t in 0..self.nt {
                let e = r * self.nt + t;
                let mut coeffs: Vec<(usize, f64)> = self.s[i]
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(s, &c)| (index[&(s, t)], c as f64))
                    .collect();
                coeffs.push((nm + e, -1.0));
                coeffs.push((nm + ne + e, 1.0));
                lp.add_sparse_constraint(coeffs, Relation::Eq, self.t[i][t] as f64);
                budget_row.push((nm + e, 1.0));
                budget_row.push((nm + ne + e, 1.0));
            }
        }
        if !budget_row.is_empty() {
            lp.add_sparse_constraint(budget_row, Relation::Le, budget);
        }
        let mut integral = vec![false; nm + 2 * ne];
        integral[..nm].iter_mut().for_each(|v| *v = !self.relaxed);
        IlpProblem { lp, integral }
    }

    /// Denotation family on one component: `M` then one `π_ij` per candidate.
    fn denotation_comp(&self, c: usize, w: &[f64], x: &[u64]) -> IlpProblem {
        let ConsistencyKind::Denotation { candidates } = &self.kind else { unreachable!() };
        let layout = self.m_layout(&[c]);
        let rows = &self.comp_rows[c];
        let nm = layout.len();
        let mut pi_start = Vec::with_capacity(rows.len());
        let mut np = 0;
        for &i in rows {
            pi_start.push(nm + np);
            np += candidates[i].len();
        }
        let mut lp = LpProblem::new(nm + np);
        let mut index = std::collections::HashMap::new();
        let mut obj = vec![0.0; nm + np];
        for (k, &(s, t)) in layout.iter().enumerate() {
            lp.set_bound(k, self.m_bound(s, t));
            index.insert((s, t), k);
            obj[k] = w[t] * x[s] as f64;
        }
        for k in nm..nm + np {
            lp.set_bound(k, VarBound::range(0.0, 1.0));
        }
        lp.set_objective(obj);
        for (r, &i) in rows.iter().enumerate() {
            for t in 0..self.nt {
                let mut coeffs: Vec<(usize, f64)> = self.s[i]
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(s, &c)| (index[&(s, t)], c as f64))
                    .collect();
                for (j, cand) in candidates[i].iter().enumerate() {
                    if cand[t] > 0 {
                        coeffs.push((pi_start[r] + j, -(cand[t] as f64)));
                    }
                }
                lp.add_sparse_constraint(coeffs, Relation::Eq, 0.0);
            }
            let sel = (0..candidates[i].len()).map(|j| (pi_start[r] + j, 1.0)).collect();
            lp.add_sparse_constraint(sel, Relation::Eq, 1.0);
        }
        IlpProblem { integral: vec![!self.relaxed; nm + np], lp }
    }

    fn column_is_zero(&self, c: usize, t: usize) -> bool {
        self.comp_rows[c].iter().all(|&i| self.t[i][t] == 0)
    }

    fn compute_feasibility(&mut self) -> Result<bool> {
        let n_comp = self.comp_sources.len();
        match self.kind.clone() {
            ConsistencyKind::Exact => {
                for c in 0..n_comp {
                    for t in 0..self.nt {
                        if self.column_is_zero(c, t) {
                            continue;
                        }
                        if self.solve(&self.exact_block(c, t, None, 1.0))? == IlpOutcome::Infeasible {
                            return Ok(false);
                        }
                    }
                }
                Ok(true)
            }
            ConsistencyKind::NoiseBudget { n_mistakes } => {
                let mut mins = vec![0u64; n_comp];
                for (c, m) in mins.iter_mut().enumerate() {
                    for t in 0..self.nt {
                        if self.column_is_zero(c, t) {
                            continue;
                        }
                        match self.solve(&self.residual_block(c, t))? {
                            IlpOutcome::Optimal { value, .. } => *m += (-value).round().max(0.0) as u64,
                            IlpOutcome::Infeasible => unreachable!("residual program is always feasible"),
                        }
                    }
                }
                let total: u64 = mins.iter().sum();
                self.min_budget = mins;
                Ok(total <= n_mistakes)
            }
            ConsistencyKind::Denotation { .. } => {
                let zeros = vec![0.0; self.nt];
                let xs = vec![0u64; self.ns];
                for c in 0..n_comp {
                    if self.solve(&self.denotation_comp(c, &zeros, &xs))? == IlpOutcome::Infeasible {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
        }
    }

    fn touched(&self, x: &[u64]) -> Result<Vec<usize>> {
        let mut comps = Vec::new();
        for (s, &c) in x.iter().enumerate() {
            if c == 0 {
                continue;
            }
            match self.comp_of[s] {
                Some(k) => {
                    if !comps.contains(&k) {
                        comps.push(k);
                    }
                }
                None => return Err(Error::UnseenAtom(format!("source atom #{s}"))),
            }
        }
        comps.sort_unstable();
        Ok(comps)
    }

    /// For the exact family: `[min, max]` of `(x M)_t` for every target, each
    /// from its own set of block solves. Attained simultaneously since blocks are independent.
    fn exact_ranges(&self, x: &[u64], comps: &[usize]) -> Result<Vec<(f64, f64)>> {
        let mut ranges = vec![(0.0, 0.0); self.nt];
        for &c in comps {
            for (t, range) in ranges.iter_mut().enumerate() {
                if self.column_is_zero(c, t) {
                    continue;
                }
                let hi = self.solve(&self.exact_block(c, t, Some(x), 1.0))?;
                let lo = self.solve(&self.exact_block(c, t, Some(x), -1.0))?;
                match (hi, lo) {
                    (IlpOutcome::Optimal { value: h, .. }, IlpOutcome::Optimal { value: l, .. }) => {
                        range.0 += -l;
                        range.1 += h;
                    }
                    _ => return Err(Error::Infeasible),
                }
            }
        }
        Ok(ranges)
    }

    /// Maximizes `Σ_t w_t (xM)_t`; returns the value and `xM` at the optimum.
    fn maximize(&self, x: &[u64], w: &[f64], comps: &[usize]) -> Result<(f64, Vec<f64>)> {
        let mut y = vec![0.0; self.nt];
        let mut total = 0.0;
        match &self.kind {
            ConsistencyKind::Exact => unreachable!("exact family uses per-target ranges"),
            ConsistencyKind::NoiseBudget { n_mistakes } => {
                let spent: u64 = (0..self.comp_sources.len())
                    .filter(|c| !comps.contains(c))
                    .map(|c| self.min_budget[c])
                    .sum();
                let budget = *n_mistakes as f64 - spent as f64;
                let p = self.noise_coupled(comps, budget, w, x);
                let IlpOutcome::Optimal { point, value } = self.solve(&p)? else {
                    return Err(Error::Infeasible);
                };
                for (k, (s, t)) in self.m_layout(comps).into_iter().enumerate() {
                    y[t] += x[s] as f64 * point[k];
                }
                total += value;
            }
            ConsistencyKind::Denotation { .. } => {
                for &c in comps {
                    let p = self.denotation_comp(c, w, x);
                    let IlpOutcome::Optimal { point, value } = self.solve(&p)? else {
                        return Err(Error::Infeasible);
                    };
                    for (k, (s, t)) in self.m_layout(&[c]).into_iter().enumerate() {
                        y[t] += x[s] as f64 * point[k];
                    }
                    total += value;
                }
            }
        }
        Ok((total, y))
    }

    /// `(min, argmin xM, max, argmax xM)` of `x M v`.
    pub fn extremes(&self, x: &[u64], v: &[f64]) -> Result<(f64, Vec<f64>, f64, Vec<f64>)> {
        if !self.feasible {
            return Err(Error::Infeasible);
        }
        let comps = self.touched(x)?;
        if let ConsistencyKind::Exact = self.kind {
            let ranges = self.exact_ranges(x, &comps)?;
            let y_lo: Vec<f64> = ranges.iter().zip(v).map(|(r, &vt)| if vt >= 0.0 { r.0 } else { r.1 }).collect();
            let y_hi: Vec<f64> = ranges.iter().zip(v).map(|(r, &vt)| if vt >= 0.0 { r.1 } else { r.0 }).collect();
            let a = y_lo.iter().zip(v).map(|(y, w)| y * w).sum();
            let b = y_hi.iter().zip(v).map(|(y, w)| y * w).sum();
            return Ok((a, y_lo, b, y_hi));
        }
        let (b, y_hi) = self.maximize(x, v, &comps)?;
        let neg: Vec<f64> = v.iter().map(|w| -w).collect();
        let (a_neg, y_lo) = self.maximize(x, &neg, &comps)?;
        Ok((-a_neg, y_lo, b, y_hi))
    }

    /// `[min, max]` of each coordinate of `x M` over the set.
    pub fn coordinate_ranges(&self, x: &[u64]) -> Result<Vec<(f64, f64)>> {
        if !self.feasible {
            return Err(Error::Infeasible);
        }
        let comps = self.touched(x)?;
        if let ConsistencyKind::Exact = self.kind {
            return self.exact_ranges(x, &comps);
        }
        let mut out = Vec::with_capacity(self.nt);
        for t in 0..self.nt {
            let mut e = vec![0.0; self.nt];
            e[t] = 1.0;
            let (hi, _) = self.maximize(x, &e, &comps)?;
            e[t] = -1.0;
            let (lo, _) = self.maximize(x, &e, &comps)?;
            out.push((-lo, hi));
        }
        Ok(out)
    }

    /// The whole exact-family program over `vec(M)` with objective `c`, without
    /// decomposition.
    pub fn full_program(&self, c: &[f64]) -> IlpProblem {
        let (ns, nt) = (self.ns, self.nt);
        let mut lp = LpProblem::new(ns * nt);
        for s in 0..ns {
            for t in 0..nt {
                lp.set_bound(s * nt + t, self.m_bound(s, t));
            }
        }
        lp.set_objective(c.to_vec());
        for (x, y) in self.s.iter().zip(&self.t) {
            for (t, &yt) in y.iter().enumerate() {
                let coeffs =
                    x.iter().enumerate().filter(|(_, &c)| c > 0).map(|(s, &c)| (s * nt + t, c as f64)).collect();
                lp.add_sparse_constraint(coeffs, Relation::Eq, yt as f64);
            }
        }
        IlpProblem { integral: vec![!self.relaxed; ns * nt], lp }
    }
}

fn t_at(t: &[Vec<u64>], i: usize, col: usize) -> u64 {
    t[i][col]
}

/// Integral `M ≥ 0` with `S M = T`.
pub fn build_exact_consistency(d: &Dataset) -> Result<ConstraintSet> {
    ConstraintSet::new(d.n_source(), d.n_target(), d.s().to_vec(), d.t().to_vec(), ConsistencyKind::Exact)
}

/// Integral `M ≥ 0` with `‖S M − T‖₁ ≤ n_mistakes`.
pub fn build_noise_consistency(d: &Dataset, n_mistakes: u64) -> Result<ConstraintSet> {
    if n_mistakes == 0 {
        return build_exact_consistency(d);
    }
    ConstraintSet::new(
        d.n_source(),
        d.n_target(),
        d.s().to_vec(),
        d.t().to_vec(),
        ConsistencyKind::NoiseBudget { n_mistakes },
    )
}

/// Pairs `(M, π)` where each example's output `x_i M` is one of its candidates.
pub fn build_denotation_consistency(
    examples: &[CandidateExample],
    n_source: usize,
    n_target: usize,
) -> Result<ConstraintSet> {
    let mut s = Vec::with_capacity(examples.len());
    let mut cands = Vec::with_capacity(examples.len());
    for ex in examples {
        if ex.input.len() != n_source {
            return Err(Error::DimensionMismatch { expected: n_source, got: ex.input.len() });
        }
        if ex.candidates.is_empty() {
            return Err(Error::InfeasibleData);
        }
        let mut rows = Vec::with_capacity(ex.candidates.len());
        for c in &ex.candidates {
            if c.len() != n_target {
                return Err(Error::DimensionMismatch { expected: n_target, got: c.len() });
            }
            rows.push(c.counts().to_vec());
        }
        s.push(ex.input.counts().to_vec());
        cands.push(rows);
    }
    ConstraintSet::new(n_source, n_target, s, Vec::new(), ConsistencyKind::Denotation { candidates: cands })
}

/// `(a, b) = (min, max)` of `x M v` over the set.
pub fn minmax_projection(cs: &ConstraintSet, x: &CountVector, v: &[f64]) -> Result<(f64, f64)> {
    let (a, _, b, _) = cs.extremes(x.counts(), v)?;
    Ok((a, b))
}

/// The unanimity test on `(a, b)`.
pub fn is_unanimous(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * (1.0 + a.abs())
}
