//! Deciders that answer only when every consistent mapping agrees.
//!
//! Four modes share one interface: the integer program with a random
//! projection (`Ilp`), the same with per-coordinate ranges (`IlpExact`), two
//! generic points of the LP relaxation (`Lp`), and row-space membership for the
//! linear system (`Ls`).

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bag::{AbstainReason, CountVector, Dataset, Mapping, Prediction};
use crate::error::{Error, Result};
use crate::ilp::{build_noise_consistency, is_unanimous, ConstraintSet};
use crate::linalg::{is_consistent_ls, l1_residual_fit, rat_u64, to_nonneg_integers, Rational, RowSpaceMap};
use crate::lp::{build_consistency_polytope, relative_interior, sample_second_point, solve_lp, LpOutcome, LpProblem, Relation};

/// Coordinate tolerance between the two LP mappings.
pub const LP_AGREE_TOL: f64 = 1e-6;
/// Largest allowed gap between a raw output and its rounding.
pub const ROUND_TOL: f64 = 1e-4;
/// Largest box `Π(U_st + 1)` the enumerator will walk.
pub const ENUMERATION_LIMIT: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "ILP")]
    Ilp,
    #[serde(rename = "ILP_exact")]
    IlpExact,
    #[serde(rename = "LP")]
    Lp,
    #[serde(rename = "LS")]
    Ls,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Ilp, Mode::IlpExact, Mode::Lp, Mode::Ls];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Ilp => "ILP",
            Mode::IlpExact => "ILP_exact",
            Mode::Lp => "LP",
            Mode::Ls => "LS",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ilp" => Ok(Mode::Ilp),
            "ilp_exact" | "ilp-exact" => Ok(Mode::IlpExact),
            "lp" => Ok(Mode::Lp),
            "ls" => Ok(Mode::Ls),
            _ => Err(Error::Format(format!("unknown mode `{s}`"))),
        }
    }
}

/// Two generic members of the LP relaxation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappingPair {
    pub m1: Mapping<f64>,
    pub m2: Mapping<f64>,
    pub seed: u64,
    pub fingerprint: String,
}

#[derive(Clone, Debug)]
enum State {
    Ilp(ConstraintSet),
    Lp(MappingPair),
    Ls(RowSpaceMap),
}

/// A trained decider. Immutable after training; `predict` takes `&self`.
#[derive(Clone, Debug)]
pub struct Decider {
    mode: Mode,
    n_mistakes: u64,
    seed: u64,
    dataset: Dataset,
    seen: Vec<bool>,
    state: State,
}

fn lp_pair(d: &Dataset, seed: u64) -> Result<MappingPair> {
    let poly = build_consistency_polytope(d);
    let ip = match relative_interior(&poly) {
        Err(Error::InfeasiblePolytope) | Err(Error::Infeasible) => return Err(Error::InconsistentData),
        other => other?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p2 = sample_second_point(&ip, &mut rng);
    let (ns, nt) = (d.n_source(), d.n_target());
    Ok(MappingPair {
        m1: Mapping::from_entries(ns, nt, ip.p1)?,
        m2: Mapping::from_entries(ns, nt, p2)?,
        seed,
        fingerprint: d.fingerprint(),
    })
}

/// Builds a decider in `mode`. The relaxations reject a noise budget.
pub fn train(d: &Dataset, mode: Mode, n_mistakes: u64, seed: u64) -> Result<Decider> {
    let state = match mode {
        Mode::Ilp | Mode::IlpExact => State::Ilp(build_noise_consistency(d, n_mistakes)?),
        Mode::Lp if n_mistakes > 0 => return Err(Error::NoiseUnsupportedInRelaxation("LP")),
        Mode::Ls if n_mistakes > 0 => return Err(Error::NoiseUnsupportedInRelaxation("LS")),
        Mode::Lp => State::Lp(lp_pair(d, seed)?),
        Mode::Ls => State::Ls(RowSpaceMap::new(d).ok_or(Error::InconsistentData)?),
    };
    Ok(Decider { mode, n_mistakes, seed, dataset: d.clone(), seen: d.seen_sources(), state })
}

/// Seeded Gaussian direction for one input.
pub(crate) fn projection(seed: u64, x: &[u64], nt: usize) -> Vec<f64> {
    // FNV-1a over the counts, mixed into the seed.
    let mut h: u64 = 0xcbf29ce484222325;
    for &c in x {
        for b in c.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ h);
    (0..nt).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Rounds to non-negative integers when every coordinate is within `ROUND_TOL`.
fn round_output(y: &[f64]) -> Option<CountVector> {
    y.iter()
        .map(|&v| {
            let r = v.round();
            ((v - r).abs() <= ROUND_TOL && r >= 0.0).then_some(r as u64)
        })
        .collect::<Option<Vec<u64>>>()
        .map(CountVector::from_counts)
}

fn output_or_abstain(y: &[f64]) -> Prediction {
    match round_output(y) {
        Some(v) => Prediction::Output(v),
        None => Prediction::Abstain(AbstainReason::NonIntegralOutput),
    }
}

impl Decider {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn n_mistakes(&self) -> u64 {
        self.n_mistakes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn mapping_pair(&self) -> Option<&MappingPair> {
        match &self.state {
            State::Lp(p) => Some(p),
            _ => None,
        }
    }

    /// `rank(S)` for a linear-system decider.
    pub fn rank(&self) -> Option<usize> {
        match &self.state {
            State::Ls(m) => Some(m.rank()),
            _ => None,
        }
    }

    /// Exact `αᵀT` for a linear-system decider; `None` outside the row space
    /// or for unseen atoms.
    pub fn ls_output(&self, x: &CountVector) -> Result<Option<Vec<Rational>>> {
        let State::Ls(map) = &self.state else {
            return Err(Error::WrongMode("LS"));
        };
        let ns = self.dataset.n_source();
        if x.counts().iter().enumerate().any(|(s, &c)| c > 0 && (s >= ns || !self.seen[s])) {
            return Ok(None);
        }
        let xr: Vec<Rational> = x.resized(ns).counts().iter().map(|&c| rat_u64(c)).collect();
        Ok(map.output(&xr))
    }

    pub fn constraint_set(&self) -> Option<&ConstraintSet> {
        match &self.state {
            State::Ilp(cs) => Some(cs),
            _ => None,
        }
    }

    /// Either the unanimous output or the reason for abstaining. Solver faults
    /// (node cap, cycling) are returned as errors.
    pub fn predict(&self, x: &CountVector) -> Result<Prediction> {
        let ns = self.dataset.n_source();
        let counts = x.counts();
        if counts.iter().enumerate().any(|(s, &c)| c > 0 && (s >= ns || !self.seen[s])) {
            return Ok(Prediction::Abstain(AbstainReason::UnseenAtom));
        }
        let x = x.resized(ns);
        let nt = self.dataset.n_target();
        match &self.state {
            State::Ilp(cs) => {
                if !cs.is_feasible() {
                    return Ok(Prediction::Abstain(AbstainReason::InfeasibleModel));
                }
                if self.mode == Mode::IlpExact {
                    let ranges = cs.coordinate_ranges(x.counts())?;
                    if ranges.iter().all(|&(lo, hi)| is_unanimous(lo, hi)) {
                        let y: Vec<f64> = ranges.iter().map(|r| r.0).collect();
                        return Ok(output_or_abstain(&y));
                    }
                    return Ok(Prediction::Abstain(AbstainReason::NotUnanimous));
                }
                let v = projection(self.seed, x.counts(), nt);
                let (a, y, b, _) = cs.extremes(x.counts(), &v)?;
                if is_unanimous(a, b) {
                    Ok(output_or_abstain(&y))
                } else {
                    Ok(Prediction::Abstain(AbstainReason::NotUnanimous))
                }
            }
            State::Lp(pair) => {
                let xf = x.as_f64();
                let y1 = pair.m1.apply(&xf);
                let y2 = pair.m2.apply(&xf);
                if y1.iter().zip(&y2).all(|(a, b)| (a - b).abs() <= LP_AGREE_TOL) {
                    Ok(output_or_abstain(&y1))
                } else {
                    Ok(Prediction::Abstain(AbstainReason::NotUnanimous))
                }
            }
            State::Ls(map) => {
                let xr: Vec<_> = x.counts().iter().map(|&c| rat_u64(c)).collect();
                Ok(match map.output(&xr) {
                    None => Prediction::Abstain(AbstainReason::NotUnanimous),
                    Some(y) => match to_nonneg_integers(&y) {
                        Some(v) => Prediction::Output(CountVector::from_counts(v)),
                        None => Prediction::Abstain(AbstainReason::NonIntegralOutput),
                    },
                })
            }
        }
    }

    /// Predictions for many inputs in parallel.
    pub fn predict_many(&self, xs: &[CountVector]) -> Result<Vec<Prediction>> {
        xs.par_iter().map(|x| self.predict(x)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = DeciderDoc {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            mode: self.mode,
            n_mistakes: self.n_mistakes,
            seed: self.seed,
            fingerprint: self.dataset.fingerprint(),
            dataset: self.dataset.clone(),
            pair: self.mapping_pair().cloned(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Restores a decider. ILP and LS state is rebuilt from the stored data; the
    /// LP mapping pair is taken as stored.
    pub fn from_json(s: &str) -> Result<Decider> {
        let doc: DeciderDoc = serde_json::from_str(s)?;
        if doc.format != FORMAT_TAG {
            return Err(Error::Format(format!("not a decider document: `{}`", doc.format)));
        }
        if doc.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported decider version {}", doc.version)));
        }
        if doc.dataset.fingerprint() != doc.fingerprint {
            return Err(Error::Format("dataset fingerprint mismatch".into()));
        }
        match (doc.mode, doc.pair) {
            (Mode::Lp, Some(pair)) => {
                if pair.fingerprint != doc.fingerprint {
                    return Err(Error::Format("mapping pair was trained on other data".into()));
                }
                let seen = doc.dataset.seen_sources();
                Ok(Decider {
                    mode: Mode::Lp,
                    n_mistakes: doc.n_mistakes,
                    seed: doc.seed,
                    dataset: doc.dataset,
                    seen,
                    state: State::Lp(pair),
                })
            }
            (Mode::Lp, None) => Err(Error::Format("LP decider without a mapping pair".into())),
            (mode, _) => train(&doc.dataset, mode, doc.n_mistakes, doc.seed),
        }
    }
}

const FORMAT_TAG: &str = "unanimous-decider";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DeciderDoc {
    format: String,
    version: u32,
    mode: Mode,
    n_mistakes: u64,
    seed: u64,
    fingerprint: String,
    dataset: Dataset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pair: Option<MappingPair>,
}

/// All integral `M` with `S M = T` and `M_st ≤ min(u, U_st)`, where `U_st` is
/// the tightest per-row bound. Columns of `M` are independent, so each
/// column is enumerated separately and the results are combined.
pub fn enumerate_consistent_bounded(d: &Dataset, u: u64) -> Result<Vec<Mapping<u64>>> {
    let (ns, nt) = (d.n_source(), d.n_target());
    let mut bound = vec![vec![u; nt]; ns];
    for (x, y) in d.s().iter().zip(d.t()) {
        for (s, &c) in x.iter().enumerate() {
            if c > 0 {
                for t in 0..nt {
                    bound[s][t] = bound[s][t].min(y[t] / c);
                }
            }
        }
    }
    let size: f64 = bound.iter().flatten().map(|&b| (b + 1) as f64).product();
    if size > ENUMERATION_LIMIT {
        return Err(Error::SearchSpaceTooLarge(size));
    }
    let mut columns: Vec<Vec<Vec<u64>>> = Vec::with_capacity(nt);
    for t in 0..nt {
        let caps: Vec<u64> = (0..ns).map(|s| bound[s][t]).collect();
        let targets: Vec<u64> = d.t().iter().map(|y| y[t]).collect();
        let mut found = Vec::new();
        let mut col = vec![0u64; ns];
        let mut sums = vec![0u64; d.n_examples()];
        enumerate_column(d.s(), &targets, &caps, 0, &mut col, &mut sums, &mut found);
        if found.is_empty() {
            return Ok(Vec::new());
        }
        columns.push(found);
    }
    let mut out = vec![Mapping::<u64>::zeros(ns, nt)];
    for (t, options) in columns.iter().enumerate() {
        let mut next = Vec::with_capacity(out.len() * options.len());
        for m in &out {
            for col in options {
                let mut m = m.clone();
                for (s, &v) in col.iter().enumerate() {
                    m.set(s, t, v);
                }
                next.push(m);
            }
        }
        out = next;
    }
    Ok(out)
}

fn enumerate_column(
    s: &[Vec<u64>],
    targets: &[u64],
    caps: &[u64],
    k: usize,
    col: &mut Vec<u64>,
    sums: &mut Vec<u64>,
    found: &mut Vec<Vec<u64>>,
) {
    if k == caps.len() {
        if sums == targets {
            found.push(col.clone());
        }
        return;
    }
    for v in 0..=caps[k] {
        if s.iter().zip(sums.iter()).zip(targets).any(|((row, &sum), &y)| sum + row[k] * v > y) {
            break;
        }
        for (row, sum) in s.iter().zip(sums.iter_mut()) {
            *sum += row[k] * v;
        }
        col[k] = v;
        enumerate_column(s, targets, caps, k + 1, col, sums, found);
        for (row, sum) in s.iter().zip(sums.iter_mut()) {
            *sum -= row[k] * v;
        }
    }
    col[k] = 0;
}

/// `[min, max]` of each `(xM)_t` over `{M ≥ 0 real : S M = T}`, one LP per
/// bound over the whole of `vec(M)`.
pub fn lp_coordinate_ranges(d: &Dataset, x: &CountVector) -> Result<Vec<(f64, f64)>> {
    let (ns, nt) = (d.n_source(), d.n_target());
    let mut lp = LpProblem::new(ns * nt);
    for (row, y) in d.s().iter().zip(d.t()) {
        for (t, &yt) in y.iter().enumerate() {
            let coeffs =
                row.iter().enumerate().filter(|(_, &c)| c > 0).map(|(s, &c)| (s * nt + t, c as f64)).collect();
            lp.add_sparse_constraint(coeffs, Relation::Eq, yt as f64);
        }
    }
    let mut out = Vec::with_capacity(nt);
    for t in 0..nt {
        let mut ends = [0.0; 2];
        for (k, sign) in [-1.0, 1.0].into_iter().enumerate() {
            let mut c = vec![0.0; ns * nt];
            for (s, &xs) in x.counts().iter().enumerate() {
                c[s * nt + t] = sign * xs as f64;
            }
            lp.set_objective(c);
            ends[k] = match solve_lp(&lp)? {
                LpOutcome::Optimal { value, .. } => sign * value,
                LpOutcome::Unbounded => sign * f64::INFINITY,
                LpOutcome::Infeasible => return Err(Error::InconsistentData),
            };
        }
        out.push((ends[0], ends[1]));
    }
    Ok(out)
}

/// Which rows leave-one-out cleaning removes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CleaningRule {
    /// Drop `i` when `x_i` is unsafe for the rest of the data or its unanimous
    /// prediction differs from `y_i`.
    #[default]
    Strict,
    /// Drop `i` only when `x_i` is unsafe.
    Literal,
}

/// Leave-one-out cleaning with the noise-budget decider. If the kept rows are
/// still not exactly consistent, residual cleaning finishes the job.
pub fn clean_leave_one_out(d: &Dataset, n_mistakes: u64) -> Result<Dataset> {
    clean_leave_one_out_with(d, n_mistakes, CleaningRule::Strict, 0)
}

pub fn clean_leave_one_out_with(d: &Dataset, n_mistakes: u64, rule: CleaningRule, seed: u64) -> Result<Dataset> {
    let keep: Vec<bool> = (0..d.n_examples())
        .into_par_iter()
        .map(|i| -> Result<bool> {
            let dec = train(&d.without_row(i), Mode::Ilp, n_mistakes, seed)?;
            let ex = d.example(i);
            Ok(match dec.predict(&ex.input)? {
                Prediction::Abstain(_) => false,
                Prediction::Output(y) => rule == CleaningRule::Literal || y == ex.output,
            })
        })
        .collect::<Result<_>>()?;
    let rows: Vec<usize> = (0..d.n_examples()).filter(|&i| keep[i]).collect();
    let kept = d.select_rows(&rows);
    if is_consistent_ls(&kept) {
        Ok(kept)
    } else {
        clean_l1_residual(&kept)
    }
}

/// Drops rows whose residual under a least-L1 real mapping exceeds `1e-6`,
/// repeating until the remainder is exactly consistent.
pub fn clean_l1_residual(d: &Dataset) -> Result<Dataset> {
    let mut cur = d.clone();
    loop {
        if cur.is_empty() || is_consistent_ls(&cur) {
            return Ok(cur);
        }
        let (_, residuals) = l1_residual_fit(&cur)?;
        let mut rows: Vec<usize> = (0..cur.n_examples()).filter(|&i| residuals[i] <= 1e-6).collect();
        if rows.len() == cur.n_examples() {
            // Numerically flat fit; drop the worst row to make progress.
            let worst = (0..residuals.len()).max_by(|&a, &b| residuals[a].total_cmp(&residuals[b])).unwrap_or(0);
            rows.retain(|&i| i != worst);
        }
        cur = cur.select_rows(&rows);
    }
}
