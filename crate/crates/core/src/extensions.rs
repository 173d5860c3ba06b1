//! Active learning by row-space rank, paraphrase detection, and prediction
//! from denotation (candidate-set) supervision.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bag::{AbstainReason, CountVector, Prediction};
use crate::error::{Error, Result};
use crate::ilp::{build_denotation_consistency, is_unanimous, CandidateExample, ConstraintSet};
use crate::linalg::{rat_u64, Rational, RowSpace};
use crate::unanimity::{projection, Decider, Mode};

/// Queried stream positions and the row space they span.
#[derive(Clone, Debug)]
pub struct ActiveState {
    queried: Vec<usize>,
    space: RowSpace,
}

impl ActiveState {
    pub fn new(n_source: usize) -> Self {
        ActiveState { queried: Vec::new(), space: RowSpace::empty(n_source) }
    }

    /// Queries `x` (stream position `i`) iff it is outside the current row space.
    pub fn offer(&mut self, i: usize, x: &CountVector) -> bool {
        let xr: Vec<Rational> = x.counts().iter().map(|&c| rat_u64(c)).collect();
        let added = self.space.try_insert(&xr);
        if added {
            self.queried.push(i);
        }
        added
    }

    pub fn queried(&self) -> &[usize] {
        &self.queried
    }

    pub fn rank(&self) -> usize {
        self.space.rank()
    }

    pub fn space(&self) -> &RowSpace {
        &self.space
    }
}

/// One pass over the stream, asking for a label only when the input is new to
/// the row space.
pub fn active_select(inputs: &[CountVector]) -> (Vec<usize>, ActiveState) {
    let n_source = inputs.iter().map(CountVector::len).max().unwrap_or(0);
    let mut state = ActiveState::new(n_source);
    for (i, x) in inputs.iter().enumerate() {
        state.offer(i, &x.resized(n_source));
    }
    (state.queried.clone(), state)
}

fn exact_output(dec: &Decider, x: &CountVector, which: usize) -> Result<Vec<Rational>> {
    dec.ls_output(x)?.ok_or(Error::NotSafe(which))
}

/// Whether two safe inputs share the same exact output. `NotSafe(0)` or
/// `NotSafe(1)` names the input outside the safe set.
pub fn are_paraphrases(x: &CountVector, x2: &CountVector, dec: &Decider) -> Result<bool> {
    if dec.mode() != Mode::Ls {
        return Err(Error::WrongMode("LS"));
    }
    Ok(exact_output(dec, x, 0)? == exact_output(dec, x2, 1)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseClass {
    pub output: CountVector,
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub classes: Vec<ParaphraseClass>,
    /// Pool positions that are not safe (or have no integral output).
    pub set_aside: Vec<usize>,
}

/// Groups the safe members of `pool` by their unanimous output, in order of
/// first appearance.
pub fn paraphrase_classes(pool: &[CountVector], dec: &Decider) -> Result<Partition> {
    if dec.mode() != Mode::Ls {
        return Err(Error::WrongMode("LS"));
    }
    let mut index: BTreeMap<CountVector, usize> = BTreeMap::new();
    let mut part = Partition::default();
    for (i, x) in pool.iter().enumerate() {
        match dec.predict(x)? {
            Prediction::Output(y) => {
                let k = *index.entry(y.clone()).or_insert_with(|| {
                    part.classes.push(ParaphraseClass { output: y, members: Vec::new() });
                    part.classes.len() - 1
                });
                part.classes[k].members.push(i);
            }
            Prediction::Abstain(_) => part.set_aside.push(i),
        }
    }
    Ok(part)
}

/// Unanimity over every `(M, π)` that explains the candidate lists.
#[derive(Clone, Debug)]
pub struct DenotationDecider {
    cs: ConstraintSet,
    seen: Vec<bool>,
    seed: u64,
}

impl DenotationDecider {
    /// `mode` is `Ilp` (π binary, M integral) or `Lp` (both relaxed).
    pub fn train(examples: &[CandidateExample], n_source: usize, n_target: usize, mode: Mode, seed: u64) -> Result<Self> {
        let mut cs = build_denotation_consistency(examples, n_source, n_target)?;
        match mode {
            Mode::Ilp | Mode::IlpExact => {}
            Mode::Lp => cs = cs.relaxed()?,
            Mode::Ls => return Err(Error::WrongMode("ILP or LP")),
        }
        if !cs.is_feasible() {
            return Err(Error::InfeasibleData);
        }
        let mut seen = vec![false; n_source];
        for ex in examples {
            for s in ex.input.support() {
                seen[s] = true;
            }
        }
        Ok(DenotationDecider { cs, seen, seed })
    }

    pub fn predict(&self, x: &CountVector) -> Result<Prediction> {
        let ns = self.seen.len();
        if x.counts().iter().enumerate().any(|(s, &c)| c > 0 && (s >= ns || !self.seen[s])) {
            return Ok(Prediction::Abstain(AbstainReason::UnseenAtom));
        }
        let x = x.resized(ns);
        let v = projection(self.seed, x.counts(), self.cs.n_target());
        let (a, y, b, _) = self.cs.extremes(x.counts(), &v)?;
        if !is_unanimous(a, b) {
            return Ok(Prediction::Abstain(AbstainReason::NotUnanimous));
        }
        let rounded: Option<Vec<u64>> = y
            .iter()
            .map(|&v| {
                let r = v.round();
                ((v - r).abs() <= 1e-4 && r >= 0.0).then_some(r as u64)
            })
            .collect();
        Ok(match rounded {
            Some(c) => Prediction::Output(CountVector::from_counts(c)),
            None => Prediction::Abstain(AbstainReason::NonIntegralOutput),
        })
    }
}

/// One-shot form of [`DenotationDecider`].
pub fn predict_with_denotations(
    examples: &[CandidateExample],
    n_source: usize,
    n_target: usize,
    x: &CountVector,
    mode: Mode,
    seed: u64,
) -> Result<Prediction> {
    DenotationDecider::train(examples, n_source, n_target, mode, seed)?.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bag::{Dataset, Example, Mapping, Vocabulary};
    use crate::linalg::{null_space_basis, row_space_membership, RationalMatrix};
    use crate::unanimity::train;
    use num_traits::Zero;
    use proptest::prelude::*;

    fn cv(v: &[u64]) -> CountVector {
        CountVector::from_counts(v.to_vec())
    }

    fn ex(x: &[u64], y: &[u64]) -> Example {
        Example { input: cv(x), output: cv(y) }
    }

    fn running() -> Dataset {
        Dataset::new(
            Vocabulary::from_atoms(["area", "of", "Ohio", "cities", "in", "Iowa"]),
            Vocabulary::from_atoms(["area", "city", "OH", "IA"]),
            &[
                ex(&[1, 1, 0, 0, 0, 1], &[1, 0, 0, 1]),
                ex(&[0, 0, 1, 1, 1, 0], &[0, 1, 1, 0]),
                ex(&[0, 0, 0, 1, 1, 1], &[0, 1, 0, 1]),
            ],
        )
        .unwrap()
    }

    fn four_rows() -> Vec<CountVector> {
        [[1, 1, 0, 0, 0, 1], [0, 0, 1, 1, 1, 0], [0, 0, 0, 1, 1, 1], [1, 1, 1, 1, 1, 0]].iter().map(|r| cv(r)).collect()
    }

    #[test]
    fn active_queries_rank_many() {
        let (q, st) = active_select(&four_rows());
        assert_eq!(q, vec![0, 1, 2, 3]);
        assert_eq!(st.rank(), 4);
        let twice: Vec<CountVector> = four_rows().into_iter().flat_map(|r| [r.clone(), r]).collect();
        assert_eq!(active_select(&twice).0, vec![0, 2, 4, 6]);
        assert_eq!(active_select(&vec![cv(&[1, 2]); 5]).0, vec![0]);
        // A sum of earlier rows is never queried.
        let mut rows = four_rows();
        rows.insert(3, cv(&[1, 1, 1, 2, 2, 2]));
        assert_eq!(active_select(&rows).0, vec![0, 1, 2, 4]);
    }

    #[test]
    fn paraphrase_examples() {
        let dec = train(&running(), Mode::Ls, 0, 0).unwrap();
        let aoo = cv(&[1, 1, 1, 0, 0, 0]);
        assert!(are_paraphrases(&aoo, &aoo, &dec).unwrap());
        assert!(!are_paraphrases(&aoo, &cv(&[1, 1, 0, 0, 0, 1]), &dec).unwrap());
        assert_eq!(are_paraphrases(&aoo, &cv(&[1, 0, 1, 0, 0, 0]), &dec), Err(Error::NotSafe(1)));
        assert_eq!(are_paraphrases(&cv(&[0, 0, 1, 0, 0, 0]), &aoo, &dec), Err(Error::NotSafe(0)));
        let ilp = train(&running(), Mode::Ilp, 0, 0).unwrap();
        assert_eq!(are_paraphrases(&aoo, &aoo, &ilp), Err(Error::WrongMode("LS")));
    }

    #[test]
    fn texas_capital() {
        let d = Dataset::from_token_pairs(&[
            (vec!["capital", "of", "Texas"], vec!["capital", "TX"]),
            (vec!["Texas", "'s", "capital"], vec!["capital", "TX"]),
        ]);
        let dec = train(&d, Mode::Ls, 0, 0).unwrap();
        assert!(are_paraphrases(&d.example(0).input, &d.example(1).input, &dec).unwrap());
    }

    #[test]
    fn partition_examples() {
        let dec = train(&running(), Mode::Ls, 0, 0).unwrap();
        let pool: Vec<CountVector> = running().examples().map(|e| e.input).collect();
        let p = paraphrase_classes(&pool, &dec).unwrap();
        assert_eq!(p.classes.len(), 3);
        assert!(p.classes.iter().all(|c| c.members.len() == 1));
        assert_eq!(paraphrase_classes(&[], &dec).unwrap(), Partition::default());

        // "of" is forced to map to nothing: area Ohio ~ area of Ohio.
        let d = Dataset::from_token_pairs(&[
            (vec!["area", "of", "Ohio"], vec!["area", "OH"]),
            (vec!["Ohio"], vec!["OH"]),
            (vec!["area"], vec!["area"]),
        ]);
        let dec = train(&d, Mode::Ls, 0, 0).unwrap();
        let pool = vec![cv(&[1, 1, 1]), cv(&[1, 0, 1]), cv(&[0, 1, 0]), cv(&[1, 0, 0])];
        let p = paraphrase_classes(&pool, &dec).unwrap();
        assert_eq!(p.classes[0].members, vec![0, 1]);
        assert_eq!(p.classes.len(), 3);
        assert!(p.set_aside.is_empty());
    }

    /// Sources: area, of, Ohio. Targets: area, OH, zipcode, Chatfield.
    fn zipcode_examples() -> Vec<CandidateExample> {
        vec![
            CandidateExample { input: cv(&[1, 1, 1]), candidates: vec![cv(&[1, 1, 0, 0]), cv(&[0, 0, 1, 1])] },
            CandidateExample { input: cv(&[1, 1, 0]), candidates: vec![cv(&[1, 0, 0, 0])] },
        ]
    }

    /// Every `xM` over integral `(M, π)` with entries at most 2.
    fn brute_force_outputs(exs: &[CandidateExample], ns: usize, nt: usize, x: &CountVector) -> Vec<Vec<u64>> {
        let n = ns * nt;
        let mut outs = std::collections::BTreeSet::new();
        for code in 0..3u64.pow(n as u32) {
            let mut c = code;
            let entries: Vec<u64> = (0..n)
                .map(|_| {
                    let v = c % 3;
                    c /= 3;
                    v
                })
                .collect();
            let m = Mapping::from_entries(ns, nt, entries).unwrap();
            if exs.iter().all(|e| e.candidates.iter().any(|cand| m.apply(e.input.counts()) == cand.counts())) {
                outs.insert(m.apply(x.counts()));
            }
        }
        outs.into_iter().collect()
    }

    #[test]
    fn zipcode_ambiguity_is_resolved() {
        let exs = zipcode_examples();
        let x = cv(&[1, 1, 1]);
        // "area of" -> {area} rules out reading the first example as a zipcode query.
        let outs = brute_force_outputs(&exs, 3, 4, &x);
        assert_eq!(outs, vec![vec![1, 1, 0, 0]]);
        for mode in [Mode::Ilp, Mode::Lp] {
            assert_eq!(predict_with_denotations(&exs, 3, 4, &x, mode, 7).unwrap(), Prediction::Output(cv(&[1, 1, 0, 0])));
        }
    }

    #[test]
    fn symmetric_candidates_abstain() {
        let exs = vec![CandidateExample { input: cv(&[1]), candidates: vec![cv(&[1, 0]), cv(&[0, 1])] }];
        assert_eq!(brute_force_outputs(&exs, 1, 2, &cv(&[1])).len(), 2);
        for mode in [Mode::Ilp, Mode::Lp] {
            assert_eq!(
                predict_with_denotations(&exs, 1, 2, &cv(&[1]), mode, 3).unwrap(),
                Prediction::Abstain(AbstainReason::NotUnanimous)
            );
        }
        let conflict = vec![
            CandidateExample { input: cv(&[1]), candidates: vec![cv(&[1, 0])] },
            CandidateExample { input: cv(&[1]), candidates: vec![cv(&[0, 1])] },
        ];
        assert_eq!(DenotationDecider::train(&conflict, 1, 2, Mode::Ilp, 0).unwrap_err(), Error::InfeasibleData);
    }

    #[test]
    fn singleton_candidates_match_plain_decider() {
        let d = running();
        let exs: Vec<CandidateExample> =
            d.examples().map(|e| CandidateExample { input: e.input, candidates: vec![e.output] }).collect();
        let den = DenotationDecider::train(&exs, 6, 4, Mode::Ilp, 5).unwrap();
        let plain = train(&d, Mode::Ilp, 0, 5).unwrap();
        for x in [[1, 1, 1, 0, 0, 0], [1, 0, 1, 0, 0, 0], [0, 0, 0, 1, 1, 1], [0, 1, 1, 0, 0, 0]] {
            assert_eq!(den.predict(&cv(&x)).unwrap(), plain.predict(&cv(&x)).unwrap());
        }
    }

    /// Paraphrase test through `α − β ∈ null(Tᵀ)`.
    fn null_space_paraphrase(d: &Dataset, x: &CountVector, x2: &CountVector) -> Option<bool> {
        let s = RationalMatrix::from_u64_rows(d.s(), d.n_source());
        let to_r = |v: &CountVector| v.counts().iter().map(|&c| rat_u64(c)).collect::<Vec<_>>();
        let a = row_space_membership(&s, &to_r(x))?;
        let b = row_space_membership(&s, &to_r(x2))?;
        let diff: Vec<Rational> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
        let tt = RationalMatrix::from_u64_rows(d.t(), d.n_target()).transpose();
        // diff ∈ null(Tᵀ) iff Tᵀ diff = 0; also check against a null-space basis.
        let prod: Vec<Rational> =
            (0..tt.rows()).map(|i| tt.row(i).iter().zip(&diff).map(|(u, v)| u * v).sum()).collect();
        let direct = prod.iter().all(Zero::is_zero);
        let nb = null_space_basis(&tt);
        let in_span = if nb.dim() == 0 {
            diff.iter().all(Zero::is_zero)
        } else {
            let mut cols: Vec<Vec<Rational>> =
                (0..nb.dim()).map(|k| (0..nb.b.rows()).map(|i| nb.b.get(i, k).clone()).collect()).collect();
            let base = crate::linalg::rank(&RationalMatrix::from_rows(cols.clone(), diff.len()));
            cols.push(diff.clone());
            crate::linalg::rank(&RationalMatrix::from_rows(cols, diff.len())) == base
        };
        assert_eq!(direct, in_span);
        Some(direct)
    }

    fn planted() -> impl Strategy<Value = (Dataset, Vec<CountVector>)> {
        (2usize..=5, 1usize..=3).prop_flat_map(|(ns, nt)| {
            (
                proptest::collection::vec(0u64..=2, ns * nt),
                proptest::collection::vec(proptest::collection::vec(0u64..=1, ns), 1..=5),
                proptest::collection::vec(proptest::collection::vec(0u64..=2, ns), 6),
            )
                .prop_map(move |(m, rows, pool)| {
                    let m = Mapping::from_entries(ns, nt, m).unwrap();
                    let t = rows.iter().map(|x| m.apply(x)).collect();
                    let pool = pool.into_iter().map(CountVector::from_counts).collect();
                    (Dataset::from_matrices(rows, t, ns, nt).unwrap(), pool)
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn paraphrase_is_equivalence((d, pool) in planted()) {
            let dec = train(&d, Mode::Ls, 0, 0).unwrap();
            let safe: Vec<&CountVector> = pool.iter().filter(|x| dec.ls_output(x).unwrap().is_some()).collect();
            for a in &safe {
                prop_assert!(are_paraphrases(a, a, &dec).unwrap());
                for b in &safe {
                    let ab = are_paraphrases(a, b, &dec).unwrap();
                    prop_assert_eq!(ab, are_paraphrases(b, a, &dec).unwrap());
                    prop_assert_eq!(Some(ab), null_space_paraphrase(&d, a, b));
                    prop_assert_eq!(ab, dec.predict(a).unwrap() == dec.predict(b).unwrap());
                    for c in &safe {
                        if ab && are_paraphrases(b, c, &dec).unwrap() {
                            prop_assert!(are_paraphrases(a, c, &dec).unwrap());
                        }
                    }
                }
            }
        }

        #[test]
        fn active_training_matches_full((d, pool) in planted()) {
            let inputs: Vec<CountVector> = d.examples().map(|e| e.input).collect();
            let (q, st) = active_select(&inputs);
            let full_rank = crate::linalg::rank(&RationalMatrix::from_u64_rows(d.s(), d.n_source()));
            prop_assert_eq!(q.len(), full_rank);
            prop_assert_eq!(st.rank(), full_rank);
            let full = train(&d, Mode::Ls, 0, 0).unwrap();
            let active = train(&d.select_rows(&q), Mode::Ls, 0, 0).unwrap();
            for x in pool.iter().chain(&inputs) {
                prop_assert_eq!(full.ls_output(x).unwrap(), active.ls_output(x).unwrap());
            }
        }
    }
}
