//! Vocabularies, bags of atoms and the paired `S`/`T` training matrices.
//!
//! A bag (multiset) of atoms is stored as a [`CountVector`] over a
//! [`Vocabulary`]. A [`Dataset`] stacks the input bags into `S` and the output
//! bags into `T`, so that a mapping `M` is consistent with the data exactly when
//! `S M = T`.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered list of distinct atoms. Positions are fixed by insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    atoms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary from atoms in first-appearance order, skipping repeats.
    pub fn from_atoms<I, S>(atoms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Self::new();
        for a in atoms {
            vocab.insert(a.as_ref());
        }
        vocab
    }

    /// Returns the position of `atom`, appending it if new.
    pub fn insert(&mut self, atom: &str) -> usize {
        if let Some(&i) = self.index.get(atom) {
            return i;
        }
        let i = self.atoms.len();
        self.atoms.push(atom.to_string());
        self.index.insert(atom.to_string(), i);
        i
    }

    pub fn get(&self, atom: &str) -> Option<usize> {
        self.index.get(atom).copied()
    }

    pub fn atom(&self, i: usize) -> &str {
        &self.atoms[i]
    }

    pub fn atoms(&self) -> &[String] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.atoms.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let atoms = Vec::<String>::deserialize(d)?;
        let vocab = Vocabulary::from_atoms(&atoms);
        if vocab.len() != atoms.len() {
            return Err(serde::de::Error::custom("duplicate atom in vocabulary"));
        }
        Ok(vocab)
    }
}

/// What to do with a token that is not in the vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnseenPolicy {
    Reject,
    Extend,
}

/// A bag of atoms as a vector of non-negative counts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CountVector(Vec<u64>);

impl CountVector {
    pub fn zeros(len: usize) -> Self {
        CountVector(vec![0; len])
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        CountVector(counts)
    }

    pub fn counts(&self) -> &[u64] {
        &self.0
    }

    pub fn into_counts(self) -> Vec<u64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    /// Total number of atoms in the bag.
    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    /// Indices with a positive count.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, _)| i)
    }

    /// Pads with zeros up to `len` (used after a vocabulary has grown).
    pub fn resized(&self, len: usize) -> Self {
        let mut v = self.0.clone();
        v.resize(len, 0);
        CountVector(v)
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&c| c as f64).collect()
    }

    /// Decodes the bag back into tokens, atoms repeated by multiplicity, in vocabulary order.
    pub fn to_tokens(&self, vocab: &Vocabulary) -> Vec<String> {
        let mut out = Vec::new();
        for (i, &c) in self.0.iter().enumerate() {
            for _ in 0..c {
                out.push(vocab.atom(i).to_string());
            }
        }
        out
    }
}

impl std::ops::Index<usize> for CountVector {
    type Output = u64;
    fn index(&self, i: usize) -> &u64 {
        &self.0[i]
    }
}

/// Encodes a token list as a bag over `vocab`.
pub fn bag_from_tokens<S: AsRef<str>>(
    tokens: &[S],
    vocab: &mut Vocabulary,
    policy: UnseenPolicy,
) -> Result<CountVector> {
    let mut idx = Vec::with_capacity(tokens.len());
    for t in tokens {
        let t = t.as_ref();
        let i = match (vocab.get(t), policy) {
            (Some(i), _) => i,
            (None, UnseenPolicy::Extend) => vocab.insert(t),
            (None, UnseenPolicy::Reject) => return Err(Error::UnseenAtom(t.to_string())),
        };
        idx.push(i);
    }
    let mut counts = vec![0u64; vocab.len()];
    for i in idx {
        counts[i] += 1;
    }
    Ok(CountVector(counts))
}

/// Like [`bag_from_tokens`] with a fixed vocabulary, but reports whether any
/// token was unseen instead of failing. Unseen tokens are dropped from the bag.
pub fn bag_from_known_tokens<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> (CountVector, bool) {
    let mut counts = vec![0u64; vocab.len()];
    let mut unseen = false;
    for t in tokens {
        match vocab.get(t.as_ref()) {
            Some(i) => counts[i] += 1,
            None => unseen = true,
        }
    }
    (CountVector(counts), unseen)
}

/// One input/output pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub input: CountVector,
    pub output: CountVector,
}

/// Training data as the matrices `S` (inputs) and `T` (outputs).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    source_vocab: Vocabulary,
    target_vocab: Vocabulary,
    s: Vec<Vec<u64>>,
    t: Vec<Vec<u64>>,
}

impl Dataset {
    /// Stacks examples into `S` and `T`; every vector must match its vocabulary length.
    pub fn new(source_vocab: Vocabulary, target_vocab: Vocabulary, examples: &[Example]) -> Result<Self> {
        let (ns, nt) = (source_vocab.len(), target_vocab.len());
        let mut s = Vec::with_capacity(examples.len());
        let mut t = Vec::with_capacity(examples.len());
        for ex in examples {
            if ex.input.len() != ns {
                return Err(Error::DimensionMismatch { expected: ns, got: ex.input.len() });
            }
            if ex.output.len() != nt {
                return Err(Error::DimensionMismatch { expected: nt, got: ex.output.len() });
            }
            s.push(ex.input.counts().to_vec());
            t.push(ex.output.counts().to_vec());
        }
        Ok(Dataset { source_vocab, target_vocab, s, t })
    }

    /// Builds vocabularies in first-appearance order and encodes the pairs.
    pub fn from_token_pairs<A: AsRef<str>, B: AsRef<str>>(pairs: &[(Vec<A>, Vec<B>)]) -> Self {
        let mut sv = Vocabulary::new();
        let mut tv = Vocabulary::new();
        for (x, y) in pairs {
            x.iter().for_each(|a| {
                sv.insert(a.as_ref());
            });
            y.iter().for_each(|a| {
                tv.insert(a.as_ref());
            });
        }
        let examples: Vec<Example> = pairs
            .iter()
            .map(|(x, y)| Example {
                input: bag_from_tokens(x, &mut sv, UnseenPolicy::Reject).expect("vocab built above"),
                output: bag_from_tokens(y, &mut tv, UnseenPolicy::Reject).expect("vocab built above"),
            })
            .collect();
        Dataset::new(sv, tv, &examples).expect("lengths match by construction")
    }

    /// A dataset with the given vocabularies and no rows.
    pub fn empty(source_vocab: Vocabulary, target_vocab: Vocabulary) -> Self {
        Dataset { source_vocab, target_vocab, s: Vec::new(), t: Vec::new() }
    }

    /// Builds directly from count matrices, using positional atom names `s0..`/`t0..`.
    pub fn from_matrices(s: Vec<Vec<u64>>, t: Vec<Vec<u64>>, ns: usize, nt: usize) -> Result<Self> {
        let sv = Vocabulary::from_atoms((0..ns).map(|i| format!("s{i}")));
        let tv = Vocabulary::from_atoms((0..nt).map(|i| format!("t{i}")));
        let examples: Vec<Example> = s
            .into_iter()
            .zip(t)
            .map(|(x, y)| Example { input: CountVector(x), output: CountVector(y) })
            .collect();
        Dataset::new(sv, tv, &examples)
    }

    pub fn source_vocab(&self) -> &Vocabulary {
        &self.source_vocab
    }

    pub fn target_vocab(&self) -> &Vocabulary {
        &self.target_vocab
    }

    pub fn n_examples(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn n_source(&self) -> usize {
        self.source_vocab.len()
    }

    pub fn n_target(&self) -> usize {
        self.target_vocab.len()
    }

    pub fn s(&self) -> &[Vec<u64>] {
        &self.s
    }

    pub fn t(&self) -> &[Vec<u64>] {
        &self.t
    }

    pub fn example(&self, i: usize) -> Example {
        Example { input: CountVector(self.s[i].clone()), output: CountVector(self.t[i].clone()) }
    }

    pub fn examples(&self) -> impl Iterator<Item = Example> + '_ {
        (0..self.n_examples()).map(|i| self.example(i))
    }

    /// Keeps the given rows, in the given order. Vocabularies are unchanged.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            source_vocab: self.source_vocab.clone(),
            target_vocab: self.target_vocab.clone(),
            s: rows.iter().map(|&i| self.s[i].clone()).collect(),
            t: rows.iter().map(|&i| self.t[i].clone()).collect(),
        }
    }

    /// Drops row `i`.
    pub fn without_row(&self, i: usize) -> Dataset {
        let rows: Vec<usize> = (0..self.n_examples()).filter(|&r| r != i).collect();
        self.select_rows(&rows)
    }

    /// Replaces the output matrix (same shape).
    pub fn with_outputs(&self, t: Vec<Vec<u64>>) -> Result<Dataset> {
        if t.len() != self.t.len() {
            return Err(Error::DimensionMismatch { expected: self.t.len(), got: t.len() });
        }
        for row in &t {
            if row.len() != self.n_target() {
                return Err(Error::DimensionMismatch { expected: self.n_target(), got: row.len() });
            }
        }
        Ok(Dataset { t, ..self.clone() })
    }

    /// Appends an example over the same vocabularies.
    pub fn push(&mut self, ex: Example) -> Result<()> {
        if ex.input.len() != self.n_source() {
            return Err(Error::DimensionMismatch { expected: self.n_source(), got: ex.input.len() });
        }
        if ex.output.len() != self.n_target() {
            return Err(Error::DimensionMismatch { expected: self.n_target(), got: ex.output.len() });
        }
        self.s.push(ex.input.into_counts());
        self.t.push(ex.output.into_counts());
        Ok(())
    }

    /// Source atoms that occur in at least one training input.
    pub fn seen_sources(&self) -> Vec<bool> {
        let mut seen = vec![false; self.n_source()];
        for row in &self.s {
            for (j, &c) in row.iter().enumerate() {
                if c > 0 {
                    seen[j] = true;
                }
            }
        }
        seen
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("dataset serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// `n_s x n_t` mapping matrix, row-major. `M[s][t]` is how many copies of
/// target atom `t` each occurrence of source atom `s` contributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mapping<T> {
    n_source: usize,
    n_target: usize,
    entries: Vec<T>,
}

impl<T: Copy + Default> Mapping<T> {
    pub fn zeros(n_source: usize, n_target: usize) -> Self {
        Mapping { n_source, n_target, entries: vec![T::default(); n_source * n_target] }
    }

    pub fn from_entries(n_source: usize, n_target: usize, entries: Vec<T>) -> Result<Self> {
        if entries.len() != n_source * n_target {
            return Err(Error::DimensionMismatch { expected: n_source * n_target, got: entries.len() });
        }
        Ok(Mapping { n_source, n_target, entries })
    }

    pub fn n_source(&self) -> usize {
        self.n_source
    }

    pub fn n_target(&self) -> usize {
        self.n_target
    }

    pub fn get(&self, s: usize, t: usize) -> T {
        self.entries[s * self.n_target + t]
    }

    pub fn set(&mut self, s: usize, t: usize, v: T) {
        self.entries[s * self.n_target + t] = v;
    }

    /// Row-major `vec(M)`; coordinate `s * n_t + t`.
    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn row(&self, s: usize) -> &[T] {
        &self.entries[s * self.n_target..(s + 1) * self.n_target]
    }
}

impl Mapping<u64> {
    /// `x M` over integers.
    pub fn apply(&self, x: &[u64]) -> Vec<u64> {
        let mut y = vec![0u64; self.n_target];
        for (s, &c) in x.iter().enumerate() {
            if c == 0 {
                continue;
            }
            for (t, yt) in y.iter_mut().enumerate() {
                *yt += c * self.get(s, t);
            }
        }
        y
    }

    pub fn to_f64(&self) -> Mapping<f64> {
        Mapping {
            n_source: self.n_source,
            n_target: self.n_target,
            entries: self.entries.iter().map(|&v| v as f64).collect(),
        }
    }
}

impl Mapping<f64> {
    /// `x M` in floating point.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_target];
        for (s, &c) in x.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (t, yt) in y.iter_mut().enumerate() {
                *yt += c * self.get(s, t);
            }
        }
        y
    }

    /// Largest absolute entry of `S M - T`.
    pub fn max_residual(&self, d: &Dataset) -> f64 {
        let mut worst: f64 = 0.0;
        for (x, y) in d.s().iter().zip(d.t()) {
            let xf: Vec<f64> = x.iter().map(|&c| c as f64).collect();
            for (p, &q) in self.apply(&xf).iter().zip(y) {
                worst = worst.max((p - q as f64).abs());
            }
        }
        worst
    }
}

/// Why a decider declined to answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AbstainReason {
    NotUnanimous,
    UnseenAtom,
    NonIntegralOutput,
    InfeasibleModel,
}

impl fmt::Display for AbstainReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AbstainReason::NotUnanimous => "NotUnanimous",
            AbstainReason::UnseenAtom => "UnseenAtom",
            AbstainReason::NonIntegralOutput => "NonIntegralOutput",
            AbstainReason::InfeasibleModel => "InfeasibleModel",
        };
        f.write_str(s)
    }
}

/// A concrete output bag or "don't know".
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Prediction {
    Output(CountVector),
    Abstain(AbstainReason),
}

impl Prediction {
    pub fn output(&self) -> Option<&CountVector> {
        match self {
            Prediction::Output(y) => Some(y),
            Prediction::Abstain(_) => None,
        }
    }

    pub fn is_abstain(&self) -> bool {
        matches!(self, Prediction::Abstain(_))
    }
}

/// One line of the JSONL dataset format. Exactly one of `target` and
/// `candidates` is expected; `candidates` is the denotation variant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExample {
    pub source: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<Vec<String>>>,
}

impl RawExample {
    pub fn pair(source: Vec<String>, target: Vec<String>) -> Self {
        RawExample { source, target: Some(target), candidates: None }
    }
}

/// Reads one JSON object per non-blank line.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<RawExample>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: RawExample = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(mut w: W, examples: &[RawExample]) -> Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Encodes input/output JSONL records into a dataset, building vocabularies
/// by first appearance. Records without a `target` are rejected.
pub fn dataset_from_raw(raw: &[RawExample]) -> Result<Dataset> {
    let mut pairs = Vec::with_capacity(raw.len());
    for (i, r) in raw.iter().enumerate() {
        let target = r
            .target
            .clone()
            .ok_or_else(|| Error::Format(format!("record {} has no `target`", i + 1)))?;
        pairs.push((r.source.clone(), target));
    }
    Ok(Dataset::from_token_pairs(&pairs))
}

/// Decodes every row of `d` back into a JSONL record.
pub fn dataset_to_raw(d: &Dataset) -> Vec<RawExample> {
    d.examples()
        .map(|ex| {
            RawExample::pair(ex.input.to_tokens(d.source_vocab()), ex.output.to_tokens(d.target_vocab()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn running_vocab() -> Vocabulary {
        Vocabulary::from_atoms(["area", "of", "Ohio", "cities", "in", "Iowa"])
    }

    #[test]
    fn area_of_ohio_vector() {
        let mut v = running_vocab();
        let x = bag_from_tokens(&["area", "of", "Ohio"], &mut v, UnseenPolicy::Reject).unwrap();
        assert_eq!(x.counts(), &[1, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn empty_and_repeated_bags() {
        let mut v = running_vocab();
        let empty: [&str; 0] = [];
        assert!(bag_from_tokens(&empty, &mut v, UnseenPolicy::Reject).unwrap().is_zero());
        let x = bag_from_tokens(&["Iowa", "Iowa"], &mut v, UnseenPolicy::Reject).unwrap();
        assert_eq!(x.counts(), &[0, 0, 0, 0, 0, 2]);
    }

    #[test]
    fn unseen_policy() {
        let mut v = running_vocab();
        assert_eq!(
            bag_from_tokens(&["Texas"], &mut v, UnseenPolicy::Reject),
            Err(Error::UnseenAtom("Texas".into()))
        );
        let x = bag_from_tokens(&["Texas", "of"], &mut v, UnseenPolicy::Extend).unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(x.counts(), &[0, 1, 0, 0, 0, 0, 1]);
    }

    #[test]
    fn running_matrices() {
        let d = Dataset::from_token_pairs(&[
            (vec!["area", "of", "Iowa"], vec!["area", "IA"]),
            (vec!["cities", "in", "Ohio"], vec!["city", "OH"]),
            (vec!["cities", "in", "Iowa"], vec!["city", "IA"]),
        ]);
        // first-appearance order: area of Iowa cities in Ohio / area IA city OH
        assert_eq!(d.source_vocab().atoms(), &["area", "of", "Iowa", "cities", "in", "Ohio"]);
        assert_eq!(d.s(), &[vec![1, 1, 1, 0, 0, 0], vec![0, 0, 0, 1, 1, 1], vec![0, 0, 1, 1, 1, 0]]);
        assert_eq!(d.t(), &[vec![1, 1, 0, 0], vec![0, 0, 1, 1], vec![0, 1, 1, 0]]);
    }

    #[test]
    fn singleton_dataset_and_mismatch() {
        let sv = Vocabulary::from_atoms(["a", "b"]);
        let tv = Vocabulary::from_atoms(["x"]);
        let ex = Example { input: CountVector::from_counts(vec![1, 2]), output: CountVector::from_counts(vec![3]) };
        let d = Dataset::new(sv.clone(), tv.clone(), std::slice::from_ref(&ex)).unwrap();
        assert_eq!(d.s(), &[vec![1, 2]]);
        assert_eq!(d.t(), &[vec![3]]);
        let bad = Example { input: CountVector::from_counts(vec![1]), output: CountVector::from_counts(vec![3]) };
        assert_eq!(
            Dataset::new(sv, tv, &[bad]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        );
    }

    #[test]
    fn jsonl_round_trip_and_denotations() {
        let text = r#"{"source": ["area","of","iowa"], "target": ["area","IA"]}

{"source": ["area","of","ohio"], "candidates": [["area","OH"],["zipcode","Chatfield"]]}
"#;
        let raw = read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(raw.len(), 2);
        assert_eq!(raw[1].candidates.as_ref().unwrap()[1], vec!["zipcode", "Chatfield"]);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &raw[..1]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"source\":[\"area\",\"of\",\"iowa\"],\"target\":[\"area\",\"IA\"]}\n"
        );
        assert!(dataset_from_raw(&raw).is_err());
    }

    #[test]
    fn mapping_apply_with_multiplicity() {
        // grandparent -> {parent, parent}
        let m = Mapping::from_entries(1, 1, vec![2u64]).unwrap();
        assert_eq!(m.apply(&[3]), vec![6]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tokens_round_trip(idx in proptest::collection::vec(0usize..5, 0..20)) {
                let atoms = ["a", "b", "c", "d", "e"];
                let mut vocab = Vocabulary::from_atoms(atoms);
                let tokens: Vec<&str> = idx.iter().map(|&i| atoms[i]).collect();
                let bag = bag_from_tokens(&tokens, &mut vocab, UnseenPolicy::Reject).unwrap();
                let mut back = bag.to_tokens(&vocab);
                let mut orig: Vec<String> = tokens.iter().map(|s| s.to_string()).collect();
                back.sort();
                orig.sort();
                prop_assert_eq!(back, orig);
            }
        }
    }
}
