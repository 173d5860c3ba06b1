//! Semantic-parsing front end: k-gram source atoms, target-atom schemes,
//! logical-form reconstruction and safe-span annotation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bag::{bag_from_known_tokens, bag_from_tokens, CountVector, Dataset, Prediction, UnseenPolicy, Vocabulary};
use crate::error::{Error, Result};
use crate::unanimity::{Decider, Mode};

/// Default budget on partial trees explored by [`reconstruct`].
pub const RECONSTRUCT_BUDGET: usize = 100_000;
const ROOT: &str = "<root>";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    pub k: usize,
    /// Appended to every sentence when set.
    pub null_token: Option<String>,
    /// Token rewrites applied before k-grams are formed (e.g. entity name to type).
    #[serde(default)]
    pub entity_map: BTreeMap<String, String>,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig { k: 2, null_token: Some("<null>".into()), entity_map: BTreeMap::new() }
    }
}

impl FeaturizerConfig {
    pub fn words() -> Self {
        FeaturizerConfig { k: 1, null_token: None, entity_map: BTreeMap::new() }
    }
}

/// Contiguous k-grams of the token sequence, optionally padded with the null token.
pub fn kgrams<S: AsRef<str>>(tokens: &[S], cfg: &FeaturizerConfig, pad: bool) -> Vec<String> {
    let k = cfg.k.max(1);
    let mut seq: Vec<&str> = tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            cfg.entity_map.get(t).map_or(t, String::as_str)
        })
        .collect();
    if pad {
        if let Some(n) = &cfg.null_token {
            seq.push(n);
        }
    }
    if seq.len() < k {
        return Vec::new();
    }
    seq.windows(k).map(|w| w.join(" ")).collect()
}

/// Bag of k-grams of the padded sentence.
pub fn featurize<S: AsRef<str>>(
    tokens: &[S],
    cfg: &FeaturizerConfig,
    vocab: &mut Vocabulary,
    policy: UnseenPolicy,
) -> Result<CountVector> {
    bag_from_tokens(&kgrams(tokens, cfg, true), vocab, policy)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetScheme {
    /// Predicate names only.
    #[serde(rename = "A")]
    PredicatesOnly,
    /// Predicates conjoined with their argument position, e.g. `loc_1`.
    #[default]
    #[serde(rename = "B")]
    PredicateWithArgOrder,
}

impl FromStr for TargetScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" | "predicates" => Ok(TargetScheme::PredicatesOnly),
            "B" | "b" | "arg-order" | "predicate-arg" => Ok(TargetScheme::PredicateWithArgOrder),
            _ => Err(Error::Format(format!("unknown target scheme `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Term {
    pub label: String,
    pub args: Vec<Term>,
}

impl Term {
    pub fn leaf(label: impl Into<String>) -> Self {
        Term { label: label.into(), args: Vec::new() }
    }

    pub fn node(label: impl Into<String>, args: Vec<Term>) -> Self {
        Term { label: label.into(), args }
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Term)) {
        f(self);
        for a in &self.args {
            a.visit(f);
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{a}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

/// A conjunction of terms; variable-free functional forms have a single term.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LogicalForm {
    pub conjuncts: Vec<Term>,
}

impl LogicalForm {
    pub fn single(t: Term) -> Self {
        LogicalForm { conjuncts: vec![t] }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut p = Parser { s: s.as_bytes(), pos: 0 };
        let mut conjuncts = vec![p.term()?];
        loop {
            p.skip_ws();
            match p.peek() {
                None => break,
                Some(b',') => {
                    p.pos += 1;
                    conjuncts.push(p.term()?);
                }
                Some(c) => return Err(p.error(&format!("unexpected `{}`", c as char))),
            }
        }
        Ok(LogicalForm { conjuncts })
    }

    /// Renames predicate bases (keeping any `_<n>` suffix) and constants.
    pub fn renamed(&self, table: &BTreeMap<String, String>) -> Self {
        fn go(t: &Term, table: &BTreeMap<String, String>) -> Term {
            let label = if let Some(r) = table.get(&t.label) {
                r.clone()
            } else {
                let (base, suffix) = split_arg_suffix(&t.label);
                match table.get(base) {
                    Some(r) => format!("{r}{suffix}"),
                    None => t.label.clone(),
                }
            };
            Term { label, args: t.args.iter().map(|a| go(a, table)).collect() }
        }
        LogicalForm { conjuncts: self.conjuncts.iter().map(|t| go(t, table)).collect() }
    }
}

impl fmt::Display for LogicalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.conjuncts.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl FromStr for LogicalForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LogicalForm::parse(s)
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|c| c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn error(&self, msg: &str) -> Error {
        Error::ParseLogicalForm(format!("{msg} at byte {}", self.pos))
    }

    fn term(&mut self) -> Result<Term> {
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(|c| !matches!(c, b'(' | b')' | b',') && !c.is_ascii_whitespace()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected an atom"));
        }
        let label = std::str::from_utf8(&self.s[start..self.pos])
            .map_err(|_| self.error("invalid utf-8"))?
            .to_string();
        self.skip_ws();
        let mut args = Vec::new();
        if self.peek() == Some(b'(') {
            self.pos += 1;
            loop {
                args.push(self.term()?);
                self.skip_ws();
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(self.error("expected `,` or `)`")),
                }
            }
        }
        Ok(Term { label, args })
    }
}

/// Variables are a lowercase letter optionally followed by digits (`x`, `y1`).
pub fn is_variable(label: &str) -> bool {
    let mut cs = label.chars();
    matches!(cs.next(), Some(c) if c.is_ascii_lowercase()) && cs.all(|c| c.is_ascii_digit())
}

fn split_arg_suffix(label: &str) -> (&str, &str) {
    if let Some(i) = label.rfind('_') {
        let tail = &label[i + 1..];
        if i > 0 && !tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit()) {
            return (&label[..i], &label[i..]);
        }
    }
    (label, "")
}

/// Target atoms of a logical form, variables excluded.
pub fn target_atoms(lf: &LogicalForm, scheme: TargetScheme) -> Vec<String> {
    let mut out = Vec::new();
    for t in &lf.conjuncts {
        t.visit(&mut |n| {
            if !is_variable(&n.label) {
                out.push(match scheme {
                    TargetScheme::PredicatesOnly => split_arg_suffix(&n.label).0.to_string(),
                    TargetScheme::PredicateWithArgOrder => n.label.clone(),
                });
            }
        });
    }
    out
}

pub fn encode_targets(
    lf: &LogicalForm,
    scheme: TargetScheme,
    vocab: &mut Vocabulary,
    policy: UnseenPolicy,
) -> Result<CountVector> {
    bag_from_tokens(&target_atoms(lf, scheme), vocab, policy)
}

/// Observed `(parent, slot, child)` attachments; slots are 1-based. Roots are
/// recorded as children of a virtual `<root>` parent at slot 0.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CompatibilityTable {
    edges: BTreeSet<(String, usize, String)>,
}

impl CompatibilityTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_edges<I, A, B>(edges: I) -> Self
    where
        I: IntoIterator<Item = (A, usize, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        CompatibilityTable { edges: edges.into_iter().map(|(p, s, c)| (p.into(), s, c.into())).collect() }
    }

    pub fn from_forms<'a>(forms: impl IntoIterator<Item = &'a LogicalForm>) -> Self {
        let mut table = Self::new();
        for lf in forms {
            table.add_form(lf);
        }
        table
    }

    pub fn add_form(&mut self, lf: &LogicalForm) {
        fn go(t: &Term, edges: &mut BTreeSet<(String, usize, String)>) {
            for (i, a) in t.args.iter().enumerate() {
                if !is_variable(&a.label) {
                    edges.insert((t.label.clone(), i + 1, a.label.clone()));
                }
                go(a, edges);
            }
        }
        for t in &lf.conjuncts {
            if !is_variable(&t.label) {
                self.edges.insert((ROOT.to_string(), 0, t.label.clone()));
            }
            go(t, &mut self.edges);
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = &(String, usize, String)> {
        self.edges.iter()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, parent: &str, slot: usize, child: &str) -> bool {
        self.edges.contains(&(parent.to_string(), slot, child.to_string()))
    }

    /// Largest slot seen under `label`; 0 for leaves.
    pub fn arity(&self, label: &str) -> usize {
        self.edges.iter().filter(|(p, _, _)| p == label).map(|(_, s, _)| *s).max().unwrap_or(0)
    }

    fn has_roots(&self) -> bool {
        self.edges.iter().any(|(p, _, _)| p == ROOT)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Reconstruction {
    Unique(LogicalForm),
    /// No tree (`n_found == 0`) or more than one.
    Abstain { n_found: usize },
}

/// All trees using every atom exactly its multiplicity, each edge licensed by
/// the table; unique iff exactly one exists.
pub fn reconstruct(bag: &CountVector, vocab: &Vocabulary, table: &CompatibilityTable) -> Result<Reconstruction> {
    reconstruct_with_budget(bag, vocab, table, RECONSTRUCT_BUDGET)
}

pub fn reconstruct_with_budget(
    bag: &CountVector,
    vocab: &Vocabulary,
    table: &CompatibilityTable,
    budget: usize,
) -> Result<Reconstruction> {
    let mut remaining: BTreeMap<String, u64> = BTreeMap::new();
    for s in bag.support() {
        remaining.insert(vocab.atom(s).to_string(), bag[s]);
    }
    if remaining.is_empty() {
        return Ok(Reconstruction::Abstain { n_found: 0 });
    }
    let labels: Vec<String> = remaining.keys().cloned().collect();
    let arity: BTreeMap<&str, usize> = labels.iter().map(|l| (l.as_str(), table.arity(l))).collect();
    let mut search = Search { table, arity: &arity, labels: &labels, explored: 0, budget, found: Vec::new() };
    let mut seq = Vec::new();
    let mut pending = vec![(ROOT.to_string(), 0usize)];
    search.dfs(&mut remaining, &mut pending, &mut seq)?;
    Ok(match search.found.len() {
        1 => Reconstruction::Unique(LogicalForm::single(build_tree(&search.found[0], &arity, &mut 0))),
        n => Reconstruction::Abstain { n_found: n },
    })
}

struct Search<'a> {
    table: &'a CompatibilityTable,
    arity: &'a BTreeMap<&'a str, usize>,
    labels: &'a [String],
    explored: usize,
    budget: usize,
    found: Vec<Vec<String>>,
}

impl Search<'_> {
    /// Fills open slots in preorder. `pending` is a stack of `(parent, slot)`.
    fn dfs(
        &mut self,
        remaining: &mut BTreeMap<String, u64>,
        pending: &mut Vec<(String, usize)>,
        seq: &mut Vec<String>,
    ) -> Result<()> {
        if self.found.len() > 1 {
            return Ok(());
        }
        self.explored += 1;
        if self.explored > self.budget {
            return Err(Error::SearchBudgetExceeded(self.budget));
        }
        let left: u64 = remaining.values().sum();
        let Some((parent, slot)) = pending.pop() else {
            if left == 0 {
                self.found.push(seq.clone());
            }
            return Ok(());
        };
        if (pending.len() as u64) + 1 > left {
            pending.push((parent, slot));
            return Ok(());
        }
        let free_root = parent == ROOT && !self.table.has_roots();
        for label in self.labels {
            if remaining[label] == 0 || !(free_root || self.table.contains(&parent, slot, label)) {
                continue;
            }
            *remaining.get_mut(label).expect("label") -= 1;
            let a = self.arity[label.as_str()];
            let depth = pending.len();
            for s in (1..=a).rev() {
                pending.push((label.clone(), s));
            }
            seq.push(label.clone());
            self.dfs(remaining, pending, seq)?;
            seq.pop();
            pending.truncate(depth);
            *remaining.get_mut(label).expect("label") += 1;
        }
        pending.push((parent, slot));
        Ok(())
    }
}

fn build_tree(seq: &[String], arity: &BTreeMap<&str, usize>, pos: &mut usize) -> Term {
    let label = seq[*pos].clone();
    *pos += 1;
    let a = arity[label.as_str()];
    let args = (0..a).map(|_| build_tree(seq, arity, pos)).collect();
    Term { label, args }
}

/// A contiguous token range `[start, end)` whose bag is safe, with its output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafeSpan {
    pub start: usize,
    pub end: usize,
    pub output: CountVector,
}

/// Every contiguous span whose bag is in the linear-system safe set, shortest
/// first. Only spans reaching the end of the sentence get the null token.
pub fn annotate_safe_spans<S: AsRef<str>>(tokens: &[S], dec: &Decider, cfg: &FeaturizerConfig) -> Result<Vec<SafeSpan>> {
    if dec.mode() != Mode::Ls {
        return Err(Error::WrongMode("LS"));
    }
    let vocab = dec.dataset().source_vocab();
    let n = tokens.len();
    let mut out = Vec::new();
    for len in 1..=n {
        for start in 0..=n - len {
            let end = start + len;
            let grams = kgrams(&tokens[start..end], cfg, end == n);
            let (x, unseen) = bag_from_known_tokens(&grams, vocab);
            if unseen || x.is_zero() {
                continue;
            }
            if let Prediction::Output(y) = dec.predict(&x)? {
                out.push(SafeSpan { start, end, output: y });
            }
        }
    }
    Ok(out)
}

/// An utterance paired with a logical form, as in GeoQuery-style corpora.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedExample {
    pub utterance: Vec<String>,
    pub logical_form: String,
}

/// Featurizes utterances, encodes logical forms (after renaming) and collects
/// the compatibility table.
pub fn build_semparse_dataset(
    examples: &[ParsedExample],
    cfg: &FeaturizerConfig,
    scheme: TargetScheme,
    renames: &BTreeMap<String, String>,
) -> Result<(Dataset, CompatibilityTable)> {
    let mut pairs = Vec::with_capacity(examples.len());
    let mut table = CompatibilityTable::new();
    for ex in examples {
        let lf = LogicalForm::parse(&ex.logical_form)?.renamed(renames);
        table.add_form(&lf);
        pairs.push((kgrams(&ex.utterance, cfg, true), target_atoms(&lf, scheme)));
    }
    Ok((Dataset::from_token_pairs(&pairs), table))
}
