//! Metrics, the least-squares point-estimate baseline, and experiment runners.

use std::fmt::Write as _;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bag::{AbstainReason, CountVector, Dataset, Example, Mapping, Prediction};
use crate::data::{adversarial_subsample, inject_noise, synth_generate, AdversaryObjective, NoiseSpec, SynthConfig};
use crate::error::{Error, Result};
use crate::extensions::active_select;
use crate::linalg::least_squares;
use crate::unanimity::{train, Decider, Mode};

/// The ε grid swept by the baseline.
pub const EPSILONS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
/// Values this close to an integer count as integral even at `ε = 0`.
const SNAP_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub answered: usize,
    pub correct: usize,
    pub total: usize,
}

impl PrecisionRecall {
    /// 1.0 when nothing was answered; see [`answered_none`](Self::answered_none).
    pub fn precision(&self) -> f64 {
        if self.answered == 0 {
            1.0
        } else {
            self.correct as f64 / self.answered as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    pub fn answered_none(&self) -> bool {
        self.answered == 0
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Rounding window half-width `ε ∈ [0, 0.5]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonPolicy {
    eps: f64,
}

impl EpsilonPolicy {
    pub fn new(eps: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&eps) {
            return Err(Error::Format(format!("epsilon {eps} outside [0, 0.5]")));
        }
        Ok(EpsilonPolicy { eps })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// The integer in `[y − ε, y + ε)`, if any.
    pub fn snap(&self, y: f64) -> Option<i64> {
        let n = (y - self.eps - SNAP_TOL).ceil();
        if n < y + self.eps || (n - y).abs() <= SNAP_TOL {
            Some(n as i64)
        } else {
            None
        }
    }
}

/// `y = x M̃`, answered only if every coordinate snaps to a non-negative integer.
pub fn point_estimate_predict(m: &Mapping<f64>, x: &CountVector, eps: EpsilonPolicy) -> Prediction {
    let y = m.apply(&x.resized(m.n_source()).as_f64());
    let snapped: Option<Vec<u64>> = y.iter().map(|&v| eps.snap(v).and_then(|n| u64::try_from(n).ok())).collect();
    match snapped {
        Some(c) => Prediction::Output(CountVector::from_counts(c)),
        None => Prediction::Abstain(AbstainReason::NotUnanimous),
    }
}

/// Exact-match scoring of predictions against gold bags.
pub fn evaluate(predictions: &[Prediction], gold: &[CountVector]) -> PrecisionRecall {
    let mut pr = PrecisionRecall { total: gold.len(), ..Default::default() };
    for (p, g) in predictions.iter().zip(gold) {
        if let Prediction::Output(y) = p {
            pr.answered += 1;
            if y == g {
                pr.correct += 1;
            }
        }
    }
    pr
}

pub fn evaluate_decider(dec: &Decider, test: &[Example]) -> Result<PrecisionRecall> {
    let xs: Vec<CountVector> = test.iter().map(|e| e.input.clone()).collect();
    let preds = dec.predict_many(&xs)?;
    let gold: Vec<CountVector> = test.iter().map(|e| e.output.clone()).collect();
    Ok(evaluate(&preds, &gold))
}

pub fn evaluate_point_estimate(m: &Mapping<f64>, test: &[Example], eps: EpsilonPolicy) -> PrecisionRecall {
    let preds: Vec<Prediction> = test.iter().map(|e| point_estimate_predict(m, &e.input, eps)).collect();
    let gold: Vec<CountVector> = test.iter().map(|e| e.output.clone()).collect();
    evaluate(&preds, &gold)
}

/// Best F1 of the least-squares baseline over the ε grid.
pub fn best_f1_point_estimate(train: &Dataset, test: &[Example]) -> f64 {
    let m = least_squares(train);
    EPSILONS
        .iter()
        .map(|&e| evaluate_point_estimate(&m, test, EpsilonPolicy { eps: e }).f1())
        .fold(0.0, f64::max)
}

/// Mean over sentences with non-empty gold of `100 · |gold ∩ pred| / |gold|`
/// (multiset intersection). `None` when every gold bag is empty.
pub fn partial_recovery_recall(predicted: &[CountVector], gold: &[CountVector]) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, g) in predicted.iter().zip(gold) {
        let total = g.total();
        if total == 0 {
            continue;
        }
        let inter: u64 = g.counts().iter().enumerate().map(|(i, &c)| c.min(p.counts().get(i).copied().unwrap_or(0))).sum();
        sum += 100.0 * inter as f64 / total as f64;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    FractionCurve,
    NoiseCurve,
    Adversarial,
    ActiveVsPassive,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "fraction_curve" => Ok(ExperimentKind::FractionCurve),
            "noise_curve" => Ok(ExperimentKind::NoiseCurve),
            "adversarial" => Ok(ExperimentKind::Adversarial),
            "active_vs_passive" => Ok(ExperimentKind::ActiveVsPassive),
            _ => Err(Error::Format(format!("unknown experiment `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub seed: u64,
    pub fractions: Vec<f64>,
    pub modes: Vec<Mode>,
    pub noise_synth: SynthConfig,
    pub budgets: Vec<u64>,
    pub adversarial_fraction: f64,
    pub trials: usize,
    pub objective: AdversaryObjective,
    pub adversarial_mode: Mode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            synth: SynthConfig::default(),
            seed: 0,
            fractions: (1..=10).map(|k| k as f64 / 10.0).collect(),
            modes: vec![Mode::Ilp, Mode::Lp, Mode::Ls],
            noise_synth: SynthConfig { n_train: 40, n_source: 20, n_clusters: 5, len_min: 2, len_max: 4, ..SynthConfig::default() },
            budgets: (0..=20).collect(),
            adversarial_fraction: 0.2,
            trials: 100,
            objective: AdversaryObjective::MaxDiff,
            adversarial_mode: Mode::Ls,
        }
    }
}

/// One cell of an experiment table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub series: String,
    pub x: f64,
    pub precision: f64,
    pub recall: f64,
    pub answered: usize,
    pub correct: usize,
    pub total: usize,
    /// `ok` or `failed: <reason>`.
    pub status: String,
}

impl ExperimentRow {
    fn ok(series: impl Into<String>, x: f64, pr: PrecisionRecall) -> Self {
        ExperimentRow {
            series: series.into(),
            x,
            precision: pr.precision(),
            recall: pr.recall(),
            answered: pr.answered,
            correct: pr.correct,
            total: pr.total,
            status: "ok".into(),
        }
    }

    fn failed(series: impl Into<String>, x: f64, e: &Error) -> Self {
        ExperimentRow {
            series: series.into(),
            x,
            precision: f64::NAN,
            recall: f64::NAN,
            answered: 0,
            correct: 0,
            total: 0,
            status: format!("failed: {e}"),
        }
    }

    fn from_result(series: impl Into<String>, x: f64, r: Result<PrecisionRecall>) -> Self {
        match r {
            Ok(pr) => Self::ok(series, x, pr),
            Err(e) => Self::failed(series, x, &e),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

pub const CSV_HEADER: &str = "series,x,precision,recall,answered,correct,total,status";

pub fn rows_to_csv(rows: &[ExperimentRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let status = r.status.replace(',', ";");
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{},{},{},{}",
            r.series, r.x, r.precision, r.recall, r.answered, r.correct, r.total, status
        );
    }
    out
}

pub fn write_csv<W: Write>(mut w: W, rows: &[ExperimentRow]) -> Result<()> {
    w.write_all(rows_to_csv(rows).as_bytes())?;
    Ok(())
}

/// Seeded permutation of the training rows; prefixes give nested subsamples.
pub fn prefix_order(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

pub fn prefix_len(fraction: f64, n: usize) -> usize {
    (((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

fn train_eval(d: &Dataset, mode: Mode, n_mistakes: u64, seed: u64, test: &[Example]) -> Result<PrecisionRecall> {
    evaluate_decider(&train(d, mode, n_mistakes, seed)?, test)
}

pub fn run_experiment(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    match kind {
        ExperimentKind::FractionCurve => fraction_curve(cfg),
        ExperimentKind::NoiseCurve => noise_curve(cfg),
        ExperimentKind::Adversarial => adversarial(cfg),
        ExperimentKind::ActiveVsPassive => active_vs_passive(cfg),
    }
}

/// Recall and precision of each mode on nested prefixes of the training data.
fn fraction_curve(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    let data = synth_generate(&cfg.synth)?;
    let order = prefix_order(data.train.n_examples(), cfg.seed);
    let cells: Vec<(f64, Mode)> =
        cfg.fractions.iter().flat_map(|&f| cfg.modes.iter().map(move |&m| (f, m))).collect();
    Ok(cells
        .par_iter()
        .map(|&(f, mode)| {
            let sub = data.train.select_rows(&order[..prefix_len(f, order.len())]);
            ExperimentRow::from_result(mode.name(), f, train_eval(&sub, mode, 0, cfg.seed, &data.test))
        })
        .collect())
}

/// The noise-budget decider trained on data carrying exactly `k` edits, for
/// each budget `k`. Edits are nested across budgets.
fn noise_curve(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    let data = synth_generate(&cfg.noise_synth)?;
    Ok(cfg
        .budgets
        .par_iter()
        .map(|&k| {
            let r = inject_noise(&data.train, NoiseSpec { n_mistakes: k, seed: cfg.seed })
                .and_then(|noisy| train_eval(&noisy, Mode::Ilp, k, cfg.seed, &data.test));
            ExperimentRow::from_result("ILP_noise", k as f64, r)
        })
        .collect())
}

/// Unanimous decider vs the ε-swept baseline on an adversarially chosen subsample.
fn adversarial(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    let data = synth_generate(&cfg.synth)?;
    let sub = adversarial_subsample(
        &data.train,
        &data.test,
        cfg.adversarial_fraction,
        cfg.trials,
        cfg.objective,
        cfg.adversarial_mode,
        cfg.seed,
    )?;
    let mut rows = vec![ExperimentRow::from_result(
        format!("unanimous_{}", cfg.adversarial_mode.name()),
        cfg.adversarial_fraction,
        train_eval(&sub, cfg.adversarial_mode, 0, cfg.seed, &data.test),
    )];
    let m = least_squares(&sub);
    for &e in &EPSILONS {
        rows.push(ExperimentRow::ok("point_estimate", e, evaluate_point_estimate(&m, &data.test, EpsilonPolicy { eps: e })));
    }
    Ok(rows)
}

/// Linear-system recall after `b` labels, for rank-based queries and for the
/// plain stream prefix, over the same stream order.
fn active_vs_passive(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    let data = synth_generate(&cfg.synth)?;
    let order = prefix_order(data.train.n_examples(), cfg.seed);
    let stream = data.train.select_rows(&order);
    let inputs: Vec<CountVector> = stream.examples().map(|e| e.input).collect();
    let (queried, _) = active_select(&inputs);
    let budgets: Vec<usize> = (1..=stream.n_examples()).collect();
    let mut rows: Vec<ExperimentRow> = budgets
        .par_iter()
        .flat_map_iter(|&b| {
            let active = stream.select_rows(&queried[..b.min(queried.len())]);
            let passive = stream.select_rows(&(0..b).collect::<Vec<_>>());
            [
                ExperimentRow::from_result("active", b as f64, train_eval(&active, Mode::Ls, 0, cfg.seed, &data.test)),
                ExperimentRow::from_result("passive", b as f64, train_eval(&passive, Mode::Ls, 0, cfg.seed, &data.test)),
            ]
        })
        .collect();
    rows.push(ExperimentRow {
        series: "queries".into(),
        x: queried.len() as f64,
        precision: f64::NAN,
        recall: f64::NAN,
        answered: 0,
        correct: 0,
        total: 0,
        status: "ok".into(),
    });
    Ok(rows)
}
