//! Synthetic data with a planted mapping, noise injection, and adversarial
//! subsampling.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bag::{CountVector, Dataset, Example, Mapping};
use crate::error::{Error, Result};
use crate::eval::{best_f1_point_estimate, evaluate_decider};
use crate::unanimity::{train, Mode};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_source: usize,
    pub n_target: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_clusters: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub targets_min: usize,
    pub targets_max: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_source: 50,
            n_target: 20,
            n_train: 120,
            n_test: 50,
            n_clusters: 10,
            len_min: 5,
            len_max: 10,
            targets_min: 0,
            targets_max: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Format(format!("invalid synth config: {m}")));
        if self.len_min == 0 || self.len_min > self.len_max {
            return bad("need 1 <= len_min <= len_max");
        }
        if self.n_clusters == 0 || !self.n_source.is_multiple_of(self.n_clusters) {
            return bad("n_clusters must divide n_source");
        }
        if self.targets_min > self.targets_max || self.targets_max > self.n_target {
            return bad("need targets_min <= targets_max <= n_target");
        }
        Ok(())
    }

    /// Source atoms of cluster `c`.
    pub fn cluster(&self, c: usize) -> std::ops::Range<usize> {
        let size = self.n_source / self.n_clusters;
        c * size..(c + 1) * size
    }
}

/// Planted mapping with training and test data drawn from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthData {
    pub config: SynthConfig,
    pub m_star: Mapping<u64>,
    pub train: Dataset,
    pub test: Vec<Example>,
}

/// What gets written next to a generated dataset for oracle checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSidecar {
    pub config: SynthConfig,
    pub seed: u64,
    pub m_star: Mapping<u64>,
}

impl SynthData {
    pub fn sidecar(&self) -> SynthSidecar {
        SynthSidecar { config: self.config.clone(), seed: self.config.seed, m_star: self.m_star.clone() }
    }

    /// Test inputs and gold outputs as a dataset over the training vocabularies.
    pub fn test_dataset(&self) -> Dataset {
        Dataset::new(self.train.source_vocab().clone(), self.train.target_vocab().clone(), &self.test)
            .expect("test rows share the training dimensions")
    }
}

fn sample_input(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut x = vec![0u64; cfg.n_source];
    let atoms = cfg.cluster(rng.random_range(0..cfg.n_clusters));
    let len = rng.random_range(cfg.len_min..=cfg.len_max);
    for _ in 0..len {
        x[rng.random_range(atoms.clone())] += 1;
    }
    x
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut m = Mapping::<u64>::zeros(cfg.n_source, cfg.n_target);
    let targets: Vec<usize> = (0..cfg.n_target).collect();
    for s in 0..cfg.n_source {
        let k = rng.random_range(cfg.targets_min..=cfg.targets_max);
        for &t in targets.choose_multiple(&mut rng, k) {
            m.set(s, t, 1);
        }
    }
    let draw = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Example> {
        (0..n)
            .map(|_| {
                let x = sample_input(cfg, rng);
                let y = m.apply(&x);
                Example { input: CountVector::from_counts(x), output: CountVector::from_counts(y) }
            })
            .collect()
    };
    let train_rows = draw(cfg.n_train, &mut rng);
    let test = draw(cfg.n_test, &mut rng);
    let (ns, nt) = (cfg.n_source, cfg.n_target);
    let train = Dataset::from_matrices(
        train_rows.iter().map(|e| e.input.counts().to_vec()).collect(),
        train_rows.iter().map(|e| e.output.counts().to_vec()).collect(),
        ns,
        nt,
    )?;
    Ok(SynthData { config: cfg.clone(), m_star: m, train, test })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub n_mistakes: u64,
    pub seed: u64,
}

/// Applies `n_mistakes` unit edits to distinct cells of `T`. The edit sequence
/// depends only on the seed and the original counts, so a smaller budget with
/// the same seed applies a prefix of the same edits.
pub fn inject_noise(d: &Dataset, spec: NoiseSpec) -> Result<Dataset> {
    let (n, nt) = (d.n_examples(), d.n_target());
    let k = spec.n_mistakes as usize;
    if k > n * nt {
        return Err(Error::Format(format!("{k} edits exceed the {} cells of T", n * nt)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..nt).map(move |t| (i, t))).collect();
    cells.shuffle(&mut rng);
    let mut t = d.t().to_vec();
    for &(i, col) in &cells[..k] {
        let delete = t[i][col] > 0 && rng.random_bool(0.5);
        if delete {
            t[i][col] -= 1;
        } else {
            t[i][col] += 1;
        }
    }
    d.with_outputs(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdversaryObjective {
    /// Largest `F1(unanimous) − F1(point estimate)`.
    MaxDiff,
    /// Smallest difference.
    MinDiff,
}

/// `ceil(f · n)` rows chosen by a seeded shuffle, returned in original order.
pub fn random_subsample(d: &Dataset, fraction: f64, seed: u64) -> Dataset {
    let n = d.n_examples();
    let keep = ((fraction * n as f64).ceil() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut rows = idx[..keep].to_vec();
    rows.sort_unstable();
    d.select_rows(&rows)
}

/// Among `trials` seeded subsamples, the one extremizing the F1 gap between
/// the unanimous decider (in `mode`) and the best-ε point estimate on `test`.
pub fn adversarial_subsample(
    d: &Dataset,
    test: &[Example],
    fraction: f64,
    trials: usize,
    objective: AdversaryObjective,
    mode: Mode,
    seed: u64,
) -> Result<Dataset> {
    if fraction >= 1.0 {
        return Ok(d.clone());
    }
    let scored: Vec<(f64, Dataset)> = (0..trials.max(1) as u64)
        .into_par_iter()
        .map(|k| -> Result<(f64, Dataset)> {
            let sub = random_subsample(d, fraction, seed.wrapping_add(k));
            let dec = train(&sub, mode, 0, seed)?;
            let ours = evaluate_decider(&dec, test)?.f1();
            let base = best_f1_point_estimate(&sub, test);
            Ok((ours - base, sub))
        })
        .collect::<Result<_>>()?;
    let pick = scored.into_iter().enumerate().reduce(|a, b| {
        let better = match objective {
            AdversaryObjective::MaxDiff => b.1 .0 > a.1 .0,
            AdversaryObjective::MinDiff => b.1 .0 < a.1 .0,
        };
        if better {
            b
        } else {
            a
        }
    });
    Ok(pick.expect("at least one trial").1 .1)
}
