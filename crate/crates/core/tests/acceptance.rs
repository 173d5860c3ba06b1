//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion does.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unanimous::bag::{AbstainReason, CountVector, Dataset, Example, Mapping, Prediction, Vocabulary};
use unanimous::data::{synth_generate, SynthConfig};
use unanimous::eval::{
    prefix_len, prefix_order, run_experiment, EpsilonPolicy, ExperimentConfig, ExperimentKind, ExperimentRow, EPSILONS,
};
use unanimous::extensions::{active_select, are_paraphrases, paraphrase_classes};
use unanimous::linalg::{is_consistent_ls, rank, RationalMatrix};
use unanimous::lp::{relative_interior, Polytope};
use unanimous::semparse::{
    build_semparse_dataset, reconstruct, CompatibilityTable, FeaturizerConfig, LogicalForm, ParsedExample,
    Reconstruction, TargetScheme,
};
use unanimous::unanimity::{
    clean_l1_residual, clean_leave_one_out, enumerate_consistent_bounded, lp_coordinate_ranges, train, Decider, Mode,
};

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn cv(v: &[u64]) -> CountVector {
    CountVector::from_counts(v.to_vec())
}

fn run(id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Check) -> bool {
    let t = Instant::now();
    let r = f();
    let took = t.elapsed();
    let r = r.and_then(|()| ensure(took <= limit, || format!("took {took:?}, limit {limit:?}")));
    match &r {
        Ok(()) => println!("PASS {id} {name} ({took:.2?})"),
        Err(e) => println!("FAIL {id} {name} ({took:.2?}): {e}"),
    }
    r.is_ok()
}

fn running() -> Dataset {
    Dataset::new(
        Vocabulary::from_atoms(["area", "of", "Ohio", "cities", "in", "Iowa"]),
        Vocabulary::from_atoms(["area", "city", "OH", "IA"]),
        &[
            Example { input: cv(&[1, 1, 0, 0, 0, 1]), output: cv(&[1, 0, 0, 1]) },
            Example { input: cv(&[0, 0, 1, 1, 1, 0]), output: cv(&[0, 1, 1, 0]) },
            Example { input: cv(&[0, 0, 0, 1, 1, 1]), output: cv(&[0, 1, 0, 1]) },
        ],
    )
    .unwrap()
}

/// The four mappings of the running example, written out by hand.
fn running_mappings() -> BTreeSet<Vec<u64>> {
    let mut out = BTreeSet::new();
    for area_word in [0usize, 1] {
        for city_word in [3usize, 4] {
            let mut m = Mapping::<u64>::zeros(6, 4);
            m.set(area_word, 0, 1);
            m.set(city_word, 1, 1);
            m.set(2, 2, 1);
            m.set(5, 3, 1);
            out.insert(m.entries().to_vec());
        }
    }
    out
}

fn criterion_1() -> Check {
    let d = running();
    let ms = enumerate_consistent_bounded(&d, 3).map_err(|e| e.to_string())?;
    let got: BTreeSet<Vec<u64>> = ms.iter().map(|m| m.entries().to_vec()).collect();
    ensure(ms.len() == 4 && got == running_mappings(), || format!("enumerated {} mappings: {got:?}", ms.len()))?;
    for mode in Mode::ALL {
        let dec = train(&d, mode, 0, 7).map_err(|e| e.to_string())?;
        let p = dec.predict(&cv(&[1, 1, 1, 0, 0, 0])).map_err(|e| e.to_string())?;
        ensure(p == Prediction::Output(cv(&[1, 0, 1, 0])), || format!("{mode}: area of Ohio -> {p:?}"))?;
        let p = dec.predict(&cv(&[1, 0, 1, 0, 0, 0])).map_err(|e| e.to_string())?;
        ensure(p.is_abstain(), || format!("{mode}: Ohio area -> {p:?}"))?;
    }
    Ok(())
}

fn criterion_2() -> Check {
    let mut p = Polytope::new(3);
    p.push(vec![(2, 1.0)], 0.0, false);
    p.push(vec![(2, -1.0)], 0.0, false);
    p.push(vec![(0, -1.0)], 0.0, false);
    p.push(vec![(1, -1.0)], 0.0, false);
    p.push(vec![(0, 1.0), (1, 1.0)], 6.0, false);
    let ip = relative_interior(&p).map_err(|e| e.to_string())?;
    let p1_ok = ip.p1.iter().zip([1.0, 1.0, 0.0]).all(|(a, b)| (a - b).abs() <= 1e-6);
    ensure(p1_ok, || format!("p1 = {:?}", ip.p1))?;
    ensure((ip.radius - 1.0 / 2f64.sqrt()).abs() <= 1e-6, || format!("R = {}", ip.radius))?;
    ensure(ip.always_active == vec![0, 1], || format!("always active = {:?}", ip.always_active))?;
    ensure(ip.dim() == 2, || format!("d = {}", ip.dim()))
}

/// Planted instance with `n_s · n_t ≤ 12`, entries in `0..=2`, and every
/// output count at most 2 so no consistent entry on a seen atom exceeds 2.
fn small_instance(rng: &mut ChaCha8Rng) -> (Dataset, Vec<CountVector>) {
    loop {
        let ns = rng.random_range(1..=4usize);
        let nt = rng.random_range(1..=12 / ns).min(3);
        let m = Mapping::from_entries(ns, nt, (0..ns * nt).map(|_| rng.random_range(0..=2u64)).collect()).unwrap();
        let n = rng.random_range(1..=4usize);
        let s: Vec<Vec<u64>> = (0..n).map(|_| (0..ns).map(|_| rng.random_range(0..=1u64)).collect()).collect();
        let t: Vec<Vec<u64>> = s.iter().map(|x| m.apply(x)).collect();
        if t.iter().flatten().any(|&c| c > 2) {
            continue;
        }
        let probes = (0..4).map(|_| cv(&(0..ns).map(|_| rng.random_range(0..=2u64)).collect::<Vec<_>>())).collect();
        return (Dataset::from_matrices(s, t, ns, nt).unwrap(), probes);
    }
}

fn unseen(d: &Dataset, x: &CountVector) -> bool {
    let seen = d.seen_sources();
    x.counts().iter().enumerate().any(|(s, &c)| c > 0 && !seen[s])
}

fn enumeration_verdict(ms: &[Mapping<u64>], d: &Dataset, x: &CountVector) -> Option<Vec<u64>> {
    if unseen(d, x) {
        return None;
    }
    let outs: BTreeSet<Vec<u64>> = ms.iter().map(|m| m.apply(x.counts())).collect();
    (outs.len() == 1).then(|| outs.into_iter().next().unwrap())
}

fn criterion_3() -> Check {
    let mut ilp_instances = 0;
    let mut lp_instances = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        for k in 0..40 {
            let (d, probes) = small_instance(&mut rng);
            let ms = enumerate_consistent_bounded(&d, 2).map_err(|e| e.to_string())?;
            for mode in [Mode::Ilp, Mode::IlpExact] {
                let dec = train(&d, mode, 0, seed).map_err(|e| e.to_string())?;
                for x in &probes {
                    let want = enumeration_verdict(&ms, &d, x);
                    let got = dec.predict(x).map_err(|e| e.to_string())?.output().map(|y| y.counts().to_vec());
                    ensure(got == want, || format!("{mode} seed {seed} instance {k}: {got:?} vs {want:?}"))?;
                }
            }
            ilp_instances += 1;
            if k < 20 {
                let dec = train(&d, Mode::Lp, 0, seed).map_err(|e| e.to_string())?;
                for x in &probes {
                    let ranges = lp_coordinate_ranges(&d, x).map_err(|e| e.to_string())?;
                    let safe = ranges.iter().all(|(a, b)| (a - b).abs() <= 1e-6);
                    let p = dec.predict(x).map_err(|e| e.to_string())?;
                    let agrees = match &p {
                        Prediction::Output(y) => {
                            safe && y.counts().iter().zip(&ranges).all(|(&v, (a, _))| (v as f64 - a).abs() <= 1e-6)
                        }
                        Prediction::Abstain(AbstainReason::NonIntegralOutput) => safe,
                        Prediction::Abstain(_) => !safe,
                    };
                    ensure(agrees, || format!("LP seed {seed} instance {k}: {p:?} vs ranges {ranges:?}"))?;
                }
                lp_instances += 1;
            }
        }
    }
    ensure(ilp_instances >= 200 && lp_instances >= 100, || format!("{ilp_instances} ILP / {lp_instances} LP instances"))
}

fn all_ok(rows: &[ExperimentRow]) -> Check {
    match rows.iter().find(|r| !r.is_ok()) {
        Some(r) => Err(format!("cell {} @ {} {}", r.series, r.x, r.status)),
        None => Ok(()),
    }
}

fn series<'a>(rows: &'a [ExperimentRow], name: &str) -> Vec<&'a ExperimentRow> {
    let mut v: Vec<&ExperimentRow> = rows.iter().filter(|r| r.series == name).collect();
    v.sort_by(|a, b| a.x.total_cmp(&b.x));
    v
}

fn criterion_4() -> Check {
    let cfg = ExperimentConfig::default();
    let rows = run_experiment(ExperimentKind::FractionCurve, &cfg).map_err(|e| e.to_string())?;
    all_ok(&rows)?;
    let slack = 1.0 / cfg.synth.n_test as f64 + 1e-12;
    for mode in &cfg.modes {
        let s = series(&rows, mode.name());
        ensure(s.len() == cfg.fractions.len(), || format!("{mode}: {} cells", s.len()))?;
        for r in &s {
            ensure(r.precision == 1.0 || r.answered == 0, || format!("{mode} @ {}: precision {}", r.x, r.precision))?;
        }
        for w in s.windows(2) {
            ensure(w[1].recall + slack >= w[0].recall, || format!("{mode}: recall drops {} -> {}", w[0].recall, w[1].recall))?;
        }
    }
    let ilp_full = series(&rows, Mode::Ilp.name()).last().map(|r| r.recall).unwrap_or(0.0);
    ensure(ilp_full >= 0.95, || format!("ILP recall at 1.0 is {ilp_full}"))?;

    let data = synth_generate(&cfg.synth).map_err(|e| e.to_string())?;
    let order = prefix_order(data.train.n_examples(), cfg.seed);
    let xs: Vec<CountVector> = data.test.iter().map(|e| e.input.clone()).collect();
    for &f in &cfg.fractions {
        let sub = data.train.select_rows(&order[..prefix_len(f, order.len())]);
        let preds: Vec<Vec<Prediction>> = [Mode::Ls, Mode::Lp, Mode::Ilp]
            .iter()
            .map(|&m| train(&sub, m, 0, cfg.seed).and_then(|d| d.predict_many(&xs)))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        for i in 0..xs.len() {
            for w in preds.windows(2) {
                if let Prediction::Output(y) = &w[0][i] {
                    ensure(w[1][i] == Prediction::Output(y.clone()), || format!("containment broken at f={f}, input {i}"))?;
                }
            }
        }
    }
    Ok(())
}

fn criterion_5() -> Check {
    let cfg = ExperimentConfig::default();
    let rows = run_experiment(ExperimentKind::NoiseCurve, &cfg).map_err(|e| e.to_string())?;
    all_ok(&rows)?;
    let s = series(&rows, "ILP_noise");
    ensure(s.len() == cfg.budgets.len(), || format!("{} cells", s.len()))?;
    for r in &s {
        ensure(r.precision == 1.0 || r.answered == 0, || format!("budget {}: precision {}", r.x, r.precision))?;
    }
    for w in s.windows(2) {
        ensure(w[1].recall <= w[0].recall, || format!("recall rises {} -> {} at budget {}", w[0].recall, w[1].recall, w[1].x))?;
    }
    let (first, last) = (s[0].recall, s[s.len() - 1].recall);
    ensure(first == 1.0, || format!("recall at budget 0 is {first}"))?;
    ensure(last < first, || format!("recall at the largest budget is still {last}"))
}

fn criterion_6() -> Check {
    let cfg = ExperimentConfig::default();
    let rows = run_experiment(ExperimentKind::Adversarial, &cfg).map_err(|e| e.to_string())?;
    all_ok(&rows)?;
    let ours = series(&rows, &format!("unanimous_{}", cfg.adversarial_mode.name()));
    ensure(ours.len() == 1 && (ours[0].precision == 1.0 || ours[0].answered == 0), || format!("unanimous: {ours:?}"))?;
    let base = series(&rows, "point_estimate");
    ensure(base.len() == EPSILONS.len(), || format!("{} baseline points", base.len()))?;
    ensure(base.iter().any(|r| r.precision < 1.0), || "baseline precision is 1.0 at every ε".into())
}

fn criterion_7() -> Check {
    let cfg = SynthConfig { n_test: 200, ..SynthConfig::default() };
    let data = synth_generate(&cfg).map_err(|e| e.to_string())?;
    let inputs: Vec<CountVector> = data.train.examples().map(|e| e.input).collect();
    let (queried, state) = active_select(&inputs);
    let r = rank(&RationalMatrix::from_u64_rows(data.train.s(), data.train.n_source()));
    ensure(queried.len() == r && state.rank() == r, || format!("{} queries, rank {r}", queried.len()))?;
    let full = train(&data.train, Mode::Ls, 0, 0).map_err(|e| e.to_string())?;
    let active = train(&data.train.select_rows(&queried), Mode::Ls, 0, 0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let probes: Vec<CountVector> = data
        .test
        .iter()
        .map(|e| e.input.clone())
        .take(150)
        .chain((0..50).map(|_| cv(&(0..cfg.n_source).map(|_| rng.random_range(0..=1u64)).collect::<Vec<_>>())))
        .collect();
    ensure(probes.len() == 200, || format!("{} probes", probes.len()))?;
    for (i, x) in probes.iter().enumerate() {
        let (a, b) = (full.predict(x).map_err(|e| e.to_string())?, active.predict(x).map_err(|e| e.to_string())?);
        ensure(a == b, || format!("probe {i}: full {a:?} vs active {b:?}"))?;
    }
    let rows = run_experiment(ExperimentKind::ActiveVsPassive, &ExperimentConfig::default()).map_err(|e| e.to_string())?;
    all_ok(&rows)?;
    let (act, pas) = (series(&rows, "active"), series(&rows, "passive"));
    ensure(act.len() == pas.len() && !act.is_empty(), || "budget grids differ".into())?;
    for (a, p) in act.iter().zip(&pas) {
        ensure(a.recall >= p.recall, || format!("budget {}: active {} < passive {}", a.x, a.recall, p.recall))?;
    }
    Ok(())
}

fn criterion_8() -> Check {
    let forms = [
        LogicalForm::parse("city(loc_1(Columbia))").map_err(|e| e.to_string())?,
        LogicalForm::parse("city(loc_2(Texas))").map_err(|e| e.to_string())?,
    ];
    let table = CompatibilityTable::from_forms(&forms);
    let vocab = Vocabulary::from_atoms(["city", "loc_1", "Columbia", "loc_2", "Texas"]);
    let got = reconstruct(&cv(&[1, 1, 1, 0, 0]), &vocab, &table).map_err(|e| e.to_string())?;
    ensure(got == Reconstruction::Unique(forms[0].clone()), || format!("got {got:?}"))?;

    let amb = CompatibilityTable::from_edges([("f", 1, "g"), ("g", 1, "f"), ("f", 1, "c"), ("g", 1, "c")]);
    let v = Vocabulary::from_atoms(["f", "g", "c"]);
    let got = reconstruct(&cv(&[1, 1, 1]), &v, &amb).map_err(|e| e.to_string())?;
    ensure(matches!(got, Reconstruction::Abstain { .. }), || format!("ambiguous instance gave {got:?}"))?;

    // End-to-end pipeline on a small GeoQuery-style corpus.
    let states = ["Ohio", "Texas", "Iowa", "Utah", "Maine", "Idaho"];
    let heads = [("capital", "capital"), ("area", "area"), ("population", "population")];
    let mut corpus = Vec::new();
    for st in states {
        for (w, p) in heads {
            corpus.push(ParsedExample {
                utterance: ["what", "is", "the", w, "of", st].iter().map(|s| s.to_string()).collect(),
                logical_form: format!("{p}(loc_1({st}))"),
            });
        }
    }
    let cfg = FeaturizerConfig { k: 1, ..FeaturizerConfig::default() };
    let t = Instant::now();
    let (d, table) = build_semparse_dataset(&corpus, &cfg, TargetScheme::PredicateWithArgOrder, &Default::default())
        .map_err(|e| e.to_string())?;
    let dec = train(&d, Mode::Ls, 0, 0).map_err(|e| e.to_string())?;
    ensure(t.elapsed() < Duration::from_secs(60), || format!("pipeline training took {:?}", t.elapsed()))?;
    let mut answered = 0;
    for e in d.examples() {
        if let Prediction::Output(y) = dec.predict(&e.input).map_err(|e| e.to_string())? {
            ensure(y == e.output, || "pipeline mispredicted a training row".into())?;
            if let Reconstruction::Unique(_) = reconstruct(&y, d.target_vocab(), &table).map_err(|e| e.to_string())? {
                answered += 1;
            }
        }
    }
    ensure(answered > 0, || "pipeline reconstructed nothing".into())
}

fn criterion_9() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data = synth_generate(&SynthConfig { n_train: 60, ..SynthConfig::default() }).map_err(|e| e.to_string())?;
    let dec: Decider = train(&data.train, Mode::Ls, 0, 0).map_err(|e| e.to_string())?;
    let pool: Vec<CountVector> = data.test.iter().map(|e| e.input.clone()).collect();
    let part = paraphrase_classes(&pool, &dec).map_err(|e| e.to_string())?;
    let safe: Vec<usize> = part.classes.iter().flat_map(|c| c.members.iter().copied()).collect();
    let class_of = |i: usize| part.classes.iter().position(|c| c.members.contains(&i));
    for &i in &safe {
        ensure(are_paraphrases(&pool[i], &pool[i], &dec) == Ok(true), || format!("reflexivity fails at {i}"))?;
        for &j in &safe {
            let ij = are_paraphrases(&pool[i], &pool[j], &dec).map_err(|e| e.to_string())?;
            let ji = are_paraphrases(&pool[j], &pool[i], &dec).map_err(|e| e.to_string())?;
            ensure(ij == ji, || format!("symmetry fails at ({i}, {j})"))?;
            ensure(ij == (class_of(i) == class_of(j)), || format!("partition disagrees at ({i}, {j})"))?;
        }
    }

    for _ in 0..2000 {
        let y: f64 = rng.random_range(-2.0..5.0);
        let mut answered = false;
        for &e in &EPSILONS {
            let now = EpsilonPolicy::new(e).unwrap().snap(y).is_some();
            ensure(!answered || now, || format!("y = {y} answered below ε = {e} but not at it"))?;
            answered = now;
        }
    }

    for k in 0..30 {
        let n = rng.random_range(0..6usize);
        let s: Vec<Vec<u64>> = (0..n).map(|_| vec![rng.random_range(0..=2), rng.random_range(0..=2)]).collect();
        let t: Vec<Vec<u64>> = (0..n).map(|_| vec![rng.random_range(0..=2)]).collect();
        let d = Dataset::from_matrices(s, t, 2, 1).unwrap();
        let a = clean_l1_residual(&d).map_err(|e| e.to_string())?;
        let b = clean_leave_one_out(&d, 1).map_err(|e| e.to_string())?;
        ensure(is_consistent_ls(&a) && is_consistent_ls(&b), || format!("cleaning left instance {k} inconsistent"))?;
        ensure(a.n_examples() <= n && b.n_examples() <= n, || "cleaning added rows".into())?;
    }

    let half = Dataset::from_matrices(vec![vec![2]], vec![vec![1]], 1, 1).unwrap();
    let dec = train(&half, Mode::Ls, 0, 0).map_err(|e| e.to_string())?;
    let p = dec.predict(&cv(&[1])).map_err(|e| e.to_string())?;
    ensure(p == Prediction::Abstain(AbstainReason::NonIntegralOutput), || format!("x = 1 gave {p:?}"))?;
    let p = dec.predict(&cv(&[4])).map_err(|e| e.to_string())?;
    ensure(p == Prediction::Output(cv(&[2])), || format!("x = 4 gave {p:?}"))
}

fn main() {
    let s = Duration::from_secs;
    let results = [
        run(1, "running example fidelity", s(1), criterion_1),
        run(2, "worked relative-interior LP", s(1), criterion_2),
        run(3, "oracle equivalence", s(300), criterion_3),
        run(4, "synthetic precision/recall", s(600), criterion_4),
        run(5, "noise curve", s(900), criterion_5),
        run(6, "adversarial comparison", s(600), criterion_6),
        run(7, "active learning", s(300), criterion_7),
        run(8, "reconstruction", s(60), criterion_8),
        run(9, "property suites", s(300), criterion_9),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i + 1).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
