use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use unanimous::bag::{bag_from_known_tokens, dataset_from_raw, dataset_to_raw, read_jsonl, write_jsonl, AbstainReason};
use unanimous::data::{synth_generate, SynthConfig};
use unanimous::eval::{
    evaluate_point_estimate, point_estimate_predict, rows_to_csv, run_experiment, EpsilonPolicy, ExperimentConfig,
    ExperimentKind, ExperimentRow, EPSILONS,
};
use unanimous::extensions::{active_select, paraphrase_classes};
use unanimous::linalg::least_squares;
use unanimous::semparse::{
    annotate_safe_spans, build_semparse_dataset, kgrams, reconstruct, CompatibilityTable, FeaturizerConfig,
    ParsedExample, Reconstruction, TargetScheme,
};
use unanimous::unanimity::{clean_leave_one_out_with, train, CleaningRule, Decider, Mode};
use unanimous::{CountVector, Dataset, Prediction};

#[derive(Parser)]
#[command(name = "unanimous", version, about = "Predict only when every consistent mapping agrees")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    #[arg(long, global = true, default_value = "ilp")]
    mode: Mode,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 0)]
    n_mistakes: u64,
    /// k-gram size for utterance featurization.
    #[arg(long, global = true, default_value_t = 2)]
    kgram: usize,
    #[arg(long, global = true, default_value = "B")]
    target_scheme: TargetScheme,
    /// Baseline rounding half-width ε.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Jsonl)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic train/test JSONL plus the planted mapping.
    Synth {
        /// SynthConfig as JSON; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a decider and write it as JSON.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Input holds {"utterance", "logical_form"} records.
        #[arg(long)]
        semparse: bool,
        /// JSON object of token rewrites applied before featurization.
        #[arg(long)]
        entity_map: Option<PathBuf>,
    },
    /// Predict outputs or abstain for each input record.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also rebuild a logical form from each predicted bag (semparse models).
        #[arg(long)]
        reconstruct: bool,
    },
    /// Drop training rows that leave-one-out flags as noisy.
    Clean {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "strict")]
        rule: Rule,
    },
    /// List safe spans of each utterance under a linear-system semparse model.
    Spans {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild logical forms from bags of target atoms.
    Reconstruct {
        /// Semparse model whose compatibility table is used.
        #[arg(long)]
        model: PathBuf,
        /// Records with an "output" or "target" atom list.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pick the inputs to label, one pass in stream order.
    Active {
        #[arg(long)]
        input: PathBuf,
        /// Where to write the queried subset.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Partition a pool of inputs into paraphrase classes.
    Paraphrase {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment and write CSV.
    Experiment {
        kind: ExperimentKind,
        /// ExperimentConfig as JSON; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Least-squares point estimate with ε-rounding. Without --tolerance, sweeps ε.
    Baseline {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    Strict,
    Literal,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    decider: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    semparse: Option<SemparseInfo>,
}

#[derive(Serialize, Deserialize)]
struct SemparseInfo {
    featurizer: FeaturizerConfig,
    scheme: TargetScheme,
    table: CompatibilityTable,
}

struct Model {
    decider: Decider,
    semparse: Option<SemparseInfo>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let g = &cli.global;
    match &cli.cmd {
        Cmd::Synth { config, out_dir } => synth(config.as_deref(), out_dir, g),
        Cmd::Train { input, out, semparse, entity_map } => train_cmd(input, out, *semparse, entity_map.as_deref(), g),
        Cmd::Predict { model, input, out, reconstruct } => predict_cmd(model, input, out.as_deref(), *reconstruct),
        Cmd::Clean { input, out, rule } => clean_cmd(input, out.as_deref(), *rule, g),
        Cmd::Spans { model, input, out } => spans_cmd(model, input, out.as_deref()),
        Cmd::Reconstruct { model, input, out } => reconstruct_cmd(model, input, out.as_deref()),
        Cmd::Active { input, out } => active_cmd(input, out.as_deref()),
        Cmd::Paraphrase { model, input, out } => paraphrase_cmd(model, input, out.as_deref()),
        Cmd::Experiment { kind, config, out } => experiment_cmd(*kind, config.as_deref(), out.as_deref(), g),
        Cmd::Baseline { train, test, out } => baseline_cmd(train, test, out.as_deref(), g),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn read_json_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    Ok(dataset_from_raw(&read_jsonl(open(path)?)?)?)
}

fn write_lines(mut w: Box<dyn Write>, rows: &[Value]) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn load_model(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: ModelFile = serde_json::from_str(&text).context("parsing model file")?;
    let decider = Decider::from_json(&file.decider.to_string())?;
    Ok(Model { decider, semparse: file.semparse })
}

fn synth(config: Option<&Path>, out_dir: &Path, g: &Global) -> Result<()> {
    let cfg: SynthConfig = match config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => SynthConfig { seed: g.seed, ..SynthConfig::default() },
    };
    let data = synth_generate(&cfg)?;
    fs::create_dir_all(out_dir)?;
    write_jsonl(BufWriter::new(File::create(out_dir.join("train.jsonl"))?), &dataset_to_raw(&data.train))?;
    write_jsonl(BufWriter::new(File::create(out_dir.join("test.jsonl"))?), &dataset_to_raw(&data.test_dataset()))?;
    fs::write(out_dir.join("sidecar.json"), serde_json::to_string_pretty(&data.sidecar())?)?;
    Ok(())
}

fn featurizer(g: &Global, entity_map: Option<&Path>) -> Result<FeaturizerConfig> {
    let entity_map: BTreeMap<String, String> = match entity_map {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => BTreeMap::new(),
    };
    Ok(FeaturizerConfig { k: g.kgram, entity_map, ..FeaturizerConfig::default() })
}

fn train_cmd(input: &Path, out: &Path, semparse: bool, entity_map: Option<&Path>, g: &Global) -> Result<()> {
    let (d, info) = if semparse {
        let examples: Vec<ParsedExample> = read_json_lines(input)?;
        let featurizer = featurizer(g, entity_map)?;
        let (d, table) = build_semparse_dataset(&examples, &featurizer, g.target_scheme, &BTreeMap::new())?;
        (d, Some(SemparseInfo { featurizer, scheme: g.target_scheme, table }))
    } else {
        (read_dataset(input)?, None)
    };
    let dec = train(&d, g.mode, g.n_mistakes, g.seed)?;
    let file = ModelFile { decider: serde_json::from_str(&dec.to_json()?)?, semparse: info };
    fs::write(out, serde_json::to_string_pretty(&file)?)?;
    eprintln!("trained {} decider on {} examples", g.mode, d.n_examples());
    Ok(())
}

#[derive(Deserialize)]
struct InputRecord {
    #[serde(default)]
    source: Option<Vec<String>>,
    #[serde(default)]
    utterance: Option<Vec<String>>,
}

impl InputRecord {
    fn tokens(&self) -> Result<&[String]> {
        match (&self.source, &self.utterance) {
            (Some(t), _) | (None, Some(t)) => Ok(t),
            (None, None) => bail!("record has neither `source` nor `utterance`"),
        }
    }
}

fn atoms_of(model: &Model, tokens: &[String]) -> Vec<String> {
    match &model.semparse {
        Some(info) => kgrams(tokens, &info.featurizer, true),
        None => tokens.to_vec(),
    }
}

fn predict_one(model: &Model, tokens: &[String]) -> Result<Prediction> {
    let (x, unseen) = bag_from_known_tokens(&atoms_of(model, tokens), model.decider.dataset().source_vocab());
    if unseen {
        return Ok(Prediction::Abstain(AbstainReason::UnseenAtom));
    }
    Ok(model.decider.predict(&x)?)
}

fn predict_cmd(model: &Path, input: &Path, out: Option<&Path>, rebuild: bool) -> Result<()> {
    let model = load_model(model)?;
    let tv = model.decider.dataset().target_vocab().clone();
    let mut rows = Vec::new();
    for rec in read_json_lines::<InputRecord>(input)? {
        let tokens = rec.tokens()?;
        let mut row = json!({ "input": tokens });
        match predict_one(&model, tokens)? {
            Prediction::Output(y) => {
                row["output"] = json!(y.to_tokens(&tv));
                if rebuild {
                    let info = model.semparse.as_ref().context("--reconstruct needs a semparse model")?;
                    row["logical_form"] = reconstruction_json(&reconstruct(&y, &tv, &info.table)?);
                }
            }
            Prediction::Abstain(r) => row["abstain"] = json!(r.to_string()),
        }
        rows.push(row);
    }
    write_lines(output(out)?, &rows)
}

fn reconstruction_json(r: &Reconstruction) -> Value {
    match r {
        Reconstruction::Unique(lf) => json!(lf.to_string()),
        Reconstruction::Abstain { .. } => Value::Null,
    }
}

fn clean_cmd(input: &Path, out: Option<&Path>, rule: Rule, g: &Global) -> Result<()> {
    let d = read_dataset(input)?;
    let rule = match rule {
        Rule::Strict => CleaningRule::Strict,
        Rule::Literal => CleaningRule::Literal,
    };
    let cleaned = clean_leave_one_out_with(&d, g.n_mistakes, rule, g.seed)?;
    eprintln!("kept {} of {} examples", cleaned.n_examples(), d.n_examples());
    let mut w = output(out)?;
    write_jsonl(&mut w, &dataset_to_raw(&cleaned))?;
    w.flush()?;
    Ok(())
}

fn spans_cmd(model: &Path, input: &Path, out: Option<&Path>) -> Result<()> {
    let model = load_model(model)?;
    let info = model.semparse.as_ref().context("spans needs a semparse model")?;
    let tv = model.decider.dataset().target_vocab();
    let mut rows = Vec::new();
    for rec in read_json_lines::<InputRecord>(input)? {
        let tokens = rec.tokens()?;
        let spans: Vec<Value> = annotate_safe_spans(tokens, &model.decider, &info.featurizer)?
            .into_iter()
            .map(|s| json!({ "start": s.start, "end": s.end, "text": tokens[s.start..s.end], "output": s.output.to_tokens(tv) }))
            .collect();
        rows.push(json!({ "input": tokens, "spans": spans }));
    }
    write_lines(output(out)?, &rows)
}

#[derive(Deserialize)]
struct BagRecord {
    #[serde(default)]
    output: Option<Vec<String>>,
    #[serde(default)]
    target: Option<Vec<String>>,
}

fn reconstruct_cmd(model: &Path, input: &Path, out: Option<&Path>) -> Result<()> {
    let model = load_model(model)?;
    let info = model.semparse.as_ref().context("reconstruct needs a semparse model")?;
    let tv = model.decider.dataset().target_vocab();
    let mut rows = Vec::new();
    for rec in read_json_lines::<BagRecord>(input)? {
        let Some(atoms) = rec.output.or(rec.target) else {
            rows.push(json!({ "logical_form": null }));
            continue;
        };
        let (bag, unseen) = bag_from_known_tokens(&atoms, tv);
        let lf = if unseen { Value::Null } else { reconstruction_json(&reconstruct(&bag, tv, &info.table)?) };
        rows.push(json!({ "atoms": atoms, "logical_form": lf }));
    }
    write_lines(output(out)?, &rows)
}

fn active_cmd(input: &Path, out: Option<&Path>) -> Result<()> {
    let d = read_dataset(input)?;
    let inputs: Vec<CountVector> = d.examples().map(|e| e.input).collect();
    let (queried, state) = active_select(&inputs);
    eprintln!("queried {} of {} (rank {})", queried.len(), inputs.len(), state.rank());
    match out {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            write_jsonl(&mut w, &dataset_to_raw(&d.select_rows(&queried)))?;
            w.flush()?;
        }
        None => println!("{}", serde_json::to_string(&queried)?),
    }
    Ok(())
}

fn paraphrase_cmd(model: &Path, input: &Path, out: Option<&Path>) -> Result<()> {
    let model = load_model(model)?;
    let vocab = model.decider.dataset().source_vocab();
    let mut pool = Vec::new();
    let mut unseen_rows = Vec::new();
    for (i, rec) in read_json_lines::<InputRecord>(input)?.iter().enumerate() {
        let (x, unseen) = bag_from_known_tokens(&atoms_of(&model, rec.tokens()?), vocab);
        if unseen {
            unseen_rows.push(i);
        }
        pool.push(x);
    }
    let mut part = paraphrase_classes(&pool, &model.decider)?;
    part.set_aside.extend(unseen_rows.iter().copied());
    part.set_aside.sort_unstable();
    part.set_aside.dedup();
    for c in &mut part.classes {
        c.members.retain(|m| !unseen_rows.contains(m));
    }
    part.classes.retain(|c| !c.members.is_empty());
    let tv = model.decider.dataset().target_vocab();
    let classes: Vec<Value> = part
        .classes
        .iter()
        .map(|c| json!({ "output": c.output.to_tokens(tv), "members": c.members }))
        .collect();
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, &json!({ "classes": classes, "set_aside": part.set_aside }))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn experiment_cmd(kind: ExperimentKind, config: Option<&Path>, out: Option<&Path>, g: &Global) -> Result<()> {
    let cfg: ExperimentConfig = match config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => ExperimentConfig { seed: g.seed, ..ExperimentConfig::default() },
    };
    let rows = run_experiment(kind, &cfg)?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        eprintln!("{failed} cells failed");
    }
    let mut w = output(out)?;
    w.write_all(rows_to_csv(&rows).as_bytes())?;
    w.flush()?;
    Ok(())
}

fn baseline_cmd(train_path: &Path, test_path: &Path, out: Option<&Path>, g: &Global) -> Result<()> {
    let train_d = read_dataset(train_path)?;
    let m = least_squares(&train_d);
    let sv = train_d.source_vocab();
    let tv = train_d.target_vocab();
    let mut test = Vec::new();
    let mut skipped = 0usize;
    for rec in read_jsonl(open(test_path)?)? {
        let (x, unseen) = bag_from_known_tokens(&rec.source, sv);
        let gold = rec.target.as_deref().map(|t| bag_from_known_tokens(t, tv));
        match gold {
            Some((y, false)) if !unseen => test.push((rec.source, unanimous::bag::Example { input: x, output: y })),
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        eprintln!("skipped {skipped} test records with unseen atoms or no target");
    }
    let examples: Vec<_> = test.iter().map(|(_, e)| e.clone()).collect();
    match g.tolerance {
        Some(eps) => {
            let policy = EpsilonPolicy::new(eps)?;
            let rows: Vec<Value> = test
                .iter()
                .map(|(src, e)| match point_estimate_predict(&m, &e.input, policy) {
                    Prediction::Output(y) => json!({ "input": src, "output": y.to_tokens(tv) }),
                    Prediction::Abstain(r) => json!({ "input": src, "abstain": r.to_string() }),
                })
                .collect();
            let pr = evaluate_point_estimate(&m, &examples, policy);
            eprintln!("precision {:.4} recall {:.4} answered {}", pr.precision(), pr.recall(), pr.answered);
            write_lines(output(out)?, &rows)
        }
        None => {
            let rows: Vec<ExperimentRow> = EPSILONS
                .iter()
                .map(|&e| {
                    let pr = evaluate_point_estimate(&m, &examples, EpsilonPolicy::new(e).expect("grid is in range"));
                    ExperimentRow {
                        series: "point_estimate".into(),
                        x: e,
                        precision: pr.precision(),
                        recall: pr.recall(),
                        answered: pr.answered,
                        correct: pr.correct,
                        total: pr.total,
                        status: "ok".into(),
                    }
                })
                .collect();
            let mut w = output(out)?;
            w.write_all(rows_to_csv(&rows).as_bytes())?;
            w.flush()?;
            Ok(())
        }
    }
}
