//! Stage functions behind each subcommand. Each reads its inputs from disk,
//! writes its artifacts plus `config.json` into `out`, and touches nothing else.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::{CliError, EncoderKind, RunConfig};
use crate::corpus::{
    efficiency_label, generate_corpus, ingest, ingest_attempts, read_problems, write_jsonl, EfficiencyLabel, Pathway,
    Problem,
};
use crate::corpus::actions::ActionKind;
use crate::encode::{find_collisions, load_table_path, write_table, StateEncoder};
use crate::probes::{
    compare_to_baseline, majority_baseline_micro_f1, mean_pool_baseline, metrics::write_comparison_csv,
    train_action_content_probe, train_efficiency_probe, train_reconstruction_probe, unigram_perplexity, ProbeReport,
};
use crate::seqenc::{build_sequences, load_checkpoint, save_checkpoint, split_indices, train, write_log_csv, Split};
use crate::stats::{format_table, regress_listwise, RegressionResult};
use crate::strategy::geometry::{project_2d, silhouette_comparison, Level};
use crate::strategy::{strategy_scores, write_scores_csv, AttemptRecord};

pub const PROBLEMS_FILE: &str = "problems.jsonl";
pub const PATHWAYS_FILE: &str = "pathways.jsonl";
pub const STUDENTS_FILE: &str = "students.csv";
pub const STATES_FILE: &str = "states.tsv";
pub const ENCODE_SUMMARY_FILE: &str = "encode_summary.json";
pub const CHECKPOINT_FILE: &str = "encoder.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const TRAIN_SUMMARY_FILE: &str = "train_summary.json";
pub const EMBEDDINGS_FILE: &str = "sequence_embeddings.tsv";
pub const SCORES_FILE: &str = "scores.csv";
pub const REGRESSION_JSON: &str = "regression.json";
pub const REGRESSION_TXT: &str = "regression.txt";
pub const PROJECTION_FILE: &str = "projection.csv";
pub const SILHOUETTE_FILE: &str = "silhouette.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeTask {
    Content,
    Efficiency,
    Reconstruct,
}

impl ProbeTask {
    pub fn name(self) -> &'static str {
        match self {
            ProbeTask::Content => "content",
            ProbeTask::Efficiency => "efficiency",
            ProbeTask::Reconstruct => "reconstruct",
        }
    }
}

fn prepare_out(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    cfg.echo(out)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Unique pathways of a corpus directory (first occurrence wins).
pub fn read_corpus(dir: &Path) -> Result<Vec<Pathway>, CliError> {
    Ok(ingest(open(&dir.join(PATHWAYS_FILE))?)?)
}

/// Every retained attempt of a corpus directory, duplicates included.
pub fn read_attempts(dir: &Path) -> Result<Vec<Pathway>, CliError> {
    Ok(ingest_attempts(open(&dir.join(PATHWAYS_FILE))?)?)
}

pub fn read_problem_map(dir: &Path) -> Result<HashMap<String, Problem>, CliError> {
    let problems = read_problems(open(&dir.join(PROBLEMS_FILE))?)?;
    Ok(problems.into_iter().map(|p| (p.problem_id.clone(), p)).collect())
}

pub fn gen(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let g = &cfg.gen;
    if !g.mix.is_valid() {
        return Err(CliError::Usage("mix must be three non-negative weights summing to 1".into()));
    }
    prepare_out(cfg, out)?;
    let corpus = generate_corpus(cfg.seed, g.problems, g.students, g.attempts, g.mix);
    let mut w = create(&out.join(PROBLEMS_FILE))?;
    write_jsonl(&mut w, &corpus.problems)?;
    w.flush()?;
    let mut w = create(&out.join(PATHWAYS_FILE))?;
    write_jsonl(&mut w, &corpus.pathways)?;
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join(STUDENTS_FILE))?;
    for s in &corpus.students {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct EncodeSummary {
    states: usize,
    dim: usize,
    collisions: Vec<(String, String)>,
}

pub fn state_encoder(cfg: &RunConfig) -> Result<StateEncoder, CliError> {
    match cfg.encode.encoder {
        EncoderKind::Structural => Ok(StateEncoder::structural(cfg.encode.dim, cfg.seed)?),
        EncoderKind::Table => {
            let path = cfg
                .encode
                .table_path
                .as_ref()
                .ok_or_else(|| CliError::Usage("--encoder table needs --table-path".into()))?;
            Ok(load_table_path(path)?)
        }
    }
}

/// Embeds every distinct state of the corpus into `states.tsv`.
pub fn encode(cfg: &RunConfig, corpus: &Path, out: &Path) -> Result<(), CliError> {
    let attempts = read_attempts(corpus)?;
    let enc = state_encoder(cfg)?;
    let states: Vec<String> = attempts
        .iter()
        .flat_map(|p| p.states.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let vectors = enc.encode_all(&states)?;
    let collisions = find_collisions(&enc, &states)?;
    prepare_out(cfg, out)?;
    let rows: Vec<(String, Vec<f64>)> = states.into_iter().zip(vectors).collect();
    let mut w = create(&out.join(STATES_FILE))?;
    write_table(&mut w, enc.dim(), &rows)?;
    w.flush()?;
    write_json(
        &out.join(ENCODE_SUMMARY_FILE),
        &EncodeSummary {
            states: rows.len(),
            dim: enc.dim(),
            collisions,
        },
    )
}

#[derive(Serialize)]
struct TrainSummary {
    sequences: usize,
    best_epoch: usize,
    best_val_loss: f64,
    epochs_run: usize,
    split: Split,
}

/// Trains the sequence encoder on the unique pathways of `corpus`.
pub fn train_stage(cfg: &RunConfig, corpus: &Path, states: &Path, out: &Path) -> Result<(), CliError> {
    let pathways = read_corpus(corpus)?;
    let enc = load_table_path(states)?;
    let config = cfg.encoder_config(enc.dim());
    config.validate()?;
    let seqs = build_sequences(&enc, &pathways, config.input_mode)?;
    let outcome = train(&config, &seqs, &cfg.train_hyper())?;
    prepare_out(cfg, out)?;
    let mut w = create(&out.join(CHECKPOINT_FILE))?;
    save_checkpoint(&outcome.model, &mut w, cfg.seed)?;
    w.flush()?;
    let mut w = create(&out.join(TRAIN_LOG_FILE))?;
    write_log_csv(&mut w, &outcome.log)?;
    w.flush()?;
    write_json(
        &out.join(TRAIN_SUMMARY_FILE),
        &TrainSummary {
            sequences: seqs.len(),
            best_epoch: outcome.best_epoch,
            best_val_loss: outcome.best_val_loss,
            epochs_run: outcome.log.len() - 1,
            split: outcome.split,
        },
    )
}

/// Writes `#dim=<k>` then `attempt_id<TAB>values` rows.
pub fn write_embeddings<W: Write>(mut w: W, dim: usize, rows: &[(String, Vec<f64>)]) -> std::io::Result<()> {
    write_table(&mut w, dim, rows)
}

pub fn read_embeddings<R: BufRead>(r: R) -> Result<HashMap<String, Vec<f64>>, CliError> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let dim: usize = header
        .strip_prefix("#dim=")
        .and_then(|d| d.trim().parse().ok())
        .ok_or_else(|| CliError::Data("embeddings line 1: expected header #dim=<d>".into()))?;
    let mut out = HashMap::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| CliError::Data(format!("embeddings line {}: {m}", i + 2));
        let (id, values) = line.split_once('\t').ok_or_else(|| bad("expected id<TAB>values"))?;
        let v: Vec<f64> = values
            .split_whitespace()
            .map(|x| x.parse())
            .collect::<Result<_, _>>()
            .map_err(|e: std::num::ParseFloatError| bad(&e.to_string()))?;
        if v.len() != dim {
            return Err(bad(&format!("expected {dim} values, found {}", v.len())));
        }
        out.insert(id.to_string(), v);
    }
    Ok(out)
}

fn embeddings_for(path: &Path, pathways: &[Pathway]) -> Result<Vec<Vec<f64>>, CliError> {
    let map = read_embeddings(open(path)?)?;
    pathways
        .iter()
        .map(|p| {
            map.get(&p.attempt_id)
                .cloned()
                .ok_or_else(|| CliError::Data(format!("no sequence embedding for attempt {}", p.attempt_id)))
        })
        .collect()
}

/// Embeds every retained attempt with a trained checkpoint.
pub fn embed_seq(cfg: &RunConfig, corpus: &Path, states: &Path, checkpoint: &Path, out: &Path) -> Result<(), CliError> {
    let (model, _) = load_checkpoint(open(checkpoint)?)?;
    let attempts = read_attempts(corpus)?;
    let enc = load_table_path(states)?;
    // embed each distinct pathway once
    let mut slot: HashMap<(String, Vec<String>), usize> = HashMap::new();
    let mut unique: Vec<Pathway> = Vec::new();
    let owner: Vec<usize> = attempts
        .iter()
        .map(|p| {
            *slot.entry(p.dedupe_key()).or_insert_with(|| {
                unique.push(p.clone());
                unique.len() - 1
            })
        })
        .collect();
    let seqs = build_sequences(&enc, &unique, model.config.input_mode)?;
    let z = model.embed(&seqs)?;
    prepare_out(cfg, out)?;
    let rows: Vec<(String, Vec<f64>)> = attempts
        .iter()
        .zip(&owner)
        .map(|(p, &u)| (p.attempt_id.clone(), z[u].clone()))
        .collect();
    let mut w = create(&out.join(EMBEDDINGS_FILE))?;
    write_embeddings(&mut w, model.config.k, &rows)?;
    w.flush()?;
    Ok(())
}

pub fn action_vocabulary() -> Vec<String> {
    ActionKind::ALL.iter().map(|a| a.name().to_string()).collect()
}

pub fn action_tokens(pathways: &[Pathway]) -> Result<Vec<Vec<usize>>, CliError> {
    pathways
        .iter()
        .map(|p| match p.action_kinds() {
            Some(Ok(kinds)) => Ok(kinds.iter().map(|k| k.index()).collect()),
            Some(Err(e)) => Err(CliError::Data(format!("attempt {}: {e}", p.attempt_id))),
            None => Err(CliError::Data(format!("attempt {} has no action labels", p.attempt_id))),
        })
        .collect()
}

pub fn efficiency_labels(pathways: &[Pathway], problems: &HashMap<String, Problem>) -> Result<Vec<usize>, CliError> {
    pathways
        .iter()
        .map(|p| {
            let prob = problems
                .get(&p.problem_id)
                .ok_or_else(|| CliError::Data(format!("unknown problem {}", p.problem_id)))?;
            Ok(efficiency_label(p, prob)?.index())
        })
        .collect()
}

pub fn efficiency_class_names() -> Vec<String> {
    [EfficiencyLabel::Optimal, EfficiencyLabel::Suboptimal, EfficiencyLabel::Incomplete]
        .iter()
        .map(|l| format!("{l:?}"))
        .collect()
}

/// Mean of each pathway's state vectors.
pub fn mean_pool_states(enc: &StateEncoder, pathways: &[Pathway]) -> Result<Vec<Vec<f64>>, CliError> {
    pathways
        .iter()
        .map(|p| Ok(mean_pool_baseline(&enc.encode_all(&p.states)?)?))
        .collect()
}

/// Trains and evaluates one probe on `x` over the unique pathways.
pub fn run_probe(
    cfg: &RunConfig,
    task: ProbeTask,
    x: &[Vec<f64>],
    pathways: &[Pathway],
    problems: &HashMap<String, Problem>,
    split: &Split,
) -> Result<ProbeReport, CliError> {
    let hyper = cfg.probe_hyper();
    let vocab = action_vocabulary();
    Ok(match task {
        ProbeTask::Content => {
            let toks = action_tokens(pathways)?;
            let targets: Vec<Vec<bool>> = toks
                .iter()
                .map(|t| (0..vocab.len()).map(|c| t.contains(&c)).collect())
                .collect();
            train_action_content_probe(x, &targets, &vocab, split, &hyper)?.1
        }
        ProbeTask::Efficiency => {
            let labels = efficiency_labels(pathways, problems)?;
            train_efficiency_probe(x, &labels, &efficiency_class_names(), split, &hyper)?.1
        }
        ProbeTask::Reconstruct => {
            let toks = action_tokens(pathways)?;
            train_reconstruction_probe(x, &toks, vocab.len(), split, &hyper)?.1
        }
    })
}

#[derive(Serialize)]
struct ProbeSummary {
    task: &'static str,
    n_pathways: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    majority_micro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    unigram_perplexity: Option<f64>,
}

/// Probe on sequence embeddings and, with `baseline`, on mean-pooled state
/// vectors, using the encoder's train/val/test split.
#[allow(clippy::too_many_arguments)]
pub fn probe(
    cfg: &RunConfig,
    task: ProbeTask,
    baseline: bool,
    corpus: &Path,
    states: &Path,
    embeddings: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let pathways = read_corpus(corpus)?;
    let problems = read_problem_map(corpus)?;
    let x = embeddings_for(embeddings, &pathways)?;
    let t = &cfg.train;
    let split = split_indices(pathways.len(), t.train_frac, t.val_frac, cfg.seed);
    let seq = run_probe(cfg, task, &x, &pathways, &problems, &split)?;
    let base = if baseline {
        let enc = load_table_path(states)?;
        let xb = mean_pool_states(&enc, &pathways)?;
        Some(run_probe(cfg, task, &xb, &pathways, &problems, &split)?)
    } else {
        None
    };
    let summary = ProbeSummary {
        task: task.name(),
        n_pathways: pathways.len(),
        majority_micro_f1: match task {
            ProbeTask::Efficiency => Some(majority_baseline_micro_f1(
                &efficiency_labels(&pathways, &problems)?,
                &split,
                3,
            )),
            _ => None,
        },
        unigram_perplexity: match task {
            ProbeTask::Reconstruct => Some(unigram_perplexity(
                &action_tokens(&pathways)?,
                action_vocabulary().len(),
                &split,
            )),
            _ => None,
        },
    };
    prepare_out(cfg, out)?;
    let name = task.name();
    write_json(&out.join(format!("probe_{name}.json")), &seq)?;
    write_json(&out.join(format!("probe_{name}_summary.json")), &summary)?;
    if let Some(base) = base {
        write_json(&out.join(format!("probe_{name}_meanpool.json")), &base)?;
        let mut w = create(&out.join(format!("comparison_{name}.csv")))?;
        write_comparison_csv(&mut w, &compare_to_baseline(&seq, &base))?;
        w.flush()?;
    }
    Ok(())
}

/// Joins every retained attempt to its sequence embedding and efficiency.
pub fn attempt_records(
    attempts: &[Pathway],
    problems: &HashMap<String, Problem>,
    z: Vec<Vec<f64>>,
) -> Result<Vec<AttemptRecord>, CliError> {
    let labels = efficiency_labels(attempts, problems)?;
    Ok(attempts
        .iter()
        .zip(z)
        .zip(labels)
        .map(|((p, z), label)| AttemptRecord {
            student_id: p.student_id.clone(),
            problem_id: p.problem_id.clone(),
            attempt_id: p.attempt_id.clone(),
            completed: p.completed,
            optimal: label == EfficiencyLabel::Optimal.index(),
            action_key: p.actions.as_ref().map(|a| a.join(",")).unwrap_or_default(),
            solution_key: p.states.join(" ; "),
            z,
        })
        .collect())
}

/// Student-level uniqueness, diversity and conformity.
pub fn measure(cfg: &RunConfig, corpus: &Path, embeddings: &Path, out: &Path) -> Result<(), CliError> {
    let attempts = read_attempts(corpus)?;
    let problems = read_problem_map(corpus)?;
    let z = embeddings_for(embeddings, &attempts)?;
    let records = attempt_records(&attempts, &problems, z)?;
    let scores = strategy_scores(&records, cfg.measure.shrinkage)?;
    prepare_out(cfg, out)?;
    let mut w = create(&out.join(SCORES_FILE))?;
    write_scores_csv(&mut w, &scores)?;
    w.flush()?;
    Ok(())
}

type Table = (Vec<String>, Vec<HashMap<String, String>>);

fn read_csv_table(path: &Path) -> Result<Table, CliError> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let headers: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(headers.iter().cloned().zip(rec.iter().map(String::from)).collect());
    }
    Ok((headers, rows))
}

fn numeric(cell: Option<&String>, what: &str) -> Result<Option<f64>, CliError> {
    match cell.map(|s| s.trim()) {
        None | Some("") => Ok(None),
        Some(s) => s
            .parse::<f64>()
            .map(Some)
            .map_err(|_| CliError::Data(format!("{what}: not a number: {s:?}"))),
    }
}

/// Regresses each outcome on the standardized strategy measures.
pub fn regress(cfg: &RunConfig, scores: &Path, outcomes: &Path, out: &Path) -> Result<Vec<RegressionResult>, CliError> {
    let (score_cols, score_rows) = read_csv_table(scores)?;
    let (outcome_cols, outcome_rows) = read_csv_table(outcomes)?;
    let required = std::iter::once("student_id").chain(cfg.regress.predictors.iter().map(String::as_str));
    for col in required {
        if !score_cols.iter().any(|c| c == col) {
            return Err(CliError::Data(format!("scores file lacks column {col}")));
        }
    }
    let by_student: HashMap<&str, &HashMap<String, String>> = outcome_rows
        .iter()
        .filter_map(|r| r.get("student_id").map(|id| (id.as_str(), r)))
        .collect();
    let mut predictors = Vec::new();
    for name in &cfg.regress.predictors {
        let col = score_rows
            .iter()
            .map(|r| numeric(r.get(name), name))
            .collect::<Result<Vec<_>, _>>()?;
        predictors.push((name.clone(), col));
    }
    let mut results = Vec::new();
    for outcome in &cfg.regress.outcomes {
        if !outcome_cols.iter().any(|c| c == outcome) {
            return Err(CliError::Data(format!("outcomes file lacks column {outcome}")));
        }
        let y = score_rows
            .iter()
            .map(|r| match by_student.get(r["student_id"].as_str()) {
                Some(o) => numeric(o.get(outcome), outcome),
                None => Ok(None),
            })
            .collect::<Result<Vec<_>, _>>()?;
        results.push(regress_listwise(outcome, &y, &predictors)?);
    }
    prepare_out(cfg, out)?;
    write_json(&out.join(REGRESSION_JSON), &results)?;
    std::fs::write(out.join(REGRESSION_TXT), format_table(&results))?;
    Ok(results)
}

/// One point per transition: the state it produced or the transition vector,
/// labeled with its problem and action.
pub struct LabeledPoints {
    pub vectors: Vec<Vec<f64>>,
    pub problems: Vec<String>,
    pub actions: Vec<String>,
    pub ids: Vec<(String, usize)>,
}

pub fn labeled_points(enc: &StateEncoder, pathways: &[Pathway], level: Level) -> Result<LabeledPoints, CliError> {
    let mut pts = LabeledPoints {
        vectors: Vec::new(),
        problems: Vec::new(),
        actions: Vec::new(),
        ids: Vec::new(),
    };
    for p in pathways {
        let actions = p
            .actions
            .as_ref()
            .ok_or_else(|| CliError::Data(format!("attempt {} has no action labels", p.attempt_id)))?;
        let h = enc.encode_all(&p.states)?;
        for (t, action) in actions.iter().enumerate() {
            let v = match level {
                Level::State => h[t + 1].clone(),
                Level::Transition => h[t + 1].iter().zip(&h[t]).map(|(a, b)| a - b).collect(),
            };
            pts.vectors.push(v);
            pts.problems.push(p.problem_id.clone());
            pts.actions.push(action.clone());
            pts.ids.push((p.attempt_id.clone(), t));
        }
    }
    Ok(pts)
}

/// 2-D principal-component coordinates plus silhouettes under both labelings.
pub fn project(cfg: &RunConfig, corpus: &Path, states: &Path, out: &Path) -> Result<(), CliError> {
    let pathways = read_corpus(corpus)?;
    let enc = load_table_path(states)?;
    let level = cfg.project.level;
    let pts = labeled_points(&enc, &pathways, level)?;
    let coords = project_2d(&pts.vectors)?;
    let sil = silhouette_comparison(&pts.vectors, &pts.problems, &pts.actions, level)?;
    prepare_out(cfg, out)?;
    let mut w = csv::Writer::from_path(out.join(PROJECTION_FILE))?;
    w.write_record(["x", "y", "problem_id", "action_label", "attempt_id", "step"])?;
    for (i, (x, y)) in coords.iter().enumerate() {
        w.write_record([
            format!("{x:?}"),
            format!("{y:?}"),
            pts.problems[i].clone(),
            pts.actions[i].clone(),
            pts.ids[i].0.clone(),
            pts.ids[i].1.to_string(),
        ])?;
    }
    w.flush()?;
    write_json(&out.join(SILHOUETTE_FILE), &sil)
}
