//! `ier` - train, evaluate and run the two-level image edit request models.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error. Diagnostics go to
//! stderr; requested data (encodings, predictions, reports) to stdout or
//! the path given by `-o`.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use ier_core::action::{ActionModel, ActionTrainConfig};
use ier_core::annot::{
    filter_executable, load_corpus, serialize, Corpus, CorpusFormat, ParseError,
};
use ier_core::crf::{CrfModel, CrfTrainConfig};
use ier_core::eval::{krippendorff_alpha, Metrics, RatingsMatrix};
use ier_core::features::EmbeddingTable;
use ier_core::pipeline::{
    evaluate_action, evaluate_entities, preprocess, train_action_level, train_entity_level,
    tune_entity_l2, ActionSource, BioMode, EntityEvalReport, PredictOutcome, Predictor, SplitMode,
    SplitSpec,
};
use ier_core::synth::{generate, SynthConfig};

#[derive(Parser)]
#[command(
    name = "ier",
    version,
    about = "Two-level parsing of natural-language image edit requests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Bracket,
    Jsonl,
}

impl From<FormatArg> for CorpusFormat {
    fn from(f: FormatArg) -> CorpusFormat {
        match f {
            FormatArg::Bracket => CorpusFormat::BracketLines,
            FormatArg::Jsonl => CorpusFormat::Jsonl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Innermost,
    Nested,
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus file.
    file: PathBuf,
    /// Corpus file format.
    #[arg(long, value_enum, default_value = "bracket")]
    format: FormatArg,
    /// Exit with a data error when parse failures exceed this count;
    /// 0 reports failures but continues.
    #[arg(long, default_value_t = 0)]
    max_errors: usize,
}

#[derive(Args)]
struct BioArgs {
    /// Flattening policy for nested entities.
    #[arg(long, value_enum, default_value = "innermost")]
    mode: ModeArg,
    /// Composite label depth for nested mode.
    #[arg(long, default_value_t = 2)]
    max_depth: usize,
}

impl BioArgs {
    fn bio(&self) -> BioMode {
        match self.mode {
            ModeArg::Innermost => BioMode::Innermost,
            ModeArg::Nested => BioMode::Nested {
                max_depth: self.max_depth,
            },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus file and report parse errors.
    Parse(CorpusArgs),
    /// Emit per-token BIO tags, one utterance per line.
    Encode {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        bio: BioArgs,
        /// Output path (stdout when absent).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic annotated corpus.
    Synth {
        /// Number of utterances.
        #[arg(long)]
        n: usize,
        /// Generator seed.
        #[arg(long)]
        seed: u64,
        /// Share verbs across actions so classifiers cannot reach 100%.
        #[arg(long)]
        hard: bool,
        /// Fraction of plain comment lines without an IER.
        #[arg(long, default_value_t = 0.0)]
        comment_rate: f64,
        /// Output format.
        #[arg(long, value_enum, default_value = "bracket")]
        format: FormatArg,
        /// Output path (stdout when absent).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Train the level-1 action classifier on a 75/25 split and report
    /// held-out metrics.
    TrainAction {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Split shuffle seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Word-vector text file for mean-pooled features.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// L2 regularization strength.
        #[arg(long, default_value_t = 1.0)]
        l2: f64,
        /// Weight examples by inverse class frequency.
        #[arg(long)]
        class_weighting: bool,
        /// Where to write the trained model.
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the metric report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Also write the confusion matrix as CSV.
        #[arg(long)]
        confusion_csv: Option<PathBuf>,
    },
    /// Evaluate a saved action model on a corpus.
    EvalAction {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Trained action model.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        confusion_csv: Option<PathBuf>,
    },
    /// Train the level-2 entity tagger on an 80/10/10 split and report
    /// held-out metrics.
    TrainEntities {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        bio: BioArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// L2 regularization strength.
        #[arg(long, default_value_t = 1.0)]
        l2: f64,
        /// Pick the L2 strength from {0.1, 1, 10} by span F1 on the dev split.
        #[arg(long)]
        tune: bool,
        /// Drop the action hand-off features.
        #[arg(long)]
        no_action_feature: bool,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Evaluate a saved entity tagger on a corpus.
    EvalEntities {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        bio: BioArgs,
        /// Trained CRF model.
        #[arg(long)]
        model: PathBuf,
        /// Feed gold actions to the tagger (default).
        #[arg(long, conflicts_with = "pred_actions")]
        gold_actions: bool,
        /// Feed level-1 predictions to the tagger; requires --action-model.
        #[arg(long, requires = "action_model")]
        pred_actions: bool,
        #[arg(long)]
        action_model: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Turn raw text lines into edit command JSON, one object per line.
    Predict {
        /// Text file with one request per line (stdin when absent).
        file: Option<PathBuf>,
        #[arg(long)]
        action_model: PathBuf,
        #[arg(long)]
        crf_model: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Confidence gate between the levels; requests whose top action
        /// probability falls below it are reported as ambiguous.
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compute Krippendorff's alpha from a ratings CSV (header = rater
    /// names, one row per item, empty cell = missing).
    Agreement {
        file: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli.command) {
        eprintln!("error: {err:#}");
        std::process::exit(2);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Parse(args) => cmd_parse(args),
        Command::Encode {
            corpus,
            bio,
            output,
        } => cmd_encode(corpus, bio, output),
        Command::Synth {
            n,
            seed,
            hard,
            comment_rate,
            format,
            output,
        } => cmd_synth(n, seed, hard, comment_rate, format, output),
        Command::TrainAction {
            corpus,
            seed,
            embeddings,
            l2,
            class_weighting,
            output,
            json,
            confusion_csv,
        } => cmd_train_action(
            corpus,
            seed,
            embeddings,
            l2,
            class_weighting,
            output,
            json,
            confusion_csv,
        ),
        Command::EvalAction {
            corpus,
            model,
            embeddings,
            json,
            confusion_csv,
        } => cmd_eval_action(corpus, model, embeddings, json, confusion_csv),
        Command::TrainEntities {
            corpus,
            bio,
            seed,
            l2,
            tune,
            no_action_feature,
            output,
            json,
        } => cmd_train_entities(corpus, bio, seed, l2, tune, no_action_feature, output, json),
        Command::EvalEntities {
            corpus,
            bio,
            model,
            gold_actions: _,
            pred_actions,
            action_model,
            embeddings,
            json,
        } => cmd_eval_entities(
            corpus,
            bio,
            model,
            pred_actions,
            action_model,
            embeddings,
            json,
        ),
        Command::Predict {
            file,
            action_model,
            crf_model,
            embeddings,
            tau,
            output,
        } => cmd_predict(file, action_model, crf_model, embeddings, tau, output),
        Command::Agreement { file, json } => cmd_agreement(file, json),
    }
}

fn load(args: &CorpusArgs) -> Result<Corpus> {
    let file =
        File::open(&args.file).with_context(|| format!("cannot open {}", args.file.display()))?;
    let (corpus, errors) = load_corpus(
        BufReader::new(file),
        args.format.into(),
        &args.file.display().to_string(),
    )
    .context("corpus is not decodable")?;
    report_errors(&errors, args.max_errors)?;
    Ok(corpus)
}

fn report_errors(errors: &[ParseError], max_errors: usize) -> Result<()> {
    for err in errors {
        eprintln!("{err}");
    }
    if max_errors > 0 && errors.len() > max_errors {
        bail!(
            "{} parse failures exceed --max-errors {max_errors}",
            errors.len()
        );
    }
    Ok(())
}

fn write_output(output: Option<&Path>, content: &str) -> Result<()> {
    match output {
        Some(path) => std::fs::write(path, content)
            .with_context(|| format!("cannot write {}", path.display()))?,
        None => io::stdout().write_all(content.as_bytes())?,
    }
    Ok(())
}

fn load_embeddings(path: Option<&Path>) -> Result<Option<EmbeddingTable>> {
    match path {
        None => Ok(None),
        Some(p) => {
            let file = File::open(p).with_context(|| format!("cannot open {}", p.display()))?;
            let table = EmbeddingTable::load(BufReader::new(file))
                .with_context(|| format!("bad embedding file {}", p.display()))?;
            eprintln!(
                "loaded {} word vectors of dimension {}",
                table.len(),
                table.dim()
            );
            Ok(Some(table))
        }
    }
}

fn cmd_parse(args: CorpusArgs) -> Result<()> {
    let error_count = {
        let file = File::open(&args.file)
            .with_context(|| format!("cannot open {}", args.file.display()))?;
        let (corpus, errors) = load_corpus(
            BufReader::new(file),
            args.format.into(),
            &args.file.display().to_string(),
        )
        .context("corpus is not decodable")?;
        let (_, counts) = filter_executable(&corpus);
        println!(
            "{}: {} utterances, {} parse errors; executable filter would drop {} (no IER {}, OTHER {}, no action {})",
            args.file.display(),
            corpus.utterances.len(),
            errors.len(),
            counts.total(),
            counts.removed_no_ier,
            counts.removed_other_action,
            counts.removed_no_action,
        );
        for err in &errors {
            eprintln!("{err}");
        }
        errors.len()
    };
    if args.max_errors > 0 && error_count > args.max_errors {
        bail!(
            "{error_count} parse failures exceed --max-errors {}",
            args.max_errors
        );
    }
    Ok(())
}

fn cmd_encode(corpus_args: CorpusArgs, bio_args: BioArgs, output: Option<PathBuf>) -> Result<()> {
    let corpus = load(&corpus_args)?;
    let bio = bio_args.bio();
    let mut out = String::new();
    for utt in &corpus.utterances {
        let tags = bio.encode(utt);
        let line: Vec<String> = utt
            .tokens
            .iter()
            .zip(&tags)
            .map(|(tok, tag)| format!("{}\t{}", tok.text, tag))
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    write_output(output.as_deref(), &out)
}

fn cmd_synth(
    n: usize,
    seed: u64,
    hard: bool,
    comment_rate: f64,
    format: FormatArg,
    output: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = if hard {
        SynthConfig::hard()
    } else {
        SynthConfig::default()
    };
    cfg.comment_rate = comment_rate;
    let corpus = generate(&cfg, n, seed);
    let mut out = String::new();
    for utt in &corpus.utterances {
        match format {
            FormatArg::Bracket => {
                out.push_str(&serialize(utt));
            }
            FormatArg::Jsonl => {
                let text = utt.words().join(" ");
                let record = match &utt.root {
                    Some(_) => serde_json::json!({
                        "id": utt.id, "text": text, "ann": serialize(utt),
                    }),
                    None => serde_json::json!({ "id": utt.id, "text": text }),
                };
                out.push_str(&record.to_string());
            }
        }
        out.push('\n');
    }
    write_output(output.as_deref(), &out)
}

fn print_metrics(
    metrics: &Metrics,
    json: Option<&Path>,
    confusion_csv: Option<&Path>,
) -> Result<()> {
    print!("{}", metrics.to_table());
    if let Some(path) = json {
        std::fs::write(path, serde_json::to_string_pretty(metrics)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    if let Some(path) = confusion_csv {
        std::fs::write(path, metrics.confusion_csv())
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train_action(
    corpus_args: CorpusArgs,
    seed: u64,
    embeddings: Option<PathBuf>,
    l2: f64,
    class_weighting: bool,
    output: PathBuf,
    json: Option<PathBuf>,
    confusion_csv: Option<PathBuf>,
) -> Result<()> {
    let corpus = load(&corpus_args)?;
    let table = load_embeddings(embeddings.as_deref())?;
    let splits = preprocess(
        &corpus,
        &SplitSpec {
            mode: SplitMode::Action,
            seed,
        },
    )?;
    eprintln!(
        "train {} / test {} utterances ({} filtered out)",
        splits.train.len(),
        splits.test.len(),
        splits.filter.total()
    );
    let cfg = ActionTrainConfig {
        l2,
        class_weighting,
        ..ActionTrainConfig::default()
    };
    let model = train_action_level(&splits.train, table.as_ref(), &cfg)?;
    model.save(&output).context("cannot save model")?;
    eprintln!("model written to {}", output.display());
    let metrics = evaluate_action(&model, &splits.test, table.as_ref())?;
    print_metrics(&metrics, json.as_deref(), confusion_csv.as_deref())
}

fn cmd_eval_action(
    corpus_args: CorpusArgs,
    model_path: PathBuf,
    embeddings: Option<PathBuf>,
    json: Option<PathBuf>,
    confusion_csv: Option<PathBuf>,
) -> Result<()> {
    let corpus = load(&corpus_args)?;
    let table = load_embeddings(embeddings.as_deref())?;
    let model = ActionModel::load(&model_path).context("cannot load action model")?;
    let (filtered, _) = filter_executable(&corpus);
    if filtered.utterances.is_empty() {
        bail!("no executable utterances to evaluate");
    }
    let metrics = evaluate_action(&model, &filtered.utterances, table.as_ref())?;
    print_metrics(&metrics, json.as_deref(), confusion_csv.as_deref())
}

fn print_entity_report(report: &EntityEvalReport, json: Option<&Path>) -> Result<()> {
    println!("token-level:");
    print!("{}", report.token_metrics.to_table());
    println!("span-level (exact match):");
    print!("{}", report.span_metrics.to_table());
    if let Some(path) = json {
        std::fs::write(path, serde_json::to_string_pretty(report)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train_entities(
    corpus_args: CorpusArgs,
    bio_args: BioArgs,
    seed: u64,
    l2: f64,
    tune: bool,
    no_action_feature: bool,
    output: PathBuf,
    json: Option<PathBuf>,
) -> Result<()> {
    let corpus = load(&corpus_args)?;
    let bio = bio_args.bio();
    let splits = preprocess(
        &corpus,
        &SplitSpec {
            mode: SplitMode::Entity,
            seed,
        },
    )?;
    eprintln!(
        "train {} / dev {} / test {} utterances ({} filtered out)",
        splits.train.len(),
        splits.dev.len(),
        splits.test.len(),
        splits.filter.total()
    );
    let base = CrfTrainConfig {
        l2,
        use_action_feature: !no_action_feature,
        ..Default::default()
    };
    let model = if tune {
        if splits.dev.is_empty() {
            bail!("corpus too small to tune: dev split is empty");
        }
        let (best_l2, model) =
            tune_entity_l2(&splits.train, &splits.dev, bio, &base, &[0.1, 1.0, 10.0])?;
        eprintln!("tuned l2 = {best_l2}");
        model
    } else {
        train_entity_level(&splits.train, bio, &base)?
    };
    model.save(&output).context("cannot save model")?;
    eprintln!("model written to {}", output.display());
    let report = evaluate_entities(&model, &splits.test, bio, ActionSource::Gold)?;
    print_entity_report(&report, json.as_deref())
}

fn cmd_eval_entities(
    corpus_args: CorpusArgs,
    bio_args: BioArgs,
    model_path: PathBuf,
    pred_actions: bool,
    action_model: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    json: Option<PathBuf>,
) -> Result<()> {
    let corpus = load(&corpus_args)?;
    let bio = bio_args.bio();
    let model = CrfModel::load(&model_path).context("cannot load CRF model")?;
    let (filtered, _) = filter_executable(&corpus);
    if filtered.utterances.is_empty() {
        bail!("no executable utterances to evaluate");
    }
    let table = load_embeddings(embeddings.as_deref())?;
    let report = if pred_actions {
        let path = action_model.expect("clap enforces --action-model");
        let action = ActionModel::load(&path).context("cannot load action model")?;
        evaluate_entities(
            &model,
            &filtered.utterances,
            bio,
            ActionSource::Predicted {
                model: &action,
                embeddings: table.as_ref(),
            },
        )?
    } else {
        evaluate_entities(&model, &filtered.utterances, bio, ActionSource::Gold)?
    };
    print_entity_report(&report, json.as_deref())
}

fn cmd_predict(
    file: Option<PathBuf>,
    action_model: PathBuf,
    crf_model: PathBuf,
    embeddings: Option<PathBuf>,
    tau: f64,
    output: Option<PathBuf>,
) -> Result<()> {
    let action = ActionModel::load(&action_model).context("cannot load action model")?;
    let crf = CrfModel::load(&crf_model).context("cannot load CRF model")?;
    let table = load_embeddings(embeddings.as_deref())?;
    let predictor = Predictor::new(action, crf, table, tau);

    let reader: Box<dyn Read> = match &file {
        Some(path) => {
            Box::new(File::open(path).with_context(|| format!("cannot open {}", path.display()))?)
        }
        None => Box::new(io::stdin()),
    };
    let mut out = String::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let id = format!("{}", idx + 1);
        match predictor.predict(&id, &line) {
            Ok(PredictOutcome::Command(cmd)) => out.push_str(&cmd.to_json()),
            Ok(PredictOutcome::Ambiguous(req)) => out.push_str(&req.to_json()),
            Err(err) => {
                eprintln!("line {id}: {err}");
                continue;
            }
        }
        out.push('\n');
    }
    write_output(output.as_deref(), &out)
}

fn cmd_agreement(file: PathBuf, json: Option<PathBuf>) -> Result<()> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(&file)
        .with_context(|| format!("cannot open {}", file.display()))?;
    let raters: Vec<String> = reader
        .headers()
        .context("ratings CSV needs a header row")?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.context("bad CSV record")?;
        let row: Vec<Option<String>> = (0..raters.len())
            .map(|i| {
                record
                    .get(i)
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(str::to_string)
            })
            .collect();
        rows.push(row);
    }
    let items = rows.len();
    let matrix = RatingsMatrix::new(raters.clone(), rows);
    let alpha = krippendorff_alpha(&matrix).context("cannot compute agreement")?;
    println!(
        "krippendorff alpha = {alpha:.6} ({} raters, {items} items)",
        raters.len()
    );
    if let Some(path) = json {
        let payload = serde_json::json!({
            "alpha": alpha,
            "raters": raters,
            "items": items,
        });
        std::fs::write(&path, serde_json::to_string_pretty(&payload)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}
