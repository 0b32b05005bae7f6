//! Command-line front end. [`run`] parses argv, dispatches, and maps the
//! outcome to an exit code: 0 on success, 1 on usage errors, 2 on data errors.
//!
//! Every command that writes a file also writes `<file>.run.json`, a
//! [`RunManifest`] with the resolved flags and SHA-256 digests of the inputs.
//! `--run-manifest <path>` picks another location, which is how commands that
//! only print to stdout get one.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::ablation::{ablation_csv, run_ablation, AblationConfig};
use crate::bank::{l2_normalize, Embedding, FeatureBank};
use crate::ensemble::{combine, member_votes_split, EnsembleConfig, TiePolicy, VoteMode};
use crate::error::Error;
use crate::gradcheck::grad_check;
use crate::hier::{predict_flat, predict_hierarchical};
use crate::metrics::score_predictions;
use crate::records::{
    read_jsonl, write_jsonl, EnsembleRecord, LeafRecord, PredictionRecord, Record,
};
use crate::synth::{apply_shift, generate, Bias, ShiftSpec, SynthConfig};
use crate::taxonomy::Taxonomy;
use crate::toy_train::{
    split_eval, toy_dataset, train_toy, ClassWeights, LossConfig, ToyDataConfig, TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "hierknn",
    version,
    about = "Feature-bank kNN classification over a label taxonomy"
)]
pub struct Cli {
    /// Taxonomy file; the built-in 13-leaf taxonomy when omitted.
    #[arg(long, global = true)]
    taxonomy: Option<PathBuf>,
    /// Where to write the run manifest.
    #[arg(long, global = true)]
    run_manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
enum Command {
    /// Taxonomy checks.
    #[command(subcommand)]
    Taxonomy(TaxonomyCmd),
    /// Feature bank lifecycle.
    #[command(subcommand)]
    Bank(BankCmd),
    /// Classify query vectors against one bank.
    Classify(ClassifyArgs),
    /// Majority vote over several banks.
    Ensemble(EnsembleArgs),
    /// Hierarchy on/off by ensemble size grid on synthetic data.
    Ablate(AblateArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic bank and held-out queries.
    Synth(SynthArgs),
    /// Train the toy teacher/student model and print the epoch trace.
    Traintoy(TrainArgs),
    /// Compare analytic loss gradients with finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Subcommand, Serialize)]
enum TaxonomyCmd {
    /// Parse a taxonomy file and print its shape and digest.
    Validate { file: Option<PathBuf> },
}

#[derive(Debug, Subcommand, Serialize)]
enum BankCmd {
    /// Build a bank from a labeled manifest.
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print dim, count, per-leaf histogram and taxonomy digest.
    Info { bank: PathBuf },
    /// Concatenate banks in the given order.
    Merge {
        #[arg(required = true, num_args = 2..)]
        banks: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args, Serialize)]
struct ClassifyArgs {
    #[arg(long)]
    bank: PathBuf,
    #[arg(long, default_value_t = 7)]
    k: usize,
    /// Plain leaf vote instead of coarse-to-fine.
    #[arg(long)]
    flat: bool,
    #[arg(long)]
    queries: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EnsembleArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    banks: Vec<PathBuf>,
    #[arg(long, default_value_t = 7)]
    k: usize,
    #[arg(long)]
    flat: bool,
    /// One manifest shared by all members, or one per member in bank order.
    #[arg(long, value_delimiter = ',', required = true)]
    queries: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "similarity-margin")]
    tie_policy: String,
}

#[derive(Debug, Args, Serialize)]
struct AblateArgs {
    /// Largest ensemble size.
    #[arg(long, default_value_t = 7)]
    banks: usize,
    #[arg(long, default_value_t = 7)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Synthetic data settings (TOML); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "similarity-margin")]
    tie_policy: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    preds: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Also write the confusion matrix as CSV.
    #[arg(long)]
    confusion: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Query rotation angle in radians.
    #[arg(long, default_value_t = 0.0)]
    rot: f64,
    /// Bias magnitude, or a comma-separated bias vector.
    #[arg(long, default_value = "0")]
    bias: String,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    shift_seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_dino: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_sup: f64,
    #[arg(long, default_value_t = 0.04)]
    tau_t: f64,
    #[arg(long, default_value_t = 0.1)]
    tau_s: f64,
    #[arg(long, default_value_t = 0.999)]
    momentum: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 50)]
    configs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Exit with a data error when any loss exceeds this.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

/// What a run consumed and how it was configured.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub flags: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub version: String,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

/// Run one command line. `args` includes the program name.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    let mut ctx = Context {
        inputs: BTreeMap::new(),
        outputs: Vec::new(),
    };
    let result = dispatch(&cli, &mut ctx, stdout).and_then(|()| ctx.write_manifest(&cli));
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_DATA
        }
    }
}

struct Context {
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

impl Context {
    fn read(&mut self, path: &Path) -> Outcome<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|e| {
            Failure::Data(Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            )))
        })?;
        self.inputs.insert(
            path.display().to_string(),
            hex::encode(Sha256::digest(&bytes)),
        );
        Ok(bytes)
    }

    fn read_records<T: for<'de> serde::Deserialize<'de>>(
        &mut self,
        path: &Path,
    ) -> Outcome<Vec<T>> {
        let bytes = self.read(path)?;
        Ok(read_jsonl(bytes.as_slice())?)
    }

    fn load_bank(&mut self, path: &Path, tax: &Taxonomy) -> Outcome<FeatureBank> {
        let bytes = self.read(path)?;
        Ok(FeatureBank::load(bytes.as_slice(), tax)?)
    }

    /// Refuses to overwrite anything read earlier in the run.
    fn create(&mut self, path: &Path) -> Outcome<BufWriter<File>> {
        if self.inputs.contains_key(&path.display().to_string()) {
            return Err(Failure::Usage(format!(
                "{} is also an input",
                path.display()
            )));
        }
        self.outputs.push(path.to_path_buf());
        Ok(BufWriter::new(File::create(path)?))
    }

    fn write_manifest(&mut self, cli: &Cli) -> Outcome {
        let target = match (&cli.run_manifest, self.outputs.first()) {
            (Some(p), _) => p.clone(),
            (None, Some(out)) => {
                let mut name = out.as_os_str().to_owned();
                name.push(".run.json");
                PathBuf::from(name)
            }
            (None, None) => return Ok(()),
        };
        let flags = serde_json::to_value(cli).map_err(|e| Failure::Usage(e.to_string()))?;
        let manifest = RunManifest {
            command: command_name(&cli.command).to_string(),
            flags,
            inputs: std::mem::take(&mut self.inputs),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let mut w = BufWriter::new(File::create(&target)?);
        serde_json::to_writer_pretty(&mut w, &manifest)
            .map_err(|e| Failure::Usage(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Taxonomy(TaxonomyCmd::Validate { .. }) => "taxonomy validate",
        Command::Bank(BankCmd::Build { .. }) => "bank build",
        Command::Bank(BankCmd::Info { .. }) => "bank info",
        Command::Bank(BankCmd::Merge { .. }) => "bank merge",
        Command::Classify(_) => "classify",
        Command::Ensemble(_) => "ensemble",
        Command::Ablate(_) => "ablate",
        Command::Evaluate(_) => "evaluate",
        Command::Synth(_) => "synth",
        Command::Traintoy(_) => "traintoy",
        Command::GradCheck(_) => "grad-check",
    }
}

fn load_taxonomy(ctx: &mut Context, path: Option<&Path>) -> Outcome<Taxonomy> {
    match path {
        None => Ok(Taxonomy::default()),
        Some(p) => {
            let bytes = ctx.read(p)?;
            let text = String::from_utf8(bytes).map_err(|_| Error::TaxonomySyntax {
                line: 0,
                msg: "not UTF-8".into(),
            })?;
            Ok(Taxonomy::parse(&text)?)
        }
    }
}

fn parse_policy(s: &str) -> Outcome<TiePolicy> {
    TiePolicy::from_str(s).map_err(|e| Failure::Usage(e.to_string()))
}

fn parse_bias(s: &str) -> Outcome<Bias> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let values = parts
        .iter()
        .map(|p| p.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Failure::Usage(format!("invalid bias: {s}")))?;
    Ok(if values.len() == 1 {
        Bias::Magnitude(values[0])
    } else {
        Bias::Vector(values)
    })
}

fn read_synth_config(ctx: &mut Context, path: Option<&Path>) -> Outcome<SynthConfig> {
    match path {
        None => Ok(SynthConfig::default()),
        Some(p) => {
            let bytes = ctx.read(p)?;
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::InvalidConfig("config is not UTF-8".into()))?;
            toml::from_str(&text).map_err(|e| Failure::Data(Error::InvalidConfig(e.to_string())))
        }
    }
}

fn normalize_queries(records: &[Record]) -> Outcome<Vec<Embedding>> {
    Ok(records
        .iter()
        .map(|r| l2_normalize(&r.vector))
        .collect::<crate::Result<_>>()?)
}

/// Primary output goes to `out` when given, stdout otherwise.
fn emit(ctx: &mut Context, out: Option<&Path>, stdout: &mut dyn Write, bytes: &[u8]) -> Outcome {
    match out {
        Some(p) => {
            let mut w = ctx.create(p)?;
            w.write_all(bytes)?;
            w.flush()?;
        }
        None => stdout.write_all(bytes)?,
    }
    Ok(())
}

fn jsonl_bytes<T: Serialize>(records: &[T]) -> Outcome<Vec<u8>> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records)?;
    Ok(buf)
}

fn dispatch(cli: &Cli, ctx: &mut Context, stdout: &mut dyn Write) -> Outcome {
    match &cli.command {
        Command::Taxonomy(TaxonomyCmd::Validate { file }) => {
            let tax = load_taxonomy(ctx, file.as_deref().or(cli.taxonomy.as_deref()))?;
            writeln!(
                stdout,
                "ok: {} / {} / {} nodes, digest {}",
                tax.level_size(1)?,
                tax.level_size(2)?,
                tax.level_size(3)?,
                tax.digest_hex()
            )?;
            Ok(())
        }
        Command::Bank(cmd) => {
            let tax = load_taxonomy(ctx, cli.taxonomy.as_deref())?;
            bank_command(cmd, &tax, ctx, stdout)
        }
        Command::Classify(a) => {
            let tax = load_taxonomy(ctx, cli.taxonomy.as_deref())?;
            classify(a, &tax, ctx, stdout)
        }
        Command::Ensemble(a) => {
            let tax = load_taxonomy(ctx, cli.taxonomy.as_deref())?;
            ensemble(a, &tax, ctx, stdout)
        }
        Command::Ablate(a) => {
            let tax = load_taxonomy(ctx, cli.taxonomy.as_deref())?;
            let policy = parse_policy(&a.tie_policy)?;
            let mut cfg = AblationConfig::with_seed(a.seed);
            cfg.synth = SynthConfig {
                seed: a.seed,
                ..read_synth_config(ctx, a.config.as_deref())?
            };
            cfg.members = a.banks;
            cfg.k = a.k;
            cfg.tie_policy = policy;
            let rows = run_ablation(&cfg, &tax)?;
            emit(
                ctx,
                a.out.as_deref(),
                stdout,
                ablation_csv(&rows).as_bytes(),
            )
        }
        Command::Evaluate(a) => {
            let tax = load_taxonomy(ctx, cli.taxonomy.as_deref())?;
            evaluate(a, &tax, ctx, stdout)
        }
        Command::Synth(a) => {
            let tax = load_taxonomy(ctx, cli.taxonomy.as_deref())?;
            let mut cfg = read_synth_config(ctx, a.config.as_deref())?;
            if let Some(seed) = a.seed {
                cfg.seed = seed;
            }
            let spec = ShiftSpec {
                rotation_angle: a.rot,
                bias: parse_bias(&a.bias)?,
                extra_noise: a.noise,
            };
            let data = generate(&cfg, &tax)?;
            let queries = apply_shift(&data.queries, &spec, a.shift_seed)?;
            let mut w = ctx.create(&a.out)?;
            data.bank.save(&mut w)?;
            w.flush()?;
            let q = jsonl_bytes(&queries)?;
            emit(ctx, Some(&a.queries), stdout, &q)
        }
        Command::Traintoy(a) => traintoy(a, ctx, stdout),
        Command::GradCheck(a) => {
            let r = grad_check(a.configs, a.seed)?;
            writeln!(stdout, "loss,max_rel_error")?;
            writeln!(stdout, "dino,{:e}", r.dino)?;
            writeln!(stdout, "balanced_ce,{:e}", r.balanced_ce)?;
            writeln!(stdout, "total,{:e}", r.total)?;
            let worst = r.dino.max(r.balanced_ce).max(r.total);
            if worst.is_nan() || worst >= a.tol {
                return Err(Failure::Data(Error::InvalidConfig(format!(
                    "gradient check failed: {worst:e} >= {:e}",
                    a.tol
                ))));
            }
            Ok(())
        }
    }
}

fn bank_command(
    cmd: &BankCmd,
    tax: &Taxonomy,
    ctx: &mut Context,
    stdout: &mut dyn Write,
) -> Outcome {
    match cmd {
        BankCmd::Build { input, out } => {
            let records: Vec<Record> = ctx.read_records(input)?;
            let bank = FeatureBank::build(records, tax)?;
            let mut w = ctx.create(out)?;
            bank.save(&mut w)?;
            w.flush()?;
            Ok(())
        }
        BankCmd::Info { bank } => {
            let b = ctx.load_bank(bank, tax)?;
            writeln!(stdout, "dim: {}", b.dim())?;
            writeln!(stdout, "count: {}", b.len())?;
            writeln!(stdout, "taxonomy: {}", hex::encode(b.taxonomy_digest()))?;
            for (leaf, n) in b.leaf_histogram(tax.leaf_count()).into_iter().enumerate() {
                writeln!(stdout, "{}: {n}", tax.leaf_name(leaf)?)?;
            }
            Ok(())
        }
        BankCmd::Merge { banks, out } => {
            let mut merged: Option<FeatureBank> = None;
            for path in banks {
                let b = ctx.load_bank(path, tax)?;
                merged = Some(match merged {
                    None => b,
                    Some(m) => m.merge(&b)?,
                });
            }
            let merged = merged.ok_or_else(|| Failure::Usage("no banks to merge".into()))?;
            let mut w = ctx.create(out)?;
            merged.save(&mut w)?;
            w.flush()?;
            Ok(())
        }
    }
}

fn classify(
    a: &ClassifyArgs,
    tax: &Taxonomy,
    ctx: &mut Context,
    stdout: &mut dyn Write,
) -> Outcome {
    let bank = ctx.load_bank(&a.bank, tax)?;
    let records: Vec<Record> = ctx.read_records(&a.queries)?;
    let queries = normalize_queries(&records)?;
    let mut out = Vec::with_capacity(records.len());
    for (r, q) in records.iter().zip(&queries) {
        out.push(if a.flat {
            let p = predict_flat(&bank, q, a.k)?;
            PredictionRecord {
                id: r.id.clone(),
                y1: None,
                y2: None,
                y3: tax.leaf_name(p.leaf)?.to_string(),
                fallback: None,
            }
        } else {
            let p = predict_hierarchical(&bank, q, a.k, tax)?;
            PredictionRecord {
                id: r.id.clone(),
                y1: Some(tax.name(1, p.y1)?.to_string()),
                y2: Some(tax.name(2, p.y2)?.to_string()),
                y3: tax.leaf_name(p.y3)?.to_string(),
                fallback: Some(p.fallback_used),
            }
        });
    }
    let bytes = jsonl_bytes(&out)?;
    emit(ctx, a.out.as_deref(), stdout, &bytes)
}

fn ensemble(
    a: &EnsembleArgs,
    tax: &Taxonomy,
    ctx: &mut Context,
    stdout: &mut dyn Write,
) -> Outcome {
    let policy = parse_policy(&a.tie_policy)?;
    if a.queries.len() != 1 && a.queries.len() != a.banks.len() {
        return Err(Failure::Usage(format!(
            "{} query files for {} banks; pass one shared file or one per bank",
            a.queries.len(),
            a.banks.len()
        )));
    }
    let banks = a
        .banks
        .iter()
        .map(|p| ctx.load_bank(p, tax))
        .collect::<Outcome<Vec<_>>>()?;
    let mut ids: Option<Vec<String>> = None;
    let mut per_file = Vec::with_capacity(a.queries.len());
    for path in &a.queries {
        let records: Vec<Record> = ctx.read_records(path)?;
        let these: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
        match &ids {
            None => ids = Some(these),
            Some(first) if *first != these => {
                return Err(Failure::Data(Error::Manifest {
                    line: 0,
                    msg: format!(
                        "{}: query ids differ from the first query file",
                        path.display()
                    ),
                }))
            }
            Some(_) => {}
        }
        per_file.push(normalize_queries(&records)?);
    }
    let ids = ids.unwrap_or_default();
    let per_member: Vec<&[Embedding]> = (0..banks.len())
        .map(|m| per_file[m.min(per_file.len() - 1)].as_slice())
        .collect();
    let cfg = EnsembleConfig {
        members: &banks,
        k: a.k,
        tie_policy: policy,
        mode: if a.flat {
            VoteMode::Flat
        } else {
            VoteMode::Hierarchical
        },
    };
    let votes = member_votes_split(&cfg, &per_member, tax)?;
    let mut out = Vec::with_capacity(ids.len());
    for (id, v) in ids.into_iter().zip(votes) {
        let members = v.len();
        let p = combine(v, policy)?;
        out.push(EnsembleRecord {
            id,
            leaf: tax.leaf_name(p.leaf)?.to_string(),
            votes: p.votes,
            members,
        });
    }
    let bytes = jsonl_bytes(&out)?;
    emit(ctx, a.out.as_deref(), stdout, &bytes)
}

#[derive(Serialize)]
struct ClassLine {
    class: String,
    precision: f64,
    recall: f64,
    f1: f64,
    support: u64,
}

#[derive(Serialize)]
struct Report {
    convention: &'static str,
    samples: usize,
    macro_f1: f64,
    accuracy: f64,
    per_class: Vec<ClassLine>,
}

fn evaluate(
    a: &EvaluateArgs,
    tax: &Taxonomy,
    ctx: &mut Context,
    stdout: &mut dyn Write,
) -> Outcome {
    let preds: Vec<LeafRecord> = ctx.read_records(&a.preds)?;
    let truth: Vec<LeafRecord> = ctx.read_records(&a.truth)?;
    if preds.len() != truth.len() {
        return Err(Failure::Data(Error::LengthMismatch(
            truth.len(),
            preds.len(),
        )));
    }
    let mut by_id = BTreeMap::new();
    for t in &truth {
        if by_id
            .insert(t.id.as_str(), tax.leaf_index(&t.leaf)?)
            .is_some()
        {
            return Err(Failure::Data(Error::DuplicateId(t.id.clone())));
        }
    }
    let mut y_true = Vec::with_capacity(preds.len());
    let mut y_pred = Vec::with_capacity(preds.len());
    for p in &preds {
        let t = by_id.remove(p.id.as_str()).ok_or_else(|| Error::Manifest {
            line: 0,
            msg: format!("prediction {} has no truth record", p.id),
        })?;
        y_true.push(t);
        y_pred.push(tax.leaf_index(&p.leaf)?);
    }
    let score = score_predictions(&y_true, &y_pred, tax.leaf_count())?;
    let names = tax.names(3)?;
    let report = Report {
        convention: "macro F1 averages every taxonomy leaf; a leaf with no support and no predictions scores F1 = 0",
        samples: y_true.len(),
        macro_f1: score.macro_f1,
        accuracy: score.accuracy,
        per_class: score
            .per_class
            .iter()
            .map(|c| ClassLine {
                class: names[c.class].clone(),
                precision: c.precision,
                recall: c.recall,
                f1: c.f1,
                support: c.support,
            })
            .collect(),
    };
    let mut json = serde_json::to_vec_pretty(&report).map_err(|e| Failure::Usage(e.to_string()))?;
    json.push(b'\n');
    stdout.write_all(&json)?;
    if let Some(path) = &a.confusion {
        let csv = score.matrix.to_csv(names);
        emit(ctx, Some(path), stdout, csv.as_bytes())?;
    }
    Ok(())
}

fn traintoy(a: &TrainArgs, ctx: &mut Context, stdout: &mut dyn Write) -> Outcome {
    let data = toy_dataset(&ToyDataConfig {
        seed: a.seed,
        ..ToyDataConfig::default()
    })?;
    let (train, eval) = split_eval(data, 4);
    let classes = train
        .iter()
        .filter_map(|p| p.label)
        .max()
        .map_or(0, |m| m + 1);
    let mut counts = vec![0usize; classes];
    for p in &train {
        if let Some(c) = p.label {
            counts[c] += 1;
        }
    }
    let weights = ClassWeights::from_counts(&counts)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        momentum: a.momentum,
        seed: a.seed,
        loss: LossConfig {
            lambda_dino: a.lambda_dino,
            lambda_sup: a.lambda_sup,
            tau_teacher: a.tau_t,
            tau_student: a.tau_s,
        },
        ..TrainConfig::default()
    };
    let outcome = train_toy(&train, &eval, &weights, &cfg)?;
    let mut csv = String::from("epoch,L_dino,L_sup,L_total,eval_MF1\n");
    for s in &outcome.trace {
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            s.epoch, s.dino, s.sup, s.total, s.eval_mf1
        ));
    }
    emit(ctx, a.out.as_deref(), stdout, csv.as_bytes())
}
