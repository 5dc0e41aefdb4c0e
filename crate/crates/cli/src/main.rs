use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fpf_core::corpus::{self, RawRecord};
use fpf_core::dataset::{self, FingerprintDataset, SubsetCounts, TriggerEvalSet};
use fpf_core::merge::{self, MergeConfig, NamedTensorSet, Strategy};
use fpf_core::mocksuspect::{self, BehaviorProfile, Mode, ServeOptions};
use fpf_core::rng::splitmix64;
use fpf_core::stealth::{self, CharNgramScorer, ProbeTemplates, ProbeVariant, RemoteScorer, Scorer, UniformScorer};
use fpf_core::trigger::{self, MarkerSet, SemanticToken, StyleDomain, TriggerSpec, DEFAULT_TARGET_RESPONSE};
use fpf_core::verify::{self, MatchRule, SuspectEndpoint};

const TOKEN_ENV: &str = "FPF_API_TOKEN";

#[derive(Parser)]
#[command(name = "fpf", version, about = "Nested style + semantic fingerprints for black-box LLM ownership checks")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a four-subset fingerprint dataset
    Build(BuildArgs),
    /// Sample seen and fresh joint triggers for verification
    EvalSet(EvalSetArgs),
    /// Query a suspect with joint triggers and report FSR
    Verify(VerifyArgs),
    /// Query a suspect with benign prompts and report FPR
    Fpr(FprArgs),
    /// Score texts for perplexity, optionally through a gate
    Ppl(PplArgs),
    /// Probe a suspect with single vocabulary tokens
    TokenForce(TokenForceArgs),
    /// Blend a fingerprinted model with a donor
    Merge(MergeArgs),
    /// Write one blend per alpha plus a manifest
    Sweep(SweepArgs),
    /// Serve a simulated suspect model
    Mock(MockArgs),
}

#[derive(Args, Serialize)]
struct SpecArgs {
    /// Style domain of the outer cue
    #[arg(long, default_value = "code")]
    domain: StyleDomain,
    /// Semantic token (fp_ + 6 uppercase hex); derived from the seed when omitted
    #[arg(long)]
    token: Option<String>,
    /// Lexicon file for archaic prose: `common<TAB>variant` per line
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Marker file for archaic prose: `marker[<TAB>modern]` per line
    #[arg(long)]
    markers: Option<PathBuf>,
    /// Markers per 100 words at which prose counts as archaic
    #[arg(long, default_value_t = 2.0)]
    marker_density: f64,
    /// Marked lexicon variants required for the prose semantic cue
    #[arg(long, default_value_t = trigger::DEFAULT_PROSE_K)]
    k: usize,
    #[arg(long, default_value = DEFAULT_TARGET_RESPONSE)]
    target: String,
}

impl SpecArgs {
    fn resolve(&self, seed: Option<u64>) -> Result<TriggerSpec> {
        let token = match (&self.token, seed) {
            (Some(t), _) => SemanticToken::parse(t)?,
            (None, Some(seed)) => trigger::gen_semantic_token(seed),
            (None, None) => bail!("--token is required when no --seed is given"),
        };
        let mut spec = match self.domain {
            StyleDomain::Code => TriggerSpec::code(token),
            StyleDomain::ArchaicProse => {
                let lexicon = match &self.lexicon {
                    Some(p) => trigger::parse_lexicon(&read_text(p)?)?,
                    None => trigger::default_lexicon(),
                };
                TriggerSpec::archaic_prose(token, lexicon)
            }
        };
        spec.markers = match &self.markers {
            Some(p) => MarkerSet::parse(&read_text(p)?, self.marker_density)?,
            None => MarkerSet { per_hundred_words: self.marker_density, ..MarkerSet::default() },
        };
        spec.prose_k = self.k;
        spec.target_response = self.target.clone();
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args, Serialize)]
struct EndpointArgs {
    /// Base URL of the chat-completions server
    #[arg(long)]
    endpoint: String,
    #[arg(long, default_value = "suspect")]
    model: String,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = 8)]
    max_parallel: usize,
    #[arg(long, default_value_t = 64)]
    max_tokens: u32,
}

impl EndpointArgs {
    fn endpoint(&self) -> SuspectEndpoint {
        endpoint_from(&self.endpoint, &self.model, self.timeout_ms, self.max_parallel, self.max_tokens)
    }
}

fn endpoint_from(url: &str, model: &str, timeout_ms: u64, max_parallel: usize, max_tokens: u32) -> SuspectEndpoint {
    SuspectEndpoint {
        model_name: model.to_string(),
        auth_token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
        timeout: Duration::from_millis(timeout_ms),
        max_parallel,
        max_tokens,
        ..SuspectEndpoint::new(url)
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum MatchArg {
    Contains,
    Exact,
}

impl From<MatchArg> for MatchRule {
    fn from(m: MatchArg) -> Self {
        match m {
            MatchArg::Contains => MatchRule::Contains,
            MatchArg::Exact => MatchRule::Exact,
        }
    }
}

#[derive(Args, Serialize)]
struct BuildArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// Source corpus (JSONL of instruction/input/output); a synthetic corpus is generated when omitted
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Subset sizes as normal,joint,stylistic,semantic
    #[arg(long, default_value = "2000,334,333,333")]
    counts: SubsetCounts,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the JSON report (stdout when omitted)
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct EvalSetArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Carriers for unseen triggers; synthetic ones are generated when omitted
    #[arg(long)]
    fresh_corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    n_seen: usize,
    #[arg(long, default_value_t = 50)]
    n_unseen: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    #[command(flatten)]
    endpoint: EndpointArgs,
    /// Eval set written by `eval-set`
    #[arg(long)]
    eval: PathBuf,
    #[arg(long = "match", value_enum, default_value = "contains")]
    match_rule: MatchArg,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct FprArgs {
    #[command(flatten)]
    endpoint: EndpointArgs,
    /// Benign prompts as JSONL of instruction/input/output
    #[arg(long)]
    prompts: PathBuf,
    /// Dataset whose trigger spec defines the target response and the cues
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long = "match", value_enum, default_value = "contains")]
    match_rule: MatchArg,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ScorerArg {
    Uniform,
    Ngram,
    Remote,
}

#[derive(Args, Serialize)]
struct PplArgs {
    /// Texts as JSONL of instruction/input/output; each composed prompt is scored
    #[arg(long)]
    texts: PathBuf,
    #[arg(long, value_enum, default_value = "ngram")]
    scorer: ScorerArg,
    /// Training corpus for the n-gram scorer (defaults to the scored texts)
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long, default_value_t = 256)]
    vocab_size: usize,
    /// Completions endpoint for the remote scorer
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value = "scorer")]
    model: String,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
    /// Flag texts whose perplexity exceeds this value
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct TokenForceArgs {
    #[command(flatten)]
    endpoint: EndpointArgs,
    /// Vocabulary file, one token per line
    #[arg(long)]
    vocab: PathBuf,
    /// Probe variants to run (TF_F, TF_BF, TF_TF); all when omitted
    #[arg(long, value_delimiter = ',')]
    variant: Vec<ProbeVariant>,
    /// Fingerprint responses to look for (repeatable)
    #[arg(long, default_value = DEFAULT_TARGET_RESPONSE)]
    response: Vec<String>,
    #[arg(long, default_value = "<s>")]
    bos: String,
    #[arg(long, default_value = "user: {token}\nassistant:")]
    chat_template: String,
    #[arg(long = "match", value_enum, default_value = "contains")]
    match_rule: MatchArg,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ModelPaths {
    #[arg(long)]
    base: PathBuf,
    /// Fingerprinted checkpoint
    #[arg(long)]
    fp: PathBuf,
    #[arg(long)]
    donor: PathBuf,
}

impl ModelPaths {
    fn load(&self) -> Result<(NamedTensorSet, NamedTensorSet, NamedTensorSet)> {
        Ok((
            NamedTensorSet::read_file(&self.base)?,
            NamedTensorSet::read_file(&self.fp)?,
            NamedTensorSet::read_file(&self.donor)?,
        ))
    }
}

#[derive(Args, Serialize)]
struct MergeArgs {
    #[command(flatten)]
    models: ModelPaths,
    #[arg(long, default_value = "task_arithmetic")]
    strategy: Strategy,
    /// Weight of the fingerprinted delta; the donor gets 1 - alpha1
    #[arg(long)]
    alpha1: f64,
    #[arg(long, default_value_t = 1.0)]
    density: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    models: ModelPaths,
    #[arg(long, default_value = "task_arithmetic")]
    strategy: Strategy,
    #[arg(long, value_delimiter = ',', default_value = "0.9,0.8,0.7,0.6,0.5,0.4,0.3,0.2,0.1")]
    alphas: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    density: f64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ModeArg {
    Clean,
    Fingerprinted,
    Partial,
    Leaky,
    Echo,
}

#[derive(Args, Serialize)]
struct MockArgs {
    #[arg(long, value_enum, default_value = "fingerprinted")]
    mode: ModeArg,
    /// Firing probability for the partial mode
    #[arg(long, required_if_eq("mode", "partial"))]
    p: Option<f64>,
    /// Prefix that also fires the leaky mode
    #[arg(long, required_if_eq("mode", "leaky"))]
    prefix_token: Option<String>,
    /// Take the trigger spec from this dataset instead of the spec flags
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long, required_if_eq("mode", "partial"))]
    seed: Option<u64>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value_t = 8)]
    workers: usize,
    /// Vocabulary size behind the uniform logprobs of /v1/completions
    #[arg(long, default_value_t = 256)]
    scorer_vocab: usize,
    /// Require `Authorization: Bearer $FPF_API_TOKEN` on every request
    #[arg(long)]
    require_token: bool,
}

#[derive(Serialize)]
struct Report<'a, C: Serialize, R: Serialize> {
    toolkit_version: &'static str,
    subcommand: &'a str,
    config: &'a C,
    result: R,
}

fn emit<C: Serialize, R: Serialize>(subcommand: &str, config: &C, result: R, path: Option<&Path>) -> Result<()> {
    let report = Report { toolkit_version: fpf_core::VERSION, subcommand, config, result };
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match path {
        Some(p) => write_file(p, json.as_bytes()),
        None => io::stdout().write_all(json.as_bytes()).context("writing report"),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_records(path: &Path) -> Result<Vec<RawRecord>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    corpus::read_jsonl(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn read_dataset(path: &Path) -> Result<FingerprintDataset> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    FingerprintDataset::deserialize(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn build(args: &BuildArgs) -> Result<()> {
    let spec = args.spec.resolve(Some(args.seed))?;
    let c = args.counts;
    let records = match &args.corpus {
        Some(p) => read_records(p)?,
        None => {
            let styled = (c.joint + c.stylistic + c.semantic) * 13 / 10 + 50;
            let plain = c.normal * 115 / 100 + 50;
            corpus::synthetic_corpus(spec.style_domain, styled, plain, args.seed)
        }
    };
    let ds = dataset::build_dataset(&records, &spec, c, args.seed)?;
    let bytes = ds.serialize();
    write_file(&args.out, &bytes)?;
    let mismatches = ds.rescan().len();
    eprintln!(
        "wrote {} samples to {} (normal {}, joint {}, stylistic {}, semantic {}); token {}; quadrant mismatches {}",
        ds.samples.len(),
        args.out.display(),
        c.normal,
        c.joint,
        c.stylistic,
        c.semantic,
        spec.semantic_token,
        mismatches
    );
    #[derive(Serialize)]
    struct BuildResult<'a> {
        out: &'a Path,
        samples: usize,
        counts: SubsetCounts,
        semantic_token: &'a str,
        quadrant_mismatches: usize,
        duplicate_inputs: usize,
        corpus_records: usize,
    }
    let result = BuildResult {
        out: &args.out,
        samples: ds.samples.len(),
        counts: SubsetCounts::tally(&ds.samples),
        semantic_token: spec.semantic_token.as_str(),
        quadrant_mismatches: mismatches,
        duplicate_inputs: ds.duplicate_inputs(),
        corpus_records: records.len(),
    };
    emit("build", args, result, args.report.as_deref())
}

fn eval_set(args: &EvalSetArgs) -> Result<()> {
    let ds = read_dataset(&args.dataset)?;
    let fresh = match &args.fresh_corpus {
        Some(p) => read_records(p)?,
        None => corpus::styled_records(ds.spec.style_domain, args.n_unseen * 3 + 50, splitmix64(args.seed)),
    };
    let eval = dataset::make_eval_set(&ds, &fresh, args.n_seen, args.n_unseen, args.seed)?;
    write_file(&args.out, &eval.serialize())?;
    let seen = eval.entries.iter().filter(|e| e.seen).count();
    eprintln!("wrote {} joint triggers ({} seen, {} unseen) to {}", eval.n(), seen, eval.n() - seen, args.out.display());
    let result = serde_json::json!({ "out": args.out, "n": eval.n(), "seen": seen, "unseen": eval.n() - seen });
    emit("eval-set", args, result, args.report.as_deref())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.3}"))
}

fn verify_cmd(args: &VerifyArgs) -> Result<()> {
    let bytes = fs::read(&args.eval).with_context(|| format!("reading {}", args.eval.display()))?;
    let eval = TriggerEvalSet::deserialize(&bytes)?;
    let report = verify::verify_ownership(&args.endpoint.endpoint(), &eval, args.match_rule.into())?;
    eprintln!(
        "FSR {:.3} over {} queries (seen {}, unseen {}), {} errors",
        report.fsr,
        report.n,
        fmt_opt(report.fsr_seen),
        fmt_opt(report.fsr_unseen),
        report.n_errors
    );
    emit("verify", args, report, args.report.as_deref())
}

fn fpr_cmd(args: &FprArgs) -> Result<()> {
    let spec = read_dataset(&args.dataset)?.spec;
    let prompts: Vec<String> = read_records(&args.prompts)?.iter().map(RawRecord::prompt).collect();
    let report = verify::compute_fpr(&args.endpoint.endpoint(), &prompts, &spec, args.match_rule.into())?;
    eprintln!("FPR {:.4} ({} of {} benign prompts), {} errors", report.fpr, report.activations, report.n, report.n_errors);
    emit("fpr", args, report, args.report.as_deref())
}

fn ppl_cmd(args: &PplArgs) -> Result<()> {
    let texts: Vec<String> = read_records(&args.texts)?.iter().map(RawRecord::prompt).collect();
    let scorer: Box<dyn Scorer> = match args.scorer {
        ScorerArg::Uniform => Box::new(UniformScorer { vocab_size: args.vocab_size }),
        ScorerArg::Ngram => {
            let train: Vec<String> = match &args.train {
                Some(p) => read_records(p)?.iter().map(RawRecord::prompt).collect(),
                None => texts.clone(),
            };
            Box::new(CharNgramScorer::train(&train, args.order))
        }
        ScorerArg::Remote => {
            let url = args.endpoint.as_deref().ok_or_else(|| anyhow!("--endpoint is required for the remote scorer"))?;
            Box::new(RemoteScorer::new(&endpoint_from(url, &args.model, args.timeout_ms, 1, 0))?)
        }
    };
    #[derive(Serialize)]
    struct Scored {
        index: usize,
        ppl: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    }
    let scored: Vec<Scored> = texts
        .iter()
        .enumerate()
        .map(|(index, t)| match stealth::perplexity(scorer.as_ref(), t) {
            Ok(ppl) => Scored { index, ppl: Some(ppl), error: None },
            Err(e) => Scored { index, ppl: None, error: Some(e.to_string()) },
        })
        .collect();
    let ok: Vec<f64> = scored.iter().filter_map(|s| s.ppl).collect();
    let mean = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
    let gate = args.threshold.map(|t| stealth::ppl_gate(scorer.as_ref(), &texts, t)).transpose()?;
    eprintln!(
        "scored {} of {} texts, mean PPL {}{}",
        ok.len(),
        texts.len(),
        fmt_opt(mean),
        gate.as_ref().map_or(String::new(), |g| format!(", {} above {}", g.flagged.len(), g.threshold))
    );
    let result = serde_json::json!({ "mean_ppl": mean, "texts": scored, "gate": gate });
    emit("ppl", args, result, args.report.as_deref())
}

fn token_force_cmd(args: &TokenForceArgs) -> Result<()> {
    let vocab = stealth::parse_vocab(&read_text(&args.vocab)?);
    let variants = if args.variant.is_empty() { ProbeVariant::ALL.to_vec() } else { args.variant.clone() };
    let templates = ProbeTemplates { bos: args.bos.clone(), chat_template: args.chat_template.clone() };
    let endpoint = args.endpoint.endpoint();
    let mut reports = Vec::new();
    for v in variants {
        let r = stealth::token_forcing(&endpoint, &vocab, v, &args.response, args.match_rule.into(), &templates)?;
        eprintln!("{}: DR {:.4} ({} of {} probes), {} errors", v.as_str(), r.detection_rate, r.detections, r.trials, r.n_errors);
        reports.push(r);
    }
    emit("token-force", args, reports, args.report.as_deref())
}

fn merge_cmd(args: &MergeArgs) -> Result<()> {
    let (base, fp, donor) = args.models.load()?;
    let cfg = MergeConfig { strategy: args.strategy, alpha1: args.alpha1, density: args.density };
    let merged = merge::blend(&base, &fp, &donor, &cfg)?;
    merged.write_file(&args.out)?;
    let to_fp = merge::max_relative_error(&merged, &fp)?;
    let to_donor = merge::max_relative_error(&merged, &donor)?;
    eprintln!(
        "wrote {} ({} tensors, alpha1 {}, alpha2 {}); max relative distance to fp {to_fp:.4}, to donor {to_donor:.4}",
        args.out.display(),
        merged.len(),
        cfg.alpha1,
        cfg.alpha2()
    );
    let result = serde_json::json!({
        "out": args.out,
        "tensors": merged.len(),
        "alpha2": cfg.alpha2(),
        "max_rel_distance_to_fp": to_fp,
        "max_rel_distance_to_donor": to_donor,
    });
    emit("merge", args, result, args.report.as_deref())
}

fn sweep_cmd(args: &SweepArgs) -> Result<()> {
    let (base, fp, donor) = args.models.load()?;
    let manifest = merge::sweep_merge(&base, &fp, &donor, args.strategy, &args.alphas, args.density, &args.out_dir)?;
    eprintln!(
        "wrote {} checkpoints and {} to {}",
        manifest.entries.len(),
        merge::MANIFEST_FILE,
        args.out_dir.display()
    );
    emit("sweep", args, manifest, args.report.as_deref())
}

fn profile_mode_name(m: ModeArg) -> String {
    m.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()
}

fn mock_cmd(args: &MockArgs) -> Result<()> {
    let spec = match &args.dataset {
        Some(p) => read_dataset(p)?.spec,
        None => args.spec.resolve(args.seed)?,
    };
    let mode = match args.mode {
        ModeArg::Clean => Mode::Clean,
        ModeArg::Fingerprinted => Mode::Fingerprinted,
        ModeArg::Partial => Mode::Partial { p: args.p.unwrap_or(1.0) },
        ModeArg::Leaky => Mode::Leaky { prefix_token: args.prefix_token.clone().unwrap_or_default() },
        ModeArg::Echo => Mode::Echo,
    };
    let token = spec.semantic_token.to_string();
    let mut profile = BehaviorProfile::new(mode, spec);
    profile.seed = args.seed.unwrap_or(0);
    let required_token = if args.require_token {
        Some(std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()).ok_or_else(|| anyhow!("--require-token needs {TOKEN_ENV}"))?)
    } else {
        None
    };
    let opts = ServeOptions { workers: args.workers, required_token, scorer_vocab: args.scorer_vocab };
    let server = mocksuspect::serve_on(profile, &args.host, args.port, opts)?;
    println!("listening on {}", server.base_url());
    io::stdout().flush()?;
    eprintln!("mode {}, semantic token {token}", profile_mode_name(args.mode));
    server.wait();
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Build(a) => build(a),
        Command::EvalSet(a) => eval_set(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Fpr(a) => fpr_cmd(a),
        Command::Ppl(a) => ppl_cmd(a),
        Command::TokenForce(a) => token_force_cmd(a),
        Command::Merge(a) => merge_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Mock(a) => mock_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
