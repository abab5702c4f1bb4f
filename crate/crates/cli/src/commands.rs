use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;

use fewtag::embeddings::{Embedder, EmbeddingStore, HashEmbedder};
use fewtag::emission::{assign_references, build_scorer, AssignMode, ScorerConfig, Variant};
use fewtag::episodes::{build_split, EpisodeSet};
use fewtag::evaluation::{aggregate, bigram_accuracy, bigram_table_text, Prf};
use fewtag::synthetic::{generate, SyntheticConfig};
use fewtag::training::{
    default_decoder, evaluate_episodes, gradcheck_with, load_checkpoint, predict, prepare_episode, save_checkpoint,
    train, Fault, ModelState, PreparedEpisode,
};
use fewtag::{corpus, Domain, ModelState64};

use crate::config::{existing, with_seed, RunConfig};
use crate::{CheckFailed, Cli, Command, Global, UsageError};

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub domains: usize,
    #[arg(long, default_value_t = 5)]
    pub slots: usize,
    #[arg(long, default_value_t = 200)]
    pub sentences: usize,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// CoNLL or JSON corpus files, one domain each.
    #[arg(long = "corpus")]
    pub corpora: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub skip_prob: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long = "train")]
    pub train_episodes: Option<PathBuf>,
    #[arg(long = "dev")]
    pub dev_episodes: Option<PathBuf>,
    /// Precomputed embedding store; hash embeddings otherwise.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Training report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint; `{seed}` is replaced by each evaluation seed.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Episode file; `{seed}` is replaced by each evaluation seed.
    #[arg(long)]
    pub episodes: Option<PathBuf>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Comma-separated evaluation seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Aggregate report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Aligned text table.
    #[arg(long)]
    pub text: Option<PathBuf>,
    /// Per-episode CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Bigram-category accuracy table.
    #[arg(long)]
    pub bigram: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Episodes to check; generated episodes otherwise.
    #[arg(long)]
    pub episodes: Option<PathBuf>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    /// Check every scorer variant instead of the configured one.
    #[arg(long)]
    pub all_variants: bool,
    /// Corrupt the lambda gradient by 10 percent.
    #[arg(long)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub files: Vec<PathBuf>,
    /// Also reject I-x labels that do not follow B-x or I-x.
    #[arg(long)]
    pub strict: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_global(&mut cfg, &cli.global);
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(UsageError("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::Synth(a) => synth(&cfg, a),
        Command::SampleEpisodes(a) => sample_episodes(&mut cfg, a),
        Command::Train(a) => train_cmd(&mut cfg, a),
        Command::Eval(a) => eval(&mut cfg, a),
        Command::Gradcheck(a) => gradcheck_cmd(&cfg, &cli.global, a),
        Command::Validate(a) => validate(&cfg, a),
    }
}

fn apply_global(cfg: &mut RunConfig, g: &Global) {
    if let Some(s) = g.seed {
        cfg.train.seed = s;
    }
    if let Some(v) = g.variant {
        cfg.model.variant = v;
    }
    if !g.ablate.is_empty() {
        cfg.model.ablate = g.ablate.clone();
    }
    if let Some(d) = g.decoder {
        cfg.eval.decoder = Some(d);
    }
    if let Some(m) = g.max_steps {
        cfg.train.max_steps = m;
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| fewtag::Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| fewtag::Error::io(path, e))?;
    Ok(())
}

fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| UsageError(format!("missing {what} path (flag or config)")).into())
}

fn synth(cfg: &RunConfig, a: SynthArgs) -> Result<()> {
    let domains = generate(&SyntheticConfig {
        domains: a.domains,
        slots: a.slots,
        sentences: a.sentences,
        seed: cfg.train.seed,
        ..Default::default()
    })
    .map_err(UsageError::from)?;
    for d in &domains {
        let path = a.out.join(format!("{}.conll", d.name()));
        write_file(&path, d.to_conll())?;
        println!("{}  {} sentences  {} labels", path.display(), d.sentences().len(), d.label_set().len());
    }
    Ok(())
}

fn load_domains(paths: &[PathBuf]) -> Result<Vec<Domain>> {
    if paths.is_empty() {
        return Err(UsageError("no corpus given".into()).into());
    }
    paths
        .iter()
        .map(|p| Ok(Domain::load(existing(p)?)?))
        .collect()
}

fn sample_episodes(cfg: &mut RunConfig, a: SampleArgs) -> Result<()> {
    if !a.corpora.is_empty() {
        cfg.paths.corpora = a.corpora;
    }
    let s = &mut cfg.sampler;
    s.k = a.k.unwrap_or(s.k);
    s.episodes = a.episodes.unwrap_or(s.episodes);
    s.queries = a.queries.unwrap_or(s.queries);
    s.skip_prob = a.skip_prob.unwrap_or(s.skip_prob);
    if s.k == 0 {
        return Err(UsageError("K must be at least 1".into()).into());
    }
    let out = a.out.or(cfg.paths.episodes.clone());
    let out = required(&out, "episode output")?;
    let domains = load_domains(&cfg.paths.corpora)?;
    let s = &cfg.sampler;
    let set = build_split(&domains, s.episodes, s.k, s.queries, s.skip_prob, cfg.train.seed)?;
    let mut buf = Vec::new();
    set.write_jsonl(&mut buf)?;
    write_file(out, buf)?;
    print!("{}", support_table(&set));
    println!("wrote {} episodes to {}", set.len(), out.display());
    Ok(())
}

fn support_table(set: &EpisodeSet) -> String {
    let mut by_domain: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for e in &set.episodes {
        by_domain.entry(&e.domain_name).or_default().push(e.support.len());
    }
    let mut out = String::new();
    let _ = writeln!(out, "{:<20} {:>9} {:>8}", "domain", "episodes", "Ave. |S|");
    for (d, sizes) in &by_domain {
        let mean = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
        let _ = writeln!(out, "{d:<20} {:>9} {mean:>8.2}", sizes.len());
    }
    let _ = writeln!(out, "{:<20} {:>9} {:>8.2}", "all", set.len(), set.mean_support_size());
    out
}

enum AnyEmbedder {
    Hash(HashEmbedder),
    Store(EmbeddingStore),
}

impl AnyEmbedder {
    fn open(store: Option<&Path>, cfg: &RunConfig) -> Result<Self> {
        Ok(match store {
            Some(p) => AnyEmbedder::Store(EmbeddingStore::load(existing(p)?)?),
            None => AnyEmbedder::Hash(HashEmbedder::new(cfg.model.dim, cfg.model.embed_seed)),
        })
    }

    fn as_dyn(&self) -> &dyn Embedder<f64> {
        match self {
            AnyEmbedder::Hash(h) => h,
            AnyEmbedder::Store(s) => s,
        }
    }
}

fn prepare_all(set: &EpisodeSet, emb: &dyn Embedder<f64>, scorer: &ScorerConfig) -> Result<Vec<PreparedEpisode<f64>>> {
    let prepared: Vec<PreparedEpisode<f64>> = set
        .episodes
        .par_iter()
        .map(|e| prepare_episode(e, emb, scorer))
        .collect::<fewtag::Result<_>>()?;
    Ok(prepared)
}

fn train_cmd(cfg: &mut RunConfig, a: TrainArgs) -> Result<()> {
    let train_path = a.train_episodes.or(cfg.paths.train_episodes.clone());
    let dev_path = a.dev_episodes.or(cfg.paths.dev_episodes.clone());
    let ckpt = a.checkpoint.or(cfg.paths.checkpoint.clone());
    let store = a.store.or(cfg.paths.store.clone());
    let report_path = a.report.or(cfg.paths.report.clone());
    if let Some(lr) = a.learning_rate {
        cfg.train.learning_rate = lr;
    }
    let ckpt = required(&ckpt, "checkpoint")?;
    let train_set = EpisodeSet::load(existing(required(&train_path, "train episodes")?)?)?;
    let dev_set = EpisodeSet::load(existing(required(&dev_path, "dev episodes")?)?)?;
    cfg.train.validate().map_err(UsageError::from)?;
    let scorer = cfg.model.scorer()?;
    let emb = AnyEmbedder::open(store.as_deref(), cfg)?;
    let emb = emb.as_dyn();

    let widest = train_set
        .episodes
        .iter()
        .chain(&dev_set.episodes)
        .map(|e| e.label_set.len())
        .max()
        .unwrap_or(0);
    if cfg.model.n_pool < widest {
        return Err(UsageError(format!(
            "reference pool of {} rows is smaller than the widest label set ({widest})",
            cfg.model.n_pool
        ))
        .into());
    }
    let model: ModelState64 = ModelState::new(scorer, cfg.model.n_pool, emb.dim(), cfg.train.seed)?;
    let train_prepared = prepare_all(&train_set, emb, &scorer)?;
    let dev_prepared = prepare_all(&dev_set, emb, &scorer)?;
    let (model, report) = train(model, &train_prepared, &dev_prepared, &cfg.train)?;
    save_checkpoint(&model, ckpt)?;
    if let Some(p) = report_path {
        write_file(&p, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    println!(
        "steps {}  best step {}  best dev F1 {:.2}  lambda {:.4}",
        report.steps, report.best_step, report.best_dev_f1, model.lambda
    );
    println!("wrote {}", ckpt.display());
    eprintln!("trained in {:.1}s", report.wall_seconds);
    Ok(())
}

fn eval(cfg: &mut RunConfig, a: EvalArgs) -> Result<()> {
    let ckpt = a.checkpoint.or(cfg.paths.checkpoint.clone());
    let episodes = a.episodes.or(cfg.paths.episodes.clone());
    let store = a.store.or(cfg.paths.store.clone());
    let ckpt = required(&ckpt, "checkpoint")?.to_path_buf();
    let episodes = required(&episodes, "episodes")?.to_path_buf();
    let seeds = if a.seeds.is_empty() { cfg.eval.seeds.clone() } else { a.seeds };
    if seeds.is_empty() {
        return Err(UsageError("no evaluation seeds".into()).into());
    }
    let emb = AnyEmbedder::open(store.as_deref(), cfg)?;
    let emb = emb.as_dyn();

    let mut per_seed = Vec::new();
    let (mut preds, mut golds) = (Vec::new(), Vec::new());
    let mut decoder_used = None;
    for &seed in &seeds {
        let ckpt = with_seed(&ckpt, seed);
        let model: ModelState64 = load_checkpoint(existing(&ckpt)?)?;
        if model.dim() != emb.dim() {
            return Err(fewtag::Error::Dimension {
                expected: emb.dim(),
                found: model.dim(),
            })
            .with_context(|| format!("checkpoint {} does not match the embeddings", ckpt.display()));
        }
        let set = EpisodeSet::load(existing(&with_seed(&episodes, seed))?)?;
        let prepared = prepare_all(&set, emb, &model.config)?;
        for p in &prepared {
            if p.n_labels() > model.pool.len() {
                return Err(fewtag::Error::PoolTooSmall {
                    pool: model.pool.len(),
                    needed: p.n_labels(),
                })
                .with_context(|| format!("episode {} against {}", p.episode_id, ckpt.display()));
            }
        }
        let decoder = cfg.eval.decoder.unwrap_or_else(|| default_decoder(&model.config));
        decoder_used = Some(decoder);
        let scores: Vec<Prf> = evaluate_episodes(&model, &prepared, decoder)?;
        if a.bigram.is_some() || cfg.eval.bigram {
            for p in &prepared {
                for (ids, q) in predict(&model, p, decoder)?.iter().zip(&p.queries) {
                    preds.push(p.label_set.decode(ids));
                    golds.push(p.label_set.decode(&q.gold));
                }
            }
        }
        per_seed.push((seed, scores));
    }
    let report = aggregate(per_seed)?;
    let text = report.to_text();
    print!("decoder {}\n{text}", decoder_used.expect("at least one seed"));
    if let Some(p) = a.report.or(cfg.paths.report.clone()) {
        write_file(&p, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    if let Some(p) = a.text {
        write_file(&p, text)?;
    }
    if let Some(p) = a.csv {
        write_file(&p, report.to_csv())?;
    }
    if !golds.is_empty() {
        let table = bigram_table_text(&bigram_accuracy(&preds, &golds)?);
        match a.bigram {
            Some(p) => write_file(&p, table)?,
            None => print!("{table}"),
        }
    }
    Ok(())
}

fn gradcheck_cmd(cfg: &RunConfig, g: &Global, a: GradcheckArgs) -> Result<()> {
    if !(a.eps > 0.0) {
        return Err(UsageError(fewtag::Error::NonPositiveStep.to_string()).into());
    }
    let tol = g.tol.unwrap_or(1e-3);
    let set = match a.episodes.as_deref() {
        Some(p) => EpisodeSet::load(existing(p)?)?,
        None => {
            let domains = generate(&SyntheticConfig {
                domains: 2,
                slots: 3,
                sentences: 60,
                inner_words: 2,
                filler_words: 5,
                seed: cfg.train.seed,
                ..Default::default()
            })?;
            build_split(&domains, a.count.div_ceil(2), 1, 3, 0.2, cfg.train.seed)?
        }
    };
    let emb = AnyEmbedder::open(a.store.as_deref(), cfg)?;
    let emb = emb.as_dyn();
    let variants = if a.all_variants {
        Variant::ALL.to_vec()
    } else {
        vec![cfg.model.variant]
    };
    let fault = a.inject_fault.then_some(Fault::ScaleLambda(1.1));
    let mut failures = 0;
    for variant in variants {
        let mut model_cfg = cfg.model.clone();
        model_cfg.variant = variant;
        if variant != cfg.model.variant {
            model_cfg.ablate.clear();
            model_cfg.alpha = None;
            model_cfg.beta = None;
        }
        let scorer = if variant == cfg.model.variant {
            model_cfg.scorer()?
        } else {
            build_scorer(variant, &[])?
        };
        let widest = set.episodes.iter().map(|e| e.label_set.len()).max().unwrap_or(0);
        let mut model: ModelState64 = ModelState::new(scorer, cfg.model.n_pool.max(widest), emb.dim(), cfg.train.seed)?;
        // move away from the all-zero table so every cell has a non-trivial gradient
        for (i, v) in model.table.values_mut().iter_mut().enumerate() {
            *v = 0.1 * ((i % 5) as f64 - 2.0);
        }
        let mut worst: f64 = 0.0;
        let mut flagged = Vec::new();
        for (i, ep) in set.episodes.iter().take(a.count).enumerate() {
            let prepared = prepare_episode(ep, emb, &scorer)?;
            let assignment = assign_references(model.pool.len(), prepared.n_labels(), AssignMode::Random(i as u64))?;
            let report = gradcheck_with(&model, &prepared, &assignment, a.eps, tol, fault)?;
            worst = worst.max(report.max_rel_error());
            for e in report.flagged() {
                flagged.push(format!("episode {}: {} analytic {:.6e} numeric {:.6e}", ep.episode_id, e.name, e.analytic, e.numeric));
            }
        }
        let status = if flagged.is_empty() { "PASS" } else { "FAIL" };
        println!("{status} {variant}: max relative error {worst:.3e} (tol {tol:e})");
        for f in flagged.iter().take(10) {
            println!("  {f}");
        }
        failures += flagged.len();
    }
    if failures > 0 {
        return Err(CheckFailed(format!("{failures} gradient coordinates exceed tolerance")).into());
    }
    Ok(())
}

fn validate(cfg: &RunConfig, a: ValidateArgs) -> Result<()> {
    let files = if a.files.is_empty() { cfg.paths.corpora.clone() } else { a.files };
    let domains = load_domains(&files)?;
    let mut total = 0;
    for (d, path) in domains.iter().zip(&files) {
        let mut count = 0;
        for (i, s) in d.sentences().iter().enumerate() {
            for v in corpus::validate_bio(s, a.strict) {
                count += 1;
                if count <= 20 {
                    println!("{}: sentence {}: {v}", path.display(), i + 1);
                }
            }
        }
        println!(
            "{}: {} sentences, {} labels, {count} violation(s)",
            path.display(),
            d.sentences().len(),
            d.label_set().len()
        );
        total += count;
    }
    if total > 0 {
        return Err(CheckFailed(format!("{total} BIO violation(s)")).into());
    }
    Ok(())
}
