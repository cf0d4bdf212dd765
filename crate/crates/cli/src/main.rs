//! `quash`: run samplers, summarise their output, simulate alignments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use quash::diagnostics::{
    cumulative_split_frequencies, density_summary, distinct_char_summary, posterior_predictive_distribution,
    write_predictive_csv,
};
use quash::likelihood::{compress_patterns, simulate_alignment};
use quash::mcmc::{multi_chain_with_sinks, Acceptance, Target, TraceSink, TraceWriter};
use quash::models::{gamma_log_density, StateSnapshot};
use quash::tree::{majority_rule_consensus, parse_newick, parse_newick_with_labels, root_split_frequencies};
use quash::{Alignment, Composition, Family, ModelState, PriorConfig, ProposalConfig, RunConfig, TreeSample};

const MANIFEST: &str = "manifest.json";

#[derive(Parser)]
#[command(name = "quash", version, about = "Bayesian phylogenetics under LASH and QuASH substitution models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the posterior of one model family.
    Run(RunArgs),
    /// Validate a configuration and alignment without sampling.
    Check(RunArgs),
    /// Consensus tree, root splits, split curves, densities and predictive checks.
    Summarize(SummarizeArgs),
    /// Simulate an alignment down a fixed tree.
    Simulate(SimulateArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// FASTA or PHYLIP alignment.
    #[arg(long)]
    alignment: PathBuf,
    /// JSON file with run settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model family: s1, s2, s3, ns1, ns2 or ns3.
    #[arg(long)]
    model: Option<String>,
    /// JSON file of prior hyperparameters; missing keys keep their defaults.
    #[arg(long)]
    priors: Option<PathBuf>,
    /// JSON file of proposal settings.
    #[arg(long)]
    proposals: Option<PathBuf>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    burnin: Option<u64>,
    #[arg(long)]
    thin: Option<u64>,
    #[arg(long)]
    kc: Option<usize>,
    #[arg(long)]
    kd: Option<usize>,
    /// Seed of the first chain; further chains use seed+1, seed+2, ...
    #[arg(long)]
    seed: Option<u64>,
    /// Explicit per-chain seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    chains: Option<usize>,
    /// Chains run at once.
    #[arg(long, env = "QUASH_THREADS")]
    threads: Option<usize>,
    /// Ignore the alignment and sample from the prior.
    #[arg(long)]
    prior_only: bool,
    #[arg(long, default_value = "quash-out")]
    out: PathBuf,
}

/// Run settings as read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<String>,
    iters: Option<u64>,
    burnin: Option<u64>,
    thin: Option<u64>,
    kc: Option<usize>,
    kd: Option<usize>,
    seed: Option<u64>,
    seeds: Option<Vec<u64>>,
    chains: Option<usize>,
    priors: Option<PriorConfig>,
    proposals: Option<ProposalConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChainRecord {
    seed: u64,
    trace: String,
    trees: String,
    states: String,
    samples: usize,
    acceptance: Vec<Acceptance>,
    final_proposals: ProposalConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    program: String,
    version: String,
    alignment: String,
    prior_only: bool,
    taxa: Vec<String>,
    sites: usize,
    config: RunConfig,
    seeds: Vec<u64>,
    /// "complete", or the error that stopped the run.
    status: String,
    chains: Vec<ChainRecord>,
}

struct Resolved {
    config: RunConfig,
    seeds: Vec<u64>,
    alignment: Alignment,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid JSON in {}", path.display()))
}

fn resolve(args: &RunArgs) -> Result<Resolved> {
    if !args.alignment.is_file() {
        bail!("alignment file {} does not exist", args.alignment.display());
    }
    let file: FileConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => FileConfig::default(),
    };
    let family: Family = args
        .model
        .clone()
        .or(file.model)
        .ok_or_else(|| anyhow!("no model family given (--model)"))?
        .parse()?;
    let priors = match &args.priors {
        Some(p) => read_json(p)?,
        None => file.priors.unwrap_or_default(),
    };
    let proposals = match &args.proposals {
        Some(p) => read_json(p)?,
        None => file.proposals.unwrap_or_default(),
    };
    let iterations = args.iters.or(file.iters).unwrap_or(110_000);
    let burn_in = args.burnin.or(file.burnin).unwrap_or(iterations / 11 * 10);
    let thin = args.thin.or(file.thin).unwrap_or(100.min(iterations.saturating_sub(burn_in)).max(1));
    let seed = args.seed.or(file.seed).unwrap_or(1);
    let seeds = match args.seeds.clone().or(file.seeds) {
        Some(s) => {
            if let Some(c) = args.chains.or(file.chains) {
                if c != s.len() {
                    bail!("--chains {c} but {} seeds given", s.len());
                }
            }
            s
        }
        None => {
            let c = args.chains.or(file.chains).unwrap_or(1);
            (0..c as u64).map(|i| seed + i).collect()
        }
    };
    if seeds.is_empty() {
        bail!("at least one chain is needed");
    }
    let config = RunConfig {
        kc: args.kc.or(file.kc).unwrap_or(4),
        kd: args.kd.or(file.kd).unwrap_or(4),
        priors,
        proposals,
        ..RunConfig::new(family, iterations, burn_in, thin, seeds[0])
    };
    config.validate()?;
    let alignment = Alignment::read(&args.alignment)?;
    if alignment.n_taxa() < 3 {
        bail!("need at least three taxa");
    }
    Ok(Resolved { config, seeds, alignment })
}

fn create(path: &Path) -> Result<Box<dyn Write + Send>> {
    Ok(Box::new(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?)))
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m)?;
    fs::write(dir.join(MANIFEST), text + "\n")?;
    Ok(())
}

fn cmd_check(args: &RunArgs) -> Result<()> {
    let r = resolve(args)?;
    let patterns = compress_patterns(&r.alignment);
    let (stats, dropped) = distinct_char_summary(&r.alignment)?;
    println!("model        {}", r.config.family);
    println!("taxa         {}", r.alignment.n_taxa());
    println!("sites        {}", r.alignment.n_sites());
    println!("patterns     {}", patterns.n_patterns());
    println!("samples      {} per chain, {} chains", r.config.n_samples(), r.seeds.len());
    println!("distinct     mean {:.4}, sd {:.4}", stats.mean_distinct, stats.sd_distinct);
    if dropped > 0 {
        eprintln!("warning: {dropped} columns without a determinate nucleotide");
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let r = resolve(args)?;
    let dir = &args.out;
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let patterns = compress_patterns(&r.alignment);
    let labels = r.alignment.names().to_vec();
    let target = if args.prior_only { Target::PriorOnly(&labels) } else { Target::Data(&patterns) };

    let mut manifest = Manifest {
        program: "quash".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        alignment: args.alignment.display().to_string(),
        prior_only: args.prior_only,
        taxa: labels.clone(),
        sites: r.alignment.n_sites(),
        config: r.config.clone(),
        seeds: r.seeds.clone(),
        status: "running".into(),
        chains: Vec::new(),
    };
    write_manifest(dir, &manifest)?;

    let threads = args.threads.unwrap_or(r.seeds.len()).max(1);
    let mut outcome = Ok(());
    for (batch_no, batch) in r.seeds.chunks(threads).enumerate() {
        let first = batch_no * threads;
        let mut sinks: Vec<Option<Box<dyn TraceSink + Send>>> = Vec::new();
        let mut names = Vec::new();
        for i in 0..batch.len() {
            let stem = format!("chain{}", first + i + 1);
            let (t, n, s) = (format!("{stem}.tsv"), format!("{stem}.trees"), format!("{stem}.states.jsonl"));
            let w = TraceWriter::new(create(&dir.join(&t))?, create(&dir.join(&n))?, Some(create(&dir.join(&s))?))?;
            sinks.push(Some(Box::new(w)));
            names.push((t, n, s));
        }
        match multi_chain_with_sinks(&r.config, target, batch, sinks) {
            Ok(traces) => {
                for ((t, n, s), tr) in names.into_iter().zip(traces) {
                    manifest.chains.push(ChainRecord {
                        seed: tr.seed,
                        trace: t,
                        trees: n,
                        states: s,
                        samples: tr.len(),
                        acceptance: tr.acceptance,
                        final_proposals: tr.final_proposals,
                    });
                }
            }
            Err(e) => {
                outcome = Err(anyhow!(e));
                break;
            }
        }
    }
    manifest.status = match &outcome {
        Ok(()) => "complete".into(),
        Err(e) => format!("partial: {e}"),
    };
    write_manifest(dir, &manifest)?;
    if outcome.is_ok() {
        for c in &manifest.chains {
            let rates: Vec<String> =
                c.acceptance.iter().filter(|a| a.proposed > 0).map(|a| format!("{} {:.2}", a.block, a.rate())).collect();
            println!("seed {}: {} samples; acceptance {}", c.seed, c.samples, rates.join(", "));
        }
    }
    outcome
}

#[derive(Args)]
struct SummarizeArgs {
    /// Output directory of a previous `run`.
    run_dir: PathBuf,
    /// Where to write summaries; defaults to RUN_DIR/summary.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Observed alignment for posterior predictive checks.
    #[arg(long)]
    alignment: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    draws: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Smallest root-split frequency reported.
    #[arg(long, default_value_t = 0.01)]
    root_threshold: f64,
}

fn read_trees(path: &Path) -> Result<Vec<quash::Phylogeny>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(parse_newick(l)?)).collect()
}

fn read_states(path: &Path) -> Result<Vec<ModelState>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str::<StateSnapshot>(l)?.to_state()?))
        .collect()
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Gamma density with its limit at the origin, so the first grid point is not a spurious zero.
fn gamma_density(x: f64, shape: f64, rate: f64) -> f64 {
    if x > 0.0 {
        gamma_log_density(x, shape, rate).exp()
    } else if shape == 1.0 {
        rate
    } else if shape > 1.0 {
        0.0
    } else {
        gamma_log_density(f64::EPSILON, shape, rate).exp()
    }
}

fn cmd_summarize(args: &SummarizeArgs) -> Result<()> {
    let manifest: Manifest = read_json(&args.run_dir.join(MANIFEST))?;
    if manifest.chains.is_empty() {
        bail!("run in {} recorded no chains", args.run_dir.display());
    }
    let family = manifest.config.family;
    let rooted = !family.is_stationary();
    let mut samples = Vec::new();
    for c in &manifest.chains {
        let trees = read_trees(&args.run_dir.join(&c.trees))?;
        let s = TreeSample::from_trees(trees)?;
        let mut a = s.labels().to_vec();
        let mut b = manifest.taxa.clone();
        a.sort();
        b.sort();
        if a != b {
            bail!("{} has a different leaf set from the run", c.trees);
        }
        samples.push(s);
    }
    let pooled = TreeSample::from_trees(samples.iter().flat_map(|s| s.trees().iter().cloned()).collect())?;
    let out = args.out.clone().unwrap_or_else(|| args.run_dir.join("summary"));
    fs::create_dir_all(&out)?;

    let consensus = majority_rule_consensus(&pooled, rooted)?;
    fs::write(out.join("consensus.nwk"), consensus.to_newick() + "\n")?;
    cumulative_split_frequencies(&samples, rooted)?
        .write_csv(BufWriter::new(File::create(out.join("split_frequencies.csv"))?))?;
    if rooted {
        let rows = root_split_frequencies(&pooled);
        write_file(&out.join("root_splits.tsv"), |w| {
            writeln!(w, "split\tfrequency")?;
            for (s, f) in rows.iter().filter(|(_, f)| *f >= args.root_threshold) {
                writeln!(w, "{}\t{f:.3}", s.display(pooled.labels()))?;
            }
            Ok(())
        })?;
    }

    let mut states = Vec::new();
    for c in &manifest.chains {
        states.extend(read_states(&args.run_dir.join(&c.states))?);
    }
    let p = &manifest.config.priors;
    let densities: [(&str, Option<(f64, f64)>); 2] = [
        ("alpha", family.has_alpha().then_some((p.alpha_shape, p.alpha_rate))),
        ("beta", family.has_beta().then_some((p.beta_shape, p.beta_rate))),
    ];
    for (name, prior) in densities {
        let Some((shape, rate)) = prior else { continue };
        let xs: Vec<f64> =
            states.iter().filter_map(|s| if name == "alpha" { s.alpha } else { s.beta_d }).collect();
        match density_summary(&xs, |x| gamma_density(x, shape, rate), Some(0.0), 512) {
            Ok(t) => t.write_csv(BufWriter::new(File::create(out.join(format!("{name}_density.csv")))?))?,
            Err(e) => eprintln!("warning: no {name} density: {e}"),
        }
    }

    if let Some(path) = &args.alignment {
        let aln = Alignment::read(path)?;
        let (observed, dropped) = distinct_char_summary(&aln)?;
        if dropped > 0 {
            eprintln!("warning: {dropped} columns without a determinate nucleotide");
        }
        let c = &manifest.config;
        let draws = posterior_predictive_distribution(&states, c.kc, c.kd, aln.n_sites(), args.draws, args.seed)?;
        write_file(&out.join("predictive.csv"), |w| write_predictive_csv(w, &draws, observed))?;
    }
    println!("{}", consensus.to_newick());
    Ok(())
}

#[derive(Args)]
struct SimulateArgs {
    /// Newick tree with branch lengths.
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    model: String,
    /// Number of sites.
    #[arg(long)]
    sites: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    rho1: f64,
    #[arg(long, default_value_t = 1.0)]
    rho2: f64,
    /// Composition in A,G,C,T order.
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.25,0.25,0.25")]
    pi: Vec<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 4)]
    kc: usize,
    #[arg(long, default_value_t = 4)]
    kd: usize,
    /// FASTA output; a JSON record of the true parameters is written beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct SimulationRecord {
    program: String,
    version: String,
    tree: String,
    seed: u64,
    sites: usize,
    kc: usize,
    kd: usize,
    truth: StateSnapshot,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    if args.sites == 0 {
        bail!("--sites must be positive");
    }
    let family: Family = args.model.parse()?;
    let text = fs::read_to_string(&args.tree).with_context(|| format!("cannot read {}", args.tree.display()))?;
    let tree = parse_newick(text.trim())?;
    let mut labels = tree.labels().to_vec();
    labels.sort();
    let tree = parse_newick_with_labels(text.trim(), &labels)?;
    let state = ModelState::with_composition(
        family,
        args.rho1,
        args.rho2,
        Composition::new(args.pi.clone())?,
        args.alpha,
        args.beta,
        tree,
    )?;
    let grid = state.effect_grid(args.kc, args.kd)?;
    let aln = simulate_alignment(&state.tree, &state.substitution_model()?, &grid, args.sites, args.seed)?;
    fs::write(&args.out, aln.to_fasta())?;
    let record = SimulationRecord {
        program: "quash".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        tree: text.trim().to_string(),
        seed: args.seed,
        sites: args.sites,
        kc: args.kc,
        kd: args.kd,
        truth: StateSnapshot::from(&state),
    };
    fs::write(args.out.with_extension("json"), serde_json::to_string_pretty(&record)? + "\n")?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Check(a) => cmd_check(a),
        Command::Summarize(a) => cmd_summarize(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
