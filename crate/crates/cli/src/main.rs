use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use flowcfg::checkpoint::Checkpoint;
use flowcfg::experiment::{run_sweep, ExperimentConfig, ModelSource, SampleConfig, TrainRunConfig};
use flowcfg::metrics::{read_records, sweep_summary, write_summary, CellStatus, GroupKey};
use flowcfg::neural::Trainer;
use flowcfg::sampler::{sample_batch, write_samples_csv, write_trace_csv};
use flowcfg::{GuidanceSpec, Rng, Strategy};

#[derive(Parser)]
#[command(name = "flowcfg", version, about = "Guidance experiments for conditional flow matching")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path; `-` writes to stdout where the output is CSV.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the velocity network and write a checkpoint.
    Train(TrainArgs),
    /// Draw guided samples.
    Sample(SampleArgs),
    /// Run an experiment config and write the results CSV.
    Sweep(SweepArgs),
    /// Record the extrapolated-signal trace of one trajectory.
    Probe(SampleArgs),
    /// Group a results CSV into mean/sd rows.
    Report(ReportArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Override the number of optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Also write the (step, loss) curve as CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    /// Use a trained checkpoint instead of the config's model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    t_threshold: Option<f64>,
    /// Condition as `a,b`.
    #[arg(long, value_parser = parse_condition)]
    cond: Option<[usize; 2]>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Also write the trace of the first trajectory (sample only).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Results CSV produced by `sweep`.
    input: PathBuf,
    /// Comma-separated grouping columns.
    #[arg(long, value_delimiter = ',')]
    group_by: Option<Vec<String>>,
}

fn parse_condition(s: &str) -> std::result::Result<[usize; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [a, b] => Ok([
            a.trim().parse().map_err(|e| format!("bad class index {a:?}: {e}"))?,
            b.trim().parse().map_err(|e| format!("bad class index {b:?}: {e}"))?,
        ]),
        _ => Err(format!("expected `a,b`, got {s:?}")),
    }
}

fn open_output(path: Option<&Path>, default: &str) -> Result<Box<dyn Write>> {
    let path = path.unwrap_or(Path::new(default));
    if path == Path::new("-") {
        return Ok(Box::new(io::stdout().lock()));
    }
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(Box::new(BufWriter::new(file)))
}

fn train(common: &Common, args: &TrainArgs) -> Result<()> {
    let mut cfg = match &common.config {
        Some(path) => TrainRunConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => TrainRunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(steps) = args.steps {
        cfg.train.steps = steps;
    }
    let mut trainer = Trainer::new(&cfg.task, &cfg.train)?;
    trainer.run_to(cfg.train.steps)?;
    let trained = trainer.finish();
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("checkpoint.json"));
    Checkpoint::from_model(&trained.model, &cfg.task, cfg.train.seed, cfg.train.steps).save(&out)?;
    if let Some(path) = &args.curve {
        let mut w = open_output(Some(path), "-")?;
        writeln!(w, "step,loss")?;
        for (step, loss) in &trained.curve {
            writeln!(w, "{step},{loss}")?;
        }
        w.flush()?;
    }
    let n = trained.curve.len();
    if n > 0 {
        let tail = trained.mean_loss(n.saturating_sub(1000)..n);
        eprintln!("trained {n} steps, final mean loss {tail:.4}; wrote {}", out.display());
    }
    Ok(())
}

fn sample_config(common: &Common, args: &SampleArgs) -> Result<SampleConfig> {
    let mut cfg = match &common.config {
        Some(path) => SampleConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => SampleConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(path) = &args.checkpoint {
        cfg.model = ModelSource::Checkpoint { path: path.clone() };
    }
    if let Some(name) = &args.strategy {
        let Some(strategy) = Strategy::from_name(name) else {
            bail!("unknown strategy {name:?}");
        };
        cfg.guidance = GuidanceSpec { strategy, ..cfg.guidance };
    }
    if let Some(lambda) = args.lambda {
        cfg.guidance.lambda = lambda;
    }
    if let Some(thr) = args.t_threshold {
        cfg.guidance.t_threshold = thr;
    }
    if let Some(cond) = args.cond {
        cfg.condition = cond;
    }
    if let Some(n) = args.n {
        cfg.n_samples = n;
    }
    if let Some(steps) = args.steps {
        cfg.grid.n_steps = steps;
    }
    let exp = cfg.as_experiment();
    exp.validate()?;
    Ok(cfg)
}

fn sample(common: &Common, args: &SampleArgs, probe: bool) -> Result<()> {
    let cfg = sample_config(common, args)?;
    let model = cfg.as_experiment().load_model()?;
    let grid = cfg.time_grid()?;
    let n = if probe { 1 } else { cfg.n_samples };
    let record = probe || args.trace.is_some();
    let mut rng = Rng::new(cfg.seed);
    let out = sample_batch(model.as_ref(), &cfg.condition(), &grid, &cfg.guidance, &mut rng, cfg.method, n, record)?;
    let first_trace = out.traces.and_then(|t| t.into_iter().next());
    if probe {
        let trace = first_trace.expect("trace recorded");
        write_trace_csv(&trace, open_output(common.out.as_deref(), "-")?)?;
    } else {
        write_samples_csv(&out.samples, open_output(common.out.as_deref(), "-")?)?;
        if let (Some(path), Some(trace)) = (&args.trace, first_trace) {
            write_trace_csv(&trace, open_output(Some(path), "-")?)?;
        }
    }
    Ok(())
}

fn sweep(common: &Common, args: &SweepArgs) -> Result<()> {
    let Some(path) = &common.config else {
        bail!("sweep needs --config <path>");
    };
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(out) = &common.out {
        cfg.output = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    let rows = run_sweep(&cfg, args.jobs)?;
    let failed = rows.iter().filter(|r| r.status == CellStatus::Failed).count();
    eprintln!("wrote {} rows ({failed} failed) to {}", rows.len(), cfg.output.display());
    Ok(())
}

fn report(common: &Common, args: &ReportArgs) -> Result<()> {
    let keys: Vec<GroupKey> = match &args.group_by {
        Some(names) => names
            .iter()
            .map(|n| GroupKey::from_name(n).with_context(|| format!("unknown group column {n:?}")))
            .collect::<Result<_>>()?,
        None => GroupKey::DEFAULT.to_vec(),
    };
    let file = File::open(&args.input).with_context(|| format!("cannot open {}", args.input.display()))?;
    let records = read_records(file)?;
    let rows = sweep_summary(&records, &keys);
    write_summary(&rows, &keys, open_output(common.out.as_deref(), "-")?)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(args) => train(&cli.common, args),
        Command::Sample(args) => sample(&cli.common, args, false),
        Command::Probe(args) => sample(&cli.common, args, true),
        Command::Sweep(args) => sweep(&cli.common, args),
        Command::Report(args) => report(&cli.common, args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("flowcfg: error: {msg}");
            ExitCode::FAILURE
        }
    }
}
