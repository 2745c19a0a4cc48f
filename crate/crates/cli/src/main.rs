use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uwdual::checkpoint::Checkpoint;
use uwdual::config::RunConfig;
use uwdual::image::{load_image, save_image};
use uwdual::metrics::{Metric, MetricReport};
use uwdual::synth::{generate_dataset, load_pairs, png_files, write_toy_rgbd};
use uwdual::trainer::{evaluate, pair_by_name, train, TrainOutput};
use uwdual::wavelet::{dwt2, visualize_band};
use uwdual::{Error, ErrorKind, Result};

/// Worker threads for per-file batch work in `enhance` and `eval`.
const THREADS_ENV: &str = "UWDUAL_THREADS";

#[derive(Parser)]
#[command(name = "uwdual", version, about = "Wavelet-based dual-stream underwater image enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Degrade clean RGB-D images into a paired training set.
    Synth(SynthArgs),
    /// Train the enhancement model.
    Train(TrainArgs),
    /// Enhance one image or a directory of images.
    Enhance(EnhanceArgs),
    /// Write the four Haar sub-bands of an image.
    Decompose(DecomposeArgs),
    /// Score images with quality metrics.
    Eval(EvalArgs),
    /// Configuration helpers.
    #[command(subcommand)]
    Config(ConfigCommand),
}

#[derive(Args)]
struct SynthArgs {
    /// Directory of `<stem>.png` + `<stem>_depth.png` pairs.
    #[arg(long, required_unless_present = "toy")]
    input: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    /// Generate this many procedural RGB-D scenes into `<output>/sources` and use them as input.
    #[arg(long, conflicts_with = "input")]
    toy: Option<usize>,
    /// Side length of the procedural scenes.
    #[arg(long, default_value_t = 128, requires = "toy")]
    toy_size: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Output directory of `uwdual synth`.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint and loss-log directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `train.phase1_epochs`.
    #[arg(long)]
    phase1_epochs: Option<usize>,
    /// Overrides `train.phase2_epochs`.
    #[arg(long)]
    phase2_epochs: Option<usize>,
    /// Continue from a checkpoint; epoch numbering continues.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    model: PathBuf,
    /// PNG file or directory of PNG files.
    #[arg(long)]
    input: PathBuf,
    /// Output file (for a file input) or directory (for a directory input).
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct DecomposeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Directory receiving `<stem>_LL.png`, `_LH`, `_HL`, `_HH`.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Metric to report; repeat for several. Defaults to uiqm and uciqe.
    #[arg(long = "metric")]
    metrics: Vec<String>,
    /// Images to score (file or directory).
    #[arg(long, required_unless_present = "input", conflicts_with = "input")]
    pred: Option<PathBuf>,
    /// Reference images, matched by file name.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Enhance `--input` with this checkpoint and score the results, with timing.
    #[arg(long, requires = "input")]
    model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    input: Option<PathBuf>,
    /// Metric coefficients and color-checker layout.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum ConfigCommand {
    /// Print the full default configuration.
    Init {
        /// Write to a file instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

fn threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

fn ensure_free(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Usage(format!("{} already exists (pass --force to overwrite)", path.display())));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str, force: bool) -> Result<()> {
    ensure_free(path, force)?;
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

/// A file, or the PNG files of a directory in name order.
fn image_paths(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        png_files(path)
    } else if path.exists() {
        Ok(vec![path.to_path_buf()])
    } else {
        Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        })
    }
}

/// Splits `items` into at most `n` contiguous chunks and maps each on its
/// own thread; results come back in input order.
fn par_chunks<T: Sync, R: Send>(items: &[T], n: usize, f: impl Fn(&[T]) -> Result<R> + Sync) -> Result<Vec<R>> {
    if n <= 1 || items.len() <= 1 {
        return Ok(vec![f(items)?]);
    }
    let size = items.len().div_ceil(n);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(size).map(|c| s.spawn(|| f(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Numeric("worker thread panicked".into()))))
            .collect()
    })
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let config = load_config(a.config.as_deref())?;
    let input = match (a.toy, a.input) {
        (Some(count), _) => {
            let dir = a.output.join("sources");
            if !a.force && dir.exists() {
                return Err(Error::Usage(format!("{} already exists (pass --force to overwrite)", dir.display())));
            }
            write_toy_rgbd(&dir, count, a.toy_size, a.seed, config.synth.depth_scale)?;
            dir
        }
        (None, Some(input)) => input,
        (None, None) => return Err(Error::Usage("--input or --toy is required".into())),
    };
    let report = generate_dataset(&input, &config.synth, &a.output, a.seed, a.force)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for (stem, reason) in &report.skipped {
        eprintln!("skipped {stem}: {reason}");
    }
    eprintln!("wrote {} variants to {}", report.rows.len(), a.output.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut config = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        config.train.seed = s;
    }
    if let Some(e) = a.phase1_epochs {
        config.train.phase1_epochs = e;
    }
    if let Some(e) = a.phase2_epochs {
        config.train.phase2_epochs = e;
    }
    config.validate()?;
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let pairs = load_pairs(&a.data)?;
    eprintln!("training on {} pairs", pairs.len());
    let out = TrainOutput {
        dir: &a.out,
        overwrite: a.force,
    };
    let ckpt = train(&pairs, &config, out, resume, |e| {
        let l = &e.losses;
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".into(), |v| format!("{v:.5}"));
        eprintln!(
            "epoch {:4} phase {} L_S {:.5} L_D {:.5} L_adv {} critic {}",
            e.epoch,
            e.phase,
            l.l_s,
            l.l_d,
            opt(l.l_adv),
            opt(l.critic)
        );
    })?;
    eprintln!("finished at epoch {}", ckpt.state.epoch);
    Ok(())
}

fn cmd_enhance(a: EnhanceArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.model)?;
    let inputs = image_paths(&a.input)?;
    let jobs: Vec<(PathBuf, PathBuf)> = if a.input.is_dir() {
        if a.output.exists() && !a.output.is_dir() {
            return Err(Error::Usage(format!("{} is not a directory", a.output.display())));
        }
        inputs
            .iter()
            .map(|p| (p.clone(), a.output.join(p.file_name().expect("listed files have names"))))
            .collect()
    } else {
        vec![(a.input.clone(), a.output.clone())]
    };
    if jobs.is_empty() {
        return Err(Error::Usage(format!("no PNG files in {}", a.input.display())));
    }
    for (_, out) in &jobs {
        ensure_free(out, a.force)?;
    }
    if a.input.is_dir() {
        create_dir(&a.output)?;
    }
    par_chunks(&jobs, threads()?, |chunk| {
        let bundle = ckpt.restore()?;
        for (src, dst) in chunk {
            let out = bundle.enhance(&load_image(src)?)?;
            save_image(dst, &out)?;
        }
        Ok(())
    })?;
    eprintln!("enhanced {} image(s)", jobs.len());
    Ok(())
}

fn cmd_decompose(a: DecomposeArgs) -> Result<()> {
    let img = load_image(&a.input)?;
    let stem = a
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let bands = dwt2(&img)?;
    let outputs = [
        ("LL", bands.ll.map(|v| v / 2.0)),
        ("LH", visualize_band(&bands.lh)),
        ("HL", visualize_band(&bands.hl)),
        ("HH", visualize_band(&bands.hh)),
    ];
    let paths: Vec<PathBuf> = outputs.iter().map(|(b, _)| a.output.join(format!("{stem}_{b}.png"))).collect();
    for p in &paths {
        ensure_free(p, a.force)?;
    }
    create_dir(&a.output)?;
    for ((_, band), p) in outputs.iter().zip(&paths) {
        save_image(p, band)?;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let metrics: Vec<Metric> = if a.metrics.is_empty() {
        vec![Metric::Uiqm, Metric::Uciqe]
    } else {
        a.metrics.iter().map(|m| m.parse()).collect::<Result<_>>()?
    };
    if let Some(m) = metrics.iter().find(|m| m.needs_reference()) {
        if a.reference.is_none() {
            return Err(Error::Usage(format!("metric {m} requires --ref")));
        }
    }
    let config = load_config(a.config.as_deref())?;
    if metrics.contains(&Metric::Colorchecker) && config.metrics.colorchecker.is_empty() {
        return Err(Error::Usage("metric colorchecker requires patches under [metrics] in --config".into()));
    }
    if let Some(out) = &a.out {
        ensure_free(out, a.force)?;
    }
    let scored = a.input.as_ref().or(a.pred.as_ref()).expect("clap enforces one of --pred/--input");
    let files = image_paths(scored)?;
    let (inputs, refs): (Vec<PathBuf>, Option<Vec<PathBuf>>) = match &a.reference {
        Some(r) => {
            let (p, r): (Vec<_>, Vec<_>) = pair_by_name(&files, &image_paths(r)?)?.into_iter().unzip();
            (p, Some(r))
        }
        None => (files, None),
    };
    let ckpt = a.model.as_deref().map(Checkpoint::load).transpose()?;
    let idx: Vec<usize> = (0..inputs.len()).collect();
    let parts = par_chunks(&idx, threads()?, |chunk| {
        let bundle = ckpt.as_ref().map(Checkpoint::restore).transpose()?;
        let ins: Vec<PathBuf> = chunk.iter().map(|&i| inputs[i].clone()).collect();
        let rs: Option<Vec<PathBuf>> = refs.as_ref().map(|r| chunk.iter().map(|&i| r[i].clone()).collect());
        evaluate(bundle.as_ref(), &ins, rs.as_deref(), &metrics, &config.metrics)
    })?;
    let mut report = MetricReport::new(metrics);
    for p in parts {
        report.rows.extend(p.rows);
        report.skipped.extend(p.skipped);
    }
    let tsv = report.to_tsv();
    match &a.out {
        Some(path) => write_text(path, &tsv, a.force)?,
        None => {
            let mut out = std::io::stdout().lock();
            let _ = out.write_all(tsv.as_bytes());
        }
    }
    if let Some(s) = report.mean_seconds() {
        eprintln!("average enhancement time per image: {s:.4} s");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Enhance(a) => cmd_enhance(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Config(ConfigCommand::Init { output, force }) => {
            let text = RunConfig::default().to_toml();
            match output {
                Some(p) => write_text(&p, &text, force),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Internal => 3,
            })
        }
    }
}
