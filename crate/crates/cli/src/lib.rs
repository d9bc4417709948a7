//! Command-line front end: training runs, evaluation tables, affordance
//! export and heatmap plots.

pub mod plot;
pub mod report;

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use affordloop::affordance::{cp_forward, dgt_tensor};
use affordloop::geometry::{read_cloud_scores, write_cloud_scores, PointCloud};
use affordloop::pipeline::{
    evaluate, object_cloud, object_family, select_checkpoint, train, Checkpoint, TrainConfig, Trainer,
};
use affordloop::simworld::{ContactChannel, TaskId, TaskSpec};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use report::EvalReport;

#[derive(Parser, Debug)]
#[command(name = "affordloop", version, about = "Contact-driven affordance learning for 2-D manipulation tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train from a TOML config; writes the config snapshot, metrics.csv and checkpoints to OUT.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or tabulate an outcome log) and report ASR/MP per split.
    Eval(EvalArgs),
    /// Write per-object point score files from a checkpoint.
    ExportAffordance(ExportArgs),
    /// Render a point score file as a PNG heatmap.
    PlotAffordance(PlotArgs),
    /// List the available tasks.
    ListTasks,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Config file; only `task` is required.
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the environment-step budget.
    #[arg(long)]
    pub total_timesteps: Option<u64>,
    /// Turn off every affordance component (plain RL).
    #[arg(long)]
    pub plain: bool,
    /// Drop the max-affordance point from the observation.
    #[arg(long)]
    pub no_mpo: bool,
    /// Drop the max-affordance reward.
    #[arg(long)]
    pub no_mpr: bool,
    /// Train policy and predictor in separate stages instead of jointly.
    #[arg(long)]
    pub staged: bool,
    /// Drop the agent-to-object map from the observation.
    #[arg(long)]
    pub no_a2o_map: bool,
    /// Drop the object-to-object map from the observation.
    #[arg(long)]
    pub no_o2o_map: bool,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.total_timesteps {
            cfg.total_timesteps = t;
        }
        let f = &mut cfg.flags;
        if self.plain {
            *f = affordloop::policy::AblationFlags::plain();
        }
        f.use_mpo &= !self.no_mpo;
        f.use_mpr &= !self.no_mpr;
        f.end_to_end &= !self.staged;
        f.use_a2o_map &= !self.no_a2o_map;
        f.use_o2o_map &= !self.no_o2o_map;
    }
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["run", "checkpoint", "outcomes"])))]
pub struct EvalArgs {
    /// Run directory; its best checkpoint is evaluated.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Outcome log (`split object successes episodes` per line) to tabulate.
    #[arg(long)]
    pub outcomes: Option<PathBuf>,
    /// Episodes per object; defaults to the run's config.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Evaluation seeds; defaults to the run's config.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Where eval.csv and eval.json go; defaults to the evaluated checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScoreSource {
    /// Contact predictor output for every train and test object.
    Predicted,
    /// Ground truth from the contact buffers, training objects only.
    Dgt,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("from").required(true).args(["run", "checkpoint"])))]
pub struct ExportArgs {
    /// Run directory; its best checkpoint is exported.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ScoreSource::Predicted)]
    pub source: ScoreSource,
    /// Output directory for the score files.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Point score file (`x y label score...` per line).
    #[arg(long)]
    pub input: PathBuf,
    /// Output PNG path.
    #[arg(long)]
    pub out: PathBuf,
    /// Score column to plot (0 = agent-to-object, 1 = object-to-object).
    #[arg(long, default_value_t = 0)]
    pub channel: usize,
    /// Image width and height in pixels.
    #[arg(long, default_value_t = 512)]
    pub size: u32,
}

/// Failure with its exit code: 2 for configuration problems, 3 otherwise.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<affordloop::Error> for CliError {
    fn from(e: affordloop::Error) -> Self {
        match e {
            affordloop::Error::Config(_) | affordloop::Error::InvalidArgument(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn at(path: &Path) -> impl Fn(affordloop::Error) -> CliError + '_ {
    move |e| match CliError::from(e) {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        CliError::Runtime(m) => CliError::Runtime(format!("{}: {m}", path.display())),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => run_train(&a),
        Command::Eval(a) => run_eval(&a),
        Command::ExportAffordance(a) => run_export(&a),
        Command::PlotAffordance(a) => run_plot(&a),
        Command::ListTasks => {
            print!("{}", list_tasks());
            Ok(())
        }
    }
}

pub fn list_tasks() -> String {
    let mut s = String::new();
    for t in TaskId::ALL {
        let spec = TaskSpec::for_task(t);
        s += &format!(
            "{:<12} agents {}  horizon {:>3}  o2o {:<3}  {}\n",
            t.name(),
            t.num_agents(),
            spec.horizon,
            if t.has_o2o() { "yes" } else { "no" },
            t.description()
        );
    }
    s
}

/// Reads and validates a config file, then applies command-line overrides.
pub fn load_config(args: &TrainArgs) -> Result<TrainConfig> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let mut cfg = TrainConfig::from_toml(&text).map_err(at(&args.config))?;
    args.apply(&mut cfg);
    cfg.validate().map_err(at(&args.config))?;
    Ok(cfg)
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let ckpts = args.out.join("checkpoints");
    if ckpts.is_dir() && fs::read_dir(&ckpts)?.next().is_some() {
        return Err(CliError::Config(format!("{} already holds a run", args.out.display())));
    }
    fs::create_dir_all(&args.out)?;
    log::info!("training {} for {} steps into {}", cfg.task, cfg.total_timesteps, args.out.display());
    let run = train(cfg, Some(&args.out))?;
    let best = select_checkpoint(&args.out)?;
    println!(
        "finished {} steps ({} updates); best checkpoint {} with train ASR {:.1}%",
        run.trainer.step,
        run.trainer.updates,
        best.dir.display(),
        best.train_asr
    );
    Ok(())
}

fn checkpoint_dir(run: &Option<PathBuf>, checkpoint: &Option<PathBuf>) -> Result<PathBuf> {
    match (run, checkpoint) {
        (Some(r), _) => Ok(select_checkpoint(r)?.dir),
        (None, Some(c)) => Ok(c.clone()),
        (None, None) => Err(CliError::Config("give --run or --checkpoint".into())),
    }
}

fn object_name(id: usize) -> String {
    format!("object_{id:03}")
}

/// Evaluates the checkpoint at `dir` and builds the report.
pub fn evaluate_dir(dir: &Path, episodes: Option<usize>, seeds: Option<usize>) -> Result<EvalReport> {
    let ck = Checkpoint::load(dir).map_err(at(dir))?;
    let episodes = episodes.unwrap_or(ck.config.eval.episodes_per_object);
    let seeds = seeds.unwrap_or(ck.config.eval.seeds);
    let m = evaluate(&ck.policy, &ck.cp, &ck.config, episodes, seeds)?;
    let family = object_family(&ck.config)?;
    let names = |ids: &[usize]| ids.iter().map(|&i| object_name(family.objects[i].id)).collect();
    Ok(EvalReport {
        train: report::SplitReport {
            objects: names(&family.train),
            metrics: m.train,
        },
        test: m.test.map(|metrics| report::SplitReport {
            objects: names(&family.test),
            metrics,
        }),
    })
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let (rep, default_out) = match &args.outcomes {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            let rep = report::parse_outcomes(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            (rep, None)
        }
        None => {
            let dir = checkpoint_dir(&args.run, &args.checkpoint)?;
            (evaluate_dir(&dir, args.episodes, args.seeds)?, Some(dir))
        }
    };
    if rep.test.is_none() {
        eprintln!("warning: test split is empty; test metrics are absent");
    }
    print!("{}", rep.to_text());
    if let Some(out) = args.out.clone().or(default_out) {
        fs::create_dir_all(&out)?;
        fs::write(out.join("eval.csv"), rep.to_csv())?;
        fs::write(out.join("eval.json"), rep.to_json())?;
    }
    Ok(())
}

fn write_scores(path: &Path, cloud: &PointCloud, scores: &[Vec<f64>]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# x y label a2o o2o")?;
    write_cloud_scores(&mut w, cloud, scores)?;
    w.flush()?;
    Ok(())
}

fn run_export(args: &ExportArgs) -> Result<()> {
    let dir = checkpoint_dir(&args.run, &args.checkpoint)?;
    fs::create_dir_all(&args.out)?;
    let channels = |m: &affordloop::diffcore::Tensor| -> Vec<Vec<f64>> {
        ContactChannel::ALL.iter().map(|c| m.column(c.index()).to_vec()).collect()
    };
    let mut written = 0;
    match args.source {
        ScoreSource::Predicted => {
            let ck = Checkpoint::load(&dir).map_err(at(&dir))?;
            let family = object_family(&ck.config)?;
            for (split, ids) in [("train", &family.train), ("test", &family.test)] {
                for &i in ids {
                    let obj = &family.objects[i];
                    let cloud = object_cloud(&ck.config, obj)?;
                    let map = cp_forward(&ck.cp, &cloud.cloud)?;
                    let path = args.out.join(format!("{split}_{}.txt", object_name(obj.id)));
                    write_scores(&path, &cloud.cloud, &channels(&map.scores))?;
                    written += 1;
                }
            }
        }
        ScoreSource::Dgt => {
            let t = Trainer::load(&dir).map_err(at(&dir))?;
            for (cloud, bufs) in t.clouds.iter().zip(&t.buffers) {
                let dgt = dgt_tensor(&cloud.cloud.points, [&bufs[0], &bufs[1]], &t.config.affordance)?;
                let path = args.out.join(format!("train_{}.txt", object_name(cloud.cloud.object_id)));
                write_scores(&path, &cloud.cloud, &channels(&dgt))?;
                written += 1;
            }
        }
    }
    println!("wrote {written} score files to {}", args.out.display());
    Ok(())
}

fn run_plot(args: &PlotArgs) -> Result<()> {
    let f = fs::File::open(&args.input).map_err(|e| CliError::Runtime(format!("{}: {e}", args.input.display())))?;
    let points = read_cloud_scores(BufReader::new(f)).map_err(at(&args.input))?;
    let img = plot::render(&points, args.channel, args.size)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", args.input.display())))?;
    img.save_with_format(&args.out, image::ImageFormat::Png)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", args.out.display())))?;
    Ok(())
}
