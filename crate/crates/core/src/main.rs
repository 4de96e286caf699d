use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cmda::adaptation::{
    budget_sweep, continue_source_stages, run_target_stages, run_task, stage_features, target_subset, task_needs,
    train_scorers, train_source_stage, TaskData, TaskOutcome,
};
use cmda::config::RunConfig;
use cmda::data::{load_pair, save_pair, DomainPair};
use cmda::encoders::PreparedFrame;
use cmda::eval::{emit_report, evaluate_model, results_csv};
use cmda::model::Model;
use cmda::sampling::{sample_source, sample_target, write_selections_csv};
use cmda::seed::stage_seed;
use cmda::{Error, Result};

#[derive(Parser)]
#[command(name = "cmda", version, about = "Cross-modal domain-adaptive segmentation with bi-domain sampling")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `task.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parent of the run directory.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic domain pair into <run>/data.
    GenData,
    /// Train both branches on labelled source frames.
    TrainSource,
    /// Train the discriminators the sampling strategies need.
    TrainDisc,
    /// Score and select source (and, for ADA, target) frames.
    Sample,
    /// Fine-tune on the source selection and run the target stage.
    Adapt,
    /// Evaluate a checkpoint on the target test split.
    Eval {
        /// Defaults to the most advanced checkpoint in the run directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Full pipeline for the configured task.
    Run {
        /// Repeat the target stage for every budget in `eval.sweep`.
        #[arg(long)]
        sweep: bool,
    },
    /// Fast invariant checks.
    Selftest,
}

struct Ctx {
    cfg: RunConfig,
    run_dir: PathBuf,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self> {
        let cfg = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let cfg = match cli.seed {
            Some(s) => cfg.with_seed(s),
            None => cfg,
        };
        let run_dir = cfg.run_dir(&cli.out);
        Ok(Ctx { cfg, run_dir })
    }

    fn ckpt(&self, name: &str) -> PathBuf {
        self.run_dir.join("checkpoints").join(format!("{name}.ckpt"))
    }

    fn pair(&self) -> Result<DomainPair> {
        let local = self.run_dir.join("data");
        if self.cfg.data.dir.is_none() && local.join("source").exists() {
            return load_pair(&local);
        }
        self.cfg.data.obtain(self.cfg.seed())
    }

    fn data(&self) -> Result<TaskData> {
        TaskData::from_pair(&self.pair()?)
    }

    fn load(&self, name: &str) -> Result<Model> {
        Model::load_checkpoint(&self.cfg.model, &self.ckpt(name))
    }

    fn save(&self, model: &Model, name: &str) -> Result<PathBuf> {
        let path = self.ckpt(name);
        let dir = path.parent().expect("checkpoint dir");
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
        model.save_checkpoint(&path)?;
        Ok(path)
    }

    fn emit(&self, outcome: &TaskOutcome, dir: &Path, name: &str) -> Result<()> {
        let mut report = outcome.report.clone();
        report.config_hash = self.cfg.hash();
        emit_report(&report, dir)?;
        let ckpt = dir.join("checkpoints").join(format!("{name}.ckpt"));
        std::fs::create_dir_all(ckpt.parent().expect("dir")).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
        outcome.model.save_checkpoint(&ckpt)?;
        if let Some(e) = report.final_eval() {
            println!("{}: fused mIoU {:.4} (2D {:.4}, 3D {:.4})", dir.display(), e.fused.miou, e.two_d.miou, e.three_d.miou);
        }
        Ok(())
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::Selftest = cli.command {
        let checks = cmda::selftest::run_all();
        for c in &checks {
            println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
        }
        return match checks.iter().filter(|c| !c.passed).count() {
            0 => Ok(()),
            n => Err(Error::Numeric(format!("{n} self-test check(s) failed"))),
        };
    }
    let ctx = Ctx::new(cli)?;
    let spec = ctx.cfg.task_spec();
    let pipe = ctx.cfg.pipeline();
    std::fs::create_dir_all(&ctx.run_dir).map_err(|e| Error::Io { path: ctx.run_dir.clone(), source: e })?;
    std::fs::write(ctx.run_dir.join("config.toml"), ctx.cfg.to_toml())
        .map_err(|e| Error::Io { path: ctx.run_dir.clone(), source: e })?;
    log::info!("run directory {}", ctx.run_dir.display());
    match &cli.command {
        Command::Selftest => unreachable!(),
        Command::GenData => {
            let pair = ctx.pair()?;
            let dir = ctx.run_dir.join("data");
            save_pair(&pair, &dir)?;
            println!("{}: {} source, {} target frames", dir.display(), pair.source.frames.len(), pair.target.frames.len());
        }
        Command::TrainSource => {
            let data = ctx.data()?;
            let model = train_source_stage(&spec, &data, &pipe)?;
            let test: Vec<&PreparedFrame> = data.target_test.iter().collect();
            let e = evaluate_model(&model.store, &model.seg, &test)?;
            println!("{}: source-only fused mIoU {:.4}", ctx.save(&model, "source")?.display(), e.fused.miou);
        }
        Command::TrainDisc => {
            let data = ctx.data()?;
            let mut model = ctx.load("source")?;
            let available = target_subset(&spec, data.target_train.len())?;
            let (s, t) = stage_features(&model, &data, &available)?;
            let hist = train_scorers(&mut model, task_needs(&spec), &s, &t, &pipe.discriminator, stage_seed(spec.seed, "disc"))?;
            for (name, h) in &hist {
                println!("{name}: final loss {:.4}, accuracy {:.3}", h.loss.last().unwrap_or(&f64::NAN), h.accuracy.last().unwrap_or(&f64::NAN));
            }
            println!("{}", ctx.save(&model, "disc")?.display());
        }
        Command::Sample => {
            let data = ctx.data()?;
            let model = ctx.load("disc")?;
            let available = target_subset(&spec, data.target_train.len())?;
            let (s, t) = stage_features(&model, &data, &available)?;
            let scorers = model.scorers();
            let mut sels =
                vec![sample_source(&s, &scorers, &model.store, spec.source_budget, spec.strategy, stage_seed(spec.seed, "score.source"))?];
            if spec.task == cmda::adaptation::TaskKind::Ada {
                let ts = spec.target_strategy.unwrap_or(spec.strategy);
                sels.push(sample_target(&t, &scorers, &model.store, spec.target_budget, ts, stage_seed(spec.seed, "score.target"))?);
            }
            let path = ctx.run_dir.join("selections.csv");
            write_selections_csv(&sels.iter().collect::<Vec<_>>(), &path)?;
            println!("{}: {} selection(s)", path.display(), sels.len());
        }
        Command::Adapt => {
            let data = ctx.data()?;
            let model = ctx.load("disc")?;
            let base = continue_source_stages(model, &spec, &data, &pipe, Vec::new())?;
            let outcome = run_target_stages(base, &spec, &data, &pipe)?;
            ctx.emit(&outcome, &ctx.run_dir, "adapted")?;
        }
        Command::Eval { checkpoint } => {
            let data = ctx.data()?;
            let path = match checkpoint {
                Some(p) => p.clone(),
                None => ["model", "adapted", "disc", "source"]
                    .iter()
                    .map(|n| ctx.ckpt(n))
                    .find(|p| p.exists())
                    .ok_or_else(|| Error::State("no checkpoint in the run directory".into()))?,
            };
            let model = Model::load_checkpoint(&ctx.cfg.model, &path)?;
            let test: Vec<&PreparedFrame> = data.target_test.iter().collect();
            let e = evaluate_model(&model.store, &model.seg, &test)?;
            let out = ctx.run_dir.join("eval.csv");
            std::fs::write(&out, results_csv(&e)).map_err(|err| Error::Io { path: out.clone(), source: err })?;
            println!("{}: fused mIoU {:.4} (2D {:.4}, 3D {:.4})", path.display(), e.fused.miou, e.two_d.miou, e.three_d.miou);
        }
        Command::Run { sweep: false } => {
            let outcome = run_task(&spec, &ctx.data()?, &pipe)?;
            ctx.emit(&outcome, &ctx.run_dir, "model")?;
        }
        Command::Run { sweep: true } => {
            if ctx.cfg.eval.sweep.is_empty() {
                return Err(Error::Config("run --sweep needs a non-empty eval.sweep list".into()));
            }
            let outcomes = budget_sweep(&spec, &ctx.data()?, &pipe, &ctx.cfg.eval.sweep)?;
            for (b, outcome) in ctx.cfg.eval.sweep.iter().zip(&outcomes) {
                ctx.emit(outcome, &ctx.run_dir.join(format!("budget-{b}")), "model")?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
