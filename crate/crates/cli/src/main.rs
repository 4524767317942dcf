//! `aucmtl`: simulate data, fit, evaluate and benchmark multi-task AUC models.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use aucmtl::dataio::{self, ModelFile, ModelMeta};
use aucmtl::simgen::{self, SimConfig};
use aucmtl::{bench, metrics, solver, Error, Hyperparams, StopReason};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "aucmtl", version, about = "Multi-task AUC preference learning")]
struct Cli {
    /// Worker threads for per-user parallel work (default: all cores).
    #[arg(long, global = true, env = "AUCMTL_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a simulated dataset with a known ground-truth model.
    Simulate(SimulateArgs),
    /// Fit a model to a training CSV.
    Fit(FitArgs),
    /// Score a dataset with a model and write an AUC report.
    Evaluate(EvaluateArgs),
    /// Time the linear-time loss+gradient against the pairwise loop.
    BenchEval(BenchArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20, conflicts_with = "paper_scale")]
    users: usize,
    /// Instances per user, before the train/test split.
    #[arg(long, default_value_t = 500, conflicts_with = "paper_scale")]
    samples: usize,
    #[arg(long, default_value_t = 40, conflicts_with = "paper_scale")]
    dim: usize,
    /// Highest-scoring instances per user labeled positive.
    #[arg(long, default_value_t = 50, conflicts_with = "paper_scale")]
    top_pos: usize,
    /// Standard deviation of the score noise.
    #[arg(long, default_value_t = 0.01, conflicts_with = "paper_scale")]
    noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// 100 users, 5000 samples, 80 features, top-100, noise 0.01.
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Training CSV (`user_id,label,f1..fd`).
    #[arg(long)]
    data: PathBuf,
    /// Weight of the consensus ridge penalty.
    #[arg(long, default_value_t = 0.01)]
    lambda1: f64,
    /// Weight of the tail singular value penalty on the group factor.
    #[arg(long, default_value_t = 0.01)]
    lambda2: f64,
    /// Weight of the column-sparse penalty on the personal factor.
    #[arg(long, default_value_t = 0.01)]
    lambda3: f64,
    /// Leading singular values of the group factor left unpenalized.
    #[arg(long, default_value_t = 1)]
    kappa: usize,
    /// Initial step parameter.
    #[arg(long, default_value_t = 1.0)]
    rho0: f64,
    /// Growth factor of the step parameter in the line search (> 1).
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Stop when the objective decrease is at most `tol · max(1, F)`.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Where to write the fitted model (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Optional per-iteration trace (CSV).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Start from this model instead of zeros.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Report destination (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Instances per synthetic user, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "250,500,1000,2000,4000")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    dim: usize,
    /// Timed runs per size; the median is reported.
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Largest size timed with the pairwise loop; larger sizes get `nan`.
    #[arg(long, default_value_t = 4000)]
    naive_cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn simulate(args: SimulateArgs) -> aucmtl::Result<ExitCode> {
    let cfg = if args.paper_scale {
        SimConfig::paper_scale(args.seed)
    } else {
        SimConfig::scaled(
            args.users,
            args.samples,
            args.dim,
            args.top_pos,
            args.noise_sd,
            args.seed,
        )
    };
    let data = simgen::generate(&cfg)?;
    fs::create_dir_all(&args.out)?;
    dataio::write_dataset(&data.train, args.out.join("train.csv"))?;
    dataio::write_dataset(&data.test, args.out.join("test.csv"))?;
    let truth = ModelFile {
        params: data.truth,
        hyperparams: None,
        meta: ModelMeta {
            seed: Some(cfg.seed),
            created: Some("simulate".into()),
        },
    };
    dataio::write_model(&truth, args.out.join("truth_model.json"))?;
    dataio::write_json(&cfg, args.out.join("simconfig.json"))?;
    println!(
        "wrote {} annotations ({} train, {} test) for {} users to {}",
        cfg.total_annotations(),
        data.train.n_samples(),
        data.test.n_samples(),
        cfg.n_users,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn fit(args: FitArgs) -> aucmtl::Result<ExitCode> {
    let hp = Hyperparams {
        lambda1: args.lambda1,
        lambda2: args.lambda2,
        lambda3: args.lambda3,
        kappa: args.kappa,
        rho0: args.rho0,
        alpha: args.alpha,
        max_iters: args.max_iters,
        tol: args.tol,
    };
    hp.validate()?;
    let ds = dataio::read_dataset(&args.data)?;
    let init = args.init.as_ref().map(dataio::read_model).transpose()?;
    let (model, report) = solver::fit(&ds, &hp, init.as_ref().map(|m| &m.params))?;
    let (used, _) = hp.clamped(ds.dim(), ds.n_users());
    let file = ModelFile {
        params: model,
        hyperparams: Some(used),
        meta: ModelMeta {
            seed: None,
            created: Some("fit".into()),
        },
    };
    dataio::write_model(&file, &args.out)?;
    if let Some(path) = &args.trace {
        dataio::write_trace(&report, path)?;
    }
    let auc = metrics::auc_macro(&ds, &file.params);
    println!("final objective: {}", dataio::format_f64(report.final_objective()));
    println!("iterations: {}", report.iterations.len());
    println!("stop_reason: {}", report.stop_reason);
    match auc.mean {
        Some(a) => println!("training AUC: {a:.4}"),
        None => println!("training AUC: undefined"),
    }
    Ok(match report.stop_reason {
        StopReason::Tolerance => ExitCode::SUCCESS,
        StopReason::MaxIters => ExitCode::from(2),
    })
}

fn evaluate(args: EvaluateArgs) -> aucmtl::Result<ExitCode> {
    let ds = dataio::read_dataset(&args.data)?;
    let model = dataio::read_model(&args.model)?;
    let losses = metrics::surrogate_losses(&ds, &model.params)?;
    let auc = metrics::auc_macro(&ds, &model.params);
    for id in &auc.unknown_users {
        log::warn!("user `{id}` is not in the model; scored with the consensus weights");
    }
    let per_user: Vec<_> = auc
        .per_user
        .iter()
        .zip(&losses)
        .map(|(r, loss)| {
            json!({
                "user_id": r.user_id,
                "n_pos": r.n_pos,
                "n_neg": r.n_neg,
                "auc": r.auc,
                "surrogate_loss": loss,
                "fallback": r.fallback,
            })
        })
        .collect();
    let total_loss: f64 = losses.iter().flatten().sum();
    let report = json!({
        "per_user": per_user,
        "macro_auc": { "mean": auc.mean, "std": auc.std },
        "missing_users": auc.missing,
        "unknown_users": auc.unknown_users,
        "surrogate_loss": total_loss,
    });
    dataio::write_json(&report, &args.out)?;
    match (auc.mean, auc.std) {
        (Some(m), Some(s)) => println!("macro AUC: {m:.4} (std {s:.4}) over {} users", ds.n_users() - auc.missing.len()),
        _ => println!("macro AUC: undefined"),
    }
    Ok(ExitCode::SUCCESS)
}

fn bench_eval(args: BenchArgs) -> aucmtl::Result<ExitCode> {
    if args.sizes.iter().any(|&n| n < 2) || args.dim == 0 {
        return Err(Error::InvalidArgument(
            "sizes must be at least 2 and dim at least 1".into(),
        ));
    }
    let rows = bench::bench_eval(&args.sizes, args.dim, args.repeats, args.naive_cap, args.seed)?;
    bench::write_bench_csv(&rows, BufWriter::new(File::create(&args.out)?))?;
    let mut stdout = io::stdout().lock();
    bench::write_bench_csv(&rows, &mut stdout)?;
    stdout.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> aucmtl::Result<ExitCode> {
    if let Some(n) = cli.threads.filter(|&n| n > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        info!("using {n} threads");
    }
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Evaluate(a) => evaluate(a),
        Command::BenchEval(a) => bench_eval(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors are invalid input; exit 2 is reserved for fits
            // that hit the iteration limit.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
