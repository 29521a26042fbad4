use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dcpf::ac::{solve_ac, InjectionSpec, SolverOptions};
use dcpf::contingency::{run_contingency_study, BaseParams, ContingencyConfig};
use dcpf::dc::{cold_start, hot_start, ColdVariant, DcParameters, Provenance};
use dcpf::loss::{Evaluator, Subset};
use dcpf::network::{build_admittances, Network};
use dcpf::optim::{train, Method, OptimizerConfig};
use dcpf::report::{self, References, RunManifest};
use dcpf::scenario::{generate, ScenarioSet};
use dcpf::Result;

#[derive(Parser)]
#[command(name = "dcpf", version, about = "Fit DC power flow parameters to AC flows")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "DCPF_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample scenarios, solve AC for each and write a dataset.
    Dataset(DatasetArgs),
    /// Fit parameters on a dataset's training scenarios.
    Train(TrainArgs),
    /// Score parameter sets on a dataset.
    Evaluate(EvaluateArgs),
    /// Run the single-branch outage study.
    Contingency(ContingencyArgs),
    /// Distribution summaries of parameter sets.
    ParamsStats(StatsArgs),
}

#[derive(Args)]
struct CaseArg {
    /// MATPOWER or JSON case file, or a bundled case name (case14, case30, case57, case118).
    #[arg(long)]
    case: String,
}

#[derive(Args)]
struct DatasetArgs {
    #[command(flatten)]
    case: CaseArg,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 0.10)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.8, value_parser = parse_split)]
    split: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the long-format CSV export.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Lbfgs,
    Bfgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Hot,
    Cold,
    ColdR0,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    case: CaseArg,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "lbfgs")]
    method: MethodArg,
    /// Gradient infinity-norm tolerance.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = OptimizerConfig::default().max_iterations)]
    max_iter: usize,
    #[arg(long, value_enum, default_value = "hot")]
    init: InitArg,
    /// Output directory for params.json, report.json and trajectory.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsetArg {
    Train,
    Test,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    case: CaseArg,
    #[arg(long)]
    dataset: PathBuf,
    /// Parameter files to score; the cold, cold-r0 and hot starts are always included.
    #[arg(long = "params")]
    params: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    subset: SubsetArg,
    #[arg(long)]
    out: PathBuf,
    /// Empirical CDF of absolute flow errors per parameter set.
    #[arg(long)]
    cdf: Option<PathBuf>,
}

#[derive(Args)]
struct ContingencyArgs {
    #[command(flatten)]
    case: CaseArg,
    /// Intact-case optimized parameters.
    #[arg(long)]
    params: PathBuf,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    n_train: u64,
    #[arg(long, default_value_t = 250, value_parser = clap::value_parser!(u64).range(1..))]
    n_test: u64,
    #[arg(long, default_value_t = 0.10)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// CSV table; a JSON copy is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    case: CaseArg,
    #[arg(long = "params", required = true)]
    params: Vec<PathBuf>,
    /// Paired rows of the first two parameter sets.
    #[arg(long)]
    scatter: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_split(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err("split must lie strictly between 0 and 1".into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Dataset(a) => cmd_dataset(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Contingency(a) => cmd_contingency(a),
        Command::ParamsStats(a) => cmd_params_stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_manifest(out: &Path, m: RunManifest) -> Result<()> {
    std::fs::write(sidecar(out), serde_json::to_string_pretty(&m.finish())?)?;
    Ok(())
}

fn starts(net: &Network) -> Result<(DcParameters, DcParameters, DcParameters)> {
    let adm = build_admittances(net);
    let base = solve_ac(net, &adm, &InjectionSpec::from_network(net), &SolverOptions::default())?;
    Ok((
        cold_start(net, &adm, ColdVariant::WithR),
        cold_start(net, &adm, ColdVariant::RZero),
        hot_start(net, &adm, &base)?,
    ))
}

fn cmd_dataset(a: DatasetArgs) -> Result<()> {
    let net = Network::load(&a.case.case)?;
    let mut manifest = RunManifest::start(&net.checksum());
    manifest.seed = Some(a.seed);
    let adm = build_admittances(&net);
    let set = generate(&net, &adm, a.n as usize, a.sigma, a.seed, a.split)?;
    let bytes = set.to_bytes();
    std::fs::write(&a.out, &bytes)?;
    if let Some(csv) = &a.csv {
        set.write_csv(create(csv)?)?;
    }
    manifest.dataset_checksum = Some(set.checksum());
    log::info!(
        "wrote {} scenarios ({} train / {} test, {} rejected) to {}",
        set.len(),
        set.train_indices.len(),
        set.test_indices.len(),
        set.rejected_count,
        a.out.display()
    );
    write_manifest(&a.out, manifest)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let net = Network::load(&a.case.case)?;
    let data = ScenarioSet::load(&a.dataset, &net)?;
    let mut manifest = RunManifest::start(&net.checksum());
    manifest.dataset_checksum = Some(data.checksum());
    manifest.seed = Some(data.seed);
    let (cold, cold_r0, hot) = starts(&net)?;
    let init = match a.init {
        InitArg::Hot => hot,
        InitArg::Cold => cold,
        InitArg::ColdR0 => cold_r0,
    };
    let cfg = OptimizerConfig {
        method: match a.method {
            MethodArg::Lbfgs => Method::Lbfgs,
            MethodArg::Bfgs => Method::Bfgs,
        },
        grad_tolerance: a.tol,
        max_iterations: a.max_iter,
        ..Default::default()
    };
    let train_ev = Evaluator::new(&net, &data, Subset::Train)?;
    let test_ev = Evaluator::with_model(train_ev.model().clone(), &data, data.indices(Subset::Test))?;
    let report = train(&init, &train_ev, Some(&test_ev), &cfg, Provenance::Optimized)?;
    std::fs::create_dir_all(&a.out)?;
    let params_path = a.out.join("params.json");
    let notes = vec![format!(
        "{:?} from {:?}, {} iterations, {:?}",
        cfg.method, init.provenance, report.iterations, report.termination
    )];
    report.params().save(&params_path, &net.checksum(), &notes)?;
    std::fs::write(a.out.join("report.json"), report.to_json())?;
    report.write_trajectory_csv(create(&a.out.join("trajectory.csv"))?)?;
    println!(
        "train loss {:.6e} -> {:.6e}; test loss {}",
        report.initial_train.sq_two_norm,
        report.final_train.sq_two_norm,
        report.final_test.map(|l| format!("{:.6e}", l.sq_two_norm)).unwrap_or_else(|| "n/a".into())
    );
    write_manifest(&params_path, manifest)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let net = Network::load(&a.case.case)?;
    let data = ScenarioSet::load(&a.dataset, &net)?;
    let mut manifest = RunManifest::start(&net.checksum());
    manifest.dataset_checksum = Some(data.checksum());
    manifest.seed = Some(data.seed);
    let (cold, cold_r0, hot) = starts(&net)?;
    let mut sets = vec![("cold".to_string(), cold.clone()), ("cold_r0".into(), cold_r0.clone()), ("hot".into(), hot.clone())];
    for p in &a.params {
        let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let label = if label == "params" {
            p.parent().and_then(|d| d.file_name()).map(|s| s.to_string_lossy().into_owned()).unwrap_or(label)
        } else {
            label
        };
        sets.push((label, DcParameters::load(p, &net)?));
    }
    let subset = match a.subset {
        SubsetArg::Train => Subset::Train,
        SubsetArg::Test => Subset::Test,
    };
    let ev = Evaluator::new(&net, &data, subset)?;
    let refs = References { cold: Some(cold), cold_r0: Some(cold_r0), hot: Some(hot) };
    let table = report::evaluate_table(&ev, &sets, &refs)?;
    table.write_csv(create(&a.out)?)?;
    table.write_csv(std::io::stdout().lock())?;
    if let Some(cdf) = &a.cdf {
        let series = sets
            .iter()
            .map(|(l, p)| Ok((l.clone(), report::error_samples(&ev, p)?)))
            .collect::<Result<Vec<_>>>()?;
        report::write_cdf_csv(create(cdf)?, &series)?;
    }
    write_manifest(&a.out, manifest)
}

fn cmd_contingency(a: ContingencyArgs) -> Result<()> {
    let net = Network::load(&a.case.case)?;
    let mut manifest = RunManifest::start(&net.checksum());
    manifest.seed = Some(a.seed);
    let base_opt = DcParameters::load(&a.params, &net)?;
    let base = BaseParams::for_network(&net, base_opt)?;
    let cfg = ContingencyConfig {
        n_train: a.n_train as usize,
        n_test: a.n_test as usize,
        sigma: a.sigma,
        seed: a.seed,
        optimizer: OptimizerConfig { grad_tolerance: a.tol, ..Default::default() },
    };
    let study = run_contingency_study(&net, &base, &cfg)?;
    study.write_csv(create(&a.out)?)?;
    std::fs::write(a.out.with_extension("json"), study.to_json())?;
    study.write_csv(std::io::stdout().lock())?;
    if let Some(m) = study.mean_improvement_over_cold() {
        println!("mean improvement of tailored over cold: {:.2}%", 100.0 * m);
    }
    write_manifest(&a.out, manifest)
}

fn cmd_params_stats(a: StatsArgs) -> Result<()> {
    let net = Network::load(&a.case.case)?;
    let manifest = RunManifest::start(&net.checksum());
    let sets = a
        .params
        .iter()
        .map(|p| DcParameters::load(p, &net))
        .collect::<Result<Vec<_>>>()?;
    let stats: Vec<_> = a
        .params
        .iter()
        .zip(&sets)
        .map(|(path, p)| report::param_stats(&path.display().to_string(), p))
        .collect();
    std::fs::write(&a.out, serde_json::to_string_pretty(&stats)?)?;
    if let Some(path) = &a.scatter {
        let [x, y, ..] = sets.as_slice() else {
            return Err(dcpf::Error::InvalidArgument("--scatter needs two parameter files".into()));
        };
        report::write_scatter_csv(create(path)?, &report::scatter(x, y)?)?;
    }
    write_manifest(&a.out, manifest)
}
