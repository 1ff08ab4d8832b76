use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cfm::config::RunConfig;
use cfm::dataset::{self, collect_random, Dataset};
use cfm::eval::{self, ablation_specs, evaluate_ablation, run_episode, BenchConfig, GoalId, GoalSpec, Method, Policy};
use cfm::gradsuite;
use cfm::models::{checkpoint, train, ForwardVariant, Model, Objective, Similarity};
use cfm::sim::{Env, EnvKind};
use cfm::Error;

#[derive(Parser)]
#[command(name = "cfm", version, about = "Contrastive forward modeling: collect, train, plan, evaluate")]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (falls back to CFM_THREADS).
    #[arg(long, global = true, env = "CFM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect random-policy trajectories into a CFMD file.
    Collect(CollectArgs),
    /// Train a model on a dataset and write a CFMC checkpoint.
    Train(TrainArgs),
    /// Benchmark checkpoints and the random policy on goal suites.
    Eval(EvalArgs),
    /// Run one episode and log every step.
    Plan(PlanArgs),
    /// Train and evaluate the forward model x similarity grid.
    Ablate(AblateArgs),
    /// Finite-difference gradient checks of every layer and objective.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct EnvArgs {
    #[arg(long)]
    env: Option<EnvKind>,
    /// Image side length (16, 32 or 64).
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Domain-randomize rendering and physics parameters.
    #[arg(long)]
    randomize: bool,
}

#[derive(Args)]
struct CollectArgs {
    #[command(flatten)]
    common: EnvArgs,
    #[arg(long)]
    n_traj: Option<usize>,
    #[arg(long = "len")]
    traj_len: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    objective: Option<Objective>,
    #[arg(long)]
    forward: Option<ForwardVariant>,
    #[arg(long)]
    similarity: Option<Similarity>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    model: ModelArgs,
    /// Checkpoint path; defaults to `<objective>-<config hash>.cfmc`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss curve path; defaults to the checkpoint path with `.losses.json`.
    #[arg(long)]
    losses: Option<PathBuf>,
}

#[derive(Args)]
struct EvalOpts {
    /// Comma-separated goals.
    #[arg(long, value_delimiter = ',')]
    goals: Option<Vec<GoalId>>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Candidate actions per planning step.
    #[arg(long)]
    n: Option<usize>,
    /// Output prefix; `.tsv` and `.json` are appended.
    #[arg(long)]
    out_prefix: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: EnvArgs,
    /// Checkpoints to evaluate, comma-separated.
    #[arg(long, value_delimiter = ',')]
    ckpt: Vec<PathBuf>,
    /// `random` evaluates only the random policy.
    #[arg(long)]
    policy: Option<String>,
    #[command(flatten)]
    opts: EvalOpts,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    common: EnvArgs,
    /// Checkpoint; the random policy acts without one.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    goal: GoalId,
    /// Seed of a random goal.
    #[arg(long, default_value_t = 0)]
    goal_seed: u64,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    randomize: bool,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    opts: EvalOpts,
    /// Grid axes, e.g. `fm=linear,mlp,mlp_linear sim=e2,logbilinear`.
    #[arg(long, num_args = 1..)]
    grid: Vec<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = gradsuite::DEFAULT_SEEDS)]
    seeds: u64,
    #[arg(long, default_value_t = gradsuite::DEFAULT_TOLERANCE)]
    tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    /// Only run checks whose name contains this.
    #[arg(long)]
    only: Option<String>,
    /// Write the full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) => Failure::Usage(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let base = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Collect(a) => collect(base, a),
        Command::Train(a) => train_cmd(base, a),
        Command::Eval(a) => eval_cmd(base, a),
        Command::Plan(a) => plan(base, a),
        Command::Ablate(a) => ablate(base, a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn apply_env(cfg: &mut RunConfig, a: &EnvArgs) {
    if let Some(e) = a.env {
        cfg.env = e;
    }
    if let Some(s) = a.size {
        cfg.image_size = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.randomize |= a.randomize;
}

fn apply_model(cfg: &mut RunConfig, a: &ModelArgs) {
    if let Some(o) = a.objective {
        cfg.objective = o;
    }
    if let Some(f) = a.forward {
        cfg.forward.variant = f;
    }
    if let Some(s) = a.similarity {
        cfg.similarity = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.adam.lr = lr;
    }
}

fn apply_eval(cfg: &mut RunConfig, o: &EvalOpts) {
    if let Some(g) = &o.goals {
        cfg.goals = Some(g.clone());
    }
    if let Some(e) = o.episodes {
        cfg.episodes = e;
    }
    if let Some(m) = o.max_steps {
        cfg.max_steps = Some(m);
    }
    if let Some(n) = o.n {
        cfg.planner_n = n;
    }
}

/// Validates the effective config and prints it with its hash.
fn finalize(cfg: RunConfig) -> CliResult<(RunConfig, String)> {
    cfg.validate()?;
    let hash = cfg.short_hash();
    eprintln!("config {hash} {}", serde_json::to_string(&cfg).expect("serializable"));
    Ok((cfg, hash))
}

fn write(path: &Path, contents: &[u8]) -> CliResult {
    std::fs::write(path, contents).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn load_data(cfg: &RunConfig, flag: &Option<PathBuf>) -> CliResult<(PathBuf, Dataset)> {
    let path = flag
        .clone()
        .or_else(|| cfg.data.clone())
        .ok_or_else(|| Failure::Usage("no dataset given (--data or `data` in the config)".into()))?;
    let data = dataset::read_file(&path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    Ok((path, data))
}

fn load_ckpt(path: &Path) -> CliResult<Model> {
    if !path.exists() {
        return Err(Failure::Runtime(format!(
            "missing checkpoint {}; create it with `cfm train --data <file.cfmd> --out {}`",
            path.display(),
            path.display()
        )));
    }
    checkpoint::read_file(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn collect(mut cfg: RunConfig, a: CollectArgs) -> CliResult {
    apply_env(&mut cfg, &a.common);
    if let Some(n) = a.n_traj {
        cfg.n_traj = n;
    }
    if let Some(l) = a.traj_len {
        cfg.traj_len = l;
    }
    let (cfg, _) = finalize(cfg)?;
    let env = Env::new(cfg.env, cfg.image_size)?;
    let data = collect_random(&env, cfg.n_traj, cfg.traj_len, cfg.seed, cfg.randomize)?;
    dataset::write_file(&data, &a.out).map_err(|e| Failure::Runtime(format!("{}: {e}", a.out.display())))?;
    println!("wrote {} ({} trajectories, {} transitions)", a.out.display(), cfg.n_traj, data.transition_count());
    Ok(())
}

fn train_cmd(mut cfg: RunConfig, a: TrainArgs) -> CliResult {
    let (data_path, data) = load_data(&cfg, &a.data)?;
    cfg.data = Some(data_path);
    cfg.env = data.kind();
    cfg.image_size = data.image_size();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    apply_model(&mut cfg, &a.model);
    let (cfg, hash) = finalize(cfg)?;
    let out = a.out.unwrap_or_else(|| PathBuf::from(format!("{}-{hash}.cfmc", cfg.objective)));
    let losses_path = a.losses.unwrap_or_else(|| out.with_extension("losses.json"));
    let echo = serde_json::to_value(&cfg).expect("serializable");
    let mut write_err = None;
    let result = train(data.transitions(), cfg.model_spec()?, &cfg.train_config(), |s, m| {
        println!("epoch {}\t{:.6}", s.epoch + 1, s.mean_loss);
        let snapshot = Model { config: echo.clone(), ..m.clone() };
        if let Err(e) = checkpoint::write_file(&snapshot, &out) {
            write_err.get_or_insert(e);
        }
    });
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            if matches!(e, Error::Divergence { .. }) && out.exists() {
                let _ = std::fs::remove_file(&out);
                eprintln!("removed partial checkpoint {}", out.display());
            }
            return Err(Failure::Runtime(e.to_string()));
        }
    };
    if let Some(e) = write_err {
        return Err(Failure::Runtime(format!("{}: {e}", out.display())));
    }
    let model = Model { config: echo.clone(), ..outcome.model };
    checkpoint::write_file(&model, &out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    let curve = serde_json::json!({ "config": echo, "losses": outcome.losses });
    write(&losses_path, serde_json::to_string_pretty(&curve).expect("serializable").as_bytes())?;
    println!("wrote {} and {}", out.display(), losses_path.display());
    Ok(())
}

fn method_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn write_report(prefix: &Path, tsv: &str, json: &str) -> CliResult {
    let base = prefix.display().to_string();
    write(Path::new(&format!("{base}.tsv")), tsv.as_bytes())?;
    write(Path::new(&format!("{base}.json")), json.as_bytes())?;
    println!("wrote {base}.tsv and {base}.json");
    Ok(())
}

fn eval_cmd(mut cfg: RunConfig, a: EvalArgs) -> CliResult {
    match a.policy.as_deref() {
        None | Some("random") => {}
        Some(p) => return Err(Failure::Usage(format!("unknown policy `{p}` (only `random`)"))),
    }
    if a.policy.is_some() && !a.ckpt.is_empty() {
        return Err(Failure::Usage("--policy random and --ckpt are exclusive".into()));
    }
    let models = a.ckpt.iter().map(|p| load_ckpt(p)).collect::<CliResult<Vec<_>>>()?;
    apply_env(&mut cfg, &a.common);
    if let Some(m) = models.first() {
        cfg.env = m.spec.env;
        cfg.image_size = m.image_size();
    }
    if let Some(m) = models.iter().find(|m| m.spec.env != cfg.env || m.image_size() != cfg.image_size) {
        return Err(Failure::Usage(format!(
            "checkpoints disagree: {} at {}px vs {} at {}px",
            m.spec.env,
            m.image_size(),
            cfg.env,
            cfg.image_size
        )));
    }
    apply_eval(&mut cfg, &a.opts);
    let (cfg, hash) = finalize(cfg)?;
    let env = Env::new(cfg.env, cfg.image_size)?;
    let names: Vec<String> = a.ckpt.iter().map(|p| method_name(p)).collect();
    let methods: Vec<Method<'_>> = models.iter().zip(&names).map(|(m, n)| Method::model(n, m)).collect();
    let report = eval::benchmark(&env, &cfg.bench_config(), &methods)?;
    print!("{}", report.format_table());
    let prefix = a.opts.out_prefix.unwrap_or_else(|| PathBuf::from(format!("eval-{hash}")));
    write_report(&prefix, &report.to_tsv(), &report.to_json()?)
}

fn plan(mut cfg: RunConfig, a: PlanArgs) -> CliResult {
    let model = a.ckpt.as_deref().map(load_ckpt).transpose()?;
    apply_env(&mut cfg, &a.common);
    if let Some(m) = &model {
        cfg.env = m.spec.env;
        cfg.image_size = m.image_size();
    }
    if let Some(s) = a.max_steps {
        cfg.max_steps = Some(s);
    }
    if let Some(n) = a.n {
        cfg.planner_n = n;
    }
    let (cfg, _) = finalize(cfg)?;
    let env = Env::new(cfg.env, cfg.image_size)?;
    let goal = GoalSpec::new(cfg.env, a.goal, a.goal_seed)?;
    let policy = match &model {
        Some(m) => Policy::Model(m),
        None => Policy::Random,
    };
    let bench = cfg.bench_config();
    let rep = run_episode(&env, policy, &goal, &bench.episode, cfg.seed)?;
    println!("step\tmetric\tintersection\taction");
    println!("0\t{:.6}\t{}\t-", rep.trace[0], rep.intersections[0]);
    for (i, act) in rep.taken.iter().enumerate() {
        let act: Vec<String> = act.iter().map(|v| format!("{v:.4}")).collect();
        println!("{}\t{:.6}\t{}\t{}", i + 1, rep.trace[i + 1], rep.intersections[i + 1], act.join(","));
    }
    println!("best {:.6} final {:.6}", rep.best, rep.final_metric);
    Ok(())
}

/// Parses `fm=...` and `sim=...` axes; a missing axis keeps every value.
fn parse_grid(args: &[String]) -> CliResult<(Vec<ForwardVariant>, Vec<Similarity>)> {
    let mut fms = ForwardVariant::ALL.to_vec();
    let mut sims = eval::SIMILARITIES.to_vec();
    for a in args {
        let (key, values) = a
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("grid axis `{a}` is not of the form key=v1,v2")))?;
        match key {
            "fm" => fms = values.split(',').map(|v| v.parse()).collect::<Result<_, _>>()?,
            "sim" => sims = values.split(',').map(|v| v.parse()).collect::<Result<_, _>>()?,
            _ => return Err(Failure::Usage(format!("unknown grid axis `{key}` (fm|sim)"))),
        }
    }
    Ok((fms, sims))
}

fn ablate(mut cfg: RunConfig, a: AblateArgs) -> CliResult {
    let (fms, sims) = parse_grid(&a.grid)?;
    let (data_path, data) = load_data(&cfg, &a.data)?;
    cfg.data = Some(data_path);
    cfg.env = data.kind();
    cfg.image_size = data.image_size();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.randomize |= a.randomize;
    apply_model(&mut cfg, &a.model);
    apply_eval(&mut cfg, &a.opts);
    let (cfg, hash) = finalize(cfg)?;
    let env = Env::new(cfg.env, cfg.image_size)?;
    let specs: Vec<_> = ablation_specs(&cfg.model_spec()?)
        .into_iter()
        .filter(|s| fms.contains(&s.forward.variant) && sims.contains(&s.similarity))
        .collect();
    let mut cells = Vec::with_capacity(specs.len());
    for spec in specs {
        eprintln!("training {}", eval::cell_name(&spec));
        let out = train(data.transitions(), spec, &cfg.train_config(), |_, _| {})?;
        cells.push((out.model, out.losses));
    }
    let bench: BenchConfig = cfg.bench_config();
    let report = evaluate_ablation(&env, &bench, &cells)?;
    for g in &bench.goals {
        println!("{}", report.format_grid(*g));
    }
    let prefix = a.opts.out_prefix.unwrap_or_else(|| PathBuf::from(format!("ablate-{hash}")));
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    write_report(&prefix, &report.to_tsv(), &json)
}

fn gradcheck(a: GradcheckArgs) -> CliResult {
    if a.seeds == 0 || !(a.h > 0.0) || !(a.tol > 0.0) {
        return Err(Failure::Usage("--seeds, --h and --tol must be positive".into()));
    }
    let rep = gradsuite::run(a.seeds, a.h, a.tol, a.only.as_deref())?;
    if rep.entries.is_empty() {
        return Err(Failure::Usage(format!("no check matches `{}`", a.only.unwrap_or_default())));
    }
    for (name, err) in rep.summary() {
        let verdict = if err < a.tol { "ok" } else { "FAIL" };
        println!("{name:20} {err:.3e} {verdict}");
    }
    if let Some(p) = &a.json {
        write(p, serde_json::to_string_pretty(&rep).map_err(Error::from)?.as_bytes())?;
    }
    if rep.passed() {
        println!("all {} checks below {:.0e}", rep.entries.len(), a.tol);
        Ok(())
    } else {
        let w = rep.worst().expect("nonempty");
        Err(Failure::Runtime(format!("{} (seed {}) has relative error {:.3e} >= {:.0e}", w.name, w.seed, w.max_rel_err, a.tol)))
    }
}
