//! Implementations of the subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use paraflex_core::demand::{AreaScheme, DemandModel};
use paraflex_core::greedy::{greedy_solve, insert_feasible, GreedyParams};
use paraflex_core::history::{ingest_history, synthesize_history, write_history, DayClass, SynthConfig};
use paraflex_core::instance::{Instance, SolutionDoc};
use paraflex_core::oracle::solve_exact;
use paraflex_core::policy::{train, GreedyEstimator, TrainConfig, ValueNet};
use paraflex_core::simanneal::{anneal, anneal_plus_greedy, Budget, SaParams};
use paraflex_core::simulator::{
    evaluate, sample_day, write_results_csv, Arm, DayGen, DayInstance, EvalEnv, Evaluation, TrainEnv,
};
use paraflex_core::{Problem, Route, Solution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::service::{self, ServiceConfig, Settings};
use crate::{
    Algo, AreaChoice, Command, DemandCommand, DemandSource, EvaluateArgs, OracleArgs, ServeArgs, SimulateArgs,
    SolveArgs, TrainArgs, UsageError,
};

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Solve(a) => solve(&a),
        Command::Oracle(a) => oracle(&a),
        Command::DemandModel(c) => demand_model(c),
        Command::Train(a) => train_cmd(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Serve(a) => serve(a),
    }
}

fn load_instance(path: &Path) -> Result<Instance> {
    Instance::load(path).with_context(|| format!("reading instance {}", path.display()))
}

fn print_doc(sol: &Solution, inst: &Instance) -> Result<()> {
    let doc = SolutionDoc::new(sol, &inst.cfg, &inst.matrix)?;
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &doc)?;
    writeln!(out)?;
    Ok(())
}

/// One dedicated route per trip.
fn singletons(problem: &Problem, gp: &GreedyParams) -> Result<Solution> {
    let mut routes = Vec::with_capacity(problem.len());
    for idx in 0..problem.len() {
        let ins = insert_feasible(&Route::default(), idx, 0.0, gp, problem);
        if !ins.is_feasible() {
            return Err(paraflex_core::Error::Unserviceable { trip: problem.request(idx).id }.into());
        }
        routes.push(ins.route);
    }
    Ok(Solution::new(routes))
}

fn solve(a: &SolveArgs) -> Result<()> {
    let inst = load_instance(&a.instance)?;
    let problem = inst.problem()?;
    let gp = GreedyParams::default();
    let budget = match (a.iters, a.seconds) {
        (_, Some(s)) if !(s.is_finite() && s > 0.0) => bail!(UsageError("--seconds must be positive".into())),
        (_, Some(s)) => Budget::WallTime(Duration::from_secs_f64(s)),
        (Some(n), None) => Budget::Iterations(n),
        (None, None) => SaParams::default().budget,
    };
    let sa = SaParams { budget, seed: a.seed, ..SaParams::default() };
    let sol = match a.algo {
        Algo::Greedy => greedy_solve(&problem, &gp)?,
        Algo::Sa => anneal(&singletons(&problem, &gp)?, &sa, &problem, &gp, None)?.best,
        Algo::SaGreedy => anneal_plus_greedy(&problem, None, &sa, &gp, None)?.best,
    };
    print_doc(&sol, &inst)
}

fn oracle(a: &OracleArgs) -> Result<()> {
    let inst = load_instance(&a.instance)?;
    let problem = inst.problem()?;
    let r = solve_exact(&problem, a.limit)?;
    print_doc(&r.best, &inst)
}

fn demand_model(c: DemandCommand) -> Result<()> {
    match c {
        DemandCommand::Build { history, out, areas, cell_m, seed: _ } => {
            if !(cell_m.is_finite() && cell_m > 0.0) {
                bail!(UsageError("--cell-m must be positive".into()));
            }
            let table = ingest_history(&history).with_context(|| format!("reading {}", history.display()))?;
            for d in &table.diagnostics {
                eprintln!("{}:{}: {}", history.display(), d.line, d.message);
            }
            if table.records.is_empty() {
                bail!(UsageError(format!("{} holds no valid trips", history.display())));
            }
            let scheme = match areas {
                AreaChoice::Auto => AreaScheme::auto(&table.records),
                AreaChoice::Zip => AreaScheme::Zip,
                AreaChoice::Grid => AreaScheme::grid_for(&table.records, cell_m),
            };
            let dm = DemandModel::build(&table.records, scheme);
            dm.save(&out)?;
            eprintln!(
                "{} trips, {} rejected rows, {} areas -> {}",
                table.records.len(),
                table.diagnostics.len(),
                dm.areas.len(),
                out.display()
            );
            Ok(())
        }
        DemandCommand::Synth { days, weekday_mean, weekend_mean, first_day, seed, out } => {
            let cfg = SynthConfig { weekday_mean, weekend_mean, ..SynthConfig::default() };
            let records = synthesize_history(&cfg, first_day, days, &mut ChaCha8Rng::seed_from_u64(seed));
            write_history(&records, BufWriter::new(File::create(&out)?))?;
            eprintln!("{} trips over {days} days -> {}", records.len(), out.display());
            Ok(())
        }
    }
}

/// Loads the demand model, or builds one from synthetic history.
pub fn demand_for(src: &DemandSource, seed: u64) -> Result<DemandModel> {
    match &src.demand {
        Some(p) => DemandModel::load(p).with_context(|| format!("reading demand model {}", p.display())),
        None => {
            let first = chrono::NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date");
            let records = synthesize_history(
                &SynthConfig::default(),
                first,
                src.history_days,
                &mut ChaCha8Rng::seed_from_u64(seed),
            );
            if records.is_empty() {
                bail!(UsageError("synthetic history is empty; raise --history-days".into()));
            }
            Ok(DemandModel::build(&records, AreaScheme::auto(&records)))
        }
    }
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let dm = demand_for(&a.demand, a.seed)?;
    let tc = TrainConfig {
        episodes: a.episodes,
        warmup_episodes: a.warmup,
        epsilon: a.epsilon,
        epsilon_decay: a.epsilon_decay,
        batch: a.batch,
        lr: a.lr,
        budget_scale: a.budget_scale,
        seed: a.seed,
        ..TrainConfig::default()
    };
    tc.validate().map_err(|e| UsageError(e.to_string()))?;
    let (gen, gp, sa) = (DayGen::default(), GreedyParams::default(), SaParams::default());
    let estimator = GreedyEstimator(gp);
    let env = TrainEnv { demand: &dm, day: &gen, greedy: &gp, sa: &sa, estimator: &estimator };
    let net = ValueNet::init(&mut ChaCha8Rng::seed_from_u64(a.seed));
    let outcome = train(net, &tc, &env)?;
    for (i, loss) in outcome.episode_losses.iter().enumerate() {
        eprintln!("episode {:>4}  loss {loss:.6}", i + 1 + tc.warmup_episodes.min(tc.episodes));
    }
    outcome.net.save(&a.out)?;
    eprintln!("{} experiences -> {}", outcome.experiences, a.out.display());
    Ok(())
}

fn arms_for(arms: &Option<Vec<Arm>>, has_model: bool) -> Result<Vec<Arm>> {
    let arms = match arms {
        Some(a) => a.clone(),
        None if has_model => Arm::ALL.to_vec(),
        None => vec![Arm::C, Arm::D],
    };
    if arms.is_empty() {
        bail!(UsageError("no arms given".into()));
    }
    if !has_model {
        if let Some(a) = arms.iter().find(|a| a.uses_net()) {
            bail!(UsageError(format!("arm {} needs --model", a.name())));
        }
    }
    let mut seen = arms.clone();
    seen.sort();
    seen.dedup();
    if seen.len() != arms.len() {
        bail!(UsageError("arms repeat".into()));
    }
    Ok(arms)
}

fn load_net(path: &Option<std::path::PathBuf>) -> Result<Option<ValueNet>> {
    path.as_ref()
        .map(|p| ValueNet::load(p).with_context(|| format!("reading model {}", p.display())))
        .transpose()
}

fn report(eval: &Evaluation, arms: &[Arm], out: &Option<std::path::PathBuf>) -> Result<()> {
    match out {
        Some(p) => write_results_csv(&eval.rows, BufWriter::new(File::create(p)?))?,
        None => write_results_csv(&eval.rows, std::io::stdout().lock())?,
    }
    for &arm in arms {
        eprintln!("arm {}: median cost {:.1}", arm.name(), eval.median_cost(arm));
    }
    for r in &eval.reductions {
        eprintln!(
            "{} vs {}: reduction median {:.2}% (quartiles {:.2}%, {:.2}%)",
            r.arm.name(),
            r.baseline.name(),
            r.summary.median,
            r.summary.q1,
            r.summary.q3
        );
    }
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let net = load_net(&a.model)?;
    let arms = arms_for(&a.arms, net.is_some())?;
    let dm = match &a.demand.demand {
        Some(_) => demand_for(&a.demand, a.seed)?,
        None => DemandModel::empty(),
    };
    let mut days = Vec::with_capacity(a.instances.len());
    for path in &a.instances {
        let mut instance = load_instance(path)?;
        instance.requests.sort_by_key(|r| r.booking_instant);
        instance.windows = None;
        days.push(DayInstance { instance, class: a.class.into() });
    }
    let (gp, sa) = (GreedyParams::default(), SaParams::default());
    let env = EvalEnv {
        demand: &dm,
        net: net.as_ref(),
        greedy: &gp,
        sa: &sa,
        budget_scale: a.budget_scale,
        audit: true,
        seed: a.seed,
        threads: a.threads,
    };
    let eval = evaluate(&days, &arms, &env)?;
    report(&eval, &arms, &a.out)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    if a.days == 0 {
        bail!(UsageError("--days must be positive".into()));
    }
    let net = load_net(&a.model)?;
    let arms = arms_for(&a.arms, net.is_some())?;
    let dm = demand_for(&a.demand, a.seed)?;
    let gen = DayGen::default();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let class: Option<DayClass> = a.class.map(Into::into);
    let days = (0..a.days).map(|_| sample_day(&dm, &gen, class, &mut rng)).collect::<paraflex_core::Result<Vec<_>>>()?;
    let (gp, sa) = (GreedyParams::default(), SaParams::default());
    let env = EvalEnv {
        demand: &dm,
        net: net.as_ref(),
        greedy: &gp,
        sa: &sa,
        budget_scale: a.budget_scale,
        audit: false,
        seed: a.seed,
        threads: a.threads,
    };
    let eval = evaluate(&days, &arms, &env)?;
    report(&eval, &arms, &a.out)
}

fn serve(a: ServeArgs) -> Result<()> {
    if !(a.anytime_seconds.is_finite() && a.anytime_seconds > 0.0) {
        bail!(UsageError("--anytime-seconds must be positive".into()));
    }
    let settings = Settings {
        anytime: Duration::from_secs_f64(a.anytime_seconds),
        sa: SaParams { seed: a.seed, ..SaParams::default() },
        ..Settings::default()
    };
    let config = ServiceConfig { model: a.model, demand: a.demand, static_dir: a.static_dir, journal: a.journal, settings };
    let addr = std::net::SocketAddr::new(a.host, a.port);
    tokio::runtime::Builder::new_multi_thread().enable_all().build()?.block_on(service::serve(config, addr))
}
