use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mptrain::runtime::{
    ablation, load_idx_dataset, resolve_config, resolve_cost, resolve_model, run_training,
    simulate_batches, synthetic_for, ExecutionPlan, PlanOptions, Technique, Techniques,
    TrainRunConfig,
};
use mptrain::scheduler::{
    build_subgraphs, schedule_dp, simulate_makespan, topo_order, OpProfile, ProfileSet, SwitchCost,
};
use mptrain::translator::{load_intermediate, serialize_intermediate, translate, TrainGraph};
use mptrain::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mptrain",
    version,
    about = "Mixed-precision INT8 training runtime"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Translate a model into an intermediate training graph.
    Translate(Common),
    /// Place operators on CPU and accelerator and report the schedule.
    Schedule(Common),
    /// Train on synthetic or IDX data.
    Train(TrainArgs),
    /// Simulate per-batch latency, with an ablation over the techniques.
    Bench(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Model TOML, intermediate `.mpim` file, or `toy_cnn` / `vgg_like`.
    #[arg(long, default_value = "toy_cnn")]
    model: String,
    /// Training config TOML, or `niti` / `fp32_update`.
    #[arg(long, default_value = "niti")]
    algo_config: String,
    /// Cost-model CSV, or a per-op profile CSV for `schedule`.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long, default_value_t = 25.0)]
    switch_ms: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Technique to turn off; repeatable.
    #[arg(long, value_parser = parse_technique)]
    disable: Vec<Technique>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1)]
    epochs: u64,
    #[arg(long)]
    budget_bytes: Option<u64>,
    /// IDX image file; needs `--idx-labels`.
    #[arg(long, requires = "idx_labels")]
    idx_images: Option<PathBuf>,
    #[arg(long)]
    idx_labels: Option<PathBuf>,
    /// Synthetic samples when no IDX data is given.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
}

fn parse_technique(s: &str) -> std::result::Result<Technique, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_graph(c: &Common) -> Result<TrainGraph> {
    if Path::new(&c.model).extension().is_some_and(|e| e == "mpim") {
        return load_intermediate(&fs::read(&c.model)?);
    }
    translate(&resolve_model(&c.model)?, &resolve_config(&c.algo_config)?)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => writeln!(std::io::stdout(), "{text}")?,
    }
    Ok(())
}

fn plan_options(c: &Common) -> Result<PlanOptions> {
    let mut o = PlanOptions::new(c.batch);
    o.switch = SwitchCost::new(c.switch_ms)?;
    o.techniques = Techniques::without(&c.disable);
    Ok(o)
}

fn cmd_translate(c: &Common) -> Result<()> {
    let g = load_graph(c)?;
    let bytes = serialize_intermediate(&g);
    match &c.out {
        Some(p) => fs::write(p, &bytes)?,
        None => {
            return Err(Error::InvalidArgument("translate needs --out".into()));
        }
    }
    log::info!("{} nodes, {} parameters", g.nodes.len(), g.params.len());
    Ok(())
}

fn cmd_schedule(c: &Common) -> Result<()> {
    let g = load_graph(c)?;
    let switch = SwitchCost::new(c.switch_ms)?;
    let order = topo_order(&g.dag())?;
    let per_op = match &c.profile {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            text.starts_with("op_id")
                .then(|| ProfileSet::read_csv(text.as_bytes()))
                .transpose()?
        }
        None => None,
    };
    let profiles = match per_op {
        Some(p) => p,
        None => {
            let cost = resolve_cost(c.profile.as_deref())?;
            let mut set = ProfileSet::new();
            for n in &g.nodes {
                let (cpu, dsp) = cost.node_latency(n, c.batch);
                set.insert(OpProfile {
                    op_id: n.id,
                    latency_cpu_ms: cpu,
                    latency_dsp_ms: dsp,
                    flops: n.flops(c.batch),
                })?;
            }
            set
        }
    };
    let schedule = schedule_dp(&order, &profiles, switch)?;
    let plan = build_subgraphs(&g.dag(), &schedule)?;
    let makespan = simulate_makespan(&plan, &profiles, switch)?;
    let mut report = schedule.report(Some(makespan));
    report["subgraphs"] = serde_json::json!(plan.len());
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    emit(c.out.as_deref(), &text)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let c = &a.common;
    let model = resolve_model(&c.model)?;
    let data = match (&a.idx_images, &a.idx_labels) {
        (Some(i), Some(l)) => load_idx_dataset(i, l, model.classes)?,
        _ => synthetic_for(&model, a.samples, c.seed)?,
    };
    let test_len = data.len() / 5;
    let (train, test) = data.split_at(data.len() - test_len)?;
    let mut cfg = TrainRunConfig::new(model, resolve_config(&c.algo_config)?);
    cfg.cost = resolve_cost(c.profile.as_deref())?;
    cfg.batch = c.batch;
    cfg.epochs = a.epochs;
    cfg.budget_bytes = a.budget_bytes;
    cfg.seed = c.seed;
    cfg.techniques = Techniques::without(&c.disable);
    cfg.switch = SwitchCost::new(c.switch_ms)?;
    cfg.out = c.out.clone();
    let out = run_training(&cfg, &train, (!test.is_empty()).then_some(&test))?;
    let text =
        serde_json::to_string_pretty(&out.summary).map_err(|e| Error::Format(e.to_string()))?;
    emit(None, &text)
}

fn cmd_bench(c: &Common) -> Result<()> {
    let g = load_graph(c)?;
    let cost = resolve_cost(c.profile.as_deref())?;
    let opts = plan_options(c)?;
    let plan = ExecutionPlan::prepare(&g, &cost, opts.clone())?;
    let run = simulate_batches(&g, &plan, 200, c.seed)?;
    let steps = ablation(&g, &cost, &opts, 200, c.seed)?;
    if let Some(p) = &c.out {
        // Per-op profile of the planned batch, in the scheduler's CSV schema.
        let mut set = ProfileSet::new();
        for n in &g.nodes {
            let (cpu, dsp) = plan.latencies[&n.id];
            set.insert(OpProfile {
                op_id: n.id,
                latency_cpu_ms: cpu,
                latency_dsp_ms: dsp,
                flops: n.flops(c.batch),
            })?;
        }
        set.write_csv(fs::File::create(p)?)?;
    }
    let report = serde_json::json!({
        "model": g.name,
        "batch": c.batch,
        "run": run,
        "ablation": steps.iter().map(|(l, ms)| serde_json::json!({"enabled": l, "mean_ms": ms})).collect::<Vec<_>>(),
    });
    emit(
        None,
        &serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?,
    )
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Translate(c) => cmd_translate(c),
        Cmd::Schedule(c) => cmd_schedule(c),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Bench(c) => cmd_bench(c),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
