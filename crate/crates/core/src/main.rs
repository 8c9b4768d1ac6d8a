use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use owcc::bounds::{cment_bound, err, global_bound, ment_bound, BoundKind, BoundsReport, CmentOptions, GlobalOptions};
use owcc::compression::{build_from_decomposition, compress_run, BuildOptions, CompressParams};
use owcc::decomposition::{decompose, verify_decomposition, DecomposeOptions, Decomposition};
use owcc::dist::{entropies, JointDistribution};
use owcc::experiment::{dproduct_sweep, fmt_num, rows_table, verify_suite, DproductConfig, Manifest, OutDir, Table, VerifyOptions};
use owcc::protocols::{adversary_game, exact_d_capped, DEFAULT_PARTITION_CAP};
use owcc::relations::{Family, Relation};
use owcc::{Error, Result};

#[derive(Parser)]
#[command(name = "owcc", version, about = "One-way communication complexity workbench")]
#[command(after_help = "Every command writes its tables and a manifest.json into --out (default out/<command>).")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Shapes, marginals, entropies and err of an instance.
    #[command(after_help = "info.csv: quantity,value")]
    Info(InfoArgs),
    /// err, ment and cment for one distribution, or maximized over distributions.
    #[command(after_help = "bounds.csv: quantity,value,mode\n\
        bounds.json holds the witnesses (alpha, answer map, maximizing distribution).")]
    Bounds(BoundsArgs),
    /// Exact distributional one-way complexity by partition search.
    #[command(after_help = "dcc.csv: eps,t_min,bits,error\nprotocol.json: the optimal protocol {t, msg, ans}.")]
    Dcc(DccArgs),
    /// Multiplicative-weights adversary against t-message protocols.
    #[command(after_help = "yao.csv: t,eps,rounds,eta,value,round,certified\nmu_star.json: the hardest distribution found.")]
    Yao(YaoArgs),
    /// Greedy one-way decomposition of a distribution, with its claim checks.
    #[command(after_help = "decompose.csv: i,p,q,support,r,budget,witness_value,relaxations\n\
        checks.csv: check,passed,worst,limit\n\
        decomposition.json: the decomposition, loadable by compress-run and build-protocol.")]
    Decompose(DecomposeArgs),
    /// Runs the compressed protocol with fresh public coins on sampled inputs.
    #[command(after_help = "transcript.csv: x,y,i_true,rank,bits,decoded,success,flag\n\
        (i_true and decoded are -1 when absent; success and flag are 0/1)\n\
        summary.csv: quantity,value")]
    CompressRun(CompressRunArgs),
    /// Fixes the public coins of the compressed protocol, keeping the best seed.
    #[command(after_help = "seeds.csv: seed,error\nbuild.csv: quantity,value\nprotocol.json: the best deterministic protocol.")]
    BuildProtocol(BuildArgs),
    /// Best success on tensor powers of a relation under message budgets.
    #[command(after_help = "dproduct.csv: k,t_per_copy,t,bits,success,success_root_k,single_power,status\n\
        t = t_per_copy^k; single_power = success(f, t_per_copy)^k; empty cells belong to skipped rows.")]
    Dproduct(DproductArgs),
    /// Runs every module invariant on a seeded corpus; exits 1 if any check fails.
    #[command(after_help = "checks.csv: check,module,count,failures,worst_margin,worst_instance\n\
        (a margin >= 0 passes; tolerances are included)\n\
        pipeline.csv: instance,eps,delta,cment,bits,error\n\
        verify.json: the full report.")]
    Verify(VerifyArgs),
}

#[derive(Args, Clone, Serialize)]
struct Common {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write whitespace-separated copies of the tables for gnuplot.
    #[arg(long)]
    columns: bool,
}

#[derive(Args, Clone, Serialize)]
struct Instance {
    /// Builtin relation (equality:N, greater-than:N, index:N,
    /// random-complete:NX,NY,NZ,SEED,DENSITY) or a relation JSON file.
    #[arg(long, default_value = "equality:3")]
    relation: String,
    /// `uniform`, `product:A/B` with comma-separated marginals, or a
    /// distribution JSON file.
    #[arg(long, default_value = "uniform")]
    dist: String,
    /// Mass tolerance when reading a distribution file; the table is renormalized.
    #[arg(long, default_value_t = owcc::TOL_MASS)]
    tol: f64,
}

#[derive(Args, Serialize)]
struct InfoArgs {
    #[command(flatten)]
    instance: Instance,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct BoundsArgs {
    #[command(flatten)]
    instance: Instance,
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Random starts for the cment search.
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    /// Maximize over input distributions instead of using --dist.
    #[arg(long)]
    global: bool,
    /// Random candidate distributions for --global.
    #[arg(long, default_value_t = 32)]
    samples: usize,
}

#[derive(Args, Serialize)]
struct DccArgs {
    #[command(flatten)]
    instance: Instance,
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Largest |X| the partition search accepts.
    #[arg(long, default_value_t = DEFAULT_PARTITION_CAP)]
    max_messages: usize,
}

#[derive(Args, Serialize)]
struct YaoArgs {
    #[command(flatten)]
    instance: Instance,
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    /// Message budget t of the protocols the adversary plays against.
    #[arg(long, default_value_t = 2)]
    max_messages: usize,
    #[arg(long, default_value_t = 500)]
    rounds: usize,
}

#[derive(Args, Serialize)]
struct DecomposeArgs {
    #[command(flatten)]
    instance: Instance,
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0.25)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Budget in bits; defaults to the cment bound.
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
}

#[derive(Args, Serialize)]
struct Pipeline {
    /// Decomposition JSON from `decompose`; otherwise one is computed.
    #[arg(long)]
    decomposition: Option<PathBuf>,
    #[arg(long, default_value_t = 0.25)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    /// Label width in bits; defaults to ceil(c) + ceil(log2(1/delta)) + 3.
    #[arg(long)]
    label_bits: Option<u32>,
}

#[derive(Args, Serialize)]
struct CompressRunArgs {
    #[command(flatten)]
    instance: Instance,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    pipeline: Pipeline,
    /// Number of trials.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
}

#[derive(Args, Serialize)]
struct BuildArgs {
    #[command(flatten)]
    instance: Instance,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    pipeline: Pipeline,
    /// Number of coin seeds tried.
    #[arg(long, default_value_t = 32)]
    samples: usize,
}

#[derive(Args, Serialize)]
struct DproductArgs {
    #[command(flatten)]
    instance: Instance,
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 3)]
    k_max: usize,
    /// Per-copy message budgets, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    budgets: Vec<usize>,
    /// Largest |X|^k the partition search accepts.
    #[arg(long, default_value_t = DEFAULT_PARTITION_CAP)]
    max_messages: usize,
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Random relations in the corpus; 0 runs only the named desk instances.
    #[arg(long, default_value_t = 20)]
    corpus: usize,
    /// Distributions per random relation.
    #[arg(long, default_value_t = 20)]
    dists: usize,
    /// Draws per sampler goodness-of-fit test.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_relation(spec: &str) -> Result<Relation> {
    if Path::new(spec).is_file() {
        return Relation::load(spec);
    }
    Family::parse(spec)?.build()
}

fn parse_marginal(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| Error::BadParams(format!("expected number, got {v:?}"))))
        .collect()
}

fn load_dist(spec: &str, f: &Relation, tol: f64) -> Result<JointDistribution> {
    if spec == "uniform" {
        return Ok(JointDistribution::uniform(f.nx(), f.ny()));
    }
    if let Some(rest) = spec.strip_prefix("product:") {
        let (a, b) = rest.split_once('/').ok_or_else(|| Error::BadParams("product needs A/B".into()))?;
        return JointDistribution::product(&parse_marginal(a)?, &parse_marginal(b)?);
    }
    #[derive(serde::Deserialize)]
    struct Raw {
        nx: usize,
        ny: usize,
        p: Vec<f64>,
    }
    let raw: Raw = serde_json::from_str(&std::fs::read_to_string(spec)?)?;
    let total: f64 = raw.p.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(Error::NotNormalized { sum: total, tol });
    }
    JointDistribution::from_weights(raw.nx, raw.ny, raw.p)
}

fn instance(i: &Instance) -> Result<(Relation, JointDistribution)> {
    let f = load_relation(&i.relation)?;
    let mu = load_dist(&i.dist, &f, i.tol)?;
    if f.nx() != mu.nx() || f.ny() != mu.ny() {
        return Err(Error::ShapeMismatch(format!("relation is {}x{}, distribution is {}x{}", f.nx(), f.ny(), mu.nx(), mu.ny())));
    }
    Ok((f, mu))
}

fn out_dir(common: &Common, command: &str) -> OutDir {
    OutDir::new(common.out.clone().unwrap_or_else(|| PathBuf::from("out").join(command)))
}

fn write_table(out: &mut OutDir, common: &Common, name: &str, table: &Table) -> Result<()> {
    out.write(&format!("{name}.csv"), &table.to_csv()?)?;
    if common.columns {
        out.write(&format!("{name}.dat"), table.to_columns().as_bytes())?;
    }
    Ok(())
}

fn kv_table(rows: &[(&str, String)]) -> Table {
    let mut t = Table::new(&["quantity", "value"]);
    for (k, v) in rows {
        t.push(vec![k.to_string(), v.clone()]);
    }
    t
}

fn print_table(t: &Table) {
    println!("{}", t.header.join(","));
    for r in &t.rows {
        println!("{}", r.join(","));
    }
}

fn finish<C: Serialize>(out: OutDir, command: &str, config: C) -> Result<()> {
    let root = out.root.clone();
    out.finish(Manifest::new(command, config))?;
    eprintln!("wrote {}", root.display());
    Ok(())
}

fn mode_name(r: &BoundsReport) -> String {
    serde_json::to_value(r.mode).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn decomposition_for(p: &Pipeline, f: &Relation, mu: &JointDistribution, seed: u64) -> Result<Decomposition> {
    match &p.decomposition {
        Some(path) => {
            let dec = Decomposition::load(path)?;
            if dec.base != *mu {
                eprintln!("note: using the base distribution stored in {}", path.display());
            }
            Ok(dec)
        }
        None => decompose(f, mu, p.eps, p.delta, &decompose_options(None, p.restarts, seed)),
    }
}

fn decompose_options(c: Option<f64>, restarts: usize, seed: u64) -> DecomposeOptions {
    DecomposeOptions { c, cment: CmentOptions { restarts, seed, ..Default::default() }, ..Default::default() }
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::Info(a) => {
            let (f, mu) = instance(&a.instance)?;
            let h = entropies(&mu);
            let e = err(&f, &mu)?;
            let complete = (0..f.nx()).all(|x| (0..f.ny()).all(|y| f.answers(x, y).iter().any(|&v| v)));
            let t = kv_table(&[
                ("nx", f.nx().to_string()),
                ("ny", f.ny().to_string()),
                ("nz", f.nz().to_string()),
                ("allowed", f.allowed_count().to_string()),
                ("complete", complete.to_string()),
                ("s_x", fmt_num(h.s_x)),
                ("s_y_given_x", fmt_num(h.s_y_given_x)),
                ("i_xy", fmt_num(h.i_xy)),
                ("err", fmt_num(e.value)),
            ]);
            print_table(&t);
            let mut out = out_dir(&a.common, "info");
            write_table(&mut out, &a.common, "info", &t)?;
            finish(out, "info", &a)?;
        }
        Command::Bounds(a) => {
            let f = load_relation(&a.instance.relation)?;
            let cment_opts = CmentOptions { restarts: a.restarts, seed: a.common.seed, ..Default::default() };
            let mut t = Table::new(&["quantity", "value", "mode"]);
            let mut reports = serde_json::Map::new();
            let mut push = |name: &str, r: BoundsReport| {
                t.push(vec![name.to_string(), fmt_num(r.value), mode_name(&r)]);
                reports.insert(name.to_string(), serde_json::to_value(r).expect("serializable"));
            };
            if a.global {
                let opts = GlobalOptions { budget: a.samples, seed: a.common.seed, cment: CmentOptions { grid_cap: 0, ..cment_opts }, ..Default::default() };
                push("global_ment", global_bound(&f, a.eps, None, BoundKind::Ment, &opts)?);
                push("global_cment", global_bound(&f, a.eps, Some(a.delta), BoundKind::Cment, &opts)?);
            } else {
                let (f, mu) = instance(&a.instance)?;
                push("err", err(&f, &mu)?);
                push("ment", ment_bound(&f, &mu, a.eps)?);
                push("cment", cment_bound(&f, &mu, a.eps, a.delta, &cment_opts)?);
            }
            print_table(&t);
            let mut out = out_dir(&a.common, "bounds");
            write_table(&mut out, &a.common, "bounds", &t)?;
            out.write_json("bounds.json", &reports)?;
            finish(out, "bounds", &a)?;
        }
        Command::Dcc(a) => {
            let (f, mu) = instance(&a.instance)?;
            let d = exact_d_capped(&f, &mu, a.eps, a.max_messages)?;
            let mut t = Table::new(&["eps", "t_min", "bits", "error"]);
            t.push(vec![fmt_num(a.eps), d.t_min.to_string(), d.bits.to_string(), fmt_num(d.error)]);
            print_table(&t);
            let mut out = out_dir(&a.common, "dcc");
            write_table(&mut out, &a.common, "dcc", &t)?;
            out.write("protocol.json", format!("{}\n", d.protocol.to_json()?).as_bytes())?;
            finish(out, "dcc", &a)?;
        }
        Command::Yao(a) => {
            let f = load_relation(&a.instance.relation)?;
            let r = adversary_game(&f, a.max_messages, a.eps, a.rounds, a.common.seed)?;
            let mut t = Table::new(&["t", "eps", "rounds", "eta", "value", "round", "certified"]);
            t.push(vec![
                a.max_messages.to_string(),
                fmt_num(a.eps),
                a.rounds.to_string(),
                fmt_num(r.eta),
                fmt_num(r.value),
                r.round.to_string(),
                r.certified.to_string(),
            ]);
            print_table(&t);
            let mut out = out_dir(&a.common, "yao");
            write_table(&mut out, &a.common, "yao", &t)?;
            out.write("mu_star.json", format!("{}\n", r.mu_star.to_json()?).as_bytes())?;
            finish(out, "yao", &a)?;
        }
        Command::Decompose(a) => {
            let (f, mu) = instance(&a.instance)?;
            let dec = decompose(&f, &mu, a.eps, a.delta, &decompose_options(a.budget, a.restarts, a.common.seed))?;
            let claim = verify_decomposition(&dec, &f);
            let mut t = Table::new(&["i", "p", "q", "support", "r", "budget", "witness_value", "relaxations"]);
            for (i, (c, s)) in dec.components.iter().zip(&dec.trace).enumerate() {
                t.push(vec![
                    i.to_string(),
                    fmt_num(c.p),
                    fmt_num(s.q),
                    s.support.to_string(),
                    fmt_num(s.r),
                    fmt_num(s.budget),
                    fmt_num(s.witness_value),
                    s.relaxations.to_string(),
                ]);
            }
            let mut checks = Table::new(&["check", "passed", "worst", "limit"]);
            for c in &claim.checks {
                checks.push(vec![c.name.to_string(), c.passed.to_string(), fmt_num(c.worst), fmt_num(c.limit)]);
            }
            print_table(&t);
            print_table(&checks);
            let mut out = out_dir(&a.common, "decompose");
            write_table(&mut out, &a.common, "decompose", &t)?;
            write_table(&mut out, &a.common, "checks", &checks)?;
            out.write("decomposition.json", format!("{}\n", dec.to_json()?).as_bytes())?;
            finish(out, "decompose", &a)?;
        }
        Command::CompressRun(a) => {
            let (f, mu) = instance(&a.instance)?;
            let dec = decomposition_for(&a.pipeline, &f, &mu, a.common.seed)?;
            let params = CompressParams { label_bits: a.pipeline.label_bits, ..Default::default() };
            let run = compress_run(&dec, &f, dec.delta, a.samples, a.common.seed, &params)?;
            let s = &run.summary;
            let t = kv_table(&[
                ("trials", s.trials.to_string()),
                ("error", fmt_num(s.error)),
                ("mean_bits", fmt_num(s.mean_bits)),
                ("max_bits", s.max_bits.to_string()),
                ("flag_rate", fmt_num(s.flag_rate)),
                ("tail_rate", fmt_num(s.tail_rate)),
                ("mismatch_rate", fmt_num(s.mismatch_rate)),
                ("horizon", s.horizon.to_string()),
                ("label_bits", s.label_bits.to_string()),
                ("c", fmt_num(dec.c)),
                ("k", dec.k().to_string()),
            ]);
            print_table(&t);
            let mut out = out_dir(&a.common, "compress-run");
            let mut csv = Vec::new();
            run.write_csv(&mut csv)?;
            out.write("transcript.csv", &csv)?;
            write_table(&mut out, &a.common, "summary", &t)?;
            finish(out, "compress-run", &a)?;
        }
        Command::BuildProtocol(a) => {
            let (f, mu) = instance(&a.instance)?;
            let dec = decomposition_for(&a.pipeline, &f, &mu, a.common.seed)?;
            let opts = BuildOptions {
                n_seeds: a.samples,
                seed: a.common.seed,
                params: CompressParams { label_bits: a.pipeline.label_bits, ..Default::default() },
                ..Default::default()
            };
            let built = build_from_decomposition(&dec, &f, dec.delta, &opts)?;
            let mut seeds = Table::new(&["seed", "error"]);
            for (s, e) in built.seed_errors.iter().enumerate() {
                seeds.push(vec![a.common.seed.wrapping_add(s as u64).to_string(), fmt_num(*e)]);
            }
            let t = kv_table(&[
                ("eps", fmt_num(dec.eps)),
                ("delta", fmt_num(dec.delta)),
                ("c", fmt_num(built.c)),
                ("k", built.k.to_string()),
                ("bits", built.best.bits.to_string()),
                ("label_bits", built.best.label_bits.to_string()),
                ("horizon", built.best.horizon.to_string()),
                ("best_seed", built.best.seed.to_string()),
                ("error", fmt_num(built.best.error)),
                ("mean_error", fmt_num(built.mean_error)),
                ("error_limit", fmt_num(dec.eps + 4.0 * dec.delta)),
            ]);
            print_table(&t);
            let mut out = out_dir(&a.common, "build-protocol");
            write_table(&mut out, &a.common, "build", &t)?;
            write_table(&mut out, &a.common, "seeds", &seeds)?;
            out.write("protocol.json", format!("{}\n", built.best.protocol.to_json()?).as_bytes())?;
            finish(out, "build-protocol", &a)?;
        }
        Command::Dproduct(a) => {
            let (f, mu) = instance(&a.instance)?;
            let mut cfg = DproductConfig::new(f, mu, a.k_max, a.budgets.clone());
            cfg.partition_cap = a.max_messages;
            let rows = dproduct_sweep(&cfg)?;
            let t = rows_table(&rows);
            print_table(&t);
            let mut out = out_dir(&a.common, "dproduct");
            write_table(&mut out, &a.common, "dproduct", &t)?;
            finish(out, "dproduct", &a)?;
        }
        Command::Verify(a) => {
            let opts = VerifyOptions { seed: a.common.seed, relations: a.corpus, dists: a.dists, chi_square_draws: a.samples, ..Default::default() };
            let report = verify_suite(&opts);
            let mut t = Table::new(&["check", "module", "count", "failures", "worst_margin", "worst_instance"]);
            for c in &report.checks {
                t.push(vec![
                    c.name.clone(),
                    c.module.clone(),
                    c.count.to_string(),
                    c.failures.to_string(),
                    c.worst_margin.map_or_else(String::new, fmt_num),
                    c.worst_instance.clone().unwrap_or_default(),
                ]);
            }
            let mut p = Table::new(&["instance", "eps", "delta", "cment", "bits", "error"]);
            for r in &report.pipeline.rows {
                p.push(vec![r.instance.clone(), fmt_num(r.eps), fmt_num(r.delta), fmt_num(r.cment), r.bits.to_string(), fmt_num(r.error)]);
            }
            for c in &report.checks {
                let verdict = if c.failures == 0 { "PASS" } else { "FAIL" };
                println!("{verdict} {} ({} of {} failed)", c.name, c.failures, c.count);
            }
            println!("{} of {} checks failed", report.failed_checks, report.checks.len());
            let mut out = out_dir(&a.common, "verify");
            write_table(&mut out, &a.common, "checks", &t)?;
            write_table(&mut out, &a.common, "pipeline", &p)?;
            out.write_json("verify.json", &report)?;
            finish(out, "verify", &a)?;
            return Ok(report.passed);
        }
    }
    Ok(true)
}
