//! Subcommand implementations. Every command returns `Result<()>`; the
//! caller maps error variants onto process exit codes.

use crate::config::{BenchConfig, ExperimentConfig, Method};
use crate::manifest::write_manifest;
use crate::{BenchArgs, DistanceArgs, EvalArgs, GradCheckArgs, Scope, TrainArgs};
use ndarray::Array2;
use rots_core::align::{d_gak, dtw_distance, gak_exact, prop1_gap, GakParams, Norm};
use rots_core::attacks::{
    adv_train, eval_robust_accuracy, sgd_train, stn_train, AttackKind, AttackSpec, EvalRow,
    EvalTable,
};
use rots_core::checkpoint::{load_checkpoint, restore_model, save_checkpoint};
use rots_core::data::Dataset;
use rots_core::gradcheck::{
    suite_log_gak, suite_net, suite_path_cost, suite_plbench_h, suite_rots_dual, suite_stn,
    SuiteReport, FD_TOL,
};
use rots_core::net::{accuracy, init_model, ArchSpec, Model};
use rots_core::plbench::run_bench;
use rots_core::rots::rots_train;
use rots_core::scagda::ScagdaParams;
use rots_core::trace::SolveTrace;
use rots_core::{CoreError, Result};
use std::path::{Path, PathBuf};

fn init_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CoreError::State(format!("thread pool: {e}")))
}

fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| CoreError::io(out.display().to_string(), e))
}

fn resolve_out(flag: Option<PathBuf>, cfg: Option<PathBuf>, fallback: &str) -> PathBuf {
    flag.or(cfg).unwrap_or_else(|| PathBuf::from(fallback))
}

fn kind_name(kind: AttackKind) -> &'static str {
    match kind {
        AttackKind::Fgs => "fgs",
        AttackKind::Pgd => "pgd",
        AttackKind::Gaussian => "gaussian",
    }
}

fn parse_arch(cfg: &ExperimentConfig, ds: &Dataset) -> Result<ArchSpec> {
    ArchSpec::parse(&cfg.arch, ds.channels(), ds.len_t(), ds.num_classes)
}

fn train_samples(ds: &Dataset) -> Vec<(Array2<f64>, usize)> {
    ds.samples
        .iter()
        .map(|s| (s.values.clone(), s.label))
        .collect()
}

/// One training run for one seed; returns the model, its trace, and the
/// iteration count that goes into the checkpoint.
fn train_once(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    model: Model,
    seed: u64,
) -> Result<(Model, SolveTrace, usize)> {
    match cfg.method {
        Method::Clean => {
            let tb = cfg.train.unwrap_or_default();
            let (m, trace) = sgd_train(ds, model, tb.eta, tb.s, tb.k, seed)?;
            Ok((m, trace, tb.k))
        }
        Method::Rots => {
            let mut hyper = cfg.rots.clone().unwrap_or_default();
            hyper.seed = seed;
            let (m, _, trace) = rots_train(ds, model, &hyper)?;
            Ok((m, trace, hyper.k))
        }
        Method::AdvFgs | Method::AdvPgd => {
            let kind = if cfg.method == Method::AdvFgs {
                AttackKind::Fgs
            } else {
                AttackKind::Pgd
            };
            let mut attack = cfg.attack.unwrap_or_else(|| AttackSpec::new(kind));
            attack.seed = seed;
            let adv = cfg.adv.unwrap_or_default();
            let (m, trace) = adv_train(
                ds,
                model,
                &attack,
                adv.epochs,
                adv.batch_size,
                adv.optimizer,
                seed,
            )?;
            Ok((m, trace, adv.epochs))
        }
        Method::Stn => {
            let sb = cfg.stn.unwrap_or_default();
            let (m, trace) = stn_train(
                ds,
                model,
                sb.sigma,
                sb.kl_weight,
                sb.epochs,
                sb.batch_size,
                sb.eta,
                seed,
            )?;
            Ok((m, trace, sb.epochs))
        }
    }
}

pub fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(threads) = args.threads {
        cfg.threads = threads;
    }
    cfg.out = args.out.or(cfg.out);
    cfg.validate()?;
    init_threads(cfg.threads)?;

    let out = resolve_out(None, cfg.out.clone(), "runs/train");
    ensure_out_dir(&out)?;
    write_manifest(&out, "train", &cfg, &cfg.seeds)?;

    let ds = cfg.dataset.load()?;
    let arch = parse_arch(&cfg, &ds)?;
    let hyper_echo = serde_json::json!({
        "method": cfg.method.to_string(),
        "rots": cfg.rots,
        "train": cfg.train,
        "attack": cfg.attack,
        "adv": cfg.adv,
        "stn": cfg.stn,
    });
    for &seed in &cfg.seeds {
        let model = init_model(&arch, seed)?;
        let trace_path = out.join(format!("trace_seed{seed}.csv"));
        let (trained, trace, iterations) = match train_once(&cfg, &ds, model, seed) {
            Ok(v) => v,
            Err(CoreError::Diverged { iteration, trace }) => {
                trace.write_csv(&trace_path)?;
                eprintln!(
                    "seed {seed}: diverged at iteration {iteration}; partial trace saved to {}",
                    trace_path.display()
                );
                return Err(CoreError::Diverged { iteration, trace });
            }
            Err(e) => return Err(e),
        };
        trace.write_csv(&trace_path)?;
        let ck_path = out.join(format!("model_seed{seed}.json"));
        save_checkpoint(&ck_path, &trained, &hyper_echo, iterations)?;
        let acc = accuracy(&trained, &train_samples(&ds))?;
        println!(
            "seed {seed}: {} rows -> {}, train accuracy {acc:.4}",
            trace.rows.len(),
            trace_path.display()
        );
    }
    Ok(())
}

pub fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.run.config)?;
    if let Some(seed) = args.run.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(threads) = args.run.threads {
        cfg.threads = threads;
    }
    cfg.out = args.run.out.or(cfg.out);
    cfg.validate()?;
    init_threads(cfg.threads)?;

    let ck = load_checkpoint(&args.checkpoint)?;
    let model = restore_model(&ck)?;
    let ds = cfg.dataset.load()?;
    if !cfg.arch.is_empty() && cfg.arch != ck.arch {
        return Err(CoreError::Shape(format!(
            "checkpoint arch {:?} does not match config arch {:?}",
            ck.arch, cfg.arch
        )));
    }
    if model.arch.in_channels != ds.channels()
        || model.arch.in_len != ds.len_t()
        || model.arch.num_classes != ds.num_classes
    {
        return Err(CoreError::Shape(format!(
            "checkpoint expects {}x{} inputs with {} classes; dataset is {}x{} with {}",
            model.arch.in_channels,
            model.arch.in_len,
            model.arch.num_classes,
            ds.channels(),
            ds.len_t(),
            ds.num_classes
        )));
    }

    let out = resolve_out(None, cfg.out.clone(), "runs/eval");
    ensure_out_dir(&out)?;
    write_manifest(&out, "eval", &cfg, &cfg.seeds)?;

    let eval = cfg.eval.clone().unwrap_or_default();
    for &kind in &eval.kinds {
        let mut spec = AttackSpec::new(kind);
        spec.steps = eval.steps;
        spec.alpha = eval.alpha;
        // Aggregate over seeds: mean of means, envelope of min/max.
        let mut merged: Vec<EvalRow> = Vec::new();
        for (si, &seed) in cfg.seeds.iter().enumerate() {
            let table = eval_robust_accuracy(&model, &ds, &spec, &eval.levels, eval.repeats, seed)?;
            if si == 0 {
                merged = table.rows;
            } else {
                for (m, r) in merged.iter_mut().zip(&table.rows) {
                    m.mean_acc += r.mean_acc;
                    m.min_acc = m.min_acc.min(r.min_acc);
                    m.max_acc = m.max_acc.max(r.max_acc);
                }
            }
        }
        for m in &mut merged {
            m.mean_acc /= cfg.seeds.len() as f64;
        }
        let table = EvalTable { rows: merged };
        let path = out.join(format!("eval_{}.csv", kind_name(kind)));
        std::fs::write(&path, table.to_csv())
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        println!("{}:", path.display());
        print!("{}", table.to_csv());
    }
    Ok(())
}

/// Parse a series file: each non-empty, non-`#` line is one channel; values
/// are separated by commas or whitespace.
fn read_series(path: &Path) -> Result<Array2<f64>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut vals = Vec::new();
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()) {
            if tok.is_empty() {
                continue;
            }
            vals.push(tok.parse::<f64>().map_err(|_| CoreError::Parse {
                line: ln + 1,
                msg: format!("{}: not a number: {tok:?}", path.display()),
            })?);
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(CoreError::Parse {
            line: 1,
            msg: format!("{}: no series data", path.display()),
        });
    }
    let t = rows[0].len();
    if t == 0 || rows.iter().any(|r| r.len() != t) {
        return Err(CoreError::Shape(format!(
            "{}: channels must be nonempty and equal-length",
            path.display()
        )));
    }
    Ok(Array2::from_shape_fn((rows.len(), t), |(c, i)| rows[c][i]))
}

pub fn cmd_distance(args: DistanceArgs) -> Result<()> {
    let x = read_series(&args.a)?;
    let y = read_series(&args.b)?;
    let p = Norm::parse(&args.p)?;
    let params = GakParams::new(args.nu, p)?.with_band(args.band)?;
    let (dtw, _) = dtw_distance(&x, &y, p, params.band)?;
    let k_gak = gak_exact(&x, &y, &params)?;
    let d = d_gak(&x, &y, &params)?;
    let (gap, bound) = if args.prop1 {
        let rep = prop1_gap(&x, &y, &params)?;
        (rep.gap.to_string(), rep.bound.to_string())
    } else {
        (String::new(), String::new())
    };
    println!("dtw,k_gak,d_gak,prop1_gap,prop1_bound");
    println!("{dtw},{k_gak},{d},{gap},{bound}");
    Ok(())
}

pub fn cmd_bench_pl(args: BenchArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => BenchConfig::load(path)?,
        None => BenchConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(threads) = args.threads {
        cfg.threads = threads;
    }
    cfg.out = args.out.or(cfg.out);
    cfg.validate()?;
    init_threads(cfg.threads)?;

    let out = resolve_out(None, cfg.out.clone(), "runs/bench-pl");
    ensure_out_dir(&out)?;
    write_manifest(&out, "bench-pl", &cfg, &cfg.seeds)?;

    for &seed in &cfg.seeds {
        let mut params = ScagdaParams::new(cfg.eta, cfg.gamma, cfg.beta, cfg.k, seed);
        params.trace_every = cfg.trace_every;
        let trace_path = out.join(format!("bench_trace_seed{seed}.csv"));
        let report = match run_bench(&cfg.problem, &params, seed) {
            Ok(r) => r,
            Err(CoreError::Diverged { iteration, trace }) => {
                trace.write_csv(&trace_path)?;
                eprintln!(
                    "seed {seed}: diverged at iteration {iteration}; partial trace saved to {}",
                    trace_path.display()
                );
                return Err(CoreError::Diverged { iteration, trace });
            }
            Err(e) => return Err(e),
        };
        report.trace.write_csv(&trace_path)?;
        let summary_path = out.join(format!("bench_summary_seed{seed}.csv"));
        std::fs::write(&summary_path, report.summary_csv())
            .map_err(|e| CoreError::io(summary_path.display().to_string(), e))?;
        println!(
            "seed {seed}: P*={:.6} final_gap={:.3e} final_ma_error={:.3e} -> {}",
            report.p_star,
            report.final_gap,
            report.final_ma_error,
            summary_path.display()
        );
    }
    Ok(())
}

pub fn cmd_grad_check(args: GradCheckArgs) -> Result<()> {
    let scopes = match args.scope {
        Some(s) => vec![s],
        None => vec![Scope::Dpi, Scope::Gak, Scope::Net, Scope::Rots],
    };
    let mut any_failed = false;
    for scope in scopes {
        let reports: Vec<SuiteReport> = match scope {
            Scope::Dpi => vec![suite_path_cost(args.trials, args.seed)?],
            Scope::Gak => vec![suite_log_gak(args.trials, args.seed)?],
            Scope::Net => vec![
                suite_net(args.trials, args.seed)?,
                suite_stn(args.trials, args.seed)?,
            ],
            Scope::Rots => vec![
                suite_rots_dual(args.trials, args.seed)?,
                suite_plbench_h(args.trials, args.seed)?,
            ],
        };
        let max = reports
            .iter()
            .map(|r| r.max_rel_err)
            .fold(0.0f64, f64::max);
        let ok = reports.iter().all(|r| r.passed());
        println!(
            "{}: max_rel_err={max:.3e} tol={FD_TOL:.0e} {}",
            scope.name(),
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            any_failed = true;
        }
    }
    if any_failed {
        return Err(CoreError::Numeric(
            "a gradient check exceeded the finite-difference tolerance".into(),
        ));
    }
    Ok(())
}
