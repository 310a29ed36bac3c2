use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::CommandFactory;
use gridgauss::conditioning::{conditional_mean, conditional_sample, CgOptions, Conditioning, PixelMask};
use gridgauss::distribution::{apply_activation, visualize_covariance_row, Activation, RowSolver, COVARIANCE_RENDER_CLIP};
use gridgauss::fitting::{fit, nll, FitConfig, Init};
use gridgauss::io::{load_model, read_stack, save_model, write_pgm, GridStack, ModelPaths};
use gridgauss::linops::JacobiOptions;
use gridgauss::metrics::{
    depth_metrics, fraction_grid, sparsification_curves, EvalPair, Metric, DEFAULT_MAX_FRACTION,
};
use gridgauss::scaling::{sampling_scaling, ScalingConfig};
use gridgauss::synth::{generate, random_model, RandomModelSpec, SynthKind, SynthSpec};
use gridgauss::{Error, GridMap, SparsityPattern, StructuredGaussian};
use serde::Serialize;
use serde_json::json;

use crate::output::{emit_json, tagged, write_stack};
use crate::{
    BenchArgs, Cli, Command, Common, ConditionArgs, EvalArgs, FitArgs, InitArg, IntrospectArgs, LogprobArgs,
    OracleCheckArgs, Render, RenderMode, SampleArgs, SynthArgs, SynthKindArg,
};

pub const SCHEMA_VERSION: u32 = 1;

pub fn run(cli: &Cli) -> Result<ExitCode> {
    let c = &cli.common;
    match &cli.command {
        Command::Fit(a) => fit_cmd(c, a),
        Command::Sample(a) => sample_cmd(c, a),
        Command::Condition(a) => condition_cmd(c, a),
        Command::Logprob(a) => logprob_cmd(a),
        Command::Introspect(a) => introspect_cmd(c, a),
        Command::Synth(a) => synth_cmd(c, a),
        Command::Eval(a) => eval_cmd(a),
        Command::OracleCheck(a) => oracle_check_cmd(a),
        Command::Bench(a) => bench_cmd(c, a),
    }
}

/// JSON body printed to stderr when a command fails.
pub fn diagnostic(err: &anyhow::Error) -> serde_json::Value {
    let mut d = json!({
        "schema_version": SCHEMA_VERSION,
        "status": "error",
        "kind": "other",
        "message": format!("{err:#}"),
    });
    if let Some(e) = err.downcast_ref::<Error>() {
        let kind = match e {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NumericalDomain(_) => "numerical_domain",
            Error::NotConverged { .. } => "not_converged",
            Error::FitDiverged { .. } => "fit_diverged",
            Error::Capacity { .. } => "capacity",
            Error::Degenerate(_) => "degenerate",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        };
        d["kind"] = json!(kind);
        match e {
            Error::NotConverged { iterations, residual } => {
                d["iterations"] = json!(iterations);
                d["residual"] = json!(residual);
            }
            Error::FitDiverged { iteration, trace } => {
                d["iteration"] = json!(iteration);
                d["trace"] = json!(trace);
            }
            _ => {}
        }
    }
    d
}

/// `--out` is needed here; a missing one is a usage error (exit 2).
fn require_out(c: &Common, what: &str) -> PathBuf {
    match &c.out {
        Some(p) => p.clone(),
        None => Cli::command()
            .error(clap::error::ErrorKind::MissingRequiredArgument, format!("--out is required for {what}"))
            .exit(),
    }
}

fn summary(outputs: &[PathBuf]) -> serde_json::Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "status": "ok",
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    })
}

fn load(prefix: &Path) -> Result<StructuredGaussian> {
    load_model(prefix).with_context(|| format!("cannot load model {}", prefix.display()))
}

fn read(path: &Path) -> Result<GridStack> {
    read_stack(path).with_context(|| format!("cannot read {}", path.display()))
}

fn fit_cmd(c: &Common, a: &FitArgs) -> Result<ExitCode> {
    let out = require_out(c, "fit (model prefix)");
    let bundle = read(&a.samples)?.into_bundle()?;
    let cfg = FitConfig {
        max_iterations: a.max_iters,
        learning_rate: a.lr,
        convergence_tol: a.tol,
        init: match a.init {
            InitArg::Identity => Init::Identity,
            InitArg::SmallOffdiag => Init::SmallOffdiag,
        },
        scaled_parameterization: a.scaled,
        fit_mean: !a.fixed_mean,
        diagonal_only: a.diagonal_only,
        variance_floor: (a.variance_floor > 0.0).then_some(a.variance_floor),
    };
    let pattern = SparsityPattern::canonical(a.radius as usize)?;
    let (g, report) = fit(&bundle, &pattern, &cfg, c.seed)?;
    save_model(&out, &g, c.precision.dtype())?;
    emit_json(a.report.as_deref(), &report)?;
    if let Some(r) = &a.report {
        let p = ModelPaths::new(&out);
        println!("{}", summary(&[p.mean, p.chol, p.sidecar, r.clone()]));
    }
    Ok(ExitCode::SUCCESS)
}

fn sample_cmd(c: &Common, a: &SampleArgs) -> Result<ExitCode> {
    let out = require_out(c, "sample");
    let g = load(&a.model)?;
    let mut b = g.sample(a.count, c.seed, JacobiOptions::fixed(a.jacobi_iters))?;
    if let Some((lo, hi)) = a.sigmoid {
        b = apply_activation(&b, Activation::scaled_sigmoid(lo, hi)?)?;
    }
    let written = write_stack(&out, &GridStack::from(&b), c.format, c.precision)?;
    println!("{}", summary(&written));
    Ok(ExitCode::SUCCESS)
}

fn condition_cmd(c: &Common, a: &ConditionArgs) -> Result<ExitCode> {
    let out = require_out(c, "condition");
    let g = load(&a.model)?;
    let mask = read(&a.mask)?;
    let values = read(&a.values)?;
    if mask.shape != g.shape() || values.shape != g.shape() || mask.channels != 1 || values.channels != 1 {
        bail!(Error::InvalidArgument(format!("mask and values must be single {} maps", g.shape())));
    }
    let known = mask.values.iter().map(|&v| v != 0.0).collect();
    let cond = Conditioning::new(PixelMask::new(g.shape(), known)?, values.values)?;
    let cg = CgOptions { tolerance: a.cg_tol, ..CgOptions::default() };
    let stack = if a.mean_only {
        let m = conditional_mean(&g, &cond, cg)?;
        GridStack::new(m.shape(), 1, m.into_values())?
    } else {
        GridStack::from(&conditional_sample(&g, &cond, a.count, c.seed, JacobiOptions::fixed(a.jacobi_iters), cg)?)
    };
    let written = write_stack(&out, &stack, c.format, c.precision)?;
    println!("{}", summary(&written));
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct LogprobReport {
    schema_version: u32,
    count: usize,
    log_density: Vec<f64>,
    total_log_density: f64,
    nll: f64,
}

fn logprob_cmd(a: &LogprobArgs) -> Result<ExitCode> {
    let g = load(&a.model)?;
    let b = read(&a.samples)?.into_bundle()?;
    let per = g.log_density_per_sample(&b)?;
    let report = LogprobReport {
        schema_version: SCHEMA_VERSION,
        count: b.count(),
        total_log_density: per.iter().sum(),
        log_density: per,
        nll: nll(&g, &b)?,
    };
    emit_json(a.report.as_deref(), &report)?;
    Ok(ExitCode::SUCCESS)
}

fn introspect_cmd(c: &Common, a: &IntrospectArgs) -> Result<ExitCode> {
    let out = require_out(c, "introspect");
    let g = load(&a.model)?;
    let shape = g.shape();
    let (y, x) = a.pixel;
    if y >= shape.height() || x >= shape.width() {
        bail!(Error::InvalidArgument(format!("pixel {y},{x} is outside the {shape} grid")));
    }
    let solver = match a.jacobi_iters {
        Some(j) => RowSolver::Jacobi(JacobiOptions::fixed(j)),
        None => RowSolver::Exact,
    };
    let row = g.covariance_row(shape.index(y, x), solver)?;
    let written = match a.render {
        Render::Raw => write_stack(&out, &GridStack::new(shape, 1, row.into_values())?, c.format, c.precision)?,
        Render::Pgm => render_row(&out, &visualize_covariance_row(&row), a.mode)?,
    };
    println!("{}", summary(&written));
    Ok(ExitCode::SUCCESS)
}

/// Signed mode maps `[-clip, clip]` onto `[0, 255]`; split mode writes
/// `.pos` and `.neg` images mapping `[0, clip]` onto `[0, 255]`.
fn render_row(out: &Path, v: &GridMap, mode: RenderMode) -> Result<Vec<PathBuf>> {
    let clip = COVARIANCE_RENDER_CLIP;
    let write = |path: &Path, values: &[f64], lo: f64| -> Result<()> {
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
        write_pgm(&mut w, v.shape(), values, lo, clip)?;
        w.flush()?;
        Ok(())
    };
    match mode {
        RenderMode::Signed => {
            write(out, v.values(), -clip)?;
            Ok(vec![out.to_path_buf()])
        }
        RenderMode::Split => {
            let pos: Vec<f64> = v.values().iter().map(|x| x.max(0.0)).collect();
            let neg: Vec<f64> = v.values().iter().map(|x| (-x).max(0.0)).collect();
            let (pp, np) = (tagged(out, "pos"), tagged(out, "neg"));
            write(&pp, &pos, 0.0)?;
            write(&np, &neg, 0.0)?;
            Ok(vec![pp, np])
        }
    }
}

fn synth_cmd(c: &Common, a: &SynthArgs) -> Result<ExitCode> {
    let out = require_out(c, "synth");
    let given = a.model.as_deref().map(load).transpose()?;
    let shape = match (&given, a.shape) {
        (Some(g), Some(s)) if g.shape() != s => {
            bail!(Error::InvalidArgument(format!("--shape {s} does not match the model's {}", g.shape())))
        }
        (Some(g), _) => g.shape(),
        (None, Some(s)) => s,
        (None, None) => bail!(Error::InvalidArgument("--shape is required without --model".into())),
    };
    let n = shape.len();
    let kind = match a.kind {
        SynthKindArg::GroundTruth => SynthKind::GroundTruth(match given {
            Some(g) => g,
            None => random_model(shape, &SparsityPattern::canonical(a.radius)?, RandomModelSpec::default(), c.seed),
        }),
        SynthKindArg::SmoothField => SynthKind::SmoothField { length_scale: a.length_scale, amplitude: a.amplitude },
        SynthKindArg::DiagonalNoise => SynthKind::DiagonalNoise { mean: vec![a.mean; n], std: vec![a.std; n] },
    };
    let (bundle, model) = generate(&SynthSpec { kind, shape, count: a.count, seed: c.seed })?;
    let mut written = write_stack(&out, &GridStack::from(&bundle), c.format, c.precision)?;
    if let Some(prefix) = &a.model_out {
        let Some(g) = model else {
            bail!(Error::InvalidArgument("this kind has no generating model to save".into()));
        };
        save_model(prefix, &g, c.precision.dtype())?;
        let p = ModelPaths::new(prefix);
        written.extend([p.mean, p.chol, p.sidecar]);
    }
    println!("{}", summary(&written));
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SparsificationRow {
    metric: &'static str,
    ause: f64,
    aurg: f64,
}

#[derive(Serialize)]
struct EvalRow {
    pair: usize,
    absrel: f64,
    rmse: f64,
    a1: f64,
    sparsification: Vec<SparsificationRow>,
}

fn eval_cmd(a: &EvalArgs) -> Result<ExitCode> {
    let pred = read(&a.pred)?;
    let gt = read(&a.gt)?;
    let unc = read(&a.uncertainty)?;
    let valid = a.valid.as_deref().map(read).transpose()?;
    let shape = pred.shape;
    for s in [&gt, &unc].into_iter().chain(valid.as_ref()) {
        if s.shape != shape || (s.channels != 1 && s.channels != pred.channels) {
            bail!(Error::InvalidArgument(
                "maps must share the prediction shape and have one channel or one per prediction".into()
            ));
        }
    }
    let pick = |s: &GridStack, k: usize| s.channel(if s.channels == 1 { 0 } else { k }).to_vec();
    let fractions = fraction_grid(a.steps, DEFAULT_MAX_FRACTION)?;
    let mut rows = Vec::with_capacity(pred.channels);
    for k in 0..pred.channels {
        let pair = EvalPair::new(
            &GridMap::new(shape, pred.channel(k).to_vec())?,
            &GridMap::new(shape, pick(&gt, k))?,
            &GridMap::new(shape, pick(&unc, k))?,
            valid.as_ref().map(|v| pick(v, k).iter().map(|&x| x != 0.0).collect()),
        )?;
        let m = depth_metrics(&pair)?;
        let sparsification = Metric::ALL
            .iter()
            .map(|&metric| {
                let r = sparsification_curves(&pair, metric, &fractions)?;
                Ok(SparsificationRow { metric: metric.name(), ause: r.ause, aurg: r.aurg })
            })
            .collect::<gridgauss::Result<Vec<_>>>()?;
        rows.push(EvalRow { pair: k, absrel: m.absrel, rmse: m.rmse, a1: m.a1, sparsification });
    }
    emit_json(a.report.as_deref(), &json!({ "schema_version": SCHEMA_VERSION, "rows": rows }))?;
    if let Some(path) = &a.summary {
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
        writeln!(w, "metric,value,ause,aurg")?;
        let count = rows.len() as f64;
        for (i, metric) in Metric::ALL.iter().enumerate() {
            let value: f64 = rows
                .iter()
                .map(|r| match metric {
                    Metric::AbsRel => r.absrel,
                    Metric::Rmse => r.rmse,
                    Metric::A1 => r.a1,
                })
                .sum::<f64>()
                / count;
            let ause = rows.iter().map(|r| r.sparsification[i].ause).sum::<f64>() / count;
            let aurg = rows.iter().map(|r| r.sparsification[i].aurg).sum::<f64>() / count;
            writeln!(w, "{},{value},{ause},{aurg}", metric.name())?;
        }
        w.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn oracle_check_cmd(a: &OracleCheckArgs) -> Result<ExitCode> {
    let report = gridgauss::crosscheck::run(a.seeds, a.max_size)?;
    emit_json(a.report.as_deref(), &report)?;
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn bench_cmd(c: &Common, a: &BenchArgs) -> Result<ExitCode> {
    let cfg = ScalingConfig {
        sizes: a.sizes.clone(),
        radius: a.radius,
        iterations: a.jacobi_iters,
        samples: a.samples,
        repeats: a.repeats,
        seed: c.seed,
    };
    let report = sampling_scaling(&cfg)?;
    emit_json(a.report.as_deref(), &report)?;
    Ok(ExitCode::SUCCESS)
}
