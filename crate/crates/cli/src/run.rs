use std::io::Write;
use std::time::Instant;

use fdp_core::dpgd::{
    amplification_report, dpgd_curve, tanh_t_grid, GradientModel, InitSensitivityModel,
    QuadratureSpec, DEFAULT_T_RANGE,
};
use fdp_core::mixture::advanced_shuffle_bound;
use fdp_core::oracle::{
    build_shuffle_base_pair, build_shuffle_pair, exact_epsilon, exact_hockey_stick, exact_tradeoff,
    monte_carlo_epsilon, MonteCarloSpec,
};
use fdp_core::shuffle::{ShuffleAccountant, ShuffleParams, ThresholdPolicy};
use fdp_core::tradeoff::{fmt_17, PiecewiseLinearTradeoff};
use serde_json::{json, Value};

use crate::args::{
    Cli, Command, DpgdArgs, DpgdCommand, Format, ModelKind, OracleArgs, ShuffleBase, ShuffleCommand,
};
use crate::output::{open, sig6, write_json, Meta};
use crate::reproduce;
use crate::CliError;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let meta = Meta::new(cli);
    match &cli.command {
        Command::Shuffle(cmd) => shuffle(cli, meta, cmd),
        Command::Dpgd(cmd) => dpgd(cli, meta, cmd),
        Command::Oracle(args) => oracle(cli, meta, args),
        Command::Reproduce(args) => reproduce::run(cli, meta, args.target),
    }
}

fn params(base: &ShuffleBase) -> Result<ShuffleParams, CliError> {
    let p = ShuffleParams::new(base.n, base.eps0)?;
    Ok(match base.tau {
        Some(tau) => p.with_truncation(tau)?,
        None => p,
    })
}

fn write_curve(cli: &Cli, meta: Meta, curve: &PiecewiseLinearTradeoff) -> Result<(), CliError> {
    let mut out = open(cli.output.as_deref())?;
    match cli.format {
        Format::Csv => {
            meta.write_csv_header(&mut out)?;
            curve.write_csv(&mut out)?;
        }
        Format::Json => {
            let knots: Vec<Value> = curve
                .knots()
                .iter()
                .map(|k| json!({ "alpha": k.alpha, "beta": k.beta }))
                .collect();
            write_json(&mut out, &meta.wrap_json(json!({ "knots": knots })))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Prints the scalar and, with `--output`, writes the full record.
fn write_scalar(cli: &Cli, meta: Meta, value: f64, record: Value) -> Result<(), CliError> {
    println!("{}", sig6(value));
    let Some(path) = cli.output.as_deref() else {
        return Ok(());
    };
    let mut out = open(Some(path))?;
    match cli.format {
        Format::Json => write_json(&mut out, &meta.wrap_json(record))?,
        Format::Csv => {
            meta.write_csv_header(&mut out)?;
            let Value::Object(fields) = record else {
                unreachable!("records are objects")
            };
            let keys: Vec<&str> = fields.keys().map(String::as_str).collect();
            writeln!(out, "{}", keys.join(","))?;
            let values: Vec<String> = fields
                .values()
                .map(|v| v.as_f64().map(fmt_17).unwrap_or_else(|| v.to_string()))
                .collect();
            writeln!(out, "{}", values.join(","))?;
        }
    }
    out.flush()?;
    Ok(())
}

fn shuffle(cli: &Cli, meta: Meta, cmd: &ShuffleCommand) -> Result<(), CliError> {
    match cmd {
        ShuffleCommand::Curve {
            base,
            grid,
            unsymmetrized,
        } => {
            let acc = ShuffleAccountant::new(params(base)?);
            let policy = match grid {
                Some(k) => ThresholdPolicy::Grid(*k),
                None => ThresholdPolicy::default(),
            };
            let f0 = acc.base_curve(policy)?;
            let w = acc.params().mix_weight();
            let curve = if *unsymmetrized {
                let id = PiecewiseLinearTradeoff::identity();
                PiecewiseLinearTradeoff::convex_combination(&[
                    (2.0 * w, &id),
                    (1.0 - 2.0 * w, &f0),
                ])?
            } else {
                advanced_shuffle_bound(&f0, w)?
            };
            let meta = meta
                .note("tail_mass", acc.window().tail_mass)
                .note("lower_bound", grid.is_some());
            write_curve(cli, meta, &curve)
        }
        ShuffleCommand::Delta { base, eps } => {
            let q = ShuffleAccountant::new(params(base)?).delta_query(*eps)?;
            write_scalar(
                cli,
                meta,
                q.result,
                serde_json::to_value(q).expect("query serializes"),
            )
        }
        ShuffleCommand::Epsilon { base, delta } => {
            let q = ShuffleAccountant::new(params(base)?).epsilon_query(*delta)?;
            write_scalar(
                cli,
                meta,
                q.result,
                serde_json::to_value(q).expect("query serializes"),
            )
        }
    }
}

pub fn model(args: &DpgdArgs) -> Result<InitSensitivityModel, CliError> {
    let kind = match args.model {
        ModelKind::Clip => GradientModel::Clipped {
            a: args.a,
            c: args.c,
        },
        ModelKind::Noclip => GradientModel::NoClip { a: args.a },
        ModelKind::Logistic => GradientModel::Logistic { bound: args.bound },
    };
    Ok(InitSensitivityModel::new(kind, args.sigma)?)
}

fn quadrature(args: &DpgdArgs) -> QuadratureSpec {
    QuadratureSpec {
        tolerance: args.tol,
        ..QuadratureSpec::default()
    }
}

fn dpgd(cli: &Cli, meta: Meta, cmd: &DpgdCommand) -> Result<(), CliError> {
    match cmd {
        DpgdCommand::Curve { args, envelope } => {
            let samples = dpgd_curve(
                &model(args)?,
                &quadrature(args),
                &tanh_t_grid(args.points, DEFAULT_T_RANGE)?,
            )?;
            let meta = meta.note("max_quadrature_error", samples.max_err());
            if *envelope {
                return write_curve(cli, meta, &samples.tangent_envelope()?);
            }
            let mut out = open(cli.output.as_deref())?;
            match cli.format {
                Format::Csv => {
                    meta.write_csv_header(&mut out)?;
                    samples.write_csv(&mut out)?;
                }
                Format::Json => {
                    let rows: Vec<Value> = samples
                        .samples
                        .iter()
                        .map(
                            |s| json!({ "t": s.t, "alpha": s.alpha, "beta": s.beta, "err": s.err }),
                        )
                        .collect();
                    write_json(&mut out, &meta.wrap_json(json!({ "samples": rows })))?;
                }
            }
            out.flush()?;
            Ok(())
        }
        DpgdCommand::Compare { args, alphas } => {
            if args.model != ModelKind::Clip {
                return Err(CliError::Usage("`dpgd compare` needs --model clip".into()));
            }
            if *alphas == 0 {
                return Err(CliError::Usage("--alphas must be positive".into()));
            }
            let grid: Vec<f64> = (1..=*alphas)
                .map(|j| j as f64 / (*alphas + 1) as f64)
                .collect();
            let rows = amplification_report(&model(args)?, &quadrature(args), &grid)?;
            let mut out = open(cli.output.as_deref())?;
            match cli.format {
                Format::Csv => {
                    meta.write_csv_header(&mut out)?;
                    writeln!(out, "alpha,f_init,g_c,margin")?;
                    for r in &rows {
                        writeln!(
                            out,
                            "{},{},{},{}",
                            fmt_17(r.alpha),
                            fmt_17(r.f_init),
                            fmt_17(r.g_c),
                            fmt_17(r.margin)
                        )?;
                    }
                }
                Format::Json => write_json(&mut out, &meta.wrap_json(json!({ "rows": rows })))?,
            }
            out.flush()?;
            Ok(())
        }
    }
}

fn oracle(cli: &Cli, meta: Meta, args: &OracleArgs) -> Result<(), CliError> {
    let chosen = [
        args.exact_tradeoff,
        args.eps.is_some(),
        args.delta.is_some(),
    ]
    .iter()
    .filter(|x| **x)
    .count();
    if chosen != 1 {
        return Err(CliError::Usage(
            "choose exactly one of --exact-tradeoff, --eps, --delta".into(),
        ));
    }
    if args.monte_carlo && args.delta.is_none() {
        return Err(CliError::Usage(
            "--monte-carlo estimates ε and needs --delta".into(),
        ));
    }
    let started = Instant::now();
    let params = ShuffleParams::new(args.n, args.eps0)?;
    let pair = if args.base {
        build_shuffle_base_pair(params)?
    } else {
        build_shuffle_pair(params)?
    };
    if args.exact_tradeoff {
        let curve = exact_tradeoff(&pair)?;
        return write_curve(cli, meta.note("atoms", pair.len()), &curve);
    }
    let mut record = json!({ "n": args.n, "eps0": args.eps0, "atoms": pair.len() });
    let value = if let Some(eps) = args.eps {
        let gamma = eps.exp();
        record["gamma"] = json!(gamma);
        exact_hockey_stick(&pair, gamma)?
    } else {
        let delta = args.delta.expect("one query is chosen");
        record["delta"] = json!(delta);
        if args.monte_carlo {
            let spec = MonteCarloSpec {
                samples: args.samples,
                seed: args.seed,
                ..MonteCarloSpec::default()
            };
            let report = monte_carlo_epsilon(&pair, delta, spec)?;
            let lower = report.epsilon_lower;
            record["monte_carlo"] = serde_json::to_value(report).expect("report serializes");
            lower
        } else {
            exact_epsilon(&pair, delta)?
        }
    };
    record["value"] = json!(value);
    if args.timing {
        record["runtime_ms"] = json!(started.elapsed().as_millis() as u64);
    }
    write_scalar(cli, meta, value, record)
}
