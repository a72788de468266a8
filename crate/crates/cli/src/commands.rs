//! Command dispatch and report assembly.

use std::time::Instant;

use ellipticfund::annulus::{
    classify_infinity, classify_origin, solve_dirichlet_2d, AnnulusGrid, ClassifierConfig, Fundamental, SolverConfig,
};
use ellipticfund::circle::{exponent_2d, fundamental_profile_2d, CircleConfig};
use ellipticfund::game::{classify_recurrence, estimate_hit_prob, recover_exponent_scaling, SimConfig};
use ellipticfund::operator::{pucci_sandwich_check, verify_h1_h2};
use ellipticfund::radial::{exponent_rotinv, is_rotationally_symmetric, known_exponent, xi_radial, ExponentResult};
use ellipticfund::OperatorSpec;
use serde_json::{json, Map, Value};

use crate::load::{self, Loaded};
use crate::report::{self, Csv};
use crate::{
    AnnulusArgs, CheckArgs, ClassifyArgs, CliError, Command, EndArg, ExponentArgs, FamilyArg, GameArgs, LadderArgs,
    MethodArg, OpArgs, ProfileArgs,
};

/// Environment variable capping the worker threads of game commands.
pub const THREADS_ENV: &str = "ELLIPTICFUND_THREADS";

/// Random samples drawn by `check`.
const CHECK_SAMPLES: usize = 1000;
/// Random samples in the rotational-symmetry probe that picks the exponent method.
const SYMMETRY_SAMPLES: usize = 64;
/// Recurrence classification treats `|α| ≤` this as the critical case.
const RECURRENCE_TOL: f64 = 0.1;

pub const PROFILE_HEADER: &str = "theta,phi";
pub const FIELD_HEADER: &str = "x,y,u";
pub const LADDER_HEADER: &str = "r,p_hat,stderr";

pub fn run(command: Command) -> Result<(), CliError> {
    let start = Instant::now();
    match command {
        Command::Check(a) => check(a, start),
        Command::Exponent(a) => exponent(a, start),
        Command::Profile(a) => profile(a, start),
        Command::Annulus(a) => annulus(a, start),
        Command::Classify(a) => classify(a, start),
        Command::Game(a) => game(a, start),
        Command::Ladder(a) => ladder(a, start),
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn op_echo(args: &OpArgs) -> Value {
    json!({
        "op": args.op,
        "spec_file": args.spec_file.as_ref().map(|p| p.display().to_string()),
        "lambda": args.lambda,
        "Lambda": args.big_lambda,
        "dim": args.dim,
        "seed": args.seed,
        "out": args.out.as_ref().map(|p| p.display().to_string()),
    })
}

fn with_fields(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

/// The report envelope. Only `wall_time_s` varies between identical runs.
fn envelope(name: &str, echo: Value, spec: &OperatorSpec, payload: Value, warnings: Vec<String>, start: Instant) -> String {
    let operator = spec.to_json_value();
    let report = json!({
        "command": with_fields(json!({"name": name}), echo),
        "operator": operator,
        "operator_hash": report::digest(&operator),
        "payload_hash": report::digest(&payload),
        "payload": payload,
        "versions": {"ellipticfund": env!("CARGO_PKG_VERSION"), "report_format": 1},
        "warnings": warnings,
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    let mut text = report::canonical(&report);
    text.push('\n');
    text
}

/// JSON commands: the report goes to `--out` or stdout.
fn finish_json(args: &OpArgs, text: &str) -> Result<(), CliError> {
    report::emit(text, args.out.as_deref())
}

/// CSV commands: the table goes to `--out` or stdout; with `--out` the
/// JSON report is printed to stdout as well.
fn finish_csv(args: &OpArgs, csv: &str, report_text: &str) -> Result<(), CliError> {
    match &args.out {
        Some(path) => {
            report::emit(csv, Some(path))?;
            report::emit(report_text, None)
        }
        None => report::emit(csv, None),
    }
}

fn oracle(spec: &OperatorSpec, computed: f64) -> Value {
    match known_exponent(spec) {
        Some(exact) => json!({"alpha_star": exact, "difference": computed - exact}),
        None => Value::Null,
    }
}

fn check(a: CheckArgs, start: Instant) -> Result<(), CliError> {
    let loaded = load::load_operator(&a.op)?;
    let f = &loaded.spec;
    let payload = json!({
        "h1_h2": to_value(&verify_h1_h2(f, &f.pair(), CHECK_SAMPLES, a.op.seed)),
        "sandwich": to_value(&pucci_sandwich_check(f, CHECK_SAMPLES, a.op.seed)),
        "rotational_symmetry": to_value(&is_rotationally_symmetric(f, CHECK_SAMPLES, a.op.seed)),
        "dual": f.dual().to_json_value(),
    });
    let text = envelope("check", op_echo(&a.op), f, payload, loaded.warnings, start);
    finish_json(&a.op, &text)
}

fn circle_config(ntheta: usize, tol: f64, seed: u64) -> CircleConfig {
    // seed 0 keeps the deterministic constant initial profile
    CircleConfig { n_theta: ntheta, tol, seed: (seed != 0).then_some(seed), ..CircleConfig::default() }
}

fn require_plane(spec: &OperatorSpec, what: &str) -> Result<(), CliError> {
    if spec.dim() != 2 {
        return Err(CliError::invalid(format!("{what} needs --dim 2 (operator has dim {})", spec.dim())));
    }
    Ok(())
}

fn compute_exponent(loaded: &Loaded, method: MethodArg, cfg: &CircleConfig, seed: u64) -> Result<ExponentResult, CliError> {
    let f = &loaded.spec;
    let use_rotinv = match method {
        MethodArg::Rotinv => true,
        MethodArg::Circle => false,
        MethodArg::Auto => is_rotationally_symmetric(f, SYMMETRY_SAMPLES, seed).symmetric,
    };
    if use_rotinv {
        return Ok(exponent_rotinv(f)?);
    }
    require_plane(f, "the circle solver")?;
    Ok(exponent_2d(f, cfg)?)
}

fn exponent(a: ExponentArgs, start: Instant) -> Result<(), CliError> {
    let loaded = load::load_operator(&a.op)?;
    let cfg = circle_config(a.ntheta, a.tol, a.op.seed);
    let result = compute_exponent(&loaded, a.method, &cfg, a.op.seed)?;
    let payload = with_fields(to_value(&result), json!({"oracle": oracle(&loaded.spec, result.alpha_star)}));
    let echo = with_fields(op_echo(&a.op), json!({"method": format!("{:?}", a.method).to_lowercase(), "ntheta": a.ntheta, "tol": a.tol}));
    let text = envelope("exponent", echo, &loaded.spec, payload, loaded.warnings, start);
    finish_json(&a.op, &text)
}

fn profile(a: ProfileArgs, start: Instant) -> Result<(), CliError> {
    let loaded = load::load_operator(&a.op)?;
    require_plane(&loaded.spec, "profile")?;
    let cfg = circle_config(a.ntheta, a.tol, a.op.seed);
    let result = exponent_2d(&loaded.spec, &cfg)?;
    let prof = fundamental_profile_2d(&loaded.spec, &result, &cfg)?;
    let csv = Csv {
        header: PROFILE_HEADER,
        rows: prof.values.iter().enumerate().map(|(k, &v)| vec![prof.theta(k), v]).collect(),
    }
    .render();
    let payload = json!({
        "exponent": to_value(&result),
        "oracle": oracle(&loaded.spec, result.alpha_star),
        "n_theta": prof.n_theta,
        "csv_header": PROFILE_HEADER,
        "csv_sha256": report::digest(&Value::String(csv.clone())),
    });
    let echo = with_fields(op_echo(&a.op), json!({"ntheta": a.ntheta, "tol": a.tol}));
    let text = envelope("profile", echo, &loaded.spec, payload, loaded.warnings, start);
    finish_csv(&a.op, &csv, &text)
}

/// Exponent of a rotationally invariant operator, or `None`.
fn radial_exponent(spec: &OperatorSpec, seed: u64) -> Result<Option<f64>, CliError> {
    if !is_rotationally_symmetric(spec, SYMMETRY_SAMPLES, seed).symmetric {
        return Ok(None);
    }
    Ok(Some(exponent_rotinv(spec)?.alpha_star))
}

fn annulus(a: AnnulusArgs, start: Instant) -> Result<(), CliError> {
    let loaded = load::load_operator(&a.op)?;
    require_plane(&loaded.spec, "annulus")?;
    // widest band the direction decomposition may ask for
    let grid = AnnulusGrid::new(a.rinner, a.router, a.grid_h, ellipticfund::annulus::stencil::MAX_WIDTH)?;
    let cfg = SolverConfig { tol: a.tol, ..SolverConfig::default() };
    let (field, solve) = solve_dirichlet_2d(&loaded.spec, &grid, &|_| 1.0, &|_| 0.0, &cfg)?;
    let exact = match radial_exponent(&loaded.spec, a.op.seed)? {
        Some(alpha) => {
            let (xr, xbig) = (xi_radial(alpha, a.rinner), xi_radial(alpha, a.router));
            let err = field.sup_error(|p| (xi_radial(alpha, p[0].hypot(p[1])) - xbig) / (xr - xbig));
            json!({"alpha_star": alpha, "sup_error": err})
        }
        None => Value::Null,
    };
    let csv = Csv { header: FIELD_HEADER, rows: field.samples().into_iter().map(|s| s.to_vec()).collect() }.render();
    let payload = json!({
        "solve": to_value(&solve),
        "radial_exact": exact,
        "nodes": grid.active.len(),
        "csv_header": FIELD_HEADER,
        "csv_sha256": report::digest(&Value::String(csv.clone())),
    });
    let echo = with_fields(
        op_echo(&a.op),
        json!({"rinner": a.rinner, "router": a.router, "grid_h": a.grid_h, "tol": a.tol}),
    );
    let text = envelope("annulus", echo, &loaded.spec, payload, loaded.warnings, start);
    finish_csv(&a.op, &csv, &text)
}

fn fundamental(spec: &OperatorSpec, cfg: &CircleConfig, seed: u64) -> Result<Fundamental, CliError> {
    if let Some(alpha) = radial_exponent(spec, seed)? {
        return Ok(Fundamental::Radial { alpha });
    }
    let result = exponent_2d(spec, cfg)?;
    Ok(Fundamental::Profile(fundamental_profile_2d(spec, &result, cfg)?))
}

fn classify(a: ClassifyArgs, start: Instant) -> Result<(), CliError> {
    let loaded = load::load_operator(&a.op)?;
    require_plane(&loaded.spec, "classify")?;
    let cfg = circle_config(a.ntheta, CircleConfig::default().tol, a.op.seed);
    let phi = fundamental(&loaded.spec, &cfg, a.op.seed)?;
    let phi_tilde = fundamental(&loaded.spec.dual(), &cfg, a.op.seed)?;
    let (coef, offset) = (a.coef, a.offset);
    let u: Box<dyn Fn([f64; 2]) -> f64> = match a.family {
        FamilyArg::Phi => Box::new(|x| coef * phi.eval(x) + offset),
        FamilyArg::MinusPhiTilde => Box::new(|x| -coef * phi_tilde.eval(x) + offset),
        FamilyArg::Saddle => Box::new(move |x| coef * (x[0] * x[0] - x[1] * x[1])),
        FamilyArg::Constant => Box::new(move |_| offset),
    };
    let ccfg = ClassifierConfig::default();
    let report = match a.at {
        EndArg::Origin => classify_origin(&*u, &phi, &phi_tilde, &ccfg)?,
        EndArg::Infinity => classify_infinity(&*u, &phi, &phi_tilde, &ccfg)?,
    };
    let payload = with_fields(
        to_value(&report),
        json!({"alpha_star": phi.alpha(), "alpha_star_dual": phi_tilde.alpha()}),
    );
    let echo = with_fields(
        op_echo(&a.op),
        json!({
            "at": format!("{:?}", a.at).to_lowercase(),
            "family": to_snake(&format!("{:?}", a.family)),
            "coef": a.coef,
            "offset": a.offset,
            "ntheta": a.ntheta,
        }),
    );
    let text = envelope("classify", echo, &loaded.spec, payload, loaded.warnings, start);
    finish_json(&a.op, &text)
}

fn to_snake(camel: &str) -> String {
    let mut out = String::new();
    for (i, c) in camel.chars().enumerate() {
        if c.is_uppercase() && i > 0 {
            out.push('_');
        }
        out.push(c.to_ascii_lowercase());
    }
    out
}

/// Runs `job` on a pool sized by [`THREADS_ENV`], or on the global pool.
fn with_threads<T: Send>(job: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| CliError::invalid(format!("{THREADS_ENV}: expected a positive integer, got {v:?}")))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError { code: 1, kind: "internal", message: e.to_string() })?;
            Ok(pool.install(job))
        }
        Err(_) => Ok(job()),
    }
}

fn radial_value(alpha: f64, r: f64, big_r: f64, x: &[f64]) -> f64 {
    let rho = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    (xi_radial(alpha, rho) - xi_radial(alpha, big_r)) / (xi_radial(alpha, r) - xi_radial(alpha, big_r))
}

fn game(a: GameArgs, start: Instant) -> Result<(), CliError> {
    let loaded = load::load_operator(&a.op)?;
    let setup = load::game(&loaded, &a.op)?;
    let x0 = load::parse_point(&a.x0, a.op.dim)?;
    let cfg = SimConfig::new(&setup.game, a.r, a.big_r, x0.clone(), a.paths, a.op.seed)?;
    let stats = with_threads(|| estimate_hit_prob(&setup.game, &setup.player_one, &setup.player_two, &cfg))??;
    let oracle = match setup.alpha {
        Some(alpha) => {
            let exact = radial_value(alpha, a.r, a.big_r, &x0);
            json!({"alpha_star": alpha, "p_exact": exact, "difference": stats.p_hat - exact})
        }
        None => Value::Null,
    };
    let mut warnings = loaded.warnings.clone();
    warnings.extend(stats.warning.clone());
    let payload = with_fields(to_value(&stats), json!({"oracle": oracle}));
    let echo = with_fields(op_echo(&a.op), json!({"r": a.r, "R": a.big_r, "x0": x0, "paths": a.paths}));
    let text = envelope("game", echo, &loaded.spec, payload, warnings, start);
    finish_json(&a.op, &text)
}

fn ladder(a: LadderArgs, start: Instant) -> Result<(), CliError> {
    let loaded = load::load_operator(&a.op)?;
    let setup = load::game(&loaded, &a.op)?;
    let rungs = load::parse_list(&a.r, "--r")?;
    let x0 = load::parse_point(&a.x0, a.op.dim)?;
    let first = *rungs.first().ok_or_else(|| CliError::invalid("--r: empty ladder"))?;
    let template = SimConfig::new(&setup.game, first, a.big_r, x0.clone(), a.paths, a.op.seed)?;
    let fit = with_threads(|| {
        recover_exponent_scaling(&setup.game, &setup.player_one, &setup.player_two, &rungs, a.big_r, &x0, &template)
    })??;
    let csv = Csv {
        header: LADDER_HEADER,
        rows: fit.points.iter().map(|p| vec![p.r, p.p_hat, p.stderr]).collect(),
    }
    .render();
    let oracle = match setup.alpha {
        Some(alpha) => json!({"alpha_star": alpha, "difference": fit.slope - alpha}),
        None => Value::Null,
    };
    let mut payload = Map::new();
    payload.insert("fit".into(), to_value(&fit));
    payload.insert("recurrence".into(), to_value(&classify_recurrence(fit.slope, RECURRENCE_TOL)));
    payload.insert("oracle".into(), oracle);
    payload.insert("csv_header".into(), json!(LADDER_HEADER));
    let echo = with_fields(op_echo(&a.op), json!({"r": rungs, "R": a.big_r, "x0": x0, "paths": a.paths}));
    let text = envelope("ladder", echo, &loaded.spec, Value::Object(payload), loaded.warnings, start);
    finish_csv(&a.op, &csv, &text)
}

