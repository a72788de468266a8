//! Operator and game construction from command-line options.

use ellipticfund::game::{optimal_feedback_policy, radial_hessian, FeedbackPolicy, GameSpec, Player, DEFAULT_CONTROL_ANGLES};
use ellipticfund::operator::verify_h1_h2;
use ellipticfund::radial::{exponent_rotinv, PucciSign};
use ellipticfund::{EllipticityPair, OperatorSpec, SymMatrix};

use crate::{CliError, OpArgs};

/// Samples in the ellipticity smoke check run on every load.
const SMOKE_SAMPLES: usize = 100;

pub const BUILTINS: [&str; 6] = ["pucci+", "pucci-", "laplacian", "linear", "f1", "f2"];

/// A loaded operator with the warnings raised while loading it.
pub struct Loaded {
    pub spec: OperatorSpec,
    /// Builtin name, when the operator came from `--op`.
    pub builtin: Option<String>,
    pub warnings: Vec<String>,
}

fn pair(args: &OpArgs) -> Result<EllipticityPair, CliError> {
    Ok(EllipticityPair::new(args.lambda, args.big_lambda)?)
}

/// `diag(λ, Λ, …, Λ)`.
pub fn linear_builtin_matrix(pair: &EllipticityPair, dim: usize) -> SymMatrix {
    let mut diag = vec![pair.big_lambda; dim];
    diag[0] = pair.lambda;
    SymMatrix::from_diag(&diag)
}

pub fn builtin(name: &str, args: &OpArgs) -> Result<OperatorSpec, CliError> {
    let p = pair(args)?;
    let n = args.dim;
    let spec = match name {
        "pucci+" => OperatorSpec::pucci_plus(p, n)?,
        "pucci-" => OperatorSpec::pucci_minus(p, n)?,
        "laplacian" => OperatorSpec::laplacian(n)?,
        "linear" => OperatorSpec::linear(linear_builtin_matrix(&p, n), p)?,
        "f1" => OperatorSpec::f1(p, n)?,
        "f2" => OperatorSpec::f2(p, n)?,
        other => {
            return Err(CliError::invalid(format!("--op: unknown builtin {other:?}; expected one of {}", BUILTINS.join(", "))))
        }
    };
    Ok(spec)
}

/// Loads the operator named by `--op` or `--spec-file` and audits its
/// declared ellipticity on a small sample.
pub fn load_operator(args: &OpArgs) -> Result<Loaded, CliError> {
    let (spec, builtin_name) = match (&args.op, &args.spec_file) {
        (Some(name), None) => (builtin(name, args)?, Some(name.clone())),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            (OperatorSpec::from_json_str(&text)?, None)
        }
        _ => return Err(CliError::invalid("exactly one of --op and --spec-file is required")),
    };
    let mut warnings = Vec::new();
    let audit = verify_h1_h2(&spec, &spec.pair(), SMOKE_SAMPLES, args.seed);
    if !(audit.h1_pass && audit.h2_pass) {
        warnings.push(format!(
            "declared ellipticity audit failed on {} samples (worst H1 violation {:e}, worst H2 violation {:e})",
            audit.n_samples, audit.worst_h1_violation, audit.worst_h2_violation
        ));
    }
    Ok(Loaded { spec, builtin: builtin_name, warnings })
}

/// A builtin game, the policies of its two players and, when the value is
/// radial, the exponent of its fundamental solution.
pub struct GameSetup {
    pub game: GameSpec,
    pub player_one: FeedbackPolicy,
    pub player_two: FeedbackPolicy,
    pub alpha: Option<f64>,
}

/// Games exist for the builtins whose controls are explicit: the Pucci
/// operators (one controller choosing among rank-one perturbations),
/// the Laplacian (Brownian motion) and the linear builtin (a fixed
/// diffusion).
pub fn game(loaded: &Loaded, args: &OpArgs) -> Result<GameSetup, CliError> {
    let name = loaded
        .builtin
        .as_deref()
        .ok_or_else(|| CliError::invalid("game commands need a builtin --op (pucci+, pucci-, laplacian or linear)"))?;
    let n = args.dim;
    let passive_one = FeedbackPolicy::fixed(Player::One, 0);
    let passive_two = FeedbackPolicy::fixed(Player::Two, 0);
    let setup = match name {
        "pucci+" | "pucci-" => {
            let p = pair(args)?;
            let alpha = exponent_rotinv(&loaded.spec)?.alpha_star;
            let (sign, player) = if name == "pucci+" { (PucciSign::Plus, Player::Two) } else { (PucciSign::Minus, Player::One) };
            let game = GameSpec::pucci(sign, p, n, DEFAULT_CONTROL_ANGLES)?;
            let optimal = optimal_feedback_policy(&game, radial_hessian(alpha, n), player);
            let (player_one, player_two) = match player {
                Player::One => (optimal, passive_two),
                Player::Two => (passive_one, optimal),
            };
            GameSetup { game, player_one, player_two, alpha: Some(alpha) }
        }
        "laplacian" => GameSetup {
            game: GameSpec::brownian(n)?,
            player_one: passive_one,
            player_two: passive_two,
            alpha: Some(exponent_rotinv(&loaded.spec)?.alpha_star),
        },
        "linear" => {
            let p = pair(args)?;
            GameSetup {
                game: GameSpec::from_diffusions(vec![vec![linear_builtin_matrix(&p, n)]], p)?,
                player_one: passive_one,
                player_two: passive_two,
                alpha: None,
            }
        }
        other => return Err(CliError::invalid(format!("no game is defined for --op {other}"))),
    };
    Ok(setup)
}

/// `--x0`: a radius along `e₁`, or all coordinates separated by commas.
pub fn parse_point(text: &str, dim: usize) -> Result<Vec<f64>, CliError> {
    let values = parse_list(text, "--x0")?;
    match values.len() {
        1 => {
            let mut x = vec![0.0; dim];
            x[0] = values[0];
            Ok(x)
        }
        k if k == dim => Ok(values),
        k => Err(CliError::invalid(format!("--x0: expected 1 or {dim} coordinates, got {k}"))),
    }
}

pub fn parse_list(text: &str, flag: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|e| CliError::invalid(format!("{flag}: cannot parse {s:?}: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(op: &str, dim: usize) -> OpArgs {
        OpArgs { op: Some(op.into()), spec_file: None, lambda: 1.0, big_lambda: 2.0, dim, seed: 0, out: None }
    }

    #[test]
    fn f1_weights_the_extreme_eigenvalues_by_big_lambda() {
        let spec = builtin("f1", &args("f1", 4)).unwrap();
        assert_eq!(spec.kind, ellipticfund::OperatorKind::EigenSymmetric(vec![2.0, 1.0, 1.0, 2.0]));
    }

    #[test]
    fn unknown_builtin_is_a_config_error() {
        assert_eq!(builtin("pucci", &args("pucci", 2)).unwrap_err().code, 2);
    }

    #[test]
    fn points_expand_along_the_first_axis() {
        assert_eq!(parse_point("0.5", 3).unwrap(), vec![0.5, 0.0, 0.0]);
        assert_eq!(parse_point("0.1, 0.2", 2).unwrap(), vec![0.1, 0.2]);
        assert!(parse_point("0.1,0.2", 3).is_err());
        assert!(parse_list("0.1,x", "--r").is_err());
    }

    #[test]
    fn spec_file_games_are_rejected() {
        let loaded = Loaded { spec: OperatorSpec::laplacian(2).unwrap(), builtin: None, warnings: vec![] };
        assert_eq!(game(&loaded, &args("laplacian", 2)).err().unwrap().code, 2);
    }
}
