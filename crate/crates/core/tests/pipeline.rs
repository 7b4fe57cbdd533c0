//! End-to-end checks through the public API: config text in, records and
//! reports out.

use chemolab::config::{parse_config, ConfigError};
use chemolab::grid::Grid;
use chemolab::maxreg::{dense_operator_norm, power_iteration, SpaceTimeOperator};
use chemolab::runner::execute;
use chemolab::solver::StopReason;

const CONFIG: &str = r#"
seed = 11

[domain]
Lx = 1.0
Ly = 2.0
nx = 16
ny = 32

[coefficients]
kappa_expr = "1"
mu_expr = "1"
u0_expr = "1 + 0.5*cos(pi*x)*cos(pi*y/2)"
v0_expr = "0"

[time]
T = 0.2

[diagnostics]
s = [2.0]
grad_q = [4.0]

[[balls]]
center = [0.5, 1.0]
radius = 0.3

[[functionals]]
p = 1.5
eps = 0.01
[functionals.cutoff]
x0 = [0.5, 1.0]
r_inner = 0.1
r_outer = 0.3
"#;

#[test]
fn config_run_records_every_configured_column() {
    let exp = parse_config(CONFIG).unwrap();
    let res = execute(&exp).unwrap();
    assert_eq!(res.output.stop_reason, StopReason::TReachedT);
    assert!(res.mass_bound.passed);
    assert!(!res.blow_up.triggered);
    assert_eq!(res.records[0].t, 0.0);
    let last = res.records.last().unwrap();
    assert!((last.t - 0.2).abs() < 1e-12);
    assert!(res.records.iter().all(|r| r.all_finite()));
    let names = exp.diagnostics.column_names();
    assert_eq!(last.extra_values().len(), names.len());
    assert!(names.iter().any(|n| n == "ball0_sup_u"));
    assert!(names.iter().any(|n| n == "F0_value"));
}

#[test]
fn logistic_state_relaxes_toward_one() {
    let text = CONFIG.replace("T = 0.2", "T = 3.0");
    let res = execute(&parse_config(&text).unwrap()).unwrap();
    let u = &res.output.state.u;
    let max_dev = u.values().iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);
    assert!(max_dev < 0.05, "max deviation {}", max_dev);
}

#[test]
fn tau_not_below_t_is_rejected() {
    let text = CONFIG.replace("T = 0.2", "T = 0.2\ntau = 0.2");
    assert!(matches!(parse_config(&text), Err(ConfigError::Invalid { .. })));
}

#[test]
fn unknown_key_is_rejected() {
    let text = CONFIG.replace("seed = 11", "seed = 11\nsede = 3");
    assert!(matches!(parse_config(&text), Err(ConfigError::Parse(_))));
}

#[test]
fn negative_mu_names_the_cell() {
    let text = CONFIG.replace("mu_expr = \"1\"", "mu_expr = \"x - 0.5\"");
    match parse_config(&text) {
        Err(ConfigError::NegativeMu { i, x, value, .. }) => {
            assert_eq!(i, 0);
            assert!(x < 0.5 && value < 0.0);
        }
        other => panic!("expected NegativeMu, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn power_iteration_agrees_with_dense_svd_on_rectangle() {
    let g = Grid::new(4, 6, 1.0, 1.5).unwrap();
    let op = SpaceTimeOperator::new(g, 0.01, 8).unwrap();
    let svd = dense_operator_norm(&op);
    let pi = power_iteration(&op, 2000, 1e-13, 5);
    assert!(((pi.k_hat - svd) / svd).abs() < 1e-6, "{} vs {}", pi.k_hat, svd);
}
