//! Flat key-value scenario configuration files.
//!
//! One `key = value` pair per line, `#` starts a comment. Keys mirror the
//! scenario fields; vectors are comma-separated. Unset keys fall back to the
//! builtin defaults for the selected system.

use safe_mbrl::scenarios::{scenario_by_name, scenario_names};
use safe_mbrl::sim::{ControllerMode, SafeSetSpec, ScenarioConfig};

/// Parse a configuration file's text into a scenario.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, String> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected 'key = value'", lineno + 1))?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }

    // Pick a base scenario: explicit `scenario`, else by system, else the
    // convex default.
    let mut base_name = "nonlinear_convex_safe".to_string();
    for (k, v) in &pairs {
        if k == "scenario" {
            base_name = v.clone();
        } else if k == "system" && v == "single_integrator" {
            base_name = "integrator_rl".to_string();
        }
    }
    let mut cfg = scenario_by_name(&base_name).ok_or_else(|| {
        format!(
            "unknown base scenario '{base_name}' (known: {})",
            scenario_names().join(", ")
        )
    })?;

    for (key, value) in &pairs {
        apply_key(&mut cfg, key, value)?;
    }
    Ok(cfg)
}

fn apply_key(cfg: &mut ScenarioConfig, key: &str, value: &str) -> Result<(), String> {
    let bad = |what: &str| format!("key '{key}': invalid {what} '{value}'");
    match key {
        "scenario" => {} // handled during base selection
        "name" => cfg.name = value.to_string(),
        "system" => cfg.system = value.to_string(),
        "mode" => {
            cfg.mode = value
                .parse::<ControllerMode>()
                .map_err(|e| format!("key 'mode': {e}"))?
        }
        "p" => {
            let p: f64 = value.parse().map_err(|_| bad("number"))?;
            cfg.safe_set = SafeSetSpec::Parabola { p };
        }
        "obstacle_center" => {
            let v = parse_vec(value).map_err(|_| bad("vector"))?;
            if v.len() != 2 {
                return Err(bad("2-vector"));
            }
            cfg.safe_set = match cfg.safe_set {
                SafeSetSpec::Disk { radius, .. } => SafeSetSpec::Disk {
                    center: [v[0], v[1]],
                    radius,
                },
                _ => SafeSetSpec::Disk {
                    center: [v[0], v[1]],
                    radius: 1.0,
                },
            };
        }
        "obstacle_radius" => {
            let r: f64 = value.parse().map_err(|_| bad("number"))?;
            cfg.safe_set = match cfg.safe_set {
                SafeSetSpec::Disk { center, .. } => SafeSetSpec::Disk { center, radius: r },
                _ => SafeSetSpec::Disk {
                    center: [2.0, 0.0],
                    radius: r,
                },
            };
        }
        "q_diag" => cfg.q_diag = parse_vec(value).map_err(|_| bad("vector"))?,
        "r_diag" => cfg.r_diag = parse_vec(value).map_err(|_| bad("vector"))?,
        "barrier_weight" => cfg.barrier_weight = value.parse().map_err(|_| bad("number"))?,
        "k_c1" => cfg.gains.k_c1 = value.parse().map_err(|_| bad("number"))?,
        "k_c2" => cfg.gains.k_c2 = value.parse().map_err(|_| bad("number"))?,
        "k_a1" => cfg.gains.k_a1 = value.parse().map_err(|_| bad("number"))?,
        "k_a2" => cfg.gains.k_a2 = value.parse().map_err(|_| bad("number"))?,
        "gamma_c" => cfg.gains.gamma_c = value.parse().map_err(|_| bad("number"))?,
        "beta_c" => cfg.gains.beta_c = value.parse().map_err(|_| bad("number"))?,
        "n_extrap" => cfg.gains.n_extrap = value.parse().map_err(|_| bad("integer"))?,
        "c_b" => cfg.c_b = value.parse().map_err(|_| bad("number"))?,
        "x0" => cfg.x0 = parse_vec(value).map_err(|_| bad("vector"))?,
        "w_c0" => cfg.w_c0 = parse_vec(value).map_err(|_| bad("vector"))?,
        "w_a0" => cfg.w_a0 = parse_vec(value).map_err(|_| bad("vector"))?,
        "gamma0" => cfg.gamma0 = value.parse().map_err(|_| bad("number"))?,
        "theta0" => cfg.theta0 = parse_vec(value).map_err(|_| bad("vector"))?,
        "w_a_bound" => cfg.w_a_bound = value.parse().map_err(|_| bad("number"))?,
        "icl_window" => cfg.icl_window = value.parse().map_err(|_| bad("number"))?,
        "icl_gain" => cfg.icl_gain = value.parse().map_err(|_| bad("number"))?,
        "icl_capacity" => cfg.icl_capacity = value.parse().map_err(|_| bad("integer"))?,
        "dt" => cfg.dt = value.parse().map_err(|_| bad("number"))?,
        "horizon" => cfg.horizon = value.parse().map_err(|_| bad("number"))?,
        "seed" => cfg.seed = value.parse().map_err(|_| bad("integer"))?,
        "sample_stride" => cfg.sample_stride = value.parse().map_err(|_| bad("integer"))?,
        other => return Err(format!("unknown configuration key '{other}'")),
    }
    Ok(())
}

/// Comma-separated float list, e.g. `x0 = -2.5, 0`.
pub fn parse_vec(s: &str) -> Result<Vec<f64>, std::num::ParseFloatError> {
    s.split(',').map(|p| p.trim().parse::<f64>()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_overriding_config() {
        let text = "
# comment
scenario = nonlinear_convex_safe
name = custom
x0 = -1.0, -0.5
seed = 99
horizon = 2.5   # trailing comment
mode = rl_unguarded
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.name, "custom");
        assert_eq!(cfg.x0, vec![-1.0, -0.5]);
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.horizon, 2.5);
        assert_eq!(cfg.mode, ControllerMode::RlUnguarded);
        // untouched defaults survive
        assert_eq!(cfg.c_b, 1.0);
    }

    #[test]
    fn integrator_system_picks_integrator_defaults() {
        let cfg = parse_config("system = single_integrator\nobstacle_radius = 0.5\n").unwrap();
        assert_eq!(cfg.r_diag, vec![1.0, 1.0]);
        assert_eq!(
            cfg.safe_set,
            SafeSetSpec::Disk {
                center: [2.0, 0.0],
                radius: 0.5
            }
        );
    }

    #[test]
    fn rejects_unknown_keys_and_malformed_lines() {
        assert!(parse_config("bogus_key = 3\n").is_err());
        assert!(parse_config("just a line\n").is_err());
        assert!(parse_config("x0 = a,b\n").is_err());
    }
}
