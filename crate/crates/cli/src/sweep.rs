use std::fs;
use std::path::Path;

use crate::config::{apply_override, from_table, load_config, output_root, set_path, RunConfig};
use crate::error::{CliError, CliResult};
use crate::run::train_config;
use crate::ConfigArgs;

/// Flattens a grid file into `(dotted key, candidate values)` in key order.
pub fn parse_grid(table: &toml::Table) -> CliResult<Vec<(String, Vec<toml::Value>)>> {
    fn walk(prefix: &str, t: &toml::Table, out: &mut Vec<(String, Vec<toml::Value>)>) -> CliResult<()> {
        for (k, v) in t {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                toml::Value::Table(inner) => walk(&key, inner, out)?,
                toml::Value::Array(values) if !values.is_empty() => out.push((key, values.clone())),
                _ => return Err(CliError::config(format!("grid key `{key}` must map to a non-empty array"))),
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk("", table, &mut out)?;
    if out.is_empty() {
        return Err(CliError::config("the grid is empty"));
    }
    Ok(out)
}

/// Every combination, the last key varying fastest.
pub fn cartesian(grid: &[(String, Vec<toml::Value>)]) -> Vec<Vec<(String, toml::Value)>> {
    let mut points = vec![Vec::new()];
    for (key, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

struct Row {
    run: String,
    overrides: String,
    status: String,
    val_f1: Option<f64>,
    test_f1: Option<f64>,
}

pub fn cmd_sweep(args: &ConfigArgs, grid_path: &Path) -> CliResult<()> {
    let base = load_config(&args.config, &args.overrides())?;
    let text = fs::read_to_string(grid_path).map_err(|e| CliError::config(format!("{}: {e}", grid_path.display())))?;
    let grid: toml::Table = toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", grid_path.display())))?;
    let points = cartesian(&parse_grid(&grid)?);
    let root = args
        .out
        .clone()
        .or_else(|| base.output_dir.clone())
        .unwrap_or_else(|| output_root().join(format!("{}_sweep", base.name)));
    fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
    let base_table = match toml::Value::try_from(&base) {
        Ok(toml::Value::Table(t)) => t,
        _ => return Err(CliError::runtime("cannot re-encode the base config")),
    };

    let mut rows = Vec::with_capacity(points.len());
    for (i, point) in points.iter().enumerate() {
        let run = format!("run_{i:03}");
        let overrides = point.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";");
        log::info!("sweep {run}: {overrides}");
        let result = point_config(&base_table, point, &run, args.config.as_path()).and_then(|cfg| {
            let out = train_config(&cfg, &root.join(&run))?;
            let metrics: ecg_core::learn::MetricsReport = read_json(&out.dir.join(crate::run::METRICS_FILE))?;
            Ok((out.summary, metrics))
        });
        rows.push(match result {
            Ok((s, m)) => Row {
                run,
                overrides,
                status: "ok".into(),
                val_f1: s.val_f1,
                test_f1: (s.split == "test").then_some(m.f1),
            },
            Err(e) => {
                log::warn!("sweep {run} failed: {e}");
                Row {
                    run,
                    overrides,
                    status: format!("failed: {e}"),
                    val_f1: None,
                    test_f1: None,
                }
            }
        });
    }
    // failed and unscored runs sink to the bottom
    rows.sort_by(|a, b| {
        let key = |r: &Row| r.val_f1.unwrap_or(f64::NEG_INFINITY);
        key(b).total_cmp(&key(a))
    });
    let path = root.join("leaderboard.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let err = |e: csv::Error| CliError::runtime(format!("{}: {e}", path.display()));
    w.write_record(["rank", "run", "overrides", "val_f1", "test_f1", "status"]).map_err(err)?;
    for (rank, r) in rows.iter().enumerate() {
        w.write_record([(rank + 1).to_string(), r.run.clone(), r.overrides.clone(), fmt(r.val_f1), fmt(r.test_f1), r.status.clone()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    println!("leaderboard: {} ({} runs, {failed} failed)", path.display(), rows.len());
    Ok(())
}

fn point_config(base: &toml::Table, point: &[(String, toml::Value)], run: &str, origin: &Path) -> CliResult<RunConfig> {
    let mut t = base.clone();
    for (k, v) in point {
        set_path(&mut t, k, v.clone())?;
    }
    apply_override(&mut t, &format!("name=\"{run}\""))?;
    let cfg = from_table(t, origin)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_product_counts() {
        let g: toml::Table = toml::from_str("\"optim.lr\" = [0.1, 0.2]\n[preprocess]\nnormalization = [\"zscore\", \"logscale\", \"l2\"]\n").unwrap();
        let grid = parse_grid(&g).unwrap();
        assert_eq!(grid[0].0, "optim.lr");
        assert_eq!(grid[1].0, "preprocess.normalization");
        let pts = cartesian(&grid);
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[1][1].1.as_str(), Some("logscale"));
        assert!(parse_grid(&toml::from_str("a = 1").unwrap()).is_err());
    }
}
