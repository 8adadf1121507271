//! The comparison suite: every column's scenarios over a range of seeds.

use super::meta::{engine_meta, COLUMNS};
use super::report::{Cell, ColumnReport, ConfigReport, ReportMatrix};
use super::scenarios::shipped;
use super::{run_seeded, HarnessError, ScenarioConfig};
use crate::checkers::Criterion;

/// Apply `f` to every item, in parallel when the `parallel` feature is on.
/// Results keep the input order either way.
pub fn map_runs<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Which criteria a run violated, in [`Criterion::ALL`] order.
pub fn violations(cfg: &ScenarioConfig, seed: u64) -> Result<[bool; 4], HarnessError> {
    let mut cfg = cfg.clone();
    cfg.checks = "all".into();
    let out = run_seeded(&cfg, seed)?;
    Ok(Criterion::ALL.map(|c| out.violated(c)))
}

/// Violation counts of one scenario over `runs` consecutive seeds.
pub fn sweep(cfg: &ScenarioConfig, seed_base: u64, runs: usize) -> Result<[Cell; 4], HarnessError> {
    let seeds: Vec<u64> = (0..runs as u64).map(|i| seed_base + i).collect();
    let results = map_runs(&seeds, |s| violations(cfg, *s));
    let mut cells = [Cell::default(); 4];
    for r in results {
        let v = r?;
        for (cell, bad) in cells.iter_mut().zip(v) {
            cell.runs += 1;
            cell.violations += usize::from(bad);
        }
    }
    Ok(cells)
}

fn add(into: &mut [Cell; 4], from: &[Cell; 4]) {
    for (a, b) in into.iter_mut().zip(from) {
        a.violations += b.violations;
        a.runs += b.runs;
    }
}

/// Run every column's scenarios for `runs` seeds starting at `seed_base`.
pub fn run_table2(runs: usize, seed_base: u64) -> Result<ReportMatrix, HarnessError> {
    // One flat job list so the parallel pool sees all runs at once.
    let mut jobs: Vec<(usize, usize, ScenarioConfig, u64)> = Vec::new();
    for (ci, col) in COLUMNS.iter().enumerate() {
        for (ki, sc) in col.configs.iter().enumerate() {
            for name in sc.scenarios {
                let cfg = shipped(name).ok_or_else(|| HarnessError::Config(format!("no shipped scenario {name:?}")))?;
                for i in 0..runs as u64 {
                    jobs.push((ci, ki, cfg.clone(), seed_base + i));
                }
            }
        }
    }
    let results = map_runs(&jobs, |(_, _, cfg, seed)| violations(cfg, *seed));

    let mut per_config: Vec<Vec<[Cell; 4]>> = COLUMNS.iter().map(|c| vec![[Cell::default(); 4]; c.configs.len()]).collect();
    for ((ci, ki, _, _), r) in jobs.iter().zip(results) {
        let v = r?;
        let mut one = [Cell::default(); 4];
        for (cell, bad) in one.iter_mut().zip(v) {
            cell.runs = 1;
            cell.violations = usize::from(bad);
        }
        add(&mut per_config[*ci][*ki], &one);
    }

    let columns = COLUMNS
        .iter()
        .zip(per_config)
        .map(|(col, cells)| {
            let mut total = [Cell::default(); 4];
            let configs = col
                .configs
                .iter()
                .zip(cells)
                .map(|(sc, c)| {
                    add(&mut total, &c);
                    ConfigReport {
                        label: sc.label.to_string(),
                        protocol: sc.protocol.name().to_string(),
                        cells: c,
                    }
                })
                .collect();
            ColumnReport {
                name: col.name.to_string(),
                configs,
                cells: total,
                descriptive: engine_meta(col.configs[0].protocol).rows().map(String::from),
            }
        })
        .collect();
    Ok(ReportMatrix {
        runs_per_scenario: runs,
        seed_base,
        columns,
    })
}
