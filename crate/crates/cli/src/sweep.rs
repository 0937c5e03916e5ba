//! Run many scenarios, one simulation per worker, results in input order.

use std::path::Path;
use std::time::Instant;

use lmb_sim_core::scenario::{run_scenario, Scenario};
use rayon::prelude::*;

use crate::config::{to_scenario, ScenarioConfig};
use crate::report::{RunFailure, RunOutcome};

/// A config point together with the scenario it resolved to.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ScenarioConfig,
    pub scenario: Result<Scenario, RunFailure>,
}

pub fn prepare(points: &[ScenarioConfig], dir: &Path) -> Vec<Prepared> {
    points
        .iter()
        .map(|c| Prepared {
            config: c.clone(),
            scenario: to_scenario(c, dir).map_err(|e| RunFailure {
                code: "E_CONFIG".into(),
                message: format!("{e:#}"),
            }),
        })
        .collect()
}

fn run_one(p: &Prepared) -> RunOutcome {
    let start = Instant::now();
    let result = match &p.scenario {
        Ok(sc) => run_scenario(sc).map_err(|e| RunFailure {
            code: e.code().into(),
            message: e.to_string(),
        }),
        Err(f) => Err(f.clone()),
    };
    RunOutcome {
        config: p.config.clone(),
        scenario: p.scenario.as_ref().ok().cloned(),
        result,
        wall_ms: start.elapsed().as_millis(),
    }
}

/// Failed points still produce an outcome; the sweep never stops early.
pub fn run_all(points: &[Prepared], parallel: bool) -> Vec<RunOutcome> {
    if parallel {
        points.par_iter().map(run_one).collect()
    } else {
        points.iter().map(run_one).collect()
    }
}
