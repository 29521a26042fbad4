//! N-1 branch outage study.
//!
//! For every in-service branch: take it out, build that topology's hot start
//! from a fresh AC base solve, draw a dataset for it, score the inherited
//! intact-case parameter sets on the dataset's test scenarios, and fit
//! tailored parameters on its training scenarios.
//!
//! Inherited sets lose the outaged branch's `b` and `rho` entries. Their
//! `gamma` is reused unchanged.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ac::{solve_ac, InjectionSpec, SolverOptions};
use crate::dc::{cold_start, hot_start, ColdVariant, DcParameters, Provenance};
use crate::error::{Error, Result};
use crate::loss::{Evaluator, Subset};
use crate::network::{build_admittances, Network};
use crate::optim::{train, OptimizerConfig, Termination};
use crate::scenario::{generate, DEFAULT_SIGMA};
use crate::seed;

pub const GAMMA_NOTE: &str =
    "inherited parameter sets reuse the intact-case gamma unchanged; only the outaged branch's b and rho entries are dropped";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContingencyConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub sigma: f64,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for ContingencyConfig {
    fn default() -> Self {
        ContingencyConfig {
            n_train: 1000,
            n_test: 250,
            sigma: DEFAULT_SIGMA,
            seed: 0,
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// Intact-case parameter sets carried into every contingency.
#[derive(Debug, Clone)]
pub struct BaseParams {
    pub cold: DcParameters,
    pub cold_r0: DcParameters,
    pub hot: DcParameters,
    pub base_opt: DcParameters,
}

impl BaseParams {
    /// Cold starts and hot start of `net`, plus a caller-supplied optimized set.
    pub fn for_network(net: &Network, base_opt: DcParameters) -> Result<BaseParams> {
        let adm = build_admittances(net);
        let base = solve_ac(net, &adm, &InjectionSpec::from_network(net), &SolverOptions::default())?;
        Ok(BaseParams {
            cold: cold_start(net, &adm, ColdVariant::WithR),
            cold_r0: cold_start(net, &adm, ColdVariant::RZero),
            hot: hot_start(net, &adm, &base)?,
            base_opt,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyResult {
    pub branch_id: usize,
    pub islanding: bool,
    /// Set when the contingency could not be evaluated for another reason.
    pub failure: Option<String>,
    pub loss_cold: Option<f64>,
    pub loss_cold_r0: Option<f64>,
    pub loss_hot: Option<f64>,
    pub loss_base_opt: Option<f64>,
    pub loss_tailored: Option<f64>,
    /// Test-set loss of this topology's own hot start.
    pub loss_contingency_hot: Option<f64>,
    /// Which start the tailored fit began from.
    pub tailored_init: Option<String>,
    pub tailored_iterations: Option<usize>,
    pub tailored_termination: Option<Termination>,
    pub rejected_scenarios: Option<usize>,
}

impl ContingencyResult {
    fn empty(branch_id: usize) -> Self {
        ContingencyResult {
            branch_id,
            islanding: false,
            failure: None,
            loss_cold: None,
            loss_cold_r0: None,
            loss_hot: None,
            loss_base_opt: None,
            loss_tailored: None,
            loss_contingency_hot: None,
            tailored_init: None,
            tailored_iterations: None,
            tailored_termination: None,
            rejected_scenarios: None,
        }
    }

    pub fn is_evaluated(&self) -> bool {
        !self.islanding && self.failure.is_none()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContingencyStudy {
    pub case_checksum: String,
    pub config: ContingencyConfig,
    pub gamma_note: String,
    pub results: Vec<ContingencyResult>,
}

impl ContingencyStudy {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("study serializes")
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(
            w,
            "branch_id,islanding,failure,loss_cold,loss_cold_r0,loss_hot,loss_base_opt,loss_tailored,loss_contingency_hot,tailored_init"
        )?;
        let cell = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
        for r in &self.results {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.branch_id,
                r.islanding,
                r.failure.as_deref().unwrap_or("").replace(',', ";"),
                cell(r.loss_cold),
                cell(r.loss_cold_r0),
                cell(r.loss_hot),
                cell(r.loss_base_opt),
                cell(r.loss_tailored),
                cell(r.loss_contingency_hot),
                r.tailored_init.as_deref().unwrap_or(""),
            )?;
        }
        Ok(())
    }

    /// Mean over evaluated contingencies of `1 - tailored / cold`.
    pub fn mean_improvement_over_cold(&self) -> Option<f64> {
        let v: Vec<f64> = self
            .results
            .iter()
            .filter_map(|r| Some(1.0 - r.loss_tailored? / r.loss_cold?))
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

pub fn run_contingency_study(
    net: &Network,
    base: &BaseParams,
    cfg: &ContingencyConfig,
) -> Result<ContingencyStudy> {
    if cfg.n_train == 0 || cfg.n_test == 0 {
        return Err(Error::InvalidArgument("contingency datasets need training and test scenarios".into()));
    }
    cfg.optimizer.validate()?;
    for p in [&base.cold, &base.cold_r0, &base.hot, &base.base_opt] {
        p.validate(net)?;
    }
    let ids = net.in_service_branch_ids();
    let results = ids
        .par_iter()
        .map(|&id| match one_contingency(net, base, cfg, id) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("contingency {id} failed: {e}");
                ContingencyResult { failure: Some(e.to_string()), ..ContingencyResult::empty(id) }
            }
        })
        .collect();
    Ok(ContingencyStudy {
        case_checksum: net.checksum(),
        config: *cfg,
        gamma_note: GAMMA_NOTE.into(),
        results,
    })
}

fn one_contingency(
    net: &Network,
    base: &BaseParams,
    cfg: &ContingencyConfig,
    branch_id: usize,
) -> Result<ContingencyResult> {
    let out = match net.remove_branch(branch_id) {
        Ok(n) => n,
        Err(Error::Islanding { .. }) => {
            log::info!("contingency {branch_id}: islanding, skipped");
            return Ok(ContingencyResult { islanding: true, ..ContingencyResult::empty(branch_id) });
        }
        Err(e) => return Err(e),
    };
    let adm = build_admittances(&out);
    let base_ac = solve_ac(&out, &adm, &InjectionSpec::from_network(&out), &SolverOptions::default())?;
    if !base_ac.converged {
        return Err(Error::NotConverged {
            iterations: base_ac.iterations,
            max_mismatch: base_ac.max_mismatch,
        });
    }
    let hot_c = hot_start(&out, &adm, &base_ac)?;
    let n = cfg.n_train + cfg.n_test;
    let split = cfg.n_train as f64 / n as f64;
    let data = generate(&out, &adm, n, cfg.sigma, seed::derive(cfg.seed, "contingency", branch_id as u64), split)?;
    let train_ev = Evaluator::new(&out, &data, Subset::Train)?;
    let test_ev = Evaluator::with_model(train_ev.model().clone(), &data, data.indices(Subset::Test))?;

    let inherited = [
        ("COLD", base.cold.project_to(&out)?),
        ("COLD_R0", base.cold_r0.project_to(&out)?),
        ("HOT", base.hot.project_to(&out)?),
        ("OPTIMIZED", base.base_opt.project_to(&out)?),
    ];
    // Projected sets may have a singular B' after the outage; they then have no score.
    let score = |p: &DcParameters| test_ev.loss(p).ok().map(|l| l.sq_two_norm);
    let mut r = ContingencyResult::empty(branch_id);
    r.loss_cold = score(&inherited[0].1);
    r.loss_cold_r0 = score(&inherited[1].1);
    r.loss_hot = score(&inherited[2].1);
    r.loss_base_opt = score(&inherited[3].1);
    r.loss_contingency_hot = score(&hot_c);
    r.rejected_scenarios = Some(data.rejected_count);

    // start from whichever candidate fits the training scenarios best
    let (init_name, init) = std::iter::once(("CONTINGENCY_HOT", &hot_c))
        .chain(inherited.iter().map(|(n, p)| (*n, p)))
        .filter_map(|(n, p)| train_ev.loss(p).ok().map(|l| (n, p, l.sq_two_norm)))
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .map(|(n, p, _)| (n, p.clone()))
        .ok_or_else(|| Error::InvalidArgument("no usable starting point".into()))?;
    let report = train(&init, &train_ev, Some(&test_ev), &cfg.optimizer, Provenance::OptimizedTailored)?;
    r.loss_tailored = report.final_test.map(|l| l.sq_two_norm);
    r.tailored_init = Some(init_name.into());
    r.tailored_iterations = Some(report.iterations);
    r.tailored_termination = Some(report.termination);
    log::info!(
        "contingency {branch_id}: base-opt {:?}, tailored {:?} from {init_name}",
        r.loss_base_opt,
        r.loss_tailored
    );
    Ok(r)
}
