//! TOML configuration. Every table is optional and every key defaults to the
//! library default; unknown keys are rejected.
//!
//! ```toml
//! seed = 7
//! out = "results"
//! threads = 4
//!
//! [simulate]
//! p = 50
//! r = 3
//! n = 20000
//! imbalance = [0.5, 0.5]      # beta column scaling; omit for the balanced model
//! initial = "stationary"      # "stationary" | "uniform" | a state index
//!
//! [estimate]
//! trajectory = "trajectory.txt"   # or: counts = "counts.csv"
//! estimator = "rank"              # empirical | nuclear | rank | spectral
//! r = 3
//!
//! [benchmark]
//! p = 50
//! r = 3
//! k_grid = [10, 20, 40, 80]
//! rolls = 10
//! estimators = ["empirical", "nuclear", "rank", "spectral"]
//! imbalance = [0.5, 0.5]
//! timing = false
//! plot = true
//!
//! [aggregate]
//! records = "trips.csv"
//! estimator = "rank"
//! r = 2
//! k = 2
//! min_visits = 1
//! restarts = 10
//!
//! [solver.lambda]
//! rule = "cv"                 # "cv" | "scaled" | "fixed"
//! value = 0.5                 # constant for "scaled", lambda for "fixed"
//! constants = [0.25, 0.5, 1.0, 2.0, 4.0]
//! folds = 3
//!
//! [solver.admm]               # sigma0 gamma tol max_iter gap_factor sigma_ratio sigma_factor sigma_every
//! [solver.pdc]                # alpha eta max_outer c_growth max_c_increases rank_tol
//!                             # inner_tol_start inner_tol_end descent_slack polish_rounds
//! ```

use std::path::{Path, PathBuf};

use lowrank_markov::admm::AdmmOptions;
use lowrank_markov::dc::PdcOptions;
use lowrank_markov::eval::benchmark::{LambdaRule, SolverOptions};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub estimate: EstimateSection,
    #[serde(default)]
    pub benchmark: BenchmarkSection,
    #[serde(default)]
    pub aggregate: AggregateSection,
    #[serde(default)]
    pub solver: SolverSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum Initial {
    Named(String),
    State(usize),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub p: Option<usize>,
    pub r: Option<usize>,
    pub n: Option<usize>,
    pub imbalance: Option<[f64; 2]>,
    pub initial: Option<Initial>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    pub trajectory: Option<PathBuf>,
    pub counts: Option<PathBuf>,
    pub estimator: Option<String>,
    pub r: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub p: Option<usize>,
    pub r: Option<usize>,
    pub k_grid: Option<Vec<f64>>,
    pub rolls: Option<usize>,
    pub estimators: Option<Vec<String>>,
    pub imbalance: Option<[f64; 2]>,
    pub timing: Option<bool>,
    pub plot: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateSection {
    pub records: Option<PathBuf>,
    pub estimator: Option<String>,
    pub r: Option<usize>,
    pub k: Option<usize>,
    pub min_visits: Option<u64>,
    pub restarts: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default)]
    pub lambda: LambdaSection,
    #[serde(default)]
    pub admm: AdmmSection,
    #[serde(default)]
    pub pdc: PdcSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSection {
    pub rule: Option<String>,
    pub value: Option<f64>,
    pub constants: Option<Vec<f64>>,
    pub folds: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmmSection {
    pub sigma0: Option<f64>,
    pub gamma: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub gap_factor: Option<f64>,
    pub sigma_ratio: Option<f64>,
    pub sigma_factor: Option<f64>,
    pub sigma_every: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdcSection {
    pub alpha: Option<f64>,
    pub eta: Option<f64>,
    pub max_outer: Option<usize>,
    pub c_growth: Option<f64>,
    pub max_c_increases: Option<usize>,
    pub rank_tol: Option<f64>,
    pub inner_tol_start: Option<f64>,
    pub inner_tol_end: Option<f64>,
    pub descent_slack: Option<f64>,
    pub polish_rounds: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

fn set<T: Copy>(dst: &mut T, src: Option<T>) {
    if let Some(v) = src {
        *dst = v;
    }
}

impl AdmmSection {
    pub fn apply(&self, o: &mut AdmmOptions) {
        set(&mut o.sigma0, self.sigma0);
        set(&mut o.gamma, self.gamma);
        set(&mut o.tol, self.tol);
        set(&mut o.max_iter, self.max_iter);
        if self.gap_factor.is_some() {
            o.gap_factor = self.gap_factor;
        }
        set(&mut o.sigma_ratio, self.sigma_ratio);
        set(&mut o.sigma_factor, self.sigma_factor);
        set(&mut o.sigma_every, self.sigma_every);
    }
}

impl PdcSection {
    pub fn apply(&self, o: &mut PdcOptions) {
        set(&mut o.alpha, self.alpha);
        set(&mut o.eta, self.eta);
        set(&mut o.max_outer, self.max_outer);
        set(&mut o.c_growth, self.c_growth);
        set(&mut o.max_c_increases, self.max_c_increases);
        set(&mut o.rank_tol, self.rank_tol);
        set(&mut o.inner_tol_start, self.inner_tol_start);
        set(&mut o.inner_tol_end, self.inner_tol_end);
        set(&mut o.descent_slack, self.descent_slack);
        set(&mut o.polish_rounds, self.polish_rounds);
    }
}

impl SolverSection {
    /// Library defaults overlaid with the configured values. The ADMM table
    /// applies both to the nuclear-norm solver and to the inner solves of the
    /// rank-constrained method.
    pub fn options(&self) -> Result<SolverOptions, CliError> {
        let mut out = SolverOptions::default();
        self.admm.apply(&mut out.admm);
        self.admm.apply(&mut out.pdc.admm);
        self.pdc.apply(&mut out.pdc);
        out.admm.validate()?;
        out.lambda = self.lambda.rule()?;
        Ok(out)
    }
}

impl LambdaSection {
    pub fn rule(&self) -> Result<LambdaRule, CliError> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(CliError::Usage(format!("solver.lambda.{what} must be positive, got {v}")))
            }
        };
        let value = || {
            self.value
                .ok_or_else(|| CliError::Usage("solver.lambda.value is required for this rule".into()))
                .and_then(|v| positive(v, "value"))
        };
        match self.rule.as_deref().unwrap_or("cv") {
            "fixed" => Ok(LambdaRule::Fixed(value()?)),
            "scaled" => Ok(LambdaRule::Scaled(value()?)),
            "cv" => {
                let LambdaRule::CrossValidated { constants, folds } = LambdaRule::default() else {
                    unreachable!("default rule is cross-validation")
                };
                let constants = self.constants.clone().unwrap_or(constants);
                for &c in &constants {
                    positive(c, "constants")?;
                }
                let folds = self.folds.unwrap_or(folds);
                if folds < 2 {
                    return Err(CliError::Usage("solver.lambda.folds must be at least 2".into()));
                }
                Ok(LambdaRule::CrossValidated { constants, folds })
            }
            other => Err(CliError::Usage(format!("unknown lambda rule `{other}` (expected cv, scaled or fixed)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = FileConfig::parse("").unwrap();
        assert_eq!(cfg.solver.options().unwrap(), SolverOptions::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(FileConfig::parse("sed = 1").is_err());
        assert!(FileConfig::parse("[simulate]\nq = 3").is_err());
        assert!(FileConfig::parse("[solver.admm]\ntolerance = 1e-3").is_err());
    }

    #[test]
    fn overrides_reach_the_solvers() {
        let cfg = FileConfig::parse(
            "[solver.admm]\ntol = 1e-8\nmax_iter = 5\n[solver.pdc]\nalpha = 0.01\n[solver.lambda]\nrule = \"fixed\"\nvalue = 0.2\n",
        )
        .unwrap();
        let o = cfg.solver.options().unwrap();
        assert_eq!(o.admm.tol, 1e-8);
        assert_eq!(o.pdc.admm.max_iter, 5);
        assert_eq!(o.pdc.alpha, 0.01);
        assert_eq!(o.lambda, LambdaRule::Fixed(0.2));
    }

    #[test]
    fn lambda_rules_are_checked() {
        let rule = |s: &str| FileConfig::parse(s).unwrap().solver.lambda.rule();
        assert!(rule("[solver.lambda]\nrule = \"fixed\"").is_err());
        assert!(rule("[solver.lambda]\nrule = \"scaled\"\nvalue = -1.0").is_err());
        assert!(rule("[solver.lambda]\nrule = \"bogus\"").is_err());
        assert!(rule("[solver.lambda]\nfolds = 1").is_err());
        assert_eq!(rule("[solver.lambda]\nrule = \"scaled\"\nvalue = 0.5").unwrap(), LambdaRule::Scaled(0.5));
    }

    #[test]
    fn initial_state_forms() {
        let cfg = FileConfig::parse("[simulate]\ninitial = 3").unwrap();
        assert_eq!(cfg.simulate.initial, Some(Initial::State(3)));
        let cfg = FileConfig::parse("[simulate]\ninitial = \"uniform\"").unwrap();
        assert_eq!(cfg.simulate.initial, Some(Initial::Named("uniform".into())));
    }
}
