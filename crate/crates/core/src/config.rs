//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Lists are comma-separated. Every key is optional and falls back to the
//! default listed in [`ExperimentConfig::default`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::stability::PerturbTarget;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentId {
    Fig1a,
    Fig1b,
    Fig1c,
    Fig2,
    Table1,
    Identify,
    Verify,
    Simulate,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 8] = [
        ExperimentId::Fig1a,
        ExperimentId::Fig1b,
        ExperimentId::Fig1c,
        ExperimentId::Fig2,
        ExperimentId::Table1,
        ExperimentId::Identify,
        ExperimentId::Verify,
        ExperimentId::Simulate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentId::Fig1a => "fig1a",
            ExperimentId::Fig1b => "fig1b",
            ExperimentId::Fig1c => "fig1c",
            ExperimentId::Fig2 => "fig2",
            ExperimentId::Table1 => "table1",
            ExperimentId::Identify => "identify",
            ExperimentId::Verify => "verify",
            ExperimentId::Simulate => "simulate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }

    /// Stable tag used to derive per-experiment seeds.
    pub(crate) fn tag(&self) -> u64 {
        Self::ALL.iter().position(|e| e == self).unwrap() as u64 + 1
    }
}

/// State-equation activation selected by `activation` (with `leakage` for leaky ReLU).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Identity,
    LeakyRelu,
    Softplus,
}

impl ActivationKind {
    fn name(&self) -> &'static str {
        match self {
            ActivationKind::Identity => "identity",
            ActivationKind::LeakyRelu => "leaky_relu",
            ActivationKind::Softplus => "softplus",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" | "linear" => Some(ActivationKind::Identity),
            "leaky_relu" => Some(ActivationKind::LeakyRelu),
            "softplus" => Some(ActivationKind::Softplus),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentId>,
    pub n: usize,
    pub p: usize,
    pub t: usize,
    pub sigma2: f64,
    pub activation: ActivationKind,
    pub leakage: f64,
    /// Leakage grid for fig1a, fig2 and table1.
    pub lambdas: Vec<f64>,
    /// Noise-variance grid for fig1b.
    pub sigma2_grid: Vec<f64>,
    /// Trajectory lengths for fig1c.
    pub t_grid: Vec<usize>,
    pub reps: usize,
    pub trials: usize,
    pub fig2_reps: usize,
    /// Fig 2 draws one unstable plant per run (otherwise one per repetition).
    pub fig2_shared_system: bool,
    /// The shared Fig 2 plant is the first draw with `ρ(A)` at least this.
    pub fig2_min_radius: f64,
    pub horizon: usize,
    pub seed: u64,
    /// Learning rate `eta_scale / T` on the summed loss.
    pub eta_scale: f64,
    pub iterations: usize,
    /// Record every `record_every`-th iterate in curve CSVs.
    pub record_every: usize,
    pub churn: usize,
    /// Normalized error at which fig1a counts an iterate as converged.
    pub threshold: f64,
    pub dare_noise_var: f64,
    pub perturb: PerturbTarget,
    /// Eigenvalues of `A` placed outside the unit circle; `0` means `max(1, n/8)`.
    pub unstable: usize,
    pub margin: f64,
    /// Random starts for nonlinear operator norms.
    pub nl_starts: usize,
    pub opc_radius: f64,
    pub opc_probes: usize,
    pub opc_samples: usize,
    pub depth: usize,
    pub bound_c: f64,
    pub cov_tol: f64,
    pub stability_trials: usize,
    pub stability_horizon: usize,
    /// `0` uses every available core.
    pub workers: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: None,
            n: 80,
            p: 50,
            t: 2000,
            sigma2: 0.01,
            activation: ActivationKind::Softplus,
            leakage: 0.5,
            lambdas: vec![0.0, 0.5, 0.8, 1.0],
            sigma2_grid: vec![1e-4, 1e-2, 1.0],
            t_grid: vec![500, 1000, 2000, 4000],
            reps: 20,
            trials: 1000,
            fig2_reps: 500,
            fig2_shared_system: true,
            fig2_min_radius: 1.1,
            horizon: 100,
            seed: 0,
            eta_scale: 0.1,
            iterations: 1000,
            record_every: 10,
            churn: 1,
            threshold: 0.05,
            dare_noise_var: 0.001,
            perturb: PerturbTarget::Gain,
            unstable: 0,
            margin: 0.02,
            nl_starts: 16,
            opc_radius: 1.0,
            opc_probes: 12,
            opc_samples: 20_000,
            depth: 10,
            bound_c: 1.0,
            cov_tol: 0.05,
            stability_trials: 8,
            stability_horizon: 60,
            workers: 0,
            out: PathBuf::from("results"),
        }
    }
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str, line: usize) -> Result<T> {
    v.parse().map_err(|_| Error::Config {
        line,
        message: format!("`{key}`: cannot parse `{v}`"),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str, line: usize) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_num(key, s.trim(), line)).collect()
}

fn field(name: &str, message: impl Into<String>) -> Error {
    Error::ConfigField {
        field: name.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected `key = value`, got `{body}`"),
            })?;
            cfg.set(key.trim(), value.trim(), line)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Assigns one key; `line` is reported in errors.
    pub fn set(&mut self, key: &str, v: &str, line: usize) -> Result<()> {
        match key {
            "experiment" => {
                self.experiment = if v.is_empty() {
                    None
                } else {
                    Some(ExperimentId::parse(v).ok_or_else(|| Error::Config {
                        line,
                        message: format!("unknown experiment `{v}`"),
                    })?)
                }
            }
            "n" => self.n = parse_num(key, v, line)?,
            "p" => self.p = parse_num(key, v, line)?,
            "T" => self.t = parse_num(key, v, line)?,
            "sigma2" => self.sigma2 = parse_num(key, v, line)?,
            "activation" => {
                self.activation = ActivationKind::parse(v).ok_or_else(|| Error::Config {
                    line,
                    message: format!("unknown activation `{v}`"),
                })?
            }
            "leakage" => self.leakage = parse_num(key, v, line)?,
            "lambdas" => self.lambdas = parse_list(key, v, line)?,
            "sigma2_grid" => self.sigma2_grid = parse_list(key, v, line)?,
            "T_grid" => self.t_grid = parse_list(key, v, line)?,
            "reps" => self.reps = parse_num(key, v, line)?,
            "trials" => self.trials = parse_num(key, v, line)?,
            "fig2_reps" => self.fig2_reps = parse_num(key, v, line)?,
            "fig2_shared_system" => self.fig2_shared_system = parse_num(key, v, line)?,
            "fig2_min_radius" => self.fig2_min_radius = parse_num(key, v, line)?,
            "horizon" => self.horizon = parse_num(key, v, line)?,
            "seed" => self.seed = parse_num(key, v, line)?,
            "eta_scale" => self.eta_scale = parse_num(key, v, line)?,
            "iterations" => self.iterations = parse_num(key, v, line)?,
            "record_every" => self.record_every = parse_num(key, v, line)?,
            "churn" => self.churn = parse_num(key, v, line)?,
            "threshold" => self.threshold = parse_num(key, v, line)?,
            "dare_noise_var" => self.dare_noise_var = parse_num(key, v, line)?,
            "perturb" => {
                self.perturb = match v {
                    "gain" => PerturbTarget::Gain,
                    "riccati" => PerturbTarget::Riccati,
                    _ => {
                        return Err(Error::Config {
                            line,
                            message: format!("`perturb` must be `gain` or `riccati`, got `{v}`"),
                        })
                    }
                }
            }
            "unstable" => self.unstable = parse_num(key, v, line)?,
            "margin" => self.margin = parse_num(key, v, line)?,
            "nl_starts" => self.nl_starts = parse_num(key, v, line)?,
            "opc_radius" => self.opc_radius = parse_num(key, v, line)?,
            "opc_probes" => self.opc_probes = parse_num(key, v, line)?,
            "opc_samples" => self.opc_samples = parse_num(key, v, line)?,
            "depth" => self.depth = parse_num(key, v, line)?,
            "bound_c" => self.bound_c = parse_num(key, v, line)?,
            "cov_tol" => self.cov_tol = parse_num(key, v, line)?,
            "stability_trials" => self.stability_trials = parse_num(key, v, line)?,
            "stability_horizon" => self.stability_horizon = parse_num(key, v, line)?,
            "workers" => self.workers = parse_num(key, v, line)?,
            "out" => self.out = PathBuf::from(v),
            _ => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key `{key}`"),
                })
            }
        }
        Ok(())
    }

    /// Every key in parse order; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let exp = self.experiment.map_or("", |e| e.name());
        let perturb = match self.perturb {
            PerturbTarget::Gain => "gain",
            PerturbTarget::Riccati => "riccati",
        };
        let _ = writeln!(s, "experiment = {exp}");
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "p = {}", self.p);
        let _ = writeln!(s, "T = {}", self.t);
        let _ = writeln!(s, "sigma2 = {:?}", self.sigma2);
        let _ = writeln!(s, "activation = {}", self.activation.name());
        let _ = writeln!(s, "leakage = {:?}", self.leakage);
        let _ = writeln!(s, "lambdas = {}", list(&self.lambdas));
        let _ = writeln!(s, "sigma2_grid = {}", list(&self.sigma2_grid));
        let _ = writeln!(s, "T_grid = {}", list(&self.t_grid));
        let _ = writeln!(s, "reps = {}", self.reps);
        let _ = writeln!(s, "trials = {}", self.trials);
        let _ = writeln!(s, "fig2_reps = {}", self.fig2_reps);
        let _ = writeln!(s, "fig2_shared_system = {}", self.fig2_shared_system);
        let _ = writeln!(s, "fig2_min_radius = {:?}", self.fig2_min_radius);
        let _ = writeln!(s, "horizon = {}", self.horizon);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "eta_scale = {:?}", self.eta_scale);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "record_every = {}", self.record_every);
        let _ = writeln!(s, "churn = {}", self.churn);
        let _ = writeln!(s, "threshold = {:?}", self.threshold);
        let _ = writeln!(s, "dare_noise_var = {:?}", self.dare_noise_var);
        let _ = writeln!(s, "perturb = {perturb}");
        let _ = writeln!(s, "unstable = {}", self.unstable);
        let _ = writeln!(s, "margin = {:?}", self.margin);
        let _ = writeln!(s, "nl_starts = {}", self.nl_starts);
        let _ = writeln!(s, "opc_radius = {:?}", self.opc_radius);
        let _ = writeln!(s, "opc_probes = {}", self.opc_probes);
        let _ = writeln!(s, "opc_samples = {}", self.opc_samples);
        let _ = writeln!(s, "depth = {}", self.depth);
        let _ = writeln!(s, "bound_c = {:?}", self.bound_c);
        let _ = writeln!(s, "cov_tol = {:?}", self.cov_tol);
        let _ = writeln!(s, "stability_trials = {}", self.stability_trials);
        let _ = writeln!(s, "stability_horizon = {}", self.stability_horizon);
        let _ = writeln!(s, "workers = {}", self.workers);
        let _ = writeln!(s, "out = {}", self.out.display());
        s
    }

    pub fn activation_fn(&self) -> Activation {
        match self.activation {
            ActivationKind::Identity => Activation::Identity,
            ActivationKind::LeakyRelu => Activation::LeakyRelu(self.leakage),
            ActivationKind::Softplus => Activation::Softplus,
        }
    }

    pub fn unstable_count(&self) -> usize {
        if self.unstable == 0 {
            (self.n / 8).max(1)
        } else {
            self.unstable
        }
    }

    /// Field-level checks; the first violation is reported.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n", self.n),
            ("p", self.p),
            ("T", self.t),
            ("reps", self.reps),
            ("trials", self.trials),
            ("fig2_reps", self.fig2_reps),
            ("horizon", self.horizon),
            ("iterations", self.iterations),
            ("record_every", self.record_every),
            ("opc_probes", self.opc_probes),
            ("opc_samples", self.opc_samples),
            ("depth", self.depth),
            ("stability_trials", self.stability_trials),
            ("stability_horizon", self.stability_horizon),
        ];
        for (name, v) in positive {
            if v < 1 {
                return Err(field(name, "must be >= 1"));
            }
        }
        if self.unstable > self.n {
            return Err(field("unstable", format!("must not exceed n = {}", self.n)));
        }
        if self.churn >= self.t {
            return Err(field("churn", "must be smaller than T"));
        }
        let finite_nonneg = [
            ("sigma2", self.sigma2),
            ("dare_noise_var", self.dare_noise_var),
            ("margin", self.margin),
            ("fig2_min_radius", self.fig2_min_radius),
        ];
        for (name, v) in finite_nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(field(name, "must be finite and >= 0"));
            }
        }
        let finite_pos = [
            ("eta_scale", self.eta_scale),
            ("threshold", self.threshold),
            ("opc_radius", self.opc_radius),
            ("bound_c", self.bound_c),
            ("cov_tol", self.cov_tol),
        ];
        for (name, v) in finite_pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(field(name, "must be finite and > 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.leakage) {
            return Err(field("leakage", "must lie in [0, 1]"));
        }
        if self.lambdas.is_empty() {
            return Err(field("lambdas", "grid must be non-empty"));
        }
        if self.lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(field("lambdas", "leakages must lie in [0, 1]"));
        }
        if self.sigma2_grid.is_empty() {
            return Err(field("sigma2_grid", "grid must be non-empty"));
        }
        if self.sigma2_grid.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(field("sigma2_grid", "variances must be finite and >= 0"));
        }
        if self.t_grid.is_empty() {
            return Err(field("T_grid", "grid must be non-empty"));
        }
        if self.t_grid.iter().any(|&t| t <= self.churn) {
            return Err(field("T_grid", "every length must exceed churn"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!((c.n, c.p, c.reps, c.trials, c.fig2_reps, c.horizon), (80, 50, 20, 1000, 500, 100));
        assert_eq!(c.dare_noise_var, 0.001);
        assert!(c.experiment.is_none());
        c.validate().unwrap();
    }

    #[test]
    fn sigma2_round_trips() {
        let c = ExperimentConfig::parse("sigma2 = 0.01\n").unwrap();
        assert_eq!(c.sigma2, 0.01);
        assert_eq!(ExperimentConfig::parse(&c.serialize()).unwrap(), c);
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = ExperimentConfig::parse("# preset\n\nexperiment = fig1b # noise sweep\nT_grid = 10, 20\n").unwrap();
        assert_eq!(c.experiment, Some(ExperimentId::Fig1b));
        assert_eq!(c.t_grid, vec![10, 20]);
    }

    #[test]
    fn errors_carry_line_and_key() {
        match ExperimentConfig::parse("n = 3\nbogus = 1\n") {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("bogus"));
            }
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::parse("n = x") {
            Err(Error::Config { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(ExperimentConfig::parse("novalue"), Err(Error::Config { line: 1, .. })));
    }

    #[test]
    fn zero_reps_names_the_field() {
        let c = ExperimentConfig::parse("reps = 0").unwrap();
        match c.validate() {
            Err(Error::ConfigField { field, .. }) => assert_eq!(field, "reps"),
            other => panic!("{other:?}"),
        }
        let c = ExperimentConfig::parse("lambdas =").unwrap();
        assert!(matches!(c.validate(), Err(Error::ConfigField { field, .. }) if field == "lambdas"));
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(
            s2 in 0.0f64..10.0,
            n in 1usize..200,
            seed in any::<u64>(),
            grid in proptest::collection::vec(0.0f64..1.0, 1..5),
        ) {
            let c = ExperimentConfig { sigma2: s2, n, seed, lambdas: grid, ..Default::default() };
            prop_assert_eq!(ExperimentConfig::parse(&c.serialize()).unwrap(), c);
        }
    }
}
