//! Experiment configuration: a flat TOML table, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tubelight::stats::linspace;
use tubelight::wienerhopf::Scheme;

use crate::error::{CliError, CliResult};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "TUBELIGHT_OUT";
pub const DEFAULT_OUT: &str = "tubelight-out";
pub const DEFAULT_CENSOR_THRESHOLD: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate2d,
    Simulate3d,
    Gamma,
    Renewal,
    Ladder,
    Occupation,
    Brightness,
    WhSolve,
    Eye,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate2d => "simulate2d",
            Experiment::Simulate3d => "simulate3d",
            Experiment::Gamma => "gamma",
            Experiment::Renewal => "renewal",
            Experiment::Ladder => "ladder",
            Experiment::Occupation => "occupation",
            Experiment::Brightness => "brightness",
            Experiment::WhSolve => "wh-solve",
            Experiment::Eye => "eye",
        }
    }

    /// Keys this experiment reads, besides the common ones.
    fn keys(self) -> &'static [&'static str] {
        match self {
            Experiment::Simulate2d => &["s_values", "n_rays", "seed", "max_steps", "t_grid", "v_grid"],
            Experiment::Simulate3d => &["s_values", "n_rays", "seed", "max_steps", "r_grid"],
            Experiment::Gamma => &["s_values", "n_rays", "seed", "max_steps", "t_grid", "n_ladders"],
            Experiment::Renewal => &["n_rays", "seed", "max_steps", "model", "window", "n_bins"],
            Experiment::Ladder => &["n_rays", "seed", "max_steps", "model", "n_steps"],
            Experiment::Occupation => &["s_values", "n_rays", "seed", "max_steps", "model", "intervals"],
            Experiment::Brightness => &["s_values", "n_rays", "seed", "max_steps", "annuli"],
            Experiment::WhSolve => &[
                "kernel",
                "t",
                "decay_c",
                "decay_alpha",
                "forcing_csv",
                "s_max",
                "grid_step",
                "tol",
                "scheme",
                "seed",
                "max_steps",
                "oracle_ladders",
                "oracle_minus_window",
            ],
            Experiment::Eye => &["s_values", "n_rays", "seed", "max_steps", "t_grid", "y", "eps", "min_in_window"],
        }
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Strip2d,
    Cylinder3d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    U2d,
    U2dTilde,
    Decay,
    Zero,
    Tabulated,
}

/// Thread count: a positive integer or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "WorkersRepr", into = "WorkersRepr")]
pub enum Workers {
    #[default]
    Auto,
    Count(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WorkersRepr {
    Count(usize),
    Name(String),
}

impl TryFrom<WorkersRepr> for Workers {
    type Error = String;

    fn try_from(r: WorkersRepr) -> Result<Self, String> {
        match r {
            WorkersRepr::Count(0) => Err("workers must be positive".into()),
            WorkersRepr::Count(n) => Ok(Workers::Count(n)),
            WorkersRepr::Name(s) if s == "auto" => Ok(Workers::Auto),
            WorkersRepr::Name(s) => Err(format!("workers must be a positive integer or \"auto\", got {s:?}")),
        }
    }
}

impl From<Workers> for WorkersRepr {
    fn from(w: Workers) -> Self {
        match w {
            Workers::Auto => WorkersRepr::Name("auto".into()),
            Workers::Count(n) => WorkersRepr::Count(n),
        }
    }
}

impl Workers {
    pub fn threads(self) -> usize {
        match self {
            Workers::Auto => std::thread::available_parallelism().map_or(1, |n| n.get()),
            Workers::Count(n) => n,
        }
    }
}

/// One experiment run. Optional fields left unset get their defaults in
/// [`ExperimentConfig::resolve`]; the resolved form is what the manifest
/// echoes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_rays: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_grid: Option<Vec<f64>>,
    /// Step cap per walk; unset means the model default for each `s`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub workers: Workers,
    /// Censored fraction above which a run is reported as partial.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub censor_threshold: Option<f64>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<Model>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_ladders: Option<u64>,
    /// Single-step draws for the step-law checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_bins: Option<usize>,
    /// Relative intervals `(x1, x2)` in units of `s`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annuli: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_in_window: Option<u64>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Kernel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_alpha: Option<f64>,
    /// Two-column `(s, g)` CSV with a header row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forcing_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
    /// Ladder heights per measure for the renewal-route cross-check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_ladders: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_minus_window: Option<f64>,
}

/// Keys accepted by every experiment.
const COMMON_KEYS: &[&str] = &["experiment", "output_dir", "workers", "censor_threshold"];

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::config("config", e.message()))?;
        Self::from_table(table)
    }

    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_table(table: toml::Table) -> CliResult<Self> {
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
            let msg = e.message().to_string();
            let field = backticked(&msg).unwrap_or("config").to_string();
            CliError::config(field, msg)
        })
    }

    fn set_keys(&self) -> Vec<&'static str> {
        let mut keys = vec![];
        macro_rules! mark {
            ($($f:ident),*) => {$(if self.$f.is_some() { keys.push(stringify!($f)); })*};
        }
        mark!(
            s_values,
            n_rays,
            seed,
            t_grid,
            v_grid,
            r_grid,
            max_steps,
            model,
            n_ladders,
            n_steps,
            window,
            n_bins,
            intervals,
            annuli,
            y,
            eps,
            min_in_window,
            kernel,
            t,
            decay_c,
            decay_alpha,
            forcing_csv,
            s_max,
            grid_step,
            tol,
            scheme,
            oracle_ladders,
            oracle_minus_window
        );
        keys
    }

    /// Validate field by field and fill in defaults. `env_out` is the
    /// value of [`OUT_ENV`], used when no output directory was given.
    pub fn resolve(mut self, env_out: Option<PathBuf>) -> CliResult<Self> {
        let exp = self.experiment;
        for key in self.set_keys() {
            if !exp.keys().contains(&key) && !COMMON_KEYS.contains(&key) {
                return Err(CliError::config(key, format!("not used by experiment {exp}")));
            }
        }
        self.output_dir = Some(self.output_dir.take().or(env_out).unwrap_or_else(|| DEFAULT_OUT.into()));
        let threshold = *self.censor_threshold.get_or_insert(DEFAULT_CENSOR_THRESHOLD);
        if !(0.0..=1.0).contains(&threshold) {
            return Err(CliError::config("censor_threshold", "must lie in [0, 1]"));
        }
        if let Some(m) = self.max_steps {
            positive_int("max_steps", m)?;
        }
        let uses = |k: &str| exp.keys().contains(&k);
        if uses("s_values") {
            let s = self.s_values.as_deref().ok_or_else(|| required("s_values"))?;
            if s.is_empty() || s.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(CliError::config("s_values", "need a nonempty list of positive finite values"));
            }
        }
        if uses("n_rays") {
            positive_int("n_rays", self.n_rays.ok_or_else(|| required("n_rays"))?)?;
        }
        let needs_seed = uses("n_rays") || self.oracle_ladders.is_some();
        if needs_seed && self.seed.is_none() {
            return Err(required("seed"));
        }

        match exp {
            Experiment::Simulate2d => {
                let t = self.t_grid.get_or_insert_with(|| linspace(0.1, 1.0, 10));
                unit_grid("t_grid", t)?;
                let v = self.v_grid.get_or_insert_with(|| vec![0.25, 0.5, 0.75, 1.0]);
                unit_grid("v_grid", v)?;
            }
            Experiment::Simulate3d => unit_grid("r_grid", self.r_grid.get_or_insert_with(|| linspace(0.0, 1.0, 11)))?,
            Experiment::Gamma => {
                unit_grid("t_grid", self.t_grid.get_or_insert_with(|| linspace(0.0, 1.0, 21)))?;
                let n = *self.n_ladders.get_or_insert(10 * self.n_rays.unwrap_or(1));
                positive_int("n_ladders", n)?;
            }
            Experiment::Renewal => {
                self.model.ok_or_else(|| required("model"))?;
                let w = *self.window.get_or_insert(100.0);
                positive_real("window", w)?;
                if *self.n_bins.get_or_insert(400) == 0 {
                    return Err(CliError::config("n_bins", "must be positive"));
                }
            }
            Experiment::Ladder => {
                self.model.ok_or_else(|| required("model"))?;
                let n = *self.n_steps.get_or_insert(self.n_rays.unwrap_or(1));
                positive_int("n_steps", n)?;
            }
            Experiment::Occupation => {
                self.model.ok_or_else(|| required("model"))?;
                let iv = self.intervals.get_or_insert_with(|| vec![[-0.8, -0.2]]);
                if iv.is_empty() || iv.iter().any(|&[a, b]| !(a < b && b <= 0.0 && a.is_finite())) {
                    return Err(CliError::config("intervals", "each interval [x1, x2] needs x1 < x2 <= 0"));
                }
            }
            Experiment::Brightness => {
                let an = self.annuli.get_or_insert_with(|| vec![[0.2, 0.8]]);
                if an.is_empty() || an.iter().any(|&[a, b]| !(a > 0.0 && a <= b && b < 1.0)) {
                    return Err(CliError::config("annuli", "each annulus [r1, r2] needs 0 < r1 <= r2 < 1"));
                }
            }
            Experiment::Eye => {
                unit_grid("t_grid", self.t_grid.get_or_insert_with(|| linspace(0.0, 1.0, 21)))?;
                let y = self.y.ok_or_else(|| required("y"))?;
                let eps = self.eps.ok_or_else(|| required("eps"))?;
                if !(0.0 < eps && eps < y && y <= 1.0) {
                    return Err(CliError::config("eps", format!("need 0 < eps < y <= 1, got y = {y}, eps = {eps}")));
                }
                positive_int("min_in_window", *self.min_in_window.get_or_insert(100))?;
            }
            Experiment::WhSolve => self.resolve_wh()?,
        }
        Ok(self)
    }

    fn resolve_wh(&mut self) -> CliResult<()> {
        let kernel = self.kernel.ok_or_else(|| required("kernel"))?;
        let allowed: &[&str] = match kernel {
            Kernel::U2d | Kernel::U2dTilde => &["t"],
            Kernel::Decay => &["decay_c", "decay_alpha"],
            Kernel::Zero => &[],
            Kernel::Tabulated => &["forcing_csv"],
        };
        for (key, set) in [
            ("t", self.t.is_some()),
            ("decay_c", self.decay_c.is_some()),
            ("decay_alpha", self.decay_alpha.is_some()),
            ("forcing_csv", self.forcing_csv.is_some()),
        ] {
            if set && !allowed.contains(&key) {
                return Err(CliError::config(key, format!("not used by kernel {kernel:?}")));
            }
        }
        match kernel {
            Kernel::U2d | Kernel::U2dTilde => {
                let t = self.t.ok_or_else(|| required("t"))?;
                if !(0.0..=1.0).contains(&t) {
                    return Err(CliError::config("t", format!("must lie in [0, 1], got {t}")));
                }
            }
            Kernel::Decay => {
                let c = *self.decay_c.get_or_insert(1.0);
                if c.is_nan() || c < 0.0 {
                    return Err(CliError::config("decay_c", "must be nonnegative"));
                }
                positive_real("decay_alpha", *self.decay_alpha.get_or_insert(0.5))?;
            }
            Kernel::Tabulated => {
                self.forcing_csv.as_ref().ok_or_else(|| required("forcing_csv"))?;
            }
            Kernel::Zero => {}
        }
        let s_max = self.s_max.ok_or_else(|| required("s_max"))?;
        positive_real("s_max", s_max)?;
        let h = *self.grid_step.get_or_insert(0.25);
        positive_real("grid_step", h)?;
        if h > s_max {
            return Err(CliError::config("grid_step", "must not exceed s_max"));
        }
        positive_real("tol", *self.tol.get_or_insert(1e-6))?;
        self.scheme.get_or_insert(Scheme::Krylov);
        if let Some(n) = self.oracle_ladders {
            positive_int("oracle_ladders", n)?;
            let w = *self.oracle_minus_window.get_or_insert(4.0 * s_max);
            positive_real("oracle_minus_window", w)?;
        } else if self.oracle_minus_window.is_some() {
            return Err(CliError::config("oracle_minus_window", "only used together with oracle_ladders"));
        }
        Ok(())
    }

    pub fn output_dir(&self) -> &Path {
        self.output_dir.as_deref().unwrap_or(Path::new(DEFAULT_OUT))
    }

    pub fn censor_threshold(&self) -> f64 {
        self.censor_threshold.unwrap_or(DEFAULT_CENSOR_THRESHOLD)
    }
}

fn required(field: &str) -> CliError {
    CliError::config(field, "required but missing")
}

fn positive_int(field: &str, n: u64) -> CliResult<()> {
    if n == 0 {
        return Err(CliError::config(field, "must be positive"));
    }
    Ok(())
}

fn positive_real(field: &str, x: f64) -> CliResult<()> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(CliError::config(field, format!("must be positive and finite, got {x}")));
    }
    Ok(())
}

fn unit_grid(field: &str, grid: &[f64]) -> CliResult<()> {
    if grid.is_empty() || grid.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(CliError::config(field, "need a nonempty grid inside [0, 1]"));
    }
    Ok(())
}

fn backticked(msg: &str) -> Option<&str> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(&msg[start..start + len])
}
