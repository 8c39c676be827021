//! Experiment configuration: INI-style sections of `key=value` lines, or
//! the same structure as JSON.

use serde::{Deserialize, Serialize};

use crate::analysis::ClassifyOptions;
use crate::error::{Error, Result};
use crate::io::{num, parse_num};
use crate::nonlinearity::Nonlinearity;
use crate::pde::{Grid, InitialData, SolverConfig, TimeScheme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisToggles {
    pub classify: bool,
    pub rescaling: bool,
    pub intersections: bool,
    pub c_min: f64,
    pub spread: f64,
}

impl Default for AnalysisToggles {
    fn default() -> Self {
        let c = ClassifyOptions::default();
        Self { classify: true, rescaling: false, intersections: false, c_min: c.c_min, spread: c.spread }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub nonlinearity: String,
    pub n: u32,
    pub radius: f64,
    /// Boundary value; `None` takes it from the initial data.
    pub k: Option<f64>,
    pub initial: String,
    pub cells: usize,
    pub solver: SolverConfig,
    pub analysis: AnalysisToggles,
    pub output: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            nonlinearity: "exp".into(),
            n: 5,
            radius: 1.0,
            k: Some(0.0),
            initial: "bump:A=10,m=2".into(),
            cells: 1000,
            solver: SolverConfig::default(),
            analysis: AnalysisToggles::default(),
            output: None,
        }
    }
}

fn parse_bool(s: &str) -> Result<bool> {
    match s.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        t => Err(Error::Spec(format!("not a boolean: '{t}'"))),
    }
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    match s.trim() {
        "auto" | "none" | "" => Ok(None),
        t => parse_num(t).map(Some),
    }
}

fn opt_str(v: Option<f64>, none: &str) -> String {
    v.map_or_else(|| none.to_string(), num)
}

impl ExperimentConfig {
    /// Parses INI text, or JSON when the first non-blank character is `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Spec(format!("config json: {e}")))?
        } else {
            Self::parse_ini(text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse_ini(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Spec(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let s = &mut c.solver;
            let a = &mut c.analysis;
            match (section.as_str(), key) {
                ("problem", "nonlinearity") => c.nonlinearity = value.to_string(),
                ("problem", "N") => c.n = value.parse().map_err(|_| Error::Spec(format!("bad N '{value}'")))?,
                ("problem", "R") => c.radius = parse_num(value)?,
                ("problem", "k") => c.k = parse_opt(value)?,
                ("problem", "initial") => c.initial = value.to_string(),
                ("grid", "M") => c.cells = value.parse().map_err(|_| Error::Spec(format!("bad M '{value}'")))?,
                ("solver", "scheme") => {
                    s.scheme = match value {
                        "explicit_rk" => TimeScheme::ExplicitRk,
                        "implicit_trapezoid" => TimeScheme::ImplicitTrapezoid,
                        _ => return Err(Error::Spec(format!("unknown scheme '{value}'"))),
                    }
                }
                ("solver", "safety") => s.safety = parse_num(value)?,
                ("solver", "dt_min") => s.dt_min = parse_num(value)?,
                ("solver", "m_max") => s.m_max = parse_opt(value)?,
                ("solver", "t_horizon") => s.t_horizon = parse_num(value)?,
                ("solver", "snapshot_dt") => s.snapshot_dt = parse_num(value)?,
                ("solver", "snapshot_df") => s.snapshot_df = parse_num(value)?,
                ("solver", "rtol") => s.rtol = parse_num(value)?,
                ("solver", "atol") => s.atol = parse_num(value)?,
                ("solver", "resolution_factor") => s.resolution_factor = parse_num(value)?,
                ("analysis", "classify") => a.classify = parse_bool(value)?,
                ("analysis", "rescaling") => a.rescaling = parse_bool(value)?,
                ("analysis", "intersections") => a.intersections = parse_bool(value)?,
                ("analysis", "c_min") => a.c_min = parse_num(value)?,
                ("analysis", "spread") => a.spread = parse_num(value)?,
                ("output", "dir") => c.output = (!value.is_empty()).then(|| value.to_string()),
                _ => return Err(Error::Spec(format!("line {}: unknown key '{key}' in [{section}]", lineno + 1))),
            }
        }
        Ok(c)
    }

    pub fn render(&self) -> String {
        let s = &self.solver;
        let a = &self.analysis;
        let scheme = match s.scheme {
            TimeScheme::ExplicitRk => "explicit_rk",
            TimeScheme::ImplicitTrapezoid => "implicit_trapezoid",
        };
        let mut out = String::new();
        out.push_str("[problem]\n");
        out.push_str(&format!("nonlinearity={}\n", self.nonlinearity));
        out.push_str(&format!("N={}\nR={}\nk={}\n", self.n, num(self.radius), opt_str(self.k, "auto")));
        out.push_str(&format!("initial={}\n\n[grid]\nM={}\n\n[solver]\n", self.initial, self.cells));
        out.push_str(&format!("scheme={scheme}\nsafety={}\ndt_min={}\n", num(s.safety), num(s.dt_min)));
        out.push_str(&format!("m_max={}\nt_horizon={}\n", opt_str(s.m_max, "auto"), num(s.t_horizon)));
        out.push_str(&format!("snapshot_dt={}\nsnapshot_df={}\n", num(s.snapshot_dt), num(s.snapshot_df)));
        out.push_str(&format!("rtol={}\natol={}\nresolution_factor={}\n\n", num(s.rtol), num(s.atol), num(s.resolution_factor)));
        out.push_str(&format!(
            "[analysis]\nclassify={}\nrescaling={}\nintersections={}\nc_min={}\nspread={}\n",
            a.classify,
            a.rescaling,
            a.intersections,
            num(a.c_min),
            num(a.spread)
        ));
        if let Some(o) = &self.output {
            out.push_str(&format!("\n[output]\ndir={o}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.nonlinearity()?;
        self.initial_data()?;
        self.grid()?;
        self.solver.validate()?;
        if self.k.is_some_and(|k| !(k >= 0.0)) {
            return Err(Error::Spec(format!("boundary value k must be nonnegative, got {:?}", self.k)));
        }
        Ok(())
    }

    pub fn nonlinearity(&self) -> Result<Nonlinearity> {
        self.nonlinearity.parse()
    }

    pub fn initial_data(&self) -> Result<InitialData> {
        self.initial.parse()
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.radius, self.cells, self.n)
    }

    pub fn classify_options(&self) -> ClassifyOptions {
        ClassifyOptions { c_min: self.analysis.c_min, spread: self.analysis.spread }
    }

    /// Sets `key=value` using the INI names, `section.key` or bare key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bare = key.rsplit('.').next().unwrap_or(key);
        let section = match bare {
            "nonlinearity" | "N" | "R" | "k" | "initial" => "problem",
            "M" => "grid",
            "classify" | "rescaling" | "intersections" | "c_min" | "spread" => "analysis",
            "dir" => "output",
            _ => "solver",
        };
        let mut text = self.render();
        text.push_str(&format!("\n[{section}]\n{bare}={value}\n"));
        *self = Self::parse(&text)?;
        Ok(())
    }
}
