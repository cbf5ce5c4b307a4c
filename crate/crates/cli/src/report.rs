//! JSON run reports and their text rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use effcompute::analysis::{CutoffAnalysis, DoublingSummary, ShapleyAttribution};
use effcompute::dataset::{ExcludedRow, RowDiagnostic};
use effcompute::select::CvTable;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TOOL: &str = "effcompute";

#[derive(Debug, Clone, Serialize)]
pub struct ToolInfo {
    pub name: &'static str,
    pub version: &'static str,
}

impl Default for ToolInfo {
    fn default() -> Self {
        ToolInfo {
            name: TOOL,
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InputInfo {
    pub path: String,
    pub sha256: String,
    pub rows_read: usize,
    pub records_used: usize,
}

pub fn digest_file(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelInfo {
    pub id: String,
    pub delta: f64,
    pub data_mode: effcompute::dataset::DataMode,
    pub estimator: &'static str,
    pub n_params: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamRow {
    pub name: String,
    pub estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<ParamBootstrap>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamBootstrap {
    pub std: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSection {
    pub converged: bool,
    pub objective: f64,
    pub mse_nats2: f64,
    pub n_used: usize,
    pub evaluations: usize,
    pub parameters: Vec<ParamRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapInfo>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapInfo {
    pub replicates: usize,
    pub converged: usize,
    pub failed: usize,
    pub cluster_by_paper: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DoublingSection {
    /// "closed_form" or "optimal_scaling".
    pub method: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_flop: Option<f64>,
    #[serde(flatten)]
    pub summary: DoublingSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidateSection {
    pub rows_read: usize,
    pub valid: usize,
    pub skipped: usize,
    pub excluded: usize,
    pub warnings: usize,
    pub diagnostics: Vec<RowDiagnostic>,
    pub excluded_rows: Vec<ExcludedRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransformerCegSection {
    pub budget_flop: f64,
    pub year: f64,
    /// sigma(gamma_t): factor on the reducible loss of transformers.
    pub multiplier: f64,
    pub ceg_common_scale: Option<f64>,
    pub ceg_reoptimized: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChinchillaCegSection {
    pub budget_flop: f64,
    pub method: effcompute::analysis::AllocationGainMethod,
    pub ceg: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GainSection {
    pub years: f64,
    pub t_c_months: f64,
    /// Multiplier on physical compute.
    pub gain: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AnalysisSections {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shapley: Option<ShapleyAttribution>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ceg_transformer: Option<TransformerCegSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ceg_chinchilla: Option<ChinchillaCegSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<CutoffAnalysis>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<GainSection>,
}

impl AnalysisSections {
    pub fn is_empty(&self) -> bool {
        self.shapley.is_none()
            && self.ceg_transformer.is_none()
            && self.ceg_chinchilla.is_none()
            && self.cutoff.is_none()
            && self.gain.is_none()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub tool: ToolInfo,
    pub command: &'static str,
    pub seed: u64,
    /// Units of the numeric fields, keyed by field-name suffix or name.
    pub units: BTreeMap<&'static str, &'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<InputInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validate: Option<ValidateSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doubling_times: Option<DoublingSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loocv: Option<CvTable>,
    #[serde(skip_serializing_if = "AnalysisSections::is_empty")]
    pub analysis: AnalysisSections,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn units() -> BTreeMap<&'static str, &'static str> {
    BTreeMap::from([
        ("*_months", "calendar months"),
        ("*_flop", "floating-point operations"),
        ("*_nats2", "squared nats (loss residuals)"),
        ("loss", "nats per token"),
        ("objective", "mean squared residual in nats² plus delta times the L1 norm"),
        ("parameters", "dimensionless; year rates per year"),
        ("ceg*", "multiplier on training compute"),
        ("gain", "multiplier on training compute"),
        ("years", "calendar years"),
        ("wall_clock_seconds", "seconds"),
        ("shapley.values", "perplexity or loss drop, per the space field"),
    ])
}

impl RunReport {
    pub fn new(command: &'static str, seed: u64) -> RunReport {
        RunReport {
            tool: ToolInfo::default(),
            command,
            seed,
            units: units(),
            input: None,
            model: None,
            validate: None,
            fit: None,
            doubling_times: None,
            loocv: None,
            analysis: AnalysisSections::default(),
            wall_clock_seconds: None,
            warnings: Vec::new(),
            error: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {} ({}), seed {}", self.tool.name, self.command, self.tool.version, self.seed);
        if let Some(i) = &self.input {
            let _ = writeln!(out, "input {} sha256 {}", i.path, i.sha256);
            let _ = writeln!(out, "rows read {}, records used {}", i.rows_read, i.records_used);
        }
        if let Some(m) = &self.model {
            let _ = writeln!(
                out,
                "model {} delta {} ({} parameters, {}, {:?})",
                m.id, m.delta, m.n_params, m.estimator, m.data_mode
            );
        }
        if let Some(v) = &self.validate {
            let _ = writeln!(
                out,
                "valid {}  skipped {}  excluded {}  warnings {}",
                v.valid, v.skipped, v.excluded, v.warnings
            );
            for d in &v.diagnostics {
                let _ = writeln!(out, "  line {:>5} {:?}: {}", d.line, d.severity, d.reason);
            }
        }
        if let Some(f) = &self.fit {
            out.push('\n');
            let _ = writeln!(
                out,
                "{:<18}{:>12}{:>12}{:>12}{:>12}",
                "parameter", "estimate", "s.e.", "2.5%", "97.5%"
            );
            for p in &f.parameters {
                match &p.bootstrap {
                    Some(b) => {
                        let _ = writeln!(
                            out,
                            "{:<18}{:>12.4}{:>12.4}{:>12.4}{:>12.4}",
                            p.name, p.estimate, b.std, b.q025, b.q975
                        );
                    }
                    None => {
                        let _ = writeln!(out, "{:<18}{:>12.4}", p.name, p.estimate);
                    }
                }
            }
            let _ = writeln!(
                out,
                "mse {:.6} nats², objective {:.6}, converged {}",
                f.mse_nats2, f.objective, f.converged
            );
        }
        if let Some(d) = &self.doubling_times {
            out.push('\n');
            let _ = writeln!(out, "doubling times in months ({})", d.method);
            write_doubling(&mut out, &d.summary);
        }
        if let Some(t) = &self.loocv {
            out.push('\n');
            let _ = writeln!(out, "held-out mean squared error (nats²), {} records", t.n_records);
            out.push_str(&t.to_text());
            if let Some(b) = t.best() {
                let _ = writeln!(out, "best: model {} delta {}", b.model, b.delta);
            }
        }
        let a = &self.analysis;
        if let Some(s) = &a.shapley {
            out.push('\n');
            let _ = writeln!(out, "shapley {} -> {} ({:?}), total {:.4}", s.old, s.new, s.space, s.total);
            for ((name, v), share) in s.players.iter().zip(s.values).zip(s.shares) {
                let _ = writeln!(out, "  {:<22}{:>12.4}{:>9.1}%", name, v, 100.0 * share);
            }
        }
        if let Some(c) = &a.ceg_transformer {
            out.push('\n');
            let _ = writeln!(
                out,
                "transformer at {:e} FLOP: multiplier {:.4}, CEG {} (common scale), {} (reoptimised)",
                c.budget_flop,
                c.multiplier,
                opt(c.ceg_common_scale),
                opt(c.ceg_reoptimized)
            );
        }
        if let Some(c) = &a.ceg_chinchilla {
            out.push('\n');
            let _ = writeln!(out, "kaplan -> chinchilla at {:e} FLOP: CEG {:.3}", c.budget_flop, c.ceg);
        }
        if let Some(c) = &a.cutoff {
            out.push('\n');
            let _ = writeln!(
                out,
                "cutoff {} ({} before, {} after, model {})",
                c.cutoff_year, c.n_pre, c.n_post, c.model
            );
            for (label, side) in [("before", &c.pre), ("after", &c.post)] {
                match side {
                    Some(s) => {
                        let _ = writeln!(out, " {label}:");
                        write_doubling(&mut out, s);
                    }
                    None => {
                        let _ = writeln!(out, " {label}: undefined");
                    }
                }
            }
        }
        if let Some(g) = &a.gain {
            out.push('\n');
            let _ = writeln!(
                out,
                "{} years at T_C = {:.2} months: gain {:.4e}",
                g.years, g.t_c_months, g.gain
            );
        }
        if let Some(t) = self.wall_clock_seconds {
            let _ = writeln!(out, "\nwall clock {t:.2} s");
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        if let Some(e) = &self.error {
            let _ = writeln!(out, "error: {e}");
        }
        out
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.3}"))
}

fn months(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.2}")
    } else {
        "inf".into()
    }
}

fn write_doubling(out: &mut String, s: &DoublingSummary) {
    let p = &s.point;
    let _ = write!(
        out,
        "  T_N {:>9}  T_D {:>9}  T_C {:>9}",
        months(p.t_n),
        months(p.t_d),
        months(p.t_c)
    );
    out.push('\n');
    if let Some(q) = &s.quantiles {
        for (i, prob) in q.probs.iter().enumerate() {
            let _ = writeln!(
                out,
                "  q{:<5} T_N {:>9}  T_D {:>9}  T_C {:>9}",
                prob,
                months(q.t_n[i]),
                months(q.t_d[i]),
                months(q.t_c[i])
            );
        }
    }
}
