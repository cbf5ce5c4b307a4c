//! The family of augmented scaling laws and their evaluation.
//!
//! Every specification is a sum of reducible terms of the form
//! `exp(const - rate·(Y - Y0) - exponent·ln(X / X0))`, optionally with an
//! additive irreducible part, a vocabulary term, or a transformer multiplier.
//! Parameters are packed into a flat slice in [`param_template`] order for the
//! optimiser; [`CompiledSpec`] resolves names to slice indices once.

use std::fmt;
use std::str::FromStr;

use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{effective_data, Benchmark, Dataset, EvalRecord, Norms, TrainingData};
use crate::error::{Error, Result};

/// Regularisation strengths swept during model selection.
pub const DELTA_GRID: [f64; 6] = [0.0, 0.001, 0.0025, 0.005, 0.01, 0.02];

/// Number of numbered specifications.
pub const NUMBERED_MODELS: u8 = 20;

pub mod names {
    pub const ALPHA_CONST: &str = "alpha_const";
    pub const ALPHA_CONST_PTB: &str = "alpha_const_ptb";
    pub const ALPHA_CONST_WT2: &str = "alpha_const_wt2";
    pub const ALPHA_YEAR: &str = "alpha_year";
    pub const ALPHA_YEAR_PTB: &str = "alpha_year_ptb";
    pub const ALPHA_YEAR_WT2: &str = "alpha_year_wt2";
    pub const ALPHA_PARAM: &str = "alpha_param";
    pub const ALPHA_PARAM_PTB: &str = "alpha_param_ptb";
    pub const ALPHA_PARAM_WT2: &str = "alpha_param_wt2";
    pub const ALPHA_PARAM_T: &str = "alpha_param_t";
    pub const ALPHA_PARAM_NT: &str = "alpha_param_nt";
    pub const ALPHA_RATE: &str = "alpha_rate";
    pub const ALPHA_COMPUTE: &str = "alpha_compute";
    pub const ALPHA_YEAR_POST: &str = "alpha_year_post";
    pub const BETA_CONST: &str = "beta_const";
    pub const BETA_CONST_PTB: &str = "beta_const_ptb";
    pub const BETA_CONST_WT2: &str = "beta_const_wt2";
    pub const BETA_YEAR: &str = "beta_year";
    pub const BETA_YEAR_PTB: &str = "beta_year_ptb";
    pub const BETA_YEAR_WT2: &str = "beta_year_wt2";
    pub const BETA_DATA: &str = "beta_data";
    pub const BETA_DATA_PTB: &str = "beta_data_ptb";
    pub const BETA_DATA_WT2: &str = "beta_data_wt2";
    pub const BETA_DATA_T: &str = "beta_data_t";
    pub const BETA_DATA_NT: &str = "beta_data_nt";
    pub const BETA_RATE: &str = "beta_rate";
    pub const BETA_YEAR_POST: &str = "beta_year_post";
    pub const GAMMA: &str = "gamma";
    pub const GAMMA_PTB: &str = "gamma_ptb";
    pub const GAMMA_WT2: &str = "gamma_wt2";
    pub const GAMMA_VOCAB: &str = "gamma_vocab";
    pub const GAMMA_T: &str = "gamma_t";
    pub const RHO: &str = "rho";
    pub const SIGMA2: &str = "sigma2";
}

use names::*;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Models 1 through 20 of the cross-validation table.
    Numbered(u8),
    /// Model 7 plus a benchmark-specific irreducible loss.
    Irreducible,
    /// Model 7 with the reducible sum scaled by sigmoid(gamma_t) for transformers.
    TransformerCeg,
    /// Model 7 with rate offsets active from `year` onwards.
    Cutoff { year: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// L1 regularisation strength.
    pub delta: f64,
    pub data: TrainingData,
}

impl ModelSpec {
    pub fn numbered(id: u8) -> Result<ModelSpec> {
        if !(1..=NUMBERED_MODELS).contains(&id) {
            return Err(Error::UnknownModel(id.to_string()));
        }
        let data = if id == 20 {
            TrainingData::tokens_seen(true)
        } else {
            TrainingData::default()
        };
        Ok(ModelSpec {
            kind: ModelKind::Numbered(id),
            delta: 0.0,
            data,
        })
    }

    pub fn main() -> ModelSpec {
        ModelSpec::numbered(7).expect("model 7 exists")
    }

    pub fn irreducible() -> ModelSpec {
        ModelSpec {
            kind: ModelKind::Irreducible,
            delta: 0.0,
            data: TrainingData::default(),
        }
    }

    pub fn transformer_ceg() -> ModelSpec {
        ModelSpec {
            kind: ModelKind::TransformerCeg,
            delta: 0.0,
            data: TrainingData::default(),
        }
    }

    pub fn cutoff(year: f64) -> ModelSpec {
        ModelSpec {
            kind: ModelKind::Cutoff { year },
            delta: 0.0,
            data: TrainingData::default(),
        }
    }

    pub fn with_delta(mut self, delta: f64) -> ModelSpec {
        self.delta = delta;
        self
    }

    pub fn with_data(mut self, data: TrainingData) -> ModelSpec {
        self.data = data;
        self
    }

    pub fn id(&self) -> String {
        match self.kind {
            ModelKind::Numbered(i) => i.to_string(),
            ModelKind::Irreducible => "irreducible".into(),
            ModelKind::TransformerCeg => "transformer_ceg".into(),
            ModelKind::Cutoff { year } => format!("cutoff@{year}"),
        }
    }

    /// Models without any algorithmic-progress terms.
    pub fn is_progress_free(&self) -> bool {
        matches!(self.kind, ModelKind::Numbered(16) | ModelKind::Numbered(17))
    }

    pub fn n_params(&self) -> usize {
        param_template(self).len()
    }

    pub fn compile(&self) -> CompiledSpec {
        CompiledSpec::new(*self)
    }

    /// Every spec with δ = 0 for ids 1..=20.
    pub fn all_numbered() -> Vec<ModelSpec> {
        (1..=NUMBERED_MODELS)
            .map(|i| ModelSpec::numbered(i).expect("valid id"))
            .collect()
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "irreducible" => Ok(ModelSpec::irreducible()),
            "transformer_ceg" | "transformer" => Ok(ModelSpec::transformer_ceg()),
            _ => {
                if let Some(year) = s.strip_prefix("cutoff@") {
                    let year: f64 = year
                        .parse()
                        .map_err(|_| Error::UnknownModel(s.to_owned()))?;
                    return Ok(ModelSpec::cutoff(year));
                }
                let id: u8 = s.parse().map_err(|_| Error::UnknownModel(s.to_owned()))?;
                ModelSpec::numbered(id)
            }
        }
    }
}

/// How the reducible terms combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Structure {
    TwoTerm,
    /// One year multiplier shared by both terms.
    HicksNeutral,
    /// A single term in 6·N·D.
    ComputeOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Features {
    structure: Structure,
    alpha_year: bool,
    beta_year: bool,
    alpha_const_bench: bool,
    beta_const_bench: bool,
    alpha_year_bench: bool,
    beta_year_bench: bool,
    exponents_bench: bool,
    transformer_exponents: bool,
    changing_exponents: bool,
    irreducible: bool,
    vocab: bool,
    transformer_multiplier: bool,
    post_rates: bool,
}

const BASE: Features = Features {
    structure: Structure::TwoTerm,
    alpha_year: true,
    beta_year: true,
    alpha_const_bench: false,
    beta_const_bench: false,
    alpha_year_bench: false,
    beta_year_bench: false,
    exponents_bench: false,
    transformer_exponents: false,
    changing_exponents: false,
    irreducible: false,
    vocab: false,
    transformer_multiplier: false,
    post_rates: false,
};

const MAIN: Features = Features {
    alpha_const_bench: true,
    beta_const_bench: true,
    ..BASE
};

fn features(kind: ModelKind) -> Features {
    match kind {
        ModelKind::Numbered(id) => match id {
            1 => BASE,
            2 => Features { alpha_year: false, ..BASE },
            3 => Features { beta_year: false, ..BASE },
            4 => Features { alpha_year_bench: true, ..BASE },
            5 => Features { beta_year_bench: true, ..BASE },
            6 => Features { alpha_year_bench: true, beta_year_bench: true, ..BASE },
            7 | 20 => MAIN,
            8 => Features { alpha_year: false, ..MAIN },
            9 => Features { beta_year: false, ..MAIN },
            10 => Features { alpha_year_bench: true, beta_year_bench: true, ..MAIN },
            11 => Features {
                alpha_year_bench: true,
                beta_year_bench: true,
                exponents_bench: true,
                ..MAIN
            },
            12 => Features {
                structure: Structure::HicksNeutral,
                beta_year: false,
                ..MAIN
            },
            13 => Features { transformer_exponents: true, ..MAIN },
            14 => Features {
                alpha_year: false,
                beta_year: false,
                changing_exponents: true,
                ..MAIN
            },
            15 => Features { changing_exponents: true, ..MAIN },
            16 => Features { alpha_year: false, beta_year: false, ..MAIN },
            17 => Features {
                alpha_year: false,
                beta_year: false,
                transformer_exponents: true,
                ..MAIN
            },
            18 => Features {
                structure: Structure::ComputeOnly,
                beta_year: false,
                beta_const_bench: false,
                ..MAIN
            },
            19 => Features { vocab: true, ..MAIN },
            _ => unreachable!("ids are validated on construction"),
        },
        ModelKind::Irreducible => Features { irreducible: true, ..MAIN },
        ModelKind::TransformerCeg => Features { transformer_multiplier: true, ..MAIN },
        ModelKind::Cutoff { .. } => Features { post_rates: true, ..MAIN },
    }
}

/// Ordered parameter names of `spec`; the packing order used by the optimiser.
pub fn param_template(spec: &ModelSpec) -> Vec<&'static str> {
    let f = features(spec.kind);
    let mut out = Vec::new();
    if f.irreducible {
        out.extend([GAMMA, GAMMA_PTB, GAMMA_WT2]);
    }
    if f.vocab {
        out.push(GAMMA_VOCAB);
    }
    out.push(ALPHA_CONST);
    if f.alpha_const_bench {
        out.extend([ALPHA_CONST_PTB, ALPHA_CONST_WT2]);
    }
    if f.alpha_year {
        out.push(ALPHA_YEAR);
        if f.alpha_year_bench {
            out.extend([ALPHA_YEAR_PTB, ALPHA_YEAR_WT2]);
        }
    }
    if f.post_rates {
        out.push(ALPHA_YEAR_POST);
    }
    if f.structure == Structure::ComputeOnly {
        out.push(ALPHA_COMPUTE);
        return out;
    }
    if f.transformer_exponents {
        out.extend([ALPHA_PARAM_NT, ALPHA_PARAM_T]);
    } else {
        out.push(ALPHA_PARAM);
        if f.exponents_bench {
            out.extend([ALPHA_PARAM_PTB, ALPHA_PARAM_WT2]);
        }
    }
    if f.changing_exponents {
        out.push(ALPHA_RATE);
    }
    out.push(BETA_CONST);
    if f.beta_const_bench {
        out.extend([BETA_CONST_PTB, BETA_CONST_WT2]);
    }
    if f.beta_year {
        out.push(BETA_YEAR);
        if f.beta_year_bench {
            out.extend([BETA_YEAR_PTB, BETA_YEAR_WT2]);
        }
    }
    if f.post_rates {
        out.push(BETA_YEAR_POST);
    }
    if f.transformer_exponents {
        out.extend([BETA_DATA_NT, BETA_DATA_T]);
    } else {
        out.push(BETA_DATA);
        if f.exponents_bench {
            out.extend([BETA_DATA_PTB, BETA_DATA_WT2]);
        }
    }
    if f.changing_exponents {
        out.push(BETA_RATE);
    }
    if f.transformer_multiplier {
        out.push(GAMMA_T);
    }
    out
}

/// Role of a parameter, used to pick initial values and simplex steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Constant,
    BenchmarkOffset,
    Rate,
    Exponent,
    Irreducible,
    Vocab,
    TransformerLogit,
    Correlation,
    Variance,
}

pub fn param_kind(name: &str) -> ParamKind {
    match name {
        ALPHA_CONST | BETA_CONST => ParamKind::Constant,
        ALPHA_CONST_PTB | ALPHA_CONST_WT2 | BETA_CONST_PTB | BETA_CONST_WT2 => {
            ParamKind::BenchmarkOffset
        }
        ALPHA_YEAR | BETA_YEAR | ALPHA_YEAR_PTB | ALPHA_YEAR_WT2 | BETA_YEAR_PTB
        | BETA_YEAR_WT2 | ALPHA_RATE | BETA_RATE | ALPHA_YEAR_POST | BETA_YEAR_POST => {
            ParamKind::Rate
        }
        GAMMA | GAMMA_PTB | GAMMA_WT2 => ParamKind::Irreducible,
        GAMMA_VOCAB => ParamKind::Vocab,
        GAMMA_T => ParamKind::TransformerLogit,
        RHO => ParamKind::Correlation,
        SIGMA2 => ParamKind::Variance,
        _ => ParamKind::Exponent,
    }
}

/// Named parameter values, kept in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector {
    entries: Vec<(String, f64)>,
}

impl ParamVector {
    pub fn new() -> ParamVector {
        ParamVector::default()
    }

    pub fn from_pairs<'a, I: IntoIterator<Item = (&'a str, f64)>>(pairs: I) -> ParamVector {
        let mut p = ParamVector::new();
        for (k, v) in pairs {
            p.set(k, v);
        }
        p
    }

    /// Unpacks `values` laid out in `template` order.
    pub fn from_packed(template: &[&str], values: &[f64]) -> ParamVector {
        ParamVector {
            entries: template
                .iter()
                .zip(values)
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
        }
    }

    /// All template parameters of `spec` set to `value`.
    pub fn filled(spec: &ModelSpec, value: f64) -> ParamVector {
        ParamVector::from_pairs(param_template(spec).into_iter().map(|k| (k, value)))
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    pub fn set(&mut self, name: &str, value: f64) {
        match self.entries.iter_mut().find(|(k, _)| k == name) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((name.to_owned(), value)),
        }
    }

    pub fn remove(&mut self, name: &str) -> Option<f64> {
        let pos = self.entries.iter().position(|(k, _)| k == name)?;
        Some(self.entries.remove(pos).1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Packs the values in `spec`'s template order. Likelihood parameters
    /// (rho, sigma2) are tolerated as extras; anything else is an error.
    pub fn pack(&self, spec: &ModelSpec) -> Result<Vec<f64>> {
        let template = param_template(spec);
        for (k, _) in &self.entries {
            if !template.contains(&k.as_str()) && k != RHO && k != SIGMA2 {
                return Err(Error::UnexpectedParameter {
                    model: spec.id(),
                    param: k.clone(),
                });
            }
        }
        template
            .iter()
            .map(|name| {
                self.get(name).ok_or_else(|| Error::MissingParameter {
                    model: spec.id(),
                    param: name.to_string(),
                })
            })
            .collect()
    }

    pub fn require(&self, name: &str) -> Result<f64> {
        self.get(name).ok_or_else(|| Error::MissingParameter {
            model: "<analysis>".into(),
            param: name.to_owned(),
        })
    }
}

impl Serialize for ParamVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.entries.len()))?;
        for (k, v) in &self.entries {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for ParamVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let map = std::collections::BTreeMap::<String, f64>::deserialize(deserializer)?;
        Ok(ParamVector {
            entries: map.into_iter().collect(),
        })
    }
}

/// Per-record inputs in the normalised form the formulas consume. The year
/// enters the parameter term and the data term separately so that the two
/// efficiency channels can be varied independently.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariates {
    pub x_ptb: f64,
    pub x_wt2: f64,
    pub x_t: f64,
    /// ln(N / N0)
    pub log_n: f64,
    /// ln(D / D0), D being the effective training data.
    pub log_d: f64,
    /// Years since Y0 in the parameter term.
    pub dy_param: f64,
    /// Years since Y0 in the data term.
    pub dy_data: f64,
    /// ln(Y) in the parameter and data terms, for time-varying exponents.
    pub ln_year_param: f64,
    pub ln_year_data: f64,
    pub post_param: f64,
    pub post_data: f64,
    pub ln_vocab: f64,
}

/// The inputs a prediction depends on, before normalisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inputs {
    pub benchmark: Benchmark,
    pub is_transformer: bool,
    pub params_n: f64,
    pub data_d: f64,
    pub year_param: f64,
    pub year_data: f64,
    pub vocab_size: Option<u64>,
}

impl Inputs {
    /// `None` when the record's effective data is undefined under `data`.
    pub fn from_record(rec: &EvalRecord, data: &TrainingData) -> Option<Inputs> {
        Some(Inputs {
            benchmark: rec.benchmark,
            is_transformer: rec.is_transformer,
            params_n: rec.params_n,
            data_d: effective_data(rec, data)?,
            year_param: rec.publication_year,
            year_data: rec.publication_year,
            vocab_size: rec.vocab_size,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Slot(Option<usize>);

impl Slot {
    #[inline]
    fn get(self, p: &[f64]) -> f64 {
        match self.0 {
            Some(i) => p[i],
            None => 0.0,
        }
    }

    fn present(self) -> bool {
        self.0.is_some()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Triple {
    base: Slot,
    ptb: Slot,
    wt2: Slot,
}

impl Triple {
    #[inline]
    fn get(&self, p: &[f64], x: &Covariates) -> f64 {
        self.base.get(p) + self.ptb.get(p) * x.x_ptb + self.wt2.get(p) * x.x_wt2
    }
}

/// A specification with parameter names resolved to packed indices.
#[derive(Debug, Clone)]
pub struct CompiledSpec {
    spec: ModelSpec,
    template: Vec<&'static str>,
    structure: Structure,
    a_const: Triple,
    a_year: Triple,
    a_param: Triple,
    a_param_t: Slot,
    a_param_nt: Slot,
    a_rate: Slot,
    a_compute: Slot,
    a_post: Slot,
    b_const: Triple,
    b_year: Triple,
    b_data: Triple,
    b_data_t: Slot,
    b_data_nt: Slot,
    b_rate: Slot,
    b_post: Slot,
    gamma: Triple,
    gamma_vocab: Slot,
    gamma_t: Slot,
}

impl CompiledSpec {
    pub fn new(spec: ModelSpec) -> CompiledSpec {
        let template = param_template(&spec);
        let slot = |name: &str| Slot(template.iter().position(|t| *t == name));
        let triple = |a: &str, b: &str, c: &str| Triple {
            base: slot(a),
            ptb: slot(b),
            wt2: slot(c),
        };
        CompiledSpec {
            structure: features(spec.kind).structure,
            a_const: triple(ALPHA_CONST, ALPHA_CONST_PTB, ALPHA_CONST_WT2),
            a_year: triple(ALPHA_YEAR, ALPHA_YEAR_PTB, ALPHA_YEAR_WT2),
            a_param: triple(ALPHA_PARAM, ALPHA_PARAM_PTB, ALPHA_PARAM_WT2),
            a_param_t: slot(ALPHA_PARAM_T),
            a_param_nt: slot(ALPHA_PARAM_NT),
            a_rate: slot(ALPHA_RATE),
            a_compute: slot(ALPHA_COMPUTE),
            a_post: slot(ALPHA_YEAR_POST),
            b_const: triple(BETA_CONST, BETA_CONST_PTB, BETA_CONST_WT2),
            b_year: triple(BETA_YEAR, BETA_YEAR_PTB, BETA_YEAR_WT2),
            b_data: triple(BETA_DATA, BETA_DATA_PTB, BETA_DATA_WT2),
            b_data_t: slot(BETA_DATA_T),
            b_data_nt: slot(BETA_DATA_NT),
            b_rate: slot(BETA_RATE),
            b_post: slot(BETA_YEAR_POST),
            gamma: triple(GAMMA, GAMMA_PTB, GAMMA_WT2),
            gamma_vocab: slot(GAMMA_VOCAB),
            gamma_t: slot(GAMMA_T),
            template,
            spec,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn template(&self) -> &[&'static str] {
        &self.template
    }

    pub fn n_params(&self) -> usize {
        self.template.len()
    }

    pub fn needs_vocab(&self) -> bool {
        self.gamma_vocab.present()
    }

    /// Normalises `inputs` against `norms`. Fails on nonpositive N or D, or
    /// a missing vocabulary size when the spec has a vocabulary term.
    pub fn covariates(&self, inputs: &Inputs, norms: Norms) -> Result<Covariates> {
        if !(inputs.params_n > 0.0 && inputs.data_d > 0.0) {
            return Err(Error::NonPositiveInput(format!(
                "N={} D={}",
                inputs.params_n, inputs.data_d
            )));
        }
        let ln_vocab = match (self.needs_vocab(), inputs.vocab_size) {
            (true, Some(v)) => (v as f64).ln(),
            (true, None) => {
                return Err(Error::InvalidArgument(
                    "vocabulary size required by this model".into(),
                ))
            }
            (false, v) => v.map_or(0.0, |v| (v as f64).ln()),
        };
        let post = |year: f64| match self.spec.kind {
            ModelKind::Cutoff { year: cutoff } if year >= cutoff => 1.0,
            _ => 0.0,
        };
        Ok(Covariates {
            x_ptb: f64::from(inputs.benchmark == Benchmark::Ptb),
            x_wt2: f64::from(inputs.benchmark == Benchmark::Wt2),
            x_t: f64::from(inputs.is_transformer),
            log_n: (inputs.params_n / norms.n0).ln(),
            log_d: (inputs.data_d / norms.d0).ln(),
            dy_param: inputs.year_param - norms.y0,
            dy_data: inputs.year_data - norms.y0,
            ln_year_param: inputs.year_param.ln(),
            ln_year_data: inputs.year_data.ln(),
            post_param: post(inputs.year_param),
            post_data: post(inputs.year_data),
            ln_vocab,
        })
    }

    /// Predicted loss for packed parameters `p`.
    #[inline]
    pub fn predict(&self, p: &[f64], x: &Covariates) -> f64 {
        let a_const = self.a_const.get(p, x);
        let a_year = self.a_year.get(p, x) + self.a_post.get(p) * x.post_param;
        let reducible = match self.structure {
            Structure::ComputeOnly => {
                let log_c = x.log_n + x.log_d;
                (a_const - a_year * x.dy_param - self.a_compute.get(p) * log_c).exp()
            }
            _ => {
                let a_exp = self.a_param.get(p, x)
                    + self.a_param_t.get(p) * x.x_t
                    + self.a_param_nt.get(p) * (1.0 - x.x_t)
                    + self.a_rate.get(p) * x.ln_year_param;
                let b_const = self.b_const.get(p, x);
                let b_year = self.b_year.get(p, x) + self.b_post.get(p) * x.post_data;
                let b_exp = self.b_data.get(p, x)
                    + self.b_data_t.get(p) * x.x_t
                    + self.b_data_nt.get(p) * (1.0 - x.x_t)
                    + self.b_rate.get(p) * x.ln_year_data;
                if self.structure == Structure::HicksNeutral {
                    ((a_const - a_exp * x.log_n).exp() + (b_const - b_exp * x.log_d).exp())
                        * (-a_year * x.dy_param).exp()
                } else {
                    (a_const - a_year * x.dy_param - a_exp * x.log_n).exp()
                        + (b_const - b_year * x.dy_data - b_exp * x.log_d).exp()
                }
            }
        };
        let multiplier = if self.gamma_t.present() && x.x_t > 0.5 {
            sigmoid(self.gamma_t.get(p))
        } else {
            1.0
        };
        multiplier * reducible + self.gamma.get(p, x) + self.gamma_vocab.get(p) * x.ln_vocab
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Predicted cross-entropy of `rec` under `spec` with parameters `theta`.
pub fn predict_loss(
    spec: &ModelSpec,
    theta: &ParamVector,
    rec: &EvalRecord,
    norms: Norms,
) -> Result<f64> {
    let compiled = spec.compile();
    let p = theta.pack(spec)?;
    if !(rec.params_n > 0.0 && rec.dataset_tokens_d > 0.0) {
        return Err(Error::NonPositiveInput(rec.model_name.clone()));
    }
    let inputs = Inputs::from_record(rec, &spec.data).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "record `{}` has no training-data value under {:?}",
            rec.model_name, spec.data.mode
        ))
    })?;
    let x = compiled.covariates(&inputs, norms)?;
    Ok(compiled.predict(&p, &x))
}

/// Records of a dataset turned into covariates and targets for one spec.
#[derive(Debug, Clone)]
pub struct Design {
    pub covariates: Vec<Covariates>,
    pub targets: Vec<f64>,
    /// Dataset indices of the rows in `covariates`.
    pub rows: Vec<usize>,
    /// Dataset indices that could not be evaluated under the spec.
    pub dropped: Vec<usize>,
}

impl Design {
    pub fn build(compiled: &CompiledSpec, ds: &Dataset) -> Design {
        let mut design = Design {
            covariates: Vec::with_capacity(ds.len()),
            targets: Vec::with_capacity(ds.len()),
            rows: Vec::with_capacity(ds.len()),
            dropped: Vec::new(),
        };
        for (i, rec) in ds.records().iter().enumerate() {
            let x = Inputs::from_record(rec, &compiled.spec().data)
                .and_then(|inp| compiled.covariates(&inp, ds.norms()).ok());
            match x {
                Some(x) => {
                    design.covariates.push(x);
                    design.targets.push(rec.loss);
                    design.rows.push(i);
                }
                None => design.dropped.push(i),
            }
        }
        design
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn residuals(&self, compiled: &CompiledSpec, p: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.covariates
                .iter()
                .zip(&self.targets)
                .map(|(x, y)| y - compiled.predict(p, x)),
        );
    }

    pub fn sse(&self, compiled: &CompiledSpec, p: &[f64]) -> f64 {
        self.covariates
            .iter()
            .zip(&self.targets)
            .map(|(x, y)| {
                let r = y - compiled.predict(p, x);
                r * r
            })
            .sum()
    }
}

/// Point estimates of the main model as published, with the benchmark
/// offsets and rates in their named slots.
pub fn reference_main_estimates() -> ParamVector {
    ParamVector::from_pairs([
        (ALPHA_CONST, 0.913),
        (ALPHA_CONST_PTB, 0.000),
        (ALPHA_CONST_WT2, 0.055),
        (ALPHA_YEAR, 0.004),
        (ALPHA_PARAM, 0.068),
        (BETA_CONST, 0.771),
        (BETA_CONST_PTB, 0.176),
        (BETA_CONST_WT2, 0.095),
        (BETA_YEAR, 0.036),
        (BETA_DATA, 0.040),
    ])
}

/// Published bootstrap standard errors matching [`reference_main_estimates`].
pub fn reference_main_std_errors() -> ParamVector {
    ParamVector::from_pairs([
        (ALPHA_CONST, 0.235),
        (ALPHA_CONST_PTB, 0.076),
        (ALPHA_CONST_WT2, 0.118),
        (ALPHA_YEAR, 0.021),
        (ALPHA_PARAM, 0.022),
        (BETA_CONST, 0.225),
        (BETA_CONST_PTB, 0.108),
        (BETA_CONST_WT2, 0.120),
        (BETA_YEAR, 0.023),
        (BETA_DATA, 0.011),
    ])
}
