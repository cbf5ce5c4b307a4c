//! Evaluation records: ingestion, filtering, training-data definitions and
//! synthetic generation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::zoo::{self, ModelSpec, ParamVector};

/// Days per year used when converting a calendar date to a fractional year.
pub const DAYS_PER_YEAR: f64 = 365.25;

/// Relative tolerance between a reported loss and ln(perplexity) before the
/// row gets a warning.
pub const LOSS_PERPLEXITY_RTOL: f64 = 1e-6;

/// Epochs that count at full weight under the diminishing-returns definition.
pub const FULL_WEIGHT_EPOCHS: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Benchmark {
    #[serde(rename = "WT103")]
    Wt103,
    #[serde(rename = "PTB")]
    Ptb,
    #[serde(rename = "WT2")]
    Wt2,
}

impl Benchmark {
    pub const ALL: [Benchmark; 3] = [Benchmark::Wt103, Benchmark::Ptb, Benchmark::Wt2];

    pub fn as_str(self) -> &'static str {
        match self {
            Benchmark::Wt103 => "WT103",
            Benchmark::Ptb => "PTB",
            Benchmark::Wt2 => "WT2",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "WT103" => Ok(Benchmark::Wt103),
            "PTB" => Ok(Benchmark::Ptb),
            "WT2" => Ok(Benchmark::Wt2),
            other => Err(Error::InvalidArgument(format!("unknown benchmark `{other}`"))),
        }
    }
}

/// Reasons a record is excluded from analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionFlag {
    Retrieval,
    CompressionPruning,
    Nas,
    Distillation,
    Cache,
}

impl ExclusionFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionFlag::Retrieval => "retrieval",
            ExclusionFlag::CompressionPruning => "compression_pruning",
            ExclusionFlag::Nas => "nas",
            ExclusionFlag::Distillation => "distillation",
            ExclusionFlag::Cache => "cache",
        }
    }
}

impl FromStr for ExclusionFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "retrieval" => Ok(ExclusionFlag::Retrieval),
            "compression_pruning" | "compression" | "pruning" => {
                Ok(ExclusionFlag::CompressionPruning)
            }
            "nas" => Ok(ExclusionFlag::Nas),
            "distillation" => Ok(ExclusionFlag::Distillation),
            "cache" => Ok(ExclusionFlag::Cache),
            other => Err(Error::InvalidArgument(format!("unknown exclusion flag `{other}`"))),
        }
    }
}

/// One language-model evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub model_name: String,
    pub paper_id: String,
    /// Fractional publication year, e.g. 2019.12.
    pub publication_year: f64,
    pub benchmark: Benchmark,
    /// Per-token cross-entropy in nats.
    pub loss: f64,
    pub params_n: f64,
    pub dataset_tokens_d: f64,
    pub epochs: Option<f64>,
    pub vocab_size: Option<u64>,
    pub is_transformer: bool,
    pub exclusion_flags: BTreeSet<ExclusionFlag>,
    pub compute_flop: Option<f64>,
}

impl EvalRecord {
    pub fn perplexity(&self) -> f64 {
        self.loss.exp()
    }

    /// Reported training compute, or 6·N·D when absent.
    pub fn compute(&self) -> f64 {
        self.compute_flop
            .unwrap_or(6.0 * self.params_n * self.dataset_tokens_d)
    }

    /// Stable identity used for fold assignment and seeding.
    pub fn identity(&self) -> String {
        format!(
            "{}\u{1f}{}\u{1f}{}\u{1f}{:?}\u{1f}{}",
            self.paper_id,
            self.model_name,
            self.benchmark.as_str(),
            self.publication_year.to_bits(),
            self.loss.to_bits()
        )
    }
}

pub fn perplexity_to_loss(perplexity: f64) -> f64 {
    perplexity.ln()
}

pub fn loss_to_perplexity(loss: f64) -> f64 {
    loss.exp()
}

/// Converts a calendar date to `year + (day_of_year - 1) / 365.25`.
pub fn fractional_year(date: NaiveDate) -> f64 {
    date.year() as f64 + (date.ordinal0() as f64) / DAYS_PER_YEAR
}

/// Reference values the scaling-law inputs are normalised against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub n0: f64,
    pub d0: f64,
    pub y0: f64,
}

impl Norms {
    pub fn of(records: &[EvalRecord]) -> Option<Norms> {
        let first = records.first()?;
        let mut norms = Norms {
            n0: first.params_n,
            d0: first.dataset_tokens_d,
            y0: first.publication_year,
        };
        for r in &records[1..] {
            norms.n0 = norms.n0.min(r.params_n);
            norms.d0 = norms.d0.min(r.dataset_tokens_d);
            norms.y0 = norms.y0.min(r.publication_year);
        }
        Some(norms)
    }
}

/// An ordered, immutable collection of records with its normalisation constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<EvalRecord>,
    norms: Norms,
}

impl Dataset {
    /// Builds a dataset whose norms are the minima over `records`.
    pub fn new(records: Vec<EvalRecord>) -> Result<Dataset> {
        let norms = Norms::of(&records).ok_or(Error::EmptyDataset { diagnostics: 0 })?;
        Ok(Dataset { records, norms })
    }

    /// Builds a dataset with externally supplied norms. Used for resamples
    /// and folds, which must share the parent's normalisation.
    pub fn with_norms(records: Vec<EvalRecord>, norms: Norms) -> Result<Dataset> {
        if records.is_empty() {
            return Err(Error::EmptyDataset { diagnostics: 0 });
        }
        Ok(Dataset { records, norms })
    }

    pub fn records(&self) -> &[EvalRecord] {
        &self.records
    }

    pub fn norms(&self) -> Norms {
        self.norms
    }

    pub fn n0(&self) -> f64 {
        self.norms.n0
    }

    pub fn d0(&self) -> f64 {
        self.norms.d0
    }

    pub fn y0(&self) -> f64 {
        self.norms.y0
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<EvalRecord> {
        self.records
    }

    /// Subset by index (indices may repeat), keeping this dataset's norms.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Dataset::with_norms(records, self.norms)
    }

    /// Keeps records satisfying `keep`, preserving norms.
    pub fn filter<F: Fn(&EvalRecord) -> bool>(&self, keep: F) -> Result<Dataset> {
        let records = self.records.iter().filter(|r| keep(r)).cloned().collect();
        Dataset::with_norms(records, self.norms)
    }

    /// Stable sort so that records from the same paper are adjacent, ordered
    /// by first appearance of each paper.
    pub fn grouped_by_paper(&self) -> Dataset {
        let mut first_seen: HashMap<&str, usize> = HashMap::new();
        for (i, r) in self.records.iter().enumerate() {
            first_seen.entry(r.paper_id.as_str()).or_insert(i);
        }
        let mut order: Vec<usize> = (0..self.records.len()).collect();
        order.sort_by_key(|&i| (first_seen[self.records[i].paper_id.as_str()], i));
        Dataset {
            records: order.into_iter().map(|i| self.records[i].clone()).collect(),
            norms: self.norms,
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_csv(&self.records, writer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    /// Row kept.
    Warning,
    /// Row skipped.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowDiagnostic {
    /// 1-based line number in the input, header is line 1.
    pub line: usize,
    pub model_name: Option<String>,
    pub severity: Severity,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedRow {
    pub line: usize,
    pub model_name: String,
    pub flags: Vec<ExclusionFlag>,
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Keep flagged rows instead of dropping them.
    pub keep_excluded: bool,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub rows_read: usize,
    pub diagnostics: Vec<RowDiagnostic>,
    pub excluded: Vec<ExcludedRow>,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedRows {
    pub rows_read: usize,
    pub records: Vec<EvalRecord>,
    pub diagnostics: Vec<RowDiagnostic>,
    pub excluded: Vec<ExcludedRow>,
}

pub fn load_dataset<P: AsRef<Path>>(path: P, options: &IngestOptions) -> Result<Ingested> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_dataset(file, options)
}

pub fn read_dataset<R: Read>(reader: R, options: &IngestOptions) -> Result<Ingested> {
    let parsed = parse_rows(reader, options)?;
    let dataset = Dataset::new(parsed.records).map_err(|_| Error::EmptyDataset {
        diagnostics: parsed.diagnostics.len(),
    })?;
    Ok(Ingested {
        dataset,
        rows_read: parsed.rows_read,
        diagnostics: parsed.diagnostics,
        excluded: parsed.excluded,
    })
}

struct Columns {
    index: HashMap<String, usize>,
}

impl Columns {
    fn get<'a>(&self, row: &'a csv::StringRecord, name: &str) -> Option<&'a str> {
        let i = *self.index.get(name)?;
        row.get(i).map(str::trim).filter(|s| !s.is_empty())
    }
}

/// Parses every row, collecting diagnostics instead of failing. Only a
/// missing or unreadable header is a hard error.
pub fn parse_rows<R: Read>(reader: R, options: &IngestOptions) -> Result<ParsedRows> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::InvalidArgument("missing header row".into()));
    }
    let columns = Columns {
        index: headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_ascii_lowercase(), i))
            .collect(),
    };
    for required in ["model_name", "pub_date", "benchmark", "params", "dataset_tokens"] {
        if !columns.index.contains_key(required) {
            return Err(Error::InvalidArgument(format!(
                "header lacks required column `{required}`"
            )));
        }
    }
    if !columns.index.contains_key("loss") && !columns.index.contains_key("perplexity") {
        return Err(Error::InvalidArgument(
            "header needs a `loss` or `perplexity` column".into(),
        ));
    }

    let mut out = ParsedRows::default();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        out.rows_read += 1;
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                out.diagnostics.push(RowDiagnostic {
                    line,
                    model_name: None,
                    severity: Severity::Error,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        match parse_row(&columns, &row, line, &mut out.diagnostics) {
            Ok(rec) => {
                if !rec.exclusion_flags.is_empty() && !options.keep_excluded {
                    out.excluded.push(ExcludedRow {
                        line,
                        model_name: rec.model_name.clone(),
                        flags: rec.exclusion_flags.iter().copied().collect(),
                    });
                } else {
                    out.records.push(rec);
                }
            }
            Err(reason) => out.diagnostics.push(RowDiagnostic {
                line,
                model_name: columns.get(&row, "model_name").map(str::to_owned),
                severity: Severity::Error,
                reason,
            }),
        }
    }
    Ok(out)
}

fn parse_positive(columns: &Columns, row: &csv::StringRecord, name: &str) -> std::result::Result<Option<f64>, String> {
    match columns.get(row, name) {
        None => Ok(None),
        Some(s) => {
            let v: f64 = s.parse().map_err(|_| format!("`{name}` is not a number: `{s}`"))?;
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("`{name}` must be positive, got {s}"));
            }
            Ok(Some(v))
        }
    }
}

fn parse_row(
    columns: &Columns,
    row: &csv::StringRecord,
    line: usize,
    diagnostics: &mut Vec<RowDiagnostic>,
) -> std::result::Result<EvalRecord, String> {
    let model_name = columns
        .get(row, "model_name")
        .ok_or("missing model_name")?
        .to_owned();
    let paper_id = columns
        .get(row, "paper_id")
        .map(str::to_owned)
        .unwrap_or_else(|| model_name.clone());
    let date_str = columns.get(row, "pub_date").ok_or("missing pub_date")?;
    let date = NaiveDate::parse_from_str(date_str, "%Y-%m-%d")
        .map_err(|_| format!("pub_date is not an ISO-8601 date: `{date_str}`"))?;
    let benchmark: Benchmark = columns
        .get(row, "benchmark")
        .ok_or("missing benchmark")?
        .parse()
        .map_err(|e: Error| e.to_string())?;

    let perplexity = parse_positive(columns, row, "perplexity")?;
    let loss = parse_positive(columns, row, "loss")?;
    let loss = match (loss, perplexity) {
        (Some(loss), Some(ppl)) => {
            let implied = perplexity_to_loss(ppl);
            if ((loss - implied) / loss).abs() > LOSS_PERPLEXITY_RTOL {
                diagnostics.push(RowDiagnostic {
                    line,
                    model_name: Some(model_name.clone()),
                    severity: Severity::Warning,
                    reason: format!(
                        "loss {loss} disagrees with ln(perplexity) = {implied}; using loss"
                    ),
                });
            }
            loss
        }
        (Some(loss), None) => loss,
        (None, Some(ppl)) => {
            let loss = perplexity_to_loss(ppl);
            if loss <= 0.0 {
                return Err(format!("perplexity {ppl} gives nonpositive loss"));
            }
            loss
        }
        (None, None) => return Err("missing loss and perplexity".into()),
    };

    let params_n = parse_positive(columns, row, "params")?.ok_or("missing params")?;
    let dataset_tokens_d =
        parse_positive(columns, row, "dataset_tokens")?.ok_or("missing dataset_tokens")?;
    let epochs = match columns.get(row, "epochs") {
        None => None,
        Some(s) => {
            let v: f64 = s.parse().map_err(|_| format!("`epochs` is not a number: `{s}`"))?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("`epochs` must be nonnegative, got {s}"));
            }
            Some(v)
        }
    };
    let vocab_size = match columns.get(row, "vocab_size") {
        None => None,
        Some(s) => {
            let v: u64 = s
                .parse()
                .or_else(|_| s.parse::<f64>().map(|f| f as u64))
                .map_err(|_| format!("`vocab_size` is not an integer: `{s}`"))?;
            if v == 0 {
                return Err("`vocab_size` must be positive".into());
            }
            Some(v)
        }
    };
    let is_transformer = match columns.get(row, "is_transformer") {
        None => false,
        Some("1") | Some("true") | Some("TRUE") | Some("True") => true,
        Some("0") | Some("false") | Some("FALSE") | Some("False") => false,
        Some(other) => return Err(format!("`is_transformer` must be 0 or 1, got `{other}`")),
    };
    let mut exclusion_flags = BTreeSet::new();
    if let Some(flags) = columns.get(row, "flags") {
        for tag in flags.split(';').map(str::trim).filter(|t| !t.is_empty()) {
            exclusion_flags.insert(tag.parse::<ExclusionFlag>().map_err(|e| e.to_string())?);
        }
    }
    let compute_flop = parse_positive(columns, row, "compute_flop")?;

    Ok(EvalRecord {
        model_name,
        paper_id,
        publication_year: fractional_year(date),
        benchmark,
        loss,
        params_n,
        dataset_tokens_d,
        epochs,
        vocab_size,
        is_transformer,
        exclusion_flags,
        compute_flop,
    })
}

/// Inverse of [`fractional_year`] for years produced by it.
pub fn date_from_fractional_year(year: f64) -> NaiveDate {
    let y = year.floor() as i32;
    let ordinal0 = ((year - y as f64) * DAYS_PER_YEAR).round() as u32;
    let max_ordinal = NaiveDate::from_ymd_opt(y, 12, 31).map_or(365, |d| d.ordinal());
    NaiveDate::from_yo_opt(y, (ordinal0 + 1).min(max_ordinal)).unwrap_or_default()
}

pub fn write_csv<W: Write>(records: &[EvalRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "model_name",
        "paper_id",
        "pub_date",
        "benchmark",
        "perplexity",
        "loss",
        "params",
        "dataset_tokens",
        "epochs",
        "vocab_size",
        "is_transformer",
        "flags",
        "compute_flop",
    ])?;
    for r in records {
        let flags: Vec<&str> = r.exclusion_flags.iter().map(|f| f.as_str()).collect();
        w.write_record([
            r.model_name.clone(),
            r.paper_id.clone(),
            date_from_fractional_year(r.publication_year)
                .format("%Y-%m-%d")
                .to_string(),
            r.benchmark.as_str().to_owned(),
            String::new(),
            format!("{}", r.loss),
            format!("{}", r.params_n),
            format!("{}", r.dataset_tokens_d),
            r.epochs.map(|e| format!("{e}")).unwrap_or_default(),
            r.vocab_size.map(|v| v.to_string()).unwrap_or_default(),
            if r.is_transformer { "1" } else { "0" }.to_owned(),
            flags.join(";"),
            r.compute_flop.map(|c| format!("{c}")).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<output>".into(),
        source,
    })?;
    Ok(())
}

/// Keeps at most `cap` records per paper: the lowest-loss ones, earliest in
/// file order on ties. Survivors keep their relative order.
pub fn cap_per_paper(ds: &Dataset, cap: usize) -> Result<Dataset> {
    if cap == 0 {
        return Err(Error::InvalidArgument("cap must be at least 1".into()));
    }
    let mut by_paper: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in ds.records().iter().enumerate() {
        by_paper.entry(r.paper_id.as_str()).or_default().push(i);
    }
    let mut keep = vec![false; ds.len()];
    for idx in by_paper.values_mut() {
        idx.sort_by(|&a, &b| {
            ds.records()[a]
                .loss
                .total_cmp(&ds.records()[b].loss)
                .then(a.cmp(&b))
        });
        for &i in idx.iter().take(cap) {
            keep[i] = true;
        }
    }
    let records = ds
        .records()
        .iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then(|| r.clone()))
        .collect();
    Dataset::new(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    DatasetSize,
    TokensSeen,
    TokensSeenDiminishing,
}

impl FromStr for DataMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dataset_size" | "dataset-size" => Ok(DataMode::DatasetSize),
            "tokens_seen" | "tokens-seen" => Ok(DataMode::TokensSeen),
            "tokens_seen_diminishing" | "tokens-seen-diminishing" => {
                Ok(DataMode::TokensSeenDiminishing)
            }
            other => Err(Error::InvalidArgument(format!("unknown data mode `{other}`"))),
        }
    }
}

/// Which quantity stands in for "training data" D.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingData {
    pub mode: DataMode,
    /// Treat a missing epoch count as 1 instead of dropping the record.
    pub impute_missing_epochs: bool,
    /// Per-epoch geometric decay applied beyond [`FULL_WEIGHT_EPOCHS`].
    pub decay: f64,
}

impl Default for TrainingData {
    fn default() -> Self {
        TrainingData {
            mode: DataMode::DatasetSize,
            impute_missing_epochs: false,
            decay: 0.5,
        }
    }
}

impl TrainingData {
    pub fn tokens_seen(impute_missing_epochs: bool) -> Self {
        TrainingData {
            mode: DataMode::TokensSeen,
            impute_missing_epochs,
            ..Default::default()
        }
    }

    pub fn diminishing(impute_missing_epochs: bool, decay: f64) -> Self {
        TrainingData {
            mode: DataMode::TokensSeenDiminishing,
            impute_missing_epochs,
            decay,
        }
    }
}

/// Effective number of epochs once repeated passes are discounted.
pub fn discounted_epochs(epochs: f64, decay: f64) -> f64 {
    if epochs <= 0.0 {
        return 0.0;
    }
    let whole = epochs.floor() as u32;
    let frac = epochs - whole as f64;
    let weight = |i: u32| {
        if i <= FULL_WEIGHT_EPOCHS {
            1.0
        } else {
            decay.powi((i - FULL_WEIGHT_EPOCHS) as i32)
        }
    };
    let mut total: f64 = (1..=whole).map(weight).sum();
    if frac > 0.0 {
        total += frac * weight(whole + 1);
    }
    total
}

/// Training data for `rec` under `def`. `None` means the record has to be
/// dropped (missing epochs without imputation, or zero effective tokens).
pub fn effective_data(rec: &EvalRecord, def: &TrainingData) -> Option<f64> {
    let epochs = || match rec.epochs {
        Some(e) => Some(e),
        None if def.impute_missing_epochs => Some(1.0),
        None => None,
    };
    let d = match def.mode {
        DataMode::DatasetSize => rec.dataset_tokens_d,
        DataMode::TokensSeen => epochs()? * rec.dataset_tokens_d,
        DataMode::TokensSeenDiminishing => {
            discounted_epochs(epochs()?, def.decay) * rec.dataset_tokens_d
        }
    };
    (d > 0.0).then_some(d)
}

/// Epoch count implied by training length: context · batch · steps / pretraining tokens.
pub fn estimate_epochs(
    context_tokens: u64,
    batch_size: u64,
    steps: u64,
    pretrain_tokens: f64,
) -> Result<f64> {
    if !(pretrain_tokens > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "pretraining token count must be positive, got {pretrain_tokens}"
        )));
    }
    Ok(context_tokens as f64 * batch_size as f64 * steps as f64 / pretrain_tokens)
}

#[derive(Debug, Clone)]
pub struct SyntheticOptions {
    pub n_records: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub log10_params: (f64, f64),
    pub log10_tokens: (f64, f64),
    pub years: (f64, f64),
    /// Number of distinct papers; `None` puts every record in its own paper.
    pub n_papers: Option<usize>,
    /// Correlation of the noise between records of the same paper.
    pub within_paper_rho: f64,
    pub transformer_share: f64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions {
            n_records: 200,
            noise_sigma: 0.05,
            seed: 0,
            log10_params: (6.0, 11.0),
            log10_tokens: (6.0, 12.0),
            years: (2012.0, 2023.0),
            n_papers: None,
            within_paper_rho: 0.0,
            transformer_share: 0.5,
        }
    }
}

fn typical_vocab(b: Benchmark) -> u64 {
    match b {
        Benchmark::Wt103 => 267_735,
        Benchmark::Ptb => 10_000,
        Benchmark::Wt2 => 33_278,
    }
}

/// Draws records from `spec` under `theta` with Gaussian noise on the loss.
/// Covariates are drawn first, norms are taken from them, then losses are
/// computed, so predicting with the returned dataset's norms reproduces the
/// noise-free loss exactly.
pub fn generate_synthetic(
    spec: &ModelSpec,
    theta: &ParamVector,
    opts: &SyntheticOptions,
) -> Result<Dataset> {
    if opts.n_records == 0 {
        return Err(Error::InvalidArgument("n_records must be at least 1".into()));
    }
    if !(opts.noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument("noise_sigma must be nonnegative".into()));
    }
    if !(0.0..1.0).contains(&opts.within_paper_rho) {
        return Err(Error::InvalidArgument(
            "within_paper_rho must lie in [0, 1)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n_papers = opts.n_papers.unwrap_or(opts.n_records).max(1);

    let mut records = Vec::with_capacity(opts.n_records);
    for i in 0..opts.n_records {
        let log_n = rng.random_range(opts.log10_params.0..=opts.log10_params.1);
        let log_d = rng.random_range(opts.log10_tokens.0..=opts.log10_tokens.1);
        // snap to a calendar day so the CSV form round-trips exactly
        let year = date_from_fractional_year(rng.random_range(opts.years.0..opts.years.1));
        let benchmark = Benchmark::ALL[rng.random_range(0..3)];
        let is_transformer = rng.random_bool(opts.transformer_share.clamp(0.0, 1.0));
        let epochs = (rng.random_range(1.0f64..6.0) * 4.0).round() / 4.0;
        let paper = if opts.n_papers.is_some() {
            rng.random_range(0..n_papers)
        } else {
            i
        };
        records.push(EvalRecord {
            model_name: format!("synth-{i:05}"),
            paper_id: format!("paper-{paper:04}"),
            publication_year: fractional_year(year),
            benchmark,
            loss: f64::NAN,
            params_n: 10f64.powf(log_n),
            dataset_tokens_d: 10f64.powf(log_d),
            epochs: Some(epochs),
            vocab_size: Some(typical_vocab(benchmark)),
            is_transformer,
            exclusion_flags: BTreeSet::new(),
            compute_flop: None,
        });
    }
    if opts.n_papers.is_some() {
        records.sort_by(|a, b| a.paper_id.cmp(&b.paper_id).then(a.model_name.cmp(&b.model_name)));
    }
    let norms = Norms::of(&records).expect("nonempty");

    let shared_sd = opts.noise_sigma * opts.within_paper_rho.sqrt();
    let own_sd = opts.noise_sigma * (1.0 - opts.within_paper_rho).sqrt();
    let mut paper_shock: HashMap<String, f64> = HashMap::new();
    for rec in &mut records {
        let clean = zoo::predict_loss(spec, theta, rec, norms)?;
        let mut noise = 0.0;
        if opts.noise_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            noise = own_sd * z;
            if shared_sd > 0.0 {
                let z_paper: f64 = StandardNormal.sample(&mut rng);
                noise += *paper_shock
                    .entry(rec.paper_id.clone())
                    .or_insert(shared_sd * z_paper);
            }
        }
        rec.loss = clean + noise;
        if !(rec.loss > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "generated nonpositive loss {} for {}",
                rec.loss, rec.model_name
            )));
        }
    }
    Dataset::with_norms(records, norms)
}
