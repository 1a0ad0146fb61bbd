//! Trial data model, CSV ingestion, and validation.
//!
//! A dataset holds one row per subject of a multi-site randomized trial:
//! site, vaccine arm `z`, Mendelian factor `g` (e.g. HbAS carrier status),
//! baseline covariates, and either a fever count or a time-to-event pair.
//!
//! CSV schemas (UTF-8, comma-separated, `.` decimal point):
//! - count data: `site,z,g,x1,...,xd,y`
//! - survival data: `site,z,g,x1,...,xd,time,event`

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::num::{cast, cast_usize, Scalar};

/// Which outcome column(s) a dataset carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeKind {
    Count,
    Survival,
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeKind::Count => write!(f, "count"),
            OutcomeKind::Survival => write!(f, "survival"),
        }
    }
}

/// Subject-level outcome.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome<F> {
    /// Total number of qualifying fevers over follow-up.
    Count(u64),
    /// Time to first fever in years and whether the fever was observed
    /// (`event == false` means administratively censored).
    Survival { time: F, event: bool },
}

/// One subject of the trial.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord<F> {
    /// Dense site index (first-appearance order of site ids).
    pub site: usize,
    /// Vaccine arm indicator.
    pub z: bool,
    /// Mendelian factor indicator (carrier = true).
    pub g: bool,
    /// Baseline covariates, identical length across the dataset.
    pub covariates: Vec<F>,
    pub outcome: Outcome<F>,
}

impl<F: Scalar> SubjectRecord<F> {
    /// The scalar outcome f(Y) for count data.
    pub fn count_value(&self) -> Option<F> {
        match self.outcome {
            Outcome::Count(y) => Some(cast(y as f64)),
            Outcome::Survival { .. } => None,
        }
    }
}

/// Flat index of a (z, g) cell: 00, 01, 10, 11 -> 0..4.
#[inline]
pub fn zg_index(z: bool, g: bool) -> usize {
    (z as usize) * 2 + (g as usize)
}

/// All four (z, g) combinations in flat-index order.
pub const ZG_CELLS: [(bool, bool); 4] = [(false, false), (false, true), (true, false), (true, true)];

/// A validated trial dataset.
///
/// Construction checks structure (binary indicators, consistent covariate
/// dimension, positive survival times); per-site positivity is checked
/// separately because diagnostics must be able to describe datasets that
/// violate it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset<F> {
    records: Vec<SubjectRecord<F>>,
    site_names: Vec<String>,
    site_sizes: Vec<usize>,
    d: usize,
    outcome_kind: OutcomeKind,
}

impl<F: Scalar> TrialDataset<F> {
    pub fn records(&self) -> &[SubjectRecord<F>] {
        &self.records
    }

    /// Total sample size n.
    pub fn n(&self) -> usize {
        self.records.len()
    }

    /// Number of sites J.
    pub fn n_sites(&self) -> usize {
        self.site_names.len()
    }

    /// Per-site sample sizes I_j.
    pub fn site_sizes(&self) -> &[usize] {
        &self.site_sizes
    }

    pub fn site_names(&self) -> &[String] {
        &self.site_names
    }

    /// Covariate dimension d.
    pub fn n_covariates(&self) -> usize {
        self.d
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    /// f(Y) vector for count datasets.
    pub fn count_values(&self) -> Result<Vec<F>> {
        if self.outcome_kind != OutcomeKind::Count {
            return Err(Error::Validation(
                "operation requires a count-outcome dataset".into(),
            ));
        }
        Ok(self
            .records
            .iter()
            .map(|r| r.count_value().expect("count dataset"))
            .collect())
    }

    /// Observed per-site prevalence p_{j,n}(G = 1).
    pub fn site_prevalences(&self) -> Vec<F> {
        let mut carriers = vec![0usize; self.n_sites()];
        for r in &self.records {
            if r.g {
                carriers[r.site] += 1;
            }
        }
        carriers
            .iter()
            .zip(&self.site_sizes)
            .map(|(&c, &n)| cast_usize::<F>(c) / cast_usize::<F>(n))
            .collect()
    }

    /// Site weights w_j = n / I_j used by the targeting step.
    pub fn site_weights(&self) -> Vec<F> {
        let n: F = cast_usize(self.n());
        self.site_sizes
            .iter()
            .map(|&size| n / cast_usize::<F>(size))
            .collect()
    }

    /// Subject counts per site and (z, g) cell.
    pub fn cell_counts(&self) -> Vec<[usize; 4]> {
        let mut counts = vec![[0usize; 4]; self.n_sites()];
        for r in &self.records {
            counts[r.site][zg_index(r.z, r.g)] += 1;
        }
        counts
    }

    /// Checks that every site has at least one subject in each of the four
    /// (z, g) cells, which also bounds each site prevalence inside (0, 1).
    pub fn check_positivity(&self) -> Result<()> {
        for (j, cells) in self.cell_counts().iter().enumerate() {
            for (&(z, g), &count) in ZG_CELLS.iter().zip(cells.iter()) {
                if count == 0 {
                    return Err(Error::Positivity(format!(
                        "site {:?} has no subject with z={}, g={}",
                        self.site_names[j], z as u8, g as u8
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Incremental dataset construction with site ids mapped to dense indices.
pub struct DatasetBuilder<F> {
    outcome_kind: OutcomeKind,
    records: Vec<SubjectRecord<F>>,
    site_names: Vec<String>,
    site_lookup: HashMap<String, usize>,
}

impl<F: Scalar> DatasetBuilder<F> {
    pub fn new(outcome_kind: OutcomeKind) -> Self {
        Self {
            outcome_kind,
            records: Vec::new(),
            site_names: Vec::new(),
            site_lookup: HashMap::new(),
        }
    }

    fn site_index(&mut self, site: &str) -> usize {
        if let Some(&idx) = self.site_lookup.get(site) {
            return idx;
        }
        let idx = self.site_names.len();
        self.site_names.push(site.to_string());
        self.site_lookup.insert(site.to_string(), idx);
        idx
    }

    pub fn push(
        &mut self,
        site: &str,
        z: bool,
        g: bool,
        covariates: Vec<F>,
        outcome: Outcome<F>,
    ) -> Result<()> {
        match (&outcome, self.outcome_kind) {
            (Outcome::Count(_), OutcomeKind::Count) => {}
            (Outcome::Survival { time, .. }, OutcomeKind::Survival) => {
                if !time.is_finite() || *time <= F::zero() {
                    return Err(Error::Validation(format!(
                        "survival time must be a positive real, got {time}"
                    )));
                }
            }
            _ => {
                return Err(Error::Validation(
                    "outcome does not match the dataset outcome kind".into(),
                ))
            }
        }
        if covariates.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("non-finite covariate value".into()));
        }
        let site = self.site_index(site);
        self.records.push(SubjectRecord {
            site,
            z,
            g,
            covariates,
            outcome,
        });
        Ok(())
    }

    pub fn finish(self) -> Result<TrialDataset<F>> {
        if self.records.is_empty() {
            return Err(Error::Validation("dataset has no records".into()));
        }
        let d = self.records[0].covariates.len();
        if self.records.iter().any(|r| r.covariates.len() != d) {
            return Err(Error::Validation(
                "covariate vector length differs across records".into(),
            ));
        }
        let mut site_sizes = vec![0usize; self.site_names.len()];
        for r in &self.records {
            site_sizes[r.site] += 1;
        }
        Ok(TrialDataset {
            records: self.records,
            site_names: self.site_names,
            site_sizes,
            d,
            outcome_kind: self.outcome_kind,
        })
    }
}

// ---------------------------------------------------------------------------
// CSV ingestion and emission
// ---------------------------------------------------------------------------

/// Read a dataset from a CSV file and check positivity.
pub fn load_csv<F: Scalar, P: AsRef<Path>>(path: P, kind: OutcomeKind) -> Result<TrialDataset<F>> {
    let file = File::open(path.as_ref())?;
    let ds = read_csv(BufReader::new(file), kind)?;
    ds.check_positivity()?;
    Ok(ds)
}

/// Read a dataset from any buffered reader (no positivity check).
pub fn read_csv<F: Scalar, R: BufRead>(reader: R, kind: OutcomeKind) -> Result<TrialDataset<F>> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: "empty file".into() })?;
    let header = header?;
    let d = parse_header(&header, kind)?;

    let mut builder = DatasetBuilder::new(kind);
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let expected = 3 + d + if kind == OutcomeKind::Count { 1 } else { 2 };
        if fields.len() != expected {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {expected} fields, found {}", fields.len()),
            });
        }
        let site = fields[0];
        if site.is_empty() {
            return Err(Error::Parse { line: line_no, msg: "empty site id".into() });
        }
        let z = parse_binary(fields[1], "z", line_no)?;
        let g = parse_binary(fields[2], "g", line_no)?;
        let mut covariates = Vec::with_capacity(d);
        for (k, field) in fields[3..3 + d].iter().enumerate() {
            covariates.push(parse_real::<F>(field, &format!("x{}", k + 1), line_no)?);
        }
        let outcome = match kind {
            OutcomeKind::Count => {
                let raw = fields[3 + d];
                let y: u64 = raw.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("y must be a nonnegative integer, got {raw:?}"),
                })?;
                Outcome::Count(y)
            }
            OutcomeKind::Survival => {
                let time = parse_real::<F>(fields[3 + d], "time", line_no)?;
                let event = parse_binary(fields[4 + d], "event", line_no)?;
                Outcome::Survival { time, event }
            }
        };
        builder.push(site, z, g, covariates, outcome).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
    }
    builder.finish()
}

fn parse_header(header: &str, kind: OutcomeKind) -> Result<usize> {
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    let err = |msg: String| Error::Parse { line: 1, msg };
    if fields.len() < 4 || fields[0] != "site" || fields[1] != "z" || fields[2] != "g" {
        return Err(err(format!(
            "header must start with site,z,g (got {header:?})"
        )));
    }
    let tail = match kind {
        OutcomeKind::Count => 1,
        OutcomeKind::Survival => 2,
    };
    if fields.len() < 3 + tail {
        return Err(err("header too short for outcome columns".into()));
    }
    let d = fields.len() - 3 - tail;
    for (k, field) in fields[3..3 + d].iter().enumerate() {
        let expected = format!("x{}", k + 1);
        if *field != expected {
            return Err(err(format!(
                "covariate column {} must be named {expected}, got {field:?}",
                k + 4
            )));
        }
    }
    match kind {
        OutcomeKind::Count => {
            if fields[3 + d] != "y" {
                return Err(err(format!("last column must be y, got {:?}", fields[3 + d])));
            }
        }
        OutcomeKind::Survival => {
            if fields[3 + d] != "time" || fields[4 + d] != "event" {
                return Err(err("last columns must be time,event".into()));
            }
        }
    }
    Ok(d)
}

fn parse_binary(field: &str, name: &str, line: usize) -> Result<bool> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(Error::Parse {
            line,
            msg: format!("{name} must be 0 or 1, got {field:?}"),
        }),
    }
}

fn parse_real<F: Scalar>(field: &str, name: &str, line: usize) -> Result<F> {
    if field.is_empty() {
        return Err(Error::Parse {
            line,
            msg: format!("missing value in column {name}"),
        });
    }
    let v: f64 = field.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("{name} must be a real number, got {field:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("{name} must be finite, got {field:?}"),
        });
    }
    Ok(cast(v))
}

/// Write a dataset back to CSV under the schema used by [`load_csv`].
///
/// Floats use Rust's shortest round-trip formatting, so a write/read cycle
/// reproduces the dataset exactly.
pub fn write_csv<F: Scalar, P: AsRef<Path>>(ds: &TrialDataset<F>, path: P) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    write_csv_to(ds, &mut w)
}

/// Write CSV to any writer.
pub fn write_csv_to<F: Scalar, W: Write>(ds: &TrialDataset<F>, w: &mut W) -> Result<()> {
    let d = ds.n_covariates();
    let mut header = String::from("site,z,g");
    for k in 1..=d {
        header.push_str(&format!(",x{k}"));
    }
    match ds.outcome_kind() {
        OutcomeKind::Count => header.push_str(",y"),
        OutcomeKind::Survival => header.push_str(",time,event"),
    }
    writeln!(w, "{header}")?;
    for r in ds.records() {
        let mut row = format!("{},{},{}", ds.site_names()[r.site], r.z as u8, r.g as u8);
        for x in &r.covariates {
            row.push_str(&format!(",{x}"));
        }
        match &r.outcome {
            Outcome::Count(y) => row.push_str(&format!(",{y}")),
            Outcome::Survival { time, event } => {
                row.push_str(&format!(",{time},{}", *event as u8))
            }
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

/// Per-site diagnostic summary produced by [`validate`].
#[derive(Debug, Clone)]
pub struct SiteValidation<F> {
    pub site: String,
    pub n: usize,
    pub prevalence: F,
    /// Share of subjects in the vaccine arm.
    pub z_share: F,
    pub cell_counts: [usize; 4],
    /// (z, g) cells with no subjects.
    pub empty_cells: Vec<(bool, bool)>,
}

/// Report-only dataset diagnostics.
#[derive(Debug, Clone)]
pub struct ValidationReport<F> {
    pub sites: Vec<SiteValidation<F>>,
    pub positivity_ok: bool,
}

impl<F: Scalar> fmt::Display for ValidationReport<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>6} {:>10} {:>8}  cells(z,g)=00/01/10/11",
            "site", "n", "prev(G=1)", "share(Z)"
        )?;
        for s in &self.sites {
            writeln!(
                f,
                "{:<12} {:>6} {:>10.4} {:>8.4}  {}/{}/{}/{}{}",
                s.site,
                s.n,
                s.prevalence.to_f64().unwrap_or(f64::NAN),
                s.z_share.to_f64().unwrap_or(f64::NAN),
                s.cell_counts[0],
                s.cell_counts[1],
                s.cell_counts[2],
                s.cell_counts[3],
                if s.empty_cells.is_empty() { "" } else { "  EMPTY CELLS" },
            )?;
        }
        writeln!(
            f,
            "positivity: {}",
            if self.positivity_ok { "pass" } else { "FAIL" }
        )
    }
}

/// Summarize per-site prevalence, arm balance, and cell occupancy.
pub fn validate<F: Scalar>(ds: &TrialDataset<F>) -> ValidationReport<F> {
    let cell_counts = ds.cell_counts();
    let prevalences = ds.site_prevalences();
    let mut sites = Vec::with_capacity(ds.n_sites());
    let mut positivity_ok = true;
    for (j, &prevalence) in prevalences.iter().enumerate() {
        let n = ds.site_sizes()[j];
        let z_count = ds.records().iter().filter(|r| r.site == j && r.z).count();
        let empty_cells: Vec<(bool, bool)> = ZG_CELLS
            .iter()
            .zip(cell_counts[j].iter())
            .filter(|(_, &c)| c == 0)
            .map(|(&cell, _)| cell)
            .collect();
        if !empty_cells.is_empty() {
            positivity_ok = false;
        }
        sites.push(SiteValidation {
            site: ds.site_names()[j].clone(),
            n,
            prevalence,
            z_share: cast_usize::<F>(z_count) / cast_usize::<F>(n),
            cell_counts: cell_counts[j],
            empty_cells,
        });
    }
    ValidationReport { sites, positivity_ok }
}

/// Per-cell statistics within one site.
#[derive(Debug, Clone, PartialEq)]
pub enum CellStat<F> {
    Count { n: usize, mean: F },
    Survival { n: usize, events: usize, person_time: F },
}

/// Per-site cell summaries (the empirical version of the 2x2 table of
/// expected outcomes).
#[derive(Debug, Clone)]
pub struct CellSummary<F> {
    pub sites: Vec<SiteCellSummary<F>>,
}

#[derive(Debug, Clone)]
pub struct SiteCellSummary<F> {
    pub site: String,
    pub n: usize,
    pub prevalence: F,
    /// Indexed by [`zg_index`].
    pub cells: [CellStat<F>; 4],
}

/// Exact per-cell means of f(Y) (count data) or event counts and person-time
/// (survival data), per site. Errors if any cell is empty.
pub fn cell_summaries<F: Scalar>(ds: &TrialDataset<F>) -> Result<CellSummary<F>> {
    ds.check_positivity()?;
    let prevalences = ds.site_prevalences();
    let mut sites = Vec::with_capacity(ds.n_sites());
    for (j, &prevalence) in prevalences.iter().enumerate() {
        let mut n_cell = [0usize; 4];
        let mut sum = [F::zero(); 4];
        let mut events = [0usize; 4];
        let mut person_time = [F::zero(); 4];
        for r in ds.records().iter().filter(|r| r.site == j) {
            let idx = zg_index(r.z, r.g);
            n_cell[idx] += 1;
            match &r.outcome {
                Outcome::Count(y) => sum[idx] = sum[idx] + cast::<F>(*y as f64),
                Outcome::Survival { time, event } => {
                    person_time[idx] = person_time[idx] + *time;
                    if *event {
                        events[idx] += 1;
                    }
                }
            }
        }
        let cells = std::array::from_fn(|idx| match ds.outcome_kind() {
            OutcomeKind::Count => CellStat::Count {
                n: n_cell[idx],
                mean: sum[idx] / cast_usize::<F>(n_cell[idx]),
            },
            OutcomeKind::Survival => CellStat::Survival {
                n: n_cell[idx],
                events: events[idx],
                person_time: person_time[idx],
            },
        });
        sites.push(SiteCellSummary {
            site: ds.site_names()[j].clone(),
            n: ds.site_sizes()[j],
            prevalence,
            cells,
        });
    }
    Ok(CellSummary { sites })
}
