//! Dataset and chain file formats.
//!
//! All files are comma-delimited with a single header row; a missing value is
//! an empty field. Viral loads are stored as log10 copies/mL (raw copies are
//! accepted behind a unit flag and converted on load). A dataset is split
//! over four required files plus optional baseline covariates:
//!
//! - `viral_load.csv`: `subject,day,log10_vl` (one row per measurement; an
//!   empty value marks a missed measurement and is dropped on load)
//! - `pk.csv`: `subject,drug,cmin` (drug is 1 or 2)
//! - `adherence.csv`: `subject,drug,interval_start_day,interval_end_day,rate`
//!   (contiguous intervals; an empty end on the last row lets the rate
//!   persist past the final visit)
//! - `ic50.csv`: `subject,drug,i0,ir,tr` (empty `tr` means no resistance
//!   emergence; `ir` may then be empty too)
//! - `covariates.csv`: `subject,cd4,age,weight` (all fields optional)
//!
//! Chain output is one retained draw per row with full-precision floats, so
//! written files parse back to bit-identical draws. Writers emit subjects in
//! id order and never include timestamps: byte output is a pure function of
//! the data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::efficacy::{AdherenceProfile, DrugInputs, EfficacyInputs, Ic50Profile};
use crate::error::{Error, Result};
use crate::inference::{ChainOutput, McmcConfig, PopulationDraw};
use crate::{ParamMatrix, ParamVector, N_PARAMS, PARAM_NAMES};

/// One viral-load measurement, stored as log10 copies/mL.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub day: f64,
    pub log10_vl: f64,
}

/// Baseline host factors; all optional.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Covariates {
    pub cd4: Option<f64>,
    pub age: Option<f64>,
    pub weight: Option<f64>,
}

/// Longitudinal record for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    /// Measurements sorted by day.
    pub observations: Vec<Observation>,
    pub efficacy: EfficacyInputs,
    pub covariates: Covariates,
}

impl SubjectRecord {
    /// Measured log10 viral load at treatment start (day 0), when present.
    pub fn baseline_log10_vl(&self) -> Option<f64> {
        self.observations.first().filter(|o| o.day == 0.0).map(|o| o.log10_vl)
    }

    pub fn observation_days(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.day).collect()
    }

    /// Checks the requirements for model fitting: at least two observations,
    /// nondecreasing days, first measurement at day 0, finite values.
    pub fn validate_for_fit(&self) -> Result<()> {
        if self.observations.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "subject {} has {} observations, need at least 2",
                self.subject_id,
                self.observations.len()
            )));
        }
        if self.observations.iter().any(|o| !o.day.is_finite() || !o.log10_vl.is_finite()) {
            return Err(Error::InsufficientData(format!("subject {} has non-finite observations", self.subject_id)));
        }
        if self.observations.windows(2).any(|w| w[0].day > w[1].day) {
            return Err(Error::InsufficientData(format!("subject {} observation days not sorted", self.subject_id)));
        }
        if self.baseline_log10_vl().is_none() {
            return Err(Error::InsufficientData(format!(
                "subject {} lacks a day-0 baseline measurement",
                self.subject_id
            )));
        }
        Ok(())
    }
}

/// How viral-load values in the input file are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViralLoadUnit {
    Log10CopiesPerMl,
    CopiesPerMl,
}

/// Locations of the dataset files.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub viral_load: PathBuf,
    pub pk: PathBuf,
    pub adherence: PathBuf,
    pub ic50: PathBuf,
    pub covariates: Option<PathBuf>,
}

impl DatasetPaths {
    /// Standard file names inside `dir`; the covariates file is optional and
    /// picked up only if present.
    pub fn in_dir(dir: &Path) -> Self {
        let covariates = dir.join("covariates.csv");
        Self {
            viral_load: dir.join("viral_load.csv"),
            pk: dir.join("pk.csv"),
            adherence: dir.join("adherence.csv"),
            ic50: dir.join("ic50.csv"),
            covariates: covariates.exists().then_some(covariates),
        }
    }
}

// ---- parsing helpers ----

struct FileReader {
    path: PathBuf,
    lines: Vec<String>,
}

impl FileReader {
    fn open(path: &Path, expected_header: &str) -> Result<Self> {
        let content = std::fs::read_to_string(path)?;
        let lines: Vec<String> = content.lines().map(str::to_owned).collect();
        match lines.first() {
            None => Err(Error::Parse { path: path.into(), line: 1, msg: "empty file, expected a header row".into() }),
            Some(h) if h.trim() != expected_header => Err(Error::Parse {
                path: path.into(),
                line: 1,
                msg: format!("unexpected header {:?}, expected {:?}", h.trim(), expected_header),
            }),
            Some(_) => Ok(Self { path: path.into(), lines }),
        }
    }

    fn err(&self, line: usize, msg: String) -> Error {
        Error::Parse { path: self.path.clone(), line, msg }
    }

    /// Data rows as trimmed fields, with 1-based line numbers.
    fn rows(&self, n_fields: usize) -> Result<Vec<(usize, Vec<&str>)>> {
        let mut out = Vec::new();
        for (i, raw) in self.lines.iter().enumerate().skip(1) {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
            if fields.len() != n_fields {
                return Err(self.err(line, format!("expected {n_fields} fields, found {}", fields.len())));
            }
            out.push((line, fields));
        }
        Ok(out)
    }

    fn parse_f64(&self, line: usize, name: &str, field: &str) -> Result<f64> {
        field
            .parse::<f64>()
            .map_err(|_| self.err(line, format!("cannot parse {name} value {field:?} as a number")))
    }

    fn parse_opt_f64(&self, line: usize, name: &str, field: &str) -> Result<Option<f64>> {
        if field.is_empty() {
            Ok(None)
        } else {
            self.parse_f64(line, name, field).map(Some)
        }
    }

    fn parse_drug(&self, line: usize, field: &str) -> Result<usize> {
        match field {
            "1" => Ok(0),
            "2" => Ok(1),
            _ => Err(self.err(line, format!("drug must be 1 or 2, got {field:?}"))),
        }
    }
}

#[derive(Debug, Default)]
struct AdherenceRows {
    // (start, end, rate); end is None for a trailing open interval.
    intervals: Vec<(f64, Option<f64>, f64)>,
}

/// Loads and joins the dataset files; subjects come back sorted by id.
/// Measurements with an empty viral-load field are treated as missing at
/// random and dropped.
pub fn load_dataset(paths: &DatasetPaths, unit: ViralLoadUnit) -> Result<Vec<SubjectRecord>> {
    let vl = FileReader::open(&paths.viral_load, "subject,day,log10_vl")?;
    let mut observations: BTreeMap<String, Vec<Observation>> = BTreeMap::new();
    for (line, f) in vl.rows(3)? {
        let day = vl.parse_f64(line, "day", f[1])?;
        let Some(value) = vl.parse_opt_f64(line, "log10_vl", f[2])? else {
            continue;
        };
        let log10_vl = match unit {
            ViralLoadUnit::Log10CopiesPerMl => value,
            ViralLoadUnit::CopiesPerMl => {
                if value <= 0.0 {
                    return Err(vl.err(line, format!("raw viral load must be positive to take logs, got {value}")));
                }
                value.log10()
            }
        };
        observations.entry(f[0].to_owned()).or_default().push(Observation { day, log10_vl });
    }
    for obs in observations.values_mut() {
        obs.sort_by(|a, b| a.day.partial_cmp(&b.day).unwrap());
    }

    let pk = FileReader::open(&paths.pk, "subject,drug,cmin")?;
    let mut cmins: BTreeMap<String, [Option<f64>; 2]> = BTreeMap::new();
    for (line, f) in pk.rows(3)? {
        let drug = pk.parse_drug(line, f[1])?;
        let cmin = pk.parse_f64(line, "cmin", f[2])?;
        let slot = &mut cmins.entry(f[0].to_owned()).or_default()[drug];
        if slot.replace(cmin).is_some() {
            return Err(pk.err(line, format!("duplicate trough concentration for subject {} drug {}", f[0], drug + 1)));
        }
    }

    let adh = FileReader::open(&paths.adherence, "subject,drug,interval_start_day,interval_end_day,rate")?;
    let mut adherence: BTreeMap<String, [AdherenceRows; 2]> = BTreeMap::new();
    for (line, f) in adh.rows(5)? {
        let drug = adh.parse_drug(line, f[1])?;
        let start = adh.parse_f64(line, "interval_start_day", f[2])?;
        let end = adh.parse_opt_f64(line, "interval_end_day", f[3])?;
        let rate = adh.parse_f64(line, "rate", f[4])?;
        if let Some(end) = end {
            if end <= start {
                return Err(adh.err(line, format!("interval end {end} not after start {start}")));
            }
        }
        adherence.entry(f[0].to_owned()).or_default()[drug].intervals.push((start, end, rate));
    }

    let ic = FileReader::open(&paths.ic50, "subject,drug,i0,ir,tr")?;
    let mut ic50s: BTreeMap<String, [Option<Ic50Profile>; 2]> = BTreeMap::new();
    for (line, f) in ic.rows(5)? {
        let drug = ic.parse_drug(line, f[1])?;
        let i0 = ic.parse_f64(line, "i0", f[2])?;
        let ir = ic.parse_opt_f64(line, "ir", f[3])?.unwrap_or(i0);
        let tr = ic.parse_opt_f64(line, "tr", f[4])?;
        let profile = Ic50Profile::new(i0, ir, tr).map_err(|e| ic.err(line, e.to_string()))?;
        let slot = &mut ic50s.entry(f[0].to_owned()).or_default()[drug];
        if slot.replace(profile).is_some() {
            return Err(ic.err(line, format!("duplicate IC50 profile for subject {} drug {}", f[0], drug + 1)));
        }
    }

    let mut covariates: BTreeMap<String, Covariates> = BTreeMap::new();
    if let Some(cov_path) = &paths.covariates {
        let cov = FileReader::open(cov_path, "subject,cd4,age,weight")?;
        for (line, f) in cov.rows(4)? {
            let entry = Covariates {
                cd4: cov.parse_opt_f64(line, "cd4", f[1])?,
                age: cov.parse_opt_f64(line, "age", f[2])?,
                weight: cov.parse_opt_f64(line, "weight", f[3])?,
            };
            if covariates.insert(f[0].to_owned(), entry).is_some() {
                return Err(cov.err(line, format!("duplicate covariates for subject {}", f[0])));
            }
        }
    }

    let mut records = Vec::with_capacity(observations.len());
    for (subject_id, obs) in observations {
        let join_err = |msg: String| Error::Join { subject: subject_id.clone(), msg };
        let cmin = cmins
            .get(&subject_id)
            .ok_or_else(|| join_err("no trough concentrations".into()))?;
        let adh_rows = adherence
            .get(&subject_id)
            .ok_or_else(|| join_err("no adherence records".into()))?;
        let profiles = ic50s
            .get(&subject_id)
            .ok_or_else(|| join_err("no IC50 records".into()))?;

        let mut drugs = Vec::with_capacity(2);
        for d in 0..2 {
            let cmin = cmin[d].ok_or_else(|| join_err(format!("missing trough concentration for drug {}", d + 1)))?;
            let ic50 = profiles[d]
                .clone()
                .ok_or_else(|| join_err(format!("missing IC50 profile for drug {}", d + 1)))?;
            let adherence = build_adherence(&adh_rows[d], d, &subject_id)?;
            drugs.push(DrugInputs::new(cmin, ic50, adherence)?);
        }
        let second = drugs.pop().unwrap();
        let first = drugs.pop().unwrap();

        records.push(SubjectRecord {
            covariates: covariates.get(&subject_id).copied().unwrap_or_default(),
            subject_id,
            observations: obs,
            efficacy: EfficacyInputs::new(first, second),
        });
    }
    Ok(records)
}

fn build_adherence(rows: &AdherenceRows, drug: usize, subject: &str) -> Result<AdherenceProfile> {
    let join_err = |msg: String| Error::Join { subject: subject.to_owned(), msg };
    if rows.intervals.is_empty() {
        return Err(join_err(format!("missing adherence intervals for drug {}", drug + 1)));
    }
    let mut intervals = rows.intervals.clone();
    intervals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut visit_times = vec![intervals[0].0];
    let mut rates = Vec::with_capacity(intervals.len());
    for (i, (start, end, rate)) in intervals.iter().enumerate() {
        if *start != *visit_times.last().unwrap() {
            return Err(join_err(format!(
                "adherence intervals for drug {} are not contiguous at day {start}",
                drug + 1
            )));
        }
        rates.push(*rate);
        match end {
            Some(end) => visit_times.push(*end),
            None if i + 1 == intervals.len() => {}
            None => {
                return Err(join_err(format!(
                    "open-ended adherence interval for drug {} must come last",
                    drug + 1
                )));
            }
        }
    }
    AdherenceProfile::new(visit_times, rates)
}

// ---- writing helpers ----

fn push_fields(line: &mut String, fields: &[String]) {
    line.push_str(&fields.join(","));
    line.push('\n');
}

fn fmt_f64(v: f64) -> String {
    // Shortest representation that round-trips exactly.
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Writes the dataset files into `dir` using the standard names. Subjects
/// are emitted in id order; output bytes depend only on the records.
pub fn write_dataset(dir: &Path, records: &[SubjectRecord]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut by_id: Vec<&SubjectRecord> = records.iter().collect();
    by_id.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));

    let mut vl = String::from("subject,day,log10_vl\n");
    let mut pk = String::from("subject,drug,cmin\n");
    let mut adh = String::from("subject,drug,interval_start_day,interval_end_day,rate\n");
    let mut ic = String::from("subject,drug,i0,ir,tr\n");
    let mut cov = String::from("subject,cd4,age,weight\n");
    let mut any_covariate = false;

    for r in &by_id {
        for o in &r.observations {
            push_fields(&mut vl, &[r.subject_id.clone(), fmt_f64(o.day), fmt_f64(o.log10_vl)]);
        }
        for (d, drug) in r.efficacy.drugs.iter().enumerate() {
            let label = (d + 1).to_string();
            push_fields(&mut pk, &[r.subject_id.clone(), label.clone(), fmt_f64(drug.cmin)]);

            let times = drug.adherence.visit_times();
            let rates = drug.adherence.rates();
            for (k, rate) in rates.iter().enumerate() {
                let start = times[k];
                let end = times.get(k + 1).copied();
                push_fields(
                    &mut adh,
                    &[r.subject_id.clone(), label.clone(), fmt_f64(start), fmt_opt(end), fmt_f64(*rate)],
                );
            }

            let profile = &drug.ic50;
            push_fields(
                &mut ic,
                &[
                    r.subject_id.clone(),
                    label.clone(),
                    fmt_f64(profile.baseline()),
                    fmt_f64(profile.plateau()),
                    fmt_opt(profile.failure_time()),
                ],
            );
        }
        let c = &r.covariates;
        if c.cd4.is_some() || c.age.is_some() || c.weight.is_some() {
            any_covariate = true;
        }
        push_fields(&mut cov, &[r.subject_id.clone(), fmt_opt(c.cd4), fmt_opt(c.age), fmt_opt(c.weight)]);
    }

    std::fs::write(dir.join("viral_load.csv"), vl)?;
    std::fs::write(dir.join("pk.csv"), pk)?;
    std::fs::write(dir.join("adherence.csv"), adh)?;
    std::fs::write(dir.join("ic50.csv"), ic)?;
    if any_covariate {
        std::fs::write(dir.join("covariates.csv"), cov)?;
    }
    Ok(())
}

// ---- chain files ----

fn population_header() -> String {
    let mut h = String::from("iteration");
    for p in PARAM_NAMES {
        write!(h, ",mu_log_{p}").unwrap();
    }
    for p in PARAM_NAMES {
        write!(h, ",{p}").unwrap();
    }
    h.push_str(",error_sd,error_prec");
    for i in 0..N_PARAMS {
        for j in i..N_PARAMS {
            write!(h, ",prec_{}_{}", i + 1, j + 1).unwrap();
        }
    }
    h
}

fn subject_header() -> String {
    let mut h = String::from("iteration");
    for p in PARAM_NAMES {
        write!(h, ",log_{p}").unwrap();
    }
    for p in PARAM_NAMES {
        write!(h, ",{p}").unwrap();
    }
    h
}

/// Name of the per-subject draw file for canonical index `idx` (0-based).
pub fn subject_chain_file(idx: usize) -> String {
    format!("theta_{:03}.csv", idx + 1)
}

/// Writes retained draws under `dir`: `population.csv`, one `theta_*.csv`
/// per subject, and `acceptance.csv`. Log-scale and precision entries are
/// written with full precision so the files parse back to identical draws;
/// natural-scale columns are derived conveniences. The seed and sampler
/// schedule travel in the `population.csv` header comment.
pub fn write_chain(dir: &Path, chain: &ChainOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut pop = format!(
        "# seed={} burn_in={} iterations={} thin={}\n{}\n",
        chain.seed,
        chain.config.burn_in,
        chain.config.iterations,
        chain.config.thin,
        population_header()
    );
    for (iter, draw) in chain.iterations.iter().zip(&chain.population) {
        let mut fields = vec![iter.to_string()];
        for j in 0..N_PARAMS {
            fields.push(fmt_f64(draw.mu[j]));
        }
        for j in 0..N_PARAMS {
            fields.push(fmt_f64(draw.mu[j].exp()));
        }
        fields.push(fmt_f64(1.0 / draw.error_prec.sqrt()));
        fields.push(fmt_f64(draw.error_prec));
        for i in 0..N_PARAMS {
            for j in i..N_PARAMS {
                fields.push(fmt_f64(draw.sigma_inv[(i, j)]));
            }
        }
        push_fields(&mut pop, &fields);
    }
    std::fs::write(dir.join("population.csv"), pop)?;

    for (idx, (id, draws)) in chain.subject_ids.iter().zip(&chain.subjects).enumerate() {
        let mut body = format!("# subject={id}\n{}\n", subject_header());
        for (iter, theta) in chain.iterations.iter().zip(draws) {
            let mut fields = vec![iter.to_string()];
            for j in 0..N_PARAMS {
                fields.push(fmt_f64(theta[j]));
            }
            for j in 0..N_PARAMS {
                fields.push(fmt_f64(theta[j].exp()));
            }
            push_fields(&mut body, &fields);
        }
        std::fs::write(dir.join(subject_chain_file(idx)), body)?;
    }

    let mut acc = String::from("subject,acceptance_rate\n");
    for (id, rate) in chain.subject_ids.iter().zip(&chain.acceptance) {
        push_fields(&mut acc, &[id.clone(), fmt_f64(*rate)]);
    }
    std::fs::write(dir.join("acceptance.csv"), acc)?;
    Ok(())
}

fn parse_tagged_header(reader: &FileReader, tag: &str) -> Result<String> {
    let first = &reader.lines[0];
    first
        .strip_prefix(&format!("# {tag}="))
        .map(str::to_owned)
        .ok_or_else(|| reader.err(1, format!("expected a `# {tag}=` line")))
}

/// Parses the `# key=value key=value ...` comment that heads the population
/// file and returns `key`'s value as an integer. Keys must be unique.
fn header_u64(reader: &FileReader, key: &str) -> Result<u64> {
    let first = &reader.lines[0];
    let body = first
        .strip_prefix("# ")
        .ok_or_else(|| reader.err(1, "expected a `# key=value ...` comment line".into()))?;
    let mut found = None;
    for pair in body.split_whitespace() {
        let Some((k, v)) = pair.split_once('=') else {
            return Err(reader.err(1, format!("malformed header entry {pair:?}")));
        };
        if k == key {
            if found.is_some() {
                return Err(reader.err(1, format!("duplicate `{key}` in header")));
            }
            found = Some(v);
        }
    }
    let value = found.ok_or_else(|| reader.err(1, format!("missing `{key}` in header")))?;
    value.parse().map_err(|_| reader.err(1, format!("cannot parse {key} {value:?}")))
}

fn open_commented(path: &Path, expected_header: &str, tag: &str) -> Result<(FileReader, String)> {
    let content = std::fs::read_to_string(path)?;
    let lines: Vec<String> = content.lines().map(str::to_owned).collect();
    let reader = FileReader { path: path.into(), lines };
    if reader.lines.is_empty() {
        return Err(reader.err(1, "empty file".into()));
    }
    let tag_value = parse_tagged_header(&reader, tag)?;
    match reader.lines.get(1) {
        Some(h) if h.trim() == expected_header => {}
        other => {
            return Err(reader.err(2, format!("unexpected header {:?}, expected {:?}", other, expected_header)));
        }
    }
    Ok((reader, tag_value))
}

/// Reads chain files written by [`write_chain`] back into a [`ChainOutput`].
/// The reconstruction is bit-exact for everything a writer derives its
/// output from: draws, seed, and sampler schedule. Worker count and the
/// adaptation flag are execution details that do not affect the draws; they
/// are not stored and come back as defaults.
pub fn load_chain(dir: &Path) -> Result<ChainOutput> {
    let pop_path = dir.join("population.csv");
    let content = std::fs::read_to_string(&pop_path)?;
    let lines: Vec<String> = content.lines().map(str::to_owned).collect();
    let pop = FileReader { path: pop_path, lines };
    if pop.lines.is_empty() {
        return Err(pop.err(1, "empty file".into()));
    }
    let seed = header_u64(&pop, "seed")?;
    let burn_in = header_u64(&pop, "burn_in")?;
    let chain_iterations = header_u64(&pop, "iterations")?;
    let thin = header_u64(&pop, "thin")?;
    match pop.lines.get(1) {
        Some(h) if h.trim() == population_header() => {}
        other => {
            return Err(pop.err(2, format!("unexpected header {:?}, expected {:?}", other, population_header())));
        }
    }

    let n_cols = 1 + 2 * N_PARAMS + 2 + N_PARAMS * (N_PARAMS + 1) / 2;
    let mut iterations = Vec::new();
    let mut population = Vec::new();
    for (i, raw) in pop.lines.iter().enumerate().skip(2) {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != n_cols {
            return Err(pop.err(line, format!("expected {n_cols} fields, found {}", fields.len())));
        }
        let iteration: u64 = fields[0]
            .parse()
            .map_err(|_| pop.err(line, format!("cannot parse iteration {:?}", fields[0])))?;
        iterations.push(iteration);

        let mut mu = ParamVector::zeros();
        for j in 0..N_PARAMS {
            mu[j] = pop.parse_f64(line, "mu", fields[1 + j])?;
        }
        let error_prec = pop.parse_f64(line, "error_prec", fields[2 + 2 * N_PARAMS])?;
        let mut sigma_inv = ParamMatrix::zeros();
        let mut col = 3 + 2 * N_PARAMS;
        for i in 0..N_PARAMS {
            for j in i..N_PARAMS {
                let v = pop.parse_f64(line, "prec", fields[col])?;
                sigma_inv[(i, j)] = v;
                sigma_inv[(j, i)] = v;
                col += 1;
            }
        }
        population.push(PopulationDraw { mu, sigma_inv, error_prec });
    }

    let mut subject_ids = Vec::new();
    let mut subjects: Vec<Vec<ParamVector>> = Vec::new();
    for idx in 0.. {
        let path = dir.join(subject_chain_file(idx));
        if !path.exists() {
            break;
        }
        let (file, id) = open_commented(&path, &subject_header(), "subject")?;
        let mut draws = Vec::new();
        for (i, raw) in file.lines.iter().enumerate().skip(2) {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
            if fields.len() != 1 + 2 * N_PARAMS {
                return Err(file.err(line, format!("expected {} fields, found {}", 1 + 2 * N_PARAMS, fields.len())));
            }
            let mut theta = ParamVector::zeros();
            for j in 0..N_PARAMS {
                theta[j] = file.parse_f64(line, "log-parameter", fields[1 + j])?;
            }
            draws.push(theta);
        }
        if draws.len() != population.len() {
            return Err(file.err(
                1,
                format!("{} draws for subject {id} but {} population draws", draws.len(), population.len()),
            ));
        }
        subject_ids.push(id);
        subjects.push(draws);
    }

    let acc_path = dir.join("acceptance.csv");
    let acc = FileReader::open(&acc_path, "subject,acceptance_rate")?;
    let mut acceptance = vec![0.0; subject_ids.len()];
    for (line, f) in acc.rows(2)? {
        let idx = subject_ids
            .iter()
            .position(|id| id == f[0])
            .ok_or_else(|| acc.err(line, format!("unknown subject {:?}", f[0])))?;
        acceptance[idx] = acc.parse_f64(line, "acceptance_rate", f[1])?;
    }

    Ok(ChainOutput {
        subject_ids,
        iterations,
        population,
        subjects,
        acceptance,
        seed,
        config: McmcConfig { seed, burn_in, iterations: chain_iterations, thin, ..McmcConfig::default() },
    })
}

// ---- fitted trajectories ----

/// Fitted series for one subject on a time grid. A `None` fitted value marks
/// a day where the trajectory could not be evaluated; such gaps are recorded,
/// not fatal.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectTrajectory {
    pub subject_id: String,
    pub days: Vec<f64>,
    pub fitted_log10_vl: Vec<Option<f64>>,
    pub gamma: Vec<f64>,
    /// Efficacy threshold `1 - 1/R0` at this subject's estimated `R0`.
    pub efficacy_threshold: f64,
}

/// Writes `subject,day,fitted_log10_vl,gamma,e_c` rows for all subjects.
pub fn write_trajectories(path: &Path, trajectories: &[SubjectTrajectory]) -> Result<()> {
    let mut by_id: Vec<&SubjectTrajectory> = trajectories.iter().collect();
    by_id.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));

    let mut out = String::from("subject,day,fitted_log10_vl,gamma,e_c\n");
    for t in by_id {
        for ((day, fitted), gamma) in t.days.iter().zip(&t.fitted_log10_vl).zip(&t.gamma) {
            push_fields(
                &mut out,
                &[
                    t.subject_id.clone(),
                    fmt_f64(*day),
                    fmt_opt(*fitted),
                    fmt_f64(*gamma),
                    fmt_f64(t.efficacy_threshold),
                ],
            );
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn two_subject_dataset() -> Vec<SubjectRecord> {
        let s1 = SubjectRecord {
            subject_id: "S01".into(),
            observations: vec![
                Observation { day: 0.0, log10_vl: 4.5 },
                Observation { day: 7.0, log10_vl: 3.9 },
                Observation { day: 14.0, log10_vl: 3.4 },
            ],
            efficacy: EfficacyInputs::new(
                DrugInputs::new(
                    82.5,
                    Ic50Profile::new(4.0, 9.5, Some(60.0)).unwrap(),
                    AdherenceProfile::new(vec![0.0, 28.0, 56.0], vec![1.0, 0.75]).unwrap(),
                )
                .unwrap(),
                DrugInputs::new(
                    51.0,
                    Ic50Profile::constant(6.0).unwrap(),
                    // Trailing open interval: the 0.9 rate persists past day 28.
                    AdherenceProfile::new(vec![0.0, 28.0], vec![1.0, 0.9]).unwrap(),
                )
                .unwrap(),
            ),
            covariates: Covariates { cd4: Some(212.0), age: None, weight: Some(71.4) },
        };
        let s2 = SubjectRecord {
            subject_id: "S02".into(),
            observations: vec![Observation { day: 0.0, log10_vl: 5.1 }, Observation { day: 28.0, log10_vl: 4.2 }],
            efficacy: EfficacyInputs::constant(60.0, 5.0, 40.0, 8.0).unwrap(),
            covariates: Covariates::default(),
        };
        vec![s1, s2]
    }

    #[test]
    fn dataset_round_trip_preserves_records() {
        let dir = TempDir::new().unwrap();
        let records = two_subject_dataset();
        write_dataset(dir.path(), &records).unwrap();
        let loaded = load_dataset(&DatasetPaths::in_dir(dir.path()), ViralLoadUnit::Log10CopiesPerMl).unwrap();
        assert_eq!(loaded, records);
    }

    #[test]
    fn writers_are_deterministic() {
        let dir_a = TempDir::new().unwrap();
        let dir_b = TempDir::new().unwrap();
        let records = two_subject_dataset();
        write_dataset(dir_a.path(), &records).unwrap();
        write_dataset(dir_b.path(), &records).unwrap();
        for name in ["viral_load.csv", "pk.csv", "adherence.csv", "ic50.csv", "covariates.csv"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between runs");
        }
    }

    #[test]
    fn raw_copies_are_converted_to_logs() {
        let dir = TempDir::new().unwrap();
        let mut records = two_subject_dataset();
        records.truncate(1);
        write_dataset(dir.path(), &records).unwrap();
        // Rewrite the viral-load file in raw copies.
        let vl = "subject,day,log10_vl\nS01,0,31623\nS01,7,7943\nS01,14,2512\n";
        std::fs::write(dir.path().join("viral_load.csv"), vl).unwrap();
        let loaded = load_dataset(&DatasetPaths::in_dir(dir.path()), ViralLoadUnit::CopiesPerMl).unwrap();
        assert!((loaded[0].observations[0].log10_vl - 4.5).abs() < 1e-3);
        assert!((loaded[0].observations[1].log10_vl - 3.9).abs() < 1e-3);
    }

    #[test]
    fn missing_values_are_dropped() {
        let dir = TempDir::new().unwrap();
        let mut records = two_subject_dataset();
        records.truncate(1);
        write_dataset(dir.path(), &records).unwrap();
        let vl = "subject,day,log10_vl\nS01,0,4.5\nS01,7,\nS01,14,3.4\n";
        std::fs::write(dir.path().join("viral_load.csv"), vl).unwrap();
        let loaded = load_dataset(&DatasetPaths::in_dir(dir.path()), ViralLoadUnit::Log10CopiesPerMl).unwrap();
        assert_eq!(loaded[0].observation_days(), vec![0.0, 14.0]);
    }

    #[test]
    fn chain_files_round_trip_bit_exactly() {
        let mut sigma_inv = ParamMatrix::identity() * std::f64::consts::PI;
        sigma_inv[(0, 3)] = 1.0 / 3.0;
        sigma_inv[(3, 0)] = 1.0 / 3.0;
        let draw = |offset: f64| PopulationDraw {
            mu: ParamVector::from_fn(|j, _| 3.0f64.ln() + offset + j as f64 / 7.0),
            sigma_inv,
            error_prec: 16.0 + offset,
        };
        let chain = ChainOutput {
            subject_ids: vec!["S01".into(), "S02".into()],
            iterations: vec![105, 110, 115],
            population: vec![draw(0.0), draw(0.25), draw(-0.125)],
            subjects: vec![
                vec![ParamVector::repeat(0.1), ParamVector::repeat(0.2), ParamVector::repeat(0.3)],
                vec![ParamVector::repeat(-0.1), ParamVector::repeat(1.0 / 7.0), ParamVector::repeat(0.0)],
            ],
            acceptance: vec![0.31, 2.0 / 7.0],
            seed: 99,
            config: McmcConfig { seed: 99, burn_in: 100, iterations: 60, thin: 5, ..McmcConfig::default() },
        };

        let dir = TempDir::new().unwrap();
        write_chain(dir.path(), &chain).unwrap();
        let loaded = load_chain(dir.path()).unwrap();
        assert_eq!(loaded, chain, "draws, seed, and schedule survive the round trip");

        // Rewriting the loaded chain reproduces the files byte for byte.
        let copy = TempDir::new().unwrap();
        write_chain(copy.path(), &loaded).unwrap();
        for name in ["population.csv", "theta_001.csv", "theta_002.csv", "acceptance.csv"] {
            let a = std::fs::read(dir.path().join(name)).unwrap();
            let b = std::fs::read(copy.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} should be byte-stable");
        }
    }

    #[test]
    fn empty_viral_load_file_gives_empty_dataset() {
        let dir = TempDir::new().unwrap();
        let mut records = two_subject_dataset();
        records.truncate(1);
        write_dataset(dir.path(), &records).unwrap();
        std::fs::write(dir.path().join("viral_load.csv"), "subject,day,log10_vl\n").unwrap();
        let loaded = load_dataset(&DatasetPaths::in_dir(dir.path()), ViralLoadUnit::Log10CopiesPerMl).unwrap();
        assert!(loaded.is_empty(), "no measurements means no subjects, not an error");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = TempDir::new().unwrap();
        let mut records = two_subject_dataset();
        records.truncate(1);
        write_dataset(dir.path(), &records).unwrap();
        let vl = "subject,day,log10_vl\nS01,0,4.5\nS01,seven,3.9\n";
        std::fs::write(dir.path().join("viral_load.csv"), vl).unwrap();
        let err = load_dataset(&DatasetPaths::in_dir(dir.path()), ViralLoadUnit::Log10CopiesPerMl).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_header_is_rejected() {
        let dir = TempDir::new().unwrap();
        write_dataset(dir.path(), &two_subject_dataset()).unwrap();
        let vl = "subject,day,viral_load\nS01,0,4.5\n";
        std::fs::write(dir.path().join("viral_load.csv"), vl).unwrap();
        let err = load_dataset(&DatasetPaths::in_dir(dir.path()), ViralLoadUnit::Log10CopiesPerMl).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "got {err:?}");
    }

    #[test]
    fn subjects_missing_a_drug_fail_to_join() {
        let dir = TempDir::new().unwrap();
        let mut records = two_subject_dataset();
        records.truncate(1);
        write_dataset(dir.path(), &records).unwrap();
        let pk = "subject,drug,cmin\nS01,1,82.5\n";
        std::fs::write(dir.path().join("pk.csv"), pk).unwrap();
        let err = load_dataset(&DatasetPaths::in_dir(dir.path()), ViralLoadUnit::Log10CopiesPerMl).unwrap_err();
        assert!(matches!(err, Error::Join { .. }), "got {err:?}");
    }

    #[test]
    fn noncontiguous_adherence_is_rejected() {
        let dir = TempDir::new().unwrap();
        let mut records = two_subject_dataset();
        records.truncate(1);
        write_dataset(dir.path(), &records).unwrap();
        let adh = "subject,drug,interval_start_day,interval_end_day,rate\n\
                   S01,1,0,28,1\nS01,1,30,56,0.5\nS01,2,0,,1\n";
        std::fs::write(dir.path().join("adherence.csv"), adh).unwrap();
        let err = load_dataset(&DatasetPaths::in_dir(dir.path()), ViralLoadUnit::Log10CopiesPerMl).unwrap_err();
        assert!(matches!(err, Error::Join { .. }), "got {err:?}");
    }

    #[test]
    fn validate_for_fit_requires_baseline_and_two_observations() {
        let mut r = two_subject_dataset().remove(1);
        r.validate_for_fit().unwrap();
        r.observations[0].day = 3.0;
        assert!(r.validate_for_fit().is_err());
        r.observations[0].day = 0.0;
        r.observations.truncate(1);
        assert!(r.validate_for_fit().is_err());
    }

    #[test]
    fn trajectory_writer_leaves_gaps_for_unevaluable_days() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("trajectories.csv");
        let t = SubjectTrajectory {
            subject_id: "S01".into(),
            days: vec![0.0, 1.0],
            fitted_log10_vl: vec![Some(4.5), None],
            gamma: vec![0.6, 0.6],
            efficacy_threshold: 0.55,
        };
        write_trajectories(&path, &[t]).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        assert!(content.contains("S01,0,4.5,0.6,0.55"));
        assert!(content.contains("S01,1,,0.6,0.55"));
    }
}
