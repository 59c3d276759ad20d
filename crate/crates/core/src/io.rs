//! CSV ingestion, weight files, plot series, summary tables and config files.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::error::{KdbError, Result};
use crate::model::{validate_dataset, BalanceWeights, Dataset, WeightScheme};
use crate::simlab::MonteCarloSummary;

/// Column layout of an input CSV. Without a header row, columns are named
/// by their 1-based position (`"1"`, `"2"`, ...).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub treatment_column: String,
    pub outcome_column: String,
    pub covariate_columns: Vec<String>,
    pub delimiter: u8,
    pub header: bool,
}

impl CsvSchema {
    pub fn new(treatment: &str, outcome: &str, covariates: &[&str]) -> Self {
        CsvSchema {
            treatment_column: treatment.to_string(),
            outcome_column: outcome.to_string(),
            covariate_columns: covariates.iter().map(|s| s.to_string()).collect(),
            delimiter: b',',
            header: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.covariate_columns.is_empty() {
            return Err(KdbError::Schema("covariate list is empty".into()));
        }
        let mut seen = HashSet::new();
        let all = [&self.treatment_column, &self.outcome_column].into_iter().chain(&self.covariate_columns);
        for name in all {
            if !seen.insert(name.as_str()) {
                return Err(KdbError::Schema(format!("column {name:?} is used twice")));
            }
        }
        Ok(())
    }
}

fn reader<R: Read>(r: R, delimiter: u8) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(r)
}

fn csv_error(e: csv::Error, row: usize) -> KdbError {
    match e.kind() {
        csv::ErrorKind::Io(_) => KdbError::Io(e.to_string()),
        _ => KdbError::Parse { row, column: String::new(), message: e.to_string() },
    }
}

/// Column names of a delimited file, or positional names without a header.
pub fn csv_columns<R: Read>(r: R, delimiter: u8, header: bool) -> Result<Vec<String>> {
    let mut rd = reader(r, delimiter);
    let mut rec = csv::StringRecord::new();
    if !rd.read_record(&mut rec).map_err(|e| csv_error(e, 0))? {
        return Err(KdbError::EmptySample);
    }
    Ok(if header {
        rec.iter().map(str::to_string).collect()
    } else {
        (1..=rec.len()).map(|i| i.to_string()).collect()
    })
}

pub fn read_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let f = std::fs::File::open(path.as_ref())
        .map_err(|e| KdbError::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_csv_from(f, schema)
}

/// Parse a dataset. Data rows are numbered from 1 in errors; the treatment
/// column accepts only the tokens `0` and `1`.
pub fn read_csv_from<R: Read>(r: R, schema: &CsvSchema) -> Result<Dataset> {
    schema.validate()?;
    let mut rd = reader(r, schema.delimiter);
    let mut rec = csv::StringRecord::new();
    let names: Vec<String> = if schema.header {
        if !rd.read_record(&mut rec).map_err(|e| csv_error(e, 0))? {
            return Err(KdbError::EmptySample);
        }
        rec.iter().map(str::to_string).collect()
    } else {
        Vec::new()
    };
    let find = |name: &str, width: usize| -> Result<usize> {
        if schema.header {
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| KdbError::Schema(format!("column {name:?} not found in header")))
        } else {
            match name.parse::<usize>() {
                Ok(k) if k >= 1 && k <= width => Ok(k - 1),
                _ => Err(KdbError::Schema(format!("column {name:?} is not a position in 1..={width}"))),
            }
        }
    };

    let mut cols: Option<(usize, usize, Vec<usize>)> = None;
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut xs = Vec::new();
    let mut row = 0;
    loop {
        let more = rd.read_record(&mut rec).map_err(|e| csv_error(e, row + 1))?;
        if !more {
            break;
        }
        row += 1;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if cols.is_none() {
            let width = if schema.header { names.len() } else { rec.len() };
            let ti = find(&schema.treatment_column, width)?;
            let yi = find(&schema.outcome_column, width)?;
            let xi = schema.covariate_columns.iter().map(|c| find(c, width)).collect::<Result<Vec<_>>>()?;
            cols = Some((ti, yi, xi));
        }
        let (ti, yi, xi) = cols.as_ref().unwrap();
        let cell = |idx: usize, name: &str| -> Result<&str> {
            match rec.get(idx) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(KdbError::Parse { row, column: name.to_string(), message: "missing value".into() }),
            }
        };
        let number = |idx: usize, name: &str| -> Result<f64> {
            let s = cell(idx, name)?;
            s.parse::<f64>().map_err(|_| KdbError::Parse {
                row,
                column: name.to_string(),
                message: format!("{s:?} is not a number"),
            })
        };
        t.push(match cell(*ti, &schema.treatment_column)? {
            "0" => 0.0,
            "1" => 1.0,
            other => {
                return Err(KdbError::Parse {
                    row,
                    column: schema.treatment_column.clone(),
                    message: format!("treatment must be 0 or 1, got {other:?}"),
                })
            }
        });
        y.push(number(*yi, &schema.outcome_column)?);
        for (k, &c) in xi.iter().enumerate() {
            xs.push(number(c, &schema.covariate_columns[k])?);
        }
    }
    let n = t.len();
    if n == 0 {
        return Err(KdbError::EmptySample);
    }
    let x = DMatrix::from_row_slice(n, schema.covariate_columns.len(), &xs);
    validate_dataset(x, &t, &y)
}

/// `unit,group,weight` with 1-based units in the dataset's row order.
pub fn write_weights<W: Write>(w: W, data: &Dataset, weights: &BalanceWeights) -> Result<()> {
    weights.check_dims(data)?;
    let mut per_row = vec![0.0; data.n()];
    for (&i, &p) in data.treated_indices().iter().zip(&weights.p) {
        per_row[i] = p;
    }
    for (&j, &q) in data.control_indices().iter().zip(&weights.q) {
        per_row[j] = q;
    }
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| KdbError::Io(e.to_string());
    wr.write_record(["unit", "group", "weight"]).map_err(io)?;
    for (i, v) in per_row.iter().enumerate() {
        let group = if data.is_treated(i) { "treated" } else { "control" };
        wr.write_record([(i + 1).to_string(), group.to_string(), v.to_string()]).map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}

/// Read a weight file written by [`write_weights`] back against `data`.
pub fn read_weights<R: Read>(r: R, data: &Dataset, scheme: WeightScheme, lambda: f64) -> Result<BalanceWeights> {
    let mut rd = reader(r, b',');
    let mut rec = csv::StringRecord::new();
    if !rd.read_record(&mut rec).map_err(|e| csv_error(e, 0))? {
        return Err(KdbError::EmptySample);
    }
    if rec.iter().collect::<Vec<_>>() != ["unit", "group", "weight"] {
        return Err(KdbError::Schema("weight file header must be unit,group,weight".into()));
    }
    let mut per_row: Vec<Option<f64>> = vec![None; data.n()];
    let mut row = 0;
    while rd.read_record(&mut rec).map_err(|e| csv_error(e, row + 1))? {
        row += 1;
        let bad = |column: &str, message: String| KdbError::Parse { row, column: column.into(), message };
        let unit: usize = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .filter(|&u| u >= 1 && u <= data.n())
            .ok_or_else(|| bad("unit", format!("unit must be in 1..={}", data.n())))?;
        let group = rec.get(1).unwrap_or("");
        let expect = if data.is_treated(unit - 1) { "treated" } else { "control" };
        if group != expect {
            return Err(bad("group", format!("unit {unit} is {expect}, file says {group:?}")));
        }
        let v: f64 = rec
            .get(2)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("weight", "not a number".into()))?;
        if per_row[unit - 1].replace(v).is_some() {
            return Err(bad("unit", format!("unit {unit} appears twice")));
        }
    }
    let get = |i: usize| per_row[i].ok_or_else(|| KdbError::Schema(format!("unit {} has no weight", i + 1)));
    let p = data.treated_indices().iter().map(|&i| get(i)).collect::<Result<Vec<_>>>()?;
    let q = data.control_indices().iter().map(|&i| get(i)).collect::<Result<Vec<_>>>()?;
    BalanceWeights::new(p, q, scheme, lambda)
}

/// Two-column plot series with a header row.
pub fn write_series<W: Write>(w: W, header: (&str, &str), points: &[(f64, f64)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| KdbError::Io(e.to_string());
    wr.write_record([header.0, header.1]).map_err(io)?;
    for (a, b) in points {
        wr.write_record([a.to_string(), b.to_string()]).map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}

fn summary_rows(s: &MonteCarloSummary, fmt: &dyn Fn(f64) -> String) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = ["method", "lambda", s.target.name(), "abs(Bias)", "sd", "RMSE", "rw", "KD"]
        .iter()
        .map(|h| h.to_string())
        .collect();
    header.extend(["maxASMD", "meanASMD", "medASMD", "meanKS", "meanT"].iter().map(|h| h.to_string()));
    header.extend(s.hidden_names.iter().map(|h| format!("{h}ASMD")));
    header.extend(["successes", "failures"].iter().map(|h| h.to_string()));
    let na = || "NA".to_string();
    let rows = s
        .methods
        .iter()
        .map(|m| {
            let mut r = vec![m.spec.kind.label().to_string(), m.spec.lambda.to_string()];
            match &m.report {
                Some(e) => r.extend([fmt(e.mean), fmt(e.bias.abs()), fmt(e.sd), fmt(e.rmse)]),
                None => r.extend((0..4).map(|_| na())),
            }
            match &m.balance {
                Some(b) => r.extend([b.rw, b.kd, b.max_asmd, b.mean_asmd, b.med_asmd, b.mean_ks, b.mean_t].map(fmt)),
                None => r.extend((0..7).map(|_| na())),
            }
            for k in 0..s.hidden_names.len() {
                r.push(m.hidden_asmd.get(k).map(|&v| fmt(v)).unwrap_or_else(na));
            }
            r.push(m.successes.to_string());
            r.push(m.failures.to_string());
            r
        })
        .collect();
    (header, rows)
}

/// Summary table at full precision.
pub fn write_summary_csv<W: Write>(w: W, s: &MonteCarloSummary) -> Result<()> {
    let (header, rows) = summary_rows(s, &|v| v.to_string());
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| KdbError::Io(e.to_string());
    wr.write_record(&header).map_err(io)?;
    for r in rows {
        wr.write_record(&r).map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}

/// Aligned summary table rounded to five decimals.
pub fn format_summary_table(s: &MonteCarloSummary) -> String {
    let (header, rows) = summary_rows(s, &|v| format!("{v:.5}"));
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for r in &rows {
        for (k, c) in r.iter().enumerate() {
            widths[k] = widths[k].max(c.len());
        }
    }
    let line = |cells: &[String]| -> String {
        let parts: Vec<String> = cells.iter().enumerate().map(|(k, c)| format!("{c:>w$}", w = widths[k])).collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(&header);
    for r in &rows {
        out.push_str(&line(r));
    }
    out
}

/// Settings read from a TOML file. Keys mirror the long command-line flags
/// with dashes replaced by underscores; `do` is spelled `do_outcome`.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub design: Option<String>,
    pub n: Option<usize>,
    pub sigma2: Option<f64>,
    pub rho: Option<f64>,
    pub dt: Option<String>,
    pub do_outcome: Option<String>,
    pub gamma: Option<f64>,
    pub p_treat: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub alpha3: Option<f64>,
    pub alpha4: Option<f64>,
    pub lambda_grid: Option<Vec<f64>>,
    pub lambda: Option<f64>,
    pub reps: Option<usize>,
    pub b: Option<usize>,
    pub methods: Option<Vec<String>>,
    pub scheme: Option<String>,
    pub target: Option<String>,
    pub resampling: Option<String>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub csv: Option<String>,
    pub treatment: Option<String>,
    pub outcome: Option<String>,
    pub covariates: Option<Vec<String>>,
    pub out: Option<String>,
}

pub fn parse_config(text: &str) -> Result<FileConfig> {
    toml::from_str(text).map_err(|e| KdbError::InvalidArgument(format!("config: {}", e.message())))
}

pub fn load_config(path: impl AsRef<Path>) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| KdbError::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_config(&text)
}

/// Flag, then config file, then default.
pub fn resolve<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balancing::estimate_ate;
    use crate::model::WeightScheme;

    const FIXTURE: &str = "T,Y,X1\n1,3.5,0.2\n0,1.0,-1.5\n1,2.0,0.7\n";

    #[test]
    fn reads_small_fixture() {
        let d = read_csv_from(FIXTURE.as_bytes(), &CsvSchema::new("T", "Y", &["X1"])).unwrap();
        assert_eq!((d.n(), d.d(), d.n1()), (3, 1, 2));
        assert_eq!(d.y(), &[3.5, 1.0, 2.0]);
        assert_eq!(d.x()[(1, 0)], -1.5);
    }

    #[test]
    fn missing_cell_names_row_and_column() {
        let text = "T,Y,X1\n1,3.5,0.2\n0,1.0,\n1,2.0,0.7\n";
        let err = read_csv_from(text.as_bytes(), &CsvSchema::new("T", "Y", &["X1"])).unwrap_err();
        assert_eq!(err, KdbError::Parse { row: 2, column: "X1".into(), message: "missing value".into() });
        let short = "T,Y,X1\n1,3.5,0.2\n0,1.0\n";
        let err = read_csv_from(short.as_bytes(), &CsvSchema::new("T", "Y", &["X1"])).unwrap_err();
        assert!(matches!(err, KdbError::Parse { row: 2, ref column, .. } if column == "X1"));
    }

    #[test]
    fn treatment_tokens_are_exact() {
        for bad in ["1.0", "2", "yes", "true"] {
            let text = format!("T,Y,X1\n{bad},1,0\n0,1,1\n");
            let err = read_csv_from(text.as_bytes(), &CsvSchema::new("T", "Y", &["X1"])).unwrap_err();
            assert!(matches!(err, KdbError::Parse { row: 1, ref column, .. } if column == "T"), "{bad}");
        }
    }

    #[test]
    fn schema_violations() {
        let s = CsvSchema::new("T", "Y", &[]);
        assert!(matches!(read_csv_from(FIXTURE.as_bytes(), &s), Err(KdbError::Schema(_))));
        let s = CsvSchema::new("T", "Y", &["Y"]);
        assert!(matches!(read_csv_from(FIXTURE.as_bytes(), &s), Err(KdbError::Schema(_))));
        let s = CsvSchema::new("T", "Y", &["X9"]);
        assert!(matches!(read_csv_from(FIXTURE.as_bytes(), &s), Err(KdbError::Schema(_))));
    }

    #[test]
    fn headerless_and_semicolons() {
        let text = "1;3.5;0.2\n0;1.0;-1.5\n";
        let s = CsvSchema { delimiter: b';', header: false, ..CsvSchema::new("1", "2", &["3"]) };
        let d = read_csv_from(text.as_bytes(), &s).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(csv_columns(text.as_bytes(), b';', false).unwrap(), vec!["1", "2", "3"]);
    }

    #[test]
    fn nsw_schema_parses() {
        let text = "treat,age,education,black,hispanic,married,nodegree,RE74,RE75,RE78\n\
                    1,37,11,1,0,1,1,0,0,9930.046\n0,23,10,1,0,0,1,0,0,0\n";
        let covs = ["age", "education", "black", "hispanic", "married", "nodegree", "RE74", "RE75"];
        let d = read_csv_from(text.as_bytes(), &CsvSchema::new("treat", "RE78", &covs)).unwrap();
        assert_eq!((d.n(), d.d()), (2, 8));
    }

    #[test]
    fn weights_round_trip() {
        let d = read_csv_from(FIXTURE.as_bytes(), &CsvSchema::new("T", "Y", &["X1"])).unwrap();
        let w = BalanceWeights::new(vec![0.3, 0.7], vec![1.0], WeightScheme::Kdbc, 0.0).unwrap();
        let mut buf = Vec::new();
        write_weights(&mut buf, &d, &w).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("unit,group,weight\n1,treated,0.3\n2,control,1\n"));
        let back = read_weights(buf.as_slice(), &d, WeightScheme::Kdbc, 0.0).unwrap();
        assert_eq!(back, w);
        assert!((estimate_ate(&d, &back).unwrap() - estimate_ate(&d, &w).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn weight_file_errors() {
        let d = read_csv_from(FIXTURE.as_bytes(), &CsvSchema::new("T", "Y", &["X1"])).unwrap();
        let wrong_group = "unit,group,weight\n1,control,0.5\n";
        assert!(read_weights(wrong_group.as_bytes(), &d, WeightScheme::Kdbc, 0.0).is_err());
        let missing = "unit,group,weight\n1,treated,1\n2,control,1\n";
        assert!(matches!(read_weights(missing.as_bytes(), &d, WeightScheme::Kdbc, 0.0), Err(KdbError::Schema(_))));
    }

    #[test]
    fn series_file() {
        let mut buf = Vec::new();
        write_series(&mut buf, ("x", "F"), &[(0.5, 0.25), (1.0, 1.0)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,F\n0.5,0.25\n1,1\n");
    }

    #[test]
    fn config_precedence() {
        let cases: [(Option<u64>, Option<u64>, u64, u64); 4] =
            [(Some(1), Some(2), 3, 1), (None, Some(2), 3, 2), (None, None, 3, 3), (Some(1), None, 3, 1)];
        for (flag, file, default, want) in cases {
            assert_eq!(resolve(flag, file, default), want);
        }
    }

    #[test]
    fn config_parsing() {
        let c = parse_config("design = \"sim2\"\nreps = 20\nlambda_grid = [0.0, 2.0]\nmethods = [\"kdm1\"]\n").unwrap();
        assert_eq!(c.design.as_deref(), Some("sim2"));
        assert_eq!(c.reps, Some(20));
        assert_eq!(c.lambda_grid, Some(vec![0.0, 2.0]));
        assert!(parse_config("bogus = 1\n").is_err());
        assert!(parse_config("reps = \"many\"\n").is_err());
    }
}
