use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;

use crate::error::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Columns every vaccination file must carry.
pub const REQUIRED_COLUMNS: [&str; 7] = [
    "date",
    "location",
    "total_vaccinations",
    "total_distributed",
    "people_vaccinated",
    "people_fully_vaccinated",
    "daily_vaccinations",
];

/// One state-day row. Counts are `None` where the source cell was empty;
/// [`fill_missing`] replaces those.
#[derive(Debug, Clone, PartialEq)]
pub struct VaccinationRecord {
    pub date: NaiveDate,
    pub state: String,
    pub total_vaccinations: Option<f64>,
    pub total_distributed: Option<f64>,
    pub people_vaccinated: Option<f64>,
    pub people_fully_vaccinated: Option<f64>,
    pub daily_vaccinations: Option<f64>,
    /// Any further numeric columns (per-hundred / per-million rates), keyed by header.
    pub rates: BTreeMap<String, Option<f64>>,
}

impl VaccinationRecord {
    /// Value of a named numeric column, required or optional.
    pub fn column(&self, name: &str) -> Option<f64> {
        match name {
            "total_vaccinations" => self.total_vaccinations,
            "total_distributed" => self.total_distributed,
            "people_vaccinated" => self.people_vaccinated,
            "people_fully_vaccinated" => self.people_fully_vaccinated,
            "daily_vaccinations" => self.daily_vaccinations,
            other => self.rates.get(other).copied().flatten(),
        }
    }

    fn counts_mut(&mut self) -> [&mut Option<f64>; 5] {
        [
            &mut self.total_vaccinations,
            &mut self.total_distributed,
            &mut self.people_vaccinated,
            &mut self.people_fully_vaccinated,
            &mut self.daily_vaccinations,
        ]
    }
}

/// Records grouped by state, each group sorted by date.
pub type RecordSet = BTreeMap<String, Vec<VaccinationRecord>>;

/// Every numeric column name present in a record set: required counts first, then rates.
pub fn numeric_columns(records: &RecordSet) -> Vec<String> {
    let mut cols: Vec<String> = REQUIRED_COLUMNS[2..].iter().map(|s| s.to_string()).collect();
    let rates: BTreeSet<&String> = records
        .values()
        .flat_map(|rows| rows.iter().flat_map(|r| r.rates.keys()))
        .collect();
    cols.extend(rates.into_iter().cloned());
    cols
}

fn parse_cell(
    raw: &str,
    column: &str,
    path: &Path,
    line: u64,
) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let v: f64 = raw.parse().map_err(|_| Error::Row {
        path: path.to_path_buf(),
        line,
        message: format!("column `{column}`: cannot parse `{raw}` as a number"),
    })?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Row {
            path: path.to_path_buf(),
            line,
            message: format!("column `{column}`: expected a non-negative count, got `{raw}`"),
        });
    }
    Ok(Some(v))
}

pub fn parse_vaccination_csv(path: &Path) -> Result<RecordSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_vaccination_reader(file, path)
}

/// Parses the OWID-style state vaccination table. `origin` is only used in error messages.
pub fn parse_vaccination_reader<R: Read>(reader: R, origin: &Path) -> Result<RecordSet> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(Error::EmptyFile(origin.to_path_buf()));
    }
    let index_of = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut required = [0usize; 7];
    for (slot, name) in required.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = index_of(name).ok_or_else(|| Error::Schema {
            path: origin.to_path_buf(),
            column: name.to_string(),
        })?;
    }
    let rate_columns: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| !required.contains(i))
        .map(|(i, h)| (i, h.trim().to_string()))
        .collect();

    let mut out = RecordSet::new();
    let mut rows = 0usize;
    for result in rdr.records() {
        let row = result?;
        rows += 1;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let date_raw = row[required[0]].trim();
        let date = NaiveDate::parse_from_str(date_raw, DATE_FORMAT).map_err(|_| Error::Row {
            path: origin.to_path_buf(),
            line,
            message: format!("unparseable date `{date_raw}`"),
        })?;
        let state = row[required[1]].trim().to_string();
        if state.is_empty() {
            return Err(Error::Row {
                path: origin.to_path_buf(),
                line,
                message: "empty location".into(),
            });
        }
        let cell = |k: usize| parse_cell(&row[required[k]], REQUIRED_COLUMNS[k], origin, line);
        let mut rates = BTreeMap::new();
        for (i, name) in &rate_columns {
            rates.insert(name.clone(), parse_cell(&row[*i], name, origin, line)?);
        }
        let record = VaccinationRecord {
            date,
            state: state.clone(),
            total_vaccinations: cell(2)?,
            total_distributed: cell(3)?,
            people_vaccinated: cell(4)?,
            people_fully_vaccinated: cell(5)?,
            daily_vaccinations: cell(6)?,
            rates,
        };
        out.entry(state).or_default().push(record);
    }
    if rows == 0 {
        return Err(Error::EmptyFile(origin.to_path_buf()));
    }
    for (state, rows) in out.iter_mut() {
        rows.sort_by_key(|r| r.date);
        if let Some(w) = rows.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(Error::invalid(format!(
                "{}: duplicate row for {state} on {}",
                origin.display(),
                w[0].date
            )));
        }
    }
    Ok(out)
}

/// Writes records in the same schema [`parse_vaccination_reader`] accepts.
pub fn write_vaccination_csv<W: Write>(out: W, records: &RecordSet) -> Result<()> {
    let rate_names: Vec<String> = numeric_columns(records).split_off(5);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
    header.extend(rate_names.iter().map(String::as_str));
    w.write_record(&header)?;
    let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for rows in records.values() {
        for r in rows {
            let mut fields = vec![
                r.date.format(DATE_FORMAT).to_string(),
                r.state.clone(),
                fmt(r.total_vaccinations),
                fmt(r.total_distributed),
                fmt(r.people_vaccinated),
                fmt(r.people_fully_vaccinated),
                fmt(r.daily_vaccinations),
            ];
            fields.extend(rate_names.iter().map(|n| fmt(r.rates.get(n).copied().flatten())));
            w.write_record(&fields)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FillReport {
    /// Cells filled from a neighbouring day.
    pub filled_cells: usize,
    /// (state, column) pairs with no observed value at all, set to 0.
    pub empty_columns: Vec<(String, String)>,
}

fn fill_series(values: &mut [&mut Option<f64>]) -> Option<usize> {
    let first = values.iter().find_map(|v| **v)?;
    let mut filled = 0;
    let mut last = first;
    for v in values.iter_mut() {
        match **v {
            Some(x) => last = x,
            None => {
                **v = Some(last);
                filled += 1;
            }
        }
    }
    Some(filled)
}

/// Forward-fills gaps within each state; leading gaps take the first observed value.
pub fn fill_missing(records: &mut RecordSet) -> FillReport {
    let mut report = FillReport::default();
    let columns = numeric_columns(records);
    for (state, rows) in records.iter_mut() {
        for k in 0..5 {
            let mut cells: Vec<&mut Option<f64>> =
                rows.iter_mut().map(|r| r.counts_mut().into_iter().nth(k).unwrap()).collect();
            match fill_series(&mut cells) {
                Some(n) => report.filled_cells += n,
                None => {
                    for c in cells {
                        *c = Some(0.0);
                    }
                    report.empty_columns.push((state.clone(), columns[k].clone()));
                }
            }
        }
        for name in &columns[5..] {
            let mut cells: Vec<&mut Option<f64>> = rows
                .iter_mut()
                .map(|r| r.rates.entry(name.clone()).or_insert(None))
                .collect();
            match fill_series(&mut cells) {
                Some(n) => report.filled_cells += n,
                None => {
                    for c in cells {
                        *c = Some(0.0);
                    }
                    report.empty_columns.push((state.clone(), name.clone()));
                }
            }
        }
    }
    for (state, col) in &report.empty_columns {
        log::warn!("{state}: column `{col}` has no observed values; set to 0");
    }
    report
}

/// Counts day-over-day decreases of cumulative columns. Real data has revisions, so
/// these are reported rather than rejected.
pub fn monotonic_violations(records: &RecordSet) -> usize {
    const CUMULATIVE: [&str; 4] = [
        "total_vaccinations",
        "total_distributed",
        "people_vaccinated",
        "people_fully_vaccinated",
    ];
    let mut count = 0;
    for rows in records.values() {
        for col in CUMULATIVE {
            let mut prev: Option<f64> = None;
            for r in rows {
                if let Some(v) = r.column(col) {
                    if prev.is_some_and(|p| v < p) {
                        count += 1;
                    }
                    prev = Some(v);
                }
            }
        }
    }
    count
}

/// State → total population.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PopulationTable(pub BTreeMap<String, f64>);

impl PopulationTable {
    pub fn get(&self, state: &str) -> Option<f64> {
        self.0.get(state).copied()
    }
}

pub fn parse_population_csv(path: &Path) -> Result<PopulationTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema {
                path: path.to_path_buf(),
                column: name.into(),
            })
    };
    let (si, pi) = (col("state")?, col("population")?);
    let mut table = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let pop: f64 = row[pi].trim().parse().map_err(|_| Error::Row {
            path: path.to_path_buf(),
            line,
            message: format!("bad population `{}`", &row[pi]),
        })?;
        if !(pop > 0.0) || !pop.is_finite() {
            return Err(Error::Row {
                path: path.to_path_buf(),
                line,
                message: format!("population must be positive, got {pop}"),
            });
        }
        table.insert(row[si].trim().to_string(), pop);
    }
    if table.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(PopulationTable(table))
}

pub fn write_population_csv<W: Write>(out: W, table: &PopulationTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["state", "population"])?;
    for (s, p) in &table.0 {
        w.write_record([s.clone(), p.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "date,location,total_vaccinations,total_distributed,people_vaccinated,people_fully_vaccinated,daily_vaccinations,total_vaccinations_per_hundred";

    fn parse(text: &str) -> Result<RecordSet> {
        parse_vaccination_reader(text.as_bytes(), Path::new("mem.csv"))
    }

    #[test]
    fn parses_and_sorts_by_date() {
        let text = format!(
            "{HEADER}\n\
             2021-01-03,Utah,300,500,250,50,100,9.1\n\
             2021-01-01,Utah,100,400,90,10,,3.0\n\
             2021-01-02,Utah,200,450,170,30,100,6.2\n"
        );
        let set = parse(&text).unwrap();
        let rows = &set["Utah"];
        assert_eq!(rows.len(), 3);
        assert!(rows.windows(2).all(|w| w[0].date < w[1].date));
        assert_eq!(rows[0].daily_vaccinations, None);
        assert_eq!(rows[2].rates["total_vaccinations_per_hundred"], Some(9.1));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let text = "date,location,total_vaccinations,total_distributed,people_vaccinated,people_fully_vaccinated\n2021-01-01,Utah,1,1,1,1\n";
        match parse(text) {
            Err(Error::Schema { column, .. }) => assert_eq!(column, "daily_vaccinations"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn bad_date_reports_line() {
        let text = format!("{HEADER}\n2021-01-01,Utah,1,1,1,1,1,\n2021-13-45,Utah,1,1,1,1,1,\n");
        match parse(&text) {
            Err(Error::Row { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("2021-13-45"));
            }
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_distinct_error() {
        assert!(matches!(parse(""), Err(Error::EmptyFile(_))));
        assert!(matches!(parse(&format!("{HEADER}\n")), Err(Error::EmptyFile(_))));
    }

    #[test]
    fn duplicate_dates_rejected() {
        let text = format!("{HEADER}\n2021-01-01,Utah,1,1,1,1,1,\n2021-01-01,Utah,2,2,2,2,2,\n");
        assert!(parse(&text).is_err());
    }

    #[test]
    fn fill_forward_and_leading_backfill() {
        let text = format!(
            "{HEADER}\n\
             2021-01-01,Utah,,400,90,10,,\n\
             2021-01-02,Utah,200,,170,30,100,\n\
             2021-01-03,Utah,,500,250,50,,\n"
        );
        let mut set = parse(&text).unwrap();
        let report = fill_missing(&mut set);
        let rows = &set["Utah"];
        assert_eq!(rows[0].total_vaccinations, Some(200.0));
        assert_eq!(rows[2].total_vaccinations, Some(200.0));
        assert_eq!(rows[1].total_distributed, Some(400.0));
        assert_eq!(rows[0].daily_vaccinations, Some(100.0));
        assert_eq!(rows[2].daily_vaccinations, Some(100.0));
        // total_vaccinations ×2, total_distributed ×1, daily ×2
        assert_eq!(report.filled_cells, 5);
        // the rate column is empty everywhere
        assert_eq!(report.empty_columns.len(), 1);
    }

    #[test]
    fn monotonic_violations_are_counted() {
        let text = format!(
            "{HEADER}\n2021-01-01,Utah,100,400,90,10,1,\n2021-01-02,Utah,90,400,90,10,1,\n"
        );
        let set = parse(&text).unwrap();
        assert_eq!(monotonic_violations(&set), 1);
    }

    fn arb_records() -> impl Strategy<Value = RecordSet> {
        let cell = prop_oneof![1 => Just(None), 4 => (0u32..1_000_000).prop_map(|v| Some(v as f64 / 4.0))];
        let row = proptest::collection::vec(cell, 6);
        proptest::collection::btree_map(
            "[A-Z][a-z]{2,8}",
            proptest::collection::vec(row, 1..6),
            1..4,
        )
        .prop_map(|m| {
            m.into_iter()
                .map(|(state, rows)| {
                    let base = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
                    let recs = rows
                        .into_iter()
                        .enumerate()
                        .map(|(i, c)| VaccinationRecord {
                            date: base + chrono::Days::new(i as u64),
                            state: state.clone(),
                            total_vaccinations: c[0],
                            total_distributed: c[1],
                            people_vaccinated: c[2],
                            people_fully_vaccinated: c[3],
                            daily_vaccinations: c[4],
                            rates: BTreeMap::from([("daily_vaccinations_per_million".into(), c[5])]),
                        })
                        .collect();
                    (state, recs)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn write_then_parse_round_trips(records in arb_records()) {
            let mut buf = Vec::new();
            write_vaccination_csv(&mut buf, &records).unwrap();
            let back = parse_vaccination_reader(buf.as_slice(), Path::new("rt.csv")).unwrap();
            prop_assert_eq!(back, records);
        }
    }
}
