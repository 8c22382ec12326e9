use std::collections::HashMap;
use std::ops::RangeInclusive;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::Array2;

use super::{csv_error, parse_error, reader};
use crate::error::{Error, Result};
use crate::graph::{Edge, MobilityGraph};

/// Largest number of origins with a positive rate into one destination.
pub const MAX_ORIGINS: usize = 100;

/// Daily origin → destination inflow rates. `matrices[d][[dest, origin]]`
/// is the share of destination `dest`'s inflow on day `d` that came from
/// `origin`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawInflowSeries {
    node_ids: Vec<String>,
    dates: Vec<NaiveDate>,
    matrices: Vec<Array2<f64>>,
}

impl RawInflowSeries {
    pub fn new(node_ids: Vec<String>, days: Vec<(NaiveDate, Array2<f64>)>) -> Result<Self> {
        let n = node_ids.len();
        let mut dates = Vec::with_capacity(days.len());
        let mut matrices = Vec::with_capacity(days.len());
        for (date, m) in days {
            if m.dim() != (n, n) {
                return Err(Error::shape("inflow matrix", (n, n), m.dim()));
            }
            if dates.last().is_some_and(|d| *d >= date) {
                return Err(Error::invalid(format!(
                    "inflow dates not increasing at {date}"
                )));
            }
            for (dest, row) in m.rows().into_iter().enumerate() {
                if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::invalid(format!(
                        "{date}: rate {v} into {} outside [0, 1]",
                        node_ids[dest]
                    )));
                }
                let total: f64 = row.sum();
                if total > 1.0 + 1e-9 {
                    return Err(Error::invalid(format!(
                        "{date}: inflows into {} sum to {total}",
                        node_ids[dest]
                    )));
                }
                let origins = row.iter().filter(|&&v| v > 0.0).count();
                if origins > MAX_ORIGINS {
                    return Err(Error::invalid(format!(
                        "{date}: {} has {origins} origins, more than {MAX_ORIGINS}",
                        node_ids[dest]
                    )));
                }
            }
            dates.push(date);
            matrices.push(m);
        }
        Ok(Self {
            node_ids,
            dates,
            matrices,
        })
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }
}

/// Static graph whose edge `origin → dest` carries the mean daily rate
/// over the days of `range` present in the series. Edges that are zero
/// on every such day are absent.
pub fn aggregate_inflows(
    daily: &RawInflowSeries,
    range: RangeInclusive<NaiveDate>,
) -> Result<MobilityGraph> {
    let picked: Vec<&Array2<f64>> = daily
        .dates
        .iter()
        .zip(&daily.matrices)
        .filter(|(d, _)| range.contains(d))
        .map(|(_, m)| m)
        .collect();
    if picked.is_empty() {
        return Err(Error::EmptyData(format!(
            "no inflow data between {} and {}",
            range.start(),
            range.end()
        )));
    }
    let n = daily.node_ids.len();
    let mut sum = Array2::<f64>::zeros((n, n));
    for m in &picked {
        sum += *m;
    }
    let days = picked.len() as f64;
    let mut edges = Vec::new();
    for origin in 0..n {
        for dest in 0..n {
            let w = sum[[dest, origin]] / days;
            if w > 0.0 && origin != dest {
                edges.push(Edge {
                    source: origin,
                    target: dest,
                    weight: w,
                });
            }
        }
    }
    MobilityGraph::new(daily.node_ids.clone(), edges)
}

/// Reads every `YYYY-MM-DD.csv` in `dir`. Each file has header
/// `destination,<origin ids...>` and one row per destination; all files
/// must list the same ids in the same order.
pub fn load_inflow_dir(dir: &Path) -> Result<RawInflowSeries> {
    let listing = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in listing {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        if let Ok(date) = NaiveDate::parse_from_str(stem, "%Y-%m-%d") {
            files.push((date, path));
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyData(format!(
            "no dated inflow files in {}",
            dir.display()
        )));
    }

    let mut ids: Option<Vec<String>> = None;
    let mut days = Vec::with_capacity(files.len());
    for (date, path) in files {
        let mut rdr = reader(&path)?;
        let header = rdr.headers().map_err(|e| csv_error(&path, e))?.clone();
        let origins: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        match &ids {
            None => ids = Some(origins.clone()),
            Some(known) if *known != origins => {
                return Err(parse_error(
                    &path,
                    1,
                    "origin columns differ from earlier files",
                ));
            }
            Some(_) => {}
        }
        let index: HashMap<&str, usize> = origins
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let n = origins.len();
        let mut m = Array2::zeros((n, n));
        let mut filled = vec![false; n];
        for record in rdr.records() {
            let record = record.map_err(|e| csv_error(&path, e))?;
            let line = record.position().map_or(0, |p| p.line());
            let dest = *index.get(&record[0]).ok_or_else(|| {
                parse_error(&path, line, format!("unknown destination `{}`", &record[0]))
            })?;
            if std::mem::replace(&mut filled[dest], true) {
                return Err(parse_error(
                    &path,
                    line,
                    format!("duplicate destination `{}`", &record[0]),
                ));
            }
            if record.len() != n + 1 {
                return Err(parse_error(
                    &path,
                    line,
                    format!("expected {} cells, got {}", n + 1, record.len()),
                ));
            }
            for (origin, cell) in record.iter().skip(1).enumerate() {
                m[[dest, origin]] = cell
                    .parse()
                    .map_err(|_| parse_error(&path, line, format!("bad rate `{cell}`")))?;
            }
        }
        days.push((date, m));
    }
    RawInflowSeries::new(ids.unwrap_or_default(), days)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, d).unwrap()
    }

    fn ids() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    #[test]
    fn mean_of_daily_rates() {
        let series = RawInflowSeries::new(
            ids(),
            vec![
                (day(1), array![[0.0, 0.2], [0.0, 0.0]]),
                (day(2), array![[0.0, 0.4], [0.0, 0.0]]),
                (day(5), array![[0.0, 1.0], [0.5, 0.0]]),
            ],
        )
        .unwrap();
        let g = aggregate_inflows(&series, day(1)..=day(2)).unwrap();
        assert_eq!(g.edge_count(), 1);
        let e = g.edges()[0];
        assert_eq!((e.source, e.target), (1, 0));
        assert!((e.weight - 0.3).abs() < 1e-15);

        let single = aggregate_inflows(&series, day(5)..=day(5)).unwrap();
        assert_eq!(single.edge_count(), 2);
        assert!(aggregate_inflows(&series, day(3)..=day(4)).is_err());
    }

    #[test]
    fn rejects_invalid_rates() {
        assert!(
            RawInflowSeries::new(ids(), vec![(day(1), array![[0.0, 1.5], [0.0, 0.0]])]).is_err()
        );
        assert!(
            RawInflowSeries::new(ids(), vec![(day(1), array![[0.6, 0.6], [0.0, 0.0]])]).is_err()
        );
        assert!(RawInflowSeries::new(ids(), vec![(day(1), array![[0.0]])]).is_err());
    }

    #[test]
    fn loads_dated_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("2020-01-02.csv"),
            "destination,a,b\nb,0.4,0\na,0,0\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("2020-01-01.csv"),
            "destination,a,b\na,0,0\nb,0.2,0\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let series = load_inflow_dir(dir.path()).unwrap();
        assert_eq!(series.dates(), [day(1), day(2)]);
        let g = aggregate_inflows(&series, day(1)..=day(2)).unwrap();
        assert_eq!(g.node_ids(), ["a", "b"]);
        let e = g.edges()[0];
        assert_eq!((e.source, e.target), (0, 1));
        assert!((e.weight - 0.3).abs() < 1e-15);
    }
}
