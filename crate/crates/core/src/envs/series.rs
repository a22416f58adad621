//! Ingestion of recorded exogenous series (for example historical prices).

use std::path::Path;

use crate::error::{Error, Result};

/// Reads a numeric CSV with a header row and cuts it into exogenous trajectories.
///
/// Each trajectory holds `horizon + 1` exo vectors; vector `h` of the episode
/// starting at row `s` is the flattened window of rows `s + h .. s + h + window`
/// (oldest row first). Episodes start every `stride` rows; a trailing partial
/// episode is dropped.
pub fn load_exo_series_csv(path: &Path, window: usize, horizon: usize, stride: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = record
            .iter()
            .map(|c| c.trim().parse::<f64>().map_err(|_| Error::parse(line, format!("non-numeric cell {c:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    exo_windows(&rows, window, horizon, stride)
}

pub fn exo_windows(rows: &[Vec<f64>], window: usize, horizon: usize, stride: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    if window == 0 || horizon == 0 || stride == 0 {
        return Err(Error::invalid("window, horizon, and stride must be positive"));
    }
    let need = window + horizon;
    if rows.len() < need {
        return Err(Error::invalid("series too short"));
    }
    let n_episodes = (rows.len() - need) / stride + 1;
    Ok((0..n_episodes)
        .map(|ep| {
            let start = ep * stride;
            (0..=horizon).map(|h| rows[start + h..start + h + window].iter().flatten().copied().collect()).collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(n: usize, f: impl Fn(usize) -> f64) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![f(i)]).collect()
    }

    #[test]
    fn constant_series_gives_constant_windows() {
        let eps = exo_windows(&column(110, |_| 0.5), 3, 100, 100).unwrap();
        assert!(eps.iter().flatten().all(|v| v == &vec![0.5, 0.5, 0.5]));
    }

    #[test]
    fn boundary_length_is_rejected() {
        let err = exo_windows(&column(102, |i| i as f64), 3, 100, 1).unwrap_err();
        assert!(err.to_string().contains("series too short"));
        assert_eq!(exo_windows(&column(103, |i| i as f64), 3, 100, 1).unwrap().len(), 1);
    }

    #[test]
    fn remainder_is_dropped() {
        let eps = exo_windows(&column(200, |i| i as f64), 3, 100, 100).unwrap();
        assert_eq!(eps.len(), 1);
        assert_eq!(eps[0].len(), 101);
        assert_eq!(eps[0][0], vec![0.0, 1.0, 2.0]);
        assert_eq!(eps[0][100], vec![100.0, 101.0, 102.0]);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("prices.csv");
        std::fs::write(&p, "price\n0.1\n0.2\nabc\n").unwrap();
        match load_exo_series_csv(&p, 1, 1, 1) {
            Err(Error::Parse { line: 4, .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}
