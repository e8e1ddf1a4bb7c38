//! Record CSV: header `t,u1..uP,y1..yP`, one row per sample.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use rtvf::TimeSeries;

/// Relative tolerance on the sample spacing read back from the time column.
const GRID_RTOL: f64 = 1e-6;

/// Reads a record and splits it into inputs and outputs.
pub fn read_record(path: &Path) -> Result<(TimeSeries, TimeSeries)> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    ensure!(header.first().map(String::as_str) == Some("t"), "first column must be `t`");
    let names = &header[1..];
    let p = names.iter().filter(|n| n.starts_with('u')).count();
    ensure!(p > 0 && names.len() == 2 * p, "expected columns t,u1..uP,y1..yP, got {}", header.join(","));
    for (i, n) in names.iter().enumerate() {
        let want = if i < p { format!("u{}", i + 1) } else { format!("y{}", i - p + 1) };
        ensure!(*n == want, "column {} should be `{want}`, found `{n}`", i + 2);
    }

    let mut t = Vec::new();
    let mut cols = vec![Vec::new(); 2 * p];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), row + 2))?;
        ensure!(rec.len() == 2 * p + 1, "row {} has {} fields", row + 2, rec.len());
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("row {}: `{s}` is not a number", row + 2))
        };
        t.push(parse(&rec[0])?);
        for (c, col) in cols.iter_mut().enumerate() {
            col.push(parse(&rec[c + 1])?);
        }
    }
    ensure!(t.len() >= 2, "{} holds fewer than two samples", path.display());
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    ensure!(dt > 0.0, "time column must increase");
    for (k, w) in t.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > GRID_RTOL * dt {
            bail!("non-uniform sampling at row {}", k + 3);
        }
    }
    let fs = 1.0 / dt;
    let y = cols.split_off(p);
    let u = TimeSeries::new(t[0], fs, names[..p].to_vec(), cols)?;
    let y = TimeSeries::new(t[0], fs, names[p..].to_vec(), y)?;
    Ok((u, y))
}

/// CSV text for a record; numbers use the shortest exact decimal form.
pub fn record_csv(u: &TimeSeries, y: &TimeSeries) -> Result<Vec<u8>> {
    ensure!(u.len() == y.len(), "inputs and outputs differ in length");
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend((1..=u.n_channels()).map(|i| format!("u{i}")));
    header.extend((1..=y.n_channels()).map(|i| format!("y{i}")));
    w.write_record(&header)?;
    for k in 0..u.len() {
        let mut row = vec![u.time(k).to_string()];
        row.extend(u.channels().iter().map(|c| c[k].to_string()));
        row.extend(y.channels().iter().map(|c| c[k].to_string()));
        w.write_record(&row)?;
    }
    Ok(w.into_inner()?)
}

/// CSV text for outputs only, header `t,y1..yP`.
pub fn outputs_csv(y: &TimeSeries) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend((1..=y.n_channels()).map(|i| format!("y{i}")));
    w.write_record(&header)?;
    for k in 0..y.len() {
        let mut row = vec![y.time(k).to_string()];
        row.extend(y.channels().iter().map(|c| c[k].to_string()));
        w.write_record(&row)?;
    }
    Ok(w.into_inner()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn round_trip_is_exact() {
        let u = TimeSeries::from_channels(0.5, 4.0, "u", vec![vec![0.1, 1.0 / 3.0, -2e-17]]).unwrap();
        let y = TimeSeries::from_channels(0.5, 4.0, "y", vec![vec![std::f64::consts::PI, 0.0, 1e300]]).unwrap();
        let text = record_csv(&u, &y).unwrap();
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&text).unwrap();
        let (u2, y2) = read_record(f.path()).unwrap();
        assert_eq!(u2.channels(), u.channels());
        assert_eq!(y2.channels(), y.channels());
        assert_eq!(u2.fs(), 4.0);
        assert_eq!(u2.t0(), 0.5);
    }

    #[test]
    fn bad_headers_are_rejected() {
        for body in ["x,u1,y1\n0,1,2\n1,1,2\n", "t,u1,y2\n0,1,2\n1,1,2\n", "t,u1,u2,y1\n0,1,2,3\n1,1,2,3\n"] {
            let mut f = tempfile::NamedTempFile::new().unwrap();
            f.write_all(body.as_bytes()).unwrap();
            assert!(read_record(f.path()).is_err(), "{body}");
        }
    }

    #[test]
    fn irregular_time_is_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"t,u1,y1\n0,1,2\n1,1,2\n2.5,1,2\n").unwrap();
        assert!(read_record(f.path()).is_err());
    }
}
