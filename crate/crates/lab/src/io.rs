//! CSV readers and writers for point clouds, sampler output and schedules.

use std::io::{Read, Write};

use anyhow::{bail, Context, Result};
use flowlab_core::linalg::Vector;
use flowlab_core::sampler::TrajectoryBatch;
use flowlab_core::schedule::{Coefficient, Schedule};

/// Reads one point per row. A first row that does not parse as numbers is
/// taken as a header.
pub fn read_points<R: Read>(reader: R) -> Result<Vec<Vector>> {
    let mut csv = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut points = Vec::new();
    for (line, record) in csv.records().enumerate() {
        let record = record?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(values) => points.push(Vector::from_vec(values)),
            Err(_) if line == 0 => continue,
            Err(e) => bail!("row {}: {e}", line + 1),
        }
    }
    if let Some(d) = points.first().map(|p| p.len()) {
        if let Some(i) = points.iter().position(|p| p.len() != d) {
            bail!("row {} has {} coordinates, expected {d}", i + 1, points[i].len());
        }
    }
    Ok(points)
}

fn sample_header(d: usize) -> Vec<String> {
    let mut header = vec!["point_id".to_string()];
    header.extend((0..d).map(|i| format!("y_{i}")));
    header.push("log_density".into());
    header
}

/// `point_id,y_0,…,y_{d−1},log_density`; flagged points carry `NaN`.
pub fn write_samples<W: Write>(writer: W, batch: &TrajectoryBatch) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(sample_header(batch.dim()))?;
    for (i, (y, lp)) in batch.points().iter().zip(batch.log_density()).enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(y.iter().map(f64::to_string));
        rec.push(lp.to_string());
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}

/// Inverse of [`write_samples`]; the batch is placed at step `t`.
pub fn read_samples<R: Read>(reader: R, t: usize) -> Result<TrajectoryBatch> {
    let mut csv = csv::Reader::from_reader(reader);
    let header = csv.headers()?.clone();
    if header.len() < 3 || &header[0] != "point_id" || &header[header.len() - 1] != "log_density" {
        bail!("expected columns point_id,y_0,…,log_density");
    }
    let d = header.len() - 2;
    let mut points = Vec::new();
    let mut log_density = Vec::new();
    for (row, record) in csv.records().enumerate() {
        let record = record?;
        let values: Vec<f64> = record
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("sample row {}", row + 1))?;
        points.push(Vector::from_column_slice(&values[..d]));
        log_density.push(values[d]);
    }
    Ok(TrajectoryBatch::from_parts(t, points, log_density)?)
}

/// Streams every intermediate batch of a reverse run as
/// `t,point_id,y_0,…,log_density`.
pub struct TrajectoryWriter<W: Write> {
    csv: csv::Writer<W>,
    header_written: bool,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(writer: W) -> Self {
        TrajectoryWriter { csv: csv::Writer::from_writer(writer), header_written: false }
    }

    pub fn write(&mut self, batch: &TrajectoryBatch) -> Result<()> {
        if !self.header_written {
            let mut header = vec!["t".to_string()];
            header.extend(sample_header(batch.dim()));
            self.csv.write_record(header)?;
            self.header_written = true;
        }
        let t = batch.t().to_string();
        for (i, (y, lp)) in batch.points().iter().zip(batch.log_density()).enumerate() {
            let mut rec = vec![t.clone(), i.to_string()];
            rec.extend(y.iter().map(f64::to_string));
            rec.push(lp.to_string());
            self.csv.write_record(&rec)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.csv.flush()?;
        Ok(())
    }
}

/// `t,beta,alpha,alpha_bar,eta_star,eta_simple`; the coefficients are
/// undefined at `t = 1` and left empty.
pub fn write_schedule<W: Write>(writer: W, schedule: &Schedule) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["t", "beta", "alpha", "alpha_bar", "eta_star", "eta_simple"])?;
    for t in 1..=schedule.steps() {
        let (star, simple) = if t == 1 {
            (String::new(), String::new())
        } else {
            (
                schedule.coefficient(t, Coefficient::Star)?.to_string(),
                schedule.coefficient(t, Coefficient::Simple)?.to_string(),
            )
        };
        csv.write_record([
            t.to_string(),
            schedule.beta(t).to_string(),
            schedule.alpha(t).to_string(),
            schedule.alpha_bar(t).to_string(),
            star,
            simple,
        ])?;
    }
    csv.flush()?;
    Ok(())
}
