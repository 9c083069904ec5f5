use std::io::Write;

use super::train::StepMetrics;
use crate::error::{Error, Result};
use crate::tasks::{crsc_infer, IterationRecord};

pub const METRIC_HEADER: [&str; 7] = ["iter", "l_crsc", "l_gmp", "l_rbcs", "l_total", "crsc_acc", "wall_ms"];
pub const CRSC_PAIRS_HEADER: [&str; 3] = ["cos_adj", "cos_dst", "correct"];
pub const GAP_SCATTER_HEADER: [&str; 2] = ["g_true", "g_pred"];
pub const ROUTE_ARROWS_HEADER: [&str; 10] = [
    "start_z", "start_y", "start_x", "pred_z", "pred_y", "pred_x", "true_z", "true_y", "true_x", "iter",
];

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("<csv output>", io),
        other => Error::validation("csv", format!("{other:?}")),
    }
}

fn writer<W: Write>(out: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(header).map_err(csv_error)?;
    Ok(w)
}

fn row<W: Write>(w: &mut csv::Writer<W>, fields: impl IntoIterator<Item = String>) -> Result<()> {
    w.write_record(fields.into_iter().collect::<Vec<_>>()).map_err(csv_error)
}

/// Streaming metric log with the fixed header.
pub struct MetricWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        Ok(MetricWriter {
            inner: writer(out, &METRIC_HEADER)?,
        })
    }

    /// Continues an existing log without repeating the header.
    pub fn append(out: W) -> Self {
        MetricWriter {
            inner: csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(out),
        }
    }

    pub fn write(&mut self, m: &StepMetrics) -> Result<()> {
        row(
            &mut self.inner,
            [
                m.iter.to_string(),
                m.l_crsc.to_string(),
                m.l_gmp.to_string(),
                m.l_rbcs.to_string(),
                m.l_total.to_string(),
                m.crsc_acc.to_string(),
                format!("{:.3}", m.wall_ms),
            ],
        )
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io("<metric log>", e))
    }
}

/// One row per coupled unit: both cosines and whether inference was correct.
pub fn write_crsc_pairs<W: Write>(out: W, records: &[IterationRecord]) -> Result<()> {
    let mut w = writer(out, &CRSC_PAIRS_HEADER)?;
    for &(adj, dst) in records.iter().flat_map(|r| &r.crsc_pairs) {
        let ok = crsc_infer(adj, dst).correct() as u8;
        row(&mut w, [adj.to_string(), dst.to_string(), ok.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<crsc pairs>", e))
}

/// One row per region pair: true and predicted gap in mm.
pub fn write_gap_scatter<W: Write>(out: W, records: &[IterationRecord]) -> Result<()> {
    let mut w = writer(out, &GAP_SCATTER_HEADER)?;
    for p in records.iter().flat_map(|r| &r.gap_points) {
        row(&mut w, [p.truth.to_string(), p.predicted.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<gap scatter>", e))
}

/// One row per route step: start point, predicted and true displacement.
pub fn write_route_arrows<W: Write>(out: W, records: &[IterationRecord]) -> Result<()> {
    let mut w = writer(out, &ROUTE_ARROWS_HEADER)?;
    for r in records {
        for a in &r.route_arrows {
            let mut fields: Vec<String> = a
                .start
                .iter()
                .chain(&a.predicted)
                .chain(&a.truth)
                .map(|v| v.to_string())
                .collect();
            fields.push(r.iter.to_string());
            row(&mut w, fields)?;
        }
    }
    w.flush().map_err(|e| Error::io("<route arrows>", e))
}
