//! Evaluation rows and their CSV form.

use std::io::{self, Write};

pub const CSV_HEADER: &str = "server_update,local_updates,sim_time_s,eval_loss,eval_ppl,eval_acc";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub server_update: u64,
    pub local_updates: u64,
    pub sim_time_s: f64,
    pub eval_loss: f64,
    pub eval_ppl: f64,
    pub eval_accuracy: f64,
}

/// Rows in strictly increasing `server_update` order, tagged with the
/// strategy that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub strategy: String,
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn new(strategy: impl Into<String>) -> Self {
        MetricsLog {
            strategy: strategy.into(),
            rows: Vec::new(),
        }
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    /// Last row at or before simulated time `t`.
    pub fn at_time(&self, t: f64) -> Option<&MetricsRow> {
        self.rows.iter().rev().find(|r| r.sim_time_s <= t)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(out, "{}", format_row(r))?;
        }
        out.flush()
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }

    /// Parses text produced by [`MetricsLog::write_csv`].
    pub fn parse_csv(text: &str) -> Option<Vec<MetricsRow>> {
        let mut lines = text.lines();
        if lines.next()? != CSV_HEADER {
            return None;
        }
        lines
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 6 {
                    return None;
                }
                Some(MetricsRow {
                    server_update: f[0].parse().ok()?,
                    local_updates: f[1].parse().ok()?,
                    sim_time_s: f[2].parse().ok()?,
                    eval_loss: f[3].parse().ok()?,
                    eval_ppl: f[4].parse().ok()?,
                    eval_accuracy: f[5].parse().ok()?,
                })
            })
            .collect()
    }
}

/// Shortest round-trip formatting, so values parse back bit-exact.
pub fn format_row(r: &MetricsRow) -> String {
    format!(
        "{},{},{},{},{},{}",
        r.server_update, r.local_updates, r.sim_time_s, r.eval_loss, r.eval_ppl, r.eval_accuracy
    )
}
