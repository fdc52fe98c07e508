use std::path::Path;

use serde::{Deserialize, Serialize};

use super::losses::DiscOutputs;
use crate::error::{Error, Result};
use crate::seqvol::io::write_file;

/// One optimization step. During pretraining `loss_eg` holds the
/// reconstruction MSE and the discriminator losses are absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss_eg: f64,
    pub loss_d: Option<f64>,
    pub loss_c: Option<f64>,
    pub mae: f64,
    pub seconds: f64,
    #[serde(skip)]
    pub outputs: Option<DiscOutputs>,
}

impl StepRecord {
    pub fn all_finite(&self) -> bool {
        [Some(self.loss_eg), self.loss_d, self.loss_c, Some(self.mae)]
            .into_iter()
            .flatten()
            .all(f64::is_finite)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
}

const COLUMNS: [&str; 6] = ["step", "loss_eg", "loss_d", "loss_c", "mae", "seconds"];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

impl TrainHistory {
    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    pub fn extend(&mut self, other: TrainHistory) {
        self.records.extend(other.records);
    }

    /// Renders the CSV (`step,loss_eg,loss_d,loss_c,mae,seconds`); with
    /// `timing` false the `seconds` column is left empty so that reruns
    /// produce identical bytes.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(COLUMNS).expect("in-memory write");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.loss_eg.to_string(),
                opt(r.loss_d),
                opt(r.loss_c),
                r.mae.to_string(),
                if timing { format!("{:.3}", r.seconds) } else { String::new() },
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn write_csv(&self, path: &Path, timing: bool) -> Result<()> {
        write_file(path, self.to_csv(timing).as_bytes())
    }

    pub fn read_csv(path: &Path) -> Result<TrainHistory> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
        if headers.iter().collect::<Vec<_>>() != COLUMNS {
            return Err(Error::Format(format!("{}: unexpected history columns {headers:?}", path.display())));
        }
        let num = |s: &str, what: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>()
                .map(Some)
                .map_err(|_| Error::Format(format!("{}: bad {what} value {s:?}", path.display())))
        };
        let mut records = Vec::new();
        for row in r.records() {
            let row = row.map_err(|e| csv_err(path, e))?;
            let step = row[0]
                .parse()
                .map_err(|_| Error::Format(format!("{}: bad step {:?}", path.display(), &row[0])))?;
            records.push(StepRecord {
                step,
                loss_eg: num(&row[1], "loss_eg")?.unwrap_or(f64::NAN),
                loss_d: num(&row[2], "loss_d")?,
                loss_c: num(&row[3], "loss_c")?,
                mae: num(&row[4], "mae")?.unwrap_or(f64::NAN),
                seconds: num(&row[5], "seconds")?.unwrap_or(0.0),
                outputs: None,
            });
        }
        Ok(TrainHistory { records })
    }
}
