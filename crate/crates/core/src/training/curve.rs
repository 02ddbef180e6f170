use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of `epoch,train_mse,val_mse,val_rmse_px,seconds`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Normalized-space masked MSE averaged over the epoch's batches.
    pub train_mse: f64,
    pub val_mse: f64,
    pub val_rmse_px: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingCurve {
    pub records: Vec<EpochRecord>,
}

impl TrainingCurve {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record with the lowest validation RMSE (earliest on ties).
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .reduce(|best, r| if r.val_rmse_px < best.val_rmse_px { r } else { best })
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        if self.records.is_empty() {
            w.write_record(["epoch", "train_mse", "val_mse", "val_rmse_px", "seconds"])?;
        }
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(source);
        let records = r.deserialize().collect::<std::result::Result<Vec<EpochRecord>, _>>()?;
        if records.windows(2).any(|w| w[1].epoch <= w[0].epoch) {
            return Err(Error::invalid("curve epochs must be strictly increasing"));
        }
        Ok(TrainingCurve { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let curve = TrainingCurve {
            records: vec![
                EpochRecord {
                    epoch: 1,
                    train_mse: 0.5,
                    val_mse: 0.25,
                    val_rmse_px: 24.0,
                    seconds: 1.5,
                },
                EpochRecord {
                    epoch: 2,
                    train_mse: 0.125,
                    val_mse: 0.1,
                    val_rmse_px: 15.18,
                    seconds: 1.25,
                },
            ],
        };
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("epoch,train_mse,val_mse,val_rmse_px,seconds\n"));
        assert_eq!(TrainingCurve::read_csv(&buf[..]).unwrap(), curve);
        assert_eq!(curve.best().unwrap().epoch, 2);
    }
}
