use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_features, schema, FeatureError, FeatureRow};
use crate::asl::AslTable;
use crate::ingest::{CallRecord, Horizon, HorizonTargets};

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRow {
    pub call_id: String,
    /// Chronological key: the call's `seq`, or its corpus position.
    pub order_key: u64,
    /// Aligned with [`FeatureMatrix::schema`].
    pub values: Vec<Option<f64>>,
    pub targets: BTreeMap<Horizon, HorizonTargets>,
}

/// Dense feature table with a fixed column order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub schema: Vec<String>,
    pub interactions: Vec<(String, String)>,
    pub rows: Vec<MatrixRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMetadata {
    pub schema: Vec<String>,
    pub interactions: Vec<(String, String)>,
    pub corpus_sha256: String,
    pub n_rows: usize,
    pub asl_overridden: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum MatrixIoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad feature file: {0}")]
    Format(String),
}

const TARGET_COLUMNS: [(Horizon, &str, &str); 3] = [
    (Horizon::D1, "car_1", "realized_vol_1"),
    (Horizon::D7, "car_7", "realized_vol_7"),
    (Horizon::D30, "car_30", "realized_vol_30"),
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl FeatureMatrix {
    /// Builds one row per call, in corpus order.
    pub fn from_calls(
        calls: &[CallRecord],
        table: &AslTable,
        interactions: &[(String, String)],
    ) -> Result<Self, FeatureError> {
        let schema = schema(interactions);
        let rows = calls
            .par_iter()
            .enumerate()
            .map(|(i, call)| {
                let row = build_features(call, table, interactions)?;
                Ok(MatrixRow {
                    call_id: call.call_id.clone(),
                    order_key: call.seq.unwrap_or(i as u64),
                    values: schema.iter().map(|n| row.values[n]).collect(),
                    targets: call.targets.clone(),
                })
            })
            .collect::<Result<Vec<_>, FeatureError>>()?;
        Ok(Self {
            schema,
            interactions: interactions.to_vec(),
            rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let j = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r.values[j]).collect())
    }

    /// Restricts to the named columns, in the order given.
    pub fn select_columns(&self, names: &[String]) -> Result<Self, FeatureError> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| FeatureError::UnknownFeatureName(n.clone()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            schema: names.to_vec(),
            interactions: self
                .interactions
                .iter()
                .filter(|(a, b)| names.contains(&super::interaction_name(a, b)))
                .cloned()
                .collect(),
            rows: self
                .rows
                .iter()
                .map(|r| MatrixRow {
                    values: idx.iter().map(|&j| r.values[j]).collect(),
                    ..r.clone()
                })
                .collect(),
        })
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            interactions: self.interactions.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn feature_row(&self, i: usize) -> FeatureRow {
        let r = &self.rows[i];
        FeatureRow {
            call_id: r.call_id.clone(),
            values: self.schema.iter().cloned().zip(r.values.iter().copied()).collect(),
        }
    }

    pub fn metadata(&self, corpus_sha256: &str, asl_overridden: bool) -> FeatureMetadata {
        FeatureMetadata {
            schema: self.schema.clone(),
            interactions: self.interactions.clone(),
            corpus_sha256: corpus_sha256.to_string(),
            n_rows: self.rows.len(),
            asl_overridden,
        }
    }

    /// Comma-separated export: `call_id, order_key, <schema...>, <targets...>`;
    /// missing values are empty fields.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), MatrixIoError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["call_id".to_string(), "order_key".to_string()];
        header.extend(self.schema.iter().cloned());
        for (_, car, vol) in TARGET_COLUMNS {
            header.push(car.into());
            header.push(vol.into());
        }
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.call_id.clone(), r.order_key.to_string()];
            rec.extend(r.values.iter().map(|v| fmt_opt(*v)));
            for (h, _, _) in TARGET_COLUMNS {
                let t = r.targets.get(&h);
                rec.push(fmt_opt(t.map(|t| t.car)));
                rec.push(fmt_opt(t.map(|t| t.realized_vol)));
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a file produced by [`FeatureMatrix::write_csv`].
    pub fn read_csv<R: Read>(r: R, interactions: Vec<(String, String)>) -> Result<Self, MatrixIoError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
        let n = header.len();
        if n < 8 || header[0] != "call_id" || header[1] != "order_key" {
            return Err(MatrixIoError::Format("unexpected header".into()));
        }
        let schema = header[2..n - 6].to_vec();
        let parse = |s: &str| -> Result<Option<f64>, MatrixIoError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|e| MatrixIoError::Format(format!("{s:?}: {e}")))
            }
        };
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let order_key = rec[1]
                .parse()
                .map_err(|_| MatrixIoError::Format("order_key".into()))?;
            let values = (2..n - 6).map(|j| parse(&rec[j])).collect::<Result<_, _>>()?;
            let mut targets = BTreeMap::new();
            for (k, (h, _, _)) in TARGET_COLUMNS.iter().enumerate() {
                let car = parse(&rec[n - 6 + 2 * k])?;
                let vol = parse(&rec[n - 5 + 2 * k])?;
                if let (Some(car), Some(realized_vol)) = (car, vol) {
                    targets.insert(*h, HorizonTargets { car, realized_vol });
                }
            }
            rows.push(MatrixRow {
                call_id: rec[0].to_string(),
                order_key,
                values,
                targets,
            });
        }
        Ok(Self {
            schema,
            interactions,
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::default_interactions;
    use crate::features::tests::full_call;
    use crate::ingest::Role;

    #[test]
    fn csv_round_trip_with_missing() {
        let mut a = full_call();
        let mut b = full_call();
        b.call_id = "nocfo".into();
        b.utterances.retain(|u| u.speaker_role != Role::Cfo);
        b.targets.remove(&Horizon::D7);
        a.seq = Some(5);
        let m = FeatureMatrix::from_calls(&[a, b], &AslTable::default(), &default_interactions()).unwrap();
        assert_eq!(m.rows[1].order_key, 1);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header.split(',').count(), 2 + 187 + 6);
        let back = FeatureMatrix::read_csv(&buf[..], default_interactions()).unwrap();
        assert_eq!(back, m);
        let j = m.column_index("CFO_q&a_text_stability_mean").unwrap();
        assert_eq!(m.rows[1].values[j], None);
    }

    #[test]
    fn select_columns_keeps_order() {
        let m = FeatureMatrix::from_calls(&[full_call()], &AslTable::default(), &[]).unwrap();
        let s = m
            .select_columns(&["hist_vol_30d".into(), "CEO_q&a_text_arousal_std".into()])
            .unwrap();
        assert_eq!(s.rows[0].values[0], Some(0.25));
        assert!(m.select_columns(&["nope".into()]).is_err());
    }
}
