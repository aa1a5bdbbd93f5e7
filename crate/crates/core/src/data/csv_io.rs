use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SeriesFrame;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Maps raw integer classes onto the binary normal/anomaly labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    pub anomaly_classes: Vec<i64>,
    /// When set, any class in neither list is rejected.
    #[serde(default)]
    pub normal_classes: Option<Vec<i64>>,
}

impl Default for ClassMap {
    fn default() -> Self {
        Self {
            anomaly_classes: vec![1],
            normal_classes: None,
        }
    }
}

impl ClassMap {
    pub fn anomalies(classes: impl Into<Vec<i64>>) -> Self {
        Self {
            anomaly_classes: classes.into(),
            normal_classes: None,
        }
    }

    /// Genesis demonstrator convention: class 0 normal, 1 and 2 anomalous.
    pub fn genesis() -> Self {
        Self {
            anomaly_classes: vec![1, 2],
            normal_classes: Some(vec![0]),
        }
    }

    pub fn map(&self, class: i64) -> Option<u8> {
        if self.anomaly_classes.contains(&class) {
            return Some(1);
        }
        match &self.normal_classes {
            Some(normal) if !normal.contains(&class) => None,
            _ => Some(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: String,
    /// Feature columns in order; `None` takes every other column.
    #[serde(default)]
    pub feature_columns: Option<Vec<String>>,
    #[serde(default)]
    pub timestamp_column: Option<String>,
    #[serde(default)]
    pub class_map: ClassMap,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            label_column: "label".into(),
            feature_columns: None,
            timestamp_column: Some("t".into()),
            class_map: ClassMap::default(),
        }
    }
}

fn parse_class(cell: &str) -> Option<i64> {
    let cell = cell.trim();
    cell.parse::<i64>().ok().or_else(|| {
        let f = cell.parse::<f64>().ok()?;
        (f.fract() == 0.0 && f.is_finite()).then_some(f as i64)
    })
}

pub fn load_csv<S: Scalar>(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SeriesFrame<S>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    let label_idx = find(&schema.label_column)?;
    let ts_idx = match &schema.timestamp_column {
        // An absent timestamp column is fine; it is optional metadata.
        Some(name) => headers.iter().position(|h| h == name),
        None => None,
    };
    let feature_names: Vec<String> = match &schema.feature_columns {
        Some(cols) => cols.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != label_idx && Some(i) != ts_idx)
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    if feature_names.is_empty() {
        return Err(Error::invalid("no feature columns"));
    }
    let feature_idx = feature_names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut stamps = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // Line 1 is the header.
        let row = i + 2;
        for (&col, name) in feature_idx.iter().zip(&feature_names) {
            let cell = record.get(col).unwrap_or("");
            let x: f64 = cell.parse().map_err(|_| Error::Cell {
                row,
                column: name.clone(),
                message: format!("non-numeric value `{cell}`"),
            })?;
            values.push(S::of(x));
        }
        let cell = record.get(label_idx).unwrap_or("");
        let label = parse_class(cell)
            .and_then(|c| schema.class_map.map(c))
            .ok_or_else(|| Error::Cell {
                row,
                column: schema.label_column.clone(),
                message: format!("unmappable label `{cell}`"),
            })?;
        labels.push(label);
        if let Some(t) = ts_idx {
            stamps.push(record.get(t).unwrap_or("").to_string());
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptySeries);
    }
    let t = labels.len();
    let mut frame = SeriesFrame::new(Tensor::new([t, feature_names.len()], values)?, labels, feature_names)?;
    if ts_idx.is_some() {
        frame.timestamps = Some(stamps);
    }
    Ok(frame)
}

/// Writes `t,<features…>,label`; timestamps default to the row index.
pub fn write_csv<S: Scalar>(path: impl AsRef<Path>, frame: &SeriesFrame<S>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(frame.feature_names.iter().cloned());
    header.push("label".into());
    w.write_record(&header)?;
    for i in 0..frame.len() {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(match &frame.timestamps {
            Some(ts) => ts[i].clone(),
            None => i.to_string(),
        });
        rec.extend(frame.values.row(i).iter().map(|x| format!("{}", x.as_f64())));
        rec.push(frame.labels[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
