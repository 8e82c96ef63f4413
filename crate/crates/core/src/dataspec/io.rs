use std::path::Path;
use std::sync::Arc;

use super::{FeatureSchema, Instance, LabeledDataset, Outcome};
use crate::error::{Error, Result};

pub const LABEL_COLUMN: &str = "label";

/// Writes `dataset` as CSV: feature names then `label` in the header,
/// values in shortest round-trip decimal notation.
pub fn save_dataset(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    write_rows(dataset, &mut out)?;
    out.flush()?;
    Ok(())
}

/// [`save_dataset`] to any writer.
pub fn write_dataset<W: std::io::Write>(dataset: &LabeledDataset, out: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(out);
    write_rows(dataset, &mut out)?;
    out.flush()?;
    Ok(())
}

pub(crate) fn write_rows<W: std::io::Write>(dataset: &LabeledDataset, out: &mut csv::Writer<W>) -> Result<()> {
    let mut header: Vec<&str> = dataset.schema.names().collect();
    header.push(LABEL_COLUMN);
    out.write_record(&header)?;
    for (inst, label) in dataset.rows() {
        let mut record: Vec<String> = inst.values.iter().map(|v| format!("{v}")).collect();
        record.push(label.bit().to_string());
        out.write_record(&record)?;
    }
    Ok(())
}

/// Reads a dataset written by [`save_dataset`]. Rows get `subject_id`
/// equal to their zero-based row index and `observed_at = 0`.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Arc<FeatureSchema>) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path)?;
    read_rows(file, schema)
}

pub(crate) fn read_rows<R: std::io::Read>(input: R, schema: &Arc<FeatureSchema>) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header = reader.headers()?.clone();
    let expected: Vec<&str> = schema.names().chain(std::iter::once(LABEL_COLUMN)).collect();
    let found: Vec<&str> = header.iter().collect();
    if found != expected {
        let unknown: Vec<&str> = found.iter().copied().filter(|c| !expected.contains(c)).collect();
        return Err(Error::SchemaMismatch(if unknown.is_empty() {
            format!("header {found:?} does not match schema {expected:?}")
        } else {
            format!("unknown column(s) {unknown:?}")
        }));
    }

    let mut data = LabeledDataset::empty(Arc::clone(schema));
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != expected.len() {
            return Err(Error::MalformedRow {
                row,
                reason: format!("expected {} fields, found {}", expected.len(), record.len()),
            });
        }
        let mut values = Vec::with_capacity(schema.len());
        for (field, name) in record.iter().zip(schema.names()) {
            let v: f64 = field.trim().parse().map_err(|_| Error::MalformedRow {
                row,
                reason: format!("`{name}` is not a number: {field:?}"),
            })?;
            values.push(v);
        }
        schema.check_values(&values, row)?;
        let label = record[schema.len()]
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(Outcome::from_bit)
            .ok_or_else(|| Error::MalformedRow {
                row,
                reason: "label must be 0 or 1".into(),
            })?;
        data.push(
            Instance {
                subject_id: row as u64,
                values,
                observed_at: 0,
            },
            label,
        );
    }
    Ok(data)
}
