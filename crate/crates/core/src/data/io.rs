use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{AnnotationRecord, Dataset};
use crate::error::{Error, Result};

/// Reads a JSON-lines annotation file into a [`Dataset`].
///
/// Blank lines are skipped. Each other line must be one
/// [`AnnotationRecord`] object; errors carry the 1-based line number.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        if record.instance_id.is_empty() || record.annotator_id.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "instance_id and annotator_id must be non-empty".into(),
            });
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} contains no annotation records",
            path.display()
        )));
    }
    Dataset::from_records(records)
}

pub fn save_dataset_json(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut writer, dataset)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

pub fn load_dataset_json(path: impl AsRef<Path>) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let raw: Dataset = serde_json::from_reader(reader)?;
    // Re-run validation so hand-edited files are checked too.
    let mut checked = Dataset::new(raw.entries, raw.split_tag)?;
    if raw.annotator_ids.len() == checked.annotator_ids.len()
        && raw
            .annotator_ids
            .iter()
            .all(|a| checked.annotator_ids.contains(a))
    {
        checked.annotator_ids = raw.annotator_ids;
    }
    Ok(checked)
}
