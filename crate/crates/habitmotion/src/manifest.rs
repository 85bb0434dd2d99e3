//! Transfer manifest CSV.

use std::path::Path;

use habitmotion_core::transfer::ManifestRow;

use crate::error::Result;
use crate::formats::write_csv;

/// Column holding each output file, relative to the manifest.
pub const MANIFEST_OUTPUT_COLUMN: &str = "output";

pub const MANIFEST_HEADER: [&str; 7] = [
    MANIFEST_OUTPUT_COLUMN,
    "source_id",
    "source_category",
    "target_category",
    "seed",
    "mode",
    "habit_from",
];

pub fn manifest_record(output: &str, row: &ManifestRow) -> Vec<String> {
    vec![
        output.to_string(),
        row.source_id.clone(),
        row.source_category.clone(),
        row.target_category.clone(),
        row.seed.to_string(),
        row.mode.as_str().to_string(),
        row.habit_from.clone(),
    ]
}

/// Writes `(output file, row)` pairs.
pub fn write_manifest(path: &Path, rows: &[(String, ManifestRow)]) -> Result<()> {
    let records: Vec<Vec<String>> = rows.iter().map(|(out, r)| manifest_record(out, r)).collect();
    write_csv(path, &MANIFEST_HEADER, &records)
}
