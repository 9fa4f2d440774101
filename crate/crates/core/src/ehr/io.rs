//! Line-oriented file formats: visit rows, interaction tables, SMILES maps
//! and code-mapping files. All UTF-8, tab-separated, one record per line.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

use super::graphs::{DdiRow, DdiTable};
use super::records::RawVisitRow;

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.to_string()))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .collect())
}

fn line_err(path: &Path, line: usize, msg: &str) -> Error {
    Error::Io(format!("{}:{line}: {msg}", path.display()))
}

fn split_codes(field: &str) -> Vec<String> {
    field
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// `patient_id \t ordinal \t diag codes \t proc codes \t med codes`,
/// code lists comma-separated.
pub fn parse_visit_file(path: &Path) -> Result<Vec<RawVisitRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in read_lines(path)? {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(line_err(path, lineno, &format!("expected 5 tab-separated fields, found {}", fields.len())));
        }
        let ordinal: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| line_err(path, lineno, "ordinal must be a positive integer"))?;
        if ordinal == 0 {
            return Err(line_err(path, lineno, "visit ordinals start at 1"));
        }
        rows.push(RawVisitRow {
            patient_id: fields[0].trim().to_string(),
            ordinal,
            diagnoses: split_codes(fields[2]),
            procedures: split_codes(fields[3]),
            medications: split_codes(fields[4]),
        });
    }
    if rows.is_empty() {
        return Err(Error::Io(format!("{}: no visit rows", path.display())));
    }
    Ok(rows)
}

/// `code_a \t code_b \t severity_rank`, rank 1 most severe.
pub fn parse_ddi_file(path: &Path) -> Result<DdiTable> {
    let mut rows = Vec::new();
    for (lineno, line) in read_lines(path)? {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(line_err(path, lineno, &format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let severity_rank: u32 = fields[2]
            .trim()
            .parse()
            .map_err(|_| line_err(path, lineno, "severity rank must be a positive integer"))?;
        rows.push(DdiRow {
            drug_a: fields[0].trim().to_string(),
            drug_b: fields[1].trim().to_string(),
            severity_rank,
        });
    }
    DdiTable::new(rows)
}

/// `med_code \t smiles`.
pub fn parse_smiles_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in read_lines(path)? {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(line_err(path, lineno, &format!("expected 2 tab-separated fields, found {}", fields.len())));
        }
        map.insert(fields[0].trim().to_string(), fields[1].trim().to_string());
    }
    Ok(map)
}

/// Two-column `from_code \t to_code` mapping (e.g. NDC to ATC). Later
/// duplicates of a source code win, matching last-entry-wins table loads.
pub fn parse_mapping_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in read_lines(path)? {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(line_err(path, lineno, &format!("expected 2 tab-separated fields, found {}", fields.len())));
        }
        map.insert(fields[0].trim().to_string(), fields[1].trim().to_string());
    }
    Ok(map)
}

/// Apply a medication-code mapping to raw rows. Unmapped medications are
/// dropped; the count of dropped codes is returned for logging.
pub fn apply_med_mapping(rows: &mut [RawVisitRow], mapping: &BTreeMap<String, String>) -> usize {
    let mut dropped = 0;
    for row in rows.iter_mut() {
        let mut mapped = Vec::with_capacity(row.medications.len());
        for med in row.medications.drain(..) {
            match mapping.get(&med) {
                Some(to) => mapped.push(to.clone()),
                None => dropped += 1,
            }
        }
        mapped.sort();
        mapped.dedup();
        row.medications = mapped;
    }
    dropped
}
