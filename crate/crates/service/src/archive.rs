//! Result archives: uncompressed zip with members in lexicographic order and
//! fixed timestamps, so identical files give identical bytes.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("zip: {0}")]
    Zip(#[from] zip::result::ZipError),
    #[error("{0}")]
    Invalid(String),
}

fn options() -> SimpleFileOptions {
    SimpleFileOptions::default()
        .compression_method(CompressionMethod::Stored)
        .last_modified_time(DateTime::default())
        .unix_permissions(0o644)
}

/// Zips `members` in name order.
pub fn zip_members(members: &BTreeMap<String, Vec<u8>>) -> Result<Vec<u8>, ArchiveError> {
    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    for (name, bytes) in members {
        zip.start_file(name.as_str(), options())?;
        zip.write_all(bytes)?;
    }
    Ok(zip.finish()?.into_inner())
}

/// Zips the regular files directly inside `dir`.
pub fn zip_dir(dir: &Path) -> Result<Vec<u8>, ArchiveError> {
    let mut members = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let name = entry
            .file_name()
            .into_string()
            .map_err(|n| ArchiveError::Invalid(format!("non-UTF-8 file name {n:?}")))?;
        members.insert(name, std::fs::read(entry.path())?);
    }
    zip_members(&members)
}

/// Reads every member back, keyed by name.
pub fn unzip(bytes: &[u8]) -> Result<BTreeMap<String, Vec<u8>>, ArchiveError> {
    let mut zip = ZipArchive::new(Cursor::new(bytes))?;
    let mut out = BTreeMap::new();
    for i in 0..zip.len() {
        let mut f = zip.by_index(i)?;
        let name = f.name().to_string();
        let mut buf = Vec::with_capacity(f.size() as usize);
        f.read_to_end(&mut buf)?;
        if out.insert(name.clone(), buf).is_some() {
            return Err(ArchiveError::Invalid(format!("duplicate member {name}")));
        }
    }
    Ok(out)
}

/// Member names in stored order.
pub fn member_names(bytes: &[u8]) -> Result<Vec<String>, ArchiveError> {
    let mut zip = ZipArchive::new(Cursor::new(bytes))?;
    (0..zip.len())
        .map(|i| Ok(zip.by_index_raw(i)?.name().to_string()))
        .collect()
}
