use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::types::Block;
use super::LedgerError;
use crate::canonical::to_canonical_bytes;

/// Append-only ledger file: one canonical JSON block per line.
pub struct LedgerFile {
    path: PathBuf,
    file: File,
}

fn storage(e: impl std::fmt::Display) -> LedgerError {
    LedgerError::storage(e)
}

impl LedgerFile {
    pub fn open(path: &Path) -> Result<(Self, Vec<Block>), LedgerError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(storage)?;
        }
        let blocks = if path.exists() { read_blocks(path)? } else { Vec::new() };
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(storage)?;
        Ok((LedgerFile { path: path.to_path_buf(), file }, blocks))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, block: &Block) -> Result<(), LedgerError> {
        let mut line = to_canonical_bytes(block);
        line.push(b'\n');
        self.file.write_all(&line).map_err(storage)?;
        self.file.sync_data().map_err(storage)
    }
}

pub fn read_blocks(path: &Path) -> Result<Vec<Block>, LedgerError> {
    let raw = fs::read(path).map_err(storage)?;
    raw.split(|b| *b == b'\n')
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_slice(line).map_err(|e| LedgerError::Corrupt { height: i as u64, reason: e.to_string() })
        })
        .collect()
}

/// Writes `blocks` as a fresh ledger file, replacing any existing one.
pub fn write_blocks(path: &Path, blocks: &[Block]) -> Result<(), LedgerError> {
    let mut out = Vec::new();
    for b in blocks {
        out.extend(to_canonical_bytes(b));
        out.push(b'\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(storage)?;
    }
    fs::write(path, out).map_err(storage)
}
