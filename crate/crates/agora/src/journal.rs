//! On-disk spill queue of sealed frames awaiting acknowledgment, plus the
//! per-GPU sequence counters that survive restarts.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{AgoraError, Result};

#[derive(Debug)]
pub struct SpillJournal {
    dir: PathBuf,
    max_bytes: u64,
    used: AtomicU64,
}

fn parse_entry(name: &str) -> Option<(u8, u64)> {
    let rest = name.strip_suffix(".frame")?.strip_prefix('g')?;
    let (gpu, seq) = rest.split_once('-')?;
    Some((gpu.parse().ok()?, seq.parse().ok()?))
}

/// Write-then-rename so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(AgoraError::at_path(&tmp))?;
    fs::rename(&tmp, path).map_err(AgoraError::at_path(path))
}

impl SpillJournal {
    pub fn open(dir: impl Into<PathBuf>, max_bytes: u64) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(AgoraError::at_path(&dir))?;
        let j = Self {
            dir,
            max_bytes,
            used: AtomicU64::new(0),
        };
        let mut used = 0;
        for (gpu, seq) in j.pending()? {
            used += fs::metadata(j.entry_path(gpu, seq)).map(|m| m.len()).unwrap_or(0);
        }
        j.used.store(used, Ordering::SeqCst);
        Ok(j)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, gpu: u8, seq: u64) -> PathBuf {
        self.dir.join(format!("g{gpu:03}-{seq:020}.frame"))
    }

    fn seq_path(&self, gpu: u8) -> PathBuf {
        self.dir.join(format!("g{gpu:03}.seq"))
    }

    pub fn used_bytes(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    pub fn contains(&self, gpu: u8, seq: u64) -> bool {
        self.entry_path(gpu, seq).exists()
    }

    pub fn put(&self, gpu: u8, seq: u64, frame: &[u8]) -> Result<()> {
        let len = frame.len() as u64;
        let before = self.used.fetch_add(len, Ordering::SeqCst);
        if before + len > self.max_bytes {
            self.used.fetch_sub(len, Ordering::SeqCst);
            return Err(AgoraError::JournalFull(before));
        }
        write_atomic(&self.entry_path(gpu, seq), frame)
    }

    pub fn get(&self, gpu: u8, seq: u64) -> Result<Vec<u8>> {
        let p = self.entry_path(gpu, seq);
        fs::read(&p).map_err(AgoraError::at_path(&p))
    }

    pub fn remove(&self, gpu: u8, seq: u64) -> Result<()> {
        let p = self.entry_path(gpu, seq);
        let len = fs::metadata(&p).map_err(AgoraError::at_path(&p))?.len();
        fs::remove_file(&p).map_err(AgoraError::at_path(&p))?;
        self.used.fetch_sub(len, Ordering::SeqCst);
        Ok(())
    }

    /// Entries on disk, ordered by GPU then sequence number.
    pub fn pending(&self) -> Result<Vec<(u8, u64)>> {
        let mut out: Vec<(u8, u64)> = fs::read_dir(&self.dir)
            .map_err(AgoraError::at_path(&self.dir))?
            .filter_map(|e| parse_entry(e.ok()?.file_name().to_str()?))
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Next log sequence number for a GPU; 0 if none was ever issued.
    pub fn load_next_seq(&self, gpu: u8) -> Result<u64> {
        let p = self.seq_path(gpu);
        match fs::read_to_string(&p) {
            Ok(s) => s
                .trim()
                .parse()
                .map_err(|_| AgoraError::Runtime(format!("{}: corrupt sequence counter", p.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(0),
            Err(e) => Err(AgoraError::at_path(&p)(e)),
        }
    }

    pub fn store_next_seq(&self, gpu: u8, next: u64) -> Result<()> {
        write_atomic(&self.seq_path(gpu), next.to_string().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_remove() {
        let dir = tempfile::tempdir().unwrap();
        let j = SpillJournal::open(dir.path(), 1000).unwrap();
        j.put(2, 10, &[1; 100]).unwrap();
        j.put(1, 11, &[2; 100]).unwrap();
        j.put(1, 9, &[3; 100]).unwrap();
        assert_eq!(j.pending().unwrap(), vec![(1, 9), (1, 11), (2, 10)]);
        assert_eq!(j.get(1, 11).unwrap(), vec![2; 100]);
        assert_eq!(j.used_bytes(), 300);
        j.remove(1, 9).unwrap();
        assert_eq!(j.used_bytes(), 200);
        let reopened = SpillJournal::open(dir.path(), 1000).unwrap();
        assert_eq!(reopened.used_bytes(), 200);
        assert_eq!(reopened.pending().unwrap().len(), 2);
    }

    #[test]
    fn full_journal_refuses() {
        let dir = tempfile::tempdir().unwrap();
        let j = SpillJournal::open(dir.path(), 150).unwrap();
        j.put(0, 0, &[0; 100]).unwrap();
        assert!(matches!(j.put(0, 1, &[0; 100]), Err(AgoraError::JournalFull(100))));
        assert_eq!(j.used_bytes(), 100);
    }

    #[test]
    fn sequence_counter_persists() {
        let dir = tempfile::tempdir().unwrap();
        let j = SpillJournal::open(dir.path(), 10).unwrap();
        assert_eq!(j.load_next_seq(3).unwrap(), 0);
        j.store_next_seq(3, 42).unwrap();
        assert_eq!(
            SpillJournal::open(dir.path(), 10).unwrap().load_next_seq(3).unwrap(),
            42
        );
        assert!(j.pending().unwrap().is_empty());
    }
}
