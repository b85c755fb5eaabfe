//! Durable entry store: an in-memory table backed by an append-only log.
//!
//! Every mutation is appended as one checksummed record and flushed before
//! the call returns. Reopening replays the log; a torn tail left by a crash
//! is truncated away. The log is compacted when dead records dominate.

pub mod format;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::vector::UnitVector;
use crate::vindex::EntryId;
use format::{Header, ReadOutcome, Record, HEADER_LEN, NEXT_ID_OFFSET};

/// One cached (query, response) pair with its two vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct CacheEntry {
    pub entry_id: EntryId,
    pub session_id: String,
    pub turn_index: u64,
    pub query: String,
    pub response: String,
    /// Query vector used by stage 1.
    pub v_q: UnitVector,
    /// Context vector used by stage 2.
    pub g: UnitVector,
    /// Logical monotonic timestamps.
    pub created_at: u64,
    pub last_hit_at: u64,
    pub hit_count: u64,
    pub response_token_count: u64,
    /// Fingerprint of the context representation that produced `g`.
    pub params_version: u64,
    /// Wall clock at creation, for display only.
    pub created_wall_ms: u64,
}

impl CacheEntry {
    /// Rough resident size, used for the memory gauge.
    pub fn approx_bytes(&self) -> usize {
        std::mem::size_of::<Self>()
            + self.session_id.len()
            + self.query.len()
            + self.response.len()
            + 8 * (self.v_q.dim() + self.g.dim())
    }
}

struct LogFile {
    path: PathBuf,
    file: File,
    fsync: bool,
    records: usize,
    dead_records: usize,
}

pub struct Store {
    entries: BTreeMap<EntryId, CacheEntry>,
    next_id: u64,
    clock: u64,
    log: Option<LogFile>,
}

const COMPACT_MIN_DEAD: usize = 1024;

impl Store {
    pub fn in_memory() -> Self {
        Store { entries: BTreeMap::new(), next_id: 1, clock: 0, log: None }
    }

    /// Opens (or creates) the log at `path`, replaying existing records.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(path, true)
    }

    /// `fsync = false` only flushes to the OS, which survives a process
    /// crash but not power loss.
    pub fn open_with(path: impl AsRef<Path>, fsync: bool) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(&path)?;
        let len = file.metadata()?.len();
        let mut store = Store::in_memory();
        let mut records = 0;
        let mut dead_records = 0;

        if len == 0 {
            file.write_all(&Header { next_id: 1, clock: 0 }.encode())?;
            file.sync_all()?;
        } else {
            let mut reader = BufReader::new(&mut file);
            let mut head = [0u8; HEADER_LEN as usize];
            std::io::Read::read_exact(&mut reader, &mut head)
                .map_err(|_| Error::Storage("log shorter than its header".into()))?;
            let header = Header::decode(&head)?;
            store.next_id = header.next_id.max(1);
            store.clock = header.clock;
            let mut good_end = HEADER_LEN;
            loop {
                match format::read_record(&mut reader)? {
                    ReadOutcome::Record(record, size) => {
                        good_end += size;
                        let replaced = store.apply(record)?;
                        records += 1;
                        dead_records += replaced;
                    }
                    ReadOutcome::End => break,
                    ReadOutcome::Torn => {
                        tracing::warn!(offset = good_end, "truncating torn log tail");
                        break;
                    }
                }
            }
            drop(reader);
            if good_end < len {
                file.set_len(good_end)?;
                file.sync_all()?;
            }
            file.seek(SeekFrom::End(0))?;
        }
        store.log = Some(LogFile { path, file, fsync, records, dead_records });
        Ok(store)
    }

    /// Applies a replayed record; returns how many earlier records it made dead.
    fn apply(&mut self, record: Record) -> Result<usize> {
        match record {
            Record::Put(e) => {
                self.next_id = self.next_id.max(e.entry_id.0 + 1);
                self.clock = self.clock.max(e.created_at).max(e.last_hit_at);
                let old = self.entries.insert(e.entry_id, e);
                Ok(usize::from(old.is_some()))
            }
            Record::Delete(id) => Ok(if self.entries.remove(&id).is_some() { 2 } else { 1 }),
            Record::Touch { id, last_hit_at, hit_count } => {
                self.clock = self.clock.max(last_hit_at);
                match self.entries.get_mut(&id) {
                    Some(e) => {
                        e.last_hit_at = last_hit_at;
                        e.hit_count = hit_count;
                    }
                    None => return Ok(1),
                }
                Ok(1)
            }
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.log.as_ref().map(|l| l.path.as_path())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reserves a fresh entry id; persisted with the next write.
    pub fn allocate_id(&mut self) -> EntryId {
        let id = EntryId(self.next_id);
        self.next_id += 1;
        id
    }

    /// Advances and returns the logical clock.
    pub fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    fn append(&mut self, record: &Record) -> Result<()> {
        let Some(log) = self.log.as_mut() else { return Ok(()) };
        let bytes = format::encode_record(record);
        let header = Header { next_id: self.next_id, clock: self.clock }.encode();
        let res = (|| -> std::io::Result<()> {
            log.file.write_all(&bytes)?;
            log.file.seek(SeekFrom::Start(NEXT_ID_OFFSET))?;
            log.file.write_all(&header[NEXT_ID_OFFSET as usize..])?;
            log.file.seek(SeekFrom::End(0))?;
            if log.fsync {
                log.file.sync_data()?;
            }
            Ok(())
        })();
        res.map_err(|e| Error::Storage(format!("append to {}: {e}", log.path.display())))?;
        log.records += 1;
        Ok(())
    }

    pub fn put_entry(&mut self, entry: CacheEntry) -> Result<()> {
        if self.entries.contains_key(&entry.entry_id) {
            return Err(Error::DuplicateId(entry.entry_id.0));
        }
        self.next_id = self.next_id.max(entry.entry_id.0 + 1);
        self.clock = self.clock.max(entry.created_at).max(entry.last_hit_at);
        let record = Record::Put(entry);
        self.append(&record)?;
        let Record::Put(entry) = record else { unreachable!() };
        self.entries.insert(entry.entry_id, entry);
        Ok(())
    }

    pub fn get_entry(&self, id: EntryId) -> Result<&CacheEntry> {
        self.entries.get(&id).ok_or(Error::NotFound(id.0))
    }

    pub fn delete_entry(&mut self, id: EntryId) -> Result<CacheEntry> {
        if !self.entries.contains_key(&id) {
            return Err(Error::NotFound(id.0));
        }
        self.append(&Record::Delete(id))?;
        if let Some(log) = self.log.as_mut() {
            log.dead_records += 2;
        }
        let removed = self.entries.remove(&id).expect("checked above");
        self.maybe_compact()?;
        Ok(removed)
    }

    /// Records a cache hit on `id` at logical time `at`.
    pub fn touch(&mut self, id: EntryId, at: u64) -> Result<()> {
        let e = self.entries.get(&id).ok_or(Error::NotFound(id.0))?;
        let record = Record::Touch { id, last_hit_at: at.max(e.last_hit_at), hit_count: e.hit_count + 1 };
        self.clock = self.clock.max(at);
        self.append(&record)?;
        if let Some(log) = self.log.as_mut() {
            log.dead_records += 1;
        }
        if let Record::Touch { last_hit_at, hit_count, .. } = record {
            let e = self.entries.get_mut(&id).expect("checked above");
            e.last_hit_at = last_hit_at;
            e.hit_count = hit_count;
        }
        self.maybe_compact()?;
        Ok(())
    }

    /// Live entries in ascending id order.
    pub fn scan_entries(&self) -> impl Iterator<Item = &CacheEntry> + '_ {
        self.entries.values()
    }

    /// Removes every entry; ids keep increasing afterwards.
    pub fn clear(&mut self) -> Result<()> {
        self.entries.clear();
        self.compact()
    }

    fn maybe_compact(&mut self) -> Result<()> {
        let due = self
            .log
            .as_ref()
            .is_some_and(|l| l.dead_records >= COMPACT_MIN_DEAD && l.dead_records * 2 > l.records);
        if due {
            self.compact()?;
        }
        Ok(())
    }

    /// Rewrites the log with one put record per live entry.
    pub fn compact(&mut self) -> Result<()> {
        let Some(log) = self.log.as_mut() else { return Ok(()) };
        let tmp = log.path.with_extension("compact");
        {
            let mut out = File::create(&tmp)?;
            let mut buf = Header { next_id: self.next_id, clock: self.clock }.encode().to_vec();
            for e in self.entries.values() {
                buf.extend_from_slice(&format::encode_record(&Record::Put(e.clone())));
            }
            out.write_all(&buf)?;
            out.sync_all()?;
        }
        fs::rename(&tmp, &log.path)?;
        let mut file = OpenOptions::new().read(true).write(true).open(&log.path)?;
        file.seek(SeekFrom::End(0))?;
        log.file = file;
        log.records = self.entries.len();
        log.dead_records = 0;
        Ok(())
    }
}
