//! Byte layout of the append-only entry log. See FORMAT.md at the repo root.

use std::io::{self, Read};

use crate::error::{Error, Result};
use crate::store::CacheEntry;
use crate::vector::UnitVector;
use crate::vindex::EntryId;

pub const MAGIC: &[u8; 4] = b"CTXC";
pub const FORMAT_VERSION: u16 = 1;
/// magic + version + next_id + clock
pub const HEADER_LEN: u64 = 4 + 2 + 8 + 8;
pub const NEXT_ID_OFFSET: u64 = 6;

pub const KIND_PUT: u8 = 1;
pub const KIND_DELETE: u8 = 2;
pub const KIND_TOUCH: u8 = 3;

/// Largest accepted record body; anything bigger is treated as corruption.
pub const MAX_RECORD_LEN: u32 = 64 << 20;

mod tag {
    pub const ENTRY_ID: u8 = 1;
    pub const SESSION_ID: u8 = 2;
    pub const TURN_INDEX: u8 = 3;
    pub const QUERY: u8 = 4;
    pub const RESPONSE: u8 = 5;
    pub const V_Q: u8 = 6;
    pub const G: u8 = 7;
    pub const CREATED_AT: u8 = 8;
    pub const LAST_HIT_AT: u8 = 9;
    pub const HIT_COUNT: u8 = 10;
    pub const RESPONSE_TOKENS: u8 = 11;
    pub const PARAMS_VERSION: u8 = 12;
    pub const CREATED_WALL_MS: u8 = 13;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub next_id: u64,
    pub clock: u64,
}

impl Header {
    pub fn encode(&self) -> [u8; HEADER_LEN as usize] {
        let mut out = [0u8; HEADER_LEN as usize];
        out[..4].copy_from_slice(MAGIC);
        out[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        out[6..14].copy_from_slice(&self.next_id.to_le_bytes());
        out[14..22].copy_from_slice(&self.clock.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Header> {
        if bytes.len() < HEADER_LEN as usize || &bytes[..4] != MAGIC {
            return Err(Error::Storage("not a contextcache log (bad magic)".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::Storage(format!("unsupported log format version {version}")));
        }
        Ok(Header {
            next_id: u64::from_le_bytes(bytes[6..14].try_into().unwrap()),
            clock: u64::from_le_bytes(bytes[14..22].try_into().unwrap()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Put(CacheEntry),
    Delete(EntryId),
    Touch { id: EntryId, last_hit_at: u64, hit_count: u64 },
}

fn put_field(buf: &mut Vec<u8>, tag: u8, bytes: &[u8]) {
    buf.push(tag);
    buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(bytes);
}

fn put_u64(buf: &mut Vec<u8>, tag: u8, v: u64) {
    put_field(buf, tag, &v.to_le_bytes());
}

fn put_vector(buf: &mut Vec<u8>, tag: u8, v: &UnitVector) {
    let mut bytes = Vec::with_capacity(1 + v.dim() * 8);
    bytes.push(8);
    for x in v.iter() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    put_field(buf, tag, &bytes);
}

pub fn encode_entry(e: &CacheEntry) -> Vec<u8> {
    let mut buf = Vec::with_capacity(128 + e.query.len() + e.response.len() + 16 * e.v_q.dim());
    put_u64(&mut buf, tag::ENTRY_ID, e.entry_id.0);
    put_field(&mut buf, tag::SESSION_ID, e.session_id.as_bytes());
    put_u64(&mut buf, tag::TURN_INDEX, e.turn_index);
    put_field(&mut buf, tag::QUERY, e.query.as_bytes());
    put_field(&mut buf, tag::RESPONSE, e.response.as_bytes());
    put_vector(&mut buf, tag::V_Q, &e.v_q);
    put_vector(&mut buf, tag::G, &e.g);
    put_u64(&mut buf, tag::CREATED_AT, e.created_at);
    put_u64(&mut buf, tag::LAST_HIT_AT, e.last_hit_at);
    put_u64(&mut buf, tag::HIT_COUNT, e.hit_count);
    put_u64(&mut buf, tag::RESPONSE_TOKENS, e.response_token_count);
    put_u64(&mut buf, tag::PARAMS_VERSION, e.params_version);
    put_u64(&mut buf, tag::CREATED_WALL_MS, e.created_wall_ms);
    buf
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Storage(msg.into())
}

fn as_u64(field: &str, bytes: &[u8]) -> Result<u64> {
    bytes
        .try_into()
        .map(u64::from_le_bytes)
        .map_err(|_| corrupt(format!("field {field}: expected 8 bytes")))
}

fn as_string(field: &str, bytes: &[u8]) -> Result<String> {
    String::from_utf8(bytes.to_vec()).map_err(|_| corrupt(format!("field {field}: invalid utf-8")))
}

fn as_vector(field: &str, bytes: &[u8]) -> Result<UnitVector> {
    let (&width, body) = bytes.split_first().ok_or_else(|| corrupt(format!("field {field}: empty")))?;
    let values: Vec<f64> = match width {
        8 if body.len() % 8 == 0 => body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        4 if body.len() % 4 == 0 => body
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        _ => return Err(corrupt(format!("field {field}: bad vector encoding"))),
    };
    if width == 4 {
        // widened f32 values are renormalized, they cannot meet the f64 tolerance as stored
        return UnitVector::normalize(&values);
    }
    UnitVector::from_unit(values).map_err(|e| corrupt(format!("field {field}: {e}")))
}

pub fn decode_entry(mut payload: &[u8]) -> Result<CacheEntry> {
    let mut entry_id = None;
    let mut session_id = None;
    let mut turn_index = 0;
    let mut query = None;
    let mut response = None;
    let mut v_q = None;
    let mut g = None;
    let mut created_at = 0;
    let mut last_hit_at = 0;
    let mut hit_count = 0;
    let mut response_token_count = 0;
    let mut params_version = 0;
    let mut created_wall_ms = 0;
    while !payload.is_empty() {
        if payload.len() < 5 {
            return Err(corrupt("truncated field header"));
        }
        let t = payload[0];
        let len = u32::from_le_bytes(payload[1..5].try_into().unwrap()) as usize;
        let rest = &payload[5..];
        if rest.len() < len {
            return Err(corrupt("truncated field body"));
        }
        let (body, tail) = rest.split_at(len);
        payload = tail;
        match t {
            tag::ENTRY_ID => entry_id = Some(as_u64("entry_id", body)?),
            tag::SESSION_ID => session_id = Some(as_string("session_id", body)?),
            tag::TURN_INDEX => turn_index = as_u64("turn_index", body)?,
            tag::QUERY => query = Some(as_string("query", body)?),
            tag::RESPONSE => response = Some(as_string("response", body)?),
            tag::V_Q => v_q = Some(as_vector("v_q", body)?),
            tag::G => g = Some(as_vector("g", body)?),
            tag::CREATED_AT => created_at = as_u64("created_at", body)?,
            tag::LAST_HIT_AT => last_hit_at = as_u64("last_hit_at", body)?,
            tag::HIT_COUNT => hit_count = as_u64("hit_count", body)?,
            tag::RESPONSE_TOKENS => response_token_count = as_u64("response_token_count", body)?,
            tag::PARAMS_VERSION => params_version = as_u64("params_version", body)?,
            tag::CREATED_WALL_MS => created_wall_ms = as_u64("created_wall_ms", body)?,
            _ => {} // unknown tags are skipped
        }
    }
    let missing = |f: &str| corrupt(format!("put record without {f}"));
    let v_q = v_q.ok_or_else(|| missing("v_q"))?;
    let g = g.ok_or_else(|| missing("g"))?;
    if v_q.dim() != g.dim() {
        return Err(corrupt("v_q and g differ in dimension"));
    }
    Ok(CacheEntry {
        entry_id: EntryId(entry_id.ok_or_else(|| missing("entry_id"))?),
        session_id: session_id.ok_or_else(|| missing("session_id"))?,
        turn_index,
        query: query.ok_or_else(|| missing("query"))?,
        response: response.ok_or_else(|| missing("response"))?,
        v_q,
        g,
        created_at,
        last_hit_at,
        hit_count,
        response_token_count,
        params_version,
        created_wall_ms,
    })
}

/// `[u32 len][u8 kind][payload][u32 crc32]`; `len` counts kind + payload and
/// the CRC covers the same bytes.
pub fn encode_record(record: &Record) -> Vec<u8> {
    let (kind, payload) = match record {
        Record::Put(e) => (KIND_PUT, encode_entry(e)),
        Record::Delete(id) => (KIND_DELETE, id.0.to_le_bytes().to_vec()),
        Record::Touch { id, last_hit_at, hit_count } => {
            let mut p = Vec::with_capacity(24);
            p.extend_from_slice(&id.0.to_le_bytes());
            p.extend_from_slice(&last_hit_at.to_le_bytes());
            p.extend_from_slice(&hit_count.to_le_bytes());
            (KIND_TOUCH, p)
        }
    };
    let mut body = Vec::with_capacity(1 + payload.len());
    body.push(kind);
    body.extend_from_slice(&payload);
    let crc = crc32fast::hash(&body);
    let mut out = Vec::with_capacity(8 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn decode_body(body: &[u8]) -> Result<Record> {
    let (&kind, payload) = body.split_first().ok_or_else(|| corrupt("empty record"))?;
    match kind {
        KIND_PUT => decode_entry(payload).map(Record::Put),
        KIND_DELETE => Ok(Record::Delete(EntryId(as_u64("id", payload)?))),
        KIND_TOUCH if payload.len() == 24 => Ok(Record::Touch {
            id: EntryId(as_u64("id", &payload[..8])?),
            last_hit_at: as_u64("last_hit_at", &payload[8..16])?,
            hit_count: as_u64("hit_count", &payload[16..])?,
        }),
        other => Err(corrupt(format!("unknown record kind {other}"))),
    }
}

/// Outcome of reading one record from a stream.
pub enum ReadOutcome {
    Record(Record, u64),
    /// Clean end of stream.
    End,
    /// Incomplete or checksum-failing tail: the bytes from here on are a torn write.
    Torn,
}

pub fn read_record(r: &mut impl Read) -> Result<ReadOutcome> {
    let mut len_buf = [0u8; 4];
    match read_full(r, &mut len_buf)? {
        0 => return Ok(ReadOutcome::End),
        4 => {}
        _ => return Ok(ReadOutcome::Torn),
    }
    let len = u32::from_le_bytes(len_buf);
    if len == 0 || len > MAX_RECORD_LEN {
        return Ok(ReadOutcome::Torn);
    }
    let mut body = vec![0u8; len as usize + 4];
    if read_full(r, &mut body)? != body.len() {
        return Ok(ReadOutcome::Torn);
    }
    let (body, crc) = body.split_at(len as usize);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Ok(ReadOutcome::Torn);
    }
    Ok(ReadOutcome::Record(decode_body(body)?, 8 + u64::from(len)))
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}
