//! Binary time-tag file format.
//!
//! All integers are little-endian.
//!
//! ```text
//! offset  size      field
//! 0       12        magic  b"CASCADETAGS\0"
//! 12      4         format version (u32) = 1
//! 16      4         time unit in picoseconds (u32) = 1
//! 20      8         run duration in picoseconds (u64)
//! 28      2         channel count C (u16)
//! 30      ...       C channel entries: id (u8), name length N (u8), N bytes UTF-8 name
//! ...     8         record count R (u64)
//! ...     9·R       records: channel id (u8), timestamp in ps (u64)
//! ```
//!
//! Records are globally sorted by timestamp; equal timestamps are ordered by
//! channel id. With the four standard channels and no records the file is
//! [`STANDARD_HEADER_LEN`] = 73 bytes long.
//!
//! A CSV rendering (`channel,time_ps`) carries the same channel table in
//! leading `#` comment lines.

mod csv;

pub use self::csv::{parse_tags_csv, write_tags_csv};

use crate::stream::EventStream;
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::{self, Read, Write};
use thiserror::Error;

pub const MAGIC: [u8; 12] = *b"CASCADETAGS\0";
pub const VERSION: u32 = 1;
pub const TIME_UNIT_PS: u32 = 1;
pub const RECORD_LEN: usize = 9;
/// Fixed part of the header before the channel table.
pub const FIXED_HEADER_LEN: usize = 30;
/// Header length for the herald_a/herald_b/signal/idler channel table.
pub const STANDARD_HEADER_LEN: usize = FIXED_HEADER_LEN + 35 + 8;

#[derive(Debug, Error)]
pub enum TagError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("not a tag file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported time unit {0} ps")]
    UnsupportedTimeUnit(u32),
    #[error("file truncated in {section} after {records_read} records; last valid record ends at byte {valid_offset}")]
    Truncated {
        section: &'static str,
        records_read: u64,
        valid_offset: u64,
    },
    #[error("record {record} refers to unknown channel id {id}")]
    UnknownChannel { id: u8, record: u64 },
    #[error("record {record} has timestamp {timestamp} before its predecessor")]
    NonMonotonic { record: u64, timestamp: u64 },
    #[error("record {record} has timestamp {timestamp} after run end {duration}")]
    OutOfRange {
        record: u64,
        timestamp: u64,
        duration: u64,
    },
    #[error("channel table: {0}")]
    ChannelTable(String),
    #[error("invalid stream {channel}: {reason}")]
    InvalidStream { channel: String, reason: String },
    #[error("CSV line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

/// Contents of one tag file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagFile {
    pub duration_ps: u64,
    /// One stream per channel-table entry, in table order.
    pub streams: Vec<EventStream>,
}

impl TagFile {
    pub fn new(duration_ps: u64, streams: Vec<EventStream>) -> Self {
        Self {
            duration_ps,
            streams,
        }
    }

    pub fn stream(&self, name: &str) -> Option<&EventStream> {
        self.streams.iter().find(|s| s.name == name)
    }

    pub fn record_count(&self) -> u64 {
        self.streams.iter().map(|s| s.len() as u64).sum()
    }
}

pub(crate) fn validate_streams(streams: &[EventStream], duration_ps: u64) -> Result<(), TagError> {
    let mut seen = BTreeMap::new();
    for s in streams {
        let invalid = |reason: String| TagError::InvalidStream {
            channel: s.name.clone(),
            reason,
        };
        if s.name.is_empty() || s.name.len() > u8::MAX as usize {
            return Err(invalid(format!("name length {} not in 1..=255", s.name.len())));
        }
        if s.name.contains(['\n', ',']) {
            return Err(invalid("name contains a newline or comma".into()));
        }
        if seen.insert(s.channel, ()).is_some() {
            return Err(invalid(format!("duplicate channel id {}", s.channel)));
        }
        if let Some(i) = s.first_unsorted() {
            return Err(invalid(format!("timestamps decrease at index {i}")));
        }
        if let Some(&last) = s.timestamps.last() {
            if last > duration_ps {
                return Err(invalid(format!("timestamp {last} after run end {duration_ps}")));
            }
        }
    }
    if streams.len() > u16::MAX as usize {
        return Err(TagError::ChannelTable("too many channels".into()));
    }
    Ok(())
}

/// Stable k-way merge: (timestamp, channel id) ascending.
pub(crate) fn merged_records(streams: &[EventStream]) -> impl Iterator<Item = (u8, u64)> + '_ {
    let mut heap: BinaryHeap<Reverse<(u64, u8, usize)>> = streams
        .iter()
        .enumerate()
        .filter_map(|(k, s)| s.timestamps.first().map(|&t| Reverse((t, s.channel, k))))
        .collect();
    let mut cursor = vec![0usize; streams.len()];
    std::iter::from_fn(move || {
        let Reverse((t, ch, k)) = heap.pop()?;
        cursor[k] += 1;
        if let Some(&next) = streams[k].timestamps.get(cursor[k]) {
            heap.push(Reverse((next, ch, k)));
        }
        Some((ch, t))
    })
}

/// Writes `streams` in the binary layout and returns the number of bytes
/// written. Input is validated before anything is written.
pub fn write_tags<W: Write>(
    streams: &[EventStream],
    duration_ps: u64,
    out: &mut W,
) -> Result<u64, TagError> {
    validate_streams(streams, duration_ps)?;

    let mut header = Vec::with_capacity(64);
    header.extend_from_slice(&MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.extend_from_slice(&TIME_UNIT_PS.to_le_bytes());
    header.extend_from_slice(&duration_ps.to_le_bytes());
    header.extend_from_slice(&(streams.len() as u16).to_le_bytes());
    for s in streams {
        header.push(s.channel);
        header.push(s.name.len() as u8);
        header.extend_from_slice(s.name.as_bytes());
    }
    let count: u64 = streams.iter().map(|s| s.len() as u64).sum();
    header.extend_from_slice(&count.to_le_bytes());
    out.write_all(&header)?;

    let mut written = header.len() as u64;
    let mut buf = Vec::with_capacity(RECORD_LEN * 4096);
    for (ch, t) in merged_records(streams) {
        buf.push(ch);
        buf.extend_from_slice(&t.to_le_bytes());
        if buf.len() >= RECORD_LEN * 4096 {
            out.write_all(&buf)?;
            written += buf.len() as u64;
            buf.clear();
        }
    }
    out.write_all(&buf)?;
    written += buf.len() as u64;
    Ok(written)
}

/// Convenience wrapper around [`write_tags`] producing a byte vector.
pub fn write_tags_to_vec(streams: &[EventStream], duration_ps: u64) -> Result<Vec<u8>, TagError> {
    let mut out = Vec::new();
    write_tags(streams, duration_ps, &mut out)?;
    Ok(out)
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    /// Fills `buf`, returning `Ok(false)` on a clean or partial EOF.
    fn fill(&mut self, buf: &mut [u8]) -> io::Result<bool> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => return Ok(false),
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        self.offset += buf.len() as u64;
        Ok(true)
    }
}

/// Parses a binary tag file.
pub fn parse_tags<R: Read>(source: R) -> Result<TagFile, TagError> {
    let mut r = CountingReader {
        inner: source,
        offset: 0,
    };
    let header_truncated = |section| TagError::Truncated {
        section,
        records_read: 0,
        valid_offset: 0,
    };

    let mut fixed = [0u8; FIXED_HEADER_LEN];
    if !r.fill(&mut fixed[..12])? {
        return Err(TagError::BadMagic);
    }
    if fixed[..12] != MAGIC {
        return Err(TagError::BadMagic);
    }
    if !r.fill(&mut fixed[12..])? {
        return Err(header_truncated("header"));
    }
    let version = u32::from_le_bytes(fixed[12..16].try_into().unwrap());
    if version != VERSION {
        return Err(TagError::UnsupportedVersion(version));
    }
    let unit = u32::from_le_bytes(fixed[16..20].try_into().unwrap());
    if unit != TIME_UNIT_PS {
        return Err(TagError::UnsupportedTimeUnit(unit));
    }
    let duration_ps = u64::from_le_bytes(fixed[20..28].try_into().unwrap());
    let n_channels = u16::from_le_bytes(fixed[28..30].try_into().unwrap());

    let mut streams: Vec<EventStream> = Vec::with_capacity(n_channels as usize);
    let mut slot_of = [usize::MAX; 256];
    for _ in 0..n_channels {
        let mut idlen = [0u8; 2];
        if !r.fill(&mut idlen)? {
            return Err(header_truncated("channel table"));
        }
        let mut name = vec![0u8; idlen[1] as usize];
        if !r.fill(&mut name)? {
            return Err(header_truncated("channel table"));
        }
        let name = String::from_utf8(name)
            .map_err(|_| TagError::ChannelTable(format!("channel {} name is not UTF-8", idlen[0])))?;
        if slot_of[idlen[0] as usize] != usize::MAX {
            return Err(TagError::ChannelTable(format!("duplicate channel id {}", idlen[0])));
        }
        slot_of[idlen[0] as usize] = streams.len();
        streams.push(EventStream::new(idlen[0], name, Vec::new()));
    }

    let mut count = [0u8; 8];
    if !r.fill(&mut count)? {
        return Err(header_truncated("record count"));
    }
    let count = u64::from_le_bytes(count);

    let mut last = 0u64;
    let mut record = [0u8; RECORD_LEN];
    for index in 0..count {
        let valid_offset = r.offset;
        if !r.fill(&mut record)? {
            return Err(TagError::Truncated {
                section: "records",
                records_read: index,
                valid_offset,
            });
        }
        let id = record[0];
        let t = u64::from_le_bytes(record[1..].try_into().unwrap());
        let slot = slot_of[id as usize];
        if slot == usize::MAX {
            return Err(TagError::UnknownChannel { id, record: index });
        }
        if t < last {
            return Err(TagError::NonMonotonic {
                record: index,
                timestamp: t,
            });
        }
        if t > duration_ps {
            return Err(TagError::OutOfRange {
                record: index,
                timestamp: t,
                duration: duration_ps,
            });
        }
        last = t;
        streams[slot].timestamps.push(t);
    }
    Ok(TagFile {
        duration_ps,
        streams,
    })
}
