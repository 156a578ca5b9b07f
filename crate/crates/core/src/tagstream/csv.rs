//! Human-readable rendering of a tag file:
//!
//! ```text
//! # tagstream v1
//! # duration_ps=1000
//! # channel=0,herald_a
//! channel,time_ps
//! 0,17
//! ```

use super::{merged_records, validate_streams, TagError, TagFile};
use crate::stream::EventStream;
use std::io::{BufRead, Write};

pub fn write_tags_csv<W: Write>(
    streams: &[EventStream],
    duration_ps: u64,
    out: &mut W,
) -> Result<(), TagError> {
    validate_streams(streams, duration_ps)?;
    writeln!(out, "# tagstream v{}", super::VERSION)?;
    writeln!(out, "# duration_ps={duration_ps}")?;
    for s in streams {
        writeln!(out, "# channel={},{}", s.channel, s.name)?;
    }
    writeln!(out, "channel,time_ps")?;
    for (ch, t) in merged_records(streams) {
        writeln!(out, "{ch},{t}")?;
    }
    Ok(())
}

pub fn parse_tags_csv<R: BufRead>(source: R) -> Result<TagFile, TagError> {
    let mut duration = None;
    let mut streams: Vec<EventStream> = Vec::new();
    let mut slot_of = [usize::MAX; 256];
    let mut seen_header = false;
    let mut last = 0u64;
    for (n, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        let err = |reason: String| TagError::Csv { line: n + 1, reason };
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(v) = comment.strip_prefix("tagstream v") {
                if v != super::VERSION.to_string() {
                    return Err(TagError::UnsupportedVersion(v.parse().unwrap_or(u32::MAX)));
                }
            } else if let Some(v) = comment.strip_prefix("duration_ps=") {
                duration = Some(v.parse::<u64>().map_err(|_| err(format!("bad duration {v:?}")))?);
            } else if let Some(v) = comment.strip_prefix("channel=") {
                let (id, name) = v
                    .split_once(',')
                    .ok_or_else(|| err(format!("bad channel entry {v:?}")))?;
                let id: u8 = id.parse().map_err(|_| err(format!("bad channel id {id:?}")))?;
                if slot_of[id as usize] != usize::MAX {
                    return Err(TagError::ChannelTable(format!("duplicate channel id {id}")));
                }
                slot_of[id as usize] = streams.len();
                streams.push(EventStream::new(id, name, Vec::new()));
            }
            continue;
        }
        if !seen_header {
            if line != "channel,time_ps" {
                return Err(err(format!("expected `channel,time_ps`, found {line:?}")));
            }
            seen_header = true;
            continue;
        }
        let (ch, t) = line
            .split_once(',')
            .ok_or_else(|| err(format!("malformed record {line:?}")))?;
        let id: u8 = ch.parse().map_err(|_| err(format!("bad channel {ch:?}")))?;
        let t: u64 = t.parse().map_err(|_| err(format!("bad timestamp {t:?}")))?;
        let record = streams.iter().map(|s| s.len() as u64).sum();
        let slot = slot_of[id as usize];
        if slot == usize::MAX {
            return Err(TagError::UnknownChannel { id, record });
        }
        if t < last {
            return Err(TagError::NonMonotonic { record, timestamp: t });
        }
        last = t;
        streams[slot].timestamps.push(t);
    }
    let duration_ps = duration.ok_or(TagError::Csv {
        line: 0,
        reason: "missing `# duration_ps=` line".into(),
    })?;
    validate_streams(&streams, duration_ps)?;
    Ok(TagFile {
        duration_ps,
        streams,
    })
}
