//! Detector event streams shared by the simulator, the file format and the
//! analysis code.

use serde::{Deserialize, Serialize};

/// Timestamps in integer picoseconds for one detector channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventStream {
    pub channel: u8,
    pub name: String,
    pub timestamps: Vec<u64>,
}

impl EventStream {
    pub fn new(channel: u8, name: impl Into<String>, timestamps: Vec<u64>) -> Self {
        Self {
            channel,
            name: name.into(),
            timestamps,
        }
    }

    pub fn empty(channel: Channel) -> Self {
        Self::new(channel.id(), channel.name(), Vec::new())
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Index of the first decreasing timestamp, if any.
    pub fn first_unsorted(&self) -> Option<usize> {
        first_unsorted(&self.timestamps)
    }
}

pub(crate) fn first_unsorted(ts: &[u64]) -> Option<usize> {
    ts.windows(2).position(|w| w[1] < w[0]).map(|i| i + 1)
}

/// The four detector channels of the cascaded experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    HeraldA,
    HeraldB,
    Signal,
    Idler,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::HeraldA,
        Channel::HeraldB,
        Channel::Signal,
        Channel::Idler,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::HeraldA => "herald_a",
            Channel::HeraldB => "herald_b",
            Channel::Signal => "signal",
            Channel::Idler => "idler",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Merges several sorted timestamp lists into one sorted list.
pub fn merge_sorted(lists: &[&[u64]]) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::with_capacity(lists.iter().map(|l| l.len()).sum());
    match lists {
        [] => {}
        [one] => out.extend_from_slice(one),
        [a, b] => {
            let (mut i, mut j) = (0, 0);
            while i < a.len() && j < b.len() {
                if a[i] <= b[j] {
                    out.push(a[i]);
                    i += 1;
                } else {
                    out.push(b[j]);
                    j += 1;
                }
            }
            out.extend_from_slice(&a[i..]);
            out.extend_from_slice(&b[j..]);
        }
        _ => {
            for l in lists {
                out.extend_from_slice(l);
            }
            out.sort_unstable();
        }
    }
    out
}
