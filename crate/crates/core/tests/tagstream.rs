use cascade_core::stream::{Channel, EventStream};
use cascade_core::tagstream::{
    parse_tags, parse_tags_csv, write_tags_csv, write_tags_to_vec, TagError, STANDARD_HEADER_LEN,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent encoder of the documented layout.
fn encode(streams: &[EventStream], duration: u64) -> Vec<u8> {
    let mut out = b"CASCADETAGS\0".to_vec();
    out.extend(1u32.to_le_bytes());
    out.extend(1u32.to_le_bytes());
    out.extend(duration.to_le_bytes());
    out.extend((streams.len() as u16).to_le_bytes());
    for s in streams {
        out.push(s.channel);
        out.push(s.name.len() as u8);
        out.extend(s.name.as_bytes());
    }
    let mut recs: Vec<(u64, u8)> = streams
        .iter()
        .flat_map(|s| s.timestamps.iter().map(move |&t| (t, s.channel)))
        .collect();
    recs.sort();
    out.extend((recs.len() as u64).to_le_bytes());
    for (t, c) in recs {
        out.push(c);
        out.extend(t.to_le_bytes());
    }
    out
}

fn streams_strategy() -> impl Strategy<Value = (Vec<EventStream>, u64)> {
    (1u64..u64::MAX / 2, prop::collection::btree_set(any::<u8>(), 1..6)).prop_flat_map(|(duration, ids)| {
        let ids: Vec<u8> = ids.into_iter().collect();
        let per = ids
            .iter()
            .map(|_| ("[a-z_]{1,12}", prop::collection::vec(0..=duration, 0..40)))
            .collect::<Vec<_>>();
        (Just(duration), Just(ids), per).prop_map(|(duration, ids, per)| {
            let streams = ids
                .into_iter()
                .zip(per)
                .map(|(id, (name, mut ts))| {
                    ts.sort_unstable();
                    EventStream::new(id, name, ts)
                })
                .collect();
            (streams, duration)
        })
    })
}

fn standard(seed: u64, per_channel: usize, duration: u64) -> Vec<EventStream> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Channel::ALL
        .iter()
        .map(|&c| {
            let mut ts: Vec<u64> = (0..per_channel).map(|_| rng.random_range(0..=duration)).collect();
            ts.sort_unstable();
            EventStream::new(c.id(), c.name(), ts)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn binary_round_trip((streams, duration) in streams_strategy()) {
        let bytes = write_tags_to_vec(&streams, duration).unwrap();
        prop_assert_eq!(&bytes, &encode(&streams, duration));
        let back = parse_tags(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.duration_ps, duration);
        prop_assert_eq!(back.streams, streams);
    }

    #[test]
    fn csv_round_trip((streams, duration) in streams_strategy()) {
        let mut text = Vec::new();
        write_tags_csv(&streams, duration, &mut text).unwrap();
        let back = parse_tags_csv(text.as_slice()).unwrap();
        prop_assert_eq!(back.duration_ps, duration);
        prop_assert_eq!(back.streams, streams);
    }

    #[test]
    fn mutated_bytes_never_panic(seed in any::<u64>(), flips in 1usize..8, cut in any::<prop::sample::Index>()) {
        let mut bytes = write_tags_to_vec(&standard(seed, 5, 10_000), 10_000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..flips {
            let i = rng.random_range(0..bytes.len());
            bytes[i] = rng.random();
        }
        let _ = parse_tags(bytes.as_slice());
        bytes.truncate(cut.index(bytes.len() + 1));
        let _ = parse_tags(bytes.as_slice());
        let _ = parse_tags_csv(bytes.as_slice());
    }

    #[test]
    fn random_garbage_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = parse_tags(bytes.as_slice());
        let mut framed = b"CASCADETAGS\0".to_vec();
        framed.extend(&bytes);
        let _ = parse_tags(framed.as_slice());
        let _ = parse_tags_csv(bytes.as_slice());
    }
}

#[test]
fn million_record_round_trip() {
    let duration = 3_600_000_000_000_000;
    let streams = standard(7, 250_000, duration);
    let bytes = write_tags_to_vec(&streams, duration).unwrap();
    assert_eq!(bytes.len(), STANDARD_HEADER_LEN + 9 * 1_000_000);
    let back = parse_tags(bytes.as_slice()).unwrap();
    assert_eq!(back.record_count(), 1_000_000);
    assert_eq!(back.streams, streams);
}

#[test]
fn writing_is_deterministic() {
    let a = write_tags_to_vec(&standard(3, 1000, 1 << 40), 1 << 40).unwrap();
    let b = write_tags_to_vec(&standard(3, 1000, 1 << 40), 1 << 40).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ties_are_ordered_by_channel() {
    let streams = vec![
        EventStream::new(3, "idler", vec![5, 5]),
        EventStream::new(0, "herald_a", vec![5]),
    ];
    let bytes = write_tags_to_vec(&streams, 10).unwrap();
    let body = &bytes[bytes.len() - 27..];
    assert_eq!([body[0], body[9], body[18]], [0, 3, 3]);
}

#[test]
fn truncation_reports_last_valid_record() {
    let streams = standard(1, 10, 1000);
    let bytes = write_tags_to_vec(&streams, 1000).unwrap();
    for cut in STANDARD_HEADER_LEN..bytes.len() {
        match parse_tags(&bytes[..cut]) {
            Err(TagError::Truncated { records_read, valid_offset, .. }) => {
                let expect = ((cut - STANDARD_HEADER_LEN) / 9) as u64;
                assert_eq!(records_read, expect);
                assert_eq!(valid_offset, STANDARD_HEADER_LEN as u64 + 9 * expect);
            }
            other => panic!("cut {cut}: {other:?}"),
        }
    }
    for cut in 0..STANDARD_HEADER_LEN {
        assert!(parse_tags(&bytes[..cut]).is_err());
    }
}

#[test]
fn structural_errors() {
    let streams = standard(2, 3, 1000);
    let good = write_tags_to_vec(&streams, 1000).unwrap();

    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(parse_tags(bad.as_slice()), Err(TagError::BadMagic)));

    let mut bad = good.clone();
    bad[12] = 9;
    assert!(matches!(parse_tags(bad.as_slice()), Err(TagError::UnsupportedVersion(9))));

    let mut bad = good.clone();
    bad[STANDARD_HEADER_LEN] = 200;
    assert!(matches!(parse_tags(bad.as_slice()), Err(TagError::UnknownChannel { id: 200, record: 0 })));

    let mut bad = good.clone();
    let last = bad.len() - 8;
    bad[last..].copy_from_slice(&0u64.to_le_bytes());
    assert!(matches!(parse_tags(bad.as_slice()), Err(TagError::NonMonotonic { .. })));

    // Lowering the duration leaves records past the end.
    let mut bad = good.clone();
    bad[20..28].copy_from_slice(&1u64.to_le_bytes());
    assert!(matches!(parse_tags(bad.as_slice()), Err(TagError::OutOfRange { .. })));

    assert!(write_tags_to_vec(&[EventStream::new(0, "a", vec![2, 1])], 10).is_err());
    assert!(write_tags_to_vec(&[EventStream::new(0, "a", vec![11])], 10).is_err());
    assert!(write_tags_to_vec(&[EventStream::new(0, "a", vec![]), EventStream::new(0, "b", vec![])], 10).is_err());
}
