//! Property tests for the wire protocol: encode/decode round-trips,
//! injectivity of frame encoding and gap accounting.

use obsmeter_core::measure::{ClientIdentity, MetricType, MetricValue};
use obsmeter_core::time::Micros;
use obsmeter_core::wire::{
    decode_frame, decode_header, detect_gaps, encode_frame, encode_header, HeaderBlock,
    StreamFrame, StreamSchema,
};

use proptest::prelude::*;

fn arb_metric_type() -> impl Strategy<Value = MetricType> {
    prop_oneof![
        Just(MetricType::Int64),
        Just(MetricType::Float64),
        Just(MetricType::Text),
    ]
}

fn arb_value(ty: MetricType) -> BoxedStrategy<MetricValue> {
    match ty {
        MetricType::Int64 => any::<i64>().prop_map(MetricValue::Int64).boxed(),
        MetricType::Float64 => prop_oneof![
            any::<i64>().prop_map(|v| MetricValue::Float64(v as f64 / 1e6)),
            (-1e300f64..1e300).prop_map(MetricValue::Float64),
            Just(MetricValue::Float64(0.0)),
            Just(MetricValue::Float64(-0.0)),
            Just(MetricValue::Float64(f64::MIN_POSITIVE)),
        ]
        .boxed(),
        MetricType::Text => ".*".prop_map(MetricValue::Text).boxed(),
    }
}

fn arb_identifier() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,12}"
}

fn arb_schemas() -> impl Strategy<Value = Vec<StreamSchema>> {
    prop::collection::vec(
        (
            arb_identifier(),
            prop::collection::vec((arb_identifier(), arb_metric_type()), 1..5),
        ),
        1..4,
    )
    .prop_map(|raw| {
        raw.into_iter()
            .enumerate()
            .map(|(i, (name, fields))| StreamSchema {
                index: i as u32 + 1,
                name,
                fields: fields
                    .into_iter()
                    .enumerate()
                    .map(|(j, (f, t))| (format!("{f}_{j}"), t))
                    .collect(),
            })
            .collect()
    })
}

fn arb_header() -> impl Strategy<Value = HeaderBlock> {
    (arb_schemas(), ".*", ".*", ".*", 1i64..i64::MAX / 2).prop_map(
        |(schemas, experiment_id, node_id, app_name, start)| HeaderBlock {
            protocol_version: 1,
            identity: ClientIdentity {
                experiment_id: if experiment_id.is_empty() { "e".into() } else { experiment_id },
                node_id,
                app_name,
                start_time: Micros(start),
            },
            schemas,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn header_round_trip(h in arb_header()) {
        let encoded = encode_header(&h).unwrap();
        let decoded = decode_header(&encoded).unwrap();
        prop_assert_eq!(decoded, h);
    }

    #[test]
    fn frame_round_trip(
        schemas in arb_schemas(),
        ts in 0i64..i64::MAX / 2,
        seq in any::<u64>(),
        pick in any::<prop::sample::Index>(),
        value_seed in any::<u64>(),
    ) {
        let schema = &schemas[pick.index(schemas.len())];
        let mut runner = proptest::test_runner::TestRunner::deterministic();
        let _ = value_seed;
        let values: Vec<MetricValue> = schema
            .fields
            .iter()
            .map(|(_, ty)| arb_value(*ty).new_tree(&mut runner).unwrap().current())
            .collect();
        let frame = StreamFrame {
            client_ts_rel: Micros(ts),
            stream_index: schema.index,
            seq,
            values,
        };
        let line = encode_frame(&frame);
        let decoded = decode_frame(&line, &schemas).unwrap();
        // int64 and text round-trip bitwise; float64 value-exact
        prop_assert_eq!(decoded.client_ts_rel, frame.client_ts_rel);
        prop_assert_eq!(decoded.seq, frame.seq);
        for (a, b) in decoded.values.iter().zip(&frame.values) {
            match (a, b) {
                (MetricValue::Float64(x), MetricValue::Float64(y)) => {
                    prop_assert_eq!(x.to_bits(), y.to_bits())
                }
                _ => prop_assert_eq!(a, b),
            }
        }
    }

    #[test]
    fn frame_encoding_is_injective(
        ts1 in 0i64..1_000_000_000i64,
        ts2 in 0i64..1_000_000_000i64,
        v1 in any::<i64>(),
        v2 in any::<i64>(),
        seq1 in any::<u64>(),
        seq2 in any::<u64>(),
    ) {
        let mk = |ts, seq, v| StreamFrame {
            client_ts_rel: Micros(ts),
            stream_index: 1,
            seq,
            values: vec![MetricValue::Int64(v)],
        };
        let a = mk(ts1, seq1, v1);
        let b = mk(ts2, seq2, v2);
        prop_assert_eq!(a == b, encode_frame(&a) == encode_frame(&b));
    }

    #[test]
    fn gap_count_equals_dropped_cardinality(
        len in 1usize..200,
        drop_mask in prop::collection::vec(any::<bool>(), 200),
    ) {
        // drop a random subset of a contiguous range, keeping at least the
        // endpoints so the span is known
        let kept: Vec<u64> = (0..len as u64)
            .filter(|s| *s == 0 || *s == len as u64 - 1 || !drop_mask[*s as usize])
            .collect();
        let dropped = len as u64 - kept.len() as u64;
        let report = detect_gaps(&kept).unwrap();
        prop_assert_eq!(report.missing, dropped);
        let enumerated: u64 = report.ranges.iter().map(|(a, b)| b - a + 1).sum();
        prop_assert_eq!(enumerated, dropped);
    }
}
