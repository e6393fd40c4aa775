use nicrpc_bench::config::Dataset;
use nicrpc_bench::kvs::{
    check_history, initial_value, key_bytes, partition_of, value_bytes, value_id, Op, OpKind, Shard, Throttle,
    ViolationKind,
};
use proptest::prelude::*;

fn set(key: u64, id: u64, issue: u64, done: Option<u64>) -> Op {
    Op {
        kind: OpKind::Set,
        key,
        value: id,
        issue_ns: issue,
        complete_ns: done,
    }
}

fn get(key: u64, seen: u64, issue: u64, done: u64) -> Op {
    Op {
        kind: OpKind::Get,
        key,
        value: seen,
        issue_ns: issue,
        complete_ns: Some(done),
    }
}

fn kinds(ops: &[Op]) -> Vec<(usize, ViolationKind)> {
    check_history(ops).into_iter().map(|v| (v.op, v.kind)).collect()
}

#[test]
fn sequential_history_is_clean() {
    let ops = [
        get(1, initial_value(1), 0, 1),
        set(1, 10, 2, Some(3)),
        get(1, 10, 4, 5),
        set(1, 11, 6, Some(7)),
        get(1, 11, 8, 9),
        get(2, initial_value(2), 10, 11),
    ];
    assert!(check_history(&ops).is_empty());
}

#[test]
fn overwritten_value_is_stale() {
    let ops = [set(1, 10, 0, Some(1)), set(1, 11, 2, Some(3)), get(1, 10, 4, 5)];
    assert_eq!(kinds(&ops), [(2, ViolationKind::StaleRead)]);
}

#[test]
fn initial_value_after_a_write_is_stale() {
    let ops = [set(1, 10, 0, Some(1)), get(1, initial_value(1), 2, 3)];
    assert_eq!(kinds(&ops), [(1, ViolationKind::StaleRead)]);
}

#[test]
fn reading_a_write_that_has_not_started() {
    let ops = [get(1, 10, 0, 1), set(1, 10, 2, Some(3))];
    assert_eq!(kinds(&ops), [(0, ViolationKind::FutureRead)]);
}

#[test]
fn value_never_written_to_the_key() {
    let ops = [set(2, 10, 0, Some(1)), get(1, 10, 2, 3), get(1, 999, 4, 5)];
    assert_eq!(
        kinds(&ops),
        [(1, ViolationKind::UnknownValue), (2, ViolationKind::UnknownValue)]
    );
}

#[test]
fn concurrent_writes_may_be_seen_in_either_order() {
    // both writes overlap each other and the reads
    let ops = [
        set(1, 10, 0, Some(10)),
        set(1, 11, 1, Some(9)),
        get(1, 10, 2, 12),
        get(1, 11, 3, 13),
    ];
    assert!(check_history(&ops).is_empty());
}

#[test]
fn unacknowledged_write_may_or_may_not_land() {
    let ops = [
        set(1, 10, 0, Some(1)),
        set(1, 11, 2, None),
        get(1, 10, 100, 101),
        get(1, 11, 200, 201),
    ];
    assert!(check_history(&ops).is_empty());
    // an unacknowledged write still cannot be read before it was issued
    let ops = [get(1, 11, 0, 1), set(1, 11, 2, None)];
    assert_eq!(kinds(&ops), [(0, ViolationKind::FutureRead)]);
}

#[test]
fn unfinished_gets_are_ignored() {
    let mut g = get(1, 12345, 0, 1);
    g.complete_ns = None;
    assert!(check_history(&[g]).is_empty());
}

#[test]
fn throttle_is_aimd() {
    let mut t = Throttle {
        window: 8,
        max_window: 9,
        budget: 0.01,
    };
    t.epoch(100, 0);
    assert_eq!(t.window, 9);
    t.epoch(100, 0);
    assert_eq!(t.window, 9);
    t.epoch(100, 5);
    assert_eq!(t.window, 4);
    t.epoch(0, 0);
    assert_eq!(t.window, 4);
    for _ in 0..10 {
        t.epoch(10, 10);
    }
    assert_eq!(t.window, 1);
}

#[test]
fn values_round_trip_and_reject_garbage() {
    for ds in [Dataset::Tiny, Dataset::Small] {
        for id in [1, 77, initial_value(5), u64::MAX] {
            assert_eq!(value_id(&value_bytes(id, ds), ds), Some(id));
        }
    }
    let mut v = value_bytes(77, Dataset::Small);
    v[20] ^= 1;
    assert_eq!(value_id(&v, Dataset::Small), None);
}

#[test]
fn shards_partition_the_keyspace() {
    let (keys, parts) = (5_000, 4);
    for ds in [Dataset::Tiny, Dataset::Small] {
        let shards: Vec<Shard> = (0..parts).map(|p| Shard::new(p, parts, keys, ds)).collect();
        assert_eq!(shards.iter().map(Shard::len).sum::<usize>(), keys as usize);
        assert!(shards.iter().all(|s| !s.is_empty()));
        for r in 0..keys {
            assert!(partition_of(&key_bytes(r, ds), ds, parts) < parts);
        }
    }
}

/// One op per entry: (is_set, key, issue, duration, lin point in (0,1), acked).
fn linearizable(spec: &[(bool, u64, u64, u64, f64, bool)]) -> Vec<Op> {
    let mut ops: Vec<Op> = Vec::new();
    let mut lin: Vec<(f64, usize)> = Vec::new();
    for (i, &(is_set, key, issue, dur, frac, acked)) in spec.iter().enumerate() {
        let issue = issue * 10;
        let done = issue + dur * 10 + 10;
        lin.push((issue as f64 + frac * (done - issue) as f64, i));
        ops.push(if is_set {
            set(key, i as u64 + 1, issue, acked.then_some(done))
        } else {
            get(key, 0, issue, done)
        });
    }
    lin.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut reg = std::collections::HashMap::new();
    for (_, i) in lin {
        let (is_set, key, .., acked) = spec[i];
        if is_set {
            // an unacknowledged write takes effect only sometimes
            if acked || i % 2 == 0 {
                reg.insert(key, ops[i].value);
            }
        } else {
            ops[i].value = *reg.get(&key).unwrap_or(&initial_value(key));
        }
    }
    ops
}

proptest! {
    #[test]
    fn linearizable_histories_pass(
        spec in prop::collection::vec(
            (any::<bool>(), 0u64..3, 0u64..50, 0u64..20, 0.01f64..0.99, prop::bool::weighted(0.9)),
            1..60,
        )
    ) {
        let ops = linearizable(&spec);
        prop_assert!(check_history(&ops).is_empty(), "{:?}", check_history(&ops));
    }

    #[test]
    fn foreign_values_are_always_caught(
        spec in prop::collection::vec(
            (any::<bool>(), 0u64..3, 0u64..50, 0u64..20, 0.01f64..0.99, any::<bool>()),
            1..40,
        ),
        pick in any::<prop::sample::Index>(),
    ) {
        let mut ops = linearizable(&spec);
        let gets: Vec<usize> = (0..ops.len()).filter(|&i| ops[i].kind == OpKind::Get).collect();
        prop_assume!(!gets.is_empty());
        let g = gets[pick.index(gets.len())];
        ops[g].value = 1_000_000;
        prop_assert!(check_history(&ops).iter().any(|v| v.op == g && v.kind == ViolationKind::UnknownValue));
    }
}
