use dndarray::{run, try_run, Communicator, LoopbackConfig, TransportError};
use proptest::prelude::*;

fn world(p: usize) -> LoopbackConfig {
    LoopbackConfig::new(p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn double_alltoall_is_identity(p in 1usize..6, lens in prop::collection::vec(0usize..5, 36)) {
        let out = run(world(p), |c: Communicator| {
            let me = c.rank();
            let parts: Vec<Vec<u64>> = (0..p)
                .map(|dst| (0..lens[me * 6 + dst]).map(|i| (me * 1000 + dst * 10 + i) as u64).collect())
                .collect();
            let there = c.alltoall_varying(parts.clone()).unwrap();
            let back = c.alltoall_varying(there).unwrap();
            back == parts
        });
        prop_assert!(out.into_iter().all(|ok| ok));
    }

    #[test]
    fn allreduce_is_identical_everywhere(p in 1usize..7, xs in prop::collection::vec(-1e6f64..1e6, 7)) {
        let out = run(world(p), |c: Communicator| {
            c.allreduce_sum(xs[c.rank()] * 1.000_000_1).unwrap()
        });
        prop_assert!(out.iter().all(|v| v.to_bits() == out[0].to_bits()));
    }

    #[test]
    fn allgather_orders_by_rank(p in 1usize..7) {
        let out = run(world(p), |c: Communicator| {
            c.allgather_varying(vec![c.rank() as u64; c.rank()]).unwrap()
        });
        for parts in out {
            for (r, part) in parts.iter().enumerate() {
                prop_assert_eq!(part, &vec![r as u64; r]);
            }
        }
    }
}

#[test]
fn ring_exchange_reaches_every_rank() {
    let p = 5;
    let out = run(world(p), |c: Communicator| {
        let mut held = c.rank() as u64;
        let mut seen = vec![held];
        for _ in 1..p {
            held = c
                .sendrecv((c.rank() + 1) % p, held, (c.rank() + p - 1) % p)
                .unwrap();
            seen.push(held);
        }
        seen.sort_unstable();
        seen
    });
    for seen in out {
        assert_eq!(seen, (0..p as u64).collect::<Vec<_>>());
    }
}

#[test]
fn unmatched_receive_reports_both_ranks() {
    let cfg = LoopbackConfig::new(2).with_timeout(std::time::Duration::from_millis(100));
    let err = try_run(cfg, |c: Communicator| -> Result<(), TransportError> {
        if c.rank() == 1 {
            c.recv::<f64>(0)?;
        }
        Ok(())
    })
    .unwrap_err();
    match err {
        TransportError::RecvTimeout { rank, src } => assert_eq!((rank, src), (1, 0)),
        other => panic!("unexpected {other:?}"),
    }
}
