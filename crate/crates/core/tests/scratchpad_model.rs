//! The pipelined bank against an atomic read-check-write model.

use proptest::prelude::*;
use rowtag::scratchpad::{ScratchpadBank, SpadRequest, SpadResponse, WriteRequest};
use rowtag::tag::join;
use rowtag::{ElemWidth, Tag, TaggedRow};

const DEPTH: usize = 4;
const WIDTH: usize = 3;

#[derive(Clone, Debug)]
enum Req {
    Idle,
    Read(usize),
    Write(WriteRequest),
}

fn write_strategy(accumulator: bool) -> impl Strategy<Value = WriteRequest> {
    (
        0..DEPTH,
        prop::collection::vec(-200i32..200, WIDTH),
        prop::collection::vec(any::<bool>(), WIDTH),
        0u8..3,
        any::<bool>(),
    )
        .prop_map(move |(row, data, mask, tag, acc)| WriteRequest {
            row,
            data,
            mask,
            tag: Tag::new(tag),
            accumulate: accumulator && acc,
        })
}

fn schedule(accumulator: bool) -> impl Strategy<Value = Vec<Req>> {
    let req = prop_oneof![
        1 => Just(Req::Idle),
        2 => (0..DEPTH).prop_map(Req::Read),
        3 => write_strategy(accumulator).prop_map(Req::Write),
    ];
    prop::collection::vec(req, 0..40)
}

fn initial_rows() -> impl Strategy<Value = Vec<(Vec<i32>, u8)>> {
    prop::collection::vec((prop::collection::vec(-100i32..100, WIDTH), 0u8..3), DEPTH)
}

fn bank(accumulator: bool, init: &[(Vec<i32>, u8)]) -> ScratchpadBank {
    let mut b = if accumulator {
        ScratchpadBank::accumulator(DEPTH, WIDTH)
    } else {
        ScratchpadBank::new(DEPTH, WIDTH, ElemWidth::I8)
    };
    for (i, (data, tag)) in init.iter().enumerate() {
        let elems = data.iter().map(|&v| b.elem_width().truncate(v)).collect();
        b.load_row(i, TaggedRow::new(elems, Tag::new(*tag)));
    }
    b
}

#[derive(Debug, PartialEq, Eq)]
struct Outcome {
    reads: Vec<TaggedRow>,
    faults: usize,
    rows: Vec<TaggedRow>,
}

/// Issue one request per cycle and drain the pipeline.
fn run_pipelined(mut b: ScratchpadBank, reqs: &[Req]) -> (Outcome, Vec<bool>) {
    let mut reads = Vec::new();
    let mut faults = 0;
    let mut busy = Vec::new();
    let mut record = |r: SpadResponse, busy: &mut Vec<bool>| {
        busy.push(r != SpadResponse::None);
        match r {
            SpadResponse::ReadData(row) => reads.push(row),
            SpadResponse::Fault { .. } => faults += 1,
            _ => {}
        }
    };
    for r in reqs {
        match r {
            Req::Idle => {}
            Req::Read(row) => assert!(b.request(SpadRequest::Read { row: *row }).unwrap()),
            Req::Write(w) => assert!(b.request(SpadRequest::Write(w.clone())).unwrap()),
        }
        let resp = b.step();
        record(resp, &mut busy);
    }
    while !b.is_idle() {
        let resp = b.step();
        record(resp, &mut busy);
    }
    (
        Outcome {
            reads,
            faults,
            rows: b.rows().to_vec(),
        },
        busy,
    )
}

/// Every request completes before the next one starts.
fn run_reference(b: &ScratchpadBank, reqs: &[Req]) -> Outcome {
    let elem = b.elem_width();
    let mut rows = b.rows().to_vec();
    let mut reads = Vec::new();
    let mut faults = 0;
    for r in reqs {
        match r {
            Req::Idle => {}
            Req::Read(row) => reads.push(rows[*row].clone()),
            Req::Write(w) => {
                let target = &mut rows[w.row];
                let full = w.mask.iter().all(|&m| m) && !w.accumulate;
                if full {
                    *target = TaggedRow::new(w.data.iter().map(|&v| elem.truncate(v)).collect(), w.tag);
                    continue;
                }
                match join(target.tag, w.tag) {
                    Err(_) => faults += 1,
                    Ok(tag) => {
                        for j in 0..WIDTH {
                            if w.mask[j] {
                                let v = if w.accumulate {
                                    target.elems[j].wrapping_add(w.data[j])
                                } else {
                                    w.data[j]
                                };
                                target.elems[j] = elem.truncate(v);
                            }
                        }
                        target.tag = tag;
                    }
                }
            }
        }
    }
    Outcome { reads, faults, rows }
}

proptest! {
    #[test]
    fn pipeline_matches_atomic_model(acc in any::<bool>(), init in initial_rows(), reqs in schedule(true)) {
        let reqs: Vec<Req> = reqs
            .into_iter()
            .map(|r| match r {
                Req::Write(mut w) if !acc => { w.accumulate = false; Req::Write(w) }
                other => other,
            })
            .collect();
        let b = bank(acc, &init);
        let reference = run_reference(&b, &reqs);
        let (pipelined, _) = run_pipelined(b, &reqs);
        prop_assert_eq!(pipelined, reference);
    }

    #[test]
    fn response_timing_ignores_data_and_tags(
        init1 in initial_rows(),
        init2 in initial_rows(),
        reqs in schedule(false),
        seed in any::<u64>(),
    ) {
        // Same schedule, different payloads and tags.
        let mut other = reqs.clone();
        let mut s = seed;
        for r in &mut other {
            if let Req::Write(w) = r {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                w.tag = Tag::new((s >> 60) as u8 % 3);
                for v in &mut w.data {
                    *v = v.wrapping_add((s >> 33) as i32 % 50);
                }
            }
        }
        let (_, t1) = run_pipelined(bank(false, &init1), &reqs);
        let (_, t2) = run_pipelined(bank(false, &init2), &other);
        prop_assert_eq!(t1, t2);
    }
}

#[test]
fn full_rate_writes_finish_in_n_plus_one_cycles() {
    for n in [1usize, 2, 7, 32] {
        let mut b = ScratchpadBank::new(64, WIDTH, ElemWidth::I8);
        let mut cycles = 0;
        let mut committed = 0;
        for i in 0..n {
            let w = WriteRequest::masked(
                i % 64,
                TaggedRow::new(vec![1; WIDTH], Tag::new(1)),
                vec![true, false, true],
            );
            assert!(b.request(SpadRequest::Write(w)).unwrap());
            if let SpadResponse::Committed { .. } = b.step() {
                committed += 1;
            }
            cycles += 1;
        }
        while !b.is_idle() {
            if let SpadResponse::Committed { .. } = b.step() {
                committed += 1;
            }
            cycles += 1;
        }
        assert_eq!((cycles, committed), (n + 1, n));
    }
}
