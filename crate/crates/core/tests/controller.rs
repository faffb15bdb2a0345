//! End-to-end behaviour of command sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rowtag::command::{LocalAddr, Op};
use rowtag::controller::FaultDetail;
use rowtag::memory::AccessKind;
use rowtag::program::{matmul_workload, Matrix};
use rowtag::{
    controller, AccelConfig, Activation, Command, CommandKind, Controller, Dataflow, FaultKind, Tag, TaggedMemory,
    TaggedWord,
};

fn t(v: u8) -> Tag {
    Tag::new(v)
}

fn small(
    a_tags: [u8; 2],
    b_tags: [u8; 2],
    dataflow: Dataflow,
) -> (rowtag::workload::Workload, rowtag::program::MatrixLayout) {
    let a = Matrix::from_rows(&[vec![1, 2], vec![3, 4]]).with_row_tags(a_tags.map(t).to_vec());
    let b = Matrix::from_rows(&[vec![5, 6], vec![7, 8]]).with_row_tags(b_tags.map(t).to_vec());
    let d = Matrix::from_rows(&[vec![1, 1], vec![1, 1]]);
    matmul_workload(2, dataflow, Activation::None, &a, &b, Some(&d), None)
}

#[test]
fn small_matmul_end_to_end() {
    for df in [Dataflow::WeightStationary, Dataflow::OutputStationary] {
        let (w, lc) = small([0, 0], [0, 0], df);
        let mut mem = w.build_memory().unwrap();
        let (obs, stats) = controller::run(w.config, &w.commands, &mut mem).unwrap();
        let c = lc.read(&mem);
        assert_eq!(c.to_rows(), vec![vec![20, 23], vec![44, 51]]);
        assert_eq!(c.row_tags, vec![t(0), t(0)]);
        assert_eq!(obs.total_cycles, stats.total_cycles);
        assert_eq!(stats.compute_rows, 2);
    }
}

#[test]
fn tagged_a_gives_tagged_c() {
    let (w, lc) = small([5, 5], [0, 0], Dataflow::WeightStationary);
    let mut mem = w.build_memory().unwrap();
    let (obs, _) = controller::run(w.config, &w.commands, &mut mem).unwrap();
    assert_eq!(lc.read(&mem).row_tags, vec![t(5), t(5)]);
    // Tagged results are not part of what an outside observer sees.
    let c_addr = lc.addr(0, 0);
    assert!(!obs.public_words.contains_key(&c_addr));
}

#[test]
fn mixed_weights_fault_at_preload_and_nothing_is_stored() {
    let (w, lc) = small([0, 0], [4, 6], Dataflow::WeightStationary);
    let mut mem = w.build_memory().unwrap();
    let before = mem.clone();
    let (obs, _) = controller::simulate(w.config, &w.commands, &mut mem);
    let f = obs.fault.expect("fault");
    assert_eq!(f.kind, FaultKind::Mixing);
    assert_eq!(w.commands[f.command].kind, CommandKind::Preload);
    assert!(mem.trace().entries().iter().all(|e| e.kind == AccessKind::Read));
    assert_eq!(mem.words(), before.words());
    assert!(lc.read(&mem).data.iter().all(|&v| v == 0));
}

#[test]
fn tagged_operands_are_refused_without_side_effects() {
    let (w, _) = small([0, 0], [0, 0], Dataflow::WeightStationary);
    let mem0 = w.build_memory().unwrap();
    for (i, cmd) in w.commands.iter().enumerate() {
        for which in 0..3 {
            let mut bad = *cmd;
            match which {
                0 => bad.inst_tag = t(3),
                1 => bad.rs1.tag = t(3),
                _ => bad.rs2.tag = t(3),
            }
            // Run the clean prefix, then offer the tagged command.
            let mut ctl = Controller::new(w.config);
            let mut mem = mem0.clone();
            assert_eq!(ctl.run(&w.commands[..i], &mut mem).fault, None);
            let (ctl_before, mem_before) = (ctl.clone(), mem.clone());
            let err = ctl.submit(bad).unwrap_err();
            assert_eq!(err.kind, FaultKind::Command);
            assert!(matches!(err.detail, FaultDetail::TaggedOperand { .. }));
            assert_eq!(ctl, ctl_before);
            assert_eq!(ctl.drain(&mut mem), Ok(()));
            assert_eq!(mem, mem_before);
        }
    }
}

#[test]
fn tagged_command_ends_the_run_before_any_access() {
    let (w, _) = small([0, 0], [0, 0], Dataflow::WeightStationary);
    let mut cmds = w.commands.clone();
    cmds[0].rs2.tag = t(1);
    let mut mem = w.build_memory().unwrap();
    let (obs, stats) = controller::simulate(w.config, &cmds, &mut mem);
    assert_eq!(obs.fault.unwrap().kind, FaultKind::Command);
    assert!(obs.access_trace.is_empty());
    assert_eq!(stats.total_cycles, 0);
}

#[test]
fn mid_stream_fault_stops_output_and_writes() {
    // B in domain 1; rows 0..3 of A public, row 4 in domain 2.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = Matrix::random(&mut rng, 8, 4, -10, 10);
    let b = Matrix::random(&mut rng, 4, 4, -10, 10).with_tag(t(1));
    let mut tags = vec![t(0); 8];
    tags[4] = t(2);
    let bad_a = a.clone().with_row_tags(tags);
    for df in [Dataflow::WeightStationary, Dataflow::OutputStationary] {
        let (clean, _) = matmul_workload(4, df, Activation::None, &a, &b, None, None);
        let (faulty, _) = matmul_workload(4, df, Activation::None, &bad_a, &b, None, None);
        assert_eq!(clean.commands, faulty.commands);

        let mut mem_clean = clean.build_memory().unwrap();
        let mut ctl = Controller::new(clean.config);
        ctl.enable_recording();
        assert_eq!(ctl.run(&clean.commands, &mut mem_clean).fault, None);

        let mut mem = faulty.build_memory().unwrap();
        let mut ctl = Controller::new(faulty.config);
        ctl.enable_recording();
        let f = ctl.run(&faulty.commands, &mut mem).fault.expect("fault");
        assert_eq!(f.kind, FaultKind::Mixing);
        let records = ctl.take_records();
        assert!(
            records.iter().all(|r| r.cycle < f.cycle || r.emitted.is_none()),
            "{df:?}"
        );
        assert!(records.last().is_none_or(|r| r.cycle < f.cycle));
        let entries = mem.trace().entries();
        assert!(entries.iter().all(|e| e.cycle < f.cycle));
        // What happened before the fault is exactly what the clean run did.
        assert_eq!(entries, &mem_clean.trace().entries()[..entries.len()]);
    }
}

#[test]
fn runs_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = Matrix::random(&mut rng, 9, 7, -128, 127).with_tag(t(2));
    let b = Matrix::random(&mut rng, 7, 5, -128, 127);
    for df in [Dataflow::WeightStationary, Dataflow::OutputStationary] {
        let (w, _) = matmul_workload(4, df, Activation::Relu, &a, &b, None, None);
        let go = || {
            let mut mem = w.build_memory().unwrap();
            let r = controller::simulate(w.config, &w.commands, &mut mem);
            (r, mem)
        };
        assert_eq!(go(), go());
    }
}

#[test]
fn cycle_count_ignores_data() {
    for (dim, df) in [
        (2, Dataflow::WeightStationary),
        (4, Dataflow::OutputStationary),
        (8, Dataflow::WeightStationary),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(dim as u64);
        let a = Matrix::random(&mut rng, 13, 11, -128, 127).with_tag(t(1));
        let b = Matrix::random(&mut rng, 11, 9, -128, 127);
        let (w, _) = matmul_workload(dim, df, Activation::Relu, &a, &b, None, None);
        let base = w.build_memory().unwrap();
        let mut cycles = Vec::new();
        for _ in 0..20 {
            let mut mem = base.clone();
            for addr in 0..mem.size() {
                let word = mem.get(addr).unwrap();
                mem.poke(addr, TaggedWord::new(rng.random(), word.tag)).unwrap();
            }
            let (obs, _) = controller::simulate(w.config, &w.commands, &mut mem);
            assert_eq!(obs.fault, None);
            cycles.push(obs.total_cycles);
        }
        assert!(cycles.windows(2).all(|p| p[0] == p[1]), "{cycles:?}");
    }
}

#[test]
fn bad_commands_are_invalid_or_out_of_range() {
    let config = AccelConfig::new(2).with_rows(4, 4);
    let mut mem = TaggedMemory::new(4);
    let oob = Op::Mvin {
        mem_addr: 3,
        local: LocalAddr::spad(0),
        rows: 2,
        cols: 0,
    }
    .encode();
    let cfg = Op::Config {
        dataflow: Dataflow::WeightStationary,
        activation: Activation::None,
        load_stride: 1,
        store_stride: 1,
        k: 1,
        n: 1,
        m: 1,
    }
    .encode();
    let (obs, _) = controller::simulate(config, &[cfg, oob], &mut mem);
    assert_eq!(obs.fault.unwrap().kind, FaultKind::OutOfRange);

    let reserved = Command::new(CommandKind::Preload, 0, 1);
    let (obs, _) = controller::simulate(config, &[reserved], &mut mem);
    assert_eq!(obs.fault.unwrap().kind, FaultKind::Invalid);

    let no_preload = Op::Compute {
        a: LocalAddr::spad(0),
        streamed: LocalAddr::NONE,
        dest: LocalAddr::acc(0),
    }
    .encode();
    let (obs, _) = controller::simulate(config, &[cfg, no_preload], &mut mem);
    assert_eq!(obs.fault.unwrap().kind, FaultKind::Invalid);
}

#[test]
fn accumulate_into_accumulator() {
    let config = AccelConfig::new(2).with_rows(4, 4);
    let mut mem = TaggedMemory::new(8);
    // Two 32-bit rows: [3, 4] and [10, 20].
    mem.poke(0, TaggedWord::public(3 | (4 << 32))).unwrap();
    mem.poke(1, TaggedWord::new(10 | (20 << 32), t(2))).unwrap();
    let cfg = Op::Config {
        dataflow: Dataflow::WeightStationary,
        activation: Activation::None,
        load_stride: 1,
        store_stride: 1,
        k: 1,
        n: 2,
        m: 2,
    }
    .encode();
    let mvin = |addr, local| {
        Op::Mvin {
            mem_addr: addr,
            local,
            rows: 1,
            cols: 0,
        }
        .encode()
    };
    let out = Op::Mvout {
        mem_addr: 4,
        local: LocalAddr::acc(0),
        rows: 1,
        narrow: false,
    }
    .encode();
    let cmds = [
        cfg,
        mvin(0, LocalAddr::acc(0)),
        mvin(1, LocalAddr::acc(0).accumulating()),
        out,
    ];
    let (obs, _) = controller::simulate(config, &cmds, &mut mem);
    assert_eq!(obs.fault, None);
    assert_eq!(mem.get(4), Some(TaggedWord::new(13 | (24 << 32), t(2))));
}
