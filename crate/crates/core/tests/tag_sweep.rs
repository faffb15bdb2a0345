//! Every assignment of tags {0,1,2} to the six rows of a 2x2 A, B and D,
//! checked against the reference tag policy on the bare array and through
//! the whole controller.

use rowtag::harness::oracle::oracle_output_tags;
use rowtag::program::{matmul_workload, Matrix};
use rowtag::{controller, Activation, Dataflow, FaultKind, Mesh, MeshConfig, Tag, TaggedRow};

fn assignments() -> impl Iterator<Item = [Tag; 6]> {
    (0..729u32).map(|mut n| {
        let mut t = [Tag::PUBLIC; 6];
        for slot in &mut t {
            *slot = Tag::new((n % 3) as u8);
            n /= 3;
        }
        t
    })
}

/// Tags of the emitted rows, or `None` if the array faulted.
fn mesh_tags(dataflow: Dataflow, a: [Tag; 2], b: [Tag; 2], d: [Tag; 2]) -> Option<Vec<Tag>> {
    let row = |t: Tag| TaggedRow::new(vec![1, 2], t);
    let mut mesh = Mesh::new(MeshConfig::square(2).with_dataflow(dataflow));
    let mut out = Vec::new();
    match dataflow {
        Dataflow::WeightStationary => {
            mesh.preload(&[row(b[0]), row(b[1])]).ok()?;
            for i in 0..2 {
                mesh.feed_row(&row(a[i]), &row(d[i])).ok()?;
                out.extend(mesh.step());
            }
        }
        Dataflow::OutputStationary => {
            mesh.preload(&[row(d[0]), row(d[1])]).ok()?;
            mesh.begin_stream(&a, 2).ok()?;
            for &bt in &b {
                mesh.feed_stream(&[1, 1], &row(bt)).ok()?;
                out.extend(mesh.step());
            }
        }
    }
    while !mesh.is_idle() {
        out.extend(mesh.step());
    }
    if mesh.fault().is_some() {
        assert!(out.is_empty(), "rows escaped a faulted array");
        return None;
    }
    Some(out.into_iter().map(|e| e.row.tag).collect())
}

#[test]
fn bare_array_matches_policy() {
    let mut faults = 0;
    for t in assignments() {
        let (a, b, d) = ([t[0], t[1]], [t[2], t[3]], [t[4], t[5]]);
        let want = oracle_output_tags(&a, &d, &b).ok();
        faults += usize::from(want.is_none());
        for df in [Dataflow::WeightStationary, Dataflow::OutputStationary] {
            assert_eq!(mesh_tags(df, a, b, d), want, "{df:?} a={a:?} b={b:?} d={d:?}");
        }
    }
    // Cases with a fault: some row sees both domain 1 and domain 2.
    assert!(faults > 0 && faults < 729);
}

#[test]
fn controller_matches_policy() {
    for t in assignments() {
        let (a_t, b_t, d_t) = (vec![t[0], t[1]], vec![t[2], t[3]], vec![t[4], t[5]]);
        let want = oracle_output_tags(&a_t, &d_t, &b_t);
        let a = Matrix::from_rows(&[vec![1, 2], vec![3, 4]]).with_row_tags(a_t);
        let b = Matrix::from_rows(&[vec![5, 6], vec![7, 8]]).with_row_tags(b_t);
        let d = Matrix::from_rows(&[vec![1, 1], vec![1, 1]]).with_row_tags(d_t);
        for df in [Dataflow::WeightStationary, Dataflow::OutputStationary] {
            let (w, lc) = matmul_workload(2, df, Activation::None, &a, &b, Some(&d), None);
            let mut mem = w.build_memory().unwrap();
            let (obs, _) = controller::simulate(w.config, &w.commands, &mut mem);
            match &want {
                Ok(tags) => {
                    assert_eq!(obs.fault, None, "{df:?} {t:?}");
                    let c = lc.read(&mem);
                    assert_eq!(&c.row_tags, tags);
                    assert_eq!(c.to_rows(), vec![vec![20, 23], vec![44, 51]]);
                }
                Err(_) => {
                    let f = obs.fault.expect("mixing must fault");
                    assert_eq!(f.kind, FaultKind::Mixing, "{df:?} {t:?}");
                    assert!(lc.read(&mem).data.iter().all(|&v| v == 0), "output written after fault");
                }
            }
        }
    }
}
