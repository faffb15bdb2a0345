//! Reference results computed without the simulator.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::tag::{MixingFault, Tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Error)]
#[error("dimension mismatch: {what} is {got}, expected {want}")]
pub struct DimensionMismatch {
    pub what: &'static str,
    pub got: usize,
    pub want: usize,
}

/// `A * B + D` with wrapping 32-bit arithmetic. `a` is `K x N`, `b` is
/// `N x M`, `d` (if given) is `K x M`.
pub fn oracle_matmul(
    a: &[Vec<i32>],
    b: &[Vec<i32>],
    d: Option<&[Vec<i32>]>,
) -> Result<Vec<Vec<i32>>, DimensionMismatch> {
    let k = a.len();
    let n = b.len();
    let m = b.first().map_or(0, Vec::len);
    for row in a {
        if row.len() != n {
            return Err(DimensionMismatch {
                what: "A row length",
                got: row.len(),
                want: n,
            });
        }
    }
    for row in b {
        if row.len() != m {
            return Err(DimensionMismatch {
                what: "B row length",
                got: row.len(),
                want: m,
            });
        }
    }
    if let Some(d) = d {
        if d.len() != k {
            return Err(DimensionMismatch {
                what: "D rows",
                got: d.len(),
                want: k,
            });
        }
        if let Some(bad) = d.iter().find(|r| r.len() != m) {
            return Err(DimensionMismatch {
                what: "D row length",
                got: bad.len(),
                want: m,
            });
        }
    }
    let mut c = vec![vec![0i32; m]; k];
    for i in 0..k {
        for j in 0..m {
            let mut acc = d.map_or(0, |d| d[i][j]);
            for x in 0..n {
                acc = acc.wrapping_add(a[i][x].wrapping_mul(b[x][j]));
            }
            c[i][j] = acc;
        }
    }
    Ok(c)
}

/// Tag of each output row: the single client domain among that row's `A`
/// tag, its `D` tag and every `B` tag, or public if there is none. Two or
/// more distinct domains are a fault.
pub fn oracle_output_tags(a_tags: &[Tag], d_tags: &[Tag], b_tags: &[Tag]) -> Result<Vec<Tag>, MixingFault> {
    a_tags
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let d = d_tags.get(i).copied().unwrap_or(Tag::PUBLIC);
            let domains: BTreeSet<u8> = std::iter::once(a)
                .chain(std::iter::once(d))
                .chain(b_tags.iter().copied())
                .map(Tag::value)
                .filter(|&v| v != 0)
                .collect();
            let mut it = domains.into_iter();
            match (it.next(), it.next()) {
                (None, _) => Ok(Tag::PUBLIC),
                (Some(t), None) => Ok(Tag::new(t)),
                (Some(l), Some(r)) => Err(MixingFault {
                    left: Tag::new(l),
                    right: Tag::new(r),
                }),
            }
        })
        .collect()
}
