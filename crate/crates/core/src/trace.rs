//! Per-cycle snapshots of the array and their text rendering.
//!
//! One line per cycle:
//!
//! ```text
//! cycle 7 COMPUTE#4 pe[r1 r0|r2 r1] tagq[5 . 0 .] out r0:5
//! ```
//!
//! `pe` lists, row by row, which input row's value each processing element
//! holds (`.` when empty). `tagq` is the output-tag queue, oldest entry
//! first. `out` names the row leaving the array this cycle with its tag.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::command::CommandKind;
use crate::tag::Tag;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: u64,
    /// Index of the executing command.
    pub command: usize,
    pub kind: Option<CommandKind>,
    pub occupancy: Vec<Vec<Option<usize>>>,
    pub tag_queue: Vec<Option<Tag>>,
    pub emitted: Option<(usize, Tag)>,
}

impl CycleRecord {
    pub fn render(&self) -> String {
        let mut line = format!("cycle {} ", self.cycle);
        match self.kind {
            Some(kind) => write!(line, "{kind}#{}", self.command),
            None => write!(line, "IDLE#{}", self.command),
        }
        .expect("write to String");
        line.push_str(" pe[");
        let rows: Vec<String> = self
            .occupancy
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| c.map_or_else(|| ".".to_string(), |s| format!("r{s}")))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        line.push_str(&rows.join("|"));
        line.push_str("] tagq[");
        let q: Vec<String> = self
            .tag_queue
            .iter()
            .map(|t| t.map_or_else(|| ".".to_string(), |t| t.to_string()))
            .collect();
        line.push_str(&q.join(" "));
        line.push(']');
        if let Some((row, tag)) = self.emitted {
            write!(line, " out r{row}:{tag}").expect("write to String");
        }
        line
    }
}

/// Render records as newline-terminated lines.
pub fn render(records: &[CycleRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.render());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_one_line() {
        let rec = CycleRecord {
            cycle: 7,
            command: 4,
            kind: Some(CommandKind::Compute),
            occupancy: vec![vec![Some(1), Some(0)], vec![None, Some(1)]],
            tag_queue: vec![Some(Tag::new(5)), None, Some(Tag::PUBLIC), None],
            emitted: Some((0, Tag::new(5))),
        };
        assert_eq!(rec.render(), "cycle 7 COMPUTE#4 pe[r1 r0|. r1] tagq[5 . 0 .] out r0:5");
    }
}
