//! Security-domain tags and the join rule used by every datapath.
//!
//! A tag of zero marks public data. Every nonzero value names one client
//! domain. Two values may be combined only if at most one distinct nonzero
//! domain is involved; anything else is a mixing fault.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 8-bit security-domain label attached to a memory word or a matrix row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tag(u8);

impl Tag {
    pub const PUBLIC: Tag = Tag(0);

    pub const fn new(value: u8) -> Self {
        Tag(value)
    }

    pub const fn value(self) -> u8 {
        self.0
    }

    pub const fn is_public(self) -> bool {
        self.0 == 0
    }

    pub const fn is_blinded(self) -> bool {
        self.0 != 0
    }
}

impl From<u8> for Tag {
    fn from(value: u8) -> Self {
        Tag(value)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Two distinct client domains met in one operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Error)]
#[error("tag mixing: domains {left} and {right} cannot be combined")]
pub struct MixingFault {
    pub left: Tag,
    pub right: Tag,
}

/// Combine two tags. Public is the identity; equal domains absorb.
pub fn join(a: Tag, b: Tag) -> Result<Tag, MixingFault> {
    match (a.is_public(), b.is_public()) {
        (true, _) => Ok(b),
        (_, true) => Ok(a),
        _ if a == b => Ok(a),
        _ => Err(MixingFault { left: a, right: b }),
    }
}

/// Left fold of [`join`]; the empty sequence is public.
pub fn fold<I>(tags: I) -> Result<Tag, MixingFault>
where
    I: IntoIterator<Item = Tag>,
{
    tags.into_iter().try_fold(Tag::PUBLIC, join)
}

/// Which join rule the hardware model uses.
///
/// `StubPublic` is a deliberately broken rule (every join yields public)
/// that exists only so the non-interference checker can demonstrate it
/// catches a real propagation bug.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum TagPolicy {
    #[default]
    Enforce,
    StubPublic,
}

impl TagPolicy {
    pub fn join(self, a: Tag, b: Tag) -> Result<Tag, MixingFault> {
        match self {
            TagPolicy::Enforce => join(a, b),
            TagPolicy::StubPublic => Ok(Tag::PUBLIC),
        }
    }

    pub fn fold<I>(self, tags: I) -> Result<Tag, MixingFault>
    where
        I: IntoIterator<Item = Tag>,
    {
        tags.into_iter().try_fold(Tag::PUBLIC, |acc, t| self.join(acc, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: u8) -> Tag {
        Tag::new(v)
    }

    #[test]
    fn join_examples() {
        assert_eq!(join(t(0), t(0)), Ok(t(0)));
        assert_eq!(join(t(0), t(5)), Ok(t(5)));
        assert_eq!(join(t(3), t(3)), Ok(t(3)));
        assert_eq!(
            join(t(3), t(7)),
            Err(MixingFault {
                left: t(3),
                right: t(7)
            })
        );
    }

    #[test]
    fn fold_examples() {
        assert_eq!(fold([]), Ok(t(0)));
        assert_eq!(fold([t(2), t(0), t(2)]), Ok(t(2)));
        assert!(fold([t(2), t(9), t(0)]).is_err());
    }

    #[test]
    fn fold_reports_first_conflicting_pair() {
        let err = fold([t(0), t(4), t(4), t(6), t(9)]).unwrap_err();
        assert_eq!((err.left, err.right), (t(4), t(6)));
    }

    #[test]
    fn join_is_commutative_exhaustively() {
        for a in 0..=u8::MAX {
            for b in 0..=u8::MAX {
                assert_eq!(join(t(a), t(b)).is_ok(), join(t(b), t(a)).is_ok());
                if let Ok(x) = join(t(a), t(b)) {
                    assert_eq!(Ok(x), join(t(b), t(a)));
                }
            }
        }
    }

    #[test]
    fn public_is_identity() {
        for a in 0..=u8::MAX {
            assert_eq!(join(t(a), Tag::PUBLIC), Ok(t(a)));
            assert_eq!(join(Tag::PUBLIC, t(a)), Ok(t(a)));
        }
    }

    #[test]
    fn stub_policy_never_faults() {
        let p = TagPolicy::StubPublic;
        assert_eq!(p.join(t(3), t(7)), Ok(Tag::PUBLIC));
        assert_eq!(p.fold([t(5), t(5)]), Ok(Tag::PUBLIC));
        assert_eq!(TagPolicy::Enforce.fold([t(5), t(0)]), Ok(t(5)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn small_tags() -> impl Strategy<Value = Vec<Tag>> {
            proptest::collection::vec((0u8..4).prop_map(Tag::new), 0..12)
        }

        proptest! {
            #[test]
            fn fold_faults_iff_two_distinct_domains(tags in small_tags()) {
                let mut domains: Vec<u8> =
                    tags.iter().filter(|t| t.is_blinded()).map(|t| t.value()).collect();
                domains.sort_unstable();
                domains.dedup();
                prop_assert_eq!(fold(tags.clone()).is_err(), domains.len() >= 2);
                if domains.len() < 2 {
                    let expect = domains.first().copied().unwrap_or(0);
                    prop_assert_eq!(fold(tags).unwrap(), Tag::new(expect));
                }
            }

            #[test]
            fn fold_is_order_independent(tags in small_tags(), split in 0usize..12) {
                let split = split.min(tags.len());
                if let Ok(whole) = fold(tags.clone()) {
                    let (l, r) = tags.split_at(split);
                    let regrouped = join(fold(l.to_vec()).unwrap(), fold(r.to_vec()).unwrap());
                    prop_assert_eq!(regrouped, Ok(whole));
                    let mut rev = tags.clone();
                    rev.reverse();
                    prop_assert_eq!(fold(rev), Ok(whole));
                }
            }
        }
    }
}
