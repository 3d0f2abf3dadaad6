//! Unique, immutable position identifiers drawn from a dense total order.
//!
//! A [`Position`] is a non-empty path of `(digit, author)` pairs, ordered
//! lexicographically with pairs compared by `(digit, author)`; a strict
//! prefix sorts before its extensions. Digits are unbounded non-negative
//! integers, so long insertion runs never overflow.
//!
//! [`between`] mints a fresh position strictly inside two bounds. Every
//! minted path ends with a `(counter + 1, author)` pair, where `counter`
//! comes from a per-replica monotone counter. That final pair is what makes
//! positions globally unique: two calls with distinct `(author, counter)`
//! can never return the same path, even when an element is deleted and a
//! new one is minted into the exact same gap.
//!
//! Generated paths therefore never end in a zero digit, which keeps the
//! order dense from the left: below any generated position there is always
//! room for another. Hand-built paths ending in a zero-digit pair can
//! exhaust that room, which `between` reports as an error rather than
//! looping.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::causal::ReplicaId;

/// One step of a position path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pair {
    pub digit: BigUint,
    pub author: ReplicaId,
}

impl Pair {
    fn new(digit: impl Into<BigUint>, author: ReplicaId) -> Self {
        Pair {
            digit: digit.into(),
            author,
        }
    }
}

/// A list position: non-empty path of pairs, lexicographically ordered.
///
/// Serialized in canonical text form, `digit.author` pairs joined by `/`,
/// e.g. `1.A/1.B`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Position {
    path: Vec<Pair>,
}

impl Position {
    fn from_path(path: Vec<Pair>) -> Self {
        debug_assert!(!path.is_empty());
        Position { path }
    }

    pub fn path(&self) -> &[Pair] {
        &self.path
    }

    /// Position for the first element of an otherwise empty list:
    /// `between(NegInfinity, PosInfinity, author, counter)`.
    pub fn first(author: ReplicaId, counter: u64) -> Self {
        Position::from_path(vec![fresh_pair(author, counter)])
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, pair) in self.path.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            write!(f, "{}.{}", pair.digit, pair.author)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid position {input:?}: {reason}")]
pub struct ParsePositionError {
    pub input: String,
    pub reason: String,
}

impl FromStr for Position {
    type Err = ParsePositionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| ParsePositionError {
            input: s.to_string(),
            reason: reason.to_string(),
        };
        if s.is_empty() {
            return Err(err("empty path"));
        }
        let mut path = Vec::new();
        for part in s.split('/') {
            let (digit, author) = part
                .split_once('.')
                .ok_or_else(|| err("pair must be digit.author"))?;
            let digit = BigUint::from_str(digit).map_err(|_| err("digit must be an integer"))?;
            let author =
                ReplicaId::new(author).map_err(|_| err("author must match [A-Za-z0-9_-]+"))?;
            path.push(Pair { digit, author });
        }
        Ok(Position::from_path(path))
    }
}

impl TryFrom<String> for Position {
    type Error = ParsePositionError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Position> for String {
    fn from(p: Position) -> String {
        p.to_string()
    }
}

/// Open bound for insertion at the edges of a list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PositionBound {
    NegInfinity,
    At(Position),
    PosInfinity,
}

impl PositionBound {
    fn rank(&self) -> u8 {
        match self {
            PositionBound::NegInfinity => 0,
            PositionBound::At(_) => 1,
            PositionBound::PosInfinity => 2,
        }
    }
}

impl PartialOrd for PositionBound {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PositionBound {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        match (self, other) {
            (PositionBound::At(a), PositionBound::At(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PositionError {
    #[error("between() requires left < right, got left={left:?} right={right:?}")]
    BoundsOutOfOrder {
        left: PositionBound,
        right: PositionBound,
    },
    #[error("no position exists below {right}: path ends in a zero digit")]
    ExhaustedBelow { right: Position },
}

/// Explicit three-way comparison; `Position` also implements `Ord`.
pub fn compare(a: &Position, b: &Position) -> std::cmp::Ordering {
    a.cmp(b)
}

fn fresh_pair(author: ReplicaId, counter: u64) -> Pair {
    Pair::new(counter + 1, author)
}

/// Path strictly above `left`, unbounded on the right: bump `left`'s head
/// digit, then the fresh pair.
fn above(left: &[Pair], fresh: Pair) -> Vec<Pair> {
    vec![
        Pair::new(&left[0].digit + 1u32, fresh.author.clone()),
        fresh,
    ]
}

/// Path strictly below `right`, unbounded on the left. Descends past
/// zero-digit pairs; generated paths never end in one.
fn below(right: &[Pair], fresh: Pair) -> Result<Vec<Pair>, PositionError> {
    let head = &right[0];
    if !head.digit.is_zero() {
        Ok(vec![
            Pair::new(&head.digit - 1u32, fresh.author.clone()),
            fresh,
        ])
    } else if right.len() > 1 {
        let mut path = vec![head.clone()];
        path.extend(below(&right[1..], fresh)?);
        Ok(path)
    } else {
        Err(PositionError::ExhaustedBelow {
            right: Position::from_path(right.to_vec()),
        })
    }
}

/// Mints a position strictly between `left` and `right`.
///
/// The new-digit rule: at the first level where the bounds diverge, take
/// the smallest integer strictly between their digits if one exists;
/// otherwise keep the left path through that level and continue one level
/// deeper. The minted path always ends with the `(counter + 1, author)`
/// pair, so distinct `(author, counter)` never collide.
pub fn between(
    left: &PositionBound,
    right: &PositionBound,
    author: ReplicaId,
    counter: u64,
) -> Result<Position, PositionError> {
    use PositionBound::*;
    if left >= right {
        return Err(PositionError::BoundsOutOfOrder {
            left: left.clone(),
            right: right.clone(),
        });
    }
    let fresh = fresh_pair(author, counter);
    let path = match (left, right) {
        (NegInfinity, PosInfinity) => vec![fresh],
        (At(l), PosInfinity) => above(l.path(), fresh),
        (NegInfinity, At(r)) => below(r.path(), fresh)?,
        (At(l), At(r)) => between_paths(l.path(), r.path(), fresh)?,
        _ => unreachable!("left < right checked above"),
    };
    let result = Position::from_path(path);
    debug_assert!(*left < At(result.clone()) && At(result.clone()) < *right);
    Ok(result)
}

fn between_paths(l: &[Pair], r: &[Pair], fresh: Pair) -> Result<Vec<Pair>, PositionError> {
    let mut i = 0;
    loop {
        match (l.get(i), r.get(i)) {
            (Some(lp), Some(rp)) if lp == rp => i += 1,
            (Some(lp), Some(rp)) => {
                debug_assert!(lp < rp);
                let mut path = l[..i].to_vec();
                if &lp.digit + 1u32 < rp.digit {
                    // Smallest integer strictly between the two digits.
                    path.push(Pair::new(&lp.digit + 1u32, fresh.author.clone()));
                    path.push(fresh);
                } else {
                    // No room at this level: keep left's pair and go deeper,
                    // rising above whatever remains of the left path.
                    path.push(lp.clone());
                    match l.get(i + 1) {
                        None => path.push(fresh),
                        Some(_) => path.extend(above(&l[i + 1..], fresh)),
                    }
                }
                return Ok(path);
            }
            (None, Some(_)) => {
                // left is a strict prefix of right: extend it with a path
                // below right's remainder.
                let mut path = l.to_vec();
                path.extend(below(&r[i..], fresh)?);
                return Ok(path);
            }
            (_, None) => unreachable!("right ≤ left was rejected by the bounds check"),
        }
    }
}
