//! Element CRDTs plugged into the list: last-writer-wins attribute maps,
//! rich-text characters, exact rational amounts, and 2D vectors.
//!
//! Operations shipped here are pure in the sense that generating a message
//! from one never reads local state: the message IS the operation. That is
//! what lets a for-each broadcast a mutation before knowing which elements
//! it will hit. Effectors additionally receive a [`ClockContext`], the
//! originating operation's dot and full clock, which is identical on every
//! replica for a given message.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::causal::{Dot, VectorClock};
use crate::foreach::MutationFn;

/// Exact rational number. Serialized as `"n"` or `"n/d"`, always reduced,
/// sign on the numerator, so equal values have equal bytes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Rational(BigRational);

impl Rational {
    pub fn integer(n: i64) -> Self {
        Rational(BigRational::from_integer(n.into()))
    }

    /// `num/den`; `den` must be non-zero.
    pub fn ratio(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        Rational(BigRational::new(num.into(), den.into()))
    }

    pub fn zero() -> Self {
        Rational(BigRational::zero())
    }

    pub fn one() -> Self {
        Rational(BigRational::one())
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn mul(&self, other: &Rational) -> Rational {
        Rational(&self.0 * &other.0)
    }

    pub fn add(&self, other: &Rational) -> Rational {
        Rational(&self.0 + &other.0)
    }

    pub fn neg(&self) -> Rational {
        Rational(-self.0.clone())
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.denom() == &BigInt::one() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid rational {0:?}: expected \"n\" or \"n/d\" with d > 0")]
pub struct ParseRationalError(pub String);

impl FromStr for Rational {
    type Err = ParseRationalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseRationalError(s.to_string());
        let (num, den) = match s.split_once('/') {
            None => (s, "1"),
            Some((n, d)) => (n, d),
        };
        let num = BigInt::from_str(num).map_err(|_| err())?;
        let den = BigInt::from_str(den).map_err(|_| err())?;
        if den <= BigInt::zero() {
            return Err(err());
        }
        Ok(Rational(BigRational::new(num, den)))
    }
}

impl TryFrom<String> for Rational {
    type Error = ParseRationalError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Rational> for String {
    fn from(r: Rational) -> String {
        r.to_string()
    }
}

/// 2×2 matrix of exact rationals, row-major: `[[a, b], [c, d]]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mat2(pub [[Rational; 2]; 2]);

impl Mat2 {
    pub fn identity() -> Self {
        Mat2([
            [Rational::one(), Rational::zero()],
            [Rational::zero(), Rational::one()],
        ])
    }

    /// `[[c, s], [-s, c]]`: clockwise rotation when (c, s) approximate
    /// (cos θ, sin θ).
    pub fn rotation(c: Rational, s: Rational) -> Self {
        Mat2([[c.clone(), s.clone()], [s.neg(), c]])
    }

    pub fn mul_vec(&self, x: &Rational, y: &Rational) -> (Rational, Rational) {
        (
            self.0[0][0].mul(x).add(&self.0[0][1].mul(y)),
            self.0[1][0].mul(x).add(&self.0[1][1].mul(y)),
        )
    }

    pub fn mul_mat(&self, other: &Mat2) -> Mat2 {
        let e = |r: usize, c: usize| {
            self.0[r][0]
                .mul(&other.0[0][c])
                .add(&self.0[r][1].mul(&other.0[1][c]))
        };
        Mat2([[e(0, 0), e(0, 1)], [e(1, 0), e(1, 1)]])
    }
}

/// Attribute values as they appear in rich-text formatting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Bool(bool),
    Int(i64),
    Str(String),
}

/// One attribute slot: current value plus the dot that wrote it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttrEntry {
    pub value: AttrValue,
    pub winner: Dot,
}

/// Map CRDT from attribute name to value, last writer wins per key.
/// The winner is maximal under the `(clock, sender)` total order on dots,
/// so concurrent writes resolve identically everywhere.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttrMapState {
    pub entries: BTreeMap<String, AttrEntry>,
}

impl AttrMapState {
    pub fn set(&mut self, key: &str, value: &AttrValue, dot: &Dot) {
        match self.entries.get_mut(key) {
            Some(entry) if entry.winner >= *dot => {}
            Some(entry) => {
                entry.value = value.clone();
                entry.winner = dot.clone();
            }
            None => {
                self.entries.insert(
                    key.to_string(),
                    AttrEntry {
                        value: value.clone(),
                        winner: dot.clone(),
                    },
                );
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&AttrValue> {
        self.entries.get(key).map(|e| &e.value)
    }
}

/// A rich-text character: the character itself never changes; formatting
/// lives in the attribute map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RichCharState {
    #[serde(rename = "char")]
    pub ch: char,
    pub attrs: AttrMapState,
}

/// Write-once-then-LWW register; used for ingredient names, which are set
/// at insertion and never rewritten by any shipped operation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LwwRegister {
    pub value: String,
    pub winner: Option<Dot>,
}

impl LwwRegister {
    pub fn initial(value: impl Into<String>) -> Self {
        LwwRegister {
            value: value.into(),
            winner: None,
        }
    }
}

/// Positive quantity with a unit tag; the only mutation is multiplication,
/// which commutes, so the value is the initial amount times the product of
/// all delivered factors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmountState {
    pub value: Rational,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngredientState {
    pub name: LwwRegister,
    pub amount: AmountState,
}

/// 2D vector under left-multiplication by 2×2 matrices. Matrix products
/// of the shipped rotation form commute, keeping the state convergent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vec2State {
    pub x: Rational,
    pub y: Rational,
}

/// The clock identity an effector receives alongside an operation: the
/// originating message's full vector clock and dot. Identical on every
/// replica for a given message, so effects that read it stay convergent.
#[derive(Clone, Copy)]
pub struct ClockContext<'a> {
    pub w: &'a VectorClock,
    pub dot: &'a Dot,
}

/// Serializable pure operations: the generated message is the operation
/// itself, with no reads of local state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PureOp {
    AttrSet { key: String, value: AttrValue },
    AmountMult { factor: Rational },
    Vec2Mult { matrix: Mat2 },
    NestedForEach { f: Box<MutationFn> },
}

impl PureOp {
    pub fn kind(&self) -> &'static str {
        match self {
            PureOp::AttrSet { .. } => "attr_set",
            PureOp::AmountMult { .. } => "amount_mult",
            PureOp::Vec2Mult { .. } => "vec2_mult",
            PureOp::NestedForEach { .. } => "nested_foreach",
        }
    }
}

pub fn attr_set(key: impl Into<String>, value: AttrValue) -> PureOp {
    PureOp::AttrSet {
        key: key.into(),
        value,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("amount multiplier must be positive, got {0}")]
pub struct NonPositiveFactor(pub Rational);

/// Amounts stay positive, so non-positive factors are rejected here, at
/// generation time; effectors trust delivered messages.
pub fn amount_mult(factor: Rational) -> Result<PureOp, NonPositiveFactor> {
    if factor.is_positive() {
        Ok(PureOp::AmountMult { factor })
    } else {
        Err(NonPositiveFactor(factor))
    }
}

pub fn vec2_mult(matrix: Mat2) -> PureOp {
    PureOp::Vec2Mult { matrix }
}

pub fn nested_foreach(f: MutationFn) -> PureOp {
    PureOp::NestedForEach { f: Box::new(f) }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("operation {op} cannot apply to element state of kind {state}")]
pub struct SchemaError {
    pub op: &'static str,
    pub state: &'static str,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::ReplicaId;

    fn rid(s: &str) -> ReplicaId {
        ReplicaId::new(s).unwrap()
    }

    fn dot(s: &str, c: u64) -> Dot {
        Dot::new(rid(s), c)
    }

    #[test]
    fn attr_set_installs_value_and_winner() {
        let mut attrs = AttrMapState::default();
        attrs.set("bold", &AttrValue::Bool(true), &dot("A", 5));
        assert_eq!(attrs.get("bold"), Some(&AttrValue::Bool(true)));
        assert_eq!(attrs.entries["bold"].winner, dot("A", 5));
    }

    #[test]
    fn stale_write_loses() {
        let mut attrs = AttrMapState::default();
        attrs.set("bold", &AttrValue::Bool(true), &dot("A", 5));
        attrs.set("bold", &AttrValue::Bool(false), &dot("A", 4));
        assert_eq!(attrs.get("bold"), Some(&AttrValue::Bool(true)));
        assert_eq!(attrs.entries["bold"].winner, dot("A", 5));
    }

    #[test]
    fn concurrent_writes_resolve_identically_in_both_orders() {
        // Equal clocks tie-break on sender: B > A wins.
        let w1 = (AttrValue::Bool(true), dot("A", 5));
        let w2 = (AttrValue::Bool(false), dot("B", 5));
        let mut forward = AttrMapState::default();
        forward.set("bold", &w1.0, &w1.1);
        forward.set("bold", &w2.0, &w2.1);
        let mut backward = AttrMapState::default();
        backward.set("bold", &w2.0, &w2.1);
        backward.set("bold", &w1.0, &w1.1);
        assert_eq!(forward, backward);
        assert_eq!(forward.entries["bold"].winner, dot("B", 5));
        assert_eq!(forward.get("bold"), Some(&AttrValue::Bool(false)));
    }

    #[test]
    fn rational_parses_and_prints_canonically() {
        for (text, canon) in [
            ("3", "3"),
            ("3/1", "3"),
            ("6/4", "3/2"),
            ("-1/2", "-1/2"),
            ("0/5", "0"),
        ] {
            let r: Rational = text.parse().unwrap();
            assert_eq!(r.to_string(), canon);
        }
        assert!("1/0".parse::<Rational>().is_err());
        assert!("1/-2".parse::<Rational>().is_err());
        assert!("x".parse::<Rational>().is_err());
    }

    #[test]
    fn amount_mult_rejects_non_positive_factors() {
        assert!(amount_mult(Rational::integer(2)).is_ok());
        assert!(amount_mult(Rational::zero()).is_err());
        assert!(amount_mult(Rational::integer(-3)).is_err());
    }

    #[test]
    fn matrix_vector_product_matches_hand_computation() {
        // [[0,1],[-1,0]] · (1,0) = (0,-1)
        let m = Mat2([
            [Rational::zero(), Rational::one()],
            [Rational::integer(-1), Rational::zero()],
        ]);
        let (x, y) = m.mul_vec(&Rational::one(), &Rational::zero());
        assert_eq!((x, y), (Rational::zero(), Rational::integer(-1)));
    }

    #[test]
    fn rotation_form_matrices_commute_exactly() {
        // Both have the [[c,s],[-s,c]] form; their products are equal
        // entry-for-entry in exact arithmetic.
        let m1 = Mat2::rotation(Rational::ratio(433, 500), Rational::ratio(1, 2));
        let m2 = Mat2::rotation(Rational::ratio(4, 5), Rational::ratio(3, 5));
        assert_eq!(m1.mul_mat(&m2), m2.mul_mat(&m1));
    }

    #[test]
    fn identity_matrix_is_a_fixed_point() {
        let v = (Rational::ratio(7, 3), Rational::integer(-2));
        let (x, y) = Mat2::identity().mul_vec(&v.0, &v.1);
        assert_eq!((x, y), v);
    }
}
