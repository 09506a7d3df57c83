//! Number formats of the macro.
//!
//! Weights are stored as 4-bit sign-magnitude words: the sign cell steers the
//! discharge to one of the two bit-lines and the three magnitude cells each
//! own a discharge branch. Activations are 4-bit unsigned post-ReLU values.
//! With MAC-folding enabled every activation is shifted by [`FOLD_OFFSET`]
//! before it reaches the DTC, so the array computes `sum((a - 8) * w)`; the
//! missing `8 * sum(w)` term is added back digitally.

use serde::{Deserialize, Serialize};

use crate::error::{CimError, Result};

/// Rows (weights) per column engine.
pub const ROWS: usize = 64;
/// Largest weight magnitude (3 magnitude bits).
pub const MAX_WEIGHT_MAG: u8 = 7;
/// Largest raw activation (4 bits, unsigned).
pub const MAX_ACT: u8 = 15;
/// Constant subtracted from each activation by MAC-folding.
pub const FOLD_OFFSET: i32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Pos,
    Neg,
}

impl Sign {
    pub fn of(v: i32) -> Sign {
        if v < 0 {
            Sign::Neg
        } else {
            Sign::Pos
        }
    }

    pub fn value(self) -> i32 {
        match self {
            Sign::Pos => 1,
            Sign::Neg => -1,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Pos => Sign::Neg,
            Sign::Neg => Sign::Pos,
        }
    }
}

impl std::ops::Mul for Sign {
    type Output = Sign;

    fn mul(self, rhs: Sign) -> Sign {
        if self == rhs {
            Sign::Pos
        } else {
            Sign::Neg
        }
    }
}

/// A sign-magnitude operand as driven onto the array. A zero magnitude is
/// always stored with a positive sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignMag {
    sign: Sign,
    magnitude: u8,
}

impl SignMag {
    pub const ZERO: SignMag = SignMag {
        sign: Sign::Pos,
        magnitude: 0,
    };

    pub fn new(sign: Sign, magnitude: u8) -> SignMag {
        let sign = if magnitude == 0 { Sign::Pos } else { sign };
        SignMag { sign, magnitude }
    }

    pub fn from_i32(v: i32) -> SignMag {
        SignMag::new(Sign::of(v), v.unsigned_abs().min(u8::MAX as u32) as u8)
    }

    pub fn sign(self) -> Sign {
        self.sign
    }

    pub fn magnitude(self) -> u8 {
        self.magnitude
    }

    pub fn value(self) -> i32 {
        self.sign.value() * self.magnitude as i32
    }
}

/// 4-bit sign-magnitude weight word: `W[3]` is the sign, `W[2:0]` the magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WeightCode(SignMag);

impl WeightCode {
    pub const ZERO: WeightCode = WeightCode(SignMag::ZERO);

    pub fn sign(self) -> Sign {
        self.0.sign
    }

    pub fn magnitude(self) -> u8 {
        self.0.magnitude
    }

    /// Whether magnitude bit `bit` (0..3) is set, i.e. whether that cell's
    /// discharge branch takes part in the MAC.
    pub fn bit(self, bit: usize) -> bool {
        (self.0.magnitude >> bit) & 1 == 1
    }

    pub fn as_operand(self) -> SignMag {
        self.0
    }
}

/// 4-bit unsigned post-ReLU activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RawAct(u8);

impl RawAct {
    pub fn new(value: u8) -> Result<RawAct> {
        if value > MAX_ACT {
            return Err(CimError::OutOfRange {
                what: "activation",
                value: value as i64,
                min: 0,
                max: MAX_ACT as i64,
            });
        }
        Ok(RawAct(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// The unfolded DTC operand (always non-negative).
    pub fn as_operand(self) -> SignMag {
        SignMag::new(Sign::Pos, self.0)
    }
}

/// Activation after MAC-folding: `sign * magnitude == raw - 8`, magnitude in `[0, 8]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FoldedAct(SignMag);

impl FoldedAct {
    pub fn sign(self) -> Sign {
        self.0.sign
    }

    pub fn magnitude(self) -> u8 {
        self.0.magnitude
    }

    pub fn value(self) -> i32 {
        self.0.value()
    }

    pub fn as_operand(self) -> SignMag {
        self.0
    }
}

pub fn encode_weight(v: i32) -> Result<WeightCode> {
    let max = MAX_WEIGHT_MAG as i32;
    if !(-max..=max).contains(&v) {
        return Err(CimError::OutOfRange {
            what: "weight",
            value: v as i64,
            min: -max as i64,
            max: max as i64,
        });
    }
    Ok(WeightCode(SignMag::from_i32(v)))
}

pub fn decode_weight(w: WeightCode) -> i32 {
    w.0.value()
}

pub fn fold_activation(a: RawAct) -> FoldedAct {
    FoldedAct(SignMag::from_i32(a.0 as i32 - FOLD_OFFSET))
}

/// Digital term that undoes MAC-folding: `8 * sum(w)`.
pub fn folding_compensation(weights: &[WeightCode]) -> Result<i64> {
    if weights.len() != ROWS {
        return Err(CimError::WrongLength {
            what: "weights",
            expected: ROWS,
            actual: weights.len(),
        });
    }
    Ok(compensation_unchecked(weights))
}

pub(crate) fn compensation_unchecked(weights: &[WeightCode]) -> i64 {
    FOLD_OFFSET as i64 * weights.iter().map(|&w| decode_weight(w) as i64).sum::<i64>()
}

/// Largest `|sum(a' * w)|` the array can produce over `rows` rows.
pub fn dynamic_range(folded: bool, rows: usize) -> i64 {
    let act_peak = if folded {
        FOLD_OFFSET as i64
    } else {
        MAX_ACT as i64
    };
    rows as i64 * act_peak * MAX_WEIGHT_MAG as i64
}

/// DTC operand for a raw activation in the given mode.
pub fn dtc_operand(a: RawAct, folded: bool) -> SignMag {
    if folded {
        fold_activation(a).as_operand()
    } else {
        a.as_operand()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_examples() {
        assert_eq!(encode_weight(0).unwrap(), WeightCode(SignMag::new(Sign::Pos, 0)));
        let w = encode_weight(-7).unwrap();
        assert_eq!((w.sign(), w.magnitude()), (Sign::Neg, 7));
        let w = encode_weight(5).unwrap();
        assert_eq!((w.sign(), w.magnitude()), (Sign::Pos, 5));
        assert!(matches!(encode_weight(8), Err(CimError::OutOfRange { .. })));
        assert!(matches!(encode_weight(-8), Err(CimError::OutOfRange { .. })));
    }

    #[test]
    fn negative_zero_is_canonical() {
        assert_eq!(SignMag::new(Sign::Neg, 0), SignMag::ZERO);
        assert_eq!(fold_activation(RawAct::new(8).unwrap()).sign(), Sign::Pos);
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_weight(WeightCode(SignMag::new(Sign::Pos, 3))), 3);
        assert_eq!(decode_weight(WeightCode(SignMag::new(Sign::Neg, 7))), -7);
        assert_eq!(decode_weight(WeightCode(SignMag::new(Sign::Pos, 0))), 0);
    }

    #[test]
    fn fold_examples() {
        let f = |a| fold_activation(RawAct::new(a).unwrap());
        assert_eq!((f(0).sign(), f(0).magnitude()), (Sign::Neg, 8));
        assert_eq!((f(8).sign(), f(8).magnitude()), (Sign::Pos, 0));
        assert_eq!((f(15).sign(), f(15).magnitude()), (Sign::Pos, 7));
    }

    #[test]
    fn round_trips_are_exhaustive() {
        for v in -7..=7 {
            assert_eq!(decode_weight(encode_weight(v).unwrap()), v);
        }
        for a in 0..=15u8 {
            let f = fold_activation(RawAct::new(a).unwrap());
            assert_eq!(f.value(), a as i32 - 8);
            assert!(f.magnitude() <= 8);
        }
        assert!(RawAct::new(16).is_err());
    }

    #[test]
    fn compensation_examples() {
        let zeros = vec![WeightCode::ZERO; ROWS];
        assert_eq!(folding_compensation(&zeros).unwrap(), 0);
        let sevens = vec![encode_weight(7).unwrap(); ROWS];
        // 8 * 64 * 7
        assert_eq!(folding_compensation(&sevens).unwrap(), 3584);
        let balanced: Vec<_> = (0..ROWS)
            .map(|i| encode_weight(if i < 32 { 1 } else { -1 }).unwrap())
            .collect();
        assert_eq!(folding_compensation(&balanced).unwrap(), 0);
        assert!(matches!(
            folding_compensation(&zeros[..63]),
            Err(CimError::WrongLength { actual: 63, .. })
        ));
    }

    /// Brute-force the largest single-row product and scale by rows.
    fn brute_force_range(folded: bool, rows: usize) -> i64 {
        let mut best = 0i64;
        for a in 0..=15u8 {
            let op = dtc_operand(RawAct::new(a).unwrap(), folded).value();
            for w in -7..=7 {
                best = best.max((op * w).abs() as i64);
            }
        }
        best * rows as i64
    }

    #[test]
    fn dynamic_range_matches_brute_force() {
        assert_eq!(dynamic_range(false, 64), 6720);
        assert_eq!(dynamic_range(true, 64), 3584);
        for rows in [1, 7, 64] {
            assert_eq!(dynamic_range(false, rows), brute_force_range(false, rows));
            assert_eq!(dynamic_range(true, rows), brute_force_range(true, rows));
        }
        assert_eq!(6720.0 / 3584.0, 1.875);
    }

    fn folding_identity_holds(acts: &[u8], ws: &[i32]) {
        let codes: Vec<_> = ws.iter().map(|&w| encode_weight(w).unwrap()).collect();
        let folded: i64 = acts
            .iter()
            .zip(ws)
            .map(|(&a, &w)| (fold_activation(RawAct::new(a).unwrap()).value() * w) as i64)
            .sum();
        let direct: i64 = acts.iter().zip(ws).map(|(&a, &w)| (a as i32 * w) as i64).sum();
        assert_eq!(folded + folding_compensation(&codes).unwrap(), direct);
    }

    #[test]
    fn folding_identity_boundary_vectors() {
        for &a in &[0u8, 8, 15] {
            for &w in &[-7, 0, 7] {
                folding_identity_holds(&[a; ROWS], &[w; ROWS]);
            }
        }
    }

    proptest! {
        #[test]
        fn folding_identity(
            acts in prop::collection::vec(0u8..=15, ROWS),
            ws in prop::collection::vec(-7i32..=7, ROWS),
        ) {
            folding_identity_holds(&acts, &ws);
        }

        #[test]
        fn range_halving(rows in 1usize..4096) {
            let ratio = dynamic_range(true, rows) as f64 / dynamic_range(false, rows) as f64;
            prop_assert_eq!(ratio, 8.0 / 15.0);
        }
    }
}
