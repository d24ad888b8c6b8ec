//! Finite-state tracking of the `[x, y]` output template.
//!
//! The state machine decides *when* digit guidance applies; it never alters
//! token scores itself. In the default non-strict mode an off-template token
//! parks the machine in a permissive pass-through state: generation
//! continues, guidance stays off for the rest of the sequence. Strict mode
//! reports the violation instead, which callers use to mask candidates.

use thiserror::Error;

use crate::core::{Coordinate, TokenClass, TokenId, Vocabulary};

#[derive(Debug, Error, PartialEq)]
pub enum FsmError {
    #[error("structural violation: expected {expected}, got {got:?} (id {id})")]
    StructuralViolation {
        expected: &'static str,
        got: String,
        id: TokenId,
    },
    #[error("token id {id} out of range for vocabulary of {len} tokens")]
    TokenOutOfRange { id: TokenId, len: usize },
    #[error("coordinate component overflowed while accumulating digit token {token:?}")]
    DigitOverflow { token: String },
}

/// Which coordinate component a digit slot belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Descriptor of an upcoming digit position: the `index`-th digit (1-based)
/// of the `axis` component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DigitSlot {
    pub axis: Axis,
    pub index: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Nothing consumed yet; `[` expected.
    ExpectOpen,
    /// Inside the x number; a digit is expected (`,` also legal once at
    /// least one digit has been consumed).
    XDigits,
    /// x reached the digit cap; only `,` is legal.
    ExpectComma,
    /// `,` consumed; the single separator space is expected.
    ExpectSpace,
    /// Inside the y number; a digit is expected (`]` also legal once at
    /// least one digit has been consumed).
    YDigits,
    /// y reached the digit cap; only `]` is legal.
    ExpectCloseBracket,
    /// `]` consumed; end-of-sequence expected.
    ExpectEos,
    /// Terminal; absorbing under further end-of-sequence tokens.
    Done,
    /// Non-strict only: an off-template token was consumed. Absorbing;
    /// guidance stays off.
    Passthrough,
}

/// Immutable template cursor. `k_x`/`k_y` are the 1-based index of the digit
/// about to be decoded and are non-zero exactly within the respective digit
/// phase; they never exceed the digit cap. Accepted digits accumulate into
/// the coordinate reported at `Done`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemplateState {
    phase: Phase,
    k_x: u8,
    k_y: u8,
    x_value: u32,
    y_value: u32,
}

impl Default for TemplateState {
    fn default() -> Self {
        Self::initial()
    }
}

impl TemplateState {
    pub fn initial() -> Self {
        Self {
            phase: Phase::ExpectOpen,
            k_x: 0,
            k_y: 0,
            x_value: 0,
            y_value: 0,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn k_x(&self) -> u8 {
        self.k_x
    }

    pub fn k_y(&self) -> u8 {
        self.k_y
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn is_passthrough(&self) -> bool {
        self.phase == Phase::Passthrough
    }

    /// The digit slot guidance would apply to next, if any.
    pub fn guidance_slot(&self) -> Option<DigitSlot> {
        match self.phase {
            Phase::XDigits => Some(DigitSlot {
                axis: Axis::X,
                index: self.k_x,
            }),
            Phase::YDigits => Some(DigitSlot {
                axis: Axis::Y,
                index: self.k_y,
            }),
            _ => None,
        }
    }

    /// The accumulated coordinate, available once the template completed.
    pub fn coordinate(&self) -> Option<Coordinate> {
        if self.phase == Phase::Done {
            Some(Coordinate::new(self.x_value, self.y_value))
        } else {
            None
        }
    }

    /// Whether `token` keeps the state on the template. Used for strict
    /// candidate masking during decoding.
    pub fn accepts(&self, token: TokenId, vocab: &Vocabulary, max_digits: u8) -> bool {
        self.advance(token, vocab, max_digits, true).is_ok()
    }

    /// Consumes one token and returns the successor state.
    ///
    /// Strict mode reports off-template tokens as [`FsmError::StructuralViolation`];
    /// non-strict mode swallows them into [`Phase::Passthrough`]. One
    /// tokenizer quirk is tolerated in non-strict mode: a digit directly
    /// after the comma is taken as the first y digit.
    pub fn advance(
        mut self,
        token: TokenId,
        vocab: &Vocabulary,
        max_digits: u8,
        strict: bool,
    ) -> Result<Self, FsmError> {
        if token >= vocab.len() {
            return Err(FsmError::TokenOutOfRange {
                id: token,
                len: vocab.len(),
            });
        }
        let class = vocab.class(token);
        let violation = |expected: &'static str| FsmError::StructuralViolation {
            expected,
            got: vocab.token(token).to_string(),
            id: token,
        };
        let pass = |mut s: Self| {
            s.phase = Phase::Passthrough;
            s.k_x = 0;
            s.k_y = 0;
            s
        };

        match (self.phase, class) {
            (Phase::Passthrough, _) => Ok(self),

            (Phase::ExpectOpen, TokenClass::Open) => {
                self.phase = Phase::XDigits;
                self.k_x = 1;
                Ok(self)
            }
            (Phase::ExpectOpen, _) => {
                if strict {
                    Err(violation("\"[\""))
                } else {
                    Ok(pass(self))
                }
            }

            (Phase::XDigits, TokenClass::Digit) => {
                match accumulate(self.x_value, vocab.token(token)) {
                    Some(v) => self.x_value = v,
                    None => {
                        return if strict {
                            Err(FsmError::DigitOverflow {
                                token: vocab.token(token).to_string(),
                            })
                        } else {
                            Ok(pass(self))
                        }
                    }
                }
                if self.k_x < max_digits {
                    self.k_x += 1;
                } else {
                    // Digit cap reached: the number is complete, only the
                    // separator may follow.
                    self.phase = Phase::ExpectComma;
                    self.k_x = 0;
                }
                Ok(self)
            }
            (Phase::XDigits, TokenClass::Comma) if self.k_x >= 2 => {
                self.phase = Phase::ExpectSpace;
                self.k_x = 0;
                Ok(self)
            }
            (Phase::XDigits, _) => {
                let expected = if self.k_x >= 2 { "digit or \",\"" } else { "digit" };
                if strict {
                    Err(violation(expected))
                } else {
                    Ok(pass(self))
                }
            }

            (Phase::ExpectComma, TokenClass::Comma) => {
                self.phase = Phase::ExpectSpace;
                Ok(self)
            }
            (Phase::ExpectComma, _) => {
                if strict {
                    Err(violation("\",\""))
                } else {
                    Ok(pass(self))
                }
            }

            (Phase::ExpectSpace, TokenClass::Space) => {
                self.phase = Phase::YDigits;
                self.k_y = 1;
                Ok(self)
            }
            (Phase::ExpectSpace, TokenClass::Digit) if !strict => {
                // Tolerate a comma followed directly by a digit.
                self.phase = Phase::YDigits;
                self.k_y = 1;
                self.consume_y_digit(token, vocab, max_digits)
                    .map_or_else(|_| Ok(pass(self)), Ok)
            }
            (Phase::ExpectSpace, _) => {
                if strict {
                    Err(violation("\" \""))
                } else {
                    Ok(pass(self))
                }
            }

            (Phase::YDigits, TokenClass::Digit) => self
                .consume_y_digit(token, vocab, max_digits)
                .or_else(|e| if strict { Err(e) } else { Ok(pass(self)) }),
            (Phase::YDigits, TokenClass::Close) if self.k_y >= 2 => {
                self.phase = Phase::ExpectEos;
                self.k_y = 0;
                Ok(self)
            }
            (Phase::YDigits, _) => {
                let expected = if self.k_y >= 2 { "digit or \"]\"" } else { "digit" };
                if strict {
                    Err(violation(expected))
                } else {
                    Ok(pass(self))
                }
            }

            (Phase::ExpectCloseBracket, TokenClass::Close) => {
                self.phase = Phase::ExpectEos;
                Ok(self)
            }
            (Phase::ExpectCloseBracket, _) => {
                if strict {
                    Err(violation("\"]\""))
                } else {
                    Ok(pass(self))
                }
            }

            (Phase::ExpectEos, TokenClass::Eos) => {
                self.phase = Phase::Done;
                Ok(self)
            }
            (Phase::ExpectEos, _) => {
                if strict {
                    Err(violation("end of sequence"))
                } else {
                    Ok(pass(self))
                }
            }

            (Phase::Done, TokenClass::Eos) => Ok(self),
            (Phase::Done, _) => {
                if strict {
                    Err(violation("end of sequence"))
                } else {
                    Ok(pass(self))
                }
            }
        }
    }

    fn consume_y_digit(
        mut self,
        token: TokenId,
        vocab: &Vocabulary,
        max_digits: u8,
    ) -> Result<Self, FsmError> {
        match accumulate(self.y_value, vocab.token(token)) {
            Some(v) => self.y_value = v,
            None => {
                return Err(FsmError::DigitOverflow {
                    token: vocab.token(token).to_string(),
                })
            }
        }
        if self.k_y < max_digits {
            self.k_y += 1;
        } else {
            self.phase = Phase::ExpectCloseBracket;
            self.k_y = 0;
        }
        Ok(self)
    }
}

/// Appends the decimal digits of `token` to `value`; `None` on overflow.
fn accumulate(value: u32, token: &str) -> Option<u32> {
    let mut v = value;
    for b in token.bytes() {
        v = v.checked_mul(10)?.checked_add(u32::from(b - b'0'))?;
    }
    Some(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::DEFAULT_MAX_DIGITS;

    fn vocab() -> Vocabulary {
        Vocabulary::toy()
    }

    fn id(v: &Vocabulary, token: &str) -> TokenId {
        v.tokens().iter().position(|t| t == token).unwrap()
    }

    fn run(v: &Vocabulary, tokens: &[&str], strict: bool) -> Result<TemplateState, FsmError> {
        let mut state = TemplateState::initial();
        for t in tokens {
            state = state.advance(id(v, t), v, DEFAULT_MAX_DIGITS, strict)?;
        }
        Ok(state)
    }

    #[test]
    fn initial_state_expects_open() {
        let s = TemplateState::initial();
        assert_eq!(s.phase(), Phase::ExpectOpen);
        assert_eq!(s.k_x(), 0);
        assert_eq!(s.k_y(), 0);
        assert_eq!(s.guidance_slot(), None);
    }

    #[test]
    fn open_bracket_enters_first_x_digit() {
        let v = vocab();
        let s = TemplateState::initial()
            .advance(id(&v, "["), &v, DEFAULT_MAX_DIGITS, true)
            .unwrap();
        assert_eq!(s.phase(), Phase::XDigits);
        assert_eq!(s.k_x(), 1);
        assert_eq!(
            s.guidance_slot(),
            Some(DigitSlot {
                axis: Axis::X,
                index: 1
            })
        );
    }

    #[test]
    fn digit_from_initial_is_strict_violation() {
        let v = vocab();
        let err = TemplateState::initial()
            .advance(id(&v, "7"), &v, DEFAULT_MAX_DIGITS, true)
            .unwrap_err();
        assert_eq!(
            err,
            FsmError::StructuralViolation {
                expected: "\"[\"",
                got: "7".to_string(),
                id: 7
            }
        );
        // Non-strict: permissive pass-through.
        let s = TemplateState::initial()
            .advance(id(&v, "7"), &v, DEFAULT_MAX_DIGITS, false)
            .unwrap();
        assert!(s.is_passthrough());
        assert_eq!(s.guidance_slot(), None);
    }

    #[test]
    fn digit_increments_pending_index() {
        let v = vocab();
        let s = run(&v, &["[", "4", "2"], true).unwrap();
        assert_eq!(s.phase(), Phase::XDigits);
        assert_eq!(s.k_x(), 3);
        let s = s.advance(id(&v, "9"), &v, DEFAULT_MAX_DIGITS, true).unwrap();
        assert_eq!(s.k_x(), 4);
    }

    #[test]
    fn case_study_sequence_reaches_done_with_recorded_digits() {
        let v = vocab();
        let s = run(
            &v,
            &["[", "6", "5", "9", ",", " ", "8", "5", "7", "]", "<eos>"],
            true,
        )
        .unwrap();
        assert!(s.is_done());
        assert_eq!(s.coordinate(), Some(Coordinate::new(659, 857)));
    }

    #[test]
    fn six_digit_number_exceeds_cap() {
        let v = vocab();
        // Five digits fill the number; the machine then demands the comma.
        let s = run(&v, &["[", "1", "2", "3", "4", "5"], true).unwrap();
        assert_eq!(s.phase(), Phase::ExpectComma);
        assert_eq!(s.k_x(), 0);
        assert_eq!(s.guidance_slot(), None);
        // A sixth digit violates in strict mode...
        let err = s.advance(id(&v, "6"), &v, DEFAULT_MAX_DIGITS, true).unwrap_err();
        assert!(matches!(err, FsmError::StructuralViolation { expected: "\",\"", .. }));
        // ...and parks the machine in pass-through otherwise.
        let s = s.advance(id(&v, "6"), &v, DEFAULT_MAX_DIGITS, false).unwrap();
        assert!(s.is_passthrough());
    }

    #[test]
    fn max_length_number_still_accepted() {
        let v = vocab();
        let s = run(
            &v,
            &[
                "[", "1", "2", "3", "4", "5", ",", " ", "9", "8", "7", "6", "5", "]", "<eos>",
            ],
            true,
        )
        .unwrap();
        assert!(s.is_done());
        assert_eq!(s.coordinate(), Some(Coordinate::new(12345, 98765)));
    }

    #[test]
    fn comma_requires_at_least_one_digit() {
        let v = vocab();
        let err = run(&v, &["[", ","], true).unwrap_err();
        assert!(matches!(
            err,
            FsmError::StructuralViolation {
                expected: "digit",
                ..
            }
        ));
        assert!(run(&v, &["[", ","], false).unwrap().is_passthrough());
    }

    #[test]
    fn guidance_slot_per_phase() {
        let v = vocab();
        // ExpectSpace (after the comma) carries no digit slot.
        let s = run(&v, &["[", "6", "5", ","], true).unwrap();
        assert_eq!(s.phase(), Phase::ExpectSpace);
        assert_eq!(s.guidance_slot(), None);
        // First y digit.
        let s = s.advance(id(&v, " "), &v, DEFAULT_MAX_DIGITS, true).unwrap();
        assert_eq!(
            s.guidance_slot(),
            Some(DigitSlot {
                axis: Axis::Y,
                index: 1
            })
        );
        // Third x digit.
        let s = run(&v, &["[", "6", "5"], true).unwrap();
        assert_eq!(
            s.guidance_slot(),
            Some(DigitSlot {
                axis: Axis::X,
                index: 3
            })
        );
    }

    #[test]
    fn comma_followed_by_digit_tolerated_when_not_strict() {
        let v = vocab();
        let err = run(&v, &["[", "6", ",", "8"], true).unwrap_err();
        assert!(matches!(
            err,
            FsmError::StructuralViolation {
                expected: "\" \"",
                ..
            }
        ));
        let s = run(&v, &["[", "6", ",", "8", "5", "]", "<eos>"], false).unwrap();
        assert!(s.is_done());
        assert_eq!(s.coordinate(), Some(Coordinate::new(6, 85)));
    }

    #[test]
    fn done_is_absorbing_for_eos() {
        let v = vocab();
        let s = run(&v, &["[", "1", ",", " ", "2", "]", "<eos>", "<eos>"], true).unwrap();
        assert!(s.is_done());
        let err = s.advance(id(&v, "3"), &v, DEFAULT_MAX_DIGITS, true).unwrap_err();
        assert!(matches!(err, FsmError::StructuralViolation { .. }));
    }

    #[test]
    fn accepts_mirrors_strict_advance() {
        let v = vocab();
        let s = run(&v, &["[", "6"], true).unwrap();
        assert!(s.accepts(id(&v, "5"), &v, DEFAULT_MAX_DIGITS));
        assert!(s.accepts(id(&v, ","), &v, DEFAULT_MAX_DIGITS));
        assert!(!s.accepts(id(&v, "]"), &v, DEFAULT_MAX_DIGITS));
        assert!(!s.accepts(id(&v, "["), &v, DEFAULT_MAX_DIGITS));
    }

    #[test]
    fn passthrough_swallows_everything() {
        let v = vocab();
        let mut s = run(&v, &["]"], false).unwrap();
        assert!(s.is_passthrough());
        for t in ["[", "5", ",", " ", "]", "<eos>"] {
            s = s.advance(id(&v, t), &v, DEFAULT_MAX_DIGITS, false).unwrap();
            assert!(s.is_passthrough());
            assert_eq!(s.guidance_slot(), None);
        }
        assert_eq!(s.coordinate(), None);
    }

    #[test]
    fn token_out_of_range_reported() {
        let v = vocab();
        let err = TemplateState::initial()
            .advance(99, &v, DEFAULT_MAX_DIGITS, false)
            .unwrap_err();
        assert_eq!(err, FsmError::TokenOutOfRange { id: 99, len: 15 });
    }
}
