//! Phase configuration categories for three-phase unbalanced buses.

use serde::{Deserialize, Serialize};

/// The seven possible phase configurations of a bus or line, in the fixed
/// category order used by all categorical distributions in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
    AB,
    BC,
    AC,
    ABC,
}

/// Fixed category order: [A, B, C, AB, BC, AC, ABC].
pub const PHASE_ORDER: [Phase; 7] = [
    Phase::A,
    Phase::B,
    Phase::C,
    Phase::AB,
    Phase::BC,
    Phase::AC,
    Phase::ABC,
];

impl Phase {
    /// Index into the fixed 7-category order.
    pub fn index(self) -> usize {
        PHASE_ORDER.iter().position(|p| *p == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<Phase> {
        PHASE_ORDER.get(i).copied()
    }

    /// Bitmask with bit 0 = A, bit 1 = B, bit 2 = C.
    pub fn mask(self) -> u8 {
        match self {
            Phase::A => 0b001,
            Phase::B => 0b010,
            Phase::C => 0b100,
            Phase::AB => 0b011,
            Phase::BC => 0b110,
            Phase::AC => 0b101,
            Phase::ABC => 0b111,
        }
    }

    pub fn from_mask(mask: u8) -> Option<Phase> {
        PHASE_ORDER.iter().copied().find(|p| p.mask() == mask)
    }

    /// Number of energized phases (1, 2 or 3).
    pub fn count(self) -> usize {
        self.mask().count_ones() as usize
    }

    /// True when every phase of `self` is also energized in `other`.
    pub fn is_subset_of(self, other: Phase) -> bool {
        self.mask() & other.mask() == self.mask()
    }

    /// Which of A/B/C (slots 0/1/2) are active.
    pub fn active_slots(self) -> impl Iterator<Item = usize> {
        let mask = self.mask();
        (0..3).filter(move |s| mask & (1 << s) != 0)
    }

    /// All non-empty phase configurations that are subsets of `parent`.
    pub fn subsets_of(parent: Phase) -> Vec<Phase> {
        PHASE_ORDER
            .iter()
            .copied()
            .filter(|p| p.is_subset_of(parent))
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::A => "A",
            Phase::B => "B",
            Phase::C => "C",
            Phase::AB => "AB",
            Phase::BC => "BC",
            Phase::AC => "AC",
            Phase::ABC => "ABC",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        PHASE_ORDER.iter().copied().find(|p| p.name() == s)
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_rule() {
        assert!(Phase::A.is_subset_of(Phase::AB));
        assert!(!Phase::C.is_subset_of(Phase::AB));
        assert!(Phase::ABC.is_subset_of(Phase::ABC));
        assert_eq!(Phase::subsets_of(Phase::A), vec![Phase::A]);
        assert_eq!(
            Phase::subsets_of(Phase::AB),
            vec![Phase::A, Phase::B, Phase::AB]
        );
        assert_eq!(Phase::subsets_of(Phase::ABC).len(), 7);
    }

    #[test]
    fn index_round_trip() {
        for (i, p) in PHASE_ORDER.iter().enumerate() {
            assert_eq!(p.index(), i);
            assert_eq!(Phase::from_index(i), Some(*p));
            assert_eq!(Phase::parse(p.name()), Some(*p));
        }
    }
}
