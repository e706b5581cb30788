//! Bundled urn configurations used by the CLI, the test suite and as
//! worked examples of the config schema.

use crate::error::Result;
use crate::urn_model::{parse_urn, UrnSpec};

pub const FRIEDMAN: &str = include_str!("../corpus/friedman.toml");
pub const E2: &str = include_str!("../corpus/e2.toml");
pub const TRIANGULAR: &str = include_str!("../corpus/triangular.toml");
pub const TRIANGULAR_LARGE: &str = include_str!("../corpus/triangular_large.toml");
pub const EBAD: &str = include_str!("../corpus/ebad.toml");
pub const POLYA: &str = include_str!("../corpus/polya.toml");
pub const FIVE_TYPE_FRAGMENT: &str = include_str!("../corpus/five_type_fragment.toml");
pub const GAP_TYPE_FRAGMENT: &str = include_str!("../corpus/gap_type_fragment.toml");

/// Every bundled config, fragments included.
pub const ALL_TEXTS: &[&str] = &[
    FRIEDMAN,
    E2,
    TRIANGULAR,
    TRIANGULAR_LARGE,
    EBAD,
    POLYA,
    FIVE_TYPE_FRAGMENT,
    GAP_TYPE_FRAGMENT,
];

/// A bundled urn with its provenance note.
pub struct CorpusEntry {
    pub id: &'static str,
    pub text: &'static str,
    pub note: &'static str,
}

pub const ENTRIES: &[CorpusEntry] = &[
    CorpusEntry {
        id: "friedman",
        text: FRIEDMAN,
        note: "strictly small two-colour urn; add one ball of the opposite colour",
    },
    CorpusEntry {
        id: "e2",
        text: E2,
        note: "critically small urn (second eigenvalue exactly half the first)",
    },
    CorpusEntry {
        id: "triangular",
        text: TRIANGULAR,
        note: "reducible triangular urn with parameter 0.3; asymptotic covariance is 0",
    },
    CorpusEntry {
        id: "triangular-large",
        text: TRIANGULAR_LARGE,
        note: "triangular urn with parameter 0.7; large urn",
    },
    CorpusEntry {
        id: "ebad",
        text: EBAD,
        note: "largest eigenvalue exceeds the balance; colour 3 is unreachable",
    },
    CorpusEntry {
        id: "polya",
        text: POLYA,
        note: "original Polya urn; dominant eigenvalue not simple",
    },
    CorpusEntry {
        id: "five-type-fragment",
        text: FIVE_TYPE_FRAGMENT,
        note: "incomplete: 5-type search-tree urn, only rows 1-2 published",
    },
    CorpusEntry {
        id: "gap-type-fragment",
        text: GAP_TYPE_FRAGMENT,
        note: "incomplete: gap-type search-tree urn, only rows 1-2 published",
    },
];

/// Look a bundled urn up by id.
pub fn get(id: &str) -> Option<&'static CorpusEntry> {
    ENTRIES.iter().find(|e| e.id == id)
}

/// Parse a bundled urn by id.
pub fn load(id: &str) -> Option<Result<UrnSpec>> {
    get(id).map(|e| parse_urn(e.text))
}

/// Parse every complete (non-fragment) bundled urn.
pub fn complete_specs() -> Vec<UrnSpec> {
    ENTRIES
        .iter()
        .map(|e| parse_urn(e.text).expect("bundled config must parse"))
        .filter(|s| !s.incomplete)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_entries_parse() {
        for entry in ENTRIES {
            let spec = parse_urn(entry.text).unwrap_or_else(|e| panic!("{}: {e}", entry.id));
            assert_eq!(spec.name, entry.id);
            assert_eq!(spec.incomplete, entry.note.starts_with("incomplete"));
        }
    }

    #[test]
    fn six_complete_two_fragments() {
        assert_eq!(complete_specs().len(), 6);
        assert_eq!(ENTRIES.len(), 8);
    }
}
