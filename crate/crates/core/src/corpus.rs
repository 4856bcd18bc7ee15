//! Bundled example programs.

use crate::lang::{parse_program, ParseError, Program};

/// A bundled program: its file stem and source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Entry {
    pub name: &'static str,
    pub source: &'static str,
}

impl Entry {
    pub fn file_name(&self) -> String {
        format!("{}.bl", self.name)
    }

    pub fn program(&self) -> Result<Program, ParseError> {
        parse_program(self.source)
    }
}

macro_rules! entry {
    ($name:literal) => {
        Entry { name: $name, source: include_str!(concat!("../corpus/", $name, ".bl")) }
    };
}

static ENTRIES: &[Entry] = &[
    entry!("ex1"),
    entry!("ex1-patched"),
    entry!("implicit-flow"),
    entry!("sha2-update-last"),
    entry!("skip"),
    entry!("already-protected"),
    entry!("array-write"),
    entry!("bitmask"),
    entry!("branch-on-load"),
    entry!("diamond"),
    entry!("double-index"),
    entry!("fail"),
    entry!("length-base"),
    entry!("loop-bounded"),
    entry!("nested-if"),
    entry!("pointer-chase"),
    entry!("ptr-index"),
    entry!("ptr-roundtrip"),
    entry!("secret-arith"),
    entry!("spectre-v1"),
    entry!("store-pointer"),
    entry!("ternary"),
    entry!("two-paths"),
    entry!("while-sum"),
];

/// The schedule replayed against EX1 in the worked example.
pub const EX1_ATTACK_SCHEDULE: &str = include_str!("../corpus/ex1-attack.sched");

pub fn entries() -> &'static [Entry] {
    ENTRIES
}

/// Looks up a bundled file by stem or file name, ignoring any directory part.
pub fn find(name: &str) -> Option<&'static Entry> {
    let base = name.rsplit(['/', '\\']).next().unwrap_or(name);
    let stem = base.strip_suffix(".bl").unwrap_or(base);
    ENTRIES.iter().find(|e| e.name == stem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::check_ssa;

    #[test]
    fn every_entry_parses_and_is_ssa() {
        assert!(entries().len() >= 20);
        for e in entries() {
            let p = e.program().unwrap_or_else(|err| panic!("{}: {err}", e.name));
            assert!(check_ssa(&p.body).is_ok(), "{}", e.name);
        }
    }

    #[test]
    fn lookup_by_path() {
        assert_eq!(find("corpus/ex1.bl").unwrap().name, "ex1");
        assert_eq!(find("skip").unwrap().name, "skip");
        assert!(find("missing.bl").is_none());
    }
}
