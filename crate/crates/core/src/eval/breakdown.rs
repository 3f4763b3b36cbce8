//! Joint correctness of three settings over the same tasks.
//!
//! Each task gets a three-bit code (first setting, second, third), written
//! as e.g. `101`. All eight groups are reported, largest first, ties in
//! ascending code order. Abstentions count as incorrect.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Verdict;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BreakdownError {
    /// Task ids not present under all three settings, as `(setting, id)`.
    #[error("task id sets differ: {}", fmt_missing(.0))]
    KeySetMismatch(Vec<(String, String)>),
    #[error("task {task} under {setting} has no gold label")]
    Unscored { setting: String, task: String },
}

fn fmt_missing(items: &[(String, String)]) -> String {
    items.iter().map(|(s, id)| format!("{id} only in {s}")).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Code(pub [bool; 3]);

impl Code {
    pub fn value(self) -> u8 {
        self.0.iter().fold(0, |acc, &b| (acc << 1) | b as u8)
    }

    pub fn from_value(v: u8) -> Self {
        Code([v & 4 != 0, v & 2 != 0, v & 1 != 0])
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub code: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakdown {
    pub settings: [String; 3],
    pub groups: Vec<Group>,
    /// Correct answers per setting.
    pub totals: [usize; 3],
    pub tasks: usize,
}

pub type VerdictMap = BTreeMap<String, Verdict>;

/// Builds the table from three per-task verdict maps keyed by task id.
pub fn error_breakdown(names: [&str; 3], maps: [&VerdictMap; 3]) -> Result<Breakdown, BreakdownError> {
    let all: BTreeSet<&String> = maps.iter().flat_map(|m| m.keys()).collect();
    let mut missing = Vec::new();
    for id in &all {
        let present: Vec<bool> = maps.iter().map(|m| m.contains_key(*id)).collect();
        if present.iter().any(|p| !p) {
            for (i, p) in present.iter().enumerate() {
                if *p {
                    missing.push((names[i].to_string(), (*id).clone()));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(BreakdownError::KeySetMismatch(missing));
    }

    let mut counts = [0usize; 8];
    let mut totals = [0usize; 3];
    for id in &all {
        let mut bits = [false; 3];
        for (i, m) in maps.iter().enumerate() {
            let v = &m[*id];
            if v.correct.is_none() {
                return Err(BreakdownError::Unscored { setting: names[i].into(), task: (*id).clone() });
            }
            bits[i] = v.is_correct();
            totals[i] += bits[i] as usize;
        }
        counts[Code(bits).value() as usize] += 1;
    }
    let mut order: Vec<u8> = (0..8).collect();
    order.sort_by(|&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b)));
    Ok(Breakdown {
        settings: names.map(String::from),
        groups: order
            .into_iter()
            .map(|v| Group { code: Code::from_value(v).to_string(), count: counts[v as usize] })
            .collect(),
        totals,
        tasks: all.len(),
    })
}

impl Breakdown {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let [a, b, c] = &self.settings;
        w.write_record(["code", a.as_str(), b.as_str(), c.as_str(), "count"]).unwrap();
        for g in &self.groups {
            let bits: Vec<String> = g.code.chars().map(String::from).collect();
            let count = g.count.to_string();
            w.write_record([g.code.as_str(), &bits[0], &bits[1], &bits[2], &count]).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

impl fmt::Display for Breakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "code order: {} / {} / {}", self.settings[0], self.settings[1], self.settings[2])?;
        writeln!(f, "{:<6} {:>6} {:>8}", "code", "count", "share")?;
        for g in &self.groups {
            let share = if self.tasks == 0 { 0.0 } else { g.count as f64 / self.tasks as f64 };
            writeln!(f, "{:<6} {:>6} {:>8.4}", g.code, g.count, share)?;
        }
        writeln!(f, "correct per setting:")?;
        for (name, total) in self.settings.iter().zip(self.totals) {
            writeln!(f, "  {name:<24} {total}")?;
        }
        Ok(())
    }
}
