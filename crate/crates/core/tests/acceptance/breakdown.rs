use std::fs;

use duet_core::eval::{error_breakdown, VerdictMap};
use duet_core::{ExtractionMethod, Letter, Verdict};
use serde::Deserialize;

use crate::common::fixtures;

#[derive(Deserialize)]
struct Fixture {
    settings: [String; 3],
    tasks: Vec<Row>,
    hand_table: Vec<(String, usize)>,
    hand_totals: [usize; 3],
}

#[derive(Deserialize)]
struct Row {
    id: String,
    code: String,
}

/// Wrong answers alternate between a wrong letter and an abstention.
fn verdict(correct: bool, k: usize) -> Verdict {
    let gold = Letter::new('A');
    if correct {
        Verdict { extracted: gold, raw_final_text: "Answer: A".into(), method: ExtractionMethod::StrictPattern, correct: None }.scored(gold)
    } else if k.is_multiple_of(2) {
        Verdict { extracted: Letter::new('C'), raw_final_text: "Answer: C".into(), method: ExtractionMethod::StrictPattern, correct: None }.scored(gold)
    } else {
        Verdict::abstain("unsure").scored(gold)
    }
}

pub fn run() -> crate::Outcome {
    let raw = fs::read_to_string(fixtures().join("breakdown.json")).map_err(|e| e.to_string())?;
    let fx: Fixture = serde_json::from_str(&raw).map_err(|e| e.to_string())?;
    if fx.tasks.len() != 12 {
        return Err(format!("fixture has {} tasks", fx.tasks.len()));
    }
    let bits: Vec<[bool; 3]> = fx.tasks.iter().map(|r| {
        let b: Vec<bool> = r.code.chars().map(|c| c == '1').collect();
        [b[0], b[1], b[2]]
    }).collect();

    let mut maps: [VerdictMap; 3] = Default::default();
    for (k, (row, b)) in fx.tasks.iter().zip(&bits).enumerate() {
        for s in 0..3 {
            maps[s].insert(row.id.clone(), verdict(b[s], k + s));
        }
    }
    let names = [fx.settings[0].as_str(), fx.settings[1].as_str(), fx.settings[2].as_str()];
    let got = error_breakdown(names, [&maps[0], &maps[1], &maps[2]]).map_err(|e| e.to_string())?;

    // Brute force: every code, every task.
    let mut oracle = Vec::new();
    for a in [false, true] {
        for b in [false, true] {
            for c in [false, true] {
                let n = bits.iter().filter(|t| **t == [a, b, c]).count();
                oracle.push((format!("{}{}{}", a as u8, b as u8, c as u8), n));
            }
        }
    }
    oracle.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    let totals: [usize; 3] = std::array::from_fn(|s| bits.iter().filter(|t| t[s]).count());

    let table: Vec<(String, usize)> = got.groups.iter().map(|g| (g.code.clone(), g.count)).collect();
    if table != oracle {
        return Err(format!("table {table:?} != brute force {oracle:?}"));
    }
    if table != fx.hand_table {
        return Err(format!("table {table:?} != hand table {:?}", fx.hand_table));
    }
    if got.totals != totals || got.totals != fx.hand_totals || got.tasks != 12 {
        return Err(format!("marginals {:?} != {totals:?}", got.totals));
    }
    for s in 0..3 {
        let from_groups: usize = table.iter().filter(|(code, _)| code.as_bytes()[s] == b'1').map(|(_, n)| n).sum();
        if from_groups != totals[s] {
            return Err(format!("groups do not sum to the {} marginal", fx.settings[s]));
        }
    }
    Ok(format!("8 groups match brute force, marginals {:?}", got.totals))
}
