//! A small deterministic corpus for smoke runs.

use megadoc_core::rng::{stream_rng, uniform_below};
use serde_json::json;

const WORDS: &[&str] = &[
    "river", "stone", "harbor", "winter", "lantern", "market", "garden", "signal", "copper",
    "meadow", "engine", "letter", "orchard", "bridge", "thunder", "archive", "valley", "compass",
    "ferry", "granite", "pepper", "window", "ledger", "timber", "beacon", "canyon", "saddle",
    "violet", "mirror", "quarry", "the", "a", "of", "and", "to", "in", "was", "were", "under",
    "across", "near", "quietly", "early", "late", "slowly", "bright", "cold", "old", "new",
];

/// `n` documents as JSONL lines with ids `fx-000`, `fx-001`, ...
pub fn fixture_jsonl(n: usize, seed: u64) -> String {
    let mut rng = stream_rng(seed, "fixture/corpus");
    let mut out = String::new();
    for i in 0..n {
        let sentences = 3 + uniform_below(&mut rng, 5) as usize;
        let mut text = String::new();
        for s in 0..sentences {
            if s > 0 {
                text.push(' ');
            }
            let words = 5 + uniform_below(&mut rng, 9) as usize;
            for w in 0..words {
                let word = WORDS[uniform_below(&mut rng, WORDS.len() as u64) as usize];
                if w == 0 {
                    let mut c = word.chars();
                    let first = c.next().expect("words are non-empty");
                    text.extend(first.to_uppercase());
                    text.push_str(c.as_str());
                } else {
                    text.push(' ');
                    text.push_str(word);
                }
            }
            text.push('.');
        }
        out.push_str(&json!({"id": format!("fx-{i:03}"), "text": text}).to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let a = fixture_jsonl(20, 0);
        assert_eq!(a, fixture_jsonl(20, 0));
        assert_ne!(a, fixture_jsonl(20, 1));
        assert_eq!(a.lines().count(), 20);
    }
}
