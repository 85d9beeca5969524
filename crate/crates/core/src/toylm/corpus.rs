//! Deterministic synthetic byte-level corpus.
//!
//! Pseudo-text built from a seeded syllable vocabulary: Zipf-weighted
//! words, sentences of 3-11 words, occasional commas. The next-byte
//! distribution after a word boundary is genuinely multi-modal (many
//! words can follow), while within-word structure is highly predictable,
//! which is what gives a cross-entropy teacher something to learn.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "y"];
const CODAS: [&str; 6] = ["", "n", "r", "s", "t", "l"];

/// Generates about `n_bytes` of ASCII text, deterministically from the
/// seed. The lexicon is large and flat enough that many words share
/// prefixes, keeping next-byte distributions multi-modal well past the
/// first few ranks.
pub fn generate_corpus(seed: u64, n_bytes: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // A fixed lexicon of 1-4 syllable words.
    let mut lexicon: Vec<String> = Vec::with_capacity(600);
    while lexicon.len() < 600 {
        let syllables = rng.random_range(1..=4);
        let mut word = String::new();
        for _ in 0..syllables {
            word.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
            word.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
            word.push_str(CODAS[rng.random_range(0..CODAS.len())]);
        }
        if !lexicon.contains(&word) {
            lexicon.push(word);
        }
    }

    // Flattened Zipf cumulative weights over the lexicon.
    let weights: Vec<f64> = (0..lexicon.len())
        .map(|i| 1.0 / ((i + 1) as f64).powf(0.8))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cumulative.push(acc);
    }
    let pick_word = |rng: &mut ChaCha8Rng| -> &str {
        let u: f64 = rng.random();
        let slot = cumulative
            .partition_point(|&c| c < u)
            .min(lexicon.len() - 1);
        &lexicon[slot]
    };

    let mut out = Vec::with_capacity(n_bytes + 64);
    while out.len() < n_bytes {
        let sentence_words = rng.random_range(3..=11);
        for word_idx in 0..sentence_words {
            if word_idx > 0 {
                if rng.random_range(0..10) == 0 {
                    out.push(b',');
                }
                out.push(b' ');
            }
            out.extend_from_slice(pick_word(&mut rng).as_bytes());
        }
        out.push(b'.');
        if rng.random_range(0..6) == 0 {
            out.push(b'\n');
        } else {
            out.push(b' ');
        }
    }
    out.truncate(n_bytes);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_sized() {
        let a = generate_corpus(72, 10_000);
        let b = generate_corpus(72, 10_000);
        assert_eq!(a, b);
        assert_eq!(a.len(), 10_000);

        let c = generate_corpus(73, 10_000);
        assert_ne!(a, c);
    }

    #[test]
    fn corpus_is_printable_ascii() {
        let text = generate_corpus(1, 5_000);
        assert!(text
            .iter()
            .all(|&b| b == b'\n' || (0x20..0x7f).contains(&b)));
        // structure: spaces and periods appear
        assert!(text.contains(&b' '));
        assert!(text.contains(&b'.'));
    }
}
