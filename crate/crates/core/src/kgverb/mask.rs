use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_MASK_P: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskedToken {
    Word(String),
    /// Stands for the span `labels[i]`.
    Sentinel(usize),
}

/// An MLM input with its masked-out spans as labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedPair {
    pub masked_tokens: Vec<MaskedToken>,
    pub labels: Vec<Vec<String>>,
}

fn sentinel(i: usize) -> String {
    format!("<extra_id_{i}>")
}

impl MaskedPair {
    /// Splices the labels back in at their sentinels.
    pub fn unmask(&self) -> Vec<String> {
        let mut out = Vec::new();
        for tok in &self.masked_tokens {
            match tok {
                MaskedToken::Word(w) => out.push(w.clone()),
                MaskedToken::Sentinel(i) => out.extend(self.labels[*i].iter().cloned()),
            }
        }
        out
    }

    pub fn masked_count(&self) -> usize {
        self.labels.iter().map(Vec::len).sum()
    }

    /// Encoder input, sentinels rendered as `<extra_id_N>`.
    pub fn input_text(&self) -> String {
        self.masked_tokens
            .iter()
            .map(|t| match t {
                MaskedToken::Word(w) => w.clone(),
                MaskedToken::Sentinel(i) => sentinel(*i),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Decoder target: each sentinel followed by its span, closed by one
    /// more sentinel.
    pub fn target_text(&self) -> String {
        let mut parts = Vec::new();
        for (i, span) in self.labels.iter().enumerate() {
            parts.push(sentinel(i));
            parts.extend(span.iter().cloned());
        }
        parts.push(sentinel(self.labels.len()));
        parts.join(" ")
    }
}

pub fn tokenize(sentence: &str) -> Vec<String> {
    sentence.split_whitespace().map(str::to_string).collect()
}

/// Masks each token independently with `probability`; runs of masked tokens
/// collapse into one sentinel. Deterministic in `(tokens, probability, seed)`.
pub fn mask_tokens(tokens: &[String], probability: f64, seed: u64) -> MaskedPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masked_tokens = Vec::new();
    let mut labels: Vec<Vec<String>> = Vec::new();
    let mut in_span = false;
    for tok in tokens {
        let hit = rng.gen::<f64>() < probability;
        if hit {
            if in_span {
                labels.last_mut().expect("open span").push(tok.clone());
            } else {
                masked_tokens.push(MaskedToken::Sentinel(labels.len()));
                labels.push(vec![tok.clone()]);
                in_span = true;
            }
        } else {
            masked_tokens.push(MaskedToken::Word(tok.clone()));
            in_span = false;
        }
    }
    MaskedPair {
        masked_tokens,
        labels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("w{i}")).collect()
    }

    #[test]
    fn vanishing_probability_masks_nothing() {
        for seed in 0..20 {
            let p = mask_tokens(&words(10), 1e-12, seed);
            if !p
                .masked_tokens
                .iter()
                .any(|t| matches!(t, MaskedToken::Sentinel(_)))
            {
                assert!(p.labels.is_empty());
            }
        }
    }

    #[test]
    fn deterministic() {
        let t = words(50);
        assert_eq!(mask_tokens(&t, 0.15, 7), mask_tokens(&t, 0.15, 7));
    }

    #[test]
    fn extremes() {
        let t = words(5);
        let none = mask_tokens(&t, 0.0, 1);
        assert!(none.labels.is_empty());
        let all = mask_tokens(&t, 1.0, 1);
        assert_eq!(all.masked_tokens, vec![MaskedToken::Sentinel(0)]);
        assert_eq!(all.labels, vec![t.clone()]);
        assert_eq!(all.unmask(), t);
    }

    #[test]
    fn fraction_concentrates() {
        let p = mask_tokens(&words(10_000), 0.15, 2024);
        let frac = p.masked_count() as f64 / 10_000.0;
        let sigma = (0.15f64 * 0.85 / 10_000.0).sqrt();
        assert!((frac - 0.15).abs() <= 3.0 * sigma, "{frac}");
    }

    #[test]
    fn text_forms() {
        let pair = MaskedPair {
            masked_tokens: vec![
                MaskedToken::Word("a".into()),
                MaskedToken::Sentinel(0),
                MaskedToken::Word("d".into()),
            ],
            labels: vec![vec!["b".into(), "c".into()]],
        };
        assert_eq!(pair.input_text(), "a <extra_id_0> d");
        assert_eq!(pair.target_text(), "<extra_id_0> b c <extra_id_1>");
    }

    proptest! {
        #[test]
        fn unmask_round_trip(toks in prop::collection::vec("[a-z<>_0-9]{1,8}", 1..40), p in 0.0f64..1.0, seed in any::<u64>()) {
            let pair = mask_tokens(&toks, p, seed);
            prop_assert_eq!(pair.unmask(), toks);
            // adjacent sentinels never occur: runs are merged
            for w in pair.masked_tokens.windows(2) {
                prop_assert!(!(matches!(w[0], MaskedToken::Sentinel(_)) && matches!(w[1], MaskedToken::Sentinel(_))));
            }
        }
    }
}
