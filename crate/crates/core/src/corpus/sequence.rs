use std::ops::Range;

use super::{PremiseView, Tokenizer};
use crate::error::{Error, Result};

/// An encoded `[CLS] S [SEP] P [SEP]` sequence (or, with several leading
/// segments, `[CLS] S1 [SEP] S2 [SEP] P [SEP]`).
///
/// `spans` holds one contiguous range per segment: the leading hypothesis
/// segments first, then one per premise sentence. Premise sentences dropped
/// by truncation keep an empty range and are flagged in `truncated`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub token_ids: Vec<u32>,
    /// 0 for the leading segments (and `[CLS]`), 1 for the premise.
    pub type_ids: Vec<u8>,
    pub spans: Vec<Range<usize>>,
    /// One flag per premise sentence.
    pub truncated: Vec<bool>,
    pub leading_segments: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn num_special(&self) -> usize {
        self.leading_segments + 2
    }

    /// Hypothesis span `I_1`.
    pub fn hypothesis_span(&self) -> &Range<usize> {
        &self.spans[0]
    }

    /// Span of premise sentence `i` (0-based).
    pub fn premise_span(&self, i: usize) -> &Range<usize> {
        &self.spans[self.leading_segments + i]
    }

    pub fn premise_len(&self) -> usize {
        self.spans.len() - self.leading_segments
    }
}

/// Encodes one hypothesis against a premise.
pub fn encode_pair(
    hypothesis: &str,
    premise: &PremiseView,
    tokenizer: &Tokenizer,
    max_len: usize,
) -> Result<TokenSequence> {
    encode_segments(&[hypothesis], premise, tokenizer, max_len)
}

/// Encodes leading text segments followed by a premise. Premise sentences
/// that do not fit are dropped from the tail; leading segments are never
/// truncated.
pub fn encode_segments(
    leading: &[&str],
    premise: &PremiseView,
    tokenizer: &Tokenizer,
    max_len: usize,
) -> Result<TokenSequence> {
    assert!(!leading.is_empty(), "at least one leading segment");
    let cls = tokenizer.cls_id();
    let sep = tokenizer.sep_id();

    let mut token_ids = vec![cls];
    let mut type_ids = vec![0u8];
    let mut spans = Vec::with_capacity(leading.len() + premise.m());
    for (k, text) in leading.iter().enumerate() {
        let toks = tokenizer.tokenize(text);
        if toks.is_empty() {
            return Err(Error::Argument(format!("leading segment {k} tokenizes to nothing")));
        }
        let start = token_ids.len();
        token_ids.extend(&toks);
        type_ids.extend(std::iter::repeat_n(0u8, toks.len()));
        spans.push(start..token_ids.len());
        token_ids.push(sep);
        type_ids.push(0);
    }
    // trailing [SEP] must also fit
    if token_ids.len() + 1 > max_len {
        return Err(Error::Unencodable { needed: token_ids.len() + 1, max_len });
    }

    let mut truncated = Vec::with_capacity(premise.m());
    let mut full = false;
    for sentence in &premise.sentences {
        let toks = tokenizer.tokenize(sentence);
        if full || toks.is_empty() || token_ids.len() + toks.len() + 1 > max_len {
            full = full || !toks.is_empty();
            let at = token_ids.len();
            spans.push(at..at);
            truncated.push(true);
            continue;
        }
        let start = token_ids.len();
        token_ids.extend(&toks);
        type_ids.extend(std::iter::repeat_n(1u8, toks.len()));
        spans.push(start..token_ids.len());
        truncated.push(false);
    }
    token_ids.push(sep);
    type_ids.push(1);

    Ok(TokenSequence {
        token_ids,
        type_ids,
        spans,
        truncated,
        leading_segments: leading.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Section, SentenceOrigin, TrialSide};

    fn view(sentences: &[&str]) -> PremiseView {
        PremiseView {
            sentences: sentences.iter().map(|s| s.to_string()).collect(),
            origins: (0..sentences.len())
                .map(|i| SentenceOrigin {
                    trial_id: "T".into(),
                    side: TrialSide::Primary,
                    section: Section::Results,
                    original_index: Some(i),
                })
                .collect(),
        }
    }

    fn tok() -> Tokenizer {
        Tokenizer::build(["a b c d e f g h i j k l m n o p q r s t u v w x y z"], 1)
    }

    #[test]
    fn layout_and_span_sizes() {
        let t = tok();
        let seq = encode_pair("a b c d e", &view(&["f g h", "i j k l"]), &t, 512).unwrap();
        // manual count: 5 + 3 + 4 tokens + [CLS] [SEP] [SEP]
        assert_eq!(seq.len(), 15);
        let sizes: Vec<usize> = seq.spans.iter().map(|r| r.len()).collect();
        assert_eq!(sizes, vec![5, 3, 4]);
        assert_eq!(seq.token_ids[0], t.cls_id());
        assert_eq!(seq.token_ids[6], t.sep_id());
        assert_eq!(seq.token_ids[14], t.sep_id());
        assert_eq!(seq.type_ids.iter().filter(|&&x| x == 0).count(), 7);
        let covered: usize = sizes.iter().sum();
        assert_eq!(covered + seq.num_special(), seq.len());
    }

    #[test]
    fn tail_sentences_are_truncated_first() {
        let t = tok();
        let seq = encode_pair("a b", &view(&["c d e", "f g", "h i j k"]), &t, 10).unwrap();
        // 1 + 2 + 1 + 3 + 2 + 1 = 10 fits; the third sentence does not
        assert_eq!(seq.len(), 10);
        assert_eq!(seq.truncated, vec![false, false, true]);
        assert!(seq.premise_span(2).is_empty());
    }

    #[test]
    fn once_full_later_sentences_stay_dropped() {
        let t = tok();
        let seq = encode_pair("a", &view(&["b c d e f", "g"]), &t, 6).unwrap();
        assert_eq!(seq.truncated, vec![true, true]);
        assert_eq!(seq.len(), 4);
    }

    #[test]
    fn overlong_hypothesis_is_unencodable() {
        let t = tok();
        let err = encode_pair("a b c d e f", &view(&["g"]), &t, 8).unwrap_err();
        assert!(matches!(err, Error::Unencodable { needed: 9, max_len: 8 }));
    }

    #[test]
    fn pair_layout_has_four_specials() {
        let t = tok();
        let seq = encode_segments(&["a b", "c"], &view(&["d e"]), &t, 64).unwrap();
        assert_eq!(seq.len(), 2 + 1 + 2 + 4);
        assert_eq!(seq.token_ids[3], t.sep_id());
        assert_eq!(seq.token_ids[5], t.sep_id());
        assert_eq!(seq.premise_len(), 1);
    }
}
