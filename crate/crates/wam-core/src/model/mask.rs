//! Boolean Q x KV attention mask built from the span rules.

use ndarray::Array2;

use super::layout::{spans_may_attend, SequenceLayout};

/// `mask[[q, k]] == true` means query token `q` may attend to key token `k`.
pub fn build_attention_mask(layout: &SequenceLayout) -> Array2<bool> {
    let n = layout.total;
    let mut mask = Array2::from_elem((n, n), false);
    for qs in &layout.spans {
        for ks in &layout.spans {
            if spans_may_attend(qs, ks) {
                for q in qs.range() {
                    for k in ks.range() {
                        mask[[q, k]] = true;
                    }
                }
            }
        }
    }
    mask
}
