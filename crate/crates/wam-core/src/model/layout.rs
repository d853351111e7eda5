//! Token sequence layout: which rows of the packed sequence belong to which
//! span, and the attention rules between spans.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpanKind {
    Text,
    CleanVideo,
    NoisyVideo,
    State,
    Action,
}

/// A contiguous run of tokens with one role. `chunk` is 1-based; text uses 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub kind: SpanKind,
    pub chunk: usize,
    pub start: usize,
    pub len: usize,
}

impl Span {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Ordered spans covering the packed sequence: text, then the clean-video
/// context chunks, then one noisy group (noisy video, state token, action
/// span) per chunk being denoised.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceLayout {
    pub spans: Vec<Span>,
    pub total: usize,
    pub m_eff: usize,
    pub n_text: usize,
}

impl SequenceLayout {
    /// Training layout: clean context spans carry chunk ids `1..m_eff-1`
    /// (chunk `m_eff`'s clean copy is never attended) and noisy groups carry
    /// ids `1..=m_eff`, so noisy chunk `k` sees exactly the clean chunks
    /// before it — including none at all for `k = 1`.
    pub fn training(
        m_eff: usize,
        video_tokens_per_chunk: usize,
        h: usize,
        n_text: usize,
    ) -> Self {
        let clean_lens = vec![video_tokens_per_chunk; m_eff.saturating_sub(1)];
        Self::build(&clean_lens, m_eff, 0, video_tokens_per_chunk, h, n_text)
    }

    /// Inference layout: the cached clean context (possibly with partial
    /// chunks) followed by one noisy group that sees all of it.
    pub fn single_noisy(
        clean_lens: &[usize],
        video_tokens_per_chunk: usize,
        h: usize,
        n_text: usize,
    ) -> Self {
        Self::build(
            clean_lens,
            1,
            clean_lens.len(),
            video_tokens_per_chunk,
            h,
            n_text,
        )
    }

    /// General layout. Clean spans are numbered `1..=clean_lens.len()`;
    /// noisy group `k` gets chunk id `noisy_chunk_offset + k`.
    pub fn build(
        clean_lens: &[usize],
        n_noisy: usize,
        noisy_chunk_offset: usize,
        video_tokens_per_chunk: usize,
        h: usize,
        n_text: usize,
    ) -> Self {
        let mut spans = Vec::new();
        let mut at = 0usize;
        let mut push = |kind, chunk, len: usize, at: &mut usize| {
            spans.push(Span {
                kind,
                chunk,
                start: *at,
                len,
            });
            *at += len;
        };
        push(SpanKind::Text, 0, n_text, &mut at);
        for (j, &len) in clean_lens.iter().enumerate() {
            push(SpanKind::CleanVideo, j + 1, len, &mut at);
        }
        for k in 1..=n_noisy {
            let chunk = noisy_chunk_offset + k;
            push(SpanKind::NoisyVideo, chunk, video_tokens_per_chunk, &mut at);
            push(SpanKind::State, chunk, 1, &mut at);
            push(SpanKind::Action, chunk, h, &mut at);
        }
        Self {
            spans,
            total: at,
            m_eff: n_noisy,
            n_text,
        }
    }

    pub fn span(&self, kind: SpanKind, chunk: usize) -> Option<&Span> {
        self.spans
            .iter()
            .find(|s| s.kind == kind && s.chunk == chunk)
    }

    /// Number of clean context spans.
    pub fn n_clean(&self) -> usize {
        self.spans
            .iter()
            .filter(|s| s.kind == SpanKind::CleanVideo)
            .count()
    }

    /// Span covering a token index.
    pub fn span_of(&self, token: usize) -> &Span {
        self.spans
            .iter()
            .find(|s| s.range().contains(&token))
            .expect("token within layout")
    }
}

/// The attention rule between a query span and a key span:
/// (a) every query may attend to text;
/// (b) clean video attends to clean video of the same or earlier chunks;
/// (c) a noisy group attends to strictly earlier clean chunks and to every
///     token of its own group;
/// (d) noisy groups never see other noisy groups;
/// (e) clean spans never see noisy spans.
pub fn spans_may_attend(q: &Span, k: &Span) -> bool {
    if k.kind == SpanKind::Text {
        return true;
    }
    let q_noisy = matches!(
        q.kind,
        SpanKind::NoisyVideo | SpanKind::State | SpanKind::Action
    );
    let k_noisy = matches!(
        k.kind,
        SpanKind::NoisyVideo | SpanKind::State | SpanKind::Action
    );
    match (q.kind, k.kind) {
        (SpanKind::CleanVideo, SpanKind::CleanVideo) => k.chunk <= q.chunk,
        _ if q_noisy && k.kind == SpanKind::CleanVideo => k.chunk < q.chunk,
        _ if q_noisy && k_noisy => k.chunk == q.chunk,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_deterministic_and_covers() {
        let a = SequenceLayout::training(4, 32, 4, 4);
        let b = SequenceLayout::training(4, 32, 4, 4);
        assert_eq!(a, b);
        assert_eq!(a.total, 4 + 3 * 32 + 4 * (32 + 1 + 4));
        // Spans are disjoint and cover the sequence.
        let mut covered = vec![false; a.total];
        for s in &a.spans {
            for i in s.range() {
                assert!(!covered[i], "overlap at {i}");
                covered[i] = true;
            }
        }
        assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn action_span_token_count_tracks_config() {
        for (k, h, n_tok) in [(2usize, 4usize, 16usize), (1, 2, 16), (2, 8, 4)] {
            for m_eff in 1..=4 {
                let l = SequenceLayout::training(m_eff, k * n_tok, h, 4);
                for c in 1..=m_eff {
                    let action = l
                        .spans
                        .iter()
                        .find(|s| s.kind == SpanKind::Action && s.chunk == c)
                        .unwrap();
                    assert_eq!(action.len, h);
                }
            }
        }
    }

    #[test]
    fn first_noisy_group_has_no_clean_context() {
        let l = SequenceLayout::training(3, 32, 4, 4);
        let noisy1 = l.span(SpanKind::NoisyVideo, 1).unwrap();
        for s in &l.spans {
            if s.kind == SpanKind::CleanVideo {
                assert!(!spans_may_attend(noisy1, s));
            }
        }
    }
}
