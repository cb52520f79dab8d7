//! Chunked KV transfer between prefill and decode devices.

use serde::{Deserialize, Serialize};

/// When chunk transfers may start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeStart {
    /// Each chunk ships as soon as it is computed, overlapping later chunks' prefill.
    #[default]
    Overlapped,
    /// Nothing ships until the whole prompt is prefilled.
    Barrier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkTiming {
    pub tokens: u64,
    pub compute: (f64, f64),
    pub transfer: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdTimeline {
    pub chunks: Vec<ChunkTiming>,
    /// Decode can begin once the last chunk has arrived.
    pub decode_start: f64,
    pub transfer_time: f64,
    pub overlapped_time: f64,
    pub overlap_ratio: f64,
}

/// Lays out prefill compute and KV transfer per chunk, relative to time zero.
///
/// Transfer `i` overlaps the prefill of chunks after `i`; the overlap ratio is the
/// overlapped transfer time over total transfer time.
pub fn pd_transfer_schedule(
    prompt_tokens: u64,
    chunk_size: u64,
    link_rate: f64,
    prefill_per_token: f64,
    policy: DecodeStart,
) -> PdTimeline {
    assert!(chunk_size > 0, "chunk_size must be positive");
    assert!(link_rate > 0.0, "link_rate must be positive");
    let n = prompt_tokens.div_ceil(chunk_size).max(1);
    let mut chunks = Vec::with_capacity(n as usize);
    let mut t = 0.0;
    for i in 0..n {
        let tokens = chunk_size.min(prompt_tokens.saturating_sub(i * chunk_size));
        let end = t + tokens as f64 * prefill_per_token;
        chunks.push(ChunkTiming { tokens, compute: (t, end), transfer: (0.0, 0.0) });
        t = end;
    }
    let compute_end = t;
    let mut link_free = match policy {
        DecodeStart::Overlapped => 0.0,
        DecodeStart::Barrier => compute_end,
    };
    let mut transfer_time = 0.0;
    let mut overlapped_time = 0.0;
    for c in &mut chunks {
        let start = c.compute.1.max(link_free);
        let dur = c.tokens as f64 / link_rate;
        c.transfer = (start, start + dur);
        link_free = start + dur;
        transfer_time += dur;
        overlapped_time += (c.transfer.1.min(compute_end) - start.max(c.compute.1)).max(0.0);
    }
    let overlap_ratio = if transfer_time > 0.0 { overlapped_time / transfer_time } else { 0.0 };
    PdTimeline { decode_start: link_free, chunks, transfer_time, overlapped_time, overlap_ratio }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_chunk_has_no_overlap() {
        let t = pd_transfer_schedule(100, 512, 1000.0, 0.001, DecodeStart::Overlapped);
        assert_eq!(t.chunks.len(), 1);
        assert_eq!(t.overlap_ratio, 0.0);
    }

    #[test]
    fn cheap_transfers_approach_full_overlap() {
        let n = 200u64;
        let t = pd_transfer_schedule(n * 64, 64, 1e9, 0.01, DecodeStart::Overlapped);
        let slack = 1.0 / n as f64;
        assert!(t.overlap_ratio >= 1.0 - slack - 1e-12, "{}", t.overlap_ratio);
        assert!(t.overlap_ratio < 1.0);
    }

    #[test]
    fn four_chunk_gantt() {
        // prefill 1 s per chunk, transfer 0.5 s per chunk
        let t = pd_transfer_schedule(512, 128, 256.0, 1.0 / 128.0, DecodeStart::Overlapped);
        let want =
            [((0.0, 1.0), (1.0, 1.5)), ((1.0, 2.0), (2.0, 2.5)), ((2.0, 3.0), (3.0, 3.5)), ((3.0, 4.0), (4.0, 4.5))];
        for (c, (comp, tr)) in t.chunks.iter().zip(want) {
            assert_eq!((c.compute, c.transfer), (comp, tr));
        }
        assert_eq!(t.decode_start, 4.5);
        assert_eq!((t.transfer_time, t.overlapped_time, t.overlap_ratio), (2.0, 1.5, 0.75));

        let b = pd_transfer_schedule(512, 128, 256.0, 1.0 / 128.0, DecodeStart::Barrier);
        assert_eq!(b.chunks[0].transfer, (4.0, 4.5));
        assert_eq!(b.decode_start, 6.0);
        assert_eq!(b.overlap_ratio, 0.0);
    }

    #[test]
    fn slow_link_serialises_transfers() {
        // prefill 0.5 s per chunk, transfer 1 s per chunk
        let t = pd_transfer_schedule(384, 128, 128.0, 0.5 / 128.0, DecodeStart::Overlapped);
        let tr: Vec<(f64, f64)> = t.chunks.iter().map(|c| c.transfer).collect();
        assert_eq!(tr, vec![(0.5, 1.5), (1.5, 2.5), (2.5, 3.5)]);
        // compute ends at 1.5: only the first transfer overlaps, fully
        assert_eq!(t.overlapped_time, 1.0);
    }

    #[test]
    fn ragged_last_chunk() {
        let t = pd_transfer_schedule(300, 128, 128.0, 0.0, DecodeStart::Overlapped);
        assert_eq!(t.chunks.iter().map(|c| c.tokens).collect::<Vec<_>>(), vec![128, 128, 44]);
    }
}
