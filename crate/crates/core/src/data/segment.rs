//! Sliding-window segmentation of long documents.

use super::document::{Document, Entity, Segment};

/// Window origins `0, stride, 2*stride, ...` below the token count.
pub fn window_origins(len: usize, stride: usize) -> Vec<usize> {
    (0..len).step_by(stride).collect()
}

/// Splits `doc` into windows of at most `max_len` tokens. Entities that are
/// not fully inside a window are dropped from that window only.
///
/// Panics unless `1 <= stride <= max_len`.
pub fn segment(doc: &Document, max_len: usize, stride: usize) -> Vec<Segment> {
    assert!(
        stride >= 1 && stride <= max_len,
        "segment: need 1 <= stride ({stride}) <= max_len ({max_len})"
    );
    window_origins(doc.len(), stride)
        .into_iter()
        .map(|origin| {
            let end = (origin + max_len).min(doc.len());
            let entities = doc
                .entities
                .iter()
                .filter(|e| e.start >= origin && e.end < end)
                .map(|e| Entity::new(e.start - origin, e.end - origin, e.type_id))
                .collect();
            Segment {
                parent_id: doc.id.clone(),
                origin,
                tokens: doc.tokens[origin..end].to_vec(),
                entities,
            }
        })
        .collect()
}

/// Treats a whole document as one segment.
pub fn whole(doc: &Document) -> Segment {
    Segment {
        parent_id: doc.id.clone(),
        origin: 0,
        tokens: doc.tokens.clone(),
        entities: doc.entities.clone(),
    }
}
