use crate::decode::{conflicts, SpanPrediction};
use crate::error::{Error, Result};
use crate::numerics::Scalar;

pub const EXHAUSTIVE_CAP: usize = 12;

/// Conflict-free subset with the largest total score, by enumeration.
pub fn exhaustive_decode(candidates: &[SpanPrediction]) -> Result<Vec<SpanPrediction>> {
    let n = candidates.len();
    if n > EXHAUSTIVE_CAP {
        return Err(Error::OracleCap {
            len: n,
            cap: EXHAUSTIVE_CAP,
        });
    }
    let mut best = (Scalar::NEG_INFINITY, 0u32);
    'subsets: for mask in 0u32..(1 << n) {
        let mut total = 0.0;
        for a in 0..n {
            if mask & (1 << a) == 0 {
                continue;
            }
            for b in a + 1..n {
                if mask & (1 << b) != 0 && conflicts(&candidates[a], &candidates[b]) {
                    continue 'subsets;
                }
            }
            total += candidates[a].score;
        }
        if total > best.0 {
            best = (total, mask);
        }
    }
    let mut out: Vec<SpanPrediction> = (0..n).filter(|a| best.1 & (1 << a) != 0).map(|a| candidates[a]).collect();
    out.sort_by_key(|p| (p.start, p.end, p.type_id));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::resolve_conflicts;

    fn sp(start: usize, end: usize, type_id: usize, score: Scalar) -> SpanPrediction {
        SpanPrediction {
            start,
            end,
            type_id,
            score,
        }
    }

    #[test]
    fn greedy_can_be_suboptimal() {
        let c = [sp(2, 5, 0, 0.9), sp(0, 3, 0, 0.6), sp(4, 7, 0, 0.6)];
        assert_eq!(resolve_conflicts(&c), vec![sp(2, 5, 0, 0.9)]);
        assert_eq!(exhaustive_decode(&c).unwrap(), vec![sp(0, 3, 0, 0.6), sp(4, 7, 0, 0.6)]);
    }

    #[test]
    fn cap_is_enforced() {
        let c: Vec<SpanPrediction> = (0..13).map(|i| sp(i, i, 0, 1.0)).collect();
        assert!(exhaustive_decode(&c).is_err());
    }
}
