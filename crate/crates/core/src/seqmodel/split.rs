use crate::features::SampleBatch;

/// Partition of the valid sequence positions by stock type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMasks {
    pub multi: Vec<bool>,
    pub limited: Vec<bool>,
}

/// Mask-based split: an item is limited-stock when it had a single unit.
pub fn split_sequence(batch: &SampleBatch) -> SplitMasks {
    let limited = batch.mask.iter().zip(&batch.seq_limited).map(|(&v, &l)| v && l).collect();
    let multi = batch.mask.iter().zip(&batch.seq_limited).map(|(&v, &l)| v && !l).collect();
    SplitMasks { multi, limited }
}

/// Sample-construction split: two batches whose sequences hold only the
/// multi-stock or only the limited-stock positions, kept in their original
/// order and right-padded to the same length.
pub fn physical_split(batch: &SampleBatch) -> (SampleBatch, SampleBatch) {
    let keep = |want_limited: bool| {
        let mut out = batch.clone();
        let h = batch.max_len;
        out.seq_item = vec![0; batch.seq_item.len()];
        out.seq_category = vec![0; batch.seq_category.len()];
        out.mask = vec![false; batch.mask.len()];
        out.seq_limited = vec![false; batch.seq_limited.len()];
        for b in 0..batch.batch_size {
            let mut w = b * h;
            for p in batch.positions(b) {
                if batch.mask[p] && batch.seq_limited[p] == want_limited {
                    out.seq_item[w] = batch.seq_item[p];
                    out.seq_category[w] = batch.seq_category[p];
                    out.mask[w] = true;
                    out.seq_limited[w] = want_limited;
                    w += 1;
                }
            }
        }
        out
    };
    (keep(false), keep(true))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(mask: Vec<bool>, limited: Vec<bool>) -> SampleBatch {
        let n = mask.len();
        SampleBatch {
            batch_size: 1,
            max_len: n,
            target_item: vec![1],
            target_category: vec![1],
            seq_item: (1..=n).collect(),
            seq_category: vec![1; n],
            mask,
            seq_limited: limited,
            labels: vec![1.0],
            is_new: vec![false],
            is_limited: vec![false],
            user_id: vec![1],
            item_id: vec![1],
        }
    }

    #[test]
    fn flags_define_the_split() {
        let b = batch(vec![true, true, true, false], vec![true, false, true, false]);
        let s = split_sequence(&b);
        assert_eq!(s.limited, vec![true, false, true, false]);
        assert_eq!(s.multi, vec![false, true, false, false]);
    }

    #[test]
    fn all_limited_leaves_multi_empty() {
        let b = batch(vec![true, true], vec![true, true]);
        let s = split_sequence(&b);
        assert!(s.multi.iter().all(|m| !m));
    }

    #[test]
    fn physical_split_compacts_in_order() {
        let b = batch(vec![true, true, true, false], vec![true, false, true, false]);
        let (multi, limited) = physical_split(&b);
        assert_eq!(limited.seq_item, vec![1, 3, 0, 0]);
        assert_eq!(limited.mask, vec![true, true, false, false]);
        assert_eq!(multi.seq_item, vec![2, 0, 0, 0]);
        assert_eq!(multi.mask, vec![true, false, false, false]);
    }
}
