use crate::codebook::bits_per_index;
use crate::error::{Error, Result};

/// Codebook indices of one image, in patch order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexFrame {
    pub indices: Vec<usize>,
    pub codebook_size: usize,
}

impl IndexFrame {
    pub fn new(indices: Vec<usize>, codebook_size: usize) -> Result<Self> {
        if codebook_size < 2 {
            return Err(Error::config(format!("codebook size {codebook_size} < 2")));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= codebook_size) {
            return Err(Error::contract(format!("index {bad} outside [0, {codebook_size})")));
        }
        Ok(Self { indices, codebook_size })
    }

    pub fn bits_per_index(&self) -> usize {
        bits_per_index(self.codebook_size)
    }

    pub fn bit_len(&self) -> usize {
        self.indices.len() * self.bits_per_index()
    }
}

/// Big-endian, fixed-width packing of each index, concatenated in order.
pub fn serialize_indices(frame: &IndexFrame) -> Result<Vec<bool>> {
    let width = frame.bits_per_index();
    let mut bits = Vec::with_capacity(frame.bit_len());
    for &idx in &frame.indices {
        if idx >= frame.codebook_size {
            return Err(Error::contract(format!(
                "index {idx} outside [0, {})",
                frame.codebook_size
            )));
        }
        for b in (0..width).rev() {
            bits.push((idx >> b) & 1 == 1);
        }
    }
    Ok(bits)
}

/// Inverse of [`serialize_indices`]. A corrupted pattern that lands outside
/// the codebook wraps modulo its size, so every output index is valid.
pub fn deserialize_indices(bits: &[bool], codebook_size: usize) -> Result<IndexFrame> {
    let width = bits_per_index(codebook_size);
    if width == 0 || !bits.len().is_multiple_of(width) {
        return Err(Error::Framing(format!(
            "{} bits is not a whole number of {width}-bit indices",
            bits.len()
        )));
    }
    let indices = bits
        .chunks(width)
        .map(|chunk| chunk.iter().fold(0usize, |acc, &b| (acc << 1) | usize::from(b)) % codebook_size)
        .collect();
    IndexFrame::new(indices, codebook_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn to_string(bits: &[bool]) -> String {
        bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    #[test]
    fn extremes_pack_big_endian() {
        let frame = IndexFrame::new(vec![0, 255], 256).unwrap();
        assert_eq!(to_string(&serialize_indices(&frame).unwrap()), "0000000011111111");
        let frame = IndexFrame::new(vec![1, 128], 256).unwrap();
        assert_eq!(to_string(&serialize_indices(&frame).unwrap()), "0000000110000000");
    }

    #[test]
    fn ninety_eight_indices_are_784_bits() {
        let frame = IndexFrame::new(vec![7; 98], 256).unwrap();
        assert_eq!(serialize_indices(&frame).unwrap().len(), 784);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        assert!(matches!(IndexFrame::new(vec![256], 256), Err(Error::Contract(_))));
    }

    #[test]
    fn one_flipped_bit_gives_another_valid_index() {
        let frame = IndexFrame::new(vec![77], 256).unwrap();
        let mut bits = serialize_indices(&frame).unwrap();
        bits[3] = !bits[3];
        let back = deserialize_indices(&bits, 256).unwrap();
        assert_ne!(back.indices[0], 77);
        assert!(back.indices[0] < 256);
    }

    proptest! {
        #[test]
        fn round_trip(size in 2usize..1000, raw in prop::collection::vec(any::<usize>(), 0..50)) {
            let indices: Vec<usize> = raw.into_iter().map(|i| i % size).collect();
            let frame = IndexFrame::new(indices, size).unwrap();
            let bits = serialize_indices(&frame).unwrap();
            prop_assert_eq!(bits.len(), frame.bit_len());
            prop_assert_eq!(deserialize_indices(&bits, size).unwrap(), frame);
        }
    }
}
