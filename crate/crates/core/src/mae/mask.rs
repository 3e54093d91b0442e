use crate::error::{Error, Result};
use crate::mae::config::masked_count;
use crate::numerics::RngStream;

/// Which patches the encoder sees. Both index lists are sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPlan {
    pub total_patches: usize,
    pub masked: Vec<usize>,
    pub unmasked: Vec<usize>,
    pub ratio: f64,
}

impl MaskPlan {
    /// A plan that hides nothing.
    pub fn none(total_patches: usize) -> Self {
        Self {
            total_patches,
            masked: Vec::new(),
            unmasked: (0..total_patches).collect(),
            ratio: 0.0,
        }
    }

    pub fn is_masked(&self, patch: usize) -> bool {
        self.masked.binary_search(&patch).is_ok()
    }

    /// Rank of `patch` among the unmasked patches.
    pub fn unmasked_rank(&self, patch: usize) -> Option<usize> {
        self.unmasked.binary_search(&patch).ok()
    }
}

/// Uniformly random subset of `round(ratio * total)` masked patches.
pub fn sample_mask(total_patches: usize, ratio: f64, rng: &mut RngStream) -> Result<MaskPlan> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::config(format!("masking ratio {ratio} outside [0, 1]")));
    }
    let count = masked_count(total_patches, ratio);
    let mut order: Vec<usize> = (0..total_patches).collect();
    rng.shuffle(&mut order);
    let mut masked = order[..count].to_vec();
    let mut unmasked = order[count..].to_vec();
    masked.sort_unstable();
    unmasked.sort_unstable();
    Ok(MaskPlan {
        total_patches,
        masked,
        unmasked,
        ratio,
    })
}
