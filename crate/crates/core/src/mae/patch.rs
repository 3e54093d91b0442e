//! Images are stored row-major as height x width x channels.

use crate::error::{Error, Result};

/// For every (patch, element) position, the flat pixel index it reads.
/// Patches are numbered row-major over the patch grid; inside a patch the
/// order is row, column, channel.
pub fn patch_index_map(height: usize, width: usize, channels: usize, patch: usize) -> Result<Vec<usize>> {
    if patch == 0 || !height.is_multiple_of(patch) || !width.is_multiple_of(patch) {
        return Err(Error::config(format!(
            "image {height}x{width} is not divisible into {patch}x{patch} patches"
        )));
    }
    let (gh, gw) = (height / patch, width / patch);
    let mut map = Vec::with_capacity(height * width * channels);
    for py in 0..gh {
        for px in 0..gw {
            for r in 0..patch {
                for c in 0..patch {
                    let (y, x) = (py * patch + r, px * patch + c);
                    for ch in 0..channels {
                        map.push((y * width + x) * channels + ch);
                    }
                }
            }
        }
    }
    Ok(map)
}

pub fn patchify(image: &[f64], height: usize, width: usize, channels: usize, patch: usize) -> Result<Vec<Vec<f64>>> {
    if image.len() != height * width * channels {
        return Err(Error::shape(
            "patchify",
            format!("{} values for a {height}x{width}x{channels} image", image.len()),
        ));
    }
    let map = patch_index_map(height, width, channels, patch)?;
    let plen = patch * patch * channels;
    Ok(map
        .chunks(plen)
        .map(|idx| idx.iter().map(|&i| image[i]).collect())
        .collect())
}

pub fn unpatchify(
    patches: &[Vec<f64>],
    height: usize,
    width: usize,
    channels: usize,
    patch: usize,
) -> Result<Vec<f64>> {
    let map = patch_index_map(height, width, channels, patch)?;
    let plen = patch * patch * channels;
    if patches.len() * plen != map.len() || patches.iter().any(|p| p.len() != plen) {
        return Err(Error::shape("unpatchify", "patch count or length mismatch"));
    }
    let mut image = vec![0.0; map.len()];
    for (idx, p) in map.chunks(plen).zip(patches) {
        for (&i, &v) in idx.iter().zip(p) {
            image[i] = v;
        }
    }
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_by_four_into_four_patches() {
        let image: Vec<f64> = (0..16).map(f64::from).collect();
        let patches = patchify(&image, 4, 4, 1, 2).unwrap();
        assert_eq!(patches.len(), 4);
        assert_eq!(patches[0], vec![0.0, 1.0, 4.0, 5.0]);
        assert_eq!(patches[1], vec![2.0, 3.0, 6.0, 7.0]);
        assert_eq!(patches[3], vec![10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn twenty_eight_pixels_make_a_14_by_14_grid() {
        let image = vec![0.5; 28 * 28];
        assert_eq!(patchify(&image, 28, 28, 1, 2).unwrap().len(), 196);
    }

    #[test]
    fn indivisible_is_a_config_error() {
        let image = vec![0.0; 25];
        assert!(matches!(patchify(&image, 5, 5, 1, 2), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn unpatchify_inverts_patchify(
            grid in 1usize..4,
            patch in 1usize..4,
            channels in 1usize..4,
            seed in any::<u64>(),
        ) {
            let side = grid * patch;
            let n = side * side * channels;
            let image: Vec<f64> = (0..n)
                .map(|i| ((seed.wrapping_add(i as u64)).wrapping_mul(2654435761) % 1000) as f64 / 999.0)
                .collect();
            let patches = patchify(&image, side, side, channels, patch).unwrap();
            let back = unpatchify(&patches, side, side, channels, patch).unwrap();
            prop_assert_eq!(back, image);
        }
    }
}
