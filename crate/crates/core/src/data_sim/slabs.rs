use crate::error::{Error, Result};
use crate::volume::Volume;

/// `C` adjacent slices centred on `center`, stored `C×H×W`.
#[derive(Clone, Debug, PartialEq)]
pub struct SlabBatch {
    pub center: usize,
    /// Half-open slice range `[start, end)` of the source volume.
    pub span: (usize, usize),
    pub data: Vec<f32>,
}

pub fn slab_centers(depth: usize, slab_depth: usize, stride: usize) -> Result<Vec<usize>> {
    if slab_depth == 0 || slab_depth % 2 == 0 {
        return Err(Error::invalid(
            "slab_depth",
            format!("must be odd, got {slab_depth}"),
        ));
    }
    if slab_depth > depth {
        return Err(Error::invalid(
            "slab_depth",
            format!("{slab_depth} exceeds volume depth {depth}"),
        ));
    }
    if stride == 0 {
        return Err(Error::invalid("stride", "must be >= 1"));
    }
    let half = slab_depth / 2;
    let last = depth - half - 1;
    let mut centers: Vec<usize> = (half..=last).step_by(stride).collect();
    if centers.last() != Some(&last) {
        centers.push(last);
    }
    Ok(centers)
}

pub fn extract_slabs(vol: &Volume, slab_depth: usize, stride: usize) -> Result<Vec<SlabBatch>> {
    let centers = slab_centers(vol.depth(), slab_depth, stride)?;
    let half = slab_depth / 2;
    let [_, h, w] = vol.shape();
    Ok(centers
        .into_iter()
        .map(|c| {
            let span = (c - half, c + half + 1);
            SlabBatch {
                center: c,
                span,
                data: vol.data()[span.0 * h * w..span.1 * h * w].to_vec(),
            }
        })
        .collect())
}
