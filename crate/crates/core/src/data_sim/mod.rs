//! Paired dataset construction: phantoms, k-space and image-space
//! degradation, noise calibration, lesions and 2.5D slabs.

mod kspace;
mod lesion;
mod noise;
mod phantom;
mod slabs;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use kspace::{fft2, ifft2, make_mask, undersample_kspace, SamplingMask, CENTER_FRACTION};
pub use lesion::{insert_lesion, lesion_support, place_lesion, LesionSpec};
pub use noise::{
    add_image_noise, calibrate_noise, corrupt_slice, mean_corrupted_psnr, NoiseLevelSpec,
    CALIBRATION_TOLERANCE_DB,
};
pub use phantom::{make_phantom, Phantom, Tissue};
pub use slabs::{extract_slabs, slab_centers, SlabBatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NoiseLevel {
    #[serde(rename = "NL0")]
    Nl0,
    #[serde(rename = "NL1")]
    Nl1,
    #[serde(rename = "NL2")]
    Nl2,
    #[serde(rename = "NL3")]
    Nl3,
}

impl NoiseLevel {
    pub const ALL: [NoiseLevel; 4] = [
        NoiseLevel::Nl0,
        NoiseLevel::Nl1,
        NoiseLevel::Nl2,
        NoiseLevel::Nl3,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for NoiseLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NL{}", self.index())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDomain {
    Kspace,
    Image,
}
