//! Dataset directory layout.
//!
//! ```text
//! dataset.json  config.toml  mask.{f32,json}
//! train/ val/ test/NL0..NL3/ lesion/    {id}_input, {id}_target[, {id}_lesion]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ggdgan::data_sim::{
    add_image_noise, calibrate_noise, insert_lesion, lesion_support, make_mask, make_phantom,
    place_lesion, undersample_kspace, LesionSpec, NoiseDomain, NoiseLevel, NoiseLevelSpec, Phantom,
    SamplingMask,
};
use ggdgan::io::{read_json, read_volume, write_json, write_volume, ManifestExtras, Pairing};
use ggdgan::seed::derive_seed;
use ggdgan::training::{PairedVolumes, Task};
use ggdgan::volume::{Image, Volume};
use ggdgan::Error;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{prepare_output, write_config_echo};

pub const MANIFEST: &str = "dataset.json";
pub const MASK_STEM: &str = "mask";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub lesion: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionRecord {
    pub volume_id: String,
    pub spec: LesionSpec,
    pub support_voxels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task: Task,
    pub seed: u64,
    pub shape: [usize; 3],
    pub splits: Splits,
    pub noise_levels: Vec<NoiseLevelSpec>,
    pub mask_file: Option<String>,
    pub lesions: Vec<LesionRecord>,
}

impl DatasetManifest {
    pub fn noise_level(&self, level: NoiseLevel) -> CliResult<&NoiseLevelSpec> {
        self.noise_levels
            .iter()
            .find(|s| s.level == level)
            .ok_or_else(|| CliError::Config(format!("dataset has no {level} noise level")))
    }
}

/// Where a set of pairs lives inside the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test(NoiseLevel),
    Lesion,
}

impl Split {
    pub fn dir(self) -> PathBuf {
        match self {
            Split::Train => "train".into(),
            Split::Val => "val".into(),
            Split::Test(l) => Path::new("test").join(l.to_string()),
            Split::Lesion => "lesion".into(),
        }
    }

    pub fn ids(self, m: &DatasetManifest) -> &[String] {
        match self {
            Split::Train => &m.splits.train,
            Split::Val => &m.splits.val,
            Split::Test(_) => &m.splits.test,
            Split::Lesion => &m.splits.lesion,
        }
    }
}

pub fn volume_id(index: usize) -> String {
    format!("vol{index:03}")
}

fn domain(task: Task) -> NoiseDomain {
    match task {
        Task::Qe => NoiseDomain::Kspace,
        Task::Mp => NoiseDomain::Image,
    }
}

/// Input-contrast volume before corruption, and the target.
fn clean_pair(task: Task, p: &Phantom) -> (&Volume, &Volume) {
    match task {
        Task::Qe => (&p.t1, &p.t1),
        Task::Mp => (&p.t1, &p.t2),
    }
}

fn corrupt(
    vol: &Volume,
    spec: &NoiseLevelSpec,
    mask: Option<&SamplingMask>,
    seed: u64,
    index: usize,
) -> ggdgan::Result<Volume> {
    let stream = format!("noise-{}", spec.level);
    let slices = (0..vol.depth())
        .map(|z| {
            let s = derive_seed(seed, &stream, (index * vol.depth() + z) as u64);
            let img: Image = vol.slice(z);
            match (spec.domain, mask) {
                (NoiseDomain::Kspace, Some(m)) => undersample_kspace(&img, m, spec.sigma, s),
                (NoiseDomain::Kspace, None) => Err(Error::InvalidParameter {
                    name: "mask",
                    reason: "k-space corruption needs a mask".into(),
                }),
                (NoiseDomain::Image, _) => add_image_noise(&img, spec.sigma, s),
            }
        })
        .collect::<ggdgan::Result<Vec<_>>>()?;
    Volume::from_slices(&slices, vol.spacing())
}

fn write_pair(
    dir: &Path,
    id: &str,
    input: &Volume,
    target: &Volume,
    spec: &NoiseLevelSpec,
    mask_file: Option<&str>,
) -> CliResult<()> {
    let extras = |role: &str, partner: &str| ManifestExtras {
        pairing: Some(Pairing {
            role: role.into(),
            partner: Some(format!("{id}_{partner}")),
        }),
        noise_spec: Some(*spec),
        mask_file: mask_file.map(str::to_string),
    };
    write_volume(
        &dir.join(format!("{id}_input")),
        input,
        extras("input", "target"),
    )?;
    write_volume(
        &dir.join(format!("{id}_target")),
        target,
        extras("target", "input"),
    )?;
    Ok(())
}

/// Builds the full dataset under `cfg.paths.dataset`.
pub fn simulate(cfg: &RunConfig, force: bool) -> CliResult<DatasetManifest> {
    cfg.validate()?;
    let out = &cfg.paths.dataset;
    prepare_output(out, force)?;
    let dc = &cfg.data;
    let seed = cfg.seed;
    let task = cfg.task;
    let n_total = dc.n_train + dc.n_val + dc.n_test;
    let phantoms: Vec<Phantom> = (0..n_total)
        .map(|i| make_phantom(derive_seed(seed, "phantom", i as u64), dc.shape))
        .collect();
    let test_range = dc.n_train + dc.n_val..n_total;

    let mask = match task {
        Task::Qe => Some(make_mask(
            [dc.shape[1], dc.shape[2]],
            dc.coverage,
            derive_seed(seed, "mask", 0),
        )?),
        Task::Mp => None,
    };
    let mask_file = match &mask {
        Some(m) => {
            let [h, w] = m.shape();
            let vol = Volume::new(
                [1, h, w],
                [1.0; 3],
                m.grid().iter().map(|&v| v as f32).collect(),
            )?;
            write_volume(&out.join(MASK_STEM), &vol, ManifestExtras::default())?;
            Some(format!("{MASK_STEM}.json"))
        }
        None => None,
    };

    let dom = domain(task);
    let calib_set: Vec<Volume> = phantoms[test_range.clone()]
        .iter()
        .map(|p| clean_pair(task, p).0.clone())
        .collect();
    let mut levels = Vec::with_capacity(4);
    for level in NoiseLevel::ALL {
        let target = cfg.noise.targets_db[level.index()];
        let spec = match level {
            NoiseLevel::Nl0 if cfg.noise.nl0_sigma.is_some() => NoiseLevelSpec {
                sigma: cfg.noise.nl0_sigma.unwrap_or_default(),
                ..NoiseLevelSpec::clean(level, dom)
            },
            NoiseLevel::Nl0 if cfg.noise.clean_nl0 => NoiseLevelSpec::clean(level, dom),
            _ => calibrate_noise(&calib_set, level, target, dom, mask.as_ref())?,
        };
        levels.push(spec);
    }
    if levels.windows(2).any(|p| p[1].sigma <= p[0].sigma) {
        return Err(CliError::Config(format!(
            "noise sigmas must strictly increase across levels, got {:?}",
            levels.iter().map(|s| s.sigma).collect::<Vec<_>>()
        )));
    }

    let ids: Vec<String> = (0..n_total).map(volume_id).collect();
    let mask_ref = mask_file.as_deref().map(|f| format!("../{f}"));
    for (split, range) in [
        (Split::Train, 0..dc.n_train),
        (Split::Val, dc.n_train..dc.n_train + dc.n_val),
    ] {
        let dir = out.join(split.dir());
        for i in range {
            let (clean, target) = clean_pair(task, &phantoms[i]);
            let input = corrupt(clean, &levels[0], mask.as_ref(), seed, i)?;
            write_pair(
                &dir,
                &ids[i],
                &input,
                target,
                &levels[0],
                mask_ref.as_deref(),
            )?;
        }
    }
    let test_mask_ref = mask_file.as_deref().map(|f| format!("../../{f}"));
    for spec in &levels {
        let dir = out.join(Split::Test(spec.level).dir());
        for i in test_range.clone() {
            let (clean, target) = clean_pair(task, &phantoms[i]);
            let input = corrupt(clean, spec, mask.as_ref(), seed, i)?;
            write_pair(
                &dir,
                &ids[i],
                &input,
                target,
                spec,
                test_mask_ref.as_deref(),
            )?;
        }
    }

    let mut lesions = Vec::new();
    if task == Task::Mp {
        let dir = out.join(Split::Lesion.dir());
        for i in test_range.clone() {
            let p = &phantoms[i];
            let lc = &dc.lesion;
            let spec = place_lesion(
                p.t1.shape(),
                &p.brain_mask(),
                lc.radius,
                (lc.t1_delta, lc.t2_delta),
                derive_seed(seed, "lesion", i as u64),
            )?;
            let (t1, t2) = insert_lesion(&p.t1, &p.t2, &spec, &p.brain_mask())?;
            // Lesions first, then the in-distribution input noise.
            let input = corrupt(
                &t1,
                &levels[0],
                None,
                derive_seed(seed, "lesion-noise", 0),
                i,
            )?;
            write_pair(&dir, &ids[i], &input, &t2, &levels[0], None)?;
            let support = lesion_support(p.t1.shape(), &spec)?;
            let mut m = Volume::zeros(p.t1.shape());
            for &(k, _) in &support {
                m.data_mut()[k] = 1.0;
            }
            write_volume(
                &dir.join(format!("{}_lesion", ids[i])),
                &m,
                ManifestExtras {
                    pairing: Some(Pairing {
                        role: "lesion_support".into(),
                        partner: Some(format!("{}_target", ids[i])),
                    }),
                    ..ManifestExtras::default()
                },
            )?;
            lesions.push(LesionRecord {
                volume_id: ids[i].clone(),
                spec,
                support_voxels: support.len(),
            });
        }
    }

    let manifest = DatasetManifest {
        task,
        seed,
        shape: dc.shape,
        splits: Splits {
            train: ids[..dc.n_train].to_vec(),
            val: ids[dc.n_train..dc.n_train + dc.n_val].to_vec(),
            test: ids[test_range].to_vec(),
            lesion: lesions.iter().map(|l| l.volume_id.clone()).collect(),
        },
        noise_levels: levels,
        mask_file,
        lesions,
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    write_config_echo(out, cfg)?;
    Ok(manifest)
}

/// An existing dataset directory.
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: &Path) -> CliResult<Self> {
        let path = root.join(MANIFEST);
        if !path.is_file() {
            return Err(CliError::Config(format!(
                "no dataset at {}",
                root.display()
            )));
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest: read_json(&path)?,
        })
    }

    pub fn stem(&self, split: Split, id: &str, role: &str) -> PathBuf {
        self.root.join(split.dir()).join(format!("{id}_{role}"))
    }

    pub fn read(&self, split: Split, id: &str, role: &str) -> CliResult<Volume> {
        Ok(read_volume(&self.stem(split, id, role))?.0)
    }

    pub fn pairs(&self, split: Split) -> CliResult<PairedVolumes> {
        let ids = split.ids(&self.manifest);
        let input = ids
            .iter()
            .map(|id| self.read(split, id, "input"))
            .collect::<CliResult<Vec<_>>>()?;
        let target = ids
            .iter()
            .map(|id| self.read(split, id, "target"))
            .collect::<CliResult<Vec<_>>>()?;
        Ok(PairedVolumes::new(input, target)?)
    }

    pub fn mask(&self) -> CliResult<Option<SamplingMask>> {
        match &self.manifest.mask_file {
            Some(_) => {
                let (v, _) = read_volume(&self.root.join(MASK_STEM))?;
                let [_, h, w] = v.shape();
                Ok(Some(SamplingMask::from_grid(
                    h,
                    w,
                    v.data().iter().map(|&x| x as u8).collect(),
                )?))
            }
            None => Ok(None),
        }
    }
}

pub(crate) fn list_dirs(dir: &Path) -> CliResult<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        if entry.path().is_dir() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}
