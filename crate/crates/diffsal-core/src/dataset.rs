//! Loads a generated dataset back into training and evaluation form.
//!
//! A manifest row points at four artifacts per sample; this module turns
//! them into model-ready tensors: the packed clip, log-mel slices computed
//! from the waveform, and the ground truth both as a training target
//! `(H, W, 1)` and as a scoring map with its fixations.

use std::path::Path;

use crate::audio::{self, FrontendConfig};
use crate::error::{Error, Result};
use crate::io::{dstn, manifest, pgm, read_fixations};
use crate::metrics::{FixationSet, SaliencyMap};
use crate::tensor::Tensor;
use crate::training::TrainItem;

/// A dataset with parallel per-sample vectors: `items[i]`, `gt_maps[i]`,
/// and `fixations[i]` all describe the sample named `ids[i]`.
pub struct Dataset {
    pub ids: Vec<String>,
    pub items: Vec<TrainItem>,
    pub gt_maps: Vec<SaliencyMap>,
    pub fixations: Vec<FixationSet>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Reads every sample listed in a manifest. The audio frontend runs here,
/// once per sample; training then sees only tensors.
pub fn load(manifest_path: &Path, frontend: &FrontendConfig) -> Result<Dataset> {
    let entries = manifest::load(manifest_path)?;
    let mut ids = Vec::with_capacity(entries.len());
    let mut items = Vec::with_capacity(entries.len());
    let mut gt_maps = Vec::with_capacity(entries.len());
    let mut fixations = Vec::with_capacity(entries.len());
    for e in &entries {
        let clip = dstn::load(&e.clip)?;
        if clip.rank() != 4 || clip.shape[3] != 3 {
            return Err(Error::format(
                &e.clip,
                format!("expected a (T, H, W, 3) clip, got {:?}", clip.shape),
            ));
        }
        let (h, w) = (clip.shape[1], clip.shape[2]);
        let waveform = audio::load_waveform(&e.wav, frontend.sample_rate)?;
        let mel = audio::log_mel_slices(&waveform, frontend)?.slices;
        let gt = pgm::load(&e.gt)?;
        if gt.shape != [h, w] {
            return Err(Error::format(
                &e.gt,
                format!("ground truth {:?} does not match clip {h}x{w}", gt.shape),
            ));
        }
        let gt_map = SaliencyMap::new(gt.clone())?;
        let target = Tensor::new(vec![h, w, 1], gt.data)?;
        ids.push(e.id.clone());
        items.push(TrainItem { clip, mel, gt: target });
        gt_maps.push(gt_map);
        fixations.push(FixationSet::new(read_fixations(&e.fix)?));
    }
    Ok(Dataset { ids, items, gt_maps, fixations })
}

// --- tests ------------------------------------------------------------------
