//! Multi-view samples and the episodic view-selection environment.
//!
//! A sample is one object with an aligned feature vector per view. An episode
//! starts at a uniformly random view and requests one further view per step
//! until all `V` views are consumed; by default a view may be visited at most
//! once. The submodules provide a synthetic corpus with planted
//! discriminative views and manifest round-tripping.

mod manifest;
mod synth;

pub use manifest::{load_manifest, save_manifest, FeatureStorage};
pub use synth::{generate_synthetic, SynthConfig};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// One object: a class label plus exactly one feature vector per view,
/// indexed by aligned view id.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewSample {
    pub id: String,
    pub label: usize,
    pub views: Vec<Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<MultiViewSample>,
    pub classes: usize,
    pub views: usize,
    pub feature_dim: usize,
    /// Class index to coarse group index, when the corpus has one.
    pub class_groups: Option<Vec<usize>>,
    pub split: Split,
    pub class_names: Vec<String>,
    pub view_names: Vec<String>,
}

impl Dataset {
    /// Checks the alignment invariants: labels in range, every sample
    /// carrying all views, every view at the stated dimension.
    pub fn validate(&self) -> Result<()> {
        if self.class_names.len() != self.classes {
            return Err(Error::Schema(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.classes
            )));
        }
        if self.view_names.len() != self.views {
            return Err(Error::Schema(format!(
                "{} view names for {} views",
                self.view_names.len(),
                self.views
            )));
        }
        if let Some(groups) = &self.class_groups {
            if groups.len() != self.classes {
                return Err(Error::Schema(format!(
                    "group map covers {} of {} classes",
                    groups.len(),
                    self.classes
                )));
            }
        }
        for s in &self.samples {
            if s.label >= self.classes {
                return Err(Error::Schema(format!(
                    "sample {} has label {} but the dataset has {} classes",
                    s.id, s.label, self.classes
                )));
            }
            if s.views.len() != self.views {
                return Err(Error::Alignment(format!(
                    "sample {} carries {} of {} views",
                    s.id,
                    s.views.len(),
                    self.views
                )));
            }
            for (v, feat) in s.views.iter().enumerate() {
                if feat.shape() != [self.feature_dim] {
                    return Err(Error::Schema(format!(
                        "sample {} view {} has shape {:?}, expected [{}]",
                        s.id,
                        v,
                        feat.shape(),
                        self.feature_dim
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Bookkeeping for one in-flight episode. The step count equals the number
/// of visited views; episodes run from `t = 1` (after reset) to `t = V`.
#[derive(Clone, Debug)]
pub struct EpisodeState<'a> {
    pub sample: &'a MultiViewSample,
    pub visited: Vec<usize>,
    pub seen: Vec<bool>,
    /// Recognition and selection hidden states, carried by whoever runs the
    /// model over this episode.
    pub hidden_e: Option<Tensor>,
    pub hidden_s: Option<Tensor>,
}

impl EpisodeState<'_> {
    pub fn step(&self) -> usize {
        self.visited.len()
    }

    pub fn is_complete(&self) -> bool {
        self.visited.len() == self.sample.views.len()
    }

    pub fn current_view(&self) -> usize {
        *self.visited.last().expect("episode holds at least the initial view")
    }
}

/// Starts an episode at a uniformly random view.
pub fn episode_reset<'a>(sample: &'a MultiViewSample, rng: &mut ChaCha8Rng) -> EpisodeState<'a> {
    let v = sample.views.len();
    assert!(v >= 1, "sample {} has no views", sample.id);
    let first = rng.gen_range(0..v);
    let mut seen = vec![false; v];
    seen[first] = true;
    EpisodeState { sample, visited: vec![first], seen, hidden_e: None, hidden_s: None }
}

/// Advances an episode by one view request.
pub fn episode_step(state: &mut EpisodeState, view: usize, allow_duplicates: bool) -> Result<()> {
    let v = state.sample.views.len();
    if state.visited.len() >= v {
        return Err(Error::EpisodeComplete { t: state.visited.len() });
    }
    if view >= v {
        return Err(Error::Index(format!("view {view} out of range for {v} views")));
    }
    if !allow_duplicates && state.seen[view] {
        return Err(Error::DuplicateView { view, step: state.visited.len() + 1 });
    }
    state.visited.push(view);
    state.seen[view] = true;
    Ok(())
}
