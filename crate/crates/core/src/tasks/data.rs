//! Labeled views of scenes for the two tasks.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scenegen::Scene;
use crate::trajset::{closest_mode, drivable_labels, TrajectorySet};
use crate::varcore::LabeledInput;

/// Divisors applied to `(speed, acceleration, yaw rate)` before they reach the network.
pub const STATE_SCALE: [f64; 3] = [10.0, 3.0, 0.5];

pub fn scaled_state(scene: &Scene) -> [f64; 3] {
    let s = scene.agent_state;
    [s[0] / STATE_SCALE[0], s[1] / STATE_SCALE[1], s[2] / STATE_SCALE[2]]
}

/// Which labels a task view carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Labels {
    /// Drivable-area label vector per scene.
    Drivable,
    /// Index of the closest set element per scene.
    Mode,
    Both,
}

/// Scenes paired with network inputs and labels over one trajectory set.
#[derive(Clone, Debug)]
pub struct TaskData<'s> {
    scenes: Vec<&'s Scene>,
    states: Vec<[f64; 3]>,
    classes: Option<Vec<usize>>,
    drivable: Option<Vec<Vec<f64>>>,
}

impl<'s> TaskData<'s> {
    pub fn new(scenes: &'s [Scene], set: &TrajectorySet, labels: Labels) -> Result<Self> {
        Self::from_refs(scenes.iter().collect(), set, labels)
    }

    pub fn from_refs(scenes: Vec<&'s Scene>, set: &TrajectorySet, labels: Labels) -> Result<Self> {
        if scenes.is_empty() {
            return Err(Error::InvalidArgument("a task needs at least one scene".into()));
        }
        if set.is_empty() {
            return Err(Error::InvalidArgument("trajectory set is empty".into()));
        }
        let classes = match labels {
            Labels::Mode | Labels::Both => Some(
                scenes
                    .par_iter()
                    .map(|s| closest_mode(&s.future, set))
                    .collect::<Result<Vec<_>>>()?,
            ),
            Labels::Drivable => None,
        };
        let drivable = match labels {
            Labels::Drivable | Labels::Both => Some(
                scenes
                    .par_iter()
                    .map(|s| {
                        drivable_labels(set, &s.mask, s.pose())
                            .into_iter()
                            .map(|b| if b { 1.0 } else { 0.0 })
                            .collect()
                    })
                    .collect(),
            ),
            Labels::Mode => None,
        };
        Ok(TaskData {
            states: scenes.iter().map(|s| scaled_state(s)).collect(),
            scenes,
            classes,
            drivable,
        })
    }

    /// Replace the drivable labels, e.g. with synthetic targets.
    pub fn with_drivable_labels(mut self, labels: Vec<Vec<f64>>) -> Result<Self> {
        if labels.len() != self.scenes.len() {
            return Err(Error::Shape(format!(
                "{} label vectors for {} scenes",
                labels.len(),
                self.scenes.len()
            )));
        }
        self.drivable = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn scenes(&self) -> &[&'s Scene] {
        &self.scenes
    }

    pub fn classes(&self) -> Option<&[usize]> {
        self.classes.as_deref()
    }

    pub fn drivable(&self) -> Option<&[Vec<f64>]> {
        self.drivable.as_deref()
    }

    pub fn input(&self, i: usize) -> LabeledInput<'_> {
        LabeledInput {
            raster: &self.scenes[i].raster,
            state: &self.states[i],
            class: self.classes.as_ref().map(|c| c[i]),
            multi_label: self.drivable.as_ref().map(|d| d[i].as_slice()),
            weight: 1.0,
        }
    }
}
