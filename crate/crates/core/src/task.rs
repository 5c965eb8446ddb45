//! Training tasks, registered by name.
//!
//! A task fixes which pair losses are minimized and which are maximized, and
//! provides the default term selection and bottleneck used when a run config
//! leaves them out.

use std::sync::Arc;

use crate::error::Result;
use crate::objectives::NUM_TERMS;
use crate::registry::Registry;

pub trait Task: Send + Sync {
    fn name(&self) -> &'static str;

    /// `+1` to minimize, `-1` to maximize, per term `L_1..L_6`.
    fn signs(&self) -> [f64; NUM_TERMS];

    fn default_losses(&self) -> [bool; NUM_TERMS];

    fn default_bottleneck(&self) -> usize;
}

/// Keeps written-text information: pulls word images, strings and
/// text-bearing photos together, pushes photos away from their labels.
pub struct LearnToSpell;

impl Task for LearnToSpell {
    fn name(&self) -> &'static str {
        "learn_to_spell"
    }

    fn signs(&self) -> [f64; NUM_TERMS] {
        [-1.0, -1.0, 1.0, 1.0, 1.0, -1.0]
    }

    fn default_losses(&self) -> [bool; NUM_TERMS] {
        [true, false, true, true, true, false]
    }

    fn default_bottleneck(&self) -> usize {
        64
    }
}

/// Keeps visual information and discards written text.
pub struct ForgetToSpell;

impl Task for ForgetToSpell {
    fn name(&self) -> &'static str {
        "forget_to_spell"
    }

    fn signs(&self) -> [f64; NUM_TERMS] {
        LearnToSpell.signs().map(|s| -s)
    }

    fn default_losses(&self) -> [bool; NUM_TERMS] {
        [true, true, false, false, true, true]
    }

    fn default_bottleneck(&self) -> usize {
        256
    }
}

pub fn task_registry() -> Registry<dyn Task> {
    let mut r: Registry<dyn Task> = Registry::new("task");
    r.register("learn_to_spell", Arc::new(LearnToSpell));
    r.register("forget_to_spell", Arc::new(ForgetToSpell));
    r
}

pub fn lookup_task(name: &str) -> Result<Arc<dyn Task>> {
    task_registry().get(name)
}

/// Default term selection and bottleneck of a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskPreset {
    pub losses: [bool; NUM_TERMS],
    pub bottleneck: usize,
}

pub fn task_preset(name: &str) -> Result<TaskPreset> {
    let t = lookup_task(name)?;
    Ok(TaskPreset {
        losses: t.default_losses(),
        bottleneck: t.default_bottleneck(),
    })
}
