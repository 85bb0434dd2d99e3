//! Per-category habit prior: a transformer posterior over the habit latent
//! and an affine-coupling flow trained on its samples.

mod flow;
mod model;

pub use flow::{fit_flow, standard_normal_log_density, FlowFit, FlowPrior, SCALE_BOUND};
pub use model::{
    sample_habit, sample_posterior, train_habit, HabitConfig, HabitLogRow, HabitMode, HabitModel, HabitPosterior,
    SIGMA_FLOOR,
};
