//! Learning-rate schedules and preference-optimization losses.

mod gradcheck;
mod preference;
mod schedule;

pub use gradcheck::{grad_check, numerical_gradient};
pub use preference::{
    aries_loss, dpo_loss, implicit_reward_accuracy, refine_loss, LossParams, LossWithGrad, PolicyGrad, PreferenceBatch,
    PreferenceExample, RefineContext,
};
pub use schedule::{cosine_lr, wsdc_lr, FinalCosine, WsdcSchedule};
