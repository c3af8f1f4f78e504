use std::collections::VecDeque;

use super::{KtModel, TokenBatch};
use crate::cosserat::{
    solve_statics, LimbGeometry, MaterialProperties, SolverOptions, TendonForces,
};
use crate::dataset::{GOAL_DIM, STATE_DIM};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStep {
    pub goal: [f64; 3],
    pub forces: [f64; 4],
    pub tip: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
    /// Tokens in the context window when the rollout ended.
    pub context_len: usize,
}

/// Closed-loop control: at each waypoint the model predicts forces from the
/// most recent tokens, the forward solver applies them, and the realized
/// state becomes the next token's state.
pub fn autoregressive_rollout(
    model: &KtModel,
    geometry: &LimbGeometry,
    material: &MaterialProperties,
    solver: &SolverOptions,
    initial_tip: [f64; 3],
    initial_forces: [f64; 4],
    waypoints: &[[f64; 3]],
) -> Result<Rollout> {
    let window = model.config().sequence_length;
    let mut context: VecDeque<([f64; STATE_DIM], [f64; GOAL_DIM])> =
        VecDeque::with_capacity(window + 1);
    let mut state = [
        initial_tip[0],
        initial_tip[1],
        initial_tip[2],
        initial_forces[0],
        initial_forces[1],
        initial_forces[2],
        initial_forces[3],
    ];
    let mut out = Rollout::default();
    for goal in waypoints {
        context.push_back((state, *goal));
        if context.len() > window {
            context.pop_front();
        }
        let (states, goals): (Vec<_>, Vec<_>) = context.iter().copied().unzip();
        let tokens = TokenBatch::from_raw(&states, &goals, model.normalizer())?;
        let forces = *model
            .predict_forces(&tokens)?
            .last()
            .expect("context holds at least one token");
        out.context_len = context.len();
        let tip = match solve_statics(geometry, material, &TendonForces(forces), solver) {
            Ok(c) => c.tip(),
            Err(e) => {
                return Err(Error::Rollout {
                    partial: Box::new(out),
                    source: Box::new(Error::Solver {
                        forces,
                        source: Box::new(e),
                    }),
                })
            }
        };
        let tip = [tip.x, tip.y, tip.z];
        out.steps.push(RolloutStep {
            goal: *goal,
            forces,
            tip,
        });
        state = [
            tip[0], tip[1], tip[2], forces[0], forces[1], forces[2], forces[3],
        ];
    }
    Ok(out)
}
