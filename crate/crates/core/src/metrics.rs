//! Temporal quality metrics over mesh trajectories.

use thiserror::Error;

use crate::model::MeshTrajectory;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("no pair of adjacent visible frames")]
    InsufficientFrames,
}

/// Mean Euclidean norm of the frame-to-frame change in pose and hand
/// parameters. Only pairs of adjacent frames where the human is visible in
/// both contribute.
pub fn jitter_metric(traj: &MeshTrajectory) -> Result<f64, MetricError> {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for w in traj.params.windows(2) {
        let (Some(a), Some(b)) = (&w[0], &w[1]) else {
            continue;
        };
        let sq: f64 = a
            .pose
            .iter()
            .zip(&b.pose)
            .chain(a.hands.iter().zip(&b.hands))
            .map(|(x, y)| (y - x) * (y - x))
            .sum();
        total += sq.sqrt();
        pairs += 1;
    }
    if pairs == 0 {
        return Err(MetricError::InsufficientFrames);
    }
    Ok(total / pairs as f64)
}
