use crate::{Pose2D, Twist2D};

/// Exact unicycle integration of a constant twist over `dt`.
pub fn step_drive(pose: &Pose2D, cmd: &Twist2D, dt: f64) -> Pose2D {
    debug_assert!(dt > 0.0);
    let (v, w) = (cmd.v, cmd.omega);
    if w.abs() < 1e-9 {
        let (s, c) = pose.theta.sin_cos();
        return Pose2D::new(pose.x + v * c * dt, pose.y + v * s * dt, pose.theta + w * dt);
    }
    let th1 = pose.theta + w * dt;
    let r = v / w;
    Pose2D::new(
        pose.x + r * (th1.sin() - pose.theta.sin()),
        pose.y - r * (th1.cos() - pose.theta.cos()),
        th1,
    )
}
