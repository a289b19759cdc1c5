//! Person-following velocity controller and the closed-loop simulation
//! that exercises it: the base leads, the walker follows behind at a
//! standoff distance watched by the rear laser.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FrameId, Point3, RigidTransform};
use crate::scan::LaserScan;
use crate::sim::{cast_scan_labeled, BeamHit, LaserSpec, LegDisk, Scene, WalkerModel};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
    pub timestamp: f64,
}

impl VelocityCommand {
    pub fn zero(timestamp: f64) -> Self {
        VelocityCommand { vx: 0.0, vy: 0.0, omega: 0.0, timestamp }
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Proportional gain on both the walking-velocity feedforward and the
    /// standoff-distance correction.
    pub gain: f64,
    /// Commands below this linear speed are zeroed (m/s).
    pub deadband: f64,
    pub v_max: f64,
    pub omega_max: f64,
    /// First-order low-pass coefficient in (0, 1]; 1 disables smoothing.
    pub alpha: f64,
    /// Target person-robot separation (m).
    pub standoff: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            gain: 1.0,
            deadband: 0.02,
            v_max: 0.8,
            omega_max: 0.5,
            alpha: 0.35,
            standoff: 0.6,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || self.alpha == 0.0 {
            return Err(Error::InvalidArgument("alpha must be in (0,1]".into()));
        }
        if self.v_max <= 0.0 || self.omega_max <= 0.0 || self.standoff <= 0.0 {
            return Err(Error::InvalidArgument("limits must be positive".into()));
        }
        if self.deadband < 0.0 || self.gain <= 0.0 {
            return Err(Error::InvalidArgument("gain must be > 0, deadband >= 0".into()));
        }
        Ok(())
    }
}

/// Holds the low-pass filter state; one owner per control loop.
#[derive(Debug, Clone)]
pub struct FollowController {
    pub cfg: ControllerConfig,
    filt: (f64, f64),
}

impl FollowController {
    pub fn new(cfg: ControllerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(FollowController { cfg, filt: (0.0, 0.0) })
    }

    /// Computes the base command from the estimated walking velocity and
    /// person position, both in the robot frame R.
    ///
    /// Law: low-pass( gain * walk_velocity + gain * (distance - standoff)
    /// along the person's bearing ), deadband, then clamp; omega steers the
    /// heading toward the walking direction.
    pub fn compute_command(
        &mut self,
        walk_velocity: (f64, f64),
        person_position: (f64, f64),
        timestamp: f64,
    ) -> Result<VelocityCommand> {
        let (wx, wy) = walk_velocity;
        let (px, py) = person_position;
        if !(wx.is_finite() && wy.is_finite() && px.is_finite() && py.is_finite()) {
            return Err(Error::InvalidArgument("non-finite controller input".into()));
        }
        let cfg = &self.cfg;
        let dist = px.hypot(py);
        let dist_err = dist - cfg.standoff;
        let (bx, by) = if dist > 1e-9 { (px / dist, py / dist) } else { (0.0, 0.0) };
        let raw = (
            cfg.gain * (wx + dist_err * bx),
            cfg.gain * (wy + dist_err * by),
        );
        self.filt = (
            cfg.alpha * raw.0 + (1.0 - cfg.alpha) * self.filt.0,
            cfg.alpha * raw.1 + (1.0 - cfg.alpha) * self.filt.1,
        );

        let walk_speed = wx.hypot(wy);
        if (walk_speed < cfg.deadband && dist_err.abs() < 0.02)
            || self.filt.0.hypot(self.filt.1) < cfg.deadband
        {
            return Ok(VelocityCommand::zero(timestamp));
        }

        let (mut vx, mut vy) = self.filt;
        let speed = vx.hypot(vy);
        if speed > cfg.v_max {
            vx *= cfg.v_max / speed;
            vy *= cfg.v_max / speed;
        }
        let omega = if walk_speed >= cfg.deadband {
            (cfg.gain * wy.atan2(wx)).clamp(-cfg.omega_max, cfg.omega_max)
        } else {
            0.0
        };
        Ok(VelocityCommand { vx, vy, omega, timestamp })
    }
}

/// Base pose in the world frame.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BasePose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// Closed-loop simulation state: omnidirectional base plus walker.
#[derive(Debug, Clone)]
pub struct FollowSim {
    pub base: BasePose,
    pub walker: WalkerModel,
    pub t: f64,
    pub laser_in_robot: RigidTransform,
}

/// One line of the trajectory log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub base: [f64; 3],
    pub person: [f64; 2],
    pub cmd: [f64; 3],
}

impl FollowSim {
    /// Base at the origin facing +x; walker one standoff behind, about to
    /// walk in the base's direction.
    pub fn new(standoff: f64, speed: f64, stride: f64) -> Result<Self> {
        let walker = WalkerModel::new(-standoff, 0.0, 0.0, speed, stride)?;
        Ok(FollowSim {
            base: BasePose { x: 0.0, y: 0.0, yaw: 0.0 },
            walker,
            t: 0.0,
            laser_in_robot: RigidTransform::planar(
                FrameId::Laser,
                FrameId::RobotBase,
                -0.2,
                0.0,
                std::f64::consts::PI,
            ),
        })
    }

    pub fn person_world(&self) -> (f64, f64) {
        (self.walker.x, self.walker.y)
    }

    pub fn person_robot_distance(&self) -> f64 {
        (self.walker.x - self.base.x).hypot(self.walker.y - self.base.y)
    }

    /// World point expressed in the robot frame.
    pub fn world_to_robot(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.base.yaw.sin_cos();
        let dx = x - self.base.x;
        let dy = y - self.base.y;
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Robot-frame point expressed in the world frame.
    pub fn robot_to_world(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.base.yaw.sin_cos();
        (self.base.x + c * x - s * y, self.base.y + s * x + c * y)
    }

    fn laser_pose_world(&self) -> (f64, f64, f64) {
        let (lx, ly) = self.robot_to_world(
            self.laser_in_robot.matrix[3][0],
            self.laser_in_robot.matrix[3][1],
        );
        // planar transform: rotation block row 0 is (cos, sin)
        let laser_yaw = self.laser_in_robot.matrix[0][1].atan2(self.laser_in_robot.matrix[0][0]);
        (lx, ly, self.base.yaw + laser_yaw)
    }

    /// Current scene as seen by the rear laser (legs in the laser frame).
    pub fn scene(&self, scan_seed: u64) -> Scene {
        let (lx, ly, lyaw) = self.laser_pose_world();
        let (s, c) = lyaw.sin_cos();
        let to_laser = |p: &Point3| {
            let dx = p.x - lx;
            let dy = p.y - ly;
            Point3::new(c * dx + s * dy, -s * dx + c * dy, 0.0)
        };
        let legs_world = self.walker.leg_disks();
        let legs = [
            LegDisk { center: to_laser(&legs_world[0].center), radius: legs_world[0].radius },
            LegDisk { center: to_laser(&legs_world[1].center), radius: legs_world[1].radius },
        ];
        Scene { legs, clutter: vec![], laser_in_robot: self.laser_in_robot, seed: scan_seed }
    }

    /// Casts the rear scan and reports which object each beam hit.
    pub fn observe(&self, spec: &LaserSpec, scan_seed: u64) -> (LaserScan, Vec<BeamHit>) {
        cast_scan_labeled(&self.scene(scan_seed), spec, self.t, scan_seed)
    }

    /// Integrates the base under `cmd` (ideal omnidirectional kinematics)
    /// and steps the walker.
    pub fn step(&mut self, cmd: &VelocityCommand, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt <= 0.1) {
            return Err(Error::InvalidArgument(format!("dt {dt} outside (0, 0.1]")));
        }
        // velocity rotates with the base but does not translate
        let (s, c) = self.base.yaw.sin_cos();
        self.base.x += (c * cmd.vx - s * cmd.vy) * dt;
        self.base.y += (s * cmd.vx + c * cmd.vy) * dt;
        self.base.yaw += cmd.omega * dt;
        self.walker = crate::sim::step_walker(&self.walker, dt)?.0;
        self.t += dt;
        Ok(())
    }
}

/// Runs the closed loop with ground-truth perception and returns the
/// trajectory log. Deterministic for a fixed configuration.
pub fn run_follow(
    cfg: &ControllerConfig,
    speed: f64,
    stride: f64,
    duration: f64,
    dt: f64,
) -> Result<Vec<TrajectoryRecord>> {
    let mut sim = FollowSim::new(cfg.standoff, speed, stride)?;
    let mut controller = FollowController::new(*cfg)?;
    let steps = (duration / dt).round() as usize;
    let mut log = Vec::with_capacity(steps);
    for _ in 0..steps {
        let person_r = sim.world_to_robot(sim.walker.x, sim.walker.y);
        let (s, c) = sim.base.yaw.sin_cos();
        let (hs, hc) = sim.walker.heading.sin_cos();
        let (wvx, wvy) = (sim.walker.speed * hc, sim.walker.speed * hs);
        let walk_r = (c * wvx + s * wvy, -s * wvx + c * wvy);
        let cmd = controller.compute_command(walk_r, person_r, sim.t)?;
        log.push(TrajectoryRecord {
            t: sim.t,
            base: [sim.base.x, sim.base.y, sim.base.yaw],
            person: [sim.walker.x, sim.walker.y],
            cmd: [cmd.vx, cmd.vy, cmd.omega],
        });
        sim.step(&cmd, dt)?;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibrium_gives_zero_command() {
        let cfg = ControllerConfig::default();
        let mut c = FollowController::new(cfg).unwrap();
        let cmd = c
            .compute_command((0.0, 0.0), (-cfg.standoff, 0.0), 0.0)
            .unwrap();
        assert_eq!((cmd.vx, cmd.vy, cmd.omega), (0.0, 0.0, 0.0));
    }

    #[test]
    fn unit_gain_passes_walking_velocity_through() {
        let cfg = ControllerConfig { gain: 1.0, alpha: 1.0, ..Default::default() };
        let mut c = FollowController::new(cfg).unwrap();
        let cmd = c
            .compute_command((0.5, 0.0), (-cfg.standoff, 0.0), 0.0)
            .unwrap();
        assert!((cmd.vx - 0.5).abs() < 1e-12);
        assert!(cmd.vy.abs() < 1e-12);
    }

    #[test]
    fn commands_always_saturate() {
        let cfg = ControllerConfig::default();
        let mut c = FollowController::new(cfg).unwrap();
        for i in 0..50 {
            let v = 10.0 * i as f64;
            let cmd = c.compute_command((v, -v), (5.0, 5.0), i as f64 * 0.1).unwrap();
            assert!(cmd.speed() <= cfg.v_max + 1e-12);
            assert!(cmd.omega.abs() <= cfg.omega_max + 1e-12);
        }
    }

    #[test]
    fn deadband_zeroes_small_inputs() {
        let cfg = ControllerConfig::default();
        let mut c = FollowController::new(cfg).unwrap();
        for i in 0..20 {
            let cmd = c
                .compute_command((0.005, 0.0), (-(cfg.standoff + 0.01), 0.0), i as f64 * 0.1)
                .unwrap();
            assert_eq!((cmd.vx, cmd.vy, cmd.omega), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn steady_command_direction_matches_walking_direction() {
        let cfg = ControllerConfig::default();
        let mut c = FollowController::new(cfg).unwrap();
        let walk: (f64, f64) = (0.3, 0.2);
        let dir = walk.1.atan2(walk.0);
        let bearing = (
            -cfg.standoff * (dir.cos()),
            -cfg.standoff * (dir.sin()),
        );
        let mut last = VelocityCommand::zero(0.0);
        for i in 0..500 {
            last = c.compute_command(walk, bearing, i as f64 * 0.05).unwrap();
        }
        let cmd_dir = last.vy.atan2(last.vx);
        assert!((cmd_dir - dir).abs() < 1e-6, "cmd dir {cmd_dir} vs walk {dir}");
    }

    #[test]
    fn zero_command_keeps_base_still() {
        let mut sim = FollowSim::new(0.6, 0.0, 1.0).unwrap();
        for _ in 0..100 {
            sim.step(&VelocityCommand::zero(sim.t), 0.05).unwrap();
        }
        assert_eq!((sim.base.x, sim.base.y, sim.base.yaw), (0.0, 0.0, 0.0));
    }

    #[test]
    fn constant_command_integrates_linearly() {
        let mut sim = FollowSim::new(0.6, 0.0, 1.0).unwrap();
        let cmd = VelocityCommand { vx: 0.5, vy: 0.0, omega: 0.0, timestamp: 0.0 };
        for _ in 0..40 {
            sim.step(&cmd, 0.05).unwrap();
        }
        assert!((sim.base.x - 1.0).abs() < 1e-9);
    }

    #[test]
    fn closed_loop_holds_standoff() {
        let cfg = ControllerConfig::default();
        let log = run_follow(&cfg, 0.5, 1.0, 30.0, 0.05).unwrap();
        for rec in &log {
            if rec.t < 5.0 {
                continue;
            }
            let d = (rec.person[0] - rec.base[0]).hypot(rec.person[1] - rec.base[1]);
            assert!(
                (d - cfg.standoff).abs() <= 0.15,
                "t={} distance {d}",
                rec.t
            );
            let speed = rec.cmd[0].hypot(rec.cmd[1]);
            assert!(speed <= cfg.v_max + 1e-12);
            assert!(rec.cmd[2].abs() <= cfg.omega_max + 1e-12);
        }
    }

    #[test]
    fn closed_loop_is_deterministic() {
        let cfg = ControllerConfig::default();
        let a = run_follow(&cfg, 0.5, 1.0, 5.0, 0.05).unwrap();
        let b = run_follow(&cfg, 0.5, 1.0, 5.0, 0.05).unwrap();
        let ja = serde_json::to_string(&a).unwrap();
        let jb = serde_json::to_string(&b).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn rear_scan_sees_the_walker() {
        let sim = FollowSim::new(0.6, 0.5, 1.0).unwrap();
        let spec = LaserSpec { range_noise_sigma: 0.0, ..Default::default() };
        let (scan, hits) = sim.observe(&spec, 1);
        let leg_beams = hits.iter().filter(|h| matches!(h, BeamHit::Leg(_))).count();
        assert!(leg_beams > 10, "only {leg_beams} leg beams");
        // person is ~0.4 m from the rear laser
        let min_range = scan.ranges.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((0.2..0.5).contains(&min_range), "min range {min_range}");
    }
}
