//! JSON messages exchanged with live viewers.
//!
//! Every message is one JSON object with a `type` field. The server sends
//! `hello` once per connection, then a `snapshot` after every tick, and an
//! `error` reply for anything it cannot decode. Clients send commands; all
//! of them enter the session's event queue and are applied at the start of
//! the next tick.

use serde::{Deserialize, Serialize};

use crate::localization::ParticleSummary;
use crate::orchestrator::TraceEvent;
use crate::world::pixel_value;
use crate::{OccupancyGrid, Pose2D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientCommand {
    Fetch {
        object: String,
    },
    Say {
        text: String,
    },
    AddObstacle {
        x: f64,
        y: f64,
        #[serde(default = "default_obstacle_radius")]
        r: f64,
        #[serde(default)]
        vx: f64,
        #[serde(default)]
        vy: f64,
    },
    Tug {
        f_z: f64,
    },
    Estop {},
    Reset {},
    /// Teleports the robot and re-initializes localization around the new
    /// pose. Debug only.
    SetPose {
        x: f64,
        y: f64,
        theta: f64,
    },
}

fn default_obstacle_radius() -> f64 {
    0.2
}

impl ClientCommand {
    pub fn validate(&self) -> Result<(), String> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            ClientCommand::AddObstacle { x, y, r, vx, vy } => {
                if !finite(&[*x, *y, *r, *vx, *vy]) || *r <= 0.0 {
                    return Err("add_obstacle needs finite values and r > 0".into());
                }
            }
            ClientCommand::Tug { f_z } if !f_z.is_finite() => return Err("tug needs a finite f_z".into()),
            ClientCommand::SetPose { x, y, theta } if !finite(&[*x, *y, *theta]) => {
                return Err("set_pose needs finite values".into())
            }
            _ => {}
        }
        Ok(())
    }
}

/// Static map as row-major pixels, first row at the bottom (smallest y).
/// 0 = occupied, 255 = free, 128 = unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPayload {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: [f64; 2],
    pub data: Vec<u8>,
}

impl MapPayload {
    pub fn from_grid(grid: &OccupancyGrid) -> Self {
        let o = grid.origin();
        Self {
            width: grid.width(),
            height: grid.height(),
            resolution: grid.resolution(),
            origin: [o.x, o.y],
            data: grid.cells().iter().map(|l| pixel_value(*l)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub scenario: String,
    pub seed: u64,
    pub tick_dt: f64,
    pub objects: Vec<String>,
    pub robot_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleView {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub r: f64,
    pub vx: f64,
    pub vy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub seq: u64,
    pub tick: u64,
    pub state: String,
    pub pose: Pose2D,
    pub estimate: Pose2D,
    pub particles_summary: ParticleSummary,
    /// Current local band, `[x, y, theta]` per pose.
    pub trajectory: Vec<[f64; 3]>,
    pub obstacles: Vec<ObstacleView>,
    pub arm_q: [[f64; 7]; 2],
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello { map: MapPayload, config: SessionConfig },
    Snapshot(Snapshot),
    Error { message: String },
}

pub fn decode_command(text: &str) -> Result<ClientCommand, String> {
    let cmd: ClientCommand = serde_json::from_str(text).map_err(|e| e.to_string())?;
    cmd.validate()?;
    Ok(cmd)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_round_trip() {
        let cmds = [
            ClientCommand::Fetch { object: "water".into() },
            ClientCommand::Say { text: "fetch the water".into() },
            ClientCommand::AddObstacle { x: 3.0, y: 1.2, r: 0.2, vx: 0.0, vy: 0.0 },
            ClientCommand::Tug { f_z: 6.0 },
            ClientCommand::Estop {},
            ClientCommand::Reset {},
            ClientCommand::SetPose { x: 1.0, y: 1.0, theta: 0.0 },
        ];
        for c in cmds {
            let text = serde_json::to_string(&c).unwrap();
            assert_eq!(decode_command(&text).unwrap(), c);
        }
    }

    #[test]
    fn wire_examples() {
        assert_eq!(decode_command(r#"{"type":"estop"}"#).unwrap(), ClientCommand::Estop {});
        assert_eq!(
            decode_command(r#"{"type":"add_obstacle","x":3.0,"y":1.2,"r":0.2}"#).unwrap(),
            ClientCommand::AddObstacle { x: 3.0, y: 1.2, r: 0.2, vx: 0.0, vy: 0.0 }
        );
        assert_eq!(serde_json::to_string(&ClientCommand::Tug { f_z: 6.0 }).unwrap(), r#"{"type":"tug","f_z":6.0}"#);
        assert!(decode_command(r#"{"type":"dance"}"#).is_err());
        assert!(decode_command(r#"{"type":"fetch"}"#).is_err());
        assert!(decode_command("not json").is_err());
        assert!(decode_command(r#"{"type":"add_obstacle","x":1,"y":1,"r":-1}"#).is_err());
        assert!(decode_command(r#"{"type":"say","text":"hi","extra":1}"#).is_err());
    }

    #[test]
    fn map_payload_layout() {
        let mut g = OccupancyGrid::new(0.05, Pose2D::new(-1.0, 0.0, 0.0), 3, 2);
        g.set_log_odds(crate::CellIndex::new(2, 0), 2.0);
        g.set_log_odds(crate::CellIndex::new(0, 1), -2.0);
        let m = MapPayload::from_grid(&g);
        assert_eq!(m.data, vec![128, 128, 0, 255, 128, 128]);
        let v = serde_json::to_value(ServerMessage::Hello {
            map: m,
            config: SessionConfig { scenario: "x".into(), seed: 1, tick_dt: 0.05, objects: vec![], robot_radius: 0.35 },
        })
        .unwrap();
        assert_eq!(v["type"], "hello");
        assert_eq!(v["map"]["origin"][0], -1.0);
    }
}
