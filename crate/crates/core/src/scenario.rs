//! Scenario files: world geometry, robot poses, interaction assets,
//! planner and sensor settings, and a command script.
//!
//! Poses are `[x, y, theta]`, walls `[x1, y1, x2, y2]`. Relative file
//! references resolve against the scenario file's directory. See
//! `scenarios/corridor.yaml` for a complete example.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::control::ControlParams;
use crate::interaction::face::{normalize, EMBEDDING_DIM};
use crate::interaction::{compile_grammar, CommandGrammar, FaceGallery, DEFAULT_GRAMMAR};
use crate::localization::MclParams;
use crate::mapping::{DynamicLayerParams, InflationParams, SurveyParams};
use crate::nav::teb::{TebLimits, TebParams, TebWeights};
use crate::orchestrator::RobotState;
use crate::protocol::ClientCommand;
use crate::sim::{Segment, SimParams, WorldObject};
use crate::world::{Point2, Vector2};
use crate::{Error, Pose2D, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub id: String,
    pub marker: u32,
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub x: f64,
    pub y: f64,
    #[serde(default = "default_radius")]
    pub r: f64,
    #[serde(default)]
    pub vx: f64,
    #[serde(default)]
    pub vy: f64,
}

fn default_radius() -> f64 {
    0.2
}

/// A person is a static disc with a face. `identity` names a gallery
/// entry; without one the face is a stranger's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonSpec {
    #[serde(default)]
    pub identity: Option<String>,
    pub x: f64,
    pub y: f64,
    #[serde(default = "default_radius")]
    pub r: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    #[serde(default)]
    pub walls: Vec<[f64; 4]>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub people: Vec<PersonSpec>,
}

impl WorldSpec {
    pub fn segments(&self) -> Vec<Segment> {
        self.walls
            .iter()
            .map(|w| Segment { a: Point2::new(w[0], w[1]), b: Point2::new(w[2], w[3]) })
            .collect()
    }

    pub fn world_objects(&self) -> Vec<WorldObject> {
        self.objects
            .iter()
            .map(|o| WorldObject {
                id: o.id.clone(),
                marker: o.marker,
                pose: Isometry3::from_parts(
                    Translation3::new(o.position[0], o.position[1], o.position[2]),
                    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), o.yaw),
                ),
                mass: o.mass,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !self.walls.iter().all(|w| finite(w)) {
            return Err(Error::Config("non-finite wall coordinate".into()));
        }
        for o in &self.objects {
            if !finite(&o.position) || !(o.mass >= 0.0) {
                return Err(Error::Config(format!("object `{}` needs a finite position and mass ≥ 0", o.id)));
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        if let Some(o) = self.objects.iter().find(|o| !ids.insert(&o.id)) {
            return Err(Error::Config(format!("duplicate object id `{}`", o.id)));
        }
        for (x, y, r) in self.obstacles.iter().map(|o| (o.x, o.y, o.r)).chain(self.people.iter().map(|p| (p.x, p.y, p.r))) {
            if !finite(&[x, y, r]) || r <= 0.0 {
                return Err(Error::Config("obstacles and people need finite positions and r > 0".into()));
            }
        }
        Ok(())
    }

    /// Reads a world file (the `world` section of a scenario on its own).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let w: WorldSpec = serde_yaml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        w.validate()?;
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    /// Docked pose; the robot starts and waits here.
    pub dock: [f64; 3],
    /// Where the robot stops to pick objects.
    pub warehouse: [f64; 3],
    /// Where the robot stops to hand objects over.
    pub handover: [f64; 3],
    /// People within this distance of the dock trigger identification.
    #[serde(default = "default_proximity")]
    pub proximity_radius: f64,
}

fn default_proximity() -> f64 {
    1.5
}

pub fn pose(p: &[f64; 3]) -> Pose2D {
    Pose2D::new(p[0], p[1], p[2])
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    /// Existing map (prefix, `.yaml` or `.pgm`); surveyed from the walls when absent.
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub survey: SurveyParams,
    #[serde(default)]
    pub inflation: InflationParams,
    #[serde(default)]
    pub dynamic: DynamicLayerParams,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrammarSpec {
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GallerySpec {
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub identities: BTreeMap<String, Vec<f64>>,
    /// Noise added to a person's stored embedding at capture time.
    #[serde(default = "default_probe_sigma")]
    pub probe_sigma: f64,
}

fn default_threshold() -> f64 {
    crate::interaction::face::DEFAULT_THRESHOLD
}

fn default_probe_sigma() -> f64 {
    0.02
}

impl Default for GallerySpec {
    fn default() -> Self {
        Self { file: None, threshold: default_threshold(), identities: BTreeMap::new(), probe_sigma: default_probe_sigma() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationSpec {
    #[serde(flatten)]
    pub mcl: MclParams,
    /// Half-widths of the uniform prior around the dock.
    pub prior_xy: f64,
    pub prior_theta: f64,
}

impl Default for LocalizationSpec {
    fn default() -> Self {
        Self { mcl: MclParams::default(), prior_xy: 0.5, prior_theta: 10f64.to_radians() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSpec {
    pub limits: TebLimits,
    pub params: TebParams,
    /// Distance at which the goal position counts as reached.
    pub goal_tolerance: f64,
    pub heading_tolerance: f64,
    /// In-place turn first when the path starts further off the heading.
    pub align_threshold: f64,
}

impl Default for PlannerSpec {
    fn default() -> Self {
        Self {
            limits: TebLimits::default(),
            params: TebParams::default(),
            goal_tolerance: 0.1,
            heading_tolerance: 0.05,
            align_threshold: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timeouts {
    pub navigation: f64,
    pub other: f64,
}

impl Default for Timeouts {
    fn default() -> Self {
        Self { navigation: 30.0, other: 10.0 }
    }
}

impl Timeouts {
    pub fn for_state(&self, s: RobotState) -> Option<f64> {
        match s {
            RobotState::Idle | RobotState::EStopped => None,
            s if s.is_navigating() => Some(self.navigation),
            _ => Some(self.other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    /// Absolute tick at which the command is queued.
    #[serde(default)]
    pub at: Option<u64>,
    /// Or: ticks after the first entry into this state.
    #[serde(default)]
    pub when: Option<RobotState>,
    #[serde(default)]
    pub after: u64,
    pub command: ClientCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_max_ticks")]
    pub max_ticks: u64,
    pub world: WorldSpec,
    pub robot: RobotSpec,
    #[serde(default)]
    pub map: MapSpec,
    #[serde(default)]
    pub grammar: GrammarSpec,
    #[serde(default)]
    pub gallery: GallerySpec,
    #[serde(default)]
    pub weights: TebWeights,
    #[serde(default)]
    pub planner: PlannerSpec,
    #[serde(default)]
    pub sim: SimParams,
    #[serde(default)]
    pub localization: LocalizationSpec,
    #[serde(default)]
    pub control: ControlParams,
    #[serde(default)]
    pub timeouts: Timeouts,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
}

fn default_seed() -> u64 {
    7
}

fn default_max_ticks() -> u64 {
    6000
}

impl Scenario {
    pub fn from_yaml(text: &str) -> Result<Self> {
        let s: Scenario = serde_yaml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Reads a scenario and makes its file references absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut s: Scenario =
            serde_yaml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for f in [&mut s.map.file, &mut s.grammar.file, &mut s.gallery.file].into_iter().flatten() {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        let r = &self.robot;
        if ![r.dock, r.warehouse, r.handover].iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::Config("robot poses must be finite".into()));
        }
        for e in &self.script {
            if e.at.is_some() == e.when.is_some() {
                return Err(Error::Config("each script entry needs exactly one of `at` or `when`".into()));
            }
            e.command.validate().map_err(Error::Config)?;
        }
        if self.grammar.file.is_some() && self.grammar.text.is_some() {
            return Err(Error::Config("grammar: give `file` or `text`, not both".into()));
        }
        Ok(())
    }

    pub fn compile_grammar(&self) -> Result<CommandGrammar> {
        let text = match (&self.grammar.file, &self.grammar.text) {
            (Some(f), _) => std::fs::read_to_string(f).map_err(|e| Error::io(f, e))?,
            (None, Some(t)) => t.clone(),
            (None, None) => DEFAULT_GRAMMAR.to_string(),
        };
        compile_grammar(&text).map_err(|e| Error::Config(format!("grammar: {e}")))
    }

    pub fn load_gallery(&self) -> Result<FaceGallery> {
        let mut g = match &self.gallery.file {
            Some(f) => {
                let text = std::fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
                FaceGallery::from_yaml(&text)?.with_threshold(self.gallery.threshold)?
            }
            None => FaceGallery::new(self.gallery.threshold)?,
        };
        for (name, e) in &self.gallery.identities {
            g.insert(name, e.clone())?;
        }
        Ok(g)
    }
}

/// Deterministic unit embedding for demo identities.
pub fn synthetic_embedding(seed: u64, index: u64) -> Vec<f64> {
    let mut rng = crate::rng::stream(seed.wrapping_add(index), crate::rng::Stream::Face);
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let v: Vec<f64> = (0..EMBEDDING_DIM).map(|_| n.sample(&mut rng)).collect();
    // round so the scenario file stays readable; renormalize afterwards
    normalize(v.into_iter().map(|x| (x * 1e6).round() / 1e6).collect())
}

/// A 10 m × 3 m corridor: dock at the west end with the user beside it,
/// a table with three tagged objects at the east end, two boxes along the
/// walls. The script asks for water and tugs once the robot is back.
pub fn canonical_corridor() -> Scenario {
    let walls = vec![
        [0.0, 0.0, 10.0, 0.0],
        [10.0, 0.0, 10.0, 3.0],
        [10.0, 3.0, 0.0, 3.0],
        [0.0, 3.0, 0.0, 0.0],
        // box against the north wall
        [3.0, 3.0, 3.0, 2.6],
        [3.0, 2.6, 3.6, 2.6],
        [3.6, 2.6, 3.6, 3.0],
        // box against the south wall
        [6.0, 0.0, 6.0, 0.4],
        [6.0, 0.4, 6.5, 0.4],
        [6.5, 0.4, 6.5, 0.0],
    ];
    let object = |id: &str, marker, y: f64, mass| ObjectSpec { id: id.into(), marker, position: [9.1, y, 0.75], yaw: 0.0, mass };
    let identities = ["alice", "bob", "carol"]
        .iter()
        .enumerate()
        .map(|(i, n)| (n.to_string(), synthetic_embedding(2024, i as u64)))
        .collect();
    Scenario {
        name: "corridor".into(),
        seed: 7,
        max_ticks: 6000,
        world: WorldSpec {
            walls,
            objects: vec![
                object("water", 1, 1.5, 0.5),
                object("medicine", 2, 1.75, 0.1),
                object("cup", 3, 1.25, 0.3),
                ObjectSpec { id: "toolbox".into(), marker: 4, position: [9.1, 2.0, 0.75], yaw: 0.0, mass: 5.0 },
            ],
            obstacles: Vec::new(),
            people: vec![PersonSpec { identity: Some("alice".into()), x: 0.6, y: 0.7, r: 0.2 }],
        },
        robot: RobotSpec {
            dock: [1.0, 1.5, 0.0],
            warehouse: [8.55, 1.5, 0.0],
            handover: [1.5, 1.4, std::f64::consts::PI],
            proximity_radius: 1.5,
        },
        map: MapSpec::default(),
        grammar: GrammarSpec::default(),
        gallery: GallerySpec { identities, ..GallerySpec::default() },
        weights: TebWeights::default(),
        planner: PlannerSpec::default(),
        sim: SimParams::default(),
        localization: LocalizationSpec::default(),
        control: ControlParams::default(),
        timeouts: Timeouts::default(),
        script: vec![
            ScriptEntry {
                at: None,
                when: Some(RobotState::Listening),
                after: 10,
                command: ClientCommand::Say { text: "bring me the water please".into() },
            },
            ScriptEntry { at: None, when: Some(RobotState::Handover), after: 20, command: ClientCommand::Tug { f_z: 6.0 } },
        ],
    }
}

/// The corridor with the east end walled off, so the warehouse cannot be
/// reached.
pub fn unreachable_warehouse() -> Scenario {
    let mut s = canonical_corridor();
    s.name = "unreachable".into();
    s.world.walls.push([7.5, 0.0, 7.5, 3.0]);
    s
}

pub fn obstacle_velocity(o: &ObstacleSpec) -> Vector2 {
    Vector2::new(o.vx, o.vy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_round_trips_through_yaml() {
        let s = canonical_corridor();
        let back = Scenario::from_yaml(&s.to_yaml()).unwrap();
        assert_eq!(back, s);
        assert!(s.load_gallery().unwrap().entries().contains_key("alice"));
        s.compile_grammar().unwrap();
    }

    #[test]
    fn config_errors_carry_location() {
        let e = Scenario::from_yaml("world: {walls: [[0, 0, 1]]}\nrobot: {dock: [0,0,0], warehouse: [1,0,0], handover: [0,0,0]}").unwrap_err();
        assert!(e.to_string().contains("line"), "{e}");
        let e = Scenario::from_yaml("world: {}\nrobot: {dock: [0,0,0], warehouse: [1,0,0], handover: [0,0,0]}\nscript: [{command: {type: estop}}]").unwrap_err();
        assert!(e.to_string().contains("exactly one"), "{e}");
        assert!(Scenario::from_yaml("world: {}\nrobot: {dock: [0,0,0]}").is_err());
    }

    #[test]
    fn timeouts_cover_every_active_state() {
        let t = Timeouts::default();
        for s in RobotState::ALL {
            assert_eq!(t.for_state(s).is_none(), matches!(s, RobotState::Idle | RobotState::EStopped));
        }
        assert_eq!(t.for_state(RobotState::NavigatingToUser), Some(30.0));
    }
}
