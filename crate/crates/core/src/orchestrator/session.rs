//! The tick loop: commands → perception → state machine → planning →
//! control → simulator, one fixed step at a time.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::fsm::{Directive, Fsm, NavTarget, RobotEvent, RobotState};
use super::trace::{TraceEvent, TraceRecord, TraceWriter};
use crate::control::DriveController;
use crate::interaction::{match_face, noisy_probe, parse_command, Action, CommandGrammar, FaceGallery, FaceMatch, Intent};
use crate::localization::ParticleSet;
use crate::manipulation::{
    check_payload, monitor_target, park_configuration, plan_grasp, select_arm, ArmSide, GraspPlan, HandoverMonitor,
    HandoverStatus, IkParams, PayloadCheck, TargetStatus,
};
use crate::mapping::{cost_for_distance, inflate, survey_map, DistanceField, DynamicLayer};
use crate::nav::teb::{obstacles_from_costmap, CostBreakdown, TebPlanner};
use crate::nav::{plan, GlobalPath};
use crate::protocol::{ClientCommand, MapPayload, ObstacleView, ServerMessage, SessionConfig, Snapshot};
use crate::rng::{self, SimRng, Stream};
use crate::scenario::{pose, synthetic_embedding, Scenario};
use crate::sim::{ArmCommand, Gripper, SensorBundle, WorldModel, TICK_DT};
use crate::world::{load_map, Point2, Vector2};
use crate::{normalize_angle, Costmap, OccupancyGrid, Pose2D, Result, Twist2D, INSCRIBED};

/// Marker frames without the requested object before it counts as lost.
const LOST_AFTER_TICKS: u32 = 40;
/// Grasp re-plans allowed when the target moves.
const MAX_GRASP_REPLANS: u32 = 3;
/// Idle time after which a person who is still near the dock is greeted again.
const REGREET_AFTER: f64 = 10.0;
/// Extra radius around the band for which costmap obstacles are collected.
const OBSTACLE_MARGIN: f64 = 1.5;
/// Distance to the goal below which the band hands over to a straight-line
/// approach.
const APPROACH_RADIUS: f64 = 0.4;
const APPROACH_SPEED: f64 = 0.25;
/// Heading error above which the approach turns in place first.
const APPROACH_TURN: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Back in Idle after a completed handover.
    Completed,
    /// Back in Idle after the task was abandoned.
    Aborted,
    /// Step budget exhausted.
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub outcome: Outcome,
    pub ticks: u64,
    pub final_state: RobotState,
    pub collisions: u64,
    pub replans: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NavPhase {
    Align,
    Drive,
    /// Last stretch in a straight line, once the way to the goal is clear.
    Approach,
    Settle,
}

#[derive(Debug, Clone)]
struct NavTask {
    goal: Pose2D,
    path: GlobalPath,
    phase: NavPhase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GraspStep {
    Approach,
    Descend,
    Close,
    Retreat,
}

#[derive(Debug, Clone)]
struct GraspTask {
    plan: GraspPlan,
    step: GraspStep,
    replans: u32,
}

#[derive(Debug, Clone)]
struct Person {
    obstacle: u32,
    face: Vec<f64>,
}

pub struct Session {
    scenario: Scenario,
    world: WorldModel,
    static_map: OccupancyGrid,
    field: DistanceField,
    layer: DynamicLayer,
    costmap: Costmap,
    mcl: ParticleSet,
    estimate: Pose2D,
    planner: TebPlanner,
    nav: Option<NavTask>,
    controller: DriveController,
    fsm: Fsm,
    entered_at: f64,
    first_entry: BTreeMap<RobotState, u64>,
    grammar: CommandGrammar,
    gallery: FaceGallery,
    people: Vec<Person>,
    face_rng: SimRng,
    ik_rng: SimRng,
    grasp: Option<GraspTask>,
    holding: Option<ArmSide>,
    handover: HandoverMonitor,
    unseen_ticks: u32,
    queue: VecDeque<ClientCommand>,
    script_fired: Vec<bool>,
    scripted: bool,
    greet_armed: bool,
    band_blocked: bool,
    task_started: bool,
    pending: Vec<RobotEvent>,
    arm_cmds: [ArmCommand; 2],
    outcome: Option<Outcome>,
    collisions: u64,
    replans: u64,
    last_record: Option<TraceRecord>,
}

impl Session {
    /// Builds the world and the robot's software stack. With `scripted`
    /// false the scenario's script is ignored and commands come only from
    /// [`Session::enqueue`].
    pub fn new(scenario: Scenario, scripted: bool) -> Result<Self> {
        scenario.validate()?;
        let seed = scenario.seed;
        let walls = scenario.world.segments();
        let dock = pose(&scenario.robot.dock);
        let mut world = WorldModel::new(seed, walls.clone(), dock, scenario.sim.clone());
        world.objects = scenario.world.world_objects();
        for o in &scenario.world.obstacles {
            world.add_obstacle(Point2::new(o.x, o.y), o.r, Vector2::new(o.vx, o.vy));
        }
        let gallery = scenario.load_gallery()?;
        let mut people = Vec::new();
        for (i, p) in scenario.world.people.iter().enumerate() {
            let id = world.add_obstacle(Point2::new(p.x, p.y), p.r, Vector2::zeros());
            let face = p
                .identity
                .as_ref()
                .and_then(|n| gallery.entries().get(n))
                .map(|e| e[0].clone())
                .unwrap_or_else(|| synthetic_embedding(seed ^ 0x5eed, i as u64));
            people.push(Person { obstacle: id, face });
        }
        for side in [ArmSide::Left, ArmSide::Right] {
            world.set_arm_configuration(side, park_configuration());
        }
        let static_map = match &scenario.map.file {
            Some(f) => load_map(f)?,
            None => survey_map(&walls, &dock, &scenario.sim.lidar, &scenario.map.survey),
        };
        let field = DistanceField::from_grid(&static_map);
        let layer = DynamicLayer::new(scenario.map.dynamic);
        let costmap = inflate(&static_map, Some(&layer), &scenario.map.inflation);
        let loc = scenario.localization;
        let mcl = ParticleSet::uniform_around(
            &dock,
            loc.prior_xy,
            loc.prior_theta,
            loc.mcl.particles,
            rng::stream(seed, Stream::Particles),
        );
        let estimate = mcl.estimate();
        let planner = TebPlanner::new(scenario.weights, scenario.planner.limits, scenario.planner.params);
        let controller = DriveController::new(&scenario.control, 0.0);
        let grammar = scenario.compile_grammar()?;
        let script_fired = vec![false; scenario.script.len()];
        let mut first_entry = BTreeMap::new();
        first_entry.insert(RobotState::Idle, 0);
        Ok(Self {
            world,
            static_map,
            field,
            layer,
            costmap,
            mcl,
            estimate,
            planner,
            nav: None,
            controller,
            fsm: Fsm::new(),
            entered_at: 0.0,
            first_entry,
            grammar,
            gallery,
            people,
            face_rng: rng::stream(seed, Stream::Face),
            ik_rng: rng::stream(seed, Stream::Ik),
            grasp: None,
            holding: None,
            handover: HandoverMonitor::default(),
            unseen_ticks: 0,
            queue: VecDeque::new(),
            script_fired,
            scripted,
            greet_armed: true,
            band_blocked: false,
            task_started: false,
            pending: Vec::new(),
            arm_cmds: [ArmCommand::default(); 2],
            outcome: None,
            collisions: 0,
            replans: 0,
            last_record: None,
            scenario,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn world(&self) -> &WorldModel {
        &self.world
    }

    pub fn static_map(&self) -> &OccupancyGrid {
        &self.static_map
    }

    pub fn costmap(&self) -> &Costmap {
        &self.costmap
    }

    pub fn state(&self) -> RobotState {
        self.fsm.state
    }

    pub fn estimate(&self) -> Pose2D {
        self.estimate
    }

    pub fn particles(&self) -> &ParticleSet {
        &self.mcl
    }

    pub fn planner(&self) -> &TebPlanner {
        &self.planner
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn tick_count(&self) -> u64 {
        self.world.tick
    }

    pub fn collisions(&self) -> u64 {
        self.collisions
    }

    pub fn replans(&self) -> u64 {
        self.replans
    }

    /// Queues a command for the start of the next tick.
    pub fn enqueue(&mut self, cmd: ClientCommand) {
        self.queue.push_back(cmd);
    }

    pub fn hello(&self) -> ServerMessage {
        ServerMessage::Hello {
            map: MapPayload::from_grid(&self.static_map),
            config: SessionConfig {
                scenario: self.scenario.name.clone(),
                seed: self.scenario.seed,
                tick_dt: TICK_DT,
                objects: self.scenario.world.objects.iter().map(|o| o.id.clone()).collect(),
                robot_radius: self.world.footprint.circumradius(),
            },
        }
    }

    /// View of the latest tick for live clients.
    pub fn snapshot(&self, seq: u64) -> Snapshot {
        let r = self.last_record.as_ref();
        Snapshot {
            seq,
            tick: self.world.tick,
            state: self.fsm.state.name().to_string(),
            pose: self.world.base,
            estimate: self.estimate,
            particles_summary: self.mcl.summary(),
            trajectory: self
                .planner
                .trajectory()
                .filter(|_| self.nav.is_some())
                .map(|t| t.poses.iter().map(|p| [p.x, p.y, p.theta]).collect())
                .unwrap_or_default(),
            obstacles: self
                .world
                .obstacles
                .iter()
                .map(|o| ObstacleView { id: o.id, x: o.center.x, y: o.center.y, r: o.radius, vx: o.velocity.x, vy: o.velocity.y })
                .collect(),
            arm_q: [self.world.arms[0].q.0, self.world.arms[1].q.0],
            events: r.map(|r| r.events.clone()).unwrap_or_default(),
        }
    }

    fn now(&self) -> f64 {
        self.world.time()
    }

    fn queue_script(&mut self, tick: u64) {
        if !self.scripted {
            return;
        }
        for (i, e) in self.scenario.script.iter().enumerate() {
            if self.script_fired[i] {
                continue;
            }
            let due = match (e.at, e.when) {
                (Some(at), _) => tick >= at,
                (None, Some(s)) => self.first_entry.get(&s).is_some_and(|t0| tick >= t0 + e.after),
                _ => false,
            };
            if due {
                self.script_fired[i] = true;
                self.queue.push_back(e.command.clone());
            }
        }
    }

    fn apply_command(&mut self, cmd: ClientCommand, events: &mut Vec<RobotEvent>, trace: &mut Vec<TraceEvent>) {
        trace.push(TraceEvent::Command { command: cmd.clone() });
        match cmd {
            ClientCommand::Fetch { object } => events.push(RobotEvent::CommandParsed { intent: Intent::fetch(&object) }),
            ClientCommand::Say { text } => {
                let intent = parse_command(&self.grammar, &text);
                trace.push(TraceEvent::Intent { intent: intent.clone() });
                events.push(match intent {
                    Some(i) if i.action == Action::Stop => {
                        self.controller.press_estop();
                        RobotEvent::EStop
                    }
                    Some(intent) => RobotEvent::CommandParsed { intent },
                    None => RobotEvent::NoParse,
                });
            }
            ClientCommand::AddObstacle { x, y, r, vx, vy } => {
                self.world.add_obstacle(Point2::new(x, y), r, Vector2::new(vx, vy));
            }
            ClientCommand::Tug { f_z } => self.world.apply_tug(f_z),
            ClientCommand::Estop {} => {
                self.controller.press_estop();
                events.push(RobotEvent::EStop);
            }
            ClientCommand::Reset {} => {
                if self.fsm.state == RobotState::EStopped {
                    self.controller.reset(self.now());
                }
                events.push(RobotEvent::Reset);
            }
            ClientCommand::SetPose { x, y, theta } => {
                let p = Pose2D::new(x, y, theta);
                self.world.base = p;
                let loc = self.scenario.localization;
                let rng = rng::stream(self.scenario.seed ^ self.world.tick, Stream::Particles);
                self.mcl = ParticleSet::uniform_around(&p, loc.prior_xy, loc.prior_theta, loc.mcl.particles, rng);
                self.estimate = self.mcl.estimate();
                self.planner.clear();
            }
        }
    }

    fn person_near_dock(&self) -> bool {
        let dock = pose(&self.scenario.robot.dock).position();
        let r = self.scenario.robot.proximity_radius;
        self.world.obstacles.iter().any(|o| (o.center - dock).norm() <= r)
    }

    fn nearest_person(&self) -> Option<&Person> {
        let base = self.world.base.position();
        self.people
            .iter()
            .filter_map(|p| {
                let o = self.world.obstacles.iter().find(|o| o.id == p.obstacle)?;
                Some(((o.center - base).norm(), p))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, p)| p)
    }

    fn goal_for(&self, target: NavTarget) -> Pose2D {
        match target {
            NavTarget::Warehouse => pose(&self.scenario.robot.warehouse),
            NavTarget::User => pose(&self.scenario.robot.handover),
        }
    }

    fn execute(&mut self, directives: Vec<Directive>, trace: &mut Vec<TraceEvent>) {
        for d in directives {
            match d {
                Directive::Say { text } => trace.push(TraceEvent::Say { text }),
                Directive::Warning { text } => trace.push(TraceEvent::Warning { text }),
                Directive::CaptureFace => {
                    let probe = match self.nearest_person() {
                        Some(p) => noisy_probe(&p.face.clone(), self.scenario.gallery.probe_sigma, &mut self.face_rng),
                        None => Vec::new(),
                    };
                    let m = if probe.is_empty() {
                        FaceMatch::Unknown { best: None }
                    } else {
                        match_face(&self.gallery, &probe)
                    };
                    let (identity, distance) = match &m {
                        FaceMatch::Known { identity, distance } => (Some(identity.clone()), Some(*distance)),
                        FaceMatch::Unknown { best } => (None, *best),
                    };
                    trace.push(TraceEvent::Face { identity: identity.clone(), distance });
                    self.pending.push(match identity {
                        Some(identity) => RobotEvent::FaceRecognized { identity },
                        None => RobotEvent::FaceUnknown,
                    });
                }
                Directive::Navigate { target } => {
                    self.task_started = true;
                    let goal = self.goal_for(target);
                    match plan(&self.costmap, &self.estimate, &goal) {
                        Ok(path) => {
                            trace.push(TraceEvent::GlobalPlan { length: path.length() });
                            self.planner.clear();
                            self.nav = Some(NavTask { goal, path, phase: NavPhase::Align });
                        }
                        Err(e) => {
                            trace.push(TraceEvent::Warning { text: format!("global plan failed: {e}") });
                            self.pending.push(RobotEvent::PlanFailed);
                        }
                    }
                }
                Directive::StopBase => {
                    self.nav = None;
                    self.planner.clear();
                    self.grasp = None;
                }
                Directive::LocateObject { .. } => {
                    self.unseen_ticks = 0;
                    self.grasp = None;
                }
                Directive::Grasp { pose } => match self.start_grasp(&pose) {
                    Ok(plan) => {
                        trace.push(TraceEvent::GraspPlan { arm: plan.arm });
                        self.grasp = Some(GraspTask { plan, step: GraspStep::Approach, replans: 0 });
                        self.unseen_ticks = 0;
                    }
                    Err(why) => {
                        trace.push(TraceEvent::Say { text: why });
                        self.pending.push(RobotEvent::GraspFailed);
                    }
                },
                Directive::Release => {
                    if let Some(side) = self.holding.take() {
                        self.arm_cmds[side.index()] = ArmCommand { target: Some(park_configuration()), gripper: Some(Gripper::Open) };
                        trace.push(TraceEvent::Release);
                    }
                    self.handover.reset();
                }
            }
        }
    }

    fn start_grasp(&mut self, object_pose: &crate::Transform3D) -> std::result::Result<GraspPlan, String> {
        let id = self.fsm.object.clone().unwrap_or_default();
        let mass = self.scenario.world.objects.iter().find(|o| o.id == id).map(|o| o.mass).unwrap_or(0.0);
        match check_payload(mass) {
            Ok(PayloadCheck::Ok) => {}
            Ok(PayloadCheck::OverLimit) => return Err(format!("The {id} is too heavy for me.")),
            Err(e) => return Err(e.to_string()),
        }
        let [left, right] = &self.world.chains;
        let side = select_arm(left, right, object_pose).ok_or_else(|| format!("The {id} is out of reach."))?;
        self.plan_with(side, &id, object_pose, mass)
    }

    fn plan_with(&mut self, side: ArmSide, id: &str, object_pose: &crate::Transform3D, mass: f64) -> std::result::Result<GraspPlan, String> {
        let chain = &self.world.chains[side.index()];
        let other = &self.world.chains[side.other().index()];
        let other_q = self.world.arms[side.other().index()].q;
        let seed = self.world.arms[side.index()].q;
        plan_grasp(chain, other, &other_q, id, object_pose, mass, &seed, &IkParams::default(), &mut self.ik_rng)
            .map_err(|e| format!("I cannot reach the {id}: {e}."))
    }

    fn transition_to(&mut self, from: RobotState, cause: &RobotEvent, trace: &mut Vec<TraceEvent>) {
        let to = self.fsm.state;
        if to == from {
            return;
        }
        trace.push(TraceEvent::Transition {
            from: from.name().into(),
            to: to.name().into(),
            cause: super::fsm::event_name(cause).into(),
        });
        self.entered_at = self.now();
        self.first_entry.entry(to).or_insert(self.world.tick);
        if to == RobotState::Idle {
            // abandoned tasks leave the base free and the arms parked
            self.nav = None;
            self.planner.clear();
            self.grasp = None;
            if self.task_started && self.outcome.is_none() {
                self.outcome = Some(if from == RobotState::Handover { Outcome::Completed } else { Outcome::Aborted });
            }
            if from == RobotState::Recovery {
                self.controller.reset(self.now());
            }
        }
        if to == RobotState::EStopped {
            self.nav = None;
            self.planner.clear();
            self.grasp = None;
        }
    }

    fn dispatch_all(&mut self, events: Vec<RobotEvent>, trace: &mut Vec<TraceEvent>) {
        for e in events {
            let from = self.fsm.state;
            let directives = self.fsm.dispatch(&e);
            self.transition_to(from, &e, trace);
            self.execute(directives, trace);
        }
    }

    fn nav_command(&mut self, events: &mut Vec<RobotEvent>, trace: &mut Vec<TraceEvent>) -> (Option<Twist2D>, Option<CostBreakdown>) {
        let now = self.now();
        let est = self.estimate;
        let spec = self.scenario.planner;
        let approachable = self.nav.as_ref().is_some_and(|t| {
            let g = t.goal.position();
            (g - est.position()).norm() < APPROACH_RADIUS && self.line_clear(&est.position(), &g)
        });
        let Some(task) = self.nav.as_mut() else {
            return (Some(Twist2D::ZERO), None);
        };
        if task.phase == NavPhase::Align {
            let ahead = task
                .path
                .waypoints
                .iter()
                .find(|w| (*w - est.position()).norm() > 0.3)
                .copied()
                .unwrap_or(task.goal.position());
            let heading = (ahead.y - est.y).atan2(ahead.x - est.x);
            if normalize_angle(heading - est.theta).abs() > spec.align_threshold {
                return (Some(self.controller.rotate_to(now, heading, est.theta, TICK_DT)), None);
            }
            self.controller.reset_heading();
            task.phase = NavPhase::Drive;
        }
        let to_goal = task.goal.position() - est.position();
        if task.phase == NavPhase::Drive && approachable {
            task.phase = NavPhase::Approach;
            self.planner.clear();
        }
        if task.phase == NavPhase::Approach {
            if to_goal.norm() < spec.goal_tolerance {
                task.phase = NavPhase::Settle;
            } else {
                let heading = to_goal.y.atan2(to_goal.x);
                let turn = self.controller.rotate_to(now, heading, est.theta, TICK_DT);
                let v = if normalize_angle(heading - est.theta).abs() > APPROACH_TURN {
                    0.0
                } else {
                    APPROACH_SPEED.min(to_goal.norm())
                };
                return (Some(Twist2D::new(v, turn.omega)), None);
            }
        }
        if task.phase == NavPhase::Settle {
            let err = normalize_angle(task.goal.theta - est.theta);
            if err.abs() < spec.heading_tolerance && self.controller.last_output().omega.abs() < 0.05 {
                events.push(RobotEvent::GoalReached);
                self.nav = None;
                self.controller.reset_heading();
                return (Some(Twist2D::ZERO), None);
            }
            return (Some(self.controller.rotate_to(now, task.goal.theta, est.theta, TICK_DT)), None);
        }

        // global replan when the remaining path runs into something new
        let blocked = task.path.cells.iter().any(|c| self.costmap.cost(*c) >= INSCRIBED);
        if blocked {
            match plan(&self.costmap, &est, &task.goal) {
                Ok(path) => {
                    trace.push(TraceEvent::Replan { reason: "path blocked".into() });
                    trace.push(TraceEvent::GlobalPlan { length: path.length() });
                    self.replans += 1;
                    task.path = path;
                    self.planner.clear();
                }
                Err(e) => {
                    trace.push(TraceEvent::Warning { text: format!("global replan failed: {e}") });
                    events.push(RobotEvent::PlanFailed);
                    return (None, None);
                }
            }
        }
        let params = self.planner.params;
        let radius = params.lookahead + params.robot_radius + OBSTACLE_MARGIN;
        let obstacles = obstacles_from_costmap(&self.costmap, &est.position(), radius);
        let fresh = self.planner.needs_replan(&est, &obstacles, &task.goal);
        let blocked = self
            .planner
            .trajectory()
            .is_some_and(|t| t.min_clearance(&obstacles, params.robot_radius) < 0.8 * params.d_min);
        // one event per blockage, not one per tick spent working around it
        if blocked && !self.band_blocked {
            trace.push(TraceEvent::Replan { reason: "obstacle on band".into() });
            self.replans += 1;
        }
        self.band_blocked = blocked;
        if fresh {
            self.planner.reseed(&est, &task.path.waypoints, &task.goal);
        }
        let v_now = self.controller.last_output().v;
        match self.planner.update(&est, v_now, &obstacles, fresh) {
            Ok(cmd) => (Some(cmd), self.planner.last_cost().copied()),
            Err(e) => {
                trace.push(TraceEvent::Warning { text: format!("local planner: {e}") });
                self.planner.clear();
                events.push(RobotEvent::PlanFailed);
                (None, None)
            }
        }
    }

    /// Whether the robot's disc, plus a small margin, can sweep straight from
    /// `a` to `b`. Cost falls monotonically with clearance, so one threshold
    /// on the costmap suffices.
    fn line_clear(&self, a: &crate::Point2, b: &crate::Point2) -> bool {
        let clearance = self.planner.params.robot_radius + 0.05;
        let limit = cost_for_distance(clearance, &self.scenario.map.inflation);
        let step = 0.5 * self.costmap.resolution();
        let n = ((b - a).norm() / step).ceil() as usize;
        (0..=n).all(|k| {
            let p = a + (b - a) * (k as f64 / n.max(1) as f64);
            self.costmap.world_to_grid(&p).is_some_and(|c| self.costmap.cost(c) <= limit)
        })
    }

    fn grasp_arm_command(&mut self) {
        let Some(task) = &self.grasp else {
            return;
        };
        let side = task.plan.arm.index();
        let w = &task.plan.waypoints;
        self.arm_cmds[side] = match task.step {
            GraspStep::Approach => ArmCommand { target: Some(w[0]), gripper: Some(Gripper::Open) },
            GraspStep::Descend => ArmCommand { target: Some(w[1]), gripper: None },
            GraspStep::Close => ArmCommand { target: None, gripper: Some(Gripper::Close) },
            GraspStep::Retreat => ArmCommand { target: Some(w[2]), gripper: None },
        };
    }

    fn grasp_progress(&mut self, bundle: &SensorBundle, events: &mut Vec<RobotEvent>, trace: &mut Vec<TraceEvent>) {
        let Some(task) = self.grasp.as_mut() else {
            return;
        };
        let side = task.plan.arm;
        let arm = &self.world.arms[side.index()];
        if matches!(task.step, GraspStep::Approach | GraspStep::Descend) {
            let seen = bundle.markers.iter().find(|m| m.object_id == task.plan.object_id).map(|m| m.pose);
            match seen {
                None => {
                    self.unseen_ticks += 1;
                    if self.unseen_ticks >= LOST_AFTER_TICKS {
                        self.grasp = None;
                        events.push(RobotEvent::ObjectLost);
                    }
                    return;
                }
                Some(p) => {
                    self.unseen_ticks = 0;
                    if monitor_target(&task.plan, &p) == TargetStatus::Replan {
                        let (id, mass, replans) = (task.plan.object_id.clone(), task.plan.object_mass, task.replans);
                        trace.push(TraceEvent::Replan { reason: "grasp target moved".into() });
                        if replans >= MAX_GRASP_REPLANS {
                            self.grasp = None;
                            events.push(RobotEvent::GraspFailed);
                            return;
                        }
                        match self.plan_with(side, &id, &p, mass) {
                            Ok(plan) => self.grasp = Some(GraspTask { plan, step: GraspStep::Approach, replans: replans + 1 }),
                            Err(why) => {
                                trace.push(TraceEvent::Say { text: why });
                                self.grasp = None;
                                events.push(RobotEvent::GraspFailed);
                            }
                        }
                        return;
                    }
                }
            }
        }
        let Some(task) = self.grasp.as_mut() else {
            return;
        };
        match task.step {
            GraspStep::Approach if arm.at_target() => task.step = GraspStep::Descend,
            GraspStep::Descend if arm.at_target() => task.step = GraspStep::Close,
            GraspStep::Close => task.step = GraspStep::Retreat,
            GraspStep::Retreat if arm.at_target() => {
                let held = arm.holding.is_some();
                self.grasp = None;
                if held {
                    self.holding = Some(side);
                    self.handover.reset();
                    events.push(RobotEvent::GraspSucceeded);
                } else {
                    events.push(RobotEvent::GraspFailed);
                }
            }
            _ => {}
        }
    }

    /// Advances one tick and returns its trace record.
    pub fn step(&mut self) -> TraceRecord {
        let tick = self.world.tick + 1;
        let now = self.now();
        let mut trace = Vec::new();
        let mut events: Vec<RobotEvent> = std::mem::take(&mut self.pending);

        self.queue_script(tick);
        while let Some(cmd) = self.queue.pop_front() {
            self.apply_command(cmd, &mut events, &mut trace);
        }
        if let Some(limit) = self.scenario.timeouts.for_state(self.fsm.state) {
            if now - self.entered_at >= limit {
                events.push(RobotEvent::Timeout);
            }
        }
        if self.fsm.state == RobotState::Idle {
            let near = self.person_near_dock();
            let docked = self.estimate.distance(&pose(&self.scenario.robot.dock)) < 0.5;
            if !near || now - self.entered_at >= REGREET_AFTER {
                self.greet_armed = true;
            }
            if near && docked && self.greet_armed && self.outcome.is_none() {
                self.greet_armed = false;
                events.push(RobotEvent::PersonProximate);
            }
        }
        self.dispatch_all(events, &mut trace);

        let mut events = Vec::new();
        let (cmd, cost) = if self.fsm.state.is_navigating() {
            self.nav_command(&mut events, &mut trace)
        } else {
            (Some(Twist2D::ZERO), None)
        };
        let twist = self.controller.command(now, cmd, TICK_DT);
        self.grasp_arm_command();
        let arm_cmds = std::mem::take(&mut self.arm_cmds);
        let bundle = self.world.tick(twist, arm_cmds);

        let loc = self.scenario.localization.mcl;
        self.mcl.motion_update(&bundle.odometry, loc.sigma_xy, loc.sigma_theta);
        self.mcl.measurement_update(&bundle.scan, &self.field, loc.sigma_hit, loc.beam_stride);
        self.mcl.resample();
        self.estimate = self.mcl.estimate();
        self.layer.update(&self.static_map, &self.estimate, &bundle.scan);
        self.costmap = inflate(&self.static_map, Some(&self.layer), &self.scenario.map.inflation);

        if bundle.collision {
            self.collisions += 1;
            trace.push(TraceEvent::Collision);
        }
        match self.fsm.state {
            RobotState::LocatingObject => {
                let want = self.fsm.object.clone().unwrap_or_default();
                if let Some(m) = bundle.markers.iter().find(|m| m.object_id == want) {
                    events.push(RobotEvent::ObjectLocated { pose: m.pose });
                }
            }
            RobotState::Grasping => self.grasp_progress(&bundle, &mut events, &mut trace),
            RobotState::Handover => {
                if let Some(side) = self.holding {
                    if self.handover.update(&bundle.wrist[side.index()]) == HandoverStatus::Release {
                        events.push(RobotEvent::ForceDetected);
                    }
                }
            }
            _ => {}
        }
        self.dispatch_all(events, &mut trace);

        let record = TraceRecord {
            tick,
            time_s: self.now(),
            state: self.fsm.state.name().to_string(),
            pose: self.world.base,
            estimate: self.estimate,
            twist,
            events: trace,
            cost_breakdown: cost,
        };
        self.last_record = Some(record.clone());
        record
    }

    /// Runs until the task ends or the budget runs out, writing one trace
    /// line per tick.
    pub fn run<W: Write>(&mut self, max_ticks: u64, trace: Option<&mut TraceWriter<W>>) -> Result<RunSummary> {
        let mut trace = trace;
        while self.outcome.is_none() && self.world.tick < max_ticks {
            let record = self.step();
            if let Some(w) = trace.as_deref_mut() {
                w.write(&record)?;
            }
        }
        Ok(self.summary())
    }

    /// Summary so far; an unfinished run counts as a timeout.
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            outcome: self.outcome.unwrap_or(Outcome::Timeout),
            ticks: self.world.tick,
            final_state: self.fsm.state,
            collisions: self.collisions,
            replans: self.replans,
        }
    }
}

/// Headless run of a scenario with its script.
pub fn run_scenario<W: Write>(scenario: Scenario, max_ticks: Option<u64>, trace: Option<&mut TraceWriter<W>>) -> Result<RunSummary> {
    let budget = max_ticks.unwrap_or(scenario.max_ticks);
    Session::new(scenario, true)?.run(budget, trace)
}
