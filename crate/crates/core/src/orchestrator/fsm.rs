//! Task state machine. `dispatch` is total: any pair not in the table keeps
//! the state and emits a warning.

use serde::{Deserialize, Serialize};

use crate::interaction::{Action, Intent};
use crate::Transform3D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RobotState {
    Idle,
    Identifying,
    Listening,
    NavigatingToWarehouse,
    LocatingObject,
    Grasping,
    NavigatingToUser,
    Handover,
    Recovery,
    EStopped,
}

impl RobotState {
    pub const ALL: [RobotState; 10] = [
        RobotState::Idle,
        RobotState::Identifying,
        RobotState::Listening,
        RobotState::NavigatingToWarehouse,
        RobotState::LocatingObject,
        RobotState::Grasping,
        RobotState::NavigatingToUser,
        RobotState::Handover,
        RobotState::Recovery,
        RobotState::EStopped,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RobotState::Idle => "Idle",
            RobotState::Identifying => "Identifying",
            RobotState::Listening => "Listening",
            RobotState::NavigatingToWarehouse => "NavigatingToWarehouse",
            RobotState::LocatingObject => "LocatingObject",
            RobotState::Grasping => "Grasping",
            RobotState::NavigatingToUser => "NavigatingToUser",
            RobotState::Handover => "Handover",
            RobotState::Recovery => "Recovery",
            RobotState::EStopped => "EStopped",
        }
    }

    pub fn is_navigating(self) -> bool {
        matches!(self, RobotState::NavigatingToWarehouse | RobotState::NavigatingToUser)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RobotEvent {
    /// Someone is standing close to the dock.
    PersonProximate,
    FaceRecognized { identity: String },
    FaceUnknown,
    CommandParsed { intent: Intent },
    NoParse,
    GoalReached,
    PlanFailed,
    /// Object pose in the base frame.
    ObjectLocated { pose: Transform3D },
    ObjectLost,
    GraspSucceeded,
    GraspFailed,
    ForceDetected,
    Timeout,
    EStop,
    Reset,
}

impl RobotEvent {
    /// One representative of every event kind, for exhaustive checks.
    pub fn samples() -> Vec<RobotEvent> {
        vec![
            RobotEvent::PersonProximate,
            RobotEvent::FaceRecognized { identity: "alice".into() },
            RobotEvent::FaceUnknown,
            RobotEvent::CommandParsed { intent: Intent::fetch("water") },
            RobotEvent::CommandParsed { intent: Intent { action: Action::Hello, object: None } },
            RobotEvent::NoParse,
            RobotEvent::GoalReached,
            RobotEvent::PlanFailed,
            RobotEvent::ObjectLocated { pose: Transform3D::identity() },
            RobotEvent::ObjectLost,
            RobotEvent::GraspSucceeded,
            RobotEvent::GraspFailed,
            RobotEvent::ForceDetected,
            RobotEvent::Timeout,
            RobotEvent::EStop,
            RobotEvent::Reset,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavTarget {
    Warehouse,
    User,
}

/// Side effects requested by a transition; the session carries them out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Directive {
    Say { text: String },
    CaptureFace,
    Navigate { target: NavTarget },
    StopBase,
    LocateObject { object: String },
    Grasp { pose: Transform3D },
    Release,
    Warning { text: String },
}

pub const MAX_RETRIES: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fsm {
    pub state: RobotState,
    /// Say-retries spent in the current listening phase.
    pub retries: u32,
    /// Object of the task in progress.
    pub object: Option<String>,
}

impl Default for Fsm {
    fn default() -> Self {
        Self { state: RobotState::Idle, retries: 0, object: None }
    }
}

fn say(text: impl Into<String>) -> Directive {
    Directive::Say { text: text.into() }
}

impl Fsm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dispatch(&mut self, event: &RobotEvent) -> Vec<Directive> {
        use RobotEvent as E;
        use RobotState as S;
        let (next, actions) = match (self.state, event) {
            (_, E::EStop) => (S::EStopped, vec![Directive::StopBase]),
            (S::EStopped, E::Reset) => (S::Idle, Vec::new()),

            (S::Idle, E::PersonProximate) => (S::Identifying, vec![Directive::CaptureFace]),

            (S::Identifying, E::FaceRecognized { identity }) => {
                self.retries = 0;
                (S::Listening, vec![say(format!("Hello {identity}, what can I bring you?"))])
            }
            (S::Identifying, E::FaceUnknown) => (S::Idle, vec![say("Sorry, I do not recognize you.")]),
            (S::Identifying, E::Timeout) => (S::Idle, Vec::new()),

            (S::Listening, E::CommandParsed { intent }) if intent.action == Action::Fetch => {
                let object = intent.object.clone().unwrap_or_default();
                self.object = Some(object.clone());
                (
                    S::NavigatingToWarehouse,
                    vec![say(format!("Fetching the {object}.")), Directive::Navigate { target: NavTarget::Warehouse }],
                )
            }
            (S::Listening, E::NoParse) if self.retries < MAX_RETRIES => {
                self.retries += 1;
                (S::Listening, vec![say("Sorry, could you repeat that?")])
            }
            (S::Listening, E::NoParse) => (S::Idle, vec![say("Sorry, I could not understand.")]),
            (S::Listening, E::Timeout) => (S::Idle, Vec::new()),

            (S::NavigatingToWarehouse, E::GoalReached) => {
                let object = self.object.clone().unwrap_or_default();
                (S::LocatingObject, vec![Directive::LocateObject { object }])
            }
            (S::NavigatingToWarehouse | S::NavigatingToUser, E::PlanFailed | E::Timeout) => {
                (S::Recovery, vec![Directive::StopBase, say("I cannot get there.")])
            }

            (S::LocatingObject, E::ObjectLocated { pose }) => (S::Grasping, vec![Directive::Grasp { pose: *pose }]),
            (S::LocatingObject, E::Timeout) => (S::Recovery, vec![say("I cannot find the object.")]),

            (S::Grasping, E::GraspSucceeded) => (S::NavigatingToUser, vec![Directive::Navigate { target: NavTarget::User }]),
            (S::Grasping, E::ObjectLost) => {
                let object = self.object.clone().unwrap_or_default();
                (S::LocatingObject, vec![Directive::LocateObject { object }])
            }
            (S::Grasping, E::GraspFailed | E::Timeout) => (S::Recovery, vec![say("I could not pick it up.")]),

            (S::NavigatingToUser, E::GoalReached) => {
                let object = self.object.clone().unwrap_or_default();
                (S::Handover, vec![say(format!("Here is your {object}."))])
            }

            (S::Handover, E::ForceDetected) => {
                self.object = None;
                (S::Idle, vec![Directive::Release])
            }
            (S::Handover, E::Timeout) => (S::Recovery, vec![say("Handover timed out.")]),

            (S::Recovery, E::Timeout) => {
                self.object = None;
                (S::Idle, Vec::new())
            }

            (s, e) => (s, vec![Directive::Warning { text: format!("ignored {} in {}", event_name(e), s.name()) }]),
        };
        if next == S::Idle || next == S::EStopped {
            self.retries = 0;
        }
        self.state = next;
        actions
    }
}

pub fn event_name(e: &RobotEvent) -> &'static str {
    match e {
        RobotEvent::PersonProximate => "person_proximate",
        RobotEvent::FaceRecognized { .. } => "face_recognized",
        RobotEvent::FaceUnknown => "face_unknown",
        RobotEvent::CommandParsed { .. } => "command_parsed",
        RobotEvent::NoParse => "no_parse",
        RobotEvent::GoalReached => "goal_reached",
        RobotEvent::PlanFailed => "plan_failed",
        RobotEvent::ObjectLocated { .. } => "object_located",
        RobotEvent::ObjectLost => "object_lost",
        RobotEvent::GraspSucceeded => "grasp_succeeded",
        RobotEvent::GraspFailed => "grasp_failed",
        RobotEvent::ForceDetected => "force_detected",
        RobotEvent::Timeout => "timeout",
        RobotEvent::EStop => "estop",
        RobotEvent::Reset => "reset",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use RobotState as S;

    fn at(state: RobotState) -> Fsm {
        Fsm { state, retries: 0, object: Some("water".into()) }
    }

    fn is_warning(d: &[Directive]) -> bool {
        matches!(d, [Directive::Warning { .. }])
    }

    #[test]
    fn greeting_path() {
        let mut f = Fsm::new();
        f.dispatch(&RobotEvent::PersonProximate);
        assert_eq!(f.state, S::Identifying);
        f.dispatch(&RobotEvent::FaceRecognized { identity: "alice".into() });
        assert_eq!(f.state, S::Listening);
        let d = f.dispatch(&RobotEvent::CommandParsed { intent: Intent::fetch("cup") });
        assert_eq!(f.state, S::NavigatingToWarehouse);
        assert!(d.contains(&Directive::Navigate { target: NavTarget::Warehouse }));
        assert_eq!(f.object.as_deref(), Some("cup"));
    }

    #[test]
    fn full_fetch_sequence() {
        let mut f = at(S::NavigatingToWarehouse);
        for (e, s) in [
            (RobotEvent::GoalReached, S::LocatingObject),
            (RobotEvent::ObjectLocated { pose: Transform3D::identity() }, S::Grasping),
            (RobotEvent::ObjectLost, S::LocatingObject),
            (RobotEvent::ObjectLocated { pose: Transform3D::identity() }, S::Grasping),
            (RobotEvent::GraspSucceeded, S::NavigatingToUser),
            (RobotEvent::GoalReached, S::Handover),
        ] {
            f.dispatch(&e);
            assert_eq!(f.state, s, "{e:?}");
        }
        assert_eq!(f.dispatch(&RobotEvent::ForceDetected), vec![Directive::Release]);
        assert_eq!(f.state, S::Idle);
    }

    #[test]
    fn estop_and_unlisted() {
        let mut f = at(S::Grasping);
        f.dispatch(&RobotEvent::EStop);
        assert_eq!(f.state, S::EStopped);
        let mut f = at(S::Handover);
        assert!(is_warning(&f.dispatch(&RobotEvent::GoalReached)));
        assert_eq!(f.state, S::Handover);
    }

    #[test]
    fn no_parse_retries_then_gives_up() {
        let mut f = at(S::Listening);
        for _ in 0..MAX_RETRIES {
            f.dispatch(&RobotEvent::NoParse);
            assert_eq!(f.state, S::Listening);
        }
        f.dispatch(&RobotEvent::NoParse);
        assert_eq!(f.state, S::Idle);
        // the budget is per listening phase
        let mut f = at(S::Identifying);
        f.retries = 2;
        f.dispatch(&RobotEvent::FaceRecognized { identity: "bob".into() });
        assert_eq!(f.retries, 0);
    }

    #[test]
    fn plan_failure_from_either_leg() {
        for s in [S::NavigatingToWarehouse, S::NavigatingToUser] {
            let mut f = at(s);
            f.dispatch(&RobotEvent::PlanFailed);
            assert_eq!(f.state, S::Recovery);
            f.dispatch(&RobotEvent::Timeout);
            assert_eq!(f.state, S::Idle);
        }
    }

    #[test]
    fn totality_and_safety() {
        for s in RobotState::ALL {
            for e in RobotEvent::samples() {
                let mut f = at(s);
                let d = f.dispatch(&e);
                assert!(RobotState::ALL.contains(&f.state));
                if e == RobotEvent::EStop {
                    assert_eq!(f.state, S::EStopped);
                } else if s == S::EStopped {
                    let expected = if e == RobotEvent::Reset { S::Idle } else { S::EStopped };
                    assert_eq!(f.state, expected, "{e:?}");
                }
                if f.state == s && s != S::Listening && s != S::EStopped {
                    assert!(is_warning(&d), "{s:?} {e:?} {d:?}");
                }
                if e == RobotEvent::Timeout && !matches!(s, S::Idle | S::EStopped) {
                    assert!(matches!(f.state, S::Recovery | S::Idle), "{s:?} timeout -> {:?}", f.state);
                }
            }
        }
    }
}
