//! Acceptance checks. Each test prints one PASS/FAIL line straight to stdout
//! (bypassing the test harness capture) with its runtime against a budget.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::f64::consts::PI;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use deniro_core::control::{ControlParams, DriveController};
use deniro_core::interaction::grammar::Expr;
use deniro_core::interaction::{calibrate_threshold, CommandGrammar};
use deniro_core::manipulation::{
    check_payload, solve_ik, ArmSide, IkParams, JointVector, KinematicChain, PayloadCheck, DOF,
};
use deniro_core::mapping::{inflate_mask, InflationParams};
use deniro_core::nav::global::plan;
use deniro_core::nav::teb::cost::to_vars;
use deniro_core::nav::teb::{
    initialize, optimize, Boundary, Obstacle, Problem, TebLimits, TebParams, TebTrajectory, TebWeights, Term,
};
use deniro_core::orchestrator::session::{Outcome, Session};
use deniro_core::orchestrator::trace::{parse_trace, TraceWriter};
use deniro_core::orchestrator::{Fsm, RobotEvent, RobotState, TraceEvent};
use deniro_core::protocol::ClientCommand;
use deniro_core::scenario::{canonical_corridor, ScriptEntry};
use deniro_core::world::GridGeometry;
use deniro_core::{normalize_angle, Costmap, Point2, Pose2D, Twist2D, INSCRIBED, LETHAL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

macro_rules! need {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    }};
}

fn criterion(name: &str, budget_s: u64, check: impl FnOnce() -> Result<String, String>) {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let in_time = elapsed <= Duration::from_secs(budget_s);
    let (ok, detail) = match result {
        Ok(d) if in_time => (true, d),
        Ok(d) => (false, format!("{d}; over budget")),
        Err(e) => (false, e),
    };
    let line = format!(
        "{} {name}: {detail} ({:.2} s of {budget_s} s)\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    std::io::stdout().write_all(line.as_bytes()).unwrap();
    assert!(ok, "{line}");
}

// ---------------------------------------------------------------------------

#[test]
fn costmap_cushion() {
    criterion("costmap cushion", 10, || {
        let params = InflationParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mut checked = 0usize;
        for grid in 0..100 {
            let resolution = [0.025, 0.05, 0.1][rng.random_range(0..3)];
            let (w, h) = (rng.random_range(10..60), rng.random_range(10..60));
            let density = rng.random_range(0.005..0.08);
            let mask: Vec<bool> = (0..w * h).map(|_| rng.random_bool(density)).collect();
            let geometry = GridGeometry { resolution, origin: Pose2D::identity(), width: w, height: h };
            let cm = inflate_mask(geometry, &mask, &params);
            let occupied: Vec<(i64, i64)> =
                (0..w * h).filter(|i| mask[*i]).map(|i| ((i % w) as i64, (i / w) as i64)).collect();
            for iy in 0..h {
                for ix in 0..w {
                    let cost = cm.costs()[iy * w + ix];
                    if mask[iy * w + ix] {
                        need!(cost == LETHAL, "grid {grid}: occupied ({ix},{iy}) has cost {cost}");
                        continue;
                    }
                    let d2 = occupied
                        .iter()
                        .map(|(ox, oy)| (ox - ix as i64).pow(2) + (oy - iy as i64).pow(2))
                        .min();
                    let near = d2.is_some_and(|d2| (d2 as f64).sqrt() * resolution <= params.radius + 1e-9);
                    if near {
                        need!(cost >= INSCRIBED, "grid {grid}: ({ix},{iy}) within cushion has cost {cost}");
                    } else {
                        need!(cost < INSCRIBED, "grid {grid}: ({ix},{iy}) outside cushion has cost {cost}");
                    }
                    checked += 1;
                }
            }
        }
        Ok(format!("{checked} free cells on 100 grids agree with brute force"))
    });
}

// ---------------------------------------------------------------------------

fn fetch_water(mass: f64) -> (Option<Outcome>, bool, Vec<String>) {
    let mut sc = canonical_corridor();
    sc.world.objects.iter_mut().find(|o| o.id == "water").unwrap().mass = mass;
    let mut s = Session::new(sc, true).unwrap();
    let mut said = Vec::new();
    let mut planned = false;
    while s.outcome().is_none() && s.tick_count() < 3000 && !planned {
        for e in s.step().events {
            match e {
                TraceEvent::Say { text } => said.push(text),
                TraceEvent::GraspPlan { .. } => planned = true,
                _ => {}
            }
        }
    }
    (s.outcome(), planned, said)
}

#[test]
fn payload_gate() {
    criterion("payload gate", 5, || {
        let limit: f64 = 2.2;
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let mut masses = vec![0.0, 0.1, 2.0, limit, limit.next_down(), limit.next_up(), 2.21, 2.5, 40.0];
        masses.extend((0..1000).map(|_| rng.random_range(0.0..5.0)));
        for m in &masses {
            let expected = if *m <= limit { PayloadCheck::Ok } else { PayloadCheck::OverLimit };
            need!(check_payload(*m).ok() == Some(expected), "{m} kg: {:?}", check_payload(*m));
        }
        for bad in [-0.1, f64::NAN, f64::INFINITY] {
            need!(check_payload(bad).is_err(), "{bad} kg accepted");
        }

        let (_, planned, _) = fetch_water(limit);
        need!(planned, "no grasp plan for 2.2 kg of water");
        let (outcome, planned, said) = fetch_water(limit.next_up());
        need!(!planned, "grasp planned for over-limit water");
        need!(outcome == Some(Outcome::Aborted), "over-limit run ended {outcome:?}");
        need!(said.iter().any(|t| t.contains("too heavy")), "no refusal in {said:?}");
        Ok(format!("{} masses classified; session plans a grasp at 2.2 kg and refuses the next float up", masses.len()))
    });
}

// ---------------------------------------------------------------------------

fn random_band(rng: &mut ChaCha8Rng) -> (TebTrajectory, Vec<Obstacle>) {
    let n = rng.random_range(3..12);
    let mut poses = Vec::new();
    let mut q = Pose2D::new(0.0, 0.0, rng.random_range(-PI..PI));
    for _ in 0..n {
        poses.push(q);
        let step = rng.random_range(-0.05..0.4);
        let turn = rng.random_range(-0.6..0.6);
        q = Pose2D::new(
            q.x + step * q.theta.cos() + rng.random_range(-0.05..0.05),
            q.y + step * q.theta.sin() + rng.random_range(-0.05..0.05),
            q.theta + turn,
        );
    }
    let dts = (0..n - 1).map(|_| rng.random_range(0.05..0.8)).collect();
    let obstacles = (0..rng.random_range(0..5))
        .map(|_| Obstacle {
            center: Point2::new(rng.random_range(-1.5..2.5), rng.random_range(-1.5..2.5)),
            radius: rng.random_range(0.0..0.3),
        })
        .collect();
    (TebTrajectory { poses, dts }, obstacles)
}

/// Minimum time for a rest-to-rest straight move under `v_max` and `a_max`.
fn trapezoid_time(dist: f64, v_max: f64, a_max: f64) -> f64 {
    let ramp = v_max * v_max / a_max;
    if dist >= ramp {
        2.0 * v_max / a_max + (dist - ramp) / v_max
    } else {
        2.0 * (dist / a_max).sqrt()
    }
}

#[test]
fn teb_descent_and_gradients() {
    criterion("TEB descent and gradients", 60, || {
        let (weights, limits, params) = (TebWeights::default(), TebLimits::default(), TebParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(103);

        let h = 1e-6;
        let mut worst = 0.0f64;
        for case in 0..100 {
            let (t, obs) = random_band(&mut rng);
            let boundary = Boundary { v_start: rng.random_range(0.0..0.5), v_goal: Some(0.0) };
            let pr = Problem::new(&t, &obs, weights, limits, params, boundary);
            let z = to_vars(&t);
            for term in Term::ALL {
                let g = pr.gradient(&z, term);
                for k in 0..z.len() {
                    let (mut zp, mut zm) = (z.clone(), z.clone());
                    zp[k] += h;
                    zm[k] -= h;
                    let fd = (pr.evaluate(&zp).get(term) - pr.evaluate(&zm).get(term)) / (2.0 * h);
                    let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1.0);
                    worst = worst.max(rel);
                    need!(rel <= 1e-4, "case {case} {} var {k}: analytic {} fd {fd}", term.name(), g[k]);
                }
            }
        }

        let mut calls = 0;
        for case in 0..100 {
            let (t, obs) = random_band(&mut rng);
            let v_start = rng.random_range(0.0..0.5);
            let (_, report) = optimize(&t, &obs, &weights, &limits, &params, Boundary { v_start, v_goal: None })
                .map_err(|e| format!("case {case}: {e}"))?;
            need!(report.is_monotone(), "case {case}: accepted costs {:?}", report.accepted);
            calls += 1;
        }

        let band = initialize(&[Point2::new(0.0, 0.0), Point2::new(5.0, 0.0)], 0.4, &params);
        let (opt, report) = optimize(&band, &[], &weights, &limits, &params, Boundary::default()).map_err(|e| e.to_string())?;
        need!(report.is_monotone(), "straight run: accepted costs {:?}", report.accepted);
        calls += 1;
        let oracle = trapezoid_time(5.0, limits.v_max, limits.a_max);
        let rel = (opt.total_time() - oracle).abs() / oracle;
        need!(rel <= 0.15, "5 m run takes {:.3} s against {oracle:.3} s", opt.total_time());

        Ok(format!(
            "gradient rel err max {worst:.1e}; {calls} optimize calls monotone; 5 m in {:.2} s vs {oracle:.2} s ({:.1}%)",
            opt.total_time(),
            100.0 * rel
        ))
    });
}

// ---------------------------------------------------------------------------

/// Separating-axis style test: the disc meets the convex polygon when its
/// center is inside or closer than `r` to an edge.
fn polygon_meets_disc(poly: &[Point2], c: &Point2, r: f64) -> bool {
    let n = poly.len();
    let mut inside = true;
    let mut sign = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let e = b - a;
        let cross = e.x * (c.y - a.y) - e.y * (c.x - a.x);
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign && cross != 0.0 {
            inside = false;
        }
        let t = ((c - a).dot(&e) / e.norm_squared()).clamp(0.0, 1.0);
        if (a + e * t - c).norm() < r {
            return true;
        }
    }
    inside
}

#[test]
fn obstacle_injection_replans() {
    criterion("obstacle injection replan", 300, || {
        let mut lines = Vec::new();
        for seed in 0..20u64 {
            let mut sc = canonical_corridor();
            sc.seed = seed;
            let mut s = Session::new(sc, true).map_err(|e| e.to_string())?;
            let mut injected_at = None;
            let mut replans = 0;
            while s.outcome().is_none() && s.tick_count() < 6000 {
                let base = s.world().base;
                if injected_at.is_none() && s.state() == RobotState::NavigatingToWarehouse && base.x > 3.0 {
                    s.enqueue(ClientCommand::AddObstacle { x: base.x + 1.5, y: base.y, r: 0.25, vx: 0.0, vy: 0.0 });
                    injected_at = Some(s.tick_count() + 1);
                }
                let r = s.step();
                if injected_at.is_some_and(|t| r.tick >= t) {
                    replans += r.events.iter().filter(|e| matches!(e, TraceEvent::Replan { .. })).count();
                }
                let w = s.world();
                let poly = w.footprint.world_vertices(&w.base);
                if let Some(o) = w.obstacles.iter().find(|o| polygon_meets_disc(&poly, &o.center, o.radius)) {
                    return Err(format!("seed {seed} tick {}: footprint meets obstacle {}", r.tick, o.id));
                }
            }
            need!(injected_at.is_some(), "seed {seed}: never passed x = 3 on the way out");
            need!(replans >= 1, "seed {seed}: no replan after the injection");
            need!(s.outcome() == Some(Outcome::Completed), "seed {seed}: ended {:?}", s.outcome());
            lines.push(replans);
        }
        Ok(format!(
            "20 runs completed, no footprint contact, replans per run {}..{}",
            lines.iter().min().unwrap(),
            lines.iter().max().unwrap()
        ))
    });
}

// ---------------------------------------------------------------------------

#[test]
fn ik_round_trip() {
    criterion("IK round trip", 30, || {
        let params = IkParams::default();
        let mut sample = ChaCha8Rng::seed_from_u64(104);
        let mut solver = ChaCha8Rng::seed_from_u64(105);
        let chains = [KinematicChain::default_arm(ArmSide::Left), KinematicChain::default_arm(ArmSide::Right)];
        let (mut worst_p, mut worst_r, mut most_restarts) = (0.0f64, 0.0f64, 0);
        for k in 0..1000 {
            let chain = &chains[k % 2];
            let mut q = JointVector::ZERO;
            for (i, (lo, hi)) in chain.limits().iter().enumerate() {
                q[i] = sample.random_range(*lo..*hi);
            }
            let target = chain.forward_kinematics(&q);
            let mut seed = q;
            for i in 0..DOF {
                seed[i] += sample.random_range(-0.1..=0.1);
            }
            let sol = solve_ik(chain, &target, &seed, &params, &mut solver).map_err(|e| format!("config {k}: {e}"))?;
            let reached = chain.forward_kinematics(&sol.q);
            let dp = (reached.translation.vector - target.translation.vector).norm();
            let dr = (target.rotation * reached.rotation.inverse()).angle();
            need!(dp < 1e-3 && dr < 1e-2, "config {k}: error {dp:.2e} m {dr:.2e} rad");
            need!(sol.restarts <= 3, "config {k}: {} restarts", sol.restarts);
            worst_p = worst_p.max(dp);
            worst_r = worst_r.max(dr);
            most_restarts = most_restarts.max(sol.restarts);
        }
        Ok(format!("1000/1000 solved, worst {worst_p:.3e} m {worst_r:.3e} rad, at most {most_restarts} restarts"))
    });
}

// ---------------------------------------------------------------------------

#[test]
fn localization_convergence() {
    criterion("localization convergence", 120, || {
        let mut first = Vec::new();
        for seed in 1..=10u64 {
            let mut sc = canonical_corridor();
            sc.seed = seed;
            // 1 m x 1 m x 20 degrees, as half-widths
            sc.localization.prior_xy = 0.5;
            sc.localization.prior_theta = 10f64.to_radians();
            let mut s = Session::new(sc, true).map_err(|e| e.to_string())?;
            let mut converged = None;
            let mut last = (f64::INFINITY, f64::INFINITY);
            for _ in 0..100 {
                let r = s.step();
                let dxy = (r.estimate.position() - r.pose.position()).norm();
                let dth = normalize_angle(r.estimate.theta - r.pose.theta).abs();
                if converged.is_none() && dxy < 0.1 && dth < 0.05 {
                    converged = Some(r.tick);
                }
                last = (dxy, dth);
            }
            need!(converged.is_some(), "seed {seed}: not converged by tick 100");
            need!(last.0 < 0.1 && last.1 < 0.05, "seed {seed}: error at tick 100 is {:.3} m {:.3} rad", last.0, last.1);
            first.push(converged.unwrap());
        }
        Ok(format!("10 seeds converged by tick {} and held at tick 100", first.iter().max().unwrap()))
    });
}

// ---------------------------------------------------------------------------

/// Textbook Dijkstra over the same move set: 8-connected, cells below
/// INSCRIBED traversable, diagonals may not clip a blocked cell, and a move
/// costs `len * (1 + cost/64)` of the cell entered.
fn dijkstra_oracle(costs: &[u8], w: usize, h: usize, s: (usize, usize), g: (usize, usize)) -> Option<f64> {
    let ok = |x: i64, y: i64| x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && costs[y as usize * w + x as usize] < INSCRIBED;
    if !ok(s.0 as i64, s.1 as i64) || !ok(g.0 as i64, g.1 as i64) {
        return None;
    }
    let mut dist = vec![f64::INFINITY; w * h];
    let mut heap = BinaryHeap::new();
    dist[s.1 * w + s.0] = 0.0;
    heap.push(Reverse((0u64, s.1 * w + s.0)));
    while let Some(Reverse((d_bits, i))) = heap.pop() {
        let d = f64::from_bits(d_bits);
        if d > dist[i] {
            continue;
        }
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for dx in -1..=1i64 {
            for dy in -1..=1i64 {
                if (dx, dy) == (0, 0) || !ok(x + dx, y + dy) {
                    continue;
                }
                if dx != 0 && dy != 0 && (!ok(x + dx, y) || !ok(x, y + dy)) {
                    continue;
                }
                let j = (y + dy) as usize * w + (x + dx) as usize;
                let len = if dx != 0 && dy != 0 { 2f64.sqrt() } else { 1.0 };
                let nd = d + len * (1.0 + costs[j] as f64 / 64.0);
                if nd < dist[j] {
                    dist[j] = nd;
                    // non-negative doubles order like their bit patterns
                    heap.push(Reverse((nd.to_bits(), j)));
                }
            }
        }
    }
    let d = dist[g.1 * w + g.0];
    d.is_finite().then_some(d)
}

#[test]
fn astar_optimality() {
    criterion("A* optimality", 30, || {
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        let (w, h) = (30, 30);
        let geometry = GridGeometry { resolution: 1.0, origin: Pose2D::identity(), width: w, height: h };
        let at = |c: (usize, usize)| Pose2D::new(c.0 as f64 + 0.5, c.1 as f64 + 0.5, 0.0);
        let (mut solved, mut unreachable) = (0, 0);
        for case in 0..200 {
            let blocked = rng.random_range(0.05..0.35);
            let costs: Vec<u8> = (0..w * h)
                .map(|_| {
                    if rng.random_bool(blocked) {
                        [INSCRIBED, LETHAL][rng.random_range(0..2)]
                    } else if rng.random_bool(0.5) {
                        0
                    } else {
                        rng.random_range(1..INSCRIBED)
                    }
                })
                .collect();
            let cm = Costmap::from_costs(geometry, costs.clone());
            // mostly free endpoints, sometimes anywhere
            let free: Vec<usize> = (0..w * h).filter(|i| costs[*i] < INSCRIBED).collect();
            let pick = |rng: &mut ChaCha8Rng| {
                let i = if rng.random_bool(0.9) { free[rng.random_range(0..free.len())] } else { rng.random_range(0..w * h) };
                (i % w, i / w)
            };
            let (s, g) = (pick(&mut rng), pick(&mut rng));
            let oracle = dijkstra_oracle(&costs, w, h, s, g);
            match (plan(&cm, &at(s), &at(g)), oracle) {
                (Ok(p), Some(d)) => {
                    need!((p.cost - d).abs() < 1e-9, "case {case}: A* {} vs Dijkstra {d}", p.cost);
                    // the reported cost is the cost of the reported cells
                    let walked: f64 = p
                        .cells
                        .windows(2)
                        .map(|c| {
                            let diag = c[0].ix != c[1].ix && c[0].iy != c[1].iy;
                            (if diag { 2f64.sqrt() } else { 1.0 }) * (1.0 + costs[c[1].iy * w + c[1].ix] as f64 / 64.0)
                        })
                        .sum();
                    need!((walked - p.cost).abs() < 1e-9, "case {case}: path walks to {walked}, reports {}", p.cost);
                    solved += 1;
                }
                (Err(_), None) => unreachable += 1,
                (a, d) => return Err(format!("case {case}: A* {:?} vs Dijkstra {d:?}", a.map(|p| p.cost))),
            }
        }
        Ok(format!("{solved} solved with equal cost, {unreachable} agreed unreachable"))
    });
}

// ---------------------------------------------------------------------------

/// Transition table written out independently of the implementation.
/// `None` means the pair is not listed and must keep the state.
fn expected(state: RobotState, event: &RobotEvent, retries: u32) -> Option<RobotState> {
    use RobotEvent as E;
    use RobotState as S;
    Some(match (state, event) {
        (_, E::EStop) => S::EStopped,
        (S::EStopped, E::Reset) => S::Idle,
        (S::Idle, E::PersonProximate) => S::Identifying,
        (S::Identifying, E::FaceRecognized { .. }) => S::Listening,
        (S::Identifying, E::FaceUnknown | E::Timeout) => S::Idle,
        (S::Listening, E::CommandParsed { intent }) if intent.object.is_some() => S::NavigatingToWarehouse,
        (S::Listening, E::NoParse) if retries < 3 => S::Listening,
        (S::Listening, E::NoParse | E::Timeout) => S::Idle,
        (S::NavigatingToWarehouse, E::GoalReached) => S::LocatingObject,
        (S::NavigatingToWarehouse | S::NavigatingToUser, E::PlanFailed | E::Timeout) => S::Recovery,
        (S::LocatingObject, E::ObjectLocated { .. }) => S::Grasping,
        (S::LocatingObject, E::Timeout) => S::Recovery,
        (S::Grasping, E::GraspSucceeded) => S::NavigatingToUser,
        (S::Grasping, E::ObjectLost) => S::LocatingObject,
        (S::Grasping, E::GraspFailed | E::Timeout) => S::Recovery,
        (S::NavigatingToUser, E::GoalReached) => S::Handover,
        (S::Handover, E::ForceDetected) => S::Idle,
        (S::Handover, E::Timeout) => S::Recovery,
        (S::Recovery, E::Timeout) => S::Idle,
        _ => return None,
    })
}

#[test]
fn fsm_totality_and_safety() {
    criterion("FSM totality and safety", 5, || {
        let events = RobotEvent::samples();
        let mut pairs = 0;
        for state in RobotState::ALL {
            for retries in [0, 3] {
                for e in &events {
                    let mut f = Fsm { state, retries, object: Some("water".into()) };
                    let d = f.dispatch(e);
                    match expected(state, e, retries) {
                        Some(next) => need!(f.state == next, "{state:?} + {e:?} went to {:?}, not {next:?}", f.state),
                        None => {
                            need!(f.state == state, "unlisted {state:?} + {e:?} moved to {:?}", f.state);
                            need!(
                                matches!(d.as_slice(), [deniro_core::orchestrator::Directive::Warning { .. }]),
                                "unlisted {state:?} + {e:?} gave {d:?}"
                            );
                        }
                    }
                    pairs += 1;
                }
            }
        }

        // absorbing: nothing but Reset leaves EStopped, and nothing moves
        let mut rng = ChaCha8Rng::seed_from_u64(108);
        let others: Vec<&RobotEvent> = events.iter().filter(|e| **e != RobotEvent::Reset).collect();
        for _ in 0..1000 {
            let mut f = Fsm { state: RobotState::EStopped, retries: 0, object: None };
            for _ in 0..30 {
                let d = f.dispatch(others[rng.random_range(0..others.len())]);
                need!(f.state == RobotState::EStopped, "left EStopped");
                use deniro_core::orchestrator::Directive as D;
                need!(d.iter().all(|x| matches!(x, D::Warning { .. } | D::StopBase)), "EStopped emitted {d:?}");
            }
        }

        // watchdog: once tripped the output is exactly zero, commands or not
        let params = ControlParams::default();
        let dt = 0.05;
        let mut c = DriveController::new(&params, 0.0);
        let mut now = 0.0;
        for _ in 0..40 {
            now += dt;
            c.command(now, Some(Twist2D::new(0.4, 0.5)), dt);
        }
        need!(!c.last_output().is_zero(), "controller never moved");
        let silent_from = now;
        let mut tripped = 0;
        for _ in 0..20 {
            now += dt;
            let out = c.command(now, None, dt);
            if now - silent_from > params.watchdog_timeout {
                need!(out == Twist2D::ZERO, "output {out:?} {:.2} s after the last command", now - silent_from);
                tripped += 1;
            }
        }
        need!(tripped > 0, "silence never exceeded the timeout");
        for k in 0..100 {
            now += dt;
            let cmd = (k % 3 != 0).then_some(Twist2D::new(0.4, 0.5));
            let out = c.command(now, cmd, dt);
            need!(out == Twist2D::ZERO, "tripped watchdog passed {out:?}");
            tripped += 1;
        }
        c.reset(now);
        need!(!c.command(now + dt, Some(Twist2D::new(0.4, 0.0)), dt).is_zero(), "reset did not rearm");
        c.press_estop();
        need!(c.command(now + 2.0 * dt, Some(Twist2D::new(0.4, 0.0)), dt) == Twist2D::ZERO, "estop let a command through");

        // the same guarantee through a full session
        let mut sc = canonical_corridor();
        sc.script.push(ScriptEntry { at: Some(150), when: None, after: 0, command: ClientCommand::Estop {} });
        let mut s = Session::new(sc, true).map_err(|e| e.to_string())?;
        for _ in 0..149 {
            s.step();
        }
        need!(s.state().is_navigating(), "not navigating at tick 149 ({:?})", s.state());
        for _ in 0..100 {
            let r = s.step();
            need!(r.state == "EStopped" && r.twist == Twist2D::ZERO, "tick {}: {} {:?}", r.tick, r.state, r.twist);
        }
        Ok(format!("{pairs} (state, event) pairs match the table; EStopped absorbing; {tripped} tripped ticks at zero"))
    });
}

// ---------------------------------------------------------------------------

/// Every sentence of at most `max` words generated by `e`.
fn expand(e: &Expr, rules: &BTreeMap<String, Expr>, max: usize) -> BTreeSet<Vec<String>> {
    match e {
        Expr::Word(w) => BTreeSet::from([vec![w.clone()]]),
        Expr::Ref(r) => expand(&rules[r], rules, max),
        Expr::Alt(v) => v.iter().flat_map(|e| expand(e, rules, max)).collect(),
        Expr::Opt(e) => {
            let mut s = expand(e, rules, max);
            s.insert(Vec::new());
            s
        }
        Expr::Tagged(e, _) => expand(e, rules, max),
        Expr::Seq(v) => v.iter().fold(BTreeSet::from([Vec::new()]), |acc, e| {
            let tails = expand(e, rules, max);
            acc.iter()
                .flat_map(|a| tails.iter().map(move |t| [a.clone(), t.clone()].concat()))
                .filter(|s| s.len() <= max)
                .collect()
        }),
    }
}

#[test]
fn grammar_conformance() {
    criterion("grammar conformance", 10, || {
        let g = CommandGrammar::default_commands();
        let language = expand(&g.rules()[g.root()], g.rules(), 5);
        let mut vocab: Vec<String> = g.vocabulary().into_iter().collect();
        vocab.push("banana".into());
        let n = vocab.len();
        let mut checked = 0usize;
        let mut accepted = 0usize;
        for len in 0..=5u32 {
            for code in 0..n.pow(len) {
                let mut c = code;
                let words: Vec<String> = (0..len)
                    .map(|_| {
                        let w = vocab[c % n].clone();
                        c /= n;
                        w
                    })
                    .collect();
                let yes = g.accepts(&words.join(" "));
                need!(yes == language.contains(&words), "{words:?}: parser says {yes}");
                accepted += usize::from(yes);
                checked += 1;
            }
        }
        need!(accepted == language.len(), "accepted {accepted} of {} sentences", language.len());

        let mut rng = ChaCha8Rng::seed_from_u64(109);
        for case in 0..2000 {
            let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
                let d: f64 = rng.random_range(lo..hi);
                // coarse values force ties between and within the sets
                if rng.random_bool(0.3) { (d * 20.0).round() / 20.0 } else { d }
            };
            let pos: Vec<f64> = (0..rng.random_range(1..40)).map(|_| draw(&mut rng, 0.0, 1.2)).collect();
            let neg: Vec<f64> = (0..rng.random_range(1..40)).map(|_| draw(&mut rng, 0.2, 2.0)).collect();
            let target = [0.0, 0.01, 0.05, 0.1, 0.25, 0.5][rng.random_range(0..6)];
            let t = calibrate_threshold(&pos, &neg, target).map_err(|e| e.to_string())?;
            let fpr = neg.iter().filter(|d| **d <= t).count() as f64 / neg.len() as f64;
            need!(fpr <= target, "case {case}: threshold {t} gives FPR {fpr} > {target}");
        }
        Ok(format!(
            "{checked} word sequences over {n} words, {} in the language; 2000 calibrations within target FPR",
            language.len()
        ))
    });
}

// ---------------------------------------------------------------------------

#[test]
fn end_to_end_determinism() {
    criterion("end-to-end determinism", 120, || {
        let run = || -> Result<(Outcome, Vec<u8>), String> {
            let mut w = TraceWriter::new(Vec::new());
            let summary =
                deniro_core::orchestrator::session::run_scenario(canonical_corridor(), None, Some(&mut w)).map_err(|e| e.to_string())?;
            Ok((summary.outcome, w.into_inner()))
        };
        let (oa, a) = run()?;
        let (ob, b) = run()?;
        need!(a == b, "traces differ");
        need!(oa == Outcome::Completed && ob == Outcome::Completed, "outcomes {oa:?} {ob:?}");
        let records = parse_trace(std::str::from_utf8(&a).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let last = records.last().ok_or("empty trace")?;
        need!(last.state == "Idle", "ends in {}", last.state);
        let before = records.iter().rev().find(|r| r.state != "Idle").map(|r| r.state.as_str());
        need!(before == Some("Handover"), "Idle entered from {before:?}");
        need!(!records.iter().any(|r| r.events.contains(&TraceEvent::Collision)), "collision flagged");
        Ok(format!("{} ticks, {} trace bytes identical, Handover then Idle", records.len(), a.len()))
    });
}
