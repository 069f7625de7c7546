//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report is always shown.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use movetouch::analysis::special::{f_cdf, t_cdf, t_two_sided_p};
use movetouch::analysis::{
    bundled_matrix, one_way_anova, paired_t_bonferroni, recognition_rates, rm_anova, synthesize_trials,
    participant_rates, WristSide,
};
use movetouch::geometry::{hand_in_robot_base, Point3, RigidTransform};
use movetouch::gimbal::{marker_deltas, motor_deltas, GearParams, MarkerDeltas, MotorDeltas};
use movetouch::haptics::{pattern_frequency, PatternId};
use movetouch::marker_pose::{estimate_pose, synthesize_observation, CameraIntrinsics};
use movetouch::safety::{max_robot_speed, Direction, Mode, SafetyZones, Zone};
use movetouch::sim::{self, HumanModel, Scenario, Waypoint};

type Outcome = Result<String, String>;

/// Pose Monte-Carlo fixture: marker 1 m in front of the camera, facing it,
/// 0.04 m side, 0.5 px corner noise, seeds 0..200. Values are the measured
/// 95th percentiles, rounded up.
const POSE_NOISE_T95_M: f64 = 0.0330;
const POSE_NOISE_R95_DEG: f64 = 20.61;

fn main() {
    let criteria: [(u32, &str, Duration, fn() -> Outcome); 10] = [
        (1, "volar recognition mean", Duration::from_secs(1), volar_mean),
        (2, "dorsal matrix consistency", Duration::from_secs(1), dorsal_mean),
        (3, "pattern frequencies", Duration::from_secs(1), pattern_timing),
        (4, "gear kinematics", Duration::from_secs(5), gear_kinematics),
        (5, "transform chain", Duration::from_secs(5), transform_chain),
        (6, "pose estimation round trip", Duration::from_secs(30), pose_round_trip),
        (7, "safety soundness", Duration::from_secs(60), safety_soundness),
        (8, "response-time model", Duration::from_secs(10), response_times),
        (9, "distance oscillation reproduction", Duration::from_secs(10), oscillation),
        (10, "statistics oracles", Duration::from_secs(5), statistics),
    ];
    let mut failures = 0;
    for (n, name, limit, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; runtime {elapsed:.2?} exceeds {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("ACCEPTANCE {n:>2} PASS  {name}: {detail} [{elapsed:.2?}]"),
            Err(reason) => {
                failures += 1;
                println!("ACCEPTANCE {n:>2} FAIL  {name}: {reason} [{elapsed:.2?}]");
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", 10 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn cli_rates(input: &str) -> Result<f64, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_movetouch"))
        .args(["analyze", "rates", input])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("analyze rates {input} exited with {}", out.status))?;
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    v["mean"].as_f64().ok_or_else(|| "no mean in output".to_string())
}

fn volar_mean() -> Outcome {
    let lib = recognition_rates(&bundled_matrix(WristSide::Volar)).mean;
    let cli = cli_rates(concat!(env!("CARGO_MANIFEST_DIR"), "/data/confusion_volar.csv"))?;
    ensure((lib - cli).abs() < 1e-12, || format!("library {lib} vs cli {cli}"))?;
    ensure((cli - 0.756).abs() <= 0.005, || format!("mean {cli:.4} outside 0.756 ± 0.005"))?;
    Ok(format!("mean = {cli:.4} (target 0.756 ± 0.005)"))
}

fn dorsal_mean() -> Outcome {
    let m = bundled_matrix(WristSide::Dorsal);
    for id in PatternId::ALL {
        let s: f64 = m.row(id).iter().sum();
        ensure((s - 1.0).abs() <= 0.02 + 1e-9, || format!("row {id} sums to {s}"))?;
    }
    let mean = cli_rates(concat!(env!("CARGO_MANIFEST_DIR"), "/data/confusion_dorsal.csv"))?;
    ensure((mean - 0.709).abs() <= 0.005, || format!("mean {mean:.4} outside 0.709 ± 0.005"))?;
    // Known difference: the published prose figure for this side is 0.666,
    // which the published matrix does not reproduce.
    let prose = 0.666;
    ensure((mean - prose).abs() > 0.04, || format!("mean {mean:.4} unexpectedly close to {prose}"))?;
    Ok(format!(
        "diagonal mean = {mean:.4} (target 0.709 ± 0.005); known difference vs prose 0.666 = {:.3}",
        mean - prose
    ))
}

fn pattern_timing() -> Outcome {
    // High-speed shapes 1–5, then low-speed shapes 1–5.
    let ids = ["1H", "2H", "3H", "4H", "5H", "1L", "2L", "3L", "4L", "5L"];
    let expected = [2.0, 2.0, 10.0 / 3.0, 10.0 / 3.0, 10.0, 1.0, 1.0, 5.0 / 3.0, 5.0 / 3.0, 5.0];
    for (id, want) in ids.iter().zip(expected) {
        let id: PatternId = id.parse().map_err(|e| format!("{e}"))?;
        let got = pattern_frequency(id);
        ensure(got == want, || format!("{id}: {got} Hz, expected exactly {want}"))?;
    }
    Ok("all ten frequencies exact".into())
}

fn gear_kinematics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let g = GearParams::new(rng.random_range(0.05..5.0), rng.random_range(0.05..5.0), rng.random_range(0.05..5.0))
            .map_err(|e| e.to_string())?;
        let m = MarkerDeltas {
            d_theta_p: rng.random_range(-PI..PI),
            d_theta_c: rng.random_range(-PI..PI),
        };
        let back = marker_deltas(motor_deltas(m, &g), &g);
        worst = worst
            .max((back.d_theta_p - m.d_theta_p).abs())
            .max((back.d_theta_c - m.d_theta_c).abs());
        let a = MotorDeltas {
            d_theta_a: rng.random_range(-PI..PI),
            d_theta_b: rng.random_range(-PI..PI),
        };
        let fwd = motor_deltas(marker_deltas(a, &g), &g);
        worst = worst
            .max((fwd.d_theta_a - a.d_theta_a).abs())
            .max((fwd.d_theta_b - a.d_theta_b).abs());
    }
    ensure(worst <= 1e-12, || format!("round trip error {worst:e}"))?;

    let half = GearParams::new(0.5, 0.5, 0.5).map_err(|e| e.to_string())?;
    let cases = [((1.0, 0.0), (0.25, 0.25)), ((0.0, 1.0), (0.5, -0.5))];
    for ((p, c), (a, b)) in cases {
        let m = motor_deltas(MarkerDeltas { d_theta_p: p, d_theta_c: c }, &half);
        ensure((m.d_theta_a - a).abs() < 1e-15 && (m.d_theta_b - b).abs() < 1e-15, || {
            format!("({p}, {c}) → ({}, {}), expected ({a}, {b})", m.d_theta_a, m.d_theta_b)
        })?;
    }
    Ok(format!("10^5 round trips, worst error {worst:.1e}; reference ratios match"))
}

type Mat4 = [[f64; 4]; 4];

fn homogeneous(t: &RigidTransform) -> Mat4 {
    let r = t.rotation();
    let p = t.translation();
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[(i, j)];
        }
        m[i][3] = p[i];
    }
    m[3][3] = 1.0;
    m
}

fn matmul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

/// General 4×4 inverse by Gauss-Jordan with partial pivoting.
fn invert4(m: &Mat4) -> Mat4 {
    let mut a = *m;
    let mut inv = [[0.0; 4]; 4];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for j in 0..4 {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for r in 0..4 {
            if r != col {
                let f = a[r][col];
                for j in 0..4 {
                    a[r][j] -= f * a[col][j];
                    inv[r][j] -= f * inv[col][j];
                }
            }
        }
    }
    inv
}

fn random_transform(rng: &mut ChaCha8Rng, reach: f64) -> RigidTransform {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let axis = if axis.norm() < 1e-3 { Vector3::z() } else { axis };
    RigidTransform::from_axis_angle(
        axis,
        rng.random_range(-PI..PI),
        Vector3::new(
            rng.random_range(-reach..reach),
            rng.random_range(-reach..reach),
            rng.random_range(-reach..reach),
        ),
    )
}

fn transform_chain() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let marker_in_camera = random_transform(&mut rng, 3.0);
        let base_in_camera = random_transform(&mut rng, 3.0);
        let got = homogeneous(&hand_in_robot_base(&marker_in_camera, &base_in_camera));
        let want = matmul(&invert4(&homogeneous(&base_in_camera)), &homogeneous(&marker_in_camera));
        for i in 0..4 {
            for j in 0..4 {
                worst = worst.max((got[i][j] - want[i][j]).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e} from 4×4 oracle"))?;
    Ok(format!("10^4 frame pairs, max deviation {worst:.1e}"))
}

fn rotation_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let c = ((a.transpose() * b).trace() - 1.0) / 2.0;
    c.clamp(-1.0, 1.0).acos()
}

fn percentile95(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[(v.len() as f64 * 0.95).ceil() as usize - 1]
}

fn pose_round_trip() -> Outcome {
    let k = CameraIntrinsics::default();
    let side = 0.04;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst_r, mut worst_t): (f64, f64) = (0.0, 0.0);
    for i in 0..1000 {
        // Marker in front of the camera, inside the image, facing it within 60°.
        let z = rng.random_range(0.3..2.0);
        let x = rng.random_range(-0.3..0.3) * z;
        let y = rng.random_range(-0.2..0.2) * z;
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3));
        let axis = if axis.norm() < 1e-3 { Vector3::x() } else { axis };
        let truth = RigidTransform::from_axis_angle(axis, rng.random_range(0.0..60f64.to_radians()), Vector3::new(x, y, z));
        let obs = synthesize_observation(&truth, side, &k, 0.0, i).map_err(|e| e.to_string())?;
        let est = estimate_pose(&obs, side, &k).map_err(|e| format!("pose {i}: {e}"))?;
        worst_r = worst_r.max(rotation_angle(est.pose.rotation(), truth.rotation()));
        worst_t = worst_t.max((est.pose.translation() - truth.translation()).norm());
    }
    ensure(worst_r <= 1e-6 && worst_t <= 1e-6, || {
        format!("noiseless worst errors {worst_r:e} rad, {worst_t:e} m")
    })?;

    let truth = RigidTransform::from_axis_angle(Vector3::new(1.0, 0.3, 0.0), 0.0, Vector3::new(0.05, -0.03, 1.0));
    let mut terr = Vec::new();
    let mut rerr = Vec::new();
    for seed in 0..200 {
        let obs = synthesize_observation(&truth, side, &k, 0.5, seed).map_err(|e| e.to_string())?;
        let est = estimate_pose(&obs, side, &k).map_err(|e| format!("noisy seed {seed}: {e}"))?;
        terr.push((est.pose.translation() - truth.translation()).norm());
        rerr.push(rotation_angle(est.pose.rotation(), truth.rotation()).to_degrees());
    }
    let (t95, r95) = (percentile95(terr), percentile95(rerr));
    ensure(t95 <= POSE_NOISE_T95_M && r95 <= POSE_NOISE_R95_DEG, || {
        format!("noisy p95 {t95:.4} m / {r95:.2}° exceeds fixture {POSE_NOISE_T95_M} m / {POSE_NOISE_R95_DEG}°")
    })?;
    Ok(format!(
        "noiseless worst {worst_r:.1e} rad / {worst_t:.1e} m; 0.5 px p95 {t95:.4} m / {r95:.2}° within fixture"
    ))
}

/// Approach line from in front of and above the hand, with a small lateral
/// component, so every guidance direction (and every mis-response) moves the
/// hand sideways or away.
fn random_approach(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-0.25..0.25),
        -rng.random_range(0.4..1.0),
        rng.random_range(0.0..1.0),
    )
    .normalize()
}

fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let home = Point3::new(
        rng.random_range(-0.1..0.1),
        rng.random_range(0.5..0.7),
        rng.random_range(0.0..0.2),
    );
    let speed = rng.random_range(0.01..0.12);
    let far = home + random_approach(&mut rng) * rng.random_range(0.7..1.0);
    let near = home + random_approach(&mut rng) * rng.random_range(0.05..0.35);
    Scenario {
        duration: 30.0,
        seed,
        hand_home: home,
        robot_waypoints: vec![
            Waypoint { position: far, speed },
            Waypoint { position: near, speed },
        ],
        ..Scenario::default()
    }
}

fn safety_soundness() -> Outcome {
    let defaults = HumanModel::default();
    let slowest = defaults.response_mean.values().copied().fold(0.0, f64::max);
    let zones = SafetyZones::default();
    let bound = max_robot_speed(&zones, slowest, defaults.hand_speed, defaults.escape_displacement)
        .map_err(|e| e.to_string())?;
    let (mut under, mut over, mut halts_total, mut hidden) = (0, 0, 0, 0);
    for seed in 0..1000 {
        let sc = random_scenario(seed);
        let out = sim::run(&sc).map_err(|e| format!("seed {seed}: {e}"))?;
        let mut entries = 0;
        let mut prev_halted = false;
        for r in &out.trace {
            if r.zone == Zone::Critical && !prev_halted {
                entries += 1;
            }
            prev_halted = r.state_mode == Mode::Halted;
            hidden += usize::from(!r.marker_visible);
        }
        ensure(out.metrics.halts == entries, || {
            format!("seed {seed}: {} HaltRobot vs {entries} critical entries", out.metrics.halts)
        })?;
        halts_total += out.metrics.halts;
        if sc.robot_waypoints[0].speed <= bound {
            under += 1;
            ensure(out.metrics.critical_violations == 0, || {
                format!(
                    "seed {seed}: speed {:.4} ≤ bound {bound:.4} but {} critical violations",
                    sc.robot_waypoints[0].speed, out.metrics.critical_violations
                )
            })?;
        } else {
            over += 1;
        }
    }
    Ok(format!(
        "1000 scenarios ({under} under the {bound:.4} m/s bound, {over} over), halt count exact, \
         {halts_total} halts total, 0 violations under the bound, {hidden} hidden-marker frames"
    ))
}

fn approach_scenario(robot_offset: Vector3<f64>) -> Scenario {
    let home = Point3::new(0.0, 0.6, 0.1);
    let dir = robot_offset.normalize();
    Scenario {
        duration: 12.0,
        hand_home: home,
        robot_waypoints: vec![
            Waypoint { position: home + dir * 0.8, speed: 0.05 },
            Waypoint { position: home + dir * 0.3, speed: 0.05 },
        ],
        human: HumanModel {
            response_jitter_sigma: 0.0,
            mis_response_probability: 0.0,
            ..HumanModel::default()
        },
        ..Scenario::default()
    }
}

fn response_times() -> Outcome {
    // Robot offsets in the workspace frame; the wearer faces −y, so the
    // wearer's left is +x.
    let cases = [
        (Direction::Right, Vector3::new(1.0, 0.0, 0.0)),
        (Direction::Left, Vector3::new(-1.0, 0.0, 0.0)),
        (Direction::Down, Vector3::new(0.0, 0.0, 1.0)),
        (Direction::Back, Vector3::new(0.0, -1.0, 0.0)),
    ];
    let means: BTreeMap<&str, f64> = BTreeMap::from([("1L", 0.24), ("2L", 0.61), ("3L", 2.41), ("5H", 0.85)]);
    let mut report = Vec::new();
    for (direction, offset) in cases {
        let sc = approach_scenario(offset);
        let pattern = sc.mapping.pattern(direction);
        let out = sim::run(&sc).map_err(|e| e.to_string())?;
        let times = out
            .metrics
            .measured_response_times
            .get(&pattern)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| format!("{direction:?}: pattern {pattern} never measured"))?;
        let want = means[pattern.to_string().as_str()];
        for t in times {
            ensure((t - want).abs() <= sc.dt + 1e-9, || {
                format!("{pattern}: measured {t:.3} s, expected {want} s within one step")
            })?;
        }
        report.push(format!("{pattern}={:.2}", times[0]));
    }
    Ok(format!("measured {} s", report.join(", ")))
}

fn oscillation() -> Outcome {
    let sc = Scenario::default();
    let out = sim::run(&sc).map_err(|e| e.to_string())?;
    let activation = sc.zones.activation_distance;
    let critical = sc.zones.critical_distance;

    // Count activation-line crossings while the robot closes in on the drop
    // point, leg by leg.
    let drop_point = sc.robot_waypoints[1].position;
    let mut crossings_per_approach: BTreeMap<usize, usize> = BTreeMap::new();
    let traj = sim::Trajectory::new(&sc.robot_waypoints).map_err(|e| e.to_string())?;
    let mut motion_time = 0.0;
    let mut approach = 0;
    let mut was_approaching = false;
    for pair in out.trace.windows(2) {
        let approaching = sc.robot_waypoints[traj.target_waypoint(motion_time)].position == drop_point;
        if approaching && !was_approaching {
            approach += 1;
        }
        was_approaching = approaching;
        if approaching && (pair[0].distance < activation) != (pair[1].distance < activation) {
            *crossings_per_approach.entry(approach).or_default() += 1;
        }
        if !pair[0].robot_halted {
            motion_time += sc.dt;
        }
    }
    let best = crossings_per_approach.values().copied().max().unwrap_or(0);
    ensure(best >= 2, || format!("at most {best} activation crossings in one approach"))?;

    let mut prev_halted = false;
    let mut closest = f64::INFINITY;
    for r in &out.trace {
        let d = (r.true_hand - r.tcp).norm();
        if !prev_halted {
            closest = closest.min(d);
        }
        prev_halted = r.robot_halted;
    }
    ensure(closest >= critical, || format!("distance {closest:.4} m below {critical} m while moving"))?;
    Ok(format!(
        "{best} activation crossings in one approach ({} approaches with crossings); closest while moving {closest:.3} m",
        crossings_per_approach.len()
    ))
}

/// Composite Simpson on [a, b] refined until two successive estimates agree.
fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }
    let mut n = 64;
    let mut prev = simpson(f, a, b, n);
    loop {
        n *= 2;
        let next = simpson(f, a, b, n);
        if (next - prev).abs() < 1e-10 || n > 1 << 20 {
            return next;
        }
        prev = next;
    }
}

fn gamma(x: f64) -> f64 {
    // Half-integer and integer arguments only, by recursion.
    if (x - 0.5).abs() < 1e-12 {
        PI.sqrt()
    } else if (x - 1.0).abs() < 1e-12 {
        1.0
    } else {
        (x - 1.0) * gamma(x - 1.0)
    }
}

fn statistics() -> Outcome {
    // One-way: means 2, 3, 4; SSB = 6, SSW = 6, F = 3 on (2, 6) df, and for
    // two numerator df the upper tail is (1 + 2F/6)^−3 = 1/8.
    let r = one_way_anova(&[vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0], vec![3.0, 4.0, 5.0]]).map_err(|e| e.to_string())?;
    ensure((r.f_statistic - 3.0).abs() < 1e-9 && (r.p_value - 0.125).abs() < 1e-9, || format!("one-way {r:?}"))?;

    // RM 3×3, participants × conditions:
    //   [1 2 6; 2 4 6; 3 3 9]. Grand mean 4, condition means 2, 3, 7,
    //   participant means 3, 4, 5. SS_cond = 3·(4+1+9) = 42,
    //   SS_subj = 3·(1+0+1) = 6, SS_total = 52, SS_err = 4.
    //   F = (42/2)/(4/4) = 21 on (2, 4) df; p = (1 + 2·21/4)^−2 = 4/529.
    let rm = rm_anova(&[vec![1.0, 2.0, 6.0], vec![2.0, 4.0, 6.0], vec![3.0, 3.0, 9.0]]).map_err(|e| e.to_string())?;
    ensure(
        (rm.f_statistic - 21.0).abs() < 1e-9
            && (rm.df_between, rm.df_within) == (2, 4)
            && (rm.p_value - 4.0 / 529.0).abs() < 1e-9,
        || format!("rm {rm:?}"),
    )?;

    // Paired t: differences 1, 1, 2, 3: mean 7/4, variance 11/12,
    // t = (7/4)/sqrt(11/48). With 3 df the CDF has the closed form
    // 1/2 + (1/π)[u/(1+u²) + atan u], u = t/√3.
    let t_want = 1.75 / (11.0f64 / 48.0).sqrt();
    let u = t_want / 3f64.sqrt();
    let p_want = 2.0 * (1.0 - (0.5 + (u / (1.0 + u * u) + u.atan()) / PI));
    let a: PatternId = "1L".parse().unwrap();
    let b: PatternId = "2L".parse().unwrap();
    let samples = BTreeMap::from([(a, vec![2.0, 4.0, 6.0, 8.0]), (b, vec![1.0, 3.0, 4.0, 5.0])]);
    let pr = paired_t_bonferroni(&samples, &[(a, b)]).map_err(|e| e.to_string())?;
    ensure(
        (pr[0].t_statistic - t_want).abs() < 1e-9 && (pr[0].raw_p - p_want).abs() < 1e-9,
        || format!("paired {:?}, expected t {t_want}, p {p_want}", pr[0]),
    )?;
    let pairs: Vec<(PatternId, PatternId)> = vec![(a, b); 45];
    let corrected = paired_t_bonferroni(&samples, &pairs).map_err(|e| e.to_string())?;
    ensure((corrected[0].corrected_p - (p_want * 45.0).min(1.0)).abs() < 1e-9, || {
        format!("bonferroni {:?}", corrected[0])
    })?;

    // CDFs against numerical integration of the densities.
    let mut worst: f64 = 0.0;
    for &(d1, d2) in &[(2.0, 6.0), (3.0, 10.0), (9.0, 100.0), (9.0, 90.0), (4.0, 7.0)] {
        let c = gamma((d1 + d2) / 2.0) / (gamma(d1 / 2.0) * gamma(d2 / 2.0)) * (d1 / d2).powf(d1 / 2.0);
        let pdf = move |x: f64| {
            if x <= 0.0 {
                if d1 == 2.0 { c } else { 0.0 }
            } else {
                c * x.powf(d1 / 2.0 - 1.0) * (1.0 + d1 * x / d2).powf(-(d1 + d2) / 2.0)
            }
        };
        for &x in &[0.2, 0.8, 1.5, 3.0, 5.78, 7.57] {
            worst = worst.max((f_cdf(x, d1, d2) - integrate(&pdf, 0.0, x)).abs());
        }
    }
    for &df in &[1.0, 3.0, 5.0, 10.0, 30.0] {
        let c = gamma((df + 1.0) / 2.0) / ((df * PI).sqrt() * gamma(df / 2.0));
        let pdf = move |x: f64| c * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
        for &t in &[-2.5, -0.7, 0.3, 1.2, 3.1] {
            let want = 0.5 + integrate(&pdf, 0.0, t);
            worst = worst.max((t_cdf(t, df) - want).abs());
            let two = 2.0 * (0.5 - integrate(&pdf, 0.0, t.abs()));
            worst = worst.max((t_two_sided_p(t, df) - two).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("CDF deviation {worst:e} from numerical integration"))?;

    // Degrees-of-freedom shapes for 11 participants × 10 patterns.
    let table = bundled_matrix(WristSide::Volar);
    let trials = synthesize_trials(&table, WristSide::Volar, 11, 5, &mut ChaCha8Rng::seed_from_u64(10));
    let rates = participant_rates(&trials, WristSide::Volar).map_err(|e| e.to_string())?;
    let groups: Vec<Vec<f64>> = (0..10).map(|j| rates.values().map(|r| r[j]).collect()).collect();
    let ow = one_way_anova(&groups).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<f64>> = rates.values().map(|r| r.to_vec()).collect();
    let rmr = rm_anova(&rows).map_err(|e| e.to_string())?;
    ensure((ow.df_between, ow.df_within) == (9, 100), || format!("one-way df {:?}", (ow.df_between, ow.df_within)))?;
    ensure((rmr.df_between, rmr.df_within) == (9, 90), || format!("rm df {:?}", (rmr.df_between, rmr.df_within)))?;

    Ok(format!(
        "SS oracles exact to 1e-9; CDF max deviation {worst:.1e}; df shapes (9,100) one-way and (9,90) repeated"
    ))
}
