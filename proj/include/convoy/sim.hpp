#pragma once

// Deterministic kinematic convoy simulator.
//
// World frame: x forward/east, y left/north, z up. Yaw is counter-clockwise
// about z, pitch is nose-up. The follower camera looks along the body x axis.
// Image projection is angle-linear: a ray at azimuth a and elevation e lands at
// u = 0.5 - a / hfov, v = 0.5 - e / vfov.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "convoy/core.hpp"
#include "convoy/servo.hpp"

namespace convoy::sim {

using servo::ControlCommand;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kMaxPitch = kPi / 2.0 - 1e-3;

/// Wraps to (-pi, pi].
inline double wrap_angle(double a) {
    double w = std::remainder(a, 2.0 * kPi);
    if (w <= -kPi) w += 2.0 * kPi;
    return w;
}

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
    friend bool operator==(const Vec3&, const Vec3&) = default;
};

struct Pose {
    Vec3 position;
    double yaw = 0.0;
    double pitch = 0.0;

    Vec3 heading() const {
        return {std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw), std::sin(pitch)};
    }
    friend bool operator==(const Pose&, const Pose&) = default;
};

inline bool is_valid(const Pose& p) {
    return std::isfinite(p.position.x) && std::isfinite(p.position.y) && std::isfinite(p.position.z) &&
           p.yaw > -kPi && p.yaw <= kPi && p.pitch > -kPi / 2.0 && p.pitch < kPi / 2.0;
}

// ---------------------------------------------------------------- trajectories

enum class Maneuver { forward, turn_in_place, depth_change, hold };

inline Maneuver parse_maneuver(const std::string& name) {
    if (name == "forward") return Maneuver::forward;
    if (name == "turn_in_place") return Maneuver::turn_in_place;
    if (name == "depth_change") return Maneuver::depth_change;
    if (name == "hold") return Maneuver::hold;
    throw std::invalid_argument("unknown trajectory script '" + name + "'");
}

inline const char* to_string(Maneuver m) {
    switch (m) {
        case Maneuver::forward: return "forward";
        case Maneuver::turn_in_place: return "turn_in_place";
        case Maneuver::depth_change: return "depth_change";
        case Maneuver::hold: return "hold";
    }
    return "?";
}

/// `rate` is m/s for forward and depth_change, rad/s for turn_in_place.
struct Segment {
    Maneuver kind = Maneuver::hold;
    double rate = 0.0;
    double duration = std::numeric_limits<double>::infinity();
};

struct TrajectoryScript {
    Pose start;
    std::vector<Segment> segments;
    /// Composite scripts restart from their end pose once exhausted.
    bool repeat = false;

    static TrajectoryScript forward(double speed, Pose start = {}) {
        return {start, {{Maneuver::forward, speed}}, false};
    }
    static TrajectoryScript turn_in_place(double rate, Pose start = {}) {
        return {start, {{Maneuver::turn_in_place, rate}}, false};
    }
    static TrajectoryScript depth_change(double vertical_speed, Pose start = {}) {
        return {start, {{Maneuver::depth_change, vertical_speed}}, false};
    }
    static TrajectoryScript hold(Pose start = {}) { return {start, {{Maneuver::hold, 0.0}}, false}; }
    static TrajectoryScript composite(std::vector<Segment> segs, Pose start = {}) {
        return {start, std::move(segs), true};
    }
};

namespace detail {

inline Pose advance(Pose p, const Segment& s, double tau) {
    switch (s.kind) {
        case Maneuver::forward: p.position = p.position + (s.rate * tau) * p.heading(); break;
        case Maneuver::turn_in_place: p.yaw = wrap_angle(p.yaw + s.rate * tau); break;
        case Maneuver::depth_change: p.position.z += s.rate * tau; break;
        case Maneuver::hold: break;
    }
    return p;
}

}  // namespace detail

inline Pose leader_trajectory(const TrajectoryScript& script, double t) {
    if (!(t >= 0.0)) throw std::invalid_argument("leader_trajectory: t must be >= 0");
    if (script.segments.empty()) throw std::invalid_argument("leader_trajectory: empty script");
    Pose p = script.start;
    double remaining = t;
    double cycle = 0.0;
    for (const auto& s : script.segments) cycle += s.duration;
    if (script.repeat && std::isfinite(cycle) && cycle > 0.0) {
        // whole cycles first; each cycle is a rigid motion applied to the end pose
        const auto whole = static_cast<long>(std::floor(remaining / cycle));
        for (long k = 0; k < whole; ++k) {
            for (const auto& s : script.segments) p = detail::advance(p, s, s.duration);
        }
        remaining -= static_cast<double>(whole) * cycle;
    }
    for (const auto& s : script.segments) {
        const double tau = std::min(remaining, s.duration);
        p = detail::advance(p, s, tau);
        remaining -= tau;
        if (remaining <= 0.0) break;
    }
    return p;
}

// ---------------------------------------------------------------- kinematics

inline Pose step_follower(const Pose& pose, const ControlCommand& cmd, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("step_follower: dt must be > 0");
    Pose next = pose;
    next.yaw = wrap_angle(pose.yaw + cmd.yaw_rate * dt);
    next.pitch = std::clamp(pose.pitch + cmd.pitch_rate * dt, -kMaxPitch, kMaxPitch);
    next.position = pose.position + (cmd.forward_speed * dt) * next.heading();
    next.position.z += cmd.vertical_speed * dt;
    return next;
}

// ---------------------------------------------------------------- projection

struct CameraModel {
    double horizontal_fov = kPi / 2.0;
    double aspect = 4.0 / 3.0;
    std::size_t width = 320;
    std::size_t height = 240;

    double vertical_fov() const { return horizontal_fov / aspect; }
    void validate() const {
        if (!(horizontal_fov > 0.0 && horizontal_fov < kPi)) {
            throw std::invalid_argument("camera.horizontal_fov must be in (0, pi)");
        }
        if (!(aspect > 0.0)) throw std::invalid_argument("camera.aspect must be > 0");
        if (vertical_fov() >= kPi) throw std::invalid_argument("camera vertical fov must be < pi");
    }
};

struct TargetModel {
    double body_length = 0.65;
    double body_height = 0.3;
    // flipper strip, in the target plane relative to the body centre
    double flipper_offset_lateral = 0.0;
    double flipper_offset_vertical = -0.08;
    double flipper_width = 0.5;
    double flipper_height = 0.12;
    double gait_frequency = 2.0;
    double gait_jitter = 0.0;

    void validate() const {
        if (!(body_length > 0.0 && body_height > 0.0)) throw std::invalid_argument("target body must be > 0");
        if (!(gait_frequency >= 1.0 && gait_frequency <= 3.0)) {
            throw std::invalid_argument("target.gait_frequency must be in [1, 3] Hz");
        }
        if (!(gait_jitter >= 0.0)) throw std::invalid_argument("target.gait_jitter must be >= 0");
    }
};

/// Camera-frame coordinates of a world point (x forward, y left, z up).
inline Vec3 to_camera(const Pose& cam, const Vec3& world) {
    const Vec3 d = world - cam.position;
    const double cy = std::cos(cam.yaw), sy = std::sin(cam.yaw);
    const double cp = std::cos(cam.pitch), sp = std::sin(cam.pitch);
    const double x1 = cy * d.x + sy * d.y;
    const double y1 = -sy * d.x + cy * d.y;
    return {cp * x1 + sp * d.z, y1, -sp * x1 + cp * d.z};
}

/// Normalized image coordinates (u right, v down) of a camera-frame point.
inline std::pair<double, double> image_coords(const CameraModel& cam, const Vec3& c) {
    const double az = std::atan2(c.y, c.x);
    const double el = std::atan2(c.z, std::hypot(c.x, c.y));
    return {0.5 - az / cam.horizontal_fov, 0.5 - el / cam.vertical_fov()};
}

/// Upright rectangle in the plane whose normal is the leader's heading.
struct TargetRect {
    Vec3 center;
    Vec3 lateral;  // unit, leader's left
    Vec3 up;       // unit
    double half_width = 0.0;
    double half_height = 0.0;
};

inline TargetRect body_rect(const Pose& leader, const TargetModel& target) {
    const double cyaw = std::cos(leader.yaw), syaw = std::sin(leader.yaw);
    const double cp = std::cos(leader.pitch), sp = std::sin(leader.pitch);
    return {leader.position, {-syaw, cyaw, 0.0}, {-cyaw * sp, -syaw * sp, cp},
            0.5 * target.body_length, 0.5 * target.body_height};
}

inline TargetRect flipper_rect(const Pose& leader, const TargetModel& target) {
    TargetRect r = body_rect(leader, target);
    r.center = r.center + target.flipper_offset_lateral * r.lateral + target.flipper_offset_vertical * r.up;
    r.half_width = 0.5 * target.flipper_width;
    r.half_height = 0.5 * target.flipper_height;
    return r;
}

/// Enclosing normalized box of a world rectangle, clipped to the image. None
/// when the rectangle centre is behind the camera or the box misses the image.
inline std::optional<BoundingBox> project_rect(const CameraModel& cam, const Pose& camera_pose,
                                               const TargetRect& rect) {
    const Vec3 c = to_camera(camera_pose, rect.center);
    if (c.x <= 0.0) return std::nullopt;

    constexpr int kPerEdge = 32;
    double u_lo = std::numeric_limits<double>::infinity(), u_hi = -u_lo;
    double v_lo = u_lo, v_hi = -u_lo;
    auto visit = [&](double s, double r) {
        const Vec3 w = rect.center + (s * rect.half_width) * rect.lateral + (r * rect.half_height) * rect.up;
        Vec3 pc = to_camera(camera_pose, w);
        // points at or behind the image plane are pushed to the side they lie on
        if (pc.x < 1e-9) pc.x = 1e-9;
        const auto [u, v] = image_coords(cam, pc);
        u_lo = std::min(u_lo, u);
        u_hi = std::max(u_hi, u);
        v_lo = std::min(v_lo, v);
        v_hi = std::max(v_hi, v);
    };
    for (int k = 0; k <= kPerEdge; ++k) {
        const double s = -1.0 + 2.0 * k / kPerEdge;
        visit(s, -1.0);
        visit(s, 1.0);
        visit(-1.0, s);
        visit(1.0, s);
    }

    const double x0 = std::clamp(u_lo, 0.0, 1.0), x1 = std::clamp(u_hi, 0.0, 1.0);
    const double y0 = std::clamp(v_lo, 0.0, 1.0), y1 = std::clamp(v_hi, 0.0, 1.0);
    if (!(x1 > x0) || !(y1 > y0)) return std::nullopt;
    return BoundingBox{x0, y0, x1 - x0, y1 - y0, 1.0};
}

inline std::optional<BoundingBox> project_bbox(const CameraModel& cam, const Pose& follower,
                                               const Pose& leader, const TargetModel& target) {
    return project_rect(cam, follower, body_rect(leader, target));
}

/// Distance along the optical axis at which the target fills `area` of the image.
inline double distance_for_area(const CameraModel& cam, const TargetModel& target, double area) {
    if (!(area > 0.0 && area < 1.0)) throw std::invalid_argument("distance_for_area: area must be in (0,1)");
    auto area_at = [&](double d) {
        Pose leader;
        leader.position = {d, 0.0, 0.0};
        const auto b = project_bbox(cam, Pose{}, leader, target);
        return b ? box_area(*b) : 0.0;
    };
    double near = 1e-3, far = 1e3;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (near + far);
        if (area_at(mid) > area) near = mid; else far = mid;
    }
    return 0.5 * (near + far);
}

// ---------------------------------------------------------------- rendering

/// Per-cycle gait timing. With zero jitter the phase is exactly 2 pi f t + phase0.
class GaitSchedule {
public:
    GaitSchedule() = default;
    GaitSchedule(double frequency, double jitter, std::uint64_t seed, double horizon, double phase0 = 0.0)
        : frequency_(frequency), jitter_(jitter), phase0_(phase0) {
        if (jitter_ <= 0.0) return;
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> n(0.0, 1.0);
        double t = 0.0;
        while (t <= horizon) {
            const double f = frequency_ * std::max(0.1, 1.0 + jitter_ * n(rng));
            starts_.push_back(t);
            freqs_.push_back(f);
            t += 1.0 / f;
        }
        starts_.push_back(t);
    }

    double phase(double t) const {
        if (starts_.empty() || t < 0.0 || t >= starts_.back()) {
            return 2.0 * kPi * frequency_ * t + phase0_;
        }
        const auto it = std::upper_bound(starts_.begin(), starts_.end(), t);
        const auto k = static_cast<std::size_t>(it - starts_.begin()) - 1;
        return 2.0 * kPi * (static_cast<double>(k) + (t - starts_[k]) * freqs_[k]) + phase0_;
    }

    double frequency() const { return frequency_; }

private:
    double frequency_ = 2.0;
    double jitter_ = 0.0;
    double phase0_ = 0.0;
    std::vector<double> starts_;
    std::vector<double> freqs_;
};

struct RenderConfig {
    double background = 0.4;
    double noise_sigma = 0.02;
    double body_intensity = 0.7;
    double flipper_low = 0.2;
    double flipper_high = 1.0;

    double flipper_mid() const { return 0.5 * (flipper_low + flipper_high); }
    double flipper_amplitude() const { return 0.5 * (flipper_high - flipper_low); }
};

struct SceneState {
    Pose follower;
    std::optional<Pose> leader;
    TargetModel target;
    GaitSchedule gait;
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline double flipper_intensity(const RenderConfig& rc, const GaitSchedule& gait, double t) {
    return rc.flipper_mid() + rc.flipper_amplitude() * std::sin(gait.phase(t));
}

inline IntensityGrid render_intensity_frame(const SceneState& scene, const CameraModel& cam,
                                            const RenderConfig& rc, double t, std::uint64_t noise_seed) {
    IntensityGrid frame(cam.width, cam.height, rc.background, t);
    auto fill = [&](const BoundingBox& b, double value) {
        const double W = static_cast<double>(cam.width), H = static_cast<double>(cam.height);
        for (std::size_t row = 0; row < cam.height; ++row) {
            const double v = (static_cast<double>(row) + 0.5) / H;
            if (v < b.y || v >= b.y + b.h) continue;
            for (std::size_t col = 0; col < cam.width; ++col) {
                const double u = (static_cast<double>(col) + 0.5) / W;
                if (u >= b.x && u < b.x + b.w) frame.at(col, row) = value;
            }
        }
    };
    if (scene.leader) {
        if (auto body = project_rect(cam, scene.follower, body_rect(*scene.leader, scene.target))) {
            fill(*body, rc.body_intensity);
        }
        if (auto fl = project_rect(cam, scene.follower, flipper_rect(*scene.leader, scene.target))) {
            fill(*fl, flipper_intensity(rc, scene.gait, t));
        }
    }
    if (rc.noise_sigma > 0.0) {
        std::mt19937_64 rng(noise_seed);
        std::normal_distribution<double> n(0.0, rc.noise_sigma);
        for (double& s : frame.samples) s = std::clamp(s + n(rng), 0.0, 1.0);
    }
    return frame;
}

// ---------------------------------------------------------------- detector model

struct DetectorNoise {
    double center_sigma = 0.05;
    double scale_sigma = 0.03;
    double confidence_sigma = 0.1;
    double miss_small = 0.3;
    double miss_base = 0.05;
    double false_positive = 0.02;
    double small_area = 0.2;

    static DetectorNoise noiseless() { return {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.2}; }

    void validate() const {
        auto prob = [](double v) { return v >= 0.0 && v <= 1.0; };
        if (!(center_sigma >= 0.0 && scale_sigma >= 0.0 && confidence_sigma >= 0.0)) {
            throw std::invalid_argument("detector_noise sigmas must be >= 0");
        }
        if (!prob(miss_small) || !prob(miss_base) || !prob(false_positive) || !prob(small_area)) {
            throw std::invalid_argument("detector_noise probabilities must be in [0, 1]");
        }
    }
};

/// Misses are likelier on small targets; hits carry Gaussian centre noise,
/// log-normal size noise and a confidence that tracks the resulting IOU.
template <class Rng>
std::optional<BoundingBox> noisy_detector(const std::optional<BoundingBox>& truth,
                                          const DetectorNoise& noise, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto conf = [&](double base) {
        return std::clamp(base + noise.confidence_sigma * gauss(rng), 0.0, 1.0);
    };

    if (!truth) {
        if (!(unif(rng) < noise.false_positive)) return std::nullopt;
        const double w = 0.05 + 0.25 * unif(rng), h = 0.05 + 0.25 * unif(rng);
        const double x = (1.0 - w) * unif(rng), y = (1.0 - h) * unif(rng);
        return BoundingBox{x, y, w, h, conf(0.0)};
    }

    const double miss = box_area(*truth) < noise.small_area ? noise.miss_small : noise.miss_base;
    if (unif(rng) < miss) return std::nullopt;

    if (noise.center_sigma == 0.0 && noise.scale_sigma == 0.0) {
        BoundingBox out = *truth;
        out.p = conf(1.0);
        return out;
    }
    const auto [cx, cy] = box_center(*truth);
    const double ncx = cx + noise.center_sigma * gauss(rng);
    const double ncy = cy + noise.center_sigma * gauss(rng);
    const double nw = truth->w * std::exp(noise.scale_sigma * gauss(rng));
    const double nh = truth->h * std::exp(noise.scale_sigma * gauss(rng));
    const double x0 = std::clamp(ncx - 0.5 * nw, 0.0, 1.0), x1 = std::clamp(ncx + 0.5 * nw, 0.0, 1.0);
    const double y0 = std::clamp(ncy - 0.5 * nh, 0.0, 1.0), y1 = std::clamp(ncy + 0.5 * nh, 0.0, 1.0);
    if (!(x1 > x0) || !(y1 > y0)) return std::nullopt;
    BoundingBox out{x0, y0, x1 - x0, y1 - y0, 1.0};
    out.p = conf(iou(out, *truth));
    return out;
}

// ---------------------------------------------------------------- closed loop

struct Interval {
    double begin = 0.0;
    double end = 0.0;
    bool contains(double t) const { return t >= begin && t < end; }
};

struct SimConfig {
    double duration = 60.0;
    double physics_rate = 50.0;
    double detector_rate = 7.0;
    double frame_rate = 15.0;
    std::uint64_t seed = 0;
    TrajectoryScript leader = TrajectoryScript::forward(0.6, Pose{{2.0, 0.0, 0.0}, 0.0, 0.0});
    Pose follower_start{};
    CameraModel camera{};
    TargetModel target{};
    RenderConfig render{};
    servo::ServoConfig servo{};
    DetectorNoise detector{};
    /// Detections below this confidence are dropped before reaching the servo.
    double detection_threshold = 0.0;
    /// Exponential smoothing weight of a new detection in the tracked box;
    /// 1 passes detections through unfiltered.
    double box_smoothing = 0.3;
    /// Constant current applied to the follower, m/s.
    Vec3 drift{};
    /// Windows during which the detector sees nothing.
    std::vector<Interval> occlusions;

    void validate() const {
        if (!(duration >= 0.0) || !std::isfinite(duration)) throw std::invalid_argument("sim.duration must be >= 0");
        if (!(physics_rate > 0.0)) throw std::invalid_argument("sim.physics_rate must be > 0");
        if (!(detector_rate > 0.0 && detector_rate <= physics_rate)) {
            throw std::invalid_argument("sim.detector_rate must be in (0, physics_rate]");
        }
        if (!(frame_rate > 0.0 && frame_rate <= physics_rate)) {
            throw std::invalid_argument("sim.frame_rate must be in (0, physics_rate]");
        }
        if (!(servo.command_rate <= physics_rate)) {
            throw std::invalid_argument("servo.command_rate must not exceed sim.physics_rate");
        }
        if (leader.segments.empty()) throw std::invalid_argument("sim leader script is empty");
        camera.validate();
        target.validate();
        servo.validate();
        detector.validate();
        for (const auto& o : occlusions) {
            if (!(o.end >= o.begin)) throw std::invalid_argument("sim occlusion interval is reversed");
        }
    }

    bool occluded(double t) const {
        return std::any_of(occlusions.begin(), occlusions.end(), [t](const Interval& o) { return o.contains(t); });
    }
};

struct TraceRecord {
    std::size_t tick = 0;
    double t = 0.0;
    Pose leader;
    Pose follower;
    std::optional<BoundingBox> true_box;
    /// Latest detector output, held between detector ticks.
    std::optional<BoundingBox> detection;
    bool detector_tick = false;
    bool servo_tick = false;
    ControlCommand command;
};

struct SimTrace {
    std::vector<TraceRecord> records;
};

/// Blends a new detection into the tracked box, keeping it inside the image.
inline BoundingBox smooth_box(const BoundingBox& tracked, const BoundingBox& det, double weight) {
    auto mix = [weight](double a, double b) { return (1.0 - weight) * a + weight * b; };
    BoundingBox out{mix(tracked.x, det.x), mix(tracked.y, det.y), mix(tracked.w, det.w),
                    mix(tracked.h, det.h), det.p};
    out.w = std::min(out.w, 1.0 - out.x);
    out.h = std::min(out.h, 1.0 - out.y);
    return out;
}

/// True when a clock at `rate` Hz fires on physics tick `i`.
inline bool fires(std::size_t i, double rate, double physics_rate) {
    if (i == 0) return true;
    const double now = std::floor(static_cast<double>(i) * rate / physics_rate);
    const double before = std::floor(static_cast<double>(i - 1) * rate / physics_rate);
    return now > before;
}

inline std::size_t tick_count(const SimConfig& cfg) {
    return static_cast<std::size_t>(std::llround(std::floor(cfg.duration * cfg.physics_rate + 1e-9)));
}

inline SceneState scene_at(const SimConfig& cfg, const GaitSchedule& gait, const Pose& follower,
                           const Pose& leader) {
    return {follower, leader, cfg.target, gait};
}

inline GaitSchedule make_gait(const SimConfig& cfg) {
    return GaitSchedule(cfg.target.gait_frequency, cfg.target.gait_jitter, mix_seed(cfg.seed, 0x6a17),
                        cfg.duration + 1.0);
}

/// Physics at physics_rate, detector at detector_rate (sample-and-hold),
/// servo at servo.command_rate. One seeded generator drives all noise.
inline SimTrace run_convoy(const SimConfig& cfg) {
    cfg.validate();
    SimTrace trace;
    const std::size_t ticks = tick_count(cfg);
    trace.records.reserve(ticks);

    std::mt19937_64 rng(mix_seed(cfg.seed, 1));
    servo::ServoState ctrl(cfg.servo);
    Pose follower = cfg.follower_start;
    follower.yaw = wrap_angle(follower.yaw);
    ControlCommand command = ControlCommand::stop();
    std::optional<BoundingBox> held;
    std::optional<BoundingBox> pending;
    std::optional<BoundingBox> tracked;
    double pending_time = 0.0;
    const double dt = 1.0 / cfg.physics_rate;

    for (std::size_t i = 0; i < ticks; ++i) {
        const double t = static_cast<double>(i) * dt;
        TraceRecord rec;
        rec.tick = i;
        rec.t = t;
        rec.leader = leader_trajectory(cfg.leader, t);
        rec.follower = follower;
        rec.true_box = project_bbox(cfg.camera, follower, rec.leader, cfg.target);

        if (fires(i, cfg.detector_rate, cfg.physics_rate)) {
            rec.detector_tick = true;
            std::optional<BoundingBox> det;
            if (!cfg.occluded(t)) det = noisy_detector(rec.true_box, cfg.detector, rng);
            if (det && det->p < cfg.detection_threshold) det.reset();
            held = det;
            if (det) {
                tracked = tracked ? smooth_box(*tracked, *det, cfg.box_smoothing) : *det;
                pending = tracked;
                pending_time = t;
            }
        }
        rec.detection = held;

        if (fires(i, cfg.servo.command_rate, cfg.physics_rate)) {
            rec.servo_tick = true;
            auto [cmd, next] = servo::servo_update(ctrl, pending, t, pending ? pending_time : t);
            ctrl = std::move(next);
            command = cmd;
            pending.reset();
        }
        rec.command = command;
        trace.records.push_back(rec);

        follower = step_follower(follower, command, dt);
        follower.position = follower.position + dt * cfg.drift;
    }
    return trace;
}

/// Camera frames at cfg.frame_rate along a finished run, as seen from the
/// follower. Pixel noise is seeded per frame from cfg.seed.
inline std::vector<IntensityGrid> render_trace_frames(const SimConfig& cfg, const SimTrace& trace) {
    const GaitSchedule gait = make_gait(cfg);
    const std::uint64_t stream = mix_seed(cfg.seed, 2);
    std::vector<IntensityGrid> frames;
    for (const auto& rec : trace.records) {
        if (!fires(rec.tick, cfg.frame_rate, cfg.physics_rate)) continue;
        const SceneState scene = scene_at(cfg, gait, rec.follower, rec.leader);
        frames.push_back(render_intensity_frame(scene, cfg.camera, cfg.render, rec.t, mix_seed(stream, frames.size())));
    }
    return frames;
}

/// Fraction of physics ticks in [from, end] whose true box meets the
/// centre and area bounds.
inline double hold_fraction(const SimTrace& trace, double from, double desired_area,
                            double center_tol = 0.1, double area_tol = 0.2) {
    std::size_t n = 0, ok = 0;
    for (const auto& r : trace.records) {
        if (r.t < from) continue;
        ++n;
        if (!r.true_box) continue;
        const auto [cx, cy] = box_center(*r.true_box);
        if (std::abs(cx - 0.5) < center_tol && std::abs(cy - 0.5) < center_tol &&
            std::abs(box_area(*r.true_box) - desired_area) / desired_area < area_tol) {
            ++ok;
        }
    }
    return n ? static_cast<double>(ok) / static_cast<double>(n) : 0.0;
}

}  // namespace convoy::sim
