#pragma once

// Image-based visual servoing: bounding-box errors to 5-DOF rate commands.
//
// Sign conventions (world z up, yaw counter-clockwise):
//   dx > 0  target right of centre -> negative yaw rate (turn right)
//   dy > 0  target below centre    -> negative vertical speed (descend)
//   dA > 0  target too small       -> positive forward speed; never reverse

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "convoy/core.hpp"

namespace convoy::servo {

struct ControlCommand {
    double yaw_rate = 0.0;
    double pitch_rate = 0.0;
    double roll_rate = 0.0;
    double forward_speed = 0.0;
    double vertical_speed = 0.0;

    static ControlCommand stop() { return {}; }
    bool is_stop() const {
        return yaw_rate == 0.0 && pitch_rate == 0.0 && roll_rate == 0.0 && forward_speed == 0.0 &&
               vertical_speed == 0.0;
    }
    friend bool operator==(const ControlCommand&, const ControlCommand&) = default;
};

struct PidState {
    double kp = 0.0;
    double ki = 0.0;
    double kd = 0.0;
    double integral = 0.0;
    double prev_error = 0.0;
    double output_min = -std::numeric_limits<double>::infinity();
    double output_max = std::numeric_limits<double>::infinity();
    // anti-windup clamp on the accumulated error
    double integral_min = -std::numeric_limits<double>::infinity();
    double integral_max = std::numeric_limits<double>::infinity();

    PidState reset() const {
        PidState s = *this;
        s.integral = 0.0;
        s.prev_error = 0.0;
        return s;
    }
};

inline std::pair<double, PidState> pid_step(const PidState& state, double error, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("pid_step: dt must be > 0, got " + std::to_string(dt));
    PidState next = state;
    next.integral = std::clamp(state.integral + error * dt, state.integral_min, state.integral_max);
    const double derivative = (error - state.prev_error) / dt;
    const double raw = state.kp * error + state.ki * next.integral + state.kd * derivative;
    next.prev_error = error;
    return {std::clamp(raw, state.output_min, state.output_max), next};
}

struct ServoConfig {
    double desired_area = 0.5;
    double command_rate = 10.0;
    double loss_timeout = 2.0;

    double yaw_kp = 1.2;
    double yaw_ki = 0.05;
    double yaw_kd = 0.1;
    double yaw_integral_limit = 1.0;
    double depth_gain = 0.8;
    double speed_gain = 12.0;

    double max_yaw_rate = 0.8;
    double max_vertical_speed = 0.5;
    double max_forward_speed = 0.7;

    void validate() const {
        if (!(desired_area > 0.0 && desired_area <= 1.0)) {
            throw std::invalid_argument("servo.desired_area must be in (0, 1]");
        }
        if (!(command_rate > 0.0)) throw std::invalid_argument("servo.command_rate must be > 0");
        if (!(loss_timeout > 0.0)) throw std::invalid_argument("servo.loss_timeout must be > 0");
        if (!(max_yaw_rate >= 0.0 && max_vertical_speed >= 0.0 && max_forward_speed >= 0.0)) {
            throw std::invalid_argument("servo saturation bounds must be >= 0");
        }
        if (!(yaw_integral_limit >= 0.0)) throw std::invalid_argument("servo.yaw_integral_limit must be >= 0");
    }

    PidState yaw_pid() const {
        PidState s;
        s.kp = yaw_kp;
        s.ki = yaw_ki;
        s.kd = yaw_kd;
        s.output_min = -max_yaw_rate;
        s.output_max = max_yaw_rate;
        s.integral_min = -yaw_integral_limit;
        s.integral_max = yaw_integral_limit;
        return s;
    }
};

struct ServoErrors {
    double dx = 0.0;
    double dy = 0.0;
    double d_area = 0.0;
};

inline ServoErrors compute_errors(const BoundingBox& box, const ServoConfig& cfg) {
    const auto [cx, cy] = box_center(box);
    return {cx - 0.5, cy - 0.5, cfg.desired_area - box_area(box)};
}

struct ServoState {
    ServoConfig config;
    PidState yaw;
    std::optional<double> last_detection_time;
    std::optional<double> last_update_time;
    ControlCommand last_command;

    explicit ServoState(ServoConfig cfg = {}) : config(cfg), yaw(cfg.yaw_pid()) { config.validate(); }
};

/// One control tick. `detection` is a box observed at `observed_at` (defaults
/// to `now`), if any. Without a
/// fresh detection the previous command is held until the target has been
/// unseen for longer than loss_timeout; from then on every tick stops the
/// vehicle and clears the yaw integrator.
inline std::pair<ControlCommand, ServoState> servo_update(const ServoState& state,
                                                          const std::optional<BoundingBox>& detection,
                                                          double now,
                                                          std::optional<double> observed_at = std::nullopt) {
    if (!std::isfinite(now)) throw std::invalid_argument("servo_update: non-finite time");
    if (state.last_update_time && now < *state.last_update_time) {
        throw std::invalid_argument("servo_update: time went backwards (" + std::to_string(now) +
                                    " < " + std::to_string(*state.last_update_time) + ")");
    }
    const ServoConfig& cfg = state.config;
    ServoState next = state;
    const double nominal_dt = 1.0 / cfg.command_rate;
    const double dt = state.last_update_time && now > *state.last_update_time
                          ? now - *state.last_update_time
                          : nominal_dt;
    next.last_update_time = now;

    if (detection) {
        const ServoErrors e = compute_errors(*detection, cfg);
        auto [yaw, pid] = pid_step(state.yaw, -e.dx, dt);
        next.yaw = pid;
        ControlCommand cmd;
        cmd.yaw_rate = yaw;
        cmd.vertical_speed = std::clamp(-cfg.depth_gain * e.dy, -cfg.max_vertical_speed, cfg.max_vertical_speed);
        cmd.forward_speed = e.d_area > 0.0 ? std::clamp(cfg.speed_gain * e.d_area, 0.0, cfg.max_forward_speed) : 0.0;
        next.last_detection_time = observed_at.value_or(now);
        next.last_command = cmd;
        return {cmd, next};
    }

    const bool lost = !state.last_detection_time || now - *state.last_detection_time > cfg.loss_timeout;
    if (lost) {
        next.yaw = state.yaw.reset();
        next.last_command = ControlCommand::stop();
    }
    return {next.last_command, next};
}

}  // namespace convoy::servo
