#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "convoy/servo.hpp"

using namespace convoy;
using namespace convoy::servo;

namespace {

// Centred box of the given area with aspect w:h = 4:3.
BoundingBox centred(double area, double cx = 0.5, double cy = 0.5) {
    const double w = std::sqrt(area * 4.0 / 3.0), h = area / w;
    return {cx - w / 2, cy - h / 2, w, h};
}

bool within_bounds(const ControlCommand& c, const ServoConfig& cfg) {
    return std::abs(c.yaw_rate) <= cfg.max_yaw_rate + 1e-12 &&
           std::abs(c.vertical_speed) <= cfg.max_vertical_speed + 1e-12 && c.forward_speed >= 0.0 &&
           c.forward_speed <= cfg.max_forward_speed + 1e-12 && c.pitch_rate == 0.0 && c.roll_rate == 0.0;
}

}  // namespace

TEST(Errors, Setpoint) {
    const auto e = compute_errors(centred(0.5), {});
    EXPECT_NEAR(e.dx, 0.0, 1e-12);
    EXPECT_NEAR(e.dy, 0.0, 1e-12);
    EXPECT_NEAR(e.d_area, 0.0, 1e-12);
}

TEST(Errors, OffsetAndOversize) {
    const auto e = compute_errors(centred(0.5, 0.7, 0.5), {});
    EXPECT_NEAR(e.dx, 0.2, 1e-12);
    EXPECT_NEAR(e.dy, 0.0, 1e-12);
    EXPECT_NEAR(e.d_area, 0.0, 1e-12);
    const auto big = compute_errors(centred(0.7), {});
    EXPECT_NEAR(big.d_area, -0.2, 1e-12);
}

TEST(Pid, ZeroAndProportional) {
    PidState s;
    s.kp = 1.0;
    EXPECT_EQ(pid_step(s, 0.0, 0.1).first, 0.0);
    EXPECT_NEAR(pid_step(s, 0.3, 0.1).first, 0.3, 1e-15);
}

TEST(Pid, IntegralAccumulates) {
    PidState s;
    s.kp = 0.5;
    s.ki = 0.1;
    auto [u1, s1] = pid_step(s, 0.2, 0.1);
    auto [u2, s2] = pid_step(s1, 0.2, 0.1);
    EXPECT_NEAR(u1, 0.102, 1e-12);
    EXPECT_NEAR(u2, 0.104, 1e-12);
    EXPECT_NEAR(s2.integral, 0.04, 1e-12);
}

TEST(Pid, AntiWindupAndSaturation) {
    PidState s;
    s.ki = 1.0;
    s.integral_min = -0.5;
    s.integral_max = 0.5;
    s.output_min = -0.3;
    s.output_max = 0.3;
    for (int i = 0; i < 100; ++i) s = pid_step(s, 1.0, 0.1).second;
    EXPECT_EQ(s.integral, 0.5);
    EXPECT_EQ(pid_step(s, 1.0, 0.1).first, 0.3);
    EXPECT_THROW(pid_step(s, 1.0, 0.0), std::invalid_argument);
}

TEST(Servo, SetpointGivesZeroCommand) {
    ServoState st;
    const auto [cmd, next] = servo_update(st, centred(0.5), 0.0);
    EXPECT_NEAR(cmd.yaw_rate, 0.0, 1e-12);
    EXPECT_NEAR(cmd.vertical_speed, 0.0, 1e-12);
    EXPECT_NEAR(cmd.forward_speed, 0.0, 1e-12);
}

TEST(Servo, NeverReverses) {
    ServoState st;
    const auto [cmd, next] = servo_update(st, centred(0.7), 0.0);
    EXPECT_EQ(cmd.forward_speed, 0.0);
    EXPECT_FALSE(std::signbit(cmd.forward_speed));
}

TEST(Servo, SmallTargetDrivesForward) {
    ServoConfig cfg;
    ServoState st(cfg);
    const auto [cmd, next] = servo_update(st, centred(0.49), 0.0);
    EXPECT_NEAR(cmd.forward_speed, cfg.speed_gain * 0.01, 1e-12);
    EXPECT_EQ(servo_update(st, centred(0.05), 0.0).first.forward_speed, cfg.max_forward_speed);
}

TEST(Servo, SignConventions) {
    ServoState st;
    // target right of centre: turn right (negative yaw), below centre: descend
    const auto [cmd, next] = servo_update(st, centred(0.3, 0.7, 0.6), 0.0);
    EXPECT_LT(cmd.yaw_rate, 0.0);
    EXPECT_LT(cmd.vertical_speed, 0.0);
}

TEST(Servo, MirroredBoxNegatesYaw) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.05, 0.45);
    for (int i = 0; i < 200; ++i) {
        const BoundingBox b{u(rng), u(rng), u(rng), u(rng)};
        const BoundingBox m{1.0 - b.x - b.w, b.y, b.w, b.h};
        const auto cb = servo_update(ServoState{}, b, 0.0).first;
        const auto cm = servo_update(ServoState{}, m, 0.0).first;
        EXPECT_NEAR(compute_errors(b, {}).dx, -compute_errors(m, {}).dx, 1e-12);
        EXPECT_NEAR(cb.yaw_rate, -cm.yaw_rate, 1e-12);
    }
}

TEST(Servo, StopsAfterTimeout) {
    ServoState st;
    auto [c0, s0] = servo_update(st, centred(0.2, 0.6, 0.5), 0.0);
    EXPECT_FALSE(c0.is_stop());
    auto [c1, s1] = servo_update(s0, std::nullopt, 1.9);
    EXPECT_EQ(c1, c0);  // held
    auto [c2, s2] = servo_update(s1, std::nullopt, 2.5);
    EXPECT_TRUE(c2.is_stop());
    EXPECT_EQ(s2.yaw.integral, 0.0);
    EXPECT_EQ(s2.yaw.prev_error, 0.0);
}

TEST(Servo, NeverSeenIsStop) {
    EXPECT_TRUE(servo_update(ServoState{}, std::nullopt, 0.0).first.is_stop());
}

TEST(Servo, ObservationTimeDrivesTimeout) {
    ServoState st;
    auto [c0, s0] = servo_update(st, centred(0.3), 1.0, 0.5);
    EXPECT_TRUE(servo_update(s0, std::nullopt, 2.6).first.is_stop());
}

TEST(Servo, TimeRegressionThrows) {
    auto [c, s] = servo_update(ServoState{}, centred(0.3), 1.0);
    EXPECT_THROW(servo_update(s, centred(0.3), 0.5), std::invalid_argument);
}

TEST(Servo, CommandsStayInBoundsAndStopWheneverStale) {
    ServoConfig cfg;
    ServoState st(cfg);
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::optional<double> last_seen;
    double t = 0.0;
    for (int i = 0; i < 5000; ++i) {
        t += 0.1;
        std::optional<BoundingBox> det;
        if (u(rng) < 0.3) {
            const double w = 0.01 + 0.98 * u(rng), h = 0.01 + 0.98 * u(rng);
            det = BoundingBox{(1 - w) * u(rng), (1 - h) * u(rng), w, h};
            last_seen = t;
        }
        auto [cmd, next] = servo_update(st, det, t);
        st = next;
        EXPECT_TRUE(within_bounds(cmd, cfg));
        if (!det && (!last_seen || t - *last_seen > cfg.loss_timeout)) { EXPECT_TRUE(cmd.is_stop()); }
    }
}

TEST(Servo, Deterministic) {
    auto run = [] {
        ServoState st;
        std::vector<ControlCommand> out;
        for (int i = 0; i < 50; ++i) {
            const std::optional<BoundingBox> d = i % 7 == 3 ? std::nullopt : std::optional(centred(0.2 + 0.005 * i, 0.4 + 0.004 * i));
            auto [c, n] = servo_update(st, d, 0.1 * i);
            st = n;
            out.push_back(c);
        }
        return out;
    };
    EXPECT_EQ(run(), run());
}

TEST(Config, Validation) {
    ServoConfig c;
    c.desired_area = 0.0;
    EXPECT_THROW(ServoState{c}, std::invalid_argument);
    c = {};
    c.loss_timeout = 0.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    EXPECT_DOUBLE_EQ(c.desired_area, 0.5);
    EXPECT_DOUBLE_EQ(c.command_rate, 10.0);
    EXPECT_DOUBLE_EQ(c.loss_timeout, 2.0);
    EXPECT_GE(c.max_forward_speed, 0.5);
    EXPECT_LE(c.max_forward_speed, 0.7);
}
