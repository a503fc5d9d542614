#pragma once

// File formats: annotation and prediction CSV, key=value run configuration,
// simulator trace CSV and PGM frames. Every float is written with 6 decimals.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "convoy/core.hpp"
#include "convoy/eval.hpp"
#include "convoy/mdpm.hpp"
#include "convoy/sim.hpp"

namespace convoy::io {

using eval::fmt6;
using eval::Prediction;

// ---- text helpers ----

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path.string() + ": cannot open for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(path.string() + ": cannot open for writing");
    out << text;
    if (!out) throw DataError(path.string() + ": write failed");
}

inline std::string_view trim(std::string_view s) {
    const auto ws = " \t\r";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            if (start < text.size()) lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    for (auto& l : lines) {
        if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    }
    return lines;
}

inline std::vector<std::string_view> split_fields(std::string_view line, char sep = ',') {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto p = line.find(sep, start);
        if (p == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, p - start));
        start = p + 1;
    }
}

inline std::string at_line(std::size_t line) { return "line " + std::to_string(line) + ": "; }

inline double parse_double(std::string_view s, const std::string& locus) {
    s = trim(s);
    double v = 0.0;
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) {
        throw DataError(locus + "'" + std::string(s) + "' is not a finite number");
    }
    return v;
}

inline std::uint64_t parse_uint(std::string_view s, const std::string& locus) {
    s = trim(s);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
        throw DataError(locus + "'" + std::string(s) + "' is not a non-negative integer");
    }
    return v;
}

inline bool parse_bool(std::string_view s, const std::string& locus) {
    s = trim(s);
    if (s == "1" || s == "true") return true;
    if (s == "0" || s == "false") return false;
    throw DataError(locus + "'" + std::string(s) + "' is not a boolean");
}

// ---- annotations ----

inline constexpr std::string_view kAnnotationHeader = "frame,present,x,y,w,h";
inline constexpr std::string_view kPredictionHeader = "frame,confidence,x,y,w,h";

namespace detail {

inline std::vector<std::string_view> data_rows(std::string_view text, std::string_view header,
                                               std::vector<std::size_t>& line_numbers) {
    const auto lines = split_lines(text);
    if (lines.empty() || trim(lines.front()) != header) {
        throw DataError(at_line(1) + "expected header '" + std::string(header) + "'");
    }
    std::vector<std::string_view> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        rows.push_back(lines[i]);
        line_numbers.push_back(i + 1);
    }
    return rows;
}

inline bool all_empty(const std::vector<std::string_view>& f, std::size_t from) {
    for (std::size_t i = from; i < f.size(); ++i) {
        if (!trim(f[i]).empty()) return false;
    }
    return true;
}

inline BoundingBox parse_box(const std::vector<std::string_view>& f, double p, const std::string& locus) {
    BoundingBox b{parse_double(f[2], locus + "x: "), parse_double(f[3], locus + "y: "),
                  parse_double(f[4], locus + "w: "), parse_double(f[5], locus + "h: "), p};
    require_valid(b, locus.substr(0, locus.size() - 2));
    return b;
}

inline std::string box_fields(const BoundingBox& b) {
    return fmt6(b.x) + "," + fmt6(b.y) + "," + fmt6(b.w) + "," + fmt6(b.h);
}

}  // namespace detail

inline std::vector<Annotation> parse_annotations(std::string_view text) {
    std::vector<std::size_t> ln;
    const auto rows = detail::data_rows(text, kAnnotationHeader, ln);
    std::vector<Annotation> out;
    out.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const std::string locus = at_line(ln[r]);
        const auto f = split_fields(rows[r]);
        if (f.size() != 6) throw DataError(locus + "expected 6 fields, got " + std::to_string(f.size()));
        const std::size_t frame = parse_uint(f[0], locus + "frame: ");
        if (!out.empty() && frame <= out.back().frame_index) {
            throw DataError(locus + "frame " + std::to_string(frame) + " does not increase");
        }
        if (parse_bool(f[1], locus + "present: ")) {
            out.push_back(Annotation::with_box(frame, detail::parse_box(f, 1.0, locus)));
        } else {
            if (!detail::all_empty(f, 2)) throw DataError(locus + "absent frame must have empty box fields");
            out.push_back(Annotation::absent(frame));
        }
    }
    return out;
}

inline std::string write_annotations(const std::vector<Annotation>& annotations) {
    std::string out(kAnnotationHeader);
    out += '\n';
    for (const auto& a : annotations) {
        out += std::to_string(a.frame_index) + ",";
        out += a.present ? "1," + detail::box_fields(*a.truth_box) : std::string("0,,,,");
        out += '\n';
    }
    return out;
}

/// Box-less rows keep no confidence; the writer emits 0 for them.
inline std::vector<Prediction> parse_predictions(std::string_view text) {
    std::vector<std::size_t> ln;
    const auto rows = detail::data_rows(text, kPredictionHeader, ln);
    std::vector<Prediction> out;
    out.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const std::string locus = at_line(ln[r]);
        const auto f = split_fields(rows[r]);
        if (f.size() != 6) throw DataError(locus + "expected 6 fields, got " + std::to_string(f.size()));
        const std::size_t frame = parse_uint(f[0], locus + "frame: ");
        if (!out.empty() && frame <= out.back().frame_index) {
            throw DataError(locus + "frame " + std::to_string(frame) + " does not increase");
        }
        const double conf = parse_double(f[1], locus + "confidence: ");
        if (!(conf >= 0.0 && conf <= 1.0)) throw DataError(locus + "confidence " + std::string(trim(f[1])) + " outside [0, 1]");
        Prediction p{frame, std::nullopt};
        if (!detail::all_empty(f, 2)) p.box = detail::parse_box(f, conf, locus);
        out.push_back(p);
    }
    return out;
}

inline std::string write_predictions(const std::vector<Prediction>& predictions) {
    std::string out(kPredictionHeader);
    out += '\n';
    for (const auto& p : predictions) {
        out += std::to_string(p.frame_index) + ",";
        out += p.box ? fmt6(p.box->p) + "," + detail::box_fields(*p.box) : std::string("0.000000,,,,");
        out += '\n';
    }
    return out;
}

// ---- run configuration ----

struct RunConfig {
    sim::SimConfig sim;
    mdpm::MdpmConfig mdpm;
};

namespace detail {

struct LeaderSpec {
    std::string kind = "forward";
    double rate = 0.6;
    std::string segments;
    sim::Pose start{{2.0, 0.0, 0.0}, 0.0, 0.0};
};

inline double deg(double v) { return v * sim::kPi / 180.0; }

inline std::vector<sim::Interval> parse_intervals(std::string_view s, const std::string& locus) {
    std::vector<sim::Interval> out;
    if (trim(s).empty()) return out;
    for (auto item : split_fields(s, ';')) {
        const auto ab = split_fields(item, ':');
        if (ab.size() != 2) throw DataError(locus + "interval '" + std::string(trim(item)) + "' is not begin:end");
        out.push_back({parse_double(ab[0], locus), parse_double(ab[1], locus)});
    }
    return out;
}

inline std::vector<sim::Segment> parse_segments(std::string_view s, const std::string& locus) {
    std::vector<sim::Segment> out;
    for (auto item : split_fields(s, ';')) {
        const auto parts = split_fields(item, ':');
        if (parts.size() != 3) throw DataError(locus + "segment '" + std::string(trim(item)) + "' is not kind:rate:duration");
        sim::Segment seg;
        try {
            seg.kind = sim::parse_maneuver(std::string(trim(parts[0])));
        } catch (const std::invalid_argument& e) {
            throw DataError(locus + e.what());
        }
        seg.rate = parse_double(parts[1], locus);
        seg.duration = parse_double(parts[2], locus);
        if (!(seg.duration > 0.0)) throw DataError(locus + "segment duration must be > 0");
        out.push_back(seg);
    }
    return out;
}

}  // namespace detail

/// Flat key=value lines with '#' comments. Unknown keys are rejected.
inline RunConfig parse_config(std::string_view text, RunConfig base = {}) {
    RunConfig cfg = std::move(base);
    auto& s = cfg.sim;
    auto& m = cfg.mdpm;
    detail::LeaderSpec leader;
    leader.start = s.leader.start;
    bool leader_set = false;

    using Setter = std::function<void(std::string_view, const std::string&)>;
    auto num = [](double& field) -> Setter {
        return [&field](std::string_view v, const std::string& l) { field = parse_double(v, l); };
    };
    auto angle = [](double& field) -> Setter {
        return [&field](std::string_view v, const std::string& l) { field = detail::deg(parse_double(v, l)); };
    };
    auto count = [](std::size_t& field) -> Setter {
        return [&field](std::string_view v, const std::string& l) { field = parse_uint(v, l); };
    };
    auto leader_num = [&leader_set](double& field) -> Setter {
        return [&field, &leader_set](std::string_view v, const std::string& l) {
            field = parse_double(v, l);
            leader_set = true;
        };
    };

    const std::map<std::string, Setter, std::less<>> keys = {
        {"sim.duration", num(s.duration)},
        {"sim.physics_rate", num(s.physics_rate)},
        {"sim.detector_rate", num(s.detector_rate)},
        {"sim.frame_rate", num(s.frame_rate)},
        {"sim.seed", [&s](std::string_view v, const std::string& l) { s.seed = parse_uint(v, l); }},
        {"sim.detection_threshold", num(s.detection_threshold)},
        {"sim.box_smoothing", num(s.box_smoothing)},
        {"sim.drift_x", num(s.drift.x)},
        {"sim.drift_y", num(s.drift.y)},
        {"sim.drift_z", num(s.drift.z)},
        {"sim.occlusions", [&s](std::string_view v, const std::string& l) { s.occlusions = detail::parse_intervals(v, l); }},
        {"sim.leader", [&](std::string_view v, const std::string& l) {
             leader.kind = std::string(trim(v));
             if (leader.kind != "composite") {
                 try {
                     sim::parse_maneuver(leader.kind);
                 } catch (const std::invalid_argument& e) {
                     throw DataError(l + e.what());
                 }
             }
             leader_set = true;
         }},
        {"sim.leader_rate", leader_num(leader.rate)},
        {"sim.leader_segments", [&](std::string_view v, const std::string& l) {
             detail::parse_segments(v, l);
             leader.segments = std::string(trim(v));
             leader_set = true;
         }},
        {"sim.leader_x", leader_num(leader.start.position.x)},
        {"sim.leader_y", leader_num(leader.start.position.y)},
        {"sim.leader_z", leader_num(leader.start.position.z)},
        {"sim.leader_yaw_deg", [&](std::string_view v, const std::string& l) {
             leader.start.yaw = sim::wrap_angle(detail::deg(parse_double(v, l)));
             leader_set = true;
         }},
        {"sim.follower_x", num(s.follower_start.position.x)},
        {"sim.follower_y", num(s.follower_start.position.y)},
        {"sim.follower_z", num(s.follower_start.position.z)},
        {"sim.follower_yaw_deg", angle(s.follower_start.yaw)},
        {"sim.camera_hfov_deg", angle(s.camera.horizontal_fov)},
        {"sim.camera_aspect", num(s.camera.aspect)},
        {"sim.camera_width", count(s.camera.width)},
        {"sim.camera_height", count(s.camera.height)},
        {"sim.body_length", num(s.target.body_length)},
        {"sim.body_height", num(s.target.body_height)},
        {"sim.gait_frequency", num(s.target.gait_frequency)},
        {"sim.gait_jitter", num(s.target.gait_jitter)},
        {"sim.background", num(s.render.background)},
        {"sim.noise_sigma", num(s.render.noise_sigma)},
        {"sim.body_intensity", num(s.render.body_intensity)},
        {"sim.flipper_low", num(s.render.flipper_low)},
        {"sim.flipper_high", num(s.render.flipper_high)},

        {"servo.desired_area", num(s.servo.desired_area)},
        {"servo.command_rate", num(s.servo.command_rate)},
        {"servo.loss_timeout", num(s.servo.loss_timeout)},
        {"servo.yaw_kp", num(s.servo.yaw_kp)},
        {"servo.yaw_ki", num(s.servo.yaw_ki)},
        {"servo.yaw_kd", num(s.servo.yaw_kd)},
        {"servo.yaw_integral_limit", num(s.servo.yaw_integral_limit)},
        {"servo.depth_gain", num(s.servo.depth_gain)},
        {"servo.speed_gain", num(s.servo.speed_gain)},
        {"servo.max_yaw_rate", num(s.servo.max_yaw_rate)},
        {"servo.max_vertical_speed", num(s.servo.max_vertical_speed)},
        {"servo.max_forward_speed", num(s.servo.max_forward_speed)},

        {"mdpm.window_size", count(m.window_size)},
        {"mdpm.buffer_length", count(m.buffer_length)},
        {"mdpm.num_directions", count(m.num_directions)},
        {"mdpm.sample_rate", num(m.sample_rate)},
        {"mdpm.band_low", num(m.band_low)},
        {"mdpm.band_high", num(m.band_high)},
        {"mdpm.frequency_step", num(m.frequency_step)},
        {"mdpm.threshold_factor", num(m.threshold_factor)},
        {"mdpm.min_amplitude", num(m.min_amplitude)},
        {"mdpm.sigma_cells", num(m.hmm.sigma_cells)},
        {"mdpm.emission_floor", num(m.hmm.emission_floor)},

        {"detector_noise.center_sigma", num(s.detector.center_sigma)},
        {"detector_noise.scale_sigma", num(s.detector.scale_sigma)},
        {"detector_noise.confidence_sigma", num(s.detector.confidence_sigma)},
        {"detector_noise.miss_small", num(s.detector.miss_small)},
        {"detector_noise.miss_base", num(s.detector.miss_base)},
        {"detector_noise.false_positive", num(s.detector.false_positive)},
        {"detector_noise.small_area", num(s.detector.small_area)},
        {"detector_noise.enabled", [&s](std::string_view v, const std::string& l) {
             if (!parse_bool(v, l)) s.detector = sim::DetectorNoise::noiseless();
         }},
    };

    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string locus = at_line(i + 1);
        std::string_view line = lines[i];
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw DataError(locus + "expected key=value");
        const auto key = trim(line.substr(0, eq));
        const auto it = keys.find(key);
        if (it == keys.end()) throw DataError(locus + "unknown key '" + std::string(key) + "'");
        it->second(trim(line.substr(eq + 1)), locus + std::string(key) + ": ");
    }

    if (leader_set) {
        if (leader.kind == "composite") {
            if (leader.segments.empty()) throw DataError("sim.leader = composite needs sim.leader_segments");
            s.leader = sim::TrajectoryScript::composite(detail::parse_segments(leader.segments, ""), leader.start);
        } else {
            s.leader = {leader.start, {{sim::parse_maneuver(leader.kind), leader.rate}}, false};
        }
    }
    try {
        s.validate();
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("config: ") + e.what());
    }
    return cfg;
}

// ---- simulator trace ----

inline std::string write_trace(const sim::SimTrace& trace) {
    std::string out =
        "tick,t,leader_x,leader_y,leader_z,leader_yaw,leader_pitch,"
        "follower_x,follower_y,follower_z,follower_yaw,follower_pitch,"
        "true_present,true_x,true_y,true_w,true_h,"
        "det_present,det_confidence,det_x,det_y,det_w,det_h,detector_tick,servo_tick,"
        "yaw_rate,pitch_rate,roll_rate,forward_speed,vertical_speed\n";
    auto pose = [](const sim::Pose& p) {
        return fmt6(p.position.x) + "," + fmt6(p.position.y) + "," + fmt6(p.position.z) + "," + fmt6(p.yaw) +
               "," + fmt6(p.pitch);
    };
    for (const auto& r : trace.records) {
        out += std::to_string(r.tick) + "," + fmt6(r.t) + "," + pose(r.leader) + "," + pose(r.follower) + ",";
        out += r.true_box ? "1," + detail::box_fields(*r.true_box) : std::string("0,,,,");
        out += ",";
        out += r.detection ? "1," + fmt6(r.detection->p) + "," + detail::box_fields(*r.detection)
                           : std::string("0,,,,,");
        out += std::string(",") + (r.detector_tick ? "1" : "0") + "," + (r.servo_tick ? "1" : "0");
        const auto& c = r.command;
        out += "," + fmt6(c.yaw_rate) + "," + fmt6(c.pitch_rate) + "," + fmt6(c.roll_rate) + "," +
               fmt6(c.forward_speed) + "," + fmt6(c.vertical_speed) + "\n";
    }
    return out;
}

// ---- PGM ----

inline IntensityGrid parse_pgm(std::string_view data, const std::string& name) {
    std::size_t pos = 0;
    auto token = [&]() -> std::string {
        while (pos < data.size()) {
            if (data[pos] == '#') {
                while (pos < data.size() && data[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        const std::size_t start = pos;
        while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos])) && data[pos] != '#') ++pos;
        if (start == pos) throw DataError(name + ": truncated PGM header");
        return std::string(data.substr(start, pos - start));
    };
    const std::string magic = token();
    if (magic != "P5" && magic != "P2") throw DataError(name + ": not a P5/P2 PGM (magic '" + magic + "')");
    const std::size_t w = parse_uint(token(), name + ": width: ");
    const std::size_t h = parse_uint(token(), name + ": height: ");
    const std::size_t maxval = parse_uint(token(), name + ": maxval: ");
    if (w == 0 || h == 0) throw DataError(name + ": empty image");
    if (maxval == 0 || maxval > 65535) throw DataError(name + ": maxval " + std::to_string(maxval) + " out of range");

    IntensityGrid g(w, h);
    const double scale = 1.0 / static_cast<double>(maxval);
    if (magic == "P2") {
        for (auto& v : g.samples) {
            const auto raw = parse_uint(token(), name + ": pixel: ");
            if (raw > maxval) throw DataError(name + ": pixel value exceeds maxval");
            v = static_cast<double>(raw) * scale;
        }
        return g;
    }
    ++pos;  // single whitespace after maxval
    const std::size_t bpp = maxval < 256 ? 1 : 2;
    if (data.size() < pos + w * h * bpp) throw DataError(name + ": truncated pixel data");
    const auto* px = reinterpret_cast<const unsigned char*>(data.data() + pos);
    for (std::size_t i = 0; i < w * h; ++i) {
        const std::size_t raw = bpp == 1 ? px[i] : (static_cast<std::size_t>(px[2 * i]) << 8) | px[2 * i + 1];
        if (raw > maxval) throw DataError(name + ": pixel value exceeds maxval");
        g.samples[i] = static_cast<double>(raw) * scale;
    }
    return g;
}

inline IntensityGrid read_pgm(const std::filesystem::path& path) {
    return parse_pgm(read_text_file(path), path.string());
}

/// 8-bit binary PGM.
inline std::string encode_pgm(const IntensityGrid& g) {
    std::string out = "P5\n" + std::to_string(g.width) + " " + std::to_string(g.height) + "\n255\n";
    out.reserve(out.size() + g.samples.size());
    for (double v : g.samples) {
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
    }
    return out;
}

inline std::string frame_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%05zu.pgm", i);
    return buf;
}

/// All *.pgm files in `dir`, sorted by filename; timestamps are index / fps.
inline std::vector<IntensityGrid> read_frame_dir(const std::filesystem::path& dir, double fps) {
    if (!(fps > 0.0)) throw DataError("--fps must be > 0");
    if (!std::filesystem::is_directory(dir)) throw DataError(dir.string() + ": not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
    if (files.empty()) throw DataError(dir.string() + ": no .pgm frames");
    std::vector<IntensityGrid> frames;
    frames.reserve(files.size());
    for (std::size_t i = 0; i < files.size(); ++i) {
        auto g = read_pgm(files[i]);
        if (!frames.empty() && (g.width != frames.front().width || g.height != frames.front().height)) {
            throw DataError(files[i].string() + ": size differs from the first frame");
        }
        g.timestamp = static_cast<double>(i) / fps;
        frames.push_back(std::move(g));
    }
    return frames;
}

inline void write_frame_dir(const std::filesystem::path& dir, const std::vector<IntensityGrid>& frames) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < frames.size(); ++i) write_text_file(dir / frame_name(i), encode_pgm(frames[i]));
}

}  // namespace convoy::io
