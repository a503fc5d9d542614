#pragma once

// Command-line surface: eval, sim, mdpm and servo-sim subcommands.
// Exit status: 0 success, 1 usage error, 2 data error.

#include <CLI11.hpp>

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "convoy/eval.hpp"
#include "convoy/io.hpp"
#include "convoy/mdpm.hpp"
#include "convoy/servo.hpp"
#include "convoy/sim.hpp"

namespace convoy::cli {

inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kData = 2;

namespace fs = std::filesystem;

struct EvalArgs {
    std::string annotations, predictions, report_dir;
    std::optional<double> threshold;
    bool auto_threshold = false;
    double min_precision = 0.95;
    double fps = 15.0;
    double max_gap = 3.0;
};

struct SimArgs {
    std::string config, out, frames_out;
    std::optional<std::uint64_t> seed;
};

struct MdpmArgs {
    std::string frames, out, config;
    double fps = 15.0;
};

struct ServoSimArgs {
    std::string config, out;
    std::optional<std::uint64_t> seed;
};

inline io::RunConfig load_config(const std::string& path) {
    if (path.empty()) return {};
    return io::parse_config(io::read_text_file(path));
}

inline void run_eval(const EvalArgs& a, std::ostream& out) {
    const auto annotations = io::parse_annotations(io::read_text_file(a.annotations));
    const auto predictions = io::parse_predictions(io::read_text_file(a.predictions));
    if (annotations.empty()) throw DataError(a.annotations + ": no frames");
    if (!(a.fps > 0.0)) throw DataError("--fps must be > 0");

    double threshold = 0.0;
    if (a.auto_threshold) {
        try {
            threshold = eval::select_threshold(annotations, predictions, a.min_precision);
        } catch (const eval::NoThresholdError& e) {
            throw DataError(e.what());
        }
    } else {
        threshold = *a.threshold;
    }
    const auto results = eval::classify_frames(annotations, predictions, threshold);
    const auto metrics = eval::metrics_summary(results);
    const auto tracks = eval::track_statistics(results, a.fps, a.max_gap);
    eval::HistogramSpec spec;
    spec.fps = a.fps;
    const auto hist = eval::histogram_report(results, spec);

    if (!a.report_dir.empty()) {
        const fs::path dir(a.report_dir);
        fs::create_directories(dir);
        io::write_text_file(dir / "metrics.csv", eval::metrics_csv(metrics));
        io::write_text_file(dir / "area_counts.csv", eval::area_counts_csv(hist));
        io::write_text_file(dir / "center_bias.csv", eval::center_bias_csv(hist));
        io::write_text_file(dir / "negative_runs.csv", eval::negative_runs_csv(hist));
        io::write_text_file(dir / "tracks.csv", eval::tracks_csv(tracks));
    }
    out << "threshold  " << eval::fmt6(threshold) << "\n" << eval::render_metrics_table(metrics);
    out << "tracks     " << tracks.count() << "\n";
    out << "track_mean " << eval::fmt6(tracks.mean) << "\n";
    out << "track_std  " << eval::fmt6(tracks.stddev) << "\n";
    out << "track_max  " << eval::fmt6(tracks.max) << "\n";
}

inline void run_sim(const SimArgs& a, std::ostream& out) {
    auto cfg = load_config(a.config).sim;
    if (a.seed) cfg.seed = *a.seed;
    const auto trace = sim::run_convoy(cfg);
    std::vector<IntensityGrid> frames;
    if (!a.frames_out.empty()) frames = sim::render_trace_frames(cfg, trace);
    const std::string csv = io::write_trace(trace);

    io::write_text_file(a.out, csv);
    if (!a.frames_out.empty()) io::write_frame_dir(a.frames_out, frames);
    out << "ticks " << trace.records.size() << "\n";
    if (!a.frames_out.empty()) out << "frames " << frames.size() << "\n";
}

inline void run_mdpm(const MdpmArgs& a, std::ostream& out) {
    auto cfg = load_config(a.config).mdpm;
    cfg.sample_rate = a.fps;
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw DataError(e.what());
    }
    const auto frames = io::read_frame_dir(a.frames, a.fps);
    mdpm::MdpmTracker tracker(cfg);
    std::vector<eval::Prediction> preds;
    preds.reserve(frames.size());
    std::size_t detections = 0;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        eval::Prediction p{i, std::nullopt};
        if (const auto d = tracker.push(frames[i])) {
            p.box = d->bbox;
            ++detections;
        }
        preds.push_back(p);
    }
    io::write_text_file(a.out, io::write_predictions(preds));
    out << "frames " << frames.size() << "\ndetections " << detections << "\n";
}

/// Per servo tick: image errors of the box the controller saw and the command.
inline std::string servo_trace_csv(const sim::SimTrace& trace, const servo::ServoConfig& sc) {
    std::string csv = "t,has_detection,dx,dy,d_area,yaw_rate,pitch_rate,roll_rate,forward_speed,vertical_speed\n";
    for (const auto& r : trace.records) {
        if (!r.servo_tick) continue;
        csv += eval::fmt6(r.t) + ",";
        if (r.detection) {
            const auto e = servo::compute_errors(*r.detection, sc);
            csv += "1," + eval::fmt6(e.dx) + "," + eval::fmt6(e.dy) + "," + eval::fmt6(e.d_area) + ",";
        } else {
            csv += "0,,,,";
        }
        const auto& c = r.command;
        csv += eval::fmt6(c.yaw_rate) + "," + eval::fmt6(c.pitch_rate) + "," + eval::fmt6(c.roll_rate) + "," +
               eval::fmt6(c.forward_speed) + "," + eval::fmt6(c.vertical_speed) + "\n";
    }
    return csv;
}

inline void run_servo_sim(const ServoSimArgs& a, std::ostream& out) {
    auto cfg = load_config(a.config).sim;
    if (a.seed) cfg.seed = *a.seed;
    const auto trace = sim::run_convoy(cfg);
    const std::string csv = servo_trace_csv(trace, cfg.servo);
    io::write_text_file(a.out, csv);
    out << "final_half_hold_fraction "
        << eval::fmt6(sim::hold_fraction(trace, 0.5 * cfg.duration, cfg.servo.desired_area)) << "\n";
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"convoy: detector evaluation, periodic-motion tracking and convoy simulation"};
    app.require_subcommand(1);

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "score predictions against annotations");
    eval_cmd->add_option("--annotations", ea.annotations, "annotation CSV")->required();
    eval_cmd->add_option("--predictions", ea.predictions, "prediction CSV")->required();
    auto* thr = eval_cmd->add_option("--threshold", ea.threshold, "confidence threshold")->check(CLI::Range(0.0, 1.0));
    auto* autothr = eval_cmd->add_flag("--auto-threshold", ea.auto_threshold,
                                       "pick the best-recall threshold meeting --min-precision");
    thr->excludes(autothr);
    eval_cmd->add_option("--min-precision", ea.min_precision)->check(CLI::Range(0.0, 1.0));
    eval_cmd->add_option("--fps", ea.fps, "frame rate of the annotated sequence");
    eval_cmd->add_option("--max-gap", ea.max_gap, "longest interruption inside a track, seconds");
    eval_cmd->add_option("--report-dir", ea.report_dir, "directory for CSV tables");

    SimArgs sa;
    auto* sim_cmd = app.add_subcommand("sim", "run the convoy simulator");
    sim_cmd->add_option("--config", sa.config, "key=value config file");
    sim_cmd->add_option("--out", sa.out, "trace CSV")->required();
    sim_cmd->add_option("--seed", sa.seed);
    sim_cmd->add_option("--frames-out", sa.frames_out, "directory for rendered PGM frames");

    MdpmArgs ma;
    auto* mdpm_cmd = app.add_subcommand("mdpm", "periodic-motion tracker over a PGM frame directory");
    mdpm_cmd->add_option("--frames", ma.frames, "frame directory")->required();
    mdpm_cmd->add_option("--fps", ma.fps, "frame rate");
    mdpm_cmd->add_option("--out", ma.out, "prediction CSV")->required();
    mdpm_cmd->add_option("--config", ma.config, "key=value config file");

    ServoSimArgs va;
    auto* servo_cmd = app.add_subcommand("servo-sim", "closed-loop servo run, per-tick command log");
    servo_cmd->add_option("--config", va.config, "key=value config file");
    servo_cmd->add_option("--out", va.out, "command CSV")->required();
    servo_cmd->add_option("--seed", va.seed);

    std::vector<const char*> argv;
    argv.push_back("convoy");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
        if (eval_cmd->parsed() && !ea.threshold && !ea.auto_threshold) {
            throw CLI::ValidationError("eval", "one of --threshold or --auto-threshold is required");
        }
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e, out, err);
            return kOk;
        }
        err << "error: " << e.what() << "\n\n" << app.help();
        return kUsage;
    }

    try {
        if (eval_cmd->parsed()) run_eval(ea, out);
        else if (sim_cmd->parsed()) run_sim(sa, out);
        else if (mdpm_cmd->parsed()) run_mdpm(ma, out);
        else run_servo_sim(va, out);
    } catch (const DataError& e) {
        err << "error: " << e.what() << "\n";
        return kData;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kData;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kData;
    }
    return kOk;
}

}  // namespace convoy::cli
