#pragma once

// Frame-level detector evaluation: confusion labels, summary metrics,
// confidence-threshold selection, track statistics and histogram tables.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "convoy/core.hpp"

namespace convoy::eval {

enum class Classification { TP, TN, FP, FN };

inline const char* to_string(Classification c) {
    switch (c) {
        case Classification::TP: return "TP";
        case Classification::TN: return "TN";
        case Classification::FP: return "FP";
        case Classification::FN: return "FN";
    }
    return "?";
}

/// One detector output: a box (confidence in box.p) or nothing.
struct Prediction {
    std::size_t frame_index = 0;
    std::optional<BoundingBox> box;

    friend bool operator==(const Prediction&, const Prediction&) = default;
};

struct FrameResult {
    std::size_t frame_index = 0;
    Annotation annotation;
    std::optional<BoundingBox> prediction;
    Classification classification = Classification::TN;
    std::optional<double> iou;  // TP only
};

inline Classification classify(bool truth_present, bool predicted_present) {
    if (truth_present) return predicted_present ? Classification::TP : Classification::FN;
    return predicted_present ? Classification::FP : Classification::TN;
}

/// Pairs annotations with predictions by frame index and labels each frame.
/// A prediction is present iff it has a box with confidence >= threshold.
/// Output is ordered by frame index.
inline std::vector<FrameResult> classify_frames(std::span<const Annotation> annotations,
                                                std::span<const Prediction> predictions,
                                                double threshold) {
    std::map<std::size_t, const Annotation*> truth;
    for (const auto& a : annotations) {
        if (!is_consistent(a)) throw DataError("annotation for frame " + std::to_string(a.frame_index) + " is inconsistent");
        if (!truth.emplace(a.frame_index, &a).second) {
            throw DataError("duplicate annotation for frame " + std::to_string(a.frame_index));
        }
    }
    std::map<std::size_t, const Prediction*> pred;
    for (const auto& p : predictions) {
        if (!pred.emplace(p.frame_index, &p).second) {
            throw DataError("duplicate prediction for frame " + std::to_string(p.frame_index));
        }
        if (!truth.count(p.frame_index)) {
            throw DataError("prediction for frame " + std::to_string(p.frame_index) + " has no annotation");
        }
    }

    std::vector<FrameResult> out;
    out.reserve(truth.size());
    for (const auto& [frame, a] : truth) {
        auto it = pred.find(frame);
        if (it == pred.end()) throw DataError("no prediction for annotated frame " + std::to_string(frame));
        const auto& box = it->second->box;
        FrameResult r;
        r.frame_index = frame;
        r.annotation = *a;
        r.prediction = box;
        const bool predicted = box && box->p >= threshold;
        r.classification = classify(a->present, predicted);
        if (r.classification == Classification::TP) r.iou = iou(*box, *a->truth_box);
        out.push_back(std::move(r));
    }
    return out;
}

struct Counts {
    std::size_t images = 0, tp = 0, tn = 0, fp = 0, fn = 0;
};

struct MetricsReport {
    Counts counts;
    double accuracy = 0.0;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> avg_iou;
    std::optional<double> lfr;
    std::optional<double> fps;
};

inline Counts count_labels(std::span<const FrameResult> results) {
    Counts c;
    for (const auto& r : results) {
        ++c.images;
        switch (r.classification) {
            case Classification::TP: ++c.tp; break;
            case Classification::TN: ++c.tn; break;
            case Classification::FP: ++c.fp; break;
            case Classification::FN: ++c.fn; break;
        }
    }
    return c;
}

inline std::optional<double> ratio(std::size_t num, std::size_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

inline MetricsReport metrics_summary(std::span<const FrameResult> results) {
    if (results.empty()) throw std::invalid_argument("metrics_summary: no frames");
    MetricsReport m;
    m.counts = count_labels(results);
    const Counts& c = m.counts;
    m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.images);
    m.precision = ratio(c.tp, c.tp + c.fp);
    m.recall = ratio(c.tp, c.tp + c.fn);
    if (c.tp > 0) {
        double sum = 0.0;
        std::size_t failures = 0;
        for (const auto& r : results) {
            if (r.classification != Classification::TP) continue;
            sum += *r.iou;
            if (*r.iou < 0.5) ++failures;
        }
        m.avg_iou = sum / static_cast<double>(c.tp);
        m.lfr = static_cast<double>(failures) / static_cast<double>(c.tp);
    }
    return m;
}

/// Raised when no swept threshold reaches the precision floor.
class NoThresholdError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SweepPoint {
    double threshold = 0.0;
    std::optional<double> precision;
    std::optional<double> recall;
};

/// Precision/recall at every distinct confidence, ascending.
inline std::vector<SweepPoint> threshold_sweep(std::span<const Annotation> annotations,
                                               std::span<const Prediction> predictions) {
    std::set<double> confidences;
    for (const auto& p : predictions) {
        if (p.box) confidences.insert(p.box->p);
    }
    std::vector<SweepPoint> out;
    out.reserve(confidences.size());
    for (double t : confidences) {
        const auto m = metrics_summary(classify_frames(annotations, predictions, t));
        out.push_back({t, m.precision, m.recall});
    }
    return out;
}

/// Threshold with the best recall among those whose precision is at least
/// `min_precision`; ties go to the lower threshold.
inline double select_threshold(std::span<const Annotation> annotations,
                               std::span<const Prediction> predictions, double min_precision = 0.95) {
    if (!(min_precision >= 0.0 && min_precision <= 1.0)) {
        throw std::invalid_argument("select_threshold: min_precision must be in [0, 1]");
    }
    std::optional<SweepPoint> best;
    for (const auto& s : threshold_sweep(annotations, predictions)) {
        if (!s.precision || *s.precision < min_precision) continue;
        const double r = s.recall.value_or(0.0);
        if (!best || r > best->recall.value_or(0.0)) best = s;
    }
    if (!best) {
        char msg[128];
        std::snprintf(msg, sizeof msg, "select_threshold: no threshold reaches precision %.6f", min_precision);
        throw NoThresholdError(msg);
    }
    return best->threshold;
}

struct TrackStats {
    std::vector<double> durations;
    double mean = 0.0;
    double stddev = 0.0;  // population
    double max = 0.0;

    std::size_t count() const { return durations.size(); }
};

inline TrackStats summarize_durations(std::vector<double> durations) {
    TrackStats s;
    s.durations = std::move(durations);
    if (s.durations.empty()) return s;
    const double n = static_cast<double>(s.durations.size());
    s.mean = std::accumulate(s.durations.begin(), s.durations.end(), 0.0) / n;
    double ss = 0.0;
    for (double d : s.durations) ss += (d - s.mean) * (d - s.mean);
    s.stddev = std::sqrt(ss / n);
    s.max = *std::max_element(s.durations.begin(), s.durations.end());
    return s;
}

/// Groups TP frames into tracks allowing interruptions of up to max_gap
/// seconds (inclusive). Durations span first to last TP frame.
inline TrackStats track_statistics(std::span<const FrameResult> results, double fps, double max_gap = 3.0) {
    if (!(fps > 0.0)) throw std::invalid_argument("track_statistics: fps must be > 0");
    if (!(max_gap >= 0.0)) throw std::invalid_argument("track_statistics: max_gap must be >= 0");
    constexpr double kEps = 1e-9;

    std::vector<double> durations;
    std::optional<std::size_t> first, last;
    for (const auto& r : results) {
        if (r.classification != Classification::TP) continue;
        const std::size_t f = r.frame_index;
        if (last && f <= *last) throw DataError("track_statistics: frames out of order at " + std::to_string(f));
        if (last && static_cast<double>(f - *last - 1) / fps > max_gap + kEps) {
            durations.push_back(static_cast<double>(*last - *first + 1) / fps);
            first.reset();
        }
        if (!first) first = f;
        last = f;
    }
    if (first) durations.push_back(static_cast<double>(*last - *first + 1) / fps);
    return summarize_durations(std::move(durations));
}

// ---- histograms ----

struct HistogramSpec {
    std::vector<double> area_edges{0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0};
    std::vector<double> duration_edges{0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0};
    double fps = 15.0;

    void validate() const {
        auto check = [](const std::vector<double>& e, const char* what) {
            if (e.size() < 2) throw std::invalid_argument(std::string("histogram: ") + what + " needs at least 2 edges");
            for (std::size_t i = 1; i < e.size(); ++i) {
                if (!(e[i] > e[i - 1])) throw std::invalid_argument(std::string("histogram: ") + what + " edges must increase");
            }
        };
        check(area_edges, "area");
        check(duration_edges, "duration");
        if (!(fps > 0.0)) throw std::invalid_argument("histogram: fps must be > 0");
    }
};

/// Bin of v over half-open bins, the last one closed. nullopt if outside.
inline std::optional<std::size_t> bin_of(const std::vector<double>& edges, double v) {
    if (v < edges.front() || v > edges.back()) return std::nullopt;
    if (v == edges.back()) return edges.size() - 2;
    const auto it = std::upper_bound(edges.begin(), edges.end(), v);
    return static_cast<std::size_t>(it - edges.begin()) - 1;
}

struct AreaCountRow {
    double lo = 0.0, hi = 0.0;
    std::size_t tp = 0, fn = 0;
};

struct BiasRow {
    double lo = 0.0, hi = 0.0;
    std::size_t n = 0;
    double mean_dx = 0.0, std_dx = 0.0;
    double mean_dy = 0.0, std_dy = 0.0;
};

struct DurationRow {
    double lo = 0.0, hi = 0.0;
    std::size_t tn_runs = 0, fn_runs = 0;
};

struct HistogramReport {
    std::vector<AreaCountRow> area_counts;
    std::vector<BiasRow> center_bias;
    std::vector<DurationRow> negative_runs;
};

inline HistogramReport histogram_report(std::span<const FrameResult> results, const HistogramSpec& spec) {
    spec.validate();
    HistogramReport rep;
    const std::size_t na = spec.area_edges.size() - 1;
    const std::size_t nd = spec.duration_edges.size() - 1;
    for (std::size_t i = 0; i < na; ++i) {
        rep.area_counts.push_back({spec.area_edges[i], spec.area_edges[i + 1]});
        rep.center_bias.push_back({spec.area_edges[i], spec.area_edges[i + 1]});
    }
    for (std::size_t i = 0; i < nd; ++i) rep.negative_runs.push_back({spec.duration_edges[i], spec.duration_edges[i + 1]});

    std::vector<std::vector<double>> dx(na), dy(na);
    for (const auto& r : results) {
        if (!r.annotation.present) continue;
        const auto b = bin_of(spec.area_edges, box_area(*r.annotation.truth_box));
        if (!b) continue;
        if (r.classification == Classification::TP) {
            ++rep.area_counts[*b].tp;
            const auto [px, py] = box_center(*r.prediction);
            const auto [tx, ty] = box_center(*r.annotation.truth_box);
            dx[*b].push_back(px - tx);
            dy[*b].push_back(py - ty);
        } else if (r.classification == Classification::FN) {
            ++rep.area_counts[*b].fn;
        }
    }
    for (std::size_t i = 0; i < na; ++i) {
        auto& row = rep.center_bias[i];
        row.n = dx[i].size();
        if (row.n == 0) continue;
        const auto sx = summarize_durations(dx[i]);
        const auto sy = summarize_durations(dy[i]);
        row.mean_dx = sx.mean;
        row.std_dx = sx.stddev;
        row.mean_dy = sy.mean;
        row.std_dy = sy.stddev;
    }

    // Runs of consecutive TN or FN frames.
    std::size_t i = 0;
    while (i < results.size()) {
        const auto c = results[i].classification;
        std::size_t j = i + 1;
        while (j < results.size() && results[j].classification == c &&
               results[j].frame_index == results[j - 1].frame_index + 1) {
            ++j;
        }
        if (c == Classification::TN || c == Classification::FN) {
            const double dur = static_cast<double>(j - i) / spec.fps;
            if (const auto b = bin_of(spec.duration_edges, dur)) {
                if (c == Classification::TN) ++rep.negative_runs[*b].tn_runs;
                else ++rep.negative_runs[*b].fn_runs;
            }
        }
        i = j;
    }
    return rep;
}

// ---- rendering ----

inline std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt6(*v) : "—"; }

inline std::string render_metrics_table(const MetricsReport& m) {
    const std::pair<const char*, std::string> rows[] = {
        {"images", std::to_string(m.counts.images)},
        {"tp", std::to_string(m.counts.tp)},
        {"tn", std::to_string(m.counts.tn)},
        {"fp", std::to_string(m.counts.fp)},
        {"fn", std::to_string(m.counts.fn)},
        {"accuracy", fmt6(m.accuracy)},
        {"precision", fmt_opt(m.precision)},
        {"recall", fmt_opt(m.recall)},
        {"avg_iou", fmt_opt(m.avg_iou)},
        {"lfr", fmt_opt(m.lfr)},
        {"fps", fmt_opt(m.fps)},
    };
    std::string out;
    for (const auto& [k, v] : rows) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%-10s %s\n", k, v.c_str());
        out += buf;
    }
    return out;
}

inline std::string metrics_csv(const MetricsReport& m) {
    return "images,tp,tn,fp,fn,accuracy,precision,recall,avg_iou,lfr,fps\n" +
           std::to_string(m.counts.images) + "," + std::to_string(m.counts.tp) + "," +
           std::to_string(m.counts.tn) + "," + std::to_string(m.counts.fp) + "," +
           std::to_string(m.counts.fn) + "," + fmt6(m.accuracy) + "," + fmt_opt(m.precision) + "," +
           fmt_opt(m.recall) + "," + fmt_opt(m.avg_iou) + "," + fmt_opt(m.lfr) + "," + fmt_opt(m.fps) + "\n";
}

inline std::string area_counts_csv(const HistogramReport& h) {
    std::string out = "area_lo,area_hi,tp,fn\n";
    for (const auto& r : h.area_counts) {
        out += fmt6(r.lo) + "," + fmt6(r.hi) + "," + std::to_string(r.tp) + "," + std::to_string(r.fn) + "\n";
    }
    return out;
}

inline std::string center_bias_csv(const HistogramReport& h) {
    std::string out = "area_lo,area_hi,n,mean_dx,std_dx,mean_dy,std_dy\n";
    for (const auto& r : h.center_bias) {
        out += fmt6(r.lo) + "," + fmt6(r.hi) + "," + std::to_string(r.n) + "," + fmt6(r.mean_dx) + "," +
               fmt6(r.std_dx) + "," + fmt6(r.mean_dy) + "," + fmt6(r.std_dy) + "\n";
    }
    return out;
}

inline std::string negative_runs_csv(const HistogramReport& h) {
    std::string out = "duration_lo,duration_hi,tn_runs,fn_runs\n";
    for (const auto& r : h.negative_runs) {
        out += fmt6(r.lo) + "," + fmt6(r.hi) + "," + std::to_string(r.tn_runs) + "," + std::to_string(r.fn_runs) + "\n";
    }
    return out;
}

inline std::string tracks_csv(const TrackStats& s) {
    std::string out = "track,duration\n";
    for (std::size_t i = 0; i < s.durations.size(); ++i) out += std::to_string(i) + "," + fmt6(s.durations[i]) + "\n";
    return out;
}

// ---- timing ----

/// Frames per second of `detector` over `frames`, median of `runs` passes.
template <class Frame, class Detector>
double measure_fps(Detector&& detector, std::span<const Frame> frames, int runs = 5) {
    if (frames.empty()) throw std::invalid_argument("measure_fps: no frames");
    if (runs < 1) throw std::invalid_argument("measure_fps: runs must be >= 1");
    std::vector<double> rates;
    for (int r = 0; r < runs; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        for (const auto& f : frames) detector(f);
        const auto t1 = std::chrono::steady_clock::now();
        const double secs = std::max(std::chrono::duration<double>(t1 - t0).count(), 1e-9);
        rates.push_back(static_cast<double>(frames.size()) / secs);
    }
    std::sort(rates.begin(), rates.end());
    const std::size_t mid = rates.size() / 2;
    return rates.size() % 2 ? rates[mid] : 0.5 * (rates[mid - 1] + rates[mid]);
}

}  // namespace convoy::eval
