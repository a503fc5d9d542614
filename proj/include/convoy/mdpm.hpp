#pragma once

// Mixed-domain periodic motion tracker.
//
// A frame buffer is tiled into non-overlapping square sub-windows. A motion
// direction is a path of windows, one per buffered frame, where consecutive
// windows are 8-neighbours (or the same cell). Each direction yields a series
// of mean window intensities. An HMM over the window cells ranks directions,
// the best few are transformed with a DTFT over the gait band, and a strong
// peak in that band marks the target.
//
// HMM used for ranking:
//   states       window cells
//   transition   log T(a->b) = -d^2 / (2 sigma^2) - log Z(a), d the cell
//                displacement, Z(a) normalizing over a's neighbourhood
//   emission     log E_t(c) = log((dev_t(c)^2 + floor) / sum_c'(dev_t(c')^2 + floor)),
//                dev_t(c) the deviation of window c at frame t from its buffer mean
//   likelihood   sum of log emissions and log transitions along the path

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <deque>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "convoy/core.hpp"

namespace convoy::mdpm {

struct SubWindowGrid {
    std::size_t window_size = 30;
    std::size_t columns = 0;
    std::size_t rows = 0;

    /// Right and bottom remainders that do not fill a whole window are dropped.
    static SubWindowGrid for_frame(std::size_t width, std::size_t height,
                                   std::size_t window_size = 30) {
        if (window_size == 0) throw std::invalid_argument("SubWindowGrid: window_size must be > 0");
        return {window_size, width / window_size, height / window_size};
    }

    std::size_t cells() const { return columns * rows; }
    std::size_t column_of(std::size_t cell) const { return cell % columns; }
    std::size_t row_of(std::size_t cell) const { return cell / columns; }

    bool adjacent(std::size_t a, std::size_t b) const {
        const auto dc = static_cast<long>(column_of(a)) - static_cast<long>(column_of(b));
        const auto dr = static_cast<long>(row_of(a)) - static_cast<long>(row_of(b));
        return std::abs(dc) <= 1 && std::abs(dr) <= 1;
    }

    double squared_distance(std::size_t a, std::size_t b) const {
        const double dc = static_cast<double>(column_of(a)) - static_cast<double>(column_of(b));
        const double dr = static_cast<double>(row_of(a)) - static_cast<double>(row_of(b));
        return dc * dc + dr * dr;
    }

    /// Cells within the 8-neighbourhood of `cell`, including itself, ascending.
    std::vector<std::size_t> neighbours(std::size_t cell) const {
        std::vector<std::size_t> out;
        const long c = static_cast<long>(column_of(cell));
        const long r = static_cast<long>(row_of(cell));
        for (long dr = -1; dr <= 1; ++dr) {
            for (long dc = -1; dc <= 1; ++dc) {
                const long nc = c + dc, nr = r + dr;
                if (nc < 0 || nr < 0 || nc >= static_cast<long>(columns) ||
                    nr >= static_cast<long>(rows)) {
                    continue;
                }
                out.push_back(static_cast<std::size_t>(nr) * columns + static_cast<std::size_t>(nc));
            }
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    /// Normalized image-space box covering `cell`.
    BoundingBox cell_box(std::size_t cell, std::size_t width, std::size_t height) const {
        const double ws = static_cast<double>(window_size);
        return {static_cast<double>(column_of(cell)) * ws / static_cast<double>(width),
                static_cast<double>(row_of(cell)) * ws / static_cast<double>(height),
                ws / static_cast<double>(width), ws / static_cast<double>(height), 1.0};
    }
};

struct HmmModel {
    double sigma_cells = 1.0;
    double emission_floor = 1e-8;
};

struct MotionDirection {
    std::vector<std::size_t> window_path;
    std::vector<double> intensity_series;
    double likelihood = 0.0;

    std::size_t terminal() const { return window_path.back(); }
};

/// Mean intensity of every window of one frame, indexed by cell.
inline std::vector<double> window_means(const IntensityGrid& frame, const SubWindowGrid& grid) {
    std::vector<double> sums(grid.cells(), 0.0);
    const std::size_t ws = grid.window_size;
    const std::size_t used_w = grid.columns * ws;
    for (std::size_t row = 0; row < grid.rows * ws; ++row) {
        const double* line = frame.samples.data() + row * frame.width;
        double* cell_row = sums.data() + (row / ws) * grid.columns;
        for (std::size_t col = 0; col < used_w; ++col) cell_row[col / ws] += line[col];
    }
    const double n = static_cast<double>(ws * ws);
    for (double& s : sums) s /= n;
    return sums;
}

/// Per-frame window means for a buffer, validated for matching dimensions.
inline std::vector<std::vector<double>> buffer_means(std::span<const IntensityGrid> frames,
                                                     const SubWindowGrid& grid) {
    if (frames.empty()) throw DataError("mdpm: empty frame buffer");
    const std::size_t w = frames.front().width, h = frames.front().height;
    std::vector<std::vector<double>> means;
    means.reserve(frames.size());
    for (std::size_t t = 0; t < frames.size(); ++t) {
        const auto& f = frames[t];
        if (f.width != w || f.height != h || !f.consistent()) {
            throw DataError("mdpm: frame " + std::to_string(t) + " is " + std::to_string(f.width) +
                            "x" + std::to_string(f.height) + ", expected " + std::to_string(w) +
                            "x" + std::to_string(h));
        }
        means.push_back(window_means(f, grid));
    }
    return means;
}

/// Temporal mean of every window over the buffer.
inline std::vector<double> cell_means(const std::vector<std::vector<double>>& means) {
    std::vector<double> out(means.front().size(), 0.0);
    for (const auto& m : means) {
        for (std::size_t c = 0; c < out.size(); ++c) out[c] += m[c];
    }
    for (double& v : out) v /= static_cast<double>(means.size());
    return out;
}

/// Log emission table [t][cell].
inline std::vector<std::vector<double>> log_emissions(
    const std::vector<std::vector<double>>& means, const HmmModel& model) {
    const std::size_t T = means.size();
    const std::size_t cells = means.front().size();
    const std::vector<double> cell_mean = cell_means(means);

    std::vector<std::vector<double>> out(T, std::vector<double>(cells));
    for (std::size_t t = 0; t < T; ++t) {
        double total = 0.0;
        for (std::size_t c = 0; c < cells; ++c) {
            const double dev = means[t][c] - cell_mean[c];
            out[t][c] = dev * dev + model.emission_floor;
            total += out[t][c];
        }
        for (std::size_t c = 0; c < cells; ++c) out[t][c] = std::log(out[t][c] / total);
    }
    return out;
}

/// log T(from -> to); -inf when the cells are not adjacent.
class TransitionModel {
public:
    TransitionModel(const SubWindowGrid& grid, const HmmModel& model)
        : grid_(grid), inv_two_var_(1.0 / (2.0 * model.sigma_cells * model.sigma_cells)),
          log_norm_(grid.cells()) {
        for (std::size_t a = 0; a < grid.cells(); ++a) {
            double z = 0.0;
            for (std::size_t b : grid.neighbours(a)) z += std::exp(-grid.squared_distance(a, b) * inv_two_var_);
            log_norm_[a] = std::log(z);
        }
    }

    double log_prob(std::size_t from, std::size_t to) const {
        if (!grid_.adjacent(from, to)) return -std::numeric_limits<double>::infinity();
        return -grid_.squared_distance(from, to) * inv_two_var_ - log_norm_[from];
    }

private:
    SubWindowGrid grid_;
    double inv_two_var_;
    std::vector<double> log_norm_;
};

namespace detail {

inline void require_grid(const SubWindowGrid& grid) {
    if (grid.cells() == 0) throw DataError("mdpm: frame is smaller than one sub-window");
}

// The series along a path is each visited window's deviation from its own
// temporal mean, so hopping between windows of different brightness does not
// inject a step into the spectrum.
inline MotionDirection make_direction(std::vector<std::size_t> path,
                                      const std::vector<std::vector<double>>& means,
                                      const std::vector<double>& baseline, double likelihood) {
    MotionDirection d;
    d.intensity_series.reserve(path.size());
    for (std::size_t t = 0; t < path.size(); ++t) {
        d.intensity_series.push_back(means[t][path[t]] - baseline[path[t]]);
    }
    d.window_path = std::move(path);
    d.likelihood = likelihood;
    return d;
}

}  // namespace detail

/// Log-likelihood of a window path under the ranking HMM.
inline double path_likelihood(std::span<const std::size_t> path,
                              const std::vector<std::vector<double>>& emissions,
                              const TransitionModel& transitions) {
    double ll = 0.0;
    for (std::size_t t = 0; t < path.size(); ++t) {
        ll += emissions[t][path[t]];
        if (t > 0) ll += transitions.log_prob(path[t - 1], path[t]);
    }
    return ll;
}

/// Every adjacency-respecting window path through the buffer, scored. The
/// count grows as cells * 9^(T-1); throws when it would exceed `max_directions`.
inline std::vector<MotionDirection> enumerate_directions(std::span<const IntensityGrid> frames,
                                                         const SubWindowGrid& grid,
                                                         const HmmModel& model = {},
                                                         std::size_t max_directions = 1u << 20) {
    detail::require_grid(grid);
    const auto means = buffer_means(frames, grid);
    const auto emissions = log_emissions(means, model);
    const auto baseline = cell_means(means);
    const TransitionModel transitions(grid, model);
    const std::size_t T = means.size();

    std::vector<std::vector<std::size_t>> nbrs(grid.cells());
    for (std::size_t c = 0; c < grid.cells(); ++c) nbrs[c] = grid.neighbours(c);

    std::vector<MotionDirection> out;
    std::vector<std::size_t> path;
    path.reserve(T);
    auto recurse = [&](auto&& self) -> void {
        if (path.size() == T) {
            if (out.size() >= max_directions) {
                throw std::length_error("enumerate_directions: more than " +
                                        std::to_string(max_directions) + " directions");
            }
            out.push_back(detail::make_direction(path, means, baseline, path_likelihood(path, emissions, transitions)));
            return;
        }
        for (std::size_t next : nbrs[path.back()]) {
            path.push_back(next);
            self(self);
            path.pop_back();
        }
    };
    for (std::size_t c = 0; c < grid.cells(); ++c) {
        path.assign(1, c);
        recurse(recurse);
    }
    return out;
}

/// Ranking order: likelihood descending, then terminal window ascending, then
/// the full path lexicographically.
inline bool ranks_before(const MotionDirection& a, const MotionDirection& b) {
    if (a.likelihood != b.likelihood) return a.likelihood > b.likelihood;
    if (a.terminal() != b.terminal()) return a.terminal() < b.terminal();
    return a.window_path < b.window_path;
}

/// The `keep` most likely directions, best first.
inline std::vector<MotionDirection> hmm_prune(std::vector<MotionDirection> directions,
                                              std::size_t keep) {
    if (keep == 0) throw std::invalid_argument("hmm_prune: P must be >= 1");
    if (directions.empty()) throw std::invalid_argument("hmm_prune: no directions to prune");
    std::sort(directions.begin(), directions.end(), ranks_before);
    if (directions.size() > keep) directions.resize(keep);
    return directions;
}

/// Best path ending in each cell (Viterbi), one direction per terminal window.
/// Equivalent to the per-terminal maximum of enumerate_directions but linear
/// in T. Ties prefer the lower-indexed predecessor.
inline std::vector<MotionDirection> viterbi_directions(
    const std::vector<std::vector<double>>& means, const SubWindowGrid& grid,
    const HmmModel& model = {}) {
    detail::require_grid(grid);
    const std::size_t T = means.size();
    const std::size_t cells = grid.cells();
    const auto emissions = log_emissions(means, model);
    const auto baseline = cell_means(means);
    const TransitionModel transitions(grid, model);

    std::vector<std::vector<std::size_t>> nbrs(cells);
    std::vector<std::vector<double>> log_trans(cells);
    for (std::size_t c = 0; c < cells; ++c) {
        nbrs[c] = grid.neighbours(c);
        for (std::size_t b : nbrs[c]) log_trans[c].push_back(transitions.log_prob(b, c));
    }

    std::vector<double> score = emissions[0];
    std::vector<double> next(cells);
    std::vector<std::vector<std::size_t>> back(T, std::vector<std::size_t>(cells, 0));
    for (std::size_t t = 1; t < T; ++t) {
        for (std::size_t c = 0; c < cells; ++c) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t arg = nbrs[c].front();
            for (std::size_t k = 0; k < nbrs[c].size(); ++k) {
                const double s = score[nbrs[c][k]] + log_trans[c][k];
                if (s > best) {
                    best = s;
                    arg = nbrs[c][k];
                }
            }
            next[c] = best + emissions[t][c];
            back[t][c] = arg;
        }
        score.swap(next);
    }

    std::vector<MotionDirection> out;
    out.reserve(cells);
    for (std::size_t c = 0; c < cells; ++c) {
        std::vector<std::size_t> path(T);
        path[T - 1] = c;
        for (std::size_t t = T - 1; t > 0; --t) path[t - 1] = back[t][path[t]];
        out.push_back(detail::make_direction(std::move(path), means, baseline, score[c]));
    }
    return out;
}

/// |sum_t (s[t] - mean(s)) e^{-j 2 pi f t / fs}|
inline double dtft_amplitude(std::span<const double> series, double sample_rate, double frequency) {
    if (series.size() < 2) throw std::invalid_argument("dtft_amplitude: need at least 2 samples");
    if (!(sample_rate > 0.0)) throw std::invalid_argument("dtft_amplitude: sample rate must be > 0");
    if (!(frequency > 0.0) || !(frequency < sample_rate / 2.0)) {
        throw std::invalid_argument("dtft_amplitude: frequency " + std::to_string(frequency) +
                                    " Hz outside (0, Nyquist)");
    }
    double mean = 0.0;
    for (double v : series) mean += v;
    mean /= static_cast<double>(series.size());

    const double omega = 2.0 * std::numbers::pi * frequency / sample_rate;
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t t = 0; t < series.size(); ++t) {
        acc += (series[t] - mean) * std::polar(1.0, -omega * static_cast<double>(t));
    }
    return std::abs(acc);
}

struct MdpmConfig {
    std::size_t window_size = 30;
    std::size_t buffer_length = 10;
    std::size_t num_directions = 10;
    double sample_rate = 15.0;
    double band_low = 1.0;
    double band_high = 3.0;
    double frequency_step = 0.1;
    /// Detection threshold as a multiple of the median band peak of the
    /// stationary per-window series.
    double threshold_factor = 4.0;
    /// Amplitudes at or below this never count, whatever the median.
    double min_amplitude = 1e-6;
    HmmModel hmm{};

    void validate() const {
        if (window_size == 0) throw std::invalid_argument("mdpm.window_size must be > 0");
        if (buffer_length < 2) throw std::invalid_argument("mdpm.buffer_length must be >= 2");
        if (num_directions == 0) throw std::invalid_argument("mdpm.num_directions must be >= 1");
        if (!(band_low > 0.0) || !(band_high >= band_low)) {
            throw std::invalid_argument("mdpm band must satisfy 0 < low <= high");
        }
        if (!(band_high < sample_rate / 2.0)) {
            throw std::invalid_argument("mdpm band exceeds Nyquist for sample rate " +
                                        std::to_string(sample_rate));
        }
        if (!(frequency_step > 0.0)) throw std::invalid_argument("mdpm.frequency_step must be > 0");
        if (!(threshold_factor >= 0.0)) throw std::invalid_argument("mdpm.threshold_factor must be >= 0");
        if (!(hmm.sigma_cells > 0.0)) throw std::invalid_argument("mdpm.sigma_cells must be > 0");
    }

    std::vector<double> band() const {
        std::vector<double> out;
        const auto steps = static_cast<std::size_t>(std::floor((band_high - band_low) / frequency_step + 1e-9));
        for (std::size_t k = 0; k <= steps; ++k) {
            out.push_back(std::min(band_high, band_low + static_cast<double>(k) * frequency_step));
        }
        return out;
    }
};

struct SpectralDetection {
    std::size_t window_index = 0;
    double peak_frequency = 0.0;
    double amplitude = 0.0;
    double threshold = 0.0;
    BoundingBox bbox;
};

struct BandPeak {
    double frequency = 0.0;
    double amplitude = 0.0;
};

/// Strongest frequency of the band; ties go to the lowest frequency.
inline BandPeak band_peak(std::span<const double> series, double sample_rate,
                          std::span<const double> band) {
    BandPeak best{band.front(), -1.0};
    for (double f : band) {
        const double a = dtft_amplitude(series, sample_rate, f);
        if (a > best.amplitude) best = {f, a};
    }
    return best;
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median of empty set");
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
    const double upper = v[mid];
    if (v.size() % 2 == 1) return upper;
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<long>(mid));
    return 0.5 * (lower + upper);
}

/// Core of the detector, working on per-frame window means.
inline std::optional<SpectralDetection> detect_from_means(
    const std::vector<std::vector<double>>& means, const SubWindowGrid& grid, std::size_t width,
    std::size_t height, const MdpmConfig& cfg) {
    const auto band = cfg.band();
    auto candidates = viterbi_directions(means, grid, cfg.hmm);

    // Noise floor: median band peak over the stationary series of every window.
    // Candidate paths are a poor reference because most of them route through
    // the target's windows before turning off to their terminal cell.
    std::vector<double> peaks;
    peaks.reserve(grid.cells());
    std::vector<double> series(means.size());
    for (std::size_t c = 0; c < grid.cells(); ++c) {
        for (std::size_t t = 0; t < means.size(); ++t) series[t] = means[t][c];
        peaks.push_back(band_peak(series, cfg.sample_rate, band).amplitude);
    }
    const double threshold = std::max(cfg.threshold_factor * median(peaks), cfg.min_amplitude);

    const auto survivors = hmm_prune(std::move(candidates), cfg.num_directions);

    std::optional<SpectralDetection> best;
    for (const auto& d : survivors) {
        const BandPeak pk = band_peak(d.intensity_series, cfg.sample_rate, band);
        if (!(pk.amplitude > threshold)) continue;
        const bool better = !best || pk.amplitude > best->amplitude ||
                            (pk.amplitude == best->amplitude &&
                             (d.terminal() < best->window_index ||
                              (d.terminal() == best->window_index && pk.frequency < best->peak_frequency)));
        if (better) {
            SpectralDetection det;
            det.window_index = d.terminal();
            det.peak_frequency = pk.frequency;
            det.amplitude = pk.amplitude;
            det.threshold = threshold;
            det.bbox = grid.cell_box(d.terminal(), width, height);
            best = det;
        }
    }
    if (best) best->bbox.p = std::clamp(1.0 - best->threshold / best->amplitude, 0.0, 1.0);
    return best;
}

/// Runs the tracker on the last `buffer_length` frames of `buffer`.
inline std::optional<SpectralDetection> detect_periodic_target(std::span<const IntensityGrid> buffer,
                                                               const MdpmConfig& cfg = {}) {
    cfg.validate();
    if (buffer.size() < cfg.buffer_length) {
        throw DataError("mdpm: buffer holds " + std::to_string(buffer.size()) + " frames, need " +
                        std::to_string(cfg.buffer_length));
    }
    const auto window = buffer.subspan(buffer.size() - cfg.buffer_length);
    const auto grid = SubWindowGrid::for_frame(window.front().width, window.front().height, cfg.window_size);
    detail::require_grid(grid);
    const auto means = buffer_means(window, grid);
    return detect_from_means(means, grid, window.front().width, window.front().height, cfg);
}

/// Streaming form: frames are appended one at a time and a detection is
/// attempted once the buffer is full. Single writer.
class MdpmTracker {
public:
    explicit MdpmTracker(MdpmConfig cfg = {}) : cfg_(std::move(cfg)) { cfg_.validate(); }

    std::optional<SpectralDetection> push(const IntensityGrid& frame) {
        if (means_.empty()) {
            width_ = frame.width;
            height_ = frame.height;
            grid_ = SubWindowGrid::for_frame(width_, height_, cfg_.window_size);
            detail::require_grid(grid_);
        } else if (frame.width != width_ || frame.height != height_) {
            throw DataError("mdpm: frame size changed mid-stream");
        }
        if (!frame.consistent()) throw DataError("mdpm: frame sample count mismatch");
        means_.push_back(window_means(frame, grid_));
        if (means_.size() > cfg_.buffer_length) means_.pop_front();
        if (means_.size() < cfg_.buffer_length) return std::nullopt;
        const std::vector<std::vector<double>> window(means_.begin(), means_.end());
        return detect_from_means(window, grid_, width_, height_, cfg_);
    }

    bool ready() const { return means_.size() == cfg_.buffer_length; }
    const MdpmConfig& config() const { return cfg_; }

private:
    MdpmConfig cfg_;
    SubWindowGrid grid_{};
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::deque<std::vector<double>> means_;
};

}  // namespace convoy::mdpm
