#pragma once

// Reference detector training objectives: the per-image VGG regression/
// classification loss and the recurrent single-box YOLO-style objective,
// with closed-form gradients and a central-difference checker.

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "convoy/core.hpp"

namespace convoy {

/// Weights of the recurrent objective: coordinate, object and no-object terms.
struct LossWeights {
    double alpha_coord = 5.0;
    double alpha_obj = 1.0;
    double alpha_no_obj = 0.5;

    bool valid() const {
        auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
        return ok(alpha_coord) && ok(alpha_obj) && ok(alpha_no_obj);
    }
};

/// z = (x, y, w, h, p)
using PredictionVector = std::array<double, 5>;

inline PredictionVector to_vector(const BoundingBox& b) { return {b.x, b.y, b.w, b.h, b.p}; }
inline BoundingBox to_box(const PredictionVector& z) { return {z[0], z[1], z[2], z[3], z[4]}; }

inline constexpr double kLogClamp = 1e-7;

namespace detail {

inline void require_finite(const PredictionVector& z, const char* what) {
    for (double v : z) {
        if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite input");
    }
}

inline void require_truth(const Annotation& truth) {
    if (!is_consistent(truth)) throw std::invalid_argument("loss: inconsistent annotation");
}

inline double clamp_prob(double p) { return std::clamp(p, kLogClamp, 1.0 - kLogClamp); }

// d IOU(pred, truth) / d(x, y, w, h). Piecewise; undefined on the kinks where an
// edge of one box meets an edge of the other.
inline std::array<double, 4> iou_gradient(const BoundingBox& a, const BoundingBox& b) {
    const double ax2 = a.x + a.w, bx2 = b.x + b.w;
    const double ay2 = a.y + a.h, by2 = b.y + b.h;
    const double ix = std::min(ax2, bx2) - std::max(a.x, b.x);
    const double iy = std::min(ay2, by2) - std::max(a.y, b.y);
    if (ix <= 0.0 || iy <= 0.0) return {0.0, 0.0, 0.0, 0.0};

    const double inter = ix * iy;
    const double uni = a.w * a.h + b.w * b.h - inter;
    if (uni <= 0.0) return {0.0, 0.0, 0.0, 0.0};

    const double right_inside = ax2 < bx2 ? 1.0 : 0.0;
    const double left_inside = a.x > b.x ? 1.0 : 0.0;
    const double bottom_inside = ay2 < by2 ? 1.0 : 0.0;
    const double top_inside = a.y > b.y ? 1.0 : 0.0;

    const double dix_dx = right_inside - left_inside;
    const double dix_dw = right_inside;
    const double diy_dy = bottom_inside - top_inside;
    const double diy_dh = bottom_inside;

    const std::array<double, 4> d_inter = {dix_dx * iy, diy_dy * ix, dix_dw * iy, diy_dh * ix};
    const std::array<double, 4> d_area = {0.0, 0.0, a.h, a.w};

    std::array<double, 4> g{};
    for (std::size_t i = 0; i < 4; ++i) {
        const double d_uni = d_area[i] - d_inter[i];
        g[i] = (d_inter[i] * uni - inter * d_uni) / (uni * uni);
    }
    return g;
}

}  // namespace detail

/// L1 box regression on positive frames plus binary cross-entropy on the
/// confidence. The log is clamped to [1e-7, 1-1e-7] except when p matches the
/// label exactly, in which case the cross-entropy term is exactly zero.
inline double vgg_loss(const PredictionVector& z, const Annotation& truth) {
    detail::require_finite(z, "vgg_loss");
    detail::require_truth(truth);

    const double label = truth.present ? 1.0 : 0.0;
    double regression = 0.0;
    if (truth.present) {
        const PredictionVector t = to_vector(*truth.truth_box);
        for (std::size_t i = 0; i < 4; ++i) regression += std::abs(z[i] - t[i]);
    }

    const double p = z[4];
    double bce = 0.0;
    if (p != label) {
        const double pc = detail::clamp_prob(p);
        bce = truth.present ? -std::log(pc) : -std::log(1.0 - pc);
    }
    return regression + bce;
}

inline PredictionVector vgg_loss_gradient(const PredictionVector& z, const Annotation& truth) {
    detail::require_finite(z, "vgg_loss_gradient");
    detail::require_truth(truth);

    PredictionVector g{};
    if (truth.present) {
        const PredictionVector t = to_vector(*truth.truth_box);
        for (std::size_t i = 0; i < 4; ++i) {
            const double d = z[i] - t[i];
            g[i] = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        }
    }
    const double p = z[4];
    const double label = truth.present ? 1.0 : 0.0;
    if (p != label && p > kLogClamp && p < 1.0 - kLogClamp) {
        g[4] = truth.present ? -1.0 / p : 1.0 / (1.0 - p);
    }
    return g;
}

/// Recurrent single-box objective. IOU is taken against the truth box when the
/// object is present and is 0 otherwise, so an empty frame costs
/// alpha_no_obj * p^2.
inline double rrolo_loss(const PredictionVector& z, const Annotation& truth,
                         const LossWeights& w = {}) {
    detail::require_finite(z, "rrolo_loss");
    detail::require_truth(truth);
    if (!w.valid()) throw std::invalid_argument("rrolo_loss: weights must be finite and >= 0");
    for (std::size_t i = 0; i < 4; ++i) {
        if (z[i] < 0.0) throw std::invalid_argument("rrolo_loss: negative box coordinate");
    }

    const double p = z[4];
    if (!truth.present) {
        const double r = 0.0 - p;
        return w.alpha_no_obj * r * r;
    }

    const PredictionVector t = to_vector(*truth.truth_box);
    auto sq = [](double a, double b) {
        const double d = std::sqrt(a) - std::sqrt(b);
        return d * d;
    };
    const double position = sq(t[0], z[0]) + sq(t[1], z[1]);
    const double size = sq(t[2], z[2]) + sq(t[3], z[3]);
    const double overlap = iou(to_box(z), *truth.truth_box);
    const double r = overlap - p;
    return w.alpha_coord * position + w.alpha_coord * size + w.alpha_obj * r * r;
}

inline PredictionVector rrolo_loss_gradient(const PredictionVector& z, const Annotation& truth,
                                            const LossWeights& w = {}) {
    detail::require_finite(z, "rrolo_loss_gradient");
    detail::require_truth(truth);

    PredictionVector g{};
    const double p = z[4];
    if (!truth.present) {
        g[4] = 2.0 * w.alpha_no_obj * p;
        return g;
    }

    const PredictionVector t = to_vector(*truth.truth_box);
    for (std::size_t i = 0; i < 4; ++i) {
        if (z[i] <= 0.0) throw std::invalid_argument("rrolo_loss_gradient: coordinate on sqrt kink");
        g[i] = -w.alpha_coord * (std::sqrt(t[i]) - std::sqrt(z[i])) / std::sqrt(z[i]);
    }
    const BoundingBox pred = to_box(z);
    const double r = iou(pred, *truth.truth_box) - p;
    const auto d_iou = detail::iou_gradient(pred, *truth.truth_box);
    for (std::size_t i = 0; i < 4; ++i) g[i] += 2.0 * w.alpha_obj * r * d_iou[i];
    g[4] = -2.0 * w.alpha_obj * r;
    return g;
}

/// Arithmetic mean of a per-sample loss over a batch.
template <class Loss>
double mean_loss(std::span<const PredictionVector> preds, std::span<const Annotation> truths,
                 Loss&& loss) {
    if (preds.size() != truths.size() || preds.empty()) {
        throw std::invalid_argument("mean_loss: batch sizes differ or batch is empty");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) sum += loss(preds[i], truths[i]);
    return sum / static_cast<double>(preds.size());
}

/// Central-difference gradient of f at `point`.
template <class F>
std::vector<double> numeric_gradient(F&& f, std::span<const double> point, double step) {
    if (!(step > 0.0) || !std::isfinite(step)) {
        throw std::invalid_argument("numeric_gradient: step must be positive");
    }
    std::vector<double> x(point.begin(), point.end());
    std::vector<double> grad(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + step;
        const double hi = f(std::span<const double>(x));
        x[i] = orig - step;
        const double lo = f(std::span<const double>(x));
        x[i] = orig;
        if (!std::isfinite(hi) || !std::isfinite(lo)) {
            throw std::domain_error("numeric_gradient: non-finite evaluation at component " +
                                    std::to_string(i));
        }
        grad[i] = (hi - lo) / (2.0 * step);
    }
    return grad;
}

}  // namespace convoy
