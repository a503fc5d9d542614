#pragma once

// Geometry and detection primitives shared by the rest of the library.
// All coordinates are normalized to the image: (0,0) is the top-left corner,
// (1,1) the bottom-right.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace convoy {

/// Raised for malformed or out-of-range input data. The message names the
/// offending field or line.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Top-left + size box in normalized image coordinates, plus a confidence.
struct BoundingBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;
    double p = 1.0;

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

namespace detail {
inline constexpr double kBoxSlack = 1e-9;

inline bool unit(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }
}  // namespace detail

/// Checks 0 <= x,y,w,h,p <= 1 and that the box lies inside the image.
/// A tiny slack absorbs round-off in x + w.
inline bool is_valid(const BoundingBox& b) {
    using detail::unit;
    return unit(b.x) && unit(b.y) && unit(b.w) && unit(b.h) && unit(b.p) &&
           b.x + b.w <= 1.0 + detail::kBoxSlack && b.y + b.h <= 1.0 + detail::kBoxSlack;
}

/// Throws DataError naming `what` if the box violates its invariants.
inline void require_valid(const BoundingBox& b, const std::string& what = "box") {
    if (!is_valid(b)) {
        throw DataError(what + ": box (" + std::to_string(b.x) + ", " + std::to_string(b.y) +
                        ", " + std::to_string(b.w) + ", " + std::to_string(b.h) + ", p=" +
                        std::to_string(b.p) + ") is outside the unit image");
    }
}

inline double box_area(const BoundingBox& b) { return b.w * b.h; }

inline std::pair<double, double> box_center(const BoundingBox& b) {
    return {b.x + 0.5 * b.w, b.y + 0.5 * b.h};
}

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
    const double ix = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
    const double iy = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
    if (ix <= 0.0 || iy <= 0.0) return 0.0;
    return ix * iy;
}

/// Intersection over union on continuous boxes. Zero when the union is empty.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
    // Areas from corners, like the intersection, so identical boxes give exactly 1.
    auto corner_area = [](const BoundingBox& r) { return ((r.x + r.w) - r.x) * ((r.y + r.h) - r.y); };
    const double inter = intersection_area(a, b);
    const double uni = corner_area(a) + corner_area(b) - inter;
    if (uni <= 0.0) return 0.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

/// Ground truth for one frame. `truth_box` is set iff `present`.
struct Annotation {
    std::size_t frame_index = 0;
    bool present = false;
    std::optional<BoundingBox> truth_box;

    static Annotation absent(std::size_t frame) { return {frame, false, std::nullopt}; }
    static Annotation with_box(std::size_t frame, BoundingBox box) {
        box.p = 1.0;
        return {frame, true, box};
    }

    friend bool operator==(const Annotation&, const Annotation&) = default;
};

inline bool is_consistent(const Annotation& a) {
    return a.present == a.truth_box.has_value() && (!a.truth_box || is_valid(*a.truth_box));
}

/// Row-major grayscale frame with samples in [0,1].
struct IntensityGrid {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> samples;
    double timestamp = 0.0;

    IntensityGrid() = default;
    IntensityGrid(std::size_t w, std::size_t h, double fill = 0.0, double t = 0.0)
        : width(w), height(h), samples(w * h, fill), timestamp(t) {}

    double& at(std::size_t col, std::size_t row) { return samples[row * width + col]; }
    double at(std::size_t col, std::size_t row) const { return samples[row * width + col]; }

    bool consistent() const { return samples.size() == width * height; }

    friend bool operator==(const IntensityGrid&, const IntensityGrid&) = default;
};

}  // namespace convoy
