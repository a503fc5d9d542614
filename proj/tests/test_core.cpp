#include <gtest/gtest.h>

#include <random>

#include "convoy/core.hpp"
#include "oracles.hpp"

using namespace convoy;

TEST(Iou, OverlappingSquares) {
    const BoundingBox a{0, 0, 0.4, 0.4}, b{0.2, 0.2, 0.4, 0.4};
    EXPECT_NEAR(iou(a, b), 0.04 / 0.28, 1e-12);
    EXPECT_NEAR(oracle::pixel_iou(a, b), 0.04 / 0.28, 5e-3);
}

TEST(Iou, IdenticalAndDisjoint) {
    const BoundingBox a{0.1, 0.2, 0.3, 0.4};
    EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
    EXPECT_EQ(iou(a, {0.5, 0.7, 0.2, 0.2}), 0.0);
    // touching edges share no area
    EXPECT_EQ(iou({0, 0, 0.5, 0.5}, {0.5, 0, 0.5, 0.5}), 0.0);
}

TEST(Iou, DegenerateUnionIsZero) {
    EXPECT_EQ(iou({0.3, 0.3, 0, 0}, {0.3, 0.3, 0, 0}), 0.0);
}

TEST(Iou, ContainedBox) {
    EXPECT_NEAR(iou({0, 0, 1, 1}, {0.25, 0.25, 0.5, 0.5}), 0.25, 1e-12);
}

TEST(Iou, PropertiesOnRandomPairs) {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 2000; ++i) {
        const auto a = oracle::random_box(rng), b = oracle::random_box(rng);
        const double v = iou(a, b);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        EXPECT_DOUBLE_EQ(v, iou(b, a));
        EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
    }
}

TEST(Iou, MatchesPixelGrid) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
        const auto a = oracle::random_box(rng), b = oracle::random_box(rng);
        EXPECT_NEAR(iou(a, b), oracle::pixel_iou(a, b), 5e-3);
    }
}

// the per-axis count agrees with the pixel-by-pixel one
TEST(Oracle, SeparableCountEqualsNested) {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 20; ++i) {
        const auto a = oracle::random_box(rng), b = oracle::random_box(rng);
        EXPECT_DOUBLE_EQ(oracle::pixel_iou(a, b, 300), oracle::pixel_iou_nested(a, b, 300));
    }
}

TEST(Box, AreaAndCenter) {
    EXPECT_NEAR(box_area({0.2, 0.2, 0.5, 0.4}), 0.2, 1e-15);
    auto [cx, cy] = box_center({0, 0, 0.2, 0.4});
    EXPECT_NEAR(cx, 0.1, 1e-15);
    EXPECT_NEAR(cy, 0.2, 1e-15);
    std::tie(cx, cy) = box_center({0.8, 0.0, 0.2, 0.2});
    EXPECT_NEAR(cx, 0.9, 1e-15);
    EXPECT_NEAR(cy, 0.1, 1e-15);
}

TEST(Box, Validity) {
    EXPECT_TRUE(is_valid({0, 0, 1, 1}));
    EXPECT_TRUE(is_valid({0.7, 0.7, 0.3, 0.3}));  // round-off in x + w
    EXPECT_FALSE(is_valid({0.9, 0.9, 0.3, 0.3}));
    EXPECT_FALSE(is_valid({-0.1, 0, 0.2, 0.2}));
    EXPECT_FALSE(is_valid({0, 0, 0.2, 0.2, 1.5}));
    EXPECT_FALSE(is_valid({0, 0, std::nan(""), 0.2}));
    EXPECT_THROW(require_valid({0.9, 0.9, 0.3, 0.3}, "row 3"), DataError);
}

TEST(Annotation, Consistency) {
    EXPECT_TRUE(is_consistent(Annotation::absent(0)));
    EXPECT_TRUE(is_consistent(Annotation::with_box(1, {0.1, 0.1, 0.2, 0.2})));
    EXPECT_FALSE(is_consistent(Annotation{2, true, std::nullopt}));
    EXPECT_FALSE(is_consistent(Annotation{3, false, BoundingBox{0.1, 0.1, 0.2, 0.2}}));
    EXPECT_FALSE(is_consistent(Annotation::with_box(4, {0.9, 0.9, 0.3, 0.3})));
}

TEST(IntensityGrid, Indexing) {
    IntensityGrid g(4, 3, 0.25);
    EXPECT_TRUE(g.consistent());
    g.at(3, 2) = 0.75;
    EXPECT_EQ(g.samples.back(), 0.75);
    EXPECT_EQ(g.at(0, 0), 0.25);
}
