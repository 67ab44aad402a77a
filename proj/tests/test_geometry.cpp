/*
 * Copyright 2026 The OLN Proposals Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oln/error.hpp"
#include "oln/geometry.hpp"
#include "oracles.hpp"

using namespace oln;

TEST(Iou, IdenticalAndDisjoint) {
  const Box a{0, 0, 10, 10};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, Box{20, 20, 30, 30}), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, Box{10, 0, 20, 10}), 0.0);  // touching edges
}

TEST(Iou, HalfOverlap) {
  // 50 / 150
  EXPECT_DOUBLE_EQ(iou(Box{0, 0, 10, 10}, Box{5, 0, 15, 10}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(dice(Box{0, 0, 10, 10}, Box{5, 0, 15, 10}), 0.5);
}

TEST(Iou, MatchesPixelGrid) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 500; ++i) {
    const Box a = oracle::random_int_box(rng, 20), b = oracle::random_int_box(rng, 20);
    EXPECT_NEAR(iou(a, b), oracle::grid_iou(a, b, 20), 1e-12);
  }
}

TEST(Centerness, CenterIsOneBorderIsZero) {
  const Box g{0, 0, 20, 10};
  EXPECT_DOUBLE_EQ(centerness({10, 5}, g), 1.0);
  EXPECT_DOUBLE_EQ(centerness({0, 5}, g), 0.0);
  EXPECT_DOUBLE_EQ(centerness({30, 5}, g), 0.0);
  // l=5 r=15 t=5 b=5 -> sqrt(1/3)
  EXPECT_NEAR(centerness({5, 5}, g), std::sqrt(1.0 / 3.0), 1e-12);
}

TEST(Lrtb, OutsideHasNoEncoding) {
  EXPECT_FALSE(encode_lrtb({-1, 5}, Box{0, 0, 10, 10}).has_value());
  const auto e = encode_lrtb({2, 3}, Box{0, 0, 10, 10});
  ASSERT_TRUE(e.has_value());
  EXPECT_DOUBLE_EQ(e->l, 2);
  EXPECT_DOUBLE_EQ(e->r, 8);
  EXPECT_DOUBLE_EQ(e->t, 3);
  EXPECT_DOUBLE_EQ(e->b, 7);
}

TEST(Delta, RoundTrip) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Box r = oracle::random_box(rng), g = oracle::random_box(rng);
    const Box d = decode_delta(r, encode_delta(r, g));
    EXPECT_NEAR(d.x1, g.x1, 1e-9);
    EXPECT_NEAR(d.y1, g.y1, 1e-9);
    EXPECT_NEAR(d.x2, g.x2, 1e-9);
    EXPECT_NEAR(d.y2, g.y2, 1e-9);
  }
}

TEST(Delta, IdentityIsZero) {
  const BoxDelta d = encode_delta(Box{1, 2, 11, 22}, Box{1, 2, 11, 22});
  EXPECT_DOUBLE_EQ(d.dx, 0.0);
  EXPECT_DOUBLE_EQ(d.dy, 0.0);
  EXPECT_DOUBLE_EQ(d.dw, 0.0);
  EXPECT_DOUBLE_EQ(d.dh, 0.0);
}

TEST(Clip, ClampsToImage) {
  const Box c = clip(Box{-5, -5, 50, 20}, 40, 30);
  EXPECT_EQ(c, (Box{0, 0, 40, 20}));
}

TEST(Nms, TiesKeepInputOrder) {
  const std::vector<Box> boxes = {{0, 0, 10, 10}, {0, 0, 10, 10}, {50, 50, 60, 60}};
  const std::vector<double> scores = {0.5, 0.5, 0.4};
  EXPECT_EQ(nms(boxes, scores, 0.5), (std::vector<std::size_t>{0, 2}));
}

TEST(Nms, ThresholdIsStrict) {
  // IoU exactly 1/3 is kept at threshold 1/3.
  const std::vector<Box> boxes = {{0, 0, 10, 10}, {5, 0, 15, 10}};
  const std::vector<double> scores = {0.9, 0.8};
  EXPECT_EQ(nms(boxes, scores, 1.0 / 3.0).size(), 2u);
  EXPECT_EQ(nms(boxes, scores, 0.3).size(), 1u);
}

TEST(Nms, MatchesOracle) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 2000; ++i) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (int j = 0; j < 15; ++j) {
      boxes.push_back(oracle::random_box(rng, 30.0));
      scores.push_back(std::round(u(rng) * 8) / 8);  // many ties
    }
    EXPECT_EQ(nms(boxes, scores, 0.5), oracle::nms(boxes, scores, 0.5));
  }
}

TEST(AnchorGrid, LayoutAndSizes) {
  const std::vector<int> strides = {8, 16};
  const AnchorGrid g = build_anchor_grid(64, 48, strides, 2.0);
  ASSERT_EQ(g.levels.size(), 2u);
  EXPECT_EQ(g.levels[0].cols, 8);
  EXPECT_EQ(g.levels[0].rows, 6);
  EXPECT_EQ(g.levels[1].cols, 4);
  EXPECT_EQ(g.levels[1].rows, 3);
  EXPECT_EQ(g.size(), 48u + 12u);
  EXPECT_EQ(g.level_offsets[1], 48u);
  EXPECT_DOUBLE_EQ(g.centers[0].x, 4.0);
  EXPECT_DOUBLE_EQ(g.boxes[0].width(), 16.0);
  EXPECT_DOUBLE_EQ(g.boxes[48].width(), 32.0);
  EXPECT_EQ(g.level_of(47), 0);
  EXPECT_EQ(g.level_of(48), 1);
}

TEST(AnchorGrid, RejectsBadStride) {
  const std::vector<int> bad = {0};
  EXPECT_THROW(build_anchor_grid(32, 32, bad, 2.0), ConfigError);
  const std::vector<int> ok = {8};
  EXPECT_THROW(build_anchor_grid(32, 32, ok, 0.0), ConfigError);
}

TEST(Properties, RandomizedSuite) {
  for (const auto& r : oracle::geometry_properties(10000, 2024)) {
    EXPECT_EQ(r.failures, 0) << r.name;
  }
}
