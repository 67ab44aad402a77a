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

#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace oln {

/// Axis-aligned box in continuous image coordinates. A valid box has
/// x2 > x1 and y2 > y1.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  double long_side() const { return width() > height() ? width() : height(); }
  bool valid() const;

  friend bool operator==(const Box&, const Box&) = default;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Distances from a reference location to the left, right, top and bottom
/// sides of a box.
struct LRTB {
  double l = 0.0;
  double r = 0.0;
  double t = 0.0;
  double b = 0.0;
};

/// Center/size regression deltas used by the second stage.
struct BoxDelta {
  double dx = 0.0;
  double dy = 0.0;
  double dw = 0.0;
  double dh = 0.0;
};

struct AnchorLevel {
  int stride = 0;
  int cols = 0;
  int rows = 0;
  double anchor_size = 0.0;
};

/// One square anchor per feature location, levels stored back to back in
/// row-major order.
struct AnchorGrid {
  std::vector<AnchorLevel> levels;
  std::vector<Point> centers;
  std::vector<Box> boxes;
  /// Index of the first anchor of each level in `centers` / `boxes`.
  std::vector<std::size_t> level_offsets;

  std::size_t size() const { return boxes.size(); }
  int level_of(std::size_t anchor) const;
};

double intersection_area(const Box& a, const Box& b);
double iou(const Box& a, const Box& b);
double dice(const Box& a, const Box& b);

/// sqrt(min(l,r)/max(l,r) * min(t,b)/max(t,b)); zero for locations on or
/// outside the box border.
double centerness(const Point& location, const Box& gt);

/// Empty when the location lies outside the box.
std::optional<LRTB> encode_lrtb(const Point& location, const Box& box);
Box decode_lrtb(const Point& location, const LRTB& d);

inline constexpr std::array<double, 4> kDeltaStds = {0.1, 0.1, 0.2, 0.2};

BoxDelta encode_delta(const Box& reference, const Box& target);
Box decode_delta(const Box& reference, const BoxDelta& delta);

Box clip(const Box& box, double width, double height);

/// Greedy suppression. Returns kept indices in descending score order; equal
/// scores keep input order. A box is dropped when its IoU with an already
/// kept box exceeds `iou_threshold`.
std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores,
                             double iou_threshold);

/// Throws ConfigError for non-positive strides or anchor scale.
AnchorGrid build_anchor_grid(int image_width, int image_height, std::span<const int> strides,
                             double anchor_scale);

}  // namespace oln
