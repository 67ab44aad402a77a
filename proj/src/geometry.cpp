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

#include "oln/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "oln/error.hpp"

namespace oln {

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
         x2 > x1 && y2 > y1;
}

int AnchorGrid::level_of(std::size_t anchor) const {
  auto it = std::upper_bound(level_offsets.begin(), level_offsets.end(), anchor);
  return static_cast<int>(it - level_offsets.begin()) - 1;
}

double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

double iou(const Box& a, const Box& b) {
  if (a == b) return 1.0;
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

double dice(const Box& a, const Box& b) {
  if (a == b) return 1.0;
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  return 2.0 * inter / (a.area() + b.area());
}

double centerness(const Point& p, const Box& gt) {
  const double l = p.x - gt.x1;
  const double r = gt.x2 - p.x;
  const double t = p.y - gt.y1;
  const double b = gt.y2 - p.y;
  if (l <= 0.0 || r <= 0.0 || t <= 0.0 || b <= 0.0) return 0.0;
  const double horizontal = std::min(l, r) / std::max(l, r);
  const double vertical = std::min(t, b) / std::max(t, b);
  return std::sqrt(horizontal * vertical);
}

std::optional<LRTB> encode_lrtb(const Point& p, const Box& box) {
  LRTB d{p.x - box.x1, box.x2 - p.x, p.y - box.y1, box.y2 - p.y};
  if (d.l < 0.0 || d.r < 0.0 || d.t < 0.0 || d.b < 0.0) return std::nullopt;
  return d;
}

Box decode_lrtb(const Point& p, const LRTB& d) {
  return Box{p.x - d.l, p.y - d.t, p.x + d.r, p.y + d.b};
}

BoxDelta encode_delta(const Box& ref, const Box& target) {
  return BoxDelta{
      (target.center_x() - ref.center_x()) / ref.width() / kDeltaStds[0],
      (target.center_y() - ref.center_y()) / ref.height() / kDeltaStds[1],
      std::log(target.width() / ref.width()) / kDeltaStds[2],
      std::log(target.height() / ref.height()) / kDeltaStds[3],
  };
}

Box decode_delta(const Box& ref, const BoxDelta& delta) {
  // exp(4.135) == 1000/16, the usual guard against exploding sizes.
  constexpr double kMaxLogScale = 4.135166556742356;
  const double cx = ref.center_x() + delta.dx * kDeltaStds[0] * ref.width();
  const double cy = ref.center_y() + delta.dy * kDeltaStds[1] * ref.height();
  const double w = ref.width() * std::exp(std::min(delta.dw * kDeltaStds[2], kMaxLogScale));
  const double h = ref.height() * std::exp(std::min(delta.dh * kDeltaStds[3], kMaxLogScale));
  return Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

Box clip(const Box& box, double width, double height) {
  return Box{std::clamp(box.x1, 0.0, width), std::clamp(box.y1, 0.0, height),
             std::clamp(box.x2, 0.0, width), std::clamp(box.y2, 0.0, height)};
}

std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores,
                             double iou_threshold) {
  if (boxes.size() != scores.size()) {
    throw InputError("nms: " + std::to_string(boxes.size()) + " boxes but " +
                     std::to_string(scores.size()) + " scores");
  }
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<std::size_t> kept;
  std::vector<char> suppressed(boxes.size(), 0);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!suppressed[j] && iou(boxes[i], boxes[j]) > iou_threshold) suppressed[j] = 1;
    }
  }
  return kept;
}

AnchorGrid build_anchor_grid(int image_width, int image_height, std::span<const int> strides,
                             double anchor_scale) {
  if (image_width <= 0 || image_height <= 0) {
    throw ConfigError("anchor grid: image size must be positive");
  }
  if (strides.empty()) throw ConfigError("anchor grid: at least one stride is required");
  if (!(anchor_scale > 0.0)) throw ConfigError("anchor grid: anchor scale must be positive");

  AnchorGrid grid;
  for (int stride : strides) {
    if (stride <= 0) {
      throw ConfigError("anchor grid: stride must be positive, got " + std::to_string(stride));
    }
    AnchorLevel level;
    level.stride = stride;
    level.cols = (image_width + stride - 1) / stride;
    level.rows = (image_height + stride - 1) / stride;
    level.anchor_size = anchor_scale * stride;
    grid.level_offsets.push_back(grid.centers.size());
    const double half = 0.5 * level.anchor_size;
    for (int row = 0; row < level.rows; ++row) {
      for (int col = 0; col < level.cols; ++col) {
        const Point c{0.5 * stride + col * stride, 0.5 * stride + row * stride};
        grid.centers.push_back(c);
        grid.boxes.push_back(Box{c.x - half, c.y - half, c.x + half, c.y + half});
      }
    }
    grid.levels.push_back(level);
  }
  return grid;
}

}  // namespace oln
