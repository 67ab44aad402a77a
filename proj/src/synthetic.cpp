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

#include "oln/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <optional>
#include <random>

#include "oln/error.hpp"
#include "oln/json_util.hpp"

namespace oln {

using nlohmann::json;
namespace ju = json_util;

const char* to_string(Shape s) {
  switch (s) {
    case Shape::kSquare: return "square";
    case Shape::kCircle: return "circle";
    case Shape::kTriangle: return "triangle";
    case Shape::kStar: return "star";
    case Shape::kRing: return "ring";
    case Shape::kCapsule: return "capsule";
  }
  return "square";
}

Shape shape_from_string(const std::string& s) {
  for (Shape k : {Shape::kSquare, Shape::kCircle, Shape::kTriangle, Shape::kStar, Shape::kRing, Shape::kCapsule}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown shape '" + s + "'");
}

int category_id(Shape s) { return static_cast<int>(s) + 1; }

void SceneSpec::validate() const {
  if (width <= 0 || height <= 0) throw ConfigError("scene: image size must be positive");
  if (min_objects < 0 || max_objects < min_objects) throw ConfigError("scene: bad object count range");
  if (!(min_size > 0.0) || max_size < min_size) throw ConfigError("scene: bad object size range");
  if (!(overlap_cap >= 0.0 && overlap_cap < 1.0)) throw ConfigError("scene: overlap_cap must be in [0, 1)");
  if (!(min_visible_fraction >= 0.0 && min_visible_fraction <= 1.0)) {
    throw ConfigError("scene: min_visible_fraction must be in [0, 1]");
  }
  if (!(seen_probability >= 0.0 && seen_probability <= 1.0)) throw ConfigError("scene: seen_probability must be in [0, 1]");
  if (max_placement_attempts <= 0) throw ConfigError("scene: max_placement_attempts must be positive");
  if (texture_cells <= 0) throw ConfigError("scene: texture_cells must be positive");
  for (Shape a : seen) {
    for (Shape b : unseen) {
      if (a == b) throw ConfigError(std::string("scene: shape '") + to_string(a) + "' is both seen and unseen");
    }
  }
  if (seen.empty() && unseen.empty()) throw ConfigError("scene: empty shape palette");
}

json to_json(const SceneSpec& s) {
  std::vector<std::string> seen;
  std::vector<std::string> unseen;
  for (Shape k : s.seen) seen.emplace_back(to_string(k));
  for (Shape k : s.unseen) unseen.emplace_back(to_string(k));
  return {{"width", s.width},
          {"height", s.height},
          {"min_objects", s.min_objects},
          {"max_objects", s.max_objects},
          {"min_size", s.min_size},
          {"max_size", s.max_size},
          {"overlap_cap", s.overlap_cap},
          {"min_visible_fraction", s.min_visible_fraction},
          {"max_placement_attempts", s.max_placement_attempts},
          {"seen", seen},
          {"unseen", unseen},
          {"seen_probability", s.seen_probability},
          {"texture_cells", s.texture_cells},
          {"texture_contrast", s.texture_contrast},
          {"pixel_noise", s.pixel_noise},
          {"seed", s.seed}};
}

SceneSpec scene_spec_from_json(const json& j, const std::string& path) {
  ju::reject_unknown(j,
                     {"width", "height", "min_objects", "max_objects", "min_size", "max_size", "overlap_cap",
                      "min_visible_fraction", "max_placement_attempts", "seen", "unseen", "seen_probability",
                      "texture_cells", "texture_contrast", "pixel_noise", "seed"},
                     path);
  SceneSpec s;
  ju::get_optional(j, "width", path, s.width);
  ju::get_optional(j, "height", path, s.height);
  ju::get_optional(j, "min_objects", path, s.min_objects);
  ju::get_optional(j, "max_objects", path, s.max_objects);
  ju::get_optional(j, "min_size", path, s.min_size);
  ju::get_optional(j, "max_size", path, s.max_size);
  ju::get_optional(j, "overlap_cap", path, s.overlap_cap);
  ju::get_optional(j, "min_visible_fraction", path, s.min_visible_fraction);
  ju::get_optional(j, "max_placement_attempts", path, s.max_placement_attempts);
  ju::get_optional(j, "seen_probability", path, s.seen_probability);
  ju::get_optional(j, "texture_cells", path, s.texture_cells);
  ju::get_optional(j, "texture_contrast", path, s.texture_contrast);
  ju::get_optional(j, "pixel_noise", path, s.pixel_noise);
  ju::get_optional(j, "seed", path, s.seed);
  auto palette = [&](const char* key, std::vector<Shape>& out) {
    if (!j.contains(key)) return;
    const std::string p = ju::child(path, key);
    ju::expect_array(j[key], p);
    out.clear();
    for (std::size_t i = 0; i < j[key].size(); ++i) {
      try {
        out.push_back(shape_from_string(ju::as<std::string>(j[key][i], ju::index(p, i))));
      } catch (const ConfigError& e) {
        throw ParseError(ju::index(p, i), e.what());
      }
    }
  };
  palette("seen", s.seen);
  palette("unseen", s.unseen);
  return s;
}

std::vector<Category> scene_categories(const SceneSpec& spec) {
  std::vector<Category> out;
  for (Shape k : spec.seen) out.push_back({category_id(k), to_string(k), true});
  for (Shape k : spec.unseen) out.push_back({category_id(k), to_string(k), false});
  std::sort(out.begin(), out.end(), [](const Category& a, const Category& b) { return a.id < b.id; });
  return out;
}

namespace {

struct Placement {
  Shape shape;
  double cx, cy, size, angle, aspect;
};

bool point_in_polygon(double x, double y, const std::vector<std::pair<double, double>>& poly) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [xi, yi] = poly[i];
    const auto [xj, yj] = poly[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

std::vector<std::pair<double, double>> regular_star(int points, double outer, double inner) {
  std::vector<std::pair<double, double>> poly;
  const int n = inner > 0.0 ? 2 * points : points;
  for (int k = 0; k < n; ++k) {
    const double r = (inner > 0.0 && k % 2 == 1) ? inner : outer;
    const double a = -std::numbers::pi / 2 + 2 * std::numbers::pi * k / n;
    poly.emplace_back(r * std::cos(a), r * std::sin(a));
  }
  return poly;
}

// Inside test in the object's local (unrotated, centered) frame.
bool inside_local(const Placement& p, double u, double v) {
  const double h = p.size / 2;
  switch (p.shape) {
    case Shape::kSquare: return std::abs(u) <= h && std::abs(v) <= h;
    case Shape::kCircle: return u * u + v * v <= h * h;
    case Shape::kTriangle: {
      static const auto tri = regular_star(3, 1.0, 0.0);
      return point_in_polygon(u / h, v / h, tri);
    }
    case Shape::kStar: {
      static const auto star = regular_star(5, 1.0, 0.45);
      return point_in_polygon(u / h, v / h, star);
    }
    case Shape::kRing: {
      const double r2 = u * u + v * v;
      return r2 <= h * h && r2 >= (0.55 * h) * (0.55 * h);
    }
    case Shape::kCapsule: {
      const double r = h / p.aspect;
      const double half = std::max(0.0, h - r);
      const double du = std::max(0.0, std::abs(u) - half);
      return du * du + v * v <= r * r;
    }
  }
  return false;
}

std::vector<std::uint8_t> rasterize(const Placement& p, int w, int h) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(w) * h, 0);
  const double c = std::cos(p.angle);
  const double s = std::sin(p.angle);
  const int r = static_cast<int>(std::ceil(p.size * 0.75)) + 1;
  const int x0 = std::max(0, static_cast<int>(p.cx) - r);
  const int x1 = std::min(w - 1, static_cast<int>(p.cx) + r);
  const int y0 = std::max(0, static_cast<int>(p.cy) - r);
  const int y1 = std::min(h - 1, static_cast<int>(p.cy) + r);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - p.cx;
      const double dy = y + 0.5 - p.cy;
      const double u = c * dx + s * dy;
      const double v = -s * dx + c * dy;
      if (inside_local(p, u, v)) m[static_cast<std::size_t>(y) * w + x] = 1;
    }
  }
  return m;
}

std::optional<Box> tight_box(const std::vector<std::uint8_t>& m, int w, int h) {
  int x0 = w, y0 = h, x1 = -1, y1 = -1;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!m[static_cast<std::size_t>(y) * w + x]) continue;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (x1 < 0) return std::nullopt;
  return Box{static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1 + 1), static_cast<double>(y1 + 1)};
}

std::size_t count(const std::vector<std::uint8_t>& m) {
  return static_cast<std::size_t>(std::count(m.begin(), m.end(), std::uint8_t{1}));
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

Scene generate_scene(const SceneSpec& spec, std::uint64_t index) {
  spec.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int w = spec.width;
  const int h = spec.height;

  // Background: bilinear blend of a coarse random colour grid plus noise.
  const int g = spec.texture_cells + 1;
  std::array<double, 3> base;
  for (double& b : base) b = 40.0 + 175.0 * unit(rng);
  std::vector<std::array<double, 3>> grid(static_cast<std::size_t>(g) * g);
  for (auto& cell : grid) {
    for (int c = 0; c < 3; ++c) cell[c] = base[c] + spec.texture_contrast * (unit(rng) - 0.5);
  }
  std::normal_distribution<double> noise(0.0, spec.pixel_noise);
  Scene scene;
  scene.image = RgbImage(w, h);
  std::vector<double> bg(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    const double fy = (y + 0.5) / h * spec.texture_cells;
    const int iy = std::min(static_cast<int>(fy), spec.texture_cells - 1);
    const double ty = fy - iy;
    for (int x = 0; x < w; ++x) {
      const double fx = (x + 0.5) / w * spec.texture_cells;
      const int ix = std::min(static_cast<int>(fx), spec.texture_cells - 1);
      const double tx = fx - ix;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - ty) * ((1 - tx) * grid[iy * g + ix][c] + tx * grid[iy * g + ix + 1][c]) +
                         ty * ((1 - tx) * grid[(iy + 1) * g + ix][c] + tx * grid[(iy + 1) * g + ix + 1][c]);
        bg[(static_cast<std::size_t>(y) * w + x) * 3 + c] = v;
      }
    }
  }

  std::uniform_int_distribution<int> n_dist(spec.min_objects, spec.max_objects);
  const int wanted = n_dist(rng);
  std::vector<Placement> placed;
  std::vector<std::vector<std::uint8_t>> full;     // unoccluded masks
  std::vector<std::vector<std::uint8_t>> visible;  // after occlusion
  std::vector<Box> boxes;
  std::vector<std::array<double, 3>> colours;

  for (int k = 0; k < wanted; ++k) {
    bool ok = false;
    for (int attempt = 0; attempt < spec.max_placement_attempts && !ok; ++attempt) {
      const bool seen = !spec.seen.empty() && (spec.unseen.empty() || unit(rng) < spec.seen_probability);
      const auto& pal = seen ? spec.seen : spec.unseen;
      Placement p;
      p.shape = pal[std::min(pal.size() - 1, static_cast<std::size_t>(unit(rng) * pal.size()))];
      p.size = spec.min_size + (spec.max_size - spec.min_size) * unit(rng);
      p.cx = p.size / 2 + unit(rng) * std::max(0.0, w - p.size);
      p.cy = p.size / 2 + unit(rng) * std::max(0.0, h - p.size);
      p.angle = unit(rng) * std::numbers::pi;
      p.aspect = 2.5 + 1.0 * unit(rng);
      auto m = rasterize(p, w, h);
      const auto box = tight_box(m, w, h);
      if (!box || count(m) < 16) continue;
      bool fits = true;
      for (const Box& b : boxes) fits = fits && iou(*box, b) <= spec.overlap_cap;
      // Occlusion must leave every earlier object mostly visible.
      for (std::size_t i = 0; i < visible.size() && fits; ++i) {
        std::size_t left = 0;
        for (std::size_t q = 0; q < m.size(); ++q) left += (visible[i][q] && !m[q]) ? 1 : 0;
        fits = left >= spec.min_visible_fraction * count(full[i]) && left >= 16;
      }
      if (!fits) continue;
      for (auto& v : visible) {
        for (std::size_t q = 0; q < m.size(); ++q) v[q] = v[q] && !m[q];
      }
      // Object colours are drawn independently of category, far from the
      // local background so every object is visible.
      std::array<double, 3> col{};
      std::array<double, 3> local{};
      const int lx = std::clamp(static_cast<int>(p.cx), 0, w - 1);
      const int ly = std::clamp(static_cast<int>(p.cy), 0, h - 1);
      for (int c = 0; c < 3; ++c) local[c] = bg[(static_cast<std::size_t>(ly) * w + lx) * 3 + c];
      for (int tries = 0; tries < 32; ++tries) {
        double dist = 0.0;
        for (int c = 0; c < 3; ++c) {
          col[c] = 255.0 * unit(rng);
          dist += std::abs(col[c] - local[c]);
        }
        if (dist > 150.0) break;
      }
      placed.push_back(p);
      full.push_back(m);
      visible.push_back(std::move(m));
      boxes.push_back(*box);
      colours.push_back(col);
      ok = true;
    }
    if (!ok) ++scene.skipped;
  }

  for (std::size_t q = 0; q < static_cast<std::size_t>(w) * h; ++q) {
    const std::array<double, 3>* src = nullptr;
    for (std::size_t i = 0; i < visible.size(); ++i) {
      if (visible[i][q]) src = &colours[i];
    }
    for (int c = 0; c < 3; ++c) {
      const double v = (src != nullptr ? (*src)[c] : bg[q * 3 + c]) + noise(rng);
      scene.image.pixels[q * 3 + c] = to_byte(v);
    }
  }

  for (std::size_t i = 0; i < placed.size(); ++i) {
    SceneObject o;
    o.shape = placed[i].shape;
    o.category_id = category_id(o.shape);
    o.seen = std::find(spec.seen.begin(), spec.seen.end(), o.shape) != spec.seen.end();
    o.box = *tight_box(visible[i], w, h);
    o.mask = std::move(visible[i]);
    scene.objects.push_back(std::move(o));
  }
  return scene;
}

AnnotationFile generate_dataset(const SceneSpec& spec, int num_images, const std::string& out_dir) {
  spec.validate();
  if (num_images < 0) throw ConfigError("gen-data: image count must be non-negative");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) throw IoError(out_dir, "cannot create output directory: " + ec.message());

  AnnotationFile f;
  f.categories = scene_categories(spec);
  int ann_id = 1;
  for (int i = 0; i < num_images; ++i) {
    const Scene scene = generate_scene(spec, static_cast<std::uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof(name), "images/%06d.png", i);
    write_png((fs::path(out_dir) / name).string(), scene.image);
    f.images.push_back({i + 1, name, spec.width, spec.height});
    if (scene.skipped > 0) {
      std::clog << "gen-data: image " << i << ": skipped " << scene.skipped
                << " object(s) that could not satisfy the overlap cap\n";
    }
    for (const SceneObject& o : scene.objects) {
      Annotation a;
      a.id = ann_id++;
      a.image_id = i + 1;
      a.category_id = o.category_id;
      a.box = o.box;
      a.segmentation = rle_encode(o.mask, spec.width, spec.height);
      a.area = static_cast<double>(rle_area(*a.segmentation));
      f.annotations.push_back(std::move(a));
    }
  }
  write_annotation_file((fs::path(out_dir) / "annotations.json").string(), f);
  return f;
}

}  // namespace oln
