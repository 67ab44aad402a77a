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

// Synthetic shapes scenes with a seen/unseen category split. Objects are
// drawn with hard edges, so annotation masks reproduce object pixels
// exactly; later objects occlude earlier ones and boxes are tight around
// the visible pixels.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "oln/annotations.hpp"
#include "oln/image_io.hpp"

namespace oln {

enum class Shape { kSquare, kCircle, kTriangle, kStar, kRing, kCapsule };

const char* to_string(Shape s);
/// Throws ConfigError.
Shape shape_from_string(const std::string& s);
/// Stable category id of a shape (1-based).
int category_id(Shape s);

struct SceneSpec {
  int width = 96;
  int height = 96;
  int min_objects = 2;
  int max_objects = 5;
  double min_size = 16.0;
  double max_size = 40.0;
  /// Maximum box IoU between any two objects of a scene.
  double overlap_cap = 0.3;
  /// Objects whose visible area falls below this fraction of their full
  /// area are rejected at placement time.
  double min_visible_fraction = 0.6;
  int max_placement_attempts = 50;
  std::vector<Shape> seen = {Shape::kSquare, Shape::kCircle};
  std::vector<Shape> unseen = {Shape::kTriangle, Shape::kStar, Shape::kRing, Shape::kCapsule};
  /// Probability that a placed object is drawn from the seen palette.
  double seen_probability = 0.5;
  int texture_cells = 4;
  double texture_contrast = 60.0;
  double pixel_noise = 6.0;
  std::uint64_t seed = 0;

  /// Throws ConfigError (e.g. overlapping palettes, overlap cap outside [0,1)).
  void validate() const;
};

nlohmann::json to_json(const SceneSpec& spec);
/// Strict: unknown keys raise ParseError.
SceneSpec scene_spec_from_json(const nlohmann::json& j, const std::string& path);

struct SceneObject {
  Shape shape = Shape::kSquare;
  int category_id = 0;
  bool seen = false;
  Box box;                          // tight around the visible mask
  std::vector<std::uint8_t> mask;   // visible pixels, row-major
};

struct Scene {
  RgbImage image;
  std::vector<SceneObject> objects;
  /// Placements abandoned after max_placement_attempts.
  int skipped = 0;
};

/// Deterministic in (spec.seed, index).
Scene generate_scene(const SceneSpec& spec, std::uint64_t index);

std::vector<Category> scene_categories(const SceneSpec& spec);

/// Writes `out_dir/images/NNNNNN.png` and `out_dir/annotations.json`.
/// Every object is annotated (box, RLE mask, category with seen flag).
AnnotationFile generate_dataset(const SceneSpec& spec, int num_images, const std::string& out_dir);

}  // namespace oln
