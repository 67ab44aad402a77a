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

// COCO-style annotation files with a boolean `seen` on each category, and
// the in-memory ground truth the evaluator consumes.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "oln/geometry.hpp"

namespace oln {

/// Uncompressed COCO run-length encoding: column-major runs that start
/// with a (possibly empty) run of zeros.
struct Rle {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;

  friend bool operator==(const Rle&, const Rle&) = default;
};

/// `mask` is row-major height x width, nonzero = foreground.
Rle rle_encode(std::span<const std::uint8_t> mask, int width, int height);
/// Row-major 0/1 grid.
std::vector<std::uint8_t> rle_decode(const Rle& rle);
std::uint64_t rle_area(const Rle& rle);
nlohmann::json to_json(const Rle& rle);
/// Throws ParseError.
Rle rle_from_json(const nlohmann::json& j, const std::string& path);

struct Category {
  int id = 0;
  std::string name;
  bool seen = false;
};

struct ImageRecord {
  int id = 0;
  std::string file_name;
  int width = 0;
  int height = 0;
};

struct Annotation {
  int id = 0;
  int image_id = 0;
  int category_id = 0;
  Box box;  // stored as [x, y, w, h] on disk
  std::optional<Rle> segmentation;
  double area = 0.0;
  bool iscrowd = false;
};

struct AnnotationFile {
  std::vector<ImageRecord> images;
  std::vector<Annotation> annotations;
  std::vector<Category> categories;

  nlohmann::json to_json() const;
};

/// The 20 COCO category names that correspond to the VOC classes.
std::vector<std::string> voc_category_names();

/// Validates schema and referential integrity. When `seen_names` is given
/// it decides the seen flags (categories need no `seen` field); otherwise
/// every category must carry one. Throws ParseError with a JSON path.
AnnotationFile parse_annotation_file(const nlohmann::json& j,
                                     const std::vector<std::string>* seen_names = nullptr);
/// Throws IoError / ParseError.
AnnotationFile read_annotation_file(const std::string& path,
                                    const std::vector<std::string>* seen_names = nullptr);
void write_annotation_file(const std::string& path, const AnnotationFile& file);

struct GroundTruthInstance {
  Box box;
  int category_id = 0;
  bool seen = false;
  bool crowd = false;
  std::optional<Rle> mask;
};

struct GroundTruthImage {
  int image_id = 0;
  std::string file_name;
  int width = 0;
  int height = 0;
  std::vector<GroundTruthInstance> instances;
};

struct GroundTruthSet {
  std::vector<GroundTruthImage> images;
  std::vector<Category> categories;

  const GroundTruthImage* find(int image_id) const;
  std::size_t seen_category_count() const;
};

GroundTruthSet to_ground_truth(const AnnotationFile& file);
GroundTruthSet load_annotations(const std::string& path,
                                const std::vector<std::string>* seen_names = nullptr);

}  // namespace oln
