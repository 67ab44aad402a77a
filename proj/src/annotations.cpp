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

#include "oln/annotations.hpp"

#include <fstream>
#include <map>
#include <set>

#include "oln/error.hpp"
#include "oln/json_util.hpp"

namespace oln {

using nlohmann::json;
namespace ju = json_util;

namespace {
// Boxes may overhang the image by this much (real files carry rounding).
constexpr double kBoundsSlack = 0.5;
}  // namespace

Rle rle_encode(std::span<const std::uint8_t> mask, int width, int height) {
  if (mask.size() != static_cast<std::size_t>(width) * height) {
    throw InputError("rle_encode: mask size does not match " + std::to_string(width) + "x" + std::to_string(height));
  }
  Rle r;
  r.width = width;
  r.height = height;
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (int x = 0; x < width; ++x) {
    for (int y = 0; y < height; ++y) {
      const std::uint8_t v = mask[static_cast<std::size_t>(y) * width + x] != 0 ? 1 : 0;
      if (v != current) {
        r.counts.push_back(run);
        run = 0;
        current = v;
      }
      ++run;
    }
  }
  r.counts.push_back(run);
  return r;
}

std::vector<std::uint8_t> rle_decode(const Rle& rle) {
  const std::size_t n = static_cast<std::size_t>(rle.width) * rle.height;
  std::vector<std::uint8_t> out(n, 0);
  std::size_t pos = 0;
  std::uint8_t v = 0;
  for (std::uint32_t c : rle.counts) {
    if (pos + c > n) throw InputError("rle_decode: counts exceed the mask size");
    for (std::uint32_t k = 0; k < c; ++k, ++pos) {
      if (v) {
        const std::size_t x = pos / rle.height;
        const std::size_t y = pos % rle.height;
        out[y * rle.width + x] = 1;
      }
    }
    v = 1 - v;
  }
  if (pos != n) throw InputError("rle_decode: counts do not cover the mask");
  return out;
}

std::uint64_t rle_area(const Rle& rle) {
  std::uint64_t a = 0;
  for (std::size_t i = 1; i < rle.counts.size(); i += 2) a += rle.counts[i];
  return a;
}

json to_json(const Rle& rle) { return {{"size", {rle.height, rle.width}}, {"counts", rle.counts}}; }

Rle rle_from_json(const json& j, const std::string& path) {
  ju::reject_unknown(j, {"size", "counts"}, path);
  const json& size = ju::require(j, "size", path);
  ju::expect_array(size, ju::child(path, "size"));
  if (size.size() != 2) throw ParseError(ju::child(path, "size"), "expected [height, width]");
  Rle r;
  r.height = ju::as<int>(size[0], ju::index(ju::child(path, "size"), 0));
  r.width = ju::as<int>(size[1], ju::index(ju::child(path, "size"), 1));
  const json& counts = ju::require(j, "counts", path);
  if (counts.is_string()) throw ParseError(ju::child(path, "counts"), "compressed RLE strings are not supported");
  ju::expect_array(counts, ju::child(path, "counts"));
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const auto c = ju::as<std::int64_t>(counts[i], ju::index(ju::child(path, "counts"), i));
    if (c < 0) throw ParseError(ju::index(ju::child(path, "counts"), i), "negative run length");
    r.counts.push_back(static_cast<std::uint32_t>(c));
    total += static_cast<std::uint64_t>(c);
  }
  if (r.height < 0 || r.width < 0 || total != static_cast<std::uint64_t>(r.height) * r.width) {
    throw ParseError(ju::child(path, "counts"), "run lengths do not sum to height*width");
  }
  return r;
}

std::vector<std::string> voc_category_names() {
  return {"airplane", "bicycle", "bird",  "boat",       "bottle", "bus",          "car",
          "cat",      "chair",   "cow",   "dining table", "dog",  "horse",        "motorcycle",
          "person",   "potted plant", "sheep", "couch",  "train", "tv"};
}

json AnnotationFile::to_json() const {
  json j;
  j["images"] = json::array();
  for (const auto& im : images) {
    j["images"].push_back({{"id", im.id}, {"file_name", im.file_name}, {"width", im.width}, {"height", im.height}});
  }
  j["annotations"] = json::array();
  for (const auto& a : annotations) {
    json e = {{"id", a.id},
              {"image_id", a.image_id},
              {"category_id", a.category_id},
              {"bbox", {a.box.x1, a.box.y1, a.box.width(), a.box.height()}},
              {"area", a.area},
              {"iscrowd", a.iscrowd ? 1 : 0}};
    if (a.segmentation) e["segmentation"] = oln::to_json(*a.segmentation);
    j["annotations"].push_back(std::move(e));
  }
  j["categories"] = json::array();
  for (const auto& c : categories) {
    j["categories"].push_back({{"id", c.id}, {"name", c.name}, {"seen", c.seen}});
  }
  return j;
}

AnnotationFile parse_annotation_file(const json& j, const std::vector<std::string>* seen_names) {
  const std::string root = "$";
  ju::expect_object(j, root);
  AnnotationFile f;

  const json& cats = ju::require(j, "categories", root);
  ju::expect_array(cats, "$.categories");
  std::map<int, std::size_t> cat_index;
  for (std::size_t i = 0; i < cats.size(); ++i) {
    const std::string p = ju::index("$.categories", i);
    Category c;
    c.id = ju::get<int>(cats[i], "id", p);
    c.name = ju::get<std::string>(cats[i], "name", p);
    if (seen_names != nullptr) {
      c.seen = false;
      for (const auto& n : *seen_names) c.seen = c.seen || n == c.name;
    } else {
      c.seen = ju::get<bool>(cats[i], "seen", p);
    }
    if (!cat_index.emplace(c.id, f.categories.size()).second) throw ParseError(ju::child(p, "id"), "duplicate category id");
    f.categories.push_back(std::move(c));
  }
  if (seen_names != nullptr) {
    for (const auto& n : *seen_names) {
      bool found = false;
      for (const auto& c : f.categories) found = found || c.name == n;
      if (!found) throw ParseError("$.categories", "seen category '" + n + "' is not defined");
    }
  }

  const json& imgs = ju::require(j, "images", root);
  ju::expect_array(imgs, "$.images");
  std::map<int, std::size_t> image_index;
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    const std::string p = ju::index("$.images", i);
    ImageRecord im;
    im.id = ju::get<int>(imgs[i], "id", p);
    im.file_name = ju::get<std::string>(imgs[i], "file_name", p);
    im.width = ju::get<int>(imgs[i], "width", p);
    im.height = ju::get<int>(imgs[i], "height", p);
    if (im.width <= 0 || im.height <= 0) throw ParseError(p, "image size must be positive");
    if (!image_index.emplace(im.id, f.images.size()).second) throw ParseError(ju::child(p, "id"), "duplicate image id");
    f.images.push_back(std::move(im));
  }

  const json& anns = ju::require(j, "annotations", root);
  ju::expect_array(anns, "$.annotations");
  std::set<int> ann_ids;
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const std::string p = ju::index("$.annotations", i);
    Annotation a;
    a.id = ju::get<int>(anns[i], "id", p);
    if (!ann_ids.insert(a.id).second) throw ParseError(ju::child(p, "id"), "duplicate annotation id");
    a.image_id = ju::get<int>(anns[i], "image_id", p);
    auto im = image_index.find(a.image_id);
    if (im == image_index.end()) throw ParseError(ju::child(p, "image_id"), "unknown image id " + std::to_string(a.image_id));
    a.category_id = ju::get<int>(anns[i], "category_id", p);
    if (cat_index.find(a.category_id) == cat_index.end()) {
      throw ParseError(ju::child(p, "category_id"), "unknown category id " + std::to_string(a.category_id));
    }
    const json& bb = ju::require(anns[i], "bbox", p);
    const std::string bp = ju::child(p, "bbox");
    ju::expect_array(bb, bp);
    if (bb.size() != 4) throw ParseError(bp, "expected [x, y, w, h]");
    double v[4];
    for (int k = 0; k < 4; ++k) v[k] = ju::as<double>(bb[k], ju::index(bp, k));
    if (!(v[2] > 0.0 && v[3] > 0.0)) throw ParseError(bp, "box width and height must be positive");
    const ImageRecord& rec = f.images[im->second];
    if (v[0] < -kBoundsSlack || v[1] < -kBoundsSlack || v[0] + v[2] > rec.width + kBoundsSlack ||
        v[1] + v[3] > rec.height + kBoundsSlack) {
      throw ParseError(bp, "box lies outside the image");
    }
    a.box = Box{v[0], v[1], v[0] + v[2], v[1] + v[3]};
    a.area = a.box.area();
    ju::get_optional(anns[i], "area", p, a.area);
    if (anns[i].contains("iscrowd")) {
      const json& c = anns[i]["iscrowd"];
      a.iscrowd = c.is_boolean() ? c.get<bool>() : ju::as<int>(c, ju::child(p, "iscrowd")) != 0;
    }
    if (anns[i].contains("segmentation")) {
      const json& s = anns[i]["segmentation"];
      // Polygon segmentations (real COCO) are accepted but not decoded.
      if (s.is_object()) {
        a.segmentation = rle_from_json(s, ju::child(p, "segmentation"));
        if (a.segmentation->width != rec.width || a.segmentation->height != rec.height) {
          throw ParseError(ju::child(p, "segmentation"), "mask size differs from the image size");
        }
      }
    }
    f.annotations.push_back(std::move(a));
  }
  return f;
}

AnnotationFile read_annotation_file(const std::string& path, const std::vector<std::string>* seen_names) {
  std::ifstream is(path);
  if (!is) throw IoError(path, "cannot open annotation file");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ParseError(path, e.what());
  }
  return parse_annotation_file(j, seen_names);
}

void write_annotation_file(const std::string& path, const AnnotationFile& file) {
  std::ofstream os(path);
  if (!os) throw IoError(path, "cannot open for writing");
  os << file.to_json().dump(1) << "\n";
  if (!os) throw IoError(path, "write failed");
}

const GroundTruthImage* GroundTruthSet::find(int image_id) const {
  for (const auto& im : images) {
    if (im.image_id == image_id) return &im;
  }
  return nullptr;
}

std::size_t GroundTruthSet::seen_category_count() const {
  std::size_t n = 0;
  for (const auto& c : categories) n += c.seen ? 1 : 0;
  return n;
}

GroundTruthSet to_ground_truth(const AnnotationFile& file) {
  GroundTruthSet gt;
  gt.categories = file.categories;
  std::map<int, bool> seen;
  for (const auto& c : file.categories) seen[c.id] = c.seen;
  std::map<int, std::size_t> where;
  for (const auto& im : file.images) {
    where[im.id] = gt.images.size();
    gt.images.push_back({im.id, im.file_name, im.width, im.height, {}});
  }
  for (const auto& a : file.annotations) {
    GroundTruthInstance inst;
    inst.box = a.box;
    inst.category_id = a.category_id;
    inst.seen = seen.at(a.category_id);
    inst.crowd = a.iscrowd;
    inst.mask = a.segmentation;
    gt.images[where.at(a.image_id)].instances.push_back(std::move(inst));
  }
  return gt;
}

GroundTruthSet load_annotations(const std::string& path, const std::vector<std::string>* seen_names) {
  return to_ground_truth(read_annotation_file(path, seen_names));
}

}  // namespace oln
