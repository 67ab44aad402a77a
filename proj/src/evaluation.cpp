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

#include "oln/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "oln/error.hpp"
#include "oln/json_util.hpp"

namespace oln {

using nlohmann::json;
namespace ju = json_util;

namespace {

constexpr double kSeenDetectionIou = 0.5;

// Highest-IoU unclaimed eligible GT with IoU >= thr; -1 if none.
int claim(const Box& p, std::span<const Box> gts, std::vector<std::uint8_t>& claimed,
          std::span<const std::uint8_t> eligible, double thr) {
  int best = -1;
  double best_iou = 0.0;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (claimed[g] || (!eligible.empty() && !eligible[g])) continue;
    const double v = iou(p, gts[g]);
    if (v >= thr && (best < 0 || v > best_iou)) {
      best = static_cast<int>(g);
      best_iou = v;
    }
  }
  if (best >= 0) claimed[best] = 1;
  return best;
}

RecallCount budget_walk(const RecallInstance& inst, int k, double thr, bool exempt_seen) {
  if (inst.seen.size() != inst.gts.size()) throw InputError("recall: seen flags do not match ground truth");
  if (k < 0) throw InputError("recall: k must be non-negative");
  RecallCount rc;
  std::vector<std::uint8_t> unseen(inst.gts.size());
  for (std::size_t g = 0; g < inst.gts.size(); ++g) {
    unseen[g] = inst.seen[g] ? 0 : 1;
    rc.total += unseen[g];
  }
  std::vector<std::uint8_t> claimed(inst.gts.size(), 0);
  int used = 0;
  for (const Box& p : inst.proposals) {
    if (used >= k) break;
    if (is_seen_detection(p, inst.gts, inst.seen)) {
      if (exempt_seen) continue;
      ++used;
      continue;
    }
    ++used;
    if (claim(p, inst.gts, claimed, unseen, thr) >= 0) ++rc.matched;
  }
  return rc;
}

}  // namespace

std::vector<int> match_greedy(std::span<const Box> proposals, std::span<const Box> gts, double iou_threshold) {
  std::vector<std::uint8_t> claimed(gts.size(), 0);
  std::vector<int> out;
  out.reserve(proposals.size());
  for (const Box& p : proposals) out.push_back(claim(p, gts, claimed, {}, iou_threshold));
  return out;
}

std::vector<std::uint8_t> gt_hits(std::span<const Box> proposals, std::span<const Box> gts, double iou_threshold) {
  std::vector<std::uint8_t> hits(gts.size(), 0);
  for (int g : match_greedy(proposals, gts, iou_threshold)) {
    if (g >= 0) hits[g] = 1;
  }
  return hits;
}

std::optional<double> RecallCount::recall() const {
  if (total == 0) return std::nullopt;
  return static_cast<double>(matched) / static_cast<double>(total);
}

bool is_seen_detection(const Box& proposal, std::span<const Box> gts, std::span<const std::uint8_t> seen) {
  int best = -1;
  double best_iou = 0.0;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const double v = iou(proposal, gts[g]);
    if (v > best_iou) {
      best_iou = v;
      best = static_cast<int>(g);
    }
  }
  return best >= 0 && seen[best] && best_iou >= kSeenDetectionIou;
}

RecallCount ar_at_k_excluding_seen(const RecallInstance& inst, int k, double iou_threshold) {
  return budget_walk(inst, k, iou_threshold, true);
}

RecallCount ar_at_k_naive(const RecallInstance& inst, int k, double iou_threshold) {
  return budget_walk(inst, k, iou_threshold, false);
}

std::optional<double> dataset_recall(std::span<const RecallInstance> images, int k, bool exclude_seen,
                                     std::span<const double> iou_thresholds) {
  if (iou_thresholds.empty()) throw InputError("recall: no IoU thresholds");
  long double sum = 0.0L;
  for (double thr : iou_thresholds) {
    RecallCount total;
    for (const auto& im : images) {
      const RecallCount rc = budget_walk(im, k, thr, exclude_seen);
      total.matched += rc.matched;
      total.total += rc.total;
    }
    const auto r = total.recall();
    if (!r) return std::nullopt;
    sum += *r;
  }
  return static_cast<double>(sum / static_cast<long double>(iou_thresholds.size()));
}

double auc(const std::map<int, double>& curve) {
  if (curve.size() < 2) throw InputError("auc: need at least two curve points");
  if (curve.begin()->first <= 0) throw InputError("auc: k must be positive");
  // Extended-precision accumulation with one final rounding.
  auto lg = [](int k) { return std::log10(static_cast<long double>(k)); };
  long double area = 0.0L;
  auto prev = curve.begin();
  for (auto it = std::next(curve.begin()); it != curve.end(); ++it, ++prev) {
    const long double dx = lg(it->first) - lg(prev->first);
    area += 0.5L * (static_cast<long double>(it->second) + prev->second) * dx;
  }
  const long double range = lg(curve.rbegin()->first) - lg(curve.begin()->first);
  return static_cast<double>(area / range);
}

std::vector<AreaRange> default_area_ranges() {
  constexpr double kInf = 1e300;
  return {{"all", 0.0, kInf}, {"small", 0.0, 32.0}, {"medium", 32.0, 96.0}, {"large", 96.0, kInf}};
}

std::vector<double> coco_iou_thresholds() {
  // Same construction as numpy.linspace(0.5, 0.95, 10).
  std::vector<double> t(10);
  const double step = (0.95 - 0.5) / 9.0;
  for (int i = 0; i < 10; ++i) t[i] = 0.5 + i * step;
  t[9] = 0.95;
  return t;
}

namespace {

std::vector<double> recall_thresholds() {
  // numpy.linspace(0, 1, 101).
  std::vector<double> r(101);
  const double step = 1.0 / 100.0;
  for (int i = 0; i < 101; ++i) r[i] = i * step;
  r[100] = 1.0;
  return r;
}

struct ScoredMatch {
  double score;
  bool tp;
};

}  // namespace

std::optional<double> average_precision_at(std::span<const DetectionInstance> images, double thr,
                                           const AreaRange& range, int max_detections) {
  auto in_range = [&](const Box& b) { return b.long_side() >= range.min_side && b.long_side() < range.max_side; };
  std::vector<ScoredMatch> all;
  std::size_t positives = 0;
  for (const auto& im : images) {
    const std::size_t ng = im.gts.size();
    if (!im.crowd.empty() && im.crowd.size() != ng) throw InputError("AP: crowd flags do not match ground truth");
    // Ground truth order: non-ignored first, stable.
    std::vector<std::size_t> gorder(ng);
    std::iota(gorder.begin(), gorder.end(), 0);
    std::vector<std::uint8_t> gt_ignore(ng);
    for (std::size_t g = 0; g < ng; ++g) {
      const bool crowd = !im.crowd.empty() && im.crowd[g];
      gt_ignore[g] = (crowd || !in_range(im.gts[g])) ? 1 : 0;
      if (!gt_ignore[g]) ++positives;
    }
    std::stable_sort(gorder.begin(), gorder.end(), [&](std::size_t a, std::size_t b) { return gt_ignore[a] < gt_ignore[b]; });

    std::vector<std::size_t> dorder(im.detections.size());
    std::iota(dorder.begin(), dorder.end(), 0);
    std::stable_sort(dorder.begin(), dorder.end(),
                     [&](std::size_t a, std::size_t b) { return im.detections[a].score > im.detections[b].score; });
    if (static_cast<int>(dorder.size()) > max_detections) dorder.resize(static_cast<std::size_t>(max_detections));

    std::vector<int> gt_match(ng, -1);
    for (std::size_t di = 0; di < dorder.size(); ++di) {
      const ScoredBox& d = im.detections[dorder[di]];
      double best = std::min(thr, 1.0 - 1e-10);
      int m = -1;
      for (std::size_t gi = 0; gi < ng; ++gi) {
        const std::size_t g = gorder[gi];
        const bool crowd = !im.crowd.empty() && im.crowd[g];
        if (gt_match[g] >= 0 && !crowd) continue;
        if (m >= 0 && !gt_ignore[m] && gt_ignore[g]) break;
        const double v = crowd ? intersection_area(d.box, im.gts[g]) / d.box.area() : iou(d.box, im.gts[g]);
        if (v < best) continue;
        best = v;
        m = static_cast<int>(g);
      }
      bool ignored;
      if (m >= 0) {
        gt_match[m] = static_cast<int>(di);
        ignored = gt_ignore[m] != 0;
      } else {
        ignored = !in_range(d.box);
      }
      if (!ignored) all.push_back({d.score, m >= 0});
    }
  }
  if (positives == 0) return std::nullopt;
  std::stable_sort(all.begin(), all.end(), [](const ScoredMatch& a, const ScoredMatch& b) { return a.score > b.score; });

  const std::size_t n = all.size();
  std::vector<double> rc(n);
  std::vector<double> pr(n);
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (all[i].tp ? tp : fp) += 1;
    rc[i] = static_cast<double>(tp) / static_cast<double>(positives);
    pr[i] = static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  for (std::size_t i = n; i-- > 1;) pr[i - 1] = std::max(pr[i - 1], pr[i]);
  long double sum = 0.0L;
  const auto thresholds = recall_thresholds();
  for (double r : thresholds) {
    const auto it = std::lower_bound(rc.begin(), rc.end(), r);
    sum += it == rc.end() ? 0.0 : pr[static_cast<std::size_t>(it - rc.begin())];
  }
  return static_cast<double>(sum / static_cast<long double>(thresholds.size()));
}

ApSummary average_precision(std::span<const DetectionInstance> images, int max_detections) {
  ApSummary s;
  const auto ranges = default_area_ranges();
  const auto thrs = coco_iou_thresholds();
  auto mean_over = [&](const AreaRange& range) -> std::optional<double> {
    long double sum = 0.0L;
    for (double t : thrs) {
      const auto v = average_precision_at(images, t, range, max_detections);
      if (!v) return std::nullopt;
      sum += *v;
    }
    return static_cast<double>(sum / static_cast<long double>(thrs.size()));
  };
  s.ap = mean_over(ranges[0]);
  s.ap50 = average_precision_at(images, thrs[0], ranges[0], max_detections);
  s.ap75 = average_precision_at(images, thrs[5], ranges[0], max_detections);
  s.ap_small = mean_over(ranges[1]);
  s.ap_medium = mean_over(ranges[2]);
  s.ap_large = mean_over(ranges[3]);
  return s;
}

void EvalOptions::validate() const {
  if (ks.empty()) throw ConfigError("eval: ks must not be empty");
  for (int k : ks) {
    if (k <= 0) throw ConfigError("eval: every k must be positive");
  }
  for (int k : auc_ks) {
    if (k <= 0) throw ConfigError("eval: every AUC k must be positive");
  }
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw ConfigError("eval: iou_threshold must be in (0, 1]");
  if (ap_max_detections <= 0) throw ConfigError("eval: ap_max_detections must be positive");
}

json to_json(const EvalOptions& o) {
  return {{"ks", o.ks},
          {"auc_ks", o.auc_ks},
          {"iou_threshold", o.iou_threshold},
          {"coco_style_recall", o.coco_style_recall},
          {"compute_ap", o.compute_ap},
          {"ap_max_detections", o.ap_max_detections}};
}

EvalOptions eval_options_from_json(const json& j, const std::string& path) {
  ju::reject_unknown(j, {"ks", "auc_ks", "iou_threshold", "coco_style_recall", "compute_ap", "ap_max_detections"},
                     path);
  EvalOptions o;
  auto ints = [&](const char* key, std::vector<int>& out) {
    if (!j.contains(key)) return;
    const std::string p = ju::child(path, key);
    ju::expect_array(j[key], p);
    out.clear();
    for (std::size_t i = 0; i < j[key].size(); ++i) out.push_back(ju::as<int>(j[key][i], ju::index(p, i)));
  };
  ints("ks", o.ks);
  ints("auc_ks", o.auc_ks);
  ju::get_optional(j, "iou_threshold", path, o.iou_threshold);
  ju::get_optional(j, "coco_style_recall", path, o.coco_style_recall);
  ju::get_optional(j, "compute_ap", path, o.compute_ap);
  ju::get_optional(j, "ap_max_detections", path, o.ap_max_detections);
  return o;
}

namespace {
json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
}  // namespace

json EvalReport::to_json() const {
  json j;
  j["images"] = images;
  j["unseen_gts"] = unseen_gts;
  json ar_j = json::object();
  for (const auto& [k, v] : ar) ar_j[std::to_string(k)] = opt(v);
  json naive_j = json::object();
  for (const auto& [k, v] : ar_naive) naive_j[std::to_string(k)] = opt(v);
  j["ar"] = ar_j;
  j["ar_naive"] = naive_j;
  j["auc"] = opt(auc);
  j["ap"] = {{"AP", opt(ap.ap)},        {"AP50", opt(ap.ap50)},       {"AP75", opt(ap.ap75)},
             {"APs", opt(ap.ap_small)}, {"APm", opt(ap.ap_medium)}, {"APl", opt(ap.ap_large)}};
  json diag = json::array();
  for (const auto& d : diagnostics) {
    diag.push_back({{"image_id", d.image_id},
                    {"unseen_gts", d.unseen_gts},
                    {"seen_gts", d.seen_gts},
                    {"proposals", d.proposals},
                    {"seen_detections", d.seen_detections},
                    {"unseen_matched_at_max_k", d.unseen_matched_at_max_k}});
  }
  j["diagnostics"] = diag;
  return j;
}

std::string EvalReport::ar_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "k,ar,ar_naive\n";
  for (const auto& [k, v] : ar) {
    os << k << ',';
    if (v) os << *v;
    os << ',';
    const auto it = ar_naive.find(k);
    if (it != ar_naive.end() && it->second) os << *it->second;
    os << '\n';
  }
  return os.str();
}

EvalReport evaluate(const GroundTruthSet& gt, const std::vector<std::pair<int, std::vector<ScoredBox>>>& proposals,
                    const EvalOptions& options) {
  options.validate();
  std::map<int, const std::vector<ScoredBox>*> by_id;
  for (const auto& [id, list] : proposals) {
    if (gt.find(id) == nullptr) throw InputError("eval: proposals reference unknown image id " + std::to_string(id));
    by_id[id] = &list;
  }
  std::vector<RecallInstance> rinst;
  std::vector<DetectionInstance> dinst;
  EvalReport rep;
  std::vector<int> auc_ks = options.auc_ks;
  if (auc_ks.empty()) {
    for (int k : {10, 30, 100, 300, 1000}) {
      if (std::find(options.ks.begin(), options.ks.end(), k) != options.ks.end()) auc_ks.push_back(k);
    }
  }
  std::set<int> ks(options.ks.begin(), options.ks.end());
  ks.insert(auc_ks.begin(), auc_ks.end());
  const int max_k = *ks.rbegin();

  for (const auto& im : gt.images) {
    RecallInstance r;
    DetectionInstance d;
    ImageDiagnostics diag;
    diag.image_id = im.image_id;
    for (const auto& inst : im.instances) {
      r.gts.push_back(inst.box);
      r.seen.push_back(inst.seen ? 1 : 0);
      d.gts.push_back(inst.box);
      d.crowd.push_back(inst.crowd ? 1 : 0);
      (inst.seen ? diag.seen_gts : diag.unseen_gts) += 1;
    }
    const auto it = by_id.find(im.image_id);
    if (it != by_id.end()) {
      d.detections = *it->second;
      std::stable_sort(d.detections.begin(), d.detections.end(),
                       [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
      for (const auto& sb : d.detections) r.proposals.push_back(sb.box);
    }
    diag.proposals = r.proposals.size();
    for (const Box& p : r.proposals) diag.seen_detections += is_seen_detection(p, r.gts, r.seen) ? 1 : 0;
    diag.unseen_matched_at_max_k = ar_at_k_excluding_seen(r, max_k, options.iou_threshold).matched;
    rep.unseen_gts += diag.unseen_gts;
    rep.diagnostics.push_back(diag);
    rinst.push_back(std::move(r));
    dinst.push_back(std::move(d));
  }
  rep.images = gt.images.size();

  const std::vector<double> thrs = options.coco_style_recall ? coco_iou_thresholds()
                                                             : std::vector<double>{options.iou_threshold};
  std::map<int, std::optional<double>> all_ar;
  for (int k : ks) {
    all_ar[k] = dataset_recall(rinst, k, true, thrs);
    if (std::find(options.ks.begin(), options.ks.end(), k) != options.ks.end()) {
      rep.ar[k] = all_ar[k];
      rep.ar_naive[k] = dataset_recall(rinst, k, false, thrs);
    }
  }
  if (auc_ks.size() >= 2) {
    std::map<int, double> curve;
    bool defined = true;
    for (int k : auc_ks) {
      if (!all_ar[k]) defined = false;
      else curve[k] = *all_ar[k];
    }
    if (defined && curve.size() >= 2) rep.auc = auc(curve);
  }
  if (options.compute_ap) rep.ap = average_precision(dinst, options.ap_max_detections);
  return rep;
}

}  // namespace oln
