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

// Brute-force reference implementations and randomized property checks.
// Nothing here calls into the library code it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "oln/evaluation.hpp"
#include "oln/geometry.hpp"

namespace oracle {

using oln::Box;

inline Box random_box(std::mt19937_64& rng, double extent = 100.0, double min_side = 1.0) {
  std::uniform_real_distribution<double> pos(0.0, extent);
  std::uniform_real_distribution<double> side(min_side, extent / 2);
  const double x = pos(rng), y = pos(rng);
  return {x, y, x + side(rng), y + side(rng)};
}

inline Box random_int_box(std::mt19937_64& rng, int extent) {
  std::uniform_int_distribution<int> c(0, extent - 1);
  int x1 = c(rng), x2 = c(rng), y1 = c(rng), y2 = c(rng);
  if (x1 > x2) std::swap(x1, x2);
  if (y1 > y2) std::swap(y1, y2);
  return {double(x1), double(y1), double(x2 + 1), double(y2 + 1)};
}

// Pixel-counting IoU for integer boxes.
inline double grid_iou(const Box& a, const Box& b, int extent) {
  long inter = 0, ua = 0, ub = 0;
  for (int y = 0; y < extent; ++y) {
    for (int x = 0; x < extent; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const bool ia = px > a.x1 && px < a.x2 && py > a.y1 && py < a.y2;
      const bool ib = px > b.x1 && px < b.x2 && py > b.y1 && py < b.y2;
      ua += ia;
      ub += ib;
      inter += ia && ib;
    }
  }
  const long uni = ua + ub - inter;
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

inline double overlap_iou(const Box& a, const Box& b) {
  const double w = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double h = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double i = w * h;
  const double u = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - i;
  return u > 0.0 ? i / u : 0.0;
}

// Repeatedly take the best remaining box (lowest index on ties) and drop
// everything overlapping it above the threshold.
inline std::vector<std::size_t> nms(const std::vector<Box>& boxes, const std::vector<double>& scores, double thr) {
  std::vector<bool> alive(boxes.size(), true);
  std::vector<std::size_t> keep;
  while (true) {
    std::size_t best = boxes.size();
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (alive[i] && (best == boxes.size() || scores[i] > scores[best])) best = i;
    }
    if (best == boxes.size()) break;
    keep.push_back(best);
    alive[best] = false;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (alive[i] && overlap_iou(boxes[best], boxes[i]) > thr) alive[i] = false;
    }
  }
  return keep;
}

// ------------------------------------------------------------------ recall

struct RecallOracle {
  std::size_t matched = 0;
  std::size_t total = 0;
};

// Direct transcription of the budget rule over explicit IoU tables.
inline RecallOracle recall(const oln::RecallInstance& inst, int k, double thr, bool exempt_seen) {
  const std::size_t np = inst.proposals.size(), ng = inst.gts.size();
  std::vector<std::vector<double>> m(np, std::vector<double>(ng));
  for (std::size_t p = 0; p < np; ++p)
    for (std::size_t g = 0; g < ng; ++g) m[p][g] = overlap_iou(inst.proposals[p], inst.gts[g]);

  RecallOracle out;
  for (std::size_t g = 0; g < ng; ++g) out.total += inst.seen[g] ? 0 : 1;
  std::vector<bool> taken(ng, false);
  int budget = k;
  for (std::size_t p = 0; p < np && budget > 0; ++p) {
    // Best match over all GTs, first index wins ties.
    std::size_t arg = ng;
    for (std::size_t g = 0; g < ng; ++g) {
      if (m[p][g] > 0.0 && (arg == ng || m[p][g] > m[p][arg])) arg = g;
    }
    const bool seen_hit = arg < ng && inst.seen[arg] && m[p][arg] >= 0.5;
    if (seen_hit) {
      if (!exempt_seen) --budget;
      continue;
    }
    --budget;
    std::size_t claim = ng;
    for (std::size_t g = 0; g < ng; ++g) {
      if (inst.seen[g] || taken[g] || m[p][g] < thr) continue;
      if (claim == ng || m[p][g] > m[p][claim]) claim = g;
    }
    if (claim < ng) {
      taken[claim] = true;
      ++out.matched;
    }
  }
  return out;
}

inline double auc(const std::map<int, double>& curve) {
  // Sum in extended precision, round once.
  std::vector<long double> xs, ys;
  for (const auto& [k, v] : curve) {
    xs.push_back(std::log10(static_cast<long double>(k)));
    ys.push_back(v);
  }
  long double area = 0.0L;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) area += (ys[i] + ys[i + 1]) * (xs[i + 1] - xs[i]) / 2;
  return static_cast<double>(area / (xs.back() - xs.front()));
}

// --------------------------------------------------------------------- AP

// Explicit precision/recall sweep. A detection prefers the best unmatched
// in-range GT (later index on IoU ties, as in the reference COCO code),
// else the best out-of-range GT; detections tied to out-of-range GT and
// unmatched out-of-range detections are dropped from the sweep.
inline std::optional<double> ap(const std::vector<oln::DetectionInstance>& images, double thr, double min_side,
                                double max_side, int max_det) {
  auto in_range = [&](const Box& b) {
    const double s = std::max(b.x2 - b.x1, b.y2 - b.y1);
    return s >= min_side && s < max_side;
  };
  const double floor_iou = std::min(thr, 1.0 - 1e-10);
  std::vector<std::pair<double, bool>> sweep;
  std::size_t npos = 0;
  for (const auto& im : images) {
    std::vector<oln::ScoredBox> dets = im.detections;
    std::stable_sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
    if (int(dets.size()) > max_det) dets.resize(max_det);
    std::vector<bool> used(im.gts.size(), false);
    for (const auto& g : im.gts) npos += in_range(g) ? 1 : 0;
    for (const auto& d : dets) {
      int pick = -1;
      for (int pass = 0; pass < 2 && pick < 0; ++pass) {
        double best = floor_iou;
        for (std::size_t g = 0; g < im.gts.size(); ++g) {
          if (used[g] || in_range(im.gts[g]) != (pass == 0)) continue;
          const double v = overlap_iou(d.box, im.gts[g]);
          if (v >= best) {
            best = v;
            pick = int(g);
          }
        }
      }
      if (pick >= 0) {
        used[pick] = true;
        if (in_range(im.gts[pick])) sweep.push_back({d.score, true});
      } else if (in_range(d.box)) {
        sweep.push_back({d.score, false});
      }
    }
  }
  if (npos == 0) return std::nullopt;
  std::stable_sort(sweep.begin(), sweep.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> rec, prec;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    tp += sweep[i].second;
    rec.push_back(double(tp) / double(npos));
    prec.push_back(double(tp) / double(i + 1));
  }
  long double sum = 0.0L;
  for (int i = 0; i <= 100; ++i) {
    const double r = i * 0.01;
    double best = 0.0;
    for (std::size_t j = 0; j < rec.size(); ++j)
      if (rec[j] >= r) best = std::max(best, prec[j]);
    sum += best;
  }
  return static_cast<double>(sum / 101.0L);
}

// -------------------------------------------------------- property suites

struct PropertyResult {
  std::string name;
  long cases = 0;
  long failures = 0;
};

inline std::vector<PropertyResult> geometry_properties(long n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<PropertyResult> out;

  PropertyResult sym{"iou/dice symmetry and bounds", n, 0};
  PropertyResult dge{"dice >= iou", n, 0};
  for (long i = 0; i < n; ++i) {
    const Box a = random_box(rng), b = i % 7 == 0 ? a : random_box(rng);
    const double ab = oln::iou(a, b), ba = oln::iou(b, a);
    const double dab = oln::dice(a, b), dba = oln::dice(b, a);
    const bool ok = ab == ba && dab == dba && ab >= 0.0 && ab <= 1.0 && dab >= 0.0 && dab <= 1.0 &&
                    std::abs(ab - overlap_iou(a, b)) < 1e-12 && (i % 7 != 0 || ab == 1.0);
    sym.failures += !ok;
    dge.failures += !(dab >= ab);
  }
  out.push_back(sym);
  out.push_back(dge);

  PropertyResult grid{"iou equals pixel-count oracle", n / 10, 0};
  for (long i = 0; i < grid.cases; ++i) {
    const Box a = random_int_box(rng, 24), b = random_int_box(rng, 24);
    grid.failures += std::abs(oln::iou(a, b) - grid_iou(a, b, 24)) > 1e-12;
  }
  out.push_back(grid);

  PropertyResult cen{"centerness scale/translation invariance", n, 0};
  for (long i = 0; i < n; ++i) {
    const Box g = random_box(rng);
    const oln::Point p{g.x1 + u01(rng) * g.width(), g.y1 + u01(rng) * g.height()};
    const double s = 0.1 + 10.0 * u01(rng), tx = 50.0 * u01(rng), ty = 50.0 * u01(rng);
    const Box gs{g.x1 * s + tx, g.y1 * s + ty, g.x2 * s + tx, g.y2 * s + ty};
    const oln::Point ps{p.x * s + tx, p.y * s + ty};
    const double c0 = oln::centerness(p, g), c1 = oln::centerness(ps, gs);
    cen.failures += !(std::abs(c0 - c1) < 1e-9 && c0 >= 0.0 && c0 <= 1.0);
  }
  out.push_back(cen);

  PropertyResult rt{"lrtb round trip < 1e-6", n, 0};
  for (long i = 0; i < n; ++i) {
    const Box g = random_box(rng);
    const oln::Point p{g.x1 + (0.001 + 0.998 * u01(rng)) * g.width(), g.y1 + (0.001 + 0.998 * u01(rng)) * g.height()};
    const auto e = oln::encode_lrtb(p, g);
    if (!e) {
      ++rt.failures;
      continue;
    }
    const Box d = oln::decode_lrtb(p, *e);
    rt.failures += !(std::abs(d.x1 - g.x1) < 1e-6 && std::abs(d.x2 - g.x2) < 1e-6 && std::abs(d.y1 - g.y1) < 1e-6 &&
                     std::abs(d.y2 - g.y2) < 1e-6);
  }
  out.push_back(rt);

  PropertyResult nmsr{"nms order invariance and oracle agreement", n, 0};
  for (long i = 0; i < n; ++i) {
    const int m = 1 + int(u01(rng) * 12);
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (int j = 0; j < m; ++j) {
      boxes.push_back(random_box(rng, 40.0));
      scores.push_back(std::floor(u01(rng) * 1e6) / 1e6);  // distinct with high probability
    }
    const double thr = 0.3 + 0.5 * u01(rng);
    std::vector<std::size_t> perm(m);
    for (int j = 0; j < m; ++j) perm[j] = j;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Box> pb;
    std::vector<double> ps;
    for (auto j : perm) {
      pb.push_back(boxes[j]);
      ps.push_back(scores[j]);
    }
    const auto k0 = oln::nms(boxes, scores, thr);
    const auto k1 = oln::nms(pb, ps, thr);
    bool ok = k0 == nms(boxes, scores, thr);
    // Same kept boxes irrespective of input order (scores distinct).
    std::vector<std::size_t> a(k0.begin(), k0.end()), b;
    for (auto j : k1) b.push_back(perm[j]);
    std::set<double> dup(scores.begin(), scores.end());
    if (dup.size() == scores.size()) ok = ok && a == b;
    nmsr.failures += !ok;
  }
  out.push_back(nmsr);
  return out;
}

// ------------------------------------------------------- metric suites

// Proposals are jittered copies of the ground truth or free boxes, so
// seen-class hits, unseen hits and misses all occur.
inline Box jitter(const Box& b, std::mt19937_64& rng, double amount) {
  std::uniform_real_distribution<double> d(-amount, amount);
  const double w = b.x2 - b.x1, h = b.y2 - b.y1;
  Box o{b.x1 + d(rng) * w, b.y1 + d(rng) * h, b.x2 + d(rng) * w, b.y2 + d(rng) * h};
  if (o.x2 <= o.x1) o.x2 = o.x1 + 0.5;
  if (o.y2 <= o.y1) o.y2 = o.y1 + 0.5;
  return o;
}

inline oln::RecallInstance random_recall_instance(std::mt19937_64& rng, int max_boxes = 10) {
  std::uniform_int_distribution<int> count(0, max_boxes);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  oln::RecallInstance inst;
  const int ng = count(rng), np = count(rng);
  for (int g = 0; g < ng; ++g) {
    inst.gts.push_back(random_box(rng, 60.0, 4.0));
    inst.seen.push_back(u(rng) < 0.5 ? 1 : 0);
  }
  for (int p = 0; p < np; ++p) {
    if (ng > 0 && u(rng) < 0.7) {
      inst.proposals.push_back(jitter(inst.gts[std::uniform_int_distribution<int>(0, ng - 1)(rng)], rng, 0.25));
    } else {
      inst.proposals.push_back(random_box(rng, 60.0, 4.0));
    }
  }
  return inst;
}

inline oln::DetectionInstance random_detection_instance(std::mt19937_64& rng, int max_boxes = 10) {
  const oln::RecallInstance r = random_recall_instance(rng, max_boxes);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  oln::DetectionInstance d;
  // Spread sizes across the small / medium / large split.
  const double scale = 0.5 + 2.5 * u(rng);
  auto scaled = [scale](const Box& b) { return Box{b.x1 * scale, b.y1 * scale, b.x2 * scale, b.y2 * scale}; };
  for (const Box& g : r.gts) d.gts.push_back(scaled(g));
  for (const Box& p : r.proposals) d.detections.push_back({scaled(p), std::round(u(rng) * 20) / 20});
  return d;
}

// Library vs oracle on `n` random images: per-image AR counts for both
// budget rules at several k, dataset AUC, and AP over every threshold and
// size split. Every comparison is exact.
inline std::vector<PropertyResult> metric_equivalence(long n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PropertyResult ar{"AR@k excluding seen == oracle", 0, 0};
  PropertyResult naive{"AR@k naive == oracle", 0, 0};
  PropertyResult dominance{"AR excluding seen >= naive", 0, 0};
  PropertyResult auc_r{"AUC == oracle", 0, 0};
  PropertyResult ap_r{"AP == oracle", 0, 0};
  const std::vector<int> ks = {1, 2, 3, 5, 10};

  const std::vector<double> thr05 = {0.5};
  std::vector<oln::RecallInstance> rec;
  std::vector<oln::DetectionInstance> det;
  for (long i = 0; i < n; ++i) {
    rec.push_back(random_recall_instance(rng));
    const auto& inst = rec.back();
    for (int k : ks) {
      for (double thr : {0.5, 0.7}) {
        const auto lib = oln::ar_at_k_excluding_seen(inst, k, thr);
        const auto ora = recall(inst, k, thr, true);
        ++ar.cases;
        ar.failures += !(lib.matched == ora.matched && lib.total == ora.total);
        const auto libn = oln::ar_at_k_naive(inst, k, thr);
        const auto oran = recall(inst, k, thr, false);
        ++naive.cases;
        naive.failures += !(libn.matched == oran.matched && libn.total == oran.total);
        ++dominance.cases;
        dominance.failures += !(lib.matched >= libn.matched);
      }
    }
    // Per-instance AUC wherever every point is defined.
    std::map<int, double> curve;
    for (int k : ks) {
      const auto v = oln::dataset_recall(std::span<const oln::RecallInstance>(&inst, 1), k, true, thr05);
      if (!v) break;
      curve[k] = *v;
    }
    if (curve.size() == ks.size()) {
      ++auc_r.cases;
      auc_r.failures += oln::auc(curve) != auc(curve);
    }
    det.push_back(random_detection_instance(rng));
  }

  // AUC over the dataset curve, in chunks of 50 images.
  for (std::size_t start = 0; start < rec.size(); start += 50) {
    const std::size_t end = std::min(rec.size(), start + 50);
    const std::span<const oln::RecallInstance> chunk(rec.data() + start, end - start);
    std::map<int, double> curve;
    bool defined = true;
    for (int k : ks) {
      const auto v = oln::dataset_recall(chunk, k, true, thr05);
      if (!v) {
        defined = false;
        break;
      }
      std::size_t m = 0, t = 0;
      for (const auto& im : chunk) {
        const auto o = recall(im, k, 0.5, true);
        m += o.matched;
        t += o.total;
      }
      ++ar.cases;
      ar.failures += *v != double(m) / double(t);
      curve[k] = *v;
    }
    if (!defined) continue;
    ++auc_r.cases;
    auc_r.failures += oln::auc(curve) != auc(curve);
  }

  // AP in chunks of 10 images, every IoU threshold and size split.
  for (std::size_t start = 0; start < det.size(); start += 10) {
    const std::vector<oln::DetectionInstance> chunk(det.begin() + start,
                                                    det.begin() + std::min(det.size(), start + 10));
    for (double t : oln::coco_iou_thresholds()) {
      for (const auto& range : oln::default_area_ranges()) {
        for (int maxdet : {3, 100}) {
          const auto lib = oln::average_precision_at(chunk, t, range, maxdet);
          const auto ora = ap(chunk, t, range.min_side, range.max_side, maxdet);
          ++ap_r.cases;
          ap_r.failures += !(lib.has_value() == ora.has_value() && (!lib || *lib == *ora));
        }
      }
    }
  }
  return {ar, naive, dominance, auc_r, ap_r};
}

}  // namespace oracle
