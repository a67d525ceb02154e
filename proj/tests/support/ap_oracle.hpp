#pragma once

// Straight-line reference for interval mAP, written independently of the
// library evaluator. Small instances only.

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "gaf/detector.hpp"
#include "gaf/synthgen.hpp"

namespace gaf::testing {

inline double oracle_iou(double s1, double e1, double s2, double e2) {
  const double inter = std::max(0.0, std::min(e1, e2) - std::max(s1, s2));
  const double uni = (e1 - s1) + (e2 - s2) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// AP of one class at one threshold. Scores must be distinct.
inline double oracle_ap(const std::vector<DetectionResult>& results,
                        const std::vector<FeatureSequence>& truth, int cls, double thr) {
  struct Item {
    double score;
    std::size_t seq;
    double start, end;
  };
  std::vector<Item> items;
  for (const auto& r : results) {
    std::size_t s = 0;
    while (truth[s].seq_id != r.seq_id) ++s;
    for (const auto& p : r.proposals) {
      if (p.class_id == cls) items.push_back({p.score, s, p.start, p.end});
    }
  }
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score > b.score; });

  std::size_t n_gt = 0;
  for (const auto& seq : truth) {
    for (const auto& iv : seq.intervals) n_gt += iv.class_id == cls;
  }
  if (n_gt == 0) return 0.0;

  std::set<std::pair<std::size_t, std::size_t>> taken;
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto& it = items[k];
    double best = -1;
    std::size_t best_g = 0;
    const auto& gts = truth[it.seq].intervals;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].class_id != cls || taken.count({it.seq, g})) continue;
      const double o = oracle_iou(it.start, it.end, gts[g].start, gts[g].end);
      if (o >= thr && o > best) best = o, best_g = g;
    }
    if (best >= 0) {
      taken.insert({it.seq, best_g});
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
  }
  // Area under the upper envelope of the PR points.
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (recall[k] == prev_recall) continue;
    const double envelope = *std::max_element(precision.begin() + static_cast<std::ptrdiff_t>(k), precision.end());
    ap += (recall[k] - prev_recall) * envelope;
    prev_recall = recall[k];
  }
  return ap;
}

inline double oracle_map(const std::vector<DetectionResult>& results,
                         const std::vector<FeatureSequence>& truth, double thr) {
  std::set<int> classes;
  for (const auto& seq : truth) {
    for (const auto& iv : seq.intervals) classes.insert(iv.class_id);
  }
  if (classes.empty()) return 0.0;
  double s = 0;
  for (int c : classes) s += oracle_ap(results, truth, c, thr);
  return s / static_cast<double>(classes.size());
}

struct TinyInstance {
  std::vector<FeatureSequence> truth;
  std::vector<DetectionResult> results;
};

// <= 4 sequences, <= 3 proposals each, <= 2 classes, distinct scores.
inline TinyInstance random_tiny_instance(std::mt19937_64& rng) {
  TinyInstance inst;
  std::uniform_int_distribution<int> nseq(1, 4), nprop(0, 3), ngt(0, 2), cls(1, 2), pos(0, 20),
      len(2, 10);
  std::uniform_real_distribution<double> jitter(-3.0, 3.0), score(0.0, 1.0);
  const int S = nseq(rng);
  for (int s = 0; s < S; ++s) {
    FeatureSequence seq;
    seq.seq_id = "s" + std::to_string(s);
    seq.T = 40;
    seq.D = 1;
    seq.features.assign(40, 0.0);
    seq.fg_mask.assign(40, 0);
    int cursor = 0;
    for (int g = ngt(rng); g > 0; --g) {
      const int start = cursor + pos(rng) % 8;
      const int end = std::min(40, start + len(rng));
      if (end - start < 2) break;
      seq.intervals.push_back({start, end, cls(rng)});
      for (int t = start; t < end; ++t) seq.fg_mask[t] = 1;
      cursor = end;
    }
    DetectionResult r{seq.seq_id, {}};
    for (int p = nprop(rng); p > 0; --p) {
      double a, b;
      if (!seq.intervals.empty() && score(rng) < 0.7) {
        const auto& iv = seq.intervals[rng() % seq.intervals.size()];
        a = iv.start + jitter(rng);
        b = iv.end + jitter(rng);
      } else {
        a = pos(rng);
        b = a + len(rng);
      }
      if (b <= a) b = a + 1;
      r.proposals.push_back({a, b, cls(rng), score(rng)});
    }
    inst.truth.push_back(std::move(seq));
    inst.results.push_back(std::move(r));
  }
  return inst;
}

}  // namespace gaf::testing
