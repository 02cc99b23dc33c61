#pragma once

#include <algorithm>
#include <cstddef>
#include <utility>
#include <vector>

#include "egl/core/types.hpp"

namespace egl {

// Mann-Whitney AUC: probability a random positive outscores a random
// negative, ties counted one half. O((p+n) log(p+n)).
inline double auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  if (pos.empty() || neg.empty()) throw Error("auc needs non-empty positive and negative sets");
  std::vector<std::pair<double, int>> all;
  all.reserve(pos.size() + neg.size());
  for (double s : pos) all.push_back({s, 1});
  for (double s : neg) all.push_back({s, 0});
  std::sort(all.begin(), all.end());
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    std::size_t n_pos = 0;
    while (j < all.size() && all[j].first == all[i].first) n_pos += static_cast<std::size_t>(all[j++].second);
    // Ranks i+1..j share their mean.
    rank_sum += static_cast<double>(n_pos) * (static_cast<double>(i + 1 + j) / 2.0);
    i = j;
  }
  const double np = static_cast<double>(pos.size()), nn = static_cast<double>(neg.size());
  return (rank_sum - np * (np + 1) / 2.0) / (np * nn);
}

// Fraction of correct 0/1 decisions.
inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels) {
  if (predicted.size() != labels.size() || labels.empty()) throw Error("accuracy needs equal non-empty vectors");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) ok += predicted[i] == labels[i];
  return static_cast<double>(ok) / static_cast<double>(labels.size());
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Population variance.
inline double variance_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

}  // namespace egl
