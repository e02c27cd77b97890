#include "dmgin/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "dmgin/error.hpp"

namespace dmgin {

double bce_loss(const std::vector<double>& p, const std::vector<int>& y) {
  check_arg(p.size() == y.size(), "bce_loss: size mismatch");
  check_arg(!p.empty(), "bce_loss: empty batch");
  double sum = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    check_arg(p[i] > 0.0 && p[i] < 1.0, "bce_loss: p outside (0,1)");
    check_arg(y[i] == 0 || y[i] == 1, "bce_loss: label not in {0,1}");
    sum += y[i] ? -std::log(p[i]) : -std::log(1.0 - p[i]);
  }
  return sum / double(p.size());
}

namespace {

// 2U = sum over positives of (2*rank - degenerate correction), accumulated in
// exact integers so ties cost exactly one half pair each. rank_x2 is twice
// the midrank of a tie block, always integral.
double auc_ranks(const std::vector<double>& scores,
                 const std::vector<int>& labels,
                 const std::vector<size_t>& idx) {
  const size_t n = idx.size();
  uint64_t pos = 0;
  for (size_t i : idx) pos += labels[i] ? 1u : 0u;
  const uint64_t neg = n - pos;
  check_arg(pos > 0 && neg > 0, "auc: needs both classes");

  uint64_t sum_rank_x2_pos = 0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    // ranks i+1 .. j (1-based); midrank*2 = (i+1) + j
    const uint64_t rank_x2 = uint64_t(i + 1) + uint64_t(j);
    for (size_t t = i; t < j; ++t)
      if (labels[idx[t]]) sum_rank_x2_pos += rank_x2;
    i = j;
  }
  const uint64_t u_x2 = sum_rank_x2_pos - pos * (pos + 1);
  return double(u_x2) / (2.0 * double(pos) * double(neg));
}

}  // namespace

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_arg(scores.size() == labels.size(), "auc: size mismatch");
  check_arg(!scores.empty(), "auc: empty input");
  for (double s : scores) check_arg(std::isfinite(s), "auc: non-finite score");
  std::vector<size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), size_t(0));
  std::sort(idx.begin(), idx.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  return auc_ranks(scores, labels, idx);
}

double gauc(const std::vector<double>& scores, const std::vector<int>& labels,
            const std::vector<uint64_t>& user_ids) {
  check_arg(scores.size() == labels.size() && scores.size() == user_ids.size(),
            "gauc: size mismatch");
  std::map<uint64_t, std::vector<size_t>> by_user;
  for (size_t i = 0; i < scores.size(); ++i) by_user[user_ids[i]].push_back(i);

  double weighted = 0.0;
  uint64_t total_impressions = 0;
  for (auto& [_, idx] : by_user) {
    bool has_pos = false, has_neg = false;
    for (size_t i : idx) (labels[i] ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) continue;
    std::vector<double> s;
    std::vector<int> y;
    s.reserve(idx.size());
    y.reserve(idx.size());
    for (size_t i : idx) {
      s.push_back(scores[i]);
      y.push_back(labels[i]);
    }
    weighted += double(idx.size()) * auc(s, y);
    total_impressions += idx.size();
  }
  check_arg(total_impressions > 0, "gauc: no user has both classes");
  return weighted / double(total_impressions);
}

}  // namespace dmgin
