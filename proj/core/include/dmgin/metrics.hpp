#pragma once

#include <cstdint>
#include <vector>

namespace dmgin {

// Mean binary cross-entropy. Every p must lie strictly inside (0,1).
double bce_loss(const std::vector<double>& p, const std::vector<int>& y);

// Mann-Whitney AUC via midranks. Tie handling is exact: the function agrees
// bitwise with brute-force pair counting because both reduce to the same
// integer 2U = 2*concordant + ties before the single final division.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Impression-weighted mean of per-user AUC over users that have both classes.
// Single-class users drop out of numerator and denominator.
double gauc(const std::vector<double>& scores, const std::vector<int>& labels,
            const std::vector<uint64_t>& user_ids);

}  // namespace dmgin
