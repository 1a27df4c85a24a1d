#pragma once

#include <functional>
#include <span>

#include "ucf/numcore/tape.hpp"

namespace ucf::num {

// Builds a scalar loss on `tape` from one leaf per parameter matrix.
using LossBuilder = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_entry = 0;
  std::size_t entries_checked = 0;
};

// Compares reverse-mode gradients against central differences at every entry
// of every parameter. Per-entry error is
//   |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
// `params` is restored to its original values before returning.
GradCheckResult finite_diff_check(const LossBuilder& loss, std::span<Matrix> params,
                                  double eps = 1e-5);

}  // namespace ucf::num
