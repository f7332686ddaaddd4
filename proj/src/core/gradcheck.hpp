#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace kafshot {

struct GradcheckOptions {
  int seeds = 20;
  std::uint64_t base_seed = 0;
  double tolerance = 1e-4;
  double step = 1e-3;  // five-point central stencil
  // Test hook: perturbs the analytic gradient of the named entry so the
  // harness can be shown to fail.
  std::string corrupt;
};

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::uint64_t worst_seed = 0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t elements = 0;  // gradient elements compared over all seeds
  bool passed = true;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool passed() const;
};

/// Element-wise |a - n| / max(|a|, |n|, 1e-6).
double relative_error(double analytic, double numeric);

/// Central finite differences against every analytic backward pass: conv2d,
/// maxpool2d, linear, relu, kaf, kaf2d, contrastive loss, matching NLL, plus a
/// small composed network, a Siamese pair and a matching episode end to end.
GradcheckReport run_gradcheck(const GradcheckOptions& opts = {});

/// Entry names in run order.
std::vector<std::string> gradcheck_entry_names();

}  // namespace kafshot
