#pragma once

#include <string>
#include <vector>

namespace medcl {

// Fault-injection hooks for exercising the failure paths in tests: a
// corrupted Sinkhorn normalization must trip the row-stochasticity check.
struct SelfCheckOptions {
  bool corrupt_sinkhorn = false;
};

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;  // one-line summary, or the failure context
};

struct SelfCheckReport {
  std::vector<CheckResult> checks;
  bool all_passed() const;
};

// The fast acceptance subset: Sinkhorn oracles, gradient spot checks for
// every loss and the network, mix identities, the anatomy-consistency fixed
// point, and metric oracles. Finishes in seconds.
SelfCheckReport run_selfcheck(const SelfCheckOptions& options = {});

}  // namespace medcl
