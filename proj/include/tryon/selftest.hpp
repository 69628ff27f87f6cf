#pragma once

#include <string>
#include <vector>

namespace tryon {

struct SelfTestResult {
  std::string name;
  bool passed = false;
  std::string detail;  // filled on failure
};

// Cross-checks every module against an independent route: brute-force loops,
// direct formulas, finite differences, Monte-Carlo statistics and geometric
// clipping. Returns one result per oracle.
std::vector<SelfTestResult> run_selftest();

}  // namespace tryon
