#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bemtta {

// Options for the self-verification suite. `inject` flips a known fault
// into the checked path so the suite's failure detection can itself be
// tested; recognized value: "entropy-grad-sign".
struct VerifyOptions {
  std::string inject;
};

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

// Runs the full property suite: gradient sign laws, the zero-sum identity,
// the worked 3-class binding example, finite-difference oracles for every
// hand-derived gradient, the logit-level descent law, and the brute-force
// average-precision oracle.
std::vector<CheckResult> run_verification(const VerifyOptions& options = {});

// Prints one pass/fail line per property with measured tolerances.
// Returns 0 iff every property passed.
int run_verification_report(const VerifyOptions& options, std::ostream& out);

}  // namespace bemtta
