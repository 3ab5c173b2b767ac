#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gora {

struct VerifyCase {
  std::string suite;
  std::string name;
  double measured = 0.0;
  double bound = 0.0;
  bool pass = false;
};

/// projection, frobenius, ddp, allocation, compressor, init_step,
/// reconstruction, gradients, autotune, adaptive_n.
std::vector<std::string> verify_suites();

/// Runs one suite, or every suite for "all". Unknown names raise ConfigError.
std::vector<VerifyCase> run_verify(const std::string& suite, std::uint64_t seed = 0);

/// suite,case,measured,bound,pass
std::string verify_csv(const std::vector<VerifyCase>& cases);

}  // namespace gora
