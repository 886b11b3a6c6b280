#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "ple/model.hpp"
#include "ple/numeric/param_vector.hpp"

namespace ple::theory {

/// One verified claim: `measured` compared against `threshold` with
/// `relation` ("<=" or ">").
struct CheckRecord {
  std::string check;
  std::string inputs_digest;
  double measured = 0.0;
  double threshold = 0.0;
  std::string relation = "<=";
  bool pass = false;

  nlohmann::json to_json() const;
};

CheckRecord make_record(std::string check, std::string digest, double measured, double threshold,
                        std::string relation = "<=");

// FNV-1a over the bytes of everything added.
class Digest {
 public:
  Digest& add(std::string_view s);
  Digest& add(double v);
  Digest& add(std::uint64_t v);
  Digest& add(std::span<const double> v);
  Digest& add(const ParamVector& p);
  std::string hex() const;

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

struct SuiteOptions {
  std::vector<std::string> checks;  // empty selects every check
  std::size_t instances = 100;      // quadratic instances per check
  std::size_t dim = 5;              // quadratic dimension
  std::size_t probes = 64;          // Hessian probe pairs per block
  std::size_t model_seeds = 5;      // seeds for Hessian and model checks
  std::size_t gradient_seeds = 20;  // seeds for the gradient oracle
  std::uint64_t seed = 0;
  // Model under audit for the gradient checks; a fresh tiny model when empty.
  std::optional<ModelParams> model;
  // Coordinates sampled by the gradient oracle on a supplied model (0 = all).
  std::size_t max_fd_coords = 2000;
};

const std::vector<std::string>& available_checks();

// Raises ArgumentError on unknown check names or probes == 0.
std::vector<CheckRecord> run_checks(const SuiteOptions& options);

bool all_passed(std::span<const CheckRecord> records);
void print_table(std::ostream& out, std::span<const CheckRecord> records);

}  // namespace ple::theory
