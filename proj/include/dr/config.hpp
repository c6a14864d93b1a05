#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dr/strategies.hpp"

namespace dr {

/// What data the stream is built from and how it is carved up.
struct ScenarioConfig {
  std::string kind = "split";     // split | permuted
  std::string dataset = "blobs";  // blobs | mnist
  std::uint64_t seed = 71;        // data generation and pixel permutations
  std::size_t T = 5;              // permuted only; split derives T
  std::size_t classes_per_exp = 2;
  std::size_t downscale = 1;
  std::size_t subsample_per_class = 0;  // 0 = keep all
  double val_fraction = 0.05;
  // blobs family
  int blob_classes = 4;
  std::size_t blob_per_class = 384;
  std::size_t blob_test_per_class = 64;
  std::size_t blob_dim = 2;
  double blob_spread = 0.33;
};

struct TimingConfig {
  std::vector<std::size_t> s_grid{2, 4, 8, 16};
  std::vector<std::size_t> r_grid{10, 20, 40};
  std::size_t fixed_r = 20;
  std::size_t fixed_s = 10;
  std::size_t repeats = 3;
};

struct RunConfig {
  std::string id;  // empty = derived from the config hash
  std::string out_dir = "results";
  std::vector<std::uint64_t> seeds{1};
  std::vector<Strategy> strategies{Strategy::naive, Strategy::simple_replay,
                                   Strategy::distilled_replay,
                                   Strategy::cumulative};
  bool sequential = true;
  ScenarioConfig scenario;
  std::string model = "mlp";        // mlp | tiny_mlp | lenet5
  std::vector<std::size_t> hidden;  // empty = model default
  TrainConfig train;
  TimingConfig timing;
};

/// INI-style parser: [section] headers, key = value lines, # or ; comments.
/// Unknown sections or keys are FormatErrors (configs are contracts, typos
/// should not pass silently).
RunConfig parse_config(std::istream& in, const std::string& origin);
RunConfig parse_config_file(const std::string& path);

/// All contract violations in the config; empty means usable.
std::vector<std::string> validate_config(const RunConfig& cfg);

/// validate_config, throwing ContractError listing every problem.
void require_valid(const RunConfig& cfg);

}  // namespace dr
