#pragma once

#include <cstdint>
#include <string>

#include "demo/metrics.hpp"

namespace demo::cli {

/// Exit-code contract: 0 success, 1 usage error, 2 data error,
/// 3 numeric error.
int run(int argc, const char* const* argv);

struct TrainArgs {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  std::string mode = "highway";
  std::uint64_t seed = 1;
  int epochs = 10;
  int batch = 8;
};
void cmd_train(const TrainArgs& args);

struct PredictArgs {
  std::string checkpoint;
  std::string scenes;
  std::string out;
  std::string config_path;
  std::string mode = "highway";
};
void cmd_predict(const PredictArgs& args);

struct EvaluateArgs {
  std::string predictions;
  std::string ground_truth;
  std::string out_dir;
  std::string config_path;
  std::string mode = "highway";
  bool plot = false;
};
MetricReport cmd_evaluate(const EvaluateArgs& args);

struct SimulateArgs {
  std::string kind = "mixed";
  int count = 10;
  std::uint64_t seed = 1;
  std::string out_dir;
  double noise_std = 0.1;
  std::string mode = "highway";
  std::string config_path;
};
void cmd_simulate(const SimulateArgs& args);

/// Runs the invariant suite and prints one pass/fail line per check plus the
/// single-scene inference latency. Returns 0 iff everything passed.
int cmd_verify(const std::string& config_path);

/// SHA-256 hex digest (run-manifest content hashing).
std::string sha256_hex(const std::string& bytes);

}  // namespace demo::cli
