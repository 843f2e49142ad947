#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace elastic::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitNotConverged = 2;

struct DistParams {
  std::vector<std::string> inputs;
  bool closed = false;
  int restarts = 0;
  double eps = 1e-4;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string out;
};

struct MeanParams {
  std::vector<std::string> inputs;
  bool closed = false;
  int degree = 1;
  std::size_t knots = 10;
  double eps = 1e-3;
  int max_iter = 20;
  std::string weights = "uniform";
  std::string fit = "mvt";
  double ridge = 0.0;
  double lambda_step = 1e-3;
  int restarts = 0;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::size_t points = 200;
  std::string out;
  std::string polyline;
};

struct ClusterParams {
  std::vector<std::string> inputs;
  bool closed = false;
  int k = 0;  // 0 selects the elbow rule
  int restarts = 0;
  double eps = 1e-4;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string out;
  std::string matrix_out;
};

struct ClassifyParams {
  std::vector<std::string> inputs;
  std::string labels;
  bool loo = false;
  std::string out;
};

struct SimulateParams {
  std::vector<std::string> inputs;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string out;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DistParams, inputs, closed, restarts, eps, seed, jobs, out)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MeanParams, inputs, closed, degree, knots, eps, max_iter, weights, fit,
                                                ridge, lambda_step, restarts, seed, jobs, points, out, polyline)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ClusterParams, inputs, closed, k, restarts, eps, seed, jobs, out,
                                                matrix_out)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ClassifyParams, inputs, labels, loo, out)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SimulateParams, inputs, seed, jobs, out)

// Each command writes its outputs and a manifest at `<out>.manifest.json`
// and returns an exit code. Errors are thrown.
int cmd_dist(const DistParams& p);
int cmd_mean(const MeanParams& p);
int cmd_cluster(const ClusterParams& p);
int cmd_classify(const ClassifyParams& p);
int cmd_simulate(const SimulateParams& p);

/// Full command line (without the program name). Maps errors to exit codes
/// and reports them on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string& path);

}  // namespace elastic::cli
