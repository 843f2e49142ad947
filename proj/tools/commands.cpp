#include "commands.hpp"

#include <array>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "elastic/elastic.hpp"
#include "elastic/io.hpp"

#ifndef ELASTIC_CURVES_VERSION
#define ELASTIC_CURVES_VERSION "dev"
#endif

namespace elastic::cli {

using io::Json;

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path);
  const std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 initialisation failed");
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int{md[i]};
  return hex.str();
}

namespace {

void write_manifest(const std::string& command, const Json& params, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs, const std::string& out) {
  Json files_in = Json::array();
  for (const auto& path : inputs) files_in.push_back({{"path", path}, {"sha256", sha256_file(path)}});
  Json files_out = Json::array();
  for (const auto& path : outputs) files_out.push_back({{"path", path}, {"sha256", sha256_file(path)}});
  Json manifest = {{"command", command},
                   {"version", ELASTIC_CURVES_VERSION},
                   {"seed", params.value("seed", Json(nullptr))},
                   {"parameters", params},
                   {"inputs", files_in},
                   {"outputs", files_out}};
  auto f = io::detail::open_output(out + ".manifest.json");
  f << manifest.dump(2) << '\n';
}

void write_json(const std::string& path, const Json& j) {
  auto f = io::detail::open_output(path);
  f << j.dump(2) << '\n';
}

void require_inputs(const std::vector<std::string>& inputs, const std::string& out) {
  if (inputs.empty()) throw ValidationError("no input files given");
  if (out.empty()) throw ValidationError("--out is required");
}

io::CurveSet load_curves(const std::vector<std::string>& paths, bool closed) {
  io::CurveSet all;
  std::map<std::string, std::string> origin;
  for (const auto& path : paths) {
    auto set = io::read_curves(path, closed);
    for (std::size_t i = 0; i < set.curves.size(); ++i) {
      if (origin.count(set.ids[i]))
        throw ValidationError("curve id '" + set.ids[i] + "' appears in both " + origin[set.ids[i]] + " and " + path);
      origin[set.ids[i]] = path;
      all.ids.push_back(set.ids[i]);
      all.curves.push_back(std::move(set.curves[i]));
    }
  }
  std::size_t dropped = 0;
  for (const auto& c : all.curves) dropped += c.dropped_duplicates;
  if (dropped > 0) std::cerr << "warning: dropped " << dropped << " duplicate point(s)\n";
  return all;
}

AlignOptions align_options(double eps, int restarts, std::uint64_t seed) {
  AlignOptions ao;
  ao.eps = eps;
  ao.restarts = restarts;
  ao.seed = seed;
  return ao;
}

bool is_curve_file(const std::string& path) {
  auto in = io::detail::open_input(path);
  std::string line;
  while (std::getline(in, line) && io::detail::trim(line).empty()) {
  }
  const auto fields = io::detail::split(line);
  return fields.size() >= 2 && fields[0] == "curve_id" && fields[1] == "t";
}

}  // namespace

int cmd_dist(const DistParams& p) {
  require_inputs(p.inputs, p.out);
  const auto set = load_curves(p.inputs, p.closed);
  if (set.curves.size() < 2) throw ValidationError("dist needs at least 2 curves");
  const AlignOptions ao = align_options(p.eps, p.restarts, p.seed);
  int code = kExitOk;
  if (set.curves.size() == 2) {
    const auto r = elastic_align(set.curves[0], set.curves[1], {ao, PolygonRole::Auto});
    Json j = io::to_json(r.alignment);
    j["ids"] = set.ids;
    j["warped"] = set.ids[r.first_is_polygon ? 0 : 1];
    write_json(p.out, j);
    if (!r.alignment.converged) code = kExitNotConverged;
  } else {
    const auto m = distance_matrix(set.curves, set.ids, {ao, p.jobs});
    auto f = io::detail::open_output(p.out);
    io::write_matrix(f, m);
  }
  write_manifest("dist", Json(p), p.inputs, {p.out}, p.out);
  return code;
}

int cmd_mean(const MeanParams& p) {
  require_inputs(p.inputs, p.out);
  if (p.points < 2) throw ValidationError("--points must be at least 2");
  const auto set = load_curves(p.inputs, p.closed);
  MeanOptions mo;
  mo.degree = p.degree;
  mo.inner_knots = p.knots;
  mo.eps = p.eps;
  mo.max_iters = p.max_iter;
  if (p.weights == "uniform") mo.weights = WeightScheme::Uniform;
  else if (p.weights == "trapezoid") mo.weights = WeightScheme::Trapezoid;
  else throw ValidationError("--weights must be uniform or trapezoid");
  if (p.fit == "mvt") mo.fit = FitScheme::MeanValue;
  else if (p.fit == "linear") mo.fit = FitScheme::PiecewiseLinear;
  else throw ValidationError("--fit must be mvt or linear");
  mo.ridge = p.ridge;
  mo.lambda_step = p.lambda_step;
  mo.align = align_options(1e-4, p.restarts, p.seed);
  mo.jobs = p.jobs;

  ElasticMeanResult result;
  try {
    result = p.closed ? elastic_mean_closed(set.curves, mo) : elastic_mean_open(set.curves, mo);
  } catch (const FitError& e) {
    throw FitError(std::string(e.what()) + " (try fewer --knots or a positive --ridge)");
  }

  Json j = io::to_json(result);
  j["ids"] = set.ids;
  write_json(p.out, j);

  // Polyline for plotting, translated onto the average vertex centroid of the data.
  std::vector<double> grid(p.points);
  for (std::size_t i = 0; i < p.points; ++i) grid[i] = static_cast<double>(i) / static_cast<double>(p.points - 1);
  auto poly = srv_back_transform(result.mean, Eigen::VectorXd::Zero(result.mean.dim()), grid);
  Eigen::RowVectorXd centre = Eigen::RowVectorXd::Zero(poly.points.cols());
  for (const auto& c : set.curves) centre += c.points.colwise().mean() / static_cast<double>(set.curves.size());
  poly.points.rowwise() += centre - poly.points.colwise().mean();
  const std::string polyline = p.polyline.empty() ? p.out + ".polyline.csv" : p.polyline;
  {
    auto f = io::detail::open_output(polyline);
    io::write_curves(f, {{"mean"}, {poly}});
  }
  write_manifest("mean", Json(p), p.inputs, {p.out, polyline}, p.out);
  return result.converged ? kExitOk : kExitNotConverged;
}

int cmd_cluster(const ClusterParams& p) {
  require_inputs(p.inputs, p.out);
  if (p.k < 0) throw ValidationError("--k must be positive");
  DistanceMatrix m;
  if (is_curve_file(p.inputs.front())) {
    const auto set = load_curves(p.inputs, p.closed);
    m = distance_matrix(set.curves, set.ids, {align_options(p.eps, p.restarts, p.seed), p.jobs});
  } else {
    if (p.inputs.size() != 1) throw ValidationError("cluster takes a single distance-matrix file");
    auto in = io::detail::open_input(p.inputs.front());
    m = io::read_matrix(in, p.inputs.front());
  }
  const auto clustering = average_linkage(m, p.k > 0 ? std::optional(p.k) : std::nullopt);
  {
    auto f = io::detail::open_output(p.out);
    io::write_labels(f, m.labels, clustering.labels);
  }
  std::vector<std::string> outputs{p.out};
  if (!p.matrix_out.empty()) {
    auto f = io::detail::open_output(p.matrix_out);
    io::write_matrix(f, m);
    outputs.push_back(p.matrix_out);
  }
  write_manifest("cluster", Json(p), p.inputs, outputs, p.out);
  return kExitOk;
}

int cmd_classify(const ClassifyParams& p) {
  require_inputs(p.inputs, p.out);
  if (p.inputs.size() != 1) throw ValidationError("classify takes a single features file");
  if (p.labels.empty()) throw ValidationError("--labels is required");
  auto fin = io::detail::open_input(p.inputs.front());
  const auto features = io::read_id_table(fin, p.inputs.front());
  auto lin = io::detail::open_input(p.labels);
  const auto label_table = io::read_id_table(lin, p.labels);
  if (label_table.columns.size() != 1) throw ValidationError(p.labels + ": expected columns curve_id,label");

  std::map<std::string, int> by_id;
  for (std::size_t i = 0; i < label_table.ids.size(); ++i) {
    const double v = label_table.values(static_cast<Eigen::Index>(i), 0);
    if (v != 0.0 && v != 1.0) throw ValidationError(p.labels + ": label of '" + label_table.ids[i] + "' must be 0 or 1");
    by_id[label_table.ids[i]] = static_cast<int>(v);
  }
  std::vector<int> labels;
  for (const auto& id : features.ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError(p.labels + ": no label for '" + id + "'");
    labels.push_back(it->second);
  }
  const auto classifier = fit_threshold(features.values, labels);
  const std::optional<double> loo = p.loo ? std::optional(loo_cv(features.values, labels)) : std::nullopt;
  Json j = io::to_json(classifier, loo);
  j["features"] = features.columns;
  write_json(p.out, j);
  write_manifest("classify", Json(p), {p.inputs.front(), p.labels}, {p.out}, p.out);
  return kExitOk;
}

int cmd_simulate(const SimulateParams& p) {
  require_inputs(p.inputs, p.out);
  if (p.inputs.size() != 1) throw ValidationError("simulate takes a single config file");
  Json config = io::read_json(p.inputs.front());
  if (!config.is_object()) throw ValidationError(p.inputs.front() + ": config must be a JSON object");
  if (!config.contains("seed")) config["seed"] = p.seed;
  const auto cfg = io::simulation_from_json(config);
  io::CurveSet set;
  set.curves = sample_curves(cfg, p.jobs);
  for (std::size_t i = 0; i < set.curves.size(); ++i) set.ids.push_back("curve_" + std::to_string(i + 1));
  {
    auto f = io::detail::open_output(p.out);
    io::write_curves(f, set);
  }
  Json params = p;
  params["seed"] = cfg.seed;
  write_manifest("simulate", params, p.inputs, {p.out}, p.out);
  return kExitOk;
}

// ---------------------------------------------------------------------------

namespace {

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("ELASTIC_CURVES_SEED");
  if (!raw || !*raw) return std::nullopt;
  std::uint64_t value = 0;
  const std::string s(raw);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), value);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ValidationError("ELASTIC_CURVES_SEED must be a non-negative integer");
  return value;
}

/// Config keys override flags. A run manifest works as a config too.
template <typename Params>
Params merge_config(Params params, const std::string& config_path) {
  if (config_path.empty()) return params;
  Json config = io::read_json(config_path);
  if (config.contains("parameters")) config = config["parameters"];
  if (!config.is_object()) throw ValidationError(config_path + ": config must be a JSON object");
  Json merged = params;
  for (const auto& [key, value] : config.items()) {
    if (!merged.contains(key)) throw ValidationError(config_path + ": unknown key '" + key + "'");
    merged[key] = value;
  }
  try {
    return merged.get<Params>();
  } catch (const Json::exception& e) {
    throw ValidationError(config_path + ": " + e.what());
  }
}

void add_jobs(CLI::App* sub, std::size_t& jobs) {
  jobs = default_jobs();
  sub->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Elastic distances, means, clustering and classification for sparsely observed curves",
               "elastic-curves"};
  app.set_version_flag("--version", ELASTIC_CURVES_VERSION);
  app.require_subcommand(1);
  std::string config;
  std::optional<std::uint64_t> seed_flag;

  DistParams dist;
  auto* dist_cmd = app.add_subcommand("dist", "Elastic distance of two curves, or a distance matrix for more");
  dist_cmd->add_option("inputs", dist.inputs, "Curve CSV files (curve_id,t,x1,...)");
  dist_cmd->add_flag("--closed", dist.closed, "Treat curves as closed");
  dist_cmd->add_option("--restarts", dist.restarts, "Random restarts per alignment")->check(CLI::NonNegativeNumber);
  dist_cmd->add_option("--eps", dist.eps, "Alignment stopping tolerance")->check(CLI::PositiveNumber);
  dist_cmd->add_option("--seed", seed_flag, "Seed for random restarts");
  add_jobs(dist_cmd, dist.jobs);
  dist_cmd->add_option("-o,--out", dist.out, "Output JSON (2 curves) or matrix CSV");
  dist_cmd->add_option("--config", config, "JSON config or run manifest; its values override flags");

  MeanParams mean;
  auto* mean_cmd = app.add_subcommand("mean", "Elastic spline mean of a sample of curves");
  mean_cmd->add_option("inputs", mean.inputs, "Curve CSV files");
  mean_cmd->add_flag("--closed", mean.closed, "Treat curves as closed");
  mean_cmd->add_option("--degree", mean.degree, "SRV spline degree")->check(CLI::IsMember({0, 1}));
  mean_cmd->add_option("--knots", mean.knots, "Number of equispaced inner knots");
  mean_cmd->add_option("--eps", mean.eps, "Convergence tolerance on coefficients")->check(CLI::PositiveNumber);
  mean_cmd->add_option("--max-iter", mean.max_iter, "Outer iteration budget")->check(CLI::PositiveNumber);
  mean_cmd->add_option("--weights", mean.weights, "Sample weights")->check(CLI::IsMember({"uniform", "trapezoid"}));
  mean_cmd->add_option("--fit", mean.fit, "Fitting-step approximation")->check(CLI::IsMember({"mvt", "linear"}));
  mean_cmd->add_option("--ridge", mean.ridge, "Ridge penalty on coefficients")->check(CLI::NonNegativeNumber);
  mean_cmd->add_option("--lambda-step", mean.lambda_step, "Closed curves: penalty weight growth per iteration")
      ->check(CLI::PositiveNumber);
  mean_cmd->add_option("--restarts", mean.restarts, "Random restarts per alignment")->check(CLI::NonNegativeNumber);
  mean_cmd->add_option("--seed", seed_flag, "Seed for random restarts");
  add_jobs(mean_cmd, mean.jobs);
  mean_cmd->add_option("--points", mean.points, "Points in the exported mean polyline");
  mean_cmd->add_option("-o,--out", mean.out, "Output JSON");
  mean_cmd->add_option("--polyline", mean.polyline, "Polyline CSV (default <out>.polyline.csv)");
  mean_cmd->add_option("--config", config, "JSON config or run manifest; its values override flags");

  ClusterParams cluster;
  bool elbow = false;
  auto* cluster_cmd = app.add_subcommand("cluster", "Average-linkage clustering of curves or a distance matrix");
  cluster_cmd->add_option("inputs", cluster.inputs, "Curve CSV files or one distance-matrix CSV");
  cluster_cmd->add_flag("--closed", cluster.closed, "Treat curves as closed");
  auto* k_opt = cluster_cmd->add_option("--k", cluster.k, "Number of clusters")->check(CLI::PositiveNumber);
  cluster_cmd->add_flag("--elbow", elbow, "Choose the number of clusters by the elbow rule (default)")->excludes(k_opt);
  cluster_cmd->add_option("--restarts", cluster.restarts, "Random restarts per alignment")
      ->check(CLI::NonNegativeNumber);
  cluster_cmd->add_option("--eps", cluster.eps, "Alignment stopping tolerance")->check(CLI::PositiveNumber);
  cluster_cmd->add_option("--seed", seed_flag, "Seed for random restarts");
  add_jobs(cluster_cmd, cluster.jobs);
  cluster_cmd->add_option("-o,--out", cluster.out, "Output labels CSV");
  cluster_cmd->add_option("--matrix-out", cluster.matrix_out, "Also write the distance matrix here");
  cluster_cmd->add_option("--config", config, "JSON config or run manifest; its values override flags");

  ClassifyParams classify;
  auto* classify_cmd = app.add_subcommand("classify", "Threshold classifier on one or two features");
  classify_cmd->add_option("inputs", classify.inputs, "Features CSV (curve_id,f1[,f2])");
  classify_cmd->add_option("--labels", classify.labels, "Labels CSV (curve_id,label with labels 0/1)");
  classify_cmd->add_flag("--loo", classify.loo, "Report leave-one-out accuracy");
  classify_cmd->add_option("-o,--out", classify.out, "Output classifier JSON");
  classify_cmd->add_option("--config", config, "JSON config or run manifest; its values override flags");

  SimulateParams simulate;
  auto* simulate_cmd = app.add_subcommand("simulate", "Sample noisy curves from a spline template");
  simulate_cmd->add_option("inputs", simulate.inputs, "Simulation config JSON");
  simulate_cmd->add_option("--seed", seed_flag, "Seed unless the config sets one");
  add_jobs(simulate_cmd, simulate.jobs);
  simulate_cmd->add_option("-o,--out", simulate.out, "Output curve CSV");
  simulate_cmd->add_option("--config", config, "JSON run manifest; its values override flags");

  std::vector<std::string> argv_store{"elastic-curves"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? kExitOk : kExitInvalid;
    }
    std::uint64_t seed = 0;
    if (seed_flag) seed = *seed_flag;
    else if (const auto env = env_seed()) seed = *env;

    int code = kExitOk;
    std::string written;
    if (dist_cmd->parsed()) {
      dist.seed = seed;
      dist = merge_config(dist, config);
      code = cmd_dist(dist);
      written = dist.out;
    } else if (mean_cmd->parsed()) {
      mean.seed = seed;
      mean = merge_config(mean, config);
      code = cmd_mean(mean);
      written = mean.out;
    } else if (cluster_cmd->parsed()) {
      cluster.seed = seed;
      cluster = merge_config(cluster, config);
      code = cmd_cluster(cluster);
      written = cluster.out;
    } else if (classify_cmd->parsed()) {
      classify = merge_config(classify, config);
      code = cmd_classify(classify);
      written = classify.out;
    } else {
      simulate.seed = seed;
      simulate = merge_config(simulate, config);
      code = cmd_simulate(simulate);
      written = simulate.out;
    }
    out << "wrote " << written << '\n';
    if (code == kExitNotConverged) err << "warning: did not converge; partial results written\n";
    return code;
  } catch (const ConvergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNotConverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  }
}

}  // namespace elastic::cli
