#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "commands.hpp"
#include "elastic/io.hpp"
#include "support.hpp"

using namespace elastic;
namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("elastic_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    unsetenv("ELASTIC_CURVES_SEED");
  }
  void TearDown() override {
    fs::remove_all(dir_);
    unsetenv("ELASTIC_CURVES_SEED");
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(path(name)) << text;
    return path(name);
  }

  int run(std::vector<std::string> args) {
    out_.str("");
    err_.str("");
    return cli::run(args, out_, err_);
  }

  std::string err() const { return err_.str(); }

  fs::path dir_;
  std::ostringstream out_;
  std::ostringstream err_;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

io::Json read_json(const std::string& path) { return io::Json::parse(slurp(path)); }

std::string curves_csv(const std::vector<DiscreteCurve>& curves) {
  io::CurveSet set;
  for (std::size_t i = 0; i < curves.size(); ++i) {
    set.ids.push_back("c" + std::to_string(i));
    set.curves.push_back(curves[i]);
  }
  std::ostringstream s;
  io::write_curves(s, set);
  return s.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// CSV input and output

TEST(ReadCurves, ReportsLineNumbers) {
  const auto message = [](const std::string& text) {
    std::istringstream in(text);
    try {
      io::read_curves(in, false, "f.csv");
    } catch (const ValidationError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("curve_id,t,x1,x2\na,0,0,0\na,abc,1,1\n").find("f.csv:3:"), std::string::npos);
  EXPECT_NE(message("curve_id,t,x1,x2\na,0,0,0\n\na,1,1\n").find("f.csv:4:"), std::string::npos);
  EXPECT_NE(message("id,t,x1\na,0,0\n").find("f.csv:1:"), std::string::npos);
  EXPECT_NE(message("curve_id,t,x1\na,0,0\na,1,1\nb,0,1\nb,1,2\na,2,1\n").find("f.csv:6:"), std::string::npos);
  EXPECT_NE(message("curve_id,t,x1\na,0,0\na,,1\n").find("f.csv:3:"), std::string::npos);
  EXPECT_NE(message("curve_id,t,x1\na,0.5,0\na,0.5,1\n").find("f.csv:3:"), std::string::npos);
  EXPECT_NE(message("curve_id,t,x1\na,0,nan\na,1,1\n").find("f.csv:2:"), std::string::npos);
  EXPECT_NE(message("curve_id,t,x1\n").find("no curves"), std::string::npos);
}

TEST(ReadCurves, MissingTMeansArcLength) {
  std::istringstream in("curve_id,t,x1,x2\na,,0,0\na,,3,0\na,,3,1\n");
  const auto set = io::read_curves(in, false);
  EXPECT_EQ(set.curves[0].params, (std::vector<double>{0.0, 0.75, 1.0}));
}

TEST(ReadCurves, RoundTripIsExact) {
  std::mt19937_64 rng(80);
  std::vector<DiscreteCurve> curves;
  for (int i = 0; i < 4; ++i) curves.push_back(testing_support::random_polygon(rng, 5 + i, false, 3));
  std::istringstream in(curves_csv(curves));
  const auto back = io::read_curves(in, false);
  ASSERT_EQ(back.curves.size(), curves.size());
  for (std::size_t i = 0; i < curves.size(); ++i) {
    EXPECT_EQ(back.curves[i].points, curves[i].points);
    EXPECT_EQ(back.curves[i].params, curves[i].params);
  }
}

TEST(Matrix, RoundTripIsExact) {
  DistanceMatrix m;
  m.labels = {"a", "b", "c"};
  m.values = (Eigen::MatrixXd(3, 3) << 0, 0.1, 1.0 / 3.0, 0.1, 0, 2e-300, 1.0 / 3.0, 2e-300, 0).finished();
  std::ostringstream s;
  io::write_matrix(s, m);
  std::istringstream in(s.str());
  const auto back = io::read_matrix(in);
  EXPECT_EQ(back.values, m.values);
  EXPECT_EQ(back.labels, m.labels);
  std::istringstream asym("a,b\n0,1\n2,0\n");
  EXPECT_THROW(io::read_matrix(asym), ValidationError);
}

TEST(Json, SplineRoundTrip) {
  std::mt19937_64 rng(81);
  const auto s = testing_support::random_spline(rng, 1, 3);
  const auto back = io::spline_from_json(io::Json::parse(io::to_json(s).dump()));
  EXPECT_EQ(back.knots, s.knots);
  EXPECT_EQ(back.coefficients, s.coefficients);
  EXPECT_THROW(io::spline_from_json(io::Json::parse(R"({"degree": 3})")), ValidationError);
}

// ---------------------------------------------------------------------------
// Command line

TEST_F(CliTest, DistOnNonUniqueFixture) {
  ASSERT_EQ(run({"dist", testing_support::testdata("nonunique_open.csv"), "-o", path("d.json")}), cli::kExitOk)
      << err();
  const auto j = read_json(path("d.json"));
  EXPECT_NEAR(j["phi"].get<double>(), 9.0662816, 1e-6);
  EXPECT_NEAR(j["distance"].get<double>(), 2.5233781, 1e-6);
  EXPECT_EQ(j["t"][1].get<double>(), 0.25);
  EXPECT_EQ(j["warped"], "q");
  const auto manifest = read_json(path("d.json.manifest.json"));
  EXPECT_EQ(manifest["command"], "dist");
  EXPECT_EQ(manifest["outputs"][0]["sha256"], cli::sha256_file(path("d.json")));
  EXPECT_EQ(manifest["inputs"][0]["sha256"].get<std::string>().size(), 64u);
}

TEST_F(CliTest, DistOfIdenticalCurvesIsZero) {
  const auto file = write("same.csv", "curve_id,t,x1,x2\na,,0,0\na,,1,0\na,,1,1\nb,,0,0\nb,,1,0\nb,,1,1\n");
  ASSERT_EQ(run({"dist", file, "-o", path("d.json")}), cli::kExitOk) << err();
  EXPECT_LE(read_json(path("d.json"))["distance"].get<double>(), 1e-8);
}

TEST_F(CliTest, DistMatrixForMoreCurves) {
  std::mt19937_64 rng(82);
  std::vector<DiscreteCurve> curves;
  for (int i = 0; i < 4; ++i) curves.push_back(testing_support::random_polygon(rng, 6));
  const auto file = write("c.csv", curves_csv(curves));
  ASSERT_EQ(run({"dist", file, "-o", path("m.csv"), "--jobs", "2"}), cli::kExitOk) << err();
  std::ifstream in(path("m.csv"));
  const auto m = io::read_matrix(in);
  EXPECT_EQ(m.labels, (std::vector<std::string>{"c0", "c1", "c2", "c3"}));
  EXPECT_NEAR(m.values(0, 1), elastic_distance(curves[0], curves[1]), 1e-3);
}

TEST_F(CliTest, InvalidInputExitsWithOne) {
  const auto bad = write("bad.csv", "curve_id,t,x1,x2\na,0,0,0\na,zz,1,1\nb,0,0,0\nb,1,1,1\n");
  EXPECT_EQ(run({"dist", bad, "-o", path("d.json")}), cli::kExitInvalid);
  EXPECT_NE(err().find("bad.csv:3:"), std::string::npos) << err();
  EXPECT_FALSE(fs::exists(path("d.json")));
  EXPECT_EQ(run({"dist", path("missing.csv"), "-o", path("d.json")}), cli::kExitInvalid);
  EXPECT_EQ(run({"dist", bad}), cli::kExitInvalid);
  EXPECT_EQ(run({"dist", bad, "--bogus"}), cli::kExitInvalid);
  EXPECT_EQ(run({}), cli::kExitInvalid);
  EXPECT_EQ(run({"--version"}), cli::kExitOk);
}

TEST_F(CliTest, MeanReportsNonConvergenceWithTwo) {
  std::mt19937_64 rng(83);
  const auto groups = testing_support::grouped_curves(rng, 1, 4, 12, 0.3);
  const auto file = write("c.csv", curves_csv(groups.curves));
  ASSERT_EQ(run({"mean", file, "-o", path("m.json"), "--max-iter", "1", "--knots", "3"}), cli::kExitNotConverged)
      << err();
  const auto j = read_json(path("m.json"));
  EXPECT_FALSE(j["converged"].get<bool>());
  EXPECT_EQ(j["mean"]["knots"].size(), 5u);
  EXPECT_TRUE(fs::exists(path("m.json.polyline.csv")));
  std::ifstream poly(path("m.json.polyline.csv"));
  EXPECT_EQ(io::read_curves(poly, false).curves[0].points.rows(), 200);
}

TEST_F(CliTest, MeanFitErrorSuggestsRemedy) {
  const auto file = write("c.csv", "curve_id,t,x1,x2\na,,0,0\na,,1,0\na,,1,1\n");
  EXPECT_EQ(run({"mean", file, "-o", path("m.json"), "--knots", "40"}), cli::kExitInvalid);
  EXPECT_NE(err().find("--ridge"), std::string::npos) << err();
}

TEST_F(CliTest, MeanDegreesProduceDifferentResults) {
  std::mt19937_64 rng(84);
  const auto groups = testing_support::grouped_curves(rng, 1, 3, 10, 0.1);
  const auto file = write("c.csv", curves_csv(groups.curves));
  ASSERT_NE(run({"mean", file, "-o", path("d0.json"), "--degree", "0", "--knots", "4"}), cli::kExitInvalid);
  ASSERT_NE(run({"mean", file, "-o", path("d1.json"), "--degree", "1", "--knots", "4"}), cli::kExitInvalid);
  const auto a = read_json(path("d0.json"));
  const auto b = read_json(path("d1.json"));
  EXPECT_EQ(a["mean"]["degree"], 0);
  EXPECT_EQ(b["mean"]["degree"], 1);
  EXPECT_EQ(a["mean"]["coefficients"].size(), 5u);
  EXPECT_EQ(b["mean"]["coefficients"].size(), 6u);
}

TEST_F(CliTest, ManifestReplayIsByteIdentical) {
  std::mt19937_64 rng(85);
  const auto groups = testing_support::grouped_curves(rng, 1, 3, 10, 0.2);
  const auto file = write("c.csv", curves_csv(groups.curves));
  ASSERT_NE(run({"mean", file, "-o", path("m.json"), "--knots", "4", "--restarts", "2", "--seed", "17"}),
            cli::kExitInvalid)
      << err();
  const auto first = slurp(path("m.json"));
  const auto first_poly = slurp(path("m.json.polyline.csv"));
  fs::copy_file(path("m.json.manifest.json"), path("replay.json"));
  fs::remove(path("m.json"));
  ASSERT_NE(run({"mean", "--config", path("replay.json")}), cli::kExitInvalid) << err();
  EXPECT_EQ(slurp(path("m.json")), first);
  EXPECT_EQ(slurp(path("m.json.polyline.csv")), first_poly);
  EXPECT_EQ(read_json(path("replay.json"))["seed"], 17);
}

TEST_F(CliTest, SimulateIsDeterministicAndSeeded) {
  const auto config = write("sim.json", R"({"template": "heart", "sigma": 1.0, "n": 3, "m_min": 10, "m_max": 14})");
  ASSERT_EQ(run({"simulate", config, "-o", path("a.csv"), "--seed", "3"}), cli::kExitOk) << err();
  ASSERT_EQ(run({"simulate", config, "-o", path("b.csv"), "--seed", "3", "--jobs", "2"}), cli::kExitOk);
  ASSERT_EQ(run({"simulate", config, "-o", path("c.csv"), "--seed", "4"}), cli::kExitOk);
  EXPECT_EQ(slurp(path("a.csv")), slurp(path("b.csv")));
  EXPECT_NE(slurp(path("a.csv")), slurp(path("c.csv")));
  std::ifstream in(path("a.csv"));
  const auto set = io::read_curves(in, true);
  EXPECT_EQ(set.ids, (std::vector<std::string>{"curve_1", "curve_2", "curve_3"}));

  // The environment seed applies when no flag is given; the flag wins.
  setenv("ELASTIC_CURVES_SEED", "3", 1);
  ASSERT_EQ(run({"simulate", config, "-o", path("env.csv")}), cli::kExitOk);
  EXPECT_EQ(slurp(path("env.csv")), slurp(path("a.csv")));
  ASSERT_EQ(run({"simulate", config, "-o", path("flag.csv"), "--seed", "4"}), cli::kExitOk);
  EXPECT_EQ(slurp(path("flag.csv")), slurp(path("c.csv")));
  setenv("ELASTIC_CURVES_SEED", "x", 1);
  EXPECT_EQ(run({"simulate", config, "-o", path("bad.csv")}), cli::kExitInvalid);
  unsetenv("ELASTIC_CURVES_SEED");

  // A seed inside the config wins over the flag.
  const auto seeded = write("seeded.json", R"({"template": "heart", "sigma": 1.0, "n": 3, "m_min": 10,
                                               "m_max": 14, "seed": 3})");
  ASSERT_EQ(run({"simulate", seeded, "-o", path("s.csv"), "--seed", "4"}), cli::kExitOk);
  EXPECT_EQ(slurp(path("s.csv")), slurp(path("a.csv")));
}

TEST_F(CliTest, SimulateRejectsBadConfig) {
  EXPECT_EQ(run({"simulate", write("a.json", R"({"template": "circle"})"), "-o", path("o.csv")}), cli::kExitInvalid);
  EXPECT_EQ(run({"simulate", write("b.json", R"({"sigma": -1})"), "-o", path("o.csv")}), cli::kExitInvalid);
  EXPECT_EQ(run({"simulate", write("c.json", "{not json"), "-o", path("o.csv")}), cli::kExitInvalid);
}

TEST_F(CliTest, ConfigOverridesFlags) {
  const auto file = testing_support::testdata("nonunique_open.csv");
  const auto config = write("cfg.json", R"({"restarts": 4, "eps": 1e-6})");
  ASSERT_EQ(run({"dist", file, "-o", path("d.json"), "--restarts", "1", "--config", config}), cli::kExitOk)
      << err();
  const auto manifest = read_json(path("d.json.manifest.json"));
  EXPECT_EQ(manifest["parameters"]["restarts"], 4);
  EXPECT_EQ(manifest["parameters"]["eps"], 1e-6);
  const auto unknown = write("unknown.json", R"({"restart": 4})");
  EXPECT_EQ(run({"dist", file, "-o", path("d.json"), "--config", unknown}), cli::kExitInvalid);
  EXPECT_NE(err().find("restart"), std::string::npos);
}

TEST_F(CliTest, ClusterFourGroupsWithElbow) {
  std::mt19937_64 rng(86);
  const auto groups = testing_support::grouped_curves(rng, 4, 5, 8, 0.02);
  const auto file = write("c.csv", curves_csv(groups.curves));
  ASSERT_EQ(run({"cluster", file, "--elbow", "-o", path("labels.csv"), "--matrix-out", path("m.csv")}),
            cli::kExitOk)
      << err();
  std::ifstream in(path("labels.csv"));
  const auto table = io::read_id_table(in);
  ASSERT_EQ(table.values.rows(), 20);
  for (int g = 0; g < 4; ++g)
    for (int i = 1; i < 5; ++i) EXPECT_EQ(table.values(5 * g + i, 0), table.values(5 * g, 0));
  std::set<double> distinct(table.values.data(), table.values.data() + table.values.size());
  EXPECT_EQ(distinct.size(), 4u);

  // The saved matrix clusters the same way.
  ASSERT_EQ(run({"cluster", path("m.csv"), "-o", path("again.csv")}), cli::kExitOk) << err();
  EXPECT_EQ(slurp(path("again.csv")), slurp(path("labels.csv")));
  ASSERT_EQ(run({"cluster", path("m.csv"), "--k", "2", "-o", path("two.csv")}), cli::kExitOk);
  EXPECT_EQ(run({"cluster", path("m.csv"), "--k", "2", "--elbow", "-o", path("x.csv")}), cli::kExitInvalid);
}

TEST_F(CliTest, ClassifySeparableWithLoo) {
  std::string features = "curve_id,f1\n";
  std::string labels = "curve_id,label\n";
  for (int i = 0; i < 12; ++i) {
    features += "s" + std::to_string(i) + "," + std::to_string(i < 6 ? 0.1 * i : 2.0 + 0.1 * i) + "\n";
    labels += "s" + std::to_string(i) + "," + (i < 6 ? "0" : "1") + "\n";
  }
  const auto f = write("f.csv", features);
  const auto l = write("l.csv", labels);
  ASSERT_EQ(run({"classify", f, "--labels", l, "--loo", "-o", path("c.json")}), cli::kExitOk) << err();
  const auto j = read_json(path("c.json"));
  EXPECT_EQ(j["loo_accuracy"].get<double>(), 1.0);
  EXPECT_EQ(j["train_accuracy"].get<double>(), 1.0);
  EXPECT_EQ(j["rule"], "single");
  const auto missing = write("l2.csv", "curve_id,label\ns0,0\n");
  EXPECT_EQ(run({"classify", f, "--labels", missing, "-o", path("c.json")}), cli::kExitInvalid);
  const auto bad = write("l3.csv", "curve_id,label\ns0,2\n");
  EXPECT_EQ(run({"classify", f, "--labels", bad, "-o", path("c.json")}), cli::kExitInvalid);
}
