#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "taxpose/checkpoint.hpp"
#include "taxpose/geometry_io.hpp"
#include "taxpose/tasks.hpp"

namespace fs = std::filesystem;
using namespace taxpose;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun run(const std::string& args, bool with_stderr = false) {
  const std::string cmd = std::string(TAXPOSE_CLI_PATH) + " " + args + (with_stderr ? " 2>&1" : " 2>/dev/null");
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("taxpose_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Tiny dataset so training commands finish in seconds.
  std::string small_spec(const std::string& task) {
    TaskSpec s = builtin_task(task);
    s.action_points = 20;
    s.anchor_points = 20;
    const std::string p = path(task + ".json");
    std::ofstream(p) << task_spec_to_json(s);
    return p;
  }

  fs::path dir_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_cloud(const std::string& path, const PointCloudd& c) {
  std::ofstream out(path);
  write_cloud(out, c);
}

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("gen peg-in-ring --out " + path("d") + " --bogus").code, 2);
  EXPECT_EQ(run("gen no-such-task --out " + path("d")).code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, GenIsDeterministicWithRequestedDemoCount) {
  ASSERT_EQ(run("gen peg-in-ring --demos 10 --seed 3 --out " + path("x")).code, 0);
  ASSERT_EQ(run("gen peg-in-ring --demos 10 --seed 3 --out " + path("y")).code, 0);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(path("x"))) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), path("x"));
    EXPECT_EQ(slurp(e.path()), slurp(dir_ / "y" / rel)) << rel;
    if (e.path().extension() == ".xyz") ++files;
  }
  EXPECT_EQ(files, 20);
  const Dataset d = read_dataset(path("x"));
  EXPECT_EQ(d.demos.at("in").size(), 10u);
  ASSERT_EQ(run("gen peg-in-ring --demos 10 --seed 4 --out " + path("z")).code, 0);
  EXPECT_NE(slurp(dir_ / "x/demos/in/0_a.xyz"), slurp(dir_ / "z/demos/in/0_a.xyz"));
}

TEST_F(Cli, TrainEvalSolveRoundTrip) {
  ASSERT_EQ(run("gen " + small_spec("peg-in-ring") + " --demos 2 --out " + path("d")).code, 0);
  const CliRun tr = run("train --data " + path("d") + " --steps 3 --batch 2 --embed-dim 4 --out " + path("m.json") +
                     " --trace " + path("t.csv"));
  ASSERT_EQ(tr.code, 0) << tr.out;
  EXPECT_EQ(slurp(path("t.csv")).rfind("step,disp,corr,cons,total,eval_E_R,eval_E_t", 0), 0u);
  ASSERT_EQ(run("eval --model " + path("m.json") + " --data " + path("d") + " --samples 3").code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "d" / "eval_report.json"));

  const Dataset data = read_dataset(path("d"));
  const DemoPair& demo = data.demos.at("in").front();
  save_cloud(path("a.xyz"), demo.cloud_a);
  save_cloud(path("b.xyz"), demo.cloud_b);
  std::ofstream(path("gt.txt")) << format_transform(RigidTransformd{}) << "\n";
  const CliRun so = run("solve " + path("m.json") + " " + path("a.xyz") + " " + path("b.xyz") + " --gt " + path("gt.txt"));
  ASSERT_EQ(so.code, 0);
  std::istringstream lines(so.out);
  std::string first, second;
  std::getline(lines, first);
  std::getline(lines, second);
  std::istringstream fields(first);
  std::vector<double> v;
  for (double x; fields >> x;) v.push_back(x);
  ASSERT_EQ(v.size(), 12u);
  EXPECT_EQ(second.rfind("E_R ", 0), 0u);

  const RigidTransformd solved = parse_transform(first);
  const CrossPoseEstimate est = forward(load_checkpoint(path("m.json")), demo.cloud_a, demo.cloud_b);
  const Points3d via_cli = apply(solved, demo.cloud_a.points());
  const Points3d in_proc = apply(est.transform, demo.cloud_a.points());
  EXPECT_LT((via_cli - in_proc).cwiseAbs().maxCoeff(), 1e-9);
}

TEST_F(Cli, SeededTrainingIsDeterministic) {
  ASSERT_EQ(run("gen " + small_spec("peg-in-ring") + " --demos 2 --out " + path("d")).code, 0);
  const std::string args =
      "train --data " + path("d") + " --steps 2 --batch 2 --embed-dim 4 --hidden-dim 12 --seed 5 --out ";
  ASSERT_EQ(run(args + path("m1.json")).code, 0);
  ASSERT_EQ(run(args + path("m2.json")).code, 0);
  EXPECT_EQ(slurp(path("m1.json")), slurp(path("m2.json")));
  EXPECT_EQ(load_checkpoint(path("m1.json")).config.hidden_dim, 12);
}

TEST_F(Cli, GoalConditionedSolveNeedsGoal) {
  ASSERT_EQ(run("gen " + small_spec("block-goals") + " --demos 1 --out " + path("d")).code, 0);
  ASSERT_EQ(run("train --data " + path("d") + " --steps 1 --batch 1 --embed-dim 4 --out " + path("m.json")).code, 0);
  const Dataset data = read_dataset(path("d"));
  const DemoPair& demo = data.demos.begin()->second.front();
  save_cloud(path("a.xyz"), demo.cloud_a);
  save_cloud(path("b.xyz"), demo.cloud_b);
  const std::string base = "solve " + path("m.json") + " " + path("a.xyz") + " " + path("b.xyz");
  EXPECT_EQ(run(base).code, 2);
  EXPECT_EQ(run(base + " --goal nowhere").code, 2);
  EXPECT_EQ(run(base + " --goal " + data.spec.goal_set.front()).code, 0);
}

TEST_F(Cli, SolverDegeneracyExitsThree) {
  ASSERT_EQ(run("gen " + small_spec("peg-in-ring") + " --demos 1 --out " + path("d")).code, 0);
  ASSERT_EQ(run("train --data " + path("d") + " --steps 1 --batch 1 --embed-dim 4 --out " + path("m.json")).code, 0);
  save_cloud(path("p.xyz"), PointCloudd(Points3d::Ones(3, 8)));
  const std::string cmd = "solve " + path("m.json") + " " + path("p.xyz") + " " + path("p.xyz");
  const CliRun r = run(cmd, true);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("rank"), std::string::npos) << r.out;
}

TEST_F(Cli, EquivarianceAuditAndNegativeControl) {
  ASSERT_EQ(run("gen " + small_spec("peg-in-ring") + " --demos 2 --out " + path("d")).code, 0);
  ASSERT_EQ(run("train --data " + path("d") + " --steps 1 --batch 1 --lr 0 --out " + path("m.json")).code, 0);
  const std::string base = "equivariance --model " + path("m.json") + " --data " + path("d") + " --trials 100";
  const CliRun ok = run(base);
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("PASS"), std::string::npos);
  const CliRun broken = run(base + " --debug-no-centering");
  EXPECT_EQ(broken.code, 4) << broken.out;
  EXPECT_NE(broken.out.find("FAIL"), std::string::npos);
}

TEST_F(Cli, PretrainWritesLoadableCheckpoint) {
  ASSERT_EQ(run("pretrain --steps 5 --shapes 2 --embed-dim 4 --hidden-dim 64 --out " + path("p.json")).code, 0);
  const TaxPoseModel m = load_checkpoint(path("p.json"));
  EXPECT_EQ(m.config.embed_dim, 4);
  ASSERT_EQ(run("gen " + small_spec("peg-in-ring") + " --demos 1 --out " + path("d")).code, 0);
  EXPECT_EQ(run("train --data " + path("d") + " --steps 1 --batch 1 --embed-dim 4 --pretrained " + path("p.json") +
                " --out " + path("m.json"))
                .code,
            0);
  EXPECT_EQ(run("train --data " + path("d") + " --steps 1 --batch 1 --embed-dim 8 --pretrained " + path("p.json") +
                " --out " + path("m.json"))
                .code,
            2);
}

TEST_F(Cli, AblateWritesReport) {
  ASSERT_EQ(run("gen " + small_spec("peg-in-ring") + " --demos 1 --out " + path("d")).code, 0);
  const CliRun r = run("ablate --data " + path("d") + " --steps 1 --batch 1 --embed-dim 4 --which no_cons dim_small" +
                    " --eval-samples 2 --out " + path("r.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  const std::string report = slurp(path("r.json"));
  EXPECT_NE(report.find("dim_small"), std::string::npos);
  EXPECT_EQ(report.find("no_disp"), std::string::npos);
}
