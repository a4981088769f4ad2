#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;

int run(const std::string& args) {
  const std::string cmd = std::string(PIMBENCH_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "pimbench-cli-test";
  fs::create_directories(dir);
  return dir / name;
}

fs::path write_config(const std::string& name, const std::string& body) {
  const fs::path p = scratch(name);
  std::ofstream(p) << body;
  return p;
}

const char* kSmall =
    "config-version = 1\n"
    "[experiment]\nkind = coherence\n"
    "[coherence]\nworkload = small\nmechanism = lazypim\n";

}  // namespace

TEST(Cli, RunWritesReport) {
  const auto cfg = write_config("ok.cfg", kSmall);
  const auto out = scratch("ok.csv");
  fs::remove(out);
  EXPECT_EQ(run("run --config " + cfg.string() + " --out " + out.string()), 0);
  std::ifstream in(out);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "experiment,mechanism,seed,metric,value");
}

TEST(Cli, SameSeedSameBytes) {
  const auto cfg = write_config("det.cfg", kSmall);
  const auto a = scratch("a.json"), b = scratch("b.json");
  ASSERT_EQ(run("run --config " + cfg.string() + " --seed 5 --format json --out " + a.string()), 0);
  ASSERT_EQ(run("run --config " + cfg.string() + " --seed 5 --format json --out " + b.string()), 0);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  };
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_FALSE(slurp(a).empty());
}

TEST(Cli, ConfigErrorsExitOne) {
  const auto bad = write_config("bad.cfg", "config-version = 1\nmystery = 4\n");
  EXPECT_EQ(run("run --config " + bad.string()), 1);
  EXPECT_EQ(run("run --set coherence.mechanism=mesi"), 1);
  EXPECT_EQ(run("run --set nokey"), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("run --config /no/such/file.cfg"), 1);
}

TEST(Cli, UnwritableOutputExitsThree) {
  const auto cfg = write_config("io.cfg", kSmall);
  EXPECT_EQ(run("run --config " + cfg.string() + " --out /no/such/dir/out.csv"), 3);
}

TEST(Cli, CompareAndSweep) {
  const auto cfg = write_config("cmp.cfg", kSmall);
  EXPECT_EQ(run("compare --config " + cfg.string() + " --mechanisms fg,lazypim"), 0);
  EXPECT_EQ(run("sweep --config " + cfg.string() + " --param coherence.max-rollbacks --values 1,3 --seeds 1,2"), 0);
}
