#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "vlcp_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(VLCP_CLI) + " " + args + " > " +
                          (kDir / "out.txt").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string tiny_config(const std::string& out_dir) {
  std::string s = "seed = 5\noutput_dir = " + out_dir + R"(
[encoder]
layers = 1
width = 16
heads = 2
patch = 4
mlp_ratio = 2
pos_grid = 3
[decoder]
layers = 1
width = 16
heads = 2
max_positions = 64
mlp_ratio = 2
[corpus]
min_side = 16
max_side = 48
holdout_pairs = 4
)";
  for (const char* st : {"I", "II-fixed", "II-native", "III"}) {
    s += std::string("[stage.") + st + "]\nnum_pairs = 4\nbatch_size = 2\n";
    if (std::string(st) == "I" || std::string(st) == "II-fixed") s += "resolution = fixed:16\n";
    else s += "resolution = native:16\n";
  }
  return s;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

}  // namespace

TEST_CASE("train, resume guard, eval, determinism") {
  fs::remove_all(kDir);
  fs::create_directories(kDir);
  const auto a = kDir / "a", b = kDir / "b";
  write(kDir / "a.cfg", tiny_config(a.string()));
  write(kDir / "b.cfg", tiny_config(b.string()));

  REQUIRE(run("train --quiet --config " + (kDir / "a.cfg").string()) == 0);
  for (const char* st : {"I", "II-fixed", "II-native", "III"})
    CHECK(fs::exists(a / (std::string("stage_") + st + ".cmpk")));
  CHECK(fs::exists(a / "metrics.jsonl"));

  // same config and seed, separate stage invocations via resume
  REQUIRE(run("train --quiet --stage I --config " + (kDir / "b.cfg").string()) == 0);
  REQUIRE(run("train --quiet --stage II --config " + (kDir / "b.cfg").string() + " --resume " +
              (b / "stage_I.cmpk").string()) == 0);
  REQUIRE(run("train --quiet --stage III --config " + (kDir / "b.cfg").string() + " --resume " +
              (b / "stage_II-native.cmpk").string()) == 0);
  CHECK(slurp(a / "stage_III.cmpk") == slurp(b / "stage_III.cmpk"));
  CHECK(slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl"));

  CHECK(run("train --quiet --stage I --config " + (kDir / "a.cfg").string() + " --resume " +
            (a / "stage_III.cmpk").string()) == 2);
  CHECK(run("train --quiet --stage III --config " + (kDir / "a.cfg").string()) == 2);

  const auto csv = kDir / "sweep.csv";
  REQUIRE(run("eval --config " + (kDir / "a.cfg").string() + " --checkpoint " +
              (a / "stage_III.cmpk").string() + " --count 3 --max-visual-tokens 16,64,256 --csv " +
              csv.string()) == 0);
  std::istringstream rows(slurp(csv));
  std::string line;
  std::getline(rows, line);
  CHECK(line == "max_visual_tokens,l_dec,perplexity,exact_match,samples");
  int n = 0;
  while (std::getline(rows, line)) {
    ++n;
    std::istringstream f(line);
    std::string m, l, p;
    std::getline(f, m, ',');
    std::getline(f, l, ',');
    std::getline(f, p, ',');
    CHECK(std::abs(std::stod(p) - std::exp(std::stod(l))) < 1e-6 * std::stod(p));
  }
  CHECK(n == 3);

  auto bytes = slurp(a / "stage_III.cmpk");
  write(kDir / "bad.cmpk", bytes.substr(0, bytes.size() / 2));
  CHECK(run("eval --config " + (kDir / "a.cfg").string() + " --checkpoint " +
            (kDir / "bad.cmpk").string()) == 4);
  CHECK(run("eval --checkpoint " + (a / "stage_III.cmpk").string()) == 4);  // wrong model size
}

TEST_CASE("config errors and verify dispatch") {
  fs::create_directories(kDir);
  write(kDir / "bad.cfg", "seed = 1\n[encoder]\nwidht = 3\n");
  CHECK(run("train --config " + (kDir / "bad.cfg").string()) == 2);
  CHECK(slurp(kDir / "out.txt").find("bad.cfg:3: unknown key 'encoder.widht'") != std::string::npos);
  CHECK(run("train --config " + (kDir / "missing.cfg").string()) == 2);
  CHECK(run("train") == 2);
  CHECK(run("verify --suite rope") == 0);
  CHECK(slurp(kDir / "out.txt").find("rope.translation_invariance") != std::string::npos);
  CHECK(run("verify --suite nope") == 2);
  CHECK(run("config") == 0);
  CHECK(run("dump-patches --index 2 --resolution native:64 --out " + (kDir / "g.cpgr").string()) == 0);
  CHECK(slurp(kDir / "g.cpgr").substr(0, 4) == "CPGR");
}
