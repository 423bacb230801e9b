#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kDir = fs::temp_directory_path() / "devprint-test-cli";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Exit status of `devprint <args>`, stdout and stderr captured to files.
int cli(const std::string& args) {
  const auto cmd = std::string(DEVPRINT_CLI) + " " + args + " >" + (kDir / "stdout").string() +
                   " 2>" + (kDir / "stderr").string();
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string out() { return slurp(kDir / "stdout"); }
std::string err() { return slurp(kDir / "stderr"); }

std::size_t lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

std::string p(const std::string& name) { return (kDir / name).string(); }

struct Fresh {
  Fresh() {
    fs::remove_all(kDir);
    fs::create_directories(kDir);
  }
  ~Fresh() { fs::remove_all(kDir); }
};

}  // namespace

TEST_CASE("exit codes") {
  Fresh f;
  CHECK(cli("") == 1);
  CHECK(cli("--version") == 0);
  CHECK(cli("probes dump --target 10.0.0.1 --colour red") == 1);
  CHECK(cli("train --features " + p("f.jsonl") + " --out " + p("m.json")) == 1);
  CHECK(err().find("labels") != std::string::npos);
  CHECK(cli("train --features " + p("f.jsonl") + " --labels " + p("l.csv") + " --out " + p("m.json")) == 2);
  CHECK(cli("e2e") == 1);
  CHECK(cli("probes dump --target 10.0.0.1 --probeset nmap+nope") == 1);

  CHECK(cli("--json-errors train --features " + p("f.jsonl") + " --labels " + p("l.csv") + " --out x") == 2);
  const auto e = json::parse(err());
  CHECK(e["status"] == 2);
  CHECK(e["kind"] == "data");
  CHECK(cli("--json-errors probes dump --bogus") == 1);
  CHECK(json::parse(err())["kind"] == "usage");

  // Global flags are accepted after the subcommand too.
  CHECK(cli("probes dump --target 10.0.0.1 -q") == 0);
  CHECK(err().empty());
  CHECK(lines(out()) == 8);
}

TEST_CASE("config file sections and precedence") {
  Fresh f;
  {
    std::ofstream cfg(p("devprint.toml"));
    cfg << "# shared settings\nquiet = true\n\n[probes.dump]\nprobeset = \"nmap\"\ntarget = \"10.1.2.3\"\n\n"
           "[train]\ncap = 50\n";
  }
  CHECK(cli("--config " + p("devprint.toml") + " probes dump") == 0);
  CHECK(lines(out()) == 6);
  CHECK(err().empty());
  CHECK(json::parse(out().substr(0, out().find('\n')))["target"] == "10.1.2.3");
  // A flag beats the config file.
  CHECK(cli("--config " + p("devprint.toml") + " probes dump --probeset nmap+topicmp+icmp") == 0);
  CHECK(lines(out()) == 6 + 2 + 63);

  {
    std::ofstream cfg(p("bad.toml"));
    cfg << "[probes.dump]\ncolour = 1\n";
  }
  CHECK(cli("--config " + p("bad.toml") + " probes dump --target 10.0.0.1") == 1);
  CHECK(cli("--config " + p("missing.toml") + " probes dump --target 10.0.0.1") == 1);
}

TEST_CASE("e2e on the simulator is reproducible from the command line") {
  Fresh f;
  const std::string small = " --per-vendor 25 --minor-devices 5 --decoys 6 --traces 40 --configs 2 -q";
  REQUIRE(cli("e2e --sim --seed 7 --out " + p("a") + small) == 0);
  REQUIRE(cli("e2e --sim --seed 7 --out " + p("b") + small) == 0);
  REQUIRE(cli("e2e --sim --seed 8 --out " + p("c") + small) == 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(kDir / "a")) {
    ++files;
    CHECK_MESSAGE(slurp(e.path()) == slurp(kDir / "b" / e.path().filename()), e.path().filename().string());
  }
  CHECK(files == 14);
  CHECK(slurp(kDir / "a" / "summary.json") != slurp(kDir / "c" / "summary.json"));
  const auto s = json::parse(slurp(kDir / "a" / "summary.json"));
  CHECK(s["seed"] == 7);
  CHECK(s["config"]["per_vendor"] == 25);
  CHECK(s["search"]["configs"] == 2);

  // The artifacts feed the staged commands.
  REQUIRE(cli("predict --model " + p("a/model.json") + " --features " + p("a/features.jsonl")) == 0);
  CHECK(out().rfind("# threshold=", 0) == 0);
  CHECK(lines(out()) == 2 + lines(slurp(kDir / "a" / "features.jsonl")));
  REQUIRE(cli("insights --model " + p("a/model.json") + " --traces " + p("a/traces.jsonl") +
              " --fingerprints " + p("a/fingerprints.jsonl") + " --geo " + p("a/geo.csv") +
              " --out " + p("prev.csv")) == 0);
  CHECK(slurp(kDir / "prev.csv").rfind("source,continent,vendor,probability,n\n", 0) == 0);
}
