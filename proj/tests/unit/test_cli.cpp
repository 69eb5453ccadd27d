#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "scratch_dir.hpp"
#include "sslgm/cli.hpp"
#include "sslgm/errors.hpp"

using nlohmann::json;
namespace cli = sslgm::cli;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string str(const std::filesystem::path& p) { return p.string(); }

// generate -> fit -> score under one root; returns the root.
void pipeline(const std::filesystem::path& root, int K, const std::string& seed) {
  REQUIRE(run({"generate", "--K", std::to_string(K), "--seed", seed, "--out", str(root / "gen")}).code == 0);
  REQUIRE(run({"fit", "--data", str(root / "gen" / "data.jsonl"), "--seed", seed, "--out", str(root / "fit")}).code ==
          0);
  REQUIRE(run({"score", "--data", str(root / "gen" / "data.jsonl"), "--model", str(root / "fit" / "model.json"),
               "--out", str(root / "score")})
              .code == 0);
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config resolution") {
  const json d = cli::default_config("generate");
  CHECK(d.at("K") == 1000);
  CHECK(cli::resolve_config("generate", {{"K", 7}}, json::object()).at("K") == 7);
  CHECK(cli::resolve_config("generate", {{"K", 7}}, {{"K", 9}}).at("K") == 9);
  CHECK_THROWS_AS(cli::resolve_config("generate", {{"Kay", 7}}, json::object()), sslgm::ConfigError);
  CHECK_THROWS_AS(cli::resolve_config("generate", {{"K", "many"}}, json::object()), sslgm::ConfigError);
  CHECK_THROWS_AS(cli::resolve_config("fit", {{"learning", {{"em", {{"bogus", 1}}}}}}, json::object()),
                  sslgm::ConfigError);
  CHECK_THROWS_AS(cli::default_config("train"), sslgm::ConfigError);
}

TEST_CASE("validation errors exit 1") {
  const testing::ScratchDir dir("cli_validation");
  Result r = run({"generate", "--K", "0", "--out", str(dir / "g")});
  CHECK(r.code == cli::kValidation);
  CHECK(r.err.find("K") != std::string::npos);

  testing::spit(dir / "cfg.json", R"({"K": 10, "colour": "red"})");
  r = run({"generate", "--config", str(dir / "cfg.json"), "--out", str(dir / "g")});
  CHECK(r.code == cli::kValidation);
  CHECK(r.err.find("colour") != std::string::npos);

  testing::spit(dir / "cfg.json", "{not json");
  CHECK(run({"generate", "--config", str(dir / "cfg.json")}).code == cli::kValidation);
  CHECK(run({"generate", "--K", "ten"}).code == cli::kValidation);
  CHECK(run({}).code == cli::kValidation);
  CHECK(run({"fit"}).code == cli::kValidation);  // --data missing
  CHECK(run({"fit", "--data", str(dir / "nope.jsonl"), "--out", str(dir / "f")}).code == cli::kRuntime);
}

TEST_CASE("end-to-end pipeline and report") {
  const testing::ScratchDir dir("cli_pipeline");
  pipeline(dir.path(), 300, "4");
  const Result r = run({"eval", "--scores", str(dir / "score" / "scores.json"), "--out", str(dir / "eval"),
                        "--train-data", str(dir / "gen" / "data.jsonl"), "--data",
                        str(dir / "gen" / "data.jsonl")});
  REQUIRE(r.code == 0);
  const json m = json::parse(testing::slurp(dir / "eval" / "metrics.json"));
  CHECK(m.at("patients") == 300);
  CHECK(m.at("pr_auc_icu").is_number());
  CHECK(m.at("pr_auc_icu_discharge").is_number());
  CHECK(m.at("baseline").is_object());
  const json scores = json::parse(testing::slurp(dir / "score" / "scores.json"));
  REQUIRE(scores.at("patients").size() == 300);
  for (const json& p : scores.at("patients")) {
    for (double v : p.at("risk")) CHECK((v >= 0.0 && v <= 1.0));
    CHECK(std::filesystem::exists(dir / "score" / "trajectories" / (p.at("id").get<std::string>() + ".csv")));
  }
}

TEST_CASE("same seed gives identical artifacts") {
  const testing::ScratchDir a("cli_det");
  pipeline(a.path(), 200, "9");
  const std::string data = testing::slurp(a / "gen" / "data.jsonl");
  const std::string model = testing::slurp(a / "fit" / "model.json");
  const std::string scores = testing::slurp(a / "score" / "scores.json");
  const std::string traj = testing::slurp(a / "score" / "trajectories" / "P000007.csv");
  REQUIRE(!traj.empty());
  pipeline(a.path(), 200, "9");
  CHECK(testing::slurp(a / "gen" / "data.jsonl") == data);
  CHECK(testing::slurp(a / "fit" / "model.json") == model);
  CHECK(testing::slurp(a / "score" / "scores.json") == scores);
  CHECK(testing::slurp(a / "score" / "trajectories" / "P000007.csv") == traj);

  // thread count only shows up in the echoed config
  REQUIRE(run({"generate", "--K", "200", "--seed", "9", "--threads", "1", "--out", str(a / "one")}).code == 0);
  const std::string serial = testing::slurp(a / "one" / "data.jsonl");
  CHECK(serial.substr(serial.find('\n')) == data.substr(data.find('\n')));
}

TEST_CASE("bad datasets exit 2 with the line") {
  const testing::ScratchDir dir("cli_data");
  pipeline(dir.path(), 50, "2");
  const std::string good = testing::slurp(dir / "gen" / "data.jsonl");

  // third line truncated
  std::size_t a = good.find('\n');
  a = good.find('\n', a + 1) + 1;
  const std::size_t b = good.find('\n', a);
  testing::spit(dir / "bad.jsonl", good.substr(0, a) + good.substr(a, (b - a) / 2) + good.substr(b));
  Result r = run({"score", "--data", str(dir / "bad.jsonl"), "--model", str(dir / "fit" / "model.json"), "--out",
                  str(dir / "s")});
  CHECK(r.code == cli::kRuntime);
  CHECK(r.err.find("line 3") != std::string::npos);

  REQUIRE(run({"generate", "--K", "5", "--config", str(dir / "m3.json"), "--out", str(dir / "g3")}).code ==
          cli::kValidation);  // config file missing
  testing::spit(dir / "m3.json", R"({"obs_dim": 3})");
  REQUIRE(run({"generate", "--K", "5", "--config", str(dir / "m3.json"), "--out", str(dir / "g3")}).code == 0);
  r = run({"score", "--data", str(dir / "g3" / "data.jsonl"), "--model", str(dir / "fit" / "model.json"), "--out",
           str(dir / "s")});
  CHECK(r.code == cli::kRuntime);
  CHECK(r.err.find("3") != std::string::npos);
}

TEST_CASE("empty dataset scores to an empty report") {
  const testing::ScratchDir dir("cli_empty");
  pipeline(dir.path(), 50, "3");
  const std::string good = testing::slurp(dir / "gen" / "data.jsonl");
  json header = json::parse(good.substr(0, good.find('\n')));
  header["count"] = 0;
  testing::spit(dir / "empty.jsonl", header.dump() + "\n");
  const Result r = run({"score", "--data", str(dir / "empty.jsonl"), "--model", str(dir / "fit" / "model.json"),
                        "--out", str(dir / "s")});
  REQUIRE(r.code == 0);
  CHECK(json::parse(testing::slurp(dir / "s" / "scores.json")).at("patients").empty());
}

TEST_CASE("fit with zero EM iterations keeps the initial model") {
  const testing::ScratchDir dir("cli_iters");
  REQUIRE(run({"generate", "--K", "200", "--out", str(dir / "g")}).code == 0);
  testing::spit(dir / "fit.json", R"({"learning": {"em": {"max_iters": 0}}})");
  const Result r = run({"fit", "--config", str(dir / "fit.json"), "--data", str(dir / "g" / "data.jsonl"), "--out",
                        str(dir / "f")});
  REQUIRE(r.code == 0);
  const json m = json::parse(testing::slurp(dir / "f" / "model.json"));
  CHECK(m.at("format") == "sslgm-model/1");
}

TEST_CASE("single-class scores are reported as undefined") {
  const testing::ScratchDir dir("cli_single");
  const json doc{{"format", "sslgm-scores/1"},
                 {"patients",
                  {{{"id", "a"}, {"F", 0}, {"J", 1}, {"step_hours", 4.0}, {"risk", {0.05, 0.01}}},
                   {{"id", "b"}, {"F", 0}, {"J", 2}, {"step_hours", 4.0}, {"risk", {0.05, 0.2, 0.01}}}}}};
  testing::spit(dir / "scores.json", doc.dump());
  const Result r = run({"eval", "--scores", str(dir / "scores.json"), "--out", str(dir / "e")});
  REQUIRE(r.code == 0);
  const json m = json::parse(testing::slurp(dir / "e" / "metrics.json"));
  CHECK(m.at("pr_auc_icu").contains("undefined"));
  CHECK(m.at("operating_points")[0].contains("undefined"));
}

}  // TEST_SUITE
