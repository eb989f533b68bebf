#include <doctest.h>

#include <sstream>

#include "helpers.hpp"
#include "hique/cli.hpp"
#include "hique/errors.hpp"
#include "hique/io.hpp"
#include "hique/training.hpp"

using namespace hique;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string p(const fs::path& path) { return path.string(); }

const char* kSmall = "d_model = 4\nn_heads = 1\nconv_stack = 3x8,3x4\nepochs = 3\n";

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"synthesize"}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"train", "--out", "x"}).code == 2);
  const Run help = cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("report-attention") != std::string::npos);
}

TEST_CASE("synthesize writes a labelled cache and refuses to clobber") {
  TempDir tmp("cli_synth");
  const fs::path d = tmp.path / "d";
  const std::vector<std::string> args{"synthesize", "--n-depressed", "4", "--n-normal", "6", "--seed", "1", "--out", p(d)};
  REQUIRE(cli(args).code == 0);
  int files = 0;
  for (const auto& e : fs::directory_iterator(d)) files += e.path().extension() == ".hqf";
  CHECK(files == 10);
  CHECK(fs::exists(d / "labels.csv"));
  CHECK(fs::exists(d / "split.csv"));
  CHECK(fs::exists(d / "manifest.json"));
  CHECK(fs::exists(d / "manifest.timings.json"));
  CHECK(read_text_file(d / "manifest.json").find("seconds") == std::string::npos);

  const std::string before = read_text_file(d / "syn0003.hqf");
  const std::string manifest = read_text_file(d / "manifest.json");
  const Run again = cli(args);
  CHECK(again.code == 2);
  CHECK(again.err.find("--force") != std::string::npos);

  auto forced = args;
  forced.push_back("--force");
  REQUIRE(cli(forced).code == 0);
  CHECK(read_text_file(d / "syn0003.hqf") == before);
  CHECK(read_text_file(d / "manifest.json") != manifest);  // args differ by --force
  REQUIRE(cli(forced).code == 0);
  const std::string forced_manifest = read_text_file(d / "manifest.json");
  REQUIRE(cli(forced).code == 0);
  CHECK(read_text_file(d / "manifest.json") == forced_manifest);
}

TEST_CASE("train, evaluate and report are deterministic") {
  TempDir tmp("cli_train");
  const fs::path d = tmp.path / "d", cfg = tmp.path / "small.cfg";
  write_file_atomic(cfg, kSmall);
  REQUIRE(cli({"synthesize", "--n-depressed", "5", "--n-normal", "5", "--out", p(d)}).code == 0);
  for (int round = 0; round < 2; ++round) {
    const fs::path run = tmp.path / ("r" + std::to_string(round));
    fs::create_directories(run);
    REQUIRE(cli({"train", "--config", p(cfg), "--features-dir", p(d), "--out", p(run / "m.ckpt"), "--seed", "4"}).code == 0);
    REQUIRE(cli({"evaluate", "--checkpoint", p(run / "m.ckpt"), "--features-dir", p(d), "--out", p(run / "metrics.json")})
                .code == 0);
    REQUIRE(cli({"report-attention", "--checkpoint", p(run / "m.ckpt"), "--features-dir", p(d), "--out",
                 p(run / "report.json"), "--plots", p(run / "plots")})
                .code == 0);
  }
  for (const char* f : {"m.ckpt", "metrics.json", "report.json", "plots/self_text.svg"}) {
    CHECK_MESSAGE(read_text_file(tmp.path / "r0" / f) == read_text_file(tmp.path / "r1" / f), f);
  }
  const Checkpoint cp = load_checkpoint(tmp.path / "r0" / "m.ckpt");
  CHECK(cp.train_config.seed == 4);
  CHECK(cp.model_config.d_model == 4);
  CHECK(cp.history.size() == 3);
  const auto metrics = nlohmann::json::parse(read_text_file(tmp.path / "r0" / "metrics.json"));
  CHECK(metrics.at("split") == "test");
  CHECK(metrics.at("predictions").size() == metrics.at("interviews"));

  // config seed loses to --seed, HIQUE_SEED loses to the config
  write_file_atomic(cfg, std::string(kSmall) + "seed = 9\n");
  ::setenv("HIQUE_SEED", "11", 1);
  REQUIRE(cli({"train", "--config", p(cfg), "--features-dir", p(d), "--out", p(tmp.path / "c.ckpt")}).code == 0);
  CHECK(load_checkpoint(tmp.path / "c.ckpt").train_config.seed == 9);
  write_file_atomic(cfg, kSmall);
  REQUIRE(cli({"train", "--config", p(cfg), "--features-dir", p(d), "--out", p(tmp.path / "e.ckpt")}).code == 0);
  CHECK(load_checkpoint(tmp.path / "e.ckpt").train_config.seed == 11);
  ::unsetenv("HIQUE_SEED");
}

TEST_CASE("error exit codes name the culprit") {
  TempDir tmp("cli_errors");
  const fs::path d = tmp.path / "d";
  REQUIRE(cli({"synthesize", "--n-depressed", "3", "--n-normal", "3", "--out", p(d)}).code == 0);
  const Run missing = cli({"evaluate", "--checkpoint", p(tmp.path / "none.ckpt"), "--features-dir", p(d), "--out",
                           p(tmp.path / "m.json")});
  CHECK(missing.code == 4);
  CHECK(missing.err.find("none.ckpt") != std::string::npos);

  write_file_atomic(tmp.path / "bad.ckpt", "{not json");
  const Run corrupt = cli({"evaluate", "--checkpoint", p(tmp.path / "bad.ckpt"), "--features-dir", p(d), "--out",
                           p(tmp.path / "m.json")});
  CHECK(corrupt.code == 3);
  CHECK(corrupt.err.find("bad.ckpt") != std::string::npos);

  write_file_atomic(tmp.path / "bad.cfg", "epochs = many\n");
  const Run cfg = cli({"train", "--config", p(tmp.path / "bad.cfg"), "--features-dir", p(d), "--out",
                       p(tmp.path / "x.ckpt")});
  CHECK(cfg.code == 2);
  CHECK(cfg.err.find("line 1") != std::string::npos);

  write_file_atomic(tmp.path / "diverge.cfg", std::string(kSmall) + "learning_rate = 1e300\n");
  const Run diverged = cli({"train", "--config", p(tmp.path / "diverge.cfg"), "--features-dir", p(d), "--out",
                            p(tmp.path / "y.ckpt")});
  CHECK(diverged.code == 4);
  CHECK(!fs::exists(tmp.path / "y.ckpt"));
}

TEST_CASE("structure, extract and map") {
  TempDir tmp("cli_structure");
  const fs::path t = tmp.path / "301_TRANSCRIPT.jsonl";
  write_file_atomic(t,
                    R"({"speaker":"interviewer","start":0,"end":2,"text":"where are you from originally"}
{"speaker":"participant","start":2,"end":5,"text":"i grew up in ohio"}
{"speaker":"interviewer","start":5,"end":7,"text":"what did you study at school"}
{"speaker":"participant","start":7,"end":9,"text":"engineering mostly"}
{"speaker":"interviewer","start":9,"end":10,"text":"are you still working in that"}
{"speaker":"participant","start":10,"end":12,"text":"yes i am"}
{"speaker":"interviewer","start":12,"end":13,"text":"mhm"}
)");
  write_file_atomic(tmp.path / "labels.csv", "Participant_ID,PHQ8_Binary,PHQ8_Score\n301,1,14\n");

  const Run strict = cli({"structure", p(t), "--out", p(tmp.path / "s")});
  CHECK(strict.code == 3);
  CHECK(strict.err.find("are you still working in that") != std::string::npos);
  CHECK(strict.err.find("mhm") == std::string::npos);

  REQUIRE(cli({"structure", p(t), "--out", p(tmp.path / "s2"), "--allow-unseen", "--labels", p(tmp.path / "labels.csv")})
              .code == 0);
  const auto j = nlohmann::json::parse(read_text_file(tmp.path / "s2" / "301.json"));
  REQUIRE(j.at("segments").size() == 3);
  CHECK(j["segments"][2].at("chain_depth") == 1);
  CHECK(j["segments"][2].at("matched_index") == 71);
  CHECK(j.at("layout").at("popcount") == 3);
  CHECK(j.at("label") == "depression");

  REQUIRE(cli({"extract-features", "--structured-dir", p(tmp.path / "s2"), "--out", p(tmp.path / "f"), "--audio",
               "synthetic"})
              .code == 0);
  const auto corpus = load_feature_dir(tmp.path / "f");
  REQUIRE(corpus.size() == 1);
  CHECK(corpus[0].modalities[0].present_count() == 3);
  CHECK(corpus[0].modalities[1].present_count() == 0);
  CHECK(corpus[0].modalities[2].present_count() == 3);
  CHECK(*corpus[0].label == Label::kDepression);
  CHECK(cli({"extract-features", "--structured-dir", p(tmp.path / "s2"), "--out", p(tmp.path / "g"), "--audio", "loud"})
            .code == 2);

  const Run mapped = cli({"map-question", "where do you come from originally", "describe your morning routine in detail"});
  REQUIRE(mapped.code == 0);
  const auto m = nlohmann::json::parse(mapped.out);
  CHECK(m["mappings"][0]["index"] == 3);
  CHECK(m["mappings"][1]["index"] == 86);
  CHECK(m["mappings"][1]["appended"] == true);
}

TEST_CASE("pipeline smoke run and rerun") {
  TempDir tmp("cli_pipeline");
  const fs::path cfg = tmp.path / "smoke.cfg";
  write_file_atomic(cfg, "d_model = 4\nn_heads = 1\nconv_stack = 3x8,3x4\nepochs = 5\n");
  const std::vector<std::string> args{"pipeline", "--config", p(cfg), "--n-depressed", "10", "--n-normal", "10",
                                      "--out", p(tmp.path / "run"), "--force"};
  REQUIRE(cli(args).code == 0);
  for (const char* f : {"model.ckpt", "metrics.json", "attention.json", "manifest.json", "model.ckpt.manifest.json",
                        "metrics.json.manifest.json", "features/manifest.json", "plots/self_audio.svg"}) {
    CHECK_MESSAGE(fs::exists(tmp.path / "run" / f), f);
  }
  const std::string metrics = read_text_file(tmp.path / "run" / "metrics.json");
  const std::string manifest = read_text_file(tmp.path / "run" / "metrics.json.manifest.json");
  REQUIRE(cli(args).code == 0);
  CHECK(read_text_file(tmp.path / "run" / "metrics.json") == metrics);
  CHECK(read_text_file(tmp.path / "run" / "metrics.json.manifest.json") == manifest);

  write_file_atomic(tmp.path / "run" / "model.ckpt", "corrupt");
  const Run bad = cli({"evaluate", "--checkpoint", p(tmp.path / "run" / "model.ckpt"), "--features-dir",
                       p(tmp.path / "run" / "features"), "--out", p(tmp.path / "m.json")});
  CHECK(bad.code == 3);
  CHECK(bad.err.find("model.ckpt") != std::string::npos);
}

TEST_CASE("label csv") {
  TempDir tmp("cli_labels");
  write_file_atomic(tmp.path / "a.csv", "participant_id,label\n1,normal\n2,depression\n\n3,1\n");
  const auto rows = read_label_csv(tmp.path / "a.csv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[2].second == "depression");
  write_file_atomic(tmp.path / "b.csv", "id,score\n1,3\n");
  CHECK_THROWS_AS(read_label_csv(tmp.path / "b.csv"), ParseError);
  write_file_atomic(tmp.path / "c.csv", "participant_id,label\n1,sad\n");
  CHECK_THROWS_WITH_AS(read_label_csv(tmp.path / "c.csv"), doctest::Contains("line 2"), ParseError);
}
