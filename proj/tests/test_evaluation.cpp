#include <doctest.h>

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "hique/errors.hpp"
#include "hique/evaluation.hpp"

using namespace hique;

namespace {

DataSplit tiny_split() {
  SyntheticConfig c;
  c.n_depressed = 6;
  c.n_normal = 9;
  c.seed = 3;
  return stratified_split(generate_synthetic_corpus(c), 3, 0.6, 0.2);
}

RunConfig quick() {
  RunConfig rc;
  rc.model.d_model = 8;
  rc.model.n_heads = 2;
  rc.model.conv_stack = {{3, 8}};
  rc.train.epochs = 2;
  rc.train.seed = 5;
  return rc;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_CASE("preset settings") {
  const auto layers = layer_ablation_settings();
  REQUIRE(layers.size() == 7);
  CHECK(layers[0].question_embedding == QuestionEmbedding::kNone);
  CHECK(layers[1].question_embedding == QuestionEmbedding::kFlat);
  CHECK((!layers[2].qa_module && !layers[2].cm_attention && layers[2].augmentation));
  CHECK((layers[3].qa_module && !layers[3].cm_attention));
  CHECK((!layers[4].qa_module && layers[4].cm_attention));
  CHECK(!layers[5].augmentation);
  CHECK((layers[6].qa_module && layers[6].cm_attention && layers[6].augmentation &&
         layers[6].question_embedding == QuestionEmbedding::kHierarchical));

  const auto mods = modality_ablation_settings();
  REQUIRE(mods.size() == 7);
  CHECK(mods[0].modalities.count() == 1);
  CHECK(mods[6].modalities.count() == 3);
  for (const auto& s : mods) CHECK_NOTHROW(s.validate());
}

TEST_CASE("plan parsing") {
  const auto plan = parse_ablation_plan(
      "epochs = 3\n"
      "preset = layers   # all seven\n"
      "setting = audio-only qe=flat qa=off modalities=A\n");
  CHECK(plan.base.train.epochs == 3);
  REQUIRE(plan.settings.size() == 8);
  const auto& s = plan.settings.back();
  CHECK(s.name == "audio-only");
  CHECK(s.question_embedding == QuestionEmbedding::kFlat);
  CHECK(!s.qa_module);
  CHECK(s.cm_attention);
  CHECK(s.modalities.count() == 1);

  CHECK_THROWS_AS(parse_ablation_plan("epochs = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_ablation_plan("preset = everything\n"), ConfigError);
  CHECK_THROWS_AS(parse_ablation_plan("setting = x qa=maybe\n"), ConfigError);
  CHECK_THROWS_AS(parse_ablation_plan("setting = x colour=red\n"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_ablation_plan("preset = layers\nbogus = 1\n"), doctest::Contains("line 2"),
                       ConfigError);
}

TEST_CASE("ablation sweep records failures and keeps going") {
  const auto split = tiny_split();
  auto settings = layer_ablation_settings();
  settings.resize(2);
  AblationSetting broken = settings[0];
  broken.name = "broken";
  broken.modalities.on = {false, false, false};
  settings.insert(settings.begin() + 1, broken);

  int calls = 0;
  const auto rows = run_ablation(settings, split, quick(), [&](const AblationRow&) { ++calls; });
  CHECK(calls == 3);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].metrics.has_value());
  CHECK(!rows[1].metrics.has_value());
  CHECK(!rows[1].error.empty());
  CHECK(rows[2].metrics.has_value());
  CHECK(rows[0].metrics->total() == static_cast<int>(split.test.size()));

  const std::string csv = ablation_csv(rows);
  CHECK(csv.rfind("QE,HQE,QA-Module,CM-Attention,Aug,Precision,Recall,F1,WA-F1,Modalities,G-Mean,Setting,Status\n", 0) ==
        0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(csv.find("failed:") != std::string::npos);
  CHECK(csv.find("no-question-embedding,ok") != std::string::npos);

  // same seed, same rows, also when run on several threads
  const auto again = run_ablation(settings, split, quick(), {}, 3);
  CHECK(ablation_csv(again) == csv);
}

TEST_CASE("received mass") {
  const Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(85, 85, 1.0 / 85);
  const auto mass = received_mass({uniform, uniform});
  REQUIRE(mass.size() == 85);
  for (double m : mass) CHECK(m == doctest::Approx(1.0 / 85).epsilon(1e-12));

  Eigen::MatrixXd focused = Eigen::MatrixXd::Zero(4, 4);
  focused.col(2).setOnes();
  const auto f = received_mass({focused, Eigen::MatrixXd::Constant(4, 4, 0.25)});
  CHECK(f[2] == doctest::Approx(0.625));
  CHECK(f[0] == doctest::Approx(0.125));
  CHECK(sum(f) == doctest::Approx(1.0));
  CHECK(received_mass({}).empty());
}

TEST_CASE("attention report") {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.conv_stack = {{3, 8}};
  const HiQuEModel model(c, 11);

  auto only_three = EmbeddedInterview::empty("solo");
  for (int m = 0; m < 3; ++m) {
    only_three.modalities[m].set_row(2, Eigen::VectorXd::Ones(only_three.modalities[m].width()));
  }
  only_three.hierarchy.push_back({3, QuestionRole::kPrimary, 3, 0});
  only_three.label = Label::kNormal;

  const auto report = attention_report(model, {only_three});
  CHECK(report.interviews == 1);
  REQUIRE(report.drill_down.size() == 1);
  REQUIRE(report.drill_down[0].slots.size() == 1);
  const auto& slot = report.drill_down[0].slots[0];
  CHECK(slot.slot == 3);
  CHECK(slot.text == "where are you from originally");
  CHECK(*slot.self_mass[0] > 0.0);

  ModelConfig masked_config = c;
  masked_config.key_masking = true;
  const auto masked = attention_report(HiQuEModel(masked_config, 11), {only_three});
  CHECK(*masked.drill_down[0].slots[0].self_mass[0] == doctest::Approx(1.0));
  CHECK(masked.self_mass[1][2] == doctest::Approx(1.0));
  for (int m = 0; m < 3; ++m) CHECK(sum(report.self_mass[m]) == doctest::Approx(1.0));
  for (int i = 0; i < 6; ++i) CHECK(report.cross_mass[i].size() == 85);

  SyntheticConfig sc;
  sc.n_depressed = 2;
  sc.n_normal = 2;
  const auto corpus = generate_synthetic_corpus(sc);
  const auto full = attention_report(model, corpus);
  CHECK(full.interviews == 4);
  for (int i = 0; i < 6; ++i) CHECK(sum(full.cross_mass[i]) == doctest::Approx(1.0));
  for (const auto& ia : full.drill_down)
    for (const auto& s : ia.slots) {
      CHECK(s.effective_topic_slot >= 1);
      if (s.role == QuestionRole::kPrimary) CHECK(s.chain_depth == 0);
    }

  ModelConfig plain = c;
  plain.qa_module = false;
  plain.cm_attention = false;
  const auto none = attention_report(HiQuEModel(plain, 11), corpus);
  for (const auto& v : none.self_mass) CHECK(v.empty());
  for (const auto& v : none.cross_mass) CHECK(v.empty());

  const auto j = to_json(report);
  CHECK(j.at("interviews") == 1);
  CHECK(j.at("cross_attention").size() == 6);
  CHECK(j.at("drill_down")[0].at("slots")[0].at("text") == "where are you from originally");
  CHECK(cross_pair_name(0) == "audio->visual");
  CHECK(cross_pair_name(1) == "visual->audio");
}

TEST_CASE("svg") {
  std::vector<double> mass(85, 1.0 / 85);
  mass[4] = 0.5;
  const auto svg = attention_svg(mass, "self <audio>");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("self &lt;audio&gt;") != std::string::npos);
  CHECK(std::count(svg.begin(), svg.end(), '\n') > 85);
  CHECK(svg.find("slot 5: 0.500000") != std::string::npos);
}

TEST_CASE("signal slots attract attention after training") {
  SyntheticConfig sc;
  sc.signal_slots = {10, 20};
  const auto corpus = generate_synthetic_corpus(sc);
  const auto split = stratified_split(corpus, 1);
  TrainConfig tc;
  tc.epochs = 30;
  tc.seed = 1;
  const auto cp = train(ModelConfig{}, tc, split);
  const auto report = attention_report(HiQuEModel(cp.model_config, cp.params), corpus);

  std::vector<double> mean(85, 0.0);
  for (const auto& m : report.self_mass)
    for (int k = 0; k < 85; ++k) mean[k] += m[k] / 3.0;
  std::vector<int> order(85);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return mean[a] > mean[b]; });
  const std::vector<int> top_decile(order.begin(), order.begin() + 9);
  for (int slot : {10, 20}) {
    CHECK_MESSAGE(std::count(top_decile.begin(), top_decile.end(), slot - 1) == 1, "slot " << slot);
  }
}
