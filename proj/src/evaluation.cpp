#include "hique/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <thread>
#include <cstdio>
#include <sstream>

#include "hique/errors.hpp"

namespace hique {

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool on_off(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected on/off, got '" + v + "'");
}

AblationSetting make(std::string name, QuestionEmbedding qe, bool qa, bool cm, bool aug,
                     ModalitySet mods = ModalitySet::all()) {
  return {std::move(name), qe, qa, cm, aug, mods};
}

}  // namespace

void AblationSetting::validate() const {
  if (modalities.count() == 0) throw ConfigError("ablation setting '" + name + "' selects no modality");
}

std::vector<AblationSetting> layer_ablation_settings() {
  using Q = QuestionEmbedding;
  return {make("no-question-embedding", Q::kNone, true, true, true),
          make("flat-question-embedding", Q::kFlat, true, true, true),
          make("no-qa-no-cm", Q::kHierarchical, false, false, true),
          make("no-cm", Q::kHierarchical, true, false, true),
          make("no-qa", Q::kHierarchical, false, true, true),
          make("no-augmentation", Q::kHierarchical, true, true, false),
          make("full", Q::kHierarchical, true, true, true)};
}

std::vector<AblationSetting> modality_ablation_settings() {
  std::vector<AblationSetting> out;
  for (const char* m : {"A", "V", "T", "A+V", "V+T", "A+T", "A+V+T"}) {
    out.push_back(make(std::string("modalities-") + m, QuestionEmbedding::kHierarchical, true, true, true,
                       ModalitySet::parse(m)));
  }
  return out;
}

static AblationRow run_one(const AblationSetting& s, const DataSplit& split, const RunConfig& base) {
  AblationRow row;
  row.setting = s;
  try {
    s.validate();
    if (split.test.empty()) throw ValidationError("ablation needs a non-empty test split");
    RunConfig rc = base;
    rc.model.qa_module = s.qa_module;
    rc.model.cm_attention = s.cm_attention;
    rc.model.modalities = s.modalities;
    rc.train.augment = s.augmentation;
    rc.train.question_embedding = s.question_embedding;
    const Checkpoint cp = train(rc.model, rc.train, split);
    const HiQuEModel model(cp.model_config, cp.params);
    row.metrics = evaluate_model(model, split.test, s.question_embedding).metrics;
    row.best_epoch = cp.best_epoch;
  } catch (const std::exception& e) {
    row.error = e.what();
  }
  return row;
}

std::vector<AblationRow> run_ablation(const std::vector<AblationSetting>& settings, const DataSplit& split,
                                      const RunConfig& base, const AblationProgress& progress, int jobs) {
  std::vector<AblationRow> rows(settings.size());
  if (jobs <= 0) jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  jobs = std::min<int>(jobs, static_cast<int>(settings.size()));
  std::atomic<std::size_t> next{0};
  std::mutex progress_lock;
  auto worker = [&] {
    for (std::size_t i = next++; i < settings.size(); i = next++) {
      rows[i] = run_one(settings[i], split, base);
      if (progress) {
        std::lock_guard lock(progress_lock);
        progress(rows[i]);
      }
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "QE,HQE,QA-Module,CM-Attention,Aug,Precision,Recall,F1,WA-F1,Modalities,G-Mean,Setting,Status\n";
  for (const auto& r : rows) {
    const auto& s = r.setting;
    out << (s.question_embedding != QuestionEmbedding::kNone) << ','
        << (s.question_embedding == QuestionEmbedding::kHierarchical) << ',' << s.qa_module << ',' << s.cm_attention
        << ',' << s.augmentation << ',';
    if (r.metrics) {
      out << fixed(r.metrics->macro_precision) << ',' << fixed(r.metrics->macro_recall) << ','
          << fixed(r.metrics->macro_f1) << ',' << fixed(r.metrics->weighted_f1) << ',';
    } else {
      out << ",,,,";
    }
    out << s.modalities.str() << ',' << (r.metrics ? fixed(r.metrics->g_mean) : "") << ',' << s.name << ',';
    if (r.metrics) {
      out << "ok";
    } else {
      std::string msg = r.error;
      std::replace(msg.begin(), msg.end(), '"', '\'');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      out << "\"failed: " << msg << '"';
    }
    out << '\n';
  }
  return out.str();
}

AblationPlan parse_ablation_plan(std::string_view text, RunConfig base) {
  AblationPlan plan;
  std::string config_lines;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string content = line;
    if (const auto hash = content.find('#'); hash != std::string::npos) content.resize(hash);
    content = trim(content);
    if (content.empty()) {
      config_lines += "\n";
      continue;
    }
    const auto eq = content.find('=');
    const std::string key = eq == std::string::npos ? content : trim(content.substr(0, eq));
    const std::string value = eq == std::string::npos ? "" : trim(content.substr(eq + 1));
    auto where = [&] { return "plan line " + std::to_string(line_no) + ": "; };
    if (key == "preset") {
      if (value == "layers" || value == "table") {
        for (auto& s : layer_ablation_settings()) plan.settings.push_back(s);
      } else if (value == "modalities") {
        for (auto& s : modality_ablation_settings()) plan.settings.push_back(s);
      } else {
        throw ConfigError(where() + "unknown preset '" + value + "' (layers, modalities)");
      }
      config_lines += "\n";
    } else if (key == "setting") {
      std::istringstream fields(value);
      AblationSetting s;
      if (!(fields >> s.name)) throw ConfigError(where() + "setting needs a name");
      std::string field;
      try {
        while (fields >> field) {
          const auto colon = field.find('=');
          if (colon == std::string::npos) throw ConfigError("expected field=value, got '" + field + "'");
          const std::string k = field.substr(0, colon), v = field.substr(colon + 1);
          if (k == "qe") s.question_embedding = parse_question_embedding(v);
          else if (k == "qa") s.qa_module = on_off(k, v);
          else if (k == "cm") s.cm_attention = on_off(k, v);
          else if (k == "aug") s.augmentation = on_off(k, v);
          else if (k == "modalities") s.modalities = ModalitySet::parse(v);
          else throw ConfigError("unknown setting field '" + k + "'");
        }
        s.validate();
      } catch (const Error& e) {
        throw ConfigError(where() + e.what());
      }
      plan.settings.push_back(std::move(s));
      config_lines += "\n";
    } else {
      config_lines += line + "\n";
    }
  }
  plan.base = parse_run_config(config_lines, std::move(base));
  if (plan.settings.empty()) throw ConfigError("ablation plan lists no settings");
  return plan;
}

// ---- attention -------------------------------------------------------------------

std::vector<double> received_mass(const std::vector<Eigen::MatrixXd>& maps_per_head) {
  if (maps_per_head.empty()) return {};
  const Eigen::Index n = maps_per_head.front().cols();
  Eigen::RowVectorXd mass = Eigen::RowVectorXd::Zero(n);
  for (const auto& m : maps_per_head) mass += m.colwise().mean();
  mass /= static_cast<double>(maps_per_head.size());
  return {mass.data(), mass.data() + mass.size()};
}

std::string cross_pair_name(int index) {
  const auto& pair = kModalityPairs[index / 2];
  return std::string(to_string(pair[index % 2])) + "->" + std::string(to_string(pair[1 - index % 2]));
}

AttentionReport attention_report(const HiQuEModel& model, const std::vector<EmbeddedInterview>& data,
                                 QuestionEmbedding mode, const QuestionTaxonomy& taxonomy) {
  AttentionReport report;
  const int len = model.config().seq_len;
  auto accumulate = [len](std::vector<double>& total, const std::vector<double>& mass) {
    if (mass.empty()) return;
    if (total.empty()) total.assign(len, 0.0);
    for (int k = 0; k < len; ++k) total[k] += mass[k];
  };
  for (const auto& original : data) {
    const EmbeddedInterview item = apply_question_embedding(original, mode);
    const ForwardResult r = model.forward(item);
    std::array<std::vector<double>, 3> self;
    std::array<std::vector<double>, 6> cross;
    for (int m = 0; m < 3; ++m) {
      self[m] = received_mass(r.maps.self_maps[m]);
      accumulate(report.self_mass[m], self[m]);
    }
    for (int i = 0; i < 6; ++i) {
      cross[i] = received_mass(r.maps.cross_maps[i]);
      accumulate(report.cross_mass[i], cross[i]);
    }

    InterviewAttention ia;
    ia.participant_id = item.participant_id;
    ia.label = item.label;
    ia.prediction = r.prediction;
    for (int k = 0; k < len; ++k) {
      bool present = false;
      for (const auto& f : item.modalities) present = present || (k < f.slots() && f.mask[k]);
      if (!present) continue;
      SlotAttention sa;
      sa.slot = k + 1;
      if (sa.slot <= kNumQuestions) {
        const auto& entry = taxonomy.at(sa.slot);
        sa.text = entry.text;
        sa.role = entry.role;
      }
      sa.effective_topic_slot = sa.slot;
      for (const auto& h : item.hierarchy) {
        if (h.slot_index == sa.slot) {
          sa.role = h.role;
          sa.effective_topic_slot = h.effective_topic_slot;
          sa.chain_depth = h.chain_depth;
        }
      }
      for (int m = 0; m < 3; ++m)
        if (!self[m].empty()) sa.self_mass[m] = self[m][k];
      for (int i = 0; i < 6; ++i)
        if (!cross[i].empty()) sa.cross_mass[i] = cross[i][k];
      ia.slots.push_back(std::move(sa));
    }
    report.drill_down.push_back(std::move(ia));
    ++report.interviews;
  }
  if (report.interviews > 0) {
    for (auto& v : report.self_mass)
      for (double& x : v) x /= report.interviews;
    for (auto& v : report.cross_mass)
      for (double& x : v) x /= report.interviews;
  }
  return report;
}

nlohmann::json to_json(const AttentionReport& report) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json self = nlohmann::json::object();
  for (int m = 0; m < 3; ++m) {
    if (!report.self_mass[m].empty()) self[std::string(to_string(kAllModalities[m]))] = report.self_mass[m];
  }
  nlohmann::json cross = nlohmann::json::object();
  for (int i = 0; i < 6; ++i) {
    if (!report.cross_mass[i].empty()) cross[cross_pair_name(i)] = report.cross_mass[i];
  }
  nlohmann::json interviews = nlohmann::json::array();
  for (const auto& ia : report.drill_down) {
    nlohmann::json slots = nlohmann::json::array();
    for (const auto& s : ia.slots) {
      nlohmann::json sm = nlohmann::json::object();
      for (int m = 0; m < 3; ++m)
        if (s.self_mass[m]) sm[std::string(to_string(kAllModalities[m]))] = opt(s.self_mass[m]);
      nlohmann::json cm = nlohmann::json::object();
      for (int i = 0; i < 6; ++i)
        if (s.cross_mass[i]) cm[cross_pair_name(i)] = opt(s.cross_mass[i]);
      slots.push_back({{"slot", s.slot},
                       {"text", s.text},
                       {"role", to_string(s.role)},
                       {"effective_topic_slot", s.effective_topic_slot},
                       {"chain_depth", s.chain_depth},
                       {"self_attention", std::move(sm)},
                       {"cross_attention", std::move(cm)}});
    }
    interviews.push_back({{"participant_id", ia.participant_id},
                          {"label", ia.label ? nlohmann::json(to_string(*ia.label)) : nlohmann::json(nullptr)},
                          {"predicted", to_string(ia.prediction.label)},
                          {"p_depression", ia.prediction.probabilities[1]},
                          {"slots", std::move(slots)}});
  }
  return {{"interviews", report.interviews},
          {"self_attention", std::move(self)},
          {"cross_attention", std::move(cross)},
          {"drill_down", std::move(interviews)}};
}

std::string attention_svg(const std::vector<double>& mass, const std::string& title) {
  const double width = 900, height = 320, left = 50, bottom = 40, top = 30;
  const double plot_w = width - left - 10, plot_h = height - bottom - top;
  const double peak = mass.empty() ? 1.0 : std::max(*std::max_element(mass.begin(), mass.end()), 1e-12);
  const double bar = mass.empty() ? 0.0 : plot_w / static_cast<double>(mass.size());
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  std::string safe_title;
  for (char c : title) {
    if (c == '<') safe_title += "&lt;";
    else if (c == '>') safe_title += "&gt;";
    else if (c == '&') safe_title += "&amp;";
    else safe_title += c;
  }
  out << "<text x=\"" << left << "\" y=\"18\" font-size=\"14\">" << safe_title << "</text>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
  out << "<text x=\"4\" y=\"" << top + 10 << "\">" << fixed(peak, 4) << "</text>\n";
  for (std::size_t k = 0; k < mass.size(); ++k) {
    const double h = plot_h * mass[k] / peak;
    const int slot = static_cast<int>(k) + 1;
    const char* colour = slot <= kNumPrimary ? "#3b6ea5" : "#d9822b";
    out << "<rect x=\"" << fixed(left + bar * k, 2) << "\" y=\"" << fixed(top + plot_h - h, 2) << "\" width=\""
        << fixed(bar * 0.85, 2) << "\" height=\"" << fixed(h, 2) << "\" fill=\"" << colour << "\"><title>slot "
        << slot << ": " << fixed(mass[k]) << "</title></rect>\n";
    if (slot % 5 == 0 || slot == 1) {
      out << "<text x=\"" << fixed(left + bar * k, 2) << "\" y=\"" << top + plot_h + 14 << "\">" << slot
          << "</text>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace hique
