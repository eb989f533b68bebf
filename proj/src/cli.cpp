#include "hique/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "hique/errors.hpp"
#include "hique/evaluation.hpp"
#include "hique/features.hpp"
#include "hique/io.hpp"
#include "hique/structuring.hpp"
#include "hique/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace hique {

fs::path manifest_path_for(const fs::path& output, bool is_directory) {
  if (is_directory) return output / "manifest.json";
  return fs::path(output.string() + ".manifest.json");
}

fs::path timings_path_for(const fs::path& manifest) {
  std::string s = manifest.string();
  const std::string suffix = ".json";
  if (s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0)
    s.resize(s.size() - suffix.size());
  return fs::path(s + ".timings.json");
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n\"");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n\"");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  return out;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> read_label_csv(const fs::path& file) {
  std::istringstream in(read_text_file(file));
  std::string line;
  if (!std::getline(in, line)) throw ParseError(file.string() + ": empty label file");
  const auto header = split_csv_line(line);
  int id_col = -1, label_col = -1;
  for (int i = 0; i < static_cast<int>(header.size()); ++i) {
    const std::string h = lower(header[i]);
    if (h == "participant_id") id_col = i;
    if (h == "label" || h == "phq8_binary" || h == "phq_binary") label_col = i;
  }
  if (id_col < 0 || label_col < 0)
    throw ParseError(file.string() + ": header needs participant_id and label (or PHQ8_Binary) columns");
  std::vector<std::pair<std::string, std::string>> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (static_cast<int>(cells.size()) <= std::max(id_col, label_col))
      throw ParseError(file.string() + " line " + std::to_string(line_no) + ": too few columns");
    try {
      out.emplace_back(cells[id_col], std::string(to_string(parse_label(cells[label_col]))));
    } catch (const ParseError& e) {
      throw ParseError(file.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

struct Context {
  std::ostream& out;
  std::ostream& err;
  bool verbose = false;
  std::vector<std::string> args;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> config;

  void log(const std::string& msg) const {
    if (verbose) err << msg << '\n';
  }
};

std::string path_string(const fs::path& p) { return p.lexically_normal().generic_string(); }

class Manifest {
 public:
  Manifest(std::string command, const Context& ctx) : start_(Clock::now()) {
    body_["artifact_version"] = kArtifactVersion;
    body_["command"] = std::move(command);
    body_["args"] = ctx.args;
    body_["inputs"] = json::object();
    body_["outputs"] = json::object();
  }
  void input(const std::string& key, const fs::path& p) { body_["inputs"][key] = path_string(p); }
  void output(const std::string& key, const fs::path& p) { body_["outputs"][key] = path_string(p); }
  void set(const std::string& key, json value) { body_[key] = std::move(value); }
  void mark(const std::string& phase) {
    timings_[phase] = std::chrono::duration<double>(Clock::now() - start_).count();
  }

  void write(const fs::path& file) {
    mark("total_seconds");
    write_file_atomic(file, body_.dump(2) + "\n");
    json t{{"command", body_["command"]}, {"seconds", timings_}};
    write_file_atomic(timings_path_for(file), t.dump(2) + "\n");
  }

 private:
  json body_;
  json timings_ = json::object();
  Clock::time_point start_;
};

json run_config_json(const RunConfig& rc) {
  return {{"model", to_json(rc.model)}, {"train", to_json(rc.train)}, {"text", serialize_run_config(rc)}};
}

// Directory outputs refuse to clobber a non-empty directory unless forced.
void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError("output " + dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force)
      throw ConfigError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
  }
  fs::create_directories(dir);
}

// Stale cache files from an earlier run would leak into the new corpus.
void remove_matching(const fs::path& dir, const std::string& extension) {
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == extension) fs::remove(entry.path());
  }
}

RunConfig resolve_run_config(const Context& ctx) {
  RunConfig rc;
  if (auto env = seed_from_environment()) rc.train.seed = *env;
  if (ctx.config) rc = load_run_config(*ctx.config, rc);
  if (ctx.seed) rc.train.seed = *ctx.seed;
  return rc;
}

std::uint64_t resolve_seed(const Context& ctx, std::uint64_t fallback) {
  if (ctx.seed) return *ctx.seed;
  if (auto env = seed_from_environment()) return *env;
  return fallback;
}

DataSplit load_split(const fs::path& features_dir, std::uint64_t seed, std::string* source) {
  auto corpus = load_feature_dir(features_dir);
  if (corpus.empty()) throw ValidationError("no feature files (*.hqf) in " + features_dir.string());
  const fs::path split_file = features_dir / "split.csv";
  if (fs::exists(split_file)) {
    if (source) *source = "split.csv";
    return apply_split_file(split_file, std::move(corpus));
  }
  if (source) *source = "stratified seed " + std::to_string(seed);
  return stratified_split(corpus, seed);
}

std::vector<EmbeddedInterview> select_split(const fs::path& features_dir, std::uint64_t seed,
                                            const std::string& which, std::string* source) {
  if (which == "all") {
    if (source) *source = "all";
    auto corpus = load_feature_dir(features_dir);
    if (corpus.empty()) throw ValidationError("no feature files (*.hqf) in " + features_dir.string());
    return corpus;
  }
  DataSplit split = load_split(features_dir, seed, source);
  switch (parse_split_role(which)) {
    case SplitRole::kTrain: return std::move(split.train);
    case SplitRole::kValidation: return std::move(split.validation);
    case SplitRole::kTest: return std::move(split.test);
  }
  return {};
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// ---- synthesize -------------------------------------------------------------------

struct SynthesizeOptions {
  SyntheticConfig synthetic;
  fs::path out;
  bool force = false;
};

void cmd_synthesize(const SynthesizeOptions& o, const Context& ctx) {
  Manifest manifest("synthesize", ctx);
  prepare_output_dir(o.out, o.force);
  remove_matching(o.out, ".hqf");
  const auto& c = o.synthetic;
  const auto corpus = generate_synthetic_corpus(c);
  manifest.mark("generate_seconds");

  std::string labels = "participant_id,label\n";
  for (const auto& e : corpus) {
    write_feature_cache(cache_file_for(o.out, e.participant_id), e);
    labels += e.participant_id + "," + std::string(to_string(*e.label)) + "\n";
  }
  write_file_atomic(o.out / "labels.csv", labels);
  write_split_file(o.out / "split.csv", stratified_split(corpus, c.seed));

  manifest.set("seed", c.seed);
  manifest.set("config", {{"n_depressed", c.n_depressed},
                          {"n_normal", c.n_normal},
                          {"seed", c.seed},
                          {"signal_strength", c.signal_strength},
                          {"signal_slots", c.signal_slots},
                          {"structure_signal", c.structure_signal},
                          {"primary_presence", c.primary_presence},
                          {"follow_up_presence", c.follow_up_presence},
                          {"visual_missing_rate", c.visual_missing_rate}});
  manifest.set("interviews", corpus.size());
  manifest.output("features_dir", o.out);
  manifest.write(manifest_path_for(o.out, true));
  ctx.out << "synthesized " << corpus.size() << " interviews into " << o.out.string() << '\n';
}

// ---- structure --------------------------------------------------------------------

struct StructureOptions {
  std::vector<fs::path> transcripts;
  fs::path out;
  bool force = false;
  bool allow_unseen = false;
  std::string encoder = "hashing";
  std::optional<fs::path> taxonomy;
  std::optional<fs::path> labels;
};

std::string participant_from_file(const fs::path& p) {
  std::string stem = p.stem().string();
  for (const std::string suffix : {"_TRANSCRIPT", "_transcript", "_Transcript"}) {
    if (stem.size() > suffix.size() && stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) == 0)
      return stem.substr(0, stem.size() - suffix.size());
  }
  return stem;
}

int cmd_structure(const StructureOptions& o, const Context& ctx) {
  Manifest manifest("structure", ctx);
  prepare_output_dir(o.out, o.force);
  QuestionTaxonomy taxonomy = o.taxonomy ? load_taxonomy(*o.taxonomy) : builtin_taxonomy();
  const std::size_t base_size = taxonomy.size();
  std::unique_ptr<TextEncoder> encoder;
  std::unique_ptr<UnseenQuestionMapper> mapper;
  if (o.allow_unseen) {
    encoder = make_encoder(o.encoder);
    mapper = std::make_unique<UnseenQuestionMapper>(*encoder, taxonomy);
  }
  std::map<std::string, std::string> labels;
  if (o.labels) {
    for (auto& [id, label] : read_label_csv(*o.labels)) labels[id] = label;
    manifest.input("labels", *o.labels);
  }

  std::vector<fs::path> files = o.transcripts;
  std::sort(files.begin(), files.end());
  json summary = json::array();
  int blocking = 0;
  std::set<std::string> ids;
  for (const auto& file : files) {
    const std::string id = participant_from_file(file);
    if (!ids.insert(id).second) throw ValidationError("two transcripts map to participant " + id);
    const auto turns = read_transcript(file);
    StructuringReport report = structure_interview(id, turns, taxonomy, mapper.get());
    if (auto it = labels.find(id); it != labels.end()) report.interview.label = parse_label(it->second);
    write_file_atomic(o.out / (id + ".json"), to_json(report).dump(2) + "\n");

    json unmatched = json::array();
    for (const auto& q : report.unmatched_questions) {
      if (looks_like_question(q)) unmatched.push_back(q);
    }
    blocking += static_cast<int>(unmatched.size());
    for (const auto& q : unmatched) ctx.err << id << ": unmatched question: " << q.get<std::string>() << '\n';
    summary.push_back({{"participant_id", id},
                       {"transcript", path_string(file)},
                       {"segments", report.interview.segments.size()},
                       {"popcount", report.layout.popcount()},
                       {"unmatched_questions", std::move(unmatched)}});
    ctx.log(id + ": " + std::to_string(report.interview.segments.size()) + " segments, " +
            std::to_string(report.layout.popcount()) + " slots");
    manifest.input("transcript:" + id, file);
  }
  if (taxonomy.size() > base_size) {
    write_file_atomic(o.out / "taxonomy.tsv", serialize_taxonomy(taxonomy));
    manifest.output("taxonomy", o.out / "taxonomy.tsv");
  }
  write_file_atomic(o.out / "summary.json", summary.dump(2) + "\n");
  manifest.set("config", {{"allow_unseen", o.allow_unseen},
                          {"encoder", o.allow_unseen ? json(o.encoder) : json(nullptr)},
                          {"taxonomy", o.taxonomy ? json(path_string(*o.taxonomy)) : json("builtin")},
                          {"appended_questions", taxonomy.size() - base_size}});
  manifest.output("structured_dir", o.out);
  manifest.write(manifest_path_for(o.out, true));
  ctx.out << "structured " << files.size() << " transcripts into " << o.out.string() << '\n';
  if (blocking > 0) {
    ctx.err << blocking << " interviewer question(s) matched no taxonomy entry; rerun with --allow-unseen to map them\n";
    return static_cast<int>(ExitCode::kDataValidation);
  }
  return 0;
}

// ---- extract-features -------------------------------------------------------------

struct ExtractOptions {
  fs::path structured_dir;
  fs::path out;
  bool force = false;
  std::string encoder = "hashing";
  std::string audio = "none";
  std::optional<fs::path> wav_dir;
  std::optional<fs::path> clnf_dir;
  std::optional<fs::path> labels;
};

std::optional<fs::path> find_participant_file(const fs::path& dir, const std::string& id,
                                              std::initializer_list<std::string> names) {
  for (const auto& n : names) {
    const fs::path p = dir / (id + n);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

void cmd_extract(const ExtractOptions& o, const Context& ctx) {
  Manifest manifest("extract-features", ctx);
  if (!fs::is_directory(o.structured_dir))
    throw ConfigError("structured directory " + o.structured_dir.string() + " not found");
  prepare_output_dir(o.out, o.force);
  remove_matching(o.out, ".hqf");

  const auto text = make_encoder(o.encoder);
  std::unique_ptr<AcousticAdapter> audio;
  if (o.audio == "synthetic") {
    audio = std::make_unique<SyntheticAcousticAdapter>(resolve_seed(ctx, 0));
  } else if (o.audio.rfind("command:", 0) == 0) {
    audio = std::make_unique<CommandAcousticAdapter>(o.audio.substr(8));
    if (!o.wav_dir) throw ConfigError("--audio command:... needs --wav-dir");
  } else if (o.audio != "none") {
    throw ConfigError("--audio must be none, synthetic or command:<command line>");
  }
  std::map<std::string, std::string> labels;
  if (o.labels) {
    for (auto& [id, label] : read_label_csv(*o.labels)) labels[id] = label;
    manifest.input("labels", *o.labels);
  }

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(o.structured_dir)) {
    const auto& p = entry.path();
    if (p.extension() != ".json") continue;
    const std::string name = p.filename().string();
    if (name == "manifest.json" || name == "summary.json" || name.find(".timings.") != std::string::npos) continue;
    files.push_back(p);
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("no structured interviews in " + o.structured_dir.string());

  std::string label_csv = "participant_id,label\n";
  for (const auto& file : files) {
    json j;
    try {
      j = json::parse(read_text_file(file));
    } catch (const json::exception& e) {
      throw ParseError(file.string() + ": " + e.what());
    }
    StructuredInterview interview = structured_interview_from_json(j);
    if (auto it = labels.find(interview.participant_id); it != labels.end())
      interview.label = parse_label(it->second);

    EmbeddingSources sources;
    sources.text = text.get();
    if (audio) {
      sources.audio = audio.get();
      if (o.wav_dir) {
        auto wav = find_participant_file(*o.wav_dir, interview.participant_id, {"_AUDIO.wav", ".wav"});
        if (!wav) throw ValidationError("no wav file for participant " + interview.participant_id + " in " +
                                        o.wav_dir->string());
        sources.wav = *wav;
      }
    }
    if (o.clnf_dir) {
      auto clnf = find_participant_file(*o.clnf_dir, interview.participant_id,
                                        {"_CLNF_features.txt", "_clnf.txt", ".txt"});
      if (!clnf) throw ValidationError("no CLNF landmark file for participant " + interview.participant_id +
                                       " in " + o.clnf_dir->string());
      sources.landmarks = read_clnf_landmarks(*clnf);
    }
    const EmbeddedInterview embedded = embed_interview(interview, sources);
    write_feature_cache(cache_file_for(o.out, embedded.participant_id), embedded);
    label_csv += embedded.participant_id + "," +
                 (embedded.label ? std::string(to_string(*embedded.label)) : std::string()) + "\n";
    ctx.log(embedded.participant_id + ": audio " + std::to_string(embedded.modalities[0].present_count()) +
            ", visual " + std::to_string(embedded.modalities[1].present_count()) + ", text " +
            std::to_string(embedded.modalities[2].present_count()) + " rows");
  }
  write_file_atomic(o.out / "labels.csv", label_csv);
  manifest.input("structured_dir", o.structured_dir);
  if (o.wav_dir) manifest.input("wav_dir", *o.wav_dir);
  if (o.clnf_dir) manifest.input("clnf_dir", *o.clnf_dir);
  manifest.set("config", {{"encoder", o.encoder}, {"audio", o.audio}});
  manifest.set("seed", resolve_seed(ctx, 0));
  manifest.set("interviews", files.size());
  manifest.output("features_dir", o.out);
  manifest.write(manifest_path_for(o.out, true));
  ctx.out << "extracted features for " << files.size() << " interviews into " << o.out.string() << '\n';
}

// ---- train / evaluate -------------------------------------------------------------

struct TrainOptions {
  fs::path features_dir;
  fs::path out;
};

void cmd_train(const TrainOptions& o, const Context& ctx) {
  Manifest manifest("train", ctx);
  const RunConfig rc = resolve_run_config(ctx);
  std::string source;
  const DataSplit split = load_split(o.features_dir, rc.train.seed, &source);
  manifest.mark("load_seconds");
  ctx.log("split (" + source + "): train " + std::to_string(split.train.size()) + ", validation " +
          std::to_string(split.validation.size()) + ", test " + std::to_string(split.test.size()));
  const Checkpoint cp = train(rc.model, rc.train, split, [&](const EpochRecord& r) {
    ctx.log("epoch " + std::to_string(r.epoch) + " train_loss " + fmt(r.train_loss) + " val_loss " +
            fmt(r.validation_loss) + " val_macro_f1 " + fmt(r.validation_macro_f1));
  });
  manifest.mark("train_seconds");
  save_checkpoint(o.out, cp);

  manifest.set("config", run_config_json(rc));
  manifest.set("seed", rc.train.seed);
  manifest.set("split", {{"source", source},
                         {"train", split.train.size()},
                         {"validation", split.validation.size()},
                         {"test", split.test.size()}});
  manifest.set("best_epoch", cp.best_epoch);
  manifest.set("best_validation_macro_f1",
               cp.best_epoch >= 0 ? cp.history[cp.best_epoch].validation_macro_f1 : 0.0);
  manifest.input("features_dir", o.features_dir);
  if (ctx.config) manifest.input("config", *ctx.config);
  manifest.output("checkpoint", o.out);
  manifest.write(manifest_path_for(o.out, false));
  ctx.out << "trained " << cp.history.size() << " epochs, best epoch " << cp.best_epoch << ", checkpoint "
          << o.out.string() << '\n';
}

struct EvaluateOptions {
  fs::path checkpoint;
  fs::path features_dir;
  fs::path out;
  std::string split = "test";
};

json evaluation_json(const EvaluationResult& r, const std::vector<EmbeddedInterview>& data) {
  json preds = json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    preds.push_back({{"participant_id", data[i].participant_id},
                     {"label", data[i].label ? json(to_string(*data[i].label)) : json(nullptr)},
                     {"predicted", to_string(r.predictions[i].label)},
                     {"p_depression", r.predictions[i].probabilities[1]}});
  }
  return {{"metrics", to_json(r.metrics)}, {"loss", r.loss}, {"predictions", std::move(preds)}};
}

void cmd_evaluate(const EvaluateOptions& o, const Context& ctx) {
  Manifest manifest("evaluate", ctx);
  const Checkpoint cp = load_checkpoint(o.checkpoint);
  const HiQuEModel model(cp.model_config, cp.params);
  std::string source;
  const auto data = select_split(o.features_dir, cp.train_config.seed, o.split, &source);
  const auto result = evaluate_model(model, data, cp.train_config.question_embedding);
  json j = evaluation_json(result, data);
  j["split"] = o.split;
  j["interviews"] = data.size();
  write_file_atomic(o.out, j.dump(2) + "\n");

  manifest.set("seed", cp.train_config.seed);
  manifest.set("config", {{"split", o.split}, {"split_source", source}});
  manifest.input("checkpoint", o.checkpoint);
  manifest.input("features_dir", o.features_dir);
  manifest.output("metrics", o.out);
  manifest.write(manifest_path_for(o.out, false));
  const auto& m = result.metrics;
  ctx.out << o.split << " (" << data.size() << "): macro F1 " << fmt(m.macro_f1) << ", weighted F1 "
          << fmt(m.weighted_f1) << ", G-mean " << fmt(m.g_mean) << '\n';
}

// ---- ablate -----------------------------------------------------------------------

struct AblateOptions {
  fs::path plan;
  fs::path features_dir;
  fs::path out;
  int jobs = 1;
};

void cmd_ablate(const AblateOptions& o, const Context& ctx) {
  Manifest manifest("ablate", ctx);
  RunConfig base;
  if (auto env = seed_from_environment()) base.train.seed = *env;
  if (ctx.config) base = load_run_config(*ctx.config, base);
  AblationPlan plan = parse_ablation_plan(read_text_file(o.plan), base);
  if (ctx.seed) plan.base.train.seed = *ctx.seed;
  std::string source;
  const DataSplit split = load_split(o.features_dir, plan.base.train.seed, &source);
  const auto rows = run_ablation(plan.settings, split, plan.base, [&](const AblationRow& r) {
    ctx.log(r.setting.name + ": " + (r.metrics ? "macro F1 " + fmt(r.metrics->macro_f1) : "failed: " + r.error));
  }, o.jobs);
  write_file_atomic(o.out, ablation_csv(rows));

  json settings = json::array();
  for (const auto& r : rows) settings.push_back(r.setting.name);
  manifest.set("seed", plan.base.train.seed);
  manifest.set("config", run_config_json(plan.base));
  manifest.set("settings", std::move(settings));
  manifest.set("split_source", source);
  manifest.input("plan", o.plan);
  manifest.input("features_dir", o.features_dir);
  if (ctx.config) manifest.input("config", *ctx.config);
  manifest.output("table", o.out);
  manifest.write(manifest_path_for(o.out, false));
  int failed = 0;
  for (const auto& r : rows) failed += !r.metrics;
  ctx.out << "ablation: " << rows.size() << " settings, " << failed << " failed, table " << o.out.string() << '\n';
}

// ---- report-attention -------------------------------------------------------------

struct ReportOptions {
  fs::path checkpoint;
  fs::path features_dir;
  fs::path out;
  std::optional<fs::path> plots;
  std::string split = "all";
};

void cmd_report(const ReportOptions& o, const Context& ctx) {
  Manifest manifest("report-attention", ctx);
  const Checkpoint cp = load_checkpoint(o.checkpoint);
  const HiQuEModel model(cp.model_config, cp.params);
  std::string source;
  const auto data = select_split(o.features_dir, cp.train_config.seed, o.split, &source);
  const auto report = attention_report(model, data, cp.train_config.question_embedding);
  json j = to_json(report);
  j["split"] = o.split;
  write_file_atomic(o.out, j.dump(2) + "\n");
  if (o.plots) {
    fs::create_directories(*o.plots);
    for (int m = 0; m < 3; ++m) {
      if (report.self_mass[m].empty()) continue;
      const std::string name(to_string(kAllModalities[m]));
      write_file_atomic(*o.plots / ("self_" + name + ".svg"),
                        attention_svg(report.self_mass[m], "question-aware attention, " + name));
    }
    for (int i = 0; i < 6; ++i) {
      if (report.cross_mass[i].empty()) continue;
      std::string name = cross_pair_name(i);
      const std::string title = "cross-modal attention, " + name;
      name.replace(name.find("->"), 2, "_to_");
      write_file_atomic(*o.plots / ("cross_" + name + ".svg"), attention_svg(report.cross_mass[i], title));
    }
    manifest.output("plots", *o.plots);
  }
  manifest.set("seed", cp.train_config.seed);
  manifest.set("config", {{"split", o.split}, {"split_source", source}});
  manifest.input("checkpoint", o.checkpoint);
  manifest.input("features_dir", o.features_dir);
  manifest.output("report", o.out);
  manifest.write(manifest_path_for(o.out, false));
  ctx.out << "attention report over " << report.interviews << " interviews: " << o.out.string() << '\n';
}

// ---- map-question -----------------------------------------------------------------

struct MapOptions {
  std::vector<std::string> texts;
  std::string encoder = "hashing";
  std::optional<fs::path> taxonomy;
  std::optional<double> threshold;
  std::optional<fs::path> out;
};

void cmd_map(const MapOptions& o, const Context& ctx) {
  QuestionTaxonomy taxonomy = o.taxonomy ? load_taxonomy(*o.taxonomy) : builtin_taxonomy();
  const auto encoder = make_encoder(o.encoder);
  UnseenQuestionMapper mapper(*encoder, taxonomy);
  if (o.threshold) mapper.set_threshold(*o.threshold);
  json results = json::array();
  for (const auto& text : o.texts) {
    const MappingResult r = mapper.map(text, taxonomy);
    results.push_back({{"question", text},
                       {"index", r.entry.index},
                       {"text", r.entry.text},
                       {"role", to_string(r.entry.role)},
                       {"similarity", r.similarity},
                       {"appended", r.appended}});
  }
  json j{{"encoder", encoder->name()}, {"threshold", mapper.threshold()}, {"mappings", std::move(results)}};
  if (o.out) {
    Manifest manifest("map-question", ctx);
    write_file_atomic(*o.out, j.dump(2) + "\n");
    manifest.set("config", {{"encoder", o.encoder}, {"threshold", mapper.threshold()}});
    if (o.taxonomy) manifest.input("taxonomy", *o.taxonomy);
    manifest.output("mappings", *o.out);
    manifest.write(manifest_path_for(*o.out, false));
  }
  ctx.out << j.dump(2) << '\n';
}

// ---- pipeline ---------------------------------------------------------------------

struct PipelineOptions {
  SynthesizeOptions synth;
  std::optional<fs::path> features_dir;
  fs::path out;
  bool force = false;
  bool plots = true;
};

void cmd_pipeline(PipelineOptions o, const Context& ctx) {
  Manifest manifest("pipeline", ctx);
  prepare_output_dir(o.out, o.force);
  fs::path features = o.out / "features";
  if (o.features_dir) {
    features = *o.features_dir;
  } else {
    o.synth.out = features;
    o.synth.force = true;
    cmd_synthesize(o.synth, ctx);
  }
  const fs::path checkpoint = o.out / "model.ckpt";
  cmd_train({features, checkpoint}, ctx);
  cmd_evaluate({checkpoint, features, o.out / "metrics.json", "test"}, ctx);
  ReportOptions report{checkpoint, features, o.out / "attention.json", std::nullopt, "test"};
  if (o.plots) report.plots = o.out / "plots";
  cmd_report(report, ctx);

  manifest.set("stages", {"synthesize", "train", "evaluate", "report-attention"});
  if (o.features_dir) manifest.input("features_dir", *o.features_dir);
  manifest.output("run_dir", o.out);
  manifest.output("checkpoint", checkpoint);
  manifest.output("metrics", o.out / "metrics.json");
  manifest.write(manifest_path_for(o.out, true));
}

// ---- argument wiring --------------------------------------------------------------

void add_synthetic_options(CLI::App* cmd, SyntheticConfig& c) {
  cmd->add_option("--n-depressed", c.n_depressed, "depression-labelled interviews")->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--n-normal", c.n_normal, "normal-labelled interviews")->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--signal-strength", c.signal_strength, "mean shift on signal slots")->capture_default_str();
  cmd->add_flag("--structure-signal", c.structure_signal, "put the signal on follow-ups tied to parents");
  cmd->add_option("--visual-missing-rate", c.visual_missing_rate)->capture_default_str()->check(CLI::Range(0.0, 1.0));
}

int dispatch(const std::vector<std::string>& args, Context& ctx) {
  CLI::App app{"hierarchical question embedding for interview-based depression detection", "hique"};
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 0;
  std::string config;
  auto* seed_opt = app.add_option("--seed", seed, "random seed (overrides config and HIQUE_SEED)");
  auto* config_opt = app.add_option("--config", config, "run config (key = value lines)")->check(CLI::ExistingFile);
  app.add_flag("--verbose,-v", ctx.verbose, "progress on stderr");

  std::function<int()> action;

  SynthesizeOptions synth;
  auto* s = app.add_subcommand("synthesize", "generate a synthetic feature corpus");
  add_synthetic_options(s, synth.synthetic);
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_flag("--force", synth.force, "overwrite a non-empty output directory");
  s->callback([&] {
    action = [&] {
      synth.synthetic.seed = resolve_seed(ctx, 1);
      cmd_synthesize(synth, ctx);
      return 0;
    };
  });

  StructureOptions structure;
  std::vector<std::string> transcripts;
  auto* st = app.add_subcommand("structure", "segment transcripts and assign question hierarchy");
  st->add_option("transcripts", transcripts, "JSONL or DAIC-WOZ TSV transcripts")->required()->check(CLI::ExistingFile);
  st->add_option("--out", structure.out, "output directory")->required();
  st->add_flag("--force", structure.force);
  st->add_flag("--allow-unseen", structure.allow_unseen, "map unseen questions by BERT-score");
  st->add_option("--encoder", structure.encoder, "hashing or command:<cmd {input}>")->capture_default_str();
  st->add_option("--taxonomy", structure.taxonomy, "taxonomy file (default built-in)")->check(CLI::ExistingFile);
  st->add_option("--labels", structure.labels, "participant_id,label CSV")->check(CLI::ExistingFile);
  st->callback([&] {
    action = [&] {
      for (const auto& t : transcripts) structure.transcripts.emplace_back(t);
      return cmd_structure(structure, ctx);
    };
  });

  ExtractOptions extract;
  auto* ex = app.add_subcommand("extract-features", "embed structured interviews into the feature cache");
  ex->add_option("--structured-dir", extract.structured_dir, "output of structure")->required();
  ex->add_option("--out", extract.out, "feature cache directory")->required();
  ex->add_flag("--force", extract.force);
  ex->add_option("--encoder", extract.encoder, "text encoder")->capture_default_str();
  ex->add_option("--audio", extract.audio, "none, synthetic or command:<cmd {wav} {start} {end}>")
      ->capture_default_str();
  ex->add_option("--wav-dir", extract.wav_dir)->check(CLI::ExistingDirectory);
  ex->add_option("--clnf-dir", extract.clnf_dir)->check(CLI::ExistingDirectory);
  ex->add_option("--labels", extract.labels)->check(CLI::ExistingFile);
  ex->callback([&] {
    action = [&] {
      cmd_extract(extract, ctx);
      return 0;
    };
  });

  TrainOptions train_opts;
  auto* tr = app.add_subcommand("train", "train a model on a feature cache");
  tr->add_option("--features-dir", train_opts.features_dir)->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", train_opts.out, "checkpoint file")->required();
  tr->callback([&] {
    action = [&] {
      cmd_train(train_opts, ctx);
      return 0;
    };
  });

  EvaluateOptions eval;
  auto* ev = app.add_subcommand("evaluate", "metrics of a checkpoint on one split");
  ev->add_option("--checkpoint", eval.checkpoint)->required();
  ev->add_option("--features-dir", eval.features_dir)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--out", eval.out, "metrics JSON")->required();
  ev->add_option("--split", eval.split)->capture_default_str()->check(
      CLI::IsMember({"train", "validation", "test", "all"}));
  ev->callback([&] {
    action = [&] {
      cmd_evaluate(eval, ctx);
      return 0;
    };
  });

  AblateOptions ablate;
  auto* ab = app.add_subcommand("ablate", "train and evaluate one model per ablation setting");
  ab->add_option("--plan", ablate.plan)->required()->check(CLI::ExistingFile);
  ab->add_option("--features-dir", ablate.features_dir)->required()->check(CLI::ExistingDirectory);
  ab->add_option("--out", ablate.out, "CSV table")->required();
  ab->add_option("--jobs", ablate.jobs, "parallel runs (0: all cores)")->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  ab->callback([&] {
    action = [&] {
      cmd_ablate(ablate, ctx);
      return 0;
    };
  });

  ReportOptions report;
  std::string plots;
  auto* ra = app.add_subcommand("report-attention", "per-question attention mass");
  ra->add_option("--checkpoint", report.checkpoint)->required();
  ra->add_option("--features-dir", report.features_dir)->required()->check(CLI::ExistingDirectory);
  ra->add_option("--out", report.out, "report JSON")->required();
  auto* plots_opt = ra->add_option("--plots", plots, "directory for SVG plots");
  ra->add_option("--split", report.split)->capture_default_str()->check(
      CLI::IsMember({"train", "validation", "test", "all"}));
  ra->callback([&] {
    action = [&] {
      if (*plots_opt) report.plots = plots;
      cmd_report(report, ctx);
      return 0;
    };
  });

  MapOptions map;
  std::string map_out;
  auto* mq = app.add_subcommand("map-question", "map interviewer questions onto the taxonomy");
  mq->add_option("question", map.texts, "question text(s)")->required();
  mq->add_option("--encoder", map.encoder)->capture_default_str();
  mq->add_option("--taxonomy", map.taxonomy)->check(CLI::ExistingFile);
  mq->add_option("--threshold", map.threshold, "append below this similarity (default: reference mean)");
  auto* map_out_opt = mq->add_option("--out", map_out, "also write the JSON here");
  mq->callback([&] {
    action = [&] {
      if (*map_out_opt) map.out = map_out;
      cmd_map(map, ctx);
      return 0;
    };
  });

  PipelineOptions pipe;
  std::string pipe_features;
  auto* pl = app.add_subcommand("pipeline", "synthesize (or ingest), train, evaluate, report");
  add_synthetic_options(pl, pipe.synth.synthetic);
  auto* pipe_features_opt =
      pl->add_option("--features-dir", pipe_features, "use an existing feature cache")->check(CLI::ExistingDirectory);
  pl->add_option("--out", pipe.out, "run directory")->required();
  pl->add_flag("--force", pipe.force);
  pl->add_flag("!--no-plots", pipe.plots, "skip SVG plots");
  pl->callback([&] {
    action = [&] {
      if (*pipe_features_opt) pipe.features_dir = pipe_features;
      pipe.synth.synthetic.seed = resolve_seed(ctx, 1);
      cmd_pipeline(pipe, ctx);
      return 0;
    };
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    ctx.out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    ctx.out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    ctx.err << "error: " << e.what() << "\n(run with --help for usage)\n";
    return static_cast<int>(ExitCode::kUsage);
  }
  if (*seed_opt) ctx.seed = seed;
  if (*config_opt) ctx.config = config;
  if (!action) {
    ctx.err << "error: no command\n";
    return static_cast<int>(ExitCode::kUsage);
  }
  return action();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Context ctx{out, err, false, {}, std::nullopt, std::nullopt};
  ctx.args = args;
  try {
    return dispatch(args, ctx);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kRuntime);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kRuntime);
  }
}

}  // namespace hique
