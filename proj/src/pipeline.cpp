#include "motext/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>

#include "motext/augment.hpp"
#include "motext/errors.hpp"
#include "motext/formats.hpp"

namespace motext::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

void CorpusConfig::validate() const {
  if (manifest.empty()) {
    throw Error(ErrorCode::InvalidConfig, "corpus.manifest must be set");
  }
  if (dataset_weights && !train_datasets.empty() &&
      dataset_weights->size() != train_datasets.size()) {
    throw Error(ErrorCode::InvalidConfig,
                "dataset_weights has " +
                    std::to_string(dataset_weights->size()) +
                    " entries for " + std::to_string(train_datasets.size()) +
                    " train_datasets");
  }
  std::set<std::string> seen;
  for (const auto& name : train_datasets) {
    if (name.empty()) {
      throw Error(ErrorCode::InvalidConfig,
                  "train_datasets entries must be non-empty");
    }
    if (!seen.insert(name).second) {
      throw Error(ErrorCode::InvalidConfig,
                  "train_datasets lists '" + name + "' twice");
    }
  }
}

void RunConfig::validate() const {
  corpus.validate();
  train.validate();
  protocol.validate();
  if (output_dir.empty()) {
    throw Error(ErrorCode::InvalidConfig, "output_dir must be non-empty");
  }
}

eval::ProtocolConfig parse_protocol_config(const json& j) {
  if (!j.is_object()) {
    throw Error(ErrorCode::InvalidConfig, "protocol must be a JSON object");
  }
  static const std::set<std::string> kKeys = {"threshold", "ks", "direction"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!kKeys.count(it.key())) {
      throw Error(ErrorCode::InvalidConfig,
                  "unknown protocol key '" + it.key() + "'");
    }
  }
  eval::ProtocolConfig config;
  try {
    if (j.contains("threshold")) {
      config.threshold = j["threshold"].get<double>();
    }
    if (j.contains("ks")) config.ks = j["ks"].get<std::vector<int>>();
    if (j.contains("direction")) {
      config.direction = eval::parse_direction(j["direction"].get<std::string>());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("protocol: ") + e.what());
  }
  config.validate();
  return config;
}

json protocol_config_to_json(const eval::ProtocolConfig& config) {
  return {{"threshold", config.threshold},
          {"ks", config.ks},
          {"direction", eval::to_string(config.direction)}};
}

RunConfig parse_run_config(const json& j) {
  if (!j.is_object()) {
    throw Error(ErrorCode::InvalidConfig, "run config must be a JSON object");
  }
  static const std::set<std::string> kKeys = {"corpus", "policy", "train",
                                              "protocol", "output_dir"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!kKeys.count(it.key())) {
      throw Error(ErrorCode::InvalidConfig,
                  "unknown config key '" + it.key() + "'");
    }
  }

  RunConfig config;
  if (j.contains("corpus")) {
    const json& c = j["corpus"];
    if (!c.is_object()) {
      throw Error(ErrorCode::InvalidConfig, "corpus must be a JSON object");
    }
    static const std::set<std::string> kCorpusKeys = {
        "manifest", "train_datasets", "dataset_weights", "filter_overlaps"};
    for (auto it = c.begin(); it != c.end(); ++it) {
      if (!kCorpusKeys.count(it.key())) {
        throw Error(ErrorCode::InvalidConfig,
                    "unknown corpus key '" + it.key() + "'");
      }
    }
    try {
      if (c.contains("manifest")) {
        config.corpus.manifest = c["manifest"].get<std::string>();
      }
      if (c.contains("train_datasets")) {
        config.corpus.train_datasets =
            c["train_datasets"].get<std::vector<std::string>>();
      }
      if (c.contains("dataset_weights")) {
        config.corpus.dataset_weights =
            c["dataset_weights"].get<std::vector<double>>();
      }
      if (c.contains("filter_overlaps")) {
        config.corpus.drop_overlaps = c["filter_overlaps"].get<bool>();
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidConfig, std::string("corpus: ") + e.what());
    }
  }
  if (j.contains("train")) {
    if (j["train"].is_object() && j["train"].contains("policy")) {
      throw Error(ErrorCode::InvalidConfig,
                  "policy belongs in the top-level 'policy' section, not "
                  "under 'train'");
    }
    config.train = model::parse_train_config(j["train"]);
  }
  if (j.contains("policy")) {
    config.train.policy = augment::parse_policy(j["policy"]);
  }
  if (j.contains("protocol")) {
    config.protocol = parse_protocol_config(j["protocol"]);
  }
  if (j.contains("output_dir")) {
    try {
      config.output_dir = j["output_dir"].get<std::string>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidConfig,
                  std::string("output_dir: ") + e.what());
    }
  }
  config.validate();
  return config;
}

json run_config_to_json(const RunConfig& config) {
  json corpus = {{"manifest", config.corpus.manifest.generic_string()},
                 {"train_datasets", config.corpus.train_datasets},
                 {"filter_overlaps", config.corpus.drop_overlaps}};
  if (config.corpus.dataset_weights) {
    corpus["dataset_weights"] = *config.corpus.dataset_weights;
  }
  json train = model::train_config_to_json(config.train);
  train.erase("policy");  // echoed as its own section
  return {{"corpus", corpus},
          {"policy", augment::policy_to_json(config.train.policy)},
          {"train", train},
          {"protocol", protocol_config_to_json(config.protocol)},
          {"output_dir", config.output_dir.generic_string()}};
}

RunConfig load_run_config(const fs::path& path) {
  auto in = formats::open_in(path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) {
    throw Error(ErrorCode::InvalidConfig,
                path.string() + ": invalid JSON");
  }
  RunConfig config = parse_run_config(j);
  if (config.corpus.manifest.is_relative()) {
    config.corpus.manifest = path.parent_path() / config.corpus.manifest;
  }
  return config;
}

namespace {

std::string fmt(double v, const char* spec) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string quoted = "\"";
  for (char c : s) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  quoted += '"';
  return quoted;
}

void write_text(const fs::path& path, const std::string& content) {
  auto out = formats::open_out(path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

void write_json(const fs::path& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

const corpus::TextVariant* first_gt(const corpus::MotionSample& sample) {
  for (const auto& var : sample.variants) {
    if (var.kind == corpus::TextKind::GroundTruth) return &var;
  }
  return nullptr;
}

}  // namespace

fs::path run_synth(const synth::SynthConfig& config, const fs::path& out_dir) {
  config.validate();
  const auto splits = synth::generate_corpus(config);
  fs::create_directories(out_dir);
  const fs::path manifest = out_dir / "manifest.json";
  corpus::save_corpus(manifest, splits);
  write_json(out_dir / "synth_config.json", synth::synth_config_to_json(config));
  return manifest;
}

fs::path run_augment_gen(const AugmentGenOptions& options,
                         const fs::path& out_dir) {
  options.tpl.validate();
  int n = options.n_per_label;
  if (n == 0) {
    n = options.tpl.style == textgen::PromptStyle::ActionStyle ? 10 : 30;
  }
  if (n < 1) {
    throw Error(ErrorCode::InvalidConfig,
                "n_per_label = " + std::to_string(n) + " must be >= 1");
  }

  const auto splits = corpus::load_corpus(options.manifest);
  std::vector<const corpus::MotionSample*> samples;
  std::vector<std::string> labels;
  for (const auto& split : splits) {
    for (const auto& sample : split.samples) {
      const auto* gt = first_gt(sample);
      if (!gt) continue;
      samples.push_back(&sample);
      labels.push_back(gt->text);
    }
  }
  if (labels.empty()) {
    throw Error(ErrorCode::EmptySplit,
                options.manifest.string() + ": no ground-truth labels");
  }

  std::vector<std::vector<std::string>> variants;
  if (options.offline) {
    variants.reserve(labels.size());
    for (const auto& label : labels) {
      variants.push_back(textgen::fallback_paraphrase(label, n, options.seed));
    }
  } else {
    variants =
        textgen::generate_variants(options.client, options.tpl, labels, n);
  }

  const char* kind =
      options.tpl.style == textgen::PromptStyle::ActionStyle ? "action"
                                                             : "paraphrase";
  fs::create_directories(out_dir);
  const fs::path out_path = out_dir / "generated.jsonl";
  auto out = formats::open_out(out_path);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (const auto& text : variants[i]) {
      const json row = {{"dataset_id", samples[i]->dataset_id},
                        {"motion_id", samples[i]->motion_id},
                        {"source_sequence_id", samples[i]->source_sequence_id},
                        {"start_sec", samples[i]->start_sec},
                        {"end_sec", samples[i]->end_sec},
                        {"kind", kind},
                        {"text", text}};
      out << row.dump() << "\n";
    }
  }
  return out_path;
}

TrainOutputs run_train(const RunConfig& config) {
  config.validate();
  auto splits = corpus::load_corpus(config.corpus.manifest);

  std::vector<corpus::DatasetSplit> train_splits;
  std::vector<corpus::DatasetSplit> eval_splits;
  for (auto& split : splits) {
    if (split.role == corpus::SplitRole::Train) {
      train_splits.push_back(std::move(split));
    } else {
      eval_splits.push_back(std::move(split));
    }
  }
  if (!config.corpus.train_datasets.empty()) {
    std::vector<corpus::DatasetSplit> picked;
    for (const auto& name : config.corpus.train_datasets) {
      const auto it = std::find_if(
          train_splits.begin(), train_splits.end(),
          [&](const corpus::DatasetSplit& s) { return s.dataset_id == name; });
      if (it == train_splits.end()) {
        throw Error(ErrorCode::InvalidConfig,
                    "train_datasets names '" + name +
                        "', which has no train split in the manifest");
      }
      picked.push_back(std::move(*it));
      train_splits.erase(it);
    }
    train_splits = std::move(picked);
  }
  if (train_splits.empty()) {
    throw Error(ErrorCode::EmptyTrainSet,
                config.corpus.manifest.string() + ": no train splits");
  }
  if (config.corpus.drop_overlaps) {
    for (auto& split : train_splits) {
      split = corpus::filter_overlaps(split, eval_splits);
    }
  }

  const auto combined =
      corpus::combine(train_splits, config.corpus.dataset_weights);
  const auto result = model::train(combined, config.train);

  fs::create_directories(config.output_dir);
  TrainOutputs outputs;
  outputs.epoch_losses = result.epoch_losses;

  outputs.config_echo = config.output_dir / "config.json";
  write_json(outputs.config_echo, run_config_to_json(config));

  outputs.checkpoint = config.output_dir / "model.ckpt";
  const json meta = {{"seed", config.train.seed},
                     {"train", model::train_config_to_json(config.train)}};
  model::save_checkpoint(outputs.checkpoint, result.params, meta);

  outputs.history_csv = config.output_dir / "history.csv";
  std::string history = "epoch,loss\n";
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
    history += std::to_string(e + 1) + "," +
               fmt(result.epoch_losses[e], "%.17g") + "\n";
  }
  write_text(outputs.history_csv, history);
  return outputs;
}

namespace {

bool has_action_labels(const corpus::DatasetSplit& split) {
  for (const auto& sample : split.samples) {
    for (const auto& var : sample.variants) {
      if (var.kind == corpus::TextKind::ActionStyle && var.sentence_embedding) {
        return true;
      }
    }
  }
  return false;
}

}  // namespace

EvalOutputs run_eval(const RunConfig& config, const fs::path& checkpoint_path) {
  config.validate();
  json meta;
  const auto params = model::load_checkpoint(checkpoint_path, &meta);
  const auto splits = corpus::load_corpus(config.corpus.manifest);

  json report = {{"checkpoint_meta", meta},
                 {"protocol", protocol_config_to_json(config.protocol)}};
  fs::create_directories(config.output_dir);

  std::string retrieval_csv = "dataset,n_queries,med_rank";
  for (int k : config.protocol.ks) {
    retrieval_csv += ",R@" + std::to_string(k);
  }
  retrieval_csv += "\n";
  std::string retrieval_md = "| Dataset | Queries |";
  std::string rule = "|---|---|";
  for (int k : config.protocol.ks) {
    retrieval_md += " R@" + std::to_string(k) + " |";
    rule += "---|";
  }
  retrieval_md += " MedR |\n" + rule + "---|\n";

  bool any_test = false;
  for (const auto& split : splits) {
    if (split.role != corpus::SplitRole::Test) continue;
    any_test = true;
    const auto r = eval::evaluate_retrieval(params, split, config.protocol);
    json rj = {{"n_queries", r.n_queries}, {"med_rank", r.med_rank}};
    for (const auto& [k, v] : r.recall) {
      rj["recall"][std::to_string(k)] = v;
    }
    report["retrieval"][split.dataset_id] = rj;

    retrieval_csv += csv_field(split.dataset_id) + "," +
                     std::to_string(r.n_queries) + "," +
                     fmt(r.med_rank, "%.17g");
    retrieval_md +=
        "| " + split.dataset_id + " | " + std::to_string(r.n_queries) + " |";
    for (int k : config.protocol.ks) {
      retrieval_csv += "," + fmt(r.recall.at(k), "%.17g");
      retrieval_md += " " + fmt(r.recall.at(k), "%.2f") + " |";
    }
    retrieval_csv += "\n";
    retrieval_md += " " + fmt(r.med_rank, "%.1f") + " |\n";

    if (!has_action_labels(split)) continue;
    const auto set = eval::build_action_eval(split);
    const auto a = eval::evaluate_actions(params, set, config.protocol.ks);
    json aj = {{"n_instances", a.n_instances},
               {"n_classes", static_cast<int>(set.classes.size())},
               {"top1", a.top1},
               {"top1_cb", a.top1_cb}};
    for (const auto& [k, v] : a.top_k) {
      aj["top_k"][std::to_string(k)] = v;
    }
    report["actions"][split.dataset_id] = aj;

    std::string per_class = "class_id,label,instances,top1\n";
    for (const auto& cls : set.classes) {
      const auto freq = a.class_freq.find(cls.class_id);
      const auto acc = a.per_class_top1.find(cls.class_id);
      per_class += std::to_string(cls.class_id) + "," +
                   csv_field(cls.label) + "," +
                   std::to_string(freq == a.class_freq.end() ? 0
                                                             : freq->second) +
                   "," +
                   (acc == a.per_class_top1.end() ? std::string("")
                                                  : fmt(acc->second, "%.17g")) +
                   "\n";
    }
    write_text(config.output_dir / ("per_class_" + split.dataset_id + ".csv"),
               per_class);

    std::string confusion = "label";
    for (const auto& cls : set.classes) {
      confusion += "," + csv_field(cls.label);
    }
    confusion += "\n";
    for (Eigen::Index row = 0; row < a.confusion.rows(); ++row) {
      confusion += csv_field(set.classes[static_cast<std::size_t>(row)].label);
      for (Eigen::Index col = 0; col < a.confusion.cols(); ++col) {
        confusion += "," + std::to_string(a.confusion(row, col));
      }
      confusion += "\n";
    }
    write_text(config.output_dir / ("confusion_" + split.dataset_id + ".csv"),
               confusion);
  }
  if (!any_test) {
    throw Error(ErrorCode::EmptySplit,
                config.corpus.manifest.string() + ": no test splits to "
                "evaluate");
  }

  write_text(config.output_dir / "retrieval.csv", retrieval_csv);
  write_text(config.output_dir / "retrieval.md", retrieval_md);

  EvalOutputs outputs;
  outputs.report = report;
  outputs.report_json = config.output_dir / "report.json";
  write_json(outputs.report_json, report);
  return outputs;
}

namespace {

struct Stats {
  int n = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population
};

Stats stats_of(const std::vector<double>& values) {
  Stats s;
  s.n = static_cast<int>(values.size());
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / static_cast<double>(values.size()));
  return s;
}

// metric name -> ordering key: R@k / Top-k ascending by k, then MedR / CB.
int metric_order(const std::string& name) {
  if (name == "MedR" || name == "Top-1 CB") return 1 << 20;
  const auto at = name.find_first_of("@-");
  if (at != std::string::npos) {
    try {
      return std::stoi(name.substr(at + 1));
    } catch (...) {
    }
  }
  return 1 << 19;
}

using MetricTable = std::map<std::string, std::map<std::string, Stats>>;

void render_summary(const MetricTable& table, const std::string& what,
                    const fs::path& out_dir) {
  std::vector<std::string> columns;
  for (const auto& row : table) {
    for (const auto& metric : row.second) {
      if (std::find(columns.begin(), columns.end(), metric.first) ==
          columns.end()) {
        columns.push_back(metric.first);
      }
    }
  }
  std::sort(columns.begin(), columns.end(),
            [](const std::string& a, const std::string& b) {
              const int oa = metric_order(a), ob = metric_order(b);
              return oa != ob ? oa < ob : a < b;
            });

  std::string csv = "dataset,metric,n_runs,mean,std\n";
  std::string md = "| Dataset |";
  std::string rule = "|---|";
  for (const auto& name : columns) {
    md += " " + name + " |";
    rule += "---|";
  }
  md += "\n" + rule + "\n";
  for (const auto& [ds, metrics] : table) {
    md += "| " + ds + " |";
    for (const auto& name : columns) {
      const auto it = metrics.find(name);
      if (it == metrics.end()) {
        md += " - |";
        continue;
      }
      csv += csv_field(ds) + "," + csv_field(name) + "," +
             std::to_string(it->second.n) + "," +
             fmt(it->second.mean, "%.17g") + "," +
             fmt(it->second.stddev, "%.17g") + "\n";
      md += " " + fmt(it->second.mean, "%.2f") + " ± " +
            fmt(it->second.stddev, "%.2f") + " |";
    }
    md += "\n";
  }
  write_text(out_dir / (what + "_summary.csv"), csv);
  write_text(out_dir / (what + "_summary.md"), md);
}

json table_to_json(const MetricTable& table) {
  json out = json::object();
  for (const auto& [ds, metrics] : table) {
    for (const auto& [name, s] : metrics) {
      out[ds][name] = {{"n", s.n}, {"mean", s.mean}, {"std", s.stddev}};
    }
  }
  return out;
}

}  // namespace

json aggregate_reports(const std::vector<json>& reports) {
  if (reports.empty()) {
    throw Error(ErrorCode::InvalidConfig, "no reports to aggregate");
  }
  std::map<std::string, std::map<std::string, std::vector<double>>> retrieval;
  std::map<std::string, std::map<std::string, std::vector<double>>> actions;
  for (const auto& r : reports) {
    if (!r.is_object() || !r.contains("retrieval")) {
      throw Error(ErrorCode::MalformedRecord,
                  "report lacks a retrieval section");
    }
    for (const auto& [ds, metrics] : r["retrieval"].items()) {
      retrieval[ds]["MedR"].push_back(metrics.at("med_rank").get<double>());
      for (const auto& [k, v] : metrics.at("recall").items()) {
        retrieval[ds]["R@" + k].push_back(v.get<double>());
      }
    }
    if (!r.contains("actions")) continue;
    for (const auto& [ds, metrics] : r["actions"].items()) {
      actions[ds]["Top-1 CB"].push_back(metrics.at("top1_cb").get<double>());
      for (const auto& [k, v] : metrics.at("top_k").items()) {
        actions[ds]["Top-" + k].push_back(v.get<double>());
      }
    }
  }

  const auto fold = [](const std::map<
                        std::string, std::map<std::string, std::vector<double>>>&
                           raw) {
    MetricTable table;
    for (const auto& [ds, metrics] : raw) {
      for (const auto& [name, values] : metrics) {
        table[ds][name] = stats_of(values);
      }
    }
    return table;
  };

  json out = {{"n_reports", static_cast<int>(reports.size())},
              {"retrieval", table_to_json(fold(retrieval))}};
  if (!actions.empty()) out["actions"] = table_to_json(fold(actions));
  return out;
}

void run_report(const std::vector<fs::path>& report_paths,
                const fs::path& out_dir) {
  if (report_paths.empty()) {
    throw Error(ErrorCode::InvalidConfig, "report needs at least one "
                "report.json");
  }
  std::vector<json> reports;
  reports.reserve(report_paths.size());
  for (const auto& path : report_paths) {
    auto in = formats::open_in(path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) {
      throw Error(ErrorCode::MalformedRecord, path.string() + ": invalid "
                  "JSON");
    }
    reports.push_back(std::move(j));
  }

  const json summary = aggregate_reports(reports);
  fs::create_directories(out_dir);
  write_json(out_dir / "summary.json", summary);

  const auto to_table = [](const json& section) {
    MetricTable table;
    for (const auto& [ds, metrics] : section.items()) {
      for (const auto& [name, s] : metrics.items()) {
        Stats st;
        st.n = s.at("n").get<int>();
        st.mean = s.at("mean").get<double>();
        st.stddev = s.at("std").get<double>();
        table[ds][name] = st;
      }
    }
    return table;
  };
  render_summary(to_table(summary.at("retrieval")), "retrieval", out_dir);
  if (summary.contains("actions")) {
    render_summary(to_table(summary.at("actions")), "actions", out_dir);
  }
}

}  // namespace motext::pipeline
