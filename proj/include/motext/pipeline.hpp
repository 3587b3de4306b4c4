#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "motext/corpus.hpp"
#include "motext/eval.hpp"
#include "motext/model.hpp"
#include "motext/synth.hpp"
#include "motext/textgen.hpp"

namespace motext::pipeline {

struct CorpusConfig {
  std::filesystem::path manifest;
  std::vector<std::string> train_datasets;  // empty means every dataset
  std::optional<std::vector<double>> dataset_weights;  // per train dataset
  bool drop_overlaps = true;

  void validate() const;
};

// One reproducible run: which corpus to train on, how to train, and how to
// evaluate. Parsed from a JSON document with sections corpus / policy /
// train / protocol / output_dir; unknown keys anywhere are rejected.
struct RunConfig {
  CorpusConfig corpus;
  model::TrainConfig train;
  eval::ProtocolConfig protocol;
  std::filesystem::path output_dir = "motext-run";

  void validate() const;
};

eval::ProtocolConfig parse_protocol_config(const nlohmann::json& j);
nlohmann::json protocol_config_to_json(const eval::ProtocolConfig& config);

RunConfig parse_run_config(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& config);

// Reads and parses a run config; a relative corpus manifest path is
// resolved against the config file's directory.
RunConfig load_run_config(const std::filesystem::path& path);

// Writes the generated corpus plus the resolved generator config to out_dir
// and returns the manifest path.
std::filesystem::path run_synth(const synth::SynthConfig& config,
                                const std::filesystem::path& out_dir);

struct AugmentGenOptions {
  std::filesystem::path manifest;
  textgen::PromptTemplate tpl;
  int n_per_label = 0;  // 0 picks the per-style default (30 / 30 / 10)
  bool offline = false;
  textgen::LlmClientConfig client;  // used when online
  std::uint64_t seed = 0;           // offline rewrites only
};

// Generates text variants for every sample's first ground-truth label and
// writes them as annotation JSONL rows to out_dir/generated.jsonl.
std::filesystem::path run_augment_gen(const AugmentGenOptions& options,
                                      const std::filesystem::path& out_dir);

struct TrainOutputs {
  std::filesystem::path checkpoint;
  std::filesystem::path history_csv;
  std::filesystem::path config_echo;
  std::vector<double> epoch_losses;
};

TrainOutputs run_train(const RunConfig& config);

struct EvalOutputs {
  std::filesystem::path report_json;
  nlohmann::json report;
};

EvalOutputs run_eval(const RunConfig& config,
                     const std::filesystem::path& checkpoint_path);

// Mean and population std of every retrieval / action metric across the
// given reports, keyed dataset -> metric.
nlohmann::json aggregate_reports(const std::vector<nlohmann::json>& reports);

// Renders the cross-dataset retrieval grid and the action-recognition
// table as Markdown + CSV ("mean ± std" cells), plus summary.json.
void run_report(const std::vector<std::filesystem::path>& report_paths,
                const std::filesystem::path& out_dir);

}  // namespace motext::pipeline
