#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "motext/errors.hpp"
#include "motext/formats.hpp"
#include "motext/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

int exit_code_for(const motext::Error& e) {
  return e.code() == motext::ErrorCode::InvalidConfig ? kConfigError
                                                      : kRuntimeError;
}

struct SynthArgs {
  std::string config_path;
  std::string out_dir = "synth-corpus";
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& args) {
  motext::synth::SynthConfig config;
  if (!args.config_path.empty()) {
    auto in = motext::formats::open_in(args.config_path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) {
      throw motext::Error(motext::ErrorCode::InvalidConfig,
                          args.config_path + ": invalid JSON");
    }
    config = motext::synth::parse_synth_config(j);
  }
  if (args.seed) config.seed = *args.seed;
  const auto manifest = motext::pipeline::run_synth(config, args.out_dir);
  std::cout << "wrote " << manifest.string() << " (" << config.n_datasets
            << " datasets, " << config.n_clusters << " clusters, seed "
            << config.seed << ")" << std::endl;
  return kOk;
}

struct AugmentArgs {
  std::string manifest;
  std::string template_path;
  std::string style = "paraphrase_sentence";
  std::string out_dir = "augmented";
  int n_per_label = 0;
  bool offline = false;
  std::uint64_t seed = 0;
  motext::textgen::LlmClientConfig client;
};

int cmd_augment_gen(const AugmentArgs& args) {
  motext::pipeline::AugmentGenOptions options;
  options.manifest = args.manifest;
  const auto style = motext::textgen::parse_prompt_style(args.style);
  if (args.template_path.empty()) {
    options.tpl = motext::textgen::default_template(style);
  } else {
    auto in = motext::formats::open_in(args.template_path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) {
      throw motext::Error(motext::ErrorCode::InvalidConfig,
                          args.template_path + ": invalid JSON");
    }
    options.tpl = motext::textgen::parse_template(j);
    options.tpl.style = style;
  }
  options.n_per_label = args.n_per_label;
  options.offline = args.offline;
  options.seed = args.seed;
  options.client = args.client;
  const auto path = motext::pipeline::run_augment_gen(options, args.out_dir);
  std::cout << "wrote " << path.string() << std::endl;
  return kOk;
}

struct TrainArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds;
  std::string manifest;
};

motext::pipeline::RunConfig resolve_run_config(const std::string& config_path,
                                               const std::string& manifest,
                                               const std::string& out_dir) {
  if (config_path.empty()) {
    throw motext::Error(motext::ErrorCode::InvalidConfig,
                        "--config is required");
  }
  auto config = motext::pipeline::load_run_config(config_path);
  if (!manifest.empty()) config.corpus.manifest = manifest;
  if (!out_dir.empty()) config.output_dir = out_dir;
  return config;
}

int cmd_train(const TrainArgs& args) {
  auto config =
      resolve_run_config(args.config_path, args.manifest, args.out_dir);
  std::vector<std::uint64_t> seeds = args.seeds;
  if (seeds.empty()) {
    seeds.push_back(args.seed ? *args.seed : config.train.seed);
  } else if (args.seed) {
    throw motext::Error(motext::ErrorCode::InvalidConfig,
                        "--seed and --seeds are mutually exclusive");
  }
  const fs::path base_dir = config.output_dir;
  for (const auto seed : seeds) {
    config.train.seed = seed;
    config.output_dir =
        seeds.size() == 1 ? base_dir
                          : base_dir / ("seed-" + std::to_string(seed));
    const auto outputs = motext::pipeline::run_train(config);
    std::cout << "seed " << seed << ": wrote "
              << outputs.checkpoint.string();
    if (!outputs.epoch_losses.empty()) {
      std::cout << " (final loss " << outputs.epoch_losses.back() << ")";
    }
    std::cout << std::endl;
  }
  return kOk;
}

struct EvalArgs {
  std::string config_path;
  std::string checkpoint;
  std::string out_dir;
  std::string manifest;
};

int cmd_eval(const EvalArgs& args) {
  const auto config =
      resolve_run_config(args.config_path, args.manifest, args.out_dir);
  if (args.checkpoint.empty()) {
    throw motext::Error(motext::ErrorCode::InvalidConfig,
                        "--checkpoint is required");
  }
  const auto outputs = motext::pipeline::run_eval(config, args.checkpoint);
  std::cout << "wrote " << outputs.report_json.string() << std::endl;
  return kOk;
}

struct ReportArgs {
  std::vector<std::string> reports;
  std::string out_dir = "report";
};

int cmd_report(const ReportArgs& args) {
  std::vector<fs::path> paths(args.reports.begin(), args.reports.end());
  motext::pipeline::run_report(paths, args.out_dir);
  std::cout << "wrote " << (fs::path(args.out_dir) / "summary.json").string()
            << std::endl;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Motion-text retrieval toolkit: synthetic corpora, "
               "augmentation, two-tower training, and evaluation"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth_cmd =
      app.add_subcommand("synth", "Generate a synthetic clustered corpus");
  synth_cmd->add_option("--config", synth_args.config_path,
                        "Generator config JSON");
  synth_cmd->add_option("--out", synth_args.out_dir, "Output directory");
  synth_cmd->add_option("--seed", synth_args.seed, "Seed override");

  AugmentArgs augment_args;
  auto* augment_cmd = app.add_subcommand(
      "augment-gen", "Generate paraphrase or action-style annotations");
  augment_cmd->add_option("--manifest", augment_args.manifest,
                          "Corpus manifest to annotate")
      ->required();
  augment_cmd->add_option("--style", augment_args.style,
                          "paraphrase_sentence | describe_concise | "
                          "action_style");
  augment_cmd->add_option("--template", augment_args.template_path,
                          "Prompt template JSON (default: bundled)");
  augment_cmd->add_option("--out", augment_args.out_dir, "Output directory");
  augment_cmd->add_option("--n", augment_args.n_per_label,
                          "Variants per label (default 30, 10 for "
                          "action_style)");
  augment_cmd->add_flag("--offline", augment_args.offline,
                        "Use the deterministic rule-based rewriter");
  augment_cmd->add_option("--seed", augment_args.seed,
                          "Seed for --offline rewrites");
  augment_cmd->add_option("--endpoint", augment_args.client.endpoint_url,
                          "Chat-completions base URL");
  augment_cmd->add_option("--model", augment_args.client.model_name,
                          "Model name sent with each request");
  augment_cmd->add_option("--api-key-env",
                          augment_args.client.api_key_env_var,
                          "Environment variable holding the API key");
  augment_cmd->add_option("--timeout", augment_args.client.timeout_sec,
                          "Per-request timeout in seconds");
  augment_cmd->add_option("--retries", augment_args.client.retries,
                          "Retries per request");
  augment_cmd->add_option("--max-in-flight",
                          augment_args.client.max_in_flight,
                          "Concurrent request cap");
  augment_cmd->add_option("--temperature", augment_args.client.temperature,
                          "Sampling temperature");

  TrainArgs train_args;
  auto* train_cmd =
      app.add_subcommand("train", "Train the two-tower model from a run "
                         "config");
  train_cmd->add_option("--config", train_args.config_path, "Run config JSON")
      ->required();
  train_cmd->add_option("--manifest", train_args.manifest,
                        "Corpus manifest override");
  train_cmd->add_option("--out", train_args.out_dir,
                        "Output directory override");
  train_cmd->add_option("--seed", train_args.seed, "Seed override");
  train_cmd->add_option("--seeds", train_args.seeds,
                        "Comma-separated seeds; one run per seed in "
                        "seed-<s>/ subdirectories")
      ->delimiter(',');

  EvalArgs eval_args;
  auto* eval_cmd =
      app.add_subcommand("eval", "Evaluate a checkpoint on every test split");
  eval_cmd->add_option("--config", eval_args.config_path, "Run config JSON")
      ->required();
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint,
                       "Checkpoint to evaluate")
      ->required();
  eval_cmd->add_option("--manifest", eval_args.manifest,
                       "Corpus manifest override");
  eval_cmd->add_option("--out", eval_args.out_dir,
                       "Output directory override");

  ReportArgs report_args;
  auto* report_cmd = app.add_subcommand(
      "report", "Aggregate one or more report.json into summary tables");
  report_cmd->add_option("reports", report_args.reports, "report.json paths")
      ->required();
  report_cmd->add_option("--out", report_args.out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(synth_args);
    if (augment_cmd->parsed()) return cmd_augment_gen(augment_args);
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (report_cmd->parsed()) return cmd_report(report_args);
  } catch (const motext::Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kRuntimeError;
  }
  return kConfigError;
}
