#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "motext/corpus.hpp"

namespace motext::textgen {

enum class PromptStyle { ParaphraseSentence, DescribeConcise, ActionStyle };

const char* to_string(PromptStyle style);
PromptStyle parse_prompt_style(const std::string& s);

struct PromptTemplate {
  std::string instruction;
  // (source_text, target_text) few-shot examples, rendered in order.
  std::vector<std::pair<std::string, std::string>> fewshot_pairs;
  PromptStyle style = PromptStyle::ParaphraseSentence;

  void validate() const;
};

// Bundled instruction and few-shot pairs for each style.
PromptTemplate default_template(PromptStyle style);

PromptTemplate parse_template(const nlohmann::json& j);
nlohmann::json template_to_json(const PromptTemplate& tpl);

struct LlmClientConfig {
  std::string endpoint_url = "http://127.0.0.1:8080";
  std::string model_name = "llama-2-70b-chat";
  int max_in_flight = 4;
  double timeout_sec = 30.0;
  int retries = 2;
  std::string api_key_env_var = "MOTEXT_API_KEY";
  double temperature = 0.7;  // sampling temperature sent with each request

  void validate() const;
};

// Instruction, each pair as "Sentence: '<src>' Paraphrased: '<tgt>'", then
// "Sentence: '<label>' Paraphrased:".
std::string build_prompt(const PromptTemplate& tpl, const std::string& label);

// One completion request per wanted variant, at most max_in_flight requests
// in flight at a time. Output list i holds at most n_per_label distinct
// non-empty completions for labels[i], in input order. A label whose
// requests keep failing after the configured retries gets an empty list and
// a logged warning; if every label fails the endpoint is presumed down.
std::vector<std::vector<std::string>> generate_variants(
    const LlmClientConfig& config, const PromptTemplate& tpl,
    const std::vector<std::string>& labels, int n_per_label);

// Deterministic offline substitute: synonym substitution plus re-wrapping
// with a subject phrase ("Someone <verb-phrase>."). Same arguments, same
// output.
std::vector<std::string> fallback_paraphrase(const std::string& label, int n,
                                             std::uint64_t seed);

// All ordered pairs of distinct ground-truth texts of one sample, for
// mining few-shot examples from co-annotations of the same motion segment.
std::vector<std::pair<std::string, std::string>> mine_fewshot_pairs(
    const corpus::MotionSample& sample);

}  // namespace motext::textgen
