#include "motext/textgen.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "motext/errors.hpp"
#include "motext/rng.hpp"

namespace motext::textgen {

using nlohmann::json;

const char* to_string(PromptStyle style) {
  switch (style) {
    case PromptStyle::ParaphraseSentence: return "paraphrase_sentence";
    case PromptStyle::DescribeConcise: return "describe_concise";
    case PromptStyle::ActionStyle: return "action_style";
  }
  return "?";
}

PromptStyle parse_prompt_style(const std::string& s) {
  if (s == "paraphrase_sentence") return PromptStyle::ParaphraseSentence;
  if (s == "describe_concise") return PromptStyle::DescribeConcise;
  if (s == "action_style") return PromptStyle::ActionStyle;
  throw Error(ErrorCode::InvalidConfig,
              "prompt style '" + s + "' is not recognized; use "
              "\"paraphrase_sentence\", \"describe_concise\" or "
              "\"action_style\"");
}

void PromptTemplate::validate() const {
  if (fewshot_pairs.empty()) {
    throw Error(ErrorCode::InvalidConfig,
                "a prompt template needs at least one few-shot pair");
  }
  for (const auto& [src, tgt] : fewshot_pairs) {
    if (src.empty() || tgt.empty()) {
      throw Error(ErrorCode::InvalidConfig,
                  "few-shot pair texts must be non-empty");
    }
  }
}

PromptTemplate default_template(PromptStyle style) {
  PromptTemplate tpl;
  tpl.style = style;
  switch (style) {
    case PromptStyle::ParaphraseSentence:
      tpl.instruction =
          "Paraphrase the given motion description. Keep the described "
          "movement identical but change the wording.";
      tpl.fewshot_pairs = {
          {"A person knees on the floor.",
           "The individual is kneeling on the ground."},
          {"A person walks forward briskly.",
           "Someone strides ahead at a quick pace."}};
      break;
    case PromptStyle::DescribeConcise:
      tpl.instruction =
          "Expand the short motion label into one full sentence describing "
          "the movement.";
      tpl.fewshot_pairs = {
          {"Point.", "A person motions forward with their hand."},
          {"Wave.", "Someone waves their hand in the air."}};
      break;
    case PromptStyle::ActionStyle:
      tpl.instruction =
          "Compress the motion description into a short action label of "
          "one or two words.";
      tpl.fewshot_pairs = {
          {"The person sprints down the track at full speed.", "Sprint"},
          {"A person waves both hands above their head.", "Wave"}};
      break;
  }
  return tpl;
}

PromptTemplate parse_template(const json& j) {
  if (!j.is_object()) {
    throw Error(ErrorCode::InvalidConfig, "template must be a JSON object");
  }
  static const std::set<std::string> kKeys = {"instruction", "fewshot_pairs",
                                              "style"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!kKeys.count(it.key())) {
      throw Error(ErrorCode::InvalidConfig,
                  "unknown template key '" + it.key() + "'");
    }
  }
  PromptTemplate tpl;
  try {
    tpl.instruction = j.at("instruction").get<std::string>();
    for (const auto& pair : j.at("fewshot_pairs")) {
      if (!pair.is_array() || pair.size() != 2) {
        throw Error(ErrorCode::InvalidConfig,
                    "few-shot pairs must be [source, target] arrays, got " +
                        pair.dump());
      }
      tpl.fewshot_pairs.emplace_back(pair[0].get<std::string>(),
                                     pair[1].get<std::string>());
    }
    if (j.contains("style")) {
      tpl.style = parse_prompt_style(j["style"].get<std::string>());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("template: ") + e.what());
  }
  tpl.validate();
  return tpl;
}

json template_to_json(const PromptTemplate& tpl) {
  json pairs = json::array();
  for (const auto& [src, tgt] : tpl.fewshot_pairs) {
    pairs.push_back({src, tgt});
  }
  return {{"instruction", tpl.instruction},
          {"fewshot_pairs", pairs},
          {"style", to_string(tpl.style)}};
}

void LlmClientConfig::validate() const {
  if (endpoint_url.empty()) {
    throw Error(ErrorCode::InvalidConfig, "endpoint_url must not be empty");
  }
  if (max_in_flight < 1) {
    throw Error(ErrorCode::InvalidConfig,
                "max_in_flight = " + std::to_string(max_in_flight) +
                    " must be >= 1");
  }
  if (!(timeout_sec > 0.0)) {
    throw Error(ErrorCode::InvalidConfig,
                "timeout_sec = " + std::to_string(timeout_sec) +
                    " must be positive");
  }
  if (retries < 0) {
    throw Error(ErrorCode::InvalidConfig,
                "retries = " + std::to_string(retries) +
                    " must be non-negative");
  }
  if (temperature < 0.0) {
    throw Error(ErrorCode::InvalidConfig,
                "temperature = " + std::to_string(temperature) +
                    " must be non-negative");
  }
}

std::string build_prompt(const PromptTemplate& tpl, const std::string& label) {
  tpl.validate();
  if (label.empty()) {
    throw Error(ErrorCode::EmptyLabel, "cannot build a prompt for an empty "
                "label");
  }
  std::string prompt = tpl.instruction;
  prompt += "\n\n";
  for (const auto& [src, tgt] : tpl.fewshot_pairs) {
    prompt += "Sentence: '" + src + "' Paraphrased: '" + tgt + "'\n";
  }
  prompt += "Sentence: '" + label + "' Paraphrased:";
  return prompt;
}

namespace {

struct ParsedEndpoint {
  std::string host;
  int port = 80;
  std::string path_prefix;
};

ParsedEndpoint parse_endpoint(const std::string& url) {
  static const std::regex kUrl(R"(^(https?)://([^/:]+)(?::(\d+))?(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, kUrl)) {
    throw Error(ErrorCode::InvalidConfig,
                "endpoint_url '" + url + "' is not a valid http URL");
  }
  if (m[1] == "https") {
    throw Error(ErrorCode::InvalidConfig,
                "https endpoints are not supported in this build; use an "
                "http gateway");
  }
  ParsedEndpoint out;
  out.host = m[2];
  out.port = m[3].matched ? std::stoi(m[3]) : 80;
  if (m[4].matched) {
    out.path_prefix = m[4];
    while (!out.path_prefix.empty() && out.path_prefix.back() == '/') {
      out.path_prefix.pop_back();
    }
  }
  return out;
}

// One chat-completions call. Returns the completion text, or nullopt with
// the failure reason in error_out.
std::optional<std::string> request_completion(const LlmClientConfig& config,
                                              const ParsedEndpoint& endpoint,
                                              const char* api_key,
                                              const std::string& prompt,
                                              std::string& error_out) {
  httplib::Client cli(endpoint.host, endpoint.port);
  const auto whole_sec = static_cast<time_t>(config.timeout_sec);
  const auto micro = static_cast<time_t>(
      (config.timeout_sec - static_cast<double>(whole_sec)) * 1e6);
  cli.set_connection_timeout(whole_sec, micro);
  cli.set_read_timeout(whole_sec, micro);
  cli.set_write_timeout(whole_sec, micro);

  httplib::Headers headers;
  if (api_key) headers.emplace("Authorization", std::string("Bearer ") + api_key);

  const json body = {{"model", config.model_name},
                     {"messages", json::array({{{"role", "user"},
                                                {"content", prompt}}})},
                     {"temperature", config.temperature}};
  const auto res = cli.Post(endpoint.path_prefix + "/chat/completions",
                            headers, body.dump(), "application/json");
  if (!res) {
    error_out = "connection failed (" + httplib::to_string(res.error()) + ")";
    return std::nullopt;
  }
  if (res->status != 200) {
    error_out = "HTTP " + std::to_string(res->status);
    return std::nullopt;
  }
  const json reply = json::parse(res->body, nullptr, false);
  if (reply.is_discarded() || !reply.contains("choices") ||
      !reply["choices"].is_array() || reply["choices"].empty() ||
      !reply["choices"][0].contains("message") ||
      !reply["choices"][0]["message"].contains("content") ||
      !reply["choices"][0]["message"]["content"].is_string()) {
    error_out = "malformed completion payload";
    return std::nullopt;
  }
  return reply["choices"][0]["message"]["content"].get<std::string>();
}

std::optional<std::string> request_with_retries(const LlmClientConfig& config,
                                                const ParsedEndpoint& endpoint,
                                                const char* api_key,
                                                const std::string& prompt,
                                                std::string& error_out) {
  for (int attempt = 0; attempt <= config.retries; ++attempt) {
    if (attempt > 0) {
      const long backoff = 100L << std::min(attempt - 1, 4);
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
    }
    const auto out =
        request_completion(config, endpoint, api_key, prompt, error_out);
    if (out) return out;
  }
  return std::nullopt;
}

}  // namespace

std::vector<std::vector<std::string>> generate_variants(
    const LlmClientConfig& config, const PromptTemplate& tpl,
    const std::vector<std::string>& labels, int n_per_label) {
  config.validate();
  tpl.validate();
  if (n_per_label < 1) {
    throw Error(ErrorCode::InvalidConfig,
                "n_per_label = " + std::to_string(n_per_label) +
                    " must be >= 1");
  }
  const ParsedEndpoint endpoint = parse_endpoint(config.endpoint_url);
  const char* api_key = nullptr;
  if (!config.api_key_env_var.empty()) {
    api_key = std::getenv(config.api_key_env_var.c_str());
    if (!api_key) {
      throw Error(ErrorCode::AuthMissing,
                  "environment variable '" + config.api_key_env_var +
                      "' is not set");
    }
  }
  if (labels.empty()) return {};

  // One task per wanted completion, worked off a shared counter so at most
  // max_in_flight requests run at once. Completions land in fixed slots, so
  // the output order is the input order no matter who finishes first.
  struct Task {
    std::size_t label_idx;
    int variant_idx;
  };
  std::vector<Task> tasks;
  tasks.reserve(labels.size() * static_cast<std::size_t>(n_per_label));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (int k = 0; k < n_per_label; ++k) {
      tasks.push_back({i, k});
    }
  }

  std::vector<std::vector<std::optional<std::string>>> slots(labels.size());
  for (auto& row : slots) row.resize(static_cast<std::size_t>(n_per_label));
  std::vector<std::atomic<bool>> failed(labels.size());
  for (auto& f : failed) f.store(false);
  std::mutex log_mutex;

  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= tasks.size()) return;
      const Task task = tasks[t];
      if (failed[task.label_idx].load()) continue;
      const std::string prompt = build_prompt(tpl, labels[task.label_idx]);
      std::string error;
      const auto out =
          request_with_retries(config, endpoint, api_key, prompt, error);
      if (out) {
        slots[task.label_idx][static_cast<std::size_t>(task.variant_idx)] =
            *out;
      } else {
        failed[task.label_idx].store(true);
        std::lock_guard<std::mutex> lock(log_mutex);
        std::cerr << "warning: generation failed for label '"
                  << labels[task.label_idx] << "': " << error << std::endl;
      }
    }
  };

  const std::size_t n_workers =
      std::min<std::size_t>(static_cast<std::size_t>(config.max_in_flight),
                            tasks.size());
  std::vector<std::thread> pool;
  pool.reserve(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  bool any_ok = false;
  std::vector<std::vector<std::string>> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (failed[i].load()) continue;
    any_ok = true;
    std::set<std::string> seen;
    for (const auto& slot : slots[i]) {
      if (!slot || slot->empty()) continue;
      if (seen.insert(*slot).second) out[i].push_back(*slot);
    }
  }
  if (!any_ok) {
    throw Error(ErrorCode::EndpointUnreachable,
                "every label failed against " + config.endpoint_url);
  }
  return out;
}

namespace {

const std::map<std::string, std::vector<std::string>>& synonym_table() {
  static const std::map<std::string, std::vector<std::string>> kTable = {
      {"walk", {"stroll", "pace"}},       {"walks", {"strolls", "paces"}},
      {"walking", {"strolling", "pacing"}},
      {"run", {"jog", "dash"}},           {"runs", {"jogs", "dashes"}},
      {"running", {"jogging", "dashing"}},
      {"jump", {"hop", "leap"}},          {"jumps", {"hops", "leaps"}},
      {"jumping", {"hopping", "leaping"}},
      {"turn", {"rotate", "pivot"}},      {"turns", {"rotates", "pivots"}},
      {"turning", {"rotating", "pivoting"}},
      {"spin", {"twirl"}},                {"spins", {"twirls"}},
      {"wave", {"gesture"}},              {"waves", {"gestures"}},
      {"bend", {"lean"}},                 {"bends", {"leans"}},
      {"kick", {"boot"}},                 {"kicks", {"boots"}},
      {"throw", {"toss", "hurl"}},        {"throws", {"tosses", "hurls"}},
      {"catch", {"grab"}},                {"catches", {"grabs"}},
      {"pick", {"grab"}},                 {"picks", {"grabs"}},
      {"climb", {"scale"}},               {"climbs", {"scales"}},
      {"crawl", {"creep"}},               {"crawls", {"creeps"}},
      {"fast", {"quickly", "briskly"}},   {"slow", {"slowly"}},
      {"slowly", {"gradually"}},          {"quickly", {"rapidly"}},
      {"forward", {"ahead", "forwards"}}, {"backward", {"back", "backwards"}},
      {"man", {"person"}},                {"woman", {"person"}},
      {"floor", {"ground"}},              {"around", {"in a circle"}}};
  return kTable;
}

const std::vector<std::string>& subject_phrases() {
  static const std::vector<std::string> kSubjects = {
      "Someone", "A person", "The individual", "The figure"};
  return kSubjects;
}

const std::vector<std::string>& adverb_tails() {
  static const std::vector<std::string> kTails = {
      "slowly",   "quickly",  "with care",
      "in place", "steadily", "once more"};
  return kTails;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

// Drops a leading subject phrase ("a person", "someone", ...) so the rest
// can be re-wrapped with a different one. Returns true when one was found;
// the remaining verb phrase is then already third-person.
bool strip_subject(std::vector<std::string>& words) {
  static const std::vector<std::vector<std::string>> kPrefixes = {
      {"a", "person"},    {"the", "person"},     {"a", "man"},
      {"the", "man"},     {"a", "woman"},        {"the", "woman"},
      {"the", "individual"}, {"the", "figure"},  {"a", "human"},
      {"someone"},        {"somebody"},          {"he"},
      {"she"},            {"they"}};
  for (const auto& prefix : kPrefixes) {
    if (words.size() <= prefix.size()) continue;
    bool match = true;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
      if (lower(words[i]) != prefix[i]) {
        match = false;
        break;
      }
    }
    if (match) {
      words.erase(words.begin(),
                  words.begin() + static_cast<std::ptrdiff_t>(prefix.size()));
      return true;
    }
  }
  return false;
}

// "walk" -> "walks", "catch" -> "catches"; leaves words that already end in
// 's' alone. Crude, but deterministic and good enough for motion verbs.
std::string third_person(const std::string& verb) {
  if (verb.empty() || verb.back() == 's') return verb;
  if (verb.size() >= 2) {
    const std::string tail = verb.substr(verb.size() - 2);
    if (tail == "ch" || tail == "sh") return verb + "es";
  }
  return verb + "s";
}

}  // namespace

std::vector<std::string> fallback_paraphrase(const std::string& label, int n,
                                             std::uint64_t seed) {
  if (n < 1) {
    throw Error(ErrorCode::InvalidConfig,
                "n = " + std::to_string(n) + " must be >= 1");
  }
  // Mixing the label into the stream keeps one seed usable across a corpus
  // without every label getting the same rewrites.
  Rng rng(seed ^ fnv1a64(label));

  std::vector<std::string> base = split_words(label);
  if (!base.empty() && !base.back().empty() && base.back().back() == '.') {
    base.back().pop_back();
    if (base.back().empty()) base.pop_back();
  }
  const bool had_subject = strip_subject(base);
  if (!had_subject && !base.empty()) {
    base.front() = third_person(lower(base.front()));
  }
  for (auto& w : base) w = lower(w);

  const auto& subjects = subject_phrases();
  const auto& tails = adverb_tails();
  const auto& synonyms = synonym_table();

  std::vector<std::string> out;
  std::set<std::string> seen;
  int attempts = 0;
  const int max_attempts = 4 * n + 8;
  while (static_cast<int>(out.size()) < n) {
    std::vector<std::string> words = base;
    for (auto& w : words) {
      const auto it = synonyms.find(w);
      if (it != synonyms.end() && rng.uniform01() < 0.5) {
        w = it->second[rng.uniform_int(it->second.size())];
      }
    }
    std::size_t subject = rng.uniform_int(subjects.size());
    if (rng.uniform01() < 0.3) words.push_back(tails[rng.uniform_int(tails.size())]);

    std::string candidate = subjects[subject] + " " + join_words(words) + ".";
    if (candidate == label) {
      candidate = subjects[(subject + 1) % subjects.size()] + " " +
                  join_words(words) + ".";
    }
    ++attempts;
    // After enough tries, accept repeats rather than loop forever on labels
    // with a tiny rewrite space.
    if (seen.insert(candidate).second || attempts >= max_attempts) {
      out.push_back(std::move(candidate));
    }
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> mine_fewshot_pairs(
    const corpus::MotionSample& sample) {
  std::vector<std::string> gt;
  for (const auto& var : sample.variants) {
    if (var.kind == corpus::TextKind::GroundTruth && !var.text.empty()) {
      gt.push_back(var.text);
    }
  }
  std::vector<std::pair<std::string, std::string>> pairs;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    for (std::size_t j = 0; j < gt.size(); ++j) {
      if (i == j || gt[i] == gt[j]) continue;
      pairs.emplace_back(gt[i], gt[j]);
    }
  }
  return pairs;
}

}  // namespace motext::textgen
