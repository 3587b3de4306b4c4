#include <chrono>
#include <cstdlib>
#include <functional>
#include <map>
#include <mutex>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "motext/corpus.hpp"
#include "motext/errors.hpp"
#include "motext/textgen.hpp"

// httplib must come after Eigen (pulled in through the corpus header); its
// platform includes leak macros that break Eigen's function declarations.
#include "httplib.h"

using motext::Error;
using motext::ErrorCode;
using namespace motext::textgen;
using nlohmann::json;

namespace {

int count_words(const std::string& text) {
  std::istringstream in(text);
  std::string w;
  int n = 0;
  while (in >> w) ++n;
  return n;
}

// In-process chat-completions endpoint. The response for each request is
// produced by `reply(label, request)`, where the label is recovered from the
// prompt tail.
class MockEndpoint {
 public:
  using Reply = std::function<void(const std::string& label,
                                   const httplib::Request& req,
                                   httplib::Response& res)>;

  explicit MockEndpoint(Reply reply) : reply_(std::move(reply)) {
    server_.Post("/chat/completions", [this](const httplib::Request& req,
                                             httplib::Response& res) {
      const json body = json::parse(req.body, nullptr, false);
      if (body.is_discarded() || !body.contains("messages") ||
          body["messages"].empty() ||
          body["messages"][0].value("role", "") != "user") {
        res.status = 400;
        return;
      }
      const auto prompt = body["messages"][0].value("content", "");
      static const std::regex kTail("Sentence: '([^']*)' Paraphrased:$");
      std::smatch m;
      if (!std::regex_search(prompt, m, kTail)) {
        res.status = 400;
        return;
      }
      {
        std::lock_guard<std::mutex> lock(mutex_);
        ++request_counts_[m[1]];
        last_request_ = req;
        last_body_ = body;
      }
      reply_(m[1], req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    REQUIRE(port_ > 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    while (!server_.is_running()) {
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
  }

  ~MockEndpoint() {
    server_.stop();
    thread_.join();
  }

  std::string url() const {
    return "http://127.0.0.1:" + std::to_string(port_);
  }

  int requests_for(const std::string& label) {
    std::lock_guard<std::mutex> lock(mutex_);
    return request_counts_[label];
  }

  httplib::Request last_request() {
    std::lock_guard<std::mutex> lock(mutex_);
    return last_request_;
  }

  json last_body() {
    std::lock_guard<std::mutex> lock(mutex_);
    return last_body_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  Reply reply_;
  std::mutex mutex_;
  std::map<std::string, int> request_counts_;
  httplib::Request last_request_;
  json last_body_;
};

void send_completion(httplib::Response& res, const std::string& content) {
  const json reply = {
      {"choices",
       json::array({{{"message", {{"role", "assistant"},
                                  {"content", content}}}}})}};
  res.set_content(reply.dump(), "application/json");
}

// Numbered, per-label distinct completions; 500 for the label "FAIL".
class CountingReply {
 public:
  void operator()(const std::string& label, const httplib::Request&,
                  httplib::Response& res) {
    if (label == "FAIL") {
      res.status = 500;
      return;
    }
    int k;
    {
      std::lock_guard<std::mutex> lock(mutex_);
      k = ++counts_[label];
    }
    send_completion(res, label + " (v" + std::to_string(k) + ")");
  }

 private:
  std::mutex mutex_;
  std::map<std::string, int> counts_;
};

LlmClientConfig local_config(const std::string& url) {
  LlmClientConfig config;
  config.endpoint_url = url;
  config.api_key_env_var = "";  // anonymous endpoint
  config.timeout_sec = 5.0;
  config.retries = 0;
  return config;
}

}  // namespace

TEST_CASE("prompts render the instruction, examples and query in order") {
  PromptTemplate tpl;
  tpl.instruction = "X";
  tpl.fewshot_pairs = {{"a", "b"}};
  CHECK(build_prompt(tpl, "walk") ==
        "X\n\nSentence: 'a' Paraphrased: 'b'\nSentence: 'walk' Paraphrased:");

  tpl.fewshot_pairs.push_back({"c", "d"});
  CHECK(build_prompt(tpl, "run") ==
        "X\n\nSentence: 'a' Paraphrased: 'b'\nSentence: 'c' Paraphrased: "
        "'d'\nSentence: 'run' Paraphrased:");

  try {
    build_prompt(tpl, "");
    FAIL("empty label was accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyLabel);
  }

  PromptTemplate bare;
  bare.instruction = "X";
  CHECK_THROWS_WITH_AS(build_prompt(bare, "walk"),
                       doctest::Contains("few-shot"), Error);
}

TEST_CASE("bundled templates are valid and serializable") {
  for (const auto style :
       {PromptStyle::ParaphraseSentence, PromptStyle::DescribeConcise,
        PromptStyle::ActionStyle}) {
    const PromptTemplate tpl = default_template(style);
    CHECK_NOTHROW(tpl.validate());
    CHECK(tpl.style == style);
    CHECK_FALSE(tpl.instruction.empty());
    CHECK(tpl.fewshot_pairs.size() >= 1);

    const json j = template_to_json(tpl);
    CHECK(template_to_json(parse_template(j)) == j);
    CHECK(parse_prompt_style(to_string(style)) == style);
  }
  CHECK_THROWS_AS(parse_prompt_style("concise"), Error);

  CHECK_THROWS_WITH_AS(
      parse_template({{"instruction", "X"},
                      {"fewshot_pairs", json::array({{"a", "b"}})},
                      {"styles", "action_style"}}),
      doctest::Contains("styles"), Error);
  CHECK_THROWS_AS(
      parse_template({{"instruction", "X"},
                      {"fewshot_pairs", json::array({{"a", "b", "c"}})}}),
      Error);
  CHECK_THROWS_AS(
      parse_template({{"instruction", "X"},
                      {"fewshot_pairs", json::array({{"a", ""}})}}),
      Error);
}

TEST_CASE("offline paraphrasing is deterministic and rewords the label") {
  const auto a = fallback_paraphrase("walk forward", 2, 7);
  const auto b = fallback_paraphrase("walk forward", 2, 7);
  CHECK(a == b);
  REQUIRE(a.size() == 2);
  CHECK(a[0] != a[1]);

  const auto single = fallback_paraphrase("a person walks forward", 1, 3);
  REQUIRE(single.size() == 1);
  CHECK(single[0] != "a person walks forward");

  // Re-wrapping with a subject phrase makes one-word labels longer on
  // average, never shorter.
  const std::vector<std::string> verbs = {"walk", "run", "jump", "kick",
                                          "wave", "turn", "climb", "crawl"};
  double mean_out = 0.0;
  int produced = 0;
  for (int i = 0; i < 100; ++i) {
    const auto out =
        fallback_paraphrase(verbs[static_cast<std::size_t>(i) % verbs.size()],
                            1, static_cast<std::uint64_t>(i));
    REQUIRE(out.size() == 1);
    CHECK(out[0].back() == '.');
    mean_out += count_words(out[0]);
    ++produced;
  }
  CHECK(mean_out / produced > 1.0);

  // Different seeds explore different rewrites of a rich label.
  const auto many = fallback_paraphrase("a person walks forward quickly", 6, 1);
  CHECK(std::set<std::string>(many.begin(), many.end()).size() == 6);

  CHECK_THROWS_AS(fallback_paraphrase("walk", 0, 1), Error);
}

TEST_CASE("few-shot mining pairs up co-annotations of one segment") {
  motext::corpus::MotionSample sample;
  sample.motion_id = "m0";
  const auto add = [&](const std::string& text,
                       motext::corpus::TextKind kind) {
    motext::corpus::TextVariant v;
    v.text = text;
    v.kind = kind;
    sample.variants.push_back(v);
  };
  add("a person walks", motext::corpus::TextKind::GroundTruth);
  add("someone strolls", motext::corpus::TextKind::GroundTruth);
  add("the figure paces", motext::corpus::TextKind::GroundTruth);
  add("ignored paraphrase", motext::corpus::TextKind::Paraphrase);

  const auto pairs = mine_fewshot_pairs(sample);
  REQUIRE(pairs.size() == 6);
  CHECK(pairs[0] == std::make_pair(std::string("a person walks"),
                                   std::string("someone strolls")));
  CHECK(pairs[1] == std::make_pair(std::string("a person walks"),
                                   std::string("the figure paces")));
  CHECK(pairs[2].first == "someone strolls");
  for (const auto& [src, tgt] : pairs) CHECK(src != tgt);

  motext::corpus::MotionSample lonely;
  motext::corpus::TextVariant solo;
  solo.text = "solo";
  solo.kind = motext::corpus::TextKind::GroundTruth;
  lonely.variants.push_back(solo);
  CHECK(mine_fewshot_pairs(lonely).empty());

  // Duplicate ground truths never pair with themselves.
  motext::corpus::MotionSample doubled = lonely;
  doubled.variants.push_back(solo);
  CHECK(mine_fewshot_pairs(doubled).empty());
}

TEST_CASE("client configuration validation names the bad field") {
  LlmClientConfig config;
  CHECK_NOTHROW(config.validate());

  config.max_in_flight = 0;
  CHECK_THROWS_WITH_AS(config.validate(), doctest::Contains("max_in_flight"),
                       Error);
  config = {};
  config.timeout_sec = 0.0;
  CHECK_THROWS_WITH_AS(config.validate(), doctest::Contains("timeout_sec"),
                       Error);
  config = {};
  config.retries = -1;
  CHECK_THROWS_WITH_AS(config.validate(), doctest::Contains("retries"), Error);
  config = {};
  config.temperature = -0.5;
  CHECK_THROWS_WITH_AS(config.validate(), doctest::Contains("temperature"),
                       Error);
  config = {};
  config.endpoint_url = "";
  CHECK_THROWS_AS(config.validate(), Error);
}

TEST_CASE("endpoint handling rejects https and missing credentials") {
  const PromptTemplate tpl = default_template(PromptStyle::ParaphraseSentence);

  LlmClientConfig config;
  config.endpoint_url = "https://api.example.com";
  CHECK_THROWS_WITH_AS(generate_variants(config, tpl, {"walk"}, 1),
                       doctest::Contains("https"), Error);

  config = {};
  config.endpoint_url = "not a url";
  CHECK_THROWS_AS(generate_variants(config, tpl, {"walk"}, 1), Error);

  config = {};
  config.api_key_env_var = "MOTEXT_TEST_KEY_UNSET";
  unsetenv("MOTEXT_TEST_KEY_UNSET");
  try {
    generate_variants(config, tpl, {"walk"}, 1);
    FAIL("missing api key was accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::AuthMissing);
  }

  config = {};
  config.api_key_env_var = "";
  CHECK_THROWS_AS(generate_variants(config, tpl, {"walk"}, 0), Error);
}

TEST_CASE("an unreachable endpoint fails every label loudly") {
  LlmClientConfig config = local_config("http://127.0.0.1:1");
  config.timeout_sec = 2.0;
  const PromptTemplate tpl = default_template(PromptStyle::ParaphraseSentence);
  try {
    generate_variants(config, tpl, {"walk", "run"}, 1);
    FAIL("dead endpoint produced output");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EndpointUnreachable);
  }
}

TEST_CASE("variants come back per label, distinct and in input order") {
  MockEndpoint endpoint([reply = std::make_shared<CountingReply>()](
                            const std::string& label,
                            const httplib::Request& req,
                            httplib::Response& res) { (*reply)(label, req, res); });
  LlmClientConfig config = local_config(endpoint.url());
  config.max_in_flight = 4;
  const PromptTemplate tpl = default_template(PromptStyle::ParaphraseSentence);

  const std::vector<std::string> labels = {"walk", "run", "jump"};
  const auto out = generate_variants(config, tpl, labels, 3);
  REQUIRE(out.size() == 3);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    REQUIRE(out[i].size() == 3);
    std::set<std::string> distinct(out[i].begin(), out[i].end());
    CHECK(distinct.size() == 3);
    for (const auto& text : out[i]) {
      CHECK(text.find(labels[i] + " (v") == 0);
    }
    CHECK(endpoint.requests_for(labels[i]) == 3);
  }
}

TEST_CASE("repeated completions collapse to one variant") {
  MockEndpoint endpoint([](const std::string& label, const httplib::Request&,
                           httplib::Response& res) {
    send_completion(res, "always the same " + label);
  });
  const auto out = generate_variants(local_config(endpoint.url()),
                                     default_template(PromptStyle::ParaphraseSentence),
                                     {"walk"}, 3);
  REQUIRE(out.size() == 1);
  CHECK(out[0] == std::vector<std::string>{"always the same walk"});
}

TEST_CASE("empty completions are dropped without failing the label") {
  MockEndpoint endpoint([](const std::string& label, const httplib::Request&,
                           httplib::Response& res) {
    send_completion(res, label == "blank" ? "" : "ok " + label);
  });
  const auto out = generate_variants(local_config(endpoint.url()),
                                     default_template(PromptStyle::ParaphraseSentence),
                                     {"walk", "blank"}, 2);
  REQUIRE(out.size() == 2);
  CHECK(out[0] == std::vector<std::string>{"ok walk"});
  CHECK(out[1].empty());
}

TEST_CASE("a failing label is retried, then skipped; others are unaffected") {
  MockEndpoint endpoint([reply = std::make_shared<CountingReply>()](
                            const std::string& label,
                            const httplib::Request& req,
                            httplib::Response& res) { (*reply)(label, req, res); });
  LlmClientConfig config = local_config(endpoint.url());
  config.retries = 1;
  config.max_in_flight = 1;  // serial, so the failure count is exact
  const PromptTemplate tpl = default_template(PromptStyle::ParaphraseSentence);

  const auto out = generate_variants(config, tpl, {"walk", "FAIL", "run"}, 2);
  REQUIRE(out.size() == 3);
  CHECK(out[0].size() == 2);
  CHECK(out[1].empty());
  CHECK(out[2].size() == 2);
  // One attempt plus one retry for the first wanted variant; the second is
  // skipped once the label is marked failed.
  CHECK(endpoint.requests_for("FAIL") == config.retries + 1);
}

TEST_CASE("malformed payloads count as failures") {
  MockEndpoint endpoint([](const std::string&, const httplib::Request&,
                           httplib::Response& res) {
    res.set_content("not json at all", "text/plain");
  });
  try {
    generate_variants(local_config(endpoint.url()),
                      default_template(PromptStyle::ParaphraseSentence),
                      {"walk"}, 1);
    FAIL("garbage payload produced output");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EndpointUnreachable);
  }
}

TEST_CASE("requests carry the model, temperature and credentials") {
  MockEndpoint endpoint([](const std::string& label, const httplib::Request&,
                           httplib::Response& res) {
    send_completion(res, "ok " + label);
  });
  LlmClientConfig config = local_config(endpoint.url());
  config.model_name = "tiny-chat";
  config.temperature = 0.25;
  config.api_key_env_var = "MOTEXT_TEST_KEY";
  setenv("MOTEXT_TEST_KEY", "sekret", 1);
  const PromptTemplate tpl = default_template(PromptStyle::DescribeConcise);

  const auto out = generate_variants(config, tpl, {"walk"}, 1);
  CHECK(out[0] == std::vector<std::string>{"ok walk"});
  const json body = endpoint.last_body();
  CHECK(body["model"] == "tiny-chat");
  CHECK(body["temperature"] == 0.25);
  CHECK(body["messages"][0]["content"] ==
        build_prompt(tpl, "walk"));
  CHECK(endpoint.last_request().get_header_value("Authorization") ==
        "Bearer sekret");
  unsetenv("MOTEXT_TEST_KEY");

  // Without a configured key variable no Authorization header is sent.
  LlmClientConfig anon = local_config(endpoint.url());
  generate_variants(anon, tpl, {"run"}, 1);
  CHECK_FALSE(endpoint.last_request().has_header("Authorization"));
}
