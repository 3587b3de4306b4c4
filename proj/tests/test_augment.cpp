#include <cmath>
#include <map>
#include <vector>

#include <Eigen/Dense>

#include "doctest.h"
#include "json.hpp"
#include "motext/augment.hpp"
#include "motext/corpus.hpp"
#include "motext/errors.hpp"
#include "motext/rng.hpp"

using motext::Error;
using motext::ErrorCode;
using motext::Rng;
using namespace motext::augment;
using motext::corpus::MotionSample;
using motext::corpus::TextKind;
using motext::corpus::TextVariant;
using nlohmann::json;

namespace {

TextVariant variant(TextKind kind, const Eigen::VectorXd& embedding,
                    const std::string& text = "some motion") {
  TextVariant v;
  v.text = text;
  v.kind = kind;
  v.sentence_embedding = embedding;
  return v;
}

// One ground truth, two paraphrases, one action variant in 4 dimensions,
// all linearly independent so branch outputs are distinguishable.
MotionSample full_sample() {
  MotionSample s;
  s.motion_id = "m0";
  s.dataset_id = "ds";
  s.source_sequence_id = "seq";
  s.start_sec = 0.0;
  s.end_sec = 1.0;
  s.motion_features = Eigen::MatrixXd::Zero(1, 2);
  s.variants.push_back(variant(TextKind::GroundTruth,
                               Eigen::Vector4d(1, 0, 0, 0)));
  s.variants.push_back(variant(TextKind::Paraphrase,
                               Eigen::Vector4d(0, 1, 0, 0)));
  s.variants.push_back(variant(TextKind::Paraphrase,
                               Eigen::Vector4d(0, 0, 1, 0)));
  s.variants.push_back(variant(TextKind::ActionStyle,
                               Eigen::Vector4d(0, 0, 0, 1)));
  return s;
}

AugmentationPolicy policy(double gt, double par, double act, double avg) {
  AugmentationPolicy p;
  p.p_gt = gt;
  p.p_par = par;
  p.p_act = act;
  p.p_avg = avg;
  return p;
}

}  // namespace

TEST_CASE("policy probabilities must be non-negative and sum to one") {
  CHECK_NOTHROW(policy(0.4, 0.2, 0.1, 0.3).validate());
  CHECK_NOTHROW(policy(1.0, 0.0, 0.0, 0.0).validate());

  CHECK_THROWS_WITH_AS(policy(0.5, 0.2, 0.1, 0.3).validate(),
                       doctest::Contains("p_gt + p_par + p_act + p_avg"),
                       Error);
  CHECK_THROWS_AS(policy(-0.1, 0.5, 0.3, 0.3).validate(), Error);

  AugmentationPolicy bad_k = policy(0.0, 0.0, 0.0, 1.0);
  bad_k.avg_rule = AvgRule::FixedK;
  bad_k.fixed_k = 0;
  CHECK_THROWS_AS(bad_k.validate(), Error);
}

TEST_CASE("degenerate policies always pick their only branch") {
  const MotionSample s = full_sample();
  Rng rng(1);

  SUBCASE("all mass on ground truth") {
    for (int i = 0; i < 50; ++i) {
      const auto sel = sample_text_embedding(s, policy(1, 0, 0, 0), rng);
      CHECK(sel.branch == Branch::Gt);
      CHECK(sel.variant_indices == std::vector<int>{0});
      CHECK((sel.embedding - Eigen::Vector4d(1, 0, 0, 0)).norm() < 1e-12);
    }
  }

  SUBCASE("all mass on a singleton average pool") {
    MotionSample single = s;
    single.variants.resize(1);  // just the ground truth
    const auto sel = sample_text_embedding(single, policy(0, 0, 0, 1), rng);
    CHECK(sel.branch == Branch::Avg);
    CHECK(sel.variant_indices == std::vector<int>{0});
    CHECK((sel.embedding - Eigen::Vector4d(1, 0, 0, 0)).norm() < 1e-12);
  }
}

TEST_CASE("branch frequencies follow the policy") {
  const MotionSample s = full_sample();
  const AugmentationPolicy p = policy(0.4, 0.2, 0.1, 0.3);
  Rng rng(99);
  std::map<Branch, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    ++counts[sample_text_embedding(s, p, rng).branch];
  }
  CHECK(std::abs(counts[Branch::Gt] / double(n) - 0.4) < 0.01);
  CHECK(std::abs(counts[Branch::Par] / double(n) - 0.2) < 0.01);
  CHECK(std::abs(counts[Branch::Act] / double(n) - 0.1) < 0.01);
  CHECK(std::abs(counts[Branch::Avg] / double(n) - 0.3) < 0.01);
}

TEST_CASE("unsatisfiable branches renormalize onto the rest") {
  MotionSample s = full_sample();
  s.variants.pop_back();  // drop the action variant
  const AugmentationPolicy p = policy(0.5, 0.0, 0.25, 0.25);
  Rng rng(7);
  std::map<Branch, int> counts;
  const int n = 60000;
  for (int i = 0; i < n; ++i) {
    ++counts[sample_text_embedding(s, p, rng).branch];
  }
  CHECK(counts[Branch::Act] == 0);
  CHECK(counts[Branch::Par] == 0);
  // Remaining mass 0.5 / 0.25 renormalizes to 2/3 and 1/3.
  CHECK(std::abs(counts[Branch::Gt] / double(n) - 2.0 / 3.0) < 0.01);
  CHECK(std::abs(counts[Branch::Avg] / double(n) - 1.0 / 3.0) < 0.01);
}

TEST_CASE("no satisfiable branch is an empty pool error") {
  MotionSample s = full_sample();
  s.variants.resize(1);  // ground truth only
  Rng rng(3);
  try {
    sample_text_embedding(s, policy(0, 1, 0, 0), rng);
    FAIL("paraphrase-only policy on a gt-only sample was accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyPool);
  }
}

TEST_CASE("selected embeddings are always unit norm") {
  MotionSample s = full_sample();
  // Non-unit raw embeddings exercise the normalization.
  for (auto& v : s.variants) *v.sentence_embedding *= 3.7;
  const AugmentationPolicy p = policy(0.25, 0.25, 0.25, 0.25);
  Rng rng(13);
  for (int i = 0; i < 2000; ++i) {
    const auto sel = sample_text_embedding(s, p, rng);
    CHECK(std::abs(sel.embedding.norm() - 1.0) < 1e-6);
  }
}

TEST_CASE("fixed-k averaging clamps to the pool size") {
  const MotionSample s = full_sample();  // avg pool has 4 members
  AugmentationPolicy p = policy(0, 0, 0, 1);
  p.avg_rule = AvgRule::FixedK;
  p.fixed_k = 10;
  Rng rng(5);
  const auto sel = sample_text_embedding(s, p, rng);
  CHECK(sel.variant_indices == std::vector<int>{0, 1, 2, 3});
  // Mean of the four unit axes, renormalized: every coordinate 0.5.
  for (int i = 0; i < 4; ++i) {
    CHECK(sel.embedding[i] == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("action variants leave the averaging pool when excluded") {
  const MotionSample s = full_sample();
  AugmentationPolicy p = policy(0, 0, 0, 1);
  p.avg_rule = AvgRule::FixedK;
  p.fixed_k = 10;
  p.include_action_in_avg = false;
  Rng rng(5);
  const auto sel = sample_text_embedding(s, p, rng);
  CHECK(sel.variant_indices == std::vector<int>{0, 1, 2});
}

TEST_CASE("sentence averaging oracle values") {
  SUBCASE("singleton is the normalized input") {
    Eigen::VectorXd v(3);
    v << 3, 0, 4;
    const auto out = average_sentence_embeddings({v});
    CHECK(out[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(out[2] == doctest::Approx(0.8).epsilon(1e-12));
  }

  SUBCASE("two orthonormal axes average to the diagonal") {
    const auto out = average_sentence_embeddings(
        {Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, 1, 0)});
    CHECK(out[0] == doctest::Approx(0.70711).epsilon(1e-4));
    CHECK(out[1] == doctest::Approx(0.70711).epsilon(1e-4));
    CHECK(out[2] == doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("cancellation is a zero-norm error") {
    try {
      average_sentence_embeddings(
          {Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(-1, 0, 0)});
      FAIL("cancelled mean was accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ZeroNormMean);
    }
  }

  SUBCASE("empty pool and dimension mismatch") {
    CHECK_THROWS_AS(average_sentence_embeddings({}), Error);
    CHECK_THROWS_AS(
        average_sentence_embeddings(
            {Eigen::Vector3d(1, 0, 0), Eigen::Vector2d(1, 0)}),
        Error);
  }
}

TEST_CASE("token averaging is an unnormalized two-stage mean") {
  SUBCASE("one single-token sequence is the identity") {
    Eigen::MatrixXd t(1, 3);
    t << 2, -1, 5;
    const auto out = average_token_features({t});
    CHECK((out - Eigen::Vector3d(2, -1, 5)).norm() < 1e-12);
  }

  SUBCASE("opposite tokens cancel to the zero vector") {
    Eigen::MatrixXd a(1, 3), b(1, 3);
    a << 1, 2, 3;
    b << -1, -2, -3;
    CHECK(average_token_features({a, b}).norm() == 0.0);
  }

  SUBCASE("matches a brute-force mean of means") {
    Rng rng(21);
    std::vector<Eigen::MatrixXd> seqs;
    for (int i = 0; i < 4; ++i) {
      Eigen::MatrixXd m(2 + i, 5);
      for (int r = 0; r < m.rows(); ++r) {
        for (int c = 0; c < 5; ++c) m(r, c) = rng.gaussian();
      }
      seqs.push_back(m);
    }
    Eigen::VectorXd expect = Eigen::VectorXd::Zero(5);
    for (const auto& m : seqs) {
      Eigen::VectorXd pooled = Eigen::VectorXd::Zero(5);
      for (int r = 0; r < m.rows(); ++r) pooled += m.row(r).transpose();
      expect += pooled / double(m.rows());
    }
    expect /= double(seqs.size());
    CHECK((average_token_features(seqs) - expect).norm() < 1e-12);
  }

  SUBCASE("zero-token sequences are rejected") {
    Eigen::MatrixXd empty(0, 3);
    try {
      average_token_features({empty});
      FAIL("zero-token matrix was accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::EmptySequence);
    }
    CHECK_THROWS_AS(average_token_features({}), Error);
  }
}

TEST_CASE("selector with all mass on ground truth ignores the mode") {
  MotionSample s = full_sample();
  for (auto& v : s.variants) {
    v.token_features = Eigen::MatrixXd::Random(3, 4);
  }
  SelectorConfig sent;
  sent.mode = SelectorMode::SentenceAvg;
  sent.p_gt = 1.0;
  sent.p_avg = 0.0;
  SelectorConfig tok = sent;
  tok.mode = SelectorMode::TokenAvg;

  Rng r1(4), r2(4);
  for (int i = 0; i < 30; ++i) {
    const auto a = select_text_features(s, sent, r1);
    const auto b = select_text_features(s, tok, r2);
    CHECK(a.stage == FeatureStage::PostEncoder);
    CHECK(b.stage == FeatureStage::PostEncoder);
    CHECK(a.variant_indices == std::vector<int>{0});
    CHECK((a.features - b.features).norm() == 0.0);
    CHECK((a.features - Eigen::Vector4d(1, 0, 0, 0)).norm() < 1e-12);
  }
}

TEST_CASE("selector averaging branch pools paraphrases only") {
  MotionSample s = full_sample();
  for (auto& v : s.variants) {
    v.token_features =
        Eigen::MatrixXd::Constant(2, 4, 1.0) +
        Eigen::MatrixXd::Random(2, 4) * 0.0;  // constant rows per variant
  }
  // Give each paraphrase a distinct constant token matrix.
  s.variants[1].token_features = Eigen::MatrixXd::Constant(2, 4, 2.0);
  s.variants[2].token_features = Eigen::MatrixXd::Constant(3, 4, 6.0);

  SelectorConfig config;
  config.p_gt = 0.0;
  config.p_avg = 1.0;
  config.avg_rule = AvgRule::FixedK;
  config.fixed_k = 8;  // clamps to the whole paraphrase pool

  SUBCASE("token mode averages pooled token features unnormalized") {
    config.mode = SelectorMode::TokenAvg;
    Rng rng(9);
    const auto out = select_text_features(s, config, rng);
    CHECK(out.stage == FeatureStage::PreEncoder);
    CHECK(out.variant_indices == std::vector<int>{1, 2});
    // Pools are 2.0 and 6.0, their mean is 4.0 in every coordinate.
    for (int i = 0; i < 4; ++i) {
      CHECK(out.features[i] == doctest::Approx(4.0).epsilon(1e-12));
    }
  }

  SUBCASE("sentence mode averages sentence embeddings normalized") {
    config.mode = SelectorMode::SentenceAvg;
    Rng rng(9);
    const auto out = select_text_features(s, config, rng);
    CHECK(out.stage == FeatureStage::PostEncoder);
    CHECK(out.variant_indices == std::vector<int>{1, 2});
    // Mean of e2 and e3, renormalized.
    CHECK(out.features[1] == doctest::Approx(1 / std::sqrt(2)).epsilon(1e-9));
    CHECK(out.features[2] == doctest::Approx(1 / std::sqrt(2)).epsilon(1e-9));
  }

  SUBCASE("token mode needs token features on the paraphrases") {
    config.mode = SelectorMode::TokenAvg;
    MotionSample bare = full_sample();  // no token features anywhere
    Rng rng(9);
    try {
      select_text_features(bare, config, rng);
      FAIL("token averaging without token features was accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::EmptyPool);
    }
  }
}

TEST_CASE("selector branch frequencies follow p_gt") {
  MotionSample s = full_sample();
  SelectorConfig config;
  config.p_gt = 0.5;
  config.p_avg = 0.5;
  Rng rng(31);
  int gt = 0;
  const int n = 60000;
  for (int i = 0; i < n; ++i) {
    const auto out = select_text_features(s, config, rng);
    if (out.variant_indices == std::vector<int>{0}) ++gt;
  }
  CHECK(std::abs(gt / double(n) - 0.5) < 0.01);
}

TEST_CASE("policy json round-trips and rejects unknown keys") {
  AugmentationPolicy p = policy(0.4, 0.2, 0.1, 0.3);
  p.avg_rule = AvgRule::FixedK;
  p.fixed_k = 6;
  p.include_action_in_avg = false;
  const json j = policy_to_json(p);
  const AugmentationPolicy back = parse_policy(j);
  CHECK(policy_to_json(back) == j);

  json bad = j;
  bad["p_dup"] = 0.1;
  CHECK_THROWS_WITH_AS(parse_policy(bad), doctest::Contains("p_dup"), Error);

  CHECK_THROWS_AS(parse_policy(json::array()), Error);
  CHECK_NOTHROW(parse_policy(json{{"avg_rule", "rand"}}));
  CHECK_THROWS_AS(parse_policy(json{{"avg_rule", "best"}}), Error);
}

TEST_CASE("selector json round-trips and rejects unknown keys") {
  SelectorConfig c;
  c.mode = SelectorMode::TokenAvg;
  c.p_gt = 0.0;
  c.p_avg = 1.0;
  c.avg_rule = AvgRule::FixedK;
  c.fixed_k = 4;
  const json j = selector_config_to_json(c);
  const SelectorConfig back = parse_selector_config(j);
  CHECK(selector_config_to_json(back) == j);

  json bad = j;
  bad["stage"] = "pre";
  CHECK_THROWS_WITH_AS(parse_selector_config(bad), doctest::Contains("stage"),
                       Error);
  CHECK_THROWS_AS(parse_selector_config(json{{"mode", "word_avg"}}), Error);
}
