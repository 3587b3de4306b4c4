#include "motext/augment.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "motext/errors.hpp"

namespace motext::augment {

using corpus::MotionSample;
using corpus::TextKind;
using nlohmann::json;

const char* to_string(Branch b) {
  switch (b) {
    case Branch::Gt: return "gt";
    case Branch::Par: return "par";
    case Branch::Act: return "act";
    case Branch::Avg: return "avg";
  }
  return "?";
}

void AugmentationPolicy::validate() const {
  const double ps[] = {p_gt, p_par, p_act, p_avg};
  const char* names[] = {"p_gt", "p_par", "p_act", "p_avg"};
  double sum = 0.0;
  for (int i = 0; i < 4; ++i) {
    if (ps[i] < 0.0 || !std::isfinite(ps[i])) {
      throw Error(ErrorCode::InvalidConfig,
                  std::string(names[i]) + " = " + std::to_string(ps[i]) +
                      " must be a finite non-negative probability");
    }
    sum += ps[i];
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidConfig,
                "p_gt + p_par + p_act + p_avg = " + std::to_string(sum) +
                    ", expected 1");
  }
  if (avg_rule == AvgRule::FixedK && fixed_k < 1) {
    throw Error(ErrorCode::InvalidConfig,
                "fixed_k = " + std::to_string(fixed_k) + " must be >= 1");
  }
}

void SelectorConfig::validate() const {
  if (p_gt < 0.0 || !std::isfinite(p_gt)) {
    throw Error(ErrorCode::InvalidConfig,
                "p_gt = " + std::to_string(p_gt) + " must be >= 0");
  }
  if (p_avg < 0.0 || !std::isfinite(p_avg)) {
    throw Error(ErrorCode::InvalidConfig,
                "p_avg = " + std::to_string(p_avg) + " must be >= 0");
  }
  if (p_gt + p_avg <= 0.0) {
    throw Error(ErrorCode::InvalidConfig,
                "p_gt + p_avg must be positive");
  }
  if (avg_rule == AvgRule::FixedK && fixed_k < 1) {
    throw Error(ErrorCode::InvalidConfig,
                "fixed_k = " + std::to_string(fixed_k) + " must be >= 1");
  }
}

namespace {

void parse_avg_rule(const json& j, AvgRule& rule, int& fixed_k) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s != "rand") {
      throw Error(ErrorCode::InvalidConfig,
                  "avg_rule '" + s + "' is not recognized; use \"rand\" or "
                  "{\"fixed_k\": k}");
    }
    rule = AvgRule::RandomSubset;
    return;
  }
  if (j.is_object() && j.size() == 1 && j.contains("fixed_k") &&
      j["fixed_k"].is_number_integer()) {
    rule = AvgRule::FixedK;
    fixed_k = j["fixed_k"].get<int>();
    return;
  }
  throw Error(ErrorCode::InvalidConfig,
              "avg_rule must be \"rand\" or {\"fixed_k\": k}, got " + j.dump());
}

}  // namespace

AugmentationPolicy parse_policy(const json& j) {
  if (!j.is_object()) {
    throw Error(ErrorCode::InvalidConfig, "policy must be a JSON object");
  }
  static const std::set<std::string> kKeys = {
      "p_gt", "p_par", "p_act", "p_avg", "avg_rule", "include_action_in_avg"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!kKeys.count(it.key())) {
      throw Error(ErrorCode::InvalidConfig,
                  "unknown policy key '" + it.key() + "'");
    }
  }
  AugmentationPolicy policy;
  try {
    if (j.contains("p_gt")) policy.p_gt = j["p_gt"].get<double>();
    if (j.contains("p_par")) policy.p_par = j["p_par"].get<double>();
    if (j.contains("p_act")) policy.p_act = j["p_act"].get<double>();
    if (j.contains("p_avg")) policy.p_avg = j["p_avg"].get<double>();
    if (j.contains("include_action_in_avg")) {
      policy.include_action_in_avg = j["include_action_in_avg"].get<bool>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("policy: ") + e.what());
  }
  if (j.contains("avg_rule")) {
    parse_avg_rule(j["avg_rule"], policy.avg_rule, policy.fixed_k);
  }
  policy.validate();
  return policy;
}

json policy_to_json(const AugmentationPolicy& policy) {
  json j = {{"p_gt", policy.p_gt},
            {"p_par", policy.p_par},
            {"p_act", policy.p_act},
            {"p_avg", policy.p_avg},
            {"include_action_in_avg", policy.include_action_in_avg}};
  if (policy.avg_rule == AvgRule::RandomSubset) {
    j["avg_rule"] = "rand";
  } else {
    j["avg_rule"] = {{"fixed_k", policy.fixed_k}};
  }
  return j;
}

SelectorConfig parse_selector_config(const json& j) {
  if (!j.is_object()) {
    throw Error(ErrorCode::InvalidConfig, "selector must be a JSON object");
  }
  static const std::set<std::string> kKeys = {"mode", "p_gt", "p_avg",
                                              "avg_rule"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!kKeys.count(it.key())) {
      throw Error(ErrorCode::InvalidConfig,
                  "unknown selector key '" + it.key() + "'");
    }
  }
  SelectorConfig config;
  if (j.contains("mode")) {
    const auto mode = j["mode"].get<std::string>();
    if (mode == "sentence_avg") {
      config.mode = SelectorMode::SentenceAvg;
    } else if (mode == "token_avg") {
      config.mode = SelectorMode::TokenAvg;
    } else {
      throw Error(ErrorCode::InvalidConfig,
                  "selector mode '" + mode +
                      "' is not recognized; use \"sentence_avg\" or "
                      "\"token_avg\"");
    }
  }
  try {
    if (j.contains("p_gt")) config.p_gt = j["p_gt"].get<double>();
    if (j.contains("p_avg")) config.p_avg = j["p_avg"].get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("selector: ") + e.what());
  }
  if (j.contains("avg_rule")) {
    parse_avg_rule(j["avg_rule"], config.avg_rule, config.fixed_k);
  }
  config.validate();
  return config;
}

json selector_config_to_json(const SelectorConfig& config) {
  json j = {{"mode", config.mode == SelectorMode::SentenceAvg ? "sentence_avg"
                                                              : "token_avg"},
            {"p_gt", config.p_gt},
            {"p_avg", config.p_avg}};
  if (config.avg_rule == AvgRule::RandomSubset) {
    j["avg_rule"] = "rand";
  } else {
    j["avg_rule"] = {{"fixed_k", config.fixed_k}};
  }
  return j;
}

Eigen::VectorXd average_sentence_embeddings(
    const std::vector<Eigen::VectorXd>& embeddings) {
  if (embeddings.empty()) {
    throw Error(ErrorCode::EmptyPool, "no embeddings to average");
  }
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(embeddings[0].size());
  for (const auto& e : embeddings) {
    if (e.size() != mean.size()) {
      throw Error(ErrorCode::DimensionMismatch,
                  "cannot average embeddings of dim " +
                      std::to_string(e.size()) + " and " +
                      std::to_string(mean.size()));
    }
    mean += e;
  }
  mean /= static_cast<double>(embeddings.size());
  const double norm = mean.norm();
  if (norm < 1e-12) {
    throw Error(ErrorCode::ZeroNormMean,
                "averaged embedding has near-zero norm " + std::to_string(norm));
  }
  return mean / norm;
}

Eigen::VectorXd average_token_features(
    const std::vector<Eigen::MatrixXd>& token_features) {
  if (token_features.empty()) {
    throw Error(ErrorCode::EmptySequence, "no token features to average");
  }
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(token_features[0].cols());
  for (const auto& m : token_features) {
    if (m.rows() < 1) {
      throw Error(ErrorCode::EmptySequence, "token matrix has zero tokens");
    }
    if (m.cols() != mean.size()) {
      throw Error(ErrorCode::DimensionMismatch,
                  "cannot average token features of dim " +
                      std::to_string(m.cols()) + " and " +
                      std::to_string(mean.size()));
    }
    mean += m.colwise().mean().transpose();
  }
  return mean / static_cast<double>(token_features.size());
}

namespace {

// Draw m distinct elements from pool, uniformly over subsets; returned
// ordinals are sorted so the averaging order is stable.
std::vector<int> choose_subset(std::vector<int> pool, std::size_t m, Rng& rng) {
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + rng.uniform_int(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(m);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::size_t subset_size(AvgRule rule, int fixed_k, std::size_t pool_size,
                        Rng& rng) {
  if (pool_size == 1) return 1;
  if (rule == AvgRule::FixedK) {
    return std::min<std::size_t>(static_cast<std::size_t>(fixed_k), pool_size);
  }
  return 2 + rng.uniform_int(pool_size - 1);  // uniform in {2, ..., pool_size}
}

struct VariantPools {
  std::vector<int> gt, par, act, avg;
};

VariantPools collect_pools(const MotionSample& sample,
                           bool include_action_in_avg) {
  VariantPools pools;
  for (int i = 0; i < static_cast<int>(sample.variants.size()); ++i) {
    const auto& var = sample.variants[i];
    if (!var.sentence_embedding) continue;
    switch (var.kind) {
      case TextKind::GroundTruth:
        pools.gt.push_back(i);
        pools.avg.push_back(i);
        break;
      case TextKind::Paraphrase:
        pools.par.push_back(i);
        pools.avg.push_back(i);
        break;
      case TextKind::ActionStyle:
        pools.act.push_back(i);
        if (include_action_in_avg) pools.avg.push_back(i);
        break;
    }
  }
  return pools;
}

Eigen::VectorXd averaged_embedding(const MotionSample& sample,
                                   const std::vector<int>& indices) {
  std::vector<Eigen::VectorXd> members;
  members.reserve(indices.size());
  for (int i : indices) members.push_back(*sample.variants[i].sentence_embedding);
  return average_sentence_embeddings(members);
}

Eigen::VectorXd unit(const Eigen::VectorXd& v) {
  const double norm = v.norm();
  if (norm < 1e-12) {
    throw Error(ErrorCode::ZeroNormMean,
                "sentence embedding has near-zero norm " + std::to_string(norm));
  }
  return v / norm;
}

}  // namespace

SelectedText sample_text_embedding(const MotionSample& sample,
                                   const AugmentationPolicy& policy, Rng& rng) {
  policy.validate();
  const VariantPools pools = collect_pools(sample, policy.include_action_in_avg);

  const Branch order[] = {Branch::Gt, Branch::Par, Branch::Act, Branch::Avg};
  const std::vector<int>* branch_pools[] = {&pools.gt, &pools.par, &pools.act,
                                            &pools.avg};
  double probs[] = {policy.p_gt, policy.p_par, policy.p_act, policy.p_avg};
  double total = 0.0;
  for (int i = 0; i < 4; ++i) {
    if (branch_pools[i]->empty()) probs[i] = 0.0;
    total += probs[i];
  }
  if (total <= 0.0) {
    throw Error(ErrorCode::EmptyPool,
                "no satisfiable text branch for motion '" + sample.motion_id +
                    "'");
  }

  const double u = rng.uniform01() * total;
  double cum = 0.0;
  int chosen = 3;
  for (int i = 0; i < 4; ++i) {
    if (probs[i] <= 0.0) continue;
    cum += probs[i];
    if (u < cum) {
      chosen = i;
      break;
    }
  }
  // Guard against u landing exactly on the accumulated total.
  while (probs[chosen] <= 0.0) --chosen;

  SelectedText out;
  out.branch = order[chosen];
  const std::vector<int>& pool = *branch_pools[chosen];
  if (out.branch == Branch::Avg) {
    const std::size_t m =
        subset_size(policy.avg_rule, policy.fixed_k, pool.size(), rng);
    out.variant_indices = choose_subset(pool, m, rng);
    out.embedding = averaged_embedding(sample, out.variant_indices);
  } else {
    const int idx = pool[rng.uniform_int(pool.size())];
    out.variant_indices = {idx};
    out.embedding = unit(*sample.variants[idx].sentence_embedding);
  }
  return out;
}

SelectorResult select_text_features(const MotionSample& sample,
                                    const SelectorConfig& config, Rng& rng) {
  config.validate();
  std::vector<int> gt_pool;
  // The averaged branch draws from the paraphrase pool only.
  std::vector<int> avg_pool;
  for (int i = 0; i < static_cast<int>(sample.variants.size()); ++i) {
    const auto& var = sample.variants[i];
    if (var.kind == TextKind::GroundTruth && var.sentence_embedding) {
      gt_pool.push_back(i);
    }
    if (var.kind == TextKind::Paraphrase &&
        (config.mode == SelectorMode::TokenAvg
             ? var.token_features.has_value()
             : var.sentence_embedding.has_value())) {
      avg_pool.push_back(i);
    }
  }

  const double p_gt = gt_pool.empty() ? 0.0 : config.p_gt;
  const double p_avg = avg_pool.empty() ? 0.0 : config.p_avg;
  const double total = p_gt + p_avg;
  if (total <= 0.0) {
    throw Error(ErrorCode::EmptyPool,
                "no satisfiable selector branch for motion '" +
                    sample.motion_id + "'");
  }

  SelectorResult out;
  const bool take_gt = rng.uniform01() * total < p_gt;
  if (take_gt) {
    const int idx = gt_pool[rng.uniform_int(gt_pool.size())];
    out.stage = FeatureStage::PostEncoder;
    out.variant_indices = {idx};
    out.features = unit(*sample.variants[idx].sentence_embedding);
    return out;
  }

  const std::size_t m =
      subset_size(config.avg_rule, config.fixed_k, avg_pool.size(), rng);
  out.variant_indices = choose_subset(avg_pool, m, rng);
  if (config.mode == SelectorMode::TokenAvg) {
    std::vector<Eigen::MatrixXd> members;
    members.reserve(out.variant_indices.size());
    for (int i : out.variant_indices) {
      members.push_back(*sample.variants[i].token_features);
    }
    out.stage = FeatureStage::PreEncoder;
    out.features = average_token_features(members);
  } else {
    out.stage = FeatureStage::PostEncoder;
    out.features = averaged_embedding(sample, out.variant_indices);
  }
  return out;
}

}  // namespace motext::augment
