#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "motext/corpus.hpp"
#include "motext/rng.hpp"

namespace motext::augment {

enum class Branch { Gt, Par, Act, Avg };

const char* to_string(Branch b);

enum class AvgRule { RandomSubset, FixedK };

// Per-sample text selection policy. Each training draw picks one branch:
//   Gt   -> one ground-truth sentence embedding
//   Par  -> one paraphrase sentence embedding
//   Act  -> one action-style sentence embedding
//   Avg  -> renormalized mean over a subset of the averaging pool
// Branches whose pool is empty for a given sample are dropped and the
// remaining probabilities renormalized.
struct AugmentationPolicy {
  double p_gt = 0.4;
  double p_par = 0.2;
  double p_act = 0.1;
  double p_avg = 0.3;
  AvgRule avg_rule = AvgRule::RandomSubset;
  int fixed_k = 4;                     // only used with AvgRule::FixedK
  bool include_action_in_avg = true;   // action variants join the Avg pool

  void validate() const;  // throws InvalidConfig
};

AugmentationPolicy parse_policy(const nlohmann::json& j);
nlohmann::json policy_to_json(const AugmentationPolicy& policy);

struct SelectedText {
  Branch branch;
  std::vector<int> variant_indices;  // ordinals into sample.variants
  Eigen::VectorXd embedding;         // always unit norm
};

// Mean of sentence embeddings, rescaled back to unit norm.
Eigen::VectorXd average_sentence_embeddings(
    const std::vector<Eigen::VectorXd>& embeddings);

// Mean-pool each token matrix over its tokens, then average the pooled
// vectors. No normalization: this is a pre-encoder feature.
Eigen::VectorXd average_token_features(
    const std::vector<Eigen::MatrixXd>& token_features);

SelectedText sample_text_embedding(const corpus::MotionSample& sample,
                                   const AugmentationPolicy& policy, Rng& rng);

// Averaging-stage ablation selector: with probability proportional to p_gt
// use a ground-truth sentence embedding, otherwise average a subset of the
// paraphrase pool, either as sentence embeddings (normalized) or as pooled
// token features (raw, pre-encoder).
enum class SelectorMode { SentenceAvg, TokenAvg };
enum class FeatureStage { PreEncoder, PostEncoder };

struct SelectorConfig {
  SelectorMode mode = SelectorMode::SentenceAvg;
  double p_gt = 0.5;
  double p_avg = 0.5;
  AvgRule avg_rule = AvgRule::RandomSubset;
  int fixed_k = 4;

  void validate() const;
};

SelectorConfig parse_selector_config(const nlohmann::json& j);
nlohmann::json selector_config_to_json(const SelectorConfig& config);

struct SelectorResult {
  FeatureStage stage;
  std::vector<int> variant_indices;
  Eigen::VectorXd features;
};

SelectorResult select_text_features(const corpus::MotionSample& sample,
                                const SelectorConfig& config, Rng& rng);

}  // namespace motext::augment
