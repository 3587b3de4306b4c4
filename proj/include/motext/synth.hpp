#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "motext/corpus.hpp"
#include "motext/model.hpp"

namespace motext::synth {

// Clustered Gaussian world. Text and motion centers for each cluster sit on
// the unit sphere of R^dim. A sample's motion frames are its cluster's
// motion center plus per-frame noise; its ground-truth text feature is the
// text center plus noise; paraphrases add another noise step on top of the
// ground truth; the action-style variant is exactly center +
// action_style_offset * u for a fixed random direction u. Every dataset
// after the first shifts all of its text features by domain_shift * u along
// that same direction and uses concise annotation strings, standing in for
// a label-style domain gap.
struct SynthConfig {
  int n_clusters = 8;
  int samples_per_cluster = 16;  // train samples per cluster
  int val_per_cluster = 2;
  int test_per_cluster = 4;
  int dim = 16;
  double text_noise = 0.08;    // sigma_t
  double motion_noise = 0.08;  // sigma_m
  double domain_shift = 0.8;   // delta
  int n_paraphrases = 8;
  double action_style_offset = 0.8;
  int n_datasets = 2;
  int n_tokens = 4;
  double token_style_noise = 0.5;  // per-variant offset kept by token pooling
  double token_noise = 0.15;       // per-token noise removed by pooling
  // Pooled token embeddings and dedicated sentence embeddings of the same
  // text differ systematically; this shifts all token features along one
  // fixed direction to model that frame mismatch.
  double token_frame_offset = 0.6;
  // Pooling also averages in vocabulary shared with other descriptions, so
  // each variant's tokens lean toward one random other cluster's center by
  // this amount.
  double token_ambiguity = 1.0;
  int frames_min = 8;
  int frames_max = 16;
  int gt_words = 9;          // verbose ground-truth length
  int paraphrase_words = 7;
  int action_words = 2;      // concise ground-truth length (shifted datasets)
  double overlap_fraction = 0.0;  // train samples overlapping a test span
  std::uint64_t seed = 0;

  void validate() const;
};

SynthConfig parse_synth_config(const nlohmann::json& j);
nlohmann::json synth_config_to_json(const SynthConfig& config);

// Splits come back grouped per dataset in train, val, test order. The same
// seed always produces the same corpus.
std::vector<corpus::DatasetSplit> generate_corpus(const SynthConfig& config);

// Literal transcription of the retrieval protocol, independent of the eval
// module: scores are inner products of the query against each gallery item,
// the candidate set is {j : text_sims[j] > threshold} plus the paired item,
// and the result is the best 1-based position in the score ordering
// (descending, ties by ascending index).
int oracle_rank(const Eigen::VectorXd& query,
                const std::vector<Eigen::VectorXd>& gallery,
                const Eigen::VectorXd& text_sims, Eigen::Index paired_index,
                double threshold);

// Direct, unstabilized evaluation of the loss formulas for cross-checking
// the model module on small well-conditioned inputs.
double oracle_loss(const Eigen::MatrixXd& S, double temperature, double alpha,
                   double beta, model::LossKind kind);

}  // namespace motext::synth
