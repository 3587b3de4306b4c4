#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "motext/augment.hpp"
#include "motext/corpus.hpp"
#include "motext/rng.hpp"

namespace motext::model {

// y = W x + b. Hidden layers apply ReLU; the final layer is linear and the
// tower output is L2-normalized.
struct AffineLayer {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
};

struct Tower {
  std::vector<AffineLayer> layers;
};

struct EncoderParams {
  Tower text;
  Tower motion;
};

enum class LossKind { InfoNce, HnNce };

const char* to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& s);

struct TrainConfig {
  LossKind loss = LossKind::InfoNce;
  double temperature = 0.1;
  double hn_alpha = 1.0;
  double hn_beta = 0.25;
  int batch_size = 32;
  int epochs = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  int embed_dim = 64;
  std::vector<int> text_hidden = {128};
  std::vector<int> motion_hidden = {128};
  augment::AugmentationPolicy policy;
  std::optional<augment::SelectorConfig> selector;  // overrides policy when set
  bool filter_duplicate_negatives = false;
  double duplicate_threshold = 0.8;

  void validate() const;
};

Eigen::VectorXd tower_forward(const Tower& tower, const Eigen::VectorXd& x);
Eigen::VectorXd encode_text(const EncoderParams& params,
                            const Eigen::VectorXd& sentence_embedding);
// Mean-pools frames, then applies the motion tower.
Eigen::VectorXd encode_motion(const EncoderParams& params,
                              const Eigen::MatrixXd& motion_features);
Eigen::VectorXd mean_pool(const Eigen::MatrixXd& features);

struct LossResult {
  double loss = 0.0;
  Eigen::MatrixXd grad;  // dL/dS
};

// Symmetric contrastive loss over a similarity matrix S (rows: text,
// columns: motion; diagonal holds the paired entries).
LossResult info_nce(const Eigen::MatrixXd& S, double temperature);

// Hard-negative reweighted variant. Per direction, negative j of anchor i
// gets weight w_ij = (N-1) * softmax_{k != i}(beta * S_ik / tau)_j and the
// positive term is scaled by alpha. Weights are treated as constants when
// differentiating. beta = 0 and alpha = 1 recover info_nce.
LossResult hn_nce(const Eigen::MatrixXd& S, double temperature, double alpha,
                  double beta);

struct HnWeights {
  Eigen::MatrixXd row;  // w for the text -> motion direction
  Eigen::MatrixXd col;  // w for the motion -> text direction
};

HnWeights hn_weights(const Eigen::MatrixXd& S, double temperature, double beta);
double hn_nce_loss_frozen(const Eigen::MatrixXd& S, double temperature,
                          double alpha, const HnWeights& weights);

// Central finite differences against the analytic dL/dS, probing every
// entry. For HnNce the reweighting coefficients are frozen at the base
// point, matching their constant treatment in the analytic gradient.
// Returns the max relative error: |a - f| / max(|a|, |f|, 1e-8).
double check_gradients(const Eigen::MatrixXd& S, double temperature,
                       LossKind kind, double alpha = 1.0, double beta = 0.25,
                       double eps = 1e-5);

struct TowerGrads {
  std::vector<Eigen::MatrixXd> dW;
  std::vector<Eigen::VectorXd> db;
};

struct EncoderGrads {
  TowerGrads text;
  TowerGrads motion;
};

// Loss of one batch. Inputs are raw tower inputs (text feature per sample,
// pooled motion feature per sample).
double batch_loss(const EncoderParams& params,
                  const std::vector<Eigen::VectorXd>& text_inputs,
                  const std::vector<Eigen::VectorXd>& motion_inputs,
                  const TrainConfig& config);

struct BatchResult {
  double loss = 0.0;
  EncoderGrads grads;
};

BatchResult batch_loss_and_grads(const EncoderParams& params,
                                 const std::vector<Eigen::VectorXd>& text_inputs,
                                 const std::vector<Eigen::VectorXd>& motion_inputs,
                                 const TrainConfig& config);

EncoderParams init_params(int text_dim, int motion_dim,
                          const TrainConfig& config, Rng& rng);

struct TrainResult {
  EncoderParams params;
  std::vector<double> epoch_losses;
};

TrainResult train(const corpus::CombinedTrainSet& data,
                  const TrainConfig& config);

nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig parse_train_config(const nlohmann::json& j);

// The header stores the layer shapes plus `meta`, typically the resolved
// training config and seed.
void save_checkpoint(const std::filesystem::path& path,
                     const EncoderParams& params,
                     const nlohmann::json& meta = nlohmann::json::object());
EncoderParams load_checkpoint(const std::filesystem::path& path,
                              nlohmann::json* meta_out = nullptr);

}  // namespace motext::model
