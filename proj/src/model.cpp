#include "motext/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <unordered_set>

#include "json.hpp"

#include "motext/errors.hpp"
#include "motext/formats.hpp"

namespace motext::model {

using nlohmann::json;

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::InfoNce: return "info_nce";
    case LossKind::HnNce: return "hn_nce";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "info_nce") return LossKind::InfoNce;
  if (s == "hn_nce") return LossKind::HnNce;
  throw Error(ErrorCode::InvalidConfig,
              "loss '" + s + "' is not recognized; use \"info_nce\" or "
              "\"hn_nce\"");
}

void TrainConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorCode::InvalidConfig,
                "temperature = " + std::to_string(temperature) +
                    " must be positive");
  }
  if (hn_alpha < 0.0 || !std::isfinite(hn_alpha)) {
    throw Error(ErrorCode::InvalidConfig,
                "hn_alpha = " + std::to_string(hn_alpha) +
                    " must be non-negative");
  }
  if (hn_beta < 0.0 || !std::isfinite(hn_beta)) {
    throw Error(ErrorCode::InvalidConfig,
                "hn_beta = " + std::to_string(hn_beta) +
                    " must be non-negative");
  }
  if (batch_size < 2) {
    throw Error(ErrorCode::InvalidConfig,
                "batch_size = " + std::to_string(batch_size) +
                    " must be >= 2");
  }
  if (epochs < 0) {
    throw Error(ErrorCode::InvalidConfig,
                "epochs = " + std::to_string(epochs) + " must be >= 0");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorCode::InvalidConfig,
                "learning_rate = " + std::to_string(learning_rate) +
                    " must be positive");
  }
  if (embed_dim < 1) {
    throw Error(ErrorCode::InvalidConfig,
                "embed_dim = " + std::to_string(embed_dim) + " must be >= 1");
  }
  for (int w : text_hidden) {
    if (w < 1) {
      throw Error(ErrorCode::InvalidConfig,
                  "text_hidden width " + std::to_string(w) + " must be >= 1");
    }
  }
  for (int w : motion_hidden) {
    if (w < 1) {
      throw Error(ErrorCode::InvalidConfig,
                  "motion_hidden width " + std::to_string(w) +
                      " must be >= 1");
    }
  }
  if (filter_duplicate_negatives &&
      (duplicate_threshold < -1.0 || duplicate_threshold > 1.0)) {
    throw Error(ErrorCode::InvalidConfig,
                "duplicate_threshold = " + std::to_string(duplicate_threshold) +
                    " must be a cosine in [-1, 1]");
  }
  policy.validate();
  if (selector) selector->validate();
}

json train_config_to_json(const TrainConfig& config) {
  json j = {{"loss", to_string(config.loss)},
            {"temperature", config.temperature},
            {"hn_alpha", config.hn_alpha},
            {"hn_beta", config.hn_beta},
            {"batch_size", config.batch_size},
            {"epochs", config.epochs},
            {"learning_rate", config.learning_rate},
            {"seed", config.seed},
            {"embed_dim", config.embed_dim},
            {"text_hidden", config.text_hidden},
            {"motion_hidden", config.motion_hidden},
            {"policy", augment::policy_to_json(config.policy)},
            {"filter_duplicate_negatives", config.filter_duplicate_negatives},
            {"duplicate_threshold", config.duplicate_threshold}};
  if (config.selector) {
    j["selector"] = augment::selector_config_to_json(*config.selector);
  }
  return j;
}

TrainConfig parse_train_config(const json& j) {
  if (!j.is_object()) {
    throw Error(ErrorCode::InvalidConfig, "train must be a JSON object");
  }
  static const std::set<std::string> kKeys = {
      "loss",          "temperature",   "hn_alpha",
      "hn_beta",       "batch_size",    "epochs",
      "learning_rate", "seed",          "embed_dim",
      "text_hidden",   "motion_hidden", "policy",
      "selector",      "filter_duplicate_negatives",
      "duplicate_threshold"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!kKeys.count(it.key())) {
      throw Error(ErrorCode::InvalidConfig,
                  "unknown train key '" + it.key() + "'");
    }
  }
  TrainConfig config;
  try {
    if (j.contains("loss")) {
      config.loss = parse_loss_kind(j["loss"].get<std::string>());
    }
    if (j.contains("temperature")) {
      config.temperature = j["temperature"].get<double>();
    }
    if (j.contains("hn_alpha")) config.hn_alpha = j["hn_alpha"].get<double>();
    if (j.contains("hn_beta")) config.hn_beta = j["hn_beta"].get<double>();
    if (j.contains("batch_size")) {
      config.batch_size = j["batch_size"].get<int>();
    }
    if (j.contains("epochs")) config.epochs = j["epochs"].get<int>();
    if (j.contains("learning_rate")) {
      config.learning_rate = j["learning_rate"].get<double>();
    }
    if (j.contains("seed")) config.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("embed_dim")) config.embed_dim = j["embed_dim"].get<int>();
    if (j.contains("text_hidden")) {
      config.text_hidden = j["text_hidden"].get<std::vector<int>>();
    }
    if (j.contains("motion_hidden")) {
      config.motion_hidden = j["motion_hidden"].get<std::vector<int>>();
    }
    if (j.contains("filter_duplicate_negatives")) {
      config.filter_duplicate_negatives =
          j["filter_duplicate_negatives"].get<bool>();
    }
    if (j.contains("duplicate_threshold")) {
      config.duplicate_threshold = j["duplicate_threshold"].get<double>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("train: ") + e.what());
  }
  if (j.contains("policy")) {
    config.policy = augment::parse_policy(j["policy"]);
  }
  if (j.contains("selector")) {
    config.selector = augment::parse_selector_config(j["selector"]);
  }
  config.validate();
  return config;
}

namespace {

constexpr double kNormFloor = 1e-12;

struct TowerCache {
  std::vector<Eigen::VectorXd> inputs;  // inputs[l] feeds layers[l]
  std::vector<Eigen::VectorXd> pre;     // pre[l] = W_l inputs[l] + b_l
  double norm = 0.0;
  Eigen::VectorXd out;
};

TowerCache forward_cached(const Tower& tower, const Eigen::VectorXd& x) {
  if (tower.layers.empty()) {
    throw Error(ErrorCode::InvalidConfig, "tower has no layers");
  }
  if (x.size() != tower.layers.front().W.cols()) {
    throw Error(ErrorCode::DimensionMismatch,
                "tower expects input dim " +
                    std::to_string(tower.layers.front().W.cols()) + ", got " +
                    std::to_string(x.size()));
  }
  TowerCache cache;
  cache.inputs.push_back(x);
  const std::size_t L = tower.layers.size();
  for (std::size_t l = 0; l < L; ++l) {
    const auto& layer = tower.layers[l];
    cache.pre.push_back(layer.W * cache.inputs[l] + layer.b);
    if (l + 1 < L) {
      cache.inputs.push_back(cache.pre[l].cwiseMax(0.0));
    }
  }
  const Eigen::VectorXd& raw = cache.pre.back();
  cache.norm = raw.norm();
  if (cache.norm < kNormFloor) {
    throw Error(ErrorCode::ZeroNormMean,
                "tower output has near-zero norm " + std::to_string(cache.norm));
  }
  cache.out = raw / cache.norm;
  return cache;
}

TowerGrads zero_grads(const Tower& tower) {
  TowerGrads g;
  for (const auto& layer : tower.layers) {
    g.dW.push_back(Eigen::MatrixXd::Zero(layer.W.rows(), layer.W.cols()));
    g.db.push_back(Eigen::VectorXd::Zero(layer.b.size()));
  }
  return g;
}

void backward(const Tower& tower, const TowerCache& cache,
              const Eigen::VectorXd& g_out, TowerGrads& grads) {
  // Through the normalization z = y / |y|.
  Eigen::VectorXd g = (g_out - g_out.dot(cache.out) * cache.out) / cache.norm;
  for (std::size_t l = tower.layers.size(); l-- > 0;) {
    grads.dW[l] += g * cache.inputs[l].transpose();
    grads.db[l] += g;
    if (l > 0) {
      Eigen::VectorXd gx = tower.layers[l].W.transpose() * g;
      g = (gx.array() * (cache.pre[l - 1].array() > 0.0).cast<double>())
              .matrix();
    }
  }
}

void require_square(const Eigen::MatrixXd& S) {
  if (S.rows() != S.cols() || S.rows() < 1) {
    throw Error(ErrorCode::DimensionMismatch,
                "similarity matrix must be square and non-empty, got " +
                    std::to_string(S.rows()) + "x" + std::to_string(S.cols()));
  }
}

void require_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorCode::InvalidConfig,
                "temperature = " + std::to_string(temperature) +
                    " must be positive");
  }
}

}  // namespace

Eigen::VectorXd tower_forward(const Tower& tower, const Eigen::VectorXd& x) {
  return forward_cached(tower, x).out;
}

Eigen::VectorXd mean_pool(const Eigen::MatrixXd& features) {
  if (features.rows() < 1) {
    throw Error(ErrorCode::EmptySequence, "cannot pool zero frames");
  }
  return features.colwise().mean().transpose();
}

Eigen::VectorXd encode_text(const EncoderParams& params,
                            const Eigen::VectorXd& sentence_embedding) {
  return tower_forward(params.text, sentence_embedding);
}

Eigen::VectorXd encode_motion(const EncoderParams& params,
                              const Eigen::MatrixXd& motion_features) {
  return tower_forward(params.motion, mean_pool(motion_features));
}

LossResult info_nce(const Eigen::MatrixXd& S, double temperature) {
  require_square(S);
  require_temperature(temperature);
  const Eigen::Index N = S.rows();
  const Eigen::MatrixXd A = S / temperature;

  Eigen::MatrixXd P_row(N, N), P_col(N, N);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < N; ++i) {
    const double m = A.row(i).maxCoeff();
    const Eigen::ArrayXd e = (A.row(i).array() - m).exp();
    const double sum = e.sum();
    P_row.row(i) = (e / sum).matrix();
    loss -= A(i, i) - m - std::log(sum);
  }
  for (Eigen::Index j = 0; j < N; ++j) {
    const double m = A.col(j).maxCoeff();
    const Eigen::ArrayXd e = (A.col(j).array() - m).exp();
    const double sum = e.sum();
    P_col.col(j) = (e / sum).matrix();
    loss -= A(j, j) - m - std::log(sum);
  }
  loss /= 2.0 * static_cast<double>(N);

  LossResult result;
  result.loss = loss;
  result.grad = (P_row + P_col -
                 2.0 * Eigen::MatrixXd::Identity(N, N)) /
                (2.0 * static_cast<double>(N) * temperature);
  return result;
}

HnWeights hn_weights(const Eigen::MatrixXd& S, double temperature,
                     double beta) {
  require_square(S);
  require_temperature(temperature);
  const Eigen::Index N = S.rows();
  const Eigen::MatrixXd A = S / temperature;

  HnWeights w;
  w.row = Eigen::MatrixXd::Zero(N, N);
  w.col = Eigen::MatrixXd::Zero(N, N);
  if (N == 1) return w;

  for (Eigen::Index i = 0; i < N; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < N; ++j) {
      if (j != i) m = std::max(m, beta * A(i, j));
    }
    double sum = 0.0;
    for (Eigen::Index j = 0; j < N; ++j) {
      if (j != i) sum += std::exp(beta * A(i, j) - m);
    }
    for (Eigen::Index j = 0; j < N; ++j) {
      if (j != i) {
        w.row(i, j) = static_cast<double>(N - 1) *
                      std::exp(beta * A(i, j) - m) / sum;
      }
    }
  }
  for (Eigen::Index j = 0; j < N; ++j) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < N; ++i) {
      if (i != j) m = std::max(m, beta * A(i, j));
    }
    double sum = 0.0;
    for (Eigen::Index i = 0; i < N; ++i) {
      if (i != j) sum += std::exp(beta * A(i, j) - m);
    }
    for (Eigen::Index i = 0; i < N; ++i) {
      if (i != j) {
        w.col(i, j) = static_cast<double>(N - 1) *
                      std::exp(beta * A(i, j) - m) / sum;
      }
    }
  }
  return w;
}

namespace {

struct FrozenEval {
  double loss = 0.0;
  Eigen::MatrixXd grad;
};

// Loss (and optionally dL/dS) with the reweighting coefficients supplied
// from outside and held constant.
FrozenEval eval_frozen(const Eigen::MatrixXd& S, double temperature,
                       double alpha, const HnWeights& weights,
                       bool want_grad) {
  require_square(S);
  require_temperature(temperature);
  const Eigen::Index N = S.rows();
  const Eigen::MatrixXd A = S / temperature;

  FrozenEval out;
  if (want_grad) out.grad = Eigen::MatrixXd::Zero(N, N);

  // A singleton batch has no negatives, so the objective vanishes for any
  // alpha and the gradient is identically zero.
  if (N == 1) return out;

  for (Eigen::Index i = 0; i < N; ++i) {
    const double m = A.row(i).maxCoeff();
    double total = 0.0;
    Eigen::ArrayXd terms(N);
    for (Eigen::Index j = 0; j < N; ++j) {
      const double c = (j == i) ? alpha : weights.row(i, j);
      terms(j) = c * std::exp(A(i, j) - m);
      total += terms(j);
    }
    if (!(total > 0.0)) {
      throw Error(ErrorCode::InvalidConfig,
                  "degenerate denominator: alpha and all negative weights "
                  "are zero");
    }
    out.loss += -A(i, i) + m + std::log(total);
    if (want_grad) {
      for (Eigen::Index j = 0; j < N; ++j) {
        out.grad(i, j) += terms(j) / total;
      }
      out.grad(i, i) -= 1.0;
    }
  }
  for (Eigen::Index j = 0; j < N; ++j) {
    const double m = A.col(j).maxCoeff();
    double total = 0.0;
    Eigen::ArrayXd terms(N);
    for (Eigen::Index i = 0; i < N; ++i) {
      const double c = (i == j) ? alpha : weights.col(i, j);
      terms(i) = c * std::exp(A(i, j) - m);
      total += terms(i);
    }
    if (!(total > 0.0)) {
      throw Error(ErrorCode::InvalidConfig,
                  "degenerate denominator: alpha and all negative weights "
                  "are zero");
    }
    out.loss += -A(j, j) + m + std::log(total);
    if (want_grad) {
      for (Eigen::Index i = 0; i < N; ++i) {
        out.grad(i, j) += terms(i) / total;
      }
      out.grad(j, j) -= 1.0;
    }
  }

  const double scale = 2.0 * static_cast<double>(N);
  out.loss /= scale;
  if (want_grad) out.grad /= scale * temperature;
  return out;
}

}  // namespace

double hn_nce_loss_frozen(const Eigen::MatrixXd& S, double temperature,
                          double alpha, const HnWeights& weights) {
  return eval_frozen(S, temperature, alpha, weights, false).loss;
}

LossResult hn_nce(const Eigen::MatrixXd& S, double temperature, double alpha,
                  double beta) {
  const HnWeights weights = hn_weights(S, temperature, beta);
  const FrozenEval eval = eval_frozen(S, temperature, alpha, weights, true);
  return {eval.loss, eval.grad};
}

double check_gradients(const Eigen::MatrixXd& S, double temperature,
                       LossKind kind, double alpha, double beta, double eps) {
  require_square(S);
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw Error(ErrorCode::InvalidConfig,
                "eps = " + std::to_string(eps) +
                    " must lie in [1e-7, 1e-3]");
  }
  HnWeights weights;
  Eigen::MatrixXd analytic;
  if (kind == LossKind::InfoNce) {
    analytic = info_nce(S, temperature).grad;
  } else {
    weights = hn_weights(S, temperature, beta);
    analytic = hn_nce(S, temperature, alpha, beta).grad;
  }
  const auto loss_at = [&](const Eigen::MatrixXd& Sp) {
    return kind == LossKind::InfoNce
               ? info_nce(Sp, temperature).loss
               : hn_nce_loss_frozen(Sp, temperature, alpha, weights);
  };

  double max_rel = 0.0;
  Eigen::MatrixXd probe = S;
  for (Eigen::Index i = 0; i < S.rows(); ++i) {
    for (Eigen::Index j = 0; j < S.cols(); ++j) {
      const double saved = probe(i, j);
      probe(i, j) = saved + eps;
      const double lp = loss_at(probe);
      probe(i, j) = saved - eps;
      const double lm = loss_at(probe);
      probe(i, j) = saved;
      const double fd = (lp - lm) / (2.0 * eps);
      const double a = analytic(i, j);
      const double rel =
          std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

namespace {

struct BatchForward {
  std::vector<TowerCache> text_caches;
  std::vector<TowerCache> motion_caches;
  Eigen::MatrixXd Zt, Zm, S;
  LossResult loss;
};

BatchForward forward_batch(const EncoderParams& params,
                           const std::vector<Eigen::VectorXd>& text_inputs,
                           const std::vector<Eigen::VectorXd>& motion_inputs,
                           const TrainConfig& config) {
  if (text_inputs.empty() || text_inputs.size() != motion_inputs.size()) {
    throw Error(ErrorCode::BatchTooSmall,
                "batch needs matching non-empty text/motion inputs, got " +
                    std::to_string(text_inputs.size()) + "/" +
                    std::to_string(motion_inputs.size()));
  }
  const Eigen::Index N = static_cast<Eigen::Index>(text_inputs.size());
  BatchForward fwd;
  fwd.text_caches.reserve(text_inputs.size());
  fwd.motion_caches.reserve(motion_inputs.size());
  const Eigen::Index d = params.text.layers.back().W.rows();
  fwd.Zt.resize(N, d);
  fwd.Zm.resize(N, d);
  for (Eigen::Index i = 0; i < N; ++i) {
    fwd.text_caches.push_back(forward_cached(params.text, text_inputs[i]));
    fwd.Zt.row(i) = fwd.text_caches.back().out.transpose();
    fwd.motion_caches.push_back(
        forward_cached(params.motion, motion_inputs[i]));
    fwd.Zm.row(i) = fwd.motion_caches.back().out.transpose();
  }
  fwd.S = fwd.Zt * fwd.Zm.transpose();
  fwd.loss = config.loss == LossKind::InfoNce
                 ? info_nce(fwd.S, config.temperature)
                 : hn_nce(fwd.S, config.temperature, config.hn_alpha,
                          config.hn_beta);
  return fwd;
}

}  // namespace

double batch_loss(const EncoderParams& params,
                  const std::vector<Eigen::VectorXd>& text_inputs,
                  const std::vector<Eigen::VectorXd>& motion_inputs,
                  const TrainConfig& config) {
  return forward_batch(params, text_inputs, motion_inputs, config).loss.loss;
}

BatchResult batch_loss_and_grads(
    const EncoderParams& params, const std::vector<Eigen::VectorXd>& text_inputs,
    const std::vector<Eigen::VectorXd>& motion_inputs,
    const TrainConfig& config) {
  BatchForward fwd = forward_batch(params, text_inputs, motion_inputs, config);
  const Eigen::Index N = fwd.S.rows();

  BatchResult result;
  result.loss = fwd.loss.loss;
  result.grads.text = zero_grads(params.text);
  result.grads.motion = zero_grads(params.motion);
  const Eigen::MatrixXd& G = fwd.loss.grad;
  for (Eigen::Index i = 0; i < N; ++i) {
    const Eigen::VectorXd g_zt = fwd.Zm.transpose() * G.row(i).transpose();
    backward(params.text, fwd.text_caches[i], g_zt, result.grads.text);
  }
  for (Eigen::Index j = 0; j < N; ++j) {
    const Eigen::VectorXd g_zm = fwd.Zt.transpose() * G.col(j);
    backward(params.motion, fwd.motion_caches[j], g_zm, result.grads.motion);
  }
  return result;
}

namespace {

Tower init_tower(int in_dim, const std::vector<int>& hidden, int out_dim,
                 Rng& rng) {
  std::vector<int> dims;
  dims.push_back(in_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out_dim);
  Tower tower;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    AffineLayer layer;
    const int rows = dims[l + 1], cols = dims[l];
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    layer.W.resize(rows, cols);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        layer.W(r, c) = (2.0 * rng.uniform01() - 1.0) * bound;
      }
    }
    layer.b = Eigen::VectorXd::Zero(rows);
    tower.layers.push_back(std::move(layer));
  }
  return tower;
}

struct AdamState {
  std::vector<Eigen::MatrixXd> mW, vW;
  std::vector<Eigen::VectorXd> mb, vb;

  explicit AdamState(const Tower& tower) {
    for (const auto& layer : tower.layers) {
      mW.push_back(Eigen::MatrixXd::Zero(layer.W.rows(), layer.W.cols()));
      vW.push_back(Eigen::MatrixXd::Zero(layer.W.rows(), layer.W.cols()));
      mb.push_back(Eigen::VectorXd::Zero(layer.b.size()));
      vb.push_back(Eigen::VectorXd::Zero(layer.b.size()));
    }
  }
};

void adam_step(Tower& tower, const TowerGrads& grads, AdamState& state,
               double lr, long long t) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t l = 0; l < tower.layers.size(); ++l) {
    state.mW[l] = b1 * state.mW[l] + (1.0 - b1) * grads.dW[l];
    state.vW[l] =
        (b2 * state.vW[l].array() + (1.0 - b2) * grads.dW[l].array().square())
            .matrix();
    tower.layers[l].W.array() -=
        lr * (state.mW[l].array() / c1) /
        ((state.vW[l].array() / c2).sqrt() + eps);

    state.mb[l] = b1 * state.mb[l] + (1.0 - b1) * grads.db[l];
    state.vb[l] =
        (b2 * state.vb[l].array() + (1.0 - b2) * grads.db[l].array().square())
            .matrix();
    tower.layers[l].b.array() -=
        lr * (state.mb[l].array() / c1) /
        ((state.vb[l].array() / c2).sqrt() + eps);
  }
}

const Eigen::VectorXd* first_gt_embedding(const corpus::MotionSample& sample) {
  for (const auto& var : sample.variants) {
    if (var.kind == corpus::TextKind::GroundTruth && var.sentence_embedding) {
      return &*var.sentence_embedding;
    }
  }
  return nullptr;
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na < kNormFloor || nb < kNormFloor) return 0.0;
  return a.dot(b) / (na * nb);
}

}  // namespace

EncoderParams init_params(int text_dim, int motion_dim,
                          const TrainConfig& config, Rng& rng) {
  if (text_dim < 1 || motion_dim < 1) {
    throw Error(ErrorCode::DimensionMismatch,
                "input dims must be positive, got text " +
                    std::to_string(text_dim) + ", motion " +
                    std::to_string(motion_dim));
  }
  EncoderParams params;
  params.text = init_tower(text_dim, config.text_hidden, config.embed_dim, rng);
  params.motion =
      init_tower(motion_dim, config.motion_hidden, config.embed_dim, rng);
  return params;
}

TrainResult train(const corpus::CombinedTrainSet& data,
                  const TrainConfig& config) {
  config.validate();
  if (data.splits.empty()) {
    throw Error(ErrorCode::EmptyTrainSet, "no training datasets");
  }
  std::size_t total = 0;
  std::unordered_set<std::string> distinct_ids;
  int text_dim = 0, motion_dim = 0;
  for (const auto& split : data.splits) {
    total += split.samples.size();
    for (const auto& sample : split.samples) {
      distinct_ids.insert(sample.motion_id);
      if (motion_dim == 0 && sample.motion_features.size() > 0) {
        motion_dim = static_cast<int>(sample.motion_features.cols());
      }
      if (text_dim == 0) {
        for (const auto& var : sample.variants) {
          if (var.sentence_embedding) {
            text_dim = static_cast<int>(var.sentence_embedding->size());
            break;
          }
        }
      }
    }
  }
  if (total == 0) {
    throw Error(ErrorCode::EmptyTrainSet, "training set has no samples");
  }
  if (text_dim == 0) {
    throw Error(ErrorCode::MissingEmbedding,
                "no sentence embeddings in the training set");
  }
  if (distinct_ids.size() < static_cast<std::size_t>(config.batch_size)) {
    throw Error(ErrorCode::BatchTooSmall,
                "batch_size " + std::to_string(config.batch_size) +
                    " exceeds the " + std::to_string(distinct_ids.size()) +
                    " distinct samples available");
  }

  Rng rng(config.seed);
  TrainResult result;
  result.params = init_params(text_dim, motion_dim, config, rng);

  // Pool motion features once; they do not change between draws.
  const std::size_t n_datasets = data.splits.size();
  std::vector<std::vector<Eigen::VectorXd>> pooled(n_datasets);
  std::vector<std::vector<const Eigen::VectorXd*>> gt_raw(n_datasets);
  for (std::size_t d = 0; d < n_datasets; ++d) {
    const auto& samples = data.splits[d].samples;
    pooled[d].reserve(samples.size());
    gt_raw[d].reserve(samples.size());
    for (const auto& sample : samples) {
      pooled[d].push_back(mean_pool(sample.motion_features));
      gt_raw[d].push_back(first_gt_embedding(sample));
    }
  }

  AdamState adam_text(result.params.text);
  AdamState adam_motion(result.params.motion);
  long long t = 0;
  const int steps_per_epoch =
      std::max<int>(1, static_cast<int>(total) / config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      std::vector<std::pair<std::size_t, std::size_t>> members;
      std::unordered_set<std::string> used;
      int attempts = 0;
      while (members.size() < static_cast<std::size_t>(config.batch_size)) {
        if (++attempts > 200 * config.batch_size) {
          throw Error(ErrorCode::BatchTooSmall,
                      "could not assemble a batch of " +
                          std::to_string(config.batch_size) +
                          " distinct samples");
        }
        const double u = rng.uniform01();
        double cum = 0.0;
        std::size_t d = n_datasets - 1;
        for (std::size_t k = 0; k < n_datasets; ++k) {
          cum += data.dataset_weights[k];
          if (u < cum) {
            d = k;
            break;
          }
        }
        const std::size_t idx = rng.uniform_int(data.splits[d].samples.size());
        const auto& candidate = data.splits[d].samples[idx];
        if (used.count(candidate.motion_id)) continue;
        if (config.filter_duplicate_negatives && gt_raw[d][idx]) {
          bool near_duplicate = false;
          for (const auto& [md, mi] : members) {
            if (gt_raw[md][mi] &&
                cosine(*gt_raw[md][mi], *gt_raw[d][idx]) >
                    config.duplicate_threshold) {
              near_duplicate = true;
              break;
            }
          }
          if (near_duplicate) continue;
        }
        used.insert(candidate.motion_id);
        members.emplace_back(d, idx);
      }

      std::vector<Eigen::VectorXd> text_inputs, motion_inputs;
      text_inputs.reserve(members.size());
      motion_inputs.reserve(members.size());
      for (const auto& [d, idx] : members) {
        const auto& sample = data.splits[d].samples[idx];
        if (config.selector) {
          text_inputs.push_back(
              augment::select_text_features(sample, *config.selector, rng).features);
        } else {
          text_inputs.push_back(
              augment::sample_text_embedding(sample, config.policy, rng)
                  .embedding);
        }
        motion_inputs.push_back(pooled[d][idx]);
      }

      BatchResult batch = batch_loss_and_grads(result.params, text_inputs,
                                               motion_inputs, config);
      ++t;
      adam_step(result.params.text, batch.grads.text, adam_text,
                config.learning_rate, t);
      adam_step(result.params.motion, batch.grads.motion, adam_motion,
                config.learning_rate, t);
      epoch_loss += batch.loss;
    }
    result.epoch_losses.push_back(epoch_loss / steps_per_epoch);
  }
  return result;
}

namespace {

json tower_shapes(const Tower& tower) {
  json shapes = json::array();
  for (const auto& layer : tower.layers) {
    shapes.push_back({layer.W.rows(), layer.W.cols()});
  }
  return shapes;
}

void write_tower(std::ostream& out, const Tower& tower) {
  for (const auto& layer : tower.layers) {
    formats::put_f32_row_major(out, layer.W);
    formats::put_f32_row_major(out, layer.b);
  }
}

Tower read_tower(std::istream& in, const json& shapes,
                 const std::filesystem::path& path) {
  Tower tower;
  for (const auto& shape : shapes) {
    if (!shape.is_array() || shape.size() != 2) {
      throw Error(ErrorCode::MalformedRecord,
                  path.string() + ": bad layer shape " + shape.dump());
    }
    const auto rows = shape[0].get<std::uint32_t>();
    const auto cols = shape[1].get<std::uint32_t>();
    AffineLayer layer;
    layer.W = formats::get_f32_row_major(in, rows, cols, path);
    layer.b = formats::get_f32_row_major(in, rows, 1, path).col(0);
    tower.layers.push_back(std::move(layer));
  }
  return tower;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const EncoderParams& params, const json& meta) {
  json header = {{"format_version", 1},
                 {"text_layers", tower_shapes(params.text)},
                 {"motion_layers", tower_shapes(params.motion)},
                 {"meta", meta}};
  const std::string head = header.dump();
  auto out = formats::open_out(path);
  out.write("CKP1", 4);
  formats::put_u32(out, static_cast<std::uint32_t>(head.size()));
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  write_tower(out, params.text);
  write_tower(out, params.motion);
}

EncoderParams load_checkpoint(const std::filesystem::path& path,
                              json* meta_out) {
  auto in = formats::open_in(path);
  formats::check_magic(in, "CKP1", path);
  const std::uint32_t head_len = formats::get_u32(in, path);
  std::string head(head_len, '\0');
  if (!in.read(head.data(), head_len)) {
    throw Error(ErrorCode::MalformedRecord,
                "truncated header in " + path.string());
  }
  json header = json::parse(head, nullptr, false);
  if (header.is_discarded() || !header.is_object() ||
      !header.contains("text_layers") || !header.contains("motion_layers")) {
    throw Error(ErrorCode::MalformedRecord,
                path.string() + ": invalid checkpoint header");
  }
  if (meta_out) {
    *meta_out = header.value("meta", json::object());
  }
  EncoderParams params;
  params.text = read_tower(in, header["text_layers"], path);
  params.motion = read_tower(in, header["motion_layers"], path);
  return params;
}

}  // namespace motext::model
