#include "motext/synth.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>
#include <string>

#include "motext/errors.hpp"
#include "motext/rng.hpp"

namespace motext::synth {

using corpus::DatasetSplit;
using corpus::MotionSample;
using corpus::SplitRole;
using corpus::TextKind;
using corpus::TextVariant;
using nlohmann::json;

void SynthConfig::validate() const {
  const auto fail = [](const std::string& msg) {
    throw Error(ErrorCode::InvalidConfig, msg);
  };
  if (n_clusters < 2) fail("n_clusters = " + std::to_string(n_clusters) + " must be >= 2");
  if (samples_per_cluster < 1) fail("samples_per_cluster must be >= 1");
  if (val_per_cluster < 0) fail("val_per_cluster must be >= 0");
  if (test_per_cluster < 0) fail("test_per_cluster must be >= 0");
  if (dim < 2) fail("dim = " + std::to_string(dim) + " must be >= 2");
  if (text_noise < 0.0) fail("text_noise must be >= 0");
  if (motion_noise < 0.0) fail("motion_noise must be >= 0");
  if (domain_shift < 0.0) fail("domain_shift must be >= 0");
  if (n_paraphrases < 0) fail("n_paraphrases must be >= 0");
  if (action_style_offset < 0.0) fail("action_style_offset must be >= 0");
  if (n_datasets < 1 || n_datasets > 26) fail("n_datasets must be in [1, 26]");
  if (n_tokens < 1) fail("n_tokens must be >= 1");
  if (token_style_noise < 0.0) fail("token_style_noise must be >= 0");
  if (token_noise < 0.0) fail("token_noise must be >= 0");
  if (token_frame_offset < 0.0) fail("token_frame_offset must be >= 0");
  if (token_ambiguity < 0.0) fail("token_ambiguity must be >= 0");
  if (frames_min < 1) fail("frames_min must be >= 1");
  if (frames_max < frames_min) fail("frames_max must be >= frames_min");
  if (gt_words < 1) fail("gt_words must be >= 1");
  if (paraphrase_words < 1) fail("paraphrase_words must be >= 1");
  if (action_words < 1) fail("action_words must be >= 1");
  if (overlap_fraction < 0.0 || overlap_fraction > 1.0) {
    fail("overlap_fraction must be in [0, 1]");
  }
}

namespace {

const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys = {
      "n_clusters",     "samples_per_cluster", "val_per_cluster",
      "test_per_cluster", "dim",               "text_noise",
      "motion_noise",   "domain_shift",        "n_paraphrases",
      "action_style_offset", "n_datasets",     "n_tokens",
      "token_style_noise", "token_noise",      "token_frame_offset",
      "token_ambiguity", "frames_min",
      "frames_max",     "gt_words",            "paraphrase_words",
      "action_words",   "overlap_fraction",    "seed"};
  return keys;
}

}  // namespace

SynthConfig parse_synth_config(const json& j) {
  if (!j.is_object()) {
    throw Error(ErrorCode::InvalidConfig, "synth config must be a JSON object");
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!config_keys().count(it.key())) {
      throw Error(ErrorCode::InvalidConfig,
                  "unknown synth key '" + it.key() + "'");
    }
  }
  SynthConfig c;
  try {
    if (j.contains("n_clusters")) c.n_clusters = j["n_clusters"].get<int>();
    if (j.contains("samples_per_cluster")) c.samples_per_cluster = j["samples_per_cluster"].get<int>();
    if (j.contains("val_per_cluster")) c.val_per_cluster = j["val_per_cluster"].get<int>();
    if (j.contains("test_per_cluster")) c.test_per_cluster = j["test_per_cluster"].get<int>();
    if (j.contains("dim")) c.dim = j["dim"].get<int>();
    if (j.contains("text_noise")) c.text_noise = j["text_noise"].get<double>();
    if (j.contains("motion_noise")) c.motion_noise = j["motion_noise"].get<double>();
    if (j.contains("domain_shift")) c.domain_shift = j["domain_shift"].get<double>();
    if (j.contains("n_paraphrases")) c.n_paraphrases = j["n_paraphrases"].get<int>();
    if (j.contains("action_style_offset")) c.action_style_offset = j["action_style_offset"].get<double>();
    if (j.contains("n_datasets")) c.n_datasets = j["n_datasets"].get<int>();
    if (j.contains("n_tokens")) c.n_tokens = j["n_tokens"].get<int>();
    if (j.contains("token_style_noise")) c.token_style_noise = j["token_style_noise"].get<double>();
    if (j.contains("token_noise")) c.token_noise = j["token_noise"].get<double>();
    if (j.contains("token_frame_offset")) c.token_frame_offset = j["token_frame_offset"].get<double>();
    if (j.contains("token_ambiguity")) c.token_ambiguity = j["token_ambiguity"].get<double>();
    if (j.contains("frames_min")) c.frames_min = j["frames_min"].get<int>();
    if (j.contains("frames_max")) c.frames_max = j["frames_max"].get<int>();
    if (j.contains("gt_words")) c.gt_words = j["gt_words"].get<int>();
    if (j.contains("paraphrase_words")) c.paraphrase_words = j["paraphrase_words"].get<int>();
    if (j.contains("action_words")) c.action_words = j["action_words"].get<int>();
    if (j.contains("overlap_fraction")) c.overlap_fraction = j["overlap_fraction"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("synth: ") + e.what());
  }
  c.validate();
  return c;
}

json synth_config_to_json(const SynthConfig& c) {
  return json{{"n_clusters", c.n_clusters},
              {"samples_per_cluster", c.samples_per_cluster},
              {"val_per_cluster", c.val_per_cluster},
              {"test_per_cluster", c.test_per_cluster},
              {"dim", c.dim},
              {"text_noise", c.text_noise},
              {"motion_noise", c.motion_noise},
              {"domain_shift", c.domain_shift},
              {"n_paraphrases", c.n_paraphrases},
              {"action_style_offset", c.action_style_offset},
              {"n_datasets", c.n_datasets},
              {"n_tokens", c.n_tokens},
              {"token_style_noise", c.token_style_noise},
              {"token_noise", c.token_noise},
              {"token_frame_offset", c.token_frame_offset},
              {"token_ambiguity", c.token_ambiguity},
              {"frames_min", c.frames_min},
              {"frames_max", c.frames_max},
              {"gt_words", c.gt_words},
              {"paraphrase_words", c.paraphrase_words},
              {"action_words", c.action_words},
              {"overlap_fraction", c.overlap_fraction},
              {"seed", c.seed}};
}

namespace {

struct VerbForms {
  const char* base;
  const char* third;
  const char* gerund;
};

constexpr VerbForms kVerbs[] = {
    {"walk", "walks", "walking"},       {"run", "runs", "running"},
    {"jump", "jumps", "jumping"},       {"kick", "kicks", "kicking"},
    {"wave", "waves", "waving"},        {"sit", "sits", "sitting"},
    {"stand", "stands", "standing"},    {"turn", "turns", "turning"},
    {"crawl", "crawls", "crawling"},    {"climb", "climbs", "climbing"},
    {"dance", "dances", "dancing"},     {"punch", "punches", "punching"},
    {"squat", "squats", "squatting"},   {"stretch", "stretches", "stretching"},
    {"throw", "throws", "throwing"},    {"catch", "catches", "catching"}};
constexpr int kNumVerbs = 16;

constexpr const char* kStyleWords[] = {"fast", "slow", "twice", "around"};

constexpr const char* kSubjects[] = {"a person",   "the person", "a man",
                                     "a woman",    "the figure", "someone"};

constexpr const char* kParSubjects[] = {"the individual", "the subject",
                                        "a figure", "the performer"};

constexpr const char* kTails[] = {
    "across the room",     "in place",        "with both arms",
    "very slowly",         "then stops",      "before turning around",
    "with small steps",    "for a short while", "near the wall",
    "to the left",         "to the right",    "once more"};
constexpr int kNumTails = 12;

void append_words(std::vector<std::string>& words, const std::string& phrase,
                  int limit) {
  std::istringstream iss(phrase);
  std::string w;
  while (static_cast<int>(words.size()) < limit && iss >> w) {
    words.push_back(w);
  }
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

// Fills up to the exact target length with random tail phrases.
std::string fill_to_length(std::vector<std::string> words, int target,
                           Rng& rng) {
  while (static_cast<int>(words.size()) < target) {
    append_words(words, kTails[rng.uniform_int(kNumTails)], target);
  }
  return join(words);
}

std::string action_label(int cluster) {
  std::string label = kVerbs[cluster % kNumVerbs].base;
  label[0] = static_cast<char>(std::toupper(label[0]));
  if (cluster >= kNumVerbs) {
    label += ' ';
    label += kStyleWords[(cluster / kNumVerbs - 1) % 4];
  }
  return label;
}

std::string gt_text(int cluster, bool concise, int gt_words, int action_words,
                    Rng& rng) {
  std::vector<std::string> words;
  if (concise) {
    append_words(words, kVerbs[cluster % kNumVerbs].third, action_words);
    return fill_to_length(std::move(words), action_words, rng);
  }
  append_words(words, kSubjects[rng.uniform_int(6)], gt_words);
  append_words(words, kVerbs[cluster % kNumVerbs].third, gt_words);
  return fill_to_length(std::move(words), gt_words, rng);
}

std::string paraphrase_text(int cluster, int target, Rng& rng) {
  std::vector<std::string> words;
  append_words(words, kParSubjects[rng.uniform_int(4)], target);
  append_words(words, "is", target);
  append_words(words, kVerbs[cluster % kNumVerbs].gerund, target);
  return fill_to_length(std::move(words), target, rng);
}

Eigen::VectorXd gaussian_vector(int dim, Rng& rng) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = rng.gaussian();
  return v;
}

Eigen::VectorXd random_unit(int dim, Rng& rng) {
  Eigen::VectorXd v = gaussian_vector(dim, rng);
  const double norm = v.norm();
  return norm < 1e-12 ? Eigen::VectorXd::Unit(dim, 0) : Eigen::VectorXd(v / norm);
}

Eigen::MatrixXd token_features(const Eigen::VectorXd& base,
                               const Eigen::VectorXd& frame_shift,
                               const SynthConfig& c, Rng& rng) {
  // The shared frame shift and the per-variant style vector survive pooling
  // over tokens; the per-token noise mostly cancels.
  const Eigen::VectorXd style =
      c.token_style_noise * gaussian_vector(c.dim, rng);
  Eigen::MatrixXd tokens(c.n_tokens, c.dim);
  for (int t = 0; t < c.n_tokens; ++t) {
    tokens.row(t) = (base + frame_shift + style +
                     c.token_noise * gaussian_vector(c.dim, rng))
                        .transpose();
  }
  return tokens;
}

}  // namespace

std::vector<DatasetSplit> generate_corpus(const SynthConfig& config) {
  config.validate();
  Rng rng(config.seed);

  std::vector<Eigen::VectorXd> text_centers, motion_centers;
  for (int k = 0; k < config.n_clusters; ++k) {
    text_centers.push_back(random_unit(config.dim, rng));
  }
  for (int k = 0; k < config.n_clusters; ++k) {
    motion_centers.push_back(random_unit(config.dim, rng));
  }
  // One shared direction: action-style variants sit along it, and shifted
  // datasets move their text features along it.
  const Eigen::VectorXd u = random_unit(config.dim, rng);
  // Token features live in their own slightly offset frame.
  const Eigen::VectorXd token_frame =
      config.token_frame_offset * random_unit(config.dim, rng);
  // Pooled tokens also pick up vocabulary shared with other clusters'
  // descriptions, so each variant leans toward one other cluster.
  auto token_bias = [&](int own_cluster) {
    Eigen::VectorXd bias = token_frame;
    if (config.n_clusters > 1 && config.token_ambiguity > 0.0) {
      std::uint64_t other = rng.uniform_int(
          static_cast<std::uint64_t>(config.n_clusters - 1));
      if (static_cast<int>(other) >= own_cluster) ++other;
      bias += config.token_ambiguity *
              text_centers[static_cast<std::size_t>(other)];
    }
    return bias;
  };

  std::vector<DatasetSplit> splits;
  for (int d = 0; d < config.n_datasets; ++d) {
    const std::string dataset_id = std::string("ds") + char('A' + d);
    const bool shifted = d > 0;
    const Eigen::VectorXd shift =
        shifted ? Eigen::VectorXd(config.domain_shift * u)
                : Eigen::VectorXd(Eigen::VectorXd::Zero(config.dim));

    const SplitRole roles[] = {SplitRole::Train, SplitRole::Val,
                               SplitRole::Test};
    const int counts[] = {config.samples_per_cluster, config.val_per_cluster,
                          config.test_per_cluster};
    for (int r = 0; r < 3; ++r) {
      DatasetSplit split;
      split.dataset_id = dataset_id;
      split.role = roles[r];
      for (int k = 0; k < config.n_clusters; ++k) {
        for (int i = 0; i < counts[r]; ++i) {
          MotionSample sample;
          sample.motion_id = dataset_id + "-" +
                             corpus::to_string(roles[r]) + "-c" +
                             std::to_string(k) + "-" + std::to_string(i);
          sample.dataset_id = dataset_id;
          sample.source_sequence_id = "src-" + sample.motion_id;
          sample.start_sec = 0.0;
          sample.end_sec = 5.0;

          const int frames =
              config.frames_min +
              static_cast<int>(rng.uniform_int(
                  static_cast<std::uint64_t>(config.frames_max -
                                             config.frames_min + 1)));
          sample.motion_features.resize(frames, config.dim);
          for (int f = 0; f < frames; ++f) {
            sample.motion_features.row(f) =
                (motion_centers[k] +
                 config.motion_noise * gaussian_vector(config.dim, rng))
                    .transpose();
          }

          TextVariant gt;
          gt.kind = TextKind::GroundTruth;
          gt.text = gt_text(k, shifted, config.gt_words, config.action_words,
                            rng);
          const Eigen::VectorXd gt_core =
              text_centers[k] + shift +
              config.text_noise * gaussian_vector(config.dim, rng);
          gt.sentence_embedding = gt_core;
          gt.token_features =
              token_features(gt_core, token_bias(k), config, rng);
          sample.variants.push_back(std::move(gt));

          for (int p = 0; p < config.n_paraphrases; ++p) {
            TextVariant par;
            par.kind = TextKind::Paraphrase;
            par.text = paraphrase_text(k, config.paraphrase_words, rng);
            const Eigen::VectorXd core =
                gt_core +
                config.text_noise * gaussian_vector(config.dim, rng);
            par.sentence_embedding = core;
            par.token_features =
                token_features(core, token_bias(k), config, rng);
            sample.variants.push_back(std::move(par));
          }

          // Shifted datasets are label-style corpora: their train and val
          // samples carry no action variants (their ground truth already is
          // the concise form); test samples keep them as class annotations.
          const bool with_action = !shifted || roles[r] == SplitRole::Test;
          if (with_action) {
            TextVariant act;
            act.kind = TextKind::ActionStyle;
            act.text = action_label(k);
            const Eigen::VectorXd core =
                text_centers[k] + shift + config.action_style_offset * u;
            act.sentence_embedding = core;
            act.token_features =
                token_features(core, token_bias(k), config, rng);
            sample.variants.push_back(std::move(act));
          }

          split.samples.push_back(std::move(sample));
        }
      }
      splits.push_back(std::move(split));
    }

    // Re-span some train samples so they collide with test spans and
    // filter_overlaps has something to remove.
    DatasetSplit& train = splits[splits.size() - 3];
    const DatasetSplit& test = splits[splits.size() - 1];
    if (config.overlap_fraction > 0.0 && !test.samples.empty()) {
      const auto n_overlap = static_cast<std::size_t>(
          std::floor(config.overlap_fraction *
                     static_cast<double>(train.samples.size())));
      for (std::size_t j = 0; j < n_overlap; ++j) {
        const MotionSample& target = test.samples[j % test.samples.size()];
        train.samples[j].source_sequence_id = target.source_sequence_id;
        train.samples[j].start_sec = target.start_sec + 2.0;
        train.samples[j].end_sec = target.end_sec + 2.0;
      }
    }
  }
  return splits;
}

int oracle_rank(const Eigen::VectorXd& query,
                const std::vector<Eigen::VectorXd>& gallery,
                const Eigen::VectorXd& text_sims, Eigen::Index paired_index,
                double threshold) {
  const auto N = static_cast<Eigen::Index>(gallery.size());
  if (N < 1) {
    throw Error(ErrorCode::EmptyGallery, "gallery is empty");
  }
  if (text_sims.size() != N) {
    throw Error(ErrorCode::DimensionMismatch,
                "got " + std::to_string(text_sims.size()) +
                    " text similarities for " + std::to_string(N) +
                    " gallery items");
  }
  if (paired_index < 0 || paired_index >= N) {
    throw Error(ErrorCode::PairMissing,
                "paired index " + std::to_string(paired_index) +
                    " outside gallery of size " + std::to_string(N));
  }

  std::vector<double> scores(N);
  for (Eigen::Index j = 0; j < N; ++j) scores[j] = query.dot(gallery[j]);

  // Full ordering by (score desc, index asc), then scan for the first
  // candidate position.
  std::vector<Eigen::Index> order(N);
  for (Eigen::Index j = 0; j < N; ++j) order[j] = j;
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  for (Eigen::Index pos = 0; pos < N; ++pos) {
    const Eigen::Index j = order[pos];
    if (j == paired_index || text_sims(j) > threshold) {
      return static_cast<int>(pos) + 1;
    }
  }
  return static_cast<int>(N) + 1;  // unreachable: the paired item always qualifies
}

double oracle_loss(const Eigen::MatrixXd& S, double temperature, double alpha,
                   double beta, model::LossKind kind) {
  const Eigen::Index N = S.rows();
  const Eigen::MatrixXd A = S / temperature;
  double loss = 0.0;
  if (kind == model::LossKind::InfoNce) {
    for (Eigen::Index i = 0; i < N; ++i) {
      double row_denom = 0.0, col_denom = 0.0;
      for (Eigen::Index j = 0; j < N; ++j) {
        row_denom += std::exp(A(i, j));
        col_denom += std::exp(A(j, i));
      }
      loss += -std::log(std::exp(A(i, i)) / row_denom);
      loss += -std::log(std::exp(A(i, i)) / col_denom);
    }
    return loss / (2.0 * static_cast<double>(N));
  }

  for (Eigen::Index i = 0; i < N; ++i) {
    double denom = alpha * std::exp(A(i, i));
    double wsum = 0.0;
    for (Eigen::Index j = 0; j < N; ++j) {
      if (j != i) wsum += std::exp(beta * A(i, j));
    }
    for (Eigen::Index j = 0; j < N; ++j) {
      if (j != i) {
        const double w =
            static_cast<double>(N - 1) * std::exp(beta * A(i, j)) / wsum;
        denom += w * std::exp(A(i, j));
      }
    }
    loss += -A(i, i) + std::log(denom);
  }
  for (Eigen::Index j = 0; j < N; ++j) {
    double denom = alpha * std::exp(A(j, j));
    double wsum = 0.0;
    for (Eigen::Index i = 0; i < N; ++i) {
      if (i != j) wsum += std::exp(beta * A(i, j));
    }
    for (Eigen::Index i = 0; i < N; ++i) {
      if (i != j) {
        const double w =
            static_cast<double>(N - 1) * std::exp(beta * A(i, j)) / wsum;
        denom += w * std::exp(A(i, j));
      }
    }
    loss += -A(j, j) + std::log(denom);
  }
  return loss / (2.0 * static_cast<double>(N));
}

}  // namespace motext::synth
