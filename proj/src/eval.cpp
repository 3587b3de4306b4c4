#include "motext/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include "motext/augment.hpp"
#include "motext/errors.hpp"

namespace motext::eval {

using corpus::DatasetSplit;
using corpus::TextKind;
using model::EncoderParams;

const char* to_string(Direction direction) {
  switch (direction) {
    case Direction::TextToMotion: return "text_to_motion";
    case Direction::MotionToText: return "motion_to_text";
  }
  return "?";
}

Direction parse_direction(const std::string& s) {
  if (s == "text_to_motion") return Direction::TextToMotion;
  if (s == "motion_to_text") return Direction::MotionToText;
  throw Error(ErrorCode::InvalidConfig,
              "direction '" + s + "' is not recognized; use "
              "\"text_to_motion\" or \"motion_to_text\"");
}

void ProtocolConfig::validate() const {
  if (!(threshold > 0.0) || threshold > 1.0 || !std::isfinite(threshold)) {
    throw Error(ErrorCode::InvalidConfig,
                "threshold = " + std::to_string(threshold) +
                    " must lie in (0, 1]");
  }
  if (ks.empty()) {
    throw Error(ErrorCode::InvalidConfig, "ks must not be empty");
  }
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] < 1) {
      throw Error(ErrorCode::InvalidConfig,
                  "k = " + std::to_string(ks[i]) + " must be >= 1");
    }
    if (i > 0 && ks[i] <= ks[i - 1]) {
      throw Error(ErrorCode::InvalidConfig,
                  "ks must be strictly ascending, got " +
                      std::to_string(ks[i - 1]) + " before " +
                      std::to_string(ks[i]));
    }
  }
}

double recall_at_k(const std::vector<int>& ranks, int k) {
  if (k < 1) {
    throw Error(ErrorCode::InvalidConfig,
                "k = " + std::to_string(k) + " must be >= 1");
  }
  if (ranks.empty()) {
    throw Error(ErrorCode::EmptyRanks, "no ranks to aggregate");
  }
  const auto hits = std::count_if(ranks.begin(), ranks.end(),
                                  [k](int r) { return r <= k; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double median_rank(const std::vector<int>& ranks) {
  if (ranks.empty()) {
    throw Error(ErrorCode::EmptyRanks, "no ranks to aggregate");
  }
  std::vector<int> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  if (n % 2 == 1) return static_cast<double>(sorted[n / 2]);
  return (static_cast<double>(sorted[n / 2 - 1]) +
          static_cast<double>(sorted[n / 2])) /
         2.0;
}

int rank_with_threshold(const Eigen::VectorXd& scores,
                        const Eigen::VectorXd& text_sims,
                        Eigen::Index paired_index, double threshold) {
  const Eigen::Index N = scores.size();
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
  int best = static_cast<int>(N) + 1;
  for (Eigen::Index j = 0; j < N; ++j) {
    if (j != paired_index && !(text_sims(j) > threshold)) continue;
    int rank = 1;
    for (Eigen::Index l = 0; l < N; ++l) {
      if (scores(l) > scores(j) || (scores(l) == scores(j) && l < j)) ++rank;
    }
    best = std::min(best, rank);
  }
  return best;
}

namespace {

const Eigen::VectorXd& first_gt_embedding(const corpus::MotionSample& sample) {
  for (const auto& var : sample.variants) {
    if (var.kind == TextKind::GroundTruth && var.sentence_embedding) {
      return *var.sentence_embedding;
    }
  }
  throw Error(ErrorCode::MissingEmbedding,
              "motion '" + sample.motion_id +
                  "' has no ground-truth sentence embedding");
}

Eigen::VectorXd normalized(const Eigen::VectorXd& v) {
  const double n = v.norm();
  if (n < 1e-12) {
    throw Error(ErrorCode::ZeroNormMean, "cannot normalize a zero vector");
  }
  return v / n;
}

}  // namespace

RetrievalReport evaluate_retrieval(const EncoderParams& params,
                                   const DatasetSplit& test,
                                   const ProtocolConfig& protocol) {
  protocol.validate();
  const Eigen::Index N = static_cast<Eigen::Index>(test.samples.size());
  if (N < 1) {
    throw Error(ErrorCode::EmptyGallery,
                "test split '" + test.dataset_id + "' is empty");
  }

  std::vector<Eigen::VectorXd> raw_text(N);
  Eigen::MatrixXd Zt, Zm;
  for (Eigen::Index i = 0; i < N; ++i) {
    const Eigen::VectorXd& raw = first_gt_embedding(test.samples[i]);
    raw_text[i] = normalized(raw);
    const Eigen::VectorXd zt = model::encode_text(params, raw);
    const Eigen::VectorXd zm =
        model::encode_motion(params, test.samples[i].motion_features);
    if (Zt.size() == 0) {
      Zt.resize(N, zt.size());
      Zm.resize(N, zm.size());
    }
    Zt.row(i) = zt.transpose();
    Zm.row(i) = zm.transpose();
  }

  RetrievalReport report;
  report.n_queries = static_cast<int>(N);
  report.ranks.reserve(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const Eigen::VectorXd scores =
        protocol.direction == Direction::TextToMotion
            ? Eigen::VectorXd(Zm * Zt.row(i).transpose())
            : Eigen::VectorXd(Zt * Zm.row(i).transpose());
    Eigen::VectorXd sims(N);
    for (Eigen::Index j = 0; j < N; ++j) {
      sims(j) = raw_text[i].dot(raw_text[j]);
    }
    report.ranks.push_back(
        rank_with_threshold(scores, sims, i, protocol.threshold));
  }
  for (int k : protocol.ks) {
    report.recall[k] = recall_at_k(report.ranks, k);
  }
  report.med_rank = median_rank(report.ranks);
  return report;
}

ActionEvalSet build_action_eval(const DatasetSplit& test) {
  std::map<std::string, std::vector<Eigen::VectorXd>> by_label;
  for (const auto& sample : test.samples) {
    for (const auto& var : sample.variants) {
      if (var.kind == TextKind::ActionStyle && var.sentence_embedding) {
        by_label[var.text].push_back(*var.sentence_embedding);
      }
    }
  }
  if (by_label.empty()) {
    throw Error(ErrorCode::NoTestInstances,
                "split '" + test.dataset_id + "' has no action annotations");
  }

  ActionEvalSet set;
  std::unordered_map<std::string, int> id_of;
  for (auto& [label, embs] : by_label) {
    ActionClass cls;
    cls.class_id = static_cast<int>(set.classes.size());
    cls.label = label;
    cls.label_embedding = augment::average_sentence_embeddings(embs);
    id_of[label] = cls.class_id;
    set.classes.push_back(std::move(cls));
  }
  for (const auto& sample : test.samples) {
    ActionInstance inst;
    inst.motion_id = sample.motion_id;
    for (const auto& var : sample.variants) {
      if (var.kind != TextKind::ActionStyle || !var.sentence_embedding) {
        continue;
      }
      const int id = id_of.at(var.text);
      if (std::find(inst.class_ids.begin(), inst.class_ids.end(), id) ==
          inst.class_ids.end()) {
        inst.class_ids.push_back(id);
      }
    }
    if (inst.class_ids.empty()) continue;
    inst.motion_features = sample.motion_features;
    set.instances.push_back(std::move(inst));
  }
  return set;
}

std::vector<int> zero_shot_classify(const EncoderParams& params,
                                    const Eigen::MatrixXd& motion_features,
                                    const std::vector<ActionClass>& classes) {
  if (classes.empty()) {
    throw Error(ErrorCode::EmptyGallery, "no action classes");
  }
  const Eigen::VectorXd zm = model::encode_motion(params, motion_features);
  std::vector<std::pair<double, int>> scored;
  scored.reserve(classes.size());
  for (const auto& cls : classes) {
    const Eigen::VectorXd ze = model::encode_text(params, cls.label_embedding);
    scored.emplace_back(zm.dot(ze), cls.class_id);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<int> ranking;
  ranking.reserve(scored.size());
  for (const auto& [score, id] : scored) ranking.push_back(id);
  return ranking;
}

double top1_class_balanced(const std::vector<std::vector<int>>& gt_classes,
                           const std::vector<int>& top1,
                           const std::optional<std::vector<int>>& classes) {
  if (gt_classes.empty() || gt_classes.size() != top1.size()) {
    throw Error(ErrorCode::NoTestInstances,
                "need matching non-empty label and prediction lists, got " +
                    std::to_string(gt_classes.size()) + "/" +
                    std::to_string(top1.size()));
  }
  std::map<int, std::pair<int, int>> tally;  // class -> (correct, total)
  for (std::size_t i = 0; i < gt_classes.size(); ++i) {
    const bool correct =
        std::find(gt_classes[i].begin(), gt_classes[i].end(), top1[i]) !=
        gt_classes[i].end();
    for (int c : gt_classes[i]) {
      auto& [hit, total] = tally[c];
      if (correct) ++hit;
      ++total;
    }
  }
  std::vector<int> eval_classes;
  if (classes) {
    eval_classes = *classes;
    for (int c : eval_classes) {
      if (!tally.count(c)) {
        throw Error(ErrorCode::NoTestInstances,
                    "class " + std::to_string(c) + " has no test instances");
      }
    }
  } else {
    for (const auto& [c, counts] : tally) eval_classes.push_back(c);
  }
  if (eval_classes.empty()) {
    throw Error(ErrorCode::NoTestInstances, "no classes to average");
  }
  double sum = 0.0;
  for (int c : eval_classes) {
    const auto& [hit, total] = tally.at(c);
    sum += static_cast<double>(hit) / static_cast<double>(total);
  }
  return 100.0 * sum / static_cast<double>(eval_classes.size());
}

ConfusionResult confusion_and_per_class(
    const std::vector<std::vector<int>>& gt_classes,
    const std::vector<int>& top1, const std::vector<int>& class_ids) {
  if (gt_classes.size() != top1.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "got " + std::to_string(gt_classes.size()) + " label sets for " +
                    std::to_string(top1.size()) + " predictions");
  }
  std::unordered_map<int, int> index_of;
  for (std::size_t i = 0; i < class_ids.size(); ++i) {
    index_of[class_ids[i]] = static_cast<int>(i);
  }
  const auto index = [&](int c) {
    auto it = index_of.find(c);
    if (it == index_of.end()) {
      throw Error(ErrorCode::MalformedRecord,
                  "class id " + std::to_string(c) + " is not in the gallery");
    }
    return it->second;
  };

  ConfusionResult result;
  result.confusion = Eigen::MatrixXi::Zero(
      static_cast<Eigen::Index>(class_ids.size()),
      static_cast<Eigen::Index>(class_ids.size()));
  std::map<int, std::pair<int, int>> tally;
  for (std::size_t i = 0; i < gt_classes.size(); ++i) {
    if (gt_classes[i].empty()) {
      throw Error(ErrorCode::MalformedRecord,
                  "instance " + std::to_string(i) + " has no labels");
    }
    result.confusion(index(gt_classes[i][0]), index(top1[i])) += 1;
    const bool correct =
        std::find(gt_classes[i].begin(), gt_classes[i].end(), top1[i]) !=
        gt_classes[i].end();
    for (int c : gt_classes[i]) {
      index(c);
      auto& [hit, total] = tally[c];
      if (correct) ++hit;
      ++total;
    }
  }
  for (const auto& [c, counts] : tally) {
    result.class_freq[c] = counts.second;
    result.per_class_top1[c] =
        100.0 * static_cast<double>(counts.first) /
        static_cast<double>(counts.second);
  }
  return result;
}

ActionReport evaluate_actions(const EncoderParams& params,
                              const ActionEvalSet& set,
                              const std::vector<int>& ks) {
  if (set.classes.empty()) {
    throw Error(ErrorCode::EmptyGallery, "no action classes");
  }
  if (set.instances.empty()) {
    throw Error(ErrorCode::NoTestInstances, "no action-labeled instances");
  }

  std::vector<std::vector<int>> gt;
  std::vector<int> top1;
  std::vector<std::vector<int>> rankings;
  gt.reserve(set.instances.size());
  for (const auto& inst : set.instances) {
    rankings.push_back(
        zero_shot_classify(params, inst.motion_features, set.classes));
    top1.push_back(rankings.back().front());
    gt.push_back(inst.class_ids);
  }

  ActionReport report;
  report.n_instances = static_cast<int>(set.instances.size());
  for (int k : ks) {
    if (k < 1) {
      throw Error(ErrorCode::InvalidConfig,
                  "k = " + std::to_string(k) + " must be >= 1");
    }
    int hits = 0;
    for (std::size_t i = 0; i < rankings.size(); ++i) {
      const auto end = rankings[i].begin() +
                       std::min<std::size_t>(k, rankings[i].size());
      const bool hit = std::any_of(gt[i].begin(), gt[i].end(), [&](int c) {
        return std::find(rankings[i].begin(), end, c) != end;
      });
      if (hit) ++hits;
    }
    report.top_k[k] =
        100.0 * static_cast<double>(hits) / static_cast<double>(rankings.size());
  }
  {
    int hits = 0;
    for (std::size_t i = 0; i < top1.size(); ++i) {
      if (std::find(gt[i].begin(), gt[i].end(), top1[i]) != gt[i].end()) {
        ++hits;
      }
    }
    report.top1 =
        100.0 * static_cast<double>(hits) / static_cast<double>(top1.size());
  }
  report.top1_cb = top1_class_balanced(gt, top1);

  std::vector<int> class_ids;
  class_ids.reserve(set.classes.size());
  for (const auto& cls : set.classes) class_ids.push_back(cls.class_id);
  ConfusionResult confusion = confusion_and_per_class(gt, top1, class_ids);
  report.per_class_top1 = std::move(confusion.per_class_top1);
  report.class_freq = std::move(confusion.class_freq);
  report.confusion = std::move(confusion.confusion);
  return report;
}

}  // namespace motext::eval
