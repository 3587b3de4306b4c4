#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "motext/corpus.hpp"
#include "motext/model.hpp"

namespace motext::eval {

enum class Direction { TextToMotion, MotionToText };

const char* to_string(Direction direction);
Direction parse_direction(const std::string& s);

struct ProtocolConfig {
  double threshold = 0.95;       // text-similarity cutoff, in (0, 1]
  std::vector<int> ks = {1, 3, 5, 10};  // positive, strictly ascending
  Direction direction = Direction::TextToMotion;

  void validate() const;
};

// Percentage of ranks <= k.
double recall_at_k(const std::vector<int>& ranks, int k);
// Middle of the sorted ranks; mean of the two middles for even counts.
double median_rank(const std::vector<int>& ranks);

// Rank of the best-placed "similar" gallery item. The similar set is
// {j : text_sims[j] > threshold} plus the paired item itself. Items are
// ordered by descending score; equal scores break ties by ascending gallery
// index. Ranks are 1-based.
int rank_with_threshold(const Eigen::VectorXd& scores,
                        const Eigen::VectorXd& text_sims,
                        Eigen::Index paired_index, double threshold);

struct RetrievalReport {
  int n_queries = 0;
  std::vector<int> ranks;
  std::map<int, double> recall;  // k -> percent
  double med_rank = 0.0;
};

// Retrieval over one test split. For TextToMotion the queries are the first
// ground-truth sentence of each sample and the gallery holds every sample's
// motion; MotionToText swaps the roles. Text similarities for the threshold
// protocol always compare the raw ground-truth sentence embeddings, not the
// tower outputs.
RetrievalReport evaluate_retrieval(const model::EncoderParams& params,
                                   const corpus::DatasetSplit& test,
                                   const ProtocolConfig& protocol);

struct ActionClass {
  int class_id = 0;
  std::string label;
  Eigen::VectorXd label_embedding;  // raw sentence embedding of the label
};

struct ActionInstance {
  std::string motion_id;
  Eigen::MatrixXd motion_features;
  std::vector<int> class_ids;  // all labels of the instance, first = canonical
};

struct ActionEvalSet {
  std::vector<ActionClass> classes;
  std::vector<ActionInstance> instances;
};

// Classes come from the distinct action-style annotation texts of the split
// (sorted, so ids are stable); instances are the samples carrying at least
// one action annotation.
ActionEvalSet build_action_eval(const corpus::DatasetSplit& test);

// All class ids ordered by descending cosine between the encoded motion and
// each encoded label; equal scores break ties by ascending class id.
std::vector<int> zero_shot_classify(const model::EncoderParams& params,
                                    const Eigen::MatrixXd& motion_features,
                                    const std::vector<ActionClass>& classes);

// Unweighted mean over classes of the per-class top-1 accuracy, where an
// instance counts for every class it is labeled with and is correct when
// its prediction matches any of its labels. With an explicit class list,
// every listed class must have at least one instance.
double top1_class_balanced(
    const std::vector<std::vector<int>>& gt_classes,
    const std::vector<int>& top1,
    const std::optional<std::vector<int>>& classes = std::nullopt);

struct ConfusionResult {
  Eigen::MatrixXi confusion;  // row: canonical (first-listed) label, col: prediction
  std::map<int, double> per_class_top1;
  std::map<int, int> class_freq;  // instances labeled with the class
};

ConfusionResult confusion_and_per_class(
    const std::vector<std::vector<int>>& gt_classes,
    const std::vector<int>& top1, const std::vector<int>& class_ids);

struct ActionReport {
  int n_instances = 0;
  std::map<int, double> top_k;  // k -> percent, any label in the top k
  double top1 = 0.0;
  double top1_cb = 0.0;  // class-balanced, classes with test instances only
  std::map<int, double> per_class_top1;
  std::map<int, int> class_freq;
  Eigen::MatrixXi confusion;
};

ActionReport evaluate_actions(const model::EncoderParams& params,
                              const ActionEvalSet& set,
                              const std::vector<int>& ks);

}  // namespace motext::eval
