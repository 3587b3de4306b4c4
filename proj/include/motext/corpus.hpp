#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace motext::corpus {

enum class TextKind { GroundTruth, Paraphrase, ActionStyle };
enum class SplitRole { Train, Val, Test };

const char* to_string(TextKind kind);       // "gt" | "paraphrase" | "action"
const char* to_string(SplitRole role);      // "train" | "val" | "test"
TextKind parse_text_kind(const std::string& s);
SplitRole parse_split_role(const std::string& s);

/// One textual description of a motion, together with the precomputed
/// feature forms it may carry. Motion/text encoders are external; this
/// library only ingests their outputs.
struct TextVariant {
  std::string text;
  TextKind kind = TextKind::GroundTruth;
  std::optional<Eigen::MatrixXd> token_features;       // tokens x D
  std::optional<Eigen::VectorXd> sentence_embedding;   // D
};

struct MotionSample {
  std::string motion_id;
  std::string dataset_id;
  std::string source_sequence_id;
  double start_sec = 0.0;
  double end_sec = 0.0;                 // half-open span [start_sec, end_sec)
  Eigen::MatrixXd motion_features;      // frames x M, frames >= 1
  std::vector<TextVariant> variants;    // non-empty, >= 1 GroundTruth

  /// Same source sequence and non-empty intersection of half-open spans.
  bool overlaps(const MotionSample& other) const {
    return source_sequence_id == other.source_sequence_id &&
           start_sec < other.end_sec && other.start_sec < end_sec;
  }
};

struct DatasetSplit {
  std::string dataset_id;
  SplitRole role = SplitRole::Train;
  std::vector<MotionSample> samples;
};

struct CombinedTrainSet {
  std::vector<DatasetSplit> splits;      // all role Train
  std::vector<double> dataset_weights;   // per split, positive, sums to 1
};

/// Variant reference used to key EMB1/MBF1 rows: "<motion_id>#<ordinal>".
std::string variant_ref(const std::string& motion_id, int ordinal);

/// Loads every dataset entry in a JSON manifest into fully materialized
/// splits. Validates ids, spans, kinds and feature dimensions; throws
/// Error naming the offending record on any violation.
std::vector<DatasetSplit> load_corpus(const std::filesystem::path& manifest_path);

/// Writes splits back out in the canonical layout (one annotations JSONL,
/// motion MBF1, text EMB1 and optional token MBF1 per split) plus the
/// manifest itself. load -> save -> load is an identity, and saving a
/// just-loaded corpus reproduces the files byte for byte.
void save_corpus(const std::filesystem::path& manifest_path,
                 const std::vector<DatasetSplit>& splits);

/// Removes every train sample that overlaps (same source sequence, spans
/// intersect) any sample of any eval split. Input is untouched.
DatasetSplit filter_overlaps(const DatasetSplit& train,
                             const std::vector<DatasetSplit>& eval_splits);

/// Builds a train set with per-dataset sampling weights. Default weights
/// are uniform per dataset regardless of size; explicit weights (one per
/// split, in order) are normalized to sum to 1.
CombinedTrainSet combine(const std::vector<DatasetSplit>& splits,
                         const std::optional<std::vector<double>>& weights = {});

struct DatasetStats {
  std::string dataset_id;
  std::map<SplitRole, int> sample_counts;
  double mean_gt_words = 0.0;           // whitespace tokenization
  std::map<TextKind, int> variant_counts;
};

std::vector<DatasetStats> corpus_stats(const std::vector<DatasetSplit>& splits);

}  // namespace motext::corpus
