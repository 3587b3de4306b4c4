#include "motext/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "motext/errors.hpp"
#include "motext/formats.hpp"

#include "json.hpp"

namespace motext::corpus {

using nlohmann::json;
namespace fs = std::filesystem;

const char* to_string(TextKind kind) {
  switch (kind) {
    case TextKind::GroundTruth: return "gt";
    case TextKind::Paraphrase: return "paraphrase";
    case TextKind::ActionStyle: return "action";
  }
  return "?";
}

const char* to_string(SplitRole role) {
  switch (role) {
    case SplitRole::Train: return "train";
    case SplitRole::Val: return "val";
    case SplitRole::Test: return "test";
  }
  return "?";
}

TextKind parse_text_kind(const std::string& s) {
  if (s == "gt") return TextKind::GroundTruth;
  if (s == "paraphrase") return TextKind::Paraphrase;
  if (s == "action") return TextKind::ActionStyle;
  throw Error(ErrorCode::MalformedRecord, "unknown text kind '" + s + "'");
}

SplitRole parse_split_role(const std::string& s) {
  if (s == "train") return SplitRole::Train;
  if (s == "val") return SplitRole::Val;
  if (s == "test") return SplitRole::Test;
  throw Error(ErrorCode::MalformedRecord, "unknown split role '" + s + "'");
}

std::string variant_ref(const std::string& motion_id, int ordinal) {
  return motion_id + "#" + std::to_string(ordinal);
}

namespace {

int count_words(const std::string& text) {
  std::istringstream iss(text);
  std::string tok;
  int n = 0;
  while (iss >> tok) ++n;
  return n;
}

struct AnnotationRow {
  std::string motion_id, dataset_id, source_sequence_id, kind, text;
  double start_sec = 0.0, end_sec = 0.0;
};

AnnotationRow parse_annotation_line(const json& j, const std::string& where) {
  static const std::set<std::string> kKeys = {
      "motion_id", "dataset_id", "source_sequence_id",
      "start_sec", "end_sec",    "kind",
      "text"};
  if (!j.is_object()) {
    throw Error(ErrorCode::MalformedRecord, where + ": not a JSON object");
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!kKeys.count(it.key())) {
      throw Error(ErrorCode::MalformedRecord,
                  where + ": unknown key '" + it.key() + "'");
    }
  }
  AnnotationRow row;
  try {
    row.motion_id = j.at("motion_id").get<std::string>();
    row.dataset_id = j.at("dataset_id").get<std::string>();
    row.source_sequence_id = j.at("source_sequence_id").get<std::string>();
    row.start_sec = j.at("start_sec").get<double>();
    row.end_sec = j.at("end_sec").get<double>();
    row.kind = j.at("kind").get<std::string>();
    row.text = j.at("text").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, where + ": " + e.what());
  }
  if (row.text.empty()) {
    throw Error(ErrorCode::MalformedRecord,
                where + ": empty text for motion '" + row.motion_id + "'");
  }
  if (!(row.start_sec < row.end_sec)) {
    throw Error(ErrorCode::MalformedRecord,
                where + ": span [" + std::to_string(row.start_sec) + ", " +
                    std::to_string(row.end_sec) + ") is empty for motion '" +
                    row.motion_id + "'");
  }
  return row;
}

fs::path resolve(const fs::path& base_dir, const std::string& rel) {
  fs::path p(rel);
  return p.is_absolute() ? p : base_dir / p;
}

DatasetSplit load_entry(const json& entry, const fs::path& base_dir,
                        int entry_index, std::optional<Eigen::Index>& text_dim,
                        std::optional<Eigen::Index>& motion_dim) {
  const std::string where = "manifest datasets[" + std::to_string(entry_index) + "]";
  static const std::set<std::string> kKeys = {
      "dataset_id", "role", "annotations", "motion_features",
      "text_embeddings", "token_features"};
  for (auto it = entry.begin(); it != entry.end(); ++it) {
    if (!kKeys.count(it.key())) {
      throw Error(ErrorCode::MalformedRecord,
                  where + ": unknown key '" + it.key() + "'");
    }
  }
  DatasetSplit split;
  try {
    split.dataset_id = entry.at("dataset_id").get<std::string>();
    split.role = parse_split_role(entry.at("role").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, where + ": " + e.what());
  }

  const fs::path ann_path =
      resolve(base_dir, entry.at("annotations").get<std::string>());
  std::ifstream ann(ann_path);
  if (!ann) {
    throw Error(ErrorCode::MissingFile, "cannot open " + ann_path.string());
  }

  // Annotation line i corresponds to text-embedding row i. Samples appear
  // in first-occurrence order of their motion_id; variant ordinals follow
  // annotation order within each motion.
  std::vector<std::string> expected_refs;
  std::unordered_map<std::string, std::size_t> sample_index;
  std::vector<std::vector<int>> variant_lines;  // per sample, annotation line per variant
  std::string line;
  std::size_t lineno = 0;
  std::vector<AnnotationRow> rows;
  std::vector<std::pair<std::size_t, int>> row_slot;  // (sample idx, ordinal)
  for (; std::getline(ann, line); ) {
    ++lineno;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw Error(ErrorCode::MalformedRecord,
                  ann_path.string() + ":" + std::to_string(lineno) +
                      ": invalid JSON");
    }
    AnnotationRow row = parse_annotation_line(
        j, ann_path.string() + ":" + std::to_string(lineno));
    if (row.dataset_id != split.dataset_id) {
      throw Error(ErrorCode::MalformedRecord,
                  ann_path.string() + ":" + std::to_string(lineno) +
                      ": dataset_id '" + row.dataset_id +
                      "' does not match entry '" + split.dataset_id + "'");
    }
    auto [it, inserted] =
        sample_index.try_emplace(row.motion_id, split.samples.size());
    if (inserted) {
      MotionSample sample;
      sample.motion_id = row.motion_id;
      sample.dataset_id = row.dataset_id;
      sample.source_sequence_id = row.source_sequence_id;
      sample.start_sec = row.start_sec;
      sample.end_sec = row.end_sec;
      split.samples.push_back(std::move(sample));
      variant_lines.emplace_back();
    } else {
      const MotionSample& s = split.samples[it->second];
      // Extra variants of a known motion must repeat its span and source;
      // anything else is a second motion wearing the same id.
      if (s.source_sequence_id != row.source_sequence_id ||
          s.start_sec != row.start_sec || s.end_sec != row.end_sec) {
        throw Error(ErrorCode::DuplicateId,
                    ann_path.string() + ":" + std::to_string(lineno) +
                        ": motion '" + row.motion_id +
                        "' redefined with a different span or source");
      }
    }
    MotionSample& sample = split.samples[it->second];
    TextVariant var;
    var.text = row.text;
    var.kind = parse_text_kind(row.kind);
    const int ordinal = static_cast<int>(sample.variants.size());
    sample.variants.push_back(std::move(var));
    expected_refs.push_back(variant_ref(row.motion_id, ordinal));
    row_slot.emplace_back(it->second, ordinal);
    rows.push_back(std::move(row));
  }

  for (const auto& sample : split.samples) {
    const bool has_gt = std::any_of(
        sample.variants.begin(), sample.variants.end(),
        [](const TextVariant& v) { return v.kind == TextKind::GroundTruth; });
    if (!has_gt) {
      throw Error(ErrorCode::MalformedRecord,
                  ann_path.string() + ": motion '" + sample.motion_id +
                      "' has no ground-truth variant");
    }
  }

  // Text embeddings: row i <-> annotation line i.
  const fs::path emb_path =
      resolve(base_dir, entry.at("text_embeddings").get<std::string>());
  auto emb_rows = formats::read_emb1(emb_path);
  if (emb_rows.size() != expected_refs.size()) {
    throw Error(ErrorCode::MalformedRecord,
                emb_path.string() + ": " + std::to_string(emb_rows.size()) +
                    " rows but " + std::to_string(expected_refs.size()) +
                    " annotations in " + ann_path.string());
  }
  auto ids = formats::read_id_list(formats::emb1_ids_path(emb_path));
  if (ids != expected_refs) {
    for (std::size_t i = 0; i < std::min(ids.size(), expected_refs.size()); ++i) {
      if (ids[i] != expected_refs[i]) {
        throw Error(ErrorCode::MalformedRecord,
                    formats::emb1_ids_path(emb_path).string() + ": row " +
                        std::to_string(i) + " id '" + ids[i] +
                        "' does not match annotation '" + expected_refs[i] + "'");
      }
    }
    throw Error(ErrorCode::MalformedRecord,
                formats::emb1_ids_path(emb_path).string() +
                    ": id count does not match annotations");
  }
  for (std::size_t i = 0; i < emb_rows.size(); ++i) {
    if (!text_dim) text_dim = emb_rows[i].size();
    if (emb_rows[i].size() != *text_dim) {
      throw Error(ErrorCode::DimensionMismatch,
                  "text embedding for '" + expected_refs[i] + "' has dim " +
                      std::to_string(emb_rows[i].size()) + ", corpus dim is " +
                      std::to_string(*text_dim));
    }
    auto [si, ord] = row_slot[i];
    split.samples[si].variants[ord].sentence_embedding = std::move(emb_rows[i]);
  }

  // Motion features: keyed by motion_id; every sample must resolve.
  const fs::path mot_path =
      resolve(base_dir, entry.at("motion_features").get<std::string>());
  auto motion_records = formats::read_mbf1(mot_path);
  std::unordered_map<std::string, Eigen::MatrixXd> motion_by_id;
  for (auto& rec : motion_records) {
    if (!motion_by_id.emplace(rec.id, std::move(rec.data)).second) {
      throw Error(ErrorCode::DuplicateId,
                  mot_path.string() + ": motion id '" + rec.id +
                      "' appears twice");
    }
  }
  for (auto& sample : split.samples) {
    auto it = motion_by_id.find(sample.motion_id);
    if (it == motion_by_id.end()) {
      throw Error(ErrorCode::MalformedRecord,
                  mot_path.string() + ": no motion features for '" +
                      sample.motion_id + "'");
    }
    if (it->second.rows() < 1) {
      throw Error(ErrorCode::MalformedRecord,
                  mot_path.string() + ": motion '" + sample.motion_id +
                      "' has zero frames");
    }
    if (!motion_dim) motion_dim = it->second.cols();
    if (it->second.cols() != *motion_dim) {
      throw Error(ErrorCode::DimensionMismatch,
                  "motion features for '" + sample.motion_id + "' have dim " +
                      std::to_string(it->second.cols()) + ", corpus dim is " +
                      std::to_string(*motion_dim));
    }
    sample.motion_features = std::move(it->second);
  }

  // Token features: optional, keyed by variant ref; variants without a
  // record simply have no token form.
  if (entry.contains("token_features")) {
    const fs::path tok_path =
        resolve(base_dir, entry.at("token_features").get<std::string>());
    auto token_records = formats::read_mbf1(tok_path);
    std::unordered_map<std::string, std::pair<std::size_t, int>> slot_by_ref;
    for (std::size_t i = 0; i < expected_refs.size(); ++i) {
      slot_by_ref[expected_refs[i]] = row_slot[i];
    }
    std::unordered_set<std::string> seen;
    for (auto& rec : token_records) {
      if (!seen.insert(rec.id).second) {
        throw Error(ErrorCode::DuplicateId,
                    tok_path.string() + ": variant id '" + rec.id +
                        "' appears twice");
      }
      auto it = slot_by_ref.find(rec.id);
      if (it == slot_by_ref.end()) {
        throw Error(ErrorCode::MalformedRecord,
                    tok_path.string() + ": variant id '" + rec.id +
                        "' has no matching annotation");
      }
      if (rec.data.rows() < 1) {
        throw Error(ErrorCode::MalformedRecord,
                    tok_path.string() + ": variant '" + rec.id +
                        "' has zero tokens");
      }
      if (!text_dim) text_dim = rec.data.cols();
      if (rec.data.cols() != *text_dim) {
        throw Error(ErrorCode::DimensionMismatch,
                    "token features for '" + rec.id + "' have dim " +
                        std::to_string(rec.data.cols()) + ", corpus dim is " +
                        std::to_string(*text_dim));
      }
      auto [si, ord] = it->second;
      split.samples[si].variants[ord].token_features = std::move(rec.data);
    }
  }

  return split;
}

}  // namespace

std::vector<DatasetSplit> load_corpus(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) {
    throw Error(ErrorCode::MissingFile,
                "cannot open manifest " + manifest_path.string());
  }
  json manifest = json::parse(in, nullptr, false);
  if (manifest.is_discarded() || !manifest.is_object() ||
      !manifest.contains("datasets") || !manifest["datasets"].is_array()) {
    throw Error(ErrorCode::MalformedRecord,
                manifest_path.string() +
                    ": expected {\"datasets\": [ ... ]}");
  }
  for (auto it = manifest.begin(); it != manifest.end(); ++it) {
    if (it.key() != "datasets") {
      throw Error(ErrorCode::MalformedRecord,
                  manifest_path.string() + ": unknown key '" + it.key() + "'");
    }
  }

  const fs::path base_dir = manifest_path.parent_path();
  std::optional<Eigen::Index> text_dim, motion_dim;
  std::vector<DatasetSplit> splits;
  std::set<std::pair<std::string, std::string>> seen_entries;
  int idx = 0;
  for (const auto& entry : manifest["datasets"]) {
    DatasetSplit split = load_entry(entry, base_dir, idx++, text_dim, motion_dim);
    if (!seen_entries.emplace(split.dataset_id, to_string(split.role)).second) {
      throw Error(ErrorCode::DuplicateId,
                  manifest_path.string() + ": dataset '" + split.dataset_id +
                      "' role '" + to_string(split.role) +
                      "' listed more than once");
    }
    splits.push_back(std::move(split));
  }
  return splits;
}

void save_corpus(const fs::path& manifest_path,
                 const std::vector<DatasetSplit>& splits) {
  const fs::path dir = manifest_path.parent_path();
  if (!dir.empty()) fs::create_directories(dir);

  json datasets = json::array();
  for (const auto& split : splits) {
    const std::string stem =
        split.dataset_id + "_" + to_string(split.role);
    const std::string ann_name = stem + ".annotations.jsonl";
    const std::string mot_name = stem + ".motion.mbf1";
    const std::string emb_name = stem + ".text.emb1";
    const std::string tok_name = stem + ".tokens.mbf1";

    std::ofstream ann(dir / ann_name, std::ios::trunc);
    if (!ann) {
      throw Error(ErrorCode::MissingFile,
                  "cannot write " + (dir / ann_name).string());
    }
    std::vector<Eigen::VectorXd> emb_rows;
    std::vector<std::string> refs;
    std::vector<formats::RaggedRecord> motion_records;
    std::vector<formats::RaggedRecord> token_records;
    for (const auto& sample : split.samples) {
      motion_records.push_back({sample.motion_id, sample.motion_features});
      int ordinal = 0;
      for (const auto& var : sample.variants) {
        ann << json{{"motion_id", sample.motion_id},
                    {"dataset_id", sample.dataset_id},
                    {"source_sequence_id", sample.source_sequence_id},
                    {"start_sec", sample.start_sec},
                    {"end_sec", sample.end_sec},
                    {"kind", to_string(var.kind)},
                    {"text", var.text}}
                   .dump()
            << "\n";
        const std::string ref = variant_ref(sample.motion_id, ordinal);
        refs.push_back(ref);
        if (!var.sentence_embedding) {
          throw Error(ErrorCode::MissingEmbedding,
                      "variant '" + ref +
                          "' has no sentence embedding; corpus files require "
                          "one row per annotation");
        }
        emb_rows.push_back(*var.sentence_embedding);
        if (var.token_features) {
          token_records.push_back({ref, *var.token_features});
        }
        ++ordinal;
      }
    }
    formats::write_emb1(dir / emb_name, emb_rows);
    formats::write_id_list(formats::emb1_ids_path(dir / emb_name), refs);
    formats::write_mbf1(dir / mot_name, motion_records);

    json entry = {{"dataset_id", split.dataset_id},
                  {"role", to_string(split.role)},
                  {"annotations", ann_name},
                  {"motion_features", mot_name},
                  {"text_embeddings", emb_name}};
    if (!token_records.empty()) {
      formats::write_mbf1(dir / tok_name, token_records);
      entry["token_features"] = tok_name;
    }
    datasets.push_back(std::move(entry));
  }

  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::MissingFile,
                "cannot write manifest " + manifest_path.string());
  }
  out << json{{"datasets", datasets}}.dump(2) << "\n";
}

DatasetSplit filter_overlaps(const DatasetSplit& train,
                             const std::vector<DatasetSplit>& eval_splits) {
  DatasetSplit out;
  out.dataset_id = train.dataset_id;
  out.role = train.role;
  for (const auto& sample : train.samples) {
    bool removed = false;
    for (const auto& eval_split : eval_splits) {
      for (const auto& eval_sample : eval_split.samples) {
        if (sample.overlaps(eval_sample)) {
          removed = true;
          break;
        }
      }
      if (removed) break;
    }
    if (!removed) out.samples.push_back(sample);
  }
  return out;
}

CombinedTrainSet combine(const std::vector<DatasetSplit>& splits,
                         const std::optional<std::vector<double>>& weights) {
  if (splits.empty()) {
    throw Error(ErrorCode::EmptySplit, "no splits to combine");
  }
  for (const auto& split : splits) {
    if (split.samples.empty()) {
      throw Error(ErrorCode::EmptySplit,
                  "dataset '" + split.dataset_id + "' is empty");
    }
  }
  CombinedTrainSet set;
  set.splits = splits;
  if (weights) {
    if (weights->size() != splits.size()) {
      throw Error(ErrorCode::InvalidConfig,
                  "got " + std::to_string(weights->size()) + " weights for " +
                      std::to_string(splits.size()) + " datasets");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < weights->size(); ++i) {
      if (!((*weights)[i] > 0.0)) {
        throw Error(ErrorCode::NonPositiveWeight,
                    "weight for dataset '" + splits[i].dataset_id + "' is " +
                        std::to_string((*weights)[i]));
      }
      sum += (*weights)[i];
    }
    for (double w : *weights) set.dataset_weights.push_back(w / sum);
  } else {
    // Uniform per dataset: each dataset equally likely per draw, which
    // balances datasets of very different sizes.
    const double w = 1.0 / static_cast<double>(splits.size());
    set.dataset_weights.assign(splits.size(), w);
  }
  return set;
}

std::vector<DatasetStats> corpus_stats(const std::vector<DatasetSplit>& splits) {
  std::map<std::string, DatasetStats> by_dataset;
  std::map<std::string, std::pair<long long, long long>> gt_words;  // (words, count)
  for (const auto& split : splits) {
    auto& stats = by_dataset[split.dataset_id];
    stats.dataset_id = split.dataset_id;
    stats.sample_counts[split.role] += static_cast<int>(split.samples.size());
    auto& gw = gt_words[split.dataset_id];
    for (const auto& sample : split.samples) {
      for (const auto& var : sample.variants) {
        stats.variant_counts[var.kind] += 1;
        if (var.kind == TextKind::GroundTruth) {
          gw.first += count_words(var.text);
          gw.second += 1;
        }
      }
    }
  }
  std::vector<DatasetStats> out;
  for (auto& [id, stats] : by_dataset) {
    const auto& gw = gt_words[id];
    stats.mean_gt_words =
        gw.second == 0 ? 0.0
                       : static_cast<double>(gw.first) /
                             static_cast<double>(gw.second);
    out.push_back(std::move(stats));
  }
  return out;
}

}  // namespace motext::corpus
