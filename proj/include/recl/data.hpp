#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "recl/tensor.hpp"

namespace recl {

/// Feature matrix with one class index per row.
struct LabeledDataset {
  Tensor features;                    // n x d
  std::vector<std::size_t> labels;    // n
  std::vector<std::size_t> class_set; // sorted distinct labels

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const { return features.empty() ? 0 : features.cols(); }
  bool empty() const noexcept { return labels.empty(); }

  /// Recomputes class_set from labels and checks row counts.
  static LabeledDataset make(Tensor features, std::vector<std::size_t> labels);
  LabeledDataset subset(std::span<const std::size_t> indices) const;
  /// Rows of this followed by rows of other.
  LabeledDataset concat(const LabeledDataset& other) const;
};

enum class Scenario { kClassIncremental, kDomainIncremental };

const char* scenario_name(Scenario s);
Scenario parse_scenario(const std::string& text);

struct Task {
  LabeledDataset train;
  LabeledDataset test;
  /// Source-dataset classes; position j maps to the task's j-th label.
  std::vector<std::size_t> original_classes;
  /// Labels used for training and evaluation of this task.
  std::vector<std::size_t> head_classes;
};

struct TaskStream {
  Scenario scenario = Scenario::kClassIncremental;
  std::vector<Task> tasks;
  Tensor normalization_mean;  // [d]

  /// Output units needed after training task `t` (inclusive).
  std::size_t head_size_after(std::size_t t) const;
  /// Subtract the recorded mean from raw features.
  Tensor normalize(const Tensor& raw) const;
};

// ---- IDX ------------------------------------------------------------------

/// Decoded IDX payload. Images come back as n x (rows*cols) in [0, 1];
/// label files as a rank-1 tensor of class indices.
struct IdxData {
  bool is_images = false;
  Tensor values;
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;

  std::vector<std::size_t> labels() const;
};

IdxData parse_idx(std::span<const std::uint8_t> bytes);
IdxData read_idx_file(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_idx_images(std::span<const std::uint8_t> pixels, std::size_t count,
                                            std::size_t rows, std::size_t cols);
std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels);

// ---- datasets -------------------------------------------------------------

/// Gaussian blobs with unit variance centred at separation * direction(k).
/// direction(k) is +e_k for k < dim and -e_(k-dim) for dim <= k < 2 dim.
LabeledDataset make_blobs(std::size_t n_per_class, std::size_t classes, std::size_t dim, double separation,
                          std::uint64_t seed);

/// Shuffle the class list with `seed`, take `n_tasks` contiguous groups of
/// `classes_per_task` classes (0: split every class evenly), draw
/// `n_per_class` training samples per class and keep the full test split of
/// each group. The mean of all selected training features is subtracted
/// everywhere.
TaskStream build_task_stream(const LabeledDataset& train, const LabeledDataset& test, Scenario scenario,
                             std::size_t n_tasks, std::size_t n_per_class, std::uint64_t seed,
                             std::size_t classes_per_task = 0);

struct Batch {
  std::vector<std::size_t> indices;
  Tensor features;
  std::vector<std::size_t> labels;
};

/// Mini-batches over a per-(seed, epoch) permutation; the last batch may be short.
std::vector<Batch> batch_iter(const LabeledDataset& data, std::size_t batch_size, std::uint64_t seed,
                              std::uint64_t epoch);

// ---- manifest -------------------------------------------------------------

struct DatasetFiles {
  std::filesystem::path train_images;
  std::filesystem::path train_labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
};

/// Whitespace-separated manifest, one dataset per line:
///   name train-images train-labels test-images test-labels
/// Relative paths resolve against `root` (the manifest directory unless
/// RECL_DATA_DIR is set). '#' starts a comment.
std::map<std::string, DatasetFiles> parse_manifest(const std::string& text, const std::filesystem::path& root);
std::map<std::string, DatasetFiles> load_manifest(const std::filesystem::path& manifest);

struct TrainTestPair {
  LabeledDataset train;
  LabeledDataset test;
};

TrainTestPair load_idx_dataset(const DatasetFiles& files);

}  // namespace recl
