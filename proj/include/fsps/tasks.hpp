#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fsps/errors.hpp"
#include "fsps/rng.hpp"

namespace fsps::tasks {

using Mat = Eigen::MatrixXd;

enum class Split { kTrain, kVal, kTest };
enum class SourceTag { kA, kB, kTest };

const char* split_name(Split s);
const char* source_tag_name(SourceTag t);

enum class SyntheticKind { kGaussianClusters, kDomainShiftedGaussian, kRingClusters };

/// Mean/covariance perturbation realizing a domain gap. The transform is a
/// fixed function of the family seed: x' = (I + mix*R) x + mean_shift * u_c,
/// with R a fixed mixing matrix and u_c a fixed per-class direction. It is
/// applied to the splits selected below (test-time components by default).
struct ShiftParams {
  double mean_shift = 0.0;
  double mix = 0.0;
  bool on_val = false;
  bool on_test = true;
};

struct SyntheticFamily {
  SyntheticKind kind = SyntheticKind::kGaussianClusters;
  int dim = 16;
  int class_pool_size = 30;
  double noise_scale = 0.3;
  ShiftParams shift;
  std::uint64_t seed = 0;
  int examples_per_class = 50;
  // Classes per split; the pool is partitioned in id order.
  int train_classes = 20;
  int val_classes = 5;
  int test_classes = 5;
};

/// Image-directory source: one subdirectory per class under root, plus a
/// split file mapping split name -> class-name list. Images are PGM/PPM.
struct ImageManifest {
  std::string root_dir;
  std::string split_file;
};

struct DatasetSpec {
  std::optional<SyntheticFamily> synthetic;
  std::optional<ImageManifest> image;
  std::vector<int> input_shape;       // {dim} or {h, w, channels}
  int min_examples_per_class = 0;     // 0 disables the load-time count check
};

struct ClassData {
  std::string name;
  Split split = Split::kTrain;
  Mat examples;  // one example per row
};

class Dataset {
 public:
  Dataset(std::vector<ClassData> classes, std::vector<int> input_shape);

  int n_classes() const { return static_cast<int>(classes_.size()); }
  const ClassData& class_at(int id) const { return classes_[id]; }
  const std::vector<int>& classes_in(Split s) const { return by_split_[static_cast<int>(s)]; }
  const std::vector<int>& input_shape() const { return input_shape_; }
  int example_dim() const;

 private:
  std::vector<ClassData> classes_;
  std::vector<int> by_split_[3];
  std::vector<int> input_shape_;
};

struct Episode {
  int n_way = 0;
  int k_shot = 0;
  int q_per_class = 0;
  Mat support_x, query_x;             // rows grouped by label, label-major
  std::vector<int> support_y, query_y;
  SourceTag source_tag = SourceTag::kA;
  // Provenance, used by invariant checks: dataset class id per episode label
  // and the sampled example indices per label.
  std::vector<int> class_ids;
  std::vector<std::vector<std::size_t>> support_idx, query_idx;
};

struct TaskDistribution {
  const Dataset* dataset = nullptr;
  Split split = Split::kTrain;
  SourceTag tag = SourceTag::kA;
};

struct Distributions {
  TaskDistribution a, b, test;
};

struct DistributionsConfig {
  bool cross_domain = false;
  const Dataset* target = nullptr;  // required in cross-domain mode
};

/// Loads a dataset from its spec. Deterministic given the spec. Throws
/// SplitOverlapError / MissingClassError / InsufficientExamplesError on the
/// corresponding violations.
Dataset load_dataset(const DatasetSpec& spec);

/// One N-way K-shot episode from the given split. Identical rng state gives
/// a bitwise-identical episode.
Episode sample_episode(const Dataset& ds, Split split, int n_way, int k_shot,
                       int q_per_class, Rng& rng, SourceTag tag);
Episode sample_episode(const TaskDistribution& dist, int n_way, int k_shot,
                       int q_per_class, Rng& rng);

Distributions make_distributions(const Dataset& ds, const DistributionsConfig& cfg = {});

/// Split-file / synthetic-descriptor external interfaces (JSON).
void load_split_file(const std::string& path, std::vector<std::string>& train,
                     std::vector<std::string>& val, std::vector<std::string>& test);
SyntheticFamily parse_synthetic_descriptor(const std::string& json_text);
std::string synthetic_descriptor_json(const SyntheticFamily& fam);

/// The deterministic shift transform of a domain-shifted family; exposed so
/// tests can assert the configured gap between shifted and unshifted data.
void shift_transform(const SyntheticFamily& fam, int class_id, Mat& row);

}  // namespace fsps::tasks
