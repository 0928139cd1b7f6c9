#include "fsps/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fsps::tasks {

namespace fs = std::filesystem;
using nlohmann::json;

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

const char* source_tag_name(SourceTag t) {
  switch (t) {
    case SourceTag::kA: return "A";
    case SourceTag::kB: return "B";
    case SourceTag::kTest: return "test";
  }
  return "?";
}

Dataset::Dataset(std::vector<ClassData> classes, std::vector<int> input_shape)
    : classes_(std::move(classes)), input_shape_(std::move(input_shape)) {
  for (int i = 0; i < static_cast<int>(classes_.size()); ++i) {
    by_split_[static_cast<int>(classes_[i].split)].push_back(i);
  }
}

int Dataset::example_dim() const {
  int d = 1;
  for (int x : input_shape_) d *= x;
  return d;
}

// ---------------------------------------------------------------------------
// Synthetic generation. Every sample is a pure function of
// (family, class id, example index); the family seed keys all randomness.
// ---------------------------------------------------------------------------

namespace {

Rng class_rng(const SyntheticFamily& fam, int class_id) {
  return Rng(fnv1a_u64(static_cast<std::uint64_t>(class_id), fnv1a("class", fnv1a_u64(fam.seed))));
}

Rng example_rng(const SyntheticFamily& fam, int class_id, int example_index) {
  std::uint64_t h = fnv1a("example", fnv1a_u64(fam.seed));
  h = fnv1a_u64(static_cast<std::uint64_t>(class_id), h);
  h = fnv1a_u64(static_cast<std::uint64_t>(example_index), h);
  return Rng(h);
}

Eigen::VectorXd normal_vec(Rng& rng, int dim) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = rng.normal();
  return v;
}

Mat base_example(const SyntheticFamily& fam, int class_id, int example_index) {
  Rng crng = class_rng(fam, class_id);
  Rng erng = example_rng(fam, class_id, example_index);
  Eigen::VectorXd x(fam.dim);
  switch (fam.kind) {
    case SyntheticKind::kGaussianClusters:
    case SyntheticKind::kDomainShiftedGaussian: {
      Eigen::VectorXd mean = normal_vec(crng, fam.dim);
      x = mean + fam.noise_scale * normal_vec(erng, fam.dim);
      break;
    }
    case SyntheticKind::kRingClusters: {
      const double radius = crng.uniform(0.5, 2.5);
      const double angle = erng.uniform(0.0, 2.0 * std::numbers::pi);
      const double r = radius + fam.noise_scale * erng.normal();
      x.setZero();
      x(0) = r * std::cos(angle);
      if (fam.dim > 1) x(1) = r * std::sin(angle);
      for (int i = 2; i < fam.dim; ++i) x(i) = fam.noise_scale * erng.normal();
      break;
    }
  }
  return x.transpose();
}

Split split_of_class(const SyntheticFamily& fam, int class_id) {
  if (class_id < fam.train_classes) return Split::kTrain;
  if (class_id < fam.train_classes + fam.val_classes) return Split::kVal;
  return Split::kTest;
}

bool shift_applies(const SyntheticFamily& fam, Split split) {
  if (fam.kind != SyntheticKind::kDomainShiftedGaussian) return false;
  if (split == Split::kVal) return fam.shift.on_val;
  if (split == Split::kTest) return fam.shift.on_test;
  return false;
}

}  // namespace

void shift_transform(const SyntheticFamily& fam, int class_id, Mat& row) {
  const int d = fam.dim;
  Rng mix_rng(fnv1a("shift-mix", fnv1a_u64(fam.seed)));
  Mat r_mix(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) r_mix(i, j) = mix_rng.normal() / std::sqrt(static_cast<double>(d));
  }
  Rng dir_rng(fnv1a_u64(static_cast<std::uint64_t>(class_id), fnv1a("shift-mean", fnv1a_u64(fam.seed))));
  Eigen::VectorXd u = normal_vec(dir_rng, d);
  u.normalize();
  row = row + fam.shift.mix * (row * r_mix.transpose()) +
        fam.shift.mean_shift * u.transpose();
}

// ---------------------------------------------------------------------------
// PGM / PPM loading
// ---------------------------------------------------------------------------

namespace {

int next_pnm_int(std::istream& is) {
  // Skips whitespace and '#' comments.
  while (true) {
    int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  int v = 0;
  is >> v;
  return v;
}

Eigen::RowVectorXd load_pnm(const std::string& path, int expect_h, int expect_w, int expect_ch) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingClassError("cannot open image file: " + path);
  std::string magic;
  f >> magic;
  int channels = 0;
  bool binary = false;
  if (magic == "P2") channels = 1;
  else if (magic == "P5") { channels = 1; binary = true; }
  else if (magic == "P3") channels = 3;
  else if (magic == "P6") { channels = 3; binary = true; }
  else throw ConfigError("unsupported image format '" + magic + "' in " + path);

  const int w = next_pnm_int(f);
  const int h = next_pnm_int(f);
  const int maxval = next_pnm_int(f);
  if (maxval <= 0 || maxval > 255) throw ConfigError("unsupported maxval in " + path);
  if (h != expect_h || w != expect_w || channels != expect_ch) {
    throw ShapeError("image " + path + " has shape " + std::to_string(h) + "x" +
                     std::to_string(w) + "x" + std::to_string(channels) +
                     ", expected " + std::to_string(expect_h) + "x" +
                     std::to_string(expect_w) + "x" + std::to_string(expect_ch));
  }

  const int n = h * w * channels;
  Eigen::RowVectorXd row(n);
  if (binary) {
    f.get();  // single whitespace after maxval
    std::vector<unsigned char> buf(n);
    f.read(reinterpret_cast<char*>(buf.data()), n);
    if (f.gcount() != n) throw ConfigError("truncated image file: " + path);
    for (int i = 0; i < n; ++i) row(i) = buf[i] / static_cast<double>(maxval);
  } else {
    for (int i = 0; i < n; ++i) row(i) = next_pnm_int(f) / static_cast<double>(maxval);
  }
  return row;
}

std::vector<ClassData> load_image_classes(const DatasetSpec& spec) {
  const auto& manifest = *spec.image;
  std::vector<std::string> names[3];
  load_split_file(manifest.split_file, names[0], names[1], names[2]);

  std::set<std::string> seen;
  for (const auto& list : names) {
    for (const auto& n : list) {
      if (!seen.insert(n).second) {
        throw SplitOverlapError("class '" + n + "' appears in more than one split");
      }
    }
  }

  if (spec.input_shape.size() != 3) {
    throw ConfigError("image datasets need input_shape {h, w, channels}");
  }
  const int h = spec.input_shape[0], w = spec.input_shape[1], ch = spec.input_shape[2];

  std::vector<ClassData> classes;
  const Split splits[3] = {Split::kTrain, Split::kVal, Split::kTest};
  for (int s = 0; s < 3; ++s) {
    for (const auto& name : names[s]) {
      fs::path dir = fs::path(manifest.root_dir) / name;
      if (!fs::is_directory(dir)) {
        throw MissingClassError("missing class directory: " + dir.string());
      }
      std::vector<std::string> files;
      for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file()) files.push_back(e.path().string());
      }
      std::sort(files.begin(), files.end());
      if (static_cast<int>(files.size()) < std::max(1, spec.min_examples_per_class)) {
        throw InsufficientExamplesError("class '" + name + "' has " +
                                        std::to_string(files.size()) + " examples, needs " +
                                        std::to_string(spec.min_examples_per_class));
      }
      Mat ex(static_cast<int>(files.size()), h * w * ch);
      for (int i = 0; i < static_cast<int>(files.size()); ++i) {
        ex.row(i) = load_pnm(files[i], h, w, ch);
      }
      classes.push_back({name, splits[s], std::move(ex)});
    }
  }
  return classes;
}

std::vector<ClassData> load_synthetic_classes(const DatasetSpec& spec) {
  const auto& fam = *spec.synthetic;
  if (fam.train_classes + fam.val_classes + fam.test_classes > fam.class_pool_size) {
    throw ConfigError("synthetic split counts exceed class_pool_size");
  }
  if (fam.examples_per_class < spec.min_examples_per_class) {
    throw InsufficientExamplesError(
        "synthetic family provides " + std::to_string(fam.examples_per_class) +
        " examples per class, needs " + std::to_string(spec.min_examples_per_class));
  }
  const int used = fam.train_classes + fam.val_classes + fam.test_classes;
  std::vector<ClassData> classes;
  classes.reserve(used);
  for (int c = 0; c < used; ++c) {
    const Split split = split_of_class(fam, c);
    Mat ex(fam.examples_per_class, fam.dim);
    const bool shifted = shift_applies(fam, split);
    for (int i = 0; i < fam.examples_per_class; ++i) {
      Mat row = base_example(fam, c, i);
      if (shifted) shift_transform(fam, c, row);
      ex.row(i) = row;
    }
    char name[32];
    std::snprintf(name, sizeof(name), "class_%03d", c);
    classes.push_back({name, split, std::move(ex)});
  }
  return classes;
}

}  // namespace

Dataset load_dataset(const DatasetSpec& spec) {
  if (spec.synthetic.has_value() == spec.image.has_value()) {
    throw ConfigError("dataset spec must name exactly one source (synthetic or image)");
  }
  if (spec.synthetic) {
    std::vector<int> shape = spec.input_shape.empty()
                                 ? std::vector<int>{spec.synthetic->dim}
                                 : spec.input_shape;
    if (shape.size() != 1 || shape[0] != spec.synthetic->dim) {
      throw ConfigError("synthetic input_shape must be {dim}");
    }
    return Dataset(load_synthetic_classes(spec), std::move(shape));
  }
  return Dataset(load_image_classes(spec), spec.input_shape);
}

Episode sample_episode(const Dataset& ds, Split split, int n_way, int k_shot,
                       int q_per_class, Rng& rng, SourceTag tag) {
  const auto& pool = ds.classes_in(split);
  if (static_cast<int>(pool.size()) < n_way) {
    throw InsufficientClassesError("split '" + std::string(split_name(split)) + "' has " +
                                   std::to_string(pool.size()) + " classes, episode needs " +
                                   std::to_string(n_way));
  }
  Episode ep;
  ep.n_way = n_way;
  ep.k_shot = k_shot;
  ep.q_per_class = q_per_class;
  ep.source_tag = tag;

  // Classes drawn without replacement in random order; the order is the
  // episode's relabelling, so label positions carry no class identity.
  const auto picks = rng.sample_without_replacement(pool.size(), n_way);
  const int d = ds.example_dim();
  ep.support_x.resize(n_way * k_shot, d);
  ep.query_x.resize(n_way * q_per_class, d);
  for (int label = 0; label < n_way; ++label) {
    const int cid = pool[picks[label]];
    const ClassData& cls = ds.class_at(cid);
    const int avail = static_cast<int>(cls.examples.rows());
    if (avail < k_shot + q_per_class) {
      throw InsufficientExamplesError("class '" + cls.name + "' has " + std::to_string(avail) +
                                      " examples, episode needs " +
                                      std::to_string(k_shot + q_per_class));
    }
    auto idx = rng.sample_without_replacement(avail, k_shot + q_per_class);
    ep.class_ids.push_back(cid);
    ep.support_idx.emplace_back(idx.begin(), idx.begin() + k_shot);
    ep.query_idx.emplace_back(idx.begin() + k_shot, idx.end());
    for (int j = 0; j < k_shot; ++j) {
      ep.support_x.row(label * k_shot + j) = cls.examples.row(static_cast<int>(idx[j]));
      ep.support_y.push_back(label);
    }
    for (int j = 0; j < q_per_class; ++j) {
      ep.query_x.row(label * q_per_class + j) =
          cls.examples.row(static_cast<int>(idx[k_shot + j]));
      ep.query_y.push_back(label);
    }
  }
  return ep;
}

Episode sample_episode(const TaskDistribution& dist, int n_way, int k_shot,
                       int q_per_class, Rng& rng) {
  return sample_episode(*dist.dataset, dist.split, n_way, k_shot, q_per_class, rng, dist.tag);
}

Distributions make_distributions(const Dataset& ds, const DistributionsConfig& cfg) {
  Distributions out;
  out.a = {&ds, Split::kTrain, SourceTag::kA};
  if (cfg.cross_domain) {
    if (cfg.target == nullptr) {
      throw MissingTargetDomainError("cross-domain mode requires a target dataset");
    }
    out.b = {cfg.target, Split::kVal, SourceTag::kB};
    out.test = {cfg.target, Split::kTest, SourceTag::kTest};
  } else {
    out.b = {&ds, Split::kVal, SourceTag::kB};
    out.test = {&ds, Split::kTest, SourceTag::kTest};
  }
  return out;
}

// ---------------------------------------------------------------------------
// External interfaces (JSON)
// ---------------------------------------------------------------------------

void load_split_file(const std::string& path, std::vector<std::string>& train,
                     std::vector<std::string>& val, std::vector<std::string>& test) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open split file: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("split file " + path + ": " + e.what());
  }
  for (const auto& [key, value] : j.items()) {
    if (key != "train" && key != "val" && key != "test") {
      throw ConfigError("split file " + path + ": unknown key '" + key + "'");
    }
    (void)value;
  }
  for (const char* key : {"train", "val", "test"}) {
    if (!j.contains(key)) throw ConfigError("split file " + path + ": missing key '" + key + "'");
  }
  train = j["train"].get<std::vector<std::string>>();
  val = j["val"].get<std::vector<std::string>>();
  test = j["test"].get<std::vector<std::string>>();
}

namespace {

SyntheticKind parse_kind(const std::string& s) {
  if (s == "gaussian-clusters") return SyntheticKind::kGaussianClusters;
  if (s == "domain-shifted-gaussian") return SyntheticKind::kDomainShiftedGaussian;
  if (s == "ring-clusters") return SyntheticKind::kRingClusters;
  throw ConfigError("unknown synthetic kind '" + s + "'");
}

const char* kind_name(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::kGaussianClusters: return "gaussian-clusters";
    case SyntheticKind::kDomainShiftedGaussian: return "domain-shifted-gaussian";
    case SyntheticKind::kRingClusters: return "ring-clusters";
  }
  return "?";
}

}  // namespace

SyntheticFamily parse_synthetic_descriptor(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic descriptor: ") + e.what());
  }
  SyntheticFamily fam;
  for (const auto& [key, value] : j.items()) {
    if (key == "kind") fam.kind = parse_kind(value.get<std::string>());
    else if (key == "dim") fam.dim = value.get<int>();
    else if (key == "class_pool_size") fam.class_pool_size = value.get<int>();
    else if (key == "noise_scale") fam.noise_scale = value.get<double>();
    else if (key == "seed") fam.seed = value.get<std::uint64_t>();
    else if (key == "examples_per_class") fam.examples_per_class = value.get<int>();
    else if (key == "splits") {
      for (const auto& [sk, sv] : value.items()) {
        if (sk == "train") fam.train_classes = sv.get<int>();
        else if (sk == "val") fam.val_classes = sv.get<int>();
        else if (sk == "test") fam.test_classes = sv.get<int>();
        else throw ConfigError("synthetic descriptor: unknown splits key '" + sk + "'");
      }
    } else if (key == "shift_params") {
      for (const auto& [sk, sv] : value.items()) {
        if (sk == "mean_shift") fam.shift.mean_shift = sv.get<double>();
        else if (sk == "mix") fam.shift.mix = sv.get<double>();
        else if (sk == "on_val") fam.shift.on_val = sv.get<bool>();
        else if (sk == "on_test") fam.shift.on_test = sv.get<bool>();
        else throw ConfigError("synthetic descriptor: unknown shift_params key '" + sk + "'");
      }
    } else {
      throw ConfigError("synthetic descriptor: unknown key '" + key + "'");
    }
  }
  return fam;
}

std::string synthetic_descriptor_json(const SyntheticFamily& fam) {
  json j;
  j["kind"] = kind_name(fam.kind);
  j["dim"] = fam.dim;
  j["class_pool_size"] = fam.class_pool_size;
  j["noise_scale"] = fam.noise_scale;
  j["seed"] = fam.seed;
  j["examples_per_class"] = fam.examples_per_class;
  j["splits"] = {{"train", fam.train_classes}, {"val", fam.val_classes}, {"test", fam.test_classes}};
  j["shift_params"] = {{"mean_shift", fam.shift.mean_shift},
                       {"mix", fam.shift.mix},
                       {"on_val", fam.shift.on_val},
                       {"on_test", fam.shift.on_test}};
  return j.dump(2);
}

}  // namespace fsps::tasks
