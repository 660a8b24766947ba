#include "recl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "recl/error.hpp"
#include "recl/rng.hpp"

namespace recl {

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  if (bytes.size() < offset + 4) {
    throw ParseError("IDX: truncated header at byte offset " + std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

LabeledDataset LabeledDataset::make(Tensor features, std::vector<std::size_t> labels) {
  if (!labels.empty() && features.rows() != labels.size()) {
    throw ShapeError("dataset has " + std::to_string(features.rows()) + " rows but " +
                     std::to_string(labels.size()) + " labels");
  }
  std::set<std::size_t> distinct(labels.begin(), labels.end());
  LabeledDataset d;
  d.features = std::move(features);
  d.labels = std::move(labels);
  d.class_set.assign(distinct.begin(), distinct.end());
  return d;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  if (indices.empty()) return LabeledDataset{};
  std::vector<std::size_t> lab;
  lab.reserve(indices.size());
  for (auto i : indices) lab.push_back(labels.at(i));
  return make(features.take_rows(indices), std::move(lab));
}

LabeledDataset LabeledDataset::concat(const LabeledDataset& other) const {
  if (empty()) return other;
  if (other.empty()) return *this;
  std::vector<std::size_t> lab = labels;
  lab.insert(lab.end(), other.labels.begin(), other.labels.end());
  return make(concat_rows(features, other.features), std::move(lab));
}

const char* scenario_name(Scenario s) {
  return s == Scenario::kClassIncremental ? "CIL" : "DIL";
}

Scenario parse_scenario(const std::string& text) {
  if (text == "CIL" || text == "cil") return Scenario::kClassIncremental;
  if (text == "DIL" || text == "dil") return Scenario::kDomainIncremental;
  throw ConfigError("unknown scenario '" + text + "' (expected CIL or DIL)");
}

std::size_t TaskStream::head_size_after(std::size_t t) const {
  if (scenario == Scenario::kDomainIncremental) {
    std::size_t c = 0;
    for (const auto& task : tasks) c = std::max(c, task.head_classes.size());
    return c;
  }
  std::size_t c = 0;
  for (std::size_t i = 0; i <= t && i < tasks.size(); ++i) c += tasks[i].head_classes.size();
  return c;
}

Tensor TaskStream::normalize(const Tensor& raw) const {
  Tensor out = raw;
  const std::size_t d = normalization_mean.size();
  if (raw.cols() != d && !(raw.rank() == 1 && raw.size() == d)) {
    throw ShapeError("normalize: features " + shape_str(raw.shape()) + " vs mean of length " + std::to_string(d));
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= normalization_mean[i % d];
  return out;
}

std::vector<std::size_t> IdxData::labels() const {
  if (is_images) throw ContractError("IDX payload holds images, not labels");
  std::vector<std::size_t> out;
  out.reserve(values.size());
  for (double v : values.values()) out.push_back(static_cast<std::size_t>(v));
  return out;
}

IdxData parse_idx(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = read_be32(bytes, 0);
  IdxData out;
  if (magic == kIdxLabels) {
    const std::uint64_t n = read_be32(bytes, 4);
    const std::size_t header = 8;
    if (n == 0) throw ParseError("IDX: zero label count at byte offset 4");
    if (bytes.size() - header < n) {
      throw ParseError("IDX: truncated label payload at byte offset " + std::to_string(bytes.size()));
    }
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = bytes[header + i];
    out.values = Tensor({static_cast<std::size_t>(n)}, std::move(v));
    return out;
  }
  if (magic == kIdxImages) {
    const std::uint64_t n = read_be32(bytes, 4);
    const std::uint64_t rows = read_be32(bytes, 8);
    const std::uint64_t cols = read_be32(bytes, 12);
    const std::size_t header = 16;
    if (n == 0 || rows == 0 || cols == 0) throw ParseError("IDX: zero dimension at byte offset 4");
    const std::uint64_t per = rows * cols;
    if (per > (std::uint64_t{1} << 32) || n > (std::uint64_t{1} << 40) / per) {
      throw ParseError("IDX: dimension overflow at byte offset 4");
    }
    if (bytes.size() - header < n * per) {
      throw ParseError("IDX: truncated image payload at byte offset " + std::to_string(bytes.size()));
    }
    std::vector<double> v(n * per);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = bytes[header + i] / 255.0;
    out.is_images = true;
    out.image_rows = rows;
    out.image_cols = cols;
    out.values = Tensor({static_cast<std::size_t>(n), static_cast<std::size_t>(per)}, std::move(v));
    return out;
  }
  std::ostringstream os;
  os << "IDX: bad magic 0x" << std::hex << magic << " at byte offset 0";
  throw ParseError(os.str());
}

IdxData read_idx_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open IDX file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_idx(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_idx_images(std::span<const std::uint8_t> pixels, std::size_t count,
                                            std::size_t rows, std::size_t cols) {
  if (pixels.size() != count * rows * cols) throw ShapeError("encode_idx_images: pixel count mismatch");
  std::vector<std::uint8_t> out;
  out.reserve(16 + pixels.size());
  write_be32(out, kIdxImages);
  write_be32(out, static_cast<std::uint32_t>(count));
  write_be32(out, static_cast<std::uint32_t>(rows));
  write_be32(out, static_cast<std::uint32_t>(cols));
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.size());
  write_be32(out, kIdxLabels);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

LabeledDataset make_blobs(std::size_t n_per_class, std::size_t classes, std::size_t dim, double separation,
                          std::uint64_t seed) {
  if (n_per_class == 0 || classes == 0 || dim == 0) throw ContractError("make_blobs: arguments must be positive");
  if (separation < 0.0) throw ContractError("make_blobs: separation must be non-negative");
  Rng rng(seed);
  std::vector<std::vector<double>> centers(classes, std::vector<double>(dim, 0.0));
  for (std::size_t k = 0; k < classes; ++k) {
    if (k < 2 * dim) {
      centers[k][k % dim] = k < dim ? separation : -separation;
    } else {
      Rng dir = Rng::derive(seed, 0xB10B, k);
      double norm = 0.0;
      for (auto& c : centers[k]) {
        c = dir.normal();
        norm += c * c;
      }
      norm = std::sqrt(norm);
      for (auto& c : centers[k]) c *= separation / norm;
    }
  }
  std::vector<double> feats;
  std::vector<std::size_t> labels;
  feats.reserve(n_per_class * classes * dim);
  for (std::size_t i = 0; i < n_per_class; ++i) {
    for (std::size_t k = 0; k < classes; ++k) {
      for (std::size_t j = 0; j < dim; ++j) feats.push_back(centers[k][j] + rng.normal());
      labels.push_back(k);
    }
  }
  return LabeledDataset::make(Tensor({n_per_class * classes, dim}, std::move(feats)), std::move(labels));
}

TaskStream build_task_stream(const LabeledDataset& train, const LabeledDataset& test, Scenario scenario,
                             std::size_t n_tasks, std::size_t n_per_class, std::uint64_t seed,
                             std::size_t classes_per_task) {
  if (n_tasks == 0) throw ConfigError("n_tasks must be positive");
  if (n_per_class == 0) throw ConfigError("n_per_class must be positive");
  if (train.empty()) throw ConfigError("training split is empty");
  std::vector<std::size_t> classes = train.class_set;
  if (classes_per_task == 0 && classes.size() % n_tasks != 0) {
    throw ConfigError("n_tasks=" + std::to_string(n_tasks) + " does not divide the " +
                      std::to_string(classes.size()) + " available classes");
  }
  if (classes_per_task != 0 && classes_per_task * n_tasks > classes.size()) {
    throw ConfigError(std::to_string(n_tasks) + " tasks of " + std::to_string(classes_per_task) +
                      " classes need more than the " + std::to_string(classes.size()) + " available classes");
  }
  Rng rng = Rng::derive(seed, 0x5354524D);  // "STRM"
  rng.shuffle(classes);
  const std::size_t per_task = classes_per_task ? classes_per_task : classes.size() / n_tasks;

  std::map<std::size_t, std::vector<std::size_t>> train_by_class;
  std::map<std::size_t, std::vector<std::size_t>> test_by_class;
  for (std::size_t i = 0; i < train.size(); ++i) train_by_class[train.labels[i]].push_back(i);
  for (std::size_t i = 0; i < test.size(); ++i) test_by_class[test.labels[i]].push_back(i);

  TaskStream stream;
  stream.scenario = scenario;
  std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> picks;  // (train idx, labels)
  for (std::size_t t = 0; t < n_tasks; ++t) {
    Task task;
    std::vector<std::size_t> tr_idx, tr_lab, te_idx, te_lab;
    for (std::size_t j = 0; j < per_task; ++j) {
      const std::size_t cls = classes[t * per_task + j];
      const std::size_t head = scenario == Scenario::kClassIncremental ? t * per_task + j : j;
      task.original_classes.push_back(cls);
      task.head_classes.push_back(head);
      const auto& pool = train_by_class[cls];
      if (pool.size() < n_per_class) {
        throw ConfigError("class " + std::to_string(cls) + " has " + std::to_string(pool.size()) +
                          " training samples, fewer than n_per_class=" + std::to_string(n_per_class));
      }
      for (auto k : rng.sample_without_replacement(pool.size(), n_per_class)) {
        tr_idx.push_back(pool[k]);
        tr_lab.push_back(head);
      }
      for (auto k : test_by_class[cls]) {
        te_idx.push_back(k);
        te_lab.push_back(head);
      }
    }
    if (te_idx.empty()) throw ConfigError("task " + std::to_string(t) + " has no test samples");
    task.train = LabeledDataset::make(train.features.take_rows(tr_idx), tr_lab);
    task.test = LabeledDataset::make(test.features.take_rows(te_idx), te_lab);
    stream.tasks.push_back(std::move(task));
  }

  const std::size_t d = train.dim();
  std::vector<double> mean(d, 0.0);
  std::size_t count = 0;
  for (const auto& task : stream.tasks) {
    const Tensor& f = task.train.features;
    for (std::size_t i = 0; i < f.rows(); ++i) {
      for (std::size_t j = 0; j < d; ++j) mean[j] += f[i * d + j];
    }
    count += f.rows();
  }
  for (auto& m : mean) m /= static_cast<double>(count);
  stream.normalization_mean = Tensor({d}, std::move(mean));
  for (auto& task : stream.tasks) {
    task.train.features = stream.normalize(task.train.features);
    task.test.features = stream.normalize(task.test.features);
  }
  return stream;
}

std::vector<Batch> batch_iter(const LabeledDataset& data, std::size_t batch_size, std::uint64_t seed,
                              std::uint64_t epoch) {
  if (batch_size == 0) throw ContractError("batch_size must be at least 1");
  std::vector<Batch> batches;
  if (data.empty()) return batches;
  Rng rng = Rng::derive(seed, 0x42415443, epoch);  // "BATC"
  auto order = rng.permutation(data.size());
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    Batch b;
    b.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
    b.features = data.features.take_rows(b.indices);
    b.labels.reserve(b.indices.size());
    for (auto i : b.indices) b.labels.push_back(data.labels[i]);
    batches.push_back(std::move(b));
  }
  return batches;
}

std::map<std::string, DatasetFiles> parse_manifest(const std::string& text, const std::filesystem::path& root) {
  std::map<std::string, DatasetFiles> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto resolve = [&root](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : root / path;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream fields(line);
    std::vector<std::string> parts;
    for (std::string f; fields >> f;) parts.push_back(f);
    if (parts.empty()) continue;
    if (parts.size() != 5) {
      throw ParseError("manifest line " + std::to_string(lineno) + ": expected name and four paths");
    }
    out[parts[0]] = DatasetFiles{resolve(parts[1]), resolve(parts[2]), resolve(parts[3]), resolve(parts[4])};
  }
  return out;
}

std::map<std::string, DatasetFiles> load_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw ConfigError("cannot open dataset manifest " + manifest.string());
  std::stringstream buf;
  buf << in.rdbuf();
  std::filesystem::path root = manifest.parent_path();
  if (const char* env = std::getenv("RECL_DATA_DIR"); env && *env) root = env;
  return parse_manifest(buf.str(), root);
}

TrainTestPair load_idx_dataset(const DatasetFiles& files) {
  auto tri = read_idx_file(files.train_images);
  auto trl = read_idx_file(files.train_labels);
  auto tei = read_idx_file(files.test_images);
  auto tel = read_idx_file(files.test_labels);
  if (!tri.is_images || !tei.is_images || trl.is_images || tel.is_images) {
    throw ParseError("dataset manifest entries are in the wrong order (images, labels, images, labels)");
  }
  return {LabeledDataset::make(std::move(tri.values), trl.labels()),
          LabeledDataset::make(std::move(tei.values), tel.labels())};
}

}  // namespace recl
