#include "fedbio/noisylabel/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

namespace fedbio {
namespace {

constexpr std::uint64_t kMeanStream = 0x4e00;
constexpr std::uint64_t kSplitStream = 0x4e01;
constexpr std::uint64_t kNoiseRatioStream = 0x4e02;
constexpr std::uint64_t kNoiseClientStream = 0x4e03;

Matrix class_means(const BlobConfig& cfg) {
  const Index p = cfg.informative_dims;
  Matrix means = Matrix::Zero(cfg.classes, p);
  if (p >= cfg.classes) {
    for (int c = 0; c < cfg.classes; ++c) means(c, c) = 1.0;
  } else if (p == 2) {
    for (int c = 0; c < cfg.classes; ++c) {
      const double angle = 2.0 * std::numbers::pi * c / cfg.classes;
      means(c, 0) = std::cos(angle);
      means(c, 1) = std::sin(angle);
    }
  } else {
    std::mt19937_64 rng(derive_seed(cfg.seed, kMeanStream));
    std::normal_distribution<double> n01;
    for (int c = 0; c < cfg.classes; ++c) {
      for (Index j = 0; j < p; ++j) means(c, j) = n01(rng);
      means.row(c).normalize();
    }
  }
  return means * cfg.separation;
}

LabeledSplit draw_split(const BlobConfig& cfg, const Matrix& means, Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  LabeledSplit s;
  s.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) s.labels[static_cast<std::size_t>(i)] = static_cast<int>(i % cfg.classes);
  std::shuffle(s.labels.begin(), s.labels.end(), rng);
  const Index p = cfg.informative_dims + cfg.noise_dims;
  Vector scale(cfg.informative_dims);
  for (Index j = 0; j < cfg.informative_dims; ++j) {
    const double t = cfg.informative_dims > 1 ? static_cast<double>(j) / static_cast<double>(cfg.informative_dims - 1) : 0.0;
    scale[j] = std::pow(cfg.anisotropy, -t);
  }
  s.features.resize(n, p);
  for (Index i = 0; i < n; ++i) {
    const int c = s.labels[static_cast<std::size_t>(i)];
    for (Index j = 0; j < p; ++j) {
      const bool informative = j < cfg.informative_dims;
      s.features(i, j) = informative ? scale[j] * (means(c, j) + cfg.spread * n01(rng)) : cfg.noise_spread * n01(rng);
    }
  }
  return s;
}

}  // namespace

Index LabeledDataset::shard_offset(Index client) const {
  require(client >= 0 && client < num_clients(), "shard_offset: client out of range");
  return std::accumulate(shard_sizes.begin(), shard_sizes.begin() + client, Index{0});
}

Index LabeledDataset::flip_count() const { return std::count(flipped.begin(), flipped.end(), true); }

void LabeledDataset::check() const {
  require(classes >= 1, "dataset: need at least one class");
  require(!shard_sizes.empty(), "dataset: need at least one client shard");
  const Index n = std::accumulate(shard_sizes.begin(), shard_sizes.end(), Index{0});
  require(n == train.size(), "dataset: shard sizes must sum to the training size");
  require(std::all_of(shard_sizes.begin(), shard_sizes.end(), [](Index s) { return s >= 1; }),
          "dataset: every shard needs at least one sample");
  require(static_cast<Index>(train.labels.size()) == n && static_cast<Index>(clean_labels.size()) == n &&
              static_cast<Index>(flipped.size()) == n,
          "dataset: label arrays must match the training size");
  require(validation.size() >= 1, "dataset: validation set is empty");
  require(validation.features.cols() == train.features.cols(), "dataset: validation feature dimension mismatch");
  require(static_cast<Index>(validation.labels.size()) == validation.size(), "dataset: validation labels mismatch");
  auto in_range = [&](const std::vector<int>& labels) {
    return std::all_of(labels.begin(), labels.end(), [&](int y) { return y >= 0 && y < classes; });
  };
  require(in_range(train.labels) && in_range(validation.labels) && in_range(test.labels),
          "dataset: label out of range");
}

LabeledDataset make_blobs(const BlobConfig& cfg) {
  if (cfg.clients < 1 || cfg.samples_per_client < 1 || cfg.validation_samples < 1 || cfg.test_samples < 0) {
    throw ConfigError("blobs: client, shard and validation sizes must be positive");
  }
  if (cfg.classes < 2) throw ConfigError("blobs: need at least two classes");
  if (cfg.informative_dims < 1 || cfg.noise_dims < 0) throw ConfigError("blobs: invalid dimensions");
  if (!(cfg.spread > 0.0) || !(cfg.noise_spread > 0.0)) throw ConfigError("blobs: spreads must be positive");
  if (!(cfg.anisotropy >= 1.0)) throw ConfigError("blobs: anisotropy must be at least 1");
  const Matrix means = class_means(cfg);
  LabeledDataset data;
  data.classes = cfg.classes;
  data.train = draw_split(cfg, means, cfg.clients * cfg.samples_per_client, derive_seed(cfg.seed, kSplitStream, 0));
  data.validation = draw_split(cfg, means, cfg.validation_samples, derive_seed(cfg.seed, kSplitStream, 1));
  data.test = draw_split(cfg, means, cfg.test_samples, derive_seed(cfg.seed, kSplitStream, 2));
  data.clean_labels = data.train.labels;
  data.flipped.assign(data.clean_labels.size(), false);
  data.shard_sizes.assign(static_cast<std::size_t>(cfg.clients), cfg.samples_per_client);
  return data;
}

void validate(const NoiseSpec& spec) {
  auto unit = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (!unit(spec.rho)) throw ConfigError("noise: rho must be in [0, 1]");
  if (!unit(spec.rho_low) || !unit(spec.rho_high) || spec.rho_low > spec.rho_high) {
    throw ConfigError("noise: need 0 <= rho_low <= rho_high <= 1");
  }
}

std::vector<double> client_noise_ratios(const NoiseSpec& spec, Index clients) {
  validate(spec);
  std::vector<double> out(static_cast<std::size_t>(clients), spec.rho);
  if (spec.mode == NoiseMode::kNonIid) {
    std::mt19937_64 rng(derive_seed(spec.seed, kNoiseRatioStream));
    std::uniform_real_distribution<double> u(spec.rho_low, spec.rho_high);
    for (auto& r : out) r = u(rng);
  }
  return out;
}

LabeledDataset inject_label_noise(const LabeledDataset& clean, const NoiseSpec& spec) {
  clean.check();
  const auto ratios = client_noise_ratios(spec, clean.num_clients());
  const bool any = std::any_of(ratios.begin(), ratios.end(), [](double r) { return r > 0.0; });
  if (any && clean.classes < 2) throw ContractViolation("inject_label_noise: cannot flip labels with a single class");
  LabeledDataset out = clean;
  Index offset = 0;
  for (Index m = 0; m < clean.num_clients(); ++m) {
    const Index n = clean.shard_sizes[static_cast<std::size_t>(m)];
    const Index flips = static_cast<Index>(std::ceil(ratios[static_cast<std::size_t>(m)] * static_cast<double>(n) - 1e-9));
    std::mt19937_64 rng(derive_seed(spec.seed, kNoiseClientStream, static_cast<std::uint64_t>(m)));
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<int> shift(1, clean.classes - 1);
    for (Index t = 0; t < flips; ++t) {
      const auto j = static_cast<std::size_t>(offset + order[static_cast<std::size_t>(t)]);
      out.train.labels[j] = (out.train.labels[j] + shift(rng)) % clean.classes;
      out.flipped[j] = out.train.labels[j] != out.clean_labels[j];
    }
    offset += n;
  }
  return out;
}

LabeledDataset plant_flips(const LabeledDataset& clean, const std::vector<Index>& indices) {
  clean.check();
  if (!indices.empty() && clean.classes < 2) throw ContractViolation("plant_flips: cannot flip labels with a single class");
  LabeledDataset out = clean;
  for (Index i : indices) {
    require(i >= 0 && i < clean.train.size(), "plant_flips: index out of range");
    const auto j = static_cast<std::size_t>(i);
    require(!out.flipped[j], "plant_flips: index listed twice");
    out.train.labels[j] = (out.train.labels[j] + 1) % clean.classes;
    out.flipped[j] = true;
  }
  return out;
}

void write_split_csv(const std::filesystem::path& path, const LabeledSplit& split) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.precision(17);
  for (Index j = 0; j < split.features.cols(); ++j) os << 'f' << j << ',';
  os << "label\n";
  for (Index i = 0; i < split.size(); ++i) {
    for (Index j = 0; j < split.features.cols(); ++j) os << split.features(i, j) << ',';
    os << split.labels[static_cast<std::size_t>(i)] << '\n';
  }
}

LabeledSplit read_split_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open dataset " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("dataset " + path.string() + " is empty");
  const auto columns = static_cast<Index>(std::count(line.begin(), line.end(), ',') + 1);
  if (columns < 2) throw ConfigError("dataset " + path.string() + " needs feature columns and a label column");
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (used != cell.size() && cell.find_first_not_of(" \r", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (static_cast<Index>(row.size()) != columns) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(columns) + " columns");
    }
    const double label = row.back();
    if (label != std::floor(label) || label < 0) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": label must be a non-negative integer");
    }
    labels.push_back(static_cast<int>(label));
    row.pop_back();
    rows.push_back(std::move(row));
  }
  LabeledSplit s;
  s.features.resize(static_cast<Index>(rows.size()), columns - 1);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Index j = 0; j < columns - 1; ++j) s.features(static_cast<Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  s.labels = std::move(labels);
  return s;
}

std::string flip_mask_json(const LabeledDataset& data) {
  nlohmann::json j;
  std::vector<Index> idx;
  for (std::size_t i = 0; i < data.flipped.size(); ++i)
    if (data.flipped[i]) idx.push_back(static_cast<Index>(i));
  j["flipped"] = idx;
  j["clean_labels"] = data.clean_labels;
  j["noisy_labels"] = data.train.labels;
  j["shard_sizes"] = data.shard_sizes;
  return j.dump(2) + "\n";
}

}  // namespace fedbio
