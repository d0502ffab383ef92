#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "pathseek/json.hpp"
#include "pathseek/pyramid.hpp"

namespace pathseek {

using nlohmann::json;

void to_json(json& j, const PyramidConfig& c) {
  j = json{{"num_scales", c.num_scales},   {"coarse_grid", c.coarse_grid},
           {"branching", c.branching},     {"feature_dim", c.feature_dim},
           {"num_classes", c.num_classes}, {"coarse_snr", c.coarse_snr},
           {"lesion_fraction", c.lesion_fraction}, {"noise_sigma", c.noise_sigma},
           {"feature_norm_cap", c.feature_norm_cap}, {"seed", c.seed}};
}

void from_json(const json& j, PyramidConfig& c) {
  j.at("num_scales").get_to(c.num_scales);
  j.at("coarse_grid").get_to(c.coarse_grid);
  j.at("branching").get_to(c.branching);
  j.at("feature_dim").get_to(c.feature_dim);
  j.at("num_classes").get_to(c.num_classes);
  j.at("coarse_snr").get_to(c.coarse_snr);
  j.at("lesion_fraction").get_to(c.lesion_fraction);
  j.at("noise_sigma").get_to(c.noise_sigma);
  j.at("feature_norm_cap").get_to(c.feature_norm_cap);
  j.at("seed").get_to(c.seed);
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

namespace {

json manifest_body(const DatasetManifest& m) {
  json instances = json::array();
  for (std::size_t i = 0; i < m.seeds.size(); ++i)
    instances.push_back(json{{"id", i}, {"seed", m.seeds[i]}, {"label", m.labels.at(i)}});
  return json{{"version", m.version},
              {"config", m.config},
              {"splits", {{"train", m.train}, {"val", m.val}, {"test", m.test}}},
              {"instances", instances}};
}

}  // namespace

std::string manifest_checksum(const DatasetManifest& manifest) { return sha256_hex(manifest_body(manifest).dump()); }

DatasetManifest make_manifest(const PyramidConfig& config, std::size_t count, double train_fraction,
                              double val_fraction) {
  config.validate();
  if (train_fraction < 0 || val_fraction < 0 || train_fraction + val_fraction > 1.0)
    throw std::invalid_argument("dataset: split fractions must be non-negative and sum to <= 1");
  DatasetManifest m;
  m.config = config;
  for (std::size_t i = 0; i < count; ++i) {
    m.seeds.push_back(derive_seed(config.seed, 0x1000 + i));
    m.labels.push_back(plant_instance(config, m.seeds.back()).label);
  }
  std::vector<std::uint64_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  std::mt19937_64 rng(derive_seed(config.seed, 0x73706c6974ULL));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(count)));
  const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(count)));
  m.train.assign(order.begin(), order.begin() + static_cast<long>(n_train));
  m.val.assign(order.begin() + static_cast<long>(n_train), order.begin() + static_cast<long>(n_train + n_val));
  m.test.assign(order.begin() + static_cast<long>(n_train + n_val), order.end());
  std::sort(m.train.begin(), m.train.end());
  std::sort(m.val.begin(), m.val.end());
  std::sort(m.test.begin(), m.test.end());
  m.checksum = manifest_checksum(m);
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  json doc = manifest_body(manifest);
  doc["checksum"] = manifest_checksum(manifest);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << doc.dump(2) << '\n';
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError("cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ManifestError(std::string("malformed manifest: ") + e.what());
  }
  DatasetManifest m;
  try {
    m.version = doc.at("version").get<std::string>();
    if (m.version != DatasetManifest::kVersion) throw ManifestError("manifest version mismatch: " + m.version);
    m.config = doc.at("config").get<PyramidConfig>();
    const auto& splits = doc.at("splits");
    m.train = splits.at("train").get<std::vector<std::uint64_t>>();
    m.val = splits.at("val").get<std::vector<std::uint64_t>>();
    m.test = splits.at("test").get<std::vector<std::uint64_t>>();
    for (const auto& inst : doc.at("instances")) {
      if (inst.at("id").get<std::uint64_t>() != m.seeds.size()) throw ManifestError("manifest instances out of order");
      m.seeds.push_back(inst.at("seed").get<std::uint64_t>());
      m.labels.push_back(inst.at("label").get<int>());
    }
    m.checksum = doc.at("checksum").get<std::string>();
  } catch (const json::exception& e) {
    throw ManifestError(std::string("malformed manifest: ") + e.what());
  }
  if (manifest_checksum(m) != m.checksum) throw ManifestError("manifest checksum mismatch");
  std::vector<std::uint64_t> all;
  for (const auto* split : {&m.train, &m.val, &m.test}) all.insert(all.end(), split->begin(), split->end());
  std::sort(all.begin(), all.end());
  if (std::adjacent_find(all.begin(), all.end()) != all.end()) throw ManifestError("manifest splits overlap");
  if (!all.empty() && all.back() >= m.seeds.size()) throw ManifestError("manifest split references unknown instance");
  return m;
}

std::vector<PyramidInstance> instantiate(const DatasetManifest& manifest, const std::vector<std::uint64_t>& ids) {
  std::vector<PyramidInstance> out;
  out.reserve(ids.size());
  for (auto id : ids) {
    if (id >= manifest.seeds.size()) throw ManifestError("unknown instance id " + std::to_string(id));
    out.push_back(plant_instance(manifest.config, manifest.seeds[id]));
    if (out.back().label != manifest.labels[id])
      throw ManifestError("instance " + std::to_string(id) + " regenerated with a different label");
  }
  return out;
}

}  // namespace pathseek
