#pragma once

// Synthetic multi-scale region pyramids with planted fine-scale evidence.
//
// Scale 0 is the coarsest level.  Region ids are dense and scale-major: the
// regions of scale s occupy [offset(s), offset(s) + count(s)), laid out
// row-major on a side(s) x side(s) grid.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pathseek {

using RegionId = std::uint64_t;

struct PyramidConfig {
  int num_scales = 3;
  int coarse_grid = 8;
  int branching = 4;
  int feature_dim = 32;
  int num_classes = 3;
  double coarse_snr = 0.3;
  double lesion_fraction = 0.03;
  double noise_sigma = 1.0;
  // Radial cap C_h on encoded feature norms.
  double feature_norm_cap = 6.0;
  std::uint64_t seed = 1;

  // Children per side of a region, sqrt(branching).
  int split() const;
  int side(int scale) const;
  std::uint64_t count(int scale) const;
  std::uint64_t offset(int scale) const;
  std::uint64_t total_regions() const;
  std::uint64_t finest_count() const { return count(num_scales - 1); }

  // Throws std::invalid_argument naming the offending field.
  void validate() const;

  bool operator==(const PyramidConfig&) const = default;
};

// Latent tissue types.  Values >= kLesionBase are lesion types; lesion type k
// has value kLesionBase + k and votes for class k.
enum class LatentType : std::int32_t { background = 0, benign = 1 };
inline constexpr std::int32_t kLesionBase = 2;

inline bool is_lesion(std::int32_t type) { return type >= kLesionBase; }
inline std::int32_t lesion_type(int klass) { return kLesionBase + klass; }

struct Region {
  RegionId id = 0;
  int scale = 0;
  int row = 0;
  int col = 0;
  std::optional<RegionId> parent;
  std::vector<RegionId> children;
  std::int32_t latent_type = 0;
};

struct PyramidInstance {
  PyramidConfig config;
  std::vector<Region> regions;  // indexed by id
  int label = 0;
  std::vector<RegionId> informative_set;  // sorted finest-scale ids
  std::uint64_t generator_seed = 0;

  const Region& region(RegionId id) const;
  std::vector<RegionId> regions_at(int scale) const;
  // Scale-0 ancestor of any region.
  RegionId root_of(RegionId id) const;
};

class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

PyramidInstance plant_instance(const PyramidConfig& config, std::uint64_t instance_seed);

const std::vector<RegionId>& children_of(const PyramidInstance& instance, RegionId region);

// Majority lesion type with lowest-index ties; the label rule.
int majority_lesion_class(const std::vector<std::int32_t>& finest_types, int num_classes);

// Fixed, non-learnable region encoder.  Type embeddings are drawn once from
// the config seed; lesion embeddings share a common centroid and their
// type-specific offsets shrink toward it at coarse scales by
//   (1 - coarse_snr) * (num_scales - 1 - scale) / (num_scales - 1).
class EncoderStub {
 public:
  explicit EncoderStub(const PyramidConfig& config);

  const PyramidConfig& config() const { return config_; }

  // Noise-free embedding of a latent type at a scale.
  Eigen::VectorXd centroid(std::int32_t latent_type, int scale) const;
  double mixing(int scale) const;

  // Deterministic per (instance, region).
  Eigen::VectorXd encode(const PyramidInstance& instance, const Region& region) const;

 private:
  PyramidConfig config_;
  Eigen::VectorXd background_;
  Eigen::VectorXd benign_;
  Eigen::VectorXd lesion_common_;
  std::vector<Eigen::VectorXd> lesion_offsets_;
};

class FeatureCache {
 public:
  explicit FeatureCache(int num_scales = 0) : calls_(static_cast<std::size_t>(num_scales), 0) {}

  bool contains(int scale, RegionId id) const { return entries_.count({scale, id}) != 0; }
  const Eigen::VectorXd* find(int scale, RegionId id) const;
  void insert(int scale, RegionId id, Eigen::VectorXd feature);

  const std::vector<std::uint64_t>& encoder_calls() const { return calls_; }
  std::uint64_t total_calls() const;
  std::size_t size() const { return entries_.size(); }

  // Adds another cache's entries and counters (per-worker caches).
  void merge(const FeatureCache& other);

  const std::map<std::pair<int, RegionId>, Eigen::VectorXd>& entries() const { return entries_; }

 private:
  std::map<std::pair<int, RegionId>, Eigen::VectorXd> entries_;
  std::vector<std::uint64_t> calls_;
};

const Eigen::VectorXd& encode_region(const PyramidInstance& instance, int scale, RegionId region,
                                     FeatureCache& cache, const EncoderStub& stub);

// Flat binary cache file: "PSFC", u32 version, u32 d_in, then records of
// (u16 scale, u64 region id, d_in little-endian f32).
void save_feature_cache(const FeatureCache& cache, int feature_dim, const std::filesystem::path& path);
FeatureCache load_feature_cache(const std::filesystem::path& path, int num_scales, int* feature_dim = nullptr);

struct DatasetManifest {
  static constexpr const char* kVersion = "pathseek-manifest/1";

  std::string version = kVersion;
  PyramidConfig config;
  std::vector<std::uint64_t> train, val, test;  // instance ids
  std::vector<std::uint64_t> seeds;             // per instance id
  std::vector<int> labels;                      // per instance id
  std::string checksum;

  bool operator==(const DatasetManifest&) const = default;
};

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// Generates `count` instances and splits them by the given fractions in
// instance-id order after a seeded shuffle.
DatasetManifest make_manifest(const PyramidConfig& config, std::size_t count, double train_fraction,
                              double val_fraction);

std::string manifest_checksum(const DatasetManifest& manifest);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

std::vector<PyramidInstance> instantiate(const DatasetManifest& manifest, const std::vector<std::uint64_t>& ids);

}  // namespace pathseek
