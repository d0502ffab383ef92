#include "pathseek/pyramid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>

namespace pathseek {

namespace {

constexpr int kMaxClusterCells = 16;

int isqrt_exact(int c) {
  const int r = static_cast<int>(std::lround(std::sqrt(static_cast<double>(c))));
  return r * r == c ? r : -1;
}

std::uint64_t ipow(std::uint64_t base, int exp) {
  std::uint64_t out = 1;
  for (int i = 0; i < exp; ++i) out *= base;
  return out;
}

Eigen::VectorXd gaussian_vector(std::mt19937_64& rng, int dim, double stddev) {
  std::normal_distribution<double> normal(0.0, stddev);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = normal(rng);
  return v;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

int PyramidConfig::split() const { return isqrt_exact(branching); }

int PyramidConfig::side(int scale) const {
  return coarse_grid * static_cast<int>(ipow(static_cast<std::uint64_t>(split()), scale));
}

std::uint64_t PyramidConfig::count(int scale) const {
  return static_cast<std::uint64_t>(coarse_grid) * static_cast<std::uint64_t>(coarse_grid) *
         ipow(static_cast<std::uint64_t>(branching), scale);
}

std::uint64_t PyramidConfig::offset(int scale) const {
  std::uint64_t off = 0;
  for (int s = 0; s < scale; ++s) off += count(s);
  return off;
}

std::uint64_t PyramidConfig::total_regions() const { return offset(num_scales); }

void PyramidConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("pyramid." + field + ": " + why);
  };
  if (num_scales < 2) fail("num_scales", "must be >= 2");
  if (coarse_grid < 1) fail("coarse_grid", "must be >= 1");
  if (branching < 2 || split() < 0) fail("branching", "must be a perfect square >= 4");
  if (feature_dim < 1) fail("feature_dim", "must be >= 1");
  if (num_classes < 2) fail("num_classes", "must be >= 2");
  if (!(coarse_snr >= 0.0 && coarse_snr <= 1.0)) fail("coarse_snr", "must lie in [0, 1]");
  if (!(lesion_fraction > 0.0 && lesion_fraction <= 1.0)) fail("lesion_fraction", "must lie in (0, 1]");
  if (!(noise_sigma > 0.0)) fail("noise_sigma", "must be > 0");
  if (!(feature_norm_cap > 0.0)) fail("feature_norm_cap", "must be > 0");
  if (lesion_fraction * static_cast<double>(finest_count()) < 1.0)
    fail("lesion_fraction", "leaves no finest region to plant evidence in");
}

const Region& PyramidInstance::region(RegionId id) const {
  if (id >= regions.size()) throw LookupError("unknown region id " + std::to_string(id));
  return regions[id];
}

std::vector<RegionId> PyramidInstance::regions_at(int scale) const {
  if (scale < 0 || scale >= config.num_scales) throw LookupError("unknown scale " + std::to_string(scale));
  std::vector<RegionId> ids(config.count(scale));
  const RegionId off = config.offset(scale);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = off + i;
  return ids;
}

RegionId PyramidInstance::root_of(RegionId id) const {
  const Region* r = &region(id);
  while (r->parent) r = &regions[*r->parent];
  return r->id;
}

int majority_lesion_class(const std::vector<std::int32_t>& finest_types, int num_classes) {
  std::vector<std::size_t> votes(static_cast<std::size_t>(num_classes), 0);
  for (auto t : finest_types) {
    if (is_lesion(t)) ++votes[static_cast<std::size_t>(t - kLesionBase)];
  }
  const auto best = std::max_element(votes.begin(), votes.end());  // first max wins ties
  return static_cast<int>(best - votes.begin());
}

PyramidInstance plant_instance(const PyramidConfig& config, std::uint64_t instance_seed) {
  config.validate();
  std::mt19937_64 rng(derive_seed(instance_seed, 0x706c616e74ULL));
  const int k = config.split();
  const int finest = config.num_scales - 1;
  const int grid = config.side(finest);
  const std::size_t cells = config.finest_count();

  // Non-lesion background: each coarse cell draws its own benign density.
  std::vector<std::int32_t> types(cells, static_cast<std::int32_t>(LatentType::background));
  {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int cell_side = grid / config.coarse_grid;
    std::vector<double> density(static_cast<std::size_t>(config.coarse_grid * config.coarse_grid));
    for (auto& d : density) d = 0.6 * unit(rng);
    for (int r = 0; r < grid; ++r)
      for (int c = 0; c < grid; ++c) {
        const double d = density[static_cast<std::size_t>((r / cell_side) * config.coarse_grid + c / cell_side)];
        if (unit(rng) < d) types[static_cast<std::size_t>(r * grid + c)] = static_cast<std::int32_t>(LatentType::benign);
      }
  }

  // Lesion clusters: axis-aligned boxes filled row-major.
  const auto total = static_cast<std::size_t>(
      std::max<long>(1, std::lround(config.lesion_fraction * static_cast<double>(cells))));
  std::uniform_int_distribution<int> pick_class(0, config.num_classes - 1);
  const int primary = pick_class(rng);
  // A distractor cluster of another class holds a quarter of the lesion cells.
  const bool distractor = total >= 4 && std::bernoulli_distribution(0.5)(rng);
  const std::size_t distractor_cells = distractor ? total / 4 : 0;
  const std::size_t primary_cells = total - distractor_cells;
  const std::size_t n_primary = (primary_cells + kMaxClusterCells - 1) / kMaxClusterCells;
  std::vector<std::size_t> sizes(n_primary, primary_cells / n_primary);
  for (std::size_t i = 0; i < primary_cells % n_primary; ++i) ++sizes[i];
  std::vector<int> cluster_class(n_primary, primary);
  if (distractor) {
    std::uniform_int_distribution<int> other(1, config.num_classes - 1);
    sizes.push_back(distractor_cells);
    cluster_class.push_back((primary + other(rng)) % config.num_classes);
  }
  const std::size_t n_clusters = sizes.size();

  std::vector<bool> taken(cells, false);
  auto fits = [&](int r0, int c0, int w, std::size_t s) {
    for (std::size_t i = 0; i < s; ++i) {
      const int r = r0 + static_cast<int>(i) / w, c = c0 + static_cast<int>(i) % w;
      if (r >= grid || c >= grid || taken[static_cast<std::size_t>(r * grid + c)]) return false;
    }
    return true;
  };
  for (std::size_t ci = 0; ci < n_clusters; ++ci) {
    const std::size_t s = sizes[ci];
    int w = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(s))));
    w = std::min(w, grid);
    const int h = static_cast<int>((s + static_cast<std::size_t>(w) - 1) / static_cast<std::size_t>(w));
    std::vector<std::size_t> placed;
    bool ok = false;
    if (h <= grid) {
      std::uniform_int_distribution<int> rr(0, grid - h), cc(0, grid - w);
      int r0 = 0, c0 = 0;
      for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
        r0 = rr(rng);
        c0 = cc(rng);
        ok = fits(r0, c0, w, s);
      }
      for (int r = 0; r <= grid - h && !ok; ++r)
        for (int c = 0; c <= grid - w && !ok; ++c)
          if (fits(r, c, w, s)) {
            r0 = r;
            c0 = c;
            ok = true;
          }
      if (ok)
        for (std::size_t i = 0; i < s; ++i)
          placed.push_back(static_cast<std::size_t>((r0 + static_cast<int>(i) / w) * grid + c0 + static_cast<int>(i) % w));
    }
    if (!ok) {
      // Dense configurations: take the first free cells.
      for (std::size_t cell = 0; cell < cells && placed.size() < s; ++cell)
        if (!taken[cell]) placed.push_back(cell);
    }
    for (auto cell : placed) {
      taken[cell] = true;
      types[cell] = lesion_type(cluster_class[ci]);
    }
  }

  PyramidInstance inst;
  inst.config = config;
  inst.generator_seed = instance_seed;
  inst.label = majority_lesion_class(types, config.num_classes);
  inst.regions.resize(config.total_regions());

  for (int s = 0; s < config.num_scales; ++s) {
    const int side = config.side(s);
    const RegionId off = config.offset(s);
    const int span = grid / side;  // finest cells per region side
    for (int r = 0; r < side; ++r) {
      for (int c = 0; c < side; ++c) {
        Region& reg = inst.regions[off + static_cast<RegionId>(r * side + c)];
        reg.id = off + static_cast<RegionId>(r * side + c);
        reg.scale = s;
        reg.row = r;
        reg.col = c;
        if (s > 0) {
          const int ps = config.side(s - 1);
          reg.parent = config.offset(s - 1) + static_cast<RegionId>((r / k) * ps + c / k);
        }
        if (s < finest) {
          const int cs = config.side(s + 1);
          for (int dr = 0; dr < k; ++dr)
            for (int dc = 0; dc < k; ++dc)
              reg.children.push_back(config.offset(s + 1) + static_cast<RegionId>((r * k + dr) * cs + c * k + dc));
        }
        if (s == finest) {
          reg.latent_type = types[static_cast<std::size_t>(r * grid + c)];
        } else {
          std::vector<std::int32_t> desc;
          std::size_t benign = 0;
          bool lesion = false;
          for (int fr = r * span; fr < (r + 1) * span; ++fr)
            for (int fc = c * span; fc < (c + 1) * span; ++fc) {
              const auto t = types[static_cast<std::size_t>(fr * grid + fc)];
              desc.push_back(t);
              lesion = lesion || is_lesion(t);
              benign += t == static_cast<std::int32_t>(LatentType::benign);
            }
          if (lesion) {
            reg.latent_type = lesion_type(majority_lesion_class(desc, config.num_classes));
          } else {
            reg.latent_type = static_cast<std::int32_t>(2 * benign >= desc.size() ? LatentType::benign
                                                                                   : LatentType::background);
          }
        }
      }
    }
  }
  const RegionId foff = config.offset(finest);
  for (std::size_t cell = 0; cell < cells; ++cell)
    if (is_lesion(types[cell])) inst.informative_set.push_back(foff + cell);
  return inst;
}

const std::vector<RegionId>& children_of(const PyramidInstance& instance, RegionId region) {
  return instance.region(region).children;
}

EncoderStub::EncoderStub(const PyramidConfig& config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(derive_seed(config.seed, 0x656e636f646572ULL));
  const int d = config.feature_dim;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  background_ = gaussian_vector(rng, d, sd);
  benign_ = gaussian_vector(rng, d, sd);
  lesion_common_ = gaussian_vector(rng, d, sd);
  for (int k = 0; k < config.num_classes; ++k) lesion_offsets_.push_back(gaussian_vector(rng, d, sd));
}

double EncoderStub::mixing(int scale) const {
  const int depth = config_.num_scales - 1 - scale;
  return (1.0 - config_.coarse_snr) * static_cast<double>(depth) / static_cast<double>(config_.num_scales - 1);
}

Eigen::VectorXd EncoderStub::centroid(std::int32_t latent_type, int scale) const {
  if (latent_type == static_cast<std::int32_t>(LatentType::background)) return background_;
  if (latent_type == static_cast<std::int32_t>(LatentType::benign)) return benign_;
  const int klass = latent_type - kLesionBase;
  if (klass < 0 || klass >= config_.num_classes) throw LookupError("unknown latent type");
  return lesion_common_ + (1.0 - mixing(scale)) * lesion_offsets_[static_cast<std::size_t>(klass)];
}

Eigen::VectorXd EncoderStub::encode(const PyramidInstance& instance, const Region& region) const {
  std::mt19937_64 rng(derive_seed(instance.generator_seed, region.id + 0x6e6f697365ULL));
  const double sd = config_.noise_sigma / std::sqrt(static_cast<double>(config_.feature_dim));
  Eigen::VectorXd f = centroid(region.latent_type, region.scale) + gaussian_vector(rng, config_.feature_dim, sd);
  const double norm = f.norm();
  if (norm > config_.feature_norm_cap) f *= config_.feature_norm_cap / norm;
  return f;
}

const Eigen::VectorXd* FeatureCache::find(int scale, RegionId id) const {
  auto it = entries_.find({scale, id});
  return it == entries_.end() ? nullptr : &it->second;
}

void FeatureCache::insert(int scale, RegionId id, Eigen::VectorXd feature) {
  if (scale < 0) throw LookupError("negative scale");
  if (static_cast<std::size_t>(scale) >= calls_.size()) calls_.resize(static_cast<std::size_t>(scale) + 1, 0);
  auto [it, fresh] = entries_.emplace(std::make_pair(scale, id), std::move(feature));
  if (fresh) ++calls_[static_cast<std::size_t>(scale)];
}

std::uint64_t FeatureCache::total_calls() const {
  std::uint64_t t = 0;
  for (auto c : calls_) t += c;
  return t;
}

void FeatureCache::merge(const FeatureCache& other) {
  if (other.calls_.size() > calls_.size()) calls_.resize(other.calls_.size(), 0);
  for (std::size_t s = 0; s < other.calls_.size(); ++s) calls_[s] += other.calls_[s];
  for (const auto& [key, value] : other.entries_) entries_.emplace(key, value);
}

const Eigen::VectorXd& encode_region(const PyramidInstance& instance, int scale, RegionId region,
                                     FeatureCache& cache, const EncoderStub& stub) {
  const Region& reg = instance.region(region);
  if (reg.scale != scale)
    throw LookupError("region " + std::to_string(region) + " is not at scale " + std::to_string(scale));
  if (const auto* hit = cache.find(scale, region)) return *hit;
  cache.insert(scale, region, stub.encode(instance, reg));
  return *cache.find(scale, region);
}

namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void write_raw(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("feature cache: truncated file");
  return v;
}

}  // namespace

void save_feature_cache(const FeatureCache& cache, int feature_dim, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out.write("PSFC", 4);
  write_raw<std::uint32_t>(out, 1);
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(feature_dim));
  for (const auto& [key, value] : cache.entries()) {
    if (value.size() != feature_dim) throw std::invalid_argument("feature cache: dimension mismatch");
    write_raw<std::uint16_t>(out, static_cast<std::uint16_t>(key.first));
    write_raw<std::uint64_t>(out, key.second);
    for (Eigen::Index i = 0; i < value.size(); ++i) write_raw<float>(out, static_cast<float>(value(i)));
  }
}

FeatureCache load_feature_cache(const std::filesystem::path& path, int num_scales, int* feature_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "PSFC") throw std::runtime_error("feature cache: bad magic");
  if (read_raw<std::uint32_t>(in) != 1) throw std::runtime_error("feature cache: unsupported version");
  const auto dim = static_cast<int>(read_raw<std::uint32_t>(in));
  if (feature_dim) *feature_dim = dim;
  FeatureCache cache(num_scales);
  while (in.peek() != std::char_traits<char>::eof()) {
    const int scale = read_raw<std::uint16_t>(in);
    const auto id = read_raw<std::uint64_t>(in);
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v(i) = read_raw<float>(in);
    cache.insert(scale, id, std::move(v));
  }
  return cache;
}

}  // namespace pathseek
