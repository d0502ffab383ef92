#pragma once

// Learnable tensors of the reasoning engine and their checkpoint format.

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <map>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pathseek/ad.hpp"
#include "pathseek/pyramid.hpp"

namespace pathseek {

struct ModelConfig {
  int latent_dim = 64;       // D
  int input_dim = 32;        // d_in
  int history_len = 8;       // M
  int memory_hidden = 16;    // per-neuron MLP width
  int synapse_depth = 2;
  int sync_out = 32;         // output synchronisation pairs
  int sync_action = 32;      // action synchronisation pairs
  int heads = 4;
  int head_dim = 8;
  int num_classes = 3;
  int fusion_hidden = 32;
  int fusion_depth = 2;
  double dropout = 0.05;
  // Scale attention logits by 1/sqrt(latent_dim) instead of 1/sqrt(head_dim).
  bool literal_latent_scaling = false;
  std::uint64_t seed = 1;

  int query_dim() const { return heads * head_dim; }

  void validate() const {
    auto fail = [](const std::string& f, const std::string& why) {
      throw std::invalid_argument("model." + f + ": " + why);
    };
    if (latent_dim < 2) fail("latent_dim", "must be >= 2");
    if (input_dim < 1) fail("input_dim", "must be >= 1");
    if (history_len < 1) fail("history_len", "must be >= 1");
    if (memory_hidden < 1) fail("memory_hidden", "must be >= 1");
    if (synapse_depth < 1) fail("synapse_depth", "must be >= 1");
    const long max_pairs = static_cast<long>(latent_dim) * (latent_dim - 1) / 2;
    if (sync_out < 1 || sync_out > max_pairs) fail("sync_out", "must lie in [1, D(D-1)/2]");
    if (sync_action < 1 || sync_action > max_pairs) fail("sync_action", "must lie in [1, D(D-1)/2]");
    if (heads < 1) fail("heads", "must be >= 1");
    if (head_dim < 1) fail("head_dim", "must be >= 1");
    if (num_classes < 2) fail("num_classes", "must be >= 2");
    if (fusion_depth < 1) fail("fusion_depth", "must be >= 1");
    if (fusion_depth > 1 && fusion_hidden < 1) fail("fusion_hidden", "must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout", "must lie in [0, 1)");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"latent_dim", c.latent_dim},       {"input_dim", c.input_dim},
                     {"history_len", c.history_len},     {"memory_hidden", c.memory_hidden},
                     {"synapse_depth", c.synapse_depth}, {"sync_out", c.sync_out},
                     {"sync_action", c.sync_action},     {"heads", c.heads},
                     {"head_dim", c.head_dim},           {"num_classes", c.num_classes},
                     {"fusion_hidden", c.fusion_hidden}, {"fusion_depth", c.fusion_depth},
                     {"dropout", c.dropout},             {"literal_latent_scaling", c.literal_latent_scaling},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("latent_dim").get_to(c.latent_dim);
  j.at("input_dim").get_to(c.input_dim);
  j.at("history_len").get_to(c.history_len);
  j.at("memory_hidden").get_to(c.memory_hidden);
  j.at("synapse_depth").get_to(c.synapse_depth);
  j.at("sync_out").get_to(c.sync_out);
  j.at("sync_action").get_to(c.sync_action);
  j.at("heads").get_to(c.heads);
  j.at("head_dim").get_to(c.head_dim);
  j.at("num_classes").get_to(c.num_classes);
  j.at("fusion_hidden").get_to(c.fusion_hidden);
  j.at("fusion_depth").get_to(c.fusion_depth);
  j.at("dropout").get_to(c.dropout);
  j.at("literal_latent_scaling").get_to(c.literal_latent_scaling);
  j.at("seed").get_to(c.seed);
}

// The trainable tensor set, generic over storage so the same layout serves
// values (Mat), tape handles (Var) and optimiser moments.
template <typename T>
struct Tensors {
  T start_e;
  std::vector<T> synapse_w, synapse_b;            // depth layers
  std::vector<T> synapse_ln_gain, synapse_ln_bias;  // depth - 1 norms
  T memory_w1;  // (D * hidden) x M, neuron d owns rows [d*hidden, (d+1)*hidden)
  T memory_b1;  // D x hidden
  T memory_w2;  // D x hidden
  T memory_b2;  // D
  T decay_out, decay_action;  // raw r = raw^2
  T output_w, output_b;
  T query_w, query_b;
  T key_w, key_b, value_w, value_b, attn_out_w, attn_out_b;
  std::vector<T> fusion_w, fusion_b;

  template <typename Self, typename F>
  static void visit_impl(Self& self, F&& f) {
    f("start_e", self.start_e);
    for (std::size_t l = 0; l < self.synapse_w.size(); ++l) {
      if (l > 0) {
        f("synapse.ln" + std::to_string(l) + ".gain", self.synapse_ln_gain[l - 1]);
        f("synapse.ln" + std::to_string(l) + ".bias", self.synapse_ln_bias[l - 1]);
      }
      f("synapse.w" + std::to_string(l), self.synapse_w[l]);
      f("synapse.b" + std::to_string(l), self.synapse_b[l]);
    }
    f("memory.w1", self.memory_w1);
    f("memory.b1", self.memory_b1);
    f("memory.w2", self.memory_w2);
    f("memory.b2", self.memory_b2);
    f("decay.out", self.decay_out);
    f("decay.action", self.decay_action);
    f("output.w", self.output_w);
    f("output.b", self.output_b);
    f("query.w", self.query_w);
    f("query.b", self.query_b);
    f("attn.key.w", self.key_w);
    f("attn.key.b", self.key_b);
    f("attn.value.w", self.value_w);
    f("attn.value.b", self.value_b);
    f("attn.out.w", self.attn_out_w);
    f("attn.out.b", self.attn_out_b);
    for (std::size_t l = 0; l < self.fusion_w.size(); ++l) {
      f("fusion.w" + std::to_string(l), self.fusion_w[l]);
      f("fusion.b" + std::to_string(l), self.fusion_b[l]);
    }
  }

  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, std::forward<F>(f));
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, std::forward<F>(f));
  }

  // Same layout with every tensor replaced by fn(name, tensor).
  template <typename U, typename F>
  Tensors<U> map(F&& fn) const {
    Tensors<U> out;
    out.synapse_w.resize(synapse_w.size());
    out.synapse_b.resize(synapse_b.size());
    out.synapse_ln_gain.resize(synapse_ln_gain.size());
    out.synapse_ln_bias.resize(synapse_ln_bias.size());
    out.fusion_w.resize(fusion_w.size());
    out.fusion_b.resize(fusion_b.size());
    std::vector<U*> slots;
    out.visit([&](const std::string&, U& u) { slots.push_back(&u); });
    std::size_t i = 0;
    visit([&](const std::string& name, const T& t) { *slots[i++] = fn(name, t); });
    return out;
  }
};

using Pair = std::pair<int, int>;

template <typename Scalar>
struct ModelParams {
  ModelConfig config;
  std::vector<Pair> pairs_out;
  std::vector<Pair> pairs_action;
  Tensors<Mat<Scalar>> w;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    w.visit([&](const std::string&, const Mat<Scalar>& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  template <typename Other>
  ModelParams<Other> cast() const {
    ModelParams<Other> out;
    out.config = config;
    out.pairs_out = pairs_out;
    out.pairs_action = pairs_action;
    out.w = w.template map<Mat<Other>>([](const std::string&, const Mat<Scalar>& m) { return Mat<Other>(m.template cast<Other>()); });
    return out;
  }
};

// Distinct unordered pairs (i, j), i != j, drawn uniformly without replacement.
inline std::vector<Pair> sample_pairs(int neurons, int count, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, neurons - 1);
  std::set<Pair> seen;
  std::vector<Pair> out;
  while (static_cast<int>(out.size()) < count) {
    int i = pick(rng), j = pick(rng);
    if (i == j) continue;
    if (i > j) std::swap(i, j);
    if (seen.insert({i, j}).second) out.emplace_back(i, j);
  }
  return out;
}

template <typename Scalar>
ModelParams<Scalar> init_params(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(derive_seed(config.seed, 0x706172616d73ULL));
  auto uniform = [&](Eigen::Index r, Eigen::Index c, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Mat<Scalar> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = static_cast<Scalar>(u(rng));
    return m;
  };
  auto linear = [&](int out, int in, Mat<Scalar>& w, Mat<Scalar>& b) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    w = uniform(out, in, bound);
    b = uniform(out, 1, bound);
  };

  const int D = config.latent_dim, M = config.history_len, H = config.memory_hidden;
  ModelParams<Scalar> p;
  p.config = config;
  p.pairs_out = sample_pairs(D, config.sync_out, rng);
  p.pairs_action = sample_pairs(D, config.sync_action, rng);

  auto& w = p.w;
  w.start_e = uniform(D, 1, 1.0 / std::sqrt(static_cast<double>(D)));
  w.synapse_w.resize(static_cast<std::size_t>(config.synapse_depth));
  w.synapse_b.resize(static_cast<std::size_t>(config.synapse_depth));
  linear(D, D + config.input_dim, w.synapse_w[0], w.synapse_b[0]);
  for (int l = 1; l < config.synapse_depth; ++l) {
    w.synapse_ln_gain.push_back(Mat<Scalar>::Ones(D, 1));
    w.synapse_ln_bias.push_back(Mat<Scalar>::Zero(D, 1));
    linear(D, D, w.synapse_w[static_cast<std::size_t>(l)], w.synapse_b[static_cast<std::size_t>(l)]);
  }
  const double bm = 1.0 / std::sqrt(static_cast<double>(M));
  w.memory_w1 = uniform(static_cast<Eigen::Index>(D) * H, M, bm);
  w.memory_b1 = uniform(D, H, bm);
  w.memory_w2 = uniform(D, H, 1.0 / std::sqrt(static_cast<double>(H)));
  w.memory_b2 = Mat<Scalar>::Zero(D, 1);
  {
    std::uniform_real_distribution<double> u(0.0, 0.5);
    w.decay_out.resize(config.sync_out, 1);
    w.decay_action.resize(config.sync_action, 1);
    for (Eigen::Index i = 0; i < w.decay_out.size(); ++i) w.decay_out(i) = static_cast<Scalar>(u(rng));
    for (Eigen::Index i = 0; i < w.decay_action.size(); ++i) w.decay_action(i) = static_cast<Scalar>(u(rng));
  }
  linear(config.num_classes, config.sync_out, w.output_w, w.output_b);
  linear(config.query_dim(), config.sync_action, w.query_w, w.query_b);
  linear(config.query_dim(), config.input_dim, w.key_w, w.key_b);
  linear(config.query_dim(), config.input_dim, w.value_w, w.value_b);
  linear(config.input_dim, config.query_dim(), w.attn_out_w, w.attn_out_b);
  w.fusion_w.resize(static_cast<std::size_t>(config.fusion_depth));
  w.fusion_b.resize(static_cast<std::size_t>(config.fusion_depth));
  int in = 2 * config.sync_out;
  for (int l = 0; l < config.fusion_depth; ++l) {
    const int out = l + 1 == config.fusion_depth ? config.num_classes : config.fusion_hidden;
    linear(out, in, w.fusion_w[static_cast<std::size_t>(l)], w.fusion_b[static_cast<std::size_t>(l)]);
    in = out;
  }
  return p;
}

template <typename Scalar>
ModelParams<Scalar> zeros_like(const ModelParams<Scalar>& p) {
  ModelParams<Scalar> z = p;
  z.w.visit([](const std::string&, Mat<Scalar>& m) { m.setZero(); });
  return z;
}

// Overwrites every tensor with U(-amplitude, amplitude) draws.
template <typename Scalar>
void randomize_params(ModelParams<Scalar>& p, std::uint64_t seed, double amplitude) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-amplitude, amplitude);
  p.w.visit([&](const std::string&, Mat<Scalar>& m) {
    for (Eigen::Index k = 0; k < m.size(); ++k) m(k) = static_cast<Scalar>(u(rng));
  });
}

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace checkpoint_detail {
static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CheckpointError("checkpoint: truncated file");
  return v;
}
inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw CheckpointError("checkpoint: truncated string");
  return s;
}
inline void put_tensor(std::ostream& out, const std::string& name, const Eigen::MatrixXd& m) {
  put_string(out, name);
  put<std::uint32_t>(out, 2);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(out, m(r, c));
}
inline Eigen::MatrixXd pairs_tensor(const std::vector<Pair>& pairs) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(pairs.size()), 2);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    m(static_cast<Eigen::Index>(i), 0) = pairs[i].first;
    m(static_cast<Eigen::Index>(i), 1) = pairs[i].second;
  }
  return m;
}
}  // namespace checkpoint_detail

// "PSPM", u32 version, config echo (length-prefixed JSON), u32 tensor count,
// then named tensors: length-prefixed UTF-8 name, u32 rank, u64 dims,
// row-major little-endian f64 data.
template <typename Scalar>
void save_checkpoint(const ModelParams<Scalar>& params, std::ostream& out) {
  using namespace checkpoint_detail;
  out.write("PSPM", 4);
  put<std::uint32_t>(out, 1);
  put_string(out, nlohmann::json(params.config).dump());
  std::uint32_t count = 2;
  params.w.visit([&](const std::string&, const Mat<Scalar>&) { ++count; });
  put<std::uint32_t>(out, count);
  put_tensor(out, "pairs.out", pairs_tensor(params.pairs_out));
  put_tensor(out, "pairs.action", pairs_tensor(params.pairs_action));
  params.w.visit([&](const std::string& name, const Mat<Scalar>& m) { put_tensor(out, name, m.template cast<double>()); });
}

template <typename Scalar>
void save_checkpoint(const ModelParams<Scalar>& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path.string());
  save_checkpoint(params, out);
}

template <typename Scalar>
ModelParams<Scalar> load_checkpoint(std::istream& in) {
  using namespace checkpoint_detail;
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "PSPM") throw CheckpointError("checkpoint: bad magic");
  if (get<std::uint32_t>(in) != 1) throw CheckpointError("checkpoint: unsupported version");
  ModelConfig config;
  try {
    config = nlohmann::json::parse(get_string(in)).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad config echo: ") + e.what());
  }
  ModelParams<Scalar> p = init_params<Scalar>(config);
  const auto count = get<std::uint32_t>(in);
  std::map<std::string, Eigen::MatrixXd> tensors;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string name = get_string(in);
    const auto rank = get<std::uint32_t>(in);
    if (rank != 2) throw CheckpointError("checkpoint: tensor " + name + " has unsupported rank");
    const auto rows = static_cast<Eigen::Index>(get<std::uint64_t>(in));
    const auto cols = static_cast<Eigen::Index>(get<std::uint64_t>(in));
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = get<double>(in);
    tensors[name] = std::move(m);
  }
  auto take = [&](const std::string& name) -> Eigen::MatrixXd& {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("checkpoint: missing tensor " + name);
    return it->second;
  };
  auto pairs = [&](const std::string& name, std::vector<Pair>& dst) {
    const auto& m = take(name);
    if (m.rows() != static_cast<Eigen::Index>(dst.size()) || m.cols() != 2)
      throw CheckpointError("checkpoint: bad shape for " + name);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      dst[static_cast<std::size_t>(i)] = {static_cast<int>(m(i, 0)), static_cast<int>(m(i, 1))};
  };
  pairs("pairs.out", p.pairs_out);
  pairs("pairs.action", p.pairs_action);
  p.w.visit([&](const std::string& name, Mat<Scalar>& dst) {
    const auto& m = take(name);
    if (m.rows() != dst.rows() || m.cols() != dst.cols()) throw CheckpointError("checkpoint: bad shape for " + name);
    dst = m.template cast<Scalar>();
  });
  return p;
}

template <typename Scalar>
ModelParams<Scalar> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return load_checkpoint<Scalar>(in);
}

}  // namespace pathseek
