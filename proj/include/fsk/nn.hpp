#pragma once

// Minimal dense building blocks: Linear -> channel norm -> GELU, a plain
// linear layer, hand-written backward passes, and a named parameter
// registry used for finite-difference checks and checkpoints.

#include "fsk/core.hpp"
#include "fsk/rng.hpp"

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace fsk::nn {

constexpr double kNormEps = 1e-5;

inline double gelu_tanh(double x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  const double t = std::tanh(k * (x + 0.044715 * x * x * x));
  return 0.5 * x * (1.0 + t);
}

inline double gelu_tanh_grad(double x) {
  constexpr double k = 0.7978845608028654;
  const double u = k * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  const double du = k * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

// Fully-connected layer + per-row channel normalization + GELU.
struct LinNormActParams {
  Matd weight;  // out x in
  Vecd bias;
  Vecd norm_scale;
  Vecd norm_shift;

  int in() const { return static_cast<int>(weight.cols()); }
  int out() const { return static_cast<int>(weight.rows()); }

  static LinNormActParams init(int in, int out, Rng& rng) {
    LinNormActParams p;
    p.weight.resize(out, in);
    const double s = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index i = 0; i < p.weight.size(); ++i) p.weight.data()[i] = s * rng.normal();
    p.bias = Vecd::Zero(out);
    p.norm_scale = Vecd::Ones(out);
    p.norm_shift = Vecd::Zero(out);
    return p;
  }

  void check() const {
    detail::require(weight.allFinite() && bias.allFinite() && norm_scale.allFinite() &&
                        norm_shift.allFinite(),
                    "LinNormActParams: non-finite parameter");
    detail::require(bias.size() == weight.rows() && norm_scale.size() == weight.rows() &&
                        norm_shift.size() == weight.rows(),
                    "LinNormActParams: inconsistent shapes");
  }
};

struct LinNormActCache {
  Matd x;        // layer input
  Matd xhat;     // normalized pre-affine
  Matd u;        // pre-activation
  Vecd inv_std;  // per row
};

inline Matd lin_norm_act(const Matd& x, const LinNormActParams& p, LinNormActCache* cache = nullptr) {
  p.check();
  detail::require(x.cols() == p.weight.cols(), "lin_norm_act: input width mismatch");
  const Eigen::Index R = x.rows();
  const Eigen::Index C = p.weight.rows();

  Matd z = x * p.weight.transpose();
  z.rowwise() += p.bias.transpose();

  Matd xhat(R, C), u(R, C);
  Vecd inv_std(R);
  for (Eigen::Index r = 0; r < R; ++r) {
    const double mean = z.row(r).mean();
    const double var = (z.row(r).array() - mean).square().sum() / static_cast<double>(C);
    const double is = 1.0 / std::sqrt(var + kNormEps);
    inv_std(r) = is;
    xhat.row(r) = (z.row(r).array() - mean) * is;
    u.row(r) = xhat.row(r).cwiseProduct(p.norm_scale.transpose()) + p.norm_shift.transpose();
  }

  Matd y(R, C);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = gelu_tanh(u.data()[i]);

  if (cache) {
    cache->x = x;
    cache->xhat = std::move(xhat);
    cache->u = std::move(u);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

struct LinNormActGrads {
  Matd weight;
  Vecd bias, norm_scale, norm_shift;

  static LinNormActGrads zeros_like(const LinNormActParams& p) {
    LinNormActGrads g;
    g.weight = Matd::Zero(p.weight.rows(), p.weight.cols());
    g.bias = Vecd::Zero(p.bias.size());
    g.norm_scale = Vecd::Zero(p.norm_scale.size());
    g.norm_shift = Vecd::Zero(p.norm_shift.size());
    return g;
  }
};

// Returns grad w.r.t. x; accumulates parameter grads into `g`.
inline Matd lin_norm_act_backward(const Matd& grad_y, const LinNormActParams& p,
                                  const LinNormActCache& c, LinNormActGrads& g) {
  const Eigen::Index R = grad_y.rows();
  const Eigen::Index C = p.weight.rows();
  detail::require(c.u.rows() == R && c.u.cols() == C, "lin_norm_act_backward: cache mismatch");

  Matd gu(R, C);
  for (Eigen::Index i = 0; i < gu.size(); ++i)
    gu.data()[i] = grad_y.data()[i] * gelu_tanh_grad(c.u.data()[i]);

  g.norm_scale += gu.cwiseProduct(c.xhat).colwise().sum().transpose();
  g.norm_shift += gu.colwise().sum().transpose();

  Matd gz(R, C);
  for (Eigen::Index r = 0; r < R; ++r) {
    Eigen::RowVectorXd gxhat = gu.row(r).cwiseProduct(p.norm_scale.transpose());
    const double m1 = gxhat.mean();
    const double m2 = gxhat.cwiseProduct(c.xhat.row(r)).mean();
    gz.row(r) = (gxhat.array() - m1 - c.xhat.row(r).array() * m2) * c.inv_std(r);
  }

  g.weight += gz.transpose() * c.x;
  g.bias += gz.colwise().sum().transpose();
  return gz * p.weight;
}

// Plain fully-connected layer (prediction head output).
struct LinearParams {
  Matd weight;  // out x in
  Vecd bias;

  static LinearParams init(int in, int out, Rng& rng) {
    LinearParams p;
    p.weight.resize(out, in);
    const double s = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index i = 0; i < p.weight.size(); ++i) p.weight.data()[i] = s * rng.normal();
    p.bias = Vecd::Zero(out);
    return p;
  }
};

inline Matd linear(const Matd& x, const LinearParams& p) {
  detail::require(x.cols() == p.weight.cols(), "linear: input width mismatch");
  Matd y = x * p.weight.transpose();
  y.rowwise() += p.bias.transpose();
  return y;
}

struct LinearGrads {
  Matd weight;
  Vecd bias;

  static LinearGrads zeros_like(const LinearParams& p) {
    LinearGrads g;
    g.weight = Matd::Zero(p.weight.rows(), p.weight.cols());
    g.bias = Vecd::Zero(p.bias.size());
    return g;
  }
};

inline Matd linear_backward(const Matd& grad_y, const Matd& x, const LinearParams& p,
                            LinearGrads& g) {
  g.weight += grad_y.transpose() * x;
  g.bias += grad_y.colwise().sum().transpose();
  return grad_y * p.weight;
}

// Named views over parameter (or gradient) tensors. Supports flat
// element access for finite differences and binary checkpointing.
class ParamRegistry {
 public:
  struct Entry {
    std::string name;
    Matd* mat = nullptr;
    Vecd* vec = nullptr;

    std::size_t size() const {
      return static_cast<std::size_t>(mat ? mat->size() : vec->size());
    }
    double* data() const { return mat ? mat->data() : vec->data(); }
  };

  void add(const std::string& name, Matd* m) { entries_.push_back({name, m, nullptr}); }
  void add(const std::string& name, Vecd* v) { entries_.push_back({name, nullptr, v}); }

  const std::vector<Entry>& entries() const { return entries_; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.size();
    return n;
  }

  double get(std::size_t flat) const {
    const Entry* e = locate(flat);
    return e->data()[flat];
  }

  void set(std::size_t flat, double v) {
    const Entry* e = locate(flat);
    e->data()[flat] = v;
  }

  // Checkpoint format: magic "FSDW", u32 record count, then per record
  // u32 name length, name bytes, u32 rows, u32 cols, row-major f64 data.
  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    detail::require(f.good(), "ParamRegistry::save: cannot open " + path);
    f.write("FSDW", 4);
    write_u32(f, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
      write_u32(f, static_cast<std::uint32_t>(e.name.size()));
      f.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      const std::uint32_t rows = e.mat ? static_cast<std::uint32_t>(e.mat->rows())
                                       : static_cast<std::uint32_t>(e.vec->size());
      const std::uint32_t cols = e.mat ? static_cast<std::uint32_t>(e.mat->cols()) : 1u;
      write_u32(f, rows);
      write_u32(f, cols);
      f.write(reinterpret_cast<const char*>(e.data()),
              static_cast<std::streamsize>(e.size() * sizeof(double)));
    }
    detail::require(f.good(), "ParamRegistry::save: write failed");
  }

  // Loads by name into the registered tensors; every record must match a
  // registered entry of identical shape and vice versa.
  void load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw std::runtime_error("ParamRegistry::load: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f.good() || std::memcmp(magic, "FSDW", 4) != 0)
      throw std::runtime_error("ParamRegistry::load: bad magic");
    const std::uint32_t count = read_u32(f);
    if (count != entries_.size())
      throw std::runtime_error("ParamRegistry::load: record count mismatch");
    for (std::uint32_t r = 0; r < count; ++r) {
      const std::uint32_t name_len = read_u32(f);
      std::string name(name_len, '\0');
      f.read(name.data(), name_len);
      const std::uint32_t rows = read_u32(f);
      const std::uint32_t cols = read_u32(f);
      Entry* e = find(name);
      if (!e) throw std::runtime_error("ParamRegistry::load: unknown record " + name);
      const std::uint32_t want_rows = e->mat ? static_cast<std::uint32_t>(e->mat->rows())
                                             : static_cast<std::uint32_t>(e->vec->size());
      const std::uint32_t want_cols = e->mat ? static_cast<std::uint32_t>(e->mat->cols()) : 1u;
      if (rows != want_rows || cols != want_cols)
        throw std::runtime_error("ParamRegistry::load: shape mismatch for " + name);
      f.read(reinterpret_cast<char*>(e->data()),
             static_cast<std::streamsize>(e->size() * sizeof(double)));
      if (!f.good()) throw std::runtime_error("ParamRegistry::load: truncated file");
    }
  }

  void add_lna(const std::string& prefix, LinNormActParams* p) {
    add(prefix + ".weight", &p->weight);
    add(prefix + ".bias", &p->bias);
    add(prefix + ".norm_scale", &p->norm_scale);
    add(prefix + ".norm_shift", &p->norm_shift);
  }
  void add_lna(const std::string& prefix, LinNormActGrads* g) {
    add(prefix + ".weight", &g->weight);
    add(prefix + ".bias", &g->bias);
    add(prefix + ".norm_scale", &g->norm_scale);
    add(prefix + ".norm_shift", &g->norm_shift);
  }
  void add_linear(const std::string& prefix, LinearParams* p) {
    add(prefix + ".weight", &p->weight);
    add(prefix + ".bias", &p->bias);
  }
  void add_linear(const std::string& prefix, LinearGrads* g) {
    add(prefix + ".weight", &g->weight);
    add(prefix + ".bias", &g->bias);
  }

 private:
  const Entry* locate(std::size_t& flat) const {
    for (const auto& e : entries_) {
      if (flat < e.size()) return &e;
      flat -= e.size();
    }
    throw std::out_of_range("ParamRegistry: flat index out of range");
  }

  Entry* find(const std::string& name) {
    for (auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  static void write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  static std::uint32_t read_u32(std::ifstream& f) {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  }

  std::vector<Entry> entries_;
};

}  // namespace fsk::nn
