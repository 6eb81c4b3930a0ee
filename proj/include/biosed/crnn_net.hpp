#pragma once

// Network core for the sound-event-detection CRNN: conv blocks (3x3 conv,
// batch norm, ReLU, frequency-only max pooling), bidirectional GRU layers,
// and a time-distributed dense+sigmoid head, with exact analytic gradients
// for every parameter.
//
// Everything is templated on the scalar type: float is the production
// precision (kernels dispatch to SIMD), double instantiates the same code
// for finite-difference gradient verification.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "biosed/common.hpp"
#include "biosed/kernels.hpp"

namespace biosed::crnn {

// ---------------------------------------------------------------------------
// Parameter storage
// ---------------------------------------------------------------------------

template <typename T>
struct TensorEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<T> data;
  bool trainable = true;

  std::size_t size() const { return data.size(); }
};

/// Named tensors in a deterministic creation order. Generic iteration keeps
/// Adam, checkpointing, and the finite-difference harness independent of the
/// architecture details.
template <typename T>
struct TensorStore {
  std::vector<TensorEntry<T>> entries;
  std::map<std::string, std::size_t> index;

  std::vector<T>& add(const std::string& name,
                      std::vector<std::size_t> shape, bool trainable = true) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    index.emplace(name, entries.size());
    entries.push_back({name, std::move(shape), std::vector<T>(n, T(0)),
                       trainable});
    return entries.back().data;
  }

  std::vector<T>& at(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw DataError("model: no tensor '" + name + "'");
    return entries[it->second].data;
  }
  const std::vector<T>& at(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw DataError("model: no tensor '" + name + "'");
    return entries[it->second].data;
  }

  /// Same names/shapes, all zeros (gradient and moment buffers).
  TensorStore zeros_like() const {
    TensorStore out;
    for (const auto& e : entries) {
      out.add(e.name, e.shape, e.trainable);
    }
    return out;
  }

  void zero() {
    for (auto& e : entries) std::fill(e.data.begin(), e.data.end(), T(0));
  }

  std::size_t scalar_count(bool trainable_only) const {
    std::size_t n = 0;
    for (const auto& e : entries) {
      if (!trainable_only || e.trainable) n += e.data.size();
    }
    return n;
  }
};

// ---------------------------------------------------------------------------
// Architecture
// ---------------------------------------------------------------------------

struct ConvBlockDim {
  int filters = 64;
  int freq_pool = 2;  // pooling acts on the mel axis only
};

struct ModelArch {
  int n_mels = 128;
  int frames = 500;  // frames per input window
  int classes = 6;
  std::vector<ConvBlockDim> blocks;
  int gru_hidden = 64;
  int gru_layers = 1;

  void validate() const {
    if (n_mels < 2 || frames < 1 || classes < 1 || gru_hidden < 1 ||
        gru_layers < 1 || blocks.empty()) {
      throw ConfigError("model: degenerate architecture dimensions");
    }
    int q = n_mels;
    for (const auto& b : blocks) {
      if (b.filters < 1 || b.freq_pool < 1 || q % b.freq_pool != 0) {
        throw ConfigError(
            "model: freq pool factors must successively divide n_mels");
      }
      q /= b.freq_pool;
    }
  }

  int freq_after(std::size_t upto_block) const {
    int q = n_mels;
    for (std::size_t i = 0; i < upto_block; ++i) q /= blocks[i].freq_pool;
    return q;
  }

  /// Per-frame feature width handed to the GRU: channels x remaining bands.
  int feature_dim() const {
    return blocks.back().filters * freq_after(blocks.size());
  }
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void fill_uniform(std::vector<T>& v, double bound, Rng& rng) {
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace detail

template <typename T>
TensorStore<T> init_params(const ModelArch& arch, std::uint64_t seed) {
  arch.validate();
  TensorStore<T> store;
  Rng rng(seed);
  const std::size_t k3 = 3, kH = static_cast<std::size_t>(arch.gru_hidden);

  int in_ch = 1;
  for (std::size_t b = 0; b < arch.blocks.size(); ++b) {
    const auto f = static_cast<std::size_t>(arch.blocks[b].filters);
    const std::string p = "conv" + std::to_string(b) + ".";
    const double bound =
        std::sqrt(1.0 / (static_cast<double>(in_ch) * 9.0));
    detail::fill_uniform(
        store.add(p + "kernel", {f, static_cast<std::size_t>(in_ch), k3, k3}),
        bound, rng);
    detail::fill_uniform(store.add(p + "bias", {f}), bound, rng);
    auto& gamma = store.add(p + "bn_gamma", {f});
    std::fill(gamma.begin(), gamma.end(), T(1));
    store.add(p + "bn_beta", {f});
    store.add(p + "bn_mean", {f}, /*trainable=*/false);
    auto& var = store.add(p + "bn_var", {f}, /*trainable=*/false);
    std::fill(var.begin(), var.end(), T(1));
    in_ch = arch.blocks[b].filters;
  }

  int gru_in = arch.feature_dim();
  for (int l = 0; l < arch.gru_layers; ++l) {
    const auto d = static_cast<std::size_t>(gru_in);
    const double wb = std::sqrt(1.0 / gru_in);
    const double ub = std::sqrt(1.0 / arch.gru_hidden);
    for (const char* dir : {"fwd", "bwd"}) {
      const std::string p =
          "gru" + std::to_string(l) + "." + dir + ".";
      for (const char* gate : {"r", "z", "n"}) {
        detail::fill_uniform(
            store.add(p + "w_" + gate, {kH, d}), wb, rng);
        detail::fill_uniform(store.add(p + "u_" + gate, {kH, kH}), ub, rng);
        detail::fill_uniform(store.add(p + "b_" + gate, {kH}), ub, rng);
      }
    }
    gru_in = 2 * arch.gru_hidden;
  }

  const auto c = static_cast<std::size_t>(arch.classes);
  const double db = std::sqrt(1.0 / (2.0 * arch.gru_hidden));
  detail::fill_uniform(store.add("dense.weight", {c, 2 * kH}), db, rng);
  detail::fill_uniform(store.add("dense.bias", {c}), db, rng);
  return store;
}

// ---------------------------------------------------------------------------
// Elementwise helpers
// ---------------------------------------------------------------------------

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    return T(1) / (T(1) + std::exp(-x));
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Sigmoid outputs are clamped strictly inside (0, 1) so threshold 1 never
// fires and logs stay finite.
template <typename T>
inline constexpr T kProbLo = static_cast<T>(1e-7);
template <typename T>
inline constexpr T kProbHi = T(1) - static_cast<T>(1e-7);

inline constexpr double kBnEps = 1e-5;

// ---------------------------------------------------------------------------
// Conv block: 3x3 same-pad conv + batch norm + ReLU + frequency max-pool
// ---------------------------------------------------------------------------

template <typename T>
struct ConvBlockParamsView {
  std::span<T> kernel;    // filters x in_ch x 3 x 3
  std::span<T> bias;      // filters
  std::span<T> gamma;     // filters
  std::span<T> beta;      // filters
  std::span<T> run_mean;  // filters
  std::span<T> run_var;   // filters
  int in_ch = 1;
  int filters = 1;
  int pool = 1;
};

template <typename T>
ConvBlockParamsView<T> conv_view(TensorStore<T>& store, const ModelArch& arch,
                                 std::size_t block) {
  const std::string p = "conv" + std::to_string(block) + ".";
  ConvBlockParamsView<T> v;
  v.kernel = store.at(p + "kernel");
  v.bias = store.at(p + "bias");
  v.gamma = store.at(p + "bn_gamma");
  v.beta = store.at(p + "bn_beta");
  v.run_mean = store.at(p + "bn_mean");
  v.run_var = store.at(p + "bn_var");
  v.in_ch = block == 0 ? 1 : arch.blocks[block - 1].filters;
  v.filters = arch.blocks[block].filters;
  v.pool = arch.blocks[block].freq_pool;
  return v;
}

/// Gathers 3x3 neighborhoods: col is (in_ch*9) x (tdim*qdim), row index
/// c*9 + ky*3 + kx matching the kernel tensor layout.
template <typename T>
void im2col(const T* x, int in_ch, int tdim, int qdim, T* col) {
  const std::size_t plane =
      static_cast<std::size_t>(tdim) * static_cast<std::size_t>(qdim);
  std::size_t row = 0;
  for (int c = 0; c < in_ch; ++c) {
    const T* xp = x + static_cast<std::size_t>(c) * plane;
    for (int ky = -1; ky <= 1; ++ky) {
      for (int kx = -1; kx <= 1; ++kx, ++row) {
        T* dst = col + row * plane;
        for (int t = 0; t < tdim; ++t) {
          const int ts = t + ky;
          T* d = dst + static_cast<std::size_t>(t) * qdim;
          if (ts < 0 || ts >= tdim) {
            std::fill(d, d + qdim, T(0));
            continue;
          }
          const T* src = xp + static_cast<std::size_t>(ts) * qdim;
          if (kx == 0) {
            std::copy(src, src + qdim, d);
          } else if (kx < 0) {
            d[0] = T(0);
            std::copy(src, src + qdim - 1, d + 1);
          } else {
            std::copy(src + 1, src + qdim, d);
            d[qdim - 1] = T(0);
          }
        }
      }
    }
  }
}

/// Scatter-add transpose of im2col.
template <typename T>
void col2im_acc(const T* col, int in_ch, int tdim, int qdim, T* dx) {
  const std::size_t plane =
      static_cast<std::size_t>(tdim) * static_cast<std::size_t>(qdim);
  std::size_t row = 0;
  for (int c = 0; c < in_ch; ++c) {
    T* xp = dx + static_cast<std::size_t>(c) * plane;
    for (int ky = -1; ky <= 1; ++ky) {
      for (int kx = -1; kx <= 1; ++kx, ++row) {
        const T* src_row = col + row * plane;
        for (int t = 0; t < tdim; ++t) {
          const int ts = t + ky;
          if (ts < 0 || ts >= tdim) continue;
          T* d = xp + static_cast<std::size_t>(ts) * qdim;
          const T* s = src_row + static_cast<std::size_t>(t) * qdim;
          if (kx == 0) {
            for (int q = 0; q < qdim; ++q) d[q] += s[q];
          } else if (kx < 0) {
            for (int q = 1; q < qdim; ++q) d[q - 1] += s[q];
          } else {
            for (int q = 0; q < qdim - 1; ++q) d[q + 1] += s[q];
          }
        }
      }
    }
  }
}

template <typename T>
struct ConvCache {
  std::vector<T> lin;     // conv + bias, pre-BN (filters x T x Q)
  std::vector<T> act;     // post-BN post-ReLU (filters x T x Q)
  std::vector<T> pooled;  // filters x T x Q/pool
  std::vector<int> argmax;
};

/// Batch-level BN statistics; only frames with a set validity bit
/// contribute, so zero-padded tails never skew normalization.
struct BnStats {
  std::vector<double> mean;
  std::vector<double> invstd;
};

/// Forward one conv block for a whole batch. xs[w] points at window w's
/// input planes (in_ch x tdim x qdim); masks[w] (length tdim) may be null
/// for all-valid. In training mode batch statistics are used and running
/// stats updated with `momentum`; otherwise running stats normalize.
template <typename T>
BnStats conv_block_forward(const ConvBlockParamsView<T>& pv,
                           const std::vector<const T*>& xs,
                           const std::vector<const std::uint8_t*>& masks,
                           int tdim, int qdim, bool training, double momentum,
                           std::vector<ConvCache<T>>& caches) {
  const std::size_t batch = xs.size();
  const auto plane = static_cast<std::size_t>(tdim) * qdim;
  const auto fdim = static_cast<std::size_t>(pv.filters);
  const std::size_t col_rows = static_cast<std::size_t>(pv.in_ch) * 9;
  std::vector<T> col(col_rows * plane);
  caches.resize(batch);

  for (std::size_t w = 0; w < batch; ++w) {
    auto& cache = caches[w];
    cache.lin.assign(fdim * plane, T(0));
    im2col(xs[w], pv.in_ch, tdim, qdim, col.data());
    kern::gemm_nn(fdim, plane, col_rows, pv.kernel.data(), col.data(),
                  cache.lin.data(), false);
    for (std::size_t f = 0; f < fdim; ++f) {
      T* rowp = cache.lin.data() + f * plane;
      const T bias = pv.bias[f];
      for (std::size_t i = 0; i < plane; ++i) rowp[i] += bias;
    }
  }

  BnStats stats;
  stats.mean.assign(fdim, 0.0);
  stats.invstd.assign(fdim, 0.0);
  if (training) {
    std::vector<double> sum(fdim, 0.0), sumsq(fdim, 0.0);
    std::size_t count = 0;
    for (std::size_t w = 0; w < batch; ++w) {
      const std::uint8_t* mask = masks[w];
      for (int t = 0; t < tdim; ++t) {
        if (mask && !mask[t]) continue;
        ++count;
        for (std::size_t f = 0; f < fdim; ++f) {
          const T* rowp =
              caches[w].lin.data() + f * plane + static_cast<std::size_t>(t) * qdim;
          for (int q = 0; q < qdim; ++q) {
            const double v = rowp[q];
            sum[f] += v;
            sumsq[f] += v * v;
          }
        }
      }
    }
    const double n = static_cast<double>(count) * qdim;
    if (n <= 0.0) throw DataError("model: batch with no valid frames");
    for (std::size_t f = 0; f < fdim; ++f) {
      const double mean = sum[f] / n;
      const double var = std::max(0.0, sumsq[f] / n - mean * mean);
      stats.mean[f] = mean;
      stats.invstd[f] = 1.0 / std::sqrt(var + kBnEps);
      pv.run_mean[f] = static_cast<T>(momentum * pv.run_mean[f] +
                                      (1.0 - momentum) * mean);
      pv.run_var[f] =
          static_cast<T>(momentum * pv.run_var[f] + (1.0 - momentum) * var);
    }
  } else {
    for (std::size_t f = 0; f < fdim; ++f) {
      stats.mean[f] = pv.run_mean[f];
      stats.invstd[f] =
          1.0 / std::sqrt(static_cast<double>(pv.run_var[f]) + kBnEps);
    }
  }

  const int qp = qdim / pv.pool;
  for (std::size_t w = 0; w < batch; ++w) {
    auto& cache = caches[w];
    cache.act.resize(fdim * plane);
    for (std::size_t f = 0; f < fdim; ++f) {
      const double mean = stats.mean[f];
      const double invstd = stats.invstd[f];
      const double gamma = pv.gamma[f];
      const double beta = pv.beta[f];
      const T* src = cache.lin.data() + f * plane;
      T* dst = cache.act.data() + f * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        dst[i] = static_cast<T>(gamma * ((src[i] - mean) * invstd) + beta);
      }
    }
    kern::relu(cache.act.size(), cache.act.data());

    cache.pooled.resize(fdim * static_cast<std::size_t>(tdim) * qp);
    cache.argmax.resize(cache.pooled.size());
    for (std::size_t f = 0; f < fdim; ++f) {
      for (int t = 0; t < tdim; ++t) {
        const T* src =
            cache.act.data() + f * plane + static_cast<std::size_t>(t) * qdim;
        T* dst = cache.pooled.data() +
                 (f * tdim + static_cast<std::size_t>(t)) * qp;
        int* am = cache.argmax.data() +
                  (f * tdim + static_cast<std::size_t>(t)) * qp;
        for (int j = 0; j < qp; ++j) {
          int best = j * pv.pool;
          T best_v = src[best];
          for (int q = best + 1; q < (j + 1) * pv.pool; ++q) {
            if (src[q] > best_v) {
              best_v = src[q];
              best = q;
            }
          }
          dst[j] = best_v;
          am[j] = best;
        }
      }
    }
  }
  return stats;
}

/// Backward through one conv block for the batch. dpooled[w] holds the
/// gradient w.r.t. the pooled output; dxs[w] (may be null) receives the
/// gradient w.r.t. the block input. Parameter gradients accumulate into gv.
template <typename T>
void conv_block_backward(const ConvBlockParamsView<T>& pv,
                         const ConvBlockParamsView<T>& gv,
                         const std::vector<const T*>& xs,
                         const std::vector<const std::uint8_t*>& masks,
                         int tdim, int qdim,
                         const std::vector<ConvCache<T>>& caches,
                         const BnStats& stats,
                         const std::vector<std::vector<T>>& dpooled,
                         std::vector<std::vector<T>>* dxs) {
  const std::size_t batch = xs.size();
  const auto plane = static_cast<std::size_t>(tdim) * qdim;
  const auto fdim = static_cast<std::size_t>(pv.filters);
  const std::size_t col_rows = static_cast<std::size_t>(pv.in_ch) * 9;
  const int qp = qdim / pv.pool;

  // Unpool + ReLU mask per window; dact doubles as the BN-output gradient.
  std::vector<std::vector<T>> dact(batch);
  for (std::size_t w = 0; w < batch; ++w) {
    dact[w].assign(fdim * plane, T(0));
    const auto& cache = caches[w];
    for (std::size_t f = 0; f < fdim; ++f) {
      for (int t = 0; t < tdim; ++t) {
        const std::size_t po = (f * tdim + static_cast<std::size_t>(t)) * qp;
        T* drow = dact[w].data() + f * plane + static_cast<std::size_t>(t) * qdim;
        for (int j = 0; j < qp; ++j) {
          drow[cache.argmax[po + j]] += dpooled[w][po + j];
        }
      }
    }
    kern::relu_backward(dact[w].size(), cache.act.data(), dact[w].data());
  }

  // Batch-norm backward. gamma/beta see every position (normalization is
  // applied to masked frames too, and those flow into the loss through the
  // GRU recurrence), while the mean/variance correction only touches the
  // masked-in population that produced the statistics.
  std::vector<double> sum_dy(fdim, 0.0), sum_dy_xhat(fdim, 0.0);
  std::size_t count = 0;
  for (std::size_t w = 0; w < batch; ++w) {
    const std::uint8_t* mask = masks[w];
    for (int t = 0; t < tdim; ++t) {
      if (!mask || mask[t]) ++count;
      for (std::size_t f = 0; f < fdim; ++f) {
        const std::size_t off = f * plane + static_cast<std::size_t>(t) * qdim;
        const T* lin = caches[w].lin.data() + off;
        const T* dy = dact[w].data() + off;
        double s0 = 0.0, s1 = 0.0;
        for (int q = 0; q < qdim; ++q) {
          const double xhat = (lin[q] - stats.mean[f]) * stats.invstd[f];
          s0 += dy[q];
          s1 += dy[q] * xhat;
        }
        sum_dy[f] += s0;
        sum_dy_xhat[f] += s1;
      }
    }
  }
  const double n = static_cast<double>(count) * qdim;
  for (std::size_t f = 0; f < fdim; ++f) {
    gv.beta[f] += static_cast<T>(sum_dy[f]);
    gv.gamma[f] += static_cast<T>(sum_dy_xhat[f]);
  }

  std::vector<T> col(col_rows * plane);
  std::vector<T> dcol(col_rows * plane);
  for (std::size_t w = 0; w < batch; ++w) {
    // dlin = gamma*invstd * (dy - mean_dy - xhat * mean_dy_xhat) on the
    // masked population; pad frames only get the pass-through gamma term
    // (they did not contribute to the statistics).
    std::vector<T>& dlin = dact[w];  // reuse in place
    const std::uint8_t* mask = masks[w];
    for (std::size_t f = 0; f < fdim; ++f) {
      const double gs = static_cast<double>(pv.gamma[f]) * stats.invstd[f];
      const double mean_dy = sum_dy[f] / n;
      const double mean_dy_xhat = sum_dy_xhat[f] / n;
      for (int t = 0; t < tdim; ++t) {
        const std::size_t off = f * plane + static_cast<std::size_t>(t) * qdim;
        const T* lin = caches[w].lin.data() + off;
        T* dy = dlin.data() + off;
        const bool in_stats = !mask || mask[t];
        for (int q = 0; q < qdim; ++q) {
          if (in_stats) {
            const double xhat = (lin[q] - stats.mean[f]) * stats.invstd[f];
            dy[q] = static_cast<T>(
                gs * (dy[q] - mean_dy - xhat * mean_dy_xhat));
          } else {
            dy[q] = static_cast<T>(gs * dy[q]);
          }
        }
      }
    }

    // Conv backward: bias, kernel, and input gradients.
    for (std::size_t f = 0; f < fdim; ++f) {
      const T* dp = dlin.data() + f * plane;
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += dp[i];
      gv.bias[f] += static_cast<T>(acc);
    }
    im2col(xs[w], pv.in_ch, tdim, qdim, col.data());
    kern::gemm_nt(fdim, col_rows, plane, dlin.data(), col.data(),
                  gv.kernel.data(), true);
    if (dxs) {
      kern::gemm_tn(col_rows, plane, fdim, pv.kernel.data(), dlin.data(),
                    dcol.data(), false);
      (*dxs)[w].assign(static_cast<std::size_t>(pv.in_ch) * plane, T(0));
      col2im_acc(dcol.data(), pv.in_ch, tdim, qdim, (*dxs)[w].data());
    }
  }
}

// ---------------------------------------------------------------------------
// Bidirectional GRU
// ---------------------------------------------------------------------------

template <typename T>
struct GruDirParamsView {
  std::span<T> w_r, u_r, b_r;  // reset gate
  std::span<T> w_z, u_z, b_z;  // update gate
  std::span<T> w_n, u_n, b_n;  // candidate
  int in_dim = 1;
  int hidden = 1;
};

template <typename T>
GruDirParamsView<T> gru_view(TensorStore<T>& store, const ModelArch& arch,
                             int layer, bool backward_dir) {
  const std::string p = "gru" + std::to_string(layer) + "." +
                        (backward_dir ? "bwd" : "fwd") + ".";
  GruDirParamsView<T> v;
  v.w_r = store.at(p + "w_r");
  v.u_r = store.at(p + "u_r");
  v.b_r = store.at(p + "b_r");
  v.w_z = store.at(p + "w_z");
  v.u_z = store.at(p + "u_z");
  v.b_z = store.at(p + "b_z");
  v.w_n = store.at(p + "w_n");
  v.u_n = store.at(p + "u_n");
  v.b_n = store.at(p + "b_n");
  v.in_dim = layer == 0 ? arch.feature_dim() : 2 * arch.gru_hidden;
  v.hidden = arch.gru_hidden;
  return v;
}

template <typename T>
struct GruDirCache {
  Matrix<T> r, z, n, s, h;  // F x H each; s = U_n h_prev
};

/// One direction over the frame sequence:
///   r_t = sigmoid(W_r x_t + U_r h_prev + b_r)
///   z_t = sigmoid(W_z x_t + U_z h_prev + b_z)
///   n_t = tanh(W_n x_t + b_n + r_t .* (U_n h_prev))
///   h_t = (1 - z_t) .* n_t + z_t .* h_prev
/// Rows of the cache are indexed by physical frame; `reversed` only changes
/// the iteration order. Output h is written into out columns
/// [col_off, col_off + H).
template <typename T>
void gru_dir_forward(const GruDirParamsView<T>& pv, const Matrix<T>& x,
                     bool reversed, GruDirCache<T>& cache, Matrix<T>& out,
                     std::size_t col_off) {
  const std::size_t fdim = x.rows;
  const auto h = static_cast<std::size_t>(pv.hidden);
  const auto d = static_cast<std::size_t>(pv.in_dim);
  cache.r = Matrix<T>(fdim, h);
  cache.z = Matrix<T>(fdim, h);
  cache.n = Matrix<T>(fdim, h);
  cache.s = Matrix<T>(fdim, h);
  cache.h = Matrix<T>(fdim, h);

  // Input contributions for all frames in three matmuls.
  Matrix<T> gi_r(fdim, h), gi_z(fdim, h), gi_n(fdim, h);
  kern::gemm_nt(fdim, h, d, x.data.data(), pv.w_r.data(), gi_r.data.data(),
                false);
  kern::gemm_nt(fdim, h, d, x.data.data(), pv.w_z.data(), gi_z.data.data(),
                false);
  kern::gemm_nt(fdim, h, d, x.data.data(), pv.w_n.data(), gi_n.data.data(),
                false);

  std::vector<T> h_prev(h, T(0));
  std::vector<T> ur_h(h), uz_h(h);
  for (std::size_t step = 0; step < fdim; ++step) {
    const std::size_t t = reversed ? fdim - 1 - step : step;
    kern::matvec(h, h, pv.u_r.data(), h_prev.data(), ur_h.data(), false);
    kern::matvec(h, h, pv.u_z.data(), h_prev.data(), uz_h.data(), false);
    kern::matvec(h, h, pv.u_n.data(), h_prev.data(), cache.s.row(t), false);
    for (std::size_t j = 0; j < h; ++j) {
      const T r = stable_sigmoid(gi_r(t, j) + ur_h[j] + pv.b_r[j]);
      const T z = stable_sigmoid(gi_z(t, j) + uz_h[j] + pv.b_z[j]);
      const T n = std::tanh(gi_n(t, j) + pv.b_n[j] + r * cache.s(t, j));
      const T ht = (T(1) - z) * n + z * h_prev[j];
      cache.r(t, j) = r;
      cache.z(t, j) = z;
      cache.n(t, j) = n;
      cache.h(t, j) = ht;
      h_prev[j] = ht;
    }
    std::copy(cache.h.row(t), cache.h.row(t) + h, out.row(t) + col_off);
  }
}

/// Backward through time for one direction. dout columns [col_off, +H) feed
/// dh; gradients accumulate into gv and, when dx is non-null, into dx.
template <typename T>
void gru_dir_backward(const GruDirParamsView<T>& pv,
                      const GruDirParamsView<T>& gv, const Matrix<T>& x,
                      bool reversed, const GruDirCache<T>& cache,
                      const Matrix<T>& dout, std::size_t col_off,
                      Matrix<T>* dx) {
  const std::size_t fdim = x.rows;
  const auto h = static_cast<std::size_t>(pv.hidden);
  const auto d = static_cast<std::size_t>(pv.in_dim);

  Matrix<T> da_r(fdim, h), da_z(fdim, h), da_n(fdim, h), ds(fdim, h);
  Matrix<T> h_prev_mat(fdim, h);  // rows: h_{t-1} in this direction's order
  std::vector<T> dh(h, T(0));

  for (std::size_t step = 0; step < fdim; ++step) {
    // Reverse of the forward order.
    const std::size_t t =
        reversed ? step : fdim - 1 - step;
    const std::size_t prev_t = reversed ? t + 1 : t - 1;
    const bool has_prev = reversed ? (t + 1 < fdim) : (t > 0);
    const T* hp = has_prev ? cache.h.row(prev_t) : nullptr;
    if (hp) {
      std::copy(hp, hp + h, h_prev_mat.row(t));
    }
    for (std::size_t j = 0; j < h; ++j) {
      const T g = dout(t, col_off + j) + dh[j];
      const T hpj = hp ? hp[j] : T(0);
      const T z = cache.z(t, j);
      const T r = cache.r(t, j);
      const T n = cache.n(t, j);
      const T dz = g * (hpj - n);
      const T dn = g * (T(1) - z);
      const T dan = dn * (T(1) - n * n);
      const T dr = dan * cache.s(t, j);
      da_z(t, j) = dz * z * (T(1) - z);
      da_n(t, j) = dan;
      da_r(t, j) = dr * r * (T(1) - r);
      ds(t, j) = dan * r;
      dh[j] = g * z;
    }
    kern::matvec_t_acc(h, h, pv.u_r.data(), da_r.row(t), dh.data());
    kern::matvec_t_acc(h, h, pv.u_z.data(), da_z.row(t), dh.data());
    kern::matvec_t_acc(h, h, pv.u_n.data(), ds.row(t), dh.data());
  }

  // Weight gradients in bulk.
  kern::gemm_tn(h, d, fdim, da_r.data.data(), x.data.data(), gv.w_r.data(),
                true);
  kern::gemm_tn(h, d, fdim, da_z.data.data(), x.data.data(), gv.w_z.data(),
                true);
  kern::gemm_tn(h, d, fdim, da_n.data.data(), x.data.data(), gv.w_n.data(),
                true);
  kern::gemm_tn(h, h, fdim, da_r.data.data(), h_prev_mat.data.data(),
                gv.u_r.data(), true);
  kern::gemm_tn(h, h, fdim, da_z.data.data(), h_prev_mat.data.data(),
                gv.u_z.data(), true);
  kern::gemm_tn(h, h, fdim, ds.data.data(), h_prev_mat.data.data(),
                gv.u_n.data(), true);
  for (std::size_t t = 0; t < fdim; ++t) {
    for (std::size_t j = 0; j < h; ++j) {
      gv.b_r[j] += da_r(t, j);
      gv.b_z[j] += da_z(t, j);
      gv.b_n[j] += da_n(t, j);
    }
  }
  if (dx) {
    kern::gemm_nn(fdim, d, h, da_r.data.data(), pv.w_r.data(),
                  dx->data.data(), true);
    kern::gemm_nn(fdim, d, h, da_z.data.data(), pv.w_z.data(),
                  dx->data.data(), true);
    kern::gemm_nn(fdim, d, h, da_n.data.data(), pv.w_n.data(),
                  dx->data.data(), true);
  }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

template <typename T>
struct LossGrad {
  double loss = 0.0;
  std::size_t valid_cells = 0;
  std::vector<Matrix<T>> dprobs;
};

/// Masked binary cross-entropy, mean over valid (frame, class) cells across
/// the whole batch. Probabilities are clipped to [1e-7, 1-1e-7] in double
/// before the logs; the gradient is zero where the clip is active.
template <typename T>
LossGrad<T> bce_loss(const std::vector<const Matrix<T>*>& probs,
                     const std::vector<const MatU8*>& targets,
                     const std::vector<const std::uint8_t*>& masks) {
  constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
  LossGrad<T> out;
  out.dprobs.resize(probs.size());
  for (std::size_t w = 0; w < probs.size(); ++w) {
    if (probs[w]->rows != targets[w]->rows ||
        probs[w]->cols != targets[w]->cols) {
      throw DataError("loss: probs/targets shape mismatch");
    }
    const std::uint8_t* mask = masks[w];
    for (std::size_t t = 0; t < probs[w]->rows; ++t) {
      if (mask && !mask[t]) continue;
      out.valid_cells += probs[w]->cols;
    }
  }
  if (out.valid_cells == 0) throw DataError("loss: all cells masked");

  const double inv_n = 1.0 / static_cast<double>(out.valid_cells);
  double loss = 0.0;
  for (std::size_t w = 0; w < probs.size(); ++w) {
    const Matrix<T>& p = *probs[w];
    const MatU8& y = *targets[w];
    const std::uint8_t* mask = masks[w];
    Matrix<T>& dp = out.dprobs[w];
    dp = Matrix<T>(p.rows, p.cols, T(0));
    for (std::size_t t = 0; t < p.rows; ++t) {
      if (mask && !mask[t]) continue;
      for (std::size_t c = 0; c < p.cols; ++c) {
        const double raw = static_cast<double>(p(t, c));
        const double ph = std::min(std::max(raw, lo), hi);
        const double yv = y(t, c) ? 1.0 : 0.0;
        loss -= yv * std::log(ph) + (1.0 - yv) * std::log(1.0 - ph);
        if (raw >= lo && raw <= hi) {
          dp(t, c) = static_cast<T>((ph - yv) / (ph * (1.0 - ph)) * inv_n);
        }
      }
    }
  }
  out.loss = loss * inv_n;
  return out;
}

// ---------------------------------------------------------------------------
// Whole network
// ---------------------------------------------------------------------------

template <typename T>
struct WindowCache {
  const Matrix<T>* input = nullptr;    // frames x n_mels
  const std::uint8_t* mask = nullptr;  // per frame; null = all valid
  std::vector<Matrix<T>> gru_in;       // per layer: frames x D
  std::vector<std::array<GruDirCache<T>, 2>> gru;  // per layer, fwd/bwd
  Matrix<T> rnn_out;  // frames x 2H, the dense input
  Matrix<T> probs;    // frames x C
};

template <typename T>
struct BatchCache {
  std::vector<WindowCache<T>> windows;
  std::vector<std::vector<ConvCache<T>>> conv;  // [block][window]
  std::vector<BnStats> bn;                      // per conv block
};

inline constexpr double kBnMomentum = 0.9;

/// Full forward pass over a batch of windows. In training mode batch-norm
/// uses masked batch statistics and updates the running estimates; in
/// inference mode it normalizes with the stored running statistics.
template <typename T>
void net_forward(const ModelArch& arch, TensorStore<T>& params,
                 const std::vector<const Matrix<T>*>& inputs,
                 const std::vector<const std::uint8_t*>& masks, bool training,
                 BatchCache<T>& cache) {
  const std::size_t batch = inputs.size();
  if (masks.size() != batch) {
    throw DataError("model: inputs/masks batch size mismatch");
  }
  for (const auto* in : inputs) {
    if (in->rows != static_cast<std::size_t>(arch.frames) ||
        in->cols != static_cast<std::size_t>(arch.n_mels)) {
      throw DataError("model: input window is " + std::to_string(in->rows) +
                      "x" + std::to_string(in->cols) + ", expected " +
                      std::to_string(arch.frames) + "x" +
                      std::to_string(arch.n_mels));
    }
  }
  cache.windows.assign(batch, WindowCache<T>{});
  cache.conv.assign(arch.blocks.size(), std::vector<ConvCache<T>>{});
  cache.bn.assign(arch.blocks.size(), BnStats{});
  for (std::size_t w = 0; w < batch; ++w) {
    cache.windows[w].input = inputs[w];
    cache.windows[w].mask = masks[w];
  }

  const int tdim = arch.frames;
  // Conv stack, block by block across the whole batch (batch norm couples
  // the windows).
  std::vector<const T*> xs(batch);
  for (std::size_t b = 0; b < arch.blocks.size(); ++b) {
    const int qdim = arch.freq_after(b);
    auto pv = conv_view(params, arch, b);
    for (std::size_t w = 0; w < batch; ++w) {
      xs[w] = b == 0 ? inputs[w]->data.data()
                     : cache.conv[b - 1][w].pooled.data();
    }
    cache.bn[b] = conv_block_forward(pv, xs, masks, tdim, qdim, training,
                                     kBnMomentum, cache.conv[b]);
  }

  // Per-frame flatten (channels x bands) and the recurrent stack.
  const int qp_last = arch.freq_after(arch.blocks.size());
  const int last_filters = arch.blocks.back().filters;
  const auto fdim = static_cast<std::size_t>(tdim);
  const auto hidden = static_cast<std::size_t>(arch.gru_hidden);
  for (std::size_t w = 0; w < batch; ++w) {
    auto& wc = cache.windows[w];
    wc.gru_in.resize(static_cast<std::size_t>(arch.gru_layers));
    wc.gru.resize(static_cast<std::size_t>(arch.gru_layers));
    Matrix<T> x(fdim, static_cast<std::size_t>(arch.feature_dim()));
    const auto& pooled = cache.conv.back()[w].pooled;
    for (int c = 0; c < last_filters; ++c) {
      for (std::size_t t = 0; t < fdim; ++t) {
        const T* src = pooled.data() +
                       (static_cast<std::size_t>(c) * fdim + t) * qp_last;
        T* dst = x.row(t) + static_cast<std::size_t>(c) * qp_last;
        std::copy(src, src + qp_last, dst);
      }
    }
    for (int l = 0; l < arch.gru_layers; ++l) {
      wc.gru_in[static_cast<std::size_t>(l)] = std::move(x);
      const Matrix<T>& layer_in = wc.gru_in[static_cast<std::size_t>(l)];
      Matrix<T> y(fdim, 2 * hidden);
      auto fv = gru_view(params, arch, l, false);
      auto bv = gru_view(params, arch, l, true);
      gru_dir_forward(fv, layer_in, false,
                      wc.gru[static_cast<std::size_t>(l)][0], y, 0);
      gru_dir_forward(bv, layer_in, true,
                      wc.gru[static_cast<std::size_t>(l)][1], y, hidden);
      x = std::move(y);
    }
    wc.rnn_out = std::move(x);

    // Dense + sigmoid per frame.
    const auto classes = static_cast<std::size_t>(arch.classes);
    const auto& wd = params.at("dense.weight");
    const auto& bd = params.at("dense.bias");
    wc.probs = Matrix<T>(fdim, classes);
    kern::gemm_nt(fdim, classes, 2 * hidden, wc.rnn_out.data.data(),
                  wd.data(), wc.probs.data.data(), false);
    for (std::size_t t = 0; t < fdim; ++t) {
      T* rowp = wc.probs.row(t);
      for (std::size_t c = 0; c < classes; ++c) {
        T p = stable_sigmoid(rowp[c] + bd[c]);
        if (p < kProbLo<T>) p = kProbLo<T>;
        if (p > kProbHi<T>) p = kProbHi<T>;
        rowp[c] = p;
      }
    }
  }
}

/// Backward pass matching net_forward(training=true). dprobs is the loss
/// gradient w.r.t. the (clamped) sigmoid outputs; grads accumulates every
/// parameter gradient (zeroed here first).
template <typename T>
void net_backward(const ModelArch& arch, TensorStore<T>& params,
                  BatchCache<T>& cache, const std::vector<Matrix<T>>& dprobs,
                  TensorStore<T>& grads) {
  const std::size_t batch = cache.windows.size();
  grads.zero();

  const auto fdim = static_cast<std::size_t>(arch.frames);
  const auto hidden = static_cast<std::size_t>(arch.gru_hidden);
  const auto classes = static_cast<std::size_t>(arch.classes);
  const auto& wd = params.at("dense.weight");
  auto& g_wd = grads.at("dense.weight");
  auto& g_bd = grads.at("dense.bias");

  // Gradient w.r.t. the pooled output of the last conv block, per window.
  std::vector<std::vector<T>> dpooled(batch);
  const int qp_last = arch.freq_after(arch.blocks.size());
  const int last_filters = arch.blocks.back().filters;

  for (std::size_t w = 0; w < batch; ++w) {
    auto& wc = cache.windows[w];
    // Sigmoid + dense backward.
    Matrix<T> dlogit(fdim, classes);
    for (std::size_t t = 0; t < fdim; ++t) {
      for (std::size_t c = 0; c < classes; ++c) {
        const T p = wc.probs(t, c);
        dlogit(t, c) = dprobs[w](t, c) * p * (T(1) - p);
      }
    }
    kern::gemm_tn(classes, 2 * hidden, fdim, dlogit.data.data(),
                  wc.rnn_out.data.data(), g_wd.data(), true);
    for (std::size_t t = 0; t < fdim; ++t) {
      for (std::size_t c = 0; c < classes; ++c) {
        g_bd[c] += dlogit(t, c);
      }
    }
    Matrix<T> dy(fdim, 2 * hidden, T(0));
    kern::gemm_nn(fdim, 2 * hidden, classes, dlogit.data.data(), wd.data(),
                  dy.data.data(), true);

    // GRU stack, top down.
    for (int l = arch.gru_layers - 1; l >= 0; --l) {
      const auto lu = static_cast<std::size_t>(l);
      auto fv = gru_view(params, arch, l, false);
      auto bv = gru_view(params, arch, l, true);
      auto gfv = gru_view(grads, arch, l, false);
      auto gbv = gru_view(grads, arch, l, true);
      Matrix<T> dx(fdim, static_cast<std::size_t>(fv.in_dim), T(0));
      gru_dir_backward(fv, gfv, wc.gru_in[lu], false, wc.gru[lu][0], dy, 0,
                       &dx);
      gru_dir_backward(bv, gbv, wc.gru_in[lu], true, wc.gru[lu][1], dy,
                       hidden, &dx);
      dy = std::move(dx);
    }

    // Un-flatten the frame features back to (channels x T x bands).
    dpooled[w].assign(static_cast<std::size_t>(last_filters) * fdim *
                          static_cast<std::size_t>(qp_last),
                      T(0));
    for (int c = 0; c < last_filters; ++c) {
      for (std::size_t t = 0; t < fdim; ++t) {
        const T* src = dy.row(t) + static_cast<std::size_t>(c) * qp_last;
        T* dst = dpooled[w].data() +
                 (static_cast<std::size_t>(c) * fdim + t) * qp_last;
        std::copy(src, src + qp_last, dst);
      }
    }
  }

  // Conv stack, top down.
  std::vector<const T*> xs(batch);
  std::vector<const std::uint8_t*> masks(batch);
  std::vector<std::vector<T>> dx(batch);
  for (int b = static_cast<int>(arch.blocks.size()) - 1; b >= 0; --b) {
    const auto bu = static_cast<std::size_t>(b);
    const int qdim = arch.freq_after(bu);
    auto pv = conv_view(params, arch, bu);
    auto gv = conv_view(grads, arch, bu);
    for (std::size_t w = 0; w < batch; ++w) {
      xs[w] = b == 0 ? cache.windows[w].input->data.data()
                     : cache.conv[bu - 1][w].pooled.data();
      masks[w] = cache.windows[w].mask;
    }
    conv_block_backward(pv, gv, xs, masks, arch.frames, qdim, cache.conv[bu],
                        cache.bn[bu], dpooled, b > 0 ? &dx : nullptr);
    if (b > 0) {
      for (std::size_t w = 0; w < batch; ++w) {
        dpooled[w] = std::move(dx[w]);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  TensorStore<T> m, v;
  std::int64_t step = 0;
};

template <typename T>
AdamState<T> make_adam_state(const TensorStore<T>& params) {
  return AdamState<T>{params.zeros_like(), params.zeros_like(), 0};
}

/// Standard Adam with bias correction over every trainable tensor.
template <typename T>
void adam_update(TensorStore<T>& params, const TensorStore<T>& grads,
                 AdamState<T>& state, const AdamConfig& cfg) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.entries.size(); ++i) {
    auto& e = params.entries[i];
    if (!e.trainable) continue;
    kern::adam_step(e.data.size(), e.data.data(), grads.entries[i].data.data(),
                    state.m.entries[i].data.data(),
                    state.v.entries[i].data.data(), static_cast<T>(cfg.lr),
                    static_cast<T>(cfg.beta1), static_cast<T>(cfg.beta2),
                    static_cast<T>(cfg.eps), static_cast<T>(bc1),
                    static_cast<T>(bc2));
  }
}

}  // namespace biosed::crnn
