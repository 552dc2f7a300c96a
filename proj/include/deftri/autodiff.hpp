#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "deftri/common.hpp"
#include "deftri/tensor.hpp"

namespace deftri {

struct Value {
  std::size_t idx = static_cast<std::size_t>(-1);
  bool valid() const { return idx != static_cast<std::size_t>(-1); }
};

// Reverse-mode tape. Nodes are appended by forward ops, so walking the tape
// backwards is a reverse topological order; backward() may run once per graph.
template <typename T>
class Tape {
 public:
  explicit Tape(bool train_mode = false, Rng* rng = nullptr)
      : train_mode_(train_mode), rng_(rng) {}

  bool train_mode() const { return train_mode_; }

  Value leaf(Tensor<T> t, bool requires_grad = false) {
    return push(std::move(t), requires_grad, "leaf", nullptr);
  }

  const Tensor<T>& value(Value v) const { return nodes_[v.idx].value; }

  const Tensor<T>& grad(Value v) const {
    const auto& node = nodes_[v.idx];
    if (!node.requires_grad) throw InternalError("grad requested for a non-grad node");
    if (node.grad.size() == 0) throw InternalError("grad read before backward()");
    return node.grad;
  }

  // ---- elementwise and shape ops ------------------------------------------

  Value add(Value a, Value b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    require(ta.same_shape(tb), "add", ta.shape_str() + " vs " + tb.shape_str());
    Tensor<T> out(ta.rows, ta.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = ta.data[i] + tb.data[i];
    return push(std::move(out), needs(a, b), "add", [this, a, b](const Tensor<T>& g) {
      accumulate(a, g.data.data(), g.size());
      accumulate(b, g.data.data(), g.size());
    });
  }

  // a (m x n) + v (1 x n) broadcast over rows
  Value add_rowvec(Value a, Value v) {
    const auto& ta = val(a);
    const auto& tv = val(v);
    require(tv.rows == 1 && tv.cols == ta.cols, "add_rowvec",
            ta.shape_str() + " vs " + tv.shape_str());
    Tensor<T> out(ta.rows, ta.cols);
    for (std::size_t r = 0; r < ta.rows; ++r)
      for (std::size_t c = 0; c < ta.cols; ++c) out.at(r, c) = ta.at(r, c) + tv.at(0, c);
    return push(std::move(out), needs(a, v), "add_rowvec", [this, a, v](const Tensor<T>& g) {
      accumulate(a, g.data.data(), g.size());
      if (wants_grad(v)) {
        Tensor<T>& gv = ensure_grad(v);
        for (std::size_t r = 0; r < g.rows; ++r)
          for (std::size_t c = 0; c < g.cols; ++c) gv.at(0, c) += g.at(r, c);
      }
    });
  }

  Value mul(Value a, Value b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    require(ta.same_shape(tb), "mul", ta.shape_str() + " vs " + tb.shape_str());
    Tensor<T> out(ta.rows, ta.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = ta.data[i] * tb.data[i];
    return push(std::move(out), needs(a, b), "mul", [this, a, b](const Tensor<T>& g) {
      if (wants_grad(a)) {
        Tensor<T>& ga = ensure_grad(a);
        const auto& tb2 = val(b);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * tb2.data[i];
      }
      if (wants_grad(b)) {
        Tensor<T>& gb = ensure_grad(b);
        const auto& ta2 = val(a);
        for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * ta2.data[i];
      }
    });
  }

  Value scale(Value a, T factor) {
    const auto& ta = val(a);
    Tensor<T> out(ta.rows, ta.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = ta.data[i] * factor;
    return push(std::move(out), needs(a), "scale", [this, a, factor](const Tensor<T>& g) {
      if (!wants_grad(a)) return;
      Tensor<T>& ga = ensure_grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * factor;
    });
  }

  Value concat_cols(Value a, Value b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    require(ta.rows == tb.rows, "concat_cols", ta.shape_str() + " vs " + tb.shape_str());
    Tensor<T> out(ta.rows, ta.cols + tb.cols);
    for (std::size_t r = 0; r < ta.rows; ++r) {
      for (std::size_t c = 0; c < ta.cols; ++c) out.at(r, c) = ta.at(r, c);
      for (std::size_t c = 0; c < tb.cols; ++c) out.at(r, ta.cols + c) = tb.at(r, c);
    }
    const std::size_t ac = ta.cols;
    return push(std::move(out), needs(a, b), "concat_cols", [this, a, b, ac](const Tensor<T>& g) {
      if (wants_grad(a)) {
        Tensor<T>& ga = ensure_grad(a);
        for (std::size_t r = 0; r < g.rows; ++r)
          for (std::size_t c = 0; c < ac; ++c) ga.at(r, c) += g.at(r, c);
      }
      if (wants_grad(b)) {
        Tensor<T>& gb = ensure_grad(b);
        for (std::size_t r = 0; r < g.rows; ++r)
          for (std::size_t c = 0; c < g.cols - ac; ++c) gb.at(r, c) += g.at(r, ac + c);
      }
    });
  }

  Value slice_cols(Value a, std::size_t start, std::size_t len) {
    const auto& ta = val(a);
    require(start + len <= ta.cols, "slice_cols", "range out of bounds");
    Tensor<T> out(ta.rows, len);
    for (std::size_t r = 0; r < ta.rows; ++r)
      for (std::size_t c = 0; c < len; ++c) out.at(r, c) = ta.at(r, start + c);
    return push(std::move(out), needs(a), "slice_cols", [this, a, start](const Tensor<T>& g) {
      if (!wants_grad(a)) return;
      Tensor<T>& ga = ensure_grad(a);
      for (std::size_t r = 0; r < g.rows; ++r)
        for (std::size_t c = 0; c < g.cols; ++c) ga.at(r, start + c) += g.at(r, c);
    });
  }

  Value gather_rows(Value a, std::vector<std::size_t> rows) {
    const auto& ta = val(a);
    for (auto r : rows) require(r < ta.rows, "gather_rows", "row index out of range");
    Tensor<T> out(rows.size(), ta.cols);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < ta.cols; ++c) out.at(i, c) = ta.at(rows[i], c);
    return push(std::move(out), needs(a), "gather_rows",
                [this, a, rows = std::move(rows)](const Tensor<T>& g) {
                  if (!wants_grad(a)) return;
                  Tensor<T>& ga = ensure_grad(a);
                  for (std::size_t i = 0; i < rows.size(); ++i)
                    for (std::size_t c = 0; c < g.cols; ++c) ga.at(rows[i], c) += g.at(i, c);
                });
  }

  // (B*L, H) -> (B*heads*L, H/heads), rows ordered [batch][head][position]
  Value split_heads(Value a, std::size_t batch, std::size_t len, std::size_t heads) {
    const auto& ta = val(a);
    require(ta.rows == batch * len && ta.cols % heads == 0, "split_heads", "bad layout");
    const std::size_t dh = ta.cols / heads;
    Tensor<T> out(batch * heads * len, dh);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t l = 0; l < len; ++l)
          for (std::size_t c = 0; c < dh; ++c)
            out.at((b * heads + h) * len + l, c) = ta.at(b * len + l, h * dh + c);
    return push(std::move(out), needs(a), "split_heads",
                [this, a, batch, len, heads, dh](const Tensor<T>& g) {
                  if (!wants_grad(a)) return;
                  Tensor<T>& ga = ensure_grad(a);
                  for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t h = 0; h < heads; ++h)
                      for (std::size_t l = 0; l < len; ++l)
                        for (std::size_t c = 0; c < dh; ++c)
                          ga.at(b * len + l, h * dh + c) += g.at((b * heads + h) * len + l, c);
                });
  }

  // Inverse of split_heads.
  Value merge_heads(Value a, std::size_t batch, std::size_t len, std::size_t heads) {
    const auto& ta = val(a);
    require(ta.rows == batch * heads * len, "merge_heads", "bad layout");
    const std::size_t dh = ta.cols;
    Tensor<T> out(batch * len, heads * dh);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t l = 0; l < len; ++l)
          for (std::size_t c = 0; c < dh; ++c)
            out.at(b * len + l, h * dh + c) = ta.at((b * heads + h) * len + l, c);
    return push(std::move(out), needs(a), "merge_heads",
                [this, a, batch, len, heads, dh](const Tensor<T>& g) {
                  if (!wants_grad(a)) return;
                  Tensor<T>& ga = ensure_grad(a);
                  for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t h = 0; h < heads; ++h)
                      for (std::size_t l = 0; l < len; ++l)
                        for (std::size_t c = 0; c < dh; ++c)
                          ga.at((b * heads + h) * len + l, c) += g.at(b * len + l, h * dh + c);
                });
  }

  // ---- linear algebra ------------------------------------------------------

  Value matmul(Value a, Value b, bool transpose_b = false) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    const std::size_t k = ta.cols;
    const std::size_t n = transpose_b ? tb.rows : tb.cols;
    require(transpose_b ? tb.cols == k : tb.rows == k, "matmul",
            ta.shape_str() + " vs " + tb.shape_str());
    Tensor<T> out(ta.rows, n);
    if (transpose_b)
      blas::gemm_nt(ta.data.data(), tb.data.data(), out.data.data(), ta.rows, k, n);
    else
      blas::gemm_nn(ta.data.data(), tb.data.data(), out.data.data(), ta.rows, k, n);
    return push(std::move(out), needs(a, b), "matmul",
                [this, a, b, transpose_b](const Tensor<T>& g) {
                  const auto& ta2 = val(a);
                  const auto& tb2 = val(b);
                  const std::size_t m = ta2.rows;
                  const std::size_t k2 = ta2.cols;
                  const std::size_t n2 = g.cols;
                  if (wants_grad(a)) {
                    Tensor<T>& ga = ensure_grad(a);
                    if (transpose_b)
                      blas::gemm_nn(g.data.data(), tb2.data.data(), ga.data.data(), m, n2, k2);
                    else
                      blas::gemm_nt(g.data.data(), tb2.data.data(), ga.data.data(), m, n2, k2);
                  }
                  if (wants_grad(b)) {
                    Tensor<T>& gb = ensure_grad(b);
                    if (transpose_b)
                      blas::gemm_tn(g.data.data(), ta2.data.data(), gb.data.data(), m, n2, k2);
                    else
                      blas::gemm_tn(ta2.data.data(), g.data.data(), gb.data.data(), m, k2, n2);
                  }
                });
  }

  // Batched matmul over 2-D storage: a is (batch*m, k); b is (batch*k, n), or
  // (batch*n, k) when transpose_b. Output (batch*m, n).
  Value bmm(Value a, Value b, std::size_t batch, bool transpose_b = false) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    require(batch > 0 && ta.rows % batch == 0 && tb.rows % batch == 0, "bmm", "bad batch");
    const std::size_t m = ta.rows / batch;
    const std::size_t k = ta.cols;
    const std::size_t bn = tb.rows / batch;
    const std::size_t n = transpose_b ? bn : tb.cols;
    require(transpose_b ? tb.cols == k : bn == k, "bmm", ta.shape_str() + " vs " + tb.shape_str());
    Tensor<T> out(batch * m, n);
    for (std::size_t i = 0; i < batch; ++i) {
      const T* pa = ta.data.data() + i * m * k;
      const T* pb = tb.data.data() + i * bn * tb.cols;
      T* pc = out.data.data() + i * m * n;
      if (transpose_b)
        blas::gemm_nt(pa, pb, pc, m, k, n);
      else
        blas::gemm_nn(pa, pb, pc, m, k, n);
    }
    return push(std::move(out), needs(a, b), "bmm",
                [this, a, b, batch, transpose_b](const Tensor<T>& g) {
                  const auto& ta2 = val(a);
                  const auto& tb2 = val(b);
                  const std::size_t m = ta2.rows / batch;
                  const std::size_t k = ta2.cols;
                  const std::size_t bn = tb2.rows / batch;
                  const std::size_t n = g.cols;
                  for (std::size_t i = 0; i < batch; ++i) {
                    const T* pa = ta2.data.data() + i * m * k;
                    const T* pb = tb2.data.data() + i * bn * tb2.cols;
                    const T* pg = g.data.data() + i * m * n;
                    if (wants_grad(a)) {
                      T* pga = ensure_grad(a).data.data() + i * m * k;
                      if (transpose_b)
                        blas::gemm_nn(pg, pb, pga, m, n, k);
                      else
                        blas::gemm_nt(pg, pb, pga, m, n, k);
                    }
                    if (wants_grad(b)) {
                      T* pgb = ensure_grad(b).data.data() + i * bn * tb2.cols;
                      if (transpose_b)
                        blas::gemm_tn(pg, pa, pgb, m, n, k);
                      else
                        blas::gemm_tn(pa, pg, pgb, m, k, n);
                    }
                  }
                });
  }

  // ---- nonlinearities ------------------------------------------------------

  Value softmax_rows(Value a) { return softmax_impl(a, nullptr); }

  // mask entries are 0/1; masked positions get weight exactly 0. Fully masked
  // rows produce all-zero rows.
  Value masked_softmax_rows(Value a, const Tensor<T>& mask) {
    const auto& ta = val(a);
    require(ta.same_shape(mask), "masked_softmax_rows", "mask shape mismatch");
    return softmax_impl(a, &mask);
  }

  Value layer_norm(Value x, Value gamma, Value beta, T eps) {
    const auto& tx = val(x);
    const auto& tg = val(gamma);
    const auto& tb = val(beta);
    require(tg.rows == 1 && tg.cols == tx.cols && tb.rows == 1 && tb.cols == tx.cols,
            "layer_norm", "affine shape mismatch");
    const std::size_t n = tx.cols;
    Tensor<T> out(tx.rows, n);
    Tensor<T> xhat(tx.rows, n);
    std::vector<T> inv_std(tx.rows);
    for (std::size_t r = 0; r < tx.rows; ++r) {
      const T* row = tx.row_ptr(r);
      T mean = T(0);
      for (std::size_t c = 0; c < n; ++c) mean += row[c];
      mean /= static_cast<T>(n);
      T var = T(0);
      for (std::size_t c = 0; c < n; ++c) {
        const T d = row[c] - mean;
        var += d * d;
      }
      var /= static_cast<T>(n);
      const T istd = T(1) / std::sqrt(var + eps);
      inv_std[r] = istd;
      for (std::size_t c = 0; c < n; ++c) {
        const T h = (row[c] - mean) * istd;
        xhat.at(r, c) = h;
        out.at(r, c) = tg.at(0, c) * h + tb.at(0, c);
      }
    }
    return push(std::move(out), needs(x, gamma, beta), "layer_norm",
                [this, x, gamma, beta, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)](const Tensor<T>& g) {
                  const auto& tg2 = val(gamma);
                  const std::size_t n = g.cols;
                  if (wants_grad(gamma)) {
                    Tensor<T>& gg = ensure_grad(gamma);
                    for (std::size_t r = 0; r < g.rows; ++r)
                      for (std::size_t c = 0; c < n; ++c) gg.at(0, c) += g.at(r, c) * xhat.at(r, c);
                  }
                  if (wants_grad(beta)) {
                    Tensor<T>& gb = ensure_grad(beta);
                    for (std::size_t r = 0; r < g.rows; ++r)
                      for (std::size_t c = 0; c < n; ++c) gb.at(0, c) += g.at(r, c);
                  }
                  if (wants_grad(x)) {
                    Tensor<T>& gx = ensure_grad(x);
                    for (std::size_t r = 0; r < g.rows; ++r) {
                      T sum_gg = T(0);
                      T sum_gx = T(0);
                      for (std::size_t c = 0; c < n; ++c) {
                        const T gi = g.at(r, c) * tg2.at(0, c);
                        sum_gg += gi;
                        sum_gx += gi * xhat.at(r, c);
                      }
                      const T inv_n = T(1) / static_cast<T>(n);
                      for (std::size_t c = 0; c < n; ++c) {
                        const T gi = g.at(r, c) * tg2.at(0, c);
                        gx.at(r, c) += inv_std[r] *
                                       (gi - sum_gg * inv_n - xhat.at(r, c) * sum_gx * inv_n);
                      }
                    }
                  }
                });
  }

  Value gelu(Value a) {
    const auto& ta = val(a);
    Tensor<T> out(ta.rows, ta.cols);
    constexpr T kAlpha = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T kBeta = T(0.044715);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const T x = ta.data[i];
      const T u = kAlpha * (x + kBeta * x * x * x);
      out.data[i] = T(0.5) * x * (T(1) + std::tanh(u));
    }
    return push(std::move(out), needs(a), "gelu", [this, a](const Tensor<T>& g) {
      if (!wants_grad(a)) return;
      Tensor<T>& ga = ensure_grad(a);
      const auto& ta2 = val(a);
      constexpr T kAlpha = T(0.7978845608028654);
      constexpr T kBeta = T(0.044715);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T x = ta2.data[i];
        const T u = kAlpha * (x + kBeta * x * x * x);
        const T th = std::tanh(u);
        const T du = kAlpha * (T(1) + T(3) * kBeta * x * x);
        ga.data[i] += g.data[i] * (T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du);
      }
    });
  }

  Value tanh_op(Value a) {
    return unary(a, "tanh", [](T x) { return std::tanh(x); },
                 [](T x, T y) { (void)x; return T(1) - y * y; });
  }

  Value relu(Value a) {
    return unary(a, "relu", [](T x) { return x > T(0) ? x : T(0); },
                 [](T x, T y) { (void)y; return x > T(0) ? T(1) : T(0); });
  }

  Value sigmoid(Value a) {
    return unary(a, "sigmoid",
                 [](T x) {
                   return x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                                    : std::exp(x) / (T(1) + std::exp(x));
                 },
                 [](T x, T y) { (void)x; return y * (T(1) - y); });
  }

  // Inverted dropout: surviving activations scale by 1/(1-rate). Identity in
  // eval mode and at rate 0 (returns the input node unchanged).
  Value dropout(Value a, double rate) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
    if (!train_mode_ || rate == 0.0) return a;
    if (!rng_) throw InternalError("dropout in train mode needs an RNG");
    const auto& ta = val(a);
    const T keep_scale = T(1.0 / (1.0 - rate));
    Tensor<T> mask(ta.rows, ta.cols);
    for (std::size_t i = 0; i < mask.size(); ++i)
      mask.data[i] = rng_->uniform() < rate ? T(0) : keep_scale;
    Tensor<T> out(ta.rows, ta.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = ta.data[i] * mask.data[i];
    return push(std::move(out), needs(a), "dropout",
                [this, a, mask = std::move(mask)](const Tensor<T>& g) {
                  if (!wants_grad(a)) return;
                  Tensor<T>& ga = ensure_grad(a);
                  for (std::size_t i = 0; i < g.size(); ++i)
                    ga.data[i] += g.data[i] * mask.data[i];
                });
  }

  Value embedding_lookup(Value table, const std::vector<std::uint32_t>& ids) {
    const auto& tt = val(table);
    for (auto id : ids)
      if (id >= tt.rows) throw DataError("embedding_lookup: id out of range");
    Tensor<T> out(ids.size(), tt.cols);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t c = 0; c < tt.cols; ++c) out.at(i, c) = tt.at(ids[i], c);
    return push(std::move(out), needs(table), "embedding_lookup",
                [this, table, ids](const Tensor<T>& g) {
                  if (!wants_grad(table)) return;
                  Tensor<T>& gt = ensure_grad(table);
                  for (std::size_t i = 0; i < ids.size(); ++i)
                    for (std::size_t c = 0; c < g.cols; ++c) gt.at(ids[i], c) += g.at(i, c);
                });
  }

  // ---- reductions and loss ---------------------------------------------------

  Value sum_all(Value a) { return reduce(a, false); }
  Value mean_all(Value a) { return reduce(a, true); }

  // Numerically stable mean of -w[p*y*log(sigmoid(x)) + (1-y)*log(1-sigmoid(x))]
  // over every (sample, label) element. y must be 0/1; pos_weight is per label
  // (1 x T); sample_weight matches x.
  Value bce_with_logits(Value logits, const Tensor<T>& targets, const Tensor<T>& pos_weight,
                        const Tensor<T>& sample_weight) {
    const auto& tx = val(logits);
    require(tx.same_shape(targets) && tx.same_shape(sample_weight), "bce_with_logits",
            "target/weight shape mismatch");
    require(pos_weight.rows == 1 && pos_weight.cols == tx.cols, "bce_with_logits",
            "pos_weight must be (1 x labels)");
    for (const T y : targets.data)
      if (y != T(0) && y != T(1)) throw DataError("bce_with_logits: targets must be 0 or 1");
    for (const T p : pos_weight.data)
      if (p <= T(0)) throw DataError("bce_with_logits: pos_weight must be positive");

    const auto softplus = [](T z) {  // log(1 + e^z), stable
      const T m = z > T(0) ? z : T(0);
      return m + std::log1p(std::exp(-std::abs(z)));
    };
    T acc = T(0);
    for (std::size_t r = 0; r < tx.rows; ++r) {
      for (std::size_t c = 0; c < tx.cols; ++c) {
        const T x = tx.at(r, c);
        const T y = targets.at(r, c);
        const T p = pos_weight.at(0, c);
        const T w = sample_weight.at(r, c);
        acc += w * (p * y * softplus(-x) + (T(1) - y) * softplus(x));
      }
    }
    const T inv_count = T(1) / static_cast<T>(tx.size());
    Tensor<T> out(1, 1);
    out.data[0] = acc * inv_count;
    return push(std::move(out), needs(logits), "bce_with_logits",
                [this, logits, targets, pos_weight, sample_weight,
                 inv_count](const Tensor<T>& g) {
                  if (!wants_grad(logits)) return;
                  Tensor<T>& gx = ensure_grad(logits);
                  const auto& tx2 = val(logits);
                  const T gscale = g.data[0] * inv_count;
                  for (std::size_t r = 0; r < tx2.rows; ++r) {
                    for (std::size_t c = 0; c < tx2.cols; ++c) {
                      const T x = tx2.at(r, c);
                      const T y = targets.at(r, c);
                      const T p = pos_weight.at(0, c);
                      const T w = sample_weight.at(r, c);
                      const T sig = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                                              : std::exp(x) / (T(1) + std::exp(x));
                      gx.at(r, c) += gscale * w * ((T(1) - y) * sig - p * y * (T(1) - sig));
                    }
                  }
                });
  }

  void backward(Value loss) {
    if (backward_done_)
      throw InternalError("backward() already ran on this graph; rebuild the forward pass");
    const auto& tl = val(loss);
    if (tl.size() != 1) throw InternalError("backward() requires a scalar loss");
    backward_done_ = true;
    ensure_grad(loss).data[0] = T(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.backprop || node.grad.size() == 0) continue;
      node.backprop(node.grad);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::function<void(const Tensor<T>&)> backprop;
  };

  const Tensor<T>& val(Value v) const { return nodes_[v.idx].value; }
  bool wants_grad(Value v) const { return nodes_[v.idx].requires_grad; }

  Tensor<T>& ensure_grad(Value v) {
    Node& node = nodes_[v.idx];
    if (node.grad.size() == 0) node.grad = Tensor<T>::zeros_like(node.value);
    return node.grad;
  }

  void accumulate(Value v, const T* g, std::size_t n) {
    if (!wants_grad(v)) return;
    Tensor<T>& gv = ensure_grad(v);
    for (std::size_t i = 0; i < n; ++i) gv.data[i] += g[i];
  }

  static void require(bool ok, const char* op, const std::string& detail) {
    if (!ok) throw InternalError(std::string("shape error in ") + op + ": " + detail);
  }

  bool needs(Value a) const { return wants_grad(a); }
  bool needs(Value a, Value b) const { return wants_grad(a) || wants_grad(b); }
  bool needs(Value a, Value b, Value c) const {
    return wants_grad(a) || wants_grad(b) || wants_grad(c);
  }

  Value push(Tensor<T> value, bool requires_grad, const char* op,
             std::function<void(const Tensor<T>&)> backprop) {
    if (!value.all_finite())
      throw InternalError(std::string("non-finite values produced by op '") + op + "'");
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    if (requires_grad) node.backprop = std::move(backprop);
    nodes_.push_back(std::move(node));
    return Value{nodes_.size() - 1};
  }

  template <typename FwdFn, typename DerivFn>
  Value unary(Value a, const char* op, FwdFn fwd, DerivFn deriv) {
    const auto& ta = val(a);
    Tensor<T> out(ta.rows, ta.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = fwd(ta.data[i]);
    Tensor<T> saved;
    if (needs(a)) saved = out;
    return push(std::move(out), needs(a), op,
                [this, a, deriv, saved = std::move(saved)](const Tensor<T>& g) {
                  if (!wants_grad(a)) return;
                  Tensor<T>& ga = ensure_grad(a);
                  const auto& ta2 = val(a);
                  for (std::size_t i = 0; i < g.size(); ++i)
                    ga.data[i] += g.data[i] * deriv(ta2.data[i], saved.data[i]);
                });
  }

  Value softmax_impl(Value a, const Tensor<T>* mask) {
    const auto& ta = val(a);
    Tensor<T> out(ta.rows, ta.cols);
    for (std::size_t r = 0; r < ta.rows; ++r) {
      const T* row = ta.row_ptr(r);
      T maxv = -std::numeric_limits<T>::infinity();
      for (std::size_t c = 0; c < ta.cols; ++c)
        if (!mask || mask->at(r, c) != T(0))
          if (row[c] > maxv) maxv = row[c];
      if (maxv == -std::numeric_limits<T>::infinity()) continue;  // fully masked row -> zeros
      T denom = T(0);
      for (std::size_t c = 0; c < ta.cols; ++c) {
        if (mask && mask->at(r, c) == T(0)) {
          out.at(r, c) = T(0);
          continue;
        }
        const T e = std::exp(row[c] - maxv);
        out.at(r, c) = e;
        denom += e;
      }
      const T inv = T(1) / denom;
      for (std::size_t c = 0; c < ta.cols; ++c) out.at(r, c) *= inv;
    }
    Tensor<T> saved;
    if (needs(a)) saved = out;
    return push(std::move(out), needs(a), "softmax_rows",
                [this, a, saved = std::move(saved)](const Tensor<T>& g) {
                  if (!wants_grad(a)) return;
                  Tensor<T>& ga = ensure_grad(a);
                  for (std::size_t r = 0; r < g.rows; ++r) {
                    T dot = T(0);
                    for (std::size_t c = 0; c < g.cols; ++c) dot += g.at(r, c) * saved.at(r, c);
                    for (std::size_t c = 0; c < g.cols; ++c)
                      ga.at(r, c) += saved.at(r, c) * (g.at(r, c) - dot);
                  }
                });
  }

  Value reduce(Value a, bool mean) {
    const auto& ta = val(a);
    T acc = T(0);
    for (const T x : ta.data) acc += x;
    const T scale = mean ? T(1) / static_cast<T>(ta.size()) : T(1);
    Tensor<T> out(1, 1);
    out.data[0] = acc * scale;
    return push(std::move(out), needs(a), mean ? "mean" : "sum",
                [this, a, scale](const Tensor<T>& g) {
                  if (!wants_grad(a)) return;
                  Tensor<T>& ga = ensure_grad(a);
                  const T gs = g.data[0] * scale;
                  for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += gs;
                });
  }

  std::vector<Node> nodes_;
  bool train_mode_;
  Rng* rng_;
  bool backward_done_ = false;
};

// Central-difference gradient oracle. `loss_fn` recomputes the scalar loss
// from the current contents of `params`; `analytic` holds the gradients under
// test, aligned with `params`. Coordinates may be excluded via `skip` (the
// policy for non-differentiable points such as a relu kink at exactly 0).
struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::size_t worst_param = 0;
  std::size_t worst_coord = 0;
};

template <typename LossFn>
GradCheckResult finite_diff_check(
    LossFn&& loss_fn, const std::vector<Tensor<double>*>& params,
    const std::vector<const Tensor<double>*>& analytic, double h = 1e-5,
    const std::function<bool(std::size_t, std::size_t)>& skip = nullptr) {
  if (params.size() != analytic.size())
    throw InternalError("finite_diff_check: param/gradient count mismatch");
  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<double>& param = *params[p];
    const Tensor<double>& grad = *analytic[p];
    if (!param.same_shape(grad)) throw InternalError("finite_diff_check: shape mismatch");
    for (std::size_t i = 0; i < param.size(); ++i) {
      if (skip && skip(p, i)) {
        ++result.skipped;
        continue;
      }
      const double saved = param.data[i];
      param.data[i] = saved + h;
      const double lp = loss_fn();
      param.data[i] = saved - h;
      const double lm = loss_fn();
      param.data[i] = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double ad = grad.data[i];
      const double denom = std::max({std::abs(fd), std::abs(ad), 1e-6});
      const double err = std::abs(fd - ad) / denom;
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = p;
        result.worst_coord = i;
      }
    }
  }
  return result;
}

}  // namespace deftri
