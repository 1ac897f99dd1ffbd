// Copyright 2026 The TACR Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "tacr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "tacr/error.hpp"

namespace tacr::ops {
namespace {

Tape& tape_of(const Var& v) {
  if (!v.valid()) throw GraphError("op applied to an unbound Var");
  return *v.tape();
}

std::string axes_of(const Var& v) { return shape_string(v.shape()); }

class BranchHasher {
 public:
  void add(bool bit) {
    word_ = (word_ << 1) | static_cast<std::uint64_t>(bit);
    if (++count_ == 64) flush();
  }
  std::uint64_t finish() {
    flush();
    return hash_;
  }

 private:
  void flush() {
    hash_ = (hash_ ^ word_) * 0x100000001b3ULL;
    word_ = 0;
    count_ = 0;
  }
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
  std::uint64_t word_ = 0;
  int count_ = 0;
};

// Range of output indices o with 0 <= o*stride - pad + k < in.
std::pair<int, int> valid_range(int out, int in, int k, int stride, int pad) {
  int lo = 0;
  while (lo < out && lo * stride - pad + k < 0) ++lo;
  int hi = out;
  while (hi > lo && (hi - 1) * stride - pad + k >= in) --hi;
  return {lo, hi};
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "swish") return Activation::kSwish;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

int conv_output_size(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

Var conv2d(const Var& input, const Var& weight, const Var& bias, int stride, int padding) {
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  if (padding < 0) throw DimensionError("conv2d: padding must be >= 0");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), Kh = w.dim(2), Kw = w.dim(3);
  if (w.dim(1) != C) {
    throw DimensionError("conv2d: weight in-channels (axis 1 of " + axes_of(weight) + ") != input channels (axis 1 of " +
                         axes_of(input) + ")");
  }
  if (Kh > H + 2 * padding || Kw > W + 2 * padding) {
    throw DimensionError("conv2d: kernel " + axes_of(weight) + " exceeds padded spatial axes (2,3) of " +
                         axes_of(input));
  }
  if (bias.valid() && (bias.value().rank() != 1 || bias.value().dim(0) != Co)) {
    throw DimensionError("conv2d: bias " + axes_of(bias) + " does not match out-channels (axis 0 of " +
                         axes_of(weight) + ")");
  }
  const int OH = conv_output_size(H, Kh, stride, padding);
  const int OW = conv_output_size(W, Kw, stride, padding);
  const std::size_t in_plane = static_cast<std::size_t>(H) * W;
  const std::size_t out_plane = static_cast<std::size_t>(OH) * OW;

  std::vector<std::pair<int, int>> rows(Kh), cols(Kw);
  for (int k = 0; k < Kh; ++k) rows[k] = valid_range(OH, H, k, stride, padding);
  for (int k = 0; k < Kw; ++k) cols[k] = valid_range(OW, W, k, stride, padding);

  Tensor out({N, Co, OH, OW});
  const double* xp = x.ptr();
  const double* wp = w.ptr();
  double* op = out.ptr();
  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Co; ++co) {
      double* o = op + (static_cast<std::size_t>(n) * Co + co) * out_plane;
      if (bias.valid()) std::fill(o, o + out_plane, bias.value()[co]);
      for (int ci = 0; ci < C; ++ci) {
        const double* in = xp + (static_cast<std::size_t>(n) * C + ci) * in_plane;
        const double* wk = wp + (static_cast<std::size_t>(co) * C + ci) * Kh * Kw;
        for (int kh = 0; kh < Kh; ++kh) {
          const auto [oh_lo, oh_hi] = rows[kh];
          for (int kw = 0; kw < Kw; ++kw) {
            const double wv = wk[kh * Kw + kw];
            const auto [ow_lo, ow_hi] = cols[kw];
            for (int oh = oh_lo; oh < oh_hi; ++oh) {
              const double* src = in + static_cast<std::size_t>(oh * stride - padding + kh) * W - padding + kw;
              double* dst = o + static_cast<std::size_t>(oh) * OW;
              if (stride == 1) {
                for (int ow = ow_lo; ow < ow_hi; ++ow) dst[ow] += wv * src[ow];
              } else {
                for (int ow = ow_lo; ow < ow_hi; ++ow) dst[ow] += wv * src[ow * stride];
              }
            }
          }
        }
      }
    }
  }

  std::vector<Var> parents{input, weight};
  if (bias.valid()) parents.push_back(bias);
  return tape_of(input).record(
      std::move(out), parents,
      [=](const Tensor& g, Tape& tape) {
        const double* gp = g.ptr();
        const double* xv = input.value().ptr();
        const double* wv_all = weight.value().ptr();
        double* gx = tape.needs_grad(input) ? tape.grad_buffer(input).ptr() : nullptr;
        double* gw = tape.needs_grad(weight) ? tape.grad_buffer(weight).ptr() : nullptr;
        if (bias.valid() && tape.needs_grad(bias)) {
          Tensor& gb = tape.grad_buffer(bias);
          for (int n = 0; n < N; ++n) {
            for (int co = 0; co < Co; ++co) {
              const double* go = gp + (static_cast<std::size_t>(n) * Co + co) * out_plane;
              double s = 0.0;
              for (std::size_t i = 0; i < out_plane; ++i) s += go[i];
              gb[co] += s;
            }
          }
        }
        if (!gx && !gw) return;
        for (int n = 0; n < N; ++n) {
          for (int co = 0; co < Co; ++co) {
            const double* go = gp + (static_cast<std::size_t>(n) * Co + co) * out_plane;
            for (int ci = 0; ci < C; ++ci) {
              const std::size_t in_off = (static_cast<std::size_t>(n) * C + ci) * in_plane;
              const std::size_t w_off = (static_cast<std::size_t>(co) * C + ci) * Kh * Kw;
              for (int kh = 0; kh < Kh; ++kh) {
                const auto [oh_lo, oh_hi] = rows[kh];
                for (int kw = 0; kw < Kw; ++kw) {
                  const auto [ow_lo, ow_hi] = cols[kw];
                  const double wv = wv_all[w_off + kh * Kw + kw];
                  double acc0 = 0.0, acc1 = 0.0;
                  for (int oh = oh_lo; oh < oh_hi; ++oh) {
                    const std::size_t row = static_cast<std::size_t>(oh * stride - padding + kh) * W - padding + kw;
                    const double* gsrc = go + static_cast<std::size_t>(oh) * OW;
                    if (gx) {
                      double* dst = gx + in_off + row;
                      if (stride == 1) {
                        for (int ow = ow_lo; ow < ow_hi; ++ow) dst[ow] += wv * gsrc[ow];
                      } else {
                        for (int ow = ow_lo; ow < ow_hi; ++ow) dst[ow * stride] += wv * gsrc[ow];
                      }
                    }
                    if (gw) {
                      const double* src = xv + in_off + row;
                      int ow = ow_lo;
                      for (; ow + 1 < ow_hi; ow += 2) {
                        acc0 += gsrc[ow] * src[ow * stride];
                        acc1 += gsrc[ow + 1] * src[(ow + 1) * stride];
                      }
                      if (ow < ow_hi) acc0 += gsrc[ow] * src[ow * stride];
                    }
                  }
                  if (gw) gw[w_off + kh * Kw + kw] += acc0 + acc1;
                }
              }
            }
          }
        }
      });
}

Var batchnorm2d(const Var& input, const Var& gamma, const Var& beta, const BatchNormStats& stats, Mode mode,
                double eps, double momentum) {
  const Tensor& x = input.value();
  require_rank(x, 4, "batchnorm2d input");
  if (eps <= 0.0) throw ConfigError("batchnorm2d: eps must be > 0");
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  if (gamma.value().size() != static_cast<std::size_t>(C) || beta.value().size() != static_cast<std::size_t>(C)) {
    throw DimensionError("batchnorm2d: gamma/beta must have C=" + std::to_string(C) + " entries (axis 1 of " +
                         axes_of(input) + ")");
  }
  if (!stats.mean || !stats.var || !stats.batches) throw StateError("batchnorm2d: running statistics not bound");
  const double count = static_cast<double>(N) * static_cast<double>(plane);

  std::vector<double> mean(C), var(C);
  if (mode == Mode::kTrain) {
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int n = 0; n < N; ++n) {
        const double* p = x.ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      mean[c] = s / count;
      double v = 0.0;
      for (int n = 0; n < N; ++n) {
        const double* p = x.ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) v += (p[i] - mean[c]) * (p[i] - mean[c]);
      }
      var[c] = v / count;
      const double unbiased = count > 1 ? var[c] * count / (count - 1) : var[c];
      double& rm = stats.mean->value[c];
      double& rv = stats.var->value[c];
      rm = (1.0 - momentum) * rm + momentum * mean[c];
      rv = (1.0 - momentum) * rv + momentum * unbiased;
    }
    stats.batches->value[0] += 1.0;
  } else {
    if (stats.batches->value[0] <= 0.0) throw StateError("batchnorm2d: eval mode without populated running stats");
    for (int c = 0; c < C; ++c) {
      mean[c] = stats.mean->value[c];
      var[c] = stats.var->value[c];
    }
  }

  std::vector<double> inv_std(C);
  for (int c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  Tensor xhat(x.shape());
  Tensor out(x.shape());
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
      const double g = gamma.value()[c], b = beta.value()[c];
      for (std::size_t i = 0; i < plane; ++i) {
        const double h = (x[off + i] - mean[c]) * inv_std[c];
        xhat[off + i] = h;
        out[off + i] = g * h + b;
      }
    }
  }

  return tape_of(input).record(
      std::move(out), {input, gamma, beta},
      [=, xhat = std::move(xhat)](const Tensor& g, Tape& tape) {
        for (int c = 0; c < C; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (int n = 0; n < N; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_g += g[off + i];
              sum_gx += g[off + i] * xhat[off + i];
            }
          }
          if (tape.needs_grad(gamma)) tape.grad_buffer(gamma)[c] += sum_gx;
          if (tape.needs_grad(beta)) tape.grad_buffer(beta)[c] += sum_g;
          if (!tape.needs_grad(input)) continue;
          Tensor& gx = tape.grad_buffer(input);
          const double gm = gamma.value()[c];
          for (int n = 0; n < N; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              if (mode == Mode::kTrain) {
                gx[off + i] += gm * inv_std[c] * (g[off + i] - sum_g / count - xhat[off + i] * sum_gx / count);
              } else {
                gx[off + i] += gm * inv_std[c] * g[off + i];
              }
            }
          }
        }
      });
}

double sigmoid(double x) {
  double s;
  if (x >= 0) {
    s = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    s = e / (1.0 + e);
  }
  // Keep the output strictly inside (0, 1) under saturation.
  return std::clamp(s, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

Var relu(const Var& x) {
  const Tensor& v = x.value();
  Tensor out(v.shape());
  BranchHasher branches;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const bool on = v[i] > 0.0;
    out[i] = on ? v[i] : 0.0;
    branches.add(on);
  }
  Tape& tape = tape_of(x);
  tape.note_branch(branches.finish());
  return tape.record(std::move(out), {x}, [x](const Tensor& g, Tape& t) {
    Tensor& gx = t.grad_buffer(x);
    const Tensor& v = x.value();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] > 0.0) gx[i] += g[i];
    }
  });
}

Var sigmoid(const Var& x) {
  const Tensor& v = x.value();
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = sigmoid(v[i]);
  Tensor saved = out;
  return tape_of(x).record(std::move(out), {x}, [x, s = std::move(saved)](const Tensor& g, Tape& t) {
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < s.size(); ++i) gx[i] += g[i] * s[i] * (1.0 - s[i]);
  });
}

Var swish(const Var& x) {
  const Tensor& v = x.value();
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * sigmoid(v[i]);
  return tape_of(x).record(std::move(out), {x}, [x](const Tensor& g, Tape& t) {
    Tensor& gx = t.grad_buffer(x);
    const Tensor& v = x.value();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double s = sigmoid(v[i]);
      gx[i] += g[i] * (s + v[i] * s * (1.0 - s));
    }
  });
}

Var activation(const Var& x, Activation kind) {
  switch (kind) {
    case Activation::kRelu:
      return relu(x);
    case Activation::kSigmoid:
      return sigmoid(x);
    case Activation::kSwish:
      return swish(x);
  }
  throw ConfigError("unknown activation");
}

Var global_avg_pool(const Var& x) {
  const Tensor& v = x.value();
  require_rank(v, 4, "global_avg_pool input");
  const int N = v.dim(0), C = v.dim(1);
  const std::size_t plane = static_cast<std::size_t>(v.dim(2)) * v.dim(3);
  Tensor out({N, C});
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double* p = v.ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      out.at(n, c) = s / static_cast<double>(plane);
    }
  }
  return tape_of(x).record(std::move(out), {x}, [=](const Tensor& g, Tape& t) {
    Tensor& gx = t.grad_buffer(x);
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        const double share = g.at(n, c) / static_cast<double>(plane);
        double* p = gx.ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += share;
      }
    }
  });
}

Var mean_over_width(const Var& x) {
  const Tensor& v = x.value();
  require_rank(v, 4, "mean_over_width input");
  const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  Tensor out({N, C, H, 1});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h) {
        double s = 0.0;
        for (int w = 0; w < W; ++w) s += v.at(n, c, h, w);
        out.at(n, c, h, 0) = s / W;
      }
  return tape_of(x).record(std::move(out), {x}, [=](const Tensor& g, Tape& t) {
    Tensor& gx = t.grad_buffer(x);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h) {
          const double share = g.at(n, c, h, 0) / W;
          for (int w = 0; w < W; ++w) gx.at(n, c, h, w) += share;
        }
  });
}

Var mean_over_height(const Var& x) {
  const Tensor& v = x.value();
  require_rank(v, 4, "mean_over_height input");
  const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  Tensor out({N, C, W, 1});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) out.at(n, c, w, 0) += v.at(n, c, h, w);
      for (int w = 0; w < W; ++w) out.at(n, c, w, 0) /= H;
    }
  return tape_of(x).record(std::move(out), {x}, [=](const Tensor& g, Tape& t) {
    Tensor& gx = t.grad_buffer(x);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) gx.at(n, c, h, w) += g.at(n, c, w, 0) / H;
  });
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(first.size())) throw DimensionError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t a = 0; ok && a < s.size(); ++a) ok = static_cast<int>(a) == axis || s[a] == first[a];
    if (!ok) {
      throw DimensionError("concat along axis " + std::to_string(axis) + ": " + shape_string(s) +
                           " incompatible with " + shape_string(first));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= first[a];
  for (std::size_t a = axis + 1; a < first.size(); ++a) inner *= first[a];

  Tensor out(out_shape);
  const std::size_t out_block = static_cast<std::size_t>(out_shape[axis]) * inner;
  std::vector<std::size_t> starts;
  std::size_t at = 0;
  for (const auto& p : parts) {
    starts.push_back(at);
    const std::size_t block = static_cast<std::size_t>(p.shape()[axis]) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.value().ptr() + o * block, block, out.ptr() + o * out_block + at);
    }
    at += block;
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return tape_of(parts[0]).record(std::move(out), parents, [=](const Tensor& g, Tape& t) {
    for (std::size_t k = 0; k < parents.size(); ++k) {
      if (!t.needs_grad(parents[k])) continue;
      Tensor& gp = t.grad_buffer(parents[k]);
      const std::size_t block = static_cast<std::size_t>(parents[k].shape()[axis]) * inner;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = g.ptr() + o * out_block + starts[k];
        double* dst = gp.ptr() + o * block;
        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
      }
    }
  });
}

Var slice(const Var& x, int axis, int start, int length) {
  const Shape& s = x.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) throw DimensionError("slice: axis out of range");
  if (start < 0 || length < 1 || start + length > s[axis]) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) + ") of axis " +
                         std::to_string(axis) + " out of range for " + shape_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= s[a];
  for (std::size_t a = axis + 1; a < s.size(); ++a) inner *= s[a];
  Shape out_shape = s;
  out_shape[axis] = length;
  Tensor out(out_shape);
  const std::size_t in_block = static_cast<std::size_t>(s[axis]) * inner;
  const std::size_t out_block = static_cast<std::size_t>(length) * inner;
  const std::size_t offset = static_cast<std::size_t>(start) * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.value().ptr() + o * in_block + offset, out_block, out.ptr() + o * out_block);
  }
  return tape_of(x).record(std::move(out), {x}, [=](const Tensor& g, Tape& t) {
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t o = 0; o < outer; ++o) {
      const double* src = g.ptr() + o * out_block;
      double* dst = gx.ptr() + o * in_block + offset;
      for (std::size_t i = 0; i < out_block; ++i) dst[i] += src[i];
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return tape_of(x).record(std::move(out), {x}, [x](const Tensor& g, Tape& t) {
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& v = x.value();
  const Tensor& w = weight.value();
  require_rank(v, 2, "linear input");
  require_rank(w, 2, "linear weight");
  const int N = v.dim(0), In = v.dim(1), Out = w.dim(0);
  if (w.dim(1) != In) {
    throw DimensionError("linear: weight axis 1 of " + axes_of(weight) + " != input axis 1 of " + axes_of(x));
  }
  if (bias.valid() && bias.value().size() != static_cast<std::size_t>(Out)) {
    throw DimensionError("linear: bias " + axes_of(bias) + " != weight axis 0 of " + axes_of(weight));
  }
  Tensor out({N, Out});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < Out; ++o) {
      double s = bias.valid() ? bias.value()[o] : 0.0;
      for (int i = 0; i < In; ++i) s += w.at(o, i) * v.at(n, i);
      out.at(n, o) = s;
    }
  std::vector<Var> parents{x, weight};
  if (bias.valid()) parents.push_back(bias);
  return tape_of(x).record(std::move(out), parents, [=](const Tensor& g, Tape& t) {
    const Tensor& v = x.value();
    const Tensor& w = weight.value();
    if (t.needs_grad(x)) {
      Tensor& gx = t.grad_buffer(x);
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < Out; ++o)
          for (int i = 0; i < In; ++i) gx.at(n, i) += g.at(n, o) * w.at(o, i);
    }
    if (t.needs_grad(weight)) {
      Tensor& gw = t.grad_buffer(weight);
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < Out; ++o)
          for (int i = 0; i < In; ++i) gw.at(o, i) += g.at(n, o) * v.at(n, i);
    }
    if (bias.valid() && t.needs_grad(bias)) {
      Tensor& gb = t.grad_buffer(bias);
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < Out; ++o) gb[o] += g.at(n, o);
    }
  });
}

Var upsample_nearest2x(const Var& x) {
  const Tensor& v = x.value();
  require_rank(v, 4, "upsample_nearest2x input");
  const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  Tensor out({N, C, 2 * H, 2 * W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < 2 * H; ++h)
        for (int w = 0; w < 2 * W; ++w) out.at(n, c, h, w) = v.at(n, c, h / 2, w / 2);
  return tape_of(x).record(std::move(out), {x}, [=](const Tensor& g, Tape& t) {
    Tensor& gx = t.grad_buffer(x);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < 2 * H; ++h)
          for (int w = 0; w < 2 * W; ++w) gx.at(n, c, h / 2, w / 2) += g.at(n, c, h, w);
  });
}

Var coordinate_gate(const Var& x, const Var& gate_h, const Var& gate_w) {
  const Tensor& v = x.value();
  require_rank(v, 4, "coordinate_gate input");
  const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  if (gate_h.shape() != Shape{N, C, H, 1}) {
    throw DimensionError("coordinate_gate: gate_h " + axes_of(gate_h) + " must be [N,C,H,1] for input " + axes_of(x));
  }
  if (gate_w.shape() != Shape{N, C, W, 1}) {
    throw DimensionError("coordinate_gate: gate_w " + axes_of(gate_w) + " must be [N,C,W,1] for input " + axes_of(x));
  }
  const Tensor& gh = gate_h.value();
  const Tensor& gw = gate_w.value();
  Tensor out(v.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) out.at(n, c, h, w) = v.at(n, c, h, w) * gh.at(n, c, h, 0) * gw.at(n, c, w, 0);
  return tape_of(x).record(std::move(out), {x, gate_h, gate_w}, [=](const Tensor& g, Tape& t) {
    const Tensor& v = x.value();
    const Tensor& gh = gate_h.value();
    const Tensor& gw = gate_w.value();
    Tensor* gx = t.needs_grad(x) ? &t.grad_buffer(x) : nullptr;
    Tensor* ggh = t.needs_grad(gate_h) ? &t.grad_buffer(gate_h) : nullptr;
    Tensor* ggw = t.needs_grad(gate_w) ? &t.grad_buffer(gate_w) : nullptr;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) {
            const double go = g.at(n, c, h, w);
            const double a = gh.at(n, c, h, 0), b = gw.at(n, c, w, 0);
            if (gx) gx->at(n, c, h, w) += go * a * b;
            if (ggh) ggh->at(n, c, h, 0) += go * v.at(n, c, h, w) * b;
            if (ggw) ggw->at(n, c, w, 0) += go * v.at(n, c, h, w) * a;
          }
  });
}

Var dynamic_relu(const Var& x, const Var& a1, const Var& b1, const Var& a2, const Var& b2) {
  const Tensor& v = x.value();
  require_rank(v, 4, "dynamic_relu input");
  const int N = v.dim(0), C = v.dim(1);
  const std::size_t plane = static_cast<std::size_t>(v.dim(2)) * v.dim(3);
  for (const Var* p : {&a1, &b1, &a2, &b2}) {
    if (p->shape() != Shape{N, C}) {
      throw DimensionError("dynamic_relu: coefficients " + axes_of(*p) + " must be [N,C] for input " + axes_of(x));
    }
  }
  Tensor out(v.shape());
  BranchHasher branches;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double s1 = a1.value().at(n, c), o1 = b1.value().at(n, c);
      const double s2 = a2.value().at(n, c), o2 = b2.value().at(n, c);
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double y1 = s1 * v[off + i] + o1;
        const double y2 = s2 * v[off + i] + o2;
        const bool first = y1 >= y2;
        out[off + i] = first ? y1 : y2;
        branches.add(first);
      }
    }
  Tape& tape = tape_of(x);
  tape.note_branch(branches.finish());
  return tape.record(std::move(out), {x, a1, b1, a2, b2}, [=](const Tensor& g, Tape& t) {
    const Tensor& v = x.value();
    Tensor* gx = t.needs_grad(x) ? &t.grad_buffer(x) : nullptr;
    Tensor* ga1 = t.needs_grad(a1) ? &t.grad_buffer(a1) : nullptr;
    Tensor* gb1 = t.needs_grad(b1) ? &t.grad_buffer(b1) : nullptr;
    Tensor* ga2 = t.needs_grad(a2) ? &t.grad_buffer(a2) : nullptr;
    Tensor* gb2 = t.needs_grad(b2) ? &t.grad_buffer(b2) : nullptr;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const double s1 = a1.value().at(n, c), o1 = b1.value().at(n, c);
        const double s2 = a2.value().at(n, c), o2 = b2.value().at(n, c);
        const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
        double da1 = 0, db1 = 0, da2 = 0, db2 = 0;
        for (std::size_t i = 0; i < plane; ++i) {
          const double xi = v[off + i];
          const double go = g[off + i];
          if (s1 * xi + o1 >= s2 * xi + o2) {
            if (gx) (*gx)[off + i] += go * s1;
            da1 += go * xi;
            db1 += go;
          } else {
            if (gx) (*gx)[off + i] += go * s2;
            da2 += go * xi;
            db2 += go;
          }
        }
        if (ga1) ga1->at(n, c) += da1;
        if (gb1) gb1->at(n, c) += db1;
        if (ga2) ga2->at(n, c) += da2;
        if (gb2) gb2->at(n, c) += db2;
      }
  });
}

Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw DimensionError("add: " + axes_of(a) + " vs " + axes_of(b));
  Tensor out = a.value();
  out.add_inplace(b.value());
  return tape_of(a).record(std::move(out), {a, b}, [a, b](const Tensor& g, Tape& t) {
    if (t.needs_grad(a)) t.grad_buffer(a).add_inplace(g);
    if (t.needs_grad(b)) t.grad_buffer(b).add_inplace(g);
  });
}

Var mul(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw DimensionError("mul: " + axes_of(a) + " vs " + axes_of(b));
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return tape_of(a).record(std::move(out), {a, b}, [a, b](const Tensor& g, Tape& t) {
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.value()[i];
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.value()[i];
    }
  });
}

Var affine(const Var& x, double scale, double shift) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * x.value()[i] + shift;
  return tape_of(x).record(std::move(out), {x}, [x, scale](const Tensor& g, Tape& t) {
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += scale * g[i];
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return tape_of(x).record(Tensor({1}, s), {x}, [x](const Tensor& g, Tape& t) {
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
  });
}

}  // namespace tacr::ops
