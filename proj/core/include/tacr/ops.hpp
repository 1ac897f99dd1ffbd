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

#pragma once

#include <span>
#include <string_view>

#include "tacr/autodiff.hpp"

// Differentiable primitives. Every op records itself on the tape of its
// first input and throws DimensionError on shape mismatch.
namespace tacr::ops {

enum class Mode { kTrain, kEval };
enum class Activation { kRelu, kSigmoid, kSwish };

Activation parse_activation(std::string_view name);

// Direct convolution with zero padding. `bias` may be an unbound Var.
Var conv2d(const Var& input, const Var& weight, const Var& bias, int stride, int padding);
int conv_output_size(int in, int kernel, int stride, int padding);

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Running statistics of one batchnorm layer. `batches` counts train-mode
// updates; eval mode on an unpopulated layer is a StateError.
struct BatchNormStats {
  Parameter* mean = nullptr;
  Parameter* var = nullptr;
  Parameter* batches = nullptr;
};

// Per-channel normalization over (N, spatial...) of a rank-4 input.
Var batchnorm2d(const Var& input, const Var& gamma, const Var& beta, const BatchNormStats& stats, Mode mode,
                double eps = kBatchNormEps, double momentum = kBatchNormMomentum);

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var swish(const Var& x);
Var activation(const Var& x, Activation kind);

double sigmoid(double x);

// [N,C,H,W] -> [N,C].
Var global_avg_pool(const Var& x);
// [N,C,H,W] -> [N,C,H,1], averaging along width.
Var mean_over_width(const Var& x);
// [N,C,H,W] -> [N,C,W,1], averaging along height (stored transposed).
Var mean_over_height(const Var& x);

Var concat(std::span<const Var> parts, int axis);
Var slice(const Var& x, int axis, int start, int length);
Var reshape(const Var& x, Shape shape);

// x [N,In], weight [Out,In], bias [Out] (optional) -> [N,Out].
Var linear(const Var& x, const Var& weight, const Var& bias);

Var upsample_nearest2x(const Var& x);

// y[n,c,h,w] = x[n,c,h,w] * gh[n,c,h,0] * gw[n,c,w,0].
Var coordinate_gate(const Var& x, const Var& gate_h, const Var& gate_w);

// y = max(a1*x + b1, a2*x + b2) with per-(n,c) coefficients of shape [N,C].
// Exact ties route the gradient to the first branch.
Var dynamic_relu(const Var& x, const Var& a1, const Var& b1, const Var& a2, const Var& b2);

Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
// y = scale * x + shift, elementwise with constants.
Var affine(const Var& x, double scale, double shift);
// Sum of all elements -> shape [1].
Var sum(const Var& x);

}  // namespace tacr::ops
