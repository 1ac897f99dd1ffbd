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

#include <cmath>
#include <cstring>
#include <fstream>

#include "tacr/autodiff.hpp"
#include "tacr/checkpoint.hpp"
#include "tacr/error.hpp"
#include "tacr/ops.hpp"
#include "test_util.hpp"

namespace tacr {
namespace {

using testing::max_abs_diff;
using testing::random_tensor;

Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), Kh = w.dim(2), Kw = w.dim(3);
  const int Ho = (H + 2 * pad - Kh) / stride + 1, Wo = (W + 2 * pad - Kw) / stride + 1;
  Tensor out({N, Co, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < Co; ++o)
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
          double s = b.empty() ? 0.0 : b[static_cast<std::size_t>(o)];
          for (int c = 0; c < C; ++c)
            for (int u = 0; u < Kh; ++u)
              for (int v = 0; v < Kw; ++v) {
                const int y = i * stride - pad + u, xx = j * stride - pad + v;
                if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
                s += x.at(n, c, y, xx) * w.at(o, c, u, v);
              }
          out.at(n, o, i, j) = s;
        }
  return out;
}

TEST(Tensor, SizeMatchesShapeProduct) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(shape_size({5, 1, 7}), 35u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Conv2d, OneByOneScalesChannel) {
  Tape tape;
  const Var x = tape.constant(Tensor({1, 1, 3, 3}, 1.0));
  const Var w = tape.constant(Tensor({1, 1, 1, 1}, 2.0));
  const Var b = tape.constant(Tensor({1}, 0.0));
  const Tensor& y = ops::conv2d(x, w, b, 1, 0).value();
  EXPECT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (double v : y.data()) EXPECT_EQ(v, 2.0);
}

TEST(Conv2d, SumOfEntries) {
  Tape tape;
  const Var x = tape.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
  const Var w = tape.constant(Tensor({1, 1, 2, 2}, 1.0));
  const Var b = tape.constant(Tensor({1}, 0.0));
  const Tensor& y = ops::conv2d(x, w, b, 1, 0).value();
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], 10.0);
}

TEST(Conv2d, MatchesTripleLoopOracle) {
  Rng rng(11);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng);
  const Tensor w = random_tensor({4, 3, 3, 3}, rng);
  const Tensor b = random_tensor({4}, rng);
  Tape tape;
  const Tensor& y = ops::conv2d(tape.constant(x), tape.constant(w), tape.constant(b), 1, 1).value();
  EXPECT_EQ(y.shape(), (Shape{2, 4, 8, 8}));
  EXPECT_LT(max_abs_diff(y, conv_oracle(x, w, b, 1, 1)), 1e-12);
}

TEST(Conv2d, ShapeFuzzMatchesClosedForm) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int H = rng.uniform_int(1, 9), W = rng.uniform_int(1, 9);
    const int k = rng.uniform_int(1, 3), stride = rng.uniform_int(1, 3), pad = rng.uniform_int(0, 2);
    if (k > H + 2 * pad || k > W + 2 * pad) continue;
    const int C = rng.uniform_int(1, 3), Co = rng.uniform_int(1, 3);
    const Tensor x = random_tensor({1, C, H, W}, rng);
    const Tensor w = random_tensor({Co, C, k, k}, rng);
    Tape tape;
    const Tensor& y = ops::conv2d(tape.constant(x), tape.constant(w), Var(), stride, pad).value();
    EXPECT_EQ(y.dim(2), (H + 2 * pad - k) / stride + 1);
    EXPECT_EQ(y.dim(3), (W + 2 * pad - k) / stride + 1);
    EXPECT_EQ(ops::conv_output_size(H, k, stride, pad), y.dim(2));
    EXPECT_LT(max_abs_diff(y, conv_oracle(x, w, Tensor(), stride, pad)), 1e-12);
  }
}

TEST(Conv2d, ShapeMismatchNamesAxes) {
  Tape tape;
  const Var x = tape.constant(Tensor({1, 2, 4, 4}));
  const Var w = tape.constant(Tensor({1, 3, 3, 3}));
  try {
    ops::conv2d(x, w, Var(), 1, 0);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("axis 1"), std::string::npos);
  }
  EXPECT_THROW(ops::conv2d(tape.constant(Tensor({1, 1, 2, 2})), tape.constant(Tensor({1, 1, 3, 3})), Var(), 1, 0),
               DimensionError);
  EXPECT_THROW(ops::conv2d(x, tape.constant(Tensor({1, 2, 1, 1})), Var(), 0, 0), DimensionError);
}

TEST(GlobalAvgPool, Examples) {
  Tape tape;
  EXPECT_EQ(ops::global_avg_pool(tape.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}))).value()[0], 2.5);
  const Tensor& c = ops::global_avg_pool(tape.constant(Tensor({2, 3, 4, 5}, 1.75))).value();
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  for (double v : c.data()) EXPECT_DOUBLE_EQ(v, 1.75);
}

TEST(GlobalAvgPool, MatchesLoopOracle) {
  Rng rng(3);
  const Tensor x = random_tensor({2, 5, 7, 3}, rng);
  Tape tape;
  const Tensor& y = ops::global_avg_pool(tape.constant(x)).value();
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 5; ++c) {
      double s = 0.0;
      for (int h = 0; h < 7; ++h)
        for (int w = 0; w < 3; ++w) s += x.at(n, c, h, w);
      EXPECT_NEAR(y.at(n, c), s / 21.0, 1e-12);
    }
}

struct BnFixture {
  ParameterStore store;
  ops::BatchNormStats stats;
  explicit BnFixture(int c) { stats = add_batchnorm_stats(store, "bn", c); }
};

TEST(BatchNorm, IdentityOnStandardizedData) {
  // Two values per channel at +/-1: mean 0, biased variance 1.
  Tensor x({2, 2, 1, 1}, {1.0, -1.0, -1.0, 1.0});
  BnFixture f(2);
  Tape tape;
  const Tensor& y = ops::batchnorm2d(tape.constant(x), tape.constant(Tensor({2}, 1.0)),
                                     tape.constant(Tensor({2}, 0.0)), f.stats, ops::Mode::kTrain)
                        .value();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i] / std::sqrt(1.0 + ops::kBatchNormEps), 1e-15);
  EXPECT_LT(max_abs_diff(y, x), 1e-5);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  Rng rng(4);
  BnFixture f(3);
  Tape tape;
  const Tensor& y = ops::batchnorm2d(tape.constant(random_tensor({2, 3, 4, 4}, rng)), tape.constant(Tensor({3}, 0.0)),
                                     tape.constant(Tensor({3}, {0.5, -1.0, 2.0})), f.stats, ops::Mode::kTrain)
                        .value();
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 4; ++w) EXPECT_EQ(y.at(n, c, h, w), (std::array{0.5, -1.0, 2.0}[c]));
}

TEST(BatchNorm, TrainModeMoments) {
  Rng rng(9);
  const Tensor x = random_tensor({4, 3, 5, 5}, rng, -3.0, 7.0);
  BnFixture f(3);
  Tape tape;
  const Tensor& y = ops::batchnorm2d(tape.constant(x), tape.constant(Tensor({3}, 1.0)),
                                     tape.constant(Tensor({3}, 0.0)), f.stats, ops::Mode::kTrain)
                        .value();
  for (int c = 0; c < 3; ++c) {
    double s = 0.0, s2 = 0.0, xs = 0.0, xs2 = 0.0;
    const double cnt = 4 * 25;
    for (int n = 0; n < 4; ++n)
      for (int h = 0; h < 5; ++h)
        for (int w = 0; w < 5; ++w) {
          s += y.at(n, c, h, w);
          xs += x.at(n, c, h, w);
        }
    const double xm = xs / cnt;
    for (int n = 0; n < 4; ++n)
      for (int h = 0; h < 5; ++h)
        for (int w = 0; w < 5; ++w) {
          s2 += y.at(n, c, h, w) * y.at(n, c, h, w);
          xs2 += (x.at(n, c, h, w) - xm) * (x.at(n, c, h, w) - xm);
        }
    const double var_x = xs2 / cnt;
    EXPECT_LT(std::abs(s / cnt), 1e-10);
    EXPECT_NEAR(s2 / cnt, var_x / (var_x + ops::kBatchNormEps), 1e-6);
    // Running stats moved by the momentum toward the batch statistics.
    EXPECT_NEAR(f.stats.mean->value[c], ops::kBatchNormMomentum * xm, 1e-12);
  }
  EXPECT_EQ(f.stats.batches->value[0], 1.0);
}

TEST(BatchNorm, EvalWithoutStatsIsStateError) {
  BnFixture f(1);
  Tape tape;
  EXPECT_THROW(ops::batchnorm2d(tape.constant(Tensor({1, 1, 2, 2}, 1.0)), tape.constant(Tensor({1}, 1.0)),
                                tape.constant(Tensor({1}, 0.0)), f.stats, ops::Mode::kEval),
               StateError);
}

TEST(BatchNorm, EvalUsesRunningStats) {
  BnFixture f(1);
  f.stats.mean->value[0] = 2.0;
  f.stats.var->value[0] = 4.0;
  f.stats.batches->value[0] = 1.0;
  Tape tape;
  const Tensor& y = ops::batchnorm2d(tape.constant(Tensor({1, 1, 1, 2}, {2.0, 4.0})), tape.constant(Tensor({1}, 1.0)),
                                     tape.constant(Tensor({1}, 0.0)), f.stats, ops::Mode::kEval)
                        .value();
  EXPECT_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], 2.0 / std::sqrt(4.0 + ops::kBatchNormEps), 1e-15);
}

TEST(Activation, Examples) {
  Tape tape;
  const Var x = tape.constant(Tensor({3}, {-1.0, 2.0, 0.0}));
  const Tensor& r = ops::relu(x).value();
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], 2.0);
  EXPECT_EQ(ops::sigmoid(x).value()[2], 0.5);
  EXPECT_EQ(ops::swish(x).value()[2], 0.0);
  EXPECT_DOUBLE_EQ(ops::swish(x).value()[1], 2.0 * ops::sigmoid(2.0));
  EXPECT_EQ(ops::activation(x, ops::parse_activation("relu")).value(), r);
  EXPECT_THROW(ops::parse_activation("gelu"), ConfigError);
}

TEST(Activation, SigmoidStrictlyInsideUnitInterval) {
  Tape tape;
  const Tensor& s = ops::sigmoid(tape.constant(Tensor({4}, {-40.0, -700.0, 40.0, 700.0}))).value();
  for (double v : s.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Backward, LinearFormGradientIsInput) {
  Rng rng(2);
  ParameterStore store;
  Parameter& w = store.add("w", random_tensor({6}, rng));
  const Tensor x = random_tensor({6}, rng);
  Tape tape;
  const Var loss = ops::sum(ops::mul(tape.param(w), tape.constant(x)));
  tape.backward(loss);
  EXPECT_EQ(w.grad, x);
}

TEST(Backward, SigmoidAtZero) {
  ParameterStore store;
  Parameter& w = store.add("w", Tensor({1}, 0.0));
  Tape tape;
  tape.backward(ops::sum(ops::sigmoid(tape.param(w))));
  EXPECT_EQ(w.grad[0], 0.25);
}

TEST(Backward, AccumulatesAcrossCalls) {
  ParameterStore store;
  Parameter& w = store.add("w", Tensor({2}, {1.0, -2.0}));
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(ops::sum(ops::affine(tape.param(w), 3.0, 1.0)));
  }
  EXPECT_EQ(w.grad[0], 6.0);
  EXPECT_EQ(w.grad[1], 6.0);
  store.zero_grad();
  EXPECT_EQ(w.grad[0], 0.0);
}

TEST(Backward, ZeroUpstreamGivesZeroGrads) {
  Rng rng(8);
  ParameterStore store;
  Parameter& w = store.add("w", random_tensor({2, 3, 3, 3}, rng));
  Parameter& b = store.add("b", random_tensor({2}, rng));
  Tape tape;
  const Var y = ops::swish(ops::conv2d(tape.constant(random_tensor({1, 3, 5, 5}, rng)), tape.param(w),
                                       tape.param(b), 1, 1));
  tape.backward(ops::sum(y), 0.0);
  for (double g : w.grad.data()) EXPECT_EQ(g, 0.0);
  for (double g : b.grad.data()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, LossNotOnTapeIsGraphError) {
  Tape a, b;
  const Var x = a.input(Tensor({1}, 1.0));
  EXPECT_THROW(b.backward(x), GraphError);
  EXPECT_THROW(a.backward(a.input(Tensor({2}, 1.0))), GraphError);
  EXPECT_THROW(ops::relu(Var()), GraphError);
  EXPECT_THROW(ops::add(x, b.input(Tensor({1}, 1.0))), GraphError);
}

TEST(Backward, VisitsOpsInReverseTopologicalOrder) {
  Rng rng(12);
  Tape tape;
  const Var x = tape.input(random_tensor({1, 2, 4, 4}, rng));
  const Var w = tape.input(random_tensor({2, 2, 3, 3}, rng));
  const Var h = ops::relu(ops::conv2d(x, w, Var(), 1, 1));
  const Var g = ops::sigmoid(ops::global_avg_pool(h));
  const Var z = ops::sum(ops::add(ops::global_avg_pool(x), g));
  tape.backward(z);
  const auto& order = tape.last_backward_order();
  ASSERT_FALSE(order.empty());
  EXPECT_EQ(order.front(), z.id());
  // Every node is visited after all of its consumers: ids strictly decrease
  // and the tape records parents before children.
  for (std::size_t i = 1; i < order.size(); ++i) EXPECT_LT(order[i], order[i - 1]);
}

TEST(Backward, ElementwiseOpsMatchHandDerivatives) {
  ParameterStore store;
  Parameter& a = store.add("a", Tensor({2}, {0.5, -1.5}));
  Parameter& b = store.add("b", Tensor({2}, {2.0, 3.0}));
  Tape tape;
  tape.backward(ops::sum(ops::mul(ops::swish(tape.param(a)), tape.param(b))));
  for (int i = 0; i < 2; ++i) {
    const double x = a.value[i], s = ops::sigmoid(x);
    EXPECT_NEAR(a.grad[i], b.value[i] * (s + x * s * (1 - s)), 1e-15);
    EXPECT_NEAR(b.grad[i], x * s, 1e-15);
  }
}

TEST(Tape, NonFiniteValueIsNumericError) {
  Tape tape;
  const Var x = tape.input(Tensor({1}, 1e308));
  EXPECT_THROW(ops::affine(x, 10.0, 0.0), NumericError);
}

TEST(Tape, InferenceTapeTracksNothing) {
  ParameterStore store;
  Parameter& w = store.add("w", Tensor({1}, 1.0));
  Tape tape(false);
  const Var y = ops::sum(ops::relu(tape.param(w)));
  EXPECT_FALSE(y.requires_grad());
}

TEST(ParameterStore, NamesAreUnique) {
  ParameterStore store;
  store.add("w", Tensor({2}));
  EXPECT_THROW(store.add("w", Tensor({3})), ConfigError);
  EXPECT_THROW(store.get("missing"), ConfigError);
  EXPECT_EQ(store.get("w").grad.shape(), store.get("w").value.shape());
}

TEST(Ops, DeterministicAcrossRuns) {
  auto run = [] {
    Rng rng(77);
    const Tensor x = random_tensor({2, 3, 6, 6}, rng);
    const Tensor w = random_tensor({4, 3, 3, 3}, rng);
    Tape tape;
    return ops::swish(ops::conv2d(tape.constant(x), tape.constant(w), Var(), 2, 1)).value();
  };
  const Tensor a = run(), b = run();
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(double)), 0);
}

TEST(Ops, ConcatSliceUpsample) {
  Tape tape;
  const Var a = tape.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
  const Var b = tape.constant(Tensor({1, 2, 2, 2}, 9.0));
  const Var c = ops::concat(std::vector<Var>{a, b}, 1);
  EXPECT_EQ(c.shape(), (Shape{1, 3, 2, 2}));
  EXPECT_EQ(ops::slice(c, 1, 0, 1).value(), a.value());
  const Tensor& u = ops::upsample_nearest2x(a).value();
  EXPECT_EQ(u.shape(), (Shape{1, 1, 4, 4}));
  EXPECT_EQ(u.at(0, 0, 1, 1), 1.0);
  EXPECT_EQ(u.at(0, 0, 3, 2), 4.0);
  EXPECT_THROW(ops::concat(std::vector<Var>{a, tape.constant(Tensor({1, 1, 3, 2}))}, 1), DimensionError);
  EXPECT_THROW(ops::slice(a, 1, 0, 2), DimensionError);
}

TEST(Checkpoint, RoundTripRoundsToFloat32) {
  testing::TempDir dir("ckpt");
  Rng rng(21);
  ParameterStore a;
  a.add("conv.weight", random_tensor({2, 3, 3, 3}, rng));
  a.add("bn.running_mean", random_tensor({2}, rng), false);
  save_checkpoint(a, dir.path() / "m.ckpt");

  std::ifstream in(dir.path() / "m.ckpt", std::ios::binary);
  std::string first;
  std::getline(in, first);
  EXPECT_EQ(first, kCheckpointMagic);

  const auto manifest = read_checkpoint_manifest(dir.path() / "m.ckpt");
  ASSERT_EQ(manifest.size(), 2u);
  EXPECT_EQ(manifest[0].name, "conv.weight");
  EXPECT_EQ(manifest[0].dtype, "float32");
  EXPECT_EQ(manifest[1].offset, 54u * 4u);

  ParameterStore b;
  b.add("conv.weight", Tensor({2, 3, 3, 3}));
  b.add("bn.running_mean", Tensor({2}), false);
  load_checkpoint(b, dir.path() / "m.ckpt");
  for (std::size_t i = 0; i < a.all().size(); ++i) {
    const Tensor& va = a.all()[i].value;
    const Tensor& vb = b.all()[i].value;
    for (std::size_t j = 0; j < va.size(); ++j) EXPECT_EQ(vb[j], static_cast<double>(static_cast<float>(va[j])));
  }
  round_to_float32(a);
  EXPECT_EQ(a.all()[0].value, b.all()[0].value);
}

TEST(Checkpoint, RejectsMismatches) {
  testing::TempDir dir("ckpt_bad");
  ParameterStore a;
  a.add("w", Tensor({2}, 1.0));
  save_checkpoint(a, dir.path() / "a.ckpt");
  ParameterStore wrong_shape;
  wrong_shape.add("w", Tensor({3}));
  EXPECT_THROW(load_checkpoint(wrong_shape, dir.path() / "a.ckpt"), ParseError);
  ParameterStore wrong_name;
  wrong_name.add("v", Tensor({2}));
  EXPECT_THROW(load_checkpoint(wrong_name, dir.path() / "a.ckpt"), ParseError);
  std::ofstream(dir.path() / "junk.ckpt") << "NOT-A-CKPT\n{}";
  EXPECT_THROW(load_checkpoint(a, dir.path() / "junk.ckpt"), ParseError);
  EXPECT_THROW(load_checkpoint(a, dir.path() / "missing.ckpt"), IoError);
}

}  // namespace
}  // namespace tacr
