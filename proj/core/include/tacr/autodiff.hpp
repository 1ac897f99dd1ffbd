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

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tacr/tensor.hpp"

namespace tacr {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

// Owns a model's parameters. Addresses stay valid for the store's lifetime.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  // Throws ConfigError on a duplicate name.
  Parameter& add(const std::string& name, Tensor value, bool trainable = true);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }

  void zero_grad();
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count(bool trainable_only = true) const;

  // Registration order.
  std::deque<Parameter>& all() { return params_; }
  const std::deque<Parameter>& all() const { return params_; }

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

class Tape;

// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  // Gradient after Tape::backward; zeros if the node did not receive one.
  Tensor grad() const;
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Receives the upstream gradient of a node and accumulates into its parents.
using BackwardFn = std::function<void(const Tensor& grad_out, Tape& tape)>;

// Records primitive applications in execution order. backward() walks the
// record in exact reverse order.
class Tape {
 public:
  Tape() = default;
  // With `track_gradients` false nothing requires grad and backward closures
  // are dropped (inference).
  explicit Tape(bool track_gradients) : track_(track_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf whose gradient is kept on the tape (inspect with Var::grad).
  Var input(Tensor value);
  // Leaf bound to a parameter; backward accumulates into param.grad.
  Var param(Parameter& p);

  // Records an op. The node requires grad iff any parent does; `fn` is
  // dropped otherwise.
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn fn);

  // Reverse sweep from a scalar. Node gradients are reset at the start of
  // every sweep; parameter gradients accumulate across calls.
  void backward(const Var& loss, double upstream = 1.0);

  bool needs_grad(const Var& v) const;
  // Gradient buffer of a node, allocated on first use.
  Tensor& grad_buffer(const Var& v);

  const Tensor& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  Tensor grad(int id) const;
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Piecewise ops report which branch each element took; two evaluations
  // with equal signatures lie on the same smooth piece.
  void note_branch(std::uint64_t bits);
  std::uint64_t branch_signature() const { return branch_signature_; }

  // Ids visited by the most recent backward(), in visiting order.
  const std::vector<int>& last_backward_order() const { return last_order_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  void check_owned(const Var& v, const char* what) const;

  std::deque<Node> nodes_;
  bool track_ = true;
  std::uint64_t branch_signature_ = 0xcbf29ce484222325ULL;
  std::vector<int> last_order_;
};

}  // namespace tacr
