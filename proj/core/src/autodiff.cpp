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

#include "tacr/autodiff.hpp"

#include "tacr/error.hpp"

namespace tacr {

Parameter& ParameterStore::add(const std::string& name, Tensor value, bool trainable) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, params_.size());
  Tensor grad = Tensor::zeros_like(value);
  params_.push_back(Parameter{name, std::move(value), std::move(grad), trainable});
  return params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return params_[it->second];
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

std::size_t ParameterStore::scalar_count(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (!trainable_only || p.trainable) n += p.value.size();
  }
  return n;
}

const Tensor& Var::value() const {
  if (!tape_) throw GraphError("use of an unbound Var");
  return tape_->value(id_);
}

Tensor Var::grad() const {
  if (!tape_) throw GraphError("use of an unbound Var");
  return tape_->grad(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), false, nullptr, nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), track_, nullptr, nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
  nodes_.push_back(Node{p.value, Tensor(), track_ && p.trainable, &p, nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
  if (!value.all_finite()) throw NumericError("non-finite value produced by a recorded op");
  bool req = false;
  for (const auto& p : parents) {
    check_owned(p, "op input");
    req = req || requires_grad(p.id());
  }
  nodes_.push_back(Node{std::move(value), Tensor(), req, nullptr, req ? std::move(fn) : nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::check_owned(const Var& v, const char* what) const {
  if (v.tape() != this || v.id() < 0 || static_cast<std::size_t>(v.id()) >= nodes_.size()) {
    throw GraphError(std::string(what) + " is not recorded on this tape");
  }
}

bool Tape::needs_grad(const Var& v) const { return requires_grad(v.id()); }

Tensor& Tape::grad_buffer(const Var& v) {
  Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
  return n.grad;
}

Tensor Tape::grad(int id) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(id));
  return n.grad.empty() ? Tensor::zeros_like(n.value) : n.grad;
}

void Tape::note_branch(std::uint64_t bits) {
  branch_signature_ ^= bits + 0x9e3779b97f4a7c15ULL + (branch_signature_ << 6) + (branch_signature_ >> 2);
}

void Tape::backward(const Var& loss, double upstream) {
  check_owned(loss, "loss");
  if (value(loss.id()).size() != 1) {
    throw GraphError("backward() needs a scalar loss, got shape " + shape_string(value(loss.id()).shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  last_order_.clear();
  if (!requires_grad(loss.id())) return;

  grad_buffer(loss)[0] = upstream;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) continue;
    last_order_.push_back(id);
    if (n.backward) n.backward(n.grad, *this);
    if (n.param) n.param->grad.add_inplace(n.grad);
  }
}

}  // namespace tacr
