// Copyright 2026 The ccperso Authors. All Rights Reserved.
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
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ccperso/tensor.hpp"

namespace ccperso {

// Handle into a Graph. Only meaningful for the graph that created it.
struct Var {
  std::uint32_t id = 0;
};

// Tape-based reverse-mode differentiation over a small op set. Nodes are
// appended in evaluation order, so the tape is already topologically
// sorted; backward() walks it once in reverse.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Leaf that receives a gradient. Repeated calls with the same name return
  // the same node.
  Var parameter(std::string_view name, const Tensor& value);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  // Zero-shaped tensor when no gradient reached the node.
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }

  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var add_row(Var a, Var row);
  Var mul_row(Var a, Var row);
  // Rows of the result are a_i + b_j for every (i, j), i major.
  Var pair_add(Var a, Var b);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var log_softmax(Var a);
  Var gather_rows(Var a, std::vector<std::size_t> rows);
  Var row(Var a, std::size_t r);
  Var stack_rows(std::span<const Var> rows);
  Var concat_cols(Var a, Var b);
  Var sum(Var a);
  // Column sums as a 1 x n row.
  Var sum_rows(Var a);

  // Scalar node whose derivative with respect to `input` is supplied by the
  // caller (e.g. a dynamic-programming loss with an analytic gradient).
  Var scalar_with_gradient(Var input, double value, Tensor d_value_d_input);

  // Seeds d(root)/d(root) = 1; root must hold a single value.
  void backward(Var root);

  // Accumulated gradients of every parameter node, zeros where unreached.
  Gradients parameter_gradients() const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::function<void(Graph&)> backprop;
  };

  Var push(Tensor value, bool needs_grad,
           std::function<void(Graph&)> backprop = {});
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  Tensor& grad_slot(Var v);
  const Tensor& out_grad(std::uint32_t id) const { return nodes_[id].grad; }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::uint32_t> params_;
};

}  // namespace ccperso
