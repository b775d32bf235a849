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

#include "ccperso/autodiff.hpp"

#include <cmath>

#include "ccperso/error.hpp"
#include "ccperso/simd/kernels.hpp"

namespace ccperso {

Var Graph::push(Tensor value, bool needs_grad,
                std::function<void(Graph&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor& Graph::grad_slot(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Var Graph::constant(Tensor value) { return push(std::move(value), false); }

Var Graph::parameter(std::string_view name, const Tensor& value) {
  auto it = params_.find(std::string(name));
  if (it != params_.end()) return Var{it->second};
  Var v = push(value, true, [](Graph&) {});
  params_.emplace(std::string(name), v.id);
  return v;
}

Var Graph::matmul(Var a, Var b) {
  Tensor out = ops::matmul(value(a), value(b));
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), needs(a) || needs(b), [a, b, o](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    const auto& k = simd::kernels();
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    const std::size_t m = av.dim(0), kk = av.dim(1), n = bv.dim(1);
    if (g.needs(a)) {
      // dA += dY * B^T
      k.gemm_nt(dy.ptr(), bv.ptr(), g.grad_slot(a).ptr(), m, n, kk, true);
    }
    if (g.needs(b)) {
      // dB += A^T * dY
      k.gemm_tn(av.ptr(), dy.ptr(), g.grad_slot(b).ptr(), kk, m, n, true);
    }
  });
}

Var Graph::matmul_nt(Var a, Var b) {
  Tensor out = ops::matmul_nt(value(a), value(b));
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), needs(a) || needs(b), [a, b, o](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    const auto& k = simd::kernels();
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    const std::size_t m = av.dim(0), kk = av.dim(1), n = bv.dim(0);
    if (g.needs(a)) {
      // dA += dY * B
      k.gemm_nn(dy.ptr(), bv.ptr(), g.grad_slot(a).ptr(), m, n, kk, true);
    }
    if (g.needs(b)) {
      // dB += dY^T * A
      k.gemm_tn(dy.ptr(), av.ptr(), g.grad_slot(b).ptr(), n, m, kk, true);
    }
  });
}

Var Graph::add(Var a, Var b) {
  Tensor out = ops::add(value(a), value(b));
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), needs(a) || needs(b), [a, b, o](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    const auto& k = simd::kernels();
    if (g.needs(a)) k.axpy(1.0, dy.ptr(), g.grad_slot(a).ptr(), dy.size());
    if (g.needs(b)) k.axpy(1.0, dy.ptr(), g.grad_slot(b).ptr(), dy.size());
  });
}

Var Graph::sub(Var a, Var b) {
  Tensor out = ops::sub(value(a), value(b));
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), needs(a) || needs(b), [a, b, o](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    const auto& k = simd::kernels();
    if (g.needs(a)) k.axpy(1.0, dy.ptr(), g.grad_slot(a).ptr(), dy.size());
    if (g.needs(b)) k.axpy(-1.0, dy.ptr(), g.grad_slot(b).ptr(), dy.size());
  });
}

Var Graph::mul(Var a, Var b) {
  Tensor out = ops::mul(value(a), value(b));
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), needs(a) || needs(b), [a, b, o](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    const auto& k = simd::kernels();
    if (g.needs(a)) k.mul_acc(dy.ptr(), g.value(b).ptr(), g.grad_slot(a).ptr(), dy.size());
    if (g.needs(b)) k.mul_acc(dy.ptr(), g.value(a).ptr(), g.grad_slot(b).ptr(), dy.size());
  });
}

Var Graph::add_row(Var a, Var row) {
  Tensor out = ops::add_row(value(a), value(row));
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), needs(a) || needs(row), [a, row, o](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    const auto& k = simd::kernels();
    if (g.needs(a)) k.axpy(1.0, dy.ptr(), g.grad_slot(a).ptr(), dy.size());
    if (g.needs(row)) {
      Tensor& dr = g.grad_slot(row);
      for (std::size_t r = 0; r < dy.rows(); ++r)
        k.axpy(1.0, dy.row(r).data(), dr.ptr(), dy.cols());
    }
  });
}

Var Graph::mul_row(Var a, Var row) {
  Tensor out = ops::mul_row(value(a), value(row));
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), needs(a) || needs(row), [a, row, o](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    const auto& k = simd::kernels();
    const Tensor& av = g.value(a);
    const Tensor& rv = g.value(row);
    if (g.needs(a)) {
      Tensor& da = g.grad_slot(a);
      for (std::size_t r = 0; r < dy.rows(); ++r)
        k.mul_acc(dy.row(r).data(), rv.ptr(), da.row(r).data(), dy.cols());
    }
    if (g.needs(row)) {
      Tensor& dr = g.grad_slot(row);
      for (std::size_t r = 0; r < dy.rows(); ++r)
        k.mul_acc(dy.row(r).data(), av.row(r).data(), dr.ptr(), dy.cols());
    }
  });
}

Var Graph::pair_add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(1)) {
    throw ShapeError("pair_add: " + shape_string(av.shape()) + " and " +
                     shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), n = bv.dim(0), c = av.dim(1);
  Tensor out({m * n, c});
  const auto& k = simd::kernels();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      k.add(av.row(i).data(), bv.row(j).data(), out.row(i * n + j).data(), c);
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), needs(a) || needs(b), [a, b, o, m, n, c](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    const auto& k = simd::kernels();
    if (g.needs(a)) {
      Tensor& da = g.grad_slot(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          k.axpy(1.0, dy.row(i * n + j).data(), da.row(i).data(), c);
    }
    if (g.needs(b)) {
      Tensor& db = g.grad_slot(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          k.axpy(1.0, dy.row(i * n + j).data(), db.row(j).data(), c);
    }
  });
}

Var Graph::scale(Var a, double c) {
  Tensor out = ops::scale(value(a), c);
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), needs(a), [a, c, o](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    simd::kernels().axpy(c, dy.ptr(), g.grad_slot(a).ptr(), dy.size());
  });
}

Var Graph::add_scalar(Var a, double c) {
  Tensor out = value(a);
  for (double& x : out.data()) x += c;
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), needs(a), [a, o](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    simd::kernels().axpy(1.0, dy.ptr(), g.grad_slot(a).ptr(), dy.size());
  });
}

Var Graph::tanh(Var a) {
  Tensor out = ops::tanh(value(a));
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), needs(a), [a, o](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    const Tensor& y = g.value(Var{o});
    Tensor& da = g.grad_slot(a);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * (1.0 - y[i] * y[i]);
  });
}

Var Graph::sigmoid(Var a) {
  Tensor out = ops::sigmoid(value(a));
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), needs(a), [a, o](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    const Tensor& y = g.value(Var{o});
    Tensor& da = g.grad_slot(a);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * y[i] * (1.0 - y[i]);
  });
}

Var Graph::exp(Var a) {
  Tensor out(value(a).shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(value(a)[i]);
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), needs(a), [a, o](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    simd::kernels().mul_acc(dy.ptr(), g.value(Var{o}).ptr(), g.grad_slot(a).ptr(),
                            dy.size());
  });
}

Var Graph::log(Var a) {
  Tensor out(value(a).shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(value(a)[i] > 0.0)) throw NumericError("log of a non-positive value");
    out[i] = std::log(value(a)[i]);
  }
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), needs(a), [a, o](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    const Tensor& x = g.value(a);
    Tensor& da = g.grad_slot(a);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] / x[i];
  });
}

Var Graph::log_softmax(Var a) {
  Tensor out = ops::log_softmax(value(a));
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), needs(a), [a, o](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    const Tensor& y = g.value(Var{o});
    Tensor& da = g.grad_slot(a);
    const std::size_t n = y.shape().back();
    const std::size_t outer = y.size() / n;
    const auto& k = simd::kernels();
    for (std::size_t r = 0; r < outer; ++r) {
      const double* dyr = dy.ptr() + r * n;
      const double* yr = y.ptr() + r * n;
      double* dar = da.ptr() + r * n;
      const double s = k.sum(dyr, n);
      // dx = dy - softmax * sum(dy)
      for (std::size_t j = 0; j < n; ++j) dar[j] += dyr[j] - std::exp(yr[j]) * s;
    }
  });
}

Var Graph::gather_rows(Var a, std::vector<std::size_t> rows) {
  const Tensor& av = value(a);
  if (av.rank() != 2) throw ShapeError("gather_rows: expected a matrix");
  const std::size_t c = av.dim(1);
  Tensor out({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.dim(0)) throw ShapeError("gather_rows: index out of range");
    std::copy_n(av.row(rows[i]).data(), c, out.row(i).data());
  }
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), needs(a), [a, o, c, rows = std::move(rows)](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    Tensor& da = g.grad_slot(a);
    const auto& k = simd::kernels();
    for (std::size_t i = 0; i < rows.size(); ++i)
      k.axpy(1.0, dy.row(i).data(), da.row(rows[i]).data(), c);
  });
}

Var Graph::row(Var a, std::size_t r) {
  const Tensor& av = value(a);
  if (r >= av.rows()) throw ShapeError("row: index out of range");
  const std::size_t c = av.cols();
  Tensor out({1, c});
  std::copy_n(av.row(r).data(), c, out.ptr());
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), needs(a), [a, o, r, c](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    simd::kernels().axpy(1.0, dy.ptr(), g.grad_slot(a).row(r).data(), c);
  });
}

Var Graph::stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  const std::size_t c = value(rows[0]).size();
  Tensor out({rows.size(), c});
  bool any = false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor& rv = value(rows[i]);
    if (rv.size() != c) throw ShapeError("stack_rows: ragged rows");
    std::copy_n(rv.ptr(), c, out.row(i).data());
    any = any || needs(rows[i]);
  }
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  std::vector<Var> ids(rows.begin(), rows.end());
  return push(std::move(out), any, [o, c, ids = std::move(ids)](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    const auto& k = simd::kernels();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (g.needs(ids[i])) k.axpy(1.0, dy.row(i).data(), g.grad_slot(ids[i]).ptr(), c);
    }
  });
}

Var Graph::concat_cols(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rows() != bv.rows()) throw ShapeError("concat_cols: row counts differ");
  const std::size_t r = av.rows(), ca = av.cols(), cb = bv.cols();
  Tensor out({r, ca + cb});
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(av.row(i).data(), ca, out.row(i).data());
    std::copy_n(bv.row(i).data(), cb, out.row(i).data() + ca);
  }
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), needs(a) || needs(b), [a, b, o, r, ca, cb](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    const auto& k = simd::kernels();
    if (g.needs(a)) {
      Tensor& da = g.grad_slot(a);
      for (std::size_t i = 0; i < r; ++i) k.axpy(1.0, dy.row(i).data(), da.ptr() + i * ca, ca);
    }
    if (g.needs(b)) {
      Tensor& db = g.grad_slot(b);
      for (std::size_t i = 0; i < r; ++i)
        k.axpy(1.0, dy.row(i).data() + ca, db.ptr() + i * cb, cb);
    }
  });
}

Var Graph::sum(Var a) {
  const Tensor& av = value(a);
  Tensor out = Tensor::scalar(simd::kernels().sum(av.ptr(), av.size()));
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), needs(a), [a, o](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    Tensor& da = g.grad_slot(a);
    for (double& x : da.data()) x += dy[0];
  });
}

Var Graph::sum_rows(Var a) {
  const Tensor& av = value(a);
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out({1, c});
  const auto& k = simd::kernels();
  for (std::size_t i = 0; i < r; ++i) k.axpy(1.0, av.row(i).data(), out.ptr(), c);
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), needs(a), [a, o, r, c](Graph& g) {
    const Tensor& dy = g.out_grad(o);
    if (dy.size() == 0) return;
    Tensor& da = g.grad_slot(a);
    const auto& k = simd::kernels();
    for (std::size_t i = 0; i < r; ++i) k.axpy(1.0, dy.ptr(), da.row(i).data(), c);
  });
}

Var Graph::scalar_with_gradient(Var input, double v, Tensor d_value_d_input) {
  if (d_value_d_input.shape() != value(input).shape()) {
    throw ShapeError("scalar_with_gradient: gradient shape " +
                     shape_string(d_value_d_input.shape()) + " vs input " +
                     shape_string(value(input).shape()));
  }
  const auto o = static_cast<std::uint32_t>(nodes_.size());
  return push(Tensor::scalar(v), needs(input),
              [input, o, jac = std::move(d_value_d_input)](Graph& g) {
                const Tensor& dy = g.out_grad(o);
                if (dy.size() == 0) return;
                simd::kernels().axpy(dy[0], jac.ptr(), g.grad_slot(input).ptr(),
                                     jac.size());
              });
}

void Graph::backward(Var root) {
  if (value(root).size() != 1) {
    throw ShapeError("backward: root must be a scalar, got " +
                     shape_string(value(root).shape()));
  }
  grad_slot(root)[0] += 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.needs_grad && n.backprop && n.grad.size() != 0) n.backprop(*this);
  }
}

Gradients Graph::parameter_gradients() const {
  Gradients out;
  for (const auto& [name, id] : params_) {
    const Node& n = nodes_[id];
    out.emplace(name, n.grad.shape() == n.value.shape() ? n.grad
                                                        : Tensor(n.value.shape()));
  }
  return out;
}

}  // namespace ccperso
