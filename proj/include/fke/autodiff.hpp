#pragma once

// Minimal reverse-mode differentiation over vectors of doubles.
//
// A Tape records nodes (value + backward closure) in evaluation order;
// backward() replays them in reverse. Parameters live outside the tape and
// receive gradient directly, so large weight matrices are never copied.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fke::ad {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;  // row-major

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> extents, double fill = 0.0);

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool operator==(const Tensor&) const = default;
};

struct Parameter {
  std::string name;
  Tensor value;
  // Scratch accumulator written by backward passes; not part of the value.
  mutable std::vector<double> grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<std::size_t> extents);

  void zero_grad() const { grad.assign(value.size(), 0.0); }
};

struct Var {
  std::uint32_t id = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::uint32_t self)>;

  explicit Tape(bool record = true) : record_(record) {}

  Var constant(std::vector<double> value);
  Var zeros(std::size_t n) { return constant(std::vector<double>(n, 0.0)); }

  // Adds a node. `aux` keeps intermediates for the backward pass.
  Var push(std::vector<double> value, Backward backward, std::vector<double> aux = {});

  const std::vector<double>& value(Var v) const { return nodes_[v.id].value; }
  const std::vector<double>& aux(std::uint32_t id) const { return nodes_[id].aux; }
  std::size_t dim(Var v) const { return nodes_[v.id].value.size(); }
  double scalar(Var v) const { return nodes_[v.id].value.at(0); }

  // Gradient buffer of a node, allocated zeroed on first touch.
  std::vector<double>& grad(Var v);
  std::vector<double>& grad(std::uint32_t id) { return grad(Var{id}); }
  bool has_grad(Var v) const { return nodes_[v.id].has_grad; }

  // Seeds d(root)/d(root) = 1 for a scalar root and propagates to every
  // node and parameter that root depends on.
  void backward(Var root);

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<double> aux;
    Backward backward;
    bool has_grad = false;
  };
  std::vector<Node> nodes_;
  bool record_;
};

// y = W x (+ b); W has shape [out, in].
Var affine(Tape& t, const Parameter& w, const Parameter* b, Var x);
// y = W[:, col0 : col0 + dim(x)] x; lets one weight act on pieces of a concatenated input.
Var affine_cols(Tape& t, const Parameter& w, std::size_t col0, Var x, const Parameter* b = nullptr);
// Row `r` of a [rows, cols] parameter.
Var param_row(Tape& t, const Parameter& p, std::size_t r);

Var add(Tape& t, Var a, Var b);
Var scale(Tape& t, Var x, double c);
Var concat(Tape& t, std::span<const Var> parts);
Var mean(Tape& t, std::span<const Var> xs);
// Scalar sum of scalar nodes.
Var sum(Tape& t, std::span<const Var> scalars);

// Gated recurrent step. xproj = W x + b_x of size 3H laid out [update, reset,
// candidate]; u is [3H, H], bh is [3H].
//   z = sigmoid(xz + Uz h + bz), r = sigmoid(xr + Ur h + br)
//   n = tanh(xn + r * (Un h + bn)), h' = (1 - z) * n + z * h
Var gru_step(Tape& t, Var xproj, Var h, const Parameter& u, const Parameter& bh);

Var softmax(Tape& t, Var logits);
// Row-wise softmax of a square [C, C] score parameter, as a flattened node.
Var row_softmax(Tape& t, const Parameter& scores);
// q_j = sum_i p_i M_ij for a flattened [C, C] node M.
Var vecmat(Tape& t, Var p, Var m);
// -log p[label].
Var nll(Tape& t, Var p, std::size_t label);
// trace(M) / n for a flattened [n, n] node.
Var trace_mean(Tape& t, Var m, std::size_t n);

}  // namespace fke::ad
