#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Tape records every operation of one forward pass; calling
// backward() on a 1x1 result accumulates gradients into the Parameters that
// took part. Frozen parameters enter the graph as constants, so no gradient
// ever reaches them.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace spanner::ad {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Matrix value, bool frozen = false)
      : name(std::move(name)),
        value(std::move(value)),
        grad(Matrix::Zero(this->value.rows(), this->value.cols())),
        frozen(frozen) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }

  std::string name;
  Matrix value;
  Matrix grad;
  bool frozen = false;
};

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  // With record_gradients = false the tape only evaluates values; useful for
  // inference through code written against the Var interface.
  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Each Parameter maps to exactly one leaf per tape.
  Var parameter(Parameter& param);

  // Seeds d(loss)/d(loss) = 1, propagates in reverse recording order and adds
  // the leaf gradients into Parameter::grad.
  void backward(const Var& loss);

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  // Gradient of the last backward() w.r.t. a node; empty if none flowed.
  const Matrix& grad(const Var& v) const { return nodes_[v.id()].grad; }

  // Used by operations.
  Var push(Matrix value, std::initializer_list<int> inputs, BackwardFn fn);
  Var push(Matrix value, std::span<const int> inputs, BackwardFn fn);
  // A node without tape inputs whose backward writes somewhere else (e.g.
  // straight into a Parameter).
  Var push_source(Matrix value, bool requires_grad, BackwardFn fn);
  const Matrix& out_grad(int id) const { return nodes_[id].grad; }
  // Zero-initialized accumulation buffer for an input's gradient.
  Matrix& grad_buffer(int id);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, int> param_nodes_;
  bool record_;
};

// Elementwise and linear algebra.
Var add(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);  // broadcast 1xC over rows
Var scale(const Var& a, double factor);
Var matmul(const Var& a, const Var& b);     // a * b
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var gelu(const Var& a);
Var layer_norm(const Var& a, const Var& gain, const Var& bias,
               double eps = 1e-5);
Var softmax_rows(const Var& a);
// Inverted dropout; identity when rate == 0 or rng is null.
Var dropout(const Var& a, double rate, std::mt19937_64* rng);

// Rows `ids` of an embedding table. The table is read in place rather than
// copied onto the tape; its gradient is scattered directly into table.grad.
Var embedding_lookup(Tape& tape, Parameter& table, std::span<const int> ids);

// Structural.
Var gather_rows(const Var& table, std::span<const int> ids);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var mean_rows(const Var& a);  // 1xC column means
// Row k of the result is the mean of rows [ranges[k].first, ranges[k].second]
// (inclusive) of a.
Var range_means(const Var& a, std::span<const std::pair<int, int>> ranges);
Var rowwise_dot(const Var& a, const Var& b);  // Mx1
Var sum_all(const Var& a);                    // 1x1
// Sum over all entries of the binary cross-entropy between sigmoid(logits)
// and targets, in the stable form max(z,0) - z*y + log(1 + exp(-|z|)).
Var bce_with_logits_sum(const Var& logits, const Matrix& targets);

}  // namespace spanner::ad
