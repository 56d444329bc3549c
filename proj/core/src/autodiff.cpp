#include "spanner/autodiff.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace spanner::ad {

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::parameter(Parameter& param) {
  if (auto it = param_nodes_.find(&param); it != param_nodes_.end()) {
    return Var(this, it->second);
  }
  const bool trainable = record_ && !param.frozen;
  nodes_.push_back(Node{param.value, Matrix(), trainable,
                        trainable ? &param : nullptr, nullptr});
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&param, id);
  return Var(this, id);
}

Var Tape::push(Matrix value, std::initializer_list<int> inputs,
               BackwardFn fn) {
  return push(std::move(value), std::span<const int>(inputs.begin(), inputs.size()),
              std::move(fn));
}

Var Tape::push(Matrix value, std::span<const int> inputs, BackwardFn fn) {
  bool needs = false;
  if (record_) {
    for (int in : inputs) needs = needs || nodes_[in].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs, nullptr,
                        needs ? std::move(fn) : BackwardFn()});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::push_source(Matrix value, bool requires_grad, BackwardFn fn) {
  const bool needs = record_ && requires_grad;
  nodes_.push_back(Node{std::move(value), Matrix(), needs, nullptr,
                        needs ? std::move(fn) : BackwardFn()});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw std::logic_error("backward: foreign Var");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw std::logic_error("backward: loss must be 1x1");
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())(0, 0) = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

namespace {

Tape& tape_of(const Var& a) {
  assert(a.valid());
  return *a.tape();
}

void check_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::logic_error("operands on different tapes");
}

void check_shape(bool ok, const char* op) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same_tape(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() + b.value(), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.out_grad(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia) += g;
    if (t.requires_grad(ib)) t.grad_buffer(ib) += g;
  });
}

Var add_row(const Var& a, const Var& row) {
  check_same_tape(a, row);
  check_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row");
  Tape& t = tape_of(a);
  const int ia = a.id(), ir = row.id();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.push(std::move(out), {ia, ir}, [ia, ir](Tape& t, int self) {
    const Matrix& g = t.out_grad(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia) += g;
    if (t.requires_grad(ir)) t.grad_buffer(ir) += g.colwise().sum();
  });
}

Var scale(const Var& a, double factor) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value() * factor, {ia}, [ia, factor](Tape& t, int self) {
    t.grad_buffer(ia) += t.out_grad(self) * factor;
  });
}

Var matmul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  check_shape(a.cols() == b.rows(), "matmul");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value();
  return t.push(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.out_grad(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad_buffer(ib).noalias() += t.value(ia).transpose() * g;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  check_same_tape(a, b);
  check_shape(a.cols() == b.cols(), "matmul_nt");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value().transpose();
  return t.push(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.out_grad(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia).noalias() += g * t.value(ib);
    if (t.requires_grad(ib)) t.grad_buffer(ib).noalias() += g.transpose() * t.value(ia);
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const Matrix& x = a.value();
  Matrix out = x.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  });
  return t.push(std::move(out), {ia}, [ia](Tape& t, int self) {
    const Matrix& x = t.value(ia);
    const Matrix& g = t.out_grad(self);
    Matrix& dx = t.grad_buffer(ia);
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      const double v = x.data()[k];
      const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double d = 0.5 * (1.0 + th) +
                       0.5 * v * (1.0 - th * th) * kGeluC *
                           (1.0 + 3.0 * kGeluA * v * v);
      dx.data()[k] += g.data()[k] * d;
    }
  });
}

Var layer_norm(const Var& a, const Var& gain, const Var& bias, double eps) {
  check_same_tape(a, gain);
  check_same_tape(a, bias);
  const Eigen::Index n = a.rows(), c = a.cols();
  check_shape(gain.rows() == 1 && gain.cols() == c && bias.rows() == 1 &&
                  bias.cols() == c,
              "layer_norm");
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix normalized(n, c);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    normalized.row(r) = (x.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = (normalized.array().rowwise() * gain.value().row(0).array())
                   .rowwise() +
               bias.value().row(0).array();
  const int ia = a.id(), ig = gain.id(), ib = bias.id();
  return t.push(std::move(out), {ia, ig, ib},
                [ia, ig, ib, normalized = std::move(normalized),
                 inv_std = std::move(inv_std)](Tape& t, int self) {
                  const Matrix& g = t.out_grad(self);
                  if (t.requires_grad(ig)) {
                    t.grad_buffer(ig) +=
                        (g.array() * normalized.array()).colwise().sum().matrix();
                  }
                  if (t.requires_grad(ib)) t.grad_buffer(ib) += g.colwise().sum();
                  if (!t.requires_grad(ia)) return;
                  const auto gain_row = t.value(ig).row(0).array();
                  Matrix& dx = t.grad_buffer(ia);
                  const double inv_c = 1.0 / static_cast<double>(g.cols());
                  for (Eigen::Index r = 0; r < g.rows(); ++r) {
                    const Eigen::ArrayXXd dxhat = (g.row(r).array() * gain_row);
                    const double m1 = dxhat.sum() * inv_c;
                    const double m2 =
                        (dxhat * normalized.row(r).array()).sum() * inv_c;
                    dx.row(r).array() +=
                        inv_std(r) *
                        (dxhat - m1 - normalized.row(r).array() * m2);
                  }
                });
}

Var softmax_rows(const Var& a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  const int ia = a.id();
  return t.push(std::move(out), {ia}, [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.out_grad(self);
    const Eigen::VectorXd dots = (g.array() * y.array()).rowwise().sum();
    t.grad_buffer(ia).array() +=
        y.array() * (g.array().colwise() - dots.array());
  });
}

Var dropout(const Var& a, double rate, std::mt19937_64* rng) {
  if (rate <= 0.0 || rng == nullptr) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  Tape& t = tape_of(a);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - rate);
  Matrix mask(a.rows(), a.cols());
  for (Eigen::Index k = 0; k < mask.size(); ++k) {
    mask.data()[k] = uniform(*rng) < rate ? 0.0 : keep_scale;
  }
  const int ia = a.id();
  Matrix out = a.value().cwiseProduct(mask);
  return t.push(std::move(out), {ia},
                [ia, mask = std::move(mask)](Tape& t, int self) {
                  t.grad_buffer(ia) += t.out_grad(self).cwiseProduct(mask);
                });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
  Tape& t = tape_of(table);
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] < 0 || ids[k] >= tv.rows()) {
      throw std::out_of_range("gather_rows: id out of range");
    }
    out.row(static_cast<Eigen::Index>(k)) = tv.row(ids[k]);
  }
  const int it = table.id();
  std::vector<int> idv(ids.begin(), ids.end());
  return t.push(std::move(out), {it},
                [it, idv = std::move(idv)](Tape& t, int self) {
                  const Matrix& g = t.out_grad(self);
                  Matrix& dt = t.grad_buffer(it);
                  for (std::size_t k = 0; k < idv.size(); ++k) {
                    dt.row(idv[k]) += g.row(static_cast<Eigen::Index>(k));
                  }
                });
}

Var embedding_lookup(Tape& tape, Parameter& table, std::span<const int> ids) {
  const Matrix& tv = table.value;
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] < 0 || ids[k] >= tv.rows()) {
      throw std::out_of_range("embedding_lookup: id out of range");
    }
    out.row(static_cast<Eigen::Index>(k)) = tv.row(ids[k]);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  Parameter* target = &table;
  return tape.push_source(
      std::move(out), !table.frozen,
      [target, idv = std::move(idv)](Tape& t, int self) {
        const Matrix& g = t.out_grad(self);
        for (std::size_t k = 0; k < idv.size(); ++k) {
          target->grad.row(idv[k]) += g.row(static_cast<Eigen::Index>(k));
        }
      });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  check_shape(start >= 0 && count >= 0 && start + count <= a.cols(),
              "slice_cols");
  Tape& t = tape_of(a);
  const int ia = a.id();
  Matrix out = a.value().middleCols(start, count);
  return t.push(std::move(out), {ia}, [ia, start, count](Tape& t, int self) {
    t.grad_buffer(ia).middleCols(start, count) += t.out_grad(self);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape& t = tape_of(parts[0]);
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (const Var& p : parts) {
    check_same_tape(parts[0], p);
    check_shape(p.rows() == rows, "concat_cols");
    cols += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  std::vector<int> captured = ids;
  return t.push(std::move(out), std::span<const int>(ids),
                [ids = std::move(captured), widths = std::move(widths)](
                    Tape& t, int self) {
                  const Matrix& g = t.out_grad(self);
                  Eigen::Index offset = 0;
                  for (std::size_t k = 0; k < ids.size(); ++k) {
                    if (t.requires_grad(ids[k])) {
                      t.grad_buffer(ids[k]) += g.middleCols(offset, widths[k]);
                    }
                    offset += widths[k];
                  }
                });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Tape& t = tape_of(parts[0]);
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> heights;
  for (const Var& p : parts) {
    check_same_tape(parts[0], p);
    check_shape(p.cols() == cols, "concat_rows");
    rows += p.rows();
    ids.push_back(p.id());
    heights.push_back(p.rows());
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  std::vector<int> captured = ids;
  return t.push(std::move(out), std::span<const int>(ids),
                [ids = std::move(captured), heights = std::move(heights)](
                    Tape& t, int self) {
                  const Matrix& g = t.out_grad(self);
                  Eigen::Index offset = 0;
                  for (std::size_t k = 0; k < ids.size(); ++k) {
                    if (t.requires_grad(ids[k])) {
                      t.grad_buffer(ids[k]) += g.middleRows(offset, heights[k]);
                    }
                    offset += heights[k];
                  }
                });
}

Var mean_rows(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const double inv = 1.0 / static_cast<double>(a.rows());
  Matrix out = a.value().colwise().sum() * inv;
  return t.push(std::move(out), {ia}, [ia, inv](Tape& t, int self) {
    t.grad_buffer(ia).rowwise() += t.out_grad(self).row(0) * inv;
  });
}

Var range_means(const Var& a, std::span<const std::pair<int, int>> ranges) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix out(static_cast<Eigen::Index>(ranges.size()), x.cols());
  for (std::size_t k = 0; k < ranges.size(); ++k) {
    const auto [lo, hi] = ranges[k];
    if (lo < 0 || hi < lo || hi >= x.rows()) {
      throw std::out_of_range("range_means: range out of bounds");
    }
    out.row(static_cast<Eigen::Index>(k)) =
        x.middleRows(lo, hi - lo + 1).colwise().sum() /
        static_cast<double>(hi - lo + 1);
  }
  const int ia = a.id();
  std::vector<std::pair<int, int>> rv(ranges.begin(), ranges.end());
  return t.push(std::move(out), {ia},
                [ia, rv = std::move(rv)](Tape& t, int self) {
                  const Matrix& g = t.out_grad(self);
                  Matrix& dx = t.grad_buffer(ia);
                  for (std::size_t k = 0; k < rv.size(); ++k) {
                    const auto [lo, hi] = rv[k];
                    const double inv = 1.0 / static_cast<double>(hi - lo + 1);
                    for (int r = lo; r <= hi; ++r) {
                      dx.row(r) += g.row(static_cast<Eigen::Index>(k)) * inv;
                    }
                  }
                });
}

Var rowwise_dot(const Var& a, const Var& b) {
  check_same_tape(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "rowwise_dot");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  Matrix out = (a.value().array() * b.value().array()).rowwise().sum();
  return t.push(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.out_grad(self);
    if (t.requires_grad(ia)) {
      t.grad_buffer(ia).array() += t.value(ib).array().colwise() * g.col(0).array();
    }
    if (t.requires_grad(ib)) {
      t.grad_buffer(ib).array() += t.value(ia).array().colwise() * g.col(0).array();
    }
  });
}

Var sum_all(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.push(std::move(out), {ia}, [ia](Tape& t, int self) {
    t.grad_buffer(ia).array() += t.out_grad(self)(0, 0);
  });
}

Var bce_with_logits_sum(const Var& logits, const Matrix& targets) {
  check_shape(logits.rows() == targets.rows() && logits.cols() == targets.cols(),
              "bce_with_logits_sum");
  Tape& t = tape_of(logits);
  const Matrix& z = logits.value();
  double total = 0.0;
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    const double v = z.data()[k];
    total += std::max(v, 0.0) - v * targets.data()[k] +
             std::log1p(std::exp(-std::abs(v)));
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  const int il = logits.id();
  return t.push(std::move(out), {il}, [il, targets](Tape& t, int self) {
    const double g = t.out_grad(self)(0, 0);
    const Matrix& z = t.value(il);
    Matrix& dz = t.grad_buffer(il);
    for (Eigen::Index k = 0; k < z.size(); ++k) {
      const double v = z.data()[k];
      const double p = v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                              : std::exp(v) / (1.0 + std::exp(v));
      dz.data()[k] += g * (p - targets.data()[k]);
    }
  });
}

}  // namespace spanner::ad
