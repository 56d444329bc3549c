#include "spanner/layers.hpp"

#include <stdexcept>

namespace spanner {

ad::Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev,
                         std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  ad::Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = dist(rng);
  return m;
}

Linear::Linear(const std::string& name, int in, int out, double init_std,
               std::mt19937_64& rng)
    : weight(name + ".weight", normal_matrix(in, out, init_std, rng)),
      bias(name + ".bias", ad::Matrix::Zero(1, out)) {}

ad::Var Linear::operator()(ad::Tape& tape, const ad::Var& x) {
  return ad::add_row(ad::matmul(x, tape.parameter(weight)),
                     tape.parameter(bias));
}

ad::Matrix Linear::apply(const ad::Matrix& x) const {
  ad::Matrix out = x * weight.value;
  out.rowwise() += bias.value.row(0);
  return out;
}

LayerNorm::LayerNorm(const std::string& name, int width)
    : gain(name + ".gain", ad::Matrix::Ones(1, width)),
      bias(name + ".bias", ad::Matrix::Zero(1, width)) {}

ad::Var LayerNorm::operator()(ad::Tape& tape, const ad::Var& x) {
  return ad::layer_norm(x, tape.parameter(gain), tape.parameter(bias));
}

ad::Var multi_head_attention(const ad::Var& queries, const ad::Var& keys,
                             const ad::Var& values, int heads,
                             double weight_dropout, std::mt19937_64* rng) {
  const Eigen::Index width = queries.cols();
  if (heads <= 0 || width % heads != 0 || keys.cols() != width ||
      values.cols() != width || keys.rows() != values.rows()) {
    throw std::invalid_argument("multi_head_attention: incompatible shapes");
  }
  const Eigen::Index head_width = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_width));
  std::vector<ad::Var> outputs;
  outputs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index off = h * head_width;
    ad::Var q = ad::slice_cols(queries, off, head_width);
    ad::Var k = ad::slice_cols(keys, off, head_width);
    ad::Var v = ad::slice_cols(values, off, head_width);
    ad::Var weights = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), scale));
    weights = ad::dropout(weights, weight_dropout, rng);
    outputs.push_back(ad::matmul(weights, v));
  }
  if (heads == 1) return outputs.front();
  return ad::concat_cols(outputs);
}

}  // namespace spanner
