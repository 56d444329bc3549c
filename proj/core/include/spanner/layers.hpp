#pragma once

#include "spanner/autodiff.hpp"

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace spanner {

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(sigmoid(z)) without overflow or log(0).
inline double log_sigmoid(double z) {
  return -(std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z))));
}

// Binary cross-entropy of sigmoid(z) against label y in {0,1}.
inline double bce_with_logit(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

ad::Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev,
                         std::mt19937_64& rng);

struct Linear {
  Linear() = default;
  Linear(const std::string& name, int in, int out, double init_std,
         std::mt19937_64& rng);

  ad::Var operator()(ad::Tape& tape, const ad::Var& x);
  ad::Matrix apply(const ad::Matrix& x) const;

  ad::Parameter weight;  // in x out
  ad::Parameter bias;    // 1 x out
};

struct LayerNorm {
  LayerNorm() = default;
  LayerNorm(const std::string& name, int width);

  ad::Var operator()(ad::Tape& tape, const ad::Var& x);

  ad::Parameter gain;
  ad::Parameter bias;
};

// Scaled dot-product attention split over `heads` equal column blocks of the
// projected queries (M x A), keys (K x A) and values (K x A). Returns the
// concatenated head outputs (M x A). Dropout applies to attention weights.
ad::Var multi_head_attention(const ad::Var& queries, const ad::Var& keys,
                             const ad::Var& values, int heads,
                             double weight_dropout, std::mt19937_64* rng);

// Collects raw pointers for optimizer / serialization walks.
using ParameterList = std::vector<ad::Parameter*>;

}  // namespace spanner
