#pragma once

#include "grad_error.hpp"

#include <gtest/gtest.h>

#include <random>

namespace artikin::testing {

/// Compares the analytic gradient of `loss()` w.r.t. each tensor in `inputs` against
/// central differences on up to `samples` random coordinates per input.
inline void expect_gradients_match(const std::function<ag::Tensor()>& loss, std::vector<ag::Tensor> inputs, double tol,
                                   int samples = 12, double h = 1e-5, std::uint64_t seed = 0) {
  for (ag::Tensor& t : inputs) t.zero_grad();
  ag::Tensor l = loss();
  l.backward();
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    ag::Tensor& t = inputs[k];
    const std::vector<double> g(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> idx;
    if (t.numel() <= samples) {
      for (std::int64_t i = 0; i < t.numel(); ++i) idx.push_back(std::size_t(i));
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, std::size_t(t.numel() - 1));
      for (int i = 0; i < samples; ++i) idx.push_back(pick(rng));
    }
    const auto num = ag::numeric_gradient(t, [&] { ag::NoGradGuard ng; return loss().item(); }, h, idx);
    for (std::size_t i = 0; i < idx.size(); ++i)
      EXPECT_LT(rel_err(g[idx[i]], num[i]), tol) << "input " << k << " index " << idx[i] << " analytic " << g[idx[i]] << " numeric " << num[i];
  }
}

}  // namespace artikin::testing
