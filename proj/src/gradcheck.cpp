// SPDX-License-Identifier: Apache-2.0
#include "ecaf/gradcheck.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <stdexcept>

namespace ecaf {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradErrorFloor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

void validate_step(double h) {
  if (!(h >= 1e-5 && h <= 1e-3))
    throw std::invalid_argument("finite difference step must lie in [1e-5, 1e-3]");
}

std::vector<Index> choose_indices(Index n, double fraction, std::uint64_t seed) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  if (fraction >= 1.0) return idx;
  const auto k = static_cast<std::size_t>(
      std::max<double>(1.0, std::ceil(fraction * static_cast<double>(n))));
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(k, idx.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

void update(GradCheckReport& r, double err, Index i) {
  ++r.checked;
  if (err > r.max_rel_error || r.worst_index < 0) {
    r.max_rel_error = std::max(r.max_rel_error, err);
    r.worst_index = i;
  }
}

}  // namespace

GradCheckReport finite_diff_report(const ScalarFn& f, const Tensor<double>& x,
                                   const GradCheckOptions& opt) {
  validate_step(opt.step);
  auto eval = [&](const Tensor<double>& at) {
    Tape<double> tape;
    return f(tape, tape.leaf(at, false)).value().item();
  };
  const double first = eval(x);
  const double second = eval(x);
  if (std::bit_cast<std::uint64_t>(first) != std::bit_cast<std::uint64_t>(second))
    throw std::logic_error("finite_diff_check: function is not deterministic");

  Tensor<double> analytic;
  {
    Tape<double> tape;
    Var<double> in = tape.leaf(x, true);
    Var<double> loss = f(tape, in);
    tape.backward(loss);
    analytic = in.grad().empty() ? Tensor<double>(x.shape()) : in.grad();
  }

  GradCheckReport report;
  Tensor<double> probe = x;
  for (Index i : choose_indices(x.size(), opt.sample_fraction, opt.sample_seed)) {
    const double orig = probe[i];
    probe[i] = orig + opt.step;
    const double up = eval(probe);
    probe[i] = orig - opt.step;
    const double down = eval(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * opt.step);
    update(report, relative_error(opt.analytic_scale * analytic[i], numeric), i);
  }
  return report;
}

double finite_diff_check(const ScalarFn& f, const Tensor<double>& x, double h) {
  GradCheckOptions opt;
  opt.step = h;
  return finite_diff_report(f, x, opt).max_rel_error;
}

GradCheckReport finite_diff_params(ParamStore<double>& store, const ParamLossFn& f,
                                   const GradCheckOptions& opt) {
  validate_step(opt.step);
  auto eval = [&] {
    Tape<double> tape;
    return f(tape).value().item();
  };
  const double first = eval();
  if (std::bit_cast<std::uint64_t>(first) != std::bit_cast<std::uint64_t>(eval()))
    throw std::logic_error("finite_diff_check: function is not deterministic");

  store.zero_grad();
  {
    Tape<double> tape;
    tape.backward(f(tape));
  }

  // Flatten (parameter, element) pairs so sampling covers the whole store uniformly.
  std::vector<std::pair<std::size_t, Index>> slots;
  for (std::size_t p = 0; p < store.size(); ++p)
    for (Index i = 0; i < store[p].value.size(); ++i) slots.emplace_back(p, i);

  GradCheckReport report;
  for (Index s : choose_indices(static_cast<Index>(slots.size()), opt.sample_fraction,
                                opt.sample_seed)) {
    auto [p, i] = slots[static_cast<std::size_t>(s)];
    Parameter<double>& param = store[p];
    const double orig = param.value[i];
    param.value[i] = orig + opt.step;
    const double up = eval();
    param.value[i] = orig - opt.step;
    const double down = eval();
    param.value[i] = orig;
    const double numeric = (up - down) / (2.0 * opt.step);
    update(report, relative_error(opt.analytic_scale * param.grad[i], numeric), s);
  }
  store.zero_grad();
  return report;
}

}  // namespace ecaf
