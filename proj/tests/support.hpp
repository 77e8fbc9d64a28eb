#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "anyglyph/nn.hpp"

namespace testsupport {

using anyglyph::Parameter;
using anyglyph::Tape;
using anyglyph::Tensor;
using anyglyph::Var;

/// ||analytic - numeric|| / max(||analytic||, ||numeric||) over the probed entries.
struct GradCheck {
  double rel_error = 0.0;
  double analytic_norm = 0.0;
  int probes = 0;
};

/// Central differences on up to `max_probes` entries of each trainable parameter.
/// `f` records a scalar output on the given tape.
inline GradCheck check_param_grads(const std::function<Var(Tape&)>& f, const std::vector<Parameter*>& params,
                                   int max_probes = 6, double h = 1e-6, std::uint64_t seed = 3) {
  for (Parameter* p : params) p->grad = Tensor();
  {
    Tape tape;
    tape.backward(f(tape));
  }
  std::mt19937_64 rng(seed);
  double diff2 = 0, a2 = 0, n2 = 0;
  int probes = 0;
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    const Eigen::Index n = p->value.size();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(max_probes)));
    for (Eigen::Index i : idx) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      double fp, fm;
      {
        Tape t;
        fp = f(t).value()[0];
      }
      p->value[i] = saved - h;
      {
        Tape t;
        fm = f(t).value()[0];
      }
      p->value[i] = saved;
      const double numeric = (fp - fm) / (2 * h);
      const double analytic = p->grad.empty() ? 0.0 : p->grad[i];
      diff2 += (numeric - analytic) * (numeric - analytic);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
      ++probes;
    }
  }
  GradCheck r;
  r.analytic_norm = std::sqrt(a2);
  r.rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  r.probes = probes;
  return r;
}

/// Same probe for the gradient with respect to an input tensor.
inline GradCheck check_input_grad(const std::function<Var(Tape&, const Var&)>& f, Tensor x, int max_probes = 12,
                                  double h = 1e-6, std::uint64_t seed = 5) {
  Tensor analytic;
  {
    Tape tape;
    Var in = tape.input(x);
    tape.backward(f(tape, in));
    analytic = in.grad();
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, x.size() - 1);
  double diff2 = 0, a2 = 0, n2 = 0;
  GradCheck r;
  for (int k = 0; k < max_probes; ++k) {
    const Eigen::Index i = pick(rng);
    const double saved = x[i];
    x[i] = saved + h;
    double fp, fm;
    {
      Tape t;
      fp = f(t, t.constant(x)).value()[0];
    }
    x[i] = saved - h;
    {
      Tape t;
      fm = f(t, t.constant(x)).value()[0];
    }
    x[i] = saved;
    const double numeric = (fp - fm) / (2 * h);
    const double a = analytic.empty() ? 0.0 : analytic[i];
    diff2 += (numeric - a) * (numeric - a);
    a2 += a * a;
    n2 += numeric * numeric;
    ++r.probes;
  }
  r.analytic_norm = std::sqrt(a2);
  r.rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  return r;
}

inline Tensor uniform(std::vector<int> dims, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Tensor t(std::move(dims));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  return (a.data() - b.data()).cwiseAbs().maxCoeff();
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("anyglyph-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testsupport
