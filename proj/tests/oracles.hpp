#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "anyglyph/image.hpp"

namespace testsupport {

// Explicit per-window SSIM with a 2-D Gaussian kernel.
inline double brute_ssim(const anyglyph::Image& a, const anyglyph::Image& b, int win) {
  const double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  std::vector<double> k(static_cast<std::size_t>(win * win));
  double ksum = 0;
  const double center = (win - 1) / 2.0;
  for (int y = 0; y < win; ++y)
    for (int x = 0; x < win; ++x) {
      const double v = std::exp(-((y - center) * (y - center) + (x - center) * (x - center)) / (2 * sigma * sigma));
      k[static_cast<std::size_t>(y * win + x)] = v;
      ksum += v;
    }
  for (double& v : k) v /= ksum;
  const int h = a.dim(1), w = a.dim(2);
  double total = 0;
  for (int c = 0; c < 3; ++c) {
    double sum = 0;
    int count = 0;
    for (int y0 = 0; y0 + win <= h; ++y0)
      for (int x0 = 0; x0 + win <= w; ++x0) {
        double mx = 0, my = 0;
        for (int y = 0; y < win; ++y)
          for (int x = 0; x < win; ++x) {
            const double wt = k[static_cast<std::size_t>(y * win + x)];
            mx += wt * a.at(c, y0 + y, x0 + x);
            my += wt * b.at(c, y0 + y, x0 + x);
          }
        double vx = 0, vy = 0, cxy = 0;
        for (int y = 0; y < win; ++y)
          for (int x = 0; x < win; ++x) {
            const double wt = k[static_cast<std::size_t>(y * win + x)];
            const double dx = a.at(c, y0 + y, x0 + x) - mx, dy = b.at(c, y0 + y, x0 + x) - my;
            vx += wt * dx * dx;
            vy += wt * dy * dy;
            cxy += wt * dx * dy;
          }
        sum += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    total += sum / count;
  }
  return total / 3;
}

/// n rows drawn from independent normals with per-column mean and standard deviation.
inline Eigen::MatrixXd gaussian_set(int n, const Eigen::VectorXd& mu, const Eigen::VectorXd& sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd m(n, mu.size());
  for (int i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < mu.size(); ++j) m(i, j) = mu[j] + sd[j] * normal(rng);
  return m;
}

}  // namespace testsupport
