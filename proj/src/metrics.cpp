#include "anyglyph/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace anyglyph {

double l1(const Image& a, const Image& b) {
  require_same_shape(a, b, "l1");
  return (a.data() - b.data()).cwiseAbs().mean();
}

double psnr(const Image& a, const Image& b, double peak) {
  require_same_shape(a, b, "psnr");
  const double mse = (a.data() - b.data()).squaredNorm() / static_cast<double>(a.size());
  if (mse < 1e-10) return 100.0;
  return 10.0 * std::log10(peak * peak / mse);
}

Eigen::VectorXd gaussian_window(int size, double sigma) {
  Eigen::VectorXd g(size);
  const double center = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i) g[i] = std::exp(-(i - center) * (i - center) / (2 * sigma * sigma));
  return g / g.sum();
}

namespace {

// Valid-mode separable filtering of an H x W plane.
Eigen::MatrixXd filter_valid(const Eigen::MatrixXd& plane, const Eigen::VectorXd& g) {
  const Eigen::Index k = g.size();
  const Eigen::Index h = plane.rows() - k + 1, w = plane.cols() - k + 1;
  Eigen::MatrixXd rows(plane.rows(), w);
  for (Eigen::Index x = 0; x < w; ++x) rows.col(x) = plane.middleCols(x, k) * g;
  Eigen::MatrixXd out(h, w);
  for (Eigen::Index y = 0; y < h; ++y) out.row(y) = g.transpose() * rows.middleRows(y, k);
  return out;
}

}  // namespace

double ssim(const Image& a, const Image& b, int window, double k1, double k2, double peak) {
  require_same_shape(a, b, "ssim");
  require_rgb(a, "ssim");
  const int h = a.dim(1), w = a.dim(2);
  if (h < window || w < window) {
    throw ImageTooSmall("ssim window " + std::to_string(window) + " exceeds image " + a.shape());
  }
  const double c1 = (k1 * peak) * (k1 * peak), c2 = (k2 * peak) * (k2 * peak);
  const Eigen::VectorXd g = gaussian_window(window);
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    using RowMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    const Eigen::MatrixXd x = RowMap(a.ptr() + Eigen::Index(c) * h * w, h, w);
    const Eigen::MatrixXd y = RowMap(b.ptr() + Eigen::Index(c) * h * w, h, w);
    const Eigen::ArrayXXd mx = filter_valid(x, g).array(), my = filter_valid(y, g).array();
    const Eigen::ArrayXXd sxx = filter_valid(x.cwiseProduct(x), g).array() - mx * mx;
    const Eigen::ArrayXXd syy = filter_valid(y.cwiseProduct(y), g).array() - my * my;
    const Eigen::ArrayXXd sxy = filter_valid(x.cwiseProduct(y), g).array() - mx * my;
    const Eigen::ArrayXXd map =
        ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    total += map.mean();
  }
  return total / 3.0;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

double fid(const Eigen::MatrixXd& features_a, const Eigen::MatrixXd& features_b) {
  const Eigen::Index d = features_a.cols();
  if (features_b.cols() != d) throw ShapeMismatch("fid: feature dimensions differ");
  if (features_a.rows() < d + 1 || features_b.rows() < d + 1) {
    throw TooFewSamples("fid needs at least " + std::to_string(d + 1) + " samples per set, got " +
                        std::to_string(features_a.rows()) + " and " + std::to_string(features_b.rows()));
  }
  if (!features_a.allFinite() || !features_b.allFinite()) throw NonFiniteFeatures("fid: non-finite features");

  auto moments = [](const Eigen::MatrixXd& f, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    mu = f.colwise().mean().transpose();
    const Eigen::MatrixXd centered = f.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / static_cast<double>(f.rows() - 1);
  };
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  moments(features_a, mu_a, cov_a);
  moments(features_b, mu_b, cov_b);

  // tr((A B)^{1/2}) = tr((A^{1/2} B A^{1/2})^{1/2}) for PSD A, B.
  const Eigen::MatrixXd root_a = psd_sqrt(cov_a);
  const Eigen::MatrixXd inner = root_a * cov_b * root_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, value);
}

std::string EvalReport::to_text() const {
  std::ostringstream s;
  s << std::setprecision(17);
  s << "samples: " << samples << "\n";
  s << "extractor: " << extractor_id << "\n";
  s << "ssim_window: " << config.ssim_window << "\n";
  s << "ssim_k1: " << config.k1 << "\n";
  s << "ssim_k2: " << config.k2 << "\n";
  s << "peak: " << config.peak << "\n";
  s << "image_size: " << config.image_size << "\n";
  s << "psnr_cap_db: 100\n";
  s << "gen_manifest: " << gen_manifest << "\n";
  s << "gt_manifest: " << gt_manifest << "\n";
  s << "\n";
  s << "metric\tvalue\n";
  s << "L1\t" << l1 << "\n";
  s << "SSIM\t" << ssim << "\n";
  s << "PSNR\t" << psnr << "\n";
  if (std::isnan(fid)) s << "FID\tn/a\n";
  else s << "FID\t" << fid << "\n";
  return s.str();
}

EvalReport EvalReport::parse(const std::string& text) {
  EvalReport r;
  std::istringstream in(text);
  auto number = [](const std::string& v) { return v == "n/a" ? std::nan("") : std::stod(v); };
  bool table = false;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    if (table) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw IOFailure("malformed report line: " + line);
      const std::string key = line.substr(0, tab), value = line.substr(tab + 1);
      if (key == "L1") r.l1 = number(value);
      else if (key == "SSIM") r.ssim = number(value);
      else if (key == "PSNR") r.psnr = number(value);
      else if (key == "FID") r.fid = number(value);
      continue;
    }
    if (line == "metric\tvalue") {
      table = true;
      continue;
    }
    const auto colon = line.find(": ");
    if (colon == std::string::npos) continue;
    const std::string key = line.substr(0, colon), value = line.substr(colon + 2);
    if (key == "samples") r.samples = std::stoul(value);
    else if (key == "extractor") r.extractor_id = value;
    else if (key == "ssim_window") r.config.ssim_window = std::stoi(value);
    else if (key == "ssim_k1") r.config.k1 = std::stod(value);
    else if (key == "ssim_k2") r.config.k2 = std::stod(value);
    else if (key == "peak") r.config.peak = std::stod(value);
    else if (key == "image_size") r.config.image_size = std::stoi(value);
    else if (key == "gen_manifest") r.gen_manifest = value;
    else if (key == "gt_manifest") r.gt_manifest = value;
  }
  if (!table) throw IOFailure("report has no metric table");
  return r;
}

EvalReport evaluate_pairs(const synth::Manifest& gen, const synth::Manifest& gt, const EvalConfig& config,
                          const FeatureExtractor& extractor) {
  std::map<std::string, const synth::ManifestRecord*> gt_by_id, gen_by_id;
  for (const auto& r : gt.records) gt_by_id[r.id] = &r;
  for (const auto& r : gen.records) gen_by_id[r.id] = &r;
  if (gt_by_id.size() != gen_by_id.size()) {
    throw ManifestMismatch("generated manifest has " + std::to_string(gen_by_id.size()) + " ids, ground truth has " +
                           std::to_string(gt_by_id.size()));
  }
  for (const auto& [id, rec] : gt_by_id) {
    if (!gen_by_id.count(id)) throw ManifestMismatch("id '" + id + "' missing from generated manifest");
  }
  if (gt_by_id.empty()) throw ManifestMismatch("manifests are empty");

  EvalReport report;
  report.config = config;
  report.extractor_id = extractor.id();
  const Eigen::Index n = static_cast<Eigen::Index>(gt_by_id.size());
  Eigen::MatrixXd fa, fb;
  Eigen::Index row = 0;
  for (const auto& [id, gt_rec] : gt_by_id) {
    Image g = read_png(gen.resolve(gen_by_id[id]->path_x0));
    Image t = read_png(gt.resolve(gt_rec->path_x0));
    const int size = config.image_size > 0 ? config.image_size : g.dim(1);
    g = resize_nearest(g, size);
    t = resize_nearest(t, size);
    report.l1 += l1(g, t);
    report.psnr += psnr(g, t, config.peak);
    report.ssim += ssim(g, t, config.ssim_window, config.k1, config.k2, config.peak);
    const Eigen::VectorXd eg = extractor.embed(g), et = extractor.embed(t);
    if (row == 0) {
      fa.resize(n, eg.size());
      fb.resize(n, et.size());
    }
    fa.row(row) = eg.transpose();
    fb.row(row) = et.transpose();
    ++row;
  }
  report.samples = static_cast<std::size_t>(n);
  report.l1 /= static_cast<double>(n);
  report.psnr /= static_cast<double>(n);
  report.ssim /= static_cast<double>(n);
  report.fid = n > fa.cols() ? fid(fa, fb) : std::numeric_limits<double>::quiet_NaN();
  return report;
}

}  // namespace anyglyph
