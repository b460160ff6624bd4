#include "ccf/depthprior.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "ccf/rng.hpp"

namespace ccf {

namespace {

constexpr double kSigmaInflationRain = 1.2;
constexpr double kSigmaInflationNight = 0.8;
constexpr double kSigmaInflationGeo = 0.9;

void require_distribution_pair(const DepthDistribution& d2,
                               const DepthDistribution& d3) {
  if (d2.size() == 0 || d2.size() != d3.size())
    throw std::invalid_argument("depth distributions: size mismatch");
  if (!d2.allFinite() || !d3.allFinite())
    throw std::invalid_argument("depth distributions: non-finite entries");
  if (d2.minCoeff() < 0 || d3.minCoeff() < 0)
    throw std::invalid_argument("depth distributions: negative entries");
}

}  // namespace

void DepthBins::validate() const {
  if (!(d_min > 0) || !(d_max > d_min) || count < 1)
    throw std::invalid_argument("depth bins: need 0 < d_min < d_max, count >= 1");
}

Eigen::VectorXd DepthBins::centers() const {
  validate();
  Eigen::VectorXd c(count);
  for (int k = 0; k < count; ++k) c(k) = center(k);
  return c;
}

int DepthBins::bin_of(double depth) const {
  if (depth < d_min || depth > d_max) return -1;
  const int k = int((depth - d_min) / width());
  return std::min(k, count - 1);
}

DepthDistribution uniform_distribution(const DepthBins& bins) {
  bins.validate();
  return DepthDistribution::Constant(bins.count, 1.0 / bins.count);
}

DepthDistribution lidar_depth_histogram(const std::vector<double>& depths,
                                        const DepthBins& bins) {
  bins.validate();
  DepthDistribution h = DepthDistribution::Zero(bins.count);
  int n = 0;
  for (double d : depths) {
    const int k = bins.bin_of(d);
    if (k < 0) continue;
    h(k) += 1.0;
    ++n;
  }
  if (n == 0) return uniform_distribution(bins);
  return h / double(n);
}

DepthDistribution discretized_gaussian(double mean, double sigma,
                                       const DepthBins& bins) {
  bins.validate();
  if (sigma < 0) throw std::invalid_argument("discretized_gaussian: sigma < 0");
  if (sigma < 1e-9) {
    DepthDistribution d = DepthDistribution::Zero(bins.count);
    const double clamped = std::clamp(mean, bins.d_min, bins.d_max);
    d(std::max(0, bins.bin_of(clamped))) = 1.0;
    return d;
  }
  const Eigen::VectorXd c = bins.centers();
  Eigen::VectorXd log_w =
      -((c.array() - mean).square()) / (2.0 * sigma * sigma);
  log_w.array() -= log_w.maxCoeff();
  DepthDistribution d = log_w.array().exp();
  return d / d.sum();
}

double image_sigma(double sigma_base, const DomainTag& domain) {
  if (!(sigma_base > 0)) throw std::invalid_argument("image_sigma: sigma <= 0");
  switch (domain.kind) {
    case DomainKind::Source: return sigma_base;
    case DomainKind::Rain:
      return sigma_base * (1.0 + kSigmaInflationRain * domain.severity);
    case DomainKind::Night:
      return sigma_base * (1.0 + kSigmaInflationNight * domain.severity);
    case DomainKind::Geo:
      return sigma_base * (1.0 + kSigmaInflationGeo * domain.severity);
  }
  return sigma_base;
}

DepthDistribution image_depth_distribution(double gt_depth, double sigma_base,
                                           const DomainTag& domain,
                                           const DepthBins& bins,
                                           std::uint64_t seed) {
  const double sigma = image_sigma(sigma_base, domain);
  Rng rng(seed);
  const double bias = rng.normal(0, sigma);
  return discretized_gaussian(gt_depth + bias, sigma, bins);
}

DepthDistribution proposal_depth_belief(const Scene& scene,
                                        const CameraModel& cam, int origin_gt,
                                        double sigma_base,
                                        const DepthBins& bins,
                                        std::uint64_t seed) {
  if (origin_gt >= 0) {
    const double gt_depth =
        camera_depth(cam, scene.gt_boxes[std::size_t(origin_gt)].center);
    return image_depth_distribution(gt_depth, sigma_base, scene.domain, bins,
                                    seed);
  }
  Rng rng(seed);
  const double fake = rng.uniform(bins.d_min + 2.0, bins.d_max - 8.0);
  return discretized_gaussian(fake, image_sigma(sigma_base, scene.domain),
                              bins);
}

DepthDistribution fuse_distributions(const DepthDistribution& d2,
                                     const DepthDistribution& d3,
                                     double lambda) {
  require_distribution_pair(d2, d3);
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw std::invalid_argument("fuse_distributions: lambda outside [0, 1]");
  Eigen::ArrayXd a = d2.array().max(kEpsProb);
  Eigen::ArrayXd b = d3.array().max(kEpsProb);
  a /= a.sum();
  b /= b.sum();
  Eigen::ArrayXd s = lambda * a.log() + (1.0 - lambda) * b.log();
  s -= s.maxCoeff();
  Eigen::ArrayXd e = s.exp();
  return (e / e.sum()).matrix();
}

double expected_depth(const DepthDistribution& d, const DepthBins& bins) {
  if (d.size() != bins.count)
    throw std::invalid_argument("expected_depth: size mismatch");
  return bins.centers().dot(d);
}

ConfidenceNet ConfidenceNet::init(int input_dim, int hidden,
                                  std::uint64_t seed) {
  if (input_dim < 1 || hidden < 1)
    throw std::invalid_argument("confidence net: bad dimensions");
  Rng rng(seed);
  auto fill = [&rng](Eigen::MatrixXd& m, int rows, int cols) {
    m.resize(rows, cols);
    const double a = std::sqrt(6.0 / double(rows + cols));
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-a, a);
  };
  ConfidenceNet net;
  fill(net.w1, hidden, input_dim);
  fill(net.w2, hidden, hidden);
  fill(net.w3, 1, hidden);
  net.b1 = Eigen::VectorXd::Zero(hidden);
  net.b2 = Eigen::VectorXd::Zero(hidden);
  net.b3 = 0.0;
  return net;
}

double confidence_forward(const ConfidenceNet& net,
                          const DepthDistribution& d2,
                          const DepthDistribution& d3,
                          ConfidenceCache* cache) {
  require_distribution_pair(d2, d3);
  if (d2.size() + d3.size() != net.input_dim())
    throw std::invalid_argument("confidence net: input size mismatch");
  Eigen::VectorXd x(net.input_dim());
  x << d2, d3;
  const Eigen::VectorXd h1 = (net.w1 * x + net.b1).array().tanh();
  const Eigen::VectorXd h2 = (net.w2 * h1 + net.b2).array().tanh();
  const double z = (net.w3 * h2)(0) + net.b3;
  const double lambda = 1.0 / (1.0 + std::exp(-z));
  if (cache) {
    cache->x = x;
    cache->h1 = h1;
    cache->h2 = h2;
    cache->z = z;
    cache->lambda = lambda;
  }
  return lambda;
}

ConfidenceGrads ConfidenceGrads::zeros_like(const ConfidenceNet& net) {
  ConfidenceGrads g;
  g.w1 = Eigen::MatrixXd::Zero(net.w1.rows(), net.w1.cols());
  g.w2 = Eigen::MatrixXd::Zero(net.w2.rows(), net.w2.cols());
  g.w3 = Eigen::MatrixXd::Zero(net.w3.rows(), net.w3.cols());
  g.b1 = Eigen::VectorXd::Zero(net.b1.size());
  g.b2 = Eigen::VectorXd::Zero(net.b2.size());
  g.b3 = 0.0;
  return g;
}

void ConfidenceGrads::accumulate(const ConfidenceGrads& other, double scale) {
  w1 += scale * other.w1;
  w2 += scale * other.w2;
  w3 += scale * other.w3;
  b1 += scale * other.b1;
  b2 += scale * other.b2;
  b3 += scale * other.b3;
}

ConfidenceGrads confidence_backward(const ConfidenceNet& net,
                                    const ConfidenceCache& cache,
                                    double dloss_dlambda) {
  ConfidenceGrads g = ConfidenceGrads::zeros_like(net);
  const double dz = dloss_dlambda * cache.lambda * (1.0 - cache.lambda);
  g.w3 = dz * cache.h2.transpose();
  g.b3 = dz;
  Eigen::VectorXd dh2 = net.w3.transpose() * dz;
  Eigen::VectorXd da2 =
      dh2.array() * (1.0 - cache.h2.array().square());
  g.w2 = da2 * cache.h1.transpose();
  g.b2 = da2;
  Eigen::VectorXd dh1 = net.w2.transpose() * da2;
  Eigen::VectorXd da1 =
      dh1.array() * (1.0 - cache.h1.array().square());
  g.w1 = da1 * cache.x.transpose();
  g.b1 = da1;
  return g;
}

namespace {

double sgn(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

// dE[fused]/dlambda via the softmax covariance identity.
double fused_depth_grad(const DepthDistribution& d2,
                        const DepthDistribution& d3, double lambda,
                        const DepthBins& bins, double* expected) {
  Eigen::ArrayXd a = d2.array().max(kEpsProb);
  Eigen::ArrayXd b = d3.array().max(kEpsProb);
  a /= a.sum();
  b /= b.sum();
  const Eigen::ArrayXd u = a.log() - b.log();
  Eigen::ArrayXd s = lambda * a.log() + (1.0 - lambda) * b.log();
  s -= s.maxCoeff();
  Eigen::ArrayXd f = s.exp();
  f /= f.sum();
  const Eigen::ArrayXd c = bins.centers().array();
  const double e = (c * f).sum();
  if (expected) *expected = e;
  const double ubar = (u * f).sum();
  return (c * f * u).sum() - ubar * e;
}

}  // namespace

ConfidenceTrainResult train_confidence(ConfidenceNet& net,
                                       const std::vector<DepthTrainSample>& samples,
                                       const ConfidenceTrainConfig& cfg,
                                       const DepthBins& bins) {
  if (cfg.epochs < 0 || !(cfg.lr >= 0))
    throw std::invalid_argument("train_confidence: bad config");
  ConfidenceTrainResult result;
  auto pass = [&](bool update) {
    ConfidenceGrads grads = ConfidenceGrads::zeros_like(net);
    double loss_sum = 0.0;
    int used = 0;
    for (const auto& s : samples) {
      if (cfg.exclude_empty_frustum && s.empty_frustum) continue;
      ConfidenceCache cache;
      const double lambda = confidence_forward(net, s.d2, s.d3, &cache);
      double e = 0.0;
      const double de_dlambda =
          fused_depth_grad(s.d2, s.d3, lambda, bins, &e);
      const double loss = std::abs(e - s.gt_depth);
      loss_sum += loss;
      ++used;
      if (update) {
        const double dlambda = sgn(e - s.gt_depth) * de_dlambda;
        grads.accumulate(confidence_backward(net, cache, dlambda));
      }
    }
    if (used == 0) return 0.0;
    const double mean_loss = loss_sum / used;
    if (!std::isfinite(mean_loss))
      throw std::runtime_error(
          "train_confidence: loss diverged to a non-finite value");
    if (update) {
      const double scale = -cfg.lr / used;
      net.w1 += scale * grads.w1;
      net.w2 += scale * grads.w2;
      net.w3 += scale * grads.w3;
      net.b1 += scale * grads.b1;
      net.b2 += scale * grads.b2;
      net.b3 += scale * grads.b3;
    }
    return mean_loss;
  };
  for (int epoch = 0; epoch < cfg.epochs; ++epoch)
    result.loss_curve.push_back(pass(true));
  result.loss_curve.push_back(pass(false));
  return result;
}

void save_confidence_net(const ConfidenceNet& net, const std::string& path) {
  nlohmann::json j;
  j["version"] = "ccf-confnet-v1";
  j["input_dim"] = net.input_dim();
  j["hidden"] = int(net.w1.rows());
  auto put = [&j](const char* key, const Eigen::MatrixXd& m) {
    std::vector<double> v;
    v.reserve(std::size_t(m.size()));
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) v.push_back(m(r, c));
    j[key] = v;
  };
  put("w1", net.w1);
  put("w2", net.w2);
  put("w3", net.w3);
  put("b1", net.b1);
  put("b2", net.b2);
  j["b3"] = net.b3;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump() << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

ConfidenceNet load_confidence_net(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weights: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("malformed weights file " + path + ": " +
                             e.what());
  }
  const std::string version = j.value("version", std::string("<missing>"));
  if (version != "ccf-confnet-v1")
    throw std::runtime_error("weights version mismatch in " + path +
                             ": expected ccf-confnet-v1, found " + version);
  const int input_dim = j.at("input_dim").get<int>();
  const int hidden = j.at("hidden").get<int>();
  ConfidenceNet net;
  auto get = [&j](const char* key, Eigen::MatrixXd& m, int rows, int cols) {
    const auto v = j.at(key).get<std::vector<double>>();
    if (int(v.size()) != rows * cols)
      throw std::runtime_error(std::string("weights entry '") + key +
                               "' has wrong size");
    m.resize(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) m(r, c) = v[std::size_t(r * cols + c)];
  };
  get("w1", net.w1, hidden, input_dim);
  get("w2", net.w2, hidden, hidden);
  get("w3", net.w3, 1, hidden);
  Eigen::MatrixXd tmp;
  get("b1", tmp, hidden, 1);
  net.b1 = tmp;
  get("b2", tmp, hidden, 1);
  net.b2 = tmp;
  net.b3 = j.at("b3").get<double>();
  return net;
}

Eigen::VectorXd content_embedding_2d(const Box2D& box, const CameraModel& cam,
                                     const DepthDistribution& depth_dist) {
  if (cam.width <= 0 || cam.height <= 0)
    throw std::invalid_argument("content_embedding_2d: bad camera size");
  Eigen::VectorXd c = Eigen::VectorXd::Zero(kContentDim);
  const Vec2 ctr = box.center();
  c(0) = ctr.x() / cam.width;
  c(1) = ctr.y() / cam.height;
  c(2) = box.width() / cam.width;
  c(3) = box.height() / cam.height;
  c(4) = box.score;
  // Raw moments of depth normalized to [0, 1] across the bin span.
  const int n = int(depth_dist.size());
  if (n > 0) {
    Eigen::ArrayXd x(n);
    for (int k = 0; k < n; ++k) x(k) = (k + 0.5) / double(n);
    Eigen::ArrayXd pw = Eigen::ArrayXd::Ones(n);
    for (int m = 0; m < 8; ++m) {
      pw *= x;
      c(5 + m) = (depth_dist.array() * pw).sum();
    }
  }
  c(13) = 0.0;  // modality flag: image
  c(14) = 1.0;
  return c;
}

Eigen::VectorXd content_embedding_3d(const Box3D& box, double scene_radius) {
  if (!(scene_radius > 0))
    throw std::invalid_argument("content_embedding_3d: radius <= 0");
  Eigen::VectorXd c = Eigen::VectorXd::Zero(kContentDim);
  c.segment<3>(0) = box.center / scene_radius;
  c.segment<3>(3) = box.size / scene_radius;
  c(6 + 0) = std::sin(box.yaw);
  c(7) = std::cos(box.yaw);
  c(8) = box.score;
  c(13) = 1.0;  // modality flag: lidar
  c(14) = 1.0;
  return c;
}

Query2D make_query2d(const Box2D& box, const CameraModel& cam,
                     int camera_index, const std::vector<LidarPoint>& points,
                     const DepthBins& bins, const ConfidenceNet& net,
                     const DepthDistribution& image_dist,
                     std::optional<double> lambda_override) {
  bins.validate();
  std::vector<double> depths;
  for (const auto& p : points) {
    if (frustum_contains(cam, box, {bins.d_min, bins.d_max}, p.position)) {
      const auto pd = project_point(cam, p.position);
      depths.push_back(pd->depth);
    }
  }
  Query2D q;
  q.empty_frustum = depths.empty();
  const DepthDistribution d3 = lidar_depth_histogram(depths, bins);
  const double lambda = lambda_override
                            ? *lambda_override
                            : confidence_forward(net, image_dist, d3);
  q.depth_dist = fuse_distributions(image_dist, d3, lambda);
  const double depth = expected_depth(q.depth_dist, bins);
  q.ref_point = backproject(cam, box.center(), depth);
  q.content = content_embedding_2d(box, cam, q.depth_dist);
  q.source_box = box;
  q.camera_index = camera_index;
  return q;
}

Query3D make_query3d(const Box3D& box, double scene_radius) {
  Query3D q;
  q.content = content_embedding_3d(box, scene_radius);
  q.ref_point = box.center;
  q.source_box = box;
  return q;
}

}  // namespace ccf
