#include "dscene/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dscene/error.hpp"
#include "json.hpp"

namespace dscene {

namespace {

inline double dist2(const Vec3f& a, const Vec3f& b) {
  const double dx = static_cast<double>(a.x()) - static_cast<double>(b.x());
  const double dy = static_cast<double>(a.y()) - static_cast<double>(b.y());
  const double dz = static_cast<double>(a.z()) - static_cast<double>(b.z());
  return dx * dx + dy * dy + dz * dz;
}

constexpr std::size_t kLeafSize = 8;

double directed_mean(const std::vector<Vec3f>& from, const std::vector<Vec3f>& to, bool brute) {
  std::vector<double> d(from.size());
  if (brute) {
    for (std::size_t i = 0; i < from.size(); ++i) {
      double best = dist2(from[i], to[0]);
      for (std::size_t j = 1; j < to.size(); ++j) best = std::min(best, dist2(from[i], to[j]));
      d[i] = std::sqrt(best);
    }
  } else {
    const KdTree tree(to);
    for (std::size_t i = 0; i < from.size(); ++i) {
      double best = 0.0;
      tree.nearest(from[i], &best);
      d[i] = std::sqrt(best);
    }
  }
  double sum = 0.0;
  for (double v : d) sum += v;
  return sum / static_cast<double>(from.size());
}

double chamfer_impl(const PointCloud& a, const PointCloud& b, bool brute) {
  if (a.size() == 0 || b.size() == 0) throw EmptyCloudError("chamfer: empty point cloud");
  return 0.5 * (directed_mean(a.points, b.points, brute) + directed_mean(b.points, a.points, brute));
}

}  // namespace

void CropVolume::validate() const {
  if (!(x_min < x_max) || !(y_min < y_max) || !(z_min < z_max)) {
    throw ValidationError("crop volume: min must be below max on every axis");
  }
}

bool CropVolume::contains(const Vec3f& p) const {
  return p.x() >= x_min && p.x() <= x_max && p.y() >= y_min && p.y() <= y_max && p.z() >= z_min && p.z() <= z_max;
}

CropVolume CropVolume::parse(std::string_view text) {
  if (text == "default") return {};
  std::vector<double> v;
  std::stringstream ss{std::string(text)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("crop volume: cannot parse '" + item + "'");
    }
  }
  if (v.size() != 6) throw ValidationError("crop volume: expected six comma-separated bounds");
  CropVolume c{v[0], v[1], v[2], v[3], v[4], v[5]};
  c.validate();
  return c;
}

PointCloud crop_cloud(const PointCloud& cloud, const CropVolume& vol) {
  vol.validate();
  PointCloud out;
  out.timestamp = cloud.timestamp;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (vol.contains(cloud.points[i])) {
      out.points.push_back(cloud.points[i]);
      out.intensity.push_back(cloud.intensity[i]);
    }
  }
  return out;
}

double chamfer(const PointCloud& a, const PointCloud& b) { return chamfer_impl(a, b, false); }
double chamfer_brute(const PointCloud& a, const PointCloud& b) { return chamfer_impl(a, b, true); }

KdTree::KdTree(const std::vector<Vec3f>& points) : pts_(points), order_(points.size()) {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (!pts_.empty()) build(0, pts_.size());
}

std::size_t KdTree::build(std::size_t begin, std::size_t end) {
  const std::size_t id = nodes_.size();
  nodes_.push_back({begin, end, -1, 0.0, 0, 0});
  if (end - begin <= kLeafSize) return id;
  Vec3f lo = pts_[order_[begin]], hi = lo;
  for (std::size_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(pts_[order_[i]]);
    hi = hi.cwiseMax(pts_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] == lo[axis]) return id;  // all points coincide
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                     const float pa = pts_[a][axis], pb = pts_[b][axis];
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = pts_[order_[mid]][axis];
  const std::size_t l = build(begin, mid);
  const std::size_t r = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = l;
  nodes_[id].right = r;
  return id;
}

std::size_t KdTree::nearest(const Vec3f& q, double* out_d2) const {
  if (pts_.empty()) throw EmptyCloudError("kd-tree: no points");
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_i = 0;
  // Explicit stack of (node, lower bound on squared distance along the split).
  std::vector<std::pair<std::size_t, double>> stack;
  stack.reserve(64);
  stack.emplace_back(0, 0.0);
  while (!stack.empty()) {
    const auto [id, bound] = stack.back();
    stack.pop_back();
    if (bound > best) continue;
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (std::size_t k = n.begin; k < n.end; ++k) {
        const std::size_t i = order_[k];
        const double d = dist2(q, pts_[i]);
        if (d < best || (d == best && i < best_i)) {
          best = d;
          best_i = i;
        }
      }
      continue;
    }
    const double diff = static_cast<double>(q[n.axis]) - n.split;
    const double far_bound = diff * diff;
    // Points equal to the split may sit on either side, so both children are
    // visited when the query lies on the plane.
    if (diff < 0.0) {
      stack.emplace_back(n.right, far_bound);
      stack.emplace_back(n.left, 0.0);
    } else {
      stack.emplace_back(n.left, far_bound);
      stack.emplace_back(n.right, 0.0);
    }
  }
  if (out_d2) *out_d2 = best;
  return best_i;
}

std::array<std::size_t, 3> horizon_indices(double frame_rate_hz) {
  if (!(frame_rate_hz > 0.0) || frame_rate_hz != std::floor(frame_rate_hz)) {
    throw ValidationError("chamfer_horizons: frame rate must be a positive integer number of Hz");
  }
  const auto r = static_cast<std::size_t>(frame_rate_hz);
  return {r, 2 * r, 3 * r};
}

ChamferHorizons chamfer_horizons(const std::vector<PointCloud>& pred, const std::vector<PointCloud>& gt,
                                 double frame_rate_hz, const CropVolume& vol) {
  const auto idx = horizon_indices(frame_rate_hz);
  if (pred.size() <= idx[2] || gt.size() <= idx[2]) {
    throw ValidationError("chamfer_horizons: sequences need at least " + std::to_string(idx[2] + 1) + " frames, got " +
                          std::to_string(std::min(pred.size(), gt.size())));
  }
  std::array<double, 3> c{};
  for (std::size_t k = 0; k < 3; ++k) c[k] = chamfer(crop_cloud(pred[idx[k]], vol), crop_cloud(gt[idx[k]], vol));
  return {c[0], c[1], c[2]};
}

std::string chamfer_report_json(const ChamferHorizons& h) {
  nlohmann::ordered_json j;
  j["chamfer_1s"] = h.at_1s;
  j["chamfer_2s"] = h.at_2s;
  j["chamfer_3s"] = h.at_3s;
  j["convention"] = kChamferConvention;
  return j.dump(2) + "\n";
}

void GaussianSummary::validate() const {
  const auto n = mean.size();
  if (cov.rows() != n || cov.cols() != n) throw ShapeError("gaussian: covariance does not match mean dimension");
  if (n == 0) throw ShapeError("gaussian: zero dimension");
  if (!mean.allFinite() || !cov.allFinite()) throw ValidationError("gaussian: non-finite entries");
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-9) throw ValidationError("gaussian: covariance not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-9) throw ValidationError("gaussian: covariance not positive semidefinite");
}

GaussianSummary GaussianSummary::from_samples(const Eigen::MatrixXd& rows) {
  if (rows.rows() < 2) throw ValidationError("gaussian: need at least two samples");
  GaussianSummary g;
  g.mean = rows.colwise().mean().transpose();
  const Eigen::MatrixXd c = rows.rowwise() - g.mean.transpose();
  g.cov = (c.transpose() * c) / static_cast<double>(rows.rows() - 1);
  g.cov = 0.5 * (g.cov + g.cov.transpose());
  return g;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_gaussian(const GaussianSummary& g1, const GaussianSummary& g2) {
  g1.validate();
  g2.validate();
  if (g1.mean.size() != g2.mean.size()) throw ShapeError("frechet: dimension mismatch");
  const Eigen::MatrixXd s1 = psd_sqrt(g1.cov);
  const Eigen::MatrixXd inner = s1 * g2.cov * s1;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (g1.mean - g2.mean).squaredNorm() + g1.cov.trace() + g2.cov.trace() - 2.0 * tr_sqrt;
  return std::max(d, 0.0);
}

}  // namespace dscene
