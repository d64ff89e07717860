#include "xemb/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace xemb::geom {

double Vec3::norm() const { return std::sqrt(x * x + y * y + z * z); }

Vec3 Vec3::normalized() const {
  const double n = norm();
  if (n < 1e-300) throw std::invalid_argument("Vec3: cannot normalize zero");
  return {x / n, y / n, z / n};
}

Quat Quat::normalized(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (n < 1e-300) throw std::invalid_argument("Quat: zero norm");
  Quat q{w / n, x / n, y / n, z / n};
  if (q.w < 0) {
    q.w = -q.w;
    q.x = -q.x;
    q.y = -q.y;
    q.z = -q.z;
  }
  return q;
}

Quat Quat::from_axis_angle(const Vec3& axis, double angle_rad) {
  const Vec3 a = axis.normalized();
  const double h = 0.5 * angle_rad;
  const double s = std::sin(h);
  return normalized(std::cos(h), a.x * s, a.y * s, a.z * s);
}

Quat Quat::compose(const Quat& o) const {
  return normalized(w * o.w - x * o.x - y * o.y - z * o.z,
                    w * o.x + x * o.w + y * o.z - z * o.y,
                    w * o.y - x * o.z + y * o.w + z * o.x,
                    w * o.z + x * o.y - y * o.x + z * o.w);
}

Quat Quat::inverse() const { return normalized(w, -x, -y, -z); }

Vec3 Quat::rotate(const Vec3& v) const {
  // q v q* via the expanded cross-product form
  const Vec3 u{x, y, z};
  const Vec3 t = u.cross(v) * 2.0;
  return v + t * w + u.cross(t);
}

std::array<double, 9> Quat::to_matrix() const {
  const double xx = x * x, yy = y * y, zz = z * z;
  const double xy = x * y, xz = x * z, yz = y * z;
  const double wx = w * x, wy = w * y, wz = w * z;
  return {1 - 2 * (yy + zz), 2 * (xy - wz),     2 * (xz + wy),
          2 * (xy + wz),     1 - 2 * (xx + zz), 2 * (yz - wx),
          2 * (xz - wy),     2 * (yz + wx),     1 - 2 * (xx + yy)};
}

Quat Quat::from_matrix(const std::array<double, 9>& m) {
  // Shepperd's method: pick the largest diagonal combination.
  const double t = m[0] + m[4] + m[8];
  double qw, qx, qy, qz;
  if (t > 0) {
    const double s = std::sqrt(t + 1.0) * 2.0;
    qw = 0.25 * s;
    qx = (m[7] - m[5]) / s;
    qy = (m[2] - m[6]) / s;
    qz = (m[3] - m[1]) / s;
  } else if (m[0] > m[4] && m[0] > m[8]) {
    const double s = std::sqrt(1.0 + m[0] - m[4] - m[8]) * 2.0;
    qw = (m[7] - m[5]) / s;
    qx = 0.25 * s;
    qy = (m[1] + m[3]) / s;
    qz = (m[2] + m[6]) / s;
  } else if (m[4] > m[8]) {
    const double s = std::sqrt(1.0 + m[4] - m[0] - m[8]) * 2.0;
    qw = (m[2] - m[6]) / s;
    qx = (m[1] + m[3]) / s;
    qy = 0.25 * s;
    qz = (m[5] + m[7]) / s;
  } else {
    const double s = std::sqrt(1.0 + m[8] - m[0] - m[4]) * 2.0;
    qw = (m[3] - m[1]) / s;
    qx = (m[2] + m[6]) / s;
    qy = (m[5] + m[7]) / s;
    qz = 0.25 * s;
  }
  return normalized(qw, qx, qy, qz);
}

double Quat::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

double Quat::angle_to(const Quat& o) const {
  // relative rotation, atan2 form: precise near zero angle where acos is not
  const Quat r = inverse().compose(o);
  const double vec = std::sqrt(r.x * r.x + r.y * r.y + r.z * r.z);
  return 2.0 * std::atan2(vec, std::abs(r.w));
}

Pose Pose::compose(const Pose& o) const {
  return {rotation.rotate(o.translation) + translation,
          rotation.compose(o.rotation)};
}

Pose Pose::inverse() const {
  const Quat ri = rotation.inverse();
  return {ri.rotate(translation * -1.0), ri};
}

std::array<double, 6> rot6d_from_rotation(const Quat& r) {
  const auto m = r.to_matrix();
  // first two columns, stacked
  return {m[0], m[3], m[6], m[1], m[4], m[7]};
}

std::array<double, 6> rot6d_from_pose(const Pose& p) {
  return rot6d_from_rotation(p.rotation);
}

Quat rot6d_to_pose_rotation(const std::array<double, 6>& v) {
  const Vec3 a1{v[0], v[1], v[2]};
  const Vec3 a2{v[3], v[4], v[5]};
  if (a1.norm() < 1e-12)
    throw std::invalid_argument("rot6d: first column is zero");
  const Vec3 b1 = a1.normalized();
  const Vec3 proj = a2 - b1 * b1.dot(a2);
  if (proj.norm() < 1e-12)
    throw std::invalid_argument("rot6d: columns are parallel");
  const Vec3 b2 = proj.normalized();
  const Vec3 b3 = b1.cross(b2);
  return Quat::from_matrix(
      {b1.x, b2.x, b3.x, b1.y, b2.y, b3.y, b1.z, b2.z, b3.z});
}

int MaskFrame::count() const {
  int n = 0;
  for (uint8_t v : mask) n += v != 0;
  return n;
}

MaskFrame dilate_mask(const MaskFrame& m, int radius) {
  if (radius < 0) throw std::invalid_argument("dilate_mask: negative radius");
  if (radius == 0) return m;
  std::vector<std::pair<int, int>> disc;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dy * dy + dx * dx <= radius * radius) disc.emplace_back(dy, dx);

  MaskFrame out;
  out.height = m.height;
  out.width = m.width;
  out.mask.assign(m.mask.size(), 0);
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c) {
      if (!m.at(r, c)) continue;
      for (auto [dy, dx] : disc) {
        const int rr = r + dy, cc = c + dx;
        if (rr >= 0 && rr < m.height && cc >= 0 && cc < m.width)
          out.mask[static_cast<size_t>(rr) * m.width + cc] = 1;
      }
    }
  return out;
}

PointCloud lift_depth_to_cloud(const DepthFrame& d, const MaskFrame& m,
                               int source_frame) {
  if (d.height != m.height || d.width != m.width)
    throw std::invalid_argument("lift_depth_to_cloud: size mismatch");
  if (d.fx <= 0 || d.fy <= 0)
    throw std::invalid_argument("lift_depth_to_cloud: non-positive focal");
  PointCloud cloud;
  cloud.source_frame = source_frame;
  for (int r = 0; r < d.height; ++r)
    for (int c = 0; c < d.width; ++c) {
      if (!m.at(r, c)) continue;
      const double z = d.depth[static_cast<size_t>(r) * d.width + c];
      if (z <= 0) continue;
      cloud.points.push_back(
          {(c - d.cx) * z / d.fx, (r - d.cy) * z / d.fy, z});
    }
  if (cloud.points.size() < 3)
    throw std::runtime_error(
        "lift_depth_to_cloud: fewer than 3 valid masked pixels (" +
        std::to_string(cloud.points.size()) + ")");
  return cloud;
}

std::vector<std::array<double, 2>> project_cloud(const PointCloud& cloud,
                                                 const DepthFrame& intr) {
  std::vector<std::array<double, 2>> uv;
  uv.reserve(cloud.points.size());
  for (const auto& p : cloud.points)
    uv.push_back({p.x * intr.fx / p.z + intr.cx, p.y * intr.fy / p.z + intr.cy});
  return uv;
}

// ---------------------------------------------------------------------------
// Nearest neighbors: static median-split kd-tree above the brute-force cutoff.

namespace {

constexpr size_t kBruteForceCutoff = 256;

struct KdTree {
  struct Node {
    int left = -1, right = -1;
    int point = -1;
    int axis = 0;
  };
  const std::vector<Vec3>* pts = nullptr;
  std::vector<Node> nodes;
  int root = -1;

  explicit KdTree(const std::vector<Vec3>& points) : pts(&points) {
    std::vector<int> idx(points.size());
    std::iota(idx.begin(), idx.end(), 0);
    nodes.reserve(points.size());
    root = build(idx, 0, static_cast<int>(idx.size()), 0, idx);
  }

  int build(std::vector<int>& idx, int lo, int hi, int axis,
            std::vector<int>& scratch) {
    (void)scratch;
    if (lo >= hi) return -1;
    const int mid = (lo + hi) / 2;
    std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi,
                     [&](int a, int b) {
                       return coord((*pts)[static_cast<size_t>(a)], axis) <
                              coord((*pts)[static_cast<size_t>(b)], axis);
                     });
    Node n;
    n.point = idx[static_cast<size_t>(mid)];
    n.axis = axis;
    const int self = static_cast<int>(nodes.size());
    nodes.push_back(n);
    const int next_axis = (axis + 1) % 3;
    const int l = build(idx, lo, mid, next_axis, scratch);
    const int r = build(idx, mid + 1, hi, next_axis, scratch);
    nodes[static_cast<size_t>(self)].left = l;
    nodes[static_cast<size_t>(self)].right = r;
    return self;
  }

  static double coord(const Vec3& p, int axis) {
    return axis == 0 ? p.x : (axis == 1 ? p.y : p.z);
  }

  void nearest(const Vec3& q, int node, int* best, double* best_d2) const {
    if (node < 0) return;
    const Node& n = nodes[static_cast<size_t>(node)];
    const Vec3& p = (*pts)[static_cast<size_t>(n.point)];
    const Vec3 d = p - q;
    const double d2 = d.dot(d);
    if (d2 < *best_d2) {
      *best_d2 = d2;
      *best = n.point;
    }
    const double diff = coord(q, n.axis) - coord(p, n.axis);
    const int near = diff < 0 ? n.left : n.right;
    const int far = diff < 0 ? n.right : n.left;
    nearest(q, near, best, best_d2);
    if (diff * diff < *best_d2) nearest(q, far, best, best_d2);
  }

  int query(const Vec3& q) const {
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    nearest(q, root, &best, &best_d2);
    return best;
  }
};

int brute_nearest(const Vec3& q, const std::vector<Vec3>& pts) {
  int best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < pts.size(); ++i) {
    const Vec3 d = pts[i] - q;
    const double d2 = d.dot(d);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = static_cast<int>(i);
    }
  }
  return best;
}

struct RigidFit {
  Quat rotation;
  Vec3 translation;
};

// Kabsch closed form with a reflection guard on the determinant.
RigidFit fit_rigid(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  const size_t n = src.size();
  Vec3 sc{}, dc{};
  for (size_t i = 0; i < n; ++i) {
    sc = sc + src[i];
    dc = dc + dst[i];
  }
  sc = sc * (1.0 / static_cast<double>(n));
  dc = dc * (1.0 / static_cast<double>(n));

  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (size_t i = 0; i < n; ++i) {
    const Vec3 s = src[i] - sc;
    const Vec3 d = dst[i] - dc;
    h(0, 0) += s.x * d.x;
    h(0, 1) += s.x * d.y;
    h(0, 2) += s.x * d.z;
    h(1, 0) += s.y * d.x;
    h(1, 1) += s.y * d.y;
    h(1, 2) += s.y * d.z;
    h(2, 0) += s.z * d.x;
    h(2, 1) += s.z * d.y;
    h(2, 2) += s.z * d.z;
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(1) <= 1e-12 * std::max(sv(0), 1e-300))
    throw std::runtime_error("trimmed_icp: degenerate correspondence set");
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  Eigen::Matrix3d r = v * u.transpose();
  if (r.determinant() < 0) {
    v.col(2) *= -1.0;
    r = v * u.transpose();
  }
  RigidFit fit;
  fit.rotation = Quat::from_matrix(
      {r(0, 0), r(0, 1), r(0, 2), r(1, 0), r(1, 1), r(1, 2), r(2, 0), r(2, 1),
       r(2, 2)});
  fit.translation = dc - fit.rotation.rotate(sc);
  return fit;
}

}  // namespace

IcpResult trimmed_icp(const PointCloud& src, const PointCloud& dst,
                      const IcpConfig& cfg) {
  if (src.points.size() < 3 || dst.points.size() < 3)
    throw std::invalid_argument("trimmed_icp: clouds need >= 3 points");
  if (cfg.trim_fraction < 0.0 || cfg.trim_fraction >= 1.0)
    throw std::invalid_argument("trimmed_icp: trim_fraction outside [0,1)");

  const size_t n = src.points.size();
  const size_t keep = std::max<size_t>(
      3, static_cast<size_t>(
             std::llround((1.0 - cfg.trim_fraction) * static_cast<double>(n))));

  std::unique_ptr<KdTree> tree;
  if (dst.points.size() > kBruteForceCutoff)
    tree = std::make_unique<KdTree>(dst.points);

  IcpResult result;
  result.pose = Pose::identity();
  double prev_res = std::numeric_limits<double>::infinity();

  std::vector<Vec3> moved(n);
  std::vector<int> match(n);
  std::vector<double> dist2(n);
  std::vector<size_t> order(n);

  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    result.iterations = iter;
#pragma omp parallel for schedule(static) if (n > 64)
    for (int64_t i = 0; i < static_cast<int64_t>(n); ++i) {
      const size_t ui = static_cast<size_t>(i);
      moved[ui] = result.pose.apply(src.points[ui]);
      const int j = tree ? tree->query(moved[ui])
                         : brute_nearest(moved[ui], dst.points);
      match[ui] = j;
      const Vec3 d = dst.points[static_cast<size_t>(j)] - moved[ui];
      dist2[ui] = d.dot(d);
    }
    std::iota(order.begin(), order.end(), size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(keep),
                      order.end(),
                      [&](size_t a, size_t b) { return dist2[a] < dist2[b]; });

    std::vector<Vec3> s_keep(keep), d_keep(keep);
    for (size_t i = 0; i < keep; ++i) {
      s_keep[i] = src.points[order[i]];
      d_keep[i] = dst.points[static_cast<size_t>(match[order[i]])];
    }
    const RigidFit fit = fit_rigid(s_keep, d_keep);
    result.pose = Pose{fit.translation, fit.rotation};

    double sum2 = 0.0;
    for (size_t i = 0; i < keep; ++i) {
      const Vec3 d = result.pose.apply(s_keep[i]) - d_keep[i];
      sum2 += d.dot(d);
    }
    result.residual = std::sqrt(sum2 / static_cast<double>(keep));
    result.residual_history.push_back(result.residual);
    if (std::abs(prev_res - result.residual) < cfg.tol) {
      result.converged = true;
      break;
    }
    prev_res = result.residual;
  }
  return result;
}

std::vector<Pose> estimate_object_trajectory(
    const std::vector<PointCloud>& clouds, const IcpConfig& cfg) {
  if (clouds.size() < 2)
    throw std::invalid_argument(
        "estimate_object_trajectory: need at least 2 clouds, got " +
        std::to_string(clouds.size()));
  std::vector<Pose> poses;
  poses.push_back(Pose::identity());
  for (size_t k = 1; k < clouds.size(); ++k) {
    IcpResult step;
    try {
      step = trimmed_icp(clouds[k - 1], clouds[k], cfg);
    } catch (const std::exception& e) {
      throw std::runtime_error("estimate_object_trajectory: frame " +
                               std::to_string(k) + ": " + e.what());
    }
    poses.push_back(step.pose.compose(poses.back()));
  }
  return poses;
}

// ---------------------------------------------------------------------------
// Text interchange

namespace {
void append_double(std::string& out, double v) {
  char buf[32];
  snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}
}  // namespace

std::string cloud_to_text(const PointCloud& c) {
  std::string out = "# point cloud: x y z per line\n";
  for (const auto& p : c.points) {
    append_double(out, p.x);
    out += ' ';
    append_double(out, p.y);
    out += ' ';
    append_double(out, p.z);
    out += '\n';
  }
  return out;
}

PointCloud cloud_from_text(const std::string& text) {
  PointCloud c;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Vec3 p;
    if (!(ls >> p.x >> p.y >> p.z))
      throw std::runtime_error("cloud_from_text: parse error at line " +
                               std::to_string(line_no));
    c.points.push_back(p);
  }
  return c;
}

std::string trajectory_to_text(const std::vector<Pose>& poses) {
  std::string out = "# trajectory: tx ty tz qw qx qy qz per line\n";
  for (const auto& p : poses) {
    const double vals[7] = {p.translation.x, p.translation.y, p.translation.z,
                            p.rotation.w,    p.rotation.x,    p.rotation.y,
                            p.rotation.z};
    for (int i = 0; i < 7; ++i) {
      if (i) out += ' ';
      append_double(out, vals[i]);
    }
    out += '\n';
  }
  return out;
}

std::vector<Pose> trajectory_from_text(const std::string& text) {
  std::vector<Pose> poses;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    double tx, ty, tz, qw, qx, qy, qz;
    if (!(ls >> tx >> ty >> tz >> qw >> qx >> qy >> qz))
      throw std::runtime_error("trajectory_from_text: parse error at line " +
                               std::to_string(line_no));
    poses.push_back({{tx, ty, tz}, Quat::normalized(qw, qx, qy, qz)});
  }
  return poses;
}

}  // namespace xemb::geom
