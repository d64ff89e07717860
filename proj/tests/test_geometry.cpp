#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "xemb/geometry.hpp"
#include "xemb/rng.hpp"

using namespace xemb;
using namespace xemb::geom;

namespace {
constexpr double kDeg = 3.14159265358979323846 / 180.0;

Quat random_rotation(Rng& rng) {
  // uniform via normalized 4-gaussian
  return Quat::normalized(rng.gaussian(), rng.gaussian(), rng.gaussian(),
                          rng.gaussian());
}

Vec3 random_vec(Rng& rng, double s = 1.0) {
  return {rng.gaussian() * s, rng.gaussian() * s, rng.gaussian() * s};
}

PointCloud random_cloud(Rng& rng, int n, double extent = 1.0) {
  PointCloud c;
  for (int i = 0; i < n; ++i)
    c.points.push_back({rng.uniform(-extent, extent),
                        rng.uniform(-extent, extent),
                        rng.uniform(-extent, extent)});
  return c;
}

PointCloud apply_pose(const PointCloud& c, const Pose& p) {
  PointCloud out = c;
  for (auto& pt : out.points) pt = p.apply(pt);
  return out;
}
}  // namespace

TEST_CASE("pose compose with inverse is identity") {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    Pose p{random_vec(rng), random_rotation(rng)};
    Pose id = p.compose(p.inverse());
    CHECK(std::abs(id.translation.x) < 1e-9);
    CHECK(std::abs(id.translation.y) < 1e-9);
    CHECK(std::abs(id.translation.z) < 1e-9);
    CHECK(id.rotation.angle_to(Quat::identity()) < 1e-9);
    CHECK(p.rotation.norm() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(p.rotation.w >= 0.0);
  }
}

TEST_CASE("pose composition is associative, inverse is an involution") {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    Pose a{random_vec(rng), random_rotation(rng)};
    Pose b{random_vec(rng), random_rotation(rng)};
    Pose c{random_vec(rng), random_rotation(rng)};
    Pose lhs = a.compose(b).compose(c);
    Pose rhs = a.compose(b.compose(c));
    Vec3 probe = random_vec(rng);
    Vec3 pl = lhs.apply(probe), pr = rhs.apply(probe);
    CHECK(std::abs(pl.x - pr.x) < 1e-9);
    CHECK(std::abs(pl.y - pr.y) < 1e-9);
    CHECK(std::abs(pl.z - pr.z) < 1e-9);

    Pose back = a.inverse().inverse();
    CHECK(back.rotation.angle_to(a.rotation) < 1e-9);
    CHECK(std::abs(back.translation.x - a.translation.x) < 1e-9);
  }
}

TEST_CASE("rot6d of identity is the first two identity columns") {
  auto v = rot6d_from_rotation(Quat::identity());
  CHECK(v == std::array<double, 6>{1, 0, 0, 0, 1, 0});
}

TEST_CASE("rot6d decode then encode reproduces orthonormalized input") {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    std::array<double, 6> v;
    for (auto& x : v) x = rng.gaussian();
    Quat r = rot6d_to_pose_rotation(v);
    auto enc = rot6d_from_rotation(r);
    // independent Gram-Schmidt oracle
    Vec3 a1{v[0], v[1], v[2]}, a2{v[3], v[4], v[5]};
    Vec3 b1 = a1.normalized();
    Vec3 b2 = (a2 - b1 * b1.dot(a2)).normalized();
    CHECK(std::abs(enc[0] - b1.x) < 1e-9);
    CHECK(std::abs(enc[1] - b1.y) < 1e-9);
    CHECK(std::abs(enc[2] - b1.z) < 1e-9);
    CHECK(std::abs(enc[3] - b2.x) < 1e-9);
    CHECK(std::abs(enc[4] - b2.y) < 1e-9);
    CHECK(std::abs(enc[5] - b2.z) < 1e-9);
  }
}

TEST_CASE("rot6d encode then decode is identity on rotations") {
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    Quat r = random_rotation(rng);
    Quat back = rot6d_to_pose_rotation(rot6d_from_rotation(r));
    CHECK(back.angle_to(r) < 1e-9);
  }
}

TEST_CASE("rot6d rejects degenerate columns") {
  CHECK_THROWS_AS(rot6d_to_pose_rotation({1, 0, 0, 2, 0, 0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(rot6d_to_pose_rotation({0, 0, 0, 0, 1, 0}),
                  std::invalid_argument);
}

TEST_CASE("mask dilation radius zero is identity") {
  MaskFrame m{4, 4, std::vector<uint8_t>(16, 0)};
  m.mask[5] = 1;
  auto out = dilate_mask(m, 0);
  CHECK(out.mask == m.mask);
}

TEST_CASE("mask dilation radius one gives a plus shape") {
  MaskFrame m{5, 5, std::vector<uint8_t>(25, 0)};
  m.mask[2 * 5 + 2] = 1;
  auto out = dilate_mask(m, 1);
  CHECK(out.count() == 5);
  CHECK(out.at(2, 2));
  CHECK(out.at(1, 2));
  CHECK(out.at(3, 2));
  CHECK(out.at(2, 1));
  CHECK(out.at(2, 3));
  CHECK_FALSE(out.at(1, 1));
  // dilation is a superset of the input
  for (size_t i = 0; i < m.mask.size(); ++i)
    if (m.mask[i]) CHECK(out.mask[i]);
}

TEST_CASE("mask dilation saturates on a full mask") {
  MaskFrame m{3, 3, std::vector<uint8_t>(9, 1)};
  auto out = dilate_mask(m, 2);
  CHECK(out.count() == 9);
}

TEST_CASE("depth lifting closed forms") {
  DepthFrame d;
  d.height = 8;
  d.width = 8;
  d.fx = 2.0;
  d.fy = 3.0;
  d.cx = 4.0;
  d.cy = 4.0;
  d.depth.assign(64, 0.0);
  MaskFrame m{8, 8, std::vector<uint8_t>(64, 0)};

  // principal ray
  d.depth[4 * 8 + 4] = 1.0;
  m.mask[4 * 8 + 4] = 1;
  // pixel (cx + fx, cy) at depth 2 -> (2, 0, 2)
  d.depth[4 * 8 + 6] = 2.0;
  m.mask[4 * 8 + 6] = 1;
  d.depth[5 * 8 + 4] = 1.5;
  m.mask[5 * 8 + 4] = 1;

  auto cloud = lift_depth_to_cloud(d, m);
  REQUIRE(cloud.points.size() == 3);
  CHECK(cloud.points[0].x == doctest::Approx(0.0));
  CHECK(cloud.points[0].y == doctest::Approx(0.0));
  CHECK(cloud.points[0].z == doctest::Approx(1.0));
  CHECK(cloud.points[1].x == doctest::Approx(2.0));
  CHECK(cloud.points[1].y == doctest::Approx(0.0));
  CHECK(cloud.points[1].z == doctest::Approx(2.0));
}

TEST_CASE("depth lifting rejects all-invalid masks") {
  DepthFrame d;
  d.height = 4;
  d.width = 4;
  d.depth.assign(16, 0.0);
  MaskFrame m{4, 4, std::vector<uint8_t>(16, 1)};
  CHECK_THROWS_AS(lift_depth_to_cloud(d, m), std::runtime_error);
}

TEST_CASE("lift then project reproduces pixel coordinates") {
  Rng rng(5);
  DepthFrame d;
  d.height = 16;
  d.width = 16;
  d.fx = 24.0;
  d.fy = 22.0;
  d.cx = 8.0;
  d.cy = 7.5;
  d.depth.assign(256, 0.0);
  MaskFrame m{16, 16, std::vector<uint8_t>(256, 0)};
  for (int i = 0; i < 256; ++i) {
    if (rng.uniform() < 0.4) {
      d.depth[static_cast<size_t>(i)] = rng.uniform(0.5, 3.0);
      m.mask[static_cast<size_t>(i)] = 1;
    }
  }
  auto cloud = lift_depth_to_cloud(d, m);
  auto uv = project_cloud(cloud, d);
  size_t idx = 0;
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      if (!m.at(r, c) || d.depth[static_cast<size_t>(r) * 16 + c] <= 0)
        continue;
      CHECK(std::abs(uv[idx][0] - c) < 0.5);
      CHECK(std::abs(uv[idx][1] - r) < 0.5);
      ++idx;
    }
}

TEST_CASE("icp on identical clouds is identity") {
  Rng rng(6);
  auto cloud = random_cloud(rng, 80);
  auto res = trimmed_icp(cloud, cloud, {0.0, 50, 1e-8});
  CHECK(res.converged);
  CHECK(res.residual < 1e-12);
  CHECK(res.pose.rotation.angle_to(Quat::identity()) < 1e-9);
  CHECK(std::abs(res.pose.translation.x) < 1e-9);
}

TEST_CASE("icp recovers a small rigid motion exactly") {
  Rng rng(7);
  auto src = random_cloud(rng, 200);
  Pose truth{{0.05, 0.0, 0.0},
             Quat::from_axis_angle({0, 0, 1}, 10.0 * kDeg)};
  auto dst = apply_pose(src, truth);
  auto res = trimmed_icp(src, dst, {0.0, 50, 1e-12});
  CHECK(res.pose.rotation.angle_to(truth.rotation) < 0.1 * kDeg);
  CHECK(std::abs(res.pose.translation.x - 0.05) < 1e-6);
  CHECK(std::abs(res.pose.translation.y) < 1e-6);
  CHECK(std::abs(res.pose.translation.z) < 1e-6);
}

TEST_CASE("icp residual is non-increasing on clean data") {
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    Rng r = rng.fork(static_cast<uint64_t>(trial));
    auto src = random_cloud(r, 300);
    Pose truth{random_vec(r, 0.05),
               Quat::from_axis_angle(random_vec(r), r.uniform(0.0, 12.0 * kDeg))};
    auto dst = apply_pose(src, truth);
    auto res = trimmed_icp(src, dst, {0.0, 50, 0.0});
    for (size_t i = 1; i < res.residual_history.size(); ++i)
      CHECK(res.residual_history[i] <= res.residual_history[i - 1] + 1e-12);
  }
}

TEST_CASE("icp with outliers and trimming") {
  Rng rng(9);
  int ok = 0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    Rng r = rng.fork(static_cast<uint64_t>(trial) + 100);
    auto src = random_cloud(r, 300);
    Pose truth{random_vec(r, 0.03),
               Quat::from_axis_angle(random_vec(r), r.uniform(0.0, 10.0 * kDeg))};
    auto dst = apply_pose(src, truth);
    const size_t n_out = dst.points.size() / 5;
    for (size_t i = 0; i < n_out; ++i) {
      size_t j = static_cast<size_t>(r.next_below(dst.points.size()));
      dst.points[j] = {r.uniform(-2, 2), r.uniform(-2, 2), r.uniform(-2, 2)};
    }
    auto res = trimmed_icp(src, dst, {0.3, 50, 1e-10});
    const double extent = 2.0;
    if (res.pose.rotation.angle_to(truth.rotation) < 1.0 * kDeg &&
        (res.pose.translation - truth.translation).norm() < 1e-3 * extent)
      ++ok;
  }
  CHECK(ok >= trials * 9 / 10);
}

TEST_CASE("icp input validation") {
  PointCloud tiny;
  tiny.points = {{0, 0, 0}, {1, 0, 0}};
  PointCloud fine;
  fine.points = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0.2, 0.4, 1.0}};
  CHECK_THROWS_AS(trimmed_icp(tiny, fine, {}), std::invalid_argument);
  CHECK_THROWS_AS(trimmed_icp(fine, fine, {1.0, 50, 1e-8}),
                  std::invalid_argument);
}

TEST_CASE("icp flags degenerate collinear sets") {
  PointCloud line;
  for (int i = 0; i < 10; ++i)
    line.points.push_back({static_cast<double>(i), 0.0, 0.0});
  CHECK_THROWS_AS(trimmed_icp(line, line, {0.0, 50, 1e-8}),
                  std::runtime_error);
}

TEST_CASE("trajectory of constant clouds is all identity") {
  Rng rng(10);
  auto cloud = random_cloud(rng, 60);
  std::vector<PointCloud> seq(5, cloud);
  auto poses = estimate_object_trajectory(seq);
  REQUIRE(poses.size() == 5);
  for (const auto& p : poses) {
    CHECK(p.rotation.angle_to(Quat::identity()) < 1e-9);
    CHECK(p.translation.norm() < 1e-9);
  }
}

TEST_CASE("trajectory recovers chained per-frame deltas") {
  Rng rng(11);
  auto base = random_cloud(rng, 260);
  std::vector<Pose> truth{Pose::identity()};
  std::vector<PointCloud> seq{base};
  for (int k = 1; k < 6; ++k) {
    Pose delta{random_vec(rng, 0.02),
               Quat::from_axis_angle(random_vec(rng), rng.uniform(0.0, 5.0 * kDeg))};
    truth.push_back(delta.compose(truth.back()));
    seq.push_back(apply_pose(base, truth.back()));
  }
  auto poses = estimate_object_trajectory(seq, {0.0, 80, 1e-12});
  for (size_t k = 0; k < poses.size(); ++k) {
    CHECK(poses[k].rotation.angle_to(truth[k].rotation) < 0.05 * kDeg);
    CHECK((poses[k].translation - truth[k].translation).norm() < 1e-5);
  }
}

TEST_CASE("trajectory rejects a single cloud") {
  Rng rng(12);
  std::vector<PointCloud> seq{random_cloud(rng, 10)};
  CHECK_THROWS_AS(estimate_object_trajectory(seq), std::invalid_argument);
}

TEST_CASE("cloud and trajectory text round trips") {
  Rng rng(13);
  auto cloud = random_cloud(rng, 30);
  auto back = cloud_from_text(cloud_to_text(cloud));
  REQUIRE(back.points.size() == cloud.points.size());
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    CHECK(back.points[i].x == cloud.points[i].x);
    CHECK(back.points[i].y == cloud.points[i].y);
    CHECK(back.points[i].z == cloud.points[i].z);
  }

  std::vector<Pose> poses;
  for (int i = 0; i < 4; ++i)
    poses.push_back({random_vec(rng), random_rotation(rng)});
  auto poses2 = trajectory_from_text(trajectory_to_text(poses));
  REQUIRE(poses2.size() == poses.size());
  for (size_t i = 0; i < poses.size(); ++i) {
    CHECK(poses2[i].translation.x == poses[i].translation.x);
    CHECK(poses2[i].rotation.w == doctest::Approx(poses[i].rotation.w).epsilon(1e-15));
  }

  CHECK_THROWS_AS(cloud_from_text("1 2\n"), std::runtime_error);
}
