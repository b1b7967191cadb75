#include <doctest.h>

#include <cstring>

#include "dgpose/data/preprocess.hpp"
#include "dgpose/inference.hpp"
#include "toy_fixture.hpp"

using namespace dgpose;
using namespace dgpose::infer;

namespace {

constexpr double kTiny = 1.0 / 32;

Model make(ModelKind kind, std::uint64_t seed) {
    Model m = Model::create(kind, {kTiny, kTiny, kTiny, kTiny, kTiny}, seed);
    m.stats = testing::toy().train.stats;
    return m;
}

const Model& conditional() {
    static const Model m = make(ModelKind::Conditional, 1);
    return m;
}

const Model& semi() {
    static const Model m = make(ModelKind::Semi, 2);
    return m;
}

Tensor<float> images(std::initializer_list<int> idx) {
    const auto& d = testing::toy().train;
    const auto per = d.images.shape().per_sample();
    Tensor<float> out(Shape{static_cast<int>(idx.size()), 3, 64, 64});
    int r = 0;
    for (int i : idx) std::copy_n(d.images.sample(i), per, out.sample(r++));
    return out;
}

std::vector<pose::PoseVector> poses(std::initializer_list<int> idx) {
    std::vector<pose::PoseVector> out;
    for (int i : idx) out.push_back(*testing::toy().train.poses[i]);
    return out;
}

bool same(const Tensor<float>& a, const Tensor<float>& b) {
    return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

Tensor<float> row(const Tensor<float>& t, int i) { return t.slice(i, i + 1); }

}  // namespace

TEST_CASE("mean-mode reconstruction is deterministic") {
    const auto x = images({0, 1});
    const auto y = render_poses(poses({0, 1}), conditional().table);
    CHECK(same(reconstruct(conditional(), x, &y), reconstruct(conditional(), x, &y)));
    CHECK(same(reconstruct(semi(), x), reconstruct(semi(), x)));
    const auto out = reconstruct(semi(), x);
    CHECK(out.shape() == Shape{2, 3, 64, 64});
}

TEST_CASE("sampled reconstruction depends on the seed only") {
    const auto x = images({0});
    const auto a = reconstruct(semi(), x, nullptr, {true, 5});
    CHECK(same(a, reconstruct(semi(), x, nullptr, {true, 5})));
    CHECK_FALSE(same(a, reconstruct(semi(), x, nullptr, {true, 6})));
}

TEST_CASE("conditional sampling: one pose, two appearance draws") {
    const auto p = poses({3});
    const auto s = sample(conditional(), p, 2, 9);
    REQUIRE(s.shape().n == 2);
    CHECK_FALSE(same(row(s, 0), row(s, 1)));
    CHECK(same(s, sample(conditional(), p, 2, 9)));
    // the same heatmap stack conditions both rows
    const auto y = render_poses(p, conditional().table);
    CHECK(same(sample_from_heatmaps(conditional(), y, 2, 9), s));
}

TEST_CASE("sampling rows are pose-major") {
    const auto p = poses({3, 4});
    const auto s = sample(conditional(), p, 3, 1);
    REQUIRE(s.shape().n == 6);
    const auto first = sample(conditional(), {p[0]}, 3, 1);
    // rows 0..2 belong to the first pose
    CHECK(first.shape().n == 3);
    const auto s_semi = sample(semi(), {}, 4, 2);
    CHECK(s_semi.shape().n == 4);
    CHECK_THROWS_AS(sample(conditional(), p, 0, 1), InferenceError);
}

TEST_CASE("direct transfer to the source pose equals reconstruction") {
    const auto x = images({5});
    const auto y = render_poses(poses({5}), conditional().table);
    CHECK(same(direct_pose_transfer(conditional(), x, y, y), reconstruct(conditional(), x, &y)));
    CHECK(same(direct_pose_transfer(conditional(), x, y, y, TransferConditioner::Target),
               reconstruct(conditional(), x, &y)));
    const auto y2 = render_poses(poses({6}), conditional().table);
    CHECK_FALSE(same(direct_pose_transfer(conditional(), x, y, y2), reconstruct(conditional(), x, &y)));
    CHECK_THROWS_AS(direct_pose_transfer(semi(), x, y, y2), InferenceError);
}

TEST_CASE("indirect transfer: identity and role swap") {
    const auto a = images({7}), b = images({8});
    CHECK(same(indirect_pose_transfer(semi(), a, a), reconstruct(semi(), a)));

    const auto ea = encode(semi(), a), eb = encode(semi(), b);
    const auto ab = indirect_pose_transfer(semi(), a, b);
    const auto ba = indirect_pose_transfer(semi(), b, a);
    CHECK(same(ab, decode(semi(), eb.mu_z, &ea.mu_y, nullptr)));
    CHECK(same(ba, decode(semi(), ea.mu_z, &eb.mu_y, nullptr)));
    CHECK_FALSE(same(ab, ba));
    CHECK_THROWS_AS(indirect_pose_transfer(conditional(), a, b), InferenceError);
}

TEST_CASE("pose estimation de-standardizes the pose mean") {
    const auto x = images({1, 2});
    const auto est = estimate_pose(semi(), x);
    REQUIRE(est.size() == 2);
    const auto e = encode(semi(), x);
    const auto back = data::destandardize_pose(e.mu_y.sample(1), semi().stats).joints();
    for (int j = 0; j < pose::kJoints; ++j) {
        CHECK(est[1].joints[j].x == doctest::Approx(back.joints[j].x));
        CHECK(est[1].joints[j].y == doctest::Approx(back.joints[j].y));
    }
    CHECK_THROWS_AS(estimate_pose(conditional(), x), InferenceError);
}

TEST_CASE("encoder contracts") {
    const auto x = images({0});
    CHECK_THROWS_AS(encode(conditional(), x), InferenceError);
    Tensor<float> small(Shape{1, 3, 32, 32});
    CHECK_THROWS(encode(semi(), small));
    const auto e = encode(semi(), x);
    CHECK(e.mu_z.shape() == Shape{1, 100, 1, 1});
    CHECK(e.mu_y.shape() == Shape{1, 48, 1, 1});
    const auto m = map_pose(semi(), e.mu_y);
    CHECK(m.shape() == Shape{1, 24, 64, 64});
}

TEST_CASE("interpolation endpoints") {
    Tensor<float> z0(Shape{1, 100, 1, 1}, 0.0f), z1(Shape{1, 100, 1, 1}, 1.0f);
    const auto path = interpolate(z0, z1, 5);
    REQUIRE(path.shape().n == 5);
    CHECK(path.at(0, 7, 0, 0) == 0.0f);
    CHECK(path.at(2, 7, 0, 0) == doctest::Approx(0.5f));
    CHECK(path.at(4, 7, 0, 0) == 1.0f);
    CHECK_THROWS(interpolate(z0, z1, 1));
}

TEST_CASE("scaling poses about the body centre") {
    const auto p = poses({0})[0];
    const auto same_pose = scale_pose(p, 1.0);
    for (int j = 0; j < pose::kJoints; ++j) {
        CHECK(same_pose.joints[j].x == doctest::Approx(p.joints[j].x).epsilon(1e-12));
        CHECK(same_pose.joints[j].y == doctest::Approx(p.joints[j].y).epsilon(1e-12));
    }
    const auto c = body_center(p);
    const auto s = scale_pose(p, 0.8);
    for (int j = 0; j < pose::kJoints; ++j) {
        CHECK(s.joints[j].x == doctest::Approx(c.x + 0.8 * (p.joints[j].x - c.x)));
        CHECK(s.joints[j].y == doctest::Approx(c.y + 0.8 * (p.joints[j].y - c.y)));
    }
    CHECK_THROWS(scale_pose(p, 0.0));
    CHECK_THROWS(scale_pose(p, -1.0));
}

TEST_CASE("translating one joint or the whole pose") {
    const auto p = poses({0})[0];
    const auto t = translate_joint(p, pose::LWrist, {0.1, -0.05});
    for (int j = 0; j < pose::kJoints; ++j) {
        if (j == pose::LWrist) {
            CHECK(t.joints[j].x == doctest::Approx(p.joints[j].x + 0.1));
        } else {
            CHECK(t.joints[j] == p.joints[j]);
        }
    }
    const auto all = translate_pose(p, {0.02, 0.03});
    CHECK(all.joints[4].y == doctest::Approx(p.joints[4].y + 0.03));
    CHECK_THROWS(translate_joint(p, 14, {0, 0}));
}

TEST_CASE("heatmap edits: suppression and union") {
    const auto a = render_poses(poses({0}), {});
    const auto b = render_poses(poses({1}), {});
    const auto u = union_stacks(a, b);
    for (std::size_t i = 0; i < u.size(); ++i) CHECK(u[i] == std::max(a[i], b[i]));
    const auto s = suppress_parts(a, {0, 23});
    const std::size_t plane = 64 * 64;
    for (std::size_t i = 0; i < plane; ++i) {
        CHECK(s[i] == 0.0f);
        CHECK(s[23 * plane + i] == 0.0f);
        CHECK(s[5 * plane + i] == a[5 * plane + i]);
    }
    CHECK_THROWS(suppress_parts(a, {24}));
    CHECK_THROWS(union_stacks(a, render_poses(poses({0, 1}), {})));
}
