#include <cmath>

#include <doctest.h>

#include "stprompt/geometry.hpp"
#include "support.hpp"

using namespace stp;
using stp::testing::project_by_hand;
using stp::testing::random_camera;

TEST_CASE("unproject on hand-checkable cameras") {
    Camera c;
    Vec3 p = unproject(c, 0.3, 0.7, 1.0);
    CHECK(p[0] == doctest::Approx(0.3));
    CHECK(p[1] == doctest::Approx(0.7));
    CHECK(p[2] == doctest::Approx(1.0));
    c.T = {1.0, 0.0, 0.0};
    p = unproject(c, 0.0, 0.0, 2.0);
    CHECK(p[0] == doctest::Approx(-1.0));
    CHECK(p[1] == doctest::Approx(0.0));
    CHECK(p[2] == doctest::Approx(2.0));
    CHECK_THROWS_AS(unproject(c, 0.0, 0.0, 0.0), GeometryError);
}

TEST_CASE("unproject then project recovers pixel and depth") {
    Rng rng(11);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const Camera cam = random_camera(rng);
        cam.validate();
        const double u = rng.uniform(0.0, 128.0), v = rng.uniform(0.0, 128.0), d = rng.uniform(0.1, 20.0);
        const Vec3 x = unproject(cam, u, v, d);
        const Vec3 ref = project_by_hand(cam, x);
        const Projection pr = project(cam, x);
        worst = std::max({worst, std::abs(ref[0] - u), std::abs(ref[1] - v), std::abs(ref[2] - d),
                          std::abs(pr.u - u), std::abs(pr.v - v), std::abs(pr.depth - d)});
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("camera validation") {
    Camera c;
    CHECK_NOTHROW(c.validate());
    c.R(0, 0) = 2.0;
    CHECK_THROWS_AS(c.validate(), GeometryError);
    Camera reflect;
    reflect.R(2, 2) = -1.0;
    CHECK_THROWS_AS(reflect.validate(), GeometryError);
    Camera k;
    k.K(1, 1) = 0.0;
    CHECK_THROWS_AS(k.validate(), GeometryError);
    Camera look = Camera::look_at({3.0, 0.0, 2.0}, {0.0, 0.0, 0.0}, 50.0, 32.0, 32.0);
    CHECK_NOTHROW(look.validate());
    const Projection centre = project(look, {0.0, 0.0, 0.0});
    CHECK(centre.u == doctest::Approx(32.0));
    CHECK(centre.v == doctest::Approx(32.0));
    CHECK(centre.depth == doctest::Approx(std::sqrt(13.0)));
}

TEST_CASE("aabb normalisation") {
    Aabb box{{-1.0, 0.0, 2.0}, {3.0, 2.0, 4.0}};
    const Vec3 c = box.normalize(box.center());
    for (double v : c) CHECK(v == doctest::Approx(0.0));
    const Vec3 lo = box.normalize(box.lo);
    for (double v : lo) CHECK(v == doctest::Approx(-1.0));
    const Vec3 q{0.25, -0.5, 0.75};
    const Vec3 back = box.normalize(box.denormalize(q));
    for (int i = 0; i < 3; ++i) CHECK(back[i] == doctest::Approx(q[i]));
    CHECK(box.normalize({100.0, 0.0, 0.0})[0] == 1.0);
}

namespace {

CameraFrame plane_frame(double depth, std::size_t size) {
    CameraFrame f;
    f.camera.K = Matrix{{10.0, 0.0, size / 2.0}, {0.0, 10.0, size / 2.0}, {0.0, 0.0, 1.0}};
    f.height = f.width = size;
    f.pixels.assign(size * size * 3, 0.5);
    f.depth.assign(size * size, depth);
    f.time_value = 0.25;
    return f;
}

CameraFrame textured(std::size_t size, int shift) {
    CameraFrame f;
    f.height = f.width = size;
    f.pixels.resize(size * size * 3);
    f.depth.assign(size * size, 1.0);
    for (std::size_t r = 0; r < size; ++r)
        for (std::size_t c = 0; c < size; ++c) {
            const double x = static_cast<double>(c) - shift;
            const double v = 0.5 + 0.25 * std::sin(0.9 * x + 0.3 * r) + 0.2 * std::cos(0.47 * x * r / 8.0);
            for (int ch = 0; ch < 3; ++ch) f.pixels[(r * size + c) * 3 + ch] = v;
        }
    return f;
}

}  // namespace

TEST_CASE("coordinate grid on a constant-depth plane") {
    const CameraFrame f = plane_frame(2.0, 16);
    const Aabb box{{-4.0, -4.0, -4.0}, {4.0, 4.0, 4.0}};
    const Coord4DGrid g = build_coord_grid({f}, 8, box);
    REQUIRE(g.coords.rows() == 4);
    for (std::size_t n = 0; n < 4; ++n) {
        CHECK(g.coords(n, 2) == doctest::Approx(0.5));
        CHECK(g.coords(n, 3) == doctest::Approx(0.25));
        CHECK(g.valid[n]);
    }
    CameraFrame empty = f;
    empty.depth.assign(empty.depth.size(), std::numeric_limits<double>::infinity());
    const Coord4DGrid e = build_coord_grid({empty}, 8, box);
    CHECK_FALSE(e.valid[0]);
    CHECK(e.coords(0, 2) == kBackgroundSentinel[2]);
}

TEST_CASE("patch median depth ignores unrendered pixels") {
    CameraFrame f = plane_frame(1.0, 4);
    f.depth = {1, 2, 9, 9, 3, std::numeric_limits<double>::infinity(), 9, 9, 9, 9, 9, 9, 9, 9, 9, 9};
    CHECK(patch_median_depth(f, 0, 0, 2) == doctest::Approx(2.0));
}

TEST_CASE("block matching recovers a constructed shift") {
    const CameraFrame a = textured(32, 0);
    CHECK(block_matching_flow(a, a, 8, 8, 3) == std::vector<double>(16, 0.0));
    const CameraFrame b = textured(32, 2);
    const auto flow = block_matching_flow(a, b, 8, 8, 3);
    for (std::size_t r = 1; r < 3; ++r)
        for (std::size_t c = 1; c < 3; ++c) CHECK(flow[r * 4 + c] == doctest::Approx(2.0));
    for (double v : flow) CHECK(v <= 3.0 * std::sqrt(2.0) + 1e-12);
}
