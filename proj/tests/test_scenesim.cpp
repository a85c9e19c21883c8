#include <cmath>
#include <limits>

#include <doctest.h>

#include "stprompt/scenesim.hpp"
#include "support.hpp"

using namespace stp;

namespace {

SceneSpec one_object_spec() {
    SceneSpec s;
    s.seed = 5;
    s.views = 2;
    s.frames = 4;
    ObjectSpec o;
    o.color_name = "blue";
    o.color = palette_colors()[static_cast<std::size_t>(palette_index("blue"))];
    o.radius = 0.35;
    o.points = 900;
    o.trajectory.origin = {-0.6, -0.3, 0.6};
    o.trajectory.velocity = {0.3, 0.2, 0.0};
    s.objects = {o};
    return s;
}

// Coarse image so every splat covers exactly the pixel holding its centre.
SceneSpec single_pixel_splats() {
    SceneSpec s = one_object_spec();
    s.height = s.width = 16;
    s.patch = 4;
    s.focal = 16.0;
    s.background.extent = 2.0;
    return s;
}

}  // namespace

TEST_CASE("generation is deterministic") {
    const Scene a = generate(one_object_spec());
    const Scene b = generate(one_object_spec());
    REQUIRE(a.frames.size() == b.frames.size());
    for (std::size_t i = 0; i < a.frames.size(); ++i) {
        CHECK(a.frames[i].pixels == b.frames[i].pixels);
        CHECK(a.frames[i].depth == b.frames[i].depth);
    }
    CHECK(a.truth.labels == b.truth.labels);
    CHECK(a.truth.flow == b.truth.flow);
    CHECK(a.id == b.id);
}

TEST_CASE("a scene without objects is static everywhere") {
    SceneSpec s = one_object_spec();
    s.objects.clear();
    const Scene scene = generate(s);
    for (PatchLabel l : scene.truth.labels) CHECK(l != PatchLabel::dynamic);
    for (double f : scene.truth.flow) CHECK(f == 0.0);
    CHECK(emit_instructions(scene.truth, all_templates(), scene.id).pairs.empty());
}

TEST_CASE("linear centroid displacement is speed times duration") {
    const Scene scene = generate(one_object_spec());
    const auto& path = scene.truth.centroids[0];
    double d = 0.0;
    for (int i = 0; i < 3; ++i) d += (path.back()[i] - path.front()[i]) * (path.back()[i] - path.front()[i]);
    CHECK(std::sqrt(d) == doctest::Approx(std::sqrt(0.13) * 3.0).epsilon(1e-14));
}

TEST_CASE("depth is the nearest splatted point per pixel") {
    const SceneSpec spec = single_pixel_splats();
    const Scene scene = generate(spec);
    const auto& tr = scene.truth;
    for (const auto& f : scene.frames) {
        std::vector<double> best(f.height * f.width, std::numeric_limits<double>::infinity());
        auto add = [&](const Vec3& x) {
            const Vec3 p = stp::testing::project_by_hand(f.camera, x);
            if (!(p[2] > 1e-6) || p[0] < 0 || p[1] < 0) return;
            const auto c = static_cast<std::size_t>(p[0]), r = static_cast<std::size_t>(p[1]);
            if (c >= f.width || r >= f.height) return;
            best[r * f.width + c] = std::min(best[r * f.width + c], p[2]);
        };
        for (const auto& x : tr.background_points) add(x);
        for (std::size_t o = 0; o < tr.object_offsets.size(); ++o) {
            if (!tr.present(o, f.time_index)) continue;
            for (std::size_t k = 0; k < tr.object_offsets[o].size(); ++k)
                add(tr.point_position(static_cast<int>(o), static_cast<int>(k), f.time_index));
        }
        for (std::size_t i = 0; i < best.size(); ++i) {
            if (std::isinf(best[i])) {
                CHECK(std::isinf(f.depth[i]));
            } else {
                CHECK(std::abs(f.depth[i] - best[i]) < 1e-12 * best[i]);
            }
        }
    }
}

TEST_CASE("labels follow majority ownership and flow vanishes on static patches") {
    const Scene scene = generate(one_object_spec());
    const auto& tr = scene.truth;
    const auto& L = tr.layout;
    const std::size_t P = scene.spec.patch, W = scene.spec.width;
    for (std::size_t v = 0; v < L.views; ++v)
        for (std::size_t t = 0; t < L.frames; ++t)
            for (std::size_t r = 0; r < L.rows; ++r)
                for (std::size_t c = 0; c < L.cols; ++c) {
                    const auto& own = tr.owner_object[L.frame_index(v, t)];
                    std::size_t rendered = 0, moving = 0, objects = 0;
                    for (std::size_t y = r * P; y < (r + 1) * P; ++y)
                        for (std::size_t x = c * P; x < (c + 1) * P; ++x) {
                            const int o = own[y * W + x];
                            if (o == -2) continue;
                            ++rendered;
                            if (o >= 0) {
                                ++objects;
                                if (tr.moving(static_cast<std::size_t>(o), static_cast<int>(t))) ++moving;
                            }
                        }
                    const std::size_t n = L.token(v, t, r, c);
                    const PatchLabel expect = rendered == 0        ? PatchLabel::empty
                                              : 2 * moving > rendered ? PatchLabel::dynamic
                                                                      : PatchLabel::static_bg;
                    CHECK(tr.labels[n] == expect);
                    if (objects == 0) CHECK(std::abs(tr.flow[n]) < 1e-12);
                }
}

TEST_CASE("instruction pairs match an independent enumeration") {
    SceneSpec s = one_object_spec();
    ObjectSpec late = s.objects[0];
    late.color_name = "green";
    late.color = palette_colors()[static_cast<std::size_t>(palette_index("green"))];
    late.trajectory.origin = {0.5, 0.4, 0.7};
    late.trajectory.velocity = {-0.1, 0.0, 0.0};
    late.start_frame = 1;
    s.objects.push_back(late);
    const Scene scene = generate(s);
    const auto& tr = scene.truth;
    const auto& L = tr.layout;
    auto seen = [&](std::size_t o, std::size_t t) {
        for (std::size_t v = 0; v < L.views; ++v)
            for (int owner : tr.owner_object[L.frame_index(v, t)])
                if (owner == static_cast<int>(o)) return true;
        return false;
    };
    std::size_t bindings = 0, appear = 0;
    for (std::size_t o = 0; o < s.objects.size(); ++o) {
        for (std::size_t t = 0; t < L.frames; ++t)
            if (static_cast<int>(t) >= s.objects[o].start_frame && seen(o, t)) ++bindings;
        if (seen(o, static_cast<std::size_t>(s.objects[o].start_frame))) ++appear;
    }
    const InstructionSet set = emit_instructions(tr, all_templates(), scene.id);
    CHECK(set.pairs.size() == 3 * bindings + appear);
    CHECK(emit_instructions(tr, {Template::qa}, scene.id).pairs.size() == bindings);

    for (const auto& p : set.pairs) {
        if (p.templ != Template::qa) continue;
        const Vec3 q = tr.aabb.normalize(tr.centroids[static_cast<std::size_t>(p.object)][static_cast<std::size_t>(p.frame)]);
        CHECK(p.answer == "<loc " + format_number(q[0]) + " " + format_number(q[1]) + " " + format_number(q[2]) + ">");
    }
}

TEST_CASE("scene spec validation") {
    SceneSpec s = one_object_spec();
    s.objects[0].trajectory.velocity = {2.0, 0.0, 0.0};
    CHECK_THROWS(s.validate());
    s = one_object_spec();
    s.views = 0;
    CHECK_THROWS(s.validate());
}

TEST_CASE("scene files round-trip") {
    const Scene scene = generate(one_object_spec());
    const Scene back = scene_from_json(scene_to_json(scene));
    REQUIRE(back.frames.size() == scene.frames.size());
    for (std::size_t i = 0; i < scene.frames.size(); ++i) {
        CHECK(back.frames[i].pixels == scene.frames[i].pixels);
        CHECK(back.frames[i].depth == scene.frames[i].depth);
        CHECK(back.frames[i].camera.K == scene.frames[i].camera.K);
        CHECK(back.frames[i].camera.R == scene.frames[i].camera.R);
    }
    CHECK(back.truth.labels == scene.truth.labels);
    const std::string jsonl = instructions_to_jsonl(emit_instructions(scene.truth, all_templates(), scene.id).pairs);
    CHECK(jsonl.find("\"task\":\"qa\"") != std::string::npos);
}
