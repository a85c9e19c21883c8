#include "stprompt/scenesim.hpp"


#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace stp {

namespace {

constexpr int kOwnerNone = -2;
constexpr int kOwnerBackground = -1;

Vec3 add(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 scaled(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

/// Fibonacci lattice on a sphere of the given radius.
std::vector<Vec3> sphere_points(std::size_t n, double radius) {
    std::vector<Vec3> pts;
    pts.reserve(n);
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (std::size_t i = 0; i < n; ++i) {
        const double y = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
        const double th = golden * static_cast<double>(i);
        pts.push_back({radius * r * std::cos(th), radius * r * std::sin(th), radius * y});
    }
    return pts;
}

struct RenderTarget {
    std::vector<double> pixels;
    std::vector<double> depth;
    std::vector<int> owner_object;
    std::vector<int> owner_point;
};

void splat(RenderTarget& rt, const CameraFrame& frame, const Vec3& world, double spacing,
           const Vec3& color, int object, int point) {
    const Projection p = project(frame.camera, world);
    if (!(p.depth > 1e-6)) return;
    const double focal = frame.camera.K(0, 0);
    const double half = std::max(0.5, 0.6 * focal * spacing / p.depth);
    const long H = static_cast<long>(frame.height);
    const long W = static_cast<long>(frame.width);
    const long c0 = std::max(0L, static_cast<long>(std::ceil(p.u - half - 0.5)));
    const long c1 = std::min(W - 1, static_cast<long>(std::floor(p.u + half - 0.5)));
    const long r0 = std::max(0L, static_cast<long>(std::ceil(p.v - half - 0.5)));
    const long r1 = std::min(H - 1, static_cast<long>(std::floor(p.v + half - 0.5)));
    for (long r = r0; r <= r1; ++r) {
        for (long c = c0; c <= c1; ++c) {
            const std::size_t idx = static_cast<std::size_t>(r * W + c);
            if (p.depth < rt.depth[idx]) {
                rt.depth[idx] = p.depth;
                rt.owner_object[idx] = object;
                rt.owner_point[idx] = point;
                for (std::size_t ch = 0; ch < frame.channels; ++ch) {
                    rt.pixels[idx * frame.channels + ch] = color[std::min<std::size_t>(ch, 2)];
                }
            }
        }
    }
}

bool inside(const Aabb& box, const Vec3& p, double margin) {
    for (int i = 0; i < 3; ++i)
        if (p[i] < box.lo[i] + margin || p[i] > box.hi[i] - margin) return false;
    return true;
}

}  // namespace

const char* to_string(TrajectoryKind kind) {
    switch (kind) {
        case TrajectoryKind::linear: return "linear";
        case TrajectoryKind::circular: return "circular";
        case TrajectoryKind::sinusoidal: return "sinusoidal";
    }
    return "linear";
}

TrajectoryKind trajectory_from_string(const std::string& name) {
    if (name == "linear") return TrajectoryKind::linear;
    if (name == "circular") return TrajectoryKind::circular;
    if (name == "sinusoidal") return TrajectoryKind::sinusoidal;
    throw std::invalid_argument("unknown trajectory kind: " + name);
}

Vec3 Trajectory::position(double frame) const {
    switch (kind) {
        case TrajectoryKind::linear:
            return add(origin, scaled(velocity, frame));
        case TrajectoryKind::circular: {
            const double a = omega * frame + phase;
            return {origin[0] + radius * std::cos(a), origin[1] + radius * std::sin(a), origin[2]};
        }
        case TrajectoryKind::sinusoidal:
            return add(add(origin, scaled(velocity, frame)),
                       scaled(axis, amplitude * std::sin(omega * frame + phase)));
    }
    return origin;
}

void SceneSpec::validate() const {
    if (views < 1 || frames < 1) throw std::invalid_argument("scene needs at least one view and frame");
    if (patch == 0 || height % patch || width % patch) {
        throw std::invalid_argument("image size must be divisible by the patch size");
    }
    if (!aabb.valid()) throw std::invalid_argument("scene AABB is empty");
    for (const auto& o : objects) {
        const int last = static_cast<int>(frames) - 1;
        for (int t = std::clamp(o.start_frame, 0, last); t <= std::clamp(o.end_frame, 0, last); ++t) {
            if (!inside(aabb, o.trajectory.position(static_cast<double>(t)), 0.0)) {
                throw std::invalid_argument("object trajectory leaves the scene AABB");
            }
        }
    }
}

std::vector<Camera> SceneSpec::cameras() const {
    std::vector<Camera> cams;
    for (std::size_t v = 0; v < views; ++v) {
        const double a = 2.0 * std::numbers::pi * static_cast<double>(v) / static_cast<double>(views) + 0.3;
        const Vec3 eye{ring_radius * std::cos(a), ring_radius * std::sin(a), ring_height};
        cams.push_back(Camera::look_at(eye, look_at, focal, static_cast<double>(width) / 2.0,
                                       static_cast<double>(height) / 2.0));
    }
    return cams;
}

bool SceneTruth::present(std::size_t object, int frame) const {
    const auto [s, e] = presence.at(object);
    return frame >= s && frame <= e;
}

bool SceneTruth::moving(std::size_t object, int frame) const {
    if (!present(object, frame)) return false;
    const Trajectory& tr = trajectories.at(object);
    const Vec3 a = tr.position(frame);
    const Vec3 b = tr.position(frame + 1);
    const Vec3 c = tr.position(frame - 1);
    auto dist = [](const Vec3& x, const Vec3& y) {
        return std::abs(x[0] - y[0]) + std::abs(x[1] - y[1]) + std::abs(x[2] - y[2]);
    };
    return dist(a, b) > 0.0 || dist(a, c) > 0.0;
}

Vec3 SceneTruth::point_position(int object, int point, int frame) const {
    if (object < 0) return background_points.at(static_cast<std::size_t>(point));
    const auto o = static_cast<std::size_t>(object);
    return add(trajectories.at(o).position(frame), object_offsets.at(o).at(static_cast<std::size_t>(point)));
}

Vec3 SceneTruth::centroid_normalized(std::size_t object, int frame) const {
    return aabb.normalize(centroids.at(object).at(static_cast<std::size_t>(frame)));
}

std::size_t SceneTruth::visible_pixels(std::size_t object, std::size_t view, std::size_t time) const {
    const auto& own = owner_object.at(layout.frame_index(view, time));
    return static_cast<std::size_t>(std::count(own.begin(), own.end(), static_cast<int>(object)));
}

std::vector<double> analytic_flow(const SceneTruth& truth, const CameraFrame& frame_a,
                                  const CameraFrame& frame_b) {
    if (frame_a.view_id != frame_b.view_id) throw std::invalid_argument("analytic_flow: frames from different views");
    const std::size_t fi = truth.layout.frame_index(frame_a.view_id, static_cast<std::size_t>(frame_a.time_index));
    const auto& owner_o = truth.owner_object.at(fi);
    const auto& owner_p = truth.owner_point.at(fi);
    const std::size_t patch = truth.patch;
    const std::size_t rows = frame_a.height / patch;
    const std::size_t cols = frame_a.width / patch;
    std::vector<double> out(rows * cols, 0.0);
    for (std::size_t pr = 0; pr < rows; ++pr) {
        for (std::size_t pc = 0; pc < cols; ++pc) {
            double sum = 0.0;
            std::size_t n = 0;
            for (std::size_t r = pr * patch; r < (pr + 1) * patch; ++r) {
                for (std::size_t c = pc * patch; c < (pc + 1) * patch; ++c) {
                    const std::size_t idx = r * frame_a.width + c;
                    const int obj = owner_o[idx];
                    if (obj == kOwnerNone) continue;
                    ++n;
                    if (obj == kOwnerBackground) continue;
                    const Vec3 pa = truth.point_position(obj, owner_p[idx], frame_a.time_index);
                    const Vec3 pb = truth.point_position(obj, owner_p[idx], frame_b.time_index);
                    const Projection qa = project(frame_a.camera, pa);
                    const Projection qb = project(frame_a.camera, pb);
                    sum += std::hypot(qb.u - qa.u, qb.v - qa.v);
                }
            }
            out[pr * cols + pc] = n ? sum / static_cast<double>(n) : 0.0;
        }
    }
    return out;
}

Scene generate(const SceneSpec& spec) {
    spec.validate();
    Scene scene;
    scene.spec = spec;
    scene.id = "scene-" + std::to_string(spec.seed);
    scene.cameras = spec.cameras();
    Rng rng(spec.seed);
    Rng bg_rng = rng.split("background");
    Rng obj_rng = rng.split("objects");

    SceneTruth& truth = scene.truth;
    truth.patch = spec.patch;
    truth.aabb = spec.aabb;
    truth.layout = {spec.views, spec.frames, spec.height / spec.patch, spec.width / spec.patch};

    const auto& bg = spec.background;
    std::vector<Vec3> bg_colors;
    const long steps = static_cast<long>(std::floor(2.0 * bg.extent / bg.spacing)) + 1;
    for (long i = 0; i < steps; ++i) {
        for (long j = 0; j < steps; ++j) {
            const double x = -bg.extent + static_cast<double>(i) * bg.spacing;
            const double y = -bg.extent + static_cast<double>(j) * bg.spacing;
            truth.background_points.push_back({x, y, 0.0});
            const long tile = static_cast<long>(std::floor(x / bg.checker)) + static_cast<long>(std::floor(y / bg.checker));
            const double tone = (tile % 2 == 0) ? bg.contrast : -bg.contrast;
            Vec3 col;
            for (int ch = 0; ch < 3; ++ch) col[ch] = clamp01(bg.color[ch] + tone + bg_rng.uniform(-bg.noise, bg.noise));
            bg_colors.push_back(col);
        }
    }

    std::vector<std::vector<Vec3>> obj_colors;
    std::vector<double> obj_spacing;
    for (const auto& o : spec.objects) {
        truth.object_offsets.push_back(sphere_points(o.points, o.radius));
        truth.trajectories.push_back(o.trajectory);
        truth.object_colors.push_back(o.color_name);
        const int last = static_cast<int>(spec.frames) - 1;
        truth.presence.emplace_back(std::clamp(o.start_frame, 0, last), std::clamp(o.end_frame, 0, last));
        std::vector<Vec3> cols;
        for (std::size_t k = 0; k < o.points; ++k) {
            Vec3 col;
            for (int ch = 0; ch < 3; ++ch)
                col[ch] = clamp01(o.color[ch] + obj_rng.uniform(-spec.object_noise, spec.object_noise));
            cols.push_back(col);
        }
        obj_colors.push_back(std::move(cols));
        obj_spacing.push_back(std::sqrt(4.0 * std::numbers::pi * o.radius * o.radius / static_cast<double>(o.points)));
        std::vector<Vec3> path;
        for (std::size_t t = 0; t < spec.frames; ++t) path.push_back(o.trajectory.position(static_cast<double>(t)));
        truth.centroids.push_back(std::move(path));
    }

    const std::size_t npix = spec.height * spec.width;
    for (std::size_t v = 0; v < spec.views; ++v) {
        for (std::size_t t = 0; t < spec.frames; ++t) {
            CameraFrame f;
            f.camera = scene.cameras[v];
            f.height = spec.height;
            f.width = spec.width;
            f.channels = spec.channels;
            f.view_id = v;
            f.time_index = static_cast<int>(t);
            f.time_value = frame_time_value(static_cast<int>(t), spec.frames);
            RenderTarget rt{std::vector<double>(npix * spec.channels, 0.0),
                            std::vector<double>(npix, std::numeric_limits<double>::infinity()),
                            std::vector<int>(npix, kOwnerNone), std::vector<int>(npix, 0)};
            for (std::size_t k = 0; k < truth.background_points.size(); ++k) {
                splat(rt, f, truth.background_points[k], bg.spacing, bg_colors[k], kOwnerBackground,
                      static_cast<int>(k));
            }
            for (std::size_t o = 0; o < spec.objects.size(); ++o) {
                if (!truth.present(o, static_cast<int>(t))) continue;
                const Vec3 c = truth.centroids[o][t];
                for (std::size_t k = 0; k < truth.object_offsets[o].size(); ++k) {
                    splat(rt, f, add(c, truth.object_offsets[o][k]), obj_spacing[o], obj_colors[o][k],
                          static_cast<int>(o), static_cast<int>(k));
                }
            }
            f.pixels = std::move(rt.pixels);
            f.depth = std::move(rt.depth);
            truth.owner_object.push_back(std::move(rt.owner_object));
            truth.owner_point.push_back(std::move(rt.owner_point));
            scene.frames.push_back(std::move(f));
        }
    }

    // Labels by majority ownership of rendered pixels.
    const auto& L = truth.layout;
    truth.labels.assign(L.token_count(), PatchLabel::empty);
    truth.token_object.assign(L.token_count(), -1);
    for (std::size_t v = 0; v < L.views; ++v) {
        for (std::size_t t = 0; t < L.frames; ++t) {
            const auto& own = truth.owner_object[L.frame_index(v, t)];
            for (std::size_t pr = 0; pr < L.rows; ++pr) {
                for (std::size_t pc = 0; pc < L.cols; ++pc) {
                    std::size_t rendered = 0, moving = 0;
                    std::vector<std::size_t> per_object(spec.objects.size(), 0);
                    for (std::size_t r = pr * spec.patch; r < (pr + 1) * spec.patch; ++r) {
                        for (std::size_t c = pc * spec.patch; c < (pc + 1) * spec.patch; ++c) {
                            const int o = own[r * spec.width + c];
                            if (o == kOwnerNone) continue;
                            ++rendered;
                            if (o >= 0 && truth.moving(static_cast<std::size_t>(o), static_cast<int>(t))) {
                                ++moving;
                                ++per_object[static_cast<std::size_t>(o)];
                            }
                        }
                    }
                    PatchLabel lab = PatchLabel::empty;
                    if (rendered > 0) lab = (2 * moving > rendered) ? PatchLabel::dynamic : PatchLabel::static_bg;
                    truth.labels[L.token(v, t, pr, pc)] = lab;
                    if (lab == PatchLabel::dynamic) {
                        truth.token_object[L.token(v, t, pr, pc)] = static_cast<int>(
                            std::max_element(per_object.begin(), per_object.end()) - per_object.begin());
                    }
                }
            }
        }
    }

    // Flow per frame: forward pair, last frame uses the backward pair.
    truth.flow.assign(L.token_count(), 0.0);
    if (L.frames > 1) {
        for (std::size_t v = 0; v < L.views; ++v) {
            for (std::size_t t = 0; t < L.frames; ++t) {
                const std::size_t other = (t + 1 < L.frames) ? t + 1 : t - 1;
                const auto flow = analytic_flow(truth, scene.frames[L.frame_index(v, t)],
                                                scene.frames[L.frame_index(v, other)]);
                std::copy(flow.begin(), flow.end(),
                          truth.flow.begin() + static_cast<std::ptrdiff_t>(L.token(v, t, 0, 0)));
            }
        }
    }

    for (std::size_t o = 0; o < spec.objects.size(); ++o) {
        std::size_t seen = 0;
        for (std::size_t v = 0; v < L.views; ++v)
            for (std::size_t t = 0; t < L.frames; ++t) seen += truth.visible_pixels(o, v, t);
        if (seen == 0) {
            truth.warnings.push_back("object " + std::to_string(o) + " (" + spec.objects[o].color_name +
                                     ") is outside every camera frustum for the whole sequence");
        }
    }
    return scene;
}

SceneSpec random_scene_spec(const SceneSpec& base, std::size_t min_objects, std::size_t max_objects,
                            Rng& rng) {
    SceneSpec spec = base;
    spec.seed = rng.next_u64();
    spec.objects.clear();
    const std::size_t n = min_objects + rng.index(max_objects - min_objects + 1);
    std::vector<std::size_t> colors(palette_names().size());
    for (std::size_t i = 0; i < colors.size(); ++i) colors[i] = i;
    rng.shuffle(colors);
    // Objects roam the central part of the box, above the floor.
    Aabb region{{-1.1, -1.1, 0.5}, {1.1, 1.1, 1.1}};
    const int T = static_cast<int>(spec.frames);
    for (std::size_t k = 0; k < n; ++k) {
        ObjectSpec o;
        o.color_name = palette_names()[colors[k % colors.size()]];
        o.color = palette_colors()[colors[k % colors.size()]];
        o.radius = rng.uniform(0.22, 0.28);
        o.points = 1400;
        o.start_frame = T >= 3 ? static_cast<int>(rng.index(static_cast<std::size_t>(T - 2))) : 0;
        o.end_frame = T - 1;
        for (int attempt = 0; attempt < 1000; ++attempt) {
            Trajectory tr;
            const auto kind = static_cast<TrajectoryKind>(rng.index(3));
            tr.kind = kind;
            const double speed = rng.uniform(0.45, 0.6);
            const double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const Vec3 dir{std::cos(heading), std::sin(heading), 0.0};
            tr.origin = {rng.uniform(region.lo[0], region.hi[0]), rng.uniform(region.lo[1], region.hi[1]),
                         rng.uniform(region.lo[2], region.hi[2])};
            if (kind == TrajectoryKind::linear) {
                tr.velocity = {speed * dir[0], speed * dir[1], rng.uniform(-0.05, 0.05)};
            } else if (kind == TrajectoryKind::circular) {
                tr.radius = rng.uniform(0.4, 0.8);
                tr.omega = (rng.uniform() < 0.5 ? -1.0 : 1.0) * speed / tr.radius;
                tr.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            } else {
                tr.velocity = scaled(dir, 0.7 * speed);
                tr.axis = {-dir[1], dir[0], 0.0};
                tr.amplitude = rng.uniform(0.15, 0.3);
                tr.omega = rng.uniform(0.6, 1.2);
                tr.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            }
            bool ok = true;
            for (int t = o.start_frame; t <= o.end_frame && ok; ++t) ok = inside(region, tr.position(t), 0.0);
            if (ok) {
                o.trajectory = tr;
                break;
            }
            if (attempt == 999) o.trajectory = Trajectory{TrajectoryKind::linear, region.center(), {0.05, 0.0, 0.0}};
        }
        spec.objects.push_back(o);
    }
    return spec;
}

// ---------------------------------------------------------------------------

const char* to_string(TaskFamily family) {
    switch (family) {
        case TaskFamily::caption: return "caption";
        case TaskFamily::qa: return "qa";
        case TaskFamily::grounding: return "grounding";
    }
    return "caption";
}

const char* to_string(Template t) {
    switch (t) {
        case Template::caption: return "caption";
        case Template::qa: return "qa";
        case Template::grounding_loc: return "grounding_loc";
        case Template::grounding_appear: return "grounding_appear";
    }
    return "caption";
}

std::vector<Template> all_templates() {
    return {Template::caption, Template::qa, Template::grounding_loc, Template::grounding_appear};
}

const std::vector<std::string>& palette_names() {
    static const std::vector<std::string> names{"red", "green", "blue", "yellow", "magenta", "cyan"};
    return names;
}

const std::vector<Vec3>& palette_colors() {
    static const std::vector<Vec3> colors{{0.9, 0.12, 0.1},  {0.1, 0.8, 0.2},   {0.15, 0.3, 0.95},
                                          {0.95, 0.85, 0.1}, {0.85, 0.2, 0.85}, {0.1, 0.85, 0.9}};
    return colors;
}

int palette_index(const std::string& name) {
    const auto& names = palette_names();
    const auto it = std::find(names.begin(), names.end(), name);
    return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

std::string format_number(double v) {
    // Four decimals, trailing zeros trimmed.
    double r = std::round(v * 1e4) / 1e4;
    if (r == 0.0) r = 0.0;  // drop negative zero
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", r);
    std::string s = buf;
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
}

double frame_time_value(int frame, std::size_t frames) {
    return frames > 1 ? static_cast<double>(frame) / static_cast<double>(frames - 1) : 0.0;
}

InstructionSet emit_instructions(const SceneTruth& truth, const std::vector<Template>& templates,
                                 const std::string& scene_id) {
    InstructionSet out;
    const auto& L = truth.layout;
    auto loc = [](const Vec3& q) {
        return "<loc " + format_number(q[0]) + " " + format_number(q[1]) + " " + format_number(q[2]) + ">";
    };
    auto time = [&](int t) { return "<time " + format_number(frame_time_value(t, L.frames)) + ">"; };
    auto visible = [&](std::size_t o, int t) {
        for (std::size_t v = 0; v < L.views; ++v)
            if (truth.visible_pixels(o, v, static_cast<std::size_t>(t)) > 0) return true;
        return false;
    };
    for (Template tpl : templates) {
        for (std::size_t o = 0; o < truth.centroids.size(); ++o) {
            const std::string& color = truth.object_colors[o];
            if (tpl == Template::grounding_appear) {
                const int start = truth.presence[o].first;
                if (!visible(o, start)) {
                    out.log.push_back(std::string(to_string(tpl)) + ": object " + std::to_string(o) +
                                      " not visible when it appears; skipped");
                    continue;
                }
                InstructionPair p;
                p.instruction = "when does the " + color + " object appear";
                p.answer = time(start);
                p.task = TaskFamily::grounding;
                p.templ = tpl;
                p.scene_id = scene_id;
                p.object = static_cast<int>(o);
                p.frame = start;
                p.target_frame = start;
                p.target_class = palette_index(color);
                p.target_xyz = truth.centroid_normalized(o, start);
                out.pairs.push_back(std::move(p));
                continue;
            }
            for (int t = 0; t < static_cast<int>(L.frames); ++t) {
                if (!truth.present(o, t)) continue;
                if (!visible(o, t)) {
                    out.log.push_back(std::string(to_string(tpl)) + ": object " + std::to_string(o) +
                                      " absent from every view at frame " + std::to_string(t) + "; skipped");
                    continue;
                }
                const Vec3 q = truth.centroid_normalized(o, t);
                InstructionPair p;
                p.scene_id = scene_id;
                p.templ = tpl;
                p.object = static_cast<int>(o);
                p.frame = t;
                p.target_xyz = q;
                p.target_frame = t;
                p.target_class = palette_index(color);
                switch (tpl) {
                    case Template::caption:
                        p.instruction = "describe the object at " + loc(q) + " at " + time(t);
                        p.answer = color + " object";
                        p.task = TaskFamily::caption;
                        break;
                    case Template::qa:
                        p.instruction = "where is the " + color + " object at " + time(t);
                        p.answer = loc(q);
                        p.task = TaskFamily::qa;
                        break;
                    case Template::grounding_loc:
                        p.instruction = "when is an object at " + loc(q);
                        p.answer = time(t);
                        p.task = TaskFamily::grounding;
                        break;
                    case Template::grounding_appear:
                        break;
                }
                out.pairs.push_back(std::move(p));
            }
        }
    }
    return out;
}

}  // namespace stp
