#include <cstring>

#include <boost/beast/core/detail/base64.hpp>
#include <nlohmann/json.hpp>

#include "stprompt/json_io.hpp"
#include "stprompt/scenesim.hpp"

namespace stp {

namespace {

using nlohmann::json;
namespace b64 = boost::beast::detail::base64;

template <typename T>
std::string encode_block(const std::vector<T>& values) {
    const std::size_t bytes = values.size() * sizeof(T);
    std::string out(b64::encoded_size(bytes), '\0');
    out.resize(b64::encode(out.data(), values.data(), bytes));
    return out;
}

template <typename T>
std::vector<T> decode_block(const std::string& text, std::size_t expected) {
    std::string raw(b64::decoded_size(text.size()), '\0');
    const auto [written, read] = b64::decode(raw.data(), text.data(), text.size());
    if (written != expected * sizeof(T)) throw std::runtime_error("scene file: binary block has wrong length");
    std::vector<T> out(expected);
    std::memcpy(out.data(), raw.data(), written);
    return out;
}

json vec_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }
Vec3 vec_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
    return rows;
}

Matrix matrix_from(const json& j) {
    std::vector<double> data;
    std::size_t cols = 0;
    for (const auto& r : j) {
        cols = r.size();
        for (const auto& v : r) data.push_back(v.get<double>());
    }
    return Matrix(j.size(), cols, std::move(data));
}

json aabb_json(const Aabb& b) { return {{"lo", vec_json(b.lo)}, {"hi", vec_json(b.hi)}}; }
Aabb aabb_from(const json& j) { return {vec_from(j.at("lo")), vec_from(j.at("hi"))}; }

json spec_json(const SceneSpec& s) {
    json objects = json::array();
    for (const auto& o : s.objects) {
        const auto& t = o.trajectory;
        objects.push_back({{"color_name", o.color_name},
                           {"color", vec_json(o.color)},
                           {"radius", o.radius},
                           {"points", o.points},
                           {"start_frame", o.start_frame},
                           {"end_frame", o.end_frame},
                           {"trajectory",
                            {{"kind", to_string(t.kind)},
                             {"origin", vec_json(t.origin)},
                             {"velocity", vec_json(t.velocity)},
                             {"axis", vec_json(t.axis)},
                             {"radius", t.radius},
                             {"omega", t.omega},
                             {"phase", t.phase},
                             {"amplitude", t.amplitude}}}});
    }
    const auto& bg = s.background;
    return {{"seed", s.seed},
            {"views", s.views},
            {"frames", s.frames},
            {"height", s.height},
            {"width", s.width},
            {"channels", s.channels},
            {"patch", s.patch},
            {"ring_radius", s.ring_radius},
            {"ring_height", s.ring_height},
            {"focal", s.focal},
            {"look_at", vec_json(s.look_at)},
            {"background",
             {{"extent", bg.extent},
              {"spacing", bg.spacing},
              {"color", vec_json(bg.color)},
              {"checker", bg.checker},
              {"contrast", bg.contrast},
              {"noise", bg.noise}}},
            {"object_noise", s.object_noise},
            {"objects", objects},
            {"aabb", aabb_json(s.aabb)}};
}

}  // namespace

SceneSpec scene_spec_from_json(const json& j) {
    SceneSpec s;
    s.seed = j.value("seed", s.seed);
    s.views = j.value("views", s.views);
    s.frames = j.value("frames", s.frames);
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.channels = j.value("channels", s.channels);
    s.patch = j.value("patch", s.patch);
    s.ring_radius = j.value("ring_radius", s.ring_radius);
    s.ring_height = j.value("ring_height", s.ring_height);
    s.focal = j.value("focal", s.focal);
    if (j.contains("look_at")) s.look_at = vec_from(j.at("look_at"));
    if (j.contains("background")) {
        const auto& b = j.at("background");
        auto& bg = s.background;
        bg.extent = b.value("extent", bg.extent);
        bg.spacing = b.value("spacing", bg.spacing);
        if (b.contains("color")) bg.color = vec_from(b.at("color"));
        bg.checker = b.value("checker", bg.checker);
        bg.contrast = b.value("contrast", bg.contrast);
        bg.noise = b.value("noise", bg.noise);
    }
    s.object_noise = j.value("object_noise", s.object_noise);
    if (j.contains("aabb")) s.aabb = aabb_from(j.at("aabb"));
    for (const auto& oj : j.value("objects", json::array())) {
        ObjectSpec o;
        o.color_name = oj.value("color_name", o.color_name);
        if (oj.contains("color")) o.color = vec_from(oj.at("color"));
        o.radius = oj.value("radius", o.radius);
        o.points = oj.value("points", o.points);
        o.start_frame = oj.value("start_frame", o.start_frame);
        o.end_frame = oj.value("end_frame", o.end_frame);
        if (oj.contains("trajectory")) {
            const auto& tj = oj.at("trajectory");
            auto& t = o.trajectory;
            t.kind = trajectory_from_string(tj.value("kind", std::string("linear")));
            if (tj.contains("origin")) t.origin = vec_from(tj.at("origin"));
            if (tj.contains("velocity")) t.velocity = vec_from(tj.at("velocity"));
            if (tj.contains("axis")) t.axis = vec_from(tj.at("axis"));
            t.radius = tj.value("radius", t.radius);
            t.omega = tj.value("omega", t.omega);
            t.phase = tj.value("phase", t.phase);
            t.amplitude = tj.value("amplitude", t.amplitude);
        }
        s.objects.push_back(o);
    }
    return s;
}

json scene_spec_to_json(const SceneSpec& spec) { return spec_json(spec); }

std::string scene_to_json(const Scene& scene) {
    json cams = json::array();
    for (const auto& c : scene.cameras) {
        cams.push_back({{"K", matrix_json(c.K)}, {"R", matrix_json(c.R)}, {"T", vec_json(c.T)}});
    }
    json frames = json::array();
    for (const auto& f : scene.frames) {
        frames.push_back({{"view", f.view_id},
                          {"time_index", f.time_index},
                          {"time_value", f.time_value},
                          {"pixels",
                           {{"shape", {f.height, f.width, f.channels}},
                            {"dtype", "float64-le"},
                            {"order", "row-major"},
                            {"data", encode_block(f.pixels)}}},
                          {"depth",
                           {{"shape", {f.height, f.width}},
                            {"dtype", "float64-le"},
                            {"order", "row-major"},
                            {"data", encode_block(f.depth)}}}});
    }
    const auto& tr = scene.truth;
    std::vector<std::int8_t> labels;
    for (auto l : tr.labels) labels.push_back(static_cast<std::int8_t>(l));
    json centroids = json::array();
    for (const auto& path : tr.centroids) {
        json p = json::array();
        for (const auto& c : path) p.push_back(vec_json(c));
        centroids.push_back(p);
    }
    const auto& L = tr.layout;
    json doc = {{"format", "stprompt-scene/1"},
                {"id", scene.id},
                {"spec", spec_json(scene.spec)},
                {"cameras", cams},
                {"aabb", aabb_json(scene.spec.aabb)},
                {"frames", frames},
                {"truth",
                 {{"labels",
                   {{"shape", {L.views, L.frames, L.rows, L.cols}},
                    {"dtype", "int8"},
                    {"order", "row-major"},
                    {"encoding", "-1 empty, 0 static, 1 dynamic"},
                    {"data", encode_block(labels)}}},
                  {"flow",
                   {{"shape", {L.views, L.frames, L.rows, L.cols}},
                    {"dtype", "float64-le"},
                    {"order", "row-major"},
                    {"data", encode_block(tr.flow)}}},
                  {"centroids", centroids},
                  {"object_colors", tr.object_colors},
                  {"presence", tr.presence},
                  {"warnings", tr.warnings}}}};
    return doc.dump();
}

Scene scene_from_json(const std::string& text) {
    const json doc = json::parse(text);
    if (doc.value("format", std::string()) != "stprompt-scene/1") {
        throw std::runtime_error("scene file: unsupported format tag");
    }
    // Truth (point model, ownership) is regenerated from the embedded spec; the
    // frames and cameras are taken from the file.
    Scene scene = generate(scene_spec_from_json(doc.at("spec")));
    scene.id = doc.value("id", scene.id);
    scene.cameras.clear();
    for (const auto& c : doc.at("cameras")) {
        Camera cam;
        cam.K = matrix_from(c.at("K"));
        cam.R = matrix_from(c.at("R"));
        cam.T = vec_from(c.at("T"));
        scene.cameras.push_back(cam);
    }
    scene.frames.clear();
    for (const auto& fj : doc.at("frames")) {
        CameraFrame f;
        f.view_id = fj.at("view").get<std::size_t>();
        f.time_index = fj.at("time_index").get<int>();
        f.time_value = fj.at("time_value").get<double>();
        const auto shape = fj.at("pixels").at("shape").get<std::vector<std::size_t>>();
        f.height = shape.at(0);
        f.width = shape.at(1);
        f.channels = shape.at(2);
        f.pixels = decode_block<double>(fj.at("pixels").at("data").get<std::string>(), f.height * f.width * f.channels);
        f.depth = decode_block<double>(fj.at("depth").at("data").get<std::string>(), f.height * f.width);
        f.camera = scene.cameras.at(f.view_id);
        scene.frames.push_back(std::move(f));
    }
    return scene;
}

std::string instructions_to_jsonl(const std::vector<InstructionPair>& pairs) {
    std::string out;
    for (const auto& p : pairs) {
        json j = {{"instruction", p.instruction},
                  {"answer", p.answer},
                  {"task", to_string(p.task)},
                  {"scene_id", p.scene_id}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

}  // namespace stp
