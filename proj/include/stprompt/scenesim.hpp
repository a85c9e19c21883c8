#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stprompt/geometry.hpp"

namespace stp {

enum class TrajectoryKind { linear, circular, sinusoidal };

const char* to_string(TrajectoryKind kind);
TrajectoryKind trajectory_from_string(const std::string& name);

/// Centroid path as a function of the frame index.
///   linear:     origin + frame·velocity
///   circular:   origin + radius·(cos(ω·frame + φ), sin(ω·frame + φ), 0)
///   sinusoidal: origin + frame·velocity + amplitude·sin(ω·frame + φ)·axis
struct Trajectory {
    TrajectoryKind kind = TrajectoryKind::linear;
    Vec3 origin{0.0, 0.0, 0.0};
    Vec3 velocity{0.0, 0.0, 0.0};
    Vec3 axis{0.0, 0.0, 1.0};
    double radius = 0.0;
    double omega = 0.0;
    double phase = 0.0;
    double amplitude = 0.0;

    Vec3 position(double frame) const;
};

struct ObjectSpec {
    std::string color_name = "red";
    Vec3 color{0.9, 0.15, 0.1};
    double radius = 0.4;
    std::size_t points = 1200;
    Trajectory trajectory;
    int start_frame = 0;
    int end_frame = 1 << 20;
};

struct BackgroundSpec {
    double extent = 5.0;    // floor covers [-extent, extent]²
    double spacing = 0.04;  // grid pitch
    Vec3 color{0.5, 0.47, 0.42};
    double checker = 0.6;   // checker tile size in world units
    double contrast = 0.1;  // checker tone offset
    double noise = 0.08;    // per-point colour noise amplitude
};

struct SceneSpec {
    std::uint64_t seed = 0;
    std::size_t views = 3;
    std::size_t frames = 6;
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t channels = 3;
    std::size_t patch = 8;
    double ring_radius = 2.6;
    double ring_height = 3.6;
    double focal = 64.0;
    Vec3 look_at{0.0, 0.0, 0.3};
    BackgroundSpec background;
    double object_noise = 0.06;
    std::vector<ObjectSpec> objects;
    Aabb aabb{{-1.5, -1.5, 0.0}, {1.5, 1.5, 1.5}};

    void validate() const;
    std::vector<Camera> cameras() const;
};

enum class PatchLabel : int { empty = -1, static_bg = 0, dynamic = 1 };

struct SceneTruth {
    GridLayout layout;
    std::size_t patch = 8;
    Aabb aabb;
    std::vector<PatchLabel> labels;          // per token
    std::vector<int> token_object;           // object owning most pixels of a dynamic token, else -1
    std::vector<double> flow;                // analytic flow magnitude per token
    std::vector<std::vector<Vec3>> centroids;  // [object][frame], world units
    std::vector<std::string> object_colors;
    std::vector<std::pair<int, int>> presence;  // [start, end] frame per object
    std::vector<std::string> warnings;

    // Point model used for exact flow.
    std::vector<Vec3> background_points;
    std::vector<std::vector<Vec3>> object_offsets;
    std::vector<Trajectory> trajectories;
    // Per frame (layout order) per pixel: owning object (-1 background, -2 none) and point index.
    std::vector<std::vector<int>> owner_object;
    std::vector<std::vector<int>> owner_point;

    bool present(std::size_t object, int frame) const;
    bool moving(std::size_t object, int frame) const;
    Vec3 point_position(int object, int point, int frame) const;
    Vec3 centroid_normalized(std::size_t object, int frame) const;
    /// Pixels owned by `object` in frame (view, time) of the layout.
    std::size_t visible_pixels(std::size_t object, std::size_t view, std::size_t time) const;
};

struct Scene {
    std::string id;
    SceneSpec spec;
    std::vector<Camera> cameras;
    std::vector<CameraFrame> frames;  // (view, time) order
    SceneTruth truth;
};

/// Z-buffer point splatting of every view and frame plus exact truth.
Scene generate(const SceneSpec& spec);

/// Draws a scene with `min_objects`..`max_objects` moving objects using `rng`.
SceneSpec random_scene_spec(const SceneSpec& base, std::size_t min_objects, std::size_t max_objects,
                            Rng& rng);

/// Per-patch mean of exact image displacement of the points visible in
/// `frame_a` between the two frames' times.
std::vector<double> analytic_flow(const SceneTruth& truth, const CameraFrame& frame_a,
                                  const CameraFrame& frame_b);

// ---------------------------------------------------------------------------
// Instructions

enum class TaskFamily { caption, qa, grounding };
const char* to_string(TaskFamily family);

enum class Template { caption, qa, grounding_loc, grounding_appear };
const char* to_string(Template t);

struct InstructionPair {
    std::string instruction;
    std::string answer;
    TaskFamily task = TaskFamily::caption;
    Template templ = Template::caption;
    std::string scene_id;
    int object = -1;
    int frame = -1;
    Vec3 target_xyz{0.0, 0.0, 0.0};  // normalized
    int target_frame = -1;
    int target_class = -1;  // palette colour index
};

struct InstructionSet {
    std::vector<InstructionPair> pairs;
    std::vector<std::string> log;
};

const std::vector<std::string>& palette_names();
const std::vector<Vec3>& palette_colors();
int palette_index(const std::string& name);

std::string format_number(double v);
double frame_time_value(int frame, std::size_t frames);

InstructionSet emit_instructions(const SceneTruth& truth, const std::vector<Template>& templates,
                                 const std::string& scene_id);
std::vector<Template> all_templates();

// ---------------------------------------------------------------------------
// Files

std::string scene_to_json(const Scene& scene);
Scene scene_from_json(const std::string& text);
std::string instructions_to_jsonl(const std::vector<InstructionPair>& pairs);

}  // namespace stp
