#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "stprompt/numerics.hpp"

namespace stp {

using Vec3 = std::array<double, 3>;

class GeometryError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Pinhole camera. R maps world to camera, T is in the camera frame:
/// x_cam = R·x_world + T. Camera looks down +z with y pointing down the image.
struct Camera {
    Matrix K = Matrix::identity(3);
    Matrix R = Matrix::identity(3);
    Vec3 T{0.0, 0.0, 0.0};

    /// Throws GeometryError unless R is a rotation and K an upper-triangular
    /// intrinsics matrix with positive diagonal.
    void validate(double tol = 1e-9) const;

    /// Camera placed at `eye` looking at `target`; world up is +z.
    static Camera look_at(const Vec3& eye, const Vec3& target, double focal, double cx, double cy);
};

struct Projection {
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0;
};

/// World point to pixel plus camera-z depth.
Projection project(const Camera& camera, const Vec3& world);

/// x_3D = R⁻¹(depth · K⁻¹ (u, v, 1)ᵀ − T).
Vec3 unproject(const Camera& camera, double u, double v, double depth);

/// Axis-aligned box used to normalize world coordinates into [-1, 1]³.
struct Aabb {
    Vec3 lo{-1.0, -1.0, -1.0};
    Vec3 hi{1.0, 1.0, 1.0};

    bool valid() const;
    Vec3 center() const;
    /// Maps lo → -1 and hi → +1 per axis, clamped to [-1, 1].
    Vec3 normalize(const Vec3& p) const;
    Vec3 denormalize(const Vec3& q) const;
};

/// One rendered view at one time step. Pixels are row-major H×W×C in [0, 1];
/// depth is row-major H×W, +inf where nothing was rendered.
struct CameraFrame {
    Camera camera;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 3;
    std::vector<double> pixels;
    std::vector<double> depth;
    std::size_t view_id = 0;
    int time_index = 0;
    double time_value = 0.0;

    double pixel(std::size_t r, std::size_t c, std::size_t ch) const {
        return pixels[(r * width + c) * channels + ch];
    }
    double depth_at(std::size_t r, std::size_t c) const { return depth[r * width + c]; }
};

/// Token ordering shared by every per-patch array: (view, time, row, col).
struct GridLayout {
    std::size_t views = 0;
    std::size_t frames = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t tokens_per_frame() const { return rows * cols; }
    std::size_t frame_count() const { return views * frames; }
    std::size_t token_count() const { return views * frames * rows * cols; }
    std::size_t frame_index(std::size_t view, std::size_t time) const { return view * frames + time; }
    std::size_t token(std::size_t view, std::size_t time, std::size_t r, std::size_t c) const {
        return (frame_index(view, time) * rows + r) * cols + c;
    }
    friend bool operator==(const GridLayout&, const GridLayout&) = default;
};

/// Per-patch normalized (x, y, z, t) plus flow magnitude.
struct Coord4DGrid {
    GridLayout layout;
    Matrix coords;                 // token_count × 4
    std::vector<double> flow_mag;  // token_count, pixels per frame
    std::vector<bool> valid;       // false where the patch had no depth (sentinel coordinate)
};

/// Normalized xyz assigned to patches with no rendered depth.
inline constexpr Vec3 kBackgroundSentinel{0.0, 0.0, 1.0};

/// Frames must form a complete (view, time) grid; they are ordered by
/// (view_id, time_index) internally.
Coord4DGrid build_coord_grid(const std::vector<CameraFrame>& frames, std::size_t patch,
                             const Aabb& bounds);

/// Frames sorted by (view_id, time_index), with the resulting layout.
std::vector<const CameraFrame*> order_frames(const std::vector<CameraFrame>& frames,
                                             std::size_t patch, GridLayout& layout);

/// Median of finite depths in a patch; +inf when none is finite.
double patch_median_depth(const CameraFrame& frame, std::size_t r0, std::size_t c0, std::size_t patch);

/// Per-patch displacement magnitude minimising SSD between a `window`-sized
/// block centred on each patch and the displaced block in `b`. Ties go to
/// the smallest displacement, then lexicographic (dy, dx).
std::vector<double> block_matching_flow(const CameraFrame& a, const CameraFrame& b,
                                        std::size_t patch, std::size_t window, int search);

}  // namespace stp
