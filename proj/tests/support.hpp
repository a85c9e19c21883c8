#pragma once

#include <cmath>
#include <functional>

#include "stprompt/numerics.hpp"

namespace stp::testing {

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double sd = 1.0) {
    return random_normal(r, c, sd, rng);
}

inline double weighted_sum(const Matrix& y, const Matrix& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
    return s;
}

/// fd_check of x ↦ Σ w ⊙ f(x) against `backward(x, w)`.
inline FdReport check_op(const Matrix& x, const std::function<Matrix(const Matrix&)>& f,
                         const std::function<Matrix(const Matrix&, const Matrix&)>& backward, Rng& rng,
                         double tol = 1e-4) {
    const Matrix probe = f(x);
    const Matrix w = random_matrix(probe.rows(), probe.cols(), rng);
    ParamStore store;
    store.add("x", x);
    store.grads["x"] = backward(x, w);
    return fd_check([&](const ParamStore& p) { return weighted_sum(f(p.get("x")), w); }, store, 1e-6, tol);
}

}  // namespace stp::testing

#include "stprompt/geometry.hpp"

namespace stp::testing {

/// Uniform random rotation (unit quaternion) and intrinsics with skew.
inline Camera random_camera(Rng& rng) {
    double q[4];
    double n = 0.0;
    do {
        n = 0.0;
        for (double& v : q) {
            v = rng.normal();
            n += v * v;
        }
    } while (n < 1e-6);
    n = std::sqrt(n);
    for (double& v : q) v /= n;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Camera cam;
    cam.R = Matrix{{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
                   {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
                   {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}};
    const double fx = rng.uniform(20.0, 400.0), fy = rng.uniform(20.0, 400.0);
    cam.K = Matrix{{fx, rng.uniform(-2.0, 2.0), rng.uniform(0.0, 128.0)}, {0.0, fy, rng.uniform(0.0, 128.0)},
                   {0.0, 0.0, 1.0}};
    cam.T = {rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)};
    return cam;
}

/// Pinhole projection written out by hand: (u, v, z) of K(R·x + T).
inline Vec3 project_by_hand(const Camera& c, const Vec3& x) {
    double cam[3];
    for (int i = 0; i < 3; ++i) cam[i] = c.R(i, 0) * x[0] + c.R(i, 1) * x[1] + c.R(i, 2) * x[2] + c.T[i];
    double h[3];
    for (int i = 0; i < 3; ++i) h[i] = c.K(i, 0) * cam[0] + c.K(i, 1) * cam[1] + c.K(i, 2) * cam[2];
    return {h[0] / h[2], h[1] / h[2], cam[2]};
}

}  // namespace stp::testing
