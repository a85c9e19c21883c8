#include <cmath>
#include <numeric>

#include <doctest.h>

#include "stprompt/encoding.hpp"
#include "support.hpp"

using namespace stp;
using stp::testing::random_matrix;

namespace {

Matrix uniform_coords(std::size_t n, Rng& rng) {
    Matrix x(n, 3);
    for (auto& v : x.data()) v = rng.uniform(-1.0, 1.0);
    return x;
}

}  // namespace

TEST_CASE("position encoding rows have norm 1/sqrt(2)") {
    Rng rng(21);
    const FourierEncoder enc = FourierEncoder::random(16, 4.0, rng);
    const Matrix pe = encode_position(enc, uniform_coords(10000, rng));
    double worst = 0.0;
    for (std::size_t r = 0; r < pe.rows(); ++r) {
        double s = 0.0;
        for (double v : pe.row(r)) s += v * v;
        worst = std::max(worst, std::abs(std::sqrt(s) - 1.0 / std::sqrt(2.0)));
    }
    CHECK(worst < 1e-12);

    const Matrix zero = encode_position(enc, Matrix(1, 3));
    for (std::size_t c = 0; c < 8; ++c) {
        CHECK(zero(0, c) == doctest::Approx(0.25).epsilon(1e-15));
        CHECK(zero(0, 8 + c) == 0.0);
    }
}

TEST_CASE("position encoding separates distinct coordinates") {
    Rng rng(22);
    const FourierEncoder enc = FourierEncoder::random(16, 4.0, rng);
    const Matrix pe = encode_position(enc, uniform_coords(100, rng));
    double closest = 1e9;
    for (std::size_t i = 0; i < 100; ++i)
        for (std::size_t j = i + 1; j < 100; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < pe.cols(); ++c) s += (pe(i, c) - pe(j, c)) * (pe(i, c) - pe(j, c));
            closest = std::min(closest, s);
        }
    CHECK(closest > 0.0);
}

TEST_CASE("motion modulation") {
    const std::vector<double> zero(9, 0.0);
    for (double m : motion_modulation(zero, 9)) CHECK(m == 1.0 + 1.0 / 9.0);

    const std::vector<double> spike{0.0, 0.0, 200.0, 0.0};
    const auto m = motion_modulation(spike, 4);
    CHECK(m[2] == doctest::Approx(2.0));
    CHECK(m[0] == doctest::Approx(1.0));

    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> flow(24);
        for (auto& f : flow) f = rng.uniform(0.0, 6.0);
        const auto mod = motion_modulation(flow, 8);
        for (std::size_t frame = 0; frame < 3; ++frame) {
            double s = 0.0;
            for (std::size_t i = 0; i < 8; ++i) s += mod[frame * 8 + i] - 1.0;
            CHECK(std::abs(s - 1.0) < 1e-12);
            for (std::size_t i = 0; i < 8; ++i)
                for (std::size_t j = 0; j < 8; ++j)
                    if (flow[frame * 8 + i] > flow[frame * 8 + j]) CHECK(mod[frame * 8 + i] > mod[frame * 8 + j]);
        }
    }
}

TEST_CASE("zero-flow time encoding is the base encoding scaled by 1 + 1/N") {
    Rng rng(24);
    const FourierEncoder enc = FourierEncoder::random(16, 4.0, rng);
    Matrix t(12, 1);
    for (auto& v : t.data()) v = rng.uniform();
    const Matrix base = fourier_features(t, enc.time);
    const Matrix te = encode_time(enc, t, std::vector<double>(12, 0.0), 6);
    for (std::size_t i = 0; i < te.size(); ++i) CHECK(te[i] == base[i] * (1.0 + 1.0 / 6.0));
}

TEST_CASE("fourier features pass the gradient oracle in both arguments") {
    Rng rng(25);
    const Matrix x = uniform_coords(7, rng);
    const Matrix w = random_matrix(4, 3, rng, 3.0);
    const auto by_w =
        stp::testing::check_op(w, [&](const Matrix& v) { return fourier_features(x, v); },
                               [&](const Matrix& v, const Matrix& g) { return fourier_features_backward(x, v, g).dw; },
                               rng, 1e-6);
    CHECK(by_w.passed());
    const auto by_x =
        stp::testing::check_op(x, [&](const Matrix& v) { return fourier_features(v, w); },
                               [&](const Matrix& v, const Matrix& g) { return fourier_features_backward(v, w, g).dx; },
                               rng, 1e-6);
    CHECK(by_x.passed());
}

TEST_CASE("prompt assembly") {
    Rng rng(26);
    ParamStore store;
    add_prompt_params(store, 8, 12, 6, rng);
    const Matrix pxyz = random_matrix(5, 8, rng), pt = random_matrix(5, 8, rng);

    SUBCASE("matches direct composition") {
        const Matrix cat = hconcat({&pxyz, &pt});
        const Matrix h = gelu(add_row_broadcast(matmul(matmul(cat, store.get("prompt.wp.W")),
                                                       store.get("prompt.align.l1.W")),
                                                store.get("prompt.align.l1.b")));
        const Matrix ref = add_row_broadcast(matmul(h, store.get("prompt.align.l2.W")), store.get("prompt.align.l2.b"));
        CHECK(max_abs_diff(assemble_prompt(pxyz, pt, store).vectors, ref) < 1e-13);
    }
    SUBCASE("zero final layer gives a zero prompt") {
        store.get_mut("prompt.align.l2.W") = Matrix(12, 6);
        store.get_mut("prompt.align.l2.b") = Matrix(1, 6);
        CHECK(frobenius_norm(assemble_prompt(pxyz, pt, store).vectors) == 0.0);
    }
    SUBCASE("passes the gradient oracle for weights and inputs") {
        store.add("in.xyz", pxyz);
        store.add("in.t", pt);
        const Matrix w = random_matrix(5, 6, rng);
        auto loss = [&](const ParamStore& p) {
            return stp::testing::weighted_sum(assemble_prompt(p.get("in.xyz"), p.get("in.t"), p).vectors, w);
        };
        PromptCache cache;
        assemble_prompt(pxyz, pt, store, {}, &cache);
        const PromptGrads g = assemble_prompt_backward(store, cache, w);
        store.grad("in.xyz") = g.dp_xyz;
        store.grad("in.t") = g.dp_t;
        const FdReport r = fd_check(loss, store, 1e-6, 1e-4);
        CHECK(r.passed());
        CHECK(r.checked_params.size() == 7);
    }
    SUBCASE("permuting tokens permutes the prompt") {
        std::vector<std::size_t> perm{3, 0, 4, 1, 2};
        Matrix a(5, 8), b(5, 8);
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t c = 0; c < 8; ++c) {
                a(i, c) = pxyz(perm[i], c);
                b(i, c) = pt(perm[i], c);
            }
        const Matrix out = assemble_prompt(pxyz, pt, store).vectors;
        const Matrix permuted = assemble_prompt(a, b, store).vectors;
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t c = 0; c < 6; ++c) CHECK(permuted(i, c) == out(perm[i], c));
    }
}
