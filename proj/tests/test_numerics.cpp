#include <cmath>

#include <doctest.h>

#include "stprompt/layers.hpp"
#include "support.hpp"

using namespace stp;
using stp::testing::check_op;
using stp::testing::random_matrix;

namespace {

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

double rel_error(const Matrix& a, const Matrix& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), 1e-12));
    return worst;
}

}  // namespace

TEST_CASE("matmul matches a triple loop") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + rng.index(64), k = 1 + rng.index(64), n = 1 + rng.index(64);
        const Matrix a = random_matrix(m, k, rng), b = random_matrix(k, n, rng);
        const Matrix ref = naive_matmul(a, b);
        CHECK(max_abs_diff(matmul(a, b), ref) <= 1e-13 * std::max(1.0, frobenius_norm(ref)));
        CHECK(max_abs_diff(matmul_nt(a, transpose(b)), ref) <= 1e-13 * std::max(1.0, frobenius_norm(ref)));
        CHECK(max_abs_diff(matmul_tn(transpose(a), b), ref) <= 1e-13 * std::max(1.0, frobenius_norm(ref)));
    }
    const Matrix a{{1, 2}, {3, 4}};
    const Matrix b{{5, 6}, {7, 8}};
    CHECK(matmul(a, b) == Matrix{{19, 22}, {43, 50}});
    CHECK(rel_error(matmul(a, Matrix::identity(2)), a) == 0.0);
}

TEST_CASE("shape mismatches name both shapes") {
    const Matrix a(2, 3), b(2, 3);
    try {
        matmul(a, b);
        FAIL("no throw");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("(2x3)") != std::string::npos);
    }
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
    Rng rng(1);
    const Matrix x = random_matrix(5, 7, rng, 10.0);
    const Matrix s = softmax_rows(x);
    for (std::size_t r = 0; r < s.rows(); ++r) {
        double total = 0.0;
        for (double v : s.row(r)) total += v;
        CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
    }
    Matrix shifted = x;
    for (auto& v : shifted.data()) v += 1000.0;
    CHECK(max_abs_diff(softmax_rows(shifted), s) < 1e-12);
}

TEST_CASE("elementwise ops pass the gradient oracle") {
    Rng rng(2);
    const Matrix x = random_matrix(4, 6, rng);
    CHECK(check_op(x, [](const Matrix& v) { return softmax_rows(v); },
                   [](const Matrix& v, const Matrix& w) { return softmax_rows_backward(softmax_rows(v), w); }, rng)
              .passed());
    CHECK(check_op(x, [](const Matrix& v) { return gelu(v); },
                   [](const Matrix& v, const Matrix& w) { return gelu_backward(v, w); }, rng)
              .passed());
    CHECK(check_op(x, [](const Matrix& v) { return rms_norm(v); },
                   [](const Matrix& v, const Matrix& w) { return rms_norm_backward(v, w); }, rng)
              .passed());
}

TEST_CASE("gelu is exact") {
    const Matrix x{{-2.0, 0.0, 0.5, 3.0}};
    const Matrix y = gelu(x);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(y[i] == doctest::Approx(0.5 * x[i] * (1.0 + std::erf(x[i] / std::sqrt(2.0)))).epsilon(1e-15));
}

TEST_CASE("rms_norm rows have unit mean square") {
    Rng rng(3);
    const Matrix y = rms_norm(random_matrix(6, 8, rng, 5.0), 0.0);
    for (std::size_t r = 0; r < y.rows(); ++r) {
        double ms = 0.0;
        for (double v : y.row(r)) ms += v * v;
        CHECK(ms / 8.0 == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("linear, mlp and attention backward match finite differences") {
    Rng rng(4);
    ParamStore store;
    add_linear(store, "lin", 5, 3, rng);
    add_mlp(store, "mlp", 3, 6, 2, rng);
    store.add("q", random_matrix(4, 3, rng));
    store.add("k", random_matrix(6, 3, rng));
    const Matrix x = random_matrix(6, 5, rng);
    const Matrix w = random_matrix(4, 2, rng);

    auto loss = [&](const ParamStore& p, bool backward, ParamStore* grads) {
        const Matrix kv = linear_forward(p, "lin", x);
        AttentionCache ac;
        const Matrix att = attention(p.get("q"), p.get("k"), kv, 0.7, &ac);
        MlpCache mc;
        const Matrix y = mlp_forward(p, "mlp", att, &mc);
        if (backward) {
            const Matrix datt = mlp_backward(*grads, "mlp", mc, w);
            const AttentionGrads g = attention_backward(ac, datt);
            grads->grad("q") += g.dq;
            grads->grad("k") += g.dk;
            linear_backward(*grads, "lin", x, g.dv, false);
        }
        return stp::testing::weighted_sum(y, w);
    };
    store.zero_grads();
    loss(store, true, &store);
    const FdReport r = fd_check([&](const ParamStore& p) { return loss(p, false, nullptr); }, store, 1e-6, 1e-4);
    CHECK(r.passed());
    CHECK(r.checked_params.size() == 8);
}

TEST_CASE("frozen parameters receive no gradient") {
    Rng rng(5);
    ParamStore store;
    add_linear(store, "lin", 3, 2, rng);
    store.frozen.insert("lin.W");
    linear_backward(store, "lin", random_matrix(4, 3, rng), random_matrix(4, 2, rng), false);
    CHECK(frobenius_norm(store.grad("lin.W")) == 0.0);
    CHECK(frobenius_norm(store.grad("lin.b")) > 0.0);
}

TEST_CASE("adam first step moves each entry by lr against the gradient sign") {
    ParamStore store;
    store.add("p", Matrix{{1.0, -2.0, 0.5}});
    store.grad("p") = Matrix{{0.3, -4.0, 1e-3}};
    AdamOptions opt;
    opt.lr = 0.1;
    opt.eps = 0.0;
    adam_step(store, opt, 1);
    const Matrix& p = store.get("p");
    CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-14));
    CHECK(p[1] == doctest::Approx(-1.9).epsilon(1e-14));
    CHECK(p[2] == doctest::Approx(0.4).epsilon(1e-14));

    ParamStore decay;
    decay.add("p", Matrix{{2.0}});
    opt.weight_decay = 0.5;
    opt.eps = 1e-8;
    adam_step(decay, opt, 1);  // zero gradient: only decoupled decay
    CHECK(decay.get("p")[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0).epsilon(1e-14));
}

TEST_CASE("rng streams are reproducible and independent") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng s1 = Rng(42).split("x"), s2 = Rng(42).split("y"), s3 = Rng(42).split("x");
    CHECK(s1.next_u64() != s2.next_u64());
    s1 = Rng(42).split("x");
    CHECK(s1.next_u64() == s3.next_u64());
    Rng u(9);
    for (int i = 0; i < 1000; ++i) {
        const double v = u.uniform();
        CHECK((v >= 0.0 && v < 1.0));
    }
}

TEST_CASE("fnv1a matches the reference vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("parameter json round-trips bitwise") {
    Rng rng(6);
    ParamStore store;
    store.add("a", random_matrix(3, 4, rng));
    store.add("b.c", Matrix{{0.1, 1e-300, -0.0, 123456789.123456789}});
    const ParamStore back = params_from_json(params_to_json(store));
    CHECK(back.params == store.params);
}

TEST_CASE("fd_check reports a wrong gradient") {
    ParamStore store;
    store.add("x", Matrix{{1.0, 2.0}});
    store.grads["x"] = Matrix{{2.0, 5.0}};  // true gradient of x0² + x1² is (2, 4)
    const FdReport r = fd_check(
        [](const ParamStore& p) {
            const Matrix& x = p.get("x");
            return x[0] * x[0] + x[1] * x[1];
        },
        store, 1e-6, 1e-4);
    REQUIRE(r.failures.size() == 1);
    CHECK(r.failures[0].index == 1);
    CHECK(r.failures[0].numeric == doctest::Approx(4.0).epsilon(1e-8));
}
