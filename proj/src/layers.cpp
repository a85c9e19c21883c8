#include "stprompt/layers.hpp"

#include <cmath>

namespace stp {

void add_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                bool with_bias) {
    Rng r = rng.split(prefix + ".W");
    store.add(prefix + ".W", xavier_uniform(in, out, r));
    if (with_bias) store.add(prefix + ".b", Matrix(1, out));
}

void add_mlp(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
             std::size_t out, Rng& rng) {
    add_linear(store, prefix + ".l1", in, hidden, rng);
    add_linear(store, prefix + ".l2", hidden, out, rng);
}

bool trainable(const ParamStore& store, const std::string& name) {
    return store.has(name) && !store.is_frozen(name);
}

bool any_trainable(const ParamStore& store, const std::string& prefix) {
    for (auto it = store.params.lower_bound(prefix); it != store.params.end(); ++it) {
        if (it->first.compare(0, prefix.size(), prefix) != 0) break;
        if (!store.is_frozen(it->first)) return true;
    }
    return false;
}

void accumulate_grad(ParamStore& store, const std::string& name, const Matrix& g) {
    if (store.is_frozen(name)) return;
    store.grad(name) += g;
}

Matrix linear_forward(const ParamStore& store, const std::string& prefix, const Matrix& x) {
    Matrix y = matmul(x, store.get(prefix + ".W"));
    const std::string bname = prefix + ".b";
    if (store.has(bname)) y = add_row_broadcast(std::move(y), store.get(bname));
    return y;
}

Matrix linear_backward(ParamStore& store, const std::string& prefix, const Matrix& x, const Matrix& dy,
                       bool need_dx) {
    const std::string wname = prefix + ".W";
    const std::string bname = prefix + ".b";
    if (trainable(store, wname)) store.grad(wname) += matmul_tn(x, dy);
    if (trainable(store, bname)) store.grad(bname) += column_sums(dy);
    if (!need_dx) return {};
    return matmul_nt(dy, store.get(wname));
}

Matrix mlp_forward(const ParamStore& store, const std::string& prefix, const Matrix& x, MlpCache* cache) {
    Matrix pre = linear_forward(store, prefix + ".l1", x);
    Matrix hidden = gelu(pre);
    Matrix out = linear_forward(store, prefix + ".l2", hidden);
    if (cache) {
        cache->x = x;
        cache->pre = std::move(pre);
        cache->hidden = std::move(hidden);
    }
    return out;
}

Matrix mlp_backward(ParamStore& store, const std::string& prefix, const MlpCache& cache, const Matrix& dy,
                    bool need_dx) {
    const bool need_hidden = need_dx || any_trainable(store, prefix + ".l1");
    Matrix dh = linear_backward(store, prefix + ".l2", cache.hidden, dy, need_hidden);
    if (!need_hidden) return {};
    Matrix dpre = gelu_backward(cache.pre, dh);
    return linear_backward(store, prefix + ".l1", cache.x, dpre, need_dx);
}

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, double scale, AttentionCache* cache) {
    Matrix scores = matmul_nt(q, k);
    scores *= scale;
    Matrix a = softmax_rows(scores);
    Matrix out = matmul(a, v);
    if (cache) {
        cache->q = q;
        cache->k = k;
        cache->v = v;
        cache->a = std::move(a);
        cache->scale = scale;
    }
    return out;
}

AttentionGrads attention_backward(const AttentionCache& c, const Matrix& dout) {
    AttentionGrads g;
    g.dv = matmul_tn(c.a, dout);
    Matrix da = matmul_nt(dout, c.v);
    Matrix ds = softmax_rows_backward(c.a, da);
    ds *= c.scale;
    g.dq = matmul(ds, c.k);
    g.dk = matmul_tn(ds, c.q);
    return g;
}

Matrix rms_norm(const Matrix& x, double eps) {
    Matrix y(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double ms = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) ms += x(r, c) * x(r, c);
        const double inv = 1.0 / std::sqrt(ms / static_cast<double>(x.cols()) + eps);
        for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) = x(r, c) * inv;
    }
    return y;
}

Matrix rms_norm_backward(const Matrix& x, const Matrix& dy, double eps) {
    Matrix dx(x.rows(), x.cols());
    const auto n = static_cast<double>(x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double ms = 0.0, dot = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            ms += x(r, c) * x(r, c);
            dot += dy(r, c) * x(r, c);
        }
        const double inv = 1.0 / std::sqrt(ms / n + eps);
        const double k = dot * inv * inv * inv / n;
        for (std::size_t c = 0; c < x.cols(); ++c) dx(r, c) = dy(r, c) * inv - x(r, c) * k;
    }
    return dx;
}

}  // namespace stp
