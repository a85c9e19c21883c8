#pragma once

// Building blocks with explicit backward passes. Parameters are looked up in a
// ParamStore by prefix: a linear layer "x" owns "x.W" (in×out) and "x.b" (1×out);
// a two-layer MLP "m" owns linear layers "m.l1" and "m.l2". Backward calls add
// into ParamStore::grads and skip frozen parameters.

#include <string>

#include "stprompt/numerics.hpp"

namespace stp {

void add_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                bool with_bias = true);
void add_mlp(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
             std::size_t out, Rng& rng);

Matrix linear_forward(const ParamStore& store, const std::string& prefix, const Matrix& x);
/// Returns dL/dx (empty when `need_dx` is false).
Matrix linear_backward(ParamStore& store, const std::string& prefix, const Matrix& x, const Matrix& dy,
                       bool need_dx = true);

struct MlpCache {
    Matrix x;
    Matrix pre;     // first layer pre-activation
    Matrix hidden;  // GELU(pre)
};

Matrix mlp_forward(const ParamStore& store, const std::string& prefix, const Matrix& x, MlpCache* cache);
Matrix mlp_backward(ParamStore& store, const std::string& prefix, const MlpCache& cache, const Matrix& dy,
                    bool need_dx = true);

/// Adds `g` to the gradient of `name` unless it is frozen.
void accumulate_grad(ParamStore& store, const std::string& name, const Matrix& g);
bool trainable(const ParamStore& store, const std::string& name);
bool any_trainable(const ParamStore& store, const std::string& prefix);

/// Row-wise x / sqrt(mean(x²) + eps), no learned scale.
Matrix rms_norm(const Matrix& x, double eps = 1e-6);
Matrix rms_norm_backward(const Matrix& x, const Matrix& dy, double eps = 1e-6);

struct AttentionCache {
    Matrix q, k, v, a;
    double scale = 1.0;
};

/// softmax(q·kᵀ·scale)·v, single head.
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, double scale, AttentionCache* cache);

struct AttentionGrads {
    Matrix dq, dk, dv;
};
AttentionGrads attention_backward(const AttentionCache& cache, const Matrix& dout);

}  // namespace stp
