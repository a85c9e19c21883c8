#include "stprompt/encoding.hpp"

#include <algorithm>
#include <cmath>

namespace stp {

FourierEncoder FourierEncoder::random(std::size_t d, double sigma, Rng& rng, double time_sigma) {
    if (d == 0 || d % 2) throw std::invalid_argument("Fourier width must be even and positive");
    Rng rp = rng.split("fourier.pos");
    Rng rt = rng.split("fourier.time");
    return {random_normal(d / 2, 3, sigma, rp), random_normal(d / 2, 1, time_sigma > 0.0 ? time_sigma : sigma, rt)};
}

FourierEncoder FourierEncoder::from_store(const ParamStore& store) {
    return {store.get("fourier.pos"), store.get("fourier.time")};
}

void add_fourier_params(ParamStore& store, std::size_t d, double sigma, Rng& rng, double time_sigma) {
    FourierEncoder enc = FourierEncoder::random(d, sigma, rng, time_sigma);
    store.add("fourier.pos", std::move(enc.pos));
    store.add("fourier.time", std::move(enc.time));
}

Matrix fourier_features(const Matrix& x, const Matrix& w) {
    const Matrix phase = matmul_nt(x, w);
    const std::size_t half = w.rows();
    const double s = 1.0 / std::sqrt(static_cast<double>(2 * half));
    Matrix out(x.rows(), 2 * half);
    for (std::size_t n = 0; n < x.rows(); ++n) {
        for (std::size_t j = 0; j < half; ++j) {
            out(n, j) = s * std::cos(phase(n, j));
            out(n, half + j) = s * std::sin(phase(n, j));
        }
    }
    return out;
}

FourierGrads fourier_features_backward(const Matrix& x, const Matrix& w, const Matrix& dout) {
    const Matrix phase = matmul_nt(x, w);
    const std::size_t half = w.rows();
    const double s = 1.0 / std::sqrt(static_cast<double>(2 * half));
    Matrix dphase(x.rows(), half);
    for (std::size_t n = 0; n < x.rows(); ++n) {
        for (std::size_t j = 0; j < half; ++j) {
            dphase(n, j) = s * (-std::sin(phase(n, j)) * dout(n, j) + std::cos(phase(n, j)) * dout(n, half + j));
        }
    }
    return {matmul_tn(dphase, x), matmul(dphase, w)};
}

Matrix encode_position(const FourierEncoder& enc, const Matrix& xyz) {
    if (xyz.cols() != 3) throw DimensionError("encode_position: expected N×3, got " + xyz.shape_str());
    return fourier_features(xyz, enc.pos);
}

std::vector<double> motion_modulation(std::span<const double> flow_mag, std::size_t tokens_per_frame) {
    if (tokens_per_frame == 0 || flow_mag.size() % tokens_per_frame) {
        throw DimensionError("motion_modulation: " + std::to_string(flow_mag.size()) +
                             " tokens do not split into frames of " + std::to_string(tokens_per_frame));
    }
    std::vector<double> m(flow_mag.size());
    for (std::size_t f0 = 0; f0 < flow_mag.size(); f0 += tokens_per_frame) {
        const auto frame = flow_mag.subspan(f0, tokens_per_frame);
        const double mx = *std::max_element(frame.begin(), frame.end());
        double sum = 0.0;
        for (std::size_t i = 0; i < frame.size(); ++i) {
            m[f0 + i] = std::exp(frame[i] - mx);
            sum += m[f0 + i];
        }
        for (std::size_t i = 0; i < frame.size(); ++i) m[f0 + i] = 1.0 + m[f0 + i] / sum;
    }
    return m;
}

Matrix encode_time(const FourierEncoder& enc, const Matrix& t, std::span<const double> flow_mag,
                   std::size_t tokens_per_frame) {
    if (t.cols() != 1) throw DimensionError("encode_time: expected N×1, got " + t.shape_str());
    if (flow_mag.size() != t.rows()) {
        throw DimensionError("encode_time: " + t.shape_str() + " times vs " + std::to_string(flow_mag.size()) +
                             " flow values");
    }
    Matrix out = fourier_features(t, enc.time);
    const auto m = motion_modulation(flow_mag, tokens_per_frame);
    for (std::size_t n = 0; n < out.rows(); ++n)
        for (double& v : out.row(n)) v *= m[n];
    return out;
}

void add_prompt_params(ParamStore& store, std::size_t d, std::size_t hidden, std::size_t d_p, Rng& rng) {
    add_linear(store, "prompt.wp", 2 * d, 2 * d, rng, false);
    add_mlp(store, "prompt.align", 2 * d, hidden, d_p, rng);
}

PromptEmbedding assemble_prompt(const Matrix& p_xyz, const Matrix& p_t, const ParamStore& store,
                                const GridLayout& layout, PromptCache* cache) {
    if (p_xyz.rows() != p_t.rows() || p_xyz.cols() != p_t.cols()) {
        throw DimensionError("assemble_prompt: " + p_xyz.shape_str() + " vs " + p_t.shape_str());
    }
    Matrix concat = hconcat({&p_xyz, &p_t});
    Matrix mixed = linear_forward(store, "prompt.wp", concat);
    MlpCache mc;
    PromptEmbedding out{mlp_forward(store, "prompt.align", mixed, cache ? &mc : nullptr), layout};
    if (cache) {
        cache->concat = std::move(concat);
        cache->mixed = std::move(mixed);
        cache->align = std::move(mc);
    }
    return out;
}

PromptGrads assemble_prompt_backward(ParamStore& store, const PromptCache& cache, const Matrix& dprompt,
                                     bool need_inputs) {
    const bool need_mixed = need_inputs || trainable(store, "prompt.wp.W");
    Matrix dmixed = mlp_backward(store, "prompt.align", cache.align, dprompt, need_mixed);
    if (!need_mixed) return {};
    Matrix dconcat = linear_backward(store, "prompt.wp", cache.concat, dmixed, need_inputs);
    if (!need_inputs) return {};
    const std::size_t d = dconcat.cols() / 2;
    return {slice_cols(dconcat, 0, d), slice_cols(dconcat, d, d)};
}

}  // namespace stp
