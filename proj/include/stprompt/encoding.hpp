#pragma once

#include <span>
#include <vector>

#include "stprompt/geometry.hpp"
#include "stprompt/layers.hpp"
#include "stprompt/numerics.hpp"

namespace stp {

/// Learnable Fourier features shared by the vision and language sides.
/// Output width d = 2·rows; both frequency matrices have d/2 rows.
struct FourierEncoder {
    Matrix pos;   // (d/2)×3
    Matrix time;  // (d/2)×1

    std::size_t width() const { return 2 * pos.rows(); }

    /// Frequencies drawn from N(0, σ²); the time rows use `time_sigma` when positive.
    static FourierEncoder random(std::size_t d, double sigma, Rng& rng, double time_sigma = 0.0);
    static FourierEncoder from_store(const ParamStore& store);
};

/// Row n: (1/√d)·[cos(xₙWᵀ) ‖ sin(xₙWᵀ)] with d = 2·rows(W).
Matrix fourier_features(const Matrix& x, const Matrix& w);

struct FourierGrads {
    Matrix dw;
    Matrix dx;
};
FourierGrads fourier_features_backward(const Matrix& x, const Matrix& w, const Matrix& dout);

Matrix encode_position(const FourierEncoder& enc, const Matrix& xyz);

/// mₙ = 1 + softmax over the tokens of n's frame of the flow magnitudes.
/// Consecutive runs of `tokens_per_frame` entries form one frame.
std::vector<double> motion_modulation(std::span<const double> flow_mag, std::size_t tokens_per_frame);

/// Temporal Fourier features scaled per row by the motion modulation.
Matrix encode_time(const FourierEncoder& enc, const Matrix& t, std::span<const double> flow_mag,
                   std::size_t tokens_per_frame);

/// The encoded 4D prompt, one row per patch token.
struct PromptEmbedding {
    Matrix vectors;
    GridLayout layout;
};

struct PromptCache {
    Matrix concat;    // [p_xyz ‖ p_t]
    Matrix mixed;     // concat · w_p
    MlpCache align;
};

/// p_4D = MLP(w_p · [p_xyz ‖ p_t]). Reads "prompt.wp.W" (2d×2d) and the
/// "prompt.align" MLP (2d → hidden → d_p).
PromptEmbedding assemble_prompt(const Matrix& p_xyz, const Matrix& p_t, const ParamStore& store,
                                const GridLayout& layout = {}, PromptCache* cache = nullptr);

struct PromptGrads {
    Matrix dp_xyz;
    Matrix dp_t;
};
PromptGrads assemble_prompt_backward(ParamStore& store, const PromptCache& cache, const Matrix& dprompt,
                                     bool need_inputs = true);

void add_prompt_params(ParamStore& store, std::size_t d, std::size_t hidden, std::size_t d_p, Rng& rng);
void add_fourier_params(ParamStore& store, std::size_t d, double sigma, Rng& rng, double time_sigma = 0.0);

}  // namespace stp
