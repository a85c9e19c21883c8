#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "stprompt/encoding.hpp"
#include "stprompt/geometry.hpp"
#include "stprompt/layers.hpp"

namespace stp {

class DisentanglementError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

enum class FusionStrategy { additive, concat, weighting, attention };
enum class KeyScope { frame, global };

const char* to_string(FusionStrategy s);
FusionStrategy fusion_from_string(const std::string& name);

struct FusionOptions {
    FusionStrategy strategy = FusionStrategy::attention;
    std::size_t heads = 4;
    KeyScope scope = KeyScope::frame;
    /// Adds the prompt to the mixed branch before gating (attention and
    /// weighting); concat and additive already carry it.
    bool prompt_residual = true;
};

/// Raw, disentangled, fused and projected features sharing one layout.
struct FeatureBundle {
    GridLayout layout;
    Matrix f;
    Matrix f_s;
    Matrix f_t;
    Matrix f_st;
    Matrix tau_v;
};

/// Flattened P×P×C patches, one row per token in (view, time, row, col) order.
Matrix patch_matrix(const std::vector<CameraFrame>& frames, std::size_t patch, GridLayout* layout = nullptr);

/// f = X·W + b using "patch.W" and "patch.b".
Matrix encode_patches(const Matrix& patches, const ParamStore& store);
Matrix encode_patches(const std::vector<CameraFrame>& frames, std::size_t patch, const ParamStore& store);
void encode_patches_backward(ParamStore& store, const Matrix& patches, const Matrix& df);
void add_patch_params(ParamStore& store, std::size_t patch_dim, std::size_t d_p, double scale, Rng& rng);

struct DisentangleCache {
    struct Pair {
        std::size_t query_frame;
        std::size_t key_frame;
        double weight;
        AttentionCache attn;
    };
    std::vector<Pair> pairs;
};

/// Cross-view attention pooling averaged over the other views. Needs V ≥ 2.
Matrix disentangle_spatial(const Matrix& f, const GridLayout& layout, DisentangleCache* cache = nullptr);
/// Attention pooling over the next frame of the same view (previous frame for
/// the last one). Needs T ≥ 2.
Matrix disentangle_temporal(const Matrix& f, const GridLayout& layout, DisentangleCache* cache = nullptr);
/// Gradient with respect to f for either disentanglement.
Matrix disentangle_backward(const DisentangleCache& cache, const Matrix& dout, const GridLayout& layout);

struct FusionCache {
    FusionOptions options;
    Matrix f_s, f_t, prompt;
    Matrix q, ks, kt, vs, vt;   // projected, all tokens
    Matrix o;                   // attended output (attention) or mixed features (weighting)
    Matrix alpha;               // N×1
    MlpCache gate;
    Matrix mix_input;           // concat / weighting input
    std::vector<std::vector<AttentionCache>> groups;  // [group][head]
    std::vector<std::size_t> group_frames;            // frame index per group (frame scope)
};

void add_fusion_params(ParamStore& store, FusionStrategy strategy, std::size_t d_p, Rng& rng);

/// Gated cross-attention of prompt queries over frame-local [f_s, f_t] keys:
/// f_st = α·(o + p) + (1 − α)·f_s with α = σ(MLP_obj(p_4D)).
Matrix fuse(const Matrix& f_s, const Matrix& f_t, const PromptEmbedding& prompt, const ParamStore& store,
            const FusionOptions& options, FusionCache* cache = nullptr);

struct FusionGrads {
    Matrix df_s, df_t, dprompt;
};
FusionGrads fuse_backward(ParamStore& store, const FusionCache& cache, const Matrix& df_st,
                          bool need_features = true);

/// τ_v = MLP(f_st) with the "proj" MLP.
Matrix project_tokens(const Matrix& f_st, const ParamStore& store, MlpCache* cache = nullptr);

}  // namespace stp
