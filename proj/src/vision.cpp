#include "stprompt/vision.hpp"

#include <cmath>

namespace stp {

const char* to_string(FusionStrategy s) {
    switch (s) {
        case FusionStrategy::additive: return "additive";
        case FusionStrategy::concat: return "concat";
        case FusionStrategy::weighting: return "weighting";
        case FusionStrategy::attention: return "attention";
    }
    return "attention";
}

FusionStrategy fusion_from_string(const std::string& name) {
    if (name == "additive") return FusionStrategy::additive;
    if (name == "concat") return FusionStrategy::concat;
    if (name == "weighting") return FusionStrategy::weighting;
    if (name == "attention") return FusionStrategy::attention;
    throw std::invalid_argument("unknown fusion strategy: " + name);
}

Matrix patch_matrix(const std::vector<CameraFrame>& frames, std::size_t patch, GridLayout* layout) {
    GridLayout L;
    const auto ordered = order_frames(frames, patch, L);
    const std::size_t ch = ordered.front()->channels;
    Matrix x(L.token_count(), patch * patch * ch);
    std::size_t tok = 0;
    for (const CameraFrame* f : ordered) {
        for (std::size_t pr = 0; pr < L.rows; ++pr) {
            for (std::size_t pc = 0; pc < L.cols; ++pc, ++tok) {
                std::size_t k = 0;
                for (std::size_t r = 0; r < patch; ++r)
                    for (std::size_t c = 0; c < patch; ++c)
                        for (std::size_t cc = 0; cc < ch; ++cc) x(tok, k++) = f->pixel(pr * patch + r, pc * patch + c, cc);
            }
        }
    }
    if (layout) *layout = L;
    return x;
}

void add_patch_params(ParamStore& store, std::size_t patch_dim, std::size_t d_p, double scale, Rng& rng) {
    Rng rw = rng.split("patch.W");
    Matrix w = xavier_uniform(patch_dim, d_p, rw) * scale;
    // Mid-grey patches map to the origin.
    Matrix b = column_sums(w) * -0.5;
    store.add("patch.W", std::move(w));
    store.add("patch.b", std::move(b));
}

Matrix encode_patches(const Matrix& patches, const ParamStore& store) {
    return linear_forward(store, "patch", patches);
}

Matrix encode_patches(const std::vector<CameraFrame>& frames, std::size_t patch, const ParamStore& store) {
    const Matrix x = patch_matrix(frames, patch);
    if (x.cols() != store.get("patch.W").rows()) {
        throw DimensionError("encode_patches: patch vectors " + x.shape_str() + " vs weights " +
                             store.get("patch.W").shape_str());
    }
    return encode_patches(x, store);
}

void encode_patches_backward(ParamStore& store, const Matrix& patches, const Matrix& df) {
    linear_backward(store, "patch", patches, df, false);
}

// ---------------------------------------------------------------------------

namespace {

Matrix frame_rows(const Matrix& m, const GridLayout& L, std::size_t frame) {
    return slice_rows(m, frame * L.tokens_per_frame(), L.tokens_per_frame());
}

}  // namespace

Matrix disentangle_spatial(const Matrix& f, const GridLayout& L, DisentangleCache* cache) {
    if (L.views < 2) {
        throw DisentanglementError(
            "spatial disentanglement needs at least two views; use 3D-ablation mode (f_s := f)");
    }
    if (f.rows() != L.token_count()) throw DimensionError("disentangle_spatial: rows vs layout");
    const double scale = 1.0 / std::sqrt(static_cast<double>(f.cols()));
    const double w = 1.0 / static_cast<double>(L.views - 1);
    Matrix out(f.rows(), f.cols());
    for (std::size_t t = 0; t < L.frames; ++t) {
        for (std::size_t i = 0; i < L.views; ++i) {
            const std::size_t qi = L.frame_index(i, t);
            const Matrix q = frame_rows(f, L, qi);
            Matrix acc(q.rows(), q.cols());
            for (std::size_t j = 0; j < L.views; ++j) {
                if (j == i) continue;
                const std::size_t kj = L.frame_index(j, t);
                const Matrix kv = frame_rows(f, L, kj);
                AttentionCache ac;
                acc += attention(q, kv, kv, scale, cache ? &ac : nullptr) * w;
                if (cache) cache->pairs.push_back({qi, kj, w, std::move(ac)});
            }
            add_rows(out, qi * L.tokens_per_frame(), acc);
        }
    }
    return out;
}

Matrix disentangle_temporal(const Matrix& f, const GridLayout& L, DisentangleCache* cache) {
    if (L.frames < 2) {
        throw DisentanglementError(
            "temporal disentanglement needs at least two frames; use static-ablation mode (f_t := 0)");
    }
    if (f.rows() != L.token_count()) throw DimensionError("disentangle_temporal: rows vs layout");
    const double scale = 1.0 / std::sqrt(static_cast<double>(f.cols()));
    Matrix out(f.rows(), f.cols());
    for (std::size_t v = 0; v < L.views; ++v) {
        for (std::size_t t = 0; t < L.frames; ++t) {
            const std::size_t nb = (t + 1 < L.frames) ? t + 1 : t - 1;
            const std::size_t qi = L.frame_index(v, t);
            const std::size_t kj = L.frame_index(v, nb);
            const Matrix q = frame_rows(f, L, qi);
            const Matrix kv = frame_rows(f, L, kj);
            AttentionCache ac;
            add_rows(out, qi * L.tokens_per_frame(), attention(q, kv, kv, scale, cache ? &ac : nullptr));
            if (cache) cache->pairs.push_back({qi, kj, 1.0, std::move(ac)});
        }
    }
    return out;
}

Matrix disentangle_backward(const DisentangleCache& cache, const Matrix& dout, const GridLayout& L) {
    Matrix df(dout.rows(), dout.cols());
    const std::size_t n = L.tokens_per_frame();
    for (const auto& p : cache.pairs) {
        Matrix d = frame_rows(dout, L, p.query_frame);
        d *= p.weight;
        const AttentionGrads g = attention_backward(p.attn, d);
        add_rows(df, p.query_frame * n, g.dq);
        add_rows(df, p.key_frame * n, g.dk);
        add_rows(df, p.key_frame * n, g.dv);
    }
    return df;
}

// ---------------------------------------------------------------------------

void add_fusion_params(ParamStore& store, FusionStrategy strategy, std::size_t d_p, Rng& rng) {
    switch (strategy) {
        case FusionStrategy::attention:
            add_linear(store, "fusion.wq", d_p, d_p, rng, false);
            add_linear(store, "fusion.wk", d_p, d_p, rng, false);
            add_linear(store, "fusion.wv", d_p, d_p, rng, false);
            break;
        case FusionStrategy::weighting:
            add_linear(store, "fusion.mix", 2 * d_p, d_p, rng);
            break;
        case FusionStrategy::concat:
            add_linear(store, "fusion.mix", 3 * d_p, d_p, rng);
            break;
        case FusionStrategy::additive:
            return;
    }
    if (strategy != FusionStrategy::concat) {
        add_mlp(store, "gate", d_p, std::max<std::size_t>(1, d_p / 2), 1, rng);
    }
}

namespace {

void check_rows(const Matrix& f_s, const Matrix& f_t, const Matrix& p) {
    if (f_s.rows() != f_t.rows() || f_s.rows() != p.rows() || f_s.cols() != f_t.cols() || f_s.cols() != p.cols()) {
        throw DimensionError("fuse: f_s " + f_s.shape_str() + ", f_t " + f_t.shape_str() + ", prompt " +
                             p.shape_str() + " must agree");
    }
}

bool residual(const FusionOptions& opt) {
    return opt.prompt_residual &&
           (opt.strategy == FusionStrategy::attention || opt.strategy == FusionStrategy::weighting);
}

Matrix gated_combine(const Matrix& alpha, const Matrix& o, const Matrix& f_s) {
    Matrix out(o.rows(), o.cols());
    for (std::size_t n = 0; n < o.rows(); ++n) {
        const double a = alpha(n, 0);
        for (std::size_t c = 0; c < o.cols(); ++c) out(n, c) = a * o(n, c) + (1.0 - a) * f_s(n, c);
    }
    return out;
}

}  // namespace

Matrix fuse(const Matrix& f_s, const Matrix& f_t, const PromptEmbedding& prompt, const ParamStore& store,
            const FusionOptions& opt, FusionCache* cache) {
    const Matrix& p = prompt.vectors;
    check_rows(f_s, f_t, p);
    FusionCache local;
    FusionCache& c = cache ? *cache : local;
    c.options = opt;
    c.f_s = f_s;
    c.f_t = f_t;
    c.prompt = p;
    const std::size_t N = f_s.rows();
    const std::size_t dp = f_s.cols();

    if (opt.strategy == FusionStrategy::additive) {
        Matrix out = (f_s + f_t) * 0.5;
        out += p;
        return out;
    }
    if (opt.strategy == FusionStrategy::concat) {
        c.mix_input = hconcat({&f_s, &f_t, &p});
        return linear_forward(store, "fusion.mix", c.mix_input);
    }

    c.alpha = sigmoid(mlp_forward(store, "gate", p, &c.gate));

    if (opt.strategy == FusionStrategy::weighting) {
        c.mix_input = hconcat({&f_s, &f_t});
        c.o = linear_forward(store, "fusion.mix", c.mix_input);
    } else {
        if (opt.heads == 0 || dp % opt.heads) {
            throw DimensionError("fuse: " + std::to_string(opt.heads) + " heads do not divide width " +
                                 std::to_string(dp));
        }
        const GridLayout& L = prompt.layout;
        const bool framewise = opt.scope == KeyScope::frame;
        if (framewise && L.token_count() != N) {
            throw DimensionError("fuse: prompt layout does not match " + std::to_string(N) + " tokens");
        }
        c.q = linear_forward(store, "fusion.wq", p);
        c.ks = linear_forward(store, "fusion.wk", f_s);
        c.kt = linear_forward(store, "fusion.wk", f_t);
        c.vs = linear_forward(store, "fusion.wv", f_s);
        c.vt = linear_forward(store, "fusion.wv", f_t);
        const std::size_t groups = framewise ? L.frame_count() : 1;
        const std::size_t n = framewise ? L.tokens_per_frame() : N;
        const std::size_t dh = dp / opt.heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        c.o = Matrix(N, dp);
        c.groups.assign(groups, {});
        for (std::size_t g = 0; g < groups; ++g) {
            const std::size_t r0 = g * n;
            const Matrix qg = slice_rows(c.q, r0, n);
            const Matrix ksg = slice_rows(c.ks, r0, n), ktg = slice_rows(c.kt, r0, n);
            const Matrix vsg = slice_rows(c.vs, r0, n), vtg = slice_rows(c.vt, r0, n);
            const Matrix kg = vconcat({&ksg, &ktg});
            const Matrix vg = vconcat({&vsg, &vtg});
            Matrix og(n, dp);
            c.groups[g].resize(opt.heads);
            for (std::size_t h = 0; h < opt.heads; ++h) {
                const Matrix oh = attention(slice_cols(qg, h * dh, dh), slice_cols(kg, h * dh, dh),
                                            slice_cols(vg, h * dh, dh), scale, &c.groups[g][h]);
                add_cols(og, h * dh, oh);
            }
            add_rows(c.o, r0, og);
        }
        if (!cache) c.groups.clear();
    }
    if (residual(opt)) return gated_combine(c.alpha, c.o + p, f_s);
    return gated_combine(c.alpha, c.o, f_s);
}

FusionGrads fuse_backward(ParamStore& store, const FusionCache& c, const Matrix& df, bool need_features) {
    const auto& opt = c.options;
    const std::size_t N = df.rows();
    const std::size_t dp = df.cols();
    FusionGrads g{Matrix(N, dp), Matrix(N, dp), Matrix(N, dp)};

    if (opt.strategy == FusionStrategy::additive) {
        g.df_s = df * 0.5;
        g.df_t = df * 0.5;
        g.dprompt = df;
        return g;
    }
    if (opt.strategy == FusionStrategy::concat) {
        const Matrix dx = linear_backward(store, "fusion.mix", c.mix_input, df, true);
        g.df_s = slice_cols(dx, 0, dp);
        g.df_t = slice_cols(dx, dp, dp);
        g.dprompt = slice_cols(dx, 2 * dp, dp);
        return g;
    }

    // f_st = α·(o + r·p) + (1 − α)·f_s
    const bool res = residual(opt);
    Matrix dalpha_logit(N, 1);
    Matrix d_o(N, dp);
    for (std::size_t n = 0; n < N; ++n) {
        const double a = c.alpha(n, 0);
        double da = 0.0;
        for (std::size_t k = 0; k < dp; ++k) {
            const double branch = c.o(n, k) + (res ? c.prompt(n, k) : 0.0);
            da += df(n, k) * (branch - c.f_s(n, k));
            d_o(n, k) = a * df(n, k);
            g.df_s(n, k) += (1.0 - a) * df(n, k);
            if (res) g.dprompt(n, k) += a * df(n, k);
        }
        dalpha_logit(n, 0) = da * a * (1.0 - a);
    }
    g.dprompt += mlp_backward(store, "gate", c.gate, dalpha_logit, true);

    if (opt.strategy == FusionStrategy::weighting) {
        const Matrix dx = linear_backward(store, "fusion.mix", c.mix_input, d_o, need_features);
        if (need_features) {
            g.df_s += slice_cols(dx, 0, dp);
            g.df_t += slice_cols(dx, dp, dp);
        }
        return g;
    }

    const std::size_t groups = c.groups.size();
    const std::size_t n = N / groups;
    const std::size_t dh = dp / opt.heads;
    Matrix dq(N, dp), dks(N, dp), dkt(N, dp), dvs(N, dp), dvt(N, dp);
    for (std::size_t gi = 0; gi < groups; ++gi) {
        const std::size_t r0 = gi * n;
        const Matrix dog = slice_rows(d_o, r0, n);
        Matrix dqg(n, dp), dkg(2 * n, dp), dvg(2 * n, dp);
        for (std::size_t h = 0; h < opt.heads; ++h) {
            const AttentionGrads ag = attention_backward(c.groups[gi][h], slice_cols(dog, h * dh, dh));
            add_cols(dqg, h * dh, ag.dq);
            add_cols(dkg, h * dh, ag.dk);
            add_cols(dvg, h * dh, ag.dv);
        }
        add_rows(dq, r0, dqg);
        add_rows(dks, r0, slice_rows(dkg, 0, n));
        add_rows(dkt, r0, slice_rows(dkg, n, n));
        add_rows(dvs, r0, slice_rows(dvg, 0, n));
        add_rows(dvt, r0, slice_rows(dvg, n, n));
    }
    g.dprompt += linear_backward(store, "fusion.wq", c.prompt, dq, true);
    const Matrix a1 = linear_backward(store, "fusion.wk", c.f_s, dks, need_features);
    const Matrix a2 = linear_backward(store, "fusion.wk", c.f_t, dkt, need_features);
    const Matrix a3 = linear_backward(store, "fusion.wv", c.f_s, dvs, need_features);
    const Matrix a4 = linear_backward(store, "fusion.wv", c.f_t, dvt, need_features);
    if (need_features) {
        g.df_s += a1;
        g.df_s += a3;
        g.df_t += a2;
        g.df_t += a4;
    }
    return g;
}

Matrix project_tokens(const Matrix& f_st, const ParamStore& store, MlpCache* cache) {
    return mlp_forward(store, "proj", f_st, cache);
}

}  // namespace stp
