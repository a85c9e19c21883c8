#include <algorithm>
#include <cmath>

#include "stprompt/harness.hpp"

namespace stp {

std::vector<SceneSpec> draw_scene_specs(const ExperimentConfig& config, std::uint64_t seed, std::size_t count,
                                        const std::string& split) {
    Rng rng = Rng(seed).split("scenes/" + split);
    std::vector<SceneSpec> specs;
    specs.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        specs.push_back(random_scene_spec(config.scene, config.min_objects, config.max_objects, rng));
    return specs;
}

SceneData prepare_scene(const Scene& scene, const ExperimentConfig& config) {
    SceneData d;
    d.id = scene.id;
    const std::size_t patch = scene.spec.patch;
    d.patches = patch_matrix(scene.frames, patch, &d.layout);
    d.grid = build_coord_grid(scene.frames, patch, scene.spec.aabb);
    const auto& L = d.layout;
    if (config.flow == FlowSource::analytic) {
        d.grid.flow_mag = scene.truth.flow;
    } else {
        GridLayout tmp;
        const auto ordered = order_frames(scene.frames, patch, tmp);
        for (std::size_t v = 0; v < L.views; ++v) {
            for (std::size_t t = 0; t < L.frames; ++t) {
                if (L.frames < 2) break;
                const std::size_t nb = t + 1 < L.frames ? t + 1 : t - 1;
                const auto flow = block_matching_flow(*ordered[L.frame_index(v, t)], *ordered[L.frame_index(v, nb)],
                                                      patch, config.bm_window, config.bm_search);
                std::copy(flow.begin(), flow.end(),
                          d.grid.flow_mag.begin() + static_cast<long>(L.frame_index(v, t) * L.tokens_per_frame()));
            }
        }
    }
    d.labels = scene.truth.labels;
    const InstructionSet set = emit_instructions(scene.truth, config.templates, scene.id);
    for (const auto& p : set.pairs) {
        Example e;
        e.tokens = parse_instruction(p.instruction, config.model.vocab);
        e.task = p.task;
        e.templ = p.templ;
        e.target_xyz = p.target_xyz;
        e.target_frame = p.target_frame;
        e.target_class = p.target_class;
        for (std::size_t v = 0; v < L.views; ++v) {
            for (std::size_t r = 0; r < L.rows; ++r) {
                for (std::size_t c = 0; c < L.cols; ++c) {
                    const std::size_t n = L.token(v, static_cast<std::size_t>(p.target_frame), r, c);
                    if (scene.truth.token_object[n] == p.object) e.focus.push_back(n);
                }
            }
        }
        d.examples.push_back(std::move(e));
    }
    return d;
}

// ---------------------------------------------------------------------------

void init_parameters(ParamStore& store, const ExperimentConfig& config, std::uint64_t seed) {
    const auto& m = config.model;
    const auto& s = config.scene;
    Rng rng = Rng(seed).split("params");
    add_patch_params(store, s.patch * s.patch * s.channels, m.d_p, m.patch_scale, rng);
    add_fourier_params(store, m.d, m.fourier_sigma, rng, m.time_sigma);
    add_prompt_params(store, m.d, m.hidden, m.d_p, rng);
    add_fusion_params(store, config.fusion, m.d_p, rng);
    add_mlp(store, "proj", m.d_p, m.hidden, m.d_l, rng);
    add_language_params(store, m.vocab, m.d, m.d_l, m.tie_scales, rng);
    add_linear(store, "probe.q", m.d_l, m.probe_dim, rng);
    add_linear(store, "probe.k", m.d_l, m.probe_dim, rng, false);
    add_linear(store, "probe.v", m.d_l, m.probe_dim, rng, false);
    store.add("probe.gain", Matrix(1, 1, 0.0));  // log scale on attention scores
    const std::size_t h = m.probe_dim;
    add_linear(store, "probe.xyz", h, 3, rng);
    add_linear(store, "probe.time", h, s.frames, rng);
    add_linear(store, "probe.caption", h, palette_names().size(), rng);
    add_linear(store, "probe.dyn", m.d_l, 1, rng);
}

std::vector<std::string> group_parameters(const ParamStore& store, const std::string& group) {
    std::vector<std::string> prefixes;
    if (group == "lang.table") {
        prefixes = {"lang.table", "lang.placeholder"};
    } else if (group == "lang.coord") {
        prefixes = {"lang.ws", "lang.wt", "lang.align.", "lang.raw_pos.", "lang.raw_time."};
    } else {
        const auto& groups = parameter_groups();
        if (std::find(groups.begin(), groups.end(), group) == groups.end()) {
            throw ConfigError("unknown parameter group '" + group + "'");
        }
        prefixes = {group + "."};
    }
    std::vector<std::string> out;
    for (const auto& [name, value] : store.params) {
        for (const auto& p : prefixes) {
            const bool exact = p.back() != '.';
            if (exact ? name == p : name.rfind(p, 0) == 0) {
                out.push_back(name);
                break;
            }
        }
    }
    return out;
}

void set_trainable(ParamStore& store, const std::vector<std::string>& groups) {
    store.frozen.clear();
    for (const auto& kv : store.params) store.frozen.insert(kv.first);
    for (const auto& g : groups)
        for (const auto& name : group_parameters(store, g)) store.frozen.erase(name);
}

// ---------------------------------------------------------------------------

Pipeline::Pipeline(const ExperimentConfig& config, ParamStore& store) : config_(config), store_(store) {}

namespace {

bool patch_trainable(const ParamStore& store) { return trainable(store, "patch.W") || trainable(store, "patch.b"); }

bool enabled(const std::vector<TaskFamily>& tasks, TaskFamily t) {
    return std::find(tasks.begin(), tasks.end(), t) != tasks.end();
}

/// Softmax cross-entropy of a 1×C logit row; returns the loss and writes dlogits.
double cross_entropy(const Matrix& logits, int target, Matrix& dlogits) {
    dlogits = softmax_rows(logits);
    const double loss = -std::log(std::max(dlogits(0, static_cast<std::size_t>(target)), 1e-300));
    dlogits(0, static_cast<std::size_t>(target)) -= 1.0;
    return loss;
}

std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

void Pipeline::cache_features(SceneData& scene) const {
    if (scene.cached || patch_trainable(store_)) return;
    scene.f = encode_patches(scene.patches, store_);
    if (config_.disentangle) {
        scene.f_s = disentangle_spatial(scene.f, scene.layout);
        scene.f_t = disentangle_temporal(scene.f, scene.layout);
    } else {
        scene.f_s = scene.f;
        scene.f_t = scene.f;
    }
    scene.cached = true;
}

namespace {

struct Pass {
    const ExperimentConfig& config;
    ParamStore& store;
    SceneData& scene;
    bool zero_prompt;

    Pass(const ExperimentConfig& c, ParamStore& st, SceneData& sd, bool zp)
        : config(c), store(st), scene(sd), zero_prompt(zp) {}

    // forward state
    Matrix f, f_s, f_t;
    DisentangleCache sc, tc;
    bool prompt_active = false;
    Matrix pxyz, pt;
    PromptCache pc;
    Matrix prompt;
    std::vector<double> modulation;
    FusionCache fc;
    Matrix f_st;
    MlpCache projc;
    Matrix tau;

    void visual(bool keep_caches) {
        const auto& L = scene.layout;
        const bool train_patch = patch_trainable(store);
        if (scene.cached && !train_patch) {
            f = scene.f;
            f_s = scene.f_s;
            f_t = scene.f_t;
        } else {
            f = encode_patches(scene.patches, store);
            if (config.disentangle) {
                f_s = disentangle_spatial(f, L, keep_caches ? &sc : nullptr);
                f_t = disentangle_temporal(f, L, keep_caches ? &tc : nullptr);
            } else {
                f_s = f;
                f_t = f;
            }
        }
        const std::size_t N = f.rows();
        prompt_active = !zero_prompt && config.coord != CoordMode::none;
        if (prompt_active) {
            const FourierEncoder enc = FourierEncoder::from_store(store);
            const Matrix xyz = slice_cols(scene.grid.coords, 0, 3);
            const Matrix t = slice_cols(scene.grid.coords, 3, 1);
            pxyz = config.coord != CoordMode::time_only ? encode_position(enc, xyz) : Matrix(N, config.model.d);
            if (config.coord != CoordMode::pos_only) {
                pt = encode_time(enc, t, scene.grid.flow_mag, L.tokens_per_frame());
                modulation = motion_modulation(scene.grid.flow_mag, L.tokens_per_frame());
            } else {
                pt = Matrix(N, config.model.d);
            }
            prompt = assemble_prompt(pxyz, pt, store, L, keep_caches ? &pc : nullptr).vectors;
        } else {
            prompt = Matrix(N, config.model.d_p);
        }
        FusionOptions opt;
        opt.strategy = config.fusion;
        opt.heads = config.model.heads;
        opt.scope = config.model.key_scope;
        opt.prompt_residual = config.model.prompt_residual;
        f_st = fuse(f_s, f_t, PromptEmbedding{prompt, L}, store, opt, &fc);
        tau = project_tokens(f_st, store, &projc);
    }

    void visual_backward(const Matrix& dtau) {
        const bool train_patch = patch_trainable(store);
        const Matrix df_st = mlp_backward(store, "proj", projc, dtau, true);
        const FusionGrads g = fuse_backward(store, fc, df_st, train_patch);
        if (prompt_active) {
            const bool fourier = trainable(store, "fourier.pos") || trainable(store, "fourier.time");
            const PromptGrads pg = assemble_prompt_backward(store, pc, g.dprompt, fourier);
            if (fourier) {
                if (config.coord != CoordMode::time_only) {
                    const Matrix xyz = slice_cols(scene.grid.coords, 0, 3);
                    accumulate_grad(store, "fourier.pos",
                                    fourier_features_backward(xyz, store.get("fourier.pos"), pg.dp_xyz).dw);
                }
                if (config.coord != CoordMode::pos_only) {
                    const Matrix t = slice_cols(scene.grid.coords, 3, 1);
                    Matrix dff = pg.dp_t;
                    for (std::size_t n = 0; n < dff.rows(); ++n)
                        for (double& v : dff.row(n)) v *= modulation[n];
                    accumulate_grad(store, "fourier.time",
                                    fourier_features_backward(t, store.get("fourier.time"), dff).dw);
                }
            }
        }
        if (!train_patch) return;
        Matrix df;
        if (config.disentangle) {
            df = disentangle_backward(sc, g.df_s, scene.layout);
            df += disentangle_backward(tc, g.df_t, scene.layout);
        } else {
            df = g.df_s + g.df_t;
        }
        encode_patches_backward(store, scene.patches, df);
    }
};

}  // namespace

ProbeOutput probe_loss(ParamStore& store, const ExperimentConfig& config, const Matrix& tau_v,
                       const std::vector<Example>& examples, const std::vector<PatchLabel>& labels,
                       const std::vector<TaskFamily>& tasks, bool backward) {
    const Matrix tau = rms_norm(tau_v);
    const std::size_t N = tau.rows();
    const double scale =
        std::exp(store.get("probe.gain")(0, 0)) / std::sqrt(static_cast<double>(config.model.probe_dim));
    const Matrix keys = linear_forward(store, "probe.k", tau);
    const Matrix values = linear_forward(store, "probe.v", tau);
    // Dynamic-token logits double as an additive attention bias.
    const Matrix logits = linear_forward(store, "probe.dyn", tau);

    ProbeOutput out;
    auto& loss = out.loss;
    std::map<TaskFamily, std::size_t> counts;
    for (const auto& e : examples)
        if (enabled(tasks, e.task)) ++counts[e.task];

    Matrix dtau(N, tau.cols());
    Matrix dkeys(N, keys.cols()), dvalues(N, values.cols()), dlogits(N, 1);
    for (const auto& e : examples) {
        if (!enabled(tasks, e.task)) continue;
        const double w = 1.0 / static_cast<double>(counts[e.task]);
        LanguageCache lc;
        const Matrix emb = embed_sequence(e.tokens, store, config.text_coord, &lc);
        Matrix u = column_sums(emb);
        u *= 1.0 / static_cast<double>(emb.rows());
        const Matrix q = linear_forward(store, "probe.q", u);
        Matrix scores = matmul_nt(q, keys);
        scores *= scale;
        Matrix biased = scores;
        for (std::size_t n = 0; n < N; ++n) biased(0, n) += logits(n, 0);
        const Matrix a = softmax_rows(biased);
        const Matrix z = matmul(a, values);
        const Matrix& h = z;

        // Attention mass on the referenced object's tokens.
        double focus_mass = 0.0;
        if (config.focus_weight > 0.0 && !e.focus.empty()) {
            for (auto n : e.focus) focus_mass += a(0, n);
            loss.focus -= w * config.focus_weight * std::log(std::max(focus_mass, 1e-300));
        }

        Matrix dhead;
        std::string head;
        double l = 0.0;
        if (e.task == TaskFamily::caption) {
            head = "probe.caption";
            l = cross_entropy(linear_forward(store, head, h), e.target_class, dhead);
            loss.caption += w * l;
        } else if (e.task == TaskFamily::qa) {
            head = "probe.xyz";
            const Matrix y = linear_forward(store, head, h);
            dhead = Matrix(1, 3);
            for (std::size_t c = 0; c < 3; ++c) {
                const double r = y(0, c) - e.target_xyz[c];
                l += 0.5 * r * r;
                dhead(0, c) = r;
            }
            loss.qa += w * l;
        } else {
            head = "probe.time";
            l = cross_entropy(linear_forward(store, head, h), e.target_frame, dhead);
            loss.grounding += w * l;
        }
        if (!backward) continue;
        dhead *= w;
        const Matrix dh = linear_backward(store, head, h, dhead, true);
        const Matrix& dz = dh;
        dvalues += matmul_tn(a, dz);
        Matrix da = matmul_nt(dz, values);
        if (focus_mass > 0.0) {
            for (auto n : e.focus) da(0, n) -= w * config.focus_weight / focus_mass;
        }
        Matrix ds = softmax_rows_backward(a, da);
        for (std::size_t n = 0; n < N; ++n) dlogits(n, 0) += ds(0, n);
        if (!store.is_frozen("probe.gain")) {
            double dg = 0.0;
            for (std::size_t n = 0; n < N; ++n) dg += ds(0, n) * scores(0, n);
            store.grad("probe.gain")(0, 0) += dg;
        }
        ds *= scale;
        dkeys += matmul_tn(ds, q);
        const Matrix du = linear_backward(store, "probe.q", u, matmul(ds, keys), true);
        Matrix demb(emb.rows(), emb.cols());
        for (std::size_t r = 0; r < emb.rows(); ++r)
            for (std::size_t c = 0; c < emb.cols(); ++c) demb(r, c) = du(0, c) / static_cast<double>(emb.rows());
        embed_sequence_backward(store, lc, demb);
    }

    if (enabled(tasks, TaskFamily::caption) && config.dense_weight > 0.0) {
        std::size_t pos = 0, neg = 0;
        for (auto l : labels) {
            pos += l == PatchLabel::dynamic;
            neg += l == PatchLabel::static_bg;
        }
        const double wd = config.dense_weight;
        for (std::size_t n = 0; n < N; ++n) {
            if (labels[n] == PatchLabel::empty) continue;
            const bool y = labels[n] == PatchLabel::dynamic;
            const double cw = 0.5 / static_cast<double>(y ? pos : neg);
            const double x = logits(n, 0);
            // −log σ(x) = softplus(−x); −log(1 − σ(x)) = softplus(x)
            const double sp = y ? std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x)))
                                : std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
            loss.dense += cw * sp;
            dlogits(n, 0) += wd * cw * (sigmoid(x) - (y ? 1.0 : 0.0));
        }
        loss.dense *= wd;
    }
    loss.total = loss.caption + loss.qa + loss.grounding + loss.dense + loss.focus;
    if (!backward) return out;
    dtau += linear_backward(store, "probe.dyn", tau, dlogits, true);
    dtau += linear_backward(store, "probe.k", tau, dkeys, true);
    dtau += linear_backward(store, "probe.v", tau, dvalues, true);
    out.dtau = rms_norm_backward(tau_v, dtau);
    return out;
}

LossBreakdown Pipeline::loss(SceneData& scene, const std::vector<TaskFamily>& tasks, bool zero_prompt,
                             bool backward) {
    cache_features(scene);
    Pass pass(config_, store_, scene, zero_prompt);
    pass.visual(backward);
    ProbeOutput p = probe_loss(store_, config_, pass.tau, scene.examples, scene.labels, tasks, backward);
    if (backward) pass.visual_backward(p.dtau);
    return p.loss;
}

SceneForward Pipeline::forward(SceneData& scene, bool zero_prompt) {
    cache_features(scene);
    Pass pass(config_, store_, scene, zero_prompt);
    pass.visual(false);
    SceneForward out;
    out.features = {scene.layout, pass.f, pass.f_s, pass.f_t, pass.f_st, pass.tau};
    out.prompt = pass.prompt;
    if (!pass.fc.groups.empty() && !pass.fc.groups[0].empty()) out.fusion_attention = pass.fc.groups[0][0].a;
    const double scale =
        std::exp(store_.get("probe.gain")(0, 0)) / std::sqrt(static_cast<double>(config_.model.probe_dim));
    const Matrix tau = rms_norm(pass.tau);
    const Matrix keys = linear_forward(store_, "probe.k", tau);
    const Matrix values = linear_forward(store_, "probe.v", tau);
    const Matrix logits = linear_forward(store_, "probe.dyn", tau);
    for (const auto& e : scene.examples) {
        const Matrix emb = embed_sequence(e.tokens, store_, config_.text_coord);
        Matrix u = column_sums(emb);
        u *= 1.0 / static_cast<double>(emb.rows());
        Matrix scores = matmul_nt(linear_forward(store_, "probe.q", u), keys);
        scores *= scale;
        for (std::size_t n = 0; n < scores.cols(); ++n) scores(0, n) += logits(n, 0);
        const Matrix z = matmul(softmax_rows(scores), values);
        const Matrix& h = z;
        Prediction p;
        const Matrix y = linear_forward(store_, "probe.xyz", h);
        p.xyz = {y(0, 0), y(0, 1), y(0, 2)};
        p.frame = static_cast<int>(argmax(linear_forward(store_, "probe.time", h).row(0)));
        p.color = static_cast<int>(argmax(linear_forward(store_, "probe.caption", h).row(0)));
        out.predictions.push_back(p);
    }
    out.dynamic_logits.assign(logits.data().begin(), logits.data().end());
    return out;
}

}  // namespace stp
