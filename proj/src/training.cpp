#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "stprompt/harness.hpp"

namespace stp {

using nlohmann::json;

double compute_silhouette(const Matrix& x, const std::vector<int>& labels) {
    if (labels.size() != x.rows()) throw DimensionError("compute_silhouette: labels vs rows");
    std::map<int, std::size_t> sizes;
    for (int l : labels) ++sizes[l];
    if (sizes.size() < 2) throw std::domain_error("silhouette undefined: fewer than two clusters");
    for (const auto& [l, n] : sizes)
        if (n < 2) throw std::domain_error("silhouette undefined: cluster " + std::to_string(l) + " has one member");
    std::vector<int> ids;
    for (const auto& kv : sizes) ids.push_back(kv.first);
    auto slot = [&](int l) { return static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), l) - ids.begin()); };

    const std::size_t n = x.rows();
    std::vector<double> sums(n * ids.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto xi = x.row(i);
        for (std::size_t j = i + 1; j < n; ++j) {
            const auto xj = x.row(j);
            double s = 0.0;
            for (std::size_t k = 0; k < xi.size(); ++k) s += (xi[k] - xj[k]) * (xi[k] - xj[k]);
            const double d = std::sqrt(s);
            sums[i * ids.size() + slot(labels[j])] += d;
            sums[j * ids.size() + slot(labels[i])] += d;
        }
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t own = slot(labels[i]);
        const double a = sums[i * ids.size() + own] / static_cast<double>(sizes[labels[i]] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < ids.size(); ++c) {
            if (c == own) continue;
            b = std::min(b, sums[i * ids.size() + c] / static_cast<double>(sizes[ids[c]]));
        }
        const double m = std::max(a, b);
        total += m > 0.0 ? (b - a) / m : 0.0;
    }
    return total / static_cast<double>(n);
}

namespace {

std::vector<SceneData> build_split(const ExperimentConfig& config, std::uint64_t seed, std::size_t count,
                                   const std::string& split) {
    std::vector<SceneData> out;
    for (const auto& spec : draw_scene_specs(config, seed, count, split)) out.push_back(prepare_scene(generate(spec), config));
    return out;
}

/// Rows with a static or dynamic label and their 0/1 labels.
std::pair<Matrix, std::vector<int>> labelled_rows(const Matrix& m, const std::vector<PatchLabel>& labels) {
    std::vector<std::size_t> keep;
    std::vector<int> y;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == PatchLabel::empty) continue;
        keep.push_back(i);
        y.push_back(labels[i] == PatchLabel::dynamic ? 1 : 0);
    }
    Matrix out(keep.size(), m.cols());
    for (std::size_t r = 0; r < keep.size(); ++r) std::copy(m.row(keep[r]).begin(), m.row(keep[r]).end(), out.row(r).begin());
    return {out, y};
}

void accumulate(LossBreakdown& acc, const LossBreakdown& l, double w) {
    acc.caption += w * l.caption;
    acc.qa += w * l.qa;
    acc.grounding += w * l.grounding;
    acc.dense += w * l.dense;
    acc.focus += w * l.focus;
    acc.total += w * l.total;
}

const std::vector<TaskFamily> kAllTasks{TaskFamily::caption, TaskFamily::qa, TaskFamily::grounding};

double eval_loss(const ExperimentConfig& config, ParamStore& store, std::vector<SceneData>& scenes, bool zero_prompt) {
    Pipeline pipe(config, store);
    double total = 0.0;
    for (auto& s : scenes) total += pipe.loss(s, kAllTasks, zero_prompt, false).total;
    return total / static_cast<double>(scenes.size());
}

}  // namespace

EvalMetrics evaluate(const ExperimentConfig& config, ParamStore& store, std::vector<SceneData>& scenes) {
    Pipeline pipe(config, store);
    EvalMetrics m;
    std::size_t qa = 0, qa_hit = 0, gr = 0, gr_hit = 0, cap = 0, cap_hit = 0;
    std::size_t tp = 0, pos = 0, tn = 0, neg = 0;
    double sil_raw = 0.0, sil_dis = 0.0, sil_fused = 0.0;
    std::size_t sil_n = 0;
    for (auto& s : scenes) {
        accumulate(m.loss, pipe.loss(s, kAllTasks, false, false), 1.0 / static_cast<double>(scenes.size()));
        const SceneForward fw = pipe.forward(s, false);
        for (std::size_t i = 0; i < s.examples.size(); ++i) {
            const auto& e = s.examples[i];
            const auto& p = fw.predictions[i];
            if (e.task == TaskFamily::qa) {
                double d2 = 0.0;
                for (int c = 0; c < 3; ++c) d2 += (p.xyz[c] - e.target_xyz[c]) * (p.xyz[c] - e.target_xyz[c]);
                ++qa;
                qa_hit += std::sqrt(d2) < 0.5;
            } else if (e.task == TaskFamily::grounding) {
                ++gr;
                gr_hit += p.frame == e.target_frame;
            } else {
                ++cap;
                cap_hit += p.color == e.target_class;
            }
        }
        for (std::size_t n = 0; n < s.labels.size(); ++n) {
            if (s.labels[n] == PatchLabel::empty) continue;
            const bool pred = fw.dynamic_logits[n] > 0.0;
            if (s.labels[n] == PatchLabel::dynamic) {
                ++pos;
                tp += pred;
            } else {
                ++neg;
                tn += !pred;
            }
        }
        const auto& fb = fw.features;
        const Matrix both = hconcat({&fb.f_s, &fb.f_t});
        auto [raw, y] = labelled_rows(fb.f, s.labels);
        std::size_t dyn = 0;
        for (int v : y) dyn += v;
        if (dyn < 2 || y.size() - dyn < 2) continue;
        sil_raw += compute_silhouette(raw, y);
        sil_dis += compute_silhouette(labelled_rows(both, s.labels).first, y);
        sil_fused += compute_silhouette(labelled_rows(fb.f_st, s.labels).first, y);
        ++sil_n;
    }
    auto frac = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
    m.sacc = frac(qa_hit, qa);
    m.tacc = frac(gr_hit, gr);
    m.combined = 0.5 * (m.sacc + m.tacc);
    m.caption_acc = frac(cap_hit, cap);
    m.dynamic_acc = 0.5 * (frac(tp, pos) + frac(tn, neg));
    if (sil_n) {
        m.silhouette = {sil_raw / static_cast<double>(sil_n), sil_dis / static_cast<double>(sil_n),
                        sil_fused / static_cast<double>(sil_n)};
    }
    return m;
}

SeedReport run_seed(const ExperimentConfig& config, std::uint64_t seed, ParamStore* trained,
                    const StageCallback& on_stage) {
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<SceneData> train = build_split(config, seed, config.train_scenes, "train");
    std::vector<SceneData> eval = build_split(config, seed, config.eval_scenes, "eval");

    ParamStore store;
    init_parameters(store, config, seed);
    Pipeline pipe(config, store);
    Rng order_rng = Rng(seed).split("order");

    SeedReport report;
    report.seed = seed;
    for (const auto& stage : config.stages) {
        set_trainable(store, stage.trainable);
        const bool patch_moves = trainable(store, "patch.W") || trainable(store, "patch.b");
        store.adam_m.clear();
        store.adam_v.clear();
        StageRecord rec;
        rec.name = stage.name;
        for (const auto& name : store.names()) (store.is_frozen(name) ? rec.frozen : rec.trainable).push_back(name);

        std::vector<std::size_t> order;
        double window = 0.0;
        std::size_t in_window = 0;
        AdamOptions opt;
        opt.lr = stage.lr;
        opt.weight_decay = config.weight_decay;
        for (std::size_t step = 1; step <= stage.steps; ++step) {
            if (order.empty()) {
                for (std::size_t i = 0; i < train.size(); ++i) order.push_back(i);
                order_rng.shuffle(order);
            }
            SceneData& s = train[order.back()];
            order.pop_back();
            store.zero_grads();
            const LossBreakdown l = pipe.loss(s, stage.tasks, stage.zero_prompt, true);
            adam_step(store, opt, step);
            if (patch_moves) {
                for (auto& d : train) d.cached = false;
            }
            window += l.total;
            ++in_window;
            if (in_window == config.curve_every || step == stage.steps) {
                rec.curve.push_back(window / static_cast<double>(in_window));
                window = 0.0;
                in_window = 0;
            }
        }
        if (patch_moves)
            for (auto& d : eval) d.cached = false;
        rec.final_train_loss = rec.curve.empty() ? 0.0 : rec.curve.back();
        rec.eval_loss = eval_loss(config, store, eval, stage.zero_prompt);
        if (on_stage) on_stage(rec, store);
        report.stages.push_back(std::move(rec));
    }
    report.metrics = evaluate(config, store, eval);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (trained) *trained = std::move(store);
    return report;
}

namespace {

void add_scaled(EvalMetrics& acc, const EvalMetrics& m, double w) {
    acc.sacc += w * m.sacc;
    acc.tacc += w * m.tacc;
    acc.combined += w * m.combined;
    acc.caption_acc += w * m.caption_acc;
    acc.dynamic_acc += w * m.dynamic_acc;
    acc.silhouette.raw += w * m.silhouette.raw;
    acc.silhouette.disentangled += w * m.silhouette.disentangled;
    acc.silhouette.fused += w * m.silhouette.fused;
    accumulate(acc.loss, m.loss, w);
}

}  // namespace

EvalMetrics mean_metrics(const std::vector<SeedReport>& seeds) {
    EvalMetrics m;
    for (const auto& s : seeds) add_scaled(m, s.metrics, 1.0 / static_cast<double>(seeds.size()));
    return m;
}

MetricsReport run_experiment(const ExperimentConfig& config) {
    config.validate();
    MetricsReport r;
    r.config = config;
    r.config_hash = config_hash(config);
    for (auto seed : config.seeds) r.seeds.push_back(run_seed(config, seed));
    r.mean = mean_metrics(r.seeds);
    return r;
}

// ---------------------------------------------------------------------------

namespace {

json loss_json(const LossBreakdown& l) {
    return {{"caption", l.caption}, {"qa", l.qa},       {"grounding", l.grounding},
            {"dense", l.dense},     {"focus", l.focus}, {"total", l.total}};
}

LossBreakdown loss_from(const json& j) {
    return {j.at("caption").get<double>(), j.at("qa").get<double>(), j.at("grounding").get<double>(),
            j.at("dense").get<double>(), j.at("focus").get<double>(), j.at("total").get<double>()};
}

json metrics_json(const EvalMetrics& m) {
    return {{"sacc", m.sacc},
            {"tacc", m.tacc},
            {"combined", m.combined},
            {"caption_acc", m.caption_acc},
            {"dynamic_acc", m.dynamic_acc},
            {"silhouette",
             {{"raw", m.silhouette.raw}, {"disentangled", m.silhouette.disentangled}, {"fused", m.silhouette.fused}}},
            {"loss", loss_json(m.loss)}};
}

EvalMetrics metrics_from(const json& j) {
    EvalMetrics m;
    m.sacc = j.at("sacc").get<double>();
    m.tacc = j.at("tacc").get<double>();
    m.combined = j.at("combined").get<double>();
    m.caption_acc = j.at("caption_acc").get<double>();
    m.dynamic_acc = j.at("dynamic_acc").get<double>();
    const auto& s = j.at("silhouette");
    m.silhouette = {s.at("raw").get<double>(), s.at("disentangled").get<double>(), s.at("fused").get<double>()};
    m.loss = loss_from(j.at("loss"));
    return m;
}

}  // namespace

json report_to_json(const MetricsReport& r, bool include_timing) {
    json seeds = json::array();
    for (const auto& s : r.seeds) {
        json stages = json::array();
        for (const auto& st : s.stages) {
            stages.push_back({{"name", st.name},
                              {"trainable", st.trainable},
                              {"frozen", st.frozen},
                              {"final_train_loss", st.final_train_loss},
                              {"eval_loss", st.eval_loss},
                              {"curve", st.curve}});
        }
        json sj = {{"seed", s.seed}, {"metrics", metrics_json(s.metrics)}, {"stages", stages}};
        if (include_timing) sj["seconds"] = s.seconds;
        seeds.push_back(std::move(sj));
    }
    return {{"config_hash", r.config_hash},
            {"config", config_to_json(r.config)},
            {"seeds", seeds},
            {"mean", metrics_json(r.mean)}};
}

MetricsReport report_from_json(const json& j) {
    MetricsReport r;
    try {
        r.config_hash = j.at("config_hash").get<std::string>();
        r.config = config_from_json(j.at("config"));
        for (const auto& sj : j.at("seeds")) {
            SeedReport s;
            s.seed = sj.at("seed").get<std::uint64_t>();
            s.metrics = metrics_from(sj.at("metrics"));
            s.seconds = sj.value("seconds", 0.0);
            for (const auto& st : sj.at("stages")) {
                StageRecord rec;
                rec.name = st.at("name").get<std::string>();
                rec.trainable = st.at("trainable").get<std::vector<std::string>>();
                rec.frozen = st.at("frozen").get<std::vector<std::string>>();
                rec.final_train_loss = st.at("final_train_loss").get<double>();
                rec.eval_loss = st.at("eval_loss").get<double>();
                rec.curve = st.at("curve").get<std::vector<double>>();
                s.stages.push_back(std::move(rec));
            }
            r.seeds.push_back(std::move(s));
        }
        r.mean = metrics_from(j.at("mean"));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed report: ") + e.what());
    }
    return r;
}

namespace {

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string metric_row(const std::string& label, const EvalMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-10s %6.1f %6.1f %6.1f %6.1f %6.1f  %6.3f %6.3f %6.3f", label.c_str(),
                  100 * m.sacc, 100 * m.tacc, 100 * m.combined, 100 * m.caption_acc, 100 * m.dynamic_acc,
                  m.silhouette.raw, m.silhouette.disentangled, m.silhouette.fused);
    return buf;
}

const char* kHeader = "           SAcc   TAcc   Comb   Capt   Dyn     sil(f) sil(st) sil(fst)";

}  // namespace

std::string report_table(const MetricsReport& r) {
    std::ostringstream os;
    os << "config " << r.config_hash << "  fusion=" << to_string(r.config.fusion)
       << " coord=" << to_string(r.config.coord) << " disentangle=" << (r.config.disentangle ? "on" : "off")
       << " text=" << to_string(r.config.text_coord) << "\n";
    os << kHeader << "\n";
    for (const auto& s : r.seeds) os << metric_row("seed " + std::to_string(s.seed), s.metrics) << "\n";
    os << metric_row("mean", r.mean) << "\n";
    for (const auto& s : r.seeds) {
        os << "seed " << s.seed << " stage eval loss:";
        for (const auto& st : s.stages) os << " " << st.name << "=" << fmt("%.4f", st.eval_loss);
        os << "\n";
    }
    return os.str();
}

std::string features_csv(const FeatureBundle& b, const std::vector<PatchLabel>& labels) {
    const auto& L = b.layout;
    std::ostringstream os;
    os << "view,time,row,col,label,stage";
    for (std::size_t c = 0; c < b.f.cols(); ++c) os << ",c" << c;
    os << "\n";
    const std::pair<const char*, const Matrix*> stages[] = {
        {"raw", &b.f}, {"spatial", &b.f_s}, {"temporal", &b.f_t}, {"fused", &b.f_st}};
    char buf[32];
    for (const auto& [name, m] : stages) {
        for (std::size_t v = 0; v < L.views; ++v)
            for (std::size_t t = 0; t < L.frames; ++t)
                for (std::size_t r = 0; r < L.rows; ++r)
                    for (std::size_t c = 0; c < L.cols; ++c) {
                        const std::size_t tok = L.token(v, t, r, c);
                        const auto lab = labels[tok];
                        os << v << "," << t << "," << r << "," << c << ","
                           << (lab == PatchLabel::dynamic ? "dynamic" : lab == PatchLabel::static_bg ? "static" : "empty")
                           << "," << name;
                        for (double x : m->row(tok)) {
                            std::snprintf(buf, sizeof buf, ",%.9g", x);
                            os << buf;
                        }
                        os << "\n";
                    }
    }
    return os.str();
}

}  // namespace stp
