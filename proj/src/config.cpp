#include <algorithm>
#include <cstdio>

#include "stprompt/harness.hpp"
#include "stprompt/json_io.hpp"

namespace stp {

using nlohmann::json;

const char* to_string(CoordMode m) {
    switch (m) {
        case CoordMode::none: return "none";
        case CoordMode::pos_only: return "pos-only";
        case CoordMode::time_only: return "time-only";
        case CoordMode::full: return "full-4d";
    }
    return "full-4d";
}

CoordMode coord_mode_from_string(const std::string& name) {
    for (CoordMode m : {CoordMode::none, CoordMode::pos_only, CoordMode::time_only, CoordMode::full})
        if (name == to_string(m)) return m;
    throw ConfigError("unknown coordinate mode: " + name);
}

const char* to_string(FlowSource f) { return f == FlowSource::analytic ? "analytic" : "block-matching"; }

FlowSource flow_source_from_string(const std::string& name) {
    if (name == "analytic") return FlowSource::analytic;
    if (name == "block-matching") return FlowSource::block_matching;
    throw ConfigError("unknown flow source: " + name);
}

const std::vector<std::string>& parameter_groups() {
    static const std::vector<std::string> groups{"patch", "fourier", "prompt", "fusion", "gate",
                                                 "proj",  "probe",   "lang.table", "lang.coord"};
    return groups;
}

namespace {

TaskFamily task_from_string(const std::string& s) {
    for (TaskFamily t : {TaskFamily::caption, TaskFamily::qa, TaskFamily::grounding})
        if (s == to_string(t)) return t;
    throw ConfigError("unknown task family: " + s);
}

Template template_from_string(const std::string& s) {
    for (Template t : all_templates())
        if (s == to_string(t)) return t;
    throw ConfigError("unknown template: " + s);
}

const char* to_string(KeyScope s) { return s == KeyScope::frame ? "frame" : "global"; }

KeyScope scope_from_string(const std::string& s) {
    if (s == "frame") return KeyScope::frame;
    if (s == "global") return KeyScope::global;
    throw ConfigError("unknown key scope: " + s);
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [k, v] : j.items()) {
        if (std::none_of(keys.begin(), keys.end(), [&](const char* s) { return k == s; })) {
            throw ConfigError("unknown key '" + k + "' in " + where);
        }
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
    ExperimentConfig c;
    const auto all = std::vector<TaskFamily>{TaskFamily::caption, TaskFamily::qa, TaskFamily::grounding};
    c.stages = {
        {"stage1", 300, 3e-3, {TaskFamily::caption, TaskFamily::qa}, true,
         {"fusion", "gate", "proj", "probe", "lang.table"}},
        {"stage2", 300, 3e-3, {TaskFamily::grounding}, false,
         {"fourier", "prompt", "fusion", "gate", "lang.coord", "probe"}},
        {"stage3", 2000, 3e-3, all, false,
         {"fourier", "prompt", "fusion", "gate", "proj", "probe", "lang.table", "lang.coord"}},
    };
    return c;
}

void ExperimentConfig::validate() const {
    try {
        scene.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("scene: ") + e.what());
    }
    if (min_objects > max_objects) throw ConfigError("min_objects exceeds max_objects");
    if (train_scenes == 0 || eval_scenes == 0) throw ConfigError("scene counts must be positive");
    const auto& m = model;
    if (m.d == 0 || m.d % 2) throw ConfigError("model.d must be even and positive");
    if (m.d_p == 0 || m.d_l == 0 || m.hidden == 0 || m.probe_dim == 0 || m.vocab == 0) {
        throw ConfigError("model widths must be positive");
    }
    if (m.heads == 0 || m.d_p % m.heads) throw ConfigError("model.heads must divide model.d_p");
    if (!(m.fourier_sigma > 0.0) || !(m.time_sigma > 0.0) || !(m.patch_scale > 0.0)) throw ConfigError("scales must be positive");
    if (disentangle && (scene.views < 2 || scene.frames < 2)) {
        throw ConfigError("disentanglement needs at least two views and two frames");
    }
    if (stages.empty()) throw ConfigError("at least one stage is required");
    for (const auto& s : stages) {
        if (s.tasks.empty()) throw ConfigError("stage " + s.name + " has no tasks");
        for (const auto& g : s.trainable) {
            const auto& groups = parameter_groups();
            if (std::find(groups.begin(), groups.end(), g) == groups.end()) {
                throw ConfigError("stage " + s.name + " names unknown parameter group '" + g + "'");
            }
        }
        if (!(s.lr > 0.0)) throw ConfigError("stage " + s.name + " needs a positive learning rate");
    }
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (templates.empty()) throw ConfigError("at least one template is required");
}

json config_to_json(const ExperimentConfig& c) {
    json stages = json::array();
    for (const auto& s : c.stages) {
        json tasks = json::array();
        for (auto t : s.tasks) tasks.push_back(to_string(t));
        stages.push_back({{"name", s.name},
                          {"steps", s.steps},
                          {"lr", s.lr},
                          {"tasks", tasks},
                          {"zero_prompt", s.zero_prompt},
                          {"trainable", s.trainable}});
    }
    json templates = json::array();
    for (auto t : c.templates) templates.push_back(to_string(t));
    const auto& m = c.model;
    return {{"scene", scene_spec_to_json(c.scene)},
            {"min_objects", c.min_objects},
            {"max_objects", c.max_objects},
            {"train_scenes", c.train_scenes},
            {"eval_scenes", c.eval_scenes},
            {"templates", templates},
            {"model",
             {{"d", m.d},
              {"d_p", m.d_p},
              {"d_l", m.d_l},
              {"heads", m.heads},
              {"hidden", m.hidden},
              {"probe_dim", m.probe_dim},
              {"vocab", m.vocab},
              {"fourier_sigma", m.fourier_sigma},
              {"time_sigma", m.time_sigma},
              {"patch_scale", m.patch_scale},
              {"tie_scales", m.tie_scales},
              {"prompt_residual", m.prompt_residual},
              {"key_scope", to_string(m.key_scope)}}},
            {"flow", to_string(c.flow)},
            {"bm_window", c.bm_window},
            {"bm_search", c.bm_search},
            {"fusion", to_string(c.fusion)},
            {"coord", to_string(c.coord)},
            {"disentangle", c.disentangle},
            {"text_coord", to_string(c.text_coord)},
            {"stages", stages},
            {"weight_decay", c.weight_decay},
            {"dense_weight", c.dense_weight},
            {"focus_weight", c.focus_weight},
            {"curve_every", c.curve_every},
            {"seeds", c.seeds}};
}

ExperimentConfig config_from_json(const json& j) {
    reject_unknown(j,
                   {"scene", "min_objects", "max_objects", "train_scenes", "eval_scenes", "templates", "model", "flow",
                    "bm_window", "bm_search", "fusion", "coord", "disentangle", "text_coord", "stages",
                    "weight_decay", "dense_weight", "focus_weight", "curve_every", "seeds"},
                   "config");
    ExperimentConfig c = ExperimentConfig::defaults();
    try {
        if (j.contains("scene")) c.scene = scene_spec_from_json(j.at("scene"));
        read(j, "min_objects", c.min_objects);
        read(j, "max_objects", c.max_objects);
        read(j, "train_scenes", c.train_scenes);
        read(j, "eval_scenes", c.eval_scenes);
        if (j.contains("templates")) {
            c.templates.clear();
            for (const auto& t : j.at("templates")) c.templates.push_back(template_from_string(t.get<std::string>()));
        }
        if (j.contains("model")) {
            const auto& mj = j.at("model");
            reject_unknown(mj,
                           {"d", "d_p", "d_l", "heads", "hidden", "probe_dim", "vocab", "fourier_sigma", "time_sigma",
                            "patch_scale", "tie_scales", "prompt_residual", "key_scope"},
                           "model");
            auto& m = c.model;
            read(mj, "d", m.d);
            read(mj, "d_p", m.d_p);
            read(mj, "d_l", m.d_l);
            read(mj, "heads", m.heads);
            read(mj, "hidden", m.hidden);
            read(mj, "probe_dim", m.probe_dim);
            read(mj, "vocab", m.vocab);
            read(mj, "fourier_sigma", m.fourier_sigma);
            read(mj, "time_sigma", m.time_sigma);
            read(mj, "patch_scale", m.patch_scale);
            read(mj, "tie_scales", m.tie_scales);
            read(mj, "prompt_residual", m.prompt_residual);
            if (mj.contains("key_scope")) m.key_scope = scope_from_string(mj.at("key_scope").get<std::string>());
        }
        if (j.contains("flow")) c.flow = flow_source_from_string(j.at("flow").get<std::string>());
        read(j, "bm_window", c.bm_window);
        read(j, "bm_search", c.bm_search);
        if (j.contains("fusion")) {
            try {
                c.fusion = fusion_from_string(j.at("fusion").get<std::string>());
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
        }
        if (j.contains("coord")) c.coord = coord_mode_from_string(j.at("coord").get<std::string>());
        read(j, "disentangle", c.disentangle);
        if (j.contains("text_coord")) {
            try {
                c.text_coord = text_coord_from_string(j.at("text_coord").get<std::string>());
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
        }
        if (j.contains("stages")) {
            c.stages.clear();
            for (const auto& sj : j.at("stages")) {
                reject_unknown(sj, {"name", "steps", "lr", "tasks", "zero_prompt", "trainable"}, "stage");
                StageConfig s;
                read(sj, "name", s.name);
                read(sj, "steps", s.steps);
                read(sj, "lr", s.lr);
                for (const auto& t : sj.value("tasks", json::array()))
                    s.tasks.push_back(task_from_string(t.get<std::string>()));
                read(sj, "zero_prompt", s.zero_prompt);
                read(sj, "trainable", s.trainable);
                c.stages.push_back(std::move(s));
            }
        }
        read(j, "weight_decay", c.weight_decay);
        read(j, "dense_weight", c.dense_weight);
        read(j, "focus_weight", c.focus_weight);
        read(j, "curve_every", c.curve_every);
        read(j, "seeds", c.seeds);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string config_hash(const ExperimentConfig& c) {
    json j = config_to_json(c);
    j.erase("seeds");
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
    return buf;
}

}  // namespace stp
