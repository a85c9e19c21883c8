#include "stprompt/harness.hpp"

namespace stp {

ExperimentConfig fd_config(const ExperimentConfig& base) {
    ExperimentConfig c = base;
    auto& s = c.scene;
    s.views = 2;
    s.frames = 2;
    s.height = 16;
    s.width = 16;
    s.patch = 8;
    s.focal = 32.0;
    s.background.spacing = 0.08;
    ObjectSpec o;
    o.color_name = "red";
    o.color = palette_colors()[static_cast<std::size_t>(palette_index("red"))];
    o.radius = 0.6;
    o.points = 600;
    o.trajectory.origin = {-0.2, -0.1, 0.6};
    o.trajectory.velocity = {0.4, 0.2, 0.0};
    s.objects = {o};
    c.train_scenes = 1;
    c.eval_scenes = 1;
    c.seeds = {0};
    return c;
}

FdReport pipeline_fd_check(const ExperimentConfig& config, std::uint64_t seed, double eps, double tol, double floor) {
    config.validate();
    SceneSpec spec = config.scene;
    spec.seed = seed;
    const Scene scene = generate(spec);
    SceneData data = prepare_scene(scene, config);
    const std::vector<TaskFamily> tasks{TaskFamily::caption, TaskFamily::qa, TaskFamily::grounding};

    ParamStore store;
    init_parameters(store, config, seed);
    // Perturb away from the zero initialisations so every path carries signal.
    Rng rng = Rng(seed).split("fd");
    for (auto& [name, value] : store.params) {
        for (auto& x : value.data()) x += rng.normal(0.0, 0.05);
    }
    set_trainable(store, parameter_groups());
    store.zero_grads();
    Pipeline(config, store).loss(data, tasks, false, true);

    const auto loss = [&](const ParamStore& p) {
        ParamStore copy = p;
        SceneData d = data;
        return Pipeline(config, copy).loss(d, tasks, false, false).total;
    };
    return fd_check(loss, store, eps, tol, floor);
}

}  // namespace stp
