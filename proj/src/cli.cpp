#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "stprompt/cli.hpp"
#include "stprompt/harness.hpp"

namespace stp {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// STPROMPT_OUT, when set, prefixes relative output paths.
fs::path out_path(const std::string& path) {
    fs::path p(path);
    if (const char* dir = std::getenv("STPROMPT_OUT"); dir && *dir && p.is_relative()) p = fs::path(dir) / p;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    return p;
}

void write_file(const std::string& path, const std::string& text) {
    const fs::path p = out_path(path);
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
}

ExperimentConfig load_config(const std::string& path) {
    if (path.empty()) return ExperimentConfig::defaults();
    const std::string text = read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    ExperimentConfig c = config_from_json(j);
    c.validate();
    return c;
}

void apply_seeds(ExperimentConfig& c, std::size_t count) {
    if (count == 0) return;
    c.seeds.clear();
    for (std::size_t i = 0; i < count; ++i) c.seeds.push_back(i);
}

Scene scene_for(const ExperimentConfig& c, std::uint64_t seed) {
    if (!c.scene.objects.empty()) {
        SceneSpec spec = c.scene;
        spec.seed = seed;
        return generate(spec);
    }
    return generate(draw_scene_specs(c, seed, 1, "eval").front());
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Spatiotemporal prompt toolkit"};
    app.require_subcommand(1);
    std::string config_path;

    auto* gen = app.add_subcommand("gen-scene", "Render a scene and its instruction pairs");
    std::string scene_out = "scene.json", pairs_out;
    std::uint64_t gen_seed = 0;
    gen->add_option("--config", config_path, "Experiment config (JSON)");
    gen->add_option("--seed", gen_seed, "Scene seed");
    gen->add_option("--out", scene_out, "Scene JSON path");
    gen->add_option("--instructions", pairs_out, "Instruction JSONL path");

    auto* train = app.add_subcommand("train", "Run the stage schedule and evaluate");
    std::string report_out = "report.json", params_out;
    std::size_t seeds = 0;
    train->add_option("--config", config_path, "Experiment config (JSON)");
    train->add_option("--seeds", seeds, "Use seeds 0..n-1 instead of the configured list");
    train->add_option("--out", report_out, "Report JSON path");
    train->add_option("--params", params_out, "Write trained parameters of the first seed");

    auto* ablate = app.add_subcommand("ablate", "Run an ablation table");
    std::vector<int> tables;
    std::size_t jobs = 1;
    std::string ablate_out;
    ablate->add_option("--config", config_path, "Base config (JSON)");
    ablate->add_option("--table", tables, "Table number (2, 3, 4 or 5); repeatable")->required();
    ablate->add_option("--seeds", seeds, "Use seeds 0..n-1");
    ablate->add_option("--jobs", jobs, "Cells trained concurrently");
    ablate->add_option("--out", ablate_out, "Directory for per-cell report JSON");

    auto* fd = app.add_subcommand("fd-check", "Finite-difference check of the full pipeline");
    double tol = 1e-4, eps = 1e-6;
    std::uint64_t fd_seed = 0;
    fd->add_option("--config", config_path, "Base config (JSON)");
    fd->add_option("--tol", tol, "Relative error tolerance");
    fd->add_option("--eps", eps, "Central difference step");
    fd->add_option("--seed", fd_seed, "Parameter seed");

    auto* dump = app.add_subcommand("dump-features", "Write stage-labelled features as CSV");
    std::string csv_out = "features.csv", params_in;
    std::uint64_t dump_seed = 0;
    dump->add_option("--config", config_path, "Experiment config (JSON)");
    dump->add_option("--seed", dump_seed, "Scene and parameter seed");
    dump->add_option("--params", params_in, "Trained parameters (JSON) from train --params");
    dump->add_option("--out", csv_out, "CSV path");

    auto* report = app.add_subcommand("report", "Render a report JSON as a table");
    std::string report_in, report_json;
    report->add_option("report", report_in, "Report JSON from train")->required();
    report->add_option("--json", report_json, "Also write normalised report JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kUsage;
    }

    try {
        if (*gen) {
            const ExperimentConfig c = load_config(config_path);
            const Scene scene = scene_for(c, gen_seed);
            write_file(scene_out, scene_to_json(scene));
            const InstructionSet set = emit_instructions(scene.truth, c.templates, scene.id);
            if (!pairs_out.empty()) write_file(pairs_out, instructions_to_jsonl(set.pairs));
            for (const auto& w : scene.truth.warnings) err << "warning: " << w << "\n";
            for (const auto& l : set.log) err << "skipped: " << l << "\n";
            out << scene.id << ": " << scene.frames.size() << " frames, " << set.pairs.size()
                << " instruction pairs\n";
        } else if (*train) {
            ExperimentConfig c = load_config(config_path);
            apply_seeds(c, seeds);
            MetricsReport r;
            r.config = c;
            r.config_hash = config_hash(c);
            for (std::size_t i = 0; i < c.seeds.size(); ++i) {
                ParamStore trained;
                r.seeds.push_back(run_seed(c, c.seeds[i], i == 0 && !params_out.empty() ? &trained : nullptr,
                                           [&](const StageRecord& s, const ParamStore&) {
                                               err << "seed " << c.seeds[i] << " " << s.name << ": train "
                                                   << s.final_train_loss << ", eval " << s.eval_loss << "\n";
                                           }));
                if (i == 0 && !params_out.empty()) write_file(params_out, params_to_json(trained));
            }
            r.mean = mean_metrics(r.seeds);
            write_file(report_out, report_to_json(r).dump(2) + "\n");
            out << report_table(r);
        } else if (*ablate) {
            ExperimentConfig base = load_config(config_path);
            apply_seeds(base, seeds);
            ReportCache cache;
            bool all_passed = true;
            for (int t : tables) {
                const AblationResult res = run_ablation(ablation_table(t, base), cache, jobs);
                out << ablation_text(res) << "\n";
                all_passed = all_passed && res.passed();
                if (!ablate_out.empty()) {
                    for (std::size_t i = 0; i < res.reports.size(); ++i) {
                        write_file((fs::path(ablate_out) / ("table" + std::to_string(t) + "_" +
                                                            res.table.rows[i].label + ".json"))
                                       .string(),
                                   report_to_json(res.reports[i]).dump(2) + "\n");
                    }
                }
            }
            return all_passed ? kOk : kInvalid;
        } else if (*fd) {
            const ExperimentConfig base = fd_config(load_config(config_path));
            bool ok = true;
            auto run = [&](const std::string& label, ExperimentConfig c) {
                const FdReport r = pipeline_fd_check(c, fd_seed, eps, tol);
                out << std::left << std::setw(22) << label << " params " << std::setw(3) << r.checked_params.size()
                    << " entries " << std::setw(6) << r.entries_checked << " max rel " << std::scientific
                    << std::setprecision(2) << r.max_rel_error << std::defaultfloat
                    << (r.passed() ? "  ok" : "  FAIL") << "\n";
                for (std::size_t i = 0; i < std::min<std::size_t>(r.failures.size(), 5); ++i) {
                    const auto& f = r.failures[i];
                    out << "  " << f.name << "[" << f.index << "] analytic " << f.analytic << " numeric "
                        << f.numeric << "\n";
                }
                ok = ok && r.passed();
            };
            for (FusionStrategy f : {FusionStrategy::attention, FusionStrategy::weighting, FusionStrategy::concat,
                                     FusionStrategy::additive}) {
                ExperimentConfig c = base;
                c.fusion = f;
                run(std::string("fusion=") + to_string(f), c);
            }
            for (TextCoordMode m : {TextCoordMode::raw, TextCoordMode::none}) {
                ExperimentConfig c = base;
                c.text_coord = m;
                run(std::string("text-coord=") + to_string(m), c);
            }
            return ok ? kOk : kInvalid;
        } else if (*dump) {
            const ExperimentConfig c = load_config(config_path);
            ParamStore store;
            if (params_in.empty()) {
                init_parameters(store, c, dump_seed);
            } else {
                store = params_from_json(read_file(params_in));
            }
            SceneData data = prepare_scene(scene_for(c, dump_seed), c);
            const SceneForward fwd = Pipeline(c, store).forward(data, false);
            write_file(csv_out, features_csv(fwd.features, data.labels));
            out << "wrote " << data.labels.size() << " tokens per stage to " << out_path(csv_out).string() << "\n";
        } else if (*report) {
            const MetricsReport r = report_from_json(json::parse(read_file(report_in)));
            if (!report_json.empty()) write_file(report_json, report_to_json(r).dump(2) + "\n");
            out << report_table(r);
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const ConfigError& e) {
        err << "invalid config: " << e.what() << "\n";
        return kInvalid;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kInvalid;
    }
    return kOk;
}

}  // namespace stp
