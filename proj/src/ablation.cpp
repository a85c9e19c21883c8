#include <cstdio>
#include <future>
#include <sstream>

#include "stprompt/harness.hpp"

namespace stp {

AblationTable ablation_table(int number, const ExperimentConfig& base) {
    AblationTable t;
    t.number = number;
    auto row = [&](const std::string& label, auto&& edit) {
        ExperimentConfig c = base;
        edit(c);
        t.rows.push_back({label, c});
    };
    switch (number) {
        case 2:
            t.title = "visual representation modules";
            row("bare", [](auto& c) {
                c.coord = CoordMode::none;
                c.disentangle = false;
                c.fusion = FusionStrategy::additive;
            });
            row("+coord", [](auto& c) {
                c.coord = CoordMode::full;
                c.disentangle = false;
                c.fusion = FusionStrategy::additive;
            });
            row("+disent", [](auto& c) {
                c.coord = CoordMode::full;
                c.disentangle = true;
                c.fusion = FusionStrategy::additive;
            });
            row("+fusion", [](auto& c) {
                c.coord = CoordMode::full;
                c.disentangle = true;
                c.fusion = FusionStrategy::attention;
            });
            break;
        case 3:
            t.title = "coordinate encoding";
            for (CoordMode m : {CoordMode::none, CoordMode::pos_only, CoordMode::time_only, CoordMode::full})
                row(to_string(m), [m](auto& c) { c.coord = m; });
            break;
        case 4:
            t.title = "spatiotemporal fusion";
            for (FusionStrategy f : {FusionStrategy::concat, FusionStrategy::weighting, FusionStrategy::attention})
                row(to_string(f), [f](auto& c) { c.fusion = f; });
            break;
        case 5:
            t.title = "textual coordinate encoding";
            for (TextCoordMode m : {TextCoordMode::none, TextCoordMode::raw, TextCoordMode::encoded})
                row(to_string(m), [m](auto& c) { c.text_coord = m; });
            break;
        default: throw ConfigError("no ablation table " + std::to_string(number) + " (expected 2, 3, 4 or 5)");
    }
    return t;
}

namespace {

double pts(double v) { return 100.0 * v; }

std::string describe(const char* f, double a, double b) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

}  // namespace

std::vector<OrderingCheck> ordering_checks(int table, const std::vector<MetricsReport>& rows) {
    std::vector<OrderingCheck> out;
    auto c = [&](std::size_t i) { return pts(rows.at(i).mean.combined); };
    auto s = [&](std::size_t i) { return pts(rows.at(i).mean.sacc); };
    auto t = [&](std::size_t i) { return pts(rows.at(i).mean.tacc); };
    auto gt = [&](const std::string& name, double a, double b) {
        out.push_back({name + describe(" (%.1f > %.1f)", a, b), a > b});
    };
    auto ge = [&](const std::string& name, double a, double b) {
        out.push_back({name + describe(" (%.1f >= %.1f)", a, b), a >= b});
    };
    switch (table) {
        case 2:
            ge("+coord >= bare", c(1), c(0));
            ge("+disent >= +coord", c(2), c(1));
            ge("+fusion >= +disent", c(3), c(2));
            ge("+fusion - bare >= 15", c(3) - c(0), 15.0);
            break;
        case 3:
            gt("full > pos-only", c(3), c(1));
            gt("pos-only > none", c(1), c(0));
            gt("full > time-only", c(3), c(2));
            gt("time-only > none", c(2), c(0));
            ge("full - none >= 10", c(3) - c(0), 10.0);
            ge("pos-only SAcc >= time-only SAcc", s(1), s(2));
            ge("time-only TAcc >= pos-only TAcc", t(2), t(1));
            break;
        case 4:
            ge("attention - concat >= 2", c(2) - c(0), 2.0);
            ge("weighting >= concat - 1", c(1), c(0) - 1.0);
            ge("attention + 1 >= weighting", c(2) + 1.0, c(1));
            break;
        case 5:
            ge("encoded >= raw", c(2), c(1));
            ge("raw >= none", c(1), c(0));
            ge("encoded - none >= 5", c(2) - c(0), 5.0);
            gt("TAcc gap > SAcc gap", t(2) - t(0), s(2) - s(0));
            break;
        default: break;
    }
    return out;
}

bool AblationResult::passed() const {
    for (const auto& c : checks)
        if (!c.passed) return false;
    return true;
}

AblationResult run_ablation(const AblationTable& table, ReportCache& cache, std::size_t jobs) {
    AblationResult result;
    result.table = table;
    auto key = [](const ExperimentConfig& c) {
        std::string k = config_hash(c);
        for (auto s : c.seeds) k += ":" + std::to_string(s);
        return k;
    };
    std::vector<std::string> missing;
    for (const auto& row : table.rows) {
        const std::string k = key(row.config);
        if (!cache.count(k) && std::find(missing.begin(), missing.end(), k) == missing.end()) missing.push_back(k);
    }
    auto config_for = [&](const std::string& k) -> const ExperimentConfig& {
        for (const auto& row : table.rows)
            if (key(row.config) == k) return row.config;
        throw std::logic_error("ablation key without row");
    };
    for (std::size_t i = 0; i < missing.size(); i += std::max<std::size_t>(jobs, 1)) {
        std::vector<std::future<MetricsReport>> running;
        for (std::size_t j = i; j < std::min(missing.size(), i + std::max<std::size_t>(jobs, 1)); ++j) {
            const ExperimentConfig& cfg = config_for(missing[j]);
            running.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred,
                                         [&cfg] { return run_experiment(cfg); }));
        }
        for (std::size_t j = 0; j < running.size(); ++j) cache[missing[i + j]] = running[j].get();
    }
    for (const auto& row : table.rows) result.reports.push_back(cache.at(key(row.config)));
    result.checks = ordering_checks(table.number, result.reports);
    return result;
}

std::string ablation_text(const AblationResult& r) {
    std::ostringstream os;
    os << "Table " << r.table.number << ": " << r.table.title << " (" << r.reports.front().seeds.size()
       << " seeds)\n";
    os << "row           SAcc   TAcc   Comb   sil(f) sil(st) sil(fst)  config\n";
    for (std::size_t i = 0; i < r.reports.size(); ++i) {
        const auto& m = r.reports[i].mean;
        char buf[256];
        std::snprintf(buf, sizeof buf, "%-12s %6.1f %6.1f %6.1f  %6.3f %6.3f %6.3f   %s\n", r.table.rows[i].label.c_str(),
                      100 * m.sacc, 100 * m.tacc, 100 * m.combined, m.silhouette.raw, m.silhouette.disentangled,
                      m.silhouette.fused, r.reports[i].config_hash.c_str());
        os << buf;
    }
    for (const auto& c : r.checks) os << (c.passed ? "  ok    " : "  FAIL  ") << c.description << "\n";
    os << "ordering " << (r.passed() ? "reproduced" : "not reproduced") << "\n";
    return os.str();
}

}  // namespace stp
