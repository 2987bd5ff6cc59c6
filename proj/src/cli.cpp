#include "gspde/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <vector>

#include "CLI11.hpp"

#include "gspde/suite.hpp"

namespace gspde {

namespace fs = std::filesystem;

ExperimentConfig load_config_with_overrides(const std::string& path, std::optional<std::uint64_t> seed,
                                            std::optional<std::string> out_dir) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file '" + path + "'");
    Json doc;
    try {
        doc = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw UsageError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    if (!doc.is_object()) throw UsageError("config file '" + path + "': top level must be an object");
    if (seed) doc["seed"] = *seed;
    if (out_dir) doc["output_dir"] = *out_dir;
    return parse_config(doc);
}

ValidationSummary summarize(const ExperimentConfig& cfg) {
    const CoefficientField field = cfg.field();
    ValidationSummary s;
    s.sigma_bar = cfg.scenarios.sigma_bar();
    s.lambda = field.lambda();
    s.big_lambda = field.big_lambda();
    const double s2 = s.sigma_bar * s.sigma_bar;
    s.gspde_margin = 2.0 * s.lambda - cfg.problem.alpha_bar * s2;
    s.bdsde_margin = 2.0 * s.lambda - cfg.problem.alpha * s.big_lambda * s2;
    const PicardConfig pc =
        PicardConfig::from_constants(cfg.problem.c_bar, cfg.problem.alpha_bar, s.sigma_bar, s.lambda, cfg.gspde.eps);
    s.kappa = pc.kappa;
    s.eps = pc.eps;
    s.gamma = pc.gamma;
    s.delta = pc.delta;
    const BdsdeConstants bc = BdsdeConstants::from_constants(cfg.problem.k, cfg.problem.alpha, s.big_lambda,
                                                             s.sigma_bar, s.lambda, cfg.bdsde.eps);
    s.bdsde_bound = bc.bound;
    s.bdsde_eps = bc.eps;
    s.bdsde_delta = bc.delta;
    s.beta = bc.beta;
    return s;
}

void print_validation(std::ostream& os, const ValidationSummary& s) {
    const auto flags = os.flags();
    const auto prec = os.precision();
    os << std::setprecision(10);
    os << "sigma_bar = " << s.sigma_bar << '\n'
       << "lambda = " << s.lambda << '\n'
       << "Lambda = " << s.big_lambda << '\n'
       << "gspde contraction margin (2 lambda - alpha_bar sigma_bar^2) = " << s.gspde_margin << '\n'
       << "bdsde contraction margin (2 lambda - alpha Lambda sigma_bar^2) = " << s.bdsde_margin << '\n'
       << "gspde kappa = " << s.kappa << '\n'
       << "gspde eps = " << s.eps << '\n'
       << "gspde gamma = " << s.gamma << '\n'
       << "gspde delta = " << s.delta << '\n'
       << "bdsde ratio bound = " << s.bdsde_bound << '\n'
       << "bdsde eps = " << s.bdsde_eps << '\n'
       << "bdsde delta = " << s.bdsde_delta << '\n'
       << "bdsde beta = " << s.beta << '\n';
    os.flags(flags);
    os.precision(prec);
}

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    unsigned threads = 0;
    std::optional<std::string> out;
    std::vector<std::string> merge_dirs;
};

int exit_for(const std::vector<CheckResult>& rows, std::ostream& out) {
    std::size_t failed = 0;
    for (const auto& r : rows) {
        if (!r.pass) ++failed;
    }
    out << rows.size() << " checks, " << failed << " failed\n";
    for (const auto& r : rows) {
        if (!r.pass) {
            out << "FAIL " << r.check << ' ' << r.metric << " = " << r.value << " (tolerance " << *r.tolerance << ")\n";
        }
    }
    return failed == 0 ? kExitPass : kExitCheckFailed;
}

int dispatch(const std::string& command, const Options& opt, std::ostream& out) {
    if (command == "report-merge") {
        std::vector<fs::path> dirs(opt.merge_dirs.begin(), opt.merge_dirs.end());
        if (opt.out) {
            std::ostringstream buf;
            merge_reports(dirs, buf);
            std::ofstream os(*opt.out);
            if (!os) throw UsageError("cannot write '" + *opt.out + "'");
            os << buf.str();
        } else {
            merge_reports(dirs, out);
        }
        return kExitPass;
    }
    if (opt.config.empty()) throw UsageError("--config is required for '" + command + "'");
    const ExperimentConfig cfg = load_config_with_overrides(opt.config, opt.seed, opt.out);
    const fs::path dir = cfg.output_dir;
    if (command == "validate") {
        print_validation(out, summarize(cfg));
        out << "config_hash = " << cfg.hash() << '\n';
        return kExitPass;
    }
    if (command == "simulate-gbm") {
        run_simulate_gbm(cfg, dir);
        return kExitPass;
    }
    if (command == "simulate-hunt") {
        run_simulate_hunt(cfg, dir);
        return kExitPass;
    }
    if (command == "solve-gspde") return exit_for(run_solve_gspde(cfg, dir), out);
    if (command == "solve-gbdsde") return exit_for(run_solve_gbdsde(cfg, dir), out);
    if (command == "verify-representation" || command == "verify-comparison") {
        fs::create_directories(dir);
        const auto rows =
            command == "verify-representation" ? run_representation_check(cfg) : run_comparison_check(cfg);
        write_check_outputs(dir, cfg, rows);
        return exit_for(rows, out);
    }
    if (command == "run-suite") return exit_for(run_suite(cfg, dir), out);
    throw UsageError("unknown command '" + command + "'");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"G-SPDE and G-BDSDE experiment runner", "gspde"};
    app.require_subcommand(1);
    Options opt;
    std::uint64_t seed = 0;
    std::string out_dir;
    auto* seed_opt = app.add_option("--seed", seed, "Override the config seed");
    auto* out_opt = app.add_option("--out", out_dir, "Output directory (report-merge: output CSV file)");
    app.add_option("--config", opt.config, "Experiment config (JSON)");
    app.add_option("--threads", opt.threads, "Worker thread cap (0 = hardware concurrency)");

    const std::vector<std::pair<std::string, std::string>> commands{
        {"simulate-gbm", "Simulate backward G-Brownian increments per scenario schedule"},
        {"simulate-hunt", "Simulate the symmetric diffusion ensemble"},
        {"solve-gspde", "Solve the nonlinear SPDE by Picard iteration on the grid"},
        {"solve-gbdsde", "Solve the doubly stochastic backward equation by regression"},
        {"verify-representation", "Compare the BDSDE solution with the SPDE along diffusion paths"},
        {"verify-comparison", "Check the comparison property on shifted problems"},
        {"run-suite", "Run every enabled check and write the report"},
        {"validate", "Print contraction margins and derived Picard constants"},
        {"report-merge", "Merge report.json files of several run directories into one CSV"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->fallthrough();
        if (name == "report-merge") sub->add_option("dirs", opt.merge_dirs, "Run directories")->required();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitPass : kExitUsage;
    }
    if (*seed_opt) opt.seed = seed;
    if (*out_opt) opt.out = out_dir;
    set_max_threads(opt.threads);
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        return dispatch(command, opt, out);
    } catch (const ContractionError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ConvergenceError& e) {
        err << "numerical error: " << e.what() << "\nmeasured contraction ratios:";
        for (double r : e.ratios()) err << ' ' << r;
        err << '\n';
        return kExitNumerical;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return kExitNumerical;
    }
}

}  // namespace gspde
