#include "gspde/config.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace gspde {

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

[[noreturn]] void field_error(const std::string& where, const std::string& what) {
    throw UsageError("config field '" + where + "': " + what);
}

/// Object view that records which keys were read so leftovers can be rejected.
class Obj {
public:
    Obj(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) field_error(path_.empty() ? "<root>" : path_, "expected an object");
    }

    [[nodiscard]] const std::string& path() const { return path_; }
    [[nodiscard]] std::string at(const std::string& key) const { return join(path_, key); }

    const Json* opt(const std::string& key) {
        used_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end() || it->is_null()) return nullptr;
        return &*it;
    }
    const Json& req(const std::string& key) {
        const Json* v = opt(key);
        if (!v) field_error(at(key), "missing");
        return *v;
    }

    double number(const std::string& key, std::optional<double> def = std::nullopt) {
        const Json* v = opt(key);
        if (!v) {
            if (def) return *def;
            field_error(at(key), "missing");
        }
        if (!v->is_number()) field_error(at(key), "expected a number");
        const double d = v->get<double>();
        if (!std::isfinite(d)) field_error(at(key), "must be finite");
        return d;
    }
    double positive(const std::string& key, std::optional<double> def = std::nullopt) {
        const double d = number(key, def);
        if (!(d > 0.0)) field_error(at(key), "must be > 0");
        return d;
    }
    double nonnegative(const std::string& key, std::optional<double> def = std::nullopt) {
        const double d = number(key, def);
        if (!(d >= 0.0)) field_error(at(key), "must be >= 0");
        return d;
    }
    std::optional<double> optional_number(const std::string& key) {
        const Json* v = opt(key);
        if (!v) return std::nullopt;
        if (!v->is_number()) field_error(at(key), "expected a number or null");
        return v->get<double>();
    }
    std::size_t count(const std::string& key, std::optional<std::size_t> def = std::nullopt, std::size_t min = 0) {
        const Json* v = opt(key);
        std::size_t out = 0;
        if (!v) {
            if (!def) field_error(at(key), "missing");
            out = *def;
        } else {
            if (!v->is_number_integer() || v->get<long long>() < 0) field_error(at(key), "expected a non-negative integer");
            out = v->get<std::size_t>();
        }
        if (out < min) field_error(at(key), "must be >= " + std::to_string(min));
        return out;
    }
    bool boolean(const std::string& key, bool def) {
        const Json* v = opt(key);
        if (!v) return def;
        if (!v->is_boolean()) field_error(at(key), "expected true or false");
        return v->get<bool>();
    }
    std::string string(const std::string& key, std::optional<std::string> def = std::nullopt) {
        const Json* v = opt(key);
        if (!v) {
            if (!def) field_error(at(key), "missing");
            return *def;
        }
        if (!v->is_string()) field_error(at(key), "expected a string");
        return v->get<std::string>();
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!used_.count(key)) field_error(at(key), "unknown key");
        }
    }

private:
    const Json& j_;
    std::string path_;
    std::set<std::string> used_;
};

template <typename Fn>
auto wrap(const std::string& where, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const ContractionError& e) {
        throw ContractionError("config field '" + where + "': " + e.what());
    } catch (const UsageError& e) {
        const std::string msg = e.what();
        if (msg.rfind("config field", 0) == 0) throw;
        throw UsageError("config field '" + where + "': " + msg);
    }
}

ScenarioSet parse_scenarios(const Json& node, const std::string& where) {
    Obj o(node, where);
    const std::size_t l = o.count("l", std::nullopt, 1);
    const Json& ms = o.req("matrices");
    if (!ms.is_array() || ms.empty()) field_error(o.at("matrices"), "expected a non-empty array of l x l matrices");
    std::vector<Matrix> mats;
    for (std::size_t k = 0; k < ms.size(); ++k) {
        const std::string w = o.at("matrices") + "[" + std::to_string(k) + "]";
        const Json& m = ms[k];
        if (!m.is_array() || m.size() != l) field_error(w, "expected " + std::to_string(l) + " rows");
        Matrix mat(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(l));
        for (std::size_t r = 0; r < l; ++r) {
            if (!m[r].is_array() || m[r].size() != l) field_error(w, "expected " + std::to_string(l) + " columns");
            for (std::size_t c = 0; c < l; ++c) {
                if (!m[r][c].is_number()) field_error(w, "entries must be numbers");
                mat(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m[r][c].get<double>();
            }
        }
        mats.push_back(std::move(mat));
    }
    o.finish();
    return wrap(where, [&] { return ScenarioSet(l, std::move(mats)); });
}

SpatialGrid parse_space(const Json& node, const std::string& where) {
    Obj o(node, where);
    const double r = o.positive("half_width");
    const std::size_t m = o.count("points", std::nullopt, 3);
    const std::string bc = o.string("boundary", std::string("dirichlet0"));
    o.finish();
    return wrap(where, [&] { return SpatialGrid(1, r, m, boundary_from_string(bc)); });
}

InitialLaw parse_initial(const Json& node, const std::string& where) {
    Obj o(node, where);
    const std::string kind = o.string("kind");
    Vector mean;
    if (const Json* m = o.opt("mean")) {
        if (!m->is_array() || m->empty()) field_error(o.at("mean"), "expected a non-empty array");
        mean.resize(static_cast<Eigen::Index>(m->size()));
        for (std::size_t k = 0; k < m->size(); ++k) {
            if (!(*m)[k].is_number()) field_error(o.at("mean"), "entries must be numbers");
            mean(static_cast<Eigen::Index>(k)) = (*m)[k].get<double>();
        }
    } else {
        field_error(o.at("mean"), "missing");
    }
    InitialLaw law;
    if (kind == "point") {
        law = InitialLaw::point(mean);
    } else if (kind == "gaussian") {
        const double sd = o.positive("std");
        const double box = o.positive("box", std::numeric_limits<double>::infinity());
        law = InitialLaw::gaussian(mean, sd, box);
    } else {
        field_error(o.at("kind"), "expected 'point' or 'gaussian'");
    }
    o.finish();
    return law;
}

RegressionBasis parse_basis(const Json& node, const std::string& where) {
    Obj o(node, where);
    RegressionBasis b;
    b.kind = wrap(o.at("kind"), [&] { return RegressionBasis::kind_from_string(o.string("kind", std::string("polynomial"))); });
    b.degree = o.count("degree", b.degree);
    b.bins = o.count("bins", b.bins, 1);
    b.ridge = o.nonnegative("ridge", 0.0);
    o.finish();
    return b;
}

ProblemData parse_problem(const Json& node, const std::string& where, std::size_t l) {
    Obj o(node, where);
    ProblemData p;
    p.terminal = parse_spatial(o.req("terminal"), o.at("terminal"));
    p.f = parse_reaction(o.req("f"), o.at("f"));
    const Json& g = o.req("g");
    if (!g.is_array() || g.size() != l) {
        field_error(o.at("g"), "expected an array with one entry per noise coordinate (l = " + std::to_string(l) + ")");
    }
    for (std::size_t j = 0; j < l; ++j) p.g.push_back(parse_reaction(g[j], o.at("g") + "[" + std::to_string(j) + "]"));
    p.c_bar = o.nonnegative("c_bar");
    p.alpha_bar = o.nonnegative("alpha_bar");
    p.k = o.nonnegative("k", p.c_bar);
    p.alpha = o.nonnegative("alpha", p.alpha_bar);
    o.finish();
    return p;
}

std::vector<ReactionTerm> compose_all(const std::vector<ReactionTerm>& terms, const CoefficientField& field) {
    std::vector<ReactionTerm> out;
    const double smax = std::sqrt(field.big_lambda());
    for (const auto& t : terms) {
        out.push_back(reaction::compose_sigma(t, [field](double x) { return std::sqrt(field.a1(x)); }, smax));
    }
    return out;
}

}  // namespace

ReactionTerm parse_reaction(const Json& node, const std::string& where) {
    if (node.is_array()) {
        std::vector<ReactionTerm> terms;
        for (std::size_t k = 0; k < node.size(); ++k) {
            terms.push_back(parse_reaction(node[k], where + "[" + std::to_string(k) + "]"));
        }
        return reaction::sum(terms);
    }
    Obj o(node, where);
    const std::string preset = o.string("preset");
    ReactionTerm out;
    if (preset == "zero") {
        out = reaction::zero();
    } else if (preset == "constant") {
        out = reaction::constant(o.number("value"));
    } else if (preset == "affine_y") {
        out = reaction::affine_y(o.number("a"), o.number("b", 0.0));
    } else if (preset == "sin_x") {
        out = reaction::sin_x(o.number("amp"), o.number("freq"), o.number("envelope_width", 0.0));
    } else if (preset == "gauss_bump") {
        const double amp = o.number("amp");
        const double width = o.positive("width");
        out = reaction::gauss_bump(amp, width, o.number("center", 0.0), o.number("omega", 0.0));
    } else if (preset == "tanh") {
        out = reaction::tanh_composite(o.number("cy", 0.0), o.number("cz", 0.0));
    } else {
        field_error(o.at("preset"), "unknown reaction preset '" + preset +
                                        "' (expected zero, constant, affine_y, sin_x, gauss_bump, tanh)");
    }
    o.finish();
    return out;
}

SpatialFunction parse_spatial(const Json& node, const std::string& where) {
    Obj o(node, where);
    const std::string preset = o.string("preset");
    SpatialFunction out;
    if (preset == "zero") {
        out = spatial::zero();
    } else if (preset == "constant") {
        out = spatial::constant(o.number("value"));
    } else if (preset == "gaussian") {
        const double amp = o.number("amp", 1.0);
        const double width = o.positive("width", 1.0);
        out = spatial::gaussian(amp, width, o.number("center", 0.0));
    } else if (preset == "sine") {
        out = spatial::sine(o.number("amp"), o.number("freq"));
    } else {
        field_error(o.at("preset"), "unknown terminal preset '" + preset + "' (expected zero, constant, gaussian, sine)");
    }
    if (const auto shift = o.optional_number("shift")) out = spatial::shifted(out, *shift);
    o.finish();
    return out;
}

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

CoefficientField ExperimentConfig::field() const {
    return CoefficientField::from_preset(field_preset, field_preset == "diagonal-2d" ? 2 : 1, field_c);
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(canonical); }

GspdeProblem ExperimentConfig::gspde_problem(const SpatialGrid& sg, const TimeGrid& tg) const {
    const CoefficientField fld = field();
    if (fld.dim() != 1) throw UsageError("the grid solver supports one-dimensional fields only");
    const ReactionTerm fp = compose_all({problem.f}, fld).front();
    return GspdeProblem(sg, tg, fld, scenarios, problem.terminal, fp, compose_all(problem.g, fld), problem.c_bar,
                        problem.alpha_bar);
}

BdsdeProblem ExperimentConfig::bdsde_problem(const TimeGrid& tg) const {
    return BdsdeProblem(tg, field(), scenarios, problem.terminal, problem.f, problem.g, problem.k, problem.alpha);
}

PicardConfig ExperimentConfig::picard_config(const GspdeProblem& p) const {
    PicardConfig cfg = PicardConfig::for_problem(p, gspde.eps);
    cfg.max_iter = gspde.max_iter;
    cfg.tol_rel = gspde.tol_rel;
    cfg.dt_max = gspde.dt_max;
    cfg.init = gspde.init;
    return cfg;
}

std::vector<ControlSchedule> ExperimentConfig::schedules(std::size_t steps) const {
    return enumerate_schedules(scenarios, steps, random_schedules, schedule_pieces, seed);
}

ExperimentConfig parse_config(const Json& doc) {
    Obj root(doc, "");
    ExperimentConfig cfg;
    cfg.schema = root.string("schema");
    if (cfg.schema != kConfigSchema) {
        field_error("schema", "unsupported schema '" + cfg.schema + "' (expected '" + kConfigSchema + "')");
    }
    {
        const Json& s = root.req("seed");
        if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0)) {
            field_error("seed", "expected a non-negative integer");
        }
        cfg.seed = s.get<std::uint64_t>();
    }
    cfg.output_dir = root.string("output_dir", cfg.output_dir);
    cfg.scenarios = parse_scenarios(root.req("scenarios"), "scenarios");
    if (const Json* s = root.opt("schedules")) {
        Obj o(*s, "schedules");
        cfg.random_schedules = o.count("random", 0);
        cfg.schedule_pieces = o.count("pieces", 4, 1);
        o.finish();
    }
    {
        Obj o(root.req("field"), "field");
        cfg.field_preset = o.string("preset");
        cfg.field_c = o.positive("c", 1.0);
        o.finish();
        wrap("field.preset", [&] { return cfg.field(); });
    }
    {
        Obj o(root.req("time"), "time");
        const double horizon = o.positive("horizon");
        const std::size_t steps = o.count("steps", std::nullopt, 1);
        o.finish();
        cfg.tgrid = TimeGrid(horizon, steps);
    }
    cfg.sgrid = parse_space(root.req("space"), "space");
    cfg.problem = parse_problem(root.req("problem"), "problem", cfg.scenarios.dim());
    if (const Json* g = root.opt("gspde")) {
        Obj o(*g, "gspde");
        cfg.gspde.b_paths = o.count("b_paths", cfg.gspde.b_paths, 1);
        cfg.gspde.eps = o.optional_number("eps");
        if (cfg.gspde.eps && !(*cfg.gspde.eps > 0.0)) field_error("gspde.eps", "must be > 0");
        cfg.gspde.max_iter = o.count("max_iter", cfg.gspde.max_iter, 1);
        cfg.gspde.tol_rel = o.positive("tol_rel", cfg.gspde.tol_rel);
        cfg.gspde.dt_max = o.positive("dt_max", cfg.gspde.dt_max);
        const std::string init = o.string("init", std::string("zero"));
        if (init == "zero") {
            cfg.gspde.init = PicardConfig::InitialGuess::kZero;
        } else if (init == "homogeneous") {
            cfg.gspde.init = PicardConfig::InitialGuess::kHomogeneous;
        } else {
            field_error("gspde.init", "expected 'zero' or 'homogeneous'");
        }
        o.finish();
    }
    cfg.bdsde.initial = InitialLaw::gaussian(Vector::Zero(static_cast<Eigen::Index>(cfg.field().dim())), 1.0);
    if (const Json* b = root.opt("bdsde")) {
        Obj o(*b, "bdsde");
        cfg.bdsde.x_paths = o.count("x_paths", cfg.bdsde.x_paths, 1);
        cfg.bdsde.b_paths = o.count("b_paths", cfg.bdsde.b_paths, 1);
        cfg.bdsde.max_iter = o.count("max_iter", cfg.bdsde.max_iter, 1);
        cfg.bdsde.tol = o.positive("tol", cfg.bdsde.tol);
        cfg.bdsde.eps = o.optional_number("eps");
        if (cfg.bdsde.eps && !(*cfg.bdsde.eps > 0.0)) field_error("bdsde.eps", "must be > 0");
        cfg.bdsde.use_weights = o.boolean("use_weights", false);
        cfg.bdsde.implicit_y = o.boolean("implicit_y", false);
        if (const Json* basis = o.opt("basis")) cfg.bdsde.basis = parse_basis(*basis, "bdsde.basis");
        if (const Json* init = o.opt("initial")) cfg.bdsde.initial = parse_initial(*init, "bdsde.initial");
        o.finish();
    }
    if (static_cast<std::size_t>(cfg.bdsde.initial.mean.size()) != cfg.field().dim()) {
        field_error("bdsde.initial.mean", "length must equal the field dimension");
    }

    if (const Json* c = root.opt("checks")) {
        Obj checks(*c, "checks");
        SuiteChecks& s = cfg.checks;
        if (const Json* n = checks.opt("backward_integral")) {
            Obj o(*n, "checks.backward_integral");
            s.backward_integral.enabled = o.boolean("enabled", true);
            if (const Json* sc = o.opt("scenarios")) s.backward_integral.scenarios = parse_scenarios(*sc, o.at("scenarios"));
            s.backward_integral.paths = o.count("paths", s.backward_integral.paths, 2);
            s.backward_integral.singleton_paths = o.count("singleton_paths", s.backward_integral.singleton_paths, 2);
            s.backward_integral.steps = o.count("steps", s.backward_integral.steps, 1);
            s.backward_integral.horizon = o.positive("horizon", s.backward_integral.horizon);
            o.finish();
        }
        if (const Json* n = checks.opt("bracket")) {
            Obj o(*n, "checks.bracket");
            s.bracket.enabled = o.boolean("enabled", true);
            s.bracket.field = o.string("field", s.bracket.field);
            wrap(o.at("field"), [&] { return CoefficientField::from_preset(s.bracket.field, s.bracket.field == "diagonal-2d" ? 2 : 1); });
            s.bracket.paths = o.count("paths", s.bracket.paths, 2);
            s.bracket.steps = o.count("steps", s.bracket.steps, 1);
            s.bracket.horizon = o.positive("horizon", s.bracket.horizon);
            s.bracket.x0 = o.number("x0", s.bracket.x0);
            o.finish();
        }
        if (const Json* n = checks.opt("semigroup")) {
            Obj o(*n, "checks.semigroup");
            s.semigroup.enabled = o.boolean("enabled", true);
            s.semigroup.points = o.count("points", s.semigroup.points, 3);
            s.semigroup.half_width = o.positive("half_width", s.semigroup.half_width);
            s.semigroup.tau = o.positive("tau", s.semigroup.tau);
            s.semigroup.a = o.positive("a", s.semigroup.a);
            o.finish();
        }
        if (const Json* n = checks.opt("contraction")) {
            Obj o(*n, "checks.contraction");
            s.contraction.gspde = o.boolean("gspde", true);
            s.contraction.bdsde = o.boolean("bdsde", true);
            o.finish();
        }
        if (const Json* n = checks.opt("linear_gspde")) {
            Obj o(*n, "checks.linear_gspde");
            s.linear_gspde.enabled = o.boolean("enabled", true);
            s.linear_gspde.steps = o.count("steps", s.linear_gspde.steps, 1);
            s.linear_gspde.oracle_steps = o.count("oracle_steps", s.linear_gspde.oracle_steps, 1);
            o.finish();
        }
        if (const Json* n = checks.opt("linear_bdsde")) {
            Obj o(*n, "checks.linear_bdsde");
            s.linear_bdsde.enabled = o.boolean("enabled", true);
            s.linear_bdsde.x_paths = o.count("x_paths", s.linear_bdsde.x_paths, 1);
            s.linear_bdsde.b_paths = o.count("b_paths", s.linear_bdsde.b_paths, 1);
            s.linear_bdsde.steps = o.count("steps", s.linear_bdsde.steps, 1);
            o.finish();
        }
        if (const Json* n = checks.opt("representation")) {
            Obj o(*n, "checks.representation");
            s.representation.enabled = o.boolean("enabled", true);
            s.representation.steps = o.count("steps", s.representation.steps, 1);
            if (const Json* cp = o.opt("checkpoints")) {
                if (!cp->is_array() || cp->empty()) field_error(o.at("checkpoints"), "expected a non-empty array");
                s.representation.checkpoints.clear();
                for (const auto& v : *cp) {
                    if (!v.is_number() || v.get<double>() < 0.0 || v.get<double>() > 1.0) {
                        field_error(o.at("checkpoints"), "entries must be fractions of the horizon in [0, 1]");
                    }
                    s.representation.checkpoints.push_back(v.get<double>());
                }
            }
            o.finish();
        }
        if (const Json* n = checks.opt("comparison")) {
            Obj o(*n, "checks.comparison");
            s.comparison.enabled = o.boolean("enabled", true);
            if (const Json* sp = o.opt("space")) s.comparison.space = parse_space(*sp, o.at("space"));
            s.comparison.steps = o.count("steps", s.comparison.steps, 1);
            s.comparison.b_paths = o.count("b_paths", s.comparison.b_paths, 1);
            if (const Json* pr = o.opt("problem")) {
                s.comparison.problem = parse_problem(*pr, o.at("problem"), cfg.scenarios.dim());
            }
            s.comparison.shift = o.nonnegative("shift", s.comparison.shift);
            s.comparison.f_shift = o.nonnegative("f_shift", s.comparison.f_shift);
            s.comparison.collar = o.nonnegative("collar", s.comparison.collar);
            if (s.comparison.collar >= 0.5) field_error(o.at("collar"), "must be < 0.5");
            o.finish();
        }
        if (const Json* n = checks.opt("energy_identity")) {
            Obj o(*n, "checks.energy_identity");
            s.energy_identity.enabled = o.boolean("enabled", true);
            s.energy_identity.b_paths = o.count("b_paths", s.energy_identity.b_paths, 2);
            s.energy_identity.base_steps = o.count("base_steps", s.energy_identity.base_steps, 1);
            s.energy_identity.levels = o.count("levels", s.energy_identity.levels, 2);
            o.finish();
        }
        if (const Json* n = checks.opt("linear_transport")) {
            Obj o(*n, "checks.linear_transport");
            s.linear_transport.enabled = o.boolean("enabled", true);
            s.linear_transport.x_paths = o.count("x_paths", s.linear_transport.x_paths, 1);
            s.linear_transport.b_paths = o.count("b_paths", s.linear_transport.b_paths, 1);
            s.linear_transport.steps = o.count("steps", s.linear_transport.steps, 1);
            o.finish();
        }
        checks.finish();
    }
    root.finish();

    // Contraction properties and declared Lipschitz constants of every problem the config defines.
    if (cfg.field().dim() == 1) {
        const GspdeProblem gp = wrap("problem", [&] { return cfg.gspde_problem(); });
        wrap("gspde", [&] { return cfg.picard_config(gp); });
    }
    wrap("problem", [&] { return cfg.bdsde_problem(); });
    const ComparisonCheck& cc = cfg.checks.comparison;
    if (cc.enabled) {
        if (!cc.problem) field_error("checks.comparison.problem", "missing (required when the check is enabled)");
        if (cc.problem->f.lip_y > 0.0) field_error("checks.comparison.problem.f", "must not depend on y");
        for (const auto& gj : cc.problem->g) {
            if (gj.lip_y > 0.0) field_error("checks.comparison.problem.g", "must not depend on y");
        }
        if (cfg.field().dim() != 1) field_error("field", "the comparison check needs a one-dimensional field");
        const CoefficientField fld = cfg.field();
        const SpatialGrid sg = cc.space.value_or(cfg.sgrid);
        wrap("checks.comparison.problem", [&] {
            return GspdeProblem(sg, TimeGrid(cfg.tgrid.horizon(), cc.steps), fld, cfg.scenarios,
                                spatial::shifted(cc.problem->terminal, cc.shift),
                                reaction::sum({compose_all({cc.problem->f}, fld).front(), reaction::constant(cc.f_shift)}),
                                compose_all(cc.problem->g, fld), cc.problem->c_bar, cc.problem->alpha_bar);
        });
    }
    const auto& rc = cfg.checks.representation;
    if (rc.enabled && rc.steps % 4 != 0) {
        for (double c : rc.checkpoints) {
            const double pos = c * static_cast<double>(rc.steps);
            if (std::abs(pos - std::round(pos)) > 1e-9) {
                field_error("checks.representation.checkpoints", "every checkpoint must be a grid time at the base steps");
            }
        }
    }
    Json hashed = doc;
    hashed.erase("output_dir");
    cfg.canonical = hashed.dump();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file '" + path + "'");
    Json doc;
    try {
        doc = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw UsageError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return parse_config(doc);
}

}  // namespace gspde
