#include "insens/scenario.hpp"

#include "insens/io.hpp"

#include <toml.hpp>

#include <Eigen/Core>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

namespace insens {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Names
// ---------------------------------------------------------------------------

std::string_view to_string(SourceFamily f) noexcept {
    switch (f) {
    case SourceFamily::Zero: return "zero";
    case SourceFamily::Eigenmode: return "eigenmode";
    case SourceFamily::GaussianBump: return "gaussian_bump";
    }
    return "?";
}

std::string_view to_string(ConstructiveVariant v) noexcept {
    switch (v) {
    case ConstructiveVariant::ThetaInOmega: return "theta-in-omega";
    case ConstructiveVariant::BoundaryTheta: return "boundary-theta";
    }
    return "?";
}

std::string_view to_string(Subcommand s) noexcept {
    switch (s) {
    case Subcommand::VerifyShapeDerivative: return "verify shape-derivative";
    case Subcommand::VerifyControl: return "verify control";
    case Subcommand::RunApprox: return "run approx";
    case Subcommand::RunExactFd: return "run exact-fd";
    case Subcommand::RunConstructive: return "run constructive";
    }
    return "?";
}

Subcommand parse_subcommand(const std::string& verb, const std::string& target) {
    for (const Subcommand s : {Subcommand::VerifyShapeDerivative, Subcommand::VerifyControl, Subcommand::RunApprox,
                               Subcommand::RunExactFd, Subcommand::RunConstructive}) {
        if (to_string(s) == verb + " " + target) {
            return s;
        }
    }
    throw Error(ErrorCode::ValidationError, "unknown subcommand '" + verb + " " + target + "'");
}

namespace {

constexpr double pi = std::numbers::pi;

/// L²-normalized Dirichlet eigenfunction sin(iπx/lx)·sin(jπy/ly).
double eigenfunction(const DomainSpec& d, int i, int j, double x, double y) {
    return 2.0 / std::sqrt(d.lx * d.ly) * std::sin(i * pi * x / d.lx) * std::sin(j * pi * y / d.ly);
}

// ---------------------------------------------------------------------------
// Config reading
// ---------------------------------------------------------------------------

std::string position(const std::string& origin, const toml::source_region& src) {
    return origin + ":" + std::to_string(src.begin.line) + ":" + std::to_string(src.begin.column);
}

/// Typed access to one table that remembers which keys were read, so that
/// the rest can be reported as unknown.
class Section {
public:
    Section(const toml::table* table, std::string name, const std::string& origin)
        : table_(table), name_(std::move(name)), origin_(origin) {}

    [[nodiscard]] bool present() const noexcept { return table_ != nullptr; }
    [[nodiscard]] const std::string& name() const noexcept { return name_; }

    [[nodiscard]] const toml::node* node(const std::string& key) {
        known_.insert(key);
        return table_ ? table_->get(key) : nullptr;
    }

    [[nodiscard]] bool has(const std::string& key) { return node(key) != nullptr; }

    double number(const std::string& key, double fallback) {
        const toml::node* n = node(key);
        if (!n) {
            return fallback;
        }
        if (!n->is_number()) {
            parse_error(*n, key, "must be a number");
        }
        const double v = n->value<double>().value();
        if (!std::isfinite(v)) {
            validation(key, "must be finite");
        }
        return v;
    }

    int integer(const std::string& key, int fallback) {
        const toml::node* n = node(key);
        if (!n) {
            return fallback;
        }
        if (!n->is_integer()) {
            parse_error(*n, key, "must be an integer");
        }
        const std::int64_t v = n->value<std::int64_t>().value();
        if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
            validation(key, "is out of range");
        }
        return static_cast<int>(v);
    }

    bool boolean(const std::string& key, bool fallback) {
        const toml::node* n = node(key);
        if (!n) {
            return fallback;
        }
        if (!n->is_boolean()) {
            parse_error(*n, key, "must be true or false");
        }
        return n->value<bool>().value();
    }

    std::optional<std::string> string(const std::string& key) {
        const toml::node* n = node(key);
        if (!n) {
            return std::nullopt;
        }
        if (!n->is_string()) {
            parse_error(*n, key, "must be a string");
        }
        return n->value<std::string>().value();
    }

    std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
        const toml::node* n = node(key);
        if (!n) {
            return fallback;
        }
        const toml::array* a = n->as_array();
        if (!a) {
            parse_error(*n, key, "must be an array of numbers");
        }
        std::vector<double> out;
        for (const toml::node& e : *a) {
            if (!e.is_number()) {
                parse_error(e, key, "must contain numbers only");
            }
            out.push_back(e.value<double>().value());
        }
        return out;
    }

    std::vector<std::string> strings(const std::string& key) {
        const toml::node* n = node(key);
        if (!n) {
            return {};
        }
        const toml::array* a = n->as_array();
        if (!a) {
            parse_error(*n, key, "must be an array of strings");
        }
        std::vector<std::string> out;
        for (const toml::node& e : *a) {
            if (!e.is_string()) {
                parse_error(e, key, "must contain strings only");
            }
            out.push_back(e.value<std::string>().value());
        }
        return out;
    }

    Section table(const std::string& key) {
        const toml::node* n = node(key);
        if (n && !n->is_table()) {
            parse_error(*n, key, "must be a table");
        }
        return Section(n ? n->as_table() : nullptr, name_.empty() ? key : name_ + "." + key, origin_);
    }

    template <class E>
    E choice(const std::string& key, E fallback, std::initializer_list<std::pair<std::string_view, E>> options) {
        const auto s = string(key);
        if (!s) {
            return fallback;
        }
        std::string names;
        for (const auto& [name, value] : options) {
            if (*s == name) {
                return value;
            }
            names += (names.empty() ? "" : ", ") + std::string(name);
        }
        parse_error(*node(key), key, "must be one of " + names + ", got '" + *s + "'");
    }

    /// Rejects keys that no getter asked for.
    void finish() const {
        if (!table_) {
            return;
        }
        for (const auto& [k, v] : *table_) {
            const std::string key(k.str());
            if (!known_.contains(key)) {
                throw Error(ErrorCode::ParseError,
                            position(origin_, v.source()) + ": unknown key '" + key + "' in [" + name_ + "]");
            }
        }
    }

    [[noreturn]] void parse_error(const toml::node& n, const std::string& key, const std::string& what) const {
        throw Error(ErrorCode::ParseError, position(origin_, n.source()) + ": [" + name_ + "]." + key + " " + what);
    }

    [[noreturn]] void validation(const std::string& key, const std::string& what) const {
        throw Error(ErrorCode::ValidationError, origin_ + ": [" + name_ + "]." + key + " " + what);
    }

    void require(bool ok, const std::string& key, const std::string& what) const {
        if (!ok) {
            validation(key, what);
        }
    }

private:
    const toml::table* table_;
    std::string name_;
    const std::string& origin_;
    std::set<std::string> known_;
};

RegionShape read_shape(Section s) {
    if (!s.present()) {
        s.validation("shape", "is required");
    }
    const auto kind = s.string("shape");
    if (!kind) {
        s.validation("shape", "is required (rect, disk or annulus)");
    }
    RegionShape out;
    if (*kind == "rect") {
        AxisRect r;
        for (auto [key, field] : {std::pair{"x0", &r.x0}, {"x1", &r.x1}, {"y0", &r.y0}, {"y1", &r.y1}}) {
            s.require(s.has(key), key, "is required for a rect");
            *field = s.number(key, 0.0);
        }
        out = r;
    } else if (*kind == "disk") {
        Disk d;
        for (auto [key, field] : {std::pair{"cx", &d.cx}, {"cy", &d.cy}, {"r", &d.r}}) {
            s.require(s.has(key), key, "is required for a disk");
            *field = s.number(key, 0.0);
        }
        out = d;
    } else if (*kind == "annulus") {
        Annulus a;
        for (auto [key, field] : {std::pair{"cx", &a.cx}, {"cy", &a.cy}, {"r_in", &a.r_in}, {"r_out", &a.r_out}}) {
            s.require(s.has(key), key, "is required for an annulus");
            *field = s.number(key, 0.0);
        }
        out = a;
    } else {
        s.parse_error(*s.node("shape"), "shape", "must be one of rect, disk, annulus, got '" + *kind + "'");
    }
    s.require(out.well_formed(), "shape", "parameters describe an empty region: " + out.describe());
    s.finish();
    return out;
}

Face read_face(Section& s, const std::string& key, const std::string& name) {
    for (const Face f : {Face::Bottom, Face::Right, Face::Top, Face::Left}) {
        if (name == to_string(f)) {
            return f;
        }
    }
    s.parse_error(*s.node(key), key, "has unknown face '" + name + "' (bottom, right, top, left)");
}

void read_domain(Section s, ScenarioConfig& c) {
    if (!s.present()) {
        throw Error(ErrorCode::ValidationError, c.origin + ": missing section [domain]");
    }
    DomainSpec& d = c.domain;
    d.lx = s.number("lx", 1.0);
    d.ly = s.number("ly", 1.0);
    d.nx = s.integer("nx", 33);
    d.ny = s.integer("ny", 33);
    if (!s.has("omega")) {
        s.validation("omega", "is required");
    }
    if (!s.has("theta")) {
        s.validation("theta", "is required");
    }
    d.omega = read_shape(s.table("omega"));
    d.theta = read_shape(s.table("theta"));
    const bool disjoint = closures_disjoint(d.omega, d.theta);
    c.case_inferred = !s.has("case");
    d.geometric_case = s.choice("case", disjoint ? GeometricCase::Disjoint : GeometricCase::Intersecting,
                                {{"disjoint", GeometricCase::Disjoint}, {"intersecting", GeometricCase::Intersecting}});
    s.finish();
    try {
        validate_spec(d);
    } catch (const Error& e) {
        throw Error(ErrorCode::ValidationError, c.origin + ": [domain] " + e.what());
    }
}

void read_time(Section s, ScenarioConfig& c) {
    c.time.horizon = s.number("T", 1.0);
    c.time.steps = s.integer("Nt", 64);
    s.require(c.time.horizon > 0.0, "T", "must be positive");
    s.require(c.time.steps >= 1, "Nt", "must be at least 1");
    s.finish();
}

void read_source(Section s, ScenarioConfig& c) {
    SourceConfig& src = c.source;
    src.family = s.choice("family", SourceFamily::GaussianBump,
                          {{"zero", SourceFamily::Zero},
                           {"eigenmode", SourceFamily::Eigenmode},
                           {"gaussian_bump", SourceFamily::GaussianBump}});
    src.amplitude = s.number("amplitude", 1.0);
    src.i = s.integer("i", 1);
    src.j = s.integer("j", 1);
    src.cx = s.number("cx", 0.5);
    src.cy = s.number("cy", 0.5);
    src.s = s.number("s", 0.1);
    s.require(src.i >= 1 && src.j >= 1, "i", "and j must be positive mode numbers");
    s.require(src.s > 0.0, "s", "must be positive");
    if (s.has("window")) {
        const std::vector<double> w = s.numbers("window", {});
        s.require(w.size() == 2 && w[0] < w[1], "window", "must be [t0, t1] with t0 < t1");
        src.window = std::array<double, 2>{w[0], w[1]};
    }
    if (s.has("support")) {
        src.support = read_shape(s.table("support"));
    }
    s.finish();
}

void read_control(Section s, ScenarioConfig& c) {
    ControlConfig& k = c.control;
    k.epsilon = s.number("epsilon", k.epsilon);
    k.alpha_start = s.number("alpha_start", k.alpha_start);
    k.alpha_end = s.number("alpha_end", k.alpha_end);
    k.alpha_factor = s.number("alpha_factor", k.alpha_factor);
    k.cg_tol = s.number("cg_tol", k.cg_tol);
    k.cg_maxit = s.integer("cg_maxit", k.cg_maxit);
    k.terminal_mode = s.choice("terminal_mode", TerminalMode::None,
                               {{"none", TerminalMode::None},
                                {"approximate", TerminalMode::Approximate},
                                {"null", TerminalMode::Null}});
    if (s.has("weights")) {
        Section w = s.table("weights");
        k.w_trace = w.number("trace", k.w_trace);
        k.w_terminal = w.number("terminal", k.w_terminal);
        w.require(k.w_trace > 0.0, "trace", "must be positive");
        w.require(k.w_terminal > 0.0, "terminal", "must be positive");
        w.finish();
    }
    if (s.has("terminal_target")) {
        Section t = s.table("terminal_target");
        k.target_i = t.integer("i", 1);
        k.target_j = t.integer("j", 1);
        k.target_amplitude = t.number("amplitude", k.target_amplitude);
        t.require(k.target_i >= 1 && k.target_j >= 1, "i", "and j must be positive mode numbers");
        t.finish();
    }
    if (s.has("terminal_epsilon")) {
        k.terminal_epsilon = s.number("terminal_epsilon", 0.0);
        s.require(*k.terminal_epsilon > 0.0, "terminal_epsilon", "must be positive");
    }
    k.null_reduction = s.number("null_reduction", k.null_reduction);
    s.require(k.epsilon > 0.0, "epsilon", "must be positive");
    s.require(k.alpha_end > 0.0 && k.alpha_start >= k.alpha_end, "alpha_start",
              "must be at least alpha_end, which must be positive");
    s.require(k.alpha_factor > 1.0, "alpha_factor", "must exceed 1");
    s.require(k.cg_tol > 0.0, "cg_tol", "must be positive");
    s.require(k.cg_maxit >= 1, "cg_maxit", "must be at least 1");
    s.require(k.null_reduction > 0.0 && k.null_reduction < 1.0, "null_reduction", "must lie in (0, 1)");
    s.finish();
}

void read_directions(Section s, ScenarioConfig& c) {
    for (const std::string& f : s.strings("faces")) {
        c.directions.faces.push_back(read_face(s, "faces", f));
    }
    c.directions.sample_files = s.strings("sample_files");
    c.directions.tol_U = s.number("tol_U", c.directions.tol_U);
    s.require(c.directions.tol_U > 0.0, "tol_U", "must be positive");
    s.finish();
}

void read_constructive(Section s, ScenarioConfig& c) {
    ConstructiveConfig& k = c.constructive;
    k.variant = s.choice("variant", k.variant,
                         {{"theta-in-omega", ConstructiveVariant::ThetaInOmega},
                          {"boundary-theta", ConstructiveVariant::BoundaryTheta}});
    k.commutator = s.choice("commutator", k.commutator,
                            {{"discrete", CommutatorKind::Discrete}, {"analytic", CommutatorKind::Analytic}});
    k.time_rule = s.choice("time_rule", k.time_rule,
                           {{"scheme-consistent", TimeDerivativeRule::SchemeConsistent},
                            {"centered", TimeDerivativeRule::Centered}});
    k.tol_c = s.number("tol_c", k.tol_c);
    s.require(k.tol_c > 0.0, "tol_c", "must be positive");
    s.finish();
}

void read_verify(Section s, ScenarioConfig& c) {
    if (const auto f = s.string("face")) {
        c.verify.face = read_face(s, "face", *f);
    }
    c.verify.taus = s.numbers("taus", c.verify.taus);
    c.verify.tolerance = s.number("tolerance", c.verify.tolerance);
    s.require(!c.verify.taus.empty(), "taus", "must not be empty");
    for (const double t : c.verify.taus) {
        s.require(t > 0.0, "taus", "must be positive");
    }
    s.require(c.verify.tolerance > 0.0, "tolerance", "must be positive");
    s.finish();
}

void read_output(Section s, ScenarioConfig& c) {
    if (const auto d = s.string("dir")) {
        s.require(!d->empty(), "dir", "must not be empty");
        c.output.dir = *d;
    }
    c.output.fields = s.boolean("fields", c.output.fields);
    c.output.csv = s.boolean("csv", c.output.csv);
    c.output.svg = s.boolean("svg", c.output.svg);
    s.finish();
}

json shape_json(const RegionShape& r) {
    return std::visit(
        [](const auto& s) -> json {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, AxisRect>) {
                return {{"shape", "rect"}, {"x0", s.x0}, {"x1", s.x1}, {"y0", s.y0}, {"y1", s.y1}};
            } else if constexpr (std::is_same_v<S, Disk>) {
                return {{"shape", "disk"}, {"cx", s.cx}, {"cy", s.cy}, {"r", s.r}};
            } else {
                return {{"shape", "annulus"}, {"cx", s.cx}, {"cy", s.cy}, {"r_in", s.r_in}, {"r_out", s.r_out}};
            }
        },
        r.variant());
}

} // namespace

SpaceTimeFunction SourceConfig::function(const DomainSpec& domain) const {
    const SourceConfig c = *this;
    const DomainSpec d = domain;
    return [c, d](double t, double x, double y) {
        if (c.family == SourceFamily::Zero || (c.window && (t < (*c.window)[0] || t > (*c.window)[1]))) {
            return 0.0;
        }
        if (c.support && !c.support->contains(x, y)) {
            return 0.0;
        }
        if (c.family == SourceFamily::Eigenmode) {
            return c.amplitude * eigenfunction(d, c.i, c.j, x, y);
        }
        const double r2 = (x - c.cx) * (x - c.cx) + (y - c.cy) * (y - c.cy);
        return c.amplitude * std::exp(-r2 / (2.0 * c.s * c.s));
    };
}

RegularizationSchedule ControlConfig::schedule() const {
    RegularizationSchedule s = RegularizationSchedule::geometric(alpha_start, alpha_end, alpha_factor);
    s.cg_tol = cg_tol;
    s.cg_maxit = cg_maxit;
    s.epsilon = epsilon;
    return s;
}

ScenarioConfig parse_config_text(const std::string& text, const std::string& origin) {
    ScenarioConfig c;
    c.origin = origin;
    toml::table root;
    try {
        root = toml::parse(text, origin);
    } catch (const toml::parse_error& e) {
        throw Error(ErrorCode::ParseError, position(origin, e.source()) + ": " + std::string(e.description()));
    }
    Section top(&root, "", c.origin);
    read_domain(top.table("domain"), c);
    read_time(top.table("time"), c);
    read_source(top.table("source"), c);
    read_control(top.table("control"), c);
    read_directions(top.table("directions"), c);
    read_constructive(top.table("constructive"), c);
    read_verify(top.table("verify"), c);
    read_output(top.table("output"), c);
    for (const auto& [k, v] : root) {
        static const std::set<std::string> sections{"domain",       "time",   "source", "control", "directions",
                                                    "constructive", "verify", "output"};
        if (!sections.contains(std::string(k.str()))) {
            throw Error(ErrorCode::ParseError,
                        position(origin, v.source()) + ": unknown section [" + std::string(k.str()) + "]");
        }
    }
    return c;
}

ScenarioConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open config " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

json config_to_json(const ScenarioConfig& c) {
    const DomainSpec& d = c.domain;
    json source = {{"family", to_string(c.source.family)}, {"amplitude", c.source.amplitude}};
    if (c.source.family == SourceFamily::Eigenmode) {
        source["i"] = c.source.i;
        source["j"] = c.source.j;
    } else if (c.source.family == SourceFamily::GaussianBump) {
        source["cx"] = c.source.cx;
        source["cy"] = c.source.cy;
        source["s"] = c.source.s;
    }
    if (c.source.window) {
        source["window"] = {(*c.source.window)[0], (*c.source.window)[1]};
    }
    if (c.source.support) {
        source["support"] = shape_json(*c.source.support);
    }
    const ControlConfig& k = c.control;
    json control = {{"epsilon", k.epsilon},
                    {"alpha_start", k.alpha_start},
                    {"alpha_end", k.alpha_end},
                    {"alpha_factor", k.alpha_factor},
                    {"cg_tol", k.cg_tol},
                    {"cg_maxit", k.cg_maxit},
                    {"terminal_mode", to_string(k.terminal_mode)},
                    {"weights", {{"trace", k.w_trace}, {"terminal", k.w_terminal}}},
                    {"terminal_target", {{"i", k.target_i}, {"j", k.target_j}, {"amplitude", k.target_amplitude}}},
                    {"null_reduction", k.null_reduction}};
    control["terminal_epsilon"] = k.terminal_epsilon ? json(*k.terminal_epsilon) : json("0.05*|y_T|");
    json faces = json::array();
    for (const Face f : c.directions.faces) {
        faces.push_back(to_string(f));
    }
    return {
        {"domain",
         {{"lx", d.lx},
          {"ly", d.ly},
          {"nx", d.nx},
          {"ny", d.ny},
          {"omega", shape_json(d.omega)},
          {"theta", shape_json(d.theta)},
          {"case", d.geometric_case == GeometricCase::Disjoint ? "disjoint" : "intersecting"},
          {"case_inferred", c.case_inferred}}},
        {"time", {{"T", c.time.horizon}, {"Nt", c.time.steps}}},
        {"source", source},
        {"control", control},
        {"directions", {{"faces", faces}, {"sample_files", c.directions.sample_files}, {"tol_U", c.directions.tol_U}}},
        {"constructive",
         {{"variant", to_string(c.constructive.variant)},
          {"commutator", to_string(c.constructive.commutator)},
          {"time_rule", to_string(c.constructive.time_rule)},
          {"tol_c", c.constructive.tol_c}}},
        {"verify",
         {{"face", to_string(c.verify.face)}, {"taus", c.verify.taus}, {"tolerance", c.verify.tolerance}}},
        {"output", {{"dir", c.output.dir}, {"fields", c.output.fields}, {"csv", c.output.csv}, {"svg", c.output.svg}}},
    };
}

std::string run_id(const ScenarioConfig& config, Subcommand subcommand, std::uint64_t seed) {
    const std::string text = config_to_json(config).dump() + "|" + std::string(to_string(subcommand)) + "|" +
                             std::to_string(seed);
    std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a
    for (const unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

namespace {

/// Data shared by the report writers.
struct RunOutput {
    json results = json::object();
    bool criteria_met = false;
    std::optional<Control> control;
    std::optional<SpaceTimeField> xi;
    std::optional<SensitivityKernel> kernel;   ///< kernel of the final cascade
    std::optional<SensitivityKernel> baseline; ///< kernel without control
    std::vector<std::vector<double>> schedule; ///< α, residual, ... per stage
    std::string schedule_header;
    std::vector<std::vector<std::string>> shape_rows;
    std::vector<std::pair<std::string, double>> summary;
};

json vec_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

void note_summary(RunOutput& out, const json& j, const std::string& prefix = {}) {
    for (const auto& [key, value] : j.items()) {
        const std::string name = prefix.empty() ? key : prefix + "." + key;
        if (value.is_number()) {
            out.summary.emplace_back(name, value.get<double>());
        } else if (value.is_boolean()) {
            out.summary.emplace_back(name, value.get<bool>() ? 1.0 : 0.0);
        } else if (value.is_object()) {
            note_summary(out, value, name);
        }
    }
}

TerminalState eigen_target(const Grid& g, const ScenarioConfig& c) {
    TerminalState yT;
    yT.values.resize(g.num_nodes());
    for (int k = 0; k < g.num_nodes(); ++k) {
        yT.values[k] = c.control.target_amplitude *
                       eigenfunction(g.spec, c.control.target_i, c.control.target_j, g.x[k], g.y[k]);
    }
    return yT;
}

/// Trace, terminal and kernel norms of the cascade (ξ, h), all from one fresh solve.
json recompute(const TraceOperator& op, const SpaceTimeField& xi, const Control& h, RunOutput& out) {
    const Grid& g = op.grid();
    const AugmentedTrace tr = op.observe(xi, h);
    const SensitivityKernel k = sensitivity_kernel(tr.y, tr.z);
    out.kernel = k;
    return {{"kernel_l1", kernel_l1_norm(k, g.boundary)},
            {"trace_norm_y", norm(tr.y, g)},
            {"trace_norm_z", norm(tr.z, g)},
            {"terminal_norm", norm(tr.terminal, g)},
            {"control_norm", norm(h, g)}};
}

TerminalGoal terminal_goal(const Grid& g, const ScenarioConfig& c, json& info) {
    TerminalGoal goal;
    goal.mode = c.control.terminal_mode;
    goal.kernel_epsilon = c.control.epsilon;
    goal.w_trace = c.control.w_trace;
    goal.w_terminal = c.control.w_terminal;
    goal.null_reduction = c.control.null_reduction;
    if (goal.mode == TerminalMode::Approximate) {
        goal.y_T = eigen_target(g, c);
        const double target_norm = norm(*goal.y_T, g);
        goal.terminal_epsilon = c.control.terminal_epsilon.value_or(0.05 * target_norm);
        info["target_norm"] = target_norm;
        info["terminal_epsilon"] = goal.terminal_epsilon;
    }
    return goal;
}

void run_verify_shape(const ScenarioConfig& c, RunOutput& out) {
    const Grid g = build_grid(c.domain, MaskRule::CellOverlap);
    const SpaceTimeFunction xi_f = c.source.function(c.domain);
    const SpaceTimeFunction zero = [](double, double, double) { return 0.0; };
    const TraceOperator op(std::make_shared<const HeatPropagator>(g, c.time));
    const SpaceTimeField xi = sample(xi_f, g, c.time);
    const SensitivityKernel k = cascade_kernel(op, xi, zero_control(g, c.time));
    out.kernel = k;
    out.xi = xi;
    const double formula = directional_derivative(k, PerturbationField::face_dilation(c.verify.face), g.boundary);
    const FiniteDifferenceResult fd = finite_difference_dJ(c.domain, c.time, xi_f, zero, c.verify.face, c.verify.taus);

    const auto rel_err = [&](double v) {
        const double d = std::abs(v - formula);
        return d == 0.0 ? 0.0 : d / std::max(std::abs(formula), std::numeric_limits<double>::min());
    };
    const auto num = [](double v) {
        std::ostringstream s;
        s.precision(17);
        s << v;
        return s.str();
    };
    json samples = json::array();
    for (const auto& s : fd.samples) {
        samples.push_back({{"tau", s.tau},
                           {"J_plus", s.j_plus},
                           {"J_minus", s.j_minus},
                           {"fd_value", s.fd_value},
                           {"rel_err", rel_err(s.fd_value)}});
        out.shape_rows.push_back(
            {num(s.tau), num(s.j_plus), num(s.j_minus), num(s.fd_value), num(formula), num(rel_err(s.fd_value))});
    }
    const bool richardson = fd.samples.size() >= 2;
    const double best = richardson ? fd.extrapolated : fd.samples.back().fd_value;
    if (richardson) {
        // The extrapolated value has no J pair of its own; its τ column is 0.
        out.shape_rows.push_back({"0", "", "", num(best), num(formula), num(rel_err(best))});
    }
    out.results = {{"face", to_string(c.verify.face)},
                   {"formula_value", formula},
                   {"fd_value", best},
                   {"richardson", richardson},
                   {"rel_err", rel_err(best)},
                   {"tolerance", c.verify.tolerance},
                   {"samples", samples},
                   {"kernel_l1", kernel_l1_norm(k, g.boundary)}};
    out.criteria_met = rel_err(best) <= c.verify.tolerance;
}

void run_approx(const ScenarioConfig& c, RunOutput& out) {
    const Grid g = build_grid(c.domain);
    const TraceOperator op(std::make_shared<const HeatPropagator>(g, c.time));
    const SpaceTimeField xi = sample(c.source.function(c.domain), g, c.time);
    const RegularizationSchedule sched = c.control.schedule();
    json info = json::object();
    ControlResult r;
    if (c.control.terminal_mode == TerminalMode::None) {
        r = approx_insensitize(op, xi, c.control.epsilon, sched);
    } else {
        r = insensitize_with_terminal(op, xi, terminal_goal(g, c, info), sched);
    }
    RunOutput base_out;
    const json before = recompute(op, xi, zero_control(g, c.time), base_out);
    out.baseline = base_out.kernel;
    const json after = recompute(op, xi, r.h, out);
    json hist = json::array();
    std::vector<double> a, res, term, kern, misfit;
    for (const ScheduleStep& s : r.history) {
        hist.push_back({{"alpha", s.alpha},
                        {"cg_iterations", s.cg_iterations},
                        {"cg_converged", s.cg_converged},
                        {"misfit", s.misfit},
                        {"trace_residual", s.trace_residual},
                        {"terminal_residual", s.terminal_residual},
                        {"kernel_l1", s.kernel_l1}});
        a.push_back(s.alpha);
        res.push_back(s.trace_residual);
        term.push_back(s.terminal_residual);
        kern.push_back(s.kernel_l1);
        misfit.push_back(s.misfit);
    }
    out.schedule = {a, res, term, kern, misfit};
    out.schedule_header = "alpha trace_residual terminal_residual kernel_l1 misfit";
    const double kb = before["kernel_l1"], ka = after["kernel_l1"];
    out.results = {{"terminal_mode", to_string(c.control.terminal_mode)},
                   {"epsilon", c.control.epsilon},
                   {"uncontrolled", before},
                   {"controlled", after},
                   {"kernel_reduction", ka > 0.0 ? kb / ka : (kb > 0.0 ? INFINITY : 1.0)},
                   {"residual_y", r.residual_y},
                   {"residual_z", r.residual_z},
                   {"residual_terminal", r.residual_terminal},
                   {"alpha", r.alpha},
                   {"cg_iterations", r.cg_iterations},
                   {"schedule_exhausted", r.schedule_exhausted},
                   {"solver_failure", r.solver_failure},
                   {"history", hist},
                   {"note", r.note}};
    if (!info.empty()) {
        out.results["terminal_goal"] = info;
    }
    out.criteria_met = r.criteria_met;
    out.control = r.h;
    out.xi = xi;
}

PerturbationField sample_direction(const std::string& path, const Grid& g) {
    const std::vector<double> v = read_numbers(path);
    if (v.size() != g.boundary.size()) {
        throw Error(ErrorCode::ValidationError, path + ": " + std::to_string(v.size()) + " samples, the boundary has " +
                                                    std::to_string(g.boundary.size()) + " points");
    }
    return PerturbationField::samples(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
}

void run_exact(const ScenarioConfig& c, const RunOptions& opt, RunOutput& out) {
    if (c.directions.faces.empty() && c.directions.sample_files.empty()) {
        throw Error(ErrorCode::ValidationError, c.origin + ": [directions] lists no perturbation fields");
    }
    const Grid g = build_grid(c.domain);
    std::vector<PerturbationField> dirs;
    for (const Face f : c.directions.faces) {
        dirs.push_back(PerturbationField::face_dilation(f));
    }
    for (const std::string& p : c.directions.sample_files) {
        dirs.push_back(sample_direction(p, g));
    }
    // The half-window split needs 2M | Nt; M is only known after orthonormalization.
    int M = 1;
    try {
        M = orthonormalize_normal_traces(dirs, g.boundary).size();
    } catch (const Error& e) {
        if (e.code() != ErrorCode::AllDirectionsTangent) {
            throw;
        }
    }
    const TimeAxis time = aligned_time(c.time, M);
    const TraceOperator op(std::make_shared<const HeatPropagator>(g, time));
    const SpaceTimeField xi = sample(c.source.function(c.domain), g, time);

    ExactOptions eo;
    eo.epsilon = c.control.epsilon;
    eo.approx_schedule = c.control.schedule();
    eo.basis_schedule = c.control.schedule();
    eo.lambda.tol_U = c.directions.tol_U;
    eo.lambda.seed = opt.seed;
    eo.parallel = opt.parallel;
    eo.strict = false;
    json info = json::object();
    if (c.control.terminal_mode != TerminalMode::None) {
        eo.terminal = terminal_goal(g, c, info);
    }
    const ExactResult r = exact_insensitize(op, xi, dirs, eo);

    RunOutput base_out;
    const json before = recompute(op, xi, zero_control(g, time), base_out);
    out.baseline = base_out.kernel;
    const json after = recompute(op, xi, r.h, out);

    json table = json::array();
    double worst = 0.0;
    if (!r.all_tangent) {
        const Eigen::VectorXd U = direct_U(op, xi, r.h, r.basis);
        for (int k = 0; k < r.basis.size(); ++k) {
            const double ck = r.system.c[k];
            const double bound = c.directions.tol_U * std::max(1.0, std::abs(ck));
            worst = std::max(worst, std::abs(U[k]) / bound);
            table.push_back({{"k", k}, {"U_k", U[k]}, {"c_k", ck}, {"bound", bound}});
        }
    }
    json lambda = {{"values", vec_json(r.lambda.lambda)},
                   {"method", to_string(r.lambda.method)},
                   {"iterations", r.lambda.iterations},
                   {"radius", r.lambda.radius},
                   {"success", r.lambda.success},
                   {"warning", r.lambda.warning}};
    out.schedule = {r.basis_controls.alpha_history, r.basis_controls.error_history};
    out.schedule_header = "alpha max_basis_trace_error";
    const double kb = before["kernel_l1"], ka = after["kernel_l1"];
    out.results = {{"directions", static_cast<int>(dirs.size())},
                   {"basis_size", r.all_tangent ? 0 : r.basis.size()},
                   {"kept", r.basis.kept},
                   {"all_tangent", r.all_tangent},
                   {"time_steps_requested", c.time.steps},
                   {"time_steps_used", time.steps},
                   {"epsilon", c.control.epsilon},
                   {"lambda", lambda},
                   {"residuals", table},
                   {"max_U_over_bound", worst},
                   {"q_deviation", r.q_deviation},
                   {"q_target", 1.0 / (4.0 * M * M)},
                   {"amplification", r.amplification},
                   {"epsilon0", r.epsilon0},
                   {"stage1_trace_norm", r.stage1_trace_norm},
                   {"stage1_met", r.stage1_met},
                   {"terminal_residual", r.terminal_residual},
                   {"uncontrolled", before},
                   {"controlled", after},
                   {"kernel_reduction", ka > 0.0 ? kb / ka : (kb > 0.0 ? INFINITY : 1.0)},
                   {"basis_alpha", r.basis_controls.alpha},
                   {"basis_max_error", r.all_tangent ? 0.0 : r.basis_controls.max_error()},
                   {"verified", r.verified},
                   {"note", r.note}};
    if (!info.empty()) {
        out.results["terminal_goal"] = info;
    }
    out.criteria_met = r.verified;
    out.control = r.h;
    out.xi = xi;
}

void run_constructive(const ScenarioConfig& c, RunOutput& out) {
    const Grid g = build_grid(c.domain);
    const auto heat = std::make_shared<const HeatPropagator>(g, c.time);
    const TraceOperator op(heat);
    const SpaceTimeField xi = sample(c.source.function(c.domain), g, c.time);
    ConstructiveOptions o;
    o.commutator = c.constructive.commutator;
    o.time_rule = c.constructive.time_rule;
    o.tol_c = c.constructive.tol_c;
    o.strict = false;
    const ConstructionReport r = c.constructive.variant == ConstructiveVariant::ThetaInOmega
                                     ? construct_theta_in_omega(*heat, xi, o)
                                     : construct_boundary_theta(*heat, xi, o);
    RunOutput base_out;
    const json before = recompute(op, xi, zero_control(g, c.time), base_out);
    out.baseline = base_out.kernel;
    const json after = recompute(op, xi, r.h, out);
    const double y0_sup = r.y0.values.size() ? r.y0.values.cwiseAbs().maxCoeff() : 0.0;
    out.results = {{"variant", to_string(c.constructive.variant)},
                   {"commutator", to_string(c.constructive.commutator)},
                   {"time_rule", to_string(c.constructive.time_rule)},
                   {"support_ok", r.support_ok},
                   {"support_violation", r.support_violation},
                   {"y0_defect", r.y0_defect},
                   {"initial_defect", r.initial_defect},
                   {"y0_sup", y0_sup},
                   {"z0_sup", r.z0_sup},
                   {"z0_outside_theta", r.z0_outside},
                   {"z0_theta", r.z0_theta},
                   {"uncontrolled", before},
                   {"controlled", after},
                   {"verified", r.verified},
                   {"note", r.note}};
    out.criteria_met = r.verified;
    out.control = r.h;
    out.xi = xi;
}

void run_verify_control(const ScenarioConfig& c, const RunOptions& opt, RunOutput& out) {
    if (!opt.control_file) {
        throw Error(ErrorCode::ValidationError, "verify control needs --control FILE");
    }
    const Control h = read_binary<ControlTag>(*opt.control_file);
    const Grid g = build_grid(c.domain);
    if (std::abs(h.time.horizon - c.time.horizon) > 1e-12 * c.time.horizon) {
        throw Error(ErrorCode::ValidationError, *opt.control_file + ": horizon differs from [time].T");
    }
    if (static_cast<std::size_t>(h.points()) != g.omega_nodes.size()) {
        throw Error(ErrorCode::ValidationError, *opt.control_file + ": " + std::to_string(h.points()) +
                                                    " control nodes, the grid has " +
                                                    std::to_string(g.omega_nodes.size()));
    }
    // Controls from exact-fd runs may carry a rounded-up step count.
    const TraceOperator op(std::make_shared<const HeatPropagator>(g, h.time));
    const SpaceTimeField xi = sample(c.source.function(c.domain), g, h.time);
    RunOutput base_out;
    const json before = recompute(op, xi, zero_control(g, h.time), base_out);
    out.baseline = base_out.kernel;
    const json after = recompute(op, xi, h, out);
    out.results = {{"control_file", *opt.control_file},
                   {"time_steps", h.time.steps},
                   {"uncontrolled", before},
                   {"controlled", after},
                   {"epsilon", c.control.epsilon}};
    out.criteria_met = after["kernel_l1"].get<double>() <= c.control.epsilon;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// Minimal line chart with linear or log axes.
void write_svg(const std::string& path, const std::vector<double>& xs, const std::vector<double>& ys,
               const std::string& title, bool logx, bool logy) {
    const auto tx = [&](double v) { return logx ? std::log10(std::max(v, 1e-300)) : v; };
    const auto ty = [&](double v) { return logy ? std::log10(std::max(std::abs(v), 1e-300)) : v; };
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        x0 = std::min(x0, tx(xs[i]));
        x1 = std::max(x1, tx(xs[i]));
        y0 = std::min(y0, ty(ys[i]));
        y1 = std::max(y1, ty(ys[i]));
    }
    if (!(x1 > x0)) {
        x0 -= 1.0;
        x1 += 1.0;
    }
    if (!(y1 > y0)) {
        y0 -= 1.0;
        y1 += 1.0;
    }
    constexpr double W = 640, H = 400, m = 50;
    std::ofstream out(path);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
    }
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << m << "\" y=\"30\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n"
        << "<rect x=\"" << m << "\" y=\"" << m << "\" width=\"" << W - 2 * m << "\" height=\"" << H - 2 * m
        << "\" fill=\"none\" stroke=\"#888\"/>\n<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double px = m + (tx(xs[i]) - x0) / (x1 - x0) * (W - 2 * m);
        const double py = H - m - (ty(ys[i]) - y0) / (y1 - y0) * (H - 2 * m);
        out << px << ',' << py << ' ';
    }
    out << "\"/>\n</svg>\n";
}

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json environment() {
    return {{"compiler", __VERSION__},
            {"cxx_standard", __cplusplus},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
            {"hardware_threads", std::thread::hardware_concurrency()},
            {"started_utc", utc_now()}};
}

json interpretation() {
    return {{"basis_trace_targets", "both traces of h_{k,a} are fitted to their own targets (gamma_{k,a,y}, gamma_{k,a,z})"},
            {"gamma_windows", "each time level belongs to one half-window; y-targets use the discrete window measure"},
            {"terminal_channels", "terminal goals require intersecting control and observation sets"},
            {"regularity_norm", "sup |V.n| over the boundary samples"}};
}

} // namespace

RunReport run_scenario(const ScenarioConfig& config, Subcommand subcommand, const RunOptions& options) {
    const auto t0 = std::chrono::steady_clock::now();
    RunOutput out;
    try {
        switch (subcommand) {
        case Subcommand::VerifyShapeDerivative: run_verify_shape(config, out); break;
        case Subcommand::VerifyControl: run_verify_control(config, options, out); break;
        case Subcommand::RunApprox: run_approx(config, out); break;
        case Subcommand::RunExactFd: run_exact(config, options, out); break;
        case Subcommand::RunConstructive: run_constructive(config, out); break;
        }
    } catch (const Error& e) {
        throw Error(e.code(), std::string(to_string(subcommand)) + ": " + e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    RunReport rep;
    rep.criteria_met = out.criteria_met;
    rep.exit_code = out.criteria_met ? 0 : 2;
    rep.json = {{"tool", "insenskit"},
                {"run_id", run_id(config, subcommand, options.seed)},
                {"subcommand", to_string(subcommand)},
                {"seed", options.seed},
                {"parallel", options.parallel},
                {"config", config_to_json(config)},
                {"interpretation", interpretation()},
                {"results", out.results},
                {"criteria_met", out.criteria_met},
                {"exit_code", rep.exit_code},
                {"environment", environment()},
                {"timing", {{"wall_seconds", seconds}}}};
    if (!options.write_files) {
        return rep;
    }

    namespace fs = std::filesystem;
    const fs::path dir = options.out_dir.value_or(config.output.dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
    }
    const auto file = [&](const std::string& name) {
        rep.files.push_back((dir / name).string());
        return rep.files.back();
    };

    note_summary(out, out.results);
    {
        std::ofstream s(file("summary.csv"));
        s.precision(17);
        s << "run_id,subcommand,metric,value\n";
        const std::string id = rep.json["run_id"];
        for (const auto& [name, value] : out.summary) {
            s << id << ',' << to_string(subcommand) << ',' << name << ',' << value << '\n';
        }
    }
    if (out.kernel) {
        const Grid g = build_grid(config.domain, subcommand == Subcommand::VerifyShapeDerivative
                                                     ? MaskRule::CellOverlap
                                                     : MaskRule::NodeIndicator);
        std::vector<double> arc, kv, kb;
        for (std::size_t p = 0; p < g.boundary.size(); ++p) {
            arc.push_back(g.boundary.points[p].arc);
            kv.push_back(out.kernel->values[static_cast<Eigen::Index>(p)]);
            if (out.baseline) {
                kb.push_back(out.baseline->values[static_cast<Eigen::Index>(p)]);
            }
        }
        write_columns(file("kernel.dat"), {arc, kv}, "arc_length kernel");
        if (out.baseline) {
            write_columns(file("kernel_uncontrolled.dat"), {arc, kb}, "arc_length kernel");
        }
        if (config.output.svg) {
            write_svg(file("kernel.svg"), arc, kv, "sensitivity kernel vs arc length", false, false);
        }
    }
    if (!out.schedule.empty() && !out.schedule.front().empty()) {
        write_columns(file("schedule.dat"), out.schedule, out.schedule_header);
        if (config.output.svg) {
            write_svg(file("schedule.svg"), out.schedule[0], out.schedule[1], "residual vs alpha", true, true);
        }
    }
    if (!out.shape_rows.empty()) {
        std::ofstream s(file("shape_derivative.csv"));
        s << "tau,J_plus,J_minus,fd_value,formula_value,rel_err\n";
        for (const auto& row : out.shape_rows) {
            for (std::size_t i = 0; i < row.size(); ++i) {
                s << (i ? "," : "") << row[i];
            }
            s << '\n';
        }
    }
    if (config.output.fields) {
        if (out.control) {
            write_binary(file("control.bin"), *out.control);
        }
        if (out.xi) {
            write_binary(file("xi.bin"), *out.xi);
        }
    }
    if (config.output.csv && out.control) {
        write_csv(file("control.csv"), *out.control);
    }
    {
        std::ofstream r(file("report.json"));
        r << rep.json.dump(2) << '\n';
    }
    return rep;
}

} // namespace insens
