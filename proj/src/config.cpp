#include "hmcda/config.hpp"

#include "hmcda/error.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace hmcda {

using nlohmann::json;

// ---------------------------------------------------------------------------
// TOML subset

namespace {

struct TomlLine {
    std::string text;
    std::size_t pos = 0;
    int number = 0;

    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigError("line " + std::to_string(number) + ": " + msg);
    }
    void skip_ws() {
        while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
    }
    bool at_end_or_comment() {
        skip_ws();
        return pos >= text.size() || text[pos] == '#';
    }
    std::string key() {
        skip_ws();
        const std::size_t start = pos;
        while (pos < text.size() && (std::isalnum(static_cast<unsigned char>(text[pos])) || text[pos] == '_' || text[pos] == '-'))
            ++pos;
        if (pos == start) fail("expected a key");
        return text.substr(start, pos - start);
    }
    json value() {
        skip_ws();
        if (pos >= text.size()) fail("missing value");
        const char c = text[pos];
        if (c == '"') return string_value();
        if (c == '[') return array_value();
        if (text.compare(pos, 4, "true") == 0) {
            pos += 4;
            return true;
        }
        if (text.compare(pos, 5, "false") == 0) {
            pos += 5;
            return false;
        }
        return number_value();
    }
    json string_value() {
        std::string out;
        ++pos;
        while (pos < text.size() && text[pos] != '"') {
            if (text[pos] == '\\' && pos + 1 < text.size()) {
                const char e = text[++pos];
                switch (e) {
                    case 'n': out += '\n'; break;
                    case 't': out += '\t'; break;
                    case '"': out += '"'; break;
                    case '\\': out += '\\'; break;
                    default: fail(std::string("unsupported escape \\") + e);
                }
            } else {
                out += text[pos];
            }
            ++pos;
        }
        if (pos >= text.size()) fail("unterminated string");
        ++pos;
        return out;
    }
    json array_value() {
        json arr = json::array();
        ++pos;
        for (;;) {
            skip_ws();
            if (pos >= text.size()) fail("unterminated array");
            if (text[pos] == ']') {
                ++pos;
                return arr;
            }
            arr.push_back(value());
            skip_ws();
            if (pos < text.size() && text[pos] == ',') ++pos;
            else if (pos < text.size() && text[pos] != ']') fail("expected ',' or ']' in array");
        }
    }
    json number_value() {
        const std::size_t start = pos;
        while (pos < text.size() && (std::isalnum(static_cast<unsigned char>(text[pos])) || text[pos] == '+' ||
                                     text[pos] == '-' || text[pos] == '.' || text[pos] == '_'))
            ++pos;
        std::string tok = text.substr(start, pos - start);
        std::erase(tok, '_');
        if (tok.empty()) fail("expected a value");
        const bool is_float = tok.find_first_of(".eE") != std::string::npos || tok == "inf" || tok == "nan";
        try {
            std::size_t used = 0;
            if (is_float) {
                const double d = std::stod(tok, &used);
                if (used == tok.size()) return d;
            } else if (tok[0] == '-') {
                const long long v = std::stoll(tok, &used);
                if (used == tok.size()) return v;
            } else {
                const unsigned long long v = std::stoull(tok, &used);
                if (used == tok.size()) return v;
            }
        } catch (const std::exception&) {
        }
        fail("invalid value '" + tok + "'");
    }
};

}  // namespace

json parse_toml_subset(const std::string& text) {
    json root = json::object();
    json* section = &root;
    std::istringstream in(text);
    std::string raw;
    int number = 0;
    while (std::getline(in, raw)) {
        TomlLine line{raw, 0, ++number};
        if (line.at_end_or_comment()) continue;
        if (line.text[line.pos] == '[') {
            ++line.pos;
            section = &root;
            for (;;) {
                const std::string k = line.key();
                json& next = (*section)[k];
                if (next.is_null()) next = json::object();
                if (!next.is_object()) line.fail("'" + k + "' is not a table");
                section = &next;
                line.skip_ws();
                if (line.pos < line.text.size() && line.text[line.pos] == '.') {
                    ++line.pos;
                    continue;
                }
                if (line.pos >= line.text.size() || line.text[line.pos] != ']') line.fail("expected ']'");
                ++line.pos;
                break;
            }
            if (!line.at_end_or_comment()) line.fail("trailing characters after table header");
            continue;
        }
        const std::string k = line.key();
        line.skip_ws();
        if (line.pos >= line.text.size() || line.text[line.pos] != '=') line.fail("expected '='");
        ++line.pos;
        if (section->contains(k)) line.fail("duplicate key '" + k + "'");
        (*section)[k] = line.value();
        if (!line.at_end_or_comment()) line.fail("trailing characters after value");
    }
    return root;
}

// ---------------------------------------------------------------------------
// Strict JSON reading

namespace {

class Table {
public:
    Table(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + " must be a table");
    }
    ~Table() noexcept(false) {
        if (std::uncaught_exceptions()) return;
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError("unknown key '" + path_ + (path_.empty() ? "" : ".") + k + "'");
    }

    bool has(const std::string& k) const { return j_.contains(k); }
    const json* raw(const std::string& k) {
        seen_.insert(k);
        auto it = j_.find(k);
        return it == j_.end() ? nullptr : &*it;
    }
    std::string where(const std::string& k = "") const {
        std::string p = path_.empty() ? k : (k.empty() ? path_ : path_ + "." + k);
        return p.empty() ? "config" : "'" + p + "'";
    }

    void get(const std::string& k, double& out) {
        if (auto v = raw(k)) {
            if (!v->is_number()) throw ConfigError(where(k) + " must be a number");
            out = v->get<double>();
        }
    }
    void get(const std::string& k, bool& out) {
        if (auto v = raw(k)) {
            if (!v->is_boolean()) throw ConfigError(where(k) + " must be a boolean");
            out = v->get<bool>();
        }
    }
    void get(const std::string& k, std::string& out) {
        if (auto v = raw(k)) {
            if (!v->is_string()) throw ConfigError(where(k) + " must be a string");
            out = v->get<std::string>();
        }
    }
    template <class Int>
        requires std::is_integral_v<Int>
    void get(const std::string& k, Int& out) {
        if (auto v = raw(k)) {
            if (!v->is_number_integer()) throw ConfigError(where(k) + " must be an integer");
            if constexpr (std::is_unsigned_v<Int>) {
                if (v->is_number_unsigned() || v->get<std::int64_t>() >= 0) {
                    out = static_cast<Int>(v->get<std::uint64_t>());
                } else {
                    throw ConfigError(where(k) + " must be non-negative");
                }
            } else {
                out = static_cast<Int>(v->get<std::int64_t>());
            }
        }
    }
    void get(const std::string& k, std::vector<std::size_t>& out) {
        if (auto v = raw(k)) {
            if (!v->is_array()) throw ConfigError(where(k) + " must be an array of integers");
            out.clear();
            for (const auto& e : *v) {
                if (!e.is_number_integer() || (!e.is_number_unsigned() && e.get<std::int64_t>() < 0)) throw ConfigError(where(k) + " must be an array of non-negative integers");
                out.push_back(e.get<std::size_t>());
            }
        }
    }
    Table sub(const std::string& k) {
        static const json empty = json::object();
        auto v = raw(k);
        return Table(v ? *v : empty, path_.empty() ? k : path_ + "." + k);
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <class F>
auto wrap(F&& f) {
    try {
        return f();
    } catch (const InvalidInput& e) {
        throw ConfigError(e.what());
    }
}

}  // namespace

void ExperimentConfig::validate() const {
    if (model != "qg" && model != "static_1d") throw ConfigError("model must be 'qg' or 'static_1d'");
    if (cycles < 0) throw ConfigError("cycles must be >= 0");
    if (obs_interval < 1) throw ConfigError("obs_interval must be >= 1");
    if (n_ens < 2) throw ConfigError("n_ens must be >= 2");
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
    if (model == "qg") {
        wrap([&] { qg::Grid::square(qg.grid); return 0; });
        if (qg.params.dt <= 0.0) throw ConfigError("qg.dt must be positive");
        if (qg.params.F < 0.0 || qg.params.epsilon < 0.0 || qg.params.A < 0.0)
            throw ConfigError("qg.F, qg.epsilon and qg.A must be non-negative");
        if (qg.spinup_steps < 0 || qg.member_spacing < 1) throw ConfigError("qg spin-up settings out of range");
        if (obs.op != "linear" && obs.op != "wind") throw ConfigError("observations.operator must be 'linear' or 'wind'");
        const std::size_t n_var = static_cast<std::size_t>(qg.grid) * static_cast<std::size_t>(qg.grid);
        if (obs.m_obs < 1 || obs.m_obs > n_var) throw ConfigError("observations.m_obs must be in [1, n_var]");
        if (filter.kind == FilterKind::denkf && obs.op != "linear")
            throw ConfigError("DEnKF needs the linear observation operator");
    } else {
        if (static_1d.n_prior < 2 || static_1d.n_samples < 1) throw ConfigError("static_1d sizes out of range");
        if (static_1d.r <= 0.0) throw ConfigError("static_1d.r must be positive");
        if (static_1d.bins < 1 || static_1d.grid_points < 2 || !(static_1d.lo < static_1d.hi))
            throw ConfigError("static_1d histogram settings out of range");
    }
    if (!(obs.variance > 0.0)) throw ConfigError("observations.variance must be positive");
    if (output.rank_stride < 1) throw ConfigError("output.rank_stride must be >= 1");
    wrap([&] { filter.validate(); return 0; });
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    Table top(j, "");
    top.get("model", c.model);
    top.get("seed", c.seed);
    top.get("output_dir", c.output_dir);
    top.get("n_ens", c.n_ens);
    top.get("cycles", c.cycles);
    top.get("obs_interval", c.obs_interval);
    top.get("free_run", c.free_run);
    top.get("threads", c.threads);
    {
        Table t = top.sub("qg");
        t.get("grid", c.qg.grid);
        t.get("F", c.qg.params.F);
        t.get("epsilon", c.qg.params.epsilon);
        t.get("A", c.qg.params.A);
        t.get("dt", c.qg.params.dt);
        t.get("beta_sign", c.qg.params.beta_sign);
        t.get("forcing", c.qg.params.forcing);
        t.get("spinup_steps", c.qg.spinup_steps);
        t.get("member_spacing", c.qg.member_spacing);
        t.get("initial_noise", c.qg.initial_noise);
    }
    {
        Table t = top.sub("observations");
        t.get("operator", c.obs.op);
        t.get("m_obs", c.obs.m_obs);
        t.get("variance", c.obs.variance);
        t.get("random_offset", c.obs.random_offset);
    }
    {
        Table t = top.sub("static_1d");
        t.get("n_prior", c.static_1d.n_prior);
        t.get("n_samples", c.static_1d.n_samples);
        t.get("y", c.static_1d.y);
        t.get("r", c.static_1d.r);
        t.get("prior_csv", c.static_1d.prior_csv);
        t.get("grid_points", c.static_1d.grid_points);
        t.get("bins", c.static_1d.bins);
        t.get("lo", c.static_1d.lo);
        t.get("hi", c.static_1d.hi);
    }
    {
        Table t = top.sub("output");
        t.get("ensembles", c.output.ensembles);
        t.get("gmm", c.output.gmm);
        t.get("chain_stats", c.output.chain_stats);
        t.get("checkpoints", c.output.checkpoints);
        t.get("rank_stride", c.output.rank_stride);
        t.get("qq", c.output.qq);
    }
    {
        Table t = top.sub("filter");
        std::string kind = "mc_clhmc";
        t.get("kind", kind);
        const bool qg = c.model == "qg";
        c.filter = wrap([&] { return default_filter_config(parse_filter_kind(kind), c.obs.op == "wind", qg); });
        FilterConfig& f = c.filter;
        std::string s;
        if (t.has("integrator")) {
            t.get("integrator", s);
            f.trajectory.integrator = wrap([&] { return parse_integrator(s); });
        }
        t.get("h", f.trajectory.h);
        t.get("m", f.trajectory.m);
        t.get("divide_h_by_n_c", f.divide_h_by_n_c);
        t.get("burn_in", f.burn_in);
        t.get("mixing_steps", f.mixing_steps);
        if (t.has("init_policy")) {
            t.get("init_policy", s);
            f.init_policy = wrap([&] { return parse_init_policy(s); });
        }
        t.get("full_covariance", f.full_covariance);
        if (t.has("criterion")) {
            t.get("criterion", s);
            f.gmm.criterion = wrap([&] { return parse_criterion(s); });
        }
        t.get("candidates", f.gmm.candidates);
        t.get("min_members", f.gmm.min_members);
        t.get("em_max_iter", f.gmm.em.max_iter);
        t.get("em_rel_tol", f.gmm.em.rel_tol);
        t.get("em_restarts", f.gmm.em.restarts);
        t.get("em_var_floor", f.gmm.em.var_floor);
        t.get("variance_blend", f.variance_blend);
        t.get("localization_radius", f.localization_radius);
        t.get("precision_radius", f.precision_radius);
        t.get("inflation", f.inflation);
    }
    c.filter.seed = c.seed;
    c.filter.threads = c.threads;
    c.validate();
    return c;
}

json to_json(const ExperimentConfig& c) {
    const FilterConfig& f = c.filter;
    return json{
        {"model", c.model},
        {"seed", c.seed},
        {"output_dir", c.output_dir},
        {"n_ens", c.n_ens},
        {"cycles", c.cycles},
        {"obs_interval", c.obs_interval},
        {"free_run", c.free_run},
        {"threads", c.threads},
        {"qg",
         {{"grid", c.qg.grid},
          {"F", c.qg.params.F},
          {"epsilon", c.qg.params.epsilon},
          {"A", c.qg.params.A},
          {"dt", c.qg.params.dt},
          {"beta_sign", c.qg.params.beta_sign},
          {"forcing", c.qg.params.forcing},
          {"spinup_steps", c.qg.spinup_steps},
          {"member_spacing", c.qg.member_spacing},
          {"initial_noise", c.qg.initial_noise}}},
        {"observations",
         {{"operator", c.obs.op}, {"m_obs", c.obs.m_obs}, {"variance", c.obs.variance}, {"random_offset", c.obs.random_offset}}},
        {"filter",
         {{"kind", to_string(f.kind)},
          {"integrator", to_string(f.trajectory.integrator)},
          {"h", f.trajectory.h},
          {"m", f.trajectory.m},
          {"divide_h_by_n_c", f.divide_h_by_n_c},
          {"burn_in", f.burn_in},
          {"mixing_steps", f.mixing_steps},
          {"init_policy", to_string(f.init_policy)},
          {"full_covariance", f.full_covariance},
          {"criterion", to_string(f.gmm.criterion)},
          {"candidates", f.gmm.candidates},
          {"min_members", f.gmm.min_members},
          {"em_max_iter", f.gmm.em.max_iter},
          {"em_rel_tol", f.gmm.em.rel_tol},
          {"em_restarts", f.gmm.em.restarts},
          {"em_var_floor", f.gmm.em.var_floor},
          {"variance_blend", f.variance_blend},
          {"localization_radius", f.localization_radius},
          {"precision_radius", f.precision_radius},
          {"inflation", f.inflation}}},
        {"static_1d",
         {{"n_prior", c.static_1d.n_prior},
          {"n_samples", c.static_1d.n_samples},
          {"y", c.static_1d.y},
          {"r", c.static_1d.r},
          {"prior_csv", c.static_1d.prior_csv},
          {"grid_points", c.static_1d.grid_points},
          {"bins", c.static_1d.bins},
          {"lo", c.static_1d.lo},
          {"hi", c.static_1d.hi}}},
        {"output",
         {{"ensembles", c.output.ensembles},
          {"gmm", c.output.gmm},
          {"chain_stats", c.output.chain_stats},
          {"checkpoints", c.output.checkpoints},
          {"rank_stride", c.output.rank_stride},
          {"qq", c.output.qq}}},
    };
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    json j;
    const bool is_json = path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0;
    if (is_json) {
        try {
            j = json::parse(ss.str());
        } catch (const json::parse_error& e) {
            throw ConfigError(std::string("invalid JSON: ") + e.what());
        }
    } else {
        j = parse_toml_subset(ss.str());
    }
    return config_from_json(j);
}

}  // namespace hmcda
