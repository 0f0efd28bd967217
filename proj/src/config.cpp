#include "dard/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "dard/error.hpp"

namespace dard {

namespace {

struct Cursor {
    std::string origin;
    int line = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw ConfigError(origin + ":" + std::to_string(line) + ": " + what);
    }
};

double to_real(const std::string& v, const Cursor& at) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        at.fail("expected a real number, got '" + v + "'");
    }
}

long long to_int(const std::string& v, const Cursor& at) {
    long long out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        at.fail("expected an integer, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& v, const Cursor& at) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    at.fail("expected a boolean, got '" + v + "'");
}

std::vector<double> to_real_list(const std::string& v, const Cursor& at) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string part;
    while (std::getline(ss, part, ','))
        if (!part.empty()) out.push_back(to_real(part, at));
    if (out.empty()) at.fail("expected a comma-separated list of reals");
    return out;
}

std::string trim(std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    ExperimentConfig cfg;
    Cursor at{origin, 0};
    std::string section;
    std::istringstream in(text);
    std::string raw;

    while (std::getline(in, raw)) {
        ++at.line;
        std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') at.fail("malformed section header");
            section = line.substr(1, line.size() - 2);
            if (section != "corpus" && section != "pool" && section != "collab" &&
                section != "influence" && section != "sim" && section != "eval" &&
                section != "sweep")
                at.fail("unknown section '" + section + "'");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) at.fail("expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (section.empty()) at.fail("key '" + key + "' outside any section");

        RunConfig& r = cfg.run;
        if (section == "corpus") {
            if (key == "dataset") cfg.dataset = val;
            else if (key == "users") cfg.synth.users = static_cast<int>(to_int(val, at));
            else if (key == "pois") cfg.synth.pois = static_cast<int>(to_int(val, at));
            else if (key == "categories") cfg.synth.categories = static_cast<int>(to_int(val, at));
            else if (key == "geo_clusters") cfg.synth.geo_clusters = static_cast<int>(to_int(val, at));
            else if (key == "seq_len_min") cfg.synth.seq_len_min = static_cast<int>(to_int(val, at));
            else if (key == "seq_len_max") cfg.synth.seq_len_max = static_cast<int>(to_int(val, at));
            else if (key == "pref_concentration") cfg.synth.pref_concentration = to_real(val, at);
            else if (key == "min_interactions") cfg.min_interactions = static_cast<int>(to_int(val, at));
            else if (key == "max_seq_len") cfg.max_seq_len = static_cast<int>(to_int(val, at));
            else if (key == "regions") cfg.regions = static_cast<int>(to_int(val, at));
            else at.fail("unknown key 'corpus." + key + "'");
        } else if (section == "pool") {
            if (key == "geo_sequences") r.refgen.geo_sequences = static_cast<int>(to_int(val, at));
            else if (key == "sem_sequences") r.refgen.sem_sequences = static_cast<int>(to_int(val, at));
            else if (key == "gen_length") r.refgen.gen_length = static_cast<int>(to_int(val, at));
            else if (key == "max_hop_km") r.refgen.max_hop_km = to_real(val, at);
            else if (key == "transform") r.refgen.transform_enabled = to_bool(val, at);
            else if (key == "prob") r.refgen.prob_enabled = to_bool(val, at);
            else if (key == "donor_fraction") r.donor_fraction = to_real(val, at);
            else at.fail("unknown key 'pool." + key + "'");
        } else if (section == "collab") {
            if (key == "gamma") r.collab.gamma = to_real(val, at);
            else if (key == "mu") r.collab.mu = to_real(val, at);
            else if (key == "eta") r.collab.eta = to_real(val, at);
            else if (key == "batch") r.collab.batch = static_cast<int>(to_int(val, at));
            else if (key == "epochs") r.collab.epochs = static_cast<int>(to_int(val, at));
            else if (key == "rho") r.collab.rho = to_real(val, at);
            else if (key == "local_positions") r.collab.local_positions = static_cast<int>(to_int(val, at));
            else if (key == "accumulate_noisy") {
                if (val == "last_epoch")
                    r.collab.accumulate_noisy = CollabConfig::AccumulateNoisy::LastEpoch;
                else if (val == "all_epochs")
                    r.collab.accumulate_noisy = CollabConfig::AccumulateNoisy::AllEpochs;
                else at.fail("accumulate_noisy must be last_epoch or all_epochs");
            } else if (key == "dim") r.dim = static_cast<int>(to_int(val, at));
            else if (key == "window") r.window = static_cast<int>(to_int(val, at));
            else at.fail("unknown key 'collab." + key + "'");
        } else if (section == "influence") {
            if (key == "alpha") r.influence.alpha = to_real(val, at);
            else if (key == "damping") r.influence.damping = to_real(val, at);
            else if (key == "solver") {
                if (val == "dense") r.influence.solver = InfluenceConfig::Solver::DenseInverse;
                else if (val == "cg") r.influence.solver = InfluenceConfig::Solver::ConjugateGradient;
                else at.fail("solver must be dense or cg");
            } else if (key == "cg_max_iter") r.influence.cg_max_iter = static_cast<int>(to_int(val, at));
            else if (key == "cg_tol") r.influence.cg_tol = to_real(val, at);
            else at.fail("unknown key 'influence." + key + "'");
        } else if (section == "sim") {
            if (key == "strategy") r.strategy = strategy_from_string(val);
            else if (key == "pool_fraction") r.pool_fraction = to_real(val, at);
            else if (key == "donor_fraction") r.donor_fraction = to_real(val, at);
            else if (key == "corrupt_fraction") r.corrupt_fraction = to_real(val, at);
            else if (key == "tracking") r.tracking = to_bool(val, at);
            else if (key == "influence_selection") r.influence_selection = to_bool(val, at);
            else if (key == "resume_retrain") r.resume_retrain = to_bool(val, at);
            else if (key == "k_n") r.k_n = static_cast<int>(to_int(val, at));
            else if (key == "seed") r.master_seed = static_cast<std::uint64_t>(to_int(val, at));
            else at.fail("unknown key 'sim." + key + "'");
        } else if (section == "eval") {
            if (key == "negatives") r.eval_negatives = static_cast<int>(to_int(val, at));
            else if (key == "repeats") r.eval_repeats = static_cast<int>(to_int(val, at));
            else at.fail("unknown key 'eval." + key + "'");
        } else {  // sweep
            if (key == "alpha_grid") cfg.alpha_grid = to_real_list(val, at);
            else if (key == "rho_grid") cfg.rho_grid = to_real_list(val, at);
            else at.fail("unknown key 'sweep." + key + "'");
        }
    }

    if (cfg.run.pool_fraction <= 0.0 || cfg.run.pool_fraction > 1.0)
        throw ConfigError(origin + ": sim.pool_fraction must be in (0,1]");
    if (cfg.run.donor_fraction <= 0.0 || cfg.run.donor_fraction > 1.0)
        throw ConfigError(origin + ": pool.donor_fraction must be in (0,1]");
    if (cfg.run.collab.rho <= 0.0 || cfg.run.collab.rho > 1.0)
        throw ConfigError(origin + ": collab.rho must be in (0,1]");
    return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

}  // namespace dard
