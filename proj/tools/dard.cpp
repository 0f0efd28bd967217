#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <thread>

#include "dard/config.hpp"
#include "dard/convex_study.hpp"
#include "dard/error.hpp"
#include "dard/rng.hpp"
#include "dard/sim.hpp"

namespace fs = std::filesystem;
using namespace dard;

namespace {

struct Prepared {
    Corpus corpus;
    RegionMap regions;
    SplitCorpus split;
};

Prepared prepare(const ExperimentConfig& cfg) {
    Prepared p;
    if (cfg.dataset.empty())
        p.corpus = synth_corpus(cfg.synth, derive_seed(cfg.run.master_seed, 0x73796eU));
    else
        p.corpus = load_corpus(cfg.dataset);
    p.corpus = filter_min_interactions(p.corpus, cfg.min_interactions);
    p.corpus = truncate_sequences(p.corpus, cfg.max_seq_len);
    p.regions = cluster_regions(p.corpus.pois, cfg.regions,
                                derive_seed(cfg.run.master_seed, 0x726567U));
    p.split = split_leave_last_out(p.corpus);
    return p;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

double aggregate_hr10(const fs::path& result_file) {
    std::ifstream in(result_file);
    if (!in) throw DataError("cannot open " + result_file.string());
    std::string line, last;
    while (std::getline(in, line))
        if (!line.empty()) last = line;
    const auto j = nlohmann::json::parse(last);
    if (j.value("user", "") != "__aggregate__")
        throw DataError(result_file.string() + ": missing aggregate record");
    return j.at("hr10").get<double>();
}

int cmd_synth(const ExperimentConfig& cfg, const fs::path& out) {
    const Prepared p = prepare(cfg);
    save_corpus(p.corpus, (out / "corpus.jsonl").string());
    std::cout << "corpus: " << p.corpus.num_users() << " users, " << p.corpus.num_pois()
              << " pois, " << p.corpus.num_checkins() << " check-ins -> "
              << (out / "corpus.jsonl").string() << "\n";
    return 0;
}

int cmd_pool(const ExperimentConfig& cfg, const fs::path& out) {
    const Prepared p = prepare(cfg);
    const ServerState server = server_init(p.corpus, p.regions, cfg.run);
    save_pool(server.pool(), p.corpus, (out / "pool.jsonl").string());
    save_neighbors(server.neighbors(), p.corpus, (out / "neighbors.jsonl").string());
    std::cout << "pool: " << server.pool().geo.size() << " geo + "
              << server.pool().sem.size() << " sem sequences\n";
    return 0;
}

int cmd_run(const ExperimentConfig& cfg, const fs::path& out, int workers) {
    const Prepared p = prepare(cfg);
    const RunResult result = run_dard(p.corpus, p.regions, p.split, cfg.run, workers);
    if (result.server_accesses_post_init != 0)
        throw ContractError("server consulted after initialization");
    const fs::path file = out / ("run_" + result.strategy + ".jsonl");
    save_run_result(result, file.string());
    std::cout << result.strategy << ": hr5=" << result.hr5 << " hr10=" << result.hr10
              << " ndcg5=" << result.ndcg5 << " ndcg10=" << result.ndcg10 << " -> "
              << file.string() << "\n";
    return 0;
}

int cmd_baselines(const ExperimentConfig& cfg, const fs::path& out, int workers) {
    const Prepared p = prepare(cfg);
    const auto results = run_strategy_baselines(p.corpus, p.regions, p.split,
                                                cfg.run, workers);
    for (const auto& [name, result] : results) {
        save_run_result(result, (out / ("run_" + name + ".jsonl")).string());
        std::cout << name << ": hr5=" << result.hr5 << " hr10=" << result.hr10 << "\n";
    }
    return 0;
}

int cmd_oracle(const ExperimentConfig& cfg, const fs::path& out) {
    ConvexStudyConfig scfg;
    std::ostringstream csv;
    csv << "seed,spearman,sign_agreement,harmful,predicted,realized\n";
    double corr = 0.0, sign = 0.0;
    const int seeds = 5;
    for (int s = 0; s < seeds; ++s) {
        const auto r = run_convex_study(scfg, derive_seed(cfg.run.master_seed, 0x6f7263U, s));
        corr += r.spearman_corr / seeds;
        sign += r.sign_agreement / seeds;
        csv << s << ',' << r.spearman_corr << ',' << r.sign_agreement << ','
            << r.lemma.harmful_count << ',' << r.lemma.predicted << ','
            << r.lemma.realized << '\n';
    }
    write_text(out / "oracle.csv", csv.str());
    std::cout << "influence-vs-LOO: spearman=" << corr << " sign_agreement=" << sign
              << "\n";
    return 0;
}

int cmd_sweep(const ExperimentConfig& cfg, const fs::path& out, int workers) {
    const Prepared p = prepare(cfg);
    std::ostringstream csv;
    csv << "param,value,hr5,hr10,ndcg5,ndcg10\n";
    for (double alpha : cfg.alpha_grid) {
        RunConfig r = cfg.run;
        r.strategy = Strategy::Adaptive;
        r.influence.alpha = alpha;
        const RunResult result = run_dard(p.corpus, p.regions, p.split, r, workers);
        std::ostringstream name;
        name << "sweep_alpha_" << alpha << ".jsonl";
        save_run_result(result, (out / name.str()).string());
        csv << "alpha," << alpha << ',' << result.hr5 << ',' << result.hr10 << ','
            << result.ndcg5 << ',' << result.ndcg10 << '\n';
    }
    for (double rho : cfg.rho_grid) {
        RunConfig r = cfg.run;
        r.strategy = Strategy::Adaptive;
        r.collab.rho = rho;
        const RunResult result = run_dard(p.corpus, p.regions, p.split, r, workers);
        std::ostringstream name;
        name << "sweep_rho_" << rho << ".jsonl";
        save_run_result(result, (out / name.str()).string());
        csv << "rho," << rho << ',' << result.hr5 << ',' << result.hr10 << ','
            << result.ndcg5 << ',' << result.ndcg10 << '\n';
    }
    write_text(out / "sweep_summary.csv", csv.str());
    std::cout << "sweep: " << cfg.alpha_grid.size() << " alpha + " << cfg.rho_grid.size()
              << " rho runs -> " << (out / "sweep_summary.csv").string() << "\n";
    return 0;
}

int cmd_plotdata(const fs::path& out) {
    std::vector<std::pair<double, double>> alpha_hr10;
    for (const auto& entry : fs::directory_iterator(out)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("sweep_alpha_", 0) != 0 || entry.path().extension() != ".jsonl")
            continue;
        const std::string mid =
            name.substr(12, name.size() - 12 - 6);  // strip prefix + .jsonl
        alpha_hr10.emplace_back(std::stod(mid), aggregate_hr10(entry.path()));
    }
    if (alpha_hr10.empty())
        throw DataError("no sweep_alpha_*.jsonl results in " + out.string());
    std::sort(alpha_hr10.begin(), alpha_hr10.end());
    std::ostringstream csv;
    csv << "alpha,hr10\n";
    for (const auto& [a, h] : alpha_hr10) csv << a << ',' << h << '\n';
    write_text(out / "plot_alpha_hr10.csv", csv.str());
    std::cout << "plotdata: " << alpha_hr10.size() << " points -> "
              << (out / "plot_alpha_hr10.csv").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DARD: decentralized collaborative POI recommendation simulator"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string out_dir = "out";
    long long seed_override = -1;
    int workers = static_cast<int>(std::thread::hardware_concurrency());
    if (workers < 1) workers = 1;
    app.add_option("--config", config_path, "experiment config file")->required();
    app.add_option("--seed", seed_override, "master seed override");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--workers", workers, "worker threads");

    auto* synth = app.add_subcommand("synth", "synthesize/prepare the corpus");
    auto* pool = app.add_subcommand("pool", "generate the reference pool");
    auto* run = app.add_subcommand("run", "full DARD pipeline run");
    auto* baselines = app.add_subcommand("baselines", "all selection strategies");
    auto* oracle = app.add_subcommand("oracle", "convex influence-vs-LOO calibration");
    auto* sweep = app.add_subcommand("sweep", "alpha/rho grids");
    auto* plotdata = app.add_subcommand("plotdata", "reshape sweep output for plotting");

    CLI11_PARSE(app, argc, argv);

    try {
        ExperimentConfig cfg = parse_config(config_path);
        if (seed_override >= 0)
            cfg.run.master_seed = static_cast<std::uint64_t>(seed_override);
        fs::create_directories(out_dir);
        const fs::path out(out_dir);

        if (synth->parsed()) return cmd_synth(cfg, out);
        if (pool->parsed()) return cmd_pool(cfg, out);
        if (run->parsed()) return cmd_run(cfg, out, workers);
        if (baselines->parsed()) return cmd_baselines(cfg, out, workers);
        if (oracle->parsed()) return cmd_oracle(cfg, out);
        if (sweep->parsed()) return cmd_sweep(cfg, out, workers);
        if (plotdata->parsed()) return cmd_plotdata(out);
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
