#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dard/config.hpp"
#include "dard/error.hpp"

using namespace dard;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(DARD_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string expect_error(const std::string& text) {
    try {
        parse_config_text(text, "cfg");
    } catch (const ConfigError& e) {
        return e.what();
    }
    FAIL("expected ConfigError");
    return "";
}

// small experiment the CLI can run in a second
const char* kSmallConfig = R"(
[corpus]
users = 14
pois = 90
categories = 5
geo_clusters = 3
seq_len_min = 10
seq_len_max = 16
min_interactions = 1
regions = 3

[pool]
geo_sequences = 20
sem_sequences = 20
gen_length = 10
donor_fraction = 0.25

[collab]
epochs = 2
batch = 8
local_positions = 4
dim = 8
window = 5

[sim]
k_n = 3
seed = 5

[eval]
negatives = 50

[sweep]
alpha_grid = 0.01,0.001
rho_grid = 0.7,0.9
)";

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("defaults match the reference hyperparameters") {
    const ExperimentConfig cfg = parse_config_text("", "cfg");
    CHECK(cfg.run.collab.gamma == 0.5);
    CHECK(cfg.run.collab.mu == 0.7);
    CHECK(cfg.run.collab.eta == 0.002);
    CHECK(cfg.run.collab.batch == 16);
    CHECK(cfg.run.collab.epochs == 50);
    CHECK(cfg.run.collab.rho == 0.8);
    CHECK(cfg.run.influence.alpha == 0.001);
    CHECK(cfg.run.influence.damping == 0.01);
    CHECK(cfg.run.dim == 64);
    CHECK(cfg.run.window == 10);
    CHECK(cfg.run.k_n == 50);
    CHECK(cfg.run.donor_fraction == 0.05);
    CHECK(cfg.run.pool_fraction == 1.0);
    CHECK(cfg.run.strategy == Strategy::Adaptive);
    CHECK(cfg.run.eval_negatives == 200);
    CHECK(cfg.run.refgen.max_hop_km == 5.0);
    CHECK(cfg.regions == 8);
    CHECK(cfg.min_interactions == 10);
    CHECK(cfg.alpha_grid == std::vector<double>{0.01, 0.005, 0.001, 0.0005, 0.0001});
    CHECK(cfg.rho_grid == std::vector<double>{0.6, 0.7, 0.8, 0.9, 1.0});
}

TEST_CASE("every section parses its keys") {
    const ExperimentConfig cfg = parse_config_text(kSmallConfig, "cfg");
    CHECK(cfg.synth.users == 14);
    CHECK(cfg.synth.pois == 90);
    CHECK(cfg.min_interactions == 1);
    CHECK(cfg.regions == 3);
    CHECK(cfg.run.refgen.geo_sequences == 20);
    CHECK(cfg.run.donor_fraction == 0.25);
    CHECK(cfg.run.collab.epochs == 2);
    CHECK(cfg.run.collab.local_positions == 4);
    CHECK(cfg.run.dim == 8);
    CHECK(cfg.run.window == 5);
    CHECK(cfg.run.k_n == 3);
    CHECK(cfg.run.master_seed == 5);
    CHECK(cfg.run.eval_negatives == 50);
    CHECK(cfg.alpha_grid == std::vector<double>{0.01, 0.001});
    CHECK(cfg.rho_grid == std::vector<double>{0.7, 0.9});

    const ExperimentConfig more = parse_config_text(
        "[sim]\nstrategy = popular\ntracking = off\nresume_retrain = on\n"
        "corrupt_fraction = 0.2\n"
        "[influence]\nsolver = cg\ncg_max_iter = 77\n"
        "[collab]\naccumulate_noisy = all_epochs\n",
        "cfg");
    CHECK(more.run.strategy == Strategy::Popular);
    CHECK_FALSE(more.run.tracking);
    CHECK(more.run.resume_retrain);
    CHECK(more.run.corrupt_fraction == 0.2);
    CHECK(more.run.influence.solver == InfluenceConfig::Solver::ConjugateGradient);
    CHECK(more.run.influence.cg_max_iter == 77);
    CHECK(more.run.collab.accumulate_noisy == CollabConfig::AccumulateNoisy::AllEpochs);
}

TEST_CASE("comments, blank lines, and whitespace are tolerated") {
    const ExperimentConfig cfg = parse_config_text(
        "# leading comment\n\n[collab]\n  rho = 0.7   # trailing comment\n\r\n",
        "cfg");
    CHECK(cfg.run.collab.rho == 0.7);
}

TEST_CASE("unknown sections and keys are rejected with line context") {
    CHECK(expect_error("[poool]\n").find("cfg:1") != std::string::npos);
    CHECK(expect_error("[poool]\n").find("unknown section") != std::string::npos);
    const std::string e = expect_error("[collab]\ngamma = 0.5\nlearning_rate = 1\n");
    CHECK(e.find("cfg:3") != std::string::npos);
    CHECK(e.find("collab.learning_rate") != std::string::npos);
    CHECK(expect_error("rho = 0.5\n").find("outside any section") != std::string::npos);
    CHECK(expect_error("[collab\n").find("malformed section") != std::string::npos);
    CHECK(expect_error("[collab]\njust a sentence\n").find("key=value") !=
          std::string::npos);
}

TEST_CASE("typed values are validated") {
    CHECK(expect_error("[collab]\nepochs = ten\n").find("integer") != std::string::npos);
    CHECK(expect_error("[collab]\ngamma = big\n").find("real") != std::string::npos);
    CHECK(expect_error("[sim]\ntracking = yep\n").find("boolean") != std::string::npos);
    CHECK(expect_error("[sim]\nstrategy = greedy\n").find("unknown strategy") !=
          std::string::npos);
    CHECK(expect_error("[influence]\nsolver = qr\n").find("dense or cg") !=
          std::string::npos);
    CHECK(expect_error("[collab]\naccumulate_noisy = sometimes\n")
              .find("last_epoch") != std::string::npos);
    CHECK(expect_error("[sweep]\nalpha_grid = ,\n").find("list") != std::string::npos);
    CHECK(expect_error("[collab]\nrho = 1.5\n").find("rho") != std::string::npos);
    CHECK(expect_error("[sim]\npool_fraction = 0\n").find("pool_fraction") !=
          std::string::npos);
    CHECK(expect_error("[pool]\ndonor_fraction = -0.1\n").find("donor_fraction") !=
          std::string::npos);
}

TEST_CASE("parse_config reports unreadable files") {
    CHECK_THROWS_AS(parse_config("/nonexistent/experiment.cfg"), ConfigError);
}

TEST_CASE("cli: config errors exit 2, missing subcommand is rejected") {
    TempDir dir("dard_cli_err");
    const fs::path bad = dir.path / "bad.cfg";
    std::ofstream(bad) << "[collab]\nepochs = ten\n";
    CHECK(run_cli("--config " + bad.string() + " run --out " + dir.path.string()) == 2);
    CHECK(run_cli("--config /nonexistent.cfg run --out " + dir.path.string()) == 2);

    const fs::path good = dir.path / "good.cfg";
    std::ofstream(good) << kSmallConfig;
    CHECK(run_cli("--config " + good.string()) != 0);  // subcommand required
}

TEST_CASE("cli: synth and run produce artifacts; reruns are byte-identical") {
    TempDir dir("dard_cli_run");
    const fs::path cfg = dir.path / "exp.cfg";
    std::ofstream(cfg) << kSmallConfig;

    CHECK(run_cli("--config " + cfg.string() + " synth --out " + dir.path.string()) == 0);
    CHECK(fs::exists(dir.path / "corpus.jsonl"));

    CHECK(run_cli("--config " + cfg.string() + " --workers 2 run --out " +
                  dir.path.string()) == 0);
    const fs::path result = dir.path / "run_adaptive.jsonl";
    REQUIRE(fs::exists(result));
    const std::string first = slurp(result);
    CHECK(first.find("__aggregate__") != std::string::npos);

    CHECK(run_cli("--config " + cfg.string() + " run --out " + dir.path.string()) == 0);
    CHECK(slurp(result) == first);

    // a different master seed changes the outcome record
    CHECK(run_cli("--config " + cfg.string() + " --seed 99 run --out " +
                  dir.path.string()) == 0);
    CHECK(slurp(result) != first);
}

TEST_CASE("cli: sweep feeds plotdata") {
    TempDir dir("dard_cli_sweep");
    const fs::path cfg = dir.path / "exp.cfg";
    std::ofstream(cfg) << kSmallConfig;

    CHECK(run_cli("--config " + cfg.string() + " --workers 2 sweep --out " +
                  dir.path.string()) == 0);
    CHECK(fs::exists(dir.path / "sweep_summary.csv"));
    CHECK(fs::exists(dir.path / "sweep_alpha_0.01.jsonl"));
    CHECK(fs::exists(dir.path / "sweep_rho_0.9.jsonl"));

    CHECK(run_cli("--config " + cfg.string() + " plotdata --out " +
                  dir.path.string()) == 0);
    const std::string plot = slurp(dir.path / "plot_alpha_hr10.csv");
    std::istringstream in(plot);
    std::string header, row1, row2;
    std::getline(in, header);
    std::getline(in, row1);
    std::getline(in, row2);
    CHECK(header == "alpha,hr10");
    CHECK(row1.rfind("0.001,", 0) == 0);  // sorted ascending by alpha
    CHECK(row2.rfind("0.01,", 0) == 0);

    // plotdata with nothing to read fails cleanly
    TempDir empty("dard_cli_empty");
    CHECK(run_cli("--config " + cfg.string() + " plotdata --out " +
                  empty.path.string()) == 3);
}
