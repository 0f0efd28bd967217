#ifndef DARD_CONFIG_HPP
#define DARD_CONFIG_HPP

#include <string>
#include <vector>

#include "dard/corpus.hpp"
#include "dard/sim.hpp"

namespace dard {

// Sectioned key=value experiment configuration; unknown sections or keys
// are rejected with the offending line.
struct ExperimentConfig {
    // [corpus]
    std::string dataset;  // empty: synthesize
    SynthConfig synth;
    int min_interactions = 10;
    int max_seq_len = 200;
    int regions = 8;
    // [pool] + [collab] + [influence] + [sim] + [eval]
    RunConfig run;
    // [sweep]
    std::vector<double> alpha_grid{0.01, 0.005, 0.001, 0.0005, 0.0001};
    std::vector<double> rho_grid{0.6, 0.7, 0.8, 0.9, 1.0};
};

ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);

}  // namespace dard

#endif  // DARD_CONFIG_HPP
