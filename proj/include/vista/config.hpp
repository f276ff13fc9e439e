#pragma once

#include <cstdint>
#include <string>

namespace vista {

// Every hyperparameter in one flat struct. Parsed from key=value lines with
// unknown keys rejected; CLI flags override file values. The fully resolved
// config is echoed into every run artifact.
struct Config {
    // model
    int common_dim = 64;      // shared text/image embedding dim
    int fusion_blocks = 4;    // history fusion depth
    int heads = 1;            // attention heads (single-head default)
    double lambda = 0.5;      // history adapter mixing weight

    // diffusion
    int timesteps = 1000;
    int sampler_steps = 50;
    double guidance = 5.0;
    double cond_dropout = 0.1; // joint text/history drop prob during training

    // optimization
    double lr = 1e-4;
    double lr_stage1 = 2e-4;
    double weight_decay = 0.01;
    int batch = 8;
    int stage0_steps = 1500;
    int stage1_steps = 2400;
    int stage2_steps = 1400;

    // data
    int stories = 2000;
    int frames = 8;
    uint64_t seed = 17;

    std::string to_text() const;
    static Config from_text(const std::string& text);
    static Config from_file(const std::string& path);
    void set_key(const std::string& key, const std::string& value);
    void save(const std::string& path) const;
};

} // namespace vista
