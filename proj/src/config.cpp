#include "vista/config.hpp"

#include <fstream>
#include <sstream>

#include "vista/errors.hpp"

namespace vista {

namespace {

int to_int(const std::string& k, const std::string& v) {
    try {
        size_t pos = 0;
        const int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + k + ": " + v);
    }
}

uint64_t to_u64(const std::string& k, const std::string& v) {
    try {
        size_t pos = 0;
        const uint64_t r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + k + ": " + v);
    }
}

double to_double(const std::string& k, const std::string& v) {
    try {
        size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + k + ": " + v);
    }
}

} // namespace

void Config::set_key(const std::string& key, const std::string& value) {
    if (key == "common_dim") common_dim = to_int(key, value);
    else if (key == "fusion_blocks") fusion_blocks = to_int(key, value);
    else if (key == "heads") heads = to_int(key, value);
    else if (key == "lambda") lambda = to_double(key, value);
    else if (key == "timesteps") timesteps = to_int(key, value);
    else if (key == "sampler_steps") sampler_steps = to_int(key, value);
    else if (key == "guidance") guidance = to_double(key, value);
    else if (key == "cond_dropout") cond_dropout = to_double(key, value);
    else if (key == "lr") lr = to_double(key, value);
    else if (key == "lr_stage1") lr_stage1 = to_double(key, value);
    else if (key == "weight_decay") weight_decay = to_double(key, value);
    else if (key == "batch") batch = to_int(key, value);
    else if (key == "stage0_steps") stage0_steps = to_int(key, value);
    else if (key == "stage1_steps") stage1_steps = to_int(key, value);
    else if (key == "stage2_steps") stage2_steps = to_int(key, value);
    else if (key == "stories") stories = to_int(key, value);
    else if (key == "frames") frames = to_int(key, value);
    else if (key == "seed") seed = to_u64(key, value);
    else throw ConfigError("config: unknown key: " + key);
}

std::string Config::to_text() const {
    std::ostringstream os;
    os << "common_dim=" << common_dim << "\n";
    os << "fusion_blocks=" << fusion_blocks << "\n";
    os << "heads=" << heads << "\n";
    os << "lambda=" << lambda << "\n";
    os << "timesteps=" << timesteps << "\n";
    os << "sampler_steps=" << sampler_steps << "\n";
    os << "guidance=" << guidance << "\n";
    os << "cond_dropout=" << cond_dropout << "\n";
    os << "lr=" << lr << "\n";
    os << "lr_stage1=" << lr_stage1 << "\n";
    os << "weight_decay=" << weight_decay << "\n";
    os << "batch=" << batch << "\n";
    os << "stage0_steps=" << stage0_steps << "\n";
    os << "stage1_steps=" << stage1_steps << "\n";
    os << "stage2_steps=" << stage2_steps << "\n";
    os << "stories=" << stories << "\n";
    os << "frames=" << frames << "\n";
    os << "seed=" << seed << "\n";
    return os.str();
}

Config Config::from_text(const std::string& text) {
    Config c;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        // strip comments and whitespace
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        size_t b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        size_t e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value");
        c.set_key(line.substr(0, eq), line.substr(eq + 1));
    }
    return c;
}

Config Config::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return from_text(os.str());
}

void Config::save(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("config: cannot write " + path);
    f << to_text();
}

} // namespace vista
