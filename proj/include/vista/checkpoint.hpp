#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "vista/dataset.hpp"
#include "vista/errors.hpp"
#include "vista/param.hpp"

namespace vista {

// On-disk checkpoint: "VSTA" magic, u32 format version, u64 header length,
// JSON header (tensor name -> shape/dtype/role/offset plus free-form meta),
// little-endian f32 payload, trailing u64 FNV-1a over header + payload.
constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
using StoreRef = std::pair<std::string, ParamStore<T>*>; // (prefix, store)

template <typename T>
void save_checkpoint(const std::string& path, const std::vector<StoreRef<T>>& stores,
                     const nlohmann::json& meta = {}) {
    nlohmann::json header;
    header["meta"] = meta;
    auto& tensors = header["tensors"];
    std::vector<const Parameter<T>*> order;
    uint64_t offset = 0;
    for (const auto& [prefix, store] : stores) {
        for (const auto& prm : store->items) {
            const std::string name = prefix + "." + prm->name;
            nlohmann::json rec;
            rec["shape"] = prm->value.shape;
            rec["dtype"] = "f32";
            rec["role"] = role_name(prm->role);
            rec["offset"] = offset;
            tensors[name] = rec;
            order.push_back(prm.get());
            offset += (uint64_t)prm->value.numel() * 4;
        }
    }
    const std::string header_str = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("checkpoint: cannot write " + path);
    f.write("VSTA", 4);
    const uint32_t version = kCheckpointVersion;
    f.write((const char*)&version, 4);
    const uint64_t hlen = header_str.size();
    f.write((const char*)&hlen, 8);
    f.write(header_str.data(), (std::streamsize)header_str.size());

    uint64_t hash = fnv1a(header_str.data(), header_str.size());
    std::vector<float> buf;
    for (const auto* prm : order) {
        buf.resize((size_t)prm->value.numel());
        for (int64_t i = 0; i < prm->value.numel(); ++i) buf[(size_t)i] = (float)prm->value[i];
        f.write((const char*)buf.data(), (std::streamsize)(buf.size() * 4));
        hash = fnv1a(buf.data(), buf.size() * 4, hash);
    }
    f.write((const char*)&hash, 8);
    if (!f) throw DataError("checkpoint: short write to " + path);
}

// Loads tensors into the given stores. Every store parameter must be present
// with matching shape and role; verifies magic, version and integrity hash.
template <typename T>
nlohmann::json load_checkpoint(const std::string& path, const std::vector<StoreRef<T>>& stores) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "VSTA", 4) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    uint32_t version = 0;
    f.read((char*)&version, 4);
    if (version != kCheckpointVersion)
        throw DataError("checkpoint: format version mismatch (file " + std::to_string(version) +
                        ", expected " + std::to_string(kCheckpointVersion) + ")");
    uint64_t hlen = 0;
    f.read((char*)&hlen, 8);
    if (!f || hlen > (1ull << 30)) throw DataError("checkpoint: bad header length");
    std::string header_str(hlen, '\0');
    f.read(header_str.data(), (std::streamsize)hlen);
    if (!f) throw DataError("checkpoint: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const std::exception& e) {
        throw DataError(std::string("checkpoint: bad header json: ") + e.what());
    }

    // payload extent = max(offset + size)
    uint64_t payload = 0;
    for (const auto& [name, rec] : header["tensors"].items()) {
        uint64_t n = 4;
        for (const auto& d : rec["shape"]) n *= (uint64_t)(int)d;
        payload = std::max(payload, (uint64_t)rec["offset"] + n);
        (void)name;
    }
    std::vector<char> body((size_t)payload);
    f.read(body.data(), (std::streamsize)payload);
    if (!f) throw DataError("checkpoint: truncated payload in " + path);
    uint64_t stored_hash = 0;
    f.read((char*)&stored_hash, 8);
    if (!f) throw DataError("checkpoint: missing integrity hash in " + path);
    uint64_t hash = fnv1a(header_str.data(), header_str.size());
    hash = fnv1a(body.data(), body.size(), hash);
    if (hash != stored_hash) throw DataError("checkpoint: integrity hash mismatch in " + path);

    for (const auto& [prefix, store] : stores) {
        for (auto& prm : store->items) {
            const std::string name = prefix + "." + prm->name;
            if (!header["tensors"].contains(name))
                throw DataError("checkpoint: missing tensor " + name + " in " + path);
            const auto& rec = header["tensors"][name];
            std::vector<int> shape = rec["shape"].get<std::vector<int>>();
            if (shape != prm->value.shape)
                throw DataError("checkpoint: shape mismatch for " + name);
            const std::string role = rec["role"].get<std::string>();
            prm->role = role_from_name(role);
            if (prm->role == Role::FrozenBase) prm->frozen = true;
            const uint64_t off = rec["offset"].get<uint64_t>();
            const float* src = (const float*)(body.data() + off);
            for (int64_t i = 0; i < prm->value.numel(); ++i) prm->value[i] = (T)src[i];
        }
    }
    return header["meta"];
}

// Hash of the entire checkpoint file; identical files hash identically.
inline uint64_t checkpoint_file_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open " + path);
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (f) {
        f.read(buf, sizeof buf);
        h = fnv1a(buf, (size_t)f.gcount(), h);
    }
    return h;
}

} // namespace vista
