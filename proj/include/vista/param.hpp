#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vista/errors.hpp"
#include "vista/rng.hpp"
#include "vista/tensor.hpp"

namespace vista {

enum class Role {
    FrozenBase,
    TrainableAdapter,
    TrainableFusion,
    Encoder,
    // in-memory only: denoiser weights during stage-1 pretraining; they
    // become frozen-base before any checkpoint leaves that stage
    BasePretrain,
};

inline const char* role_name(Role r) {
    switch (r) {
        case Role::FrozenBase: return "frozen-base";
        case Role::TrainableAdapter: return "trainable-adapter";
        case Role::TrainableFusion: return "trainable-fusion";
        case Role::Encoder: return "encoder";
        case Role::BasePretrain: return "frozen-base"; // destined slot
    }
    return "?";
}

inline Role role_from_name(const std::string& s) {
    if (s == "frozen-base") return Role::FrozenBase;
    if (s == "trainable-adapter") return Role::TrainableAdapter;
    if (s == "trainable-fusion") return Role::TrainableFusion;
    if (s == "encoder") return Role::Encoder;
    throw DataError("unknown parameter role: " + s);
}

template <typename T>
struct Parameter {
    std::string name;
    Role role = Role::Encoder;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> moment1;
    Tensor<T> moment2;
    bool frozen = false; // set by freeze(); optimizer touches then throw

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T(0)); }
};

// Named, role-tagged parameter set owned by one model.
template <typename T>
struct ParamStore {
    std::vector<std::unique_ptr<Parameter<T>>> items;
    std::map<std::string, int> index;

    Parameter<T>& add(const std::string& name, std::vector<int> shape, Role role) {
        if (index.count(name)) throw ConfigError("duplicate parameter name: " + name);
        auto p = std::make_unique<Parameter<T>>();
        p->name = name;
        p->role = role;
        p->value = Tensor<T>::zeros(shape);
        p->grad = Tensor<T>::zeros(shape);
        p->moment1 = Tensor<T>::zeros(shape);
        p->moment2 = Tensor<T>::zeros(std::move(shape));
        index[name] = (int)items.size();
        items.push_back(std::move(p));
        return *items.back();
    }

    Parameter<T>* find(const std::string& name) {
        auto it = index.find(name);
        return it == index.end() ? nullptr : items[(size_t)it->second].get();
    }

    const Parameter<T>* find(const std::string& name) const {
        auto it = index.find(name);
        return it == index.end() ? nullptr : items[(size_t)it->second].get();
    }

    void zero_grads() {
        for (auto& p : items) p->zero_grad();
    }

    void freeze_all() {
        for (auto& p : items) p->frozen = true;
    }

    int64_t param_count() const {
        int64_t n = 0;
        for (auto& p : items) n += p->value.numel();
        return n;
    }
};

// Parameter initializers. All draws go through the given stream so
// initialization is reproducible and order-stable.
template <typename T>
void init_normal(Parameter<T>& p, RngStream& rng, double stddev) {
    for (auto& v : p.value.data) v = (T)(rng.next_normal() * stddev);
}

template <typename T>
void init_constant(Parameter<T>& p, T v) {
    std::fill(p.value.data.begin(), p.value.data.end(), v);
}

// Identity plus small noise, for square projection matrices.
template <typename T>
void init_identity_noise(Parameter<T>& p, RngStream& rng, double noise) {
    if (p.value.ndim() != 2 || p.value.rows() != p.value.cols())
        throw DimensionError("identity init needs a square matrix: " + p.name);
    const int n = p.value.rows();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            p.value.at(i, j) = (T)((i == j ? 1.0 : 0.0) + rng.next_normal() * noise);
}

// Decoupled weight decay Adam. One optimizer instance per training stage;
// t counts optimizer steps across all managed parameters.
template <typename T>
struct AdamW {
    T lr = (T)1e-4;
    T beta1 = (T)0.9;
    T beta2 = (T)0.999;
    T eps = (T)1e-8;
    T weight_decay = (T)0;
    int64_t t = 0;

    void step(const std::vector<Parameter<T>*>& params) {
        ++t;
        for (Parameter<T>* p : params) step_param(*p);
    }

    void step_param(Parameter<T>& p) {
        if (p.role == Role::FrozenBase || p.frozen)
            throw FrozenViolation("optimizer update on frozen parameter: " + p.name);
        if (t < 1) throw NumericError("adamw: step counter not advanced");
        const double bc1 = 1.0 - std::pow((double)beta1, (double)t);
        const double bc2 = 1.0 - std::pow((double)beta2, (double)t);
        for (int64_t i = 0; i < p.value.numel(); ++i) {
            const T g = p.grad[i];
            p.moment1[i] = beta1 * p.moment1[i] + (T(1) - beta1) * g;
            p.moment2[i] = beta2 * p.moment2[i] + (T(1) - beta2) * g * g;
            const T mhat = (T)((double)p.moment1[i] / bc1);
            const T vhat = (T)((double)p.moment2[i] / bc2);
            p.value[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p.value[i]);
        }
    }
};

} // namespace vista
