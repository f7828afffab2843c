// Copyright (c) 2026 bidedpo authors
// SPDX-License-Identifier: Apache-2.0
#include "bidedpo/model.hpp"

#include <cmath>
#include <json.hpp>

#include "bidedpo/blob_io.hpp"
#include "bidedpo/common.hpp"

namespace bidedpo {

using nlohmann::json;

Array embed_prompt(const PromptSpec& prompt) {
    Array e = Array::Zero(DenoiserConfig::prompt_dim);
    e[static_cast<int>(prompt.shape)] = 1.0;
    e[3 + static_cast<int>(prompt.intensity)] = 1.0;
    e[6 + static_cast<int>(prompt.stripes)] = 1.0;
    return e;
}

Array embed_time(int t, int t_steps, int freqs) {
    Array e(2 * freqs);
    for (int k = 0; k < freqs; ++k) {
        const double omega = M_PI * std::pow(2.0, k) / static_cast<double>(t_steps);
        e[2 * k] = std::sin(omega * t);
        e[2 * k + 1] = std::cos(omega * t);
    }
    return e;
}

void fill_input_column(MatrixRM& input, int col, const Array& x_t, const ConditionMap& cond,
                       const PromptSpec& prompt, int t, int t_steps,
                       const DenoiserConfig& cfg) {
    if (input.rows() != cfg.input_dim())
        throw std::invalid_argument("fill_input_column: input row dim mismatch");
    if (x_t.size() != kCanvasCells || cond.mask.size() != kCanvasCells)
        throw std::invalid_argument("fill_input_column: canvas size mismatch");
    int row = 0;
    for (int i = 0; i < kCanvasCells; ++i) input(row++, col) = x_t[i];
    for (int i = 0; i < kCanvasCells; ++i) input(row++, col) = cond.mask[i];
    const Array pe = embed_prompt(prompt);
    for (int i = 0; i < pe.size(); ++i) input(row++, col) = pe[i];
    const Array te = embed_time(t, t_steps, cfg.time_freqs);
    for (int i = 0; i < te.size(); ++i) input(row++, col) = te[i];
}

DenoiserModel::DenoiserModel(DenoiserConfig cfg) : cfg_(cfg) {
    layers_.resize(3);
}

void DenoiserModel::init(RngStream& rng) {
    const int in = cfg_.input_dim();
    const int h = cfg_.hidden;
    const int out = cfg_.output_dim();
    auto make_layer = [&rng](int rows, int cols) {
        Layer l;
        l.w = Tensor::randn({rows, cols}, rng, 1.0 / std::sqrt(static_cast<double>(cols)), true);
        l.b = Tensor::zeros({rows}, true);
        return l;
    };
    layers_[0] = make_layer(h, in);
    layers_[1] = make_layer(h, h);
    layers_[2] = make_layer(out, h);
    lora_.reset();
}

std::vector<Tensor> DenoiserModel::trainable_params() const {
    std::vector<Tensor> ps;
    for (const auto& l : layers_) {
        if (lora_) {
            ps.push_back(*l.lora_a);
            ps.push_back(*l.lora_b);
        } else {
            ps.push_back(l.w);
            ps.push_back(l.b);
        }
    }
    return ps;
}

std::vector<std::pair<std::string, Tensor>> DenoiserModel::named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const std::string base = "layer" + std::to_string(i);
        out.emplace_back(base + ".w", layers_[i].w);
        out.emplace_back(base + ".b", layers_[i].b);
        if (lora_) {
            out.emplace_back(base + ".lora_a", *layers_[i].lora_a);
            out.emplace_back(base + ".lora_b", *layers_[i].lora_b);
        }
    }
    return out;
}

Tensor DenoiserModel::effective_weight_graph(const Layer& l) const {
    if (!lora_) return l.w;
    const double s = lora_->alpha / static_cast<double>(lora_->rank);
    return add(l.w, scale(matmul(*l.lora_b, *l.lora_a), s));
}

MatrixRM DenoiserModel::effective_weight_eval(const Layer& l) const {
    MapConstMat W(l.w.value().data(), l.w.dim(0), l.w.dim(1));
    if (!lora_) return W;
    const double s = lora_->alpha / static_cast<double>(lora_->rank);
    MapConstMat A(l.lora_a->value().data(), l.lora_a->dim(0), l.lora_a->dim(1));
    MapConstMat B(l.lora_b->value().data(), l.lora_b->dim(0), l.lora_b->dim(1));
    return W + s * (B * A);
}

Tensor DenoiserModel::forward_graph(const Tensor& input) const {
    if (input.ndim() != 2 || input.dim(0) != cfg_.input_dim())
        throw std::invalid_argument("forward: input must be {input_dim, batch}");
    Tensor h1 = tanh(add_colvec(matmul(effective_weight_graph(layers_[0]), input), layers_[0].b));
    Tensor h2 = tanh(add_colvec(matmul(effective_weight_graph(layers_[1]), h1), layers_[1].b));
    return add_colvec(matmul(effective_weight_graph(layers_[2]), h2), layers_[2].b);
}

MatrixRM DenoiserModel::forward_eval(const MatrixRM& input) const {
    if (input.rows() != cfg_.input_dim())
        throw std::invalid_argument("forward: input must be {input_dim, batch}");
    auto bias = [](const Tensor& b) {
        return Eigen::Map<const Eigen::VectorXd>(b.value().data(), b.dim(0));
    };
    MatrixRM h1 = (effective_weight_eval(layers_[0]) * input).colwise() + bias(layers_[0].b);
    h1 = h1.array().tanh();
    MatrixRM h2 = (effective_weight_eval(layers_[1]) * h1).colwise() + bias(layers_[1].b);
    h2 = h2.array().tanh();
    MatrixRM out = (effective_weight_eval(layers_[2]) * h2).colwise() + bias(layers_[2].b);
    return out;
}

void DenoiserModel::attach_lora(const LoraConfig& lora, RngStream& rng) {
    if (lora_) throw std::invalid_argument("attach_lora: adapter already attached");
    if (lora.rank < 1) throw std::invalid_argument("attach_lora: rank must be >= 1");
    for (auto& l : layers_) {
        const int rows = l.w.dim(0), cols = l.w.dim(1);
        if (lora.rank > std::min(rows, cols))
            throw std::invalid_argument("attach_lora: rank exceeds min matrix dimension");
    }
    for (auto& l : layers_) {
        const int rows = l.w.dim(0), cols = l.w.dim(1);
        l.lora_a = Tensor::randn({lora.rank, cols}, rng,
                                 1.0 / std::sqrt(static_cast<double>(cols)), true);
        l.lora_b = Tensor::zeros({rows, lora.rank}, true);
        l.w.set_requires_grad(false);
        l.b.set_requires_grad(false);
    }
    lora_ = lora;
}

void DenoiserModel::merge_lora() {
    if (!lora_) return;
    for (auto& l : layers_) {
        MatrixRM merged = effective_weight_eval(l);
        MapMat(l.w.value().data(), l.w.dim(0), l.w.dim(1)) = merged;
        l.lora_a.reset();
        l.lora_b.reset();
        l.w.set_requires_grad(true);
        l.b.set_requires_grad(true);
    }
    lora_.reset();
}

DenoiserModel DenoiserModel::clone() const {
    DenoiserModel copy(cfg_);
    copy.lora_ = lora_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Layer& src = layers_[i];
        Layer& dst = copy.layers_[i];
        dst.w = Tensor::from_array(src.w.shape(), src.w.value(), src.w.requires_grad());
        dst.b = Tensor::from_array(src.b.shape(), src.b.value(), src.b.requires_grad());
        if (src.lora_a)
            dst.lora_a = Tensor::from_array(src.lora_a->shape(), src.lora_a->value(), true);
        if (src.lora_b)
            dst.lora_b = Tensor::from_array(src.lora_b->shape(), src.lora_b->value(), true);
    }
    return copy;
}

std::uint64_t DenoiserModel::param_hash() const {
    std::uint64_t h = fnv1a64("denoiser");
    for (const auto& [name, p] : named_params()) {
        h = fnv1a64(name, h);
        h = blob_hash(p.value().data(), p.numel(), h);
    }
    return h;
}

void DenoiserModel::save_checkpoint(const std::filesystem::path& dir,
                                    const std::string& config_hash,
                                    std::uint64_t seed) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    json manifest;
    manifest["format_version"] = 1;
    manifest["kind"] = "denoiser_checkpoint";
    manifest["code_version"] = std::string(kCodeVersion);
    manifest["config_hash"] = config_hash;
    manifest["seed"] = seed;
    manifest["model"] = {{"hidden", cfg_.hidden}, {"time_freqs", cfg_.time_freqs}};
    if (lora_) manifest["lora"] = {{"rank", lora_->rank}, {"alpha", lora_->alpha}};

    json params = json::array();
    for (const auto& [name, p] : named_params()) {
        const std::string file = name + ".f64";
        write_f64_blob(dir / file, p.value().data(), p.numel());
        params.push_back({{"name", name},
                          {"shape", p.shape()},
                          {"file", file},
                          {"fnv1a64", hash_hex(blob_hash(p.value().data(), p.numel()))}});
    }
    manifest["params"] = params;
    manifest["param_hash"] = hash_hex(param_hash());

    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << "\n";
}

DenoiserModel DenoiserModel::load_checkpoint(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    const fs::path manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path))
        throw MissingFileError("checkpoint manifest not found: " + manifest_path.string());
    std::ifstream in(manifest_path);
    json manifest = json::parse(in);
    if (manifest.value("format_version", 0) != 1)
        throw ConfigError("checkpoint format_version mismatch: " + manifest_path.string());

    DenoiserConfig cfg;
    cfg.hidden = manifest["model"]["hidden"].get<int>();
    cfg.time_freqs = manifest["model"]["time_freqs"].get<int>();
    DenoiserModel model(cfg);
    if (manifest.contains("lora") && !manifest["lora"].is_null()) {
        LoraConfig lora;
        lora.rank = manifest["lora"]["rank"].get<int>();
        lora.alpha = manifest["lora"]["alpha"].get<double>();
        model.lora_ = lora;
    }

    auto load_param = [&](const std::string& name) -> Tensor {
        for (const auto& entry : manifest["params"]) {
            if (entry["name"].get<std::string>() != name) continue;
            auto shape = entry["shape"].get<std::vector<int>>();
            auto data = read_f64_blob(dir / entry["file"].get<std::string>());
            Array arr = Eigen::Map<const Array>(data.data(), static_cast<int>(data.size()));
            return Tensor::from_array(shape, std::move(arr), true);
        }
        throw ConfigError("checkpoint missing parameter: " + name);
    };

    for (int i = 0; i < 3; ++i) {
        const std::string base = "layer" + std::to_string(i);
        model.layers_[i].w = load_param(base + ".w");
        model.layers_[i].b = load_param(base + ".b");
        if (model.lora_) {
            model.layers_[i].lora_a = load_param(base + ".lora_a");
            model.layers_[i].lora_b = load_param(base + ".lora_b");
            model.layers_[i].w.set_requires_grad(false);
            model.layers_[i].b.set_requires_grad(false);
        }
    }
    return model;
}

}  // namespace bidedpo
