// Copyright (c) 2026 bidedpo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bidedpo/tensor.hpp"
#include "bidedpo/world.hpp"

namespace bidedpo {

struct DenoiserConfig {
    int hidden = 256;
    int time_freqs = 8;

    static constexpr int prompt_dim = 9;  // 3 one-hot groups of 3
    int time_dim() const { return 2 * time_freqs; }
    int input_dim() const { return 2 * kCanvasCells + prompt_dim + time_dim(); }
    int output_dim() const { return kCanvasCells; }

    bool operator==(const DenoiserConfig&) const = default;
};

struct LoraConfig {
    int rank = 8;
    double alpha = 8.0;

    bool operator==(const LoraConfig&) const = default;
};

Array embed_prompt(const PromptSpec& prompt);
Array embed_time(int t, int t_steps, int freqs);

// Writes one model input (noisy canvas, condition, prompt and timestep
// embeddings) into column `col` of a {input_dim, batch} matrix.
void fill_input_column(MatrixRM& input, int col, const Array& x_t, const ConditionMap& cond,
                       const PromptSpec& prompt, int t, int t_steps,
                       const DenoiserConfig& cfg);

// Two-hidden-layer tanh MLP noise predictor over the concatenated input.
// Parameters are plain Tensors; forward_graph builds the autodiff graph while
// forward_eval runs the identical arithmetic without recording.
class DenoiserModel {
public:
    explicit DenoiserModel(DenoiserConfig cfg = {});

    void init(RngStream& rng);

    const DenoiserConfig& config() const { return cfg_; }

    // Trainable parameters: adapters when LoRA is attached, else base weights.
    std::vector<Tensor> trainable_params() const;
    std::vector<std::pair<std::string, Tensor>> named_params() const;

    Tensor forward_graph(const Tensor& input) const;
    MatrixRM forward_eval(const MatrixRM& input) const;

    void attach_lora(const LoraConfig& lora, RngStream& rng);
    bool has_lora() const { return lora_.has_value(); }
    const std::optional<LoraConfig>& lora_config() const { return lora_; }
    // Folds W + (alpha/rank) B A into the base weights and drops the adapters.
    void merge_lora();

    // Deep copy; used for frozen reference snapshots.
    DenoiserModel clone() const;

    std::uint64_t param_hash() const;

    void save_checkpoint(const std::filesystem::path& dir,
                         const std::string& config_hash = "",
                         std::uint64_t seed = 0) const;
    static DenoiserModel load_checkpoint(const std::filesystem::path& dir);

private:
    struct Layer {
        Tensor w;  // {out, in}
        Tensor b;  // {out}
        std::optional<Tensor> lora_a;  // {rank, in}
        std::optional<Tensor> lora_b;  // {out, rank}
    };

    Tensor effective_weight_graph(const Layer& l) const;
    MatrixRM effective_weight_eval(const Layer& l) const;

    DenoiserConfig cfg_;
    std::optional<LoraConfig> lora_;
    std::vector<Layer> layers_;  // three layers
};

}  // namespace bidedpo
