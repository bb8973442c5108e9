// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "spattn/attention.hpp"
#include "spattn/band_partition.hpp"
#include "spattn/metrics.hpp"
#include "spattn/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace spattn {

/// Character-level decoder-only transformer configuration. The JSON form
/// carries exactly these fields.
struct ModelConfig {
    int layers = 4;
    int heads = 8;
    int d_model = 128;
    int seq_len = 256;
    int vocab_size = 0; // filled from the corpus
    MaskVariant variant = MaskVariant::spa();
    std::uint64_t seed = 1234;
    double learning_rate = 3e-4;
    int batch_size = 16;
    int steps = 300;

    void validate() const;
    std::string to_json() const;
    /// Rejects unknown keys; missing keys keep their defaults.
    static ModelConfig from_json(const std::string& text);

    AttentionConfig attention() const {
        return AttentionConfig{seq_len, heads, d_model, variant};
    }
};

struct Corpus {
    std::vector<int> train_ids;
    std::vector<int> valid_ids;
    std::vector<unsigned char> vocab; // id -> byte, ordered by first appearance

    int vocab_size() const { return static_cast<int>(vocab.size()); }
};

/// Byte-level tokenization with ids assigned by first appearance, then a
/// 95/5 contiguous train/validation split. Requires >= 10 * seq_len chars.
Corpus load_corpus(const std::string& path, int seq_len);

/// Model parameters plus Adam moments. Everything trainable is f32; the
/// tensor order is fixed so initialization draws, hashes and checkpoints are
/// identical across mask variants.
struct TrainState {
    ModelConfig config;
    std::vector<std::string> names;
    std::vector<Tensor<float>> params;
    std::vector<std::vector<float>> adam_m;
    std::vector<std::vector<float>> adam_v;
    std::int64_t step = 0;
    float last_loss = 0.0f;
};

/// Fresh parameters from normal(0, 0.02) draws (norm gains 1, biases 0).
/// The draw sequence depends only on shapes and seed, never on the variant.
TrainState init_model(const ModelConfig& cfg);

/// FNV-1a over the raw parameter bytes in tensor order (moments excluded).
std::uint64_t param_hash(const TrainState& state);

struct StepRecord {
    std::int64_t step = 0;
    float loss = 0.0f;        // loss of the sampled batch before the update
    double tokens_per_sec = 0.0;
};

struct TrainOptions {
    std::string checkpoint_dir; // empty disables checkpointing
    int checkpoint_every = 100;
    bool log_steps = false;     // echo per-step progress to stderr
};

struct TrainResult {
    TrainState state;
    std::vector<StepRecord> curve;
};

/// Runs `steps` optimizer steps from state.step onward. Batches are drawn
/// from a per-step RNG stream keyed by (seed, step), so resuming from a
/// checkpoint reproduces an uninterrupted run bit for bit. A non-finite loss
/// aborts with NumericError naming the step.
TrainResult train(TrainState state, const Corpus& corpus, int steps, const TrainOptions& opts);

/// CSV with header "step,loss". Throughput stays out of the file so reruns
/// with one seed are byte-identical; read it from the returned curve instead.
std::string loss_csv(const std::vector<StepRecord>& curve);

struct EvalResult {
    double loss = 0.0;
    double perplexity = 0.0;
    int windows = 0;
};

/// Mean cross-entropy over non-overlapping validation windows (all of them
/// unless max_windows > 0 caps the count).
EvalResult evaluate(const TrainState& state, const Corpus& corpus, int max_windows = 0);

struct AttentionStats {
    std::vector<MetricsReport> per_layer;
    MetricsReport aggregate; // rows pooled across layers and batch items
};

/// Forward pass at f64 over a few validation windows, returning the captured
/// attention probabilities per layer (rows pooled across batch items).
std::vector<std::vector<HeadProbs<double>>> capture_attention_probs(const TrainState& state,
                                                                    const Corpus& corpus,
                                                                    int batch_items = 2);

/// Forward pass at f64 over a few validation windows with probability
/// capture, fed through the metrics module.
AttentionStats collect_attention_stats(const TrainState& state, const Corpus& corpus,
                                       int batch_items = 2);

/// Binary checkpoint: magic, version, JSON header (config, step, tensor
/// index), then a little-endian f32 blob of parameters and Adam moments.
void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

} // namespace spattn
