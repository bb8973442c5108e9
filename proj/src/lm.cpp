// SPDX-License-Identifier: Apache-2.0
#include "spattn/lm.hpp"

#include "spattn/attention_op.hpp"
#include "spattn/errors.hpp"
#include "spattn/rng.hpp"
#include "spattn/tape.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

namespace spattn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written in native order and documented as little-endian");

using nlohmann::json;

void ModelConfig::validate() const {
    if (layers < 1) {
        throw ShapeError("layers must be >= 1");
    }
    if (heads < 1 || d_model < heads || d_model % heads != 0) {
        throw ShapeError("d_model " + std::to_string(d_model) + " not divisible by heads " +
                         std::to_string(heads));
    }
    if (seq_len < heads) {
        throw ShapeError("seq_len " + std::to_string(seq_len) + " must be >= heads " +
                         std::to_string(heads));
    }
    if (batch_size < 1 || steps < 0 || !(learning_rate > 0.0)) {
        throw ShapeError("batch_size, steps and learning_rate must be positive");
    }
}

std::string ModelConfig::to_json() const {
    json j;
    j["layers"] = layers;
    j["heads"] = heads;
    j["d_model"] = d_model;
    j["seq_len"] = seq_len;
    j["vocab_size"] = vocab_size;
    j["variant"] = variant_name(variant);
    j["window"] = variant.window;
    j["seed"] = seed;
    j["learning_rate"] = learning_rate;
    j["batch_size"] = batch_size;
    j["steps"] = steps;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    static const std::set<std::string> known{"layers",  "heads",         "d_model",
                                             "seq_len", "vocab_size",    "variant",
                                             "window",  "seed",          "learning_rate",
                                             "batch_size", "steps"};
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key)) {
            throw std::invalid_argument("unknown config field '" + key + "'");
        }
    }
    ModelConfig c;
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.d_model = j.value("d_model", c.d_model);
    c.seq_len = j.value("seq_len", c.seq_len);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.seed = j.value("seed", c.seed);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.variant = parse_variant(j.value("variant", std::string("spa")), j.value("window", 0));
    return c;
}

Corpus load_corpus(const std::string& path, int seq_len) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) {
        throw IoError("cannot open corpus file: " + path);
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t minimum = static_cast<std::size_t>(seq_len) * 10;
    if (text.size() < minimum) {
        throw IoError("corpus " + path + " has " + std::to_string(text.size()) +
                      " chars; at least " + std::to_string(minimum) + " required");
    }
    Corpus c;
    int id_of[256];
    std::fill(std::begin(id_of), std::end(id_of), -1);
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char ch : text) {
        if (id_of[ch] < 0) {
            id_of[ch] = static_cast<int>(c.vocab.size());
            c.vocab.push_back(ch);
        }
        ids.push_back(id_of[ch]);
    }
    const std::size_t n_valid = ids.size() / 20; // final 5% of the stream
    const std::size_t n_train = ids.size() - n_valid;
    c.train_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    c.valid_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
    return c;
}

namespace {

std::vector<std::pair<std::string, std::vector<int>>> param_layout(const ModelConfig& cfg) {
    const int d = cfg.d_model, ffn = 4 * cfg.d_model;
    std::vector<std::pair<std::string, std::vector<int>>> layout;
    layout.push_back({"tok_emb", {cfg.vocab_size, d}});
    layout.push_back({"pos_emb", {cfg.seq_len, d}});
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        layout.push_back({p + "ln1_g", {d}});
        layout.push_back({p + "ln1_b", {d}});
        layout.push_back({p + "wq", {d, d}});
        layout.push_back({p + "wk", {d, d}});
        layout.push_back({p + "wv", {d, d}});
        layout.push_back({p + "wo", {d, d}});
        layout.push_back({p + "ln2_g", {d}});
        layout.push_back({p + "ln2_b", {d}});
        layout.push_back({p + "w1", {d, ffn}});
        layout.push_back({p + "b1", {ffn}});
        layout.push_back({p + "w2", {ffn, d}});
        layout.push_back({p + "b2", {d}});
    }
    layout.push_back({"final_ln_g", {d}});
    layout.push_back({"final_ln_b", {d}});
    return layout;
}

bool is_norm_gain(const std::string& name) { return name.ends_with("_g"); }

bool is_bias(const std::string& name) {
    return name.ends_with("_b") || name.ends_with(".b1") || name.ends_with(".b2");
}

// Parameter ids in layout order, for addressing inside the forward pass.
struct Idx {
    static constexpr int kPerLayer = 12;
    int tok = 0, pos = 1;
    int layers;
    int layer_base(int l) const { return 2 + kPerLayer * l; }
    int final_g() const { return 2 + kPerLayer * layers; }
    int final_b() const { return final_g() + 1; }
};

template <typename T>
void append_probs(std::vector<HeadProbs<T>>& dst, std::vector<HeadProbs<T>>&& src) {
    if (dst.empty()) {
        dst = std::move(src);
        return;
    }
    for (std::size_t h = 0; h < dst.size(); ++h) {
        HeadProbs<T>& d = dst[h];
        HeadProbs<T>& s = src[h];
        const std::size_t shift = d.packed.size();
        d.support.insert(d.support.end(), s.support.begin(), s.support.end());
        for (std::size_t i = 1; i < s.offsets.size(); ++i) {
            d.offsets.push_back(s.offsets[i] + shift);
        }
        d.packed.insert(d.packed.end(), s.packed.begin(), s.packed.end());
    }
}

/// Builds the transformer graph on the tape and returns the logits node.
/// When probs_out is set, attention runs outside the tape (forward only) and
/// its probabilities are pooled per layer across batch items.
template <typename T>
int model_forward(Tape<T>& tape, const std::vector<int>& pid, const ModelConfig& cfg,
                  const std::shared_ptr<const std::vector<HeadMask>>& masks,
                  const std::vector<int>& ids, int batch,
                  std::vector<std::vector<HeadProbs<T>>>* probs_out) {
    const Idx ix{0, 1, cfg.layers};
    const int n = cfg.seq_len, h_count = cfg.heads, dk = cfg.d_model / cfg.heads;
    const AttentionConfig acfg = cfg.attention();
    if (probs_out) {
        probs_out->assign(static_cast<std::size_t>(cfg.layers), {});
    }

    int x = tape.add_rows_tiled(tape.embedding_lookup(pid[ix.tok], ids), pid[ix.pos]);
    for (int l = 0; l < cfg.layers; ++l) {
        const int base = ix.layer_base(l);
        const int pre = tape.layer_norm(x, pid[base + 0], pid[base + 1]);
        const int q = tape.matmul(pre, pid[base + 2]);
        const int k = tape.matmul(pre, pid[base + 3]);
        const int v = tape.matmul(pre, pid[base + 4]);
        std::vector<int> parts;
        parts.reserve(static_cast<std::size_t>(batch));
        for (int b = 0; b < batch; ++b) {
            const int qh = split_heads(tape, q, b, batch, n, h_count, dk);
            const int kh = split_heads(tape, k, b, batch, n, h_count, dk);
            const int vh = split_heads(tape, v, b, batch, n, h_count, dk);
            if (probs_out) {
                BandedSaved<T> saved;
                AttentionOutput<T> att = banded_forward(tape.value(qh), tape.value(kh),
                                                        tape.value(vh), *masks, acfg, &saved);
                append_probs((*probs_out)[static_cast<std::size_t>(l)], std::move(saved.probs));
                parts.push_back(tape.leaf(std::move(att.output)));
            } else {
                parts.push_back(banded_attention(tape, qh, kh, vh, masks, acfg));
            }
        }
        x = tape.add(x, tape.matmul(merge_rows(tape, parts), pid[base + 5]));
        const int mid = tape.layer_norm(x, pid[base + 6], pid[base + 7]);
        const int ffn = tape.gelu(tape.add_bias(tape.matmul(mid, pid[base + 8]), pid[base + 9]));
        x = tape.add(x, tape.add_bias(tape.matmul(ffn, pid[base + 10]), pid[base + 11]));
    }
    const int xf = tape.layer_norm(x, pid[ix.final_g()], pid[ix.final_b()]);
    return tape.matmul(xf, tape.transpose(pid[ix.tok])); // tied output embedding
}

std::shared_ptr<const std::vector<HeadMask>> masks_for(const ModelConfig& cfg) {
    return std::make_shared<const std::vector<HeadMask>>(
        build_mask(compute_partition(cfg.seq_len, cfg.heads), cfg.variant));
}

std::string checkpoint_name(std::int64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "checkpoint_%06lld.ckpt", static_cast<long long>(step));
    return buf;
}

} // namespace

TrainState init_model(const ModelConfig& cfg) {
    cfg.validate();
    if (cfg.vocab_size < 2) {
        throw ShapeError("vocab_size must be >= 2, got " + std::to_string(cfg.vocab_size));
    }
    TrainState st;
    st.config = cfg;
    std::mt19937_64 gen(cfg.seed);
    for (const auto& [name, shape] : param_layout(cfg)) {
        Tensor<float> t(shape);
        if (is_norm_gain(name)) {
            std::fill(t.data.begin(), t.data.end(), 1.0f);
        } else if (!is_bias(name)) {
            fill_normal(std::span<float>(t.data), gen, 0.0, 0.02);
        }
        st.names.push_back(name);
        st.adam_m.emplace_back(t.size(), 0.0f);
        st.adam_v.emplace_back(t.size(), 0.0f);
        st.params.push_back(std::move(t));
    }
    return st;
}

std::uint64_t param_hash(const TrainState& state) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const Tensor<float>& t : state.params) {
        h = fnv1a(t.data.data(), t.data.size() * sizeof(float), h);
    }
    return h;
}

TrainResult train(TrainState state, const Corpus& corpus, int steps, const TrainOptions& opts) {
    const ModelConfig& cfg = state.config;
    cfg.validate();
    if (cfg.vocab_size != corpus.vocab_size()) {
        throw StateError("model vocab_size " + std::to_string(cfg.vocab_size) +
                         " does not match corpus vocab " + std::to_string(corpus.vocab_size()));
    }
    if (corpus.train_ids.size() < static_cast<std::size_t>(cfg.seq_len) + 2) {
        throw StateError("training split shorter than one window");
    }
    const auto masks = masks_for(cfg);
    const int b_count = cfg.batch_size, n = cfg.seq_len;

    TrainResult res;
    res.curve.reserve(static_cast<std::size_t>(steps));
    std::int64_t last_saved = -1;
    const auto maybe_save = [&](std::int64_t step, bool force) {
        if (opts.checkpoint_dir.empty() || step == last_saved) {
            return;
        }
        if (force || (opts.checkpoint_every > 0 && step % opts.checkpoint_every == 0)) {
            save_checkpoint(state, opts.checkpoint_dir + "/" + checkpoint_name(step));
            last_saved = step;
        }
    };
    maybe_save(state.step, state.step == 0);

    for (int s = 0; s < steps; ++s) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::int64_t gstep = state.step;
        std::mt19937_64 gen = stream_for_step(cfg.seed, static_cast<std::uint64_t>(gstep));
        std::vector<int> inputs(static_cast<std::size_t>(b_count) * n);
        std::vector<int> targets(inputs.size());
        const std::uint64_t span =
            static_cast<std::uint64_t>(corpus.train_ids.size()) - static_cast<std::uint64_t>(n) - 1;
        for (int b = 0; b < b_count; ++b) {
            const std::size_t start = static_cast<std::size_t>(uniform_below(gen, span + 1));
            for (int i = 0; i < n; ++i) {
                inputs[static_cast<std::size_t>(b) * n + i] = corpus.train_ids[start + i];
                targets[static_cast<std::size_t>(b) * n + i] = corpus.train_ids[start + i + 1];
            }
        }

        Tape<float> tape;
        std::vector<int> pid;
        pid.reserve(state.params.size());
        for (const Tensor<float>& p : state.params) {
            pid.push_back(tape.leaf(p));
        }
        float loss;
        try {
            const int logits =
                model_forward<float>(tape, pid, cfg, masks, inputs, b_count, nullptr);
            const int loss_id = tape.cross_entropy_loss(logits, targets);
            tape.backward(loss_id);
            loss = tape.value(loss_id).data[0];
        } catch (const NumericError& e) {
            throw NumericError("training diverged at step " + std::to_string(gstep) + ": " +
                               e.what());
        }
        for (std::size_t i = 0; i < state.params.size(); ++i) {
            adam_step<float>(state.params[i].data, state.adam_m[i], state.adam_v[i],
                             tape.grad(pid[static_cast<int>(i)]),
                             static_cast<float>(cfg.learning_rate), gstep + 1);
        }
        ++state.step;
        state.last_loss = loss;

        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const double tps = secs > 0 ? static_cast<double>(b_count) * n / secs : 0.0;
        res.curve.push_back({gstep, loss, tps});
        if (opts.log_steps) {
            // progress goes to stderr; stdout stays reserved for artifacts
            std::fprintf(stderr, "step %lld loss %.6f tokens/s %.0f\n",
                         static_cast<long long>(gstep), static_cast<double>(loss), tps);
        }
        maybe_save(state.step, s == steps - 1);
    }
    res.state = std::move(state);
    return res;
}

std::string loss_csv(const std::vector<StepRecord>& curve) {
    std::ostringstream os;
    os << "step,loss\n";
    for (const StepRecord& r : curve) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%lld,%.17g\n", static_cast<long long>(r.step),
                      static_cast<double>(r.loss));
        os << buf;
    }
    return os.str();
}

EvalResult evaluate(const TrainState& state, const Corpus& corpus, int max_windows) {
    const ModelConfig& cfg = state.config;
    cfg.validate();
    const int n = cfg.seq_len;
    const std::size_t usable = corpus.valid_ids.size();
    const int available = usable > static_cast<std::size_t>(n) ? static_cast<int>((usable - 1) / n) : 0;
    if (available == 0) {
        throw StateError("validation split shorter than one window of " + std::to_string(n));
    }
    const int windows = max_windows > 0 ? std::min(max_windows, available) : available;
    const auto masks = masks_for(cfg);

    double total = 0.0;
    for (int w = 0; w < windows; ++w) {
        std::vector<int> inputs(static_cast<std::size_t>(n)), targets(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            inputs[static_cast<std::size_t>(i)] = corpus.valid_ids[static_cast<std::size_t>(w) * n + i];
            targets[static_cast<std::size_t>(i)] =
                corpus.valid_ids[static_cast<std::size_t>(w) * n + i + 1];
        }
        Tape<float> tape;
        std::vector<int> pid;
        for (const Tensor<float>& p : state.params) {
            pid.push_back(tape.leaf(p));
        }
        const int logits = model_forward<float>(tape, pid, cfg, masks, inputs, 1, nullptr);
        total += tape.value(tape.cross_entropy_loss(logits, targets)).data[0];
    }
    EvalResult r;
    r.loss = total / windows;
    r.perplexity = std::exp(r.loss);
    r.windows = windows;
    return r;
}

std::vector<std::vector<HeadProbs<double>>> capture_attention_probs(const TrainState& state,
                                                                    const Corpus& corpus,
                                                                    int batch_items) {
    const ModelConfig& cfg = state.config;
    cfg.validate();
    const int n = cfg.seq_len;
    const std::vector<int>& src =
        corpus.valid_ids.size() > static_cast<std::size_t>(batch_items) * n
            ? corpus.valid_ids
            : corpus.train_ids;
    if (src.size() < static_cast<std::size_t>(n) + 1) {
        throw StateError("corpus too small for one attention-stats window");
    }
    const int available = static_cast<int>((src.size() - 1) / static_cast<std::size_t>(n));
    const int items = std::max(1, std::min(batch_items, available));
    std::vector<int> ids(static_cast<std::size_t>(items) * n);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        ids[i] = src[i];
    }

    Tape<double> tape;
    std::vector<int> pid;
    for (const Tensor<float>& p : state.params) {
        Tensor<double> d(p.shape);
        for (std::size_t i = 0; i < p.size(); ++i) {
            d.data[i] = static_cast<double>(p.data[i]);
        }
        pid.push_back(tape.leaf(std::move(d)));
    }
    const auto masks = masks_for(cfg);
    std::vector<std::vector<HeadProbs<double>>> layer_probs;
    model_forward(tape, pid, cfg, masks, ids, items, &layer_probs);
    return layer_probs;
}

AttentionStats collect_attention_stats(const TrainState& state, const Corpus& corpus,
                                       int batch_items) {
    std::vector<std::vector<HeadProbs<double>>> layer_probs =
        capture_attention_probs(state, corpus, batch_items);
    const auto masks = masks_for(state.config);

    AttentionStats stats;
    const AttentionConfig acfg = state.config.attention();
    std::vector<HeadProbs<double>> pooled;
    for (auto& lp : layer_probs) {
        std::vector<HeadProbs<double>> copy = lp;
        stats.per_layer.push_back(collect_metrics(acfg, *masks, lp));
        append_probs(pooled, std::move(copy));
    }
    stats.aggregate = collect_metrics(acfg, *masks, pooled);
    return stats;
}

void save_checkpoint(const TrainState& state, const std::string& path) {
    json header;
    header["config"] = json::parse(state.config.to_json());
    header["step"] = state.step;
    header["metrics"] = {{"loss", state.last_loss}};
    json tensors = json::array();
    auto add_entry = [&](const std::string& name, const std::vector<int>& shape) {
        tensors.push_back({{"name", name}, {"shape", shape}});
    };
    for (std::size_t i = 0; i < state.params.size(); ++i) {
        add_entry(state.names[i], state.params[i].shape);
    }
    for (std::size_t i = 0; i < state.params.size(); ++i) {
        add_entry("adam_m." + state.names[i], state.params[i].shape);
    }
    for (std::size_t i = 0; i < state.params.size(); ++i) {
        add_entry("adam_v." + state.names[i], state.params[i].shape);
    }
    header["tensors"] = tensors;
    const std::string hj = header.dump();

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) {
        throw IoError("cannot write checkpoint: " + path);
    }
    const char magic[8] = {'S', 'P', 'A', 'T', 'T', 'N', 'C', 'K'};
    const std::uint32_t version = 1;
    const std::uint32_t hlen = static_cast<std::uint32_t>(hj.size());
    bool ok = std::fwrite(magic, 1, 8, f) == 8;
    ok = ok && std::fwrite(&version, sizeof(version), 1, f) == 1;
    ok = ok && std::fwrite(&hlen, sizeof(hlen), 1, f) == 1;
    ok = ok && std::fwrite(hj.data(), 1, hj.size(), f) == hj.size();
    auto write_block = [&](const float* p, std::size_t count) {
        ok = ok && std::fwrite(p, sizeof(float), count, f) == count;
    };
    for (const Tensor<float>& t : state.params) {
        write_block(t.data.data(), t.size());
    }
    for (const auto& m : state.adam_m) {
        write_block(m.data(), m.size());
    }
    for (const auto& v : state.adam_v) {
        write_block(v.data(), v.size());
    }
    ok = std::fclose(f) == 0 && ok;
    if (!ok) {
        throw IoError("short write while saving checkpoint: " + path);
    }
}

TrainState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) {
        throw IoError("cannot open checkpoint: " + path);
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || bytes.compare(0, 8, "SPATTNCK") != 0) {
        throw IoError("not a checkpoint file: " + path);
    }
    std::uint32_t version = 0, hlen = 0;
    std::memcpy(&version, bytes.data() + 8, 4);
    std::memcpy(&hlen, bytes.data() + 12, 4);
    if (version != 1 || bytes.size() < 16 + static_cast<std::size_t>(hlen)) {
        throw IoError("unsupported or truncated checkpoint header: " + path);
    }
    json header;
    try {
        header = json::parse(bytes.substr(16, hlen));
    } catch (const json::exception& e) {
        throw IoError("corrupt checkpoint header: " + std::string(e.what()));
    }

    TrainState st;
    st.config = ModelConfig::from_json(header.at("config").dump());
    st.step = header.at("step").get<std::int64_t>();
    st.last_loss = header.at("metrics").at("loss").get<float>();

    std::size_t offset = 16 + hlen;
    struct Entry {
        std::string name;
        std::vector<int> shape;
    };
    std::vector<Entry> entries;
    std::size_t total_elems = 0;
    for (const auto& t : header.at("tensors")) {
        Entry e{t.at("name").get<std::string>(), t.at("shape").get<std::vector<int>>()};
        total_elems += Tensor<float>::checked_numel(e.shape);
        entries.push_back(std::move(e));
    }
    if (bytes.size() != offset + total_elems * sizeof(float)) {
        throw IoError("checkpoint blob length mismatch: " + path);
    }
    auto read_block = [&](float* dst, std::size_t count) {
        std::memcpy(dst, bytes.data() + offset, count * sizeof(float));
        offset += count * sizeof(float);
    };
    for (const Entry& e : entries) {
        if (e.name.starts_with("adam_m.")) {
            std::vector<float> buf(Tensor<float>::checked_numel(e.shape));
            read_block(buf.data(), buf.size());
            st.adam_m.push_back(std::move(buf));
        } else if (e.name.starts_with("adam_v.")) {
            std::vector<float> buf(Tensor<float>::checked_numel(e.shape));
            read_block(buf.data(), buf.size());
            st.adam_v.push_back(std::move(buf));
        } else {
            Tensor<float> t(e.shape);
            read_block(t.data.data(), t.size());
            st.names.push_back(e.name);
            st.params.push_back(std::move(t));
        }
    }
    if (st.adam_m.size() != st.params.size() || st.adam_v.size() != st.params.size()) {
        throw IoError("checkpoint tensor index incomplete: " + path);
    }
    return st;
}

} // namespace spattn
