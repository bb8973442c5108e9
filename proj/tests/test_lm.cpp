// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "spattn/errors.hpp"
#include "spattn/lm.hpp"
#include "spattn/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

using namespace spattn;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("spattn_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

fs::path write_text(const fs::path& dir, const std::string& name, const std::string& text) {
    fs::path p = dir / name;
    std::ofstream out(p, std::ios::binary);
    out << text;
    out.close();
    return p;
}

// Repetitive English-like text: easy for a tiny model to compress.
std::string sample_text(std::size_t at_least) {
    const std::string phrase = "the quick brown fox jumps over the lazy dog. ";
    std::string text;
    while (text.size() < at_least) {
        text += phrase;
    }
    return text;
}

ModelConfig tiny_config(int vocab) {
    ModelConfig cfg;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.d_model = 16;
    cfg.seq_len = 16;
    cfg.vocab_size = vocab;
    cfg.batch_size = 2;
    cfg.learning_rate = 1e-3;
    cfg.seed = 77;
    return cfg;
}

std::uint64_t file_fnv(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return fnv1a(bytes.data(), bytes.size());
}

} // namespace

TEST_CASE("corpus ids follow first appearance and the split is contiguous") {
    const auto dir = scratch_dir("corpus");
    // 40 chars: 5% validation split is the last 2 ids.
    const std::string text = "banana band banana band banana band bana";
    REQUIRE(text.size() == 40);
    const auto path = write_text(dir, "c.txt", text);

    const Corpus c = load_corpus(path.string(), 4);
    CHECK(c.vocab == std::vector<unsigned char>{'b', 'a', 'n', ' ', 'd'});
    CHECK(c.vocab_size() == 5);
    CHECK(c.train_ids.size() == 38);
    CHECK(c.valid_ids.size() == 2);
    // "banana b..." -> b=0 a=1 n=2 then space=3, d=4
    const std::vector<int> head{0, 1, 2, 1, 2, 1, 3, 0, 1, 2, 4};
    for (std::size_t i = 0; i < head.size(); ++i) {
        CHECK(c.train_ids[i] == head[i]);
    }
    // split preserves the stream: last two chars are "na"
    CHECK(c.valid_ids[0] == 2);
    CHECK(c.valid_ids[1] == 1);
    fs::remove_all(dir);
}

TEST_CASE("corpus loader rejects missing and undersized files") {
    const auto dir = scratch_dir("corpus_bad");
    CHECK_THROWS_AS(load_corpus((dir / "absent.txt").string(), 8), IoError);

    const auto small = write_text(dir, "small.txt", "tiny");
    bool threw = false;
    try {
        load_corpus(small.string(), 64); // requires 640 chars
    } catch (const IoError& e) {
        threw = true;
        CHECK(std::string(e.what()).find("640") != std::string::npos);
    }
    CHECK(threw);
    fs::remove_all(dir);
}

TEST_CASE("model config json round trips and rejects unknown keys") {
    ModelConfig cfg;
    cfg.layers = 3;
    cfg.heads = 4;
    cfg.d_model = 64;
    cfg.seq_len = 128;
    cfg.vocab_size = 29;
    cfg.variant = MaskVariant::sliding_window(7);
    cfg.seed = 99;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 8;
    cfg.steps = 12;

    const std::string text = cfg.to_json();
    const ModelConfig back = ModelConfig::from_json(text);
    CHECK(back.to_json() == text);
    CHECK(back.layers == 3);
    CHECK(back.heads == 4);
    CHECK(back.variant.kind == MaskKind::SlidingWindow);
    CHECK(back.variant.window == 7);
    CHECK(back.seed == 99);
    CHECK(back.learning_rate == 1e-3);

    // missing keys keep defaults
    const ModelConfig sparse = ModelConfig::from_json(R"({"layers": 2})");
    CHECK(sparse.layers == 2);
    CHECK(sparse.heads == 8);
    CHECK(sparse.variant.kind == MaskKind::SPA);

    CHECK_THROWS_AS(ModelConfig::from_json(R"({"layerz": 2})"), std::invalid_argument);
    CHECK_THROWS_AS(ModelConfig::from_json(R"({"lr": 0.1})"), std::invalid_argument);
}

TEST_CASE("config validation rejects inconsistent shapes") {
    ModelConfig cfg = tiny_config(29);
    cfg.d_model = 17; // not divisible by heads
    CHECK_THROWS_AS(cfg.validate(), ShapeError);
    cfg = tiny_config(29);
    cfg.seq_len = 1; // fewer queries than heads
    CHECK_THROWS_AS(cfg.validate(), ShapeError);
    cfg = tiny_config(29);
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ShapeError);
    CHECK_THROWS_AS(init_model(tiny_config(1)), ShapeError); // vocab too small
}

TEST_CASE("initialization draws do not depend on the mask variant") {
    ModelConfig a = tiny_config(29);
    a.variant = MaskVariant::spa();
    ModelConfig b = a;
    b.variant = MaskVariant::standard();
    ModelConfig c = a;
    c.variant = MaskVariant::eball();

    const std::uint64_t ha = param_hash(init_model(a));
    CHECK(ha == param_hash(init_model(b)));
    CHECK(ha == param_hash(init_model(c)));

    ModelConfig d = a;
    d.seed = 78;
    CHECK(ha != param_hash(init_model(d)));
}

TEST_CASE("initial tensors have the documented layout and fill") {
    const ModelConfig cfg = tiny_config(29);
    const TrainState st = init_model(cfg);
    REQUIRE(st.names.size() == st.params.size());
    REQUIRE(st.names.size() == 2 + 12 + 2); // embeddings, one layer, final norm
    CHECK(st.names.front() == "tok_emb");
    CHECK(st.names[1] == "pos_emb");
    CHECK(st.names[2] == "layer0.ln1_g");
    CHECK(st.names.back() == "final_ln_b");
    CHECK(st.params[0].shape == std::vector<int>{29, 16});
    CHECK(st.params[1].shape == std::vector<int>{16, 16});

    for (std::size_t i = 0; i < st.names.size(); ++i) {
        const std::string& n = st.names[i];
        if (n.ends_with("_g")) {
            for (float x : st.params[i].data) {
                CHECK(x == 1.0f);
            }
        } else if (n.ends_with("_b") || n.ends_with(".b1") || n.ends_with(".b2")) {
            for (float x : st.params[i].data) {
                CHECK(x == 0.0f);
            }
        } else {
            double mx = 0.0;
            for (float x : st.params[i].data) {
                mx = std::max(mx, std::abs(static_cast<double>(x)));
            }
            CHECK(mx > 0.0);
            CHECK(mx < 0.2); // draws from normal(0, 0.02)
        }
    }
    // moments start at zero and match parameter sizes
    for (std::size_t i = 0; i < st.params.size(); ++i) {
        CHECK(st.adam_m[i].size() == st.params[i].size());
        CHECK(st.adam_v[i].size() == st.params[i].size());
    }
}

TEST_CASE("two training runs with one seed are bitwise identical") {
    const auto dir = scratch_dir("det");
    const auto path = write_text(dir, "c.txt", sample_text(4000));
    const Corpus corpus = load_corpus(path.string(), 16);
    ModelConfig cfg = tiny_config(corpus.vocab_size());

    const TrainResult a = train(init_model(cfg), corpus, 3, {});
    const TrainResult b = train(init_model(cfg), corpus, 3, {});
    REQUIRE(a.curve.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a.curve[i].step == static_cast<std::int64_t>(i));
        CHECK(a.curve[i].loss == b.curve[i].loss);
    }
    CHECK(param_hash(a.state) == param_hash(b.state));
    CHECK(a.state.step == 3);
    CHECK(param_hash(a.state) != param_hash(init_model(cfg)));
    fs::remove_all(dir);
}

TEST_CASE("training rejects corpus mismatches") {
    const auto dir = scratch_dir("mismatch");
    const auto path = write_text(dir, "c.txt", sample_text(4000));
    const Corpus corpus = load_corpus(path.string(), 16);

    ModelConfig cfg = tiny_config(corpus.vocab_size() + 1);
    CHECK_THROWS_AS(train(init_model(cfg), corpus, 1, {}), StateError);

    Corpus stub;
    stub.vocab = corpus.vocab;
    stub.train_ids.assign(8, 0); // shorter than one window
    ModelConfig ok = tiny_config(corpus.vocab_size());
    CHECK_THROWS_AS(train(init_model(ok), stub, 1, {}), StateError);
    fs::remove_all(dir);
}

TEST_CASE("a non-finite loss aborts with the failing step in the message") {
    const auto dir = scratch_dir("diverge");
    const auto path = write_text(dir, "c.txt", sample_text(4000));
    const Corpus corpus = load_corpus(path.string(), 16);
    TrainState st = init_model(tiny_config(corpus.vocab_size()));
    st.params[0].data[0] = std::nanf("");

    bool threw = false;
    try {
        train(std::move(st), corpus, 1, {});
    } catch (const NumericError& e) {
        threw = true;
        CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    }
    CHECK(threw);
    fs::remove_all(dir);
}

TEST_CASE("checkpoints restore the exact state and resume seamlessly") {
    const auto dir = scratch_dir("ckpt");
    const auto path = write_text(dir, "c.txt", sample_text(4000));
    const Corpus corpus = load_corpus(path.string(), 16);
    const ModelConfig cfg = tiny_config(corpus.vocab_size());

    // uninterrupted 4-step run
    const TrainResult full = train(init_model(cfg), corpus, 4, {});

    // 2 steps, checkpoint, reload, 2 more steps
    TrainOptions opts;
    opts.checkpoint_dir = dir.string();
    opts.checkpoint_every = 1000; // only the forced saves fire
    const TrainResult half = train(init_model(cfg), corpus, 2, opts);
    REQUIRE(fs::exists(dir / "checkpoint_000000.ckpt"));
    REQUIRE(fs::exists(dir / "checkpoint_000002.ckpt"));

    TrainState resumed = load_checkpoint((dir / "checkpoint_000002.ckpt").string());
    CHECK(resumed.step == 2);
    CHECK(resumed.config.to_json() == cfg.to_json());
    CHECK(param_hash(resumed) == param_hash(half.state));
    for (std::size_t i = 0; i < resumed.params.size(); ++i) {
        CHECK(resumed.adam_m[i] == half.state.adam_m[i]);
        CHECK(resumed.adam_v[i] == half.state.adam_v[i]);
    }

    const TrainResult tail = train(std::move(resumed), corpus, 2, {});
    CHECK(param_hash(tail.state) == param_hash(full.state));
    REQUIRE(tail.curve.size() == 2);
    CHECK(tail.curve[0].step == 2);
    CHECK(tail.curve[0].loss == full.curve[2].loss);
    CHECK(tail.curve[1].loss == full.curve[3].loss);
    fs::remove_all(dir);
}

TEST_CASE("checkpoint files are byte stable and step zero is written eagerly") {
    const auto dir = scratch_dir("ckpt_bytes");
    const auto path = write_text(dir, "c.txt", sample_text(4000));
    const Corpus corpus = load_corpus(path.string(), 16);
    const ModelConfig cfg = tiny_config(corpus.vocab_size());

    TrainOptions opts;
    opts.checkpoint_dir = (dir / "a").string();
    fs::create_directories(opts.checkpoint_dir);
    const TrainResult a = train(init_model(cfg), corpus, 0, opts); // no steps, still a checkpoint
    CHECK(a.curve.empty());
    CHECK(a.state.step == 0);
    REQUIRE(fs::exists(dir / "a" / "checkpoint_000000.ckpt"));

    opts.checkpoint_dir = (dir / "b").string();
    fs::create_directories(opts.checkpoint_dir);
    train(init_model(cfg), corpus, 0, opts);
    CHECK(file_fnv(dir / "a" / "checkpoint_000000.ckpt") ==
          file_fnv(dir / "b" / "checkpoint_000000.ckpt"));

    // the header is valid JSON after the fixed-width prefix
    std::ifstream in(dir / "a" / "checkpoint_000000.ckpt", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    REQUIRE(bytes.size() > 16);
    CHECK(bytes.substr(0, 8) == "SPATTNCK");
    std::uint32_t version = 0, hlen = 0;
    std::memcpy(&version, bytes.data() + 8, 4);
    std::memcpy(&hlen, bytes.data() + 12, 4);
    CHECK(version == 1);
    const auto header = nlohmann::json::parse(bytes.substr(16, hlen));
    CHECK(header.at("step").get<int>() == 0);
    CHECK(header.at("config").at("vocab_size").get<int>() == cfg.vocab_size);
    CHECK(header.at("tensors").size() == 3 * 16); // params plus both moment sets
    fs::remove_all(dir);
}

TEST_CASE("corrupt checkpoints are rejected") {
    const auto dir = scratch_dir("ckpt_bad");
    CHECK_THROWS_AS(load_checkpoint((dir / "absent.ckpt").string()), IoError);

    const auto junk = write_text(dir, "junk.ckpt", "NOTMAGIC and some trailing bytes");
    CHECK_THROWS_AS(load_checkpoint(junk.string()), IoError);

    // valid magic, truncated body
    const auto stub = write_text(dir, "stub.ckpt", std::string("SPATTNCK") + std::string(8, '\0'));
    CHECK_THROWS_AS(load_checkpoint(stub.string()), IoError);
    fs::remove_all(dir);
}

TEST_CASE("loss csv carries full precision losses") {
    std::vector<StepRecord> curve;
    curve.push_back({0, 3.25f, 1000.0});
    curve.push_back({1, 0.1f, 1234.5});
    const std::string csv = loss_csv(curve);
    CHECK(csv.starts_with("step,loss\n"));
    CHECK(csv.find("0,3.25\n") != std::string::npos);
    // 0.1f printed via double carries the f32 representation exactly
    CHECK(csv.find("1,0.10000000149011612\n") != std::string::npos);
}

TEST_CASE("an untrained model scores near the uniform baseline") {
    const auto dir = scratch_dir("eval");
    const auto path = write_text(dir, "c.txt", sample_text(8000));
    const Corpus corpus = load_corpus(path.string(), 16);
    const ModelConfig cfg = tiny_config(corpus.vocab_size());
    const TrainState st = init_model(cfg);

    const EvalResult r = evaluate(st, corpus, 0);
    const double uniform = std::log(static_cast<double>(corpus.vocab_size()));
    CHECK(r.loss == doctest::Approx(uniform).epsilon(0.1));
    CHECK(r.perplexity == doctest::Approx(std::exp(r.loss)).epsilon(1e-12));
    CHECK(r.windows == static_cast<int>((corpus.valid_ids.size() - 1) / 16));

    const EvalResult capped = evaluate(st, corpus, 2);
    CHECK(capped.windows == 2);
    fs::remove_all(dir);
}

TEST_CASE("a short run on repetitive text reduces the loss") {
    const auto dir = scratch_dir("learn");
    const auto path = write_text(dir, "c.txt", sample_text(6000));
    const Corpus corpus = load_corpus(path.string(), 32);

    ModelConfig cfg;
    cfg.layers = 1;
    cfg.heads = 4;
    cfg.d_model = 32;
    cfg.seq_len = 32;
    cfg.vocab_size = corpus.vocab_size();
    cfg.batch_size = 4;
    cfg.learning_rate = 3e-3;
    cfg.seed = 5;

    const TrainResult r = train(init_model(cfg), corpus, 40, {});
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 5; ++i) {
        first += r.curve[static_cast<std::size_t>(i)].loss;
        last += r.curve[r.curve.size() - 5 + static_cast<std::size_t>(i)].loss;
    }
    CHECK(last < 0.8 * first);

    // validation follows along on this corpus
    const EvalResult before = evaluate(init_model(cfg), corpus, 4);
    const EvalResult after = evaluate(r.state, corpus, 4);
    CHECK(after.loss < before.loss);
    fs::remove_all(dir);
}

TEST_CASE("attention statistics respect entropy bounds and band exclusivity") {
    const auto dir = scratch_dir("stats");
    const auto path = write_text(dir, "c.txt", sample_text(6000));
    const Corpus corpus = load_corpus(path.string(), 32);

    ModelConfig cfg;
    cfg.layers = 2;
    cfg.heads = 4;
    cfg.d_model = 32;
    cfg.seq_len = 32;
    cfg.vocab_size = corpus.vocab_size();
    cfg.batch_size = 2;
    cfg.learning_rate = 1e-3;
    cfg.seed = 11;
    cfg.variant = MaskVariant::spa();

    const TrainResult r = train(init_model(cfg), corpus, 5, {});
    const AttentionStats stats = collect_attention_stats(r.state, corpus, 2);
    REQUIRE(stats.per_layer.size() == 2);

    const double bound = std::log(std::ceil(32.0 / 4.0));
    for (const MetricsReport& rep : stats.per_layer) {
        CHECK(rep.variant == "spa");
        REQUIRE(rep.per_head_entropy.size() == 4);
        for (int h = 0; h < 4; ++h) {
            CHECK(rep.per_head_entropy[static_cast<std::size_t>(h)] <=
                  rep.entropy_bound_per_head[static_cast<std::size_t>(h)] + 1e-9);
        }
        CHECK(rep.mean_entropy <= bound + 1e-9);
        CHECK(rep.diversity_sigma >= 0.0);
        CHECK(rep.diversity_sigma <= 1.0 + 1e-12);
        // exclusive bands never overlap
        for (int a = 0; a < 4; ++a) {
            for (int b = 0; b < 4; ++b) {
                const double o = rep.overlap[static_cast<std::size_t>(a * 4 + b)];
                CHECK(o == (a == b ? 1.0 : 0.0));
            }
        }
    }
    CHECK(stats.aggregate.mean_entropy <= bound + 1e-9);
    CHECK(stats.aggregate.seq_len == 32);
    fs::remove_all(dir);
}
