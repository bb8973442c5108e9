// SPDX-License-Identifier: Apache-2.0
#include "spattn/attention.hpp"
#include "spattn/band_partition.hpp"
#include "spattn/bench.hpp"
#include "spattn/errors.hpp"
#include "spattn/lm.hpp"
#include "spattn/metrics.hpp"
#include "spattn/verify.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace spattn;

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void spill(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
        throw IoError("cannot write " + path);
    }
}

/// Either stdout or --out; binary-safe.
void emit(const std::string& out_path, const std::string& bytes) {
    if (out_path.empty()) {
        std::fwrite(bytes.data(), 1, bytes.size(), stdout);
    } else {
        spill(out_path, bytes);
    }
}

struct PartitionArgs {
    int seq_len = 16;
    int heads = 4;
    std::string variant = "spa";
    int window = 0;
    bool json = false;
};

int run_partition(const PartitionArgs& a) {
    const MaskVariant v = parse_variant(a.variant, a.window);
    const BandPartition p =
        v.kind == MaskKind::EBALL ? eball_partition(a.seq_len, a.heads)
                                  : compute_partition(a.seq_len, a.heads);
    if (a.json) {
        nlohmann::json j;
        j["partition"] = {{"seq_len", p.seq_len},
                          {"num_heads", p.num_heads},
                          {"variant", variant_name(v)},
                          {"base_width", p.base_width},
                          {"remainder", p.remainder}};
        j["partition"]["bands"] = nlohmann::json::array();
        for (std::size_t h = 0; h < p.bands.size(); ++h) {
            j["partition"]["bands"].push_back({{"head", h},
                                               {"start", p.bands[h].start},
                                               {"width", p.bands[h].width}});
        }
        std::printf("%s\n", j.dump(2).c_str());
    } else {
        std::printf("config: seq_len=%d heads=%d variant=%s\n", a.seq_len, a.heads,
                    variant_name(v).c_str());
        std::printf("head,start,width\n");
        for (std::size_t h = 0; h < p.bands.size(); ++h) {
            std::printf("%zu,%d,%d\n", h, p.bands[h].start, p.bands[h].width);
        }
    }
    return 0;
}

struct MaskArgs {
    int seq_len = 16;
    int heads = 4;
    std::string variant = "spa";
    int window = 0;
    int head = 0;
    std::string format = "ascii";
    std::string out;
};

int run_mask(const MaskArgs& a) {
    const MaskVariant v = parse_variant(a.variant, a.window);
    if (a.head < 0 || a.head >= a.heads) {
        std::fprintf(stderr, "error: head %d out of range [0, %d)\n", a.head, a.heads);
        return 2;
    }
    const auto masks = build_mask(compute_partition(a.seq_len, a.heads), v);
    const RenderFormat fmt = a.format == "pgm" ? RenderFormat::Pgm : RenderFormat::Ascii;
    // binary renderings share stdout, so the config echo goes to stderr
    std::fprintf(stderr, "config: seq_len=%d heads=%d variant=%s head=%d format=%s\n", a.seq_len,
                 a.heads, variant_name(v).c_str(), a.head, a.format.c_str());
    emit(a.out, render_mask(masks[static_cast<std::size_t>(a.head)], a.seq_len, fmt));
    return 0;
}

struct VerifyArgs {
    int seq_len = 256;
    int heads = 8;
    int trials = 50;
    std::uint64_t seed = 1234;
    bool json = false;
};

int run_verify(const VerifyArgs& a) {
    VerifyOptions opt;
    opt.trials = a.trials;
    opt.pinned_seq_len = a.seq_len;
    opt.pinned_heads = a.heads;
    opt.max_seq_len = std::max(opt.max_seq_len, a.seq_len);
    opt.oracle_instances = std::max(20, a.trials);
    opt.gradient_instances = std::max(6, a.trials / 10);
    opt.seed = a.seed;
    if (a.heads < 1 || a.seq_len < a.heads) {
        std::fprintf(stderr, "error: need 1 <= heads <= seq_len, got N=%d H=%d\n", a.seq_len,
                     a.heads);
        return 2;
    }
    const auto suites = run_verify_suites(opt);
    if (a.json) {
        std::printf("%s", verify_json(suites, opt).c_str());
    } else {
        std::printf("config: seq_len=%d heads=%d trials=%d seed=%llu\n", a.seq_len, a.heads,
                    a.trials, static_cast<unsigned long long>(a.seed));
        std::printf("%s", verify_table(suites).c_str());
        if (!all_passed(suites)) {
            std::printf("FAIL: %s\n", first_failure(suites).c_str());
        } else {
            std::printf("all suites passed\n");
        }
    }
    return all_passed(suites) ? 0 : 1;
}

struct ModelArgs {
    std::string corpus;
    std::string config_path;
    std::string out = "runs/train";
    int layers = -1, heads = -1, d_model = -1, seq_len = -1, batch = -1, steps = -1;
    double lr = -1;
    std::string variant;
    int window = 0;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int checkpoint_every = 100;
    bool log = false;
    bool json = false;
    int max_windows = 0;
    std::string checkpoint;
    int batch_items = 2;
    bool csv = false;
};

ModelConfig resolve_model_config(const ModelArgs& a) {
    ModelConfig cfg;
    if (!a.config_path.empty()) cfg = ModelConfig::from_json(slurp(a.config_path));
    if (a.layers > 0) cfg.layers = a.layers;
    if (a.heads > 0) cfg.heads = a.heads;
    if (a.d_model > 0) cfg.d_model = a.d_model;
    if (a.seq_len > 0) cfg.seq_len = a.seq_len;
    if (a.batch > 0) cfg.batch_size = a.batch;
    if (a.steps >= 0) cfg.steps = a.steps;
    if (a.lr > 0) cfg.learning_rate = a.lr;
    if (!a.variant.empty()) cfg.variant = parse_variant(a.variant, a.window);
    if (a.seed_set) cfg.seed = a.seed;
    return cfg;
}

int run_train(const ModelArgs& a) {
    ModelConfig cfg = resolve_model_config(a);
    const Corpus corpus = load_corpus(a.corpus, cfg.seq_len);
    if (cfg.vocab_size == 0) cfg.vocab_size = corpus.vocab_size();
    cfg.validate();
    std::filesystem::create_directories(a.out);
    TrainState state = init_model(cfg);

    TrainOptions opts;
    opts.checkpoint_dir = a.out;
    opts.checkpoint_every = a.checkpoint_every;
    opts.log_steps = a.log;
    TrainResult res = train(std::move(state), corpus, cfg.steps, opts);

    const std::string curve_path = a.out + "/loss.csv";
    spill(curve_path, loss_csv(res.curve));

    char hash[32];
    std::snprintf(hash, sizeof hash, "0x%016llx",
                  static_cast<unsigned long long>(param_hash(res.state)));
    if (a.json) {
        nlohmann::json j;
        j["train"] = {{"config", nlohmann::json::parse(cfg.to_json())},
                      {"steps_run", res.curve.size()},
                      {"final_step", res.state.step},
                      {"final_loss", static_cast<double>(res.state.last_loss)},
                      {"param_hash", hash},
                      {"loss_csv", curve_path},
                      {"checkpoint_dir", a.out}};
        std::printf("%s\n", j.dump(2).c_str());
    } else {
        std::printf("config: %s\n", cfg.to_json().c_str());
        std::printf("steps_run=%zu final_step=%lld final_loss=%.17g\n", res.curve.size(),
                    static_cast<long long>(res.state.step),
                    static_cast<double>(res.state.last_loss));
        std::printf("param_hash=%s\n", hash);
        std::printf("loss curve: %s\ncheckpoints: %s\n", curve_path.c_str(), a.out.c_str());
    }
    return 0;
}

int run_eval(const ModelArgs& a) {
    const TrainState state = load_checkpoint(a.checkpoint);
    const Corpus corpus = load_corpus(a.corpus, state.config.seq_len);
    if (corpus.vocab_size() != state.config.vocab_size) {
        throw StateError("corpus vocabulary size " + std::to_string(corpus.vocab_size()) +
                         " does not match the checkpoint's " +
                         std::to_string(state.config.vocab_size));
    }
    const EvalResult r = evaluate(state, corpus, a.max_windows);
    if (a.json) {
        nlohmann::json j;
        j["eval"] = {{"config", nlohmann::json::parse(state.config.to_json())},
                     {"checkpoint", a.checkpoint},
                     {"loss", r.loss},
                     {"perplexity", r.perplexity},
                     {"windows", r.windows}};
        std::printf("%s\n", j.dump(2).c_str());
    } else {
        std::printf("config: %s\n", state.config.to_json().c_str());
        std::printf("loss=%.17g perplexity=%.17g windows=%d\n", r.loss, r.perplexity, r.windows);
    }
    return 0;
}

int run_metrics(const ModelArgs& a) {
    const TrainState state = load_checkpoint(a.checkpoint);
    const Corpus corpus = load_corpus(a.corpus, state.config.seq_len);
    if (corpus.vocab_size() != state.config.vocab_size) {
        throw StateError("corpus vocabulary size " + std::to_string(corpus.vocab_size()) +
                         " does not match the checkpoint's " +
                         std::to_string(state.config.vocab_size));
    }
    const AttentionStats stats = collect_attention_stats(state, corpus, a.batch_items);
    if (a.json) {
        nlohmann::json j;
        j["metrics"]["config"] = nlohmann::json::parse(state.config.to_json());
        j["metrics"]["per_layer"] = nlohmann::json::array();
        for (const MetricsReport& r : stats.per_layer) {
            j["metrics"]["per_layer"].push_back(nlohmann::json::parse(r.to_json()));
        }
        j["metrics"]["aggregate"] = nlohmann::json::parse(stats.aggregate.to_json());
        std::printf("%s\n", j.dump(2).c_str());
    } else if (a.csv) {
        std::printf("%s", stats.aggregate.to_csv().c_str());
    } else {
        std::printf("config: %s\n", state.config.to_json().c_str());
        for (std::size_t l = 0; l < stats.per_layer.size(); ++l) {
            const MetricsReport& r = stats.per_layer[l];
            std::printf("layer %zu: mean_entropy=%.6f bound=%.6f sigma=%.6f\n", l, r.mean_entropy,
                        r.entropy_bound_global, r.diversity_sigma);
        }
        const MetricsReport& agg = stats.aggregate;
        std::printf("aggregate: mean_entropy=%.6f bound=%.6f sigma=%.6f\n", agg.mean_entropy,
                    agg.entropy_bound_global, agg.diversity_sigma);
        std::printf("%s", agg.to_csv().c_str());
    }
    return 0;
}

struct BenchArgs {
    std::vector<int> grid = {512, 1024, 2048, 4096};
    std::vector<std::string> variants = {"standard", "spa"};
    int heads = 8;
    int d_k = 128;
    int batch = 1;
    int repeats = 0;
    int window = 0;
    std::uint64_t seed = 1234;
    bool json = false;
    std::string out;
};

int run_bench_cmd(const BenchArgs& a) {
    BenchConfig cfg;
    cfg.num_heads = a.heads;
    cfg.d_k = a.d_k;
    cfg.batch = a.batch;
    cfg.repeats = a.repeats;
    cfg.seed = a.seed;
    std::vector<BenchEntry> grid;
    for (const int n : a.grid) {
        for (const std::string& name : a.variants) {
            grid.push_back({parse_variant(name, a.window), n});
        }
    }
    const auto results = run_bench(grid, cfg);
    emit(a.out, a.json ? bench_json(results, cfg) : bench_csv(results, cfg));
    return 0;
}

struct FlopsArgs {
    int seq_len = 4096;
    int heads = 8;
    int d_k = 128;
    std::string variant = "spa";
    int window = 0;
    bool json = false;
};

int run_flops(const FlopsArgs& a) {
    const MaskVariant v = parse_variant(a.variant, a.window);
    const FlopsCount base = flops_count(MaskVariant::standard(), a.seq_len, a.heads, a.d_k);
    const FlopsCount ours = flops_count(v, a.seq_len, a.heads, a.d_k);
    const bool exact = ours.total != 0 && base.total % ours.total == 0;
    const double ratio =
        ours.total ? static_cast<double>(base.total) / static_cast<double>(ours.total) : 0.0;
    if (a.json) {
        nlohmann::json j;
        j["flops"] = {{"seq_len", a.seq_len},
                      {"num_heads", a.heads},
                      {"d_k", a.d_k},
                      {"variant", variant_name(v)}};
        const auto pack = [](const FlopsCount& f) {
            return nlohmann::json{{"allowed_pairs", f.allowed_pairs},
                                  {"score_madds", f.score_madds},
                                  {"weighted_sum_madds", f.weighted_sum_madds},
                                  {"total", f.total}};
        };
        j["flops"]["standard"] = pack(base);
        j["flops"][variant_name(v)] = pack(ours);
        j["flops"]["ratio"] = ratio;
        j["flops"]["ratio_exact"] = exact;
        std::printf("%s\n", j.dump(2).c_str());
    } else {
        std::printf("config: seq_len=%d heads=%d d_k=%d variant=%s\n", a.seq_len, a.heads, a.d_k,
                    variant_name(v).c_str());
        const auto row = [](const char* name, const FlopsCount& f) {
            std::printf("%-10s pairs=%llu score_madds=%llu weighted_sum_madds=%llu total=%llu\n",
                        name, static_cast<unsigned long long>(f.allowed_pairs),
                        static_cast<unsigned long long>(f.score_madds),
                        static_cast<unsigned long long>(f.weighted_sum_madds),
                        static_cast<unsigned long long>(f.total));
        };
        row("standard", base);
        row(variant_name(v).c_str(), ours);
        if (exact) {
            std::printf("ratio standard/%s: %llu\n", variant_name(v).c_str(),
                        static_cast<unsigned long long>(base.total / ours.total));
        } else {
            std::printf("ratio standard/%s: %.6g\n", variant_name(v).c_str(), ratio);
        }
    }
    return 0;
}

int resolve_threads(int flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("BANDED_ATTN_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"balanced band-partitioned multi-head attention toolkit"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "kernel thread count (or env BANDED_ATTN_THREADS)");

    PartitionArgs pa;
    auto* partition = app.add_subcommand("partition", "print the band table (head, start, width)");
    partition->fallthrough();
    partition->add_option("--seq-len", pa.seq_len, "sequence length")->check(CLI::PositiveNumber);
    partition->add_option("--heads", pa.heads, "head count")->check(CLI::PositiveNumber);
    partition->add_option("--variant", pa.variant, "standard|spa|sliding_window|eball|gbhalf");
    partition->add_option("--window", pa.window, "sliding window width (0 derives N/H)");
    partition->add_flag("--json", pa.json, "machine-readable output");

    MaskArgs ma;
    auto* mask = app.add_subcommand("mask", "render one head's allowed key pattern");
    mask->fallthrough();
    mask->add_option("--seq-len", ma.seq_len, "sequence length")->check(CLI::PositiveNumber);
    mask->add_option("--heads", ma.heads, "head count")->check(CLI::PositiveNumber);
    mask->add_option("--variant", ma.variant, "mask variant");
    mask->add_option("--window", ma.window, "sliding window width");
    mask->add_option("--head", ma.head, "head index to render");
    mask->add_option("--format", ma.format, "ascii|pgm")
        ->check(CLI::IsMember({"ascii", "pgm"}));
    mask->add_option("--out", ma.out, "output file (default stdout)");

    VerifyArgs va;
    auto* verify = app.add_subcommand("verify", "run the verification suites");
    verify->fallthrough();
    verify->add_option("--seq-len", va.seq_len, "pinned config sequence length")
        ->check(CLI::PositiveNumber);
    verify->add_option("--heads", va.heads, "pinned config head count")->check(CLI::PositiveNumber);
    verify->add_option("--trials", va.trials, "randomized configs per suite")
        ->check(CLI::PositiveNumber);
    verify->add_option("--seed", va.seed, "RNG seed");
    verify->add_flag("--json", va.json, "machine-readable output");

    ModelArgs ta;
    auto* tr = app.add_subcommand("train", "train the character model");
    tr->fallthrough();
    tr->add_option("--corpus", ta.corpus, "corpus text file")->required();
    tr->add_option("--out", ta.out, "output directory for checkpoints and loss curve");
    tr->add_option("--config", ta.config_path, "JSON config file (flags override)");
    tr->add_option("--layers", ta.layers, "transformer layers");
    tr->add_option("--heads", ta.heads, "attention heads");
    tr->add_option("--d-model", ta.d_model, "model width");
    tr->add_option("--seq-len", ta.seq_len, "window length");
    tr->add_option("--variant", ta.variant, "mask variant");
    tr->add_option("--window", ta.window, "sliding window width");
    tr->add_option("--batch", ta.batch, "batch size");
    tr->add_option("--lr", ta.lr, "learning rate");
    tr->add_option("--steps", ta.steps, "optimizer steps");
    auto* seed_opt = tr->add_option("--seed", ta.seed, "RNG seed");
    tr->add_option("--checkpoint-every", ta.checkpoint_every, "steps between checkpoints");
    tr->add_flag("--log", ta.log, "per-step progress on stderr");
    tr->add_flag("--json", ta.json, "machine-readable summary");

    ModelArgs ea;
    auto* ev = app.add_subcommand("eval", "perplexity on the validation split");
    ev->fallthrough();
    ev->add_option("--corpus", ea.corpus, "corpus text file")->required();
    ev->add_option("--checkpoint", ea.checkpoint, "checkpoint file")->required();
    ev->add_option("--max-windows", ea.max_windows, "cap on validation windows (0 = all)");
    ev->add_flag("--json", ea.json, "machine-readable output");

    ModelArgs sa;
    auto* st = app.add_subcommand("metrics", "attention entropy/diversity statistics");
    st->fallthrough();
    st->add_option("--corpus", sa.corpus, "corpus text file")->required();
    st->add_option("--checkpoint", sa.checkpoint, "checkpoint file")->required();
    st->add_option("--batch-items", sa.batch_items, "validation windows to pool")
        ->check(CLI::PositiveNumber);
    st->add_flag("--json", sa.json, "machine-readable output");
    st->add_flag("--csv", sa.csv, "per-head CSV of the aggregate report");

    BenchArgs ba;
    auto* be = app.add_subcommand("bench", "attention layer forward+backward timings");
    be->fallthrough();
    be->add_option("--grid", ba.grid, "sequence lengths")->delimiter(',');
    be->add_option("--variants", ba.variants, "mask variants to time")->delimiter(',');
    be->add_option("--heads", ba.heads, "attention heads")->check(CLI::PositiveNumber);
    be->add_option("--d-k", ba.d_k, "per-head width")->check(CLI::PositiveNumber);
    be->add_option("--batch", ba.batch, "batch size")->check(CLI::PositiveNumber);
    be->add_option("--repeats", ba.repeats, "timed repeats per entry (0 = auto)");
    be->add_option("--window", ba.window, "sliding window width");
    be->add_option("--seed", ba.seed, "workload seed");
    be->add_flag("--json", ba.json, "JSON instead of CSV");
    be->add_option("--out", ba.out, "report file (default stdout)");

    FlopsArgs fa;
    auto* fl = app.add_subcommand("flops", "exact multiply-add counts and ratio");
    fl->fallthrough();
    fl->add_option("--seq-len", fa.seq_len, "sequence length")->check(CLI::PositiveNumber);
    fl->add_option("--heads", fa.heads, "head count")->check(CLI::PositiveNumber);
    fl->add_option("--d-k", fa.d_k, "per-head width")->check(CLI::PositiveNumber);
    fl->add_option("--variant", fa.variant, "variant to compare against standard");
    fl->add_option("--window", fa.window, "sliding window width");
    fl->add_flag("--json", fa.json, "machine-readable output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    ta.seed_set = seed_opt->count() > 0;

#ifdef _OPENMP
    if (const int t = resolve_threads(threads); t > 0) omp_set_num_threads(t);
#else
    (void)resolve_threads(threads);
#endif

    try {
        if (partition->parsed()) return run_partition(pa);
        if (mask->parsed()) return run_mask(ma);
        if (verify->parsed()) return run_verify(va);
        if (tr->parsed()) return run_train(ta);
        if (ev->parsed()) return run_eval(ea);
        if (st->parsed()) return run_metrics(sa);
        if (be->parsed()) return run_bench_cmd(ba);
        if (fl->parsed()) return run_flops(fa);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
