// collabattn: weight-bundle analysis, compression, verification, benchmarking
// and toy training for concatenated / collaborative multi-head attention.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "collab/analysis.hpp"
#include "collab/attention.hpp"
#include "collab/bundle.hpp"
#include "collab/decompose.hpp"
#include "collab/grad.hpp"
#include "collab/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace collab;

namespace {

constexpr double kThresholds[] = {0.80, 0.90, 0.99};

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Worker-count override: COLLABATTN_THREADS, else hardware concurrency.
std::size_t worker_count(std::size_t jobs) {
    std::size_t n = std::thread::hardware_concurrency();
    if (const char* env = std::getenv("COLLABATTN_THREADS")) {
        const long parsed = std::strtol(env, nullptr, 10);
        if (parsed >= 1) n = static_cast<std::size_t>(parsed);
    }
    return std::max<std::size_t>(1, std::min(n, jobs));
}

// Run fn(layer) for every layer, possibly concurrently. Exceptions are
// re-thrown on the calling thread.
void for_each_layer(std::size_t n_layers, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = worker_count(n_layers);
    if (workers <= 1) {
        for (std::size_t layer = 0; layer < n_layers; ++layer) fn(layer);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t layer = next++; layer < n_layers; layer = next++) fn(layer);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f << content;
    if (!f) throw IoError("write failure on '" + path.string() + "'");
}

std::string spectrum_csv(const EnergySpectrum& s) {
    std::string out = "index,sigma,cumulative_energy\n";
    for (std::size_t i = 0; i < s.singular_values.size(); ++i) {
        out += std::to_string(i) + "," + fmt17(s.singular_values[i]) + "," +
               fmt17(s.cumulative_energy[i]) + "\n";
    }
    return out;
}

json spectrum_summary(const EnergySpectrum& s) {
    json dims = json::array();
    for (double thr : kThresholds) dims.push_back(shared_dim_for_energy(s, thr));
    return json{{"shared_dims", dims}, {"n_singular_values", s.singular_values.size()}};
}

void require_concat_form(const WeightBundle& b, const std::string& role) {
    if (bundle_is_collab(b)) {
        throw ValidationError(role + ": expected a concat-form bundle, found collab tensors");
    }
}

// ---------------------------------------------------------------- analyze --

struct AnalyzeOpts {
    std::string in;
    std::string out;
    bool unfolding = false;
    bool skip_heads = false;
};

int cmd_analyze(const AnalyzeOpts& opt) {
    const WeightBundle bundle = load_bundle(opt.in);
    require_concat_form(bundle, "analyze");

    std::error_code ec;
    fs::create_directories(opt.out, ec);
    if (ec) throw IoError("cannot create output directory '" + opt.out + "'");

    const std::size_t n_layers = bundle.metadata.n_layers;
    std::vector<json> layer_summaries(n_layers);

    for_each_layer(n_layers, [&](std::size_t layer) {
        const ConcatMHAParams p = concat_params_from_bundle(bundle, layer);
        const std::string prefix = "layer" + std::to_string(layer);
        json summary{{"layer", layer}};

        const EnergySpectrum product = layer_spectrum(p);
        write_text_file(fs::path(opt.out) / (prefix + ".product.csv"), spectrum_csv(product));
        summary["product"] = spectrum_summary(product);

        if (opt.unfolding) {
            const EnergySpectrum unf = layer_unfolding_spectrum(p);
            write_text_file(fs::path(opt.out) / (prefix + ".unfolding.csv"), spectrum_csv(unf));
            summary["unfolding"] = spectrum_summary(unf);
        }

        if (!opt.skip_heads) {
            json heads = json::array();
            for (std::size_t h = 0; h < p.dims.n_heads; ++h) {
                const EnergySpectrum hs = head_spectrum(p, h);
                write_text_file(fs::path(opt.out) / (prefix + ".head" + std::to_string(h) + ".csv"),
                                spectrum_csv(hs));
                json entry = spectrum_summary(hs);
                entry["head"] = h;
                heads.push_back(std::move(entry));
            }
            summary["heads"] = std::move(heads);
        }
        layer_summaries[layer] = std::move(summary);
    });

    json summary{{"thresholds", json::array({0.80, 0.90, 0.99})},
                 {"n_layers", n_layers},
                 {"layers", layer_summaries}};
    write_text_file(fs::path(opt.out) / "summary.json", summary.dump(2) + "\n");
    std::printf("analyzed %zu layer(s) into %s\n", n_layers, opt.out.c_str());
    return 0;
}

// --------------------------------------------------------------- compress --

struct CompressOpts {
    std::string in;
    std::string out;
    std::string report;
    std::size_t rank = 0;
    double tol = 1e-6;
    std::uint64_t seed = 0;
    std::string init = "random";
    bool exact = false;
};

int cmd_compress(const CompressOpts& opt) {
    const WeightBundle in = load_bundle(opt.in);
    require_concat_form(in, "compress");
    const BundleMetadata& md = in.metadata;
    const std::size_t d_k_total = md.n_heads * md.d_k_per_head;

    if (opt.exact && opt.rank != d_k_total) {
        throw ArgumentError("--exact requires --rank equal to n_heads * d_k_per_head (" +
                            std::to_string(d_k_total) + ")");
    }

    std::vector<CollabMHAParams> converted(md.n_layers);
    std::vector<double> rel_errors(md.n_layers, 0.0);
    std::vector<std::size_t> iterations(md.n_layers, 0);

    for_each_layer(md.n_layers, [&](std::size_t layer) {
        const ConcatMHAParams p = concat_params_from_bundle(in, layer);
        ReparamResult r;
        if (opt.exact) {
            r = reparametrize_exact(p);
        } else {
            ALSConfig cfg;
            cfg.rank = opt.rank;
            cfg.tol = opt.tol;
            cfg.init = opt.init == "hosvd" ? CpInit::Hosvd : CpInit::RandomUniform;
            cfg.rng_seed = opt.seed + layer;  // per-layer stream, schedule independent
            r = reparametrize(p, cfg);
        }
        converted[layer] = std::move(r.params);
        rel_errors[layer] = r.rel_error;
        iterations[layer] = r.iters;
    });

    WeightBundle out;
    out.metadata = md;
    for (std::size_t layer = 0; layer < md.n_layers; ++layer) {
        append_collab_layer(out, layer, converted[layer]);
    }
    save_bundle(out, opt.out);

    const AttentionDims dims = converted[0].dims;
    const CostReport costs = param_count(dims, opt.rank);
    json layers = json::array();
    for (std::size_t layer = 0; layer < md.n_layers; ++layer) {
        layers.push_back({{"layer", layer},
                          {"rel_error", rel_errors[layer]},
                          {"iterations", iterations[layer]}});
    }
    const json report{
        {"rank", opt.rank},
        {"tol", opt.tol},
        {"seed", opt.seed},
        {"init", opt.exact ? "exact" : opt.init},
        {"exact", opt.exact},
        {"layers", layers},
        {"params_per_layer", {{"concat", costs.params_concat}, {"collab", costs.params_collab}}},
        {"params_total",
         {{"concat", costs.params_concat * md.n_layers},
          {"collab", costs.params_collab * md.n_layers}}},
        {"compression_ratio", costs.compression_ratio},
    };
    const std::string report_path = opt.report.empty() ? opt.out + ".report.json" : opt.report;
    write_text_file(report_path, report.dump(2) + "\n");

    double worst = 0.0;
    for (double e : rel_errors) worst = std::max(worst, e);
    std::printf("compressed %zu layer(s) to rank %zu; worst rel_error %s; report %s\n",
                md.n_layers, opt.rank, fmt17(worst).c_str(), report_path.c_str());
    return 0;
}

// ----------------------------------------------------------------- verify --

struct VerifyOpts {
    std::string concat_path;
    std::string collab_path;
    double tol = 1e-8;
    std::size_t trials = 5;
    std::uint64_t seed = 0;
};

int cmd_verify(const VerifyOpts& opt) {
    const WeightBundle cb = load_bundle(opt.concat_path);
    const WeightBundle lb = load_bundle(opt.collab_path);
    require_concat_form(cb, "verify --concat");
    if (!bundle_is_collab(lb)) {
        throw ValidationError("verify --collab: expected a collab-form bundle");
    }
    if (cb.metadata.d_in != lb.metadata.d_in || cb.metadata.n_heads != lb.metadata.n_heads ||
        cb.metadata.d_out != lb.metadata.d_out || cb.metadata.n_layers != lb.metadata.n_layers ||
        cb.metadata.d_k_per_head != lb.metadata.d_k_per_head) {
        throw ValidationError("verify: bundle metadata disagrees between the two files");
    }

    double worst = 0.0;
    for (std::size_t layer = 0; layer < cb.metadata.n_layers; ++layer) {
        const ConcatMHAParams p = concat_params_from_bundle(cb, layer);
        const CollabMHAParams c = collab_params_from_bundle(lb, layer);
        Rng rng(opt.seed + layer);
        double layer_worst = 0.0;
        for (std::size_t trial = 0; trial < opt.trials; ++trial) {
            const std::size_t t_q = 2 + rng.index(11);
            const std::size_t t_k = 2 + rng.index(11);
            const Matrix x = Matrix::random(rng, t_q, p.dims.d_in, -1.0, 1.0);
            const Matrix y = Matrix::random(rng, t_k, p.dims.d_in, -1.0, 1.0);
            layer_worst = std::max(
                layer_worst, max_abs_diff(concat_mha_forward(p, x, y), collab_mha_forward(c, x, y)));
        }
        std::printf("layer %zu: max abs output deviation %s\n", layer, fmt17(layer_worst).c_str());
        worst = std::max(worst, layer_worst);
    }
    const bool ok = worst <= opt.tol;
    std::printf("%s: worst deviation %s vs tolerance %s\n", ok ? "OK" : "MISMATCH",
                fmt17(worst).c_str(), fmt17(opt.tol).c_str());
    return ok ? 0 : 2;
}

// ------------------------------------------------------------------ bench --

struct BenchOpts {
    std::size_t t = 128;
    std::size_t d_in = 256;
    std::size_t heads = 8;
    std::size_t d_k = 0;  // 0: use d_in / heads
    std::size_t rank = 128;
    std::size_t reps = 10;
    std::uint64_t seed = 0;
};

struct Timing {
    double median_ms = 0.0;
    double stddev_ms = 0.0;
};

Timing time_reps(std::size_t reps, const std::function<void()>& fn) {
    std::vector<double> ms;
    ms.reserve(reps);
    for (std::size_t i = 0; i < reps; ++i) {
        const auto start = std::chrono::steady_clock::now();
        fn();
        ms.push_back(
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                .count());
    }
    std::sort(ms.begin(), ms.end());
    Timing t;
    t.median_ms = ms[ms.size() / 2];
    double mean = 0.0;
    for (double v : ms) mean += v;
    mean /= static_cast<double>(ms.size());
    double var = 0.0;
    for (double v : ms) var += (v - mean) * (v - mean);
    t.stddev_ms = std::sqrt(var / static_cast<double>(ms.size()));
    return t;
}

int cmd_bench(const BenchOpts& opt) {
    const std::size_t d_k = opt.d_k != 0 ? opt.d_k : std::max<std::size_t>(1, opt.d_in / opt.heads);
    Rng rng(opt.seed);

    ConcatMHAParams p;
    p.dims = AttentionDims::make(opt.d_in, opt.d_in, opt.heads, d_k, d_k);
    const double w = 1.0 / std::sqrt(static_cast<double>(opt.d_in));
    p.w_q = Matrix::random(rng, opt.d_in, p.dims.d_k_total, -w, w);
    p.w_k = Matrix::random(rng, opt.d_in, p.dims.d_k_total, -w, w);
    p.w_v = Matrix::random(rng, opt.d_in, opt.heads * d_k, -w, w);
    p.w_o = Matrix::random(rng, opt.heads * d_k, opt.d_in, -w, w);
    p.b_q = rng.vector(p.dims.d_k_total, -0.1, 0.1);
    p.b_k = rng.vector(p.dims.d_k_total, -0.1, 0.1);

    CollabMHAParams c;
    c.dims = p.dims;
    c.d_k_shared = opt.rank;
    c.w_q_shared = Matrix::random(rng, opt.d_in, opt.rank, -w, w);
    c.w_k_shared = Matrix::random(rng, opt.d_in, opt.rank, -w, w);
    c.mixing = MixingMatrix{Matrix::random(rng, opt.heads, opt.rank, -1.0, 1.0), MixingKind::Dense};
    c.content_bias = Matrix::random(rng, opt.heads, opt.d_in, -0.1, 0.1);
    c.w_v = p.w_v;
    c.w_o = p.w_o;

    const Matrix x = Matrix::random(rng, opt.t, opt.d_in, -1.0, 1.0);
    double sink = 0.0;
    const Timing concat_t =
        time_reps(opt.reps, [&] { sink += frobenius_norm(concat_mha_forward(p, x, x)); });
    const Timing collab_t =
        time_reps(opt.reps, [&] { sink += frobenius_norm(collab_mha_forward(c, x, x)); });

    const CostReport flops = flop_count(p.dims, opt.t, opt.rank);
    std::printf("forward pass, T=%zu, d_in=%zu, heads=%zu, d_k=%zu, rank=%zu (%zu reps)\n", opt.t,
                opt.d_in, opt.heads, d_k, opt.rank, opt.reps);
    std::printf("  %-8s median %9.3f ms  stddev %8.3f ms  score FLOPs %llu\n", "concat",
                concat_t.median_ms, concat_t.stddev_ms,
                static_cast<unsigned long long>(flops.flops_concat));
    std::printf("  %-8s median %9.3f ms  stddev %8.3f ms  score FLOPs %llu\n", "collab",
                collab_t.median_ms, collab_t.stddev_ms,
                static_cast<unsigned long long>(flops.flops_collab));
    std::printf("  output norm checksum %.6f\n", sink);
    return 0;
}

// -------------------------------------------------------------- train-toy --

struct TrainOpts {
    std::string task = "attend-to-marker";
    std::string mode = "collab";
    std::size_t t = 8;
    std::size_t d_in = 16;
    std::size_t heads = 2;
    std::size_t rank = 8;
    std::size_t steps = 500;
    double lr = 0.5;
    std::uint64_t seed = 0;
    std::string out = "loss.csv";
};

int cmd_train_toy(const TrainOpts& opt) {
    ToyTaskConfig cfg;
    cfg.task = opt.task == "copy-first-token" ? ToyTask::CopyFirstToken : ToyTask::AttendToMarker;
    cfg.t_tokens = opt.t;
    cfg.d_in = opt.d_in;
    cfg.n_heads = opt.heads;
    cfg.d_k_shared = opt.rank;
    cfg.steps = opt.steps;
    cfg.learning_rate = opt.lr;
    cfg.rng_seed = opt.seed;

    const TrainMode mode = opt.mode == "concat" ? TrainMode::Concat : TrainMode::Collab;
    const std::vector<double> curve = train_toy(cfg, mode);

    std::string csv = "step,loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i) {
        csv += std::to_string(i) + "," + fmt17(curve[i]) + "\n";
    }
    write_text_file(opt.out, csv);

    std::printf("task=%s mode=%s steps=%zu\n", opt.task.c_str(), opt.mode.c_str(), opt.steps);
    std::printf("initial loss %s\n", fmt17(curve.front()).c_str());
    std::printf("final loss   %s\n", fmt17(curve.back()).c_str());
    std::printf("final/initial ratio %s\n", fmt17(curve.back() / curve.front()).c_str());
    return 0;
}

// ------------------------------------------------------------------ synth --

struct SynthOpts {
    std::string out;
    std::size_t layers = 1;
    std::size_t d_in = 16;
    std::size_t heads = 2;
    std::size_t d_k = 4;
    std::size_t d_v = 0;   // 0: same as d_k
    std::size_t d_out = 0; // 0: same as d_in
    std::uint64_t seed = 0;
};

int cmd_synth(const SynthOpts& opt) {
    const std::size_t d_v = opt.d_v != 0 ? opt.d_v : opt.d_k;
    const std::size_t d_out = opt.d_out != 0 ? opt.d_out : opt.d_in;
    Rng rng(opt.seed);

    WeightBundle b;
    b.metadata = {opt.heads, opt.d_k, opt.d_in, d_out, opt.layers};
    const double w = 1.0 / std::sqrt(static_cast<double>(opt.d_in));
    for (std::size_t layer = 0; layer < opt.layers; ++layer) {
        ConcatMHAParams p;
        p.dims = AttentionDims::make(opt.d_in, d_out, opt.heads, opt.d_k, d_v);
        p.w_q = Matrix::random(rng, opt.d_in, p.dims.d_k_total, -w, w);
        p.w_k = Matrix::random(rng, opt.d_in, p.dims.d_k_total, -w, w);
        p.w_v = Matrix::random(rng, opt.d_in, opt.heads * d_v, -w, w);
        p.w_o = Matrix::random(rng, opt.heads * d_v, d_out, -w, w);
        p.b_q = rng.vector(p.dims.d_k_total, -0.05, 0.05);
        p.b_k = rng.vector(p.dims.d_k_total, -0.05, 0.05);
        append_concat_layer(b, layer, p);
    }
    save_bundle(b, opt.out);
    std::printf("wrote %zu-layer concat bundle to %s\n", opt.layers, opt.out.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"concatenated vs collaborative multi-head attention toolkit"};
    app.require_subcommand(1);
    int rc = 0;

    AnalyzeOpts analyze;
    auto* sub_analyze = app.add_subcommand(
        "analyze", "Write per-head and per-layer singular-value spectra and a summary");
    sub_analyze->add_option("--in", analyze.in, "input bundle (concat form)")->required();
    sub_analyze->add_option("--out", analyze.out, "output directory for CSV/JSON")->required();
    sub_analyze->add_flag("--unfolding", analyze.unfolding,
                          "also write the spectrum of the stacked tensor's query-side unfolding");
    sub_analyze->add_flag("--no-heads", analyze.skip_heads, "skip per-head spectra");
    sub_analyze->callback([&] { rc = cmd_analyze(analyze); });

    CompressOpts compress;
    auto* sub_compress =
        app.add_subcommand("compress", "Convert a concat bundle into collaborative form");
    sub_compress->add_option("--in", compress.in, "input bundle (concat form)")->required();
    sub_compress->add_option("--out", compress.out, "output bundle (collab form)")->required();
    sub_compress->add_option("--rank", compress.rank, "shared key/query dimension")->required();
    sub_compress->add_option("--tol", compress.tol, "ALS stopping tolerance (default 1e-6)");
    sub_compress->add_option("--seed", compress.seed, "master seed; layer L uses seed+L");
    sub_compress->add_option("--init", compress.init, "ALS init: random | hosvd")
        ->check(CLI::IsMember({"random", "hosvd"}));
    sub_compress->add_flag("--exact", compress.exact,
                           "use the lossless expansion (requires rank == n_heads * d_k)");
    sub_compress->add_option("--report", compress.report,
                             "report JSON path (default: <out>.report.json)");
    sub_compress->callback([&] { rc = cmd_compress(compress); });

    VerifyOpts verify;
    auto* sub_verify = app.add_subcommand(
        "verify", "Compare concat and collab bundle forwards on random inputs");
    sub_verify->add_option("--concat", verify.concat_path, "concat-form bundle")->required();
    sub_verify->add_option("--collab", verify.collab_path, "collab-form bundle")->required();
    sub_verify->add_option("--tol", verify.tol, "max allowed output deviation (default 1e-8)");
    sub_verify->add_option("--trials", verify.trials, "random input trials per layer");
    sub_verify->add_option("--seed", verify.seed, "input seed; layer L uses seed+L");
    sub_verify->callback([&] { rc = cmd_verify(verify); });

    BenchOpts bench;
    auto* sub_bench =
        app.add_subcommand("bench", "Wall-clock concat vs collab forwards plus formula FLOPs");
    sub_bench->add_option("--t", bench.t, "tokens per sequence");
    sub_bench->add_option("--d-in", bench.d_in, "input width");
    sub_bench->add_option("--heads", bench.heads, "head count");
    sub_bench->add_option("--d-k", bench.d_k, "per-head key width (default d_in/heads)");
    sub_bench->add_option("--rank", bench.rank, "collab shared dimension");
    sub_bench->add_option("--reps", bench.reps, "timed repetitions");
    sub_bench->add_option("--seed", bench.seed, "weight seed");
    sub_bench->callback([&] { rc = cmd_bench(bench); });

    TrainOpts train;
    auto* sub_train = app.add_subcommand("train-toy", "Train one attention layer on a toy task");
    sub_train->add_option("--task", train.task, "attend-to-marker | copy-first-token")
        ->check(CLI::IsMember({"attend-to-marker", "copy-first-token"}));
    sub_train->add_option("--mode", train.mode, "concat | collab")
        ->check(CLI::IsMember({"concat", "collab"}));
    sub_train->add_option("--t", train.t, "tokens");
    sub_train->add_option("--d-in", train.d_in, "embedding width");
    sub_train->add_option("--heads", train.heads, "head count");
    sub_train->add_option("--rank", train.rank, "shared key/query dimension");
    sub_train->add_option("--steps", train.steps, "gradient steps");
    sub_train->add_option("--lr", train.lr, "learning rate");
    sub_train->add_option("--seed", train.seed, "data and init seed");
    sub_train->add_option("--out", train.out, "loss CSV path");
    sub_train->callback([&] { rc = cmd_train_toy(train); });

    SynthOpts synth;
    auto* sub_synth =
        app.add_subcommand("synth", "Generate a random concat-form bundle for experimentation");
    sub_synth->add_option("--out", synth.out, "output bundle path")->required();
    sub_synth->add_option("--layers", synth.layers, "layer count");
    sub_synth->add_option("--d-in", synth.d_in, "input width");
    sub_synth->add_option("--heads", synth.heads, "head count");
    sub_synth->add_option("--d-k", synth.d_k, "per-head key width");
    sub_synth->add_option("--d-v", synth.d_v, "per-head value width (default d-k)");
    sub_synth->add_option("--d-out", synth.d_out, "output width (default d-in)");
    sub_synth->add_option("--seed", synth.seed, "weight seed");
    sub_synth->callback([&] { rc = cmd_synth(synth); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return rc;
}
