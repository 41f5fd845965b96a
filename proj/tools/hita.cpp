// hita: tokenizer / AR training and the downstream procedures as subcommands.
//
// Artifacts live under --out (default ./hita_out):
//   tokenizer.ckpt, ar.ckpt, tokens.bin, *.ndjson loss logs, PNG outputs.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hita/applications.hpp"
#include "hita/ar.hpp"
#include "hita/checkpoint.hpp"
#include "hita/config.hpp"
#include "hita/data.hpp"
#include "hita/errors.hpp"
#include "hita/token_dump.hpp"
#include "hita/tokenizer.hpp"
#include "hita/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    std::string data;
    std::string out = "hita_out";
    std::optional<uint64_t> seed;
    std::string log_file;
    int jobs = 0;
    std::string tokenizer_path;
    std::string ar_path;
};

// Everything a subcommand may read; unused fields are simply ignored.
struct Args {
    Common common;
    int64_t steps = 200;
    int64_t class_id = -1;
    int64_t n = 4;
    int64_t stats_n = 0;
    std::optional<double> cfg;
    double fraction = 0.5;
    bool generate_holistic = false;
    bool fresh = false;
    std::vector<std::string> inputs;
    std::vector<std::string> references;
};

auto overrides(const Common& c) -> std::vector<std::string> {
    auto out = c.sets;
    if (c.seed) {
        out.push_back("seed=" + std::to_string(*c.seed));
    }
    return out;
}

auto build_config(const Common& c) -> hita::PipelineConfig {
    auto config = c.config_path.empty() ? hita::PipelineConfig::desk() : hita::load_config(c.config_path);
    hita::apply_overrides(config, overrides(c));
    return config;
}

auto data_root(const Common& c) -> std::optional<fs::path> {
    if (!c.data.empty()) {
        return fs::path(c.data);
    }
    return std::nullopt;
}

auto uses_directory(const Common& c) -> bool {
    const char* env = std::getenv("HITA_DATA");
    return !c.data.empty() || (env != nullptr && *env != '\0');
}

// Training split and held-out split. Directory corpora hold out a fifth;
// the synthetic corpus draws a disjoint seed instead.
auto corpora(const Common& c, const hita::PipelineConfig& config) -> std::pair<hita::Corpus, hita::Corpus> {
    auto corpus = hita::ingest_dataset(data_root(c), config);
    if (corpus.warnings > 0) {
        std::cerr << "warning: skipped " << corpus.warnings << " unreadable image(s)\n";
    }
    if (uses_directory(c)) {
        const int64_t held = corpus.size() >= 5 ? corpus.size() / 5 : 0;
        if (held == 0) {
            return {corpus, corpus};
        }
        // directory order groups classes; split a seeded permutation instead
        auto generator = at::make_generator<at::CPUGeneratorImpl>(config.seed + 7);
        auto perm = torch::randperm(corpus.size(), generator, torch::kInt64);
        corpus.images = corpus.images.index_select(0, perm);
        corpus.labels = corpus.labels.index_select(0, perm);
        return {corpus.slice(0, corpus.size() - held), corpus.slice(corpus.size() - held, corpus.size())};
    }
    return {corpus, hita::make_synthetic_corpus(config, 256, config.seed + 1000)};
}

auto out_dir(const Common& c) -> fs::path {
    fs::create_directories(c.out);
    return c.out;
}

auto tokenizer_path(const Common& c) -> fs::path {
    return c.tokenizer_path.empty() ? fs::path(c.out) / "tokenizer.ckpt" : fs::path(c.tokenizer_path);
}

auto ar_path(const Common& c) -> fs::path {
    return c.ar_path.empty() ? fs::path(c.out) / "ar.ckpt" : fs::path(c.ar_path);
}

// NDJSON sink: --log-file when given, stdout otherwise.
class LogSink {
public:
    explicit LogSink(const std::string& path) {
        if (!path.empty()) {
            file_.open(path);
            if (!file_) {
                throw hita::InputError("cannot open log file '" + path + "'");
            }
        }
    }
    void line(const std::string& text) {
        auto& out = file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout;
        out << text << '\n';
        out.flush();
    }

private:
    std::ofstream file_;
};

// Images from --input files, or the first `n` held-out images.
auto input_batch(const std::vector<std::string>& files, const Common& c, const hita::PipelineConfig& config,
                 int64_t n, int64_t skip = 0) -> hita::ImageBatch {
    if (!files.empty()) {
        std::vector<torch::Tensor> images;
        for (const auto& f : files) {
            images.push_back(hita::read_image(f, config.image_size));
        }
        return hita::ImageBatch{torch::stack(images), std::nullopt};
    }
    if (n <= 0) {
        throw hita::ValidationError("--n must be positive");
    }
    auto holdout = corpora(c, config).second;
    if (skip + n > holdout.size()) {
        throw hita::DataError("held-out corpus has only " + std::to_string(holdout.size()) + " images");
    }
    return holdout.batch(skip, skip + n);
}

void check_layouts(const hita::HolisticTokenizer& tokenizer, const hita::ARModel& model) {
    const auto expected = hita::ARLayout::from(tokenizer->config());
    const auto& got = model->layout();
    if (expected.holistic != got.holistic || expected.grid_side != got.grid_side ||
        expected.codebook_size != got.codebook_size) {
        throw hita::DependencyError("AR checkpoint was trained on a different token layout than the tokenizer");
    }
}

auto cmd_train_tokenizer(const Args& a) -> int {
    const auto config = build_config(a.common);
    auto [train, holdout] = corpora(a.common, config);
    const auto dir = out_dir(a.common);
    LogSink log(a.common.log_file);
    hita::TrainOptions options;
    options.steps = a.steps;
    options.usage_every = 50;
    options.on_report = [&](const hita::LossReport& r) { log.line(r.to_json_line()); };
    auto run = hita::train_tokenizer(config, train, options);
    auto eval = hita::evaluate_tokenizer(run.model, holdout);
    std::map<std::string, double> usage{{"patch", eval.patch_usage}};
    if (eval.holistic_usage >= 0.0) {
        usage["holistic"] = eval.holistic_usage;
    }
    hita::save_checkpoint(dir / "tokenizer.ckpt", *run.model, "tokenizer", config, a.steps, usage);
    std::cerr << "tokenizer: " << a.steps << " steps, held-out l2 " << eval.l2 << ", saved "
              << (dir / "tokenizer.ckpt").string() << '\n';
    return 0;
}

auto cmd_train_ar(const Args& a) -> int {
    auto tokenizer = hita::load_tokenizer(tokenizer_path(a.common), overrides(a.common));
    auto config = tokenizer->config();
    if (!a.common.config_path.empty()) {
        // AR keys may come from a config file; tokenizer keys must still match.
        auto file = hita::load_config(a.common.config_path);
        hita::apply_overrides(file, overrides(a.common));
        if (file.tokenizer_fingerprint() != config.tokenizer_fingerprint()) {
            throw hita::DependencyError("config file does not match tokenizer checkpoint '" +
                                        tokenizer_path(a.common).string() + "'");
        }
        config = file;
    }
    auto train = corpora(a.common, config).first;
    const auto dir = out_dir(a.common);

    auto tokens = hita::tokenize_corpus(tokenizer, train);
    hita::TokenIds ids{tokens.ids.slice(1, 0, config.holistic_count()),
                       tokens.ids.slice(1, config.holistic_count())};
    const auto dump = dir / "tokens.bin";
    hita::write_token_dumps(dump, hita::make_records(ids, tokens.labels, config));
    auto data = hita::to_dataset(hita::read_token_dumps(dump), config);

    LogSink log(a.common.log_file);
    hita::ARTrainOptions options;
    options.steps = a.steps;
    options.on_report = [&](int64_t step, double loss) { log.line(json{{"step", step}, {"ce", loss}}.dump()); };
    auto run = hita::train_ar(config, data, options);
    hita::save_checkpoint(dir / "ar.ckpt", *run.model, "ar", config, a.steps);
    std::cerr << "ar: " << a.steps << " steps on " << data.size() << " sequences, final ce "
              << (run.losses.empty() ? 0.0 : run.losses.back()) << ", saved " << (dir / "ar.ckpt").string() << '\n';
    return 0;
}

auto sampling(const Args& a, const hita::PipelineConfig& config) -> hita::SamplingOptions {
    hita::SamplingOptions s;
    s.cfg_scale = a.cfg.value_or(config.cfg_scale);
    s.temperature = config.temperature;
    s.top_k = config.top_k;
    s.seed = config.seed;
    return s;
}

auto cmd_generate(const Args& a) -> int {
    auto tokenizer = hita::load_tokenizer(tokenizer_path(a.common));
    auto model = hita::load_ar(ar_path(a.common), overrides(a.common));
    check_layouts(tokenizer, model);
    auto config = tokenizer->config();
    hita::apply_overrides(config, overrides(a.common));
    const int64_t cls = a.class_id < 0 ? 0 : a.class_id;
    if (cls >= config.num_classes) {
        throw hita::ValidationError("class " + std::to_string(cls) + " outside [0, " +
                                    std::to_string(config.num_classes) + ")");
    }
    if (a.n <= 0) {
        throw hita::ValidationError("--n must be positive");
    }
    const auto dir = out_dir(a.common) / "generate";
    fs::create_directories(dir);

    std::vector<int64_t> classes(a.n, cls);
    std::vector<hita::ForcedTokens> free(a.n, hita::ForcedTokens(model->layout().length()));
    auto sequences = hita::complete_batch(model, classes, free, sampling(a, config));

    std::vector<hita::TokenRecord> records;
    std::vector<torch::Tensor> rows;
    for (const auto& seq : sequences) {
        records.push_back(hita::make_record(seq, config));
        rows.push_back(torch::tensor(seq.ids, torch::kInt64));
    }
    auto all = torch::stack(rows);
    hita::TokenIds ids{all.slice(1, 0, config.holistic_count()), all.slice(1, config.holistic_count())};
    auto images = tokenizer->decode_tokens(ids);
    const auto stem = "class" + std::to_string(cls);
    for (int64_t i = 0; i < a.n; ++i) {
        hita::write_png(dir / (stem + "_" + std::to_string(i) + ".png"), images.pixels[i]);
    }
    hita::write_token_dumps(dir / (stem + ".tokens"), records);
    std::cerr << "generate: wrote " << a.n << " images to " << dir.string() << '\n';
    return 0;
}

auto cmd_style_transfer(const Args& a) -> int {
    auto tokenizer = hita::load_tokenizer(tokenizer_path(a.common), overrides(a.common));
    const auto& config = tokenizer->config();
    const int64_t n = a.inputs.empty() ? a.n : static_cast<int64_t>(a.inputs.size());
    auto content = input_batch(a.inputs, a.common, config, n);
    auto reference = input_batch(a.references, a.common, config, n, a.references.empty() ? n : 0);
    auto result = hita::style_transfer(tokenizer, content, reference);
    const auto dir = out_dir(a.common) / "style_transfer";
    fs::create_directories(dir);
    for (int64_t i = 0; i < content.size(); ++i) {
        hita::write_panel(dir / ("panel_" + std::to_string(i) + ".png"),
                          {content.pixels[i], reference.pixels[i], result.images.pixels[i]});
    }
    std::cerr << "style-transfer: wrote " << content.size() << " panels to " << dir.string() << '\n';
    return 0;
}

auto cmd_inpaint(const Args& a) -> int {
    auto tokenizer = hita::load_tokenizer(tokenizer_path(a.common));
    auto model = hita::load_ar(ar_path(a.common), overrides(a.common));
    check_layouts(tokenizer, model);
    auto config = tokenizer->config();
    hita::apply_overrides(config, overrides(a.common));
    const int64_t n = a.inputs.empty() ? a.n : static_cast<int64_t>(a.inputs.size());
    auto images = input_batch(a.inputs, a.common, config, n);

    hita::InpaintOptions options;
    options.visible_fraction = a.fraction;
    options.generate_holistic = a.generate_holistic;
    options.sampling = sampling(a, config);
    if (a.class_id >= 0) {
        options.class_id = a.class_id;
    } else if (images.labels) {
        options.class_id = (*images.labels)[0].item<int64_t>();
    }
    auto result = hita::inpaint(tokenizer, model, images, options);
    const auto dir = out_dir(a.common) / "inpaint";
    fs::create_directories(dir);
    for (int64_t i = 0; i < images.size(); ++i) {
        hita::write_png(dir / ("output_" + std::to_string(i) + ".png"), result.images.pixels[i]);
        hita::write_panel(dir / ("panel_" + std::to_string(i) + ".png"),
                          {images.pixels[i], result.partial.pixels[i], result.images.pixels[i]});
    }
    std::cerr << "inpaint: " << result.visible_rows << " visible patch row(s), wrote " << images.size()
              << " panels to " << dir.string() << '\n';
    return 0;
}

auto cmd_reconstruct(const Args& a) -> int {
    auto tokenizer = hita::load_tokenizer(tokenizer_path(a.common), overrides(a.common));
    const auto& config = tokenizer->config();
    const int64_t n = a.inputs.empty() ? a.n : static_cast<int64_t>(a.inputs.size());
    auto images = input_batch(a.inputs, a.common, config, n);
    auto recon = tokenizer->reconstruct(images);
    const auto dir = out_dir(a.common) / "reconstruct";
    fs::create_directories(dir);
    for (int64_t i = 0; i < images.size(); ++i) {
        hita::write_png(dir / ("output_" + std::to_string(i) + ".png"), recon.pixels[i]);
    }
    std::cerr << "reconstruct: wrote " << images.size() << " images to " << dir.string() << '\n';
    return 0;
}

auto cmd_probe(const Args& a) -> int {
    auto tokenizer = hita::load_tokenizer(tokenizer_path(a.common), overrides(a.common));
    auto [train, holdout] = corpora(a.common, tokenizer->config());
    auto result = hita::tokenizer_probe(tokenizer, train, holdout);
    std::cout << json{{"train_accuracy", result.train_accuracy}, {"test_accuracy", result.test_accuracy}}.dump()
              << '\n';
    return 0;
}

auto cmd_stats(const Args& a) -> int {
    hita::HolisticTokenizer tokenizer{nullptr};
    if (a.fresh) {
        auto config = build_config(a.common);
        torch::manual_seed(config.seed);
        tokenizer = hita::HolisticTokenizer(config);
        tokenizer->eval();
    } else {
        tokenizer = hita::load_tokenizer(tokenizer_path(a.common), overrides(a.common));
    }
    const auto& config = tokenizer->config();
    auto holdout = corpora(a.common, config).second;
    if (a.stats_n > 0 && a.stats_n < holdout.size()) {
        holdout = holdout.slice(0, a.stats_n);
    }
    auto eval = hita::evaluate_tokenizer(tokenizer, holdout);
    const auto n_codes = static_cast<double>(config.codebook_size);
    json report{{"images", eval.images},
                {"holistic_tokens", eval.holistic_tokens},
                {"patch_tokens", eval.patch_tokens},
                {"patch_usage", eval.patch_usage},
                {"patch_usage_bound", std::min(1.0, static_cast<double>(eval.patch_tokens) / n_codes)},
                {"l2", eval.l2}};
    if (eval.holistic_usage >= 0.0) {
        report["holistic_usage"] = eval.holistic_usage;
        report["holistic_usage_bound"] = std::min(1.0, static_cast<double>(eval.holistic_tokens) / n_codes);
    }
    std::cout << report.dump() << '\n';
    return 0;
}

void add_common(CLI::App* cmd, Common& c, bool checkpoints) {
    cmd->add_option("--config", c.config_path, "key = value config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", c.sets, "override, key=value (repeatable)");
    cmd->add_option("--data", c.data, "image root with one subdirectory per class (default: $HITA_DATA, else synthetic)");
    cmd->add_option("--out", c.out, "artifact directory");
    cmd->add_option("--seed", c.seed, "seed override");
    cmd->add_option("--jobs", c.jobs, "intra-op worker threads");
    if (checkpoints) {
        cmd->add_option("--tokenizer", c.tokenizer_path, "tokenizer checkpoint (default: <out>/tokenizer.ckpt)");
        cmd->add_option("--ar", c.ar_path, "AR checkpoint (default: <out>/ar.ckpt)");
    }
}

}    // namespace

auto main(int argc, char** argv) -> int {
    CLI::App app{"holistic-to-local image tokenizer and AR generator"};
    app.require_subcommand(1);
    Args a;

    auto* train_tok = app.add_subcommand("train-tokenizer", "train the tokenizer, write tokenizer.ckpt");
    add_common(train_tok, a.common, false);
    train_tok->add_option("--steps", a.steps, "optimisation steps");
    train_tok->add_option("--log-file", a.common.log_file, "NDJSON loss log (default: stdout)");

    auto* train_ar = app.add_subcommand("train-ar", "tokenize the corpus to tokens.bin, train the AR model");
    add_common(train_ar, a.common, true);
    train_ar->add_option("--steps", a.steps, "optimisation steps");
    train_ar->add_option("--log-file", a.common.log_file, "NDJSON loss log (default: stdout)");

    auto* gen = app.add_subcommand("generate", "sample class-conditional images");
    add_common(gen, a.common, true);
    gen->add_option("--class", a.class_id, "class id");
    gen->add_option("--n", a.n, "images to sample");
    gen->add_option("--cfg", a.cfg, "guidance scale (>= 1)");

    auto* style = app.add_subcommand("style-transfer", "holistic tokens of the reference, patch tokens of the content");
    add_common(style, a.common, true);
    style->add_option("--content", a.inputs, "content image(s)");
    style->add_option("--reference", a.references, "reference image(s), one per content image");
    style->add_option("--n", a.n, "held-out pairs when no files are given");

    auto* paint = app.add_subcommand("inpaint", "complete the hidden lower part of images");
    add_common(paint, a.common, true);
    paint->add_option("--input", a.inputs, "image(s) to complete");
    paint->add_option("--n", a.n, "held-out images when no files are given");
    paint->add_option("--fraction", a.fraction, "visible upper fraction in (0, 1]");
    paint->add_option("--class", a.class_id, "conditioning class (default: the image label, else 0)");
    paint->add_option("--cfg", a.cfg, "guidance scale (>= 1)");
    paint->add_flag("--generate-holistic", a.generate_holistic, "sample holistic tokens instead of reading them");

    auto* recon = app.add_subcommand("reconstruct", "tokenize and decode images");
    add_common(recon, a.common, true);
    recon->add_option("--input", a.inputs, "image(s)");
    recon->add_option("--n", a.n, "held-out images when no files are given");

    auto* probe = app.add_subcommand("probe", "linear probe on frozen tokenizer features");
    add_common(probe, a.common, true);

    auto* stats = app.add_subcommand("stats", "codebook usage, token counts and held-out l2");
    add_common(stats, a.common, true);
    stats->add_option("--n", a.stats_n, "held-out images (0 = all)");
    stats->add_flag("--fresh", a.fresh, "use an untrained tokenizer built from the config");

    CLI11_PARSE(app, argc, argv);

    if (a.common.jobs > 0) {
        torch::set_num_threads(a.common.jobs);
    }
    try {
        if (*train_tok) return cmd_train_tokenizer(a);
        if (*train_ar) return cmd_train_ar(a);
        if (*gen) return cmd_generate(a);
        if (*style) return cmd_style_transfer(a);
        if (*paint) return cmd_inpaint(a);
        if (*recon) return cmd_reconstruct(a);
        if (*probe) return cmd_probe(a);
        if (*stats) return cmd_stats(a);
    } catch (const hita::DependencyError& e) {
        std::cerr << "dependency error: " << e.what() << '\n';
        return 3;
    } catch (const hita::InputError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return 4;
    } catch (const hita::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const hita::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return 2;
    } catch (const hita::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
