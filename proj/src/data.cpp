#include "hita/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <random>

#include <ATen/CPUGeneratorImpl.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "hita/errors.hpp"

namespace hita {

namespace fs = std::filesystem;

auto ImageBatch::from_nchw(const torch::Tensor& nchw) -> ImageBatch {
    return ImageBatch{nchw.permute({0, 2, 3, 1}).contiguous(), std::nullopt};
}

void check_batch(const ImageBatch& batch, const PipelineConfig& config) {
    const auto& p = batch.pixels;
    if (!p.defined() || p.dim() != 4 || p.size(3) != 3) {
        throw ShapeError("image batch must be B x H x W x 3");
    }
    if (p.size(1) != config.image_size || p.size(2) != config.image_size) {
        throw ShapeError("image batch is " + std::to_string(p.size(1)) + "x" + std::to_string(p.size(2)) +
                         ", config expects " + std::to_string(config.image_size) + "x" +
                         std::to_string(config.image_size));
    }
    if (batch.labels && batch.labels->size(0) != p.size(0)) {
        throw ShapeError("label count does not match batch size");
    }
    torch::NoGradGuard no_grad;
    if (!torch::isfinite(p).all().item<bool>()) {
        throw ValidationError("image batch contains non-finite pixels");
    }
    if (p.numel() > 0 && (p.min().item<double>() < -1.0 || p.max().item<double>() > 1.0)) {
        throw ValidationError("image batch pixels outside [-1, 1]");
    }
}

auto Corpus::slice(int64_t begin, int64_t end) const -> Corpus {
    Corpus out = *this;
    out.images = images.slice(0, begin, end);
    out.labels = labels.slice(0, begin, end);
    return out;
}

auto Corpus::batch(int64_t begin, int64_t end) const -> ImageBatch {
    end = std::min(end, size());
    return ImageBatch{images.slice(0, begin, end), labels.slice(0, begin, end)};
}

namespace {

constexpr int64_t kShapeFamilies = 8;

struct Colour {
    float r, g, b;
};

auto random_colour(std::mt19937_64& rng) -> Colour {
    std::uniform_real_distribution<float> u(-1.0F, 1.0F);
    return {u(rng), u(rng), u(rng)};
}

// True when pixel centre (x, y) in unit coordinates lies on the class shape.
struct ShapeSampler {
    int64_t family;
    float cx, cy, size, thickness, phase;

    [[nodiscard]] auto covers(float x, float y) const -> bool {
        const float dx = x - cx;
        const float dy = y - cy;
        switch (family) {
            case 0: return dx * dx + dy * dy <= size * size;
            case 1: return std::abs(dx) <= size * 0.85F && std::abs(dy) <= size * 0.85F;
            case 2: {
                // upward triangle with apex above the centre
                const float top = cy - size;
                const float bottom = cy + size;
                if (y < top || y > bottom) {
                    return false;
                }
                const float half_width = (y - top) / (bottom - top) * size;
                return std::abs(dx) <= half_width;
            }
            case 3:
                return (std::abs(dx) <= thickness && std::abs(dy) <= size) ||
                       (std::abs(dy) <= thickness && std::abs(dx) <= size);
            case 4: {
                const float r = std::sqrt(dx * dx + dy * dy);
                return r <= size && r >= size - thickness * 1.5F;
            }
            case 5: return std::fmod(y + phase, 0.25F) < 0.125F;
            case 6: return std::fmod(x + phase, 0.25F) < 0.125F;
            default: return std::fmod(x + y + phase, 0.35F) < 0.175F;
        }
    }
};

}    // namespace

auto make_synthetic_corpus(const PipelineConfig& config, int64_t count, uint64_t seed) -> Corpus {
    if (config.num_classes > kShapeFamilies) {
        throw DataError("synthetic corpus supports at most " + std::to_string(kShapeFamilies) + " classes");
    }
    if (count <= 0) {
        throw DataError("synthetic corpus needs a positive sample count");
    }
    const int64_t side = config.image_size;
    auto images = torch::empty({count, side, side, 3}, torch::kFloat32);
    auto labels = torch::empty({count}, torch::kInt64);
    auto pix = images.accessor<float, 4>();
    auto lab = labels.accessor<int64_t, 1>();

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> centre(0.3F, 0.7F);
    std::uniform_real_distribution<float> unit(0.0F, 1.0F);
    std::normal_distribution<float> noise(0.0F, 0.03F);
    for (int64_t n = 0; n < count; ++n) {
        const int64_t label = n % config.num_classes;
        lab[n] = label;
        const auto background = random_colour(rng);
        auto foreground = random_colour(rng);
        while (std::abs(foreground.r - background.r) + std::abs(foreground.g - background.g) +
                   std::abs(foreground.b - background.b) <
               1.0F) {
            foreground = random_colour(rng);
        }
        ShapeSampler shape{label, centre(rng), centre(rng), 0.18F + 0.14F * unit(rng), 0.06F + 0.04F * unit(rng),
                           0.25F * unit(rng)};
        for (int64_t y = 0; y < side; ++y) {
            for (int64_t x = 0; x < side; ++x) {
                const float u = (static_cast<float>(x) + 0.5F) / static_cast<float>(side);
                const float v = (static_cast<float>(y) + 0.5F) / static_cast<float>(side);
                const auto& c = shape.covers(u, v) ? foreground : background;
                pix[n][y][x][0] = std::clamp(c.r + noise(rng), -1.0F, 1.0F);
                pix[n][y][x][1] = std::clamp(c.g + noise(rng), -1.0F, 1.0F);
                pix[n][y][x][2] = std::clamp(c.b + noise(rng), -1.0F, 1.0F);
            }
        }
    }
    // classes are interleaved by construction; shuffle sample order once
    auto generator = at::make_generator<at::CPUGeneratorImpl>(seed ^ 0x9e3779b97f4a7c15ULL);
    auto perm = torch::randperm(count, generator, torch::kInt64);
    Corpus corpus;
    corpus.images = images.index_select(0, perm).contiguous();
    corpus.labels = labels.index_select(0, perm).contiguous();
    corpus.num_classes = config.num_classes;
    for (int64_t c = 0; c < config.num_classes; ++c) {
        corpus.class_names.push_back("class" + std::to_string(c));
    }
    return corpus;
}

auto read_image(const fs::path& path, int64_t image_size) -> torch::Tensor {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) {
        throw InputError("cannot decode image '" + path.string() + "'");
    }
    // bilinear resize of the shorter side, then centre crop
    const double scale = static_cast<double>(image_size) / std::min(bgr.rows, bgr.cols);
    const int new_w = std::max<int>(static_cast<int>(image_size), static_cast<int>(std::lround(bgr.cols * scale)));
    const int new_h = std::max<int>(static_cast<int>(image_size), static_cast<int>(std::lround(bgr.rows * scale)));
    cv::Mat resized;
    cv::resize(bgr, resized, cv::Size(new_w, new_h), 0, 0, cv::INTER_LINEAR);
    const int x0 = (new_w - static_cast<int>(image_size)) / 2;
    const int y0 = (new_h - static_cast<int>(image_size)) / 2;
    cv::Mat cropped = resized(cv::Rect(x0, y0, static_cast<int>(image_size), static_cast<int>(image_size))).clone();
    cv::Mat rgb;
    cv::cvtColor(cropped, rgb, cv::COLOR_BGR2RGB);
    auto bytes = torch::from_blob(rgb.data, {image_size, image_size, 3}, torch::kUInt8).clone();
    return bytes.to(torch::kFloat32).div(127.5).sub(1.0);
}

void write_png(const fs::path& path, const torch::Tensor& hwc) {
    auto bytes = hwc.detach().to(torch::kFloat32).clamp(-1.0, 1.0).add(1.0).mul(127.5).round().to(torch::kUInt8).contiguous();
    cv::Mat rgb(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)), CV_8UC3, bytes.data_ptr());
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    if (!cv::imwrite(path.string(), bgr)) {
        throw InputError("cannot write image '" + path.string() + "'");
    }
}

void write_panel(const fs::path& path, const std::vector<torch::Tensor>& panels) {
    std::vector<torch::Tensor> parts;
    parts.reserve(panels.size());
    for (const auto& p : panels) {
        parts.push_back(p.detach().to(torch::kFloat32));
    }
    write_png(path, torch::cat(parts, 1));
}

auto load_directory_corpus(const fs::path& root, const PipelineConfig& config) -> Corpus {
    if (!fs::is_directory(root)) {
        throw DataError("dataset root '" + root.string() + "' is not a directory");
    }
    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) {
            class_dirs.push_back(entry.path());
        }
    }
    std::sort(class_dirs.begin(), class_dirs.end());

    Corpus corpus;
    std::vector<torch::Tensor> images;
    std::vector<int64_t> labels;
    for (size_t label = 0; label < class_dirs.size(); ++label) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(class_dirs[label])) {
            if (entry.is_regular_file()) {
                files.push_back(entry.path());
            }
        }
        std::sort(files.begin(), files.end());
        for (const auto& file : files) {
            try {
                images.push_back(read_image(file, config.image_size));
                labels.push_back(static_cast<int64_t>(label));
            } catch (const InputError& e) {
                ++corpus.warnings;
                std::cerr << "warning: skipping " << file.string() << ": " << e.what() << "\n";
            }
        }
        corpus.class_names.push_back(class_dirs[label].filename().string());
    }
    if (images.empty()) {
        throw DataError("dataset root '" + root.string() + "' contains no readable images");
    }
    corpus.images = torch::stack(images);
    corpus.labels = torch::tensor(labels, torch::kInt64);
    corpus.num_classes = static_cast<int64_t>(class_dirs.size());
    return corpus;
}

auto ingest_dataset(const std::optional<fs::path>& root, const PipelineConfig& config) -> Corpus {
    if (root) {
        return load_directory_corpus(*root, config);
    }
    if (const char* env = std::getenv("HITA_DATA"); env != nullptr && *env != '\0') {
        return load_directory_corpus(env, config);
    }
    return make_synthetic_corpus(config, config.synthetic_count, config.seed);
}

BatchLoader::BatchLoader(const Corpus& corpus, int64_t batch_size, uint64_t seed, bool shuffle)
    : corpus_(&corpus),
      batch_size_(batch_size),
      shuffle_(shuffle),
      generator_(at::make_generator<at::CPUGeneratorImpl>(seed)) {
    if (corpus.size() == 0) {
        throw DataError("cannot batch an empty corpus");
    }
    if (batch_size <= 0) {
        throw ValidationError("batch size must be positive");
    }
    reshuffle();
}

void BatchLoader::reshuffle() {
    if (shuffle_) {
        order_ = torch::randperm(corpus_->size(), generator_, torch::kInt64);
    } else {
        order_ = torch::arange(corpus_->size(), torch::kInt64);
    }
    cursor_ = 0;
}

auto BatchLoader::next() -> ImageBatch {
    if (cursor_ >= corpus_->size()) {
        reshuffle();
    }
    const int64_t end = std::min(cursor_ + batch_size_, corpus_->size());
    auto idx = order_.slice(0, cursor_, end);
    cursor_ = end;
    return ImageBatch{corpus_->images.index_select(0, idx), corpus_->labels.index_select(0, idx)};
}

auto BatchLoader::epoch() -> std::vector<ImageBatch> {
    if (cursor_ != 0) {
        reshuffle();
    }
    std::vector<ImageBatch> out;
    while (cursor_ < corpus_->size()) {
        out.push_back(next());
    }
    return out;
}

auto BatchLoader::batches_per_epoch() const -> int64_t {
    return (corpus_->size() + batch_size_ - 1) / batch_size_;
}

}    // namespace hita
